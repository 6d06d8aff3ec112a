#include "vtelim/mapping.hpp"

#include <algorithm>
#include <cassert>
#include <limits>
#include <numeric>
#include <tuple>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace vtelim {

Index default_strides(const Index& shape) {
    Index s(shape.size(), 1);
    for (int i = int(shape.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * shape[i + 1];
    return s;
}

int64_t volume(const Index& shape) {
    int64_t v = 1;
    for (int64_t d : shape) v *= d;
    return v;
}

Index unflatten(int64_t flat, const Index& shape) {
    Index idx(shape.size(), 0);
    for (int i = int(shape.size()) - 1; i >= 0; --i) {
        idx[i] = flat % shape[i];
        flat /= shape[i];
    }
    return idx;
}

int64_t flatten(std::span<const int64_t> idx, const Index& shape) {
    int64_t flat = 0;
    for (size_t i = 0; i < shape.size(); ++i) flat = flat * shape[i] + idx[i];
    return flat;
}

int64_t AffinePiece::box_volume() const {
    int64_t v = 1;
    for (size_t i = 0; i < lo.size(); ++i) v *= hi[i] - lo[i];
    return v;
}

bool AffinePiece::contains(std::span<const int64_t> idx) const {
    for (size_t i = 0; i < lo.size(); ++i)
        if (idx[i] < lo[i] || idx[i] >= hi[i]) return false;
    return true;
}

int64_t AffinePiece::eval(std::span<const int64_t> idx) const {
    int64_t off = offset;
    for (size_t i = 0; i < strides.size(); ++i) off += strides[i] * idx[i];
    return off;
}

const char* to_string(ContiguityClass c) {
    switch (c) {
        case ContiguityClass::FullyContiguous: return "fully_contiguous";
        case ContiguityClass::PartiallyContiguous: return "partially_contiguous";
        case ContiguityClass::NonContiguous: return "non_contiguous";
    }
    return "?";
}

const char* to_string(TypeClass t) {
    return t == TypeClass::TypeI ? "type_i" : "type_ii";
}

IndexMap::IndexMap(Index virtual_shape, std::vector<AffinePiece> pieces)
    : shape_(std::move(virtual_shape)), pieces_(std::move(pieces)) {
    for (const auto& p : pieces_) {
        if (p.lo.size() != shape_.size() || p.hi.size() != shape_.size() ||
            p.strides.size() != shape_.size())
            throw OutOfBoundsError("piece rank does not match virtual shape");
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (p.lo[i] < 0 || p.hi[i] > shape_[i] || p.lo[i] >= p.hi[i])
                throw OutOfBoundsError("piece region outside virtual shape");
        }
    }
}

IndexMap IndexMap::identity(const std::string& target, const Index& shape) {
    AffinePiece p;
    p.lo.assign(shape.size(), 0);
    p.hi = shape;
    p.strides = default_strides(shape);
    p.offset = 0;
    p.target = target;
    return IndexMap(shape, {std::move(p)});
}

std::vector<std::string> IndexMap::targets() const {
    std::vector<std::string> t;
    for (const auto& p : pieces_) t.push_back(p.target);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

const AffinePiece* IndexMap::find_piece(std::span<const int64_t> idx) const {
    for (const auto& p : pieces_)
        if (p.contains(idx)) return &p;
    return nullptr;
}

std::pair<std::string, int64_t> IndexMap::eval(std::span<const int64_t> idx) const {
    if (idx.size() != shape_.size()) throw OutOfBoundsError("index rank mismatch");
    for (size_t i = 0; i < shape_.size(); ++i)
        if (idx[i] < 0 || idx[i] >= shape_[i]) throw OutOfBoundsError("index outside virtual shape");
    const AffinePiece* p = find_piece(idx);
    if (!p) throw OutOfBoundsError("index not covered by any piece");
    return {p->target, p->eval(idx)};
}

int64_t IndexMap::covered_volume() const {
    int64_t v = 0;
    for (const auto& p : pieces_) v += p.box_volume();
    return v;
}

bool IndexMap::is_total() const {
    return !has_overlap() && covered_volume() == domain_volume();
}

namespace {

// Intersection of two boxes; false when empty.
bool box_intersect(const AffinePiece& a, const AffinePiece& b, Index& lo, Index& hi) {
    size_t n = a.lo.size();
    lo.resize(n);
    hi.resize(n);
    for (size_t i = 0; i < n; ++i) {
        lo[i] = std::max(a.lo[i], b.lo[i]);
        hi[i] = std::min(a.hi[i], b.hi[i]);
        if (lo[i] >= hi[i]) return false;
    }
    return true;
}

// Whether two pieces realize the same affine function on a shared box.
bool pieces_agree_on(const AffinePiece& a, const AffinePiece& b, const Index& lo, const Index& hi) {
    if (a.target != b.target) return false;
    if (a.eval(lo) != b.eval(lo)) return false;
    for (size_t i = 0; i < lo.size(); ++i)
        if (hi[i] - lo[i] > 1 && a.strides[i] != b.strides[i]) return false;
    return true;
}

}  // namespace

bool IndexMap::has_overlap() const {
    Index lo, hi;
    for (size_t i = 0; i < pieces_.size(); ++i)
        for (size_t j = i + 1; j < pieces_.size(); ++j)
            if (box_intersect(pieces_[i], pieces_[j], lo, hi)) return true;
    return false;
}

bool IndexMap::single_valued() const {
    Index lo, hi;
    for (size_t i = 0; i < pieces_.size(); ++i)
        for (size_t j = i + 1; j < pieces_.size(); ++j)
            if (box_intersect(pieces_[i], pieces_[j], lo, hi) &&
                !pieces_agree_on(pieces_[i], pieces_[j], lo, hi))
                return false;
    return true;
}

namespace {

// Sufficient lattice condition: sorted strides over non-degenerate dims do not
// allow two index vectors to collide inside one piece.
bool piece_lattice_injective(const AffinePiece& p) {
    std::vector<std::pair<int64_t, int64_t>> se;  // (stride, extent)
    for (size_t i = 0; i < p.strides.size(); ++i) {
        int64_t ext = p.hi[i] - p.lo[i];
        if (ext <= 1) continue;
        if (p.strides[i] == 0) return false;
        se.emplace_back(p.strides[i], ext);
    }
    std::sort(se.begin(), se.end(), std::greater<>());
    int64_t reach = 0;  // max offset attainable by later dims
    for (int i = int(se.size()) - 1; i >= 0; --i) {
        if (se[i].first <= reach) return false;
        reach += se[i].first * (se[i].second - 1);
    }
    return true;
}

void piece_addr_range(const AffinePiece& p, int64_t& mn, int64_t& mx) {
    mn = p.offset;
    mx = p.offset;
    for (size_t i = 0; i < p.strides.size(); ++i) {
        int64_t span = p.strides[i] * (p.hi[i] - p.lo[i] - 1);
        mn += p.strides[i] * p.lo[i] + std::min<int64_t>(0, span);
        mx += p.strides[i] * p.lo[i] + std::max<int64_t>(0, span);
    }
}

}  // namespace

bool IndexMap::injective(int64_t exhaustive_limit) const {
    bool analytic_ok = true;
    for (const auto& p : pieces_)
        if (!piece_lattice_injective(p)) { analytic_ok = false; break; }
    if (analytic_ok) {
        for (size_t i = 0; i < pieces_.size() && analytic_ok; ++i)
            for (size_t j = i + 1; j < pieces_.size(); ++j) {
                if (pieces_[i].target != pieces_[j].target) continue;
                int64_t mn1, mx1, mn2, mx2;
                piece_addr_range(pieces_[i], mn1, mx1);
                piece_addr_range(pieces_[j], mn2, mx2);
                if (mx1 >= mn2 && mx2 >= mn1) { analytic_ok = false; break; }
            }
    }
    if (analytic_ok) return true;
    if (covered_volume() > exhaustive_limit) return false;  // conservative

    std::unordered_set<std::string> seen;
    seen.reserve(size_t(covered_volume()));
    for (const auto& p : pieces_) {
        Index idx = p.lo;
        while (true) {
            std::string key = p.target + "#" + std::to_string(p.eval(idx));
            if (!seen.insert(std::move(key)).second) return false;
            int i = int(idx.size()) - 1;
            for (; i >= 0; --i) {
                if (++idx[i] < p.hi[i]) break;
                idx[i] = p.lo[i];
            }
            if (i < 0) break;
        }
    }
    return true;
}

int64_t IndexMap::unique_elems() const {
    // Canonical image descriptor: replicated pieces (tiled broadcasts) produce
    // byte-identical descriptors and are counted once.
    struct Image {
        std::string target;
        int64_t base;
        std::vector<std::pair<int64_t, int64_t>> steps;  // (stride, extent), extent>1, stride!=0
        bool operator==(const Image& o) const {
            return target == o.target && base == o.base && steps == o.steps;
        }
        bool operator<(const Image& o) const {
            return std::tie(target, base, steps) < std::tie(o.target, o.base, o.steps);
        }
    };
    std::vector<Image> images;
    for (const auto& p : pieces_) {
        Image im;
        im.target = p.target;
        im.base = p.eval(p.lo);
        for (size_t i = 0; i < p.strides.size(); ++i) {
            int64_t ext = p.hi[i] - p.lo[i];
            if (ext > 1 && p.strides[i] != 0) im.steps.emplace_back(p.strides[i], ext);
        }
        std::sort(im.steps.begin(), im.steps.end());
        images.push_back(std::move(im));
    }
    std::sort(images.begin(), images.end());
    images.erase(std::unique(images.begin(), images.end()), images.end());
    int64_t total = 0;
    for (const auto& im : images) {
        int64_t v = 1;
        for (auto [s, e] : im.steps) v *= e;
        total += v;
    }
    return total;
}

ContiguityReport IndexMap::contiguity(int64_t elem_size, int64_t coalesce_unit) const {
    ContiguityReport r;
    size_t n = shape_.size();
    Index suffix = default_strides(shape_);

    // Smallest 1-based d such that every piece's strides match the shape's
    // suffix products from dimension d onward.
    int d = int(n) + 1;
    for (int cand = int(n); cand >= 1; --cand) {
        bool ok = true;
        for (const auto& p : pieces_) {
            // Strides on degenerate box axes carry no information.
            if (p.hi[cand - 1] - p.lo[cand - 1] > 1 && p.strides[cand - 1] != suffix[cand - 1]) {
                ok = false;
                break;
            }
        }
        if (!ok) break;
        d = cand;
    }
    r.min_contiguous_dim = d;

    // Shortest run of consecutive virtual indices that stays on consecutive
    // physical addresses, measured per piece in row-major order.
    int64_t min_run = std::numeric_limits<int64_t>::max();
    for (const auto& p : pieces_) {
        int64_t run = 1;
        int64_t step = 1;  // physical stride a contiguous run requires at this dim
        for (int i = int(n) - 1; i >= 0; --i) {
            if (shape_[i] == 1) continue;  // transparent dimension
            int64_t ext = p.hi[i] - p.lo[i];
            if (ext == 1) break;  // pinned coordinate: index order exits the box
            if (p.strides[i] != step) break;
            run *= ext;
            if (ext != shape_[i]) break;  // partial extent: order exits the box
            step *= shape_[i];
        }
        min_run = std::min(min_run, run);
    }
    if (pieces_.empty()) min_run = 0;
    r.contiguous_run_elems = min_run;

    bool fully = pieces_.size() == 1 && d == 1 && pieces_[0].box_volume() == domain_volume();
    if (fully)
        r.cls = ContiguityClass::FullyContiguous;
    else if (min_run * elem_size >= coalesce_unit)
        r.cls = ContiguityClass::PartiallyContiguous;
    else
        r.cls = ContiguityClass::NonContiguous;
    r.type_class = fully ? TypeClass::TypeI : TypeClass::TypeII;
    return r;
}

namespace {

struct Composer {
    const IndexMap& base;   // map over the target tensor's index space
    const Index& base_shape;
    Index base_suffix;
    std::vector<AffinePiece>& out;
    int piece_cap;
    const std::string* outer_target;

    void emit_box(const Index& lo, const Index& hi, const Index& strides, int64_t offset) {
        size_t n = lo.size();
        size_t m = base_shape.size();
        int64_t base_total = volume(base_shape);

        int64_t f_lo = offset;
        for (size_t i = 0; i < n; ++i) f_lo += strides[i] * lo[i];
        if (f_lo < 0 || f_lo >= base_total)
            throw OutOfBoundsError("composed address outside base tensor");
        Index y_lo = unflatten(f_lo, base_shape);

        // Mixed-radix decomposition of each active stride; carry-free when no
        // base dimension can wrap across the box.
        bool decomposable = true;
        std::vector<Index> digits(n);
        for (size_t i = 0; i < n && decomposable; ++i) {
            if (hi[i] - lo[i] <= 1) continue;  // degenerate axis, stride unused
            if (strides[i] < 0 || strides[i] >= base_total) { decomposable = false; break; }
            digits[i] = unflatten(strides[i], base_shape);
        }
        if (decomposable) {
            Index y_hi = y_lo;  // inclusive
            bool carry_free = true;
            for (size_t j = 0; j < m && carry_free; ++j) {
                for (size_t i = 0; i < n; ++i) {
                    int64_t ext = hi[i] - lo[i];
                    if (ext <= 1 || digits[i].empty()) continue;
                    y_hi[j] += (ext - 1) * digits[i][j];
                }
                if (y_hi[j] >= base_shape[j]) carry_free = false;
            }
            if (carry_free) {
                // Locate the single base piece covering [y_lo, y_hi].
                for (const auto& q : base.pieces()) {
                    bool inside = true;
                    for (size_t j = 0; j < m; ++j)
                        if (y_lo[j] < q.lo[j] || y_hi[j] >= q.hi[j]) { inside = false; break; }
                    if (!inside) continue;
                    AffinePiece np;
                    np.lo = lo;
                    np.hi = hi;
                    np.strides.assign(n, 0);
                    for (size_t i = 0; i < n; ++i) {
                        if (hi[i] - lo[i] <= 1 || digits[i].empty()) continue;
                        for (size_t j = 0; j < m; ++j)
                            np.strides[i] += digits[i][j] * q.strides[j];
                    }
                    np.offset = q.eval(y_lo);
                    for (size_t i = 0; i < n; ++i) np.offset -= np.strides[i] * lo[i];
                    np.target = q.target;
                    push(std::move(np));
                    return;
                }
            }
        }

        // Split the largest axis and recurse; a single point always resolves.
        int axis = -1;
        int64_t best = 1;
        for (size_t i = 0; i < n; ++i)
            if (hi[i] - lo[i] > best) { best = hi[i] - lo[i]; axis = int(i); }
        if (axis < 0) {
            auto [t, off] = base.eval(y_lo);
            AffinePiece np;
            np.lo = lo;
            np.hi = hi;
            np.strides.assign(n, 0);
            np.offset = off;
            np.target = t;
            push(std::move(np));
            return;
        }
        Index mid_hi = hi, mid_lo = lo;
        int64_t mid = lo[axis] + (hi[axis] - lo[axis]) / 2;
        mid_hi[axis] = mid;
        mid_lo[axis] = mid;
        emit_box(lo, mid_hi, strides, offset);
        emit_box(mid_lo, hi, strides, offset);
    }

    void push(AffinePiece&& p) {
        if (int(out.size()) >= piece_cap)
            throw ComposeLimitError("composed map exceeds piece cap");
        out.push_back(std::move(p));
    }
};

}  // namespace

IndexMap IndexMap::compose(const std::function<const IndexMap*(const std::string&)>& base,
                           int piece_cap) const {
    std::vector<AffinePiece> out;
    for (const auto& p : pieces_) {
        const IndexMap* bm = base(p.target);
        if (!bm) {
            if (int(out.size()) >= piece_cap) throw ComposeLimitError("composed map exceeds piece cap");
            out.push_back(p);
            continue;
        }
        // Fast path: base is a plain identity layout over the whole target.
        if (bm->pieces_.size() == 1) {
            const auto& q = bm->pieces_[0];
            if (q.offset == 0 && q.strides == default_strides(bm->shape_) &&
                q.box_volume() == bm->domain_volume() && q.lo == Index(q.lo.size(), 0)) {
                AffinePiece np = p;
                np.target = q.target;
                if (int(out.size()) >= piece_cap) throw ComposeLimitError("composed map exceeds piece cap");
                out.push_back(std::move(np));
                continue;
            }
        }
        Composer c{*bm, bm->shape_, default_strides(bm->shape_), out, piece_cap, &p.target};
        c.emit_box(p.lo, p.hi, p.strides, p.offset);
    }
    IndexMap m(shape_, std::move(out));
    m.normalize();
    // Base maps must already be flat: a resolved target may not be virtual.
    for (const auto& t : m.targets())
        if (base(t) != nullptr)
            throw MissingBaseMapError("base map targets a non-physical tensor: " + t);
    return m;
}

int64_t IndexMap::agree_volume(const IndexMap& other) const {
    int64_t agree = 0;
    Index lo, hi;
    for (const auto& p : pieces_)
        for (const auto& q : other.pieces_)
            if (box_intersect(p, q, lo, hi) && pieces_agree_on(p, q, lo, hi)) {
                int64_t v = 1;
                for (size_t i = 0; i < lo.size(); ++i) v *= hi[i] - lo[i];
                agree += v;
            }
    return agree;
}

int64_t IndexMap::overlap_volume(const IndexMap& other) const {
    int64_t total = 0;
    Index lo, hi;
    for (const auto& p : pieces_)
        for (const auto& q : other.pieces_)
            if (box_intersect(p, q, lo, hi)) {
                int64_t v = 1;
                for (size_t i = 0; i < lo.size(); ++i) v *= hi[i] - lo[i];
                total += v;
            }
    return total;
}

bool IndexMap::equivalent(const IndexMap& other) const {
    if (shape_ != other.shape_) return false;
    int64_t covered = covered_volume();
    return covered == other.covered_volume() && agree_volume(other) == covered;
}

void IndexMap::normalize() {
    auto key_less = [](const AffinePiece& a, const AffinePiece& b) {
        return std::tie(a.target, a.strides, a.offset, a.lo) <
               std::tie(b.target, b.strides, b.offset, b.lo);
    };
    std::sort(pieces_.begin(), pieces_.end(), key_less);
    bool merged = true;
    while (merged) {
        merged = false;
        for (size_t i = 0; i < pieces_.size() && !merged; ++i) {
            for (size_t j = i + 1; j < pieces_.size(); ++j) {
                auto& a = pieces_[i];
                auto& b = pieces_[j];
                if (a.target != b.target || a.strides != b.strides || a.offset != b.offset)
                    continue;
                // Mergeable when boxes differ along exactly one axis and abut.
                int diff_axis = -1;
                bool mergeable = true;
                for (size_t k = 0; k < a.lo.size(); ++k) {
                    if (a.lo[k] == b.lo[k] && a.hi[k] == b.hi[k]) continue;
                    if (diff_axis >= 0) { mergeable = false; break; }
                    diff_axis = int(k);
                }
                if (!mergeable || diff_axis < 0) continue;
                auto& lo1 = a.lo[diff_axis];
                auto& hi1 = a.hi[diff_axis];
                auto& lo2 = b.lo[diff_axis];
                auto& hi2 = b.hi[diff_axis];
                if (hi1 == lo2)
                    hi1 = hi2;
                else if (hi2 == lo1)
                    lo1 = lo2;
                else
                    continue;
                pieces_.erase(pieces_.begin() + j);
                merged = true;
                break;
            }
        }
    }
    std::sort(pieces_.begin(), pieces_.end(),
              [](const AffinePiece& a, const AffinePiece& b) { return a.lo < b.lo; });
}

nlohmann::json IndexMap::to_json() const {
    nlohmann::json pieces = nlohmann::json::array();
    for (const auto& p : pieces_) {
        pieces.push_back({{"lo", p.lo},
                          {"hi", p.hi},
                          {"strides", p.strides},
                          {"offset", p.offset},
                          {"target", p.target}});
    }
    return {{"virtual_shape", shape_}, {"pieces", pieces}};
}

IndexMap IndexMap::from_json(const nlohmann::json& j) {
    Index shape = j.at("virtual_shape").get<Index>();
    std::vector<AffinePiece> pieces;
    for (const auto& pj : j.at("pieces")) {
        AffinePiece p;
        p.lo = pj.at("lo").get<Index>();
        p.hi = pj.at("hi").get<Index>();
        p.strides = pj.at("strides").get<Index>();
        p.offset = pj.at("offset").get<int64_t>();
        p.target = pj.at("target").get<std::string>();
        pieces.push_back(std::move(p));
    }
    return IndexMap(std::move(shape), std::move(pieces));
}

IndexMap merge_maps(const Index& shape, const std::vector<const IndexMap*>& parts) {
    std::vector<AffinePiece> pieces;
    for (const IndexMap* m : parts) {
        if (m->virtual_shape() != shape)
            throw ConflictViolationError("merged maps disagree on virtual shape");
        pieces.insert(pieces.end(), m->pieces().begin(), m->pieces().end());
    }
    IndexMap merged(shape, std::move(pieces));
    if (merged.has_overlap())
        throw ConflictViolationError("merged maps overlap on the virtual index space");
    return merged;
}

}  // namespace vtelim
