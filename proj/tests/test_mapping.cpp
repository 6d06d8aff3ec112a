#include "doctest.h"

#include <random>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "vtelim/mapping.hpp"

using namespace vtelim;

namespace {

// Brute-force composition oracle: evaluate outer, reinterpret the flat offset
// as an index into the base tensor, evaluate base.
std::pair<std::string, int64_t> compose_oracle(const IndexMap& outer, const IndexMap& base,
                                               const Index& base_shape, const Index& idx) {
    auto [t, off] = outer.eval(idx);
    Index y = unflatten(off, base_shape);
    return base.eval(y);
}

// Random permuted layout: the target holds the same elements with its axes
// shuffled, so every address stays in range. Returns the map and target shape.
std::pair<IndexMap, Index> random_affine_map(std::mt19937_64& rng, const Index& shape,
                                             const std::string& target) {
    std::vector<size_t> perm(shape.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Index target_shape(shape.size());
    for (size_t j = 0; j < perm.size(); ++j) target_shape[j] = shape[perm[j]];
    Index tstrides = default_strides(target_shape);
    AffinePiece p;
    p.lo.assign(shape.size(), 0);
    p.hi = shape;
    p.strides.resize(shape.size());
    for (size_t j = 0; j < perm.size(); ++j) p.strides[perm[j]] = tstrides[j];
    p.offset = 0;
    p.target = target;
    return {IndexMap(shape, {p}), target_shape};
}

void for_each_index(const Index& shape, const std::function<void(const Index&)>& fn) {
    Index idx(shape.size(), 0);
    while (true) {
        fn(idx);
        int i = int(shape.size()) - 1;
        for (; i >= 0; --i) {
            if (++idx[i] < shape[i]) break;
            idx[i] = 0;
        }
        if (i < 0) break;
    }
}

}  // namespace

TEST_CASE("identity map strides are shape suffix products") {
    // shape (a,b,c) -> strides (bc, c, 1)
    IndexMap m = IndexMap::identity("t", {2, 3, 4});
    REQUIRE(m.pieces().size() == 1);
    CHECK(m.pieces()[0].strides == Index{12, 4, 1});
    CHECK(m.pieces()[0].offset == 0);

    IndexMap one = IndexMap::identity("t", {5});
    CHECK(one.pieces()[0].strides == Index{1});

    // offset of (i,j,k) is i*bc + j*c + k
    Index idx{1, 2, 3};
    auto [t, off] = m.eval(idx);
    CHECK(t == "t");
    CHECK(off == 1 * 12 + 2 * 4 + 3);
}

TEST_CASE("eval is total over the domain and rejects out-of-range indices") {
    IndexMap m = IndexMap::identity("t", {3, 4});
    CHECK_THROWS_AS(m.eval(Index{3, 0}), OutOfBoundsError);
    CHECK_THROWS_AS(m.eval(Index{0, -1}), OutOfBoundsError);
    CHECK_THROWS_AS(m.eval(Index{0}), OutOfBoundsError);
    for_each_index({3, 4}, [&](const Index& i) { CHECK_NOTHROW(m.eval(i)); });
}

TEST_CASE("tiled broadcast map realizes the modular bias") {
    // Expanding (a,b,c) -> (a,3b,c): offset(i,j,k) = i*bc + (j%b)*c + k,
    // realized as three pieces with biases 0, -bc, -2bc.
    const int64_t a = 2, b = 3, c = 4;
    std::vector<AffinePiece> pieces;
    for (int64_t r = 0; r < 3; ++r) {
        AffinePiece p;
        p.lo = {0, r * b, 0};
        p.hi = {a, (r + 1) * b, c};
        p.strides = {b * c, c, 1};
        p.offset = -r * b * c;
        p.target = "in";
        pieces.push_back(p);
    }
    IndexMap m({a, 3 * b, c}, pieces);
    CHECK(m.is_total());
    CHECK(m.single_valued());
    for_each_index({a, 3 * b, c}, [&](const Index& i) {
        auto [t, off] = m.eval(i);
        CHECK(t == "in");
        CHECK(off == i[0] * b * c + (i[1] % b) * c + i[2]);
    });
    // b copies alias one source: not writable.
    CHECK_FALSE(check_writable(m));
    CHECK(m.unique_elems() == a * b * c);
}

TEST_CASE("partition property: piece volumes sum to the domain, sampled indices hit one piece") {
    const int64_t a = 2, b = 3, c = 4;
    std::vector<AffinePiece> pieces;
    for (int64_t r = 0; r < 3; ++r) {
        AffinePiece p;
        p.lo = {0, r * b, 0};
        p.hi = {a, (r + 1) * b, c};
        p.strides = {b * c, c, 1};
        p.offset = -r * b * c;
        p.target = "in";
        pieces.push_back(p);
    }
    IndexMap m({a, 3 * b, c}, pieces);
    CHECK(m.covered_volume() == m.domain_volume());
    std::mt19937_64 rng(7);
    for (int s = 0; s < 10000; ++s) {
        Index i = {int64_t(rng() % a), int64_t(rng() % (3 * b)), int64_t(rng() % c)};
        int hits = 0;
        for (const auto& p : m.pieces()) hits += p.contains(i) ? 1 : 0;
        REQUIRE(hits == 1);
    }
}

TEST_CASE("compose of random affine single-piece maps matches pointwise oracle") {
    std::mt19937_64 rng(42);
    const Index shape{3, 4, 5};
    for (int trial = 0; trial < 20; ++trial) {
        auto fp = random_affine_map(rng, shape, "mid");
        auto gp = random_affine_map(rng, fp.second, "phys");
        const IndexMap& f = fp.first;
        const IndexMap& g = gp.first;
        IndexMap composed = f.compose([&](const std::string& t) -> const IndexMap* {
            return t == "mid" ? &g : nullptr;
        });
        for_each_index(shape, [&](const Index& i) {
            auto expect = compose_oracle(f, g, fp.second, i);
            auto got = composed.eval(i);
            REQUIRE(got == expect);
        });
    }
}

TEST_CASE("compose with identity is neutral") {
    IndexMap inner = IndexMap::identity("phys", {4, 6});
    IndexMap outer = IndexMap::identity("virt", {4, 6});
    IndexMap composed = outer.compose([&](const std::string& t) -> const IndexMap* {
        return t == "virt" ? &inner : nullptr;
    });
    CHECK(composed.equivalent(inner));
}

TEST_CASE("compose associativity on exhaustive small domains") {
    std::mt19937_64 rng(11);
    const Index shape{2, 3, 4};
    for (int trial = 0; trial < 10; ++trial) {
        auto fp = random_affine_map(rng, shape, "b1");
        auto gp = random_affine_map(rng, fp.second, "b2");
        auto hp = random_affine_map(rng, gp.second, "phys");
        const IndexMap& f = fp.first;
        const IndexMap& g = gp.first;
        const IndexMap& h = hp.first;
        auto lookup_g = [&](const std::string& t) -> const IndexMap* { return t == "b1" ? &g : nullptr; };
        auto lookup_h = [&](const std::string& t) -> const IndexMap* { return t == "b2" ? &h : nullptr; };
        IndexMap fg_h = f.compose(lookup_g).compose(lookup_h);
        IndexMap gh = g.compose(lookup_h);
        IndexMap f_gh = f.compose([&](const std::string& t) -> const IndexMap* {
            return t == "b1" ? &gh : nullptr;
        });
        for_each_index(shape, [&](const Index& i) { REQUIRE(fg_h.eval(i) == f_gh.eval(i)); });
    }
}

TEST_CASE("compose splits boxes that cross base piece boundaries") {
    // Base: first half of a flat [12] goes to p0, second half to p1.
    std::vector<AffinePiece> bp;
    bp.push_back({{0}, {6}, {1}, 0, "p0"});
    bp.push_back({{6}, {12}, {1}, -6, "p1"});
    IndexMap base({12}, bp);
    IndexMap outer = IndexMap::identity("b", {3, 4});
    IndexMap composed = outer.compose([&](const std::string& t) -> const IndexMap* {
        return t == "b" ? &base : nullptr;
    });
    for_each_index({3, 4}, [&](const Index& i) {
        int64_t flat = i[0] * 4 + i[1];
        auto [t, off] = composed.eval(i);
        if (flat < 6) {
            CHECK(t == "p0");
            CHECK(off == flat);
        } else {
            CHECK(t == "p1");
            CHECK(off == flat - 6);
        }
    });
}

TEST_CASE("compose piece cap aborts pathological flattenings") {
    // Transposed base layout forces per-point splitting under a flat reinterpret.
    AffinePiece tp{{0, 0}, {32, 32}, {1, 32}, 0, "phys"};
    IndexMap transposed({32, 32}, {tp});
    IndexMap flat = IndexMap::identity("t", {1024});
    CHECK_THROWS_AS(flat.compose(
                        [&](const std::string& t) -> const IndexMap* {
                            return t == "t" ? &transposed : nullptr;
                        },
                        16),
                    ComposeLimitError);
}

TEST_CASE("writable checks: views are writable, overlapping images are not") {
    // Split-outputs-as-views: two disjoint windows of the input.
    AffinePiece w1{{0, 0}, {2, 4}, {4, 1}, 0, "in"};
    IndexMap view1({2, 4}, {w1});
    CHECK(check_writable(view1));

    // Two pieces with identical target and overlapping affine images.
    std::vector<AffinePiece> pieces;
    pieces.push_back({{0}, {4}, {1}, 0, "t"});
    pieces.push_back({{4}, {8}, {1}, -2, "t"});  // images [0,4) and [2,6) collide
    IndexMap bad({8}, pieces);
    CHECK_FALSE(check_writable(bad));

    // Exhaustive collision oracle agrees.
    std::set<int64_t> seen;
    bool collision = false;
    for (int64_t i = 0; i < 8; ++i) {
        auto [t, off] = bad.eval(Index{i});
        if (!seen.insert(off).second) collision = true;
    }
    CHECK(collision);
}

TEST_CASE("contiguity: identity is fully contiguous TypeI") {
    IndexMap m = IndexMap::identity("t", {6, 5});
    auto r = m.contiguity(8, 128);
    CHECK(r.min_contiguous_dim == 1);
    CHECK(r.contiguous_run_elems == 30);
    CHECK(r.cls == ContiguityClass::FullyContiguous);
    CHECK(r.type_class == TypeClass::TypeI);
}

TEST_CASE("contiguity: axis-0 window (split output) stays fully contiguous") {
    AffinePiece p{{0, 0}, {3, 4}, {4, 1}, 8, "in"};
    IndexMap m({3, 4}, {p});
    auto r = m.contiguity(8, 128);
    CHECK(r.cls == ContiguityClass::FullyContiguous);
    CHECK(r.type_class == TypeClass::TypeI);
}

TEST_CASE("contiguity: QKV-style multi-target map is partially contiguous TypeII") {
    // Batch 16, columns 0..4096 -> Q, 4096..5120 -> K slots, 5120..6144 -> V
    // slots; runs of 4096/1024/1024 columns, element size 2 bytes.
    std::vector<AffinePiece> pieces;
    pieces.push_back({{0, 0}, {16, 4096}, {4096, 1}, 0, "Q"});
    pieces.push_back({{0, 4096}, {16, 5120}, {4096 * 1024, 1}, 7 * 1024 - 4096, "K_Cache"});
    pieces.push_back({{0, 5120}, {16, 6144}, {4096 * 1024, 1}, 7 * 1024 - 5120, "V_Cache"});
    IndexMap m({16, 6144}, pieces);
    REQUIRE(m.is_total());
    auto r = m.contiguity(2, 128);
    CHECK(r.contiguous_run_elems == 1024);
    CHECK(r.cls == ContiguityClass::PartiallyContiguous);
    CHECK(r.type_class == TypeClass::TypeII);
}

TEST_CASE("contiguity: transposed strides are non-contiguous") {
    AffinePiece p{{0, 0}, {64, 64}, {1, 64}, 0, "t"};
    IndexMap m({64, 64}, {p});
    auto r = m.contiguity(8, 128);
    CHECK(r.cls == ContiguityClass::NonContiguous);
    CHECK(r.contiguous_run_elems == 1);
    CHECK(r.type_class == TypeClass::TypeII);
}

TEST_CASE("unique_elems deduplicates replicated piece images") {
    // Three replicas of the same source block.
    std::vector<AffinePiece> pieces;
    for (int64_t r = 0; r < 3; ++r)
        pieces.push_back({{r * 4}, {(r + 1) * 4}, {1}, -r * 4, "in"});
    IndexMap m({12}, pieces);
    CHECK(m.unique_elems() == 4);

    // Exhaustive cross-check.
    std::unordered_set<int64_t> addrs;
    for (int64_t i = 0; i < 12; ++i) addrs.insert(m.eval(Index{i}).second);
    CHECK(int64_t(addrs.size()) == m.unique_elems());
}

TEST_CASE("merge_maps joins disjoint partial maps and rejects overlap") {
    AffinePiece half1{{0, 0}, {2, 4}, {4, 1}, 0, "a"};
    AffinePiece half2{{2, 0}, {5, 4}, {4, 1}, -8, "b"};
    IndexMap m1({5, 4}, {half1});
    IndexMap m2({5, 4}, {half2});
    IndexMap merged = merge_maps({5, 4}, {&m1, &m2});
    CHECK(merged.is_total());

    AffinePiece clash{{1, 0}, {3, 4}, {4, 1}, 0, "c"};
    IndexMap m3({5, 4}, {clash});
    CHECK_THROWS_AS(merge_maps({5, 4}, {&m1, &m3}), ConflictViolationError);
}

TEST_CASE("IndexMap JSON round trip") {
    AffinePiece p{{0, 1}, {3, 4}, {9, 1}, 5, "phys"};
    IndexMap m({3, 4}, {p});
    IndexMap back = IndexMap::from_json(m.to_json());
    CHECK(back.equivalent(m));
}

TEST_CASE("normalize merges pieces split by composition") {
    std::vector<AffinePiece> pieces;
    pieces.push_back({{0}, {5}, {1}, 3, "t"});
    pieces.push_back({{5}, {10}, {1}, 3, "t"});
    IndexMap m({10}, pieces);
    m.normalize();
    CHECK(m.pieces().size() == 1);
    CHECK(m.is_total());
}
