#include "vtelim/vt_rules.hpp"

#include <algorithm>
#include <numeric>

namespace vtelim {

const char* to_string(VtDirection d) {
    return d == VtDirection::OutputOverInput ? "output_over_input" : "input_over_output";
}

namespace {

AffinePiece full_box_piece(const Index& shape, Index strides, int64_t offset, std::string target) {
    AffinePiece p;
    p.lo.assign(shape.size(), 0);
    p.hi = shape;
    p.strides = std::move(strides);
    p.offset = offset;
    p.target = std::move(target);
    return p;
}

// Boxes covering the first-k-dimensional grid minus the given distinct
// tuples. Used for the unchanged region of a scatter.
void complement_boxes(const Index& dims, std::vector<Index> tuples, size_t dim, Index& lo_prefix,
                      std::vector<std::pair<Index, Index>>& out) {
    if (dim == dims.size()) return;  // all coordinates pinned: fully excluded point
    std::sort(tuples.begin(), tuples.end());
    int64_t cursor = 0;
    size_t i = 0;
    while (i < tuples.size()) {
        int64_t v = tuples[i][dim];
        if (v > cursor) {
            Index lo = lo_prefix, hi = lo_prefix;
            lo.push_back(cursor);
            hi.push_back(v);
            for (size_t d = dim + 1; d < dims.size(); ++d) {
                lo.push_back(0);
                hi.push_back(dims[d]);
            }
            out.emplace_back(std::move(lo), std::move(hi));
        }
        std::vector<Index> group;
        while (i < tuples.size() && tuples[i][dim] == v) group.push_back(tuples[i++]);
        lo_prefix.push_back(v);
        complement_boxes(dims, std::move(group), dim + 1, lo_prefix, out);
        lo_prefix.pop_back();
        cursor = v + 1;
    }
    if (cursor < dims[dim]) {
        Index lo = lo_prefix, hi = lo_prefix;
        lo.push_back(cursor);
        hi.push_back(dims[dim]);
        for (size_t d = dim + 1; d < dims.size(); ++d) {
            lo.push_back(0);
            hi.push_back(dims[d]);
        }
        out.emplace_back(std::move(lo), std::move(hi));
    }
}

IndexMap scatter_output_map(const OpNode& n, const CompGraph& g) {
    const auto& a = std::get<ScatterNDAttrs>(n.attrs);
    const Index& data_shape = g.tensor(n.inputs[0]).shape;
    const Index& upd_shape = g.tensor(n.inputs[1]).shape;
    const std::string& data = n.inputs[0];
    const std::string& upd = n.inputs[1];
    size_t k = a.indices[0].size();
    size_t r = data_shape.size();
    Index data_strides = default_strides(data_shape);
    Index upd_strides = default_strides(upd_shape);

    std::vector<AffinePiece> pieces;
    // Unchanged region: identity onto data.
    Index kdims(data_shape.begin(), data_shape.begin() + k);
    Index prefix;
    std::vector<std::pair<Index, Index>> boxes;
    complement_boxes(kdims, a.indices, 0, prefix, boxes);
    for (auto& [blo, bhi] : boxes) {
        AffinePiece p;
        p.lo = blo;
        p.hi = bhi;
        for (size_t d = k; d < r; ++d) {
            p.lo.push_back(0);
            p.hi.push_back(data_shape[d]);
        }
        p.strides = data_strides;
        p.offset = 0;
        p.target = data;
        pieces.push_back(std::move(p));
    }
    // Updated slabs: tuple m reads row m of the updates tensor.
    for (size_t m = 0; m < a.indices.size(); ++m) {
        AffinePiece p;
        p.lo.assign(r, 0);
        p.hi = data_shape;
        p.strides.assign(r, 0);
        for (size_t d = 0; d < k; ++d) {
            p.lo[d] = a.indices[m][d];
            p.hi[d] = a.indices[m][d] + 1;
        }
        for (size_t d = k; d < r; ++d) p.strides[d] = upd_strides[d - k + 1];
        p.offset = int64_t(m) * upd_strides[0];
        p.target = upd;
        pieces.push_back(std::move(p));
    }
    return IndexMap(data_shape, std::move(pieces));
}

IndexMap expand_output_map(const OpNode& n, const CompGraph& g) {
    const Index& in_shape = g.tensor(n.inputs[0]).shape;
    const Index& out_shape = g.tensor(n.outputs[0]).shape;
    Index in_strides = default_strides(in_shape);
    const std::string& in = n.inputs[0];
    size_t r = in_shape.size();

    // Per-axis segments of the replication structure.
    struct Seg { int64_t lo, hi, stride, bias; };
    std::vector<std::vector<Seg>> axis_segs(r);
    for (size_t a = 0; a < r; ++a) {
        int64_t f = out_shape[a] / in_shape[a];
        if (f == 1)
            axis_segs[a] = {{0, out_shape[a], in_strides[a], 0}};
        else if (in_shape[a] == 1)
            axis_segs[a] = {{0, out_shape[a], 0, 0}};
        else
            for (int64_t rep = 0; rep < f; ++rep)
                axis_segs[a].push_back({rep * in_shape[a], (rep + 1) * in_shape[a], in_strides[a],
                                        -rep * in_shape[a] * in_strides[a]});
    }
    std::vector<AffinePiece> pieces;
    std::vector<size_t> pick(r, 0);
    while (true) {
        AffinePiece p;
        p.lo.resize(r);
        p.hi.resize(r);
        p.strides.resize(r);
        p.offset = 0;
        p.target = in;
        for (size_t a = 0; a < r; ++a) {
            const Seg& s = axis_segs[a][pick[a]];
            p.lo[a] = s.lo;
            p.hi[a] = s.hi;
            p.strides[a] = s.stride;
            p.offset += s.bias;
        }
        pieces.push_back(std::move(p));
        int i = int(r) - 1;
        for (; i >= 0; --i) {
            if (++pick[i] < axis_segs[i].size()) break;
            pick[i] = 0;
        }
        if (i < 0) break;
    }
    return IndexMap(out_shape, std::move(pieces));
}

}  // namespace

IndexMap gather_map(const OpNode& n, const std::string& output_id, const CompGraph& g) {
    if (!is_data_movement(n))
        throw UnknownOperatorError("gather_map requested for computational operator " + n.id);
    auto out_pos = std::find(n.outputs.begin(), n.outputs.end(), output_id);
    if (out_pos == n.outputs.end())
        throw SchemaError("tensor " + output_id + " is not an output of node " + n.id);
    size_t oi = size_t(out_pos - n.outputs.begin());
    const Index& out_shape = g.tensor(output_id).shape;
    const Index& in_shape = g.tensor(n.inputs[0]).shape;
    Index in_strides = default_strides(in_shape);

    switch (n.kind) {
        case OpKind::Transpose: {
            const auto& a = std::get<TransposeAttrs>(n.attrs);
            Index strides(out_shape.size());
            for (size_t i = 0; i < out_shape.size(); ++i) strides[i] = in_strides[a.perm[i]];
            return IndexMap(out_shape, {full_box_piece(out_shape, strides, 0, n.inputs[0])});
        }
        case OpKind::Reshape:
        case OpKind::Unsqueeze:
            // Flat element order is unchanged.
            return IndexMap(out_shape,
                            {full_box_piece(out_shape, default_strides(out_shape), 0, n.inputs[0])});
        case OpKind::Split: {
            const auto& a = std::get<SplitAttrs>(n.attrs);
            int64_t prior = 0;
            for (size_t i = 0; i < oi; ++i) prior += a.sizes[i];
            return IndexMap(out_shape, {full_box_piece(out_shape, in_strides,
                                                       prior * in_strides[a.axis], n.inputs[0])});
        }
        case OpKind::Concat: {
            const auto& a = std::get<ConcatAttrs>(n.attrs);
            std::vector<AffinePiece> pieces;
            int64_t prior = 0;
            for (const auto& in : n.inputs) {
                const Index& ishape = g.tensor(in).shape;
                AffinePiece p;
                p.lo.assign(out_shape.size(), 0);
                p.hi = out_shape;
                p.lo[a.axis] = prior;
                p.hi[a.axis] = prior + ishape[a.axis];
                p.strides = default_strides(ishape);
                p.offset = -prior * p.strides[a.axis];
                p.target = in;
                pieces.push_back(std::move(p));
                prior += ishape[a.axis];
            }
            return IndexMap(out_shape, std::move(pieces));
        }
        case OpKind::Slice: {
            const auto& a = std::get<SliceAttrs>(n.attrs);
            int64_t offset = 0;
            for (size_t i = 0; i < a.axes.size(); ++i) offset += a.starts[i] * in_strides[a.axes[i]];
            return IndexMap(out_shape, {full_box_piece(out_shape, in_strides, offset, n.inputs[0])});
        }
        case OpKind::Expand:
            return expand_output_map(n, g);
        case OpKind::ScatterND:
            return scatter_output_map(n, g);
        default:
            throw UnknownOperatorError("no gather map authored for operator " + n.id);
    }
}

namespace {

TypeClass classify(const IndexMap& m, const TensorSpec& t) {
    return m.contiguity(dtype_size(t.dtype), kStaticCoalesceUnit).type_class;
}

bool virtualizable(const CompGraph& g, const std::string& id) {
    return g.tensor(id).kind == TensorKind::Intermediate;
}

IndexMap input_window_map(const Index& in_shape, const Index& strides_into_out,
                          const std::string& out) {
    return IndexMap(in_shape, {full_box_piece(in_shape, strides_into_out, 0, out)});
}

}  // namespace

std::vector<VtRuleCandidate> vt_rules(const OpNode& n, const CompGraph& g) {
    if (!is_data_movement(n))
        throw UnknownOperatorError("vt_rules requested for computational operator " + n.id);
    std::vector<VtRuleCandidate> out;

    auto add = [&](std::string virt, std::vector<std::string> bases, IndexMap m, VtDirection dir) {
        if (!virtualizable(g, virt)) return;
        // A virtual tensor written by its producer needs a one-to-one map.
        if (dir == VtDirection::InputOverOutput && !check_writable(m)) return;
        VtRuleCandidate c;
        c.static_class = classify(m, g.tensor(virt));
        c.virtual_tensor = std::move(virt);
        c.base_tensors = std::move(bases);
        c.map = std::move(m);
        c.direction = dir;
        c.eliminated_op = n.id;
        out.push_back(std::move(c));
    };

    // Outputs viewed over the node's inputs via the defining element map.
    if (n.kind != OpKind::ScatterND) {
        for (const auto& o : n.outputs) {
            IndexMap m = gather_map(n, o, g);
            std::vector<std::string> bases = m.targets();
            add(o, std::move(bases), std::move(m), VtDirection::OutputOverInput);
        }
    }

    const Index& in_shape = g.tensor(n.inputs[0]).shape;
    switch (n.kind) {
        case OpKind::Transpose: {
            const auto& a = std::get<TransposeAttrs>(n.attrs);
            const Index& out_shape = g.tensor(n.outputs[0]).shape;
            Index out_strides = default_strides(out_shape);
            Index strides(in_shape.size());
            for (size_t i = 0; i < in_shape.size(); ++i) strides[a.perm[i]] = out_strides[i];
            add(n.inputs[0], {n.outputs[0]}, input_window_map(in_shape, strides, n.outputs[0]),
                VtDirection::InputOverOutput);
            break;
        }
        case OpKind::Reshape:
        case OpKind::Unsqueeze: {
            add(n.inputs[0], {n.outputs[0]},
                input_window_map(in_shape, default_strides(in_shape), n.outputs[0]),
                VtDirection::InputOverOutput);
            break;
        }
        case OpKind::Split: {
            // One candidate: the input becomes a view spanning all outputs.
            const auto& a = std::get<SplitAttrs>(n.attrs);
            std::vector<AffinePiece> pieces;
            int64_t prior = 0;
            for (const auto& o : n.outputs) {
                const Index& oshape = g.tensor(o).shape;
                AffinePiece p;
                p.lo.assign(in_shape.size(), 0);
                p.hi = in_shape;
                p.lo[a.axis] = prior;
                p.hi[a.axis] = prior + oshape[a.axis];
                p.strides = default_strides(oshape);
                p.offset = -prior * p.strides[a.axis];
                p.target = o;
                pieces.push_back(std::move(p));
                prior += oshape[a.axis];
            }
            add(n.inputs[0], std::vector<std::string>(n.outputs.begin(), n.outputs.end()),
                IndexMap(in_shape, std::move(pieces)), VtDirection::InputOverOutput);
            break;
        }
        case OpKind::Concat: {
            // One candidate per input: each becomes a window of the output.
            const auto& a = std::get<ConcatAttrs>(n.attrs);
            const Index& out_shape = g.tensor(n.outputs[0]).shape;
            Index out_strides = default_strides(out_shape);
            int64_t prior = 0;
            for (const auto& in : n.inputs) {
                const Index& ishape = g.tensor(in).shape;
                add(in, {n.outputs[0]},
                    IndexMap(ishape, {full_box_piece(ishape, out_strides,
                                                     prior * out_strides[a.axis], n.outputs[0])}),
                    VtDirection::InputOverOutput);
                prior += ishape[a.axis];
            }
            break;
        }
        case OpKind::Slice:
            // The input holds elements the output drops; it can never be a
            // complete view of the output.
            break;
        case OpKind::Expand: {
            // The input views the first replica of the output.
            const Index& out_shape = g.tensor(n.outputs[0]).shape;
            add(n.inputs[0], {n.outputs[0]},
                input_window_map(in_shape, default_strides(out_shape), n.outputs[0]),
                VtDirection::InputOverOutput);
            break;
        }
        case OpKind::ScatterND: {
            const auto& a = std::get<ScatterNDAttrs>(n.attrs);
            const std::string& data = n.inputs[0];
            const std::string& upd = n.inputs[1];
            const std::string& o = n.outputs[0];
            const Index& data_shape = g.tensor(data).shape;

            // (i) Output aliases the data tensor in place. Safe only when the
            // scatter is the sole reader of data.
            if (g.consumers(data).size() == 1)
                add(o, {data}, IndexMap::identity(data, data_shape), VtDirection::OutputOverInput);

            // (ii) Updates become views of the scattered slabs of the output.
            const Index& upd_shape = g.tensor(upd).shape;
            size_t k = a.indices[0].size();
            Index data_strides = default_strides(data_shape);
            std::vector<AffinePiece> pieces;
            for (size_t m = 0; m < a.indices.size(); ++m) {
                AffinePiece p;
                p.lo.assign(upd_shape.size(), 0);
                p.hi = upd_shape;
                p.lo[0] = int64_t(m);
                p.hi[0] = int64_t(m) + 1;
                p.strides.assign(upd_shape.size(), 0);
                p.offset = 0;
                for (size_t d = 0; d < k; ++d) p.offset += a.indices[m][d] * data_strides[d];
                for (size_t d = 1; d < upd_shape.size(); ++d)
                    p.strides[d] = data_strides[k + d - 1];
                p.target = o;
                pieces.push_back(std::move(p));
            }
            add(upd, {o}, IndexMap(upd_shape, std::move(pieces)), VtDirection::InputOverOutput);
            break;
        }
        default:
            break;
    }

    for (const auto& c : out) {
        if (!c.map.is_total() || !c.map.single_valued())
            throw InvalidVtogError("rule map for " + c.virtual_tensor + " at node " + n.id +
                                   " is not a valid partition");
    }
    return out;
}

}  // namespace vtelim
