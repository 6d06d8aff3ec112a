#include "vtelim/graph_ir.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace vtelim {

int64_t dtype_size(DType d) {
    switch (d) {
        case DType::F64: return 8;
        case DType::F32: return 4;
        case DType::I64: return 8;
    }
    return 0;
}

const char* to_string(DType d) {
    switch (d) {
        case DType::F64: return "f64";
        case DType::F32: return "f32";
        case DType::I64: return "i64";
    }
    return "?";
}

DType dtype_from_string(const std::string& s) {
    if (s == "f64") return DType::F64;
    if (s == "f32") return DType::F32;
    if (s == "i64") return DType::I64;
    throw SchemaError("unknown dtype: " + s);
}

const char* to_string(TensorKind k) {
    switch (k) {
        case TensorKind::GraphInput: return "input";
        case TensorKind::GraphOutput: return "output";
        case TensorKind::Intermediate: return "intermediate";
    }
    return "?";
}

TensorKind tensor_kind_from_string(const std::string& s) {
    if (s == "input") return TensorKind::GraphInput;
    if (s == "output") return TensorKind::GraphOutput;
    if (s == "intermediate") return TensorKind::Intermediate;
    throw SchemaError("unknown tensor kind: " + s);
}

const char* to_string(OpKind k) {
    switch (k) {
        case OpKind::MatMul: return "MatMul";
        case OpKind::Add: return "Add";
        case OpKind::Mul: return "Mul";
        case OpKind::SiLU: return "SiLU";
        case OpKind::Transpose: return "Transpose";
        case OpKind::Reshape: return "Reshape";
        case OpKind::Split: return "Split";
        case OpKind::Concat: return "Concat";
        case OpKind::Slice: return "Slice";
        case OpKind::Unsqueeze: return "Unsqueeze";
        case OpKind::Expand: return "Expand";
        case OpKind::ScatterND: return "ScatterND";
    }
    return "?";
}

OpKind op_kind_from_string(const std::string& s) {
    static const std::map<std::string, OpKind> table = {
        {"MatMul", OpKind::MatMul},       {"Add", OpKind::Add},
        {"Mul", OpKind::Mul},             {"SiLU", OpKind::SiLU},
        {"Transpose", OpKind::Transpose}, {"Reshape", OpKind::Reshape},
        {"Split", OpKind::Split},         {"Concat", OpKind::Concat},
        {"Slice", OpKind::Slice},         {"Unsqueeze", OpKind::Unsqueeze},
        {"Expand", OpKind::Expand},       {"ScatterND", OpKind::ScatterND},
    };
    auto it = table.find(s);
    if (it == table.end()) throw UnknownOperatorError("unknown operator kind: " + s);
    return it->second;
}

bool is_data_movement(OpKind k) {
    switch (k) {
        case OpKind::Transpose:
        case OpKind::Reshape:
        case OpKind::Split:
        case OpKind::Concat:
        case OpKind::Slice:
        case OpKind::Unsqueeze:
        case OpKind::Expand:
        case OpKind::ScatterND:
            return true;
        default:
            return false;
    }
}

bool is_data_movement(const OpNode& node) { return is_data_movement(node.kind); }

void CompGraph::add_tensor(TensorSpec t) {
    if (t.id.empty()) throw SchemaError("tensor with empty id");
    if (tindex_.count(t.id)) throw SchemaError("duplicate tensor id: " + t.id);
    for (int64_t d : t.shape)
        if (d < 1) throw SchemaError("tensor " + t.id + " has non-positive dimension");
    tindex_[t.id] = tensors_.size();
    tensors_.push_back(std::move(t));
}

void CompGraph::add_node(OpNode n) {
    if (n.id.empty()) throw SchemaError("node with empty id");
    if (nindex_.count(n.id)) throw SchemaError("duplicate node id: " + n.id);
    nindex_[n.id] = nodes_.size();
    nodes_.push_back(std::move(n));
}

void CompGraph::finalize() {
    producer_.clear();
    consumers_.clear();
    for (size_t ni = 0; ni < nodes_.size(); ++ni) {
        const OpNode& n = nodes_[ni];
        for (const auto& t : n.inputs) {
            if (!tindex_.count(t)) throw SchemaError("node " + n.id + " reads unknown tensor " + t);
            consumers_[t].push_back(int(ni));
        }
        for (const auto& t : n.outputs) {
            if (!tindex_.count(t)) throw SchemaError("node " + n.id + " writes unknown tensor " + t);
            if (producer_.count(t))
                throw SchemaError("tensor " + t + " has more than one producer");
            producer_[t] = int(ni);
            if (tensor(t).kind == TensorKind::GraphInput)
                throw SchemaError("graph input " + t + " produced by node " + n.id);
        }
    }
    for (const auto& t : tensors_) {
        if (t.kind != TensorKind::GraphInput && !producer_.count(t.id))
            throw SchemaError("non-input tensor " + t.id + " has no producer");
    }

    // Kahn's algorithm, deterministic: among ready nodes pick lowest index.
    std::vector<int> pending(nodes_.size(), 0);
    for (size_t ni = 0; ni < nodes_.size(); ++ni)
        for (const auto& t : nodes_[ni].inputs)
            if (producer_.count(t)) ++pending[ni];
    topo_.clear();
    std::vector<bool> emitted(nodes_.size(), false);
    for (size_t round = 0; round < nodes_.size(); ++round) {
        int pick = -1;
        for (size_t ni = 0; ni < nodes_.size(); ++ni)
            if (!emitted[ni] && pending[ni] == 0) { pick = int(ni); break; }
        if (pick < 0) throw CycleError("computation graph contains a cycle");
        emitted[pick] = true;
        topo_.push_back(pick);
        for (const auto& t : nodes_[pick].outputs)
            for (int ci : consumers_[t]) --pending[ci];
    }
}

const TensorSpec& CompGraph::tensor(const std::string& id) const {
    auto it = tindex_.find(id);
    if (it == tindex_.end()) throw SchemaError("unknown tensor: " + id);
    return tensors_[it->second];
}

TensorSpec& CompGraph::tensor(const std::string& id) {
    auto it = tindex_.find(id);
    if (it == tindex_.end()) throw SchemaError("unknown tensor: " + id);
    return tensors_[it->second];
}

const OpNode* CompGraph::producer(const std::string& tensor_id) const {
    auto it = producer_.find(tensor_id);
    return it == producer_.end() ? nullptr : &nodes_[it->second];
}

std::vector<const OpNode*> CompGraph::consumers(const std::string& tensor_id) const {
    std::vector<const OpNode*> out;
    auto it = consumers_.find(tensor_id);
    if (it != consumers_.end())
        for (int ni : it->second) out.push_back(&nodes_[ni]);
    return out;
}

std::vector<std::string> CompGraph::graph_inputs() const {
    std::vector<std::string> out;
    for (const auto& t : tensors_)
        if (t.kind == TensorKind::GraphInput) out.push_back(t.id);
    return out;
}

std::vector<std::string> CompGraph::graph_outputs() const {
    std::vector<std::string> out;
    for (const auto& t : tensors_)
        if (t.kind == TensorKind::GraphOutput) out.push_back(t.id);
    return out;
}

std::vector<std::string> CompGraph::sink_tensors() const {
    std::vector<std::string> out;
    for (const auto& t : tensors_)
        if (consumers_.find(t.id) == consumers_.end() && t.kind != TensorKind::GraphInput)
            out.push_back(t.id);
    return out;
}

namespace {

[[noreturn]] void shape_fail(const OpNode& n, const std::string& why) {
    throw ShapeError("node " + n.id + " (" + to_string(n.kind) + "): " + why);
}

void require(const OpNode& n, bool cond, const std::string& why) {
    if (!cond) shape_fail(n, why);
}

}  // namespace

std::vector<Index> infer_output_shapes(const OpNode& n, const std::vector<Index>& in) {
    switch (n.kind) {
        case OpKind::MatMul: {
            require(n, in.size() == 2, "expects 2 inputs");
            const Index &a = in[0], &b = in[1];
            require(n, a.size() == b.size() && a.size() >= 2, "operand ranks must match and be >= 2");
            size_t r = a.size();
            for (size_t i = 0; i + 2 < r; ++i)
                require(n, a[i] == b[i], "batch dimensions differ");
            require(n, a[r - 1] == b[r - 2], "inner dimensions differ");
            Index out(a.begin(), a.end() - 1);
            out.push_back(b[r - 1]);
            return {out};
        }
        case OpKind::Add:
        case OpKind::Mul: {
            require(n, in.size() == 2, "expects 2 inputs");
            require(n, in[0] == in[1], "operand shapes differ");
            return {in[0]};
        }
        case OpKind::SiLU: {
            require(n, in.size() == 1, "expects 1 input");
            return {in[0]};
        }
        case OpKind::Transpose: {
            require(n, in.size() == 1, "expects 1 input");
            const auto& a = std::get<TransposeAttrs>(n.attrs);
            size_t r = in[0].size();
            require(n, a.perm.size() == r, "perm rank mismatch");
            std::vector<bool> seen(r, false);
            Index out(r);
            for (size_t i = 0; i < r; ++i) {
                int64_t p = a.perm[i];
                require(n, p >= 0 && p < int64_t(r) && !seen[p], "perm is not a permutation");
                seen[p] = true;
                out[i] = in[0][p];
            }
            return {out};
        }
        case OpKind::Reshape: {
            require(n, in.size() == 1, "expects 1 input");
            const auto& a = std::get<ReshapeAttrs>(n.attrs);
            require(n, !a.shape.empty(), "target shape empty");
            for (int64_t d : a.shape) require(n, d >= 1, "target dimension < 1");
            require(n, volume(a.shape) == volume(in[0]), "element count changes");
            return {a.shape};
        }
        case OpKind::Split: {
            require(n, in.size() == 1, "expects 1 input");
            const auto& a = std::get<SplitAttrs>(n.attrs);
            size_t r = in[0].size();
            require(n, a.axis >= 0 && a.axis < int64_t(r), "axis out of range");
            require(n, !a.sizes.empty(), "no split sizes");
            int64_t sum = 0;
            for (int64_t s : a.sizes) {
                require(n, s >= 1, "split size < 1");
                sum += s;
            }
            require(n, sum == in[0][a.axis], "split sizes do not sum to the axis extent");
            require(n, n.outputs.size() == a.sizes.size(), "output count != split count");
            std::vector<Index> out;
            for (int64_t s : a.sizes) {
                Index o = in[0];
                o[a.axis] = s;
                out.push_back(std::move(o));
            }
            return out;
        }
        case OpKind::Concat: {
            require(n, !in.empty(), "expects at least 1 input");
            const auto& a = std::get<ConcatAttrs>(n.attrs);
            size_t r = in[0].size();
            require(n, a.axis >= 0 && a.axis < int64_t(r), "axis out of range");
            Index out = in[0];
            for (size_t i = 1; i < in.size(); ++i) {
                require(n, in[i].size() == r, "operand ranks differ");
                for (size_t d = 0; d < r; ++d)
                    if (int64_t(d) != a.axis)
                        require(n, in[i][d] == in[0][d], "non-axis dimensions differ");
                out[a.axis] += in[i][a.axis];
            }
            return {out};
        }
        case OpKind::Slice: {
            require(n, in.size() == 1, "expects 1 input");
            const auto& a = std::get<SliceAttrs>(n.attrs);
            require(n, a.axes.size() == a.starts.size() && a.axes.size() == a.ends.size(),
                    "axes/starts/ends length mismatch");
            Index out = in[0];
            std::set<int64_t> seen;
            for (size_t i = 0; i < a.axes.size(); ++i) {
                int64_t ax = a.axes[i];
                require(n, ax >= 0 && ax < int64_t(out.size()), "axis out of range");
                require(n, seen.insert(ax).second, "duplicate slice axis");
                require(n, a.starts[i] >= 0 && a.starts[i] < a.ends[i] && a.ends[i] <= in[0][ax],
                        "slice range invalid");
                out[ax] = a.ends[i] - a.starts[i];
            }
            return {out};
        }
        case OpKind::Unsqueeze: {
            require(n, in.size() == 1, "expects 1 input");
            const auto& a = std::get<UnsqueezeAttrs>(n.attrs);
            require(n, a.axis >= 0 && a.axis <= int64_t(in[0].size()), "axis out of range");
            Index out = in[0];
            out.insert(out.begin() + a.axis, 1);
            return {out};
        }
        case OpKind::Expand: {
            require(n, in.size() == 1, "expects 1 input");
            const auto& a = std::get<ExpandAttrs>(n.attrs);
            require(n, a.shape.size() == in[0].size(), "target rank differs");
            for (size_t i = 0; i < a.shape.size(); ++i) {
                require(n, a.shape[i] >= in[0][i], "target dimension shrinks");
                require(n, a.shape[i] % in[0][i] == 0, "target not a multiple of the source extent");
            }
            return {a.shape};
        }
        case OpKind::ScatterND: {
            require(n, in.size() == 2, "expects data and updates inputs");
            const auto& a = std::get<ScatterNDAttrs>(n.attrs);
            const Index& data = in[0];
            require(n, !a.indices.empty(), "no static indices");
            size_t k = a.indices[0].size();
            require(n, k >= 1 && k <= data.size(), "index tuple length invalid");
            std::set<Index> distinct;
            for (const auto& tup : a.indices) {
                require(n, tup.size() == k, "ragged index tuples");
                for (size_t i = 0; i < k; ++i)
                    require(n, tup[i] >= 0 && tup[i] < data[i], "index tuple out of range");
                require(n, distinct.insert(tup).second, "duplicate index tuple");
            }
            Index expect_updates;
            expect_updates.push_back(int64_t(a.indices.size()));
            expect_updates.insert(expect_updates.end(), data.begin() + k, data.end());
            require(n, in[1] == expect_updates, "updates shape mismatch");
            return {data};
        }
    }
    throw UnknownOperatorError("unregistered operator in shape inference");
}

CompGraph infer_shapes(CompGraph g) {
    for (const auto& id : g.graph_inputs())
        if (g.tensor(id).shape.empty())
            throw ShapeError("graph input " + id + " has no shape");
    for (int ni : g.topo_order()) {
        const OpNode& n = g.nodes()[ni];
        std::vector<Index> in_shapes;
        for (const auto& t : n.inputs) {
            if (g.tensor(t).shape.empty()) shape_fail(n, "input " + t + " shape unknown");
            in_shapes.push_back(g.tensor(t).shape);
        }
        for (const auto& t : n.inputs) {
            if (g.tensor(t).dtype != g.tensor(n.inputs[0]).dtype)
                shape_fail(n, "mixed operand dtypes");
        }
        if (n.kind == OpKind::SiLU && g.tensor(n.inputs[0]).dtype == DType::I64)
            shape_fail(n, "SiLU is undefined for i64");
        std::vector<Index> out_shapes = infer_output_shapes(n, in_shapes);
        require(n, out_shapes.size() == n.outputs.size(), "output arity mismatch");
        for (size_t i = 0; i < n.outputs.size(); ++i) {
            TensorSpec& t = g.tensor(n.outputs[i]);
            if (t.shape.empty())
                t.shape = out_shapes[i];
            else if (t.shape != out_shapes[i])
                shape_fail(n, "declared shape of " + t.id + " contradicts inference");
            if (t.dtype != g.tensor(n.inputs[0]).dtype)
                shape_fail(n, "output dtype of " + t.id + " differs from operands");
        }
    }
    for (const auto& t : g.tensors())
        if (t.shape.empty()) throw ShapeError("tensor " + t.id + " shape could not be inferred");
    return g;
}

namespace {

Index json_index(const nlohmann::json& j, const std::string& ctx) {
    if (!j.is_array()) throw SchemaError(ctx + ": expected an integer array");
    Index out;
    for (const auto& v : j) {
        if (!v.is_number_integer()) throw SchemaError(ctx + ": expected an integer array");
        out.push_back(v.get<int64_t>());
    }
    return out;
}

OpAttrs parse_attrs(OpKind kind, const nlohmann::json& j, const std::string& node_id) {
    auto need = [&](const char* field) -> const nlohmann::json& {
        if (!j.contains(field))
            throw SchemaError("node " + node_id + ": missing attr '" + field + "'");
        return j.at(field);
    };
    switch (kind) {
        case OpKind::Transpose: return TransposeAttrs{json_index(need("perm"), node_id)};
        case OpKind::Reshape: return ReshapeAttrs{json_index(need("shape"), node_id)};
        case OpKind::Split:
            return SplitAttrs{need("axis").get<int64_t>(), json_index(need("sizes"), node_id)};
        case OpKind::Concat: return ConcatAttrs{need("axis").get<int64_t>()};
        case OpKind::Slice:
            return SliceAttrs{json_index(need("axes"), node_id), json_index(need("starts"), node_id),
                              json_index(need("ends"), node_id)};
        case OpKind::Unsqueeze: return UnsqueezeAttrs{need("axis").get<int64_t>()};
        case OpKind::Expand: return ExpandAttrs{json_index(need("shape"), node_id)};
        case OpKind::ScatterND: {
            std::vector<Index> tuples;
            for (const auto& t : need("indices")) tuples.push_back(json_index(t, node_id));
            return ScatterNDAttrs{std::move(tuples)};
        }
        default: return NoAttrs{};
    }
}

nlohmann::json attrs_to_json(const OpNode& n) {
    nlohmann::json j = nlohmann::json::object();
    std::visit(
        [&](const auto& a) {
            using T = std::decay_t<decltype(a)>;
            if constexpr (std::is_same_v<T, TransposeAttrs>) j["perm"] = a.perm;
            else if constexpr (std::is_same_v<T, ReshapeAttrs>) j["shape"] = a.shape;
            else if constexpr (std::is_same_v<T, SplitAttrs>) { j["axis"] = a.axis; j["sizes"] = a.sizes; }
            else if constexpr (std::is_same_v<T, ConcatAttrs>) j["axis"] = a.axis;
            else if constexpr (std::is_same_v<T, SliceAttrs>) {
                j["axes"] = a.axes; j["starts"] = a.starts; j["ends"] = a.ends;
            }
            else if constexpr (std::is_same_v<T, UnsqueezeAttrs>) j["axis"] = a.axis;
            else if constexpr (std::is_same_v<T, ExpandAttrs>) j["shape"] = a.shape;
            else if constexpr (std::is_same_v<T, ScatterNDAttrs>) j["indices"] = a.indices;
        },
        n.attrs);
    return j;
}

}  // namespace

CompGraph parse_graph(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("malformed JSON: ") + e.what());
    }
    CompGraph g;
    if (!j.contains("tensors") || !j.contains("nodes"))
        throw SchemaError("graph document needs 'tensors' and 'nodes'");
    for (const auto& tj : j.at("tensors")) {
        TensorSpec t;
        t.id = tj.at("id").get<std::string>();
        if (tj.contains("shape")) t.shape = json_index(tj.at("shape"), t.id);
        t.dtype = dtype_from_string(tj.at("dtype").get<std::string>());
        t.kind = tensor_kind_from_string(tj.at("kind").get<std::string>());
        g.add_tensor(std::move(t));
    }
    for (const auto& nj : j.at("nodes")) {
        OpNode n;
        n.id = nj.at("id").get<std::string>();
        n.kind = op_kind_from_string(nj.at("kind").get<std::string>());
        n.attrs = parse_attrs(n.kind, nj.contains("attrs") ? nj.at("attrs") : nlohmann::json::object(),
                              n.id);
        for (const auto& s : nj.at("inputs")) n.inputs.push_back(s.get<std::string>());
        for (const auto& s : nj.at("outputs")) n.outputs.push_back(s.get<std::string>());
        g.add_node(std::move(n));
    }
    g.finalize();
    return infer_shapes(std::move(g));
}

std::string serialize_graph(const CompGraph& g) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : g.tensors())
        tensors.push_back({{"id", t.id},
                           {"shape", t.shape},
                           {"dtype", to_string(t.dtype)},
                           {"kind", to_string(t.kind)}});
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : g.nodes())
        nodes.push_back({{"id", n.id},
                         {"kind", to_string(n.kind)},
                         {"attrs", attrs_to_json(n)},
                         {"inputs", n.inputs},
                         {"outputs", n.outputs}});
    nlohmann::json doc = {{"tensors", tensors}, {"nodes", nodes}};
    return doc.dump(2) + "\n";
}

}  // namespace vtelim
