// Computation-graph IR: tensors, operator nodes, JSON (de)serialization,
// topological ordering, and per-operator shape inference.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "vtelim/mapping.hpp"

namespace vtelim {

enum class DType { F64, F32, I64 };
int64_t dtype_size(DType d);
const char* to_string(DType d);
DType dtype_from_string(const std::string& s);

enum class TensorKind { GraphInput, GraphOutput, Intermediate };
const char* to_string(TensorKind k);
TensorKind tensor_kind_from_string(const std::string& s);

struct TensorSpec {
    std::string id;
    Index shape;  // empty while not yet inferred
    DType dtype = DType::F64;
    TensorKind kind = TensorKind::Intermediate;

    int64_t elems() const { return shape.empty() ? 0 : volume(shape); }
    int64_t bytes() const { return elems() * dtype_size(dtype); }
};

enum class OpKind {
    MatMul, Add, Mul, SiLU,
    Transpose, Reshape, Split, Concat, Slice, Unsqueeze, Expand, ScatterND,
};
const char* to_string(OpKind k);
OpKind op_kind_from_string(const std::string& s);

struct NoAttrs {};
struct TransposeAttrs { Index perm; };
struct ReshapeAttrs { Index shape; };
struct SplitAttrs { int64_t axis = 0; Index sizes; };
struct ConcatAttrs { int64_t axis = 0; };
struct SliceAttrs { Index axes, starts, ends; };
struct UnsqueezeAttrs { int64_t axis = 0; };
struct ExpandAttrs { Index shape; };
struct ScatterNDAttrs { std::vector<Index> indices; };  // static index tuples

using OpAttrs = std::variant<NoAttrs, TransposeAttrs, ReshapeAttrs, SplitAttrs, ConcatAttrs,
                             SliceAttrs, UnsqueezeAttrs, ExpandAttrs, ScatterNDAttrs>;

struct OpNode {
    std::string id;
    OpKind kind = OpKind::Add;
    OpAttrs attrs;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
};

// True iff every output element copies exactly one input element under a
// statically known map (no arithmetic).
bool is_data_movement(OpKind k);
bool is_data_movement(const OpNode& node);

class CompGraph {
public:
    void add_tensor(TensorSpec t);
    void add_node(OpNode n);

    // Validates structure (unique ids, referenced tensors exist, single
    // producer, acyclicity) and caches the topological order.
    void finalize();

    const std::vector<TensorSpec>& tensors() const { return tensors_; }
    const std::vector<OpNode>& nodes() const { return nodes_; }
    const std::vector<int>& topo_order() const { return topo_; }

    bool has_tensor(const std::string& id) const { return tindex_.count(id) > 0; }
    const TensorSpec& tensor(const std::string& id) const;
    TensorSpec& tensor(const std::string& id);
    const OpNode* producer(const std::string& tensor_id) const;
    std::vector<const OpNode*> consumers(const std::string& tensor_id) const;

    std::vector<std::string> graph_inputs() const;
    std::vector<std::string> graph_outputs() const;
    // Tensors no node consumes (graph outputs and dangling intermediates).
    std::vector<std::string> sink_tensors() const;

private:
    std::vector<TensorSpec> tensors_;
    std::vector<OpNode> nodes_;
    std::unordered_map<std::string, size_t> tindex_;
    std::unordered_map<std::string, size_t> nindex_;
    std::unordered_map<std::string, int> producer_;
    std::unordered_map<std::string, std::vector<int>> consumers_;
    std::vector<int> topo_;
};

// Output shapes implied by the operator's semantics on the given input shapes.
std::vector<Index> infer_output_shapes(const OpNode& node, const std::vector<Index>& in_shapes);

// Fills/checks every tensor shape along the topological order; idempotent.
CompGraph infer_shapes(CompGraph g);

CompGraph parse_graph(const std::string& json_text);
std::string serialize_graph(const CompGraph& g);

}  // namespace vtelim
