// Per-operator virtualization rules: for each data-movement operator, the
// legal (virtual tensor, base tensors) pairs together with their index maps
// and a static profitability pre-classification.

#pragma once

#include <string>
#include <vector>

#include "vtelim/graph_ir.hpp"
#include "vtelim/mapping.hpp"

namespace vtelim {

enum class VtDirection { OutputOverInput, InputOverOutput };
const char* to_string(VtDirection d);

struct VtRuleCandidate {
    std::string virtual_tensor;
    std::vector<std::string> base_tensors;
    IndexMap map;  // total over the virtual tensor's index space
    VtDirection direction = VtDirection::OutputOverInput;
    TypeClass static_class = TypeClass::TypeII;
    std::string eliminated_op;  // node id this candidate can make unnecessary
};

// All virtualization candidates the operator's semantics allow. Candidates
// whose virtual tensor is a graph input/output, or that would let a producer
// write through a non-injective map, are excluded.
std::vector<VtRuleCandidate> vt_rules(const OpNode& node, const CompGraph& g);

// The defining element map F of a data-movement operator: where each element
// of `output_id` comes from, expressed over the node's input tensors. Exists
// for every data-movement operator regardless of candidate legality.
IndexMap gather_map(const OpNode& node, const std::string& output_id, const CompGraph& g);

// Coalescing width used for the static Type I/II pre-classification.
inline constexpr int64_t kStaticCoalesceUnit = 128;

}  // namespace vtelim
