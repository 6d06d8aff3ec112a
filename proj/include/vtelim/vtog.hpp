// Virtual tensor opportunity graph: every single-operator virtualization
// possibility between tensors, per-node conflict sets, and validation of
// selected strategies (points-to graphs).

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "vtelim/graph_ir.hpp"
#include "vtelim/vt_rules.hpp"

namespace vtelim {

struct VtEdge {
    int id = -1;
    std::string src;  // becomes virtual
    std::string dst;  // base tensor
    // Pieces of the candidate map that target dst; partial when the candidate
    // spans several base tensors.
    IndexMap map;
    bool partial = false;
    VtDirection direction = VtDirection::OutputOverInput;
    TypeClass static_class = TypeClass::TypeII;
    std::string eliminated_op;
    int candidate = -1;  // edges sharing a candidate form one selection group
};

struct Vtog {
    const CompGraph* graph = nullptr;
    std::vector<std::string> nodes;  // all tensor ids
    std::vector<VtEdge> edges;
    // Per source node, conflicting edge-id pairs (normalized lo<hi).
    std::map<std::string, std::set<std::pair<int, int>>> conflicts;

    std::vector<int> out_edges(const std::string& node) const;
    bool conflicting(int e1, int e2) const;
    const VtEdge* find_edge(const std::string& src, const std::string& dst) const;
};

Vtog build_vtog(const CompGraph& g);

struct PointsToGraph {
    std::vector<int> selected;  // sorted edge ids
    // Every tensor's map onto physical roots; identity for the roots.
    std::map<std::string, IndexMap> resolved;
    std::vector<std::string> roots;            // tensors that own storage
    std::vector<std::string> eliminated_ops;   // nodes with no data left to move
    bool is_virtual(const std::string& tensor) const;
    const IndexMap& map_of(const std::string& tensor) const;
};

// Checks conflict-freedom, completeness of merged selections, and acyclicity,
// then resolves every tensor's map down to physical roots and re-checks that
// all written maps stay one-to-one.
PointsToGraph validate_ptg(const Vtog& v, const std::vector<int>& selected);

// All valid points-to graphs in deterministic order (or the first `limit`).
// Unbounded enumeration is refused beyond 20 edges.
std::vector<PointsToGraph> enumerate_ptgs(const Vtog& v, int64_t limit = -1);

// Node ids whose every output already coincides with where its source data
// lives; such operators need no kernel.
std::vector<std::string> eliminated_nodes(const CompGraph& g,
                                          const std::map<std::string, IndexMap>& resolved);

// Volume of `output` whose scattered location equals the location of the
// element it copies from; total movement is elems - coinciding.
int64_t coinciding_volume(const CompGraph& g, const OpNode& node, const std::string& output,
                          const std::map<std::string, IndexMap>& resolved);

}  // namespace vtelim
