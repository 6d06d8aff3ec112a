#include "vtelim/vtog.hpp"

#include <algorithm>
#include <functional>

namespace vtelim {

std::vector<int> Vtog::out_edges(const std::string& node) const {
    std::vector<int> out;
    for (const auto& e : edges)
        if (e.src == node) out.push_back(e.id);
    return out;
}

bool Vtog::conflicting(int e1, int e2) const {
    if (e1 == e2) return false;
    const std::string& src = edges[e1].src;
    if (edges[e2].src != src) return false;
    auto it = conflicts.find(src);
    if (it == conflicts.end()) return false;
    auto pair = std::minmax(e1, e2);
    return it->second.count({pair.first, pair.second}) > 0;
}

const VtEdge* Vtog::find_edge(const std::string& src, const std::string& dst) const {
    for (const auto& e : edges)
        if (e.src == src && e.dst == dst) return &e;
    return nullptr;
}

Vtog build_vtog(const CompGraph& g) {
    Vtog v;
    v.graph = &g;
    for (const auto& t : g.tensors()) v.nodes.push_back(t.id);

    int candidate_idx = 0;
    for (const auto& n : g.nodes()) {
        if (!is_data_movement(n)) continue;
        for (const auto& cand : vt_rules(n, g)) {
            // Inputs and outputs of the graph must stay physical.
            const TensorSpec& vt = g.tensor(cand.virtual_tensor);
            if (vt.kind != TensorKind::Intermediate) continue;
            int64_t domain = cand.map.domain_volume();
            for (const auto& base : cand.map.targets()) {
                std::vector<AffinePiece> pieces;
                for (const auto& p : cand.map.pieces())
                    if (p.target == base) pieces.push_back(p);
                VtEdge e;
                e.id = int(v.edges.size());
                e.src = cand.virtual_tensor;
                e.dst = base;
                e.map = IndexMap(vt.shape, std::move(pieces));
                e.partial = e.map.covered_volume() < domain;
                e.direction = cand.direction;
                e.static_class = cand.static_class;
                e.eliminated_op = cand.eliminated_op;
                e.candidate = candidate_idx;
                v.edges.push_back(std::move(e));
            }
            ++candidate_idx;
        }
    }

    // Two outgoing edges of a node conflict when their joint map would send
    // some index to two different physical locations.
    for (size_t i = 0; i < v.edges.size(); ++i) {
        for (size_t j = i + 1; j < v.edges.size(); ++j) {
            const VtEdge& a = v.edges[i];
            const VtEdge& b = v.edges[j];
            if (a.src != b.src) continue;
            int64_t overlap = a.map.overlap_volume(b.map);
            bool agree = a.map.agree_volume(b.map) == overlap;
            if (overlap > 0 && !agree)
                v.conflicts[a.src].insert({int(i), int(j)});
        }
    }
    return v;
}

bool PointsToGraph::is_virtual(const std::string& tensor) const {
    return std::find(roots.begin(), roots.end(), tensor) == roots.end();
}

const IndexMap& PointsToGraph::map_of(const std::string& tensor) const {
    auto it = resolved.find(tensor);
    if (it == resolved.end()) throw SchemaError("no resolved map for tensor " + tensor);
    return it->second;
}

int64_t coinciding_volume(const CompGraph& g, const OpNode& node, const std::string& output,
                          const std::map<std::string, IndexMap>& resolved) {
    auto lookup = [&](const std::string& t) -> const IndexMap* {
        auto it = resolved.find(t);
        if (it == resolved.end()) return nullptr;
        // Roots resolve to themselves; treating them as physical ends the chain.
        const IndexMap& m = it->second;
        if (m.pieces().size() == 1 && m.pieces()[0].target == t && m.pieces()[0].offset == 0)
            return nullptr;
        return &m;
    };
    IndexMap expected = gather_map(node, output, g).compose(lookup);
    return resolved.at(output).agree_volume(expected);
}

std::vector<std::string> eliminated_nodes(const CompGraph& g,
                                          const std::map<std::string, IndexMap>& resolved) {
    std::vector<std::string> out;
    for (const auto& n : g.nodes()) {
        if (!is_data_movement(n)) continue;
        bool all = true;
        for (const auto& o : n.outputs) {
            const TensorSpec& t = g.tensor(o);
            if (coinciding_volume(g, n, o, resolved) != t.elems()) {
                all = false;
                break;
            }
        }
        if (all) out.push_back(n.id);
    }
    return out;
}

PointsToGraph validate_ptg(const Vtog& v, const std::vector<int>& selected) {
    const CompGraph& g = *v.graph;
    PointsToGraph ptg;
    ptg.selected = selected;
    std::sort(ptg.selected.begin(), ptg.selected.end());
    ptg.selected.erase(std::unique(ptg.selected.begin(), ptg.selected.end()), ptg.selected.end());

    std::map<std::string, std::vector<int>> groups;
    for (int eid : ptg.selected) {
        if (eid < 0 || eid >= int(v.edges.size()))
            throw InvalidVtogError("selected edge id out of range");
        groups[v.edges[eid].src].push_back(eid);
    }

    // Conflict-freedom and completeness of each node's merged selection.
    std::map<std::string, IndexMap> merged;
    for (const auto& [src, eids] : groups) {
        for (size_t i = 0; i < eids.size(); ++i)
            for (size_t j = i + 1; j < eids.size(); ++j)
                if (v.conflicting(eids[i], eids[j]))
                    throw ConflictViolationError("edges " + std::to_string(eids[i]) + " and " +
                                                 std::to_string(eids[j]) + " conflict at " + src);
        std::vector<const IndexMap*> parts;
        for (int eid : eids) parts.push_back(&v.edges[eid].map);
        IndexMap m = merge_maps(g.tensor(src).shape, parts);
        if (!m.is_total())
            throw IncompleteSelectionError("selection at " + src +
                                           " does not cover the whole index space");
        merged.emplace(src, std::move(m));
    }

    // A tensor may not transitively base on itself.
    std::map<std::string, int> color;  // 0 new, 1 active, 2 done
    std::vector<std::string> order;
    std::function<void(const std::string&, std::vector<std::string>&)> visit =
        [&](const std::string& t, std::vector<std::string>& stack) {
            auto it = merged.find(t);
            if (it == merged.end()) return;  // physical root
            int& c = color[t];
            if (c == 2) return;
            if (c == 1) {
                stack.push_back(t);
                throw CycleDetectedError("virtual tensors form a cycle near " + t);
            }
            c = 1;
            stack.push_back(t);
            for (const auto& base : it->second.targets()) visit(base, stack);
            stack.pop_back();
            c = 2;
            order.push_back(t);
        };
    std::vector<std::string> stack;
    for (const auto& [src, m] : merged) visit(src, stack);

    for (const auto& t : g.tensors())
        if (!merged.count(t.id)) {
            ptg.roots.push_back(t.id);
            ptg.resolved.emplace(t.id, IndexMap::identity(t.id, t.shape));
        }

    // Resolve down to physical roots in dependency order.
    for (const auto& t : order) {
        auto lookup = [&](const std::string& base) -> const IndexMap* {
            if (!merged.count(base)) return nullptr;
            auto it = ptg.resolved.find(base);
            if (it == ptg.resolved.end())
                throw MissingBaseMapError("base map for " + base + " not resolved yet");
            return &it->second;
        };
        ptg.resolved.emplace(t, merged.at(t).compose(lookup));
    }

    ptg.eliminated_ops = eliminated_nodes(g, ptg.resolved);

    // Defensive: anything a scheduled kernel writes must be one-to-one.
    std::set<std::string> elim(ptg.eliminated_ops.begin(), ptg.eliminated_ops.end());
    for (const auto& n : g.nodes()) {
        if (is_data_movement(n) && elim.count(n.id)) continue;
        for (const auto& o : n.outputs)
            if (!check_writable(ptg.resolved.at(o)))
                throw WriteAliasingError("node " + n.id + " writes " + o +
                                         " through a non-injective map");
    }
    return ptg;
}

std::vector<PointsToGraph> enumerate_ptgs(const Vtog& v, int64_t limit) {
    size_t ne = v.edges.size();
    if (limit < 0 && ne > 20)
        throw SpaceTooLargeError("VTOG has " + std::to_string(ne) +
                                 " edges; enumeration requires a limit");
    std::vector<PointsToGraph> out;
    std::vector<int> picked;

    std::function<void(size_t)> dfs = [&](size_t next) {
        if (limit >= 0 && int64_t(out.size()) >= limit) return;
        if (next == ne) {
            try {
                out.push_back(validate_ptg(v, picked));
            } catch (const Error&) {
                // invalid combination
            }
            return;
        }
        dfs(next + 1);
        // Prune on conflicts with already-picked edges at the same node.
        for (int eid : picked)
            if (v.conflicting(eid, int(next))) return;
        picked.push_back(int(next));
        dfs(next + 1);
        picked.pop_back();
    };
    dfs(0);
    return out;
}

}  // namespace vtelim
