#include "vtelim/cost_model.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "vtelim/executor.hpp"
#include "vtelim/vt_rules.hpp"

namespace vtelim {

void MachineParams::validate() const {
    if (bandwidth <= 0 || coalesce_unit <= 0 || kernel_launch_overhead <= 0 ||
        noncoalesced_penalty < 1 || partial_penalty < 1)
        throw SchemaError("machine parameters must be positive (penalties >= 1)");
}

MachineParams MachineParams::from_json(const nlohmann::json& j) {
    MachineParams p;
    if (j.contains("bandwidth")) p.bandwidth = j.at("bandwidth").get<double>();
    if (j.contains("coalesce_unit")) p.coalesce_unit = j.at("coalesce_unit").get<int64_t>();
    if (j.contains("kernel_launch_overhead"))
        p.kernel_launch_overhead = j.at("kernel_launch_overhead").get<double>();
    if (j.contains("noncoalesced_penalty"))
        p.noncoalesced_penalty = j.at("noncoalesced_penalty").get<double>();
    if (j.contains("partial_penalty")) p.partial_penalty = j.at("partial_penalty").get<double>();
    p.validate();
    return p;
}

nlohmann::json MachineParams::to_json() const {
    return {{"bandwidth", bandwidth},
            {"coalesce_unit", coalesce_unit},
            {"kernel_launch_overhead", kernel_launch_overhead},
            {"noncoalesced_penalty", noncoalesced_penalty},
            {"partial_penalty", partial_penalty}};
}

int64_t KernelEstimate::read_bytes(const std::string& tensor) const {
    int64_t total = 0;
    for (const auto& r : reads)
        if (r.tensor == tensor) total += r.bytes;
    return total;
}

int64_t KernelEstimate::total_read_bytes() const {
    int64_t total = 0;
    for (const auto& r : reads) total += r.bytes;
    return total;
}

const KernelEstimate* TrafficEstimate::kernel(const std::string& node) const {
    for (const auto& k : kernels)
        if (k.node == node) return &k;
    return nullptr;
}

nlohmann::json TrafficEstimate::to_json() const {
    nlohmann::json ks = nlohmann::json::array();
    for (const auto& k : kernels) {
        nlohmann::json reads = nlohmann::json::array(), writes = nlohmann::json::array();
        for (const auto& r : k.reads)
            reads.push_back({{"tensor", r.tensor}, {"bytes", r.bytes}, {"factor", r.bandwidth_factor}});
        for (const auto& w : k.writes)
            writes.push_back({{"tensor", w.tensor}, {"bytes", w.bytes}, {"factor", w.bandwidth_factor}});
        ks.push_back({{"node", k.node},
                      {"data_movement", k.data_movement},
                      {"reads", reads},
                      {"writes", writes},
                      {"time", k.time}});
    }
    return {{"kernels", ks},
            {"total_time", total_time},
            {"data_movement_kernels", data_movement_kernels},
            {"compute_kernels", compute_kernels}};
}

double bandwidth_factor(const IndexMap& m, int64_t elem_size, const MachineParams& params) {
    switch (m.contiguity(elem_size, params.coalesce_unit).cls) {
        case ContiguityClass::FullyContiguous: return 1.0;
        case ContiguityClass::PartiallyContiguous: return 1.0 / params.partial_penalty;
        case ContiguityClass::NonContiguous: return 1.0 / params.noncoalesced_penalty;
    }
    return 1.0;
}

namespace {

// Lookup that hands compose() base maps for virtual tensors only.
std::function<const IndexMap*(const std::string&)> virtual_lookup(
    const CompGraph& g, const std::map<std::string, IndexMap>& resolved) {
    return [&g, &resolved](const std::string& t) -> const IndexMap* {
        auto it = resolved.find(t);
        if (it == resolved.end()) return nullptr;
        const IndexMap& m = it->second;
        if (m.pieces().size() == 1 && m.pieces()[0].target == t) return nullptr;  // root
        return &m;
    };
}

// Gather map restricted to pieces reading one input, composed onto roots.
IndexMap input_flow_map(const CompGraph& g, const OpNode& n, const std::string& output,
                        const std::string& input, const std::map<std::string, IndexMap>& resolved) {
    IndexMap full = gather_map(n, output, g);
    std::vector<AffinePiece> pieces;
    for (const auto& p : full.pieces())
        if (p.target == input) pieces.push_back(p);
    IndexMap restricted(full.virtual_shape(), std::move(pieces));
    return restricted.compose(virtual_lookup(g, resolved));
}

}  // namespace

TrafficEstimate estimate(const CompGraph& g, const PointsToGraph& ptg,
                         const MachineParams& params) {
    params.validate();
    TrafficEstimate est;
    std::set<std::string> elim(ptg.eliminated_ops.begin(), ptg.eliminated_ops.end());

    for (int ni : g.topo_order()) {
        const OpNode& n = g.nodes()[ni];
        bool dm = is_data_movement(n);
        if (dm && elim.count(n.id)) continue;  // no kernel scheduled

        KernelEstimate k;
        k.node = n.id;
        k.data_movement = dm;

        if (!dm) {
            // Stage 1: every operand map, unique physical bytes.
            for (const auto& in : n.inputs) {
                const TensorSpec& t = g.tensor(in);
                const IndexMap& m = ptg.resolved.at(in);
                k.reads.push_back(
                    {in, m.unique_elems() * dtype_size(t.dtype), bandwidth_factor(m, dtype_size(t.dtype), params)});
            }
            // Stage 3: every output written in full.
            for (const auto& o : n.outputs) {
                const TensorSpec& t = g.tensor(o);
                const IndexMap& m = ptg.resolved.at(o);
                k.writes.push_back(
                    {o, t.elems() * dtype_size(t.dtype), bandwidth_factor(m, dtype_size(t.dtype), params)});
            }
        } else {
            // A data-movement kernel only touches elements whose source and
            // destination addresses differ.
            for (const auto& o : n.outputs) {
                const TensorSpec& ot = g.tensor(o);
                int64_t esize = dtype_size(ot.dtype);
                const IndexMap& out_map = ptg.resolved.at(o);
                for (const auto& in : n.inputs) {
                    IndexMap flow = input_flow_map(g, n, o, in, ptg.resolved);
                    if (flow.pieces().empty()) continue;
                    int64_t region = flow.covered_volume();
                    int64_t coincide = out_map.agree_volume(flow);
                    int64_t moved = region - coincide;
                    if (moved <= 0) continue;
                    int64_t read_elems = std::min(moved, flow.unique_elems());
                    k.reads.push_back({in, read_elems * esize, bandwidth_factor(flow, esize, params)});
                    k.writes.push_back({o, moved * esize, bandwidth_factor(out_map, esize, params)});
                }
            }
        }

        k.time = params.kernel_launch_overhead;
        for (const auto& r : k.reads) k.time += double(r.bytes) / (params.bandwidth * r.bandwidth_factor);
        for (const auto& w : k.writes) k.time += double(w.bytes) / (params.bandwidth * w.bandwidth_factor);
        est.total_time += k.time;
        (dm ? est.data_movement_kernels : est.compute_kernels) += 1;
        est.kernels.push_back(std::move(k));
    }
    return est;
}

PointsToGraph all_physical_ptg(const CompGraph& g) {
    PointsToGraph ptg;
    for (const auto& t : g.tensors()) {
        ptg.roots.push_back(t.id);
        ptg.resolved.emplace(t.id, IndexMap::identity(t.id, t.shape));
    }
    ptg.eliminated_ops = eliminated_nodes(g, ptg.resolved);
    return ptg;
}

namespace {

class AnalyticOracle final : public SavingOracle {
public:
    explicit AnalyticOracle(MachineParams params) : params_(params) { params_.validate(); }

    double evaluate(const CompGraph& g, const PointsToGraph& ptg) override {
        auto it = baseline_.find(&g);
        if (it == baseline_.end())
            it = baseline_.emplace(&g, estimate(g, all_physical_ptg(g), params_).total_time).first;
        return it->second - estimate(g, ptg, params_).total_time;
    }

private:
    MachineParams params_;
    std::unordered_map<const CompGraph*, double> baseline_;
};

class TimedOracle final : public SavingOracle {
public:
    TimedOracle(int trials, uint64_t seed) : trials_(trials), seed_(seed) {
        if (trials_ < 3) throw ExecutionError("executor-timed oracle needs at least 3 trials");
    }

    double evaluate(const CompGraph& g, const PointsToGraph& ptg) override {
        auto inputs = make_random_inputs(g, seed_);
        PointsToGraph baseline = all_physical_ptg(g);
        std::vector<double> diffs;
        for (int t = 0; t < trials_; ++t) {
            double tb = run_once(g, baseline, inputs);
            double to = run_once(g, ptg, inputs);
            diffs.push_back(tb - to);
        }
        std::sort(diffs.begin(), diffs.end());
        return diffs[diffs.size() / 2];
    }

private:
    static double run_once(const CompGraph& g, const PointsToGraph& ptg,
                           const std::map<std::string, DenseArray>& inputs) {
        auto t0 = std::chrono::steady_clock::now();
        ExecutionResult res = execute_detailed(g, ptg, inputs);
        auto t1 = std::chrono::steady_clock::now();
        (void)res;
        return std::chrono::duration<double, std::nano>(t1 - t0).count();
    }

    int trials_;
    uint64_t seed_;
};

}  // namespace

std::unique_ptr<SavingOracle> saving_oracle(const MachineParams& params) {
    return std::make_unique<AnalyticOracle>(params);
}

std::unique_ptr<SavingOracle> executor_timed_oracle(int trials, uint64_t seed) {
    return std::make_unique<TimedOracle>(trials, seed);
}

LatencyBreakdown breakdown(const TrafficEstimate& est) {
    LatencyBreakdown b;
    for (const auto& k : est.kernels) {
        if (k.data_movement) {
            b.data_movement_time += k.time;
            ++b.data_movement_kernels;
        } else {
            b.compute_time += k.time;
            ++b.compute_kernels;
        }
    }
    return b;
}

}  // namespace vtelim
