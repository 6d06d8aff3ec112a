// Analytic memory-traffic model over the three-stage kernel structure
// (global->on-chip loads, compute, on-chip->global stores), standing in for
// hardware profiling, plus a wall-clock oracle over the reference executor.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vtelim/graph_ir.hpp"
#include "vtelim/vtog.hpp"

namespace vtelim {

struct MachineParams {
    double bandwidth = 1.0;                 // bytes per time unit
    int64_t coalesce_unit = 128;            // minimal memory transfer unit, bytes
    double kernel_launch_overhead = 5000.0; // time units per kernel
    double noncoalesced_penalty = 8.0;      // effective-bandwidth divisor
    double partial_penalty = 1.0;           // >1 turns on the conservative mode

    void validate() const;
    static MachineParams from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct OperandTraffic {
    std::string tensor;
    int64_t bytes = 0;
    double bandwidth_factor = 1.0;  // <= 1; effective bandwidth multiplier
};

struct KernelEstimate {
    std::string node;
    bool data_movement = false;
    std::vector<OperandTraffic> reads;
    std::vector<OperandTraffic> writes;
    double time = 0.0;

    int64_t read_bytes(const std::string& tensor) const;
    int64_t total_read_bytes() const;
};

struct TrafficEstimate {
    std::vector<KernelEstimate> kernels;
    double total_time = 0.0;
    int data_movement_kernels = 0;
    int compute_kernels = 0;

    const KernelEstimate* kernel(const std::string& node) const;
    nlohmann::json to_json() const;
};

// Effective-bandwidth multiplier a map's access pattern earns.
double bandwidth_factor(const IndexMap& m, int64_t elem_size, const MachineParams& params);

TrafficEstimate estimate(const CompGraph& g, const PointsToGraph& ptg, const MachineParams& params);

// The strategy with no virtual tensors at all.
PointsToGraph all_physical_ptg(const CompGraph& g);

class SavingOracle {
public:
    virtual ~SavingOracle() = default;
    // Time saved by the strategy relative to the all-physical baseline.
    virtual double evaluate(const CompGraph& g, const PointsToGraph& ptg) = 0;
};

std::unique_ptr<SavingOracle> saving_oracle(const MachineParams& params);
// Median wall-time difference over the reference executor; trials >= 3.
std::unique_ptr<SavingOracle> executor_timed_oracle(int trials, uint64_t seed = 1);

struct LatencyBreakdown {
    double data_movement_time = 0.0;
    double compute_time = 0.0;
    int data_movement_kernels = 0;
    int compute_kernels = 0;
};
LatencyBreakdown breakdown(const TrafficEstimate& est);

}  // namespace vtelim
