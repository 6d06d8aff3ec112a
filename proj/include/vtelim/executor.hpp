// Reference interpreter over dense arrays with virtual-tensor-aware I/O.
// Certifies numeric equivalence: arithmetic order per operator is fixed, so a
// run under any valid points-to graph is bit-identical to the all-physical run.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vtelim/graph_ir.hpp"
#include "vtelim/vtog.hpp"

namespace vtelim {

struct DenseArray {
    DType dtype = DType::F64;
    Index shape;
    std::vector<double> f64;
    std::vector<float> f32;
    std::vector<int64_t> i64;

    static DenseArray zeros(DType dtype, const Index& shape);
    int64_t elems() const { return shape.empty() ? 0 : volume(shape); }

    const void* raw() const;
    void* raw();
    int64_t raw_bytes() const { return elems() * dtype_size(dtype); }
};

bool arrays_bit_equal(const DenseArray& a, const DenseArray& b);
// Index of the first differing element, or -1 when bit-identical.
int64_t first_difference(const DenseArray& a, const DenseArray& b);
uint64_t array_digest(const DenseArray& a);

struct PhysicalStore {
    std::map<std::string, DenseArray> buffers;  // physical roots only
};

// How a rectangular region decomposes into tiles, each either covered by one
// affine piece (strided copy) or split across pieces (per-element fallback).
struct BlockAccessPlan {
    struct Block {
        Index lo, hi;
        int piece = -1;  // index into the map's pieces; -1 means split block
    };
    Index block_shape;
    std::vector<Block> blocks;

    static BlockAccessPlan make(const IndexMap& m, const Index& lo, const Index& hi,
                                const Index& block_shape);
};

// Innermost-dimension tiles of this many elements by default.
inline constexpr int64_t kDefaultBlockElems = 64;
Index default_block_shape(const Index& region_shape);

DenseArray load_virtual(const PhysicalStore& store, const IndexMap& m, const Index& lo,
                        const Index& hi, DType dtype, const Index& block_shape = {});
void store_virtual(PhysicalStore& store, const IndexMap& m, const Index& lo, const Index& hi,
                   const DenseArray& values, const Index& block_shape = {});

// Dense reference semantics of one operator; fixed accumulation order.
std::vector<DenseArray> run_operator(const OpNode& node, const std::vector<DenseArray>& operands,
                                     const CompGraph& g);

struct ExecutionResult {
    PhysicalStore store;
    std::map<std::string, IndexMap> resolved;
    std::map<std::string, DType> dtypes;
    std::vector<std::string> skipped_ops;  // eliminated, no kernel ran

    DenseArray materialize(const std::string& tensor) const;
};

ExecutionResult execute_detailed(const CompGraph& g, const PointsToGraph& ptg,
                                 const std::map<std::string, DenseArray>& inputs,
                                 const Index& block_shape = {});

// Materialized arrays for every graph output.
std::map<std::string, DenseArray> execute(const CompGraph& g, const PointsToGraph& ptg,
                                          const std::map<std::string, DenseArray>& inputs);

// Seeded uniform inputs for every graph input tensor.
std::map<std::string, DenseArray> make_random_inputs(const CompGraph& g, uint64_t seed);

// Simple binary tensor container (header: dtype, ndim, dims; payload:
// row-major little-endian values).
void save_tensor(const std::string& path, const DenseArray& a);
DenseArray load_tensor(const std::string& path);

}  // namespace vtelim
