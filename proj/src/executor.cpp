#include "vtelim/executor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

namespace vtelim {

namespace {

template <class T>
std::vector<T>& vec_of(DenseArray& a);
template <>
std::vector<double>& vec_of<double>(DenseArray& a) { return a.f64; }
template <>
std::vector<float>& vec_of<float>(DenseArray& a) { return a.f32; }
template <>
std::vector<int64_t>& vec_of<int64_t>(DenseArray& a) { return a.i64; }

template <class T>
const std::vector<T>& vec_of(const DenseArray& a) {
    return vec_of<T>(const_cast<DenseArray&>(a));
}

template <class F>
decltype(auto) dispatch(DType d, F&& f) {
    switch (d) {
        case DType::F64: return f(double{});
        case DType::F32: return f(float{});
        case DType::I64: return f(int64_t{});
    }
    throw ExecutionError("unknown dtype");
}

void region_for_each(const Index& lo, const Index& hi, const std::function<void(const Index&)>& fn) {
    Index idx = lo;
    while (true) {
        fn(idx);
        int i = int(idx.size()) - 1;
        for (; i >= 0; --i) {
            if (++idx[i] < hi[i]) break;
            idx[i] = lo[i];
        }
        if (i < 0) break;
    }
}

}  // namespace

DenseArray DenseArray::zeros(DType dtype, const Index& shape) {
    DenseArray a;
    a.dtype = dtype;
    a.shape = shape;
    dispatch(dtype, [&](auto tag) { vec_of<decltype(tag)>(a).assign(size_t(volume(shape)), {}); });
    return a;
}

const void* DenseArray::raw() const {
    switch (dtype) {
        case DType::F64: return f64.data();
        case DType::F32: return f32.data();
        case DType::I64: return i64.data();
    }
    return nullptr;
}

void* DenseArray::raw() { return const_cast<void*>(std::as_const(*this).raw()); }

bool arrays_bit_equal(const DenseArray& a, const DenseArray& b) {
    return first_difference(a, b) < 0;
}

int64_t first_difference(const DenseArray& a, const DenseArray& b) {
    if (a.dtype != b.dtype || a.shape != b.shape) return 0;
    int64_t es = dtype_size(a.dtype);
    const char* pa = static_cast<const char*>(a.raw());
    const char* pb = static_cast<const char*>(b.raw());
    for (int64_t i = 0; i < a.elems(); ++i)
        if (std::memcmp(pa + i * es, pb + i * es, size_t(es)) != 0) return i;
    return -1;
}

uint64_t array_digest(const DenseArray& a) {
    const unsigned char* p = static_cast<const unsigned char*>(a.raw());
    uint64_t h = 1469598103934665603ull;
    for (int64_t i = 0; i < a.raw_bytes(); ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

Index default_block_shape(const Index& region_shape) {
    Index b(region_shape.size(), 1);
    if (!b.empty()) b.back() = kDefaultBlockElems;
    return b;
}

BlockAccessPlan BlockAccessPlan::make(const IndexMap& m, const Index& lo, const Index& hi,
                                      const Index& block_shape) {
    BlockAccessPlan plan;
    plan.block_shape = block_shape;
    size_t n = lo.size();
    Index cursor = lo;
    while (true) {
        Block b;
        b.lo = cursor;
        b.hi.resize(n);
        for (size_t i = 0; i < n; ++i) b.hi[i] = std::min(hi[i], cursor[i] + block_shape[i]);
        // One piece containing both corners and every corner between covers
        // the block iff the box lies inside the piece's region.
        b.piece = -1;
        for (size_t pi = 0; pi < m.pieces().size(); ++pi) {
            const AffinePiece& p = m.pieces()[pi];
            bool inside = true;
            for (size_t i = 0; i < n; ++i)
                if (b.lo[i] < p.lo[i] || b.hi[i] > p.hi[i]) { inside = false; break; }
            if (inside) {
                b.piece = int(pi);
                break;
            }
        }
        plan.blocks.push_back(std::move(b));
        // Advance the block cursor over the region grid.
        int i = int(n) - 1;
        for (; i >= 0; --i) {
            cursor[i] += block_shape[i];
            if (cursor[i] < hi[i]) break;
            cursor[i] = lo[i];
        }
        if (i < 0) break;
    }
    return plan;
}

namespace {

const DenseArray& target_buffer(const PhysicalStore& store, const std::string& id) {
    auto it = store.buffers.find(id);
    if (it == store.buffers.end())
        throw ExecutionError("physical buffer missing for tensor " + id);
    return it->second;
}

}  // namespace

DenseArray load_virtual(const PhysicalStore& store, const IndexMap& m, const Index& lo,
                        const Index& hi, DType dtype, const Index& block_shape) {
    Index region_shape(lo.size());
    for (size_t i = 0; i < lo.size(); ++i) {
        if (lo[i] < 0 || hi[i] > m.virtual_shape()[i] || lo[i] >= hi[i])
            throw OutOfBoundsError("load region outside virtual shape");
        region_shape[i] = hi[i] - lo[i];
    }
    Index bs = block_shape.empty() ? default_block_shape(region_shape) : block_shape;
    DenseArray out = DenseArray::zeros(dtype, region_shape);
    BlockAccessPlan plan = BlockAccessPlan::make(m, lo, hi, bs);
    dispatch(dtype, [&](auto tag) {
        using T = decltype(tag);
        auto& dst = vec_of<T>(out);
        for (const auto& blk : plan.blocks) {
            if (blk.piece >= 0) {
                const AffinePiece& p = m.pieces()[blk.piece];
                const auto& src = vec_of<T>(target_buffer(store, p.target));
                region_for_each(blk.lo, blk.hi, [&](const Index& idx) {
                    int64_t di = 0;
                    for (size_t i = 0; i < idx.size(); ++i)
                        di = di * region_shape[i] + (idx[i] - lo[i]);
                    dst[size_t(di)] = src[size_t(p.eval(idx))];
                });
            } else {
                region_for_each(blk.lo, blk.hi, [&](const Index& idx) {
                    const AffinePiece* p = m.find_piece(idx);
                    if (!p) throw OutOfBoundsError("index not covered by any piece");
                    const auto& src = vec_of<T>(target_buffer(store, p->target));
                    int64_t di = 0;
                    for (size_t i = 0; i < idx.size(); ++i)
                        di = di * region_shape[i] + (idx[i] - lo[i]);
                    dst[size_t(di)] = src[size_t(p->eval(idx))];
                });
            }
        }
    });
    return out;
}

void store_virtual(PhysicalStore& store, const IndexMap& m, const Index& lo, const Index& hi,
                   const DenseArray& values, const Index& block_shape) {
    Index region_shape(lo.size());
    for (size_t i = 0; i < lo.size(); ++i) {
        if (lo[i] < 0 || hi[i] > m.virtual_shape()[i] || lo[i] >= hi[i])
            throw OutOfBoundsError("store region outside virtual shape");
        region_shape[i] = hi[i] - lo[i];
    }
    if (values.shape != region_shape) throw ShapeMismatchError("store_virtual value shape mismatch");
    Index bs = block_shape.empty() ? default_block_shape(region_shape) : block_shape;
    BlockAccessPlan plan = BlockAccessPlan::make(m, lo, hi, bs);
    dispatch(values.dtype, [&](auto tag) {
        using T = decltype(tag);
        const auto& src = vec_of<T>(values);
        for (const auto& blk : plan.blocks) {
            region_for_each(blk.lo, blk.hi, [&](const Index& idx) {
                const AffinePiece* p =
                    blk.piece >= 0 ? &m.pieces()[blk.piece] : m.find_piece(idx);
                if (!p) throw OutOfBoundsError("index not covered by any piece");
                auto it = store.buffers.find(p->target);
                if (it == store.buffers.end())
                    throw ExecutionError("physical buffer missing for tensor " + p->target);
                auto& dst = vec_of<T>(it->second);
                int64_t si = 0;
                for (size_t i = 0; i < idx.size(); ++i)
                    si = si * region_shape[i] + (idx[i] - lo[i]);
                dst[size_t(p->eval(idx))] = src[size_t(si)];
            });
        }
    });
}

namespace {

template <class T>
T silu(T x) {
    return T(double(x) / (1.0 + std::exp(-double(x))));
}

template <class T>
void matmul_kernel(const DenseArray& a, const DenseArray& b, DenseArray& c) {
    size_t r = a.shape.size();
    int64_t m = a.shape[r - 2], k = a.shape[r - 1], n = b.shape[r - 1];
    int64_t batches = 1;
    for (size_t i = 0; i + 2 < r; ++i) batches *= a.shape[i];
    const auto& av = vec_of<T>(a);
    const auto& bv = vec_of<T>(b);
    auto& cv = vec_of<T>(c);
    for (int64_t bi = 0; bi < batches; ++bi) {
        const T* ap = av.data() + bi * m * k;
        const T* bp = bv.data() + bi * k * n;
        T* cp = cv.data() + bi * m * n;
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) {
                T acc{};
                for (int64_t kk = 0; kk < k; ++kk) acc += ap[i * k + kk] * bp[kk * n + j];
                cp[i * n + j] = acc;
            }
    }
}

}  // namespace

std::vector<DenseArray> run_operator(const OpNode& n, const std::vector<DenseArray>& operands,
                                     const CompGraph& g) {
    std::vector<Index> in_shapes;
    for (const auto& a : operands) in_shapes.push_back(a.shape);
    std::vector<Index> out_shapes = infer_output_shapes(n, in_shapes);
    DType dtype = operands.empty() ? DType::F64 : operands[0].dtype;
    std::vector<DenseArray> outs;
    for (const auto& s : out_shapes) outs.push_back(DenseArray::zeros(dtype, s));

    switch (n.kind) {
        case OpKind::MatMul:
            dispatch(dtype, [&](auto tag) {
                matmul_kernel<decltype(tag)>(operands[0], operands[1], outs[0]);
            });
            break;
        case OpKind::Add:
        case OpKind::Mul:
            dispatch(dtype, [&](auto tag) {
                using T = decltype(tag);
                const auto& x = vec_of<T>(operands[0]);
                const auto& y = vec_of<T>(operands[1]);
                auto& z = vec_of<T>(outs[0]);
                if (n.kind == OpKind::Add)
                    for (size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
                else
                    for (size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
            });
            break;
        case OpKind::SiLU:
            if (dtype == DType::I64) throw ExecutionError("SiLU is undefined for i64");
            dispatch(dtype, [&](auto tag) {
                using T = decltype(tag);
                if constexpr (!std::is_same_v<T, int64_t>) {
                    const auto& x = vec_of<T>(operands[0]);
                    auto& z = vec_of<T>(outs[0]);
                    for (size_t i = 0; i < z.size(); ++i) z[i] = silu(x[i]);
                }
            });
            break;
        case OpKind::Transpose: {
            const auto& a = std::get<TransposeAttrs>(n.attrs);
            const Index& os = outs[0].shape;
            Index in_strides = default_strides(operands[0].shape);
            Index out_strides = default_strides(os);
            dispatch(dtype, [&](auto tag) {
                using T = decltype(tag);
                const auto& x = vec_of<T>(operands[0]);
                auto& z = vec_of<T>(outs[0]);
                region_for_each(Index(os.size(), 0), os, [&](const Index& xi) {
                    int64_t src = 0, dst = 0;
                    for (size_t i = 0; i < os.size(); ++i) {
                        src += in_strides[a.perm[i]] * xi[i];
                        dst += out_strides[i] * xi[i];
                    }
                    z[size_t(dst)] = x[size_t(src)];
                });
            });
            break;
        }
        case OpKind::Reshape:
        case OpKind::Unsqueeze:
            dispatch(dtype, [&](auto tag) {
                using T = decltype(tag);
                vec_of<T>(outs[0]) = vec_of<T>(operands[0]);
            });
            break;
        case OpKind::Split: {
            const auto& a = std::get<SplitAttrs>(n.attrs);
            Index in_strides = default_strides(operands[0].shape);
            int64_t prior = 0;
            for (size_t oi = 0; oi < outs.size(); ++oi) {
                const Index& os = outs[oi].shape;
                Index out_strides = default_strides(os);
                int64_t base = prior * in_strides[a.axis];
                dispatch(dtype, [&](auto tag) {
                    using T = decltype(tag);
                    const auto& x = vec_of<T>(operands[0]);
                    auto& z = vec_of<T>(outs[oi]);
                    region_for_each(Index(os.size(), 0), os, [&](const Index& xi) {
                        int64_t src = base, dst = 0;
                        for (size_t i = 0; i < os.size(); ++i) {
                            src += in_strides[i] * xi[i];
                            dst += out_strides[i] * xi[i];
                        }
                        z[size_t(dst)] = x[size_t(src)];
                    });
                });
                prior += a.sizes[oi];
            }
            break;
        }
        case OpKind::Concat: {
            const auto& a = std::get<ConcatAttrs>(n.attrs);
            const Index& os = outs[0].shape;
            Index out_strides = default_strides(os);
            int64_t prior = 0;
            for (size_t ii = 0; ii < operands.size(); ++ii) {
                const Index& is = operands[ii].shape;
                Index in_strides = default_strides(is);
                int64_t base = prior * out_strides[a.axis];
                dispatch(dtype, [&](auto tag) {
                    using T = decltype(tag);
                    const auto& x = vec_of<T>(operands[ii]);
                    auto& z = vec_of<T>(outs[0]);
                    region_for_each(Index(is.size(), 0), is, [&](const Index& xi) {
                        int64_t src = 0, dst = base;
                        for (size_t i = 0; i < is.size(); ++i) {
                            src += in_strides[i] * xi[i];
                            dst += out_strides[i] * xi[i];
                        }
                        z[size_t(dst)] = x[size_t(src)];
                    });
                });
                prior += is[a.axis];
            }
            break;
        }
        case OpKind::Slice: {
            const auto& a = std::get<SliceAttrs>(n.attrs);
            const Index& os = outs[0].shape;
            Index in_strides = default_strides(operands[0].shape);
            Index out_strides = default_strides(os);
            Index start(os.size(), 0);
            for (size_t i = 0; i < a.axes.size(); ++i) start[a.axes[i]] = a.starts[i];
            dispatch(dtype, [&](auto tag) {
                using T = decltype(tag);
                const auto& x = vec_of<T>(operands[0]);
                auto& z = vec_of<T>(outs[0]);
                region_for_each(Index(os.size(), 0), os, [&](const Index& xi) {
                    int64_t src = 0, dst = 0;
                    for (size_t i = 0; i < os.size(); ++i) {
                        src += in_strides[i] * (xi[i] + start[i]);
                        dst += out_strides[i] * xi[i];
                    }
                    z[size_t(dst)] = x[size_t(src)];
                });
            });
            break;
        }
        case OpKind::Expand: {
            const Index& os = outs[0].shape;
            const Index& is = operands[0].shape;
            Index in_strides = default_strides(is);
            Index out_strides = default_strides(os);
            dispatch(dtype, [&](auto tag) {
                using T = decltype(tag);
                const auto& x = vec_of<T>(operands[0]);
                auto& z = vec_of<T>(outs[0]);
                region_for_each(Index(os.size(), 0), os, [&](const Index& xi) {
                    int64_t src = 0, dst = 0;
                    for (size_t i = 0; i < os.size(); ++i) {
                        src += in_strides[i] * (xi[i] % is[i]);
                        dst += out_strides[i] * xi[i];
                    }
                    z[size_t(dst)] = x[size_t(src)];
                });
            });
            break;
        }
        case OpKind::ScatterND: {
            const auto& a = std::get<ScatterNDAttrs>(n.attrs);
            const Index& ds = operands[0].shape;
            size_t k = a.indices[0].size();
            Index data_strides = default_strides(ds);
            int64_t trail = 1;
            for (size_t i = k; i < ds.size(); ++i) trail *= ds[i];
            dispatch(dtype, [&](auto tag) {
                using T = decltype(tag);
                auto& z = vec_of<T>(outs[0]);
                z = vec_of<T>(operands[0]);  // clone of the data tensor
                const auto& u = vec_of<T>(operands[1]);
                for (size_t m = 0; m < a.indices.size(); ++m) {
                    int64_t base = 0;
                    for (size_t d = 0; d < k; ++d) base += a.indices[m][d] * data_strides[d];
                    for (int64_t t = 0; t < trail; ++t)
                        z[size_t(base + t)] = u[size_t(int64_t(m) * trail + t)];
                }
            });
            break;
        }
    }
    return outs;
}

namespace {

Index full_lo(const Index& shape) { return Index(shape.size(), 0); }

}  // namespace

DenseArray ExecutionResult::materialize(const std::string& tensor) const {
    const IndexMap& m = resolved.at(tensor);
    return load_virtual(store, m, full_lo(m.virtual_shape()), m.virtual_shape(), dtypes.at(tensor));
}

ExecutionResult execute_detailed(const CompGraph& g, const PointsToGraph& ptg,
                                 const std::map<std::string, DenseArray>& inputs,
                                 const Index& block_shape) {
    ExecutionResult res;
    res.resolved = ptg.resolved;
    for (const auto& t : g.tensors()) res.dtypes[t.id] = t.dtype;

    for (const auto& id : g.graph_inputs()) {
        auto it = inputs.find(id);
        if (it == inputs.end()) throw MissingInputError("input tensor " + id + " not provided");
        const TensorSpec& spec = g.tensor(id);
        if (it->second.shape != spec.shape || it->second.dtype != spec.dtype)
            throw ShapeMismatchError("input tensor " + id + " shape or dtype mismatch");
    }

    // Physical roots own buffers; everything else resolves into them.
    for (const auto& id : ptg.roots)
        res.store.buffers.emplace(id, DenseArray::zeros(g.tensor(id).dtype, g.tensor(id).shape));
    for (const auto& id : g.graph_inputs()) res.store.buffers[id] = inputs.at(id);

    std::set<std::string> elim(ptg.eliminated_ops.begin(), ptg.eliminated_ops.end());
    // Defensive re-check: scheduled writes must stay one-to-one.
    for (const auto& n : g.nodes()) {
        if (is_data_movement(n) && elim.count(n.id)) continue;
        for (const auto& o : n.outputs)
            if (!check_writable(ptg.resolved.at(o)))
                throw WriteAliasingError("node " + n.id + " would write " + o +
                                         " through an aliasing map");
    }

    for (int ni : g.topo_order()) {
        const OpNode& n = g.nodes()[ni];
        if (is_data_movement(n) && elim.count(n.id)) {
            res.skipped_ops.push_back(n.id);
            continue;
        }
        std::vector<DenseArray> operands;
        for (const auto& in : n.inputs) {
            const IndexMap& m = ptg.resolved.at(in);
            operands.push_back(load_virtual(res.store, m, full_lo(m.virtual_shape()),
                                            m.virtual_shape(), g.tensor(in).dtype, block_shape));
        }
        std::vector<DenseArray> outs = run_operator(n, operands, g);
        for (size_t i = 0; i < n.outputs.size(); ++i) {
            const IndexMap& m = ptg.resolved.at(n.outputs[i]);
            store_virtual(res.store, m, full_lo(m.virtual_shape()), m.virtual_shape(), outs[i],
                          block_shape);
        }
    }
    return res;
}

std::map<std::string, DenseArray> execute(const CompGraph& g, const PointsToGraph& ptg,
                                          const std::map<std::string, DenseArray>& inputs) {
    ExecutionResult res = execute_detailed(g, ptg, inputs);
    std::map<std::string, DenseArray> out;
    for (const auto& id : g.graph_outputs()) out.emplace(id, res.materialize(id));
    return out;
}

std::map<std::string, DenseArray> make_random_inputs(const CompGraph& g, uint64_t seed) {
    std::map<std::string, DenseArray> out;
    std::mt19937_64 rng(seed);
    for (const auto& id : g.graph_inputs()) {
        const TensorSpec& t = g.tensor(id);
        DenseArray a = DenseArray::zeros(t.dtype, t.shape);
        std::uniform_real_distribution<double> real(-1.0, 1.0);
        std::uniform_int_distribution<int64_t> ints(-8, 8);
        dispatch(t.dtype, [&](auto tag) {
            using T = decltype(tag);
            for (auto& x : vec_of<T>(a)) {
                if constexpr (std::is_same_v<T, int64_t>)
                    x = ints(rng);
                else
                    x = T(real(rng));
            }
        });
        out.emplace(id, std::move(a));
    }
    return out;
}

void save_tensor(const std::string& path, const DenseArray& a) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ExecutionError("cannot open " + path + " for writing");
    f.write("VTT1", 4);
    uint8_t code = a.dtype == DType::F64 ? 0 : a.dtype == DType::F32 ? 1 : 2;
    f.put(char(code));
    uint32_t ndim = uint32_t(a.shape.size());
    f.write(reinterpret_cast<const char*>(&ndim), 4);
    for (int64_t d : a.shape) f.write(reinterpret_cast<const char*>(&d), 8);
    f.write(static_cast<const char*>(a.raw()), a.raw_bytes());
}

DenseArray load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ExecutionError("cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (std::memcmp(magic, "VTT1", 4) != 0) throw ExecutionError(path + ": bad magic");
    uint8_t code = uint8_t(f.get());
    DType dtype = code == 0 ? DType::F64 : code == 1 ? DType::F32 : DType::I64;
    uint32_t ndim = 0;
    f.read(reinterpret_cast<char*>(&ndim), 4);
    Index shape(ndim);
    for (auto& d : shape) f.read(reinterpret_cast<char*>(&d), 8);
    DenseArray a = DenseArray::zeros(dtype, shape);
    f.read(static_cast<char*>(a.raw()), a.raw_bytes());
    if (!f) throw ExecutionError(path + ": truncated tensor file");
    return a;
}

}  // namespace vtelim
