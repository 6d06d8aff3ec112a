// Piecewise-affine index maps: the representation behind virtual tensors.
//
// An IndexMap sends each index of an n-d virtual space to a (physical tensor,
// linear element offset) pair. Each AffinePiece covers an axis-aligned box of
// the virtual space and is affine inside it: offset = strides . I + bias.
// Non-constant bias terms (e.g. the modular term of a tiled broadcast) are
// realized by partitioning the space into pieces with distinct constant biases.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vtelim/errors.hpp"

namespace vtelim {

using Index = std::vector<int64_t>;

// Suffix products of a shape: the default row-major stride vector.
Index default_strides(const Index& shape);
int64_t volume(const Index& shape);
Index unflatten(int64_t flat, const Index& shape);
int64_t flatten(std::span<const int64_t> idx, const Index& shape);

struct AffinePiece {
    Index lo;              // inclusive lower corner
    Index hi;              // exclusive upper corner
    Index strides;         // element strides into the target
    int64_t offset = 0;    // constant bias (elements)
    std::string target;    // physical (or base) tensor id

    int64_t box_volume() const;
    bool contains(std::span<const int64_t> idx) const;
    int64_t eval(std::span<const int64_t> idx) const;
};

enum class ContiguityClass { FullyContiguous, PartiallyContiguous, NonContiguous };
enum class TypeClass { TypeI, TypeII };

struct ContiguityReport {
    int min_contiguous_dim = 1;        // 1-based; n+1 when no suffix dims align
    int64_t contiguous_run_elems = 0;  // shortest contiguous run in index order
    ContiguityClass cls = ContiguityClass::NonContiguous;
    TypeClass type_class = TypeClass::TypeII;
};

const char* to_string(ContiguityClass c);
const char* to_string(TypeClass t);

class IndexMap {
public:
    IndexMap() = default;
    IndexMap(Index virtual_shape, std::vector<AffinePiece> pieces);

    static IndexMap identity(const std::string& target, const Index& shape);

    const Index& virtual_shape() const { return shape_; }
    const std::vector<AffinePiece>& pieces() const { return pieces_; }
    int64_t domain_volume() const { return volume(shape_); }

    // Sorted unique base tensor ids referenced by the pieces.
    std::vector<std::string> targets() const;

    // Total lookup; throws OutOfBoundsError outside the virtual shape.
    std::pair<std::string, int64_t> eval(std::span<const int64_t> idx) const;
    const AffinePiece* find_piece(std::span<const int64_t> idx) const;

    // Domain coverage. Pieces are required to be pairwise disjoint; a map is
    // total when their volumes sum to the full space.
    int64_t covered_volume() const;
    bool is_total() const;
    bool has_overlap() const;
    // True when no index maps to two distinct addresses (overlapping pieces
    // must agree exactly).
    bool single_valued() const;

    // One-to-one onto physical addresses; required before writing through the
    // map. Analytic per-piece/per-pair reasoning with an exhaustive fallback
    // for domains up to `exhaustive_limit` elements.
    bool injective(int64_t exhaustive_limit = int64_t(1) << 20) const;

    // Exact count of distinct physical elements the map can touch.
    int64_t unique_elems() const;

    ContiguityReport contiguity(int64_t elem_size, int64_t coalesce_unit) const;

    // Flattens this map over base maps: any piece targeting a tensor for which
    // `base` returns a map is rewritten to the base map's targets. Piece count
    // above `piece_cap` aborts with ComposeLimitError.
    IndexMap compose(const std::function<const IndexMap*(const std::string&)>& base,
                     int piece_cap = kDefaultPieceCap) const;

    // Volume of the subdomain on which the two (total, same-shape) maps agree.
    int64_t agree_volume(const IndexMap& other) const;
    // Volume of the subdomain both maps cover, agreeing or not.
    int64_t overlap_volume(const IndexMap& other) const;
    bool equivalent(const IndexMap& other) const;

    // Merges adjacent pieces with identical affine data; sorts pieces.
    void normalize();

    nlohmann::json to_json() const;
    static IndexMap from_json(const nlohmann::json& j);

    static constexpr int kDefaultPieceCap = 4096;

private:
    Index shape_;
    std::vector<AffinePiece> pieces_;
};

// Spec-facing alias: true iff the map may back a written virtual tensor.
inline bool check_writable(const IndexMap& m) { return m.injective(); }

// Merge several (possibly partial) maps over the same virtual space into one.
// Throws ConflictViolationError when two pieces overlap.
IndexMap merge_maps(const Index& shape, const std::vector<const IndexMap*>& parts);

}  // namespace vtelim
