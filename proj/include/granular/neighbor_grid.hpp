#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "granular/core.hpp"
#include "granular/rng.hpp"

namespace granular {

/// Fixed-radius neighbour search over a uniform grid with hashed cells.
///
/// Cell coordinates are hashed into a power-of-two bucket table (counting
/// sort, so each bucket is a contiguous index range). Distinct cells that
/// collide in a bucket are told apart by comparing their integer
/// coordinates. A built grid is an immutable snapshot; rebuild after
/// positions change.
class NeighborGrid {
 public:
  NeighborGrid() = default;

  NeighborGrid(std::span<const Vec3> positions, double cell_size) : cell_size_(cell_size) {
    if (!(cell_size > 0.0)) throw ParameterError("grid cell size must be positive");
    inv_cell_ = 1.0 / cell_size;
    const std::size_t n = positions.size();
    positions_.assign(positions.begin(), positions.end());
    for (std::size_t i = 0; i < n; ++i) {
      if (!is_finite(positions[i])) throw DataError("non-finite position in neighbour grid", i);
    }
    const std::size_t table = std::bit_ceil(std::max<std::size_t>(2 * n, 16));
    mask_ = table - 1;
    std::vector<Cell> cells(n);
    std::vector<std::uint32_t> bucket_of(n);
    bucket_start_.assign(table + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
      cells[i] = cell_of(positions[i]);
      bucket_of[i] = static_cast<std::uint32_t>(hash(cells[i]) & mask_);
      ++bucket_start_[bucket_of[i] + 1];
    }
    for (std::size_t b = 0; b < table; ++b) bucket_start_[b + 1] += bucket_start_[b];
    entries_.resize(n);
    entry_cell_.resize(n);
    std::vector<std::uint32_t> fill(bucket_start_.begin(), bucket_start_.end() - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t slot = fill[bucket_of[i]]++;
      entries_[slot] = static_cast<std::uint32_t>(i);
      entry_cell_[slot] = cells[i];
    }
  }

  double cell_size() const { return cell_size_; }
  std::size_t size() const { return entries_.size(); }
  std::span<const Vec3> positions() const { return positions_; }

  /// Calls fn(index, squared_distance) for every stored point with
  /// |x_i - p| <= radius. Visit order is deterministic.
  template <class Fn>
  void for_each_within(const Vec3& p, double radius, Fn&& fn) const {
    if (radius > cell_size_) {
      throw ParameterError("query radius exceeds the grid cell size");
    }
    if (entries_.empty()) return;
    const double r2 = radius * radius;
    const Cell c = cell_of(p);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const Cell q{c[0] + dx, c[1] + dy, c[2] + dz};
          const std::size_t b = hash(q) & mask_;
          for (std::uint32_t s = bucket_start_[b]; s < bucket_start_[b + 1]; ++s) {
            if (entry_cell_[s] != q) continue;
            const std::uint32_t idx = entries_[s];
            const double d2 = (positions_[idx] - p).squaredNorm();
            if (d2 <= r2) fn(idx, d2);
          }
        }
      }
    }
  }

  std::vector<std::uint32_t> query(const Vec3& p, double radius) const {
    std::vector<std::uint32_t> out;
    for_each_within(p, radius, [&](std::uint32_t i, double) { out.push_back(i); });
    return out;
  }

  /// Every stored index in bucket order; each index appears exactly once.
  std::span<const std::uint32_t> entries() const { return entries_; }

 private:
  using Cell = std::array<std::int64_t, 3>;

  // Clamped so far-away (but finite) points still get a well-defined cell.
  static std::int64_t coord(double c) {
    constexpr double lim = 0x1p62;
    return static_cast<std::int64_t>(std::clamp(std::floor(c), -lim, lim));
  }

  Cell cell_of(const Vec3& p) const {
    return {coord(p.x() * inv_cell_), coord(p.y() * inv_cell_), coord(p.z() * inv_cell_)};
  }

  static std::uint64_t hash(const Cell& c) {
    std::uint64_t h = mix64(static_cast<std::uint64_t>(c[0]));
    h = mix64(h ^ static_cast<std::uint64_t>(c[1]));
    return mix64(h ^ static_cast<std::uint64_t>(c[2]));
  }

  double cell_size_ = 1.0;
  double inv_cell_ = 1.0;
  std::size_t mask_ = 0;
  std::vector<Vec3> positions_;
  std::vector<std::uint32_t> bucket_start_;
  std::vector<std::uint32_t> entries_;
  std::vector<Cell> entry_cell_;
};

}  // namespace granular
