#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mtsmae/ndarray.hpp"

namespace mtsmae {

/// Which patch tokens the encoder sees during pretraining.
struct MaskPlan {
  std::size_t length = 0;
  std::vector<std::size_t> visible_ids;  // sorted
  std::vector<std::size_t> masked_ids;   // sorted
  double ratio = 0.0;
  std::uint64_t seed = 0;

  /// For every position, the row it takes in [encoded visible rows; mask token].
  std::vector<std::size_t> restore_index() const;
};

/// round(length * (1 - ratio)) visible tokens (at least one), drawn uniformly
/// without replacement.
std::size_t visible_count(std::size_t length, double ratio);

MaskPlan sample_mask(std::size_t length, double ratio, std::mt19937_64& rng);

/// Plan with an explicit visible set; the rest is masked.
MaskPlan make_mask_plan(std::size_t length, std::vector<std::size_t> visible_ids);

template <typename T>
NDArray<T> select_visible(const NDArray<T>& tokens, const MaskPlan& plan);

/// Full-length sequence in original order: encoded rows at visible positions,
/// the shared mask token everywhere else.
template <typename T>
NDArray<T> scatter_with_mask_tokens(const NDArray<T>& encoded, const MaskPlan& plan,
                                    const NDArray<T>& mask_token);

}  // namespace mtsmae
