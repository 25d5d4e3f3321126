#include "mtsmae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mtsmae/error.hpp"

namespace mtsmae {

std::size_t visible_count(std::size_t length, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw Error(ErrorKind::Config, fmt::format("mask ratio {} outside [0, 1)", ratio));
  }
  if (length == 0) throw Error(ErrorKind::Config, "mask: token count must be >= 1");
  const auto keep = static_cast<std::size_t>(std::llround(static_cast<double>(length) * (1.0 - ratio)));
  return std::clamp<std::size_t>(keep, 1, length);
}

MaskPlan sample_mask(std::size_t length, double ratio, std::mt19937_64& rng) {
  const std::size_t keep = visible_count(length, ratio);
  // Record the generator position so a plan can be traced back to its draw.
  std::mt19937_64 probe = rng;
  const std::uint64_t seed = probe();

  std::vector<std::size_t> order(length);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Partial Fisher-Yates: the first `keep` slots form a uniform subset.
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, length - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  MaskPlan plan = make_mask_plan(length, {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep)});
  plan.ratio = ratio;
  plan.seed = seed;
  return plan;
}

MaskPlan make_mask_plan(std::size_t length, std::vector<std::size_t> visible_ids) {
  std::sort(visible_ids.begin(), visible_ids.end());
  if (visible_ids.empty() || std::adjacent_find(visible_ids.begin(), visible_ids.end()) != visible_ids.end() ||
      visible_ids.back() >= length) {
    throw Error(ErrorKind::Config,
                fmt::format("mask plan: visible ids must be distinct, non-empty and < {}", length));
  }
  MaskPlan plan;
  plan.length = length;
  std::vector<bool> seen(length, false);
  for (auto id : visible_ids) seen[id] = true;
  for (std::size_t i = 0; i < length; ++i) {
    if (!seen[i]) plan.masked_ids.push_back(i);
  }
  plan.ratio = static_cast<double>(plan.masked_ids.size()) / static_cast<double>(length);
  plan.visible_ids = std::move(visible_ids);
  return plan;
}

std::vector<std::size_t> MaskPlan::restore_index() const {
  std::vector<std::size_t> index(length, visible_ids.size());
  for (std::size_t k = 0; k < visible_ids.size(); ++k) index[visible_ids[k]] = k;
  return index;
}

template <typename T>
NDArray<T> select_visible(const NDArray<T>& tokens, const MaskPlan& plan) {
  if (tokens.rank() != 2 || tokens.dim(0) != plan.length) {
    throw Error(ErrorKind::Dimension,
                fmt::format("select_visible: tokens {} vs mask plan of length {}",
                            shape_to_string(tokens.shape()), plan.length));
  }
  return gather_rows(tokens, std::span<const std::size_t>(plan.visible_ids));
}

template <typename T>
NDArray<T> scatter_with_mask_tokens(const NDArray<T>& encoded, const MaskPlan& plan,
                                    const NDArray<T>& mask_token) {
  if (encoded.rank() != 2 || encoded.dim(0) != plan.visible_ids.size()) {
    throw Error(ErrorKind::Dimension,
                fmt::format("scatter: {} encoded rows for {} visible ids",
                            encoded.rank() == 2 ? encoded.dim(0) : 0, plan.visible_ids.size()));
  }
  if (mask_token.size() != encoded.dim(1)) {
    throw Error(ErrorKind::Dimension,
                fmt::format("scatter: mask token {} vs token width {}",
                            shape_to_string(mask_token.shape()), encoded.dim(1)));
  }
  NDArray<T> token_row = reshape(mask_token, {1, encoded.dim(1)});
  NDArray<T> pool = concat_rows<T>({encoded, token_row});
  const auto index = plan.restore_index();
  return gather_rows(pool, std::span<const std::size_t>(index));
}

template NDArray<float> select_visible(const NDArray<float>&, const MaskPlan&);
template NDArray<double> select_visible(const NDArray<double>&, const MaskPlan&);
template NDArray<float> scatter_with_mask_tokens(const NDArray<float>&, const MaskPlan&,
                                                 const NDArray<float>&);
template NDArray<double> scatter_with_mask_tokens(const NDArray<double>&, const MaskPlan&,
                                                  const NDArray<double>&);

}  // namespace mtsmae
