#pragma once

#include <cstdint>
#include <vector>

#include "caproute/tensor.hpp"

namespace caproute {

// Per-layer token embeddings for one sentence: depth h = number of stacked
// layers (embedding layer included for the toy encoder), each entry n x d.
struct HiddenStates {
  enum class Source { toy, file };

  std::vector<Tensor> layers;
  std::vector<std::int64_t> token_ids;
  Source source = Source::toy;

  std::int64_t depth() const { return static_cast<std::int64_t>(layers.size()); }
  std::int64_t length() const { return layers.empty() ? 0 : layers.front().rows(); }
  std::int64_t dim() const { return layers.empty() ? 0 : layers.front().cols(); }
};

}  // namespace caproute
