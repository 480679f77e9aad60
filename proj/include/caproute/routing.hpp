#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "caproute/hidden_states.hpp"
#include "caproute/tensor.hpp"

namespace caproute {

// Shape of one routing layer: m variable input capsules are routed into
// n_out output capsules of dimension d_out over `iterations` unrolled steps.
struct RoutingSpec {
  std::int64_t n_out = 1;
  std::int64_t d_out = 512;
  std::int64_t iterations = 3;
};

// One projection per output capsule, shared across input positions, so the
// same parameters accept any input length.
struct RoutingParams {
  std::vector<Parameter> w;  // n_out entries, each d_in x d_out
  std::vector<Parameter> b;  // n_out entries, each 1 x d_out
};

RoutingParams make_routing_params(std::int64_t d_in, const RoutingSpec& spec,
                                  std::mt19937_64& rng, const std::string& name_prefix);

struct RoutingOutput {
  Tensor capsules;  // n_out x d_out
  Tensor credits;   // m x n_out, rows sum to 1
  // Credit matrix after every softmax update, preceded by the uniform
  // initialization: iterations + 1 snapshots.
  std::vector<Tensor> iteration_credits;
};

// Dynamic routing: votes v_ij = x_i W_j + b_j; credits start uniform; each
// iteration takes the credit-weighted, normalized mean per output capsule,
// adds the scaled vote/output agreement to the logits and re-softmaxes them
// across outputs. Differentiable end to end.
RoutingOutput route(const Tensor& capsules, const RoutingParams& params,
                    const RoutingSpec& spec);

// --- head assemblies ----------------------------------------------------------

enum class HeadKind { H1, H2, H3 };

struct HeadConfig {
  std::int64_t n_hid = 8;
  std::int64_t hidden_d = 256;
  std::int64_t out_d = 512;  // stage-2 capsule dim; H1 forces n_out=2, d_out=1
  std::int64_t iterations = 3;
};

// Two routing stages: flattened hidden states -> n_hid hidden capsules ->
// the head's output capsules.
struct RoutingHead {
  HeadKind kind = HeadKind::H3;
  RoutingSpec spec1, spec2;
  RoutingParams params1, params2;
};

RoutingHead make_head(HeadKind kind, std::int64_t d_in, const HeadConfig& cfg,
                      std::mt19937_64& rng, const std::string& name_prefix);

// Deterministically ordered parameter handles for optimizers / checkpoints.
std::vector<Parameter*> head_parameters(RoutingHead& head);

// Stacks layers on top of each other: row l*n + t is layer l, token t.
Tensor flatten_hidden(const HiddenStates& hs);
// Same, but keeps only the given token positions in every layer.
Tensor flatten_hidden_masked(const HiddenStates& hs,
                             const std::vector<std::int64_t>& positions);

struct HeadOutput {
  HeadKind kind = HeadKind::H3;
  Tensor vector;          // 1 x (n_out * d_out): stage-2 capsules laid out side by side
  Tensor stage1_credits;  // m x n_hid
  Tensor stage2_credits;  // n_hid x n_out
};

HeadOutput head_forward(const HiddenStates& hs, const RoutingHead& head,
                        const std::optional<std::vector<std::int64_t>>& span_mask =
                            std::nullopt);

// Per-input-capsule share of each final output capsule: stage1 * stage2
// credit product, still row-stochastic.
Tensor aggregate_credits(const HeadOutput& out);

// Column sums of the aggregated H1 credit matrix: (positive, negative).
// Capsule 0 is the positivity capsule by convention.
std::pair<double, double> positivity_credit(const HeadOutput& h1_out);

}  // namespace caproute
