#include "caproute/routing.hpp"

#include <cmath>
#include <stdexcept>

namespace caproute {

namespace {

void check_spec(const RoutingSpec& spec) {
  if (spec.n_out < 1 || spec.d_out < 1) {
    throw std::invalid_argument("route: n_out and d_out must be >= 1");
  }
  if (spec.iterations < 1) throw std::invalid_argument("route: iterations must be >= 1");
}

}  // namespace

RoutingParams make_routing_params(std::int64_t d_in, const RoutingSpec& spec,
                                  std::mt19937_64& rng, const std::string& name_prefix) {
  check_spec(spec);
  if (d_in < 1) throw std::invalid_argument("make_routing_params: d_in must be >= 1");
  RoutingParams params;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (std::int64_t j = 0; j < spec.n_out; ++j) {
    Parameter w;
    w.value = Tensor::randn({d_in, spec.d_out}, rng, stddev, /*requires_grad=*/true);
    w.name = name_prefix + ".w" + std::to_string(j);
    params.w.push_back(std::move(w));
    Parameter b;
    b.value = Tensor::zeros({1, spec.d_out}, /*requires_grad=*/true);
    b.name = name_prefix + ".b" + std::to_string(j);
    params.b.push_back(std::move(b));
  }
  return params;
}

RoutingOutput route(const Tensor& capsules, const RoutingParams& params,
                    const RoutingSpec& spec) {
  check_spec(spec);
  const std::int64_t m = capsules.rows();
  const std::int64_t d_in = capsules.cols();
  if (static_cast<std::int64_t>(params.w.size()) != spec.n_out ||
      static_cast<std::int64_t>(params.b.size()) != spec.n_out) {
    throw std::invalid_argument("route: params hold a different n_out than spec.n_out");
  }
  for (std::int64_t j = 0; j < spec.n_out; ++j) {
    const auto& w = params.w[static_cast<std::size_t>(j)].value;
    const auto& b = params.b[static_cast<std::size_t>(j)].value;
    if (w.rows() != d_in || w.cols() != spec.d_out || b.rows() != 1 || b.cols() != spec.d_out) {
      throw std::invalid_argument("route: parameter shape mismatch");
    }
  }

  // Votes and column selectors are loop-invariant.
  std::vector<Tensor> votes;
  votes.reserve(static_cast<std::size_t>(spec.n_out));
  std::vector<Tensor> selectors;
  selectors.reserve(static_cast<std::size_t>(spec.n_out));
  for (std::int64_t j = 0; j < spec.n_out; ++j) {
    votes.push_back(add_rowvec(matmul(capsules, params.w[static_cast<std::size_t>(j)].value),
                               params.b[static_cast<std::size_t>(j)].value));
    auto e = Tensor::zeros({spec.n_out, 1});
    e.mutable_values()[static_cast<std::size_t>(j)] = 1.0;
    selectors.push_back(std::move(e));
  }

  const double agreement_scale = 1.0 / std::sqrt(static_cast<double>(spec.d_out));
  const Tensor ones_row = Tensor::full({1, m}, 1.0);
  Tensor phi = Tensor::zeros({m, spec.n_out});
  Tensor credits = softmax_rows(phi);  // uniform 1/n_out
  std::vector<Tensor> snapshots{credits};
  Tensor outputs;

  for (std::int64_t r = 0; r < spec.iterations; ++r) {
    std::vector<Tensor> outs, agreements;
    outs.reserve(static_cast<std::size_t>(spec.n_out));
    agreements.reserve(static_cast<std::size_t>(spec.n_out));
    for (std::int64_t j = 0; j < spec.n_out; ++j) {
      const auto& v = votes[static_cast<std::size_t>(j)];
      Tensor col = matmul(credits, selectors[static_cast<std::size_t>(j)]);  // m x 1
      Tensor weighted = matmul(col, v, /*trans_a=*/true);                    // 1 x d_out
      Tensor csum = matmul(ones_row, col);                                   // 1 x 1
      Tensor mean = matmul(reciprocal(csum), weighted);                      // normalized
      Tensor out_j = layer_norm_rows(mean);
      agreements.push_back(matmul(v, out_j, false, /*trans_b=*/true));       // m x 1
      outs.push_back(std::move(out_j));
    }
    outputs = spec.n_out == 1 ? outs.front() : concat_rows(outs);
    Tensor delta = spec.n_out == 1 ? agreements.front() : concat_cols(agreements);
    phi = add(phi, mul_scalar(delta, agreement_scale));
    credits = softmax_rows(phi);
    snapshots.push_back(credits);
  }

  return RoutingOutput{std::move(outputs), credits, std::move(snapshots)};
}

RoutingHead make_head(HeadKind kind, std::int64_t d_in, const HeadConfig& cfg,
                      std::mt19937_64& rng, const std::string& name_prefix) {
  if (cfg.n_hid < 1 || cfg.hidden_d < 1 || cfg.out_d < 1) {
    throw std::invalid_argument("make_head: capsule counts and dims must be >= 1");
  }
  RoutingHead head;
  head.kind = kind;
  head.spec1 = RoutingSpec{cfg.n_hid, cfg.hidden_d, cfg.iterations};
  head.spec2 = kind == HeadKind::H1 ? RoutingSpec{2, 1, cfg.iterations}
                                    : RoutingSpec{1, cfg.out_d, cfg.iterations};
  head.params1 = make_routing_params(d_in, head.spec1, rng, name_prefix + ".s1");
  head.params2 = make_routing_params(cfg.hidden_d, head.spec2, rng, name_prefix + ".s2");
  return head;
}

std::vector<Parameter*> head_parameters(RoutingHead& head) {
  std::vector<Parameter*> out;
  for (auto* params : {&head.params1, &head.params2}) {
    for (auto& p : params->w) out.push_back(&p);
    for (auto& p : params->b) out.push_back(&p);
  }
  return out;
}

Tensor flatten_hidden(const HiddenStates& hs) {
  if (hs.layers.empty()) throw std::invalid_argument("flatten_hidden: no layers");
  for (const auto& layer : hs.layers) {
    if (layer.rows() != hs.length() || layer.cols() != hs.dim()) {
      throw std::invalid_argument("flatten_hidden: ragged layer stack");
    }
  }
  return hs.layers.size() == 1 ? hs.layers.front() : concat_rows(hs.layers);
}

Tensor flatten_hidden_masked(const HiddenStates& hs,
                             const std::vector<std::int64_t>& positions) {
  if (positions.empty()) throw std::invalid_argument("flatten_hidden_masked: empty mask");
  if (hs.layers.empty()) throw std::invalid_argument("flatten_hidden_masked: no layers");
  std::vector<Tensor> kept;
  kept.reserve(hs.layers.size());
  for (const auto& layer : hs.layers) kept.push_back(select_rows(layer, positions));
  return kept.size() == 1 ? kept.front() : concat_rows(kept);
}

HeadOutput head_forward(const HiddenStates& hs, const RoutingHead& head,
                        const std::optional<std::vector<std::int64_t>>& span_mask) {
  Tensor caps = span_mask ? flatten_hidden_masked(hs, *span_mask) : flatten_hidden(hs);
  RoutingOutput s1 = route(caps, head.params1, head.spec1);
  RoutingOutput s2 = route(s1.capsules, head.params2, head.spec2);

  Tensor vec;
  if (head.spec2.n_out == 1) {
    vec = s2.capsules;
  } else {
    std::vector<Tensor> rows;
    for (std::int64_t j = 0; j < head.spec2.n_out; ++j) {
      rows.push_back(select_rows(s2.capsules, {j}));
    }
    vec = concat_cols(rows);
  }
  return HeadOutput{head.kind, std::move(vec), std::move(s1.credits), std::move(s2.credits)};
}

Tensor aggregate_credits(const HeadOutput& out) {
  return matmul(out.stage1_credits, out.stage2_credits);
}

std::pair<double, double> positivity_credit(const HeadOutput& h1_out) {
  if (h1_out.kind != HeadKind::H1) {
    throw std::invalid_argument("positivity_credit: requires an H1 head output");
  }
  NoGradGuard off;
  Tensor agg = aggregate_credits(h1_out);  // m x 2
  double pos = 0.0, neg = 0.0;
  for (std::int64_t i = 0; i < agg.rows(); ++i) {
    pos += agg.at(i, 0);
    neg += agg.at(i, 1);
  }
  return {pos, neg};
}

}  // namespace caproute
