// Acceptance suite: ten desk-scale checks of the library's core claims,
// printed as one PASS/FAIL line each. argv[1] must point at the caproute
// CLI binary (used by the reproducibility criterion). Exits 0 only when
// every criterion passes.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "caproute/analysis.hpp"
#include "caproute/data.hpp"
#include "caproute/encoder.hpp"
#include "caproute/model.hpp"
#include "caproute/routing.hpp"
#include "caproute/tensor.hpp"

using namespace caproute;
namespace fs = std::filesystem;

namespace {

int g_failed = 0;

void criterion(int n, const std::string& label, bool ok, const std::string& detail) {
  if (!ok) ++g_failed;
  std::cout << (ok ? "PASS" : "FAIL") << "  " << n << ". " << label;
  if (!detail.empty()) std::cout << "  [" << detail << "]";
  std::cout << "\n" << std::flush;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- scalar routing oracle (independent of the Tensor machinery) ------------------------

struct OracleResult {
  std::vector<double> capsules;  // n_out * d_out
  std::vector<double> credits;   // m * n_out
};

OracleResult route_oracle(const std::vector<double>& x, std::int64_t m, std::int64_t d_in,
                          const std::vector<std::vector<double>>& W,
                          const std::vector<std::vector<double>>& B, std::int64_t n_out,
                          std::int64_t d_out, std::int64_t R) {
  std::vector<std::vector<double>> votes(static_cast<std::size_t>(n_out));
  for (std::int64_t j = 0; j < n_out; ++j) {
    auto& vj = votes[static_cast<std::size_t>(j)];
    vj.assign(static_cast<std::size_t>(m * d_out), 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t k = 0; k < d_out; ++k) {
        double acc = B[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
        for (std::int64_t p = 0; p < d_in; ++p) {
          acc += x[static_cast<std::size_t>(i * d_in + p)] *
                 W[static_cast<std::size_t>(j)][static_cast<std::size_t>(p * d_out + k)];
        }
        vj[static_cast<std::size_t>(i * d_out + k)] = acc;
      }
    }
  }

  std::vector<double> phi(static_cast<std::size_t>(m * n_out), 0.0);
  std::vector<double> credits(static_cast<std::size_t>(m * n_out),
                              1.0 / static_cast<double>(n_out));
  std::vector<double> outs(static_cast<std::size_t>(n_out * d_out), 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_out));

  for (std::int64_t r = 0; r < R; ++r) {
    for (std::int64_t j = 0; j < n_out; ++j) {
      double csum = 0.0;
      std::vector<double> wm(static_cast<std::size_t>(d_out), 0.0);
      for (std::int64_t i = 0; i < m; ++i) {
        const double c = credits[static_cast<std::size_t>(i * n_out + j)];
        csum += c;
        for (std::int64_t k = 0; k < d_out; ++k) {
          wm[static_cast<std::size_t>(k)] +=
              c * votes[static_cast<std::size_t>(j)][static_cast<std::size_t>(i * d_out + k)];
        }
      }
      for (auto& v : wm) v /= csum;
      if (d_out > 1) {
        double mean = 0.0;
        for (double v : wm) mean += v;
        mean /= static_cast<double>(d_out);
        double var = 0.0;
        for (double v : wm) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d_out);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (auto& v : wm) v = (v - mean) * inv;
      }
      for (std::int64_t k = 0; k < d_out; ++k) {
        outs[static_cast<std::size_t>(j * d_out + k)] = wm[static_cast<std::size_t>(k)];
      }
      for (std::int64_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::int64_t k = 0; k < d_out; ++k) {
          dot += votes[static_cast<std::size_t>(j)][static_cast<std::size_t>(i * d_out + k)] *
                 wm[static_cast<std::size_t>(k)];
        }
        phi[static_cast<std::size_t>(i * n_out + j)] += scale * dot;
      }
    }
    for (std::int64_t i = 0; i < m; ++i) {
      double mx = phi[static_cast<std::size_t>(i * n_out)];
      for (std::int64_t j = 1; j < n_out; ++j) {
        mx = std::max(mx, phi[static_cast<std::size_t>(i * n_out + j)]);
      }
      double denom = 0.0;
      for (std::int64_t j = 0; j < n_out; ++j) {
        credits[static_cast<std::size_t>(i * n_out + j)] =
            std::exp(phi[static_cast<std::size_t>(i * n_out + j)] - mx);
        denom += credits[static_cast<std::size_t>(i * n_out + j)];
      }
      for (std::int64_t j = 0; j < n_out; ++j) {
        credits[static_cast<std::size_t>(i * n_out + j)] /= denom;
      }
    }
  }
  return {outs, credits};
}

// --- shared fixtures ---------------------------------------------------------------------

REInstance pair_instance(const std::string& id, const std::string& subj,
                         const std::string& verb, const std::string& obj,
                         const std::string& rel) {
  REInstance inst;
  inst.id = id;
  inst.tokens = {subj, verb, obj, "."};
  inst.subj_start = inst.subj_end = 0;
  inst.obj_start = inst.obj_end = 2;
  inst.subj_type = "person";
  inst.obj_type = "person";
  inst.relation = rel;
  return inst;
}

Corpus tiny_corpus() {
  return make_corpus({pair_instance("t0", "amy", "likes", "bob", "likes"),
                      pair_instance("t1", "cal", "likes", "dee", "likes"),
                      pair_instance("t2", "amy", "hates", "dee", "hates"),
                      pair_instance("t3", "cal", "hates", "bob", "hates")},
                     "train");
}

void fill_param(Parameter& p, double scale) {
  auto vals = p.value.mutable_values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    vals[i] = scale * std::sin(0.7 * static_cast<double>(i + 1));
  }
}

Parameter* find_param(std::vector<Parameter*> params, const std::string& name) {
  for (auto* p : params) {
    if (p->name == name) return p;
  }
  return nullptr;
}

// The desk-scale reference run: 8 relations over 8 entity types, 500 train /
// 200 test at negative ratio 0.3, seed 7, Mix sentences, a single H3 head.
SynthSpec reference_spec(const std::string& split, std::int64_t size) {
  SynthSpec spec;
  spec.n_relations = 8;
  spec.n_entity_types = 8;
  spec.negative_ratio = 0.3;
  spec.seed = 7;
  spec.size = size;
  spec.split = split;
  return spec;
}

ModelConfig reference_model_config(const std::string& heads) {
  ModelConfig cfg;
  cfg.encoder = EncoderConfig{2, 32, 2, 64, 32};
  cfg.head = HeadConfig{4, 64, 128, 3};
  cfg.decoder = DecoderHeadConfig{2, 2, 16};
  cfg.heads = HeadSet::parse(heads);
  cfg.config_kind = SentenceConfigKind::Mix;
  cfg.seed = 7;
  return cfg;
}

TrainConfig reference_train_config() {
  TrainConfig tc;
  tc.batch_size = 32;
  tc.learning_rate = 3e-3;
  tc.epochs = 30;
  tc.seed = 7;
  tc.early_stop_train_micro = 0.995;
  return tc;
}

// --- criteria ---------------------------------------------------------------------------

double check_1_gradients() {
  double worst = 0.0;

  {  // (a) bare routing layer
    std::mt19937_64 rng(53);
    std::vector<Tensor> inputs = {
        Tensor::randn({3, 2}, rng, 0.8, true),  // x
        Tensor::randn({2, 3}, rng, 0.8, true),  // w0
        Tensor::randn({2, 3}, rng, 0.8, true),  // w1
        Tensor::randn({1, 3}, rng, 0.3, true),  // b0
        Tensor::randn({1, 3}, rng, 0.3, true),  // b1
    };
    auto f = [](const std::vector<Tensor>& in) {
      RoutingSpec spec{2, 3, 3};
      RoutingParams p;
      p.w = {Parameter{in[1], "w0"}, Parameter{in[2], "w1"}};
      p.b = {Parameter{in[3], "b0"}, Parameter{in[4], "b1"}};
      auto out = route(in[0], p, spec);
      return add(sum_all(mul(out.capsules, out.capsules)),
                 sum_all(mul(out.credits, out.credits)));
    };
    worst = std::max(worst, grad_check(f, inputs));
  }

  {  // (b) full H3 head over a fixed hidden-state stack
    std::mt19937_64 rng(59);
    HeadConfig cfg{2, 3, 4, 2};
    RoutingHead head = make_head(HeadKind::H3, 3, cfg, rng, "h");
    HiddenStates hs;
    hs.layers = {Tensor::randn({2, 3}, rng), Tensor::randn({2, 3}, rng)};
    hs.token_ids = {0, 0};
    std::vector<Tensor> inputs;
    for (auto* p : head_parameters(head)) inputs.push_back(p->value);
    auto f = [&](const std::vector<Tensor>& in) {
      RoutingHead local = head;
      auto ps = head_parameters(local);
      for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = in[i];
      auto out = head_forward(hs, local);
      return sum_all(mul(out.vector, out.vector));
    };
    worst = std::max(worst, grad_check(f, inputs));
  }

  {  // (c) complete loss through the toy encoder, every head active
    Corpus corpus = tiny_corpus();
    Vocabulary vocab = build_vocabulary(corpus, SentenceConfigKind::Mix);
    ModelConfig cfg;
    cfg.encoder = EncoderConfig{1, 8, 2, 16, 64};
    cfg.head = HeadConfig{2, 8, 8, 2};
    cfg.decoder = DecoderHeadConfig{1, 2, 24};
    cfg.heads = HeadSet::parse("h1,h2,h3,decoder");
    cfg.seed = 16;
    Model model(vocab, corpus.relations, cfg);
    // The classifier starts at zero; give it weight so gradient reaches
    // every routing head.
    fill_param(*find_param(model.parameters(), "cls.w"), 0.2);
    fill_param(*find_param(model.parameters(), "cls.b"), 0.05);
    std::vector<Tensor> inputs;
    for (auto* p : model.parameters()) inputs.push_back(p->value);
    const REInstance& inst = corpus.instances[0];
    auto f = [&](const std::vector<Tensor>&) { return model.instance_loss(inst); };
    worst = std::max(worst, grad_check(f, inputs, GradCheckOptions{1e-5, 4, 3}));
  }

  return worst;
}

double check_2_credit_conservation() {
  NoGradGuard guard;
  std::mt19937_64 rng(101);
  RoutingSpec spec{4, 5, 3};
  RoutingParams params = make_routing_params(8, spec, rng, "c");
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor x = Tensor::randn({6, 8}, rng);
    RoutingOutput out = route(x, params, spec);
    std::vector<Tensor> stages = out.iteration_credits;
    stages.push_back(out.credits);
    for (const Tensor& credits : stages) {
      auto vals = credits.values();
      for (std::int64_t i = 0; i < credits.rows(); ++i) {
        double sum = 0.0;
        for (std::int64_t j = 0; j < credits.cols(); ++j) {
          sum += vals[static_cast<std::size_t>(i * credits.cols() + j)];
        }
        worst = std::max(worst, std::abs(sum - 1.0));
      }
    }
  }
  return worst;
}

double check_3_permutation() {
  NoGradGuard guard;
  std::mt19937_64 rng(103);
  RoutingSpec spec{3, 4, 3};
  RoutingParams params = make_routing_params(6, spec, rng, "p");
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = Tensor::randn({5, 6}, rng);
    auto base = route(x, params, spec).capsules.values();

    std::vector<std::int64_t> order(5);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    std::shuffle(order.begin(), order.end(), rng);
    auto xv = x.values();
    std::vector<double> permuted(xv.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      for (std::int64_t c = 0; c < 6; ++c) {
        permuted[i * 6 + static_cast<std::size_t>(c)] =
            xv[static_cast<std::size_t>(order[i] * 6 + c)];
      }
    }
    auto shuffled = route(Tensor::from_data({5, 6}, permuted), params, spec)
                        .capsules.values();
    for (std::size_t i = 0; i < base.size(); ++i) {
      worst = std::max(worst, std::abs(base[i] - shuffled[i]));
    }
  }
  return worst;
}

double check_4_oracle() {
  NoGradGuard guard;
  const std::vector<double> xv{0.3, -1.2, 0.8, 0.5};
  const std::vector<double> w0{0.6, -0.4, 0.1, 0.9};
  const std::vector<double> w1{-0.7, 0.2, 0.5, -0.3};
  const std::vector<double> b0{0.05, -0.1};
  const std::vector<double> b1{-0.2, 0.15};

  RoutingSpec spec{2, 2, 2};
  RoutingParams params;
  params.w = {Parameter{Tensor::from_data({2, 2}, w0), "w0"},
              Parameter{Tensor::from_data({2, 2}, w1), "w1"}};
  params.b = {Parameter{Tensor::from_data({1, 2}, b0), "b0"},
              Parameter{Tensor::from_data({1, 2}, b1), "b1"}};
  RoutingOutput got = route(Tensor::from_data({2, 2}, xv), params, spec);
  OracleResult want = route_oracle(xv, 2, 2, {w0, w1}, {b0, b1}, 2, 2, 2);

  double worst = 0.0;
  auto caps = got.capsules.values();
  for (std::size_t i = 0; i < caps.size(); ++i) {
    worst = std::max(worst, std::abs(caps[i] - want.capsules[i]));
  }
  auto credits = got.credits.values();
  for (std::size_t i = 0; i < credits.size(); ++i) {
    worst = std::max(worst, std::abs(credits[i] - want.credits[i]));
  }
  return worst;
}

// --- CLI reproducibility helpers ---------------------------------------------------------

std::string g_cli;
fs::path g_work;

int run_cli(const std::string& args) {
  const std::string cmd = g_cli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Runs one CLI invocation twice into the same directory (wiping between) and
// byte-compares the named outputs.
bool rerun_identical(const std::string& args, const fs::path& out,
                     const std::vector<std::string>& files, std::string* why) {
  if (run_cli(args) != 0) {
    *why = "first run failed: " + args;
    return false;
  }
  std::map<std::string, std::string> snapshot;
  for (const auto& f : files) snapshot[f] = slurp(out / f);
  fs::remove_all(out);
  if (run_cli(args) != 0) {
    *why = "second run failed: " + args;
    return false;
  }
  for (const auto& f : files) {
    if (slurp(out / f) != snapshot[f]) {
      *why = "bytes changed: " + f;
      return false;
    }
  }
  return true;
}

bool check_10_reproducibility(std::string* why) {
  const fs::path s = g_work / "synth";
  const fs::path m = g_work / "model";
  const fs::path e = g_work / "eval";
  const fs::path a = g_work / "analyze";
  const fs::path mi = g_work / "mine";
  const fs::path r = g_work / "render";

  const std::string model_flags =
      " --set encoder.layers=1 --set encoder.d=16 --set encoder.heads=2"
      " --set encoder.ffn=32 --set encoder.max_len=32"
      " --set head.n_hid=2 --set head.hidden_d=16 --set head.out_d=16"
      " --set batch_size=16";

  if (!rerun_identical("synth --out " + q(s) +
                           " --seed 5 --size 50 --negative-ratio 0.2 --noise-rate 0.1"
                           " --set n_relations=3 --set n_entity_types=4",
                       s, {"corpus.jsonl", "stats.json", "flips.csv"}, why)) {
    return false;
  }
  if (!rerun_identical("train --corpus " + q(s / "corpus.jsonl") + " --out " + q(m) +
                           " --heads h3 --epochs 3 --seed 11" + model_flags,
                       m, {"model.capk", "trace.csv", "vocab.json"}, why)) {
    return false;
  }
  if (!rerun_identical("eval --model-dir " + q(m) + " --corpus " +
                           q(s / "corpus.jsonl") + " --out " + q(e),
                       e, {"metrics.json", "predictions.csv", "predictions.jsonl"},
                       why)) {
    return false;
  }
  if (!rerun_identical("analyze --model-dir " + q(m) + " --corpus " +
                           q(s / "corpus.jsonl") + " --out " + q(a) +
                           " --max-pairs 10 --seed 2",
                       a, {"before_cosine.csv", "after_cosine.csv", "pairs.csv",
                           "after_euclidean.ppm"},
                       why)) {
    return false;
  }
  if (!rerun_identical("mine --predictions " + q(e / "predictions.csv") + " --corpus " +
                           q(s / "corpus.jsonl") + " --out " + q(mi) + " --flips " +
                           q(s / "flips.csv") + " --samples 2 --seed 5",
                       mi, {"disagreements.csv", "samples.jsonl", "recovery.json"},
                       why)) {
    return false;
  }
  if (!rerun_identical("render --matrix " + q(a / "after_cosine.csv") + " --out " +
                           q(r / "heat"),
                       r, {"heat.csv", "heat.ppm"}, why)) {
    return false;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <path-to-caproute-binary>\n";
    return 2;
  }
  g_cli = argv[1];
  g_work = fs::temp_directory_path() / "caproute_acceptance";
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  // 1. gradient fidelity
  {
    const auto t0 = std::chrono::steady_clock::now();
    const double err = check_1_gradients();
    const double secs = seconds_since(t0);
    criterion(1, "gradient fidelity (route, H3 head, full loss)",
              err < 1e-4 && secs < 60.0,
              "max rel err " + fmt(err) + ", " + fmt(secs) + "s");
  }

  // 2. credit conservation
  {
    const double dev = check_2_credit_conservation();
    criterion(2, "credit rows sum to 1 across 1000 inputs and all iterations",
              dev < 1e-9, "max row deviation " + fmt(dev));
  }

  // 3. permutation invariance
  {
    const double dev = check_3_permutation();
    criterion(3, "output capsules unchanged under 100 input permutations", dev < 1e-9,
              "max capsule deviation " + fmt(dev));
  }

  // 4. scalar oracle equivalence
  {
    const double dev = check_4_oracle();
    criterion(4, "fixed 2x2x2 fixture matches the scalar oracle", dev <= 1e-12,
              "max deviation " + fmt(dev));
  }

  // 5. overfit sanity on the reference corpus (also feeds criteria 7 and 8)
  Corpus train_corpus = generate_synthetic(reference_spec("train", 500));
  Corpus test_corpus = generate_synthetic(reference_spec("test", 200));
  Vocabulary vocab = build_vocabulary(train_corpus, SentenceConfigKind::Mix);
  Model h3_model(vocab, train_corpus.relations, reference_model_config("h3"));
  double train_micro = 0.0, test_micro = 0.0;
  {
    const auto t0 = std::chrono::steady_clock::now();
    h3_model.train(train_corpus, reference_train_config());
    train_micro = h3_model.evaluate(train_corpus).first.micro_f1;
    test_micro = h3_model.evaluate(test_corpus).first.micro_f1;
    const double secs = seconds_since(t0);
    criterion(5, "H3/Mix reference run overfits and generalizes",
              train_micro >= 0.99 && test_micro >= 0.90 && secs < 600.0,
              "train " + fmt(train_micro) + ", test " + fmt(test_micro) + ", " +
                  fmt(secs) + "s");
  }

  // 6. sentence configurations under type-determined relations
  {
    SynthSpec c6 = reference_spec("train", 320);
    c6.n_relations = 4;
    c6.n_entity_types = 4;
    c6.negative_ratio = 0.25;
    c6.type_determines_relation = true;
    c6.surface_pool = 12;
    c6.seed = 13;
    Corpus c6_train = generate_synthetic(c6);
    c6.split = "test";
    c6.size = 160;
    Corpus c6_test = generate_synthetic(c6);

    // Precondition: the surface pool really is ambiguous across relations.
    std::map<std::string, std::set<std::string>> surface_relations;
    for (const REInstance& inst : c6_train.instances) {
      std::string surface;
      for (std::int64_t i = inst.subj_start; i <= inst.subj_end; ++i) {
        surface += (surface.empty() ? "" : " ") +
                   inst.tokens[static_cast<std::size_t>(i)];
      }
      surface_relations[surface].insert(inst.relation);
    }
    bool ambiguous = false;
    for (const auto& [surface, rels] : surface_relations) {
      if (rels.size() > 1) ambiguous = true;
    }

    auto run_config = [&](SentenceConfigKind kind) {
      ModelConfig cfg = reference_model_config("h3");
      cfg.config_kind = kind;
      cfg.seed = 13;
      TrainConfig tc = reference_train_config();
      tc.epochs = 40;
      tc.seed = 13;
      Vocabulary v = build_vocabulary(c6_train, kind);
      Model model(v, c6_train.relations, cfg);
      model.train(c6_train, tc);
      return model.evaluate(c6_test).first.micro_f1;
    };
    const double abstract_micro = run_config(SentenceConfigKind::Abstract);
    const double mix_micro = run_config(SentenceConfigKind::Mix);
    const double entities_micro = run_config(SentenceConfigKind::Entities);
    criterion(6, "type-determined regime: Abstract/Mix exact, Entities below",
              ambiguous && abstract_micro == 1.0 && mix_micro == 1.0 &&
                  entities_micro < abstract_micro && entities_micro < mix_micro,
              "abstract " + fmt(abstract_micro) + ", mix " + fmt(mix_micro) +
                  ", entities " + fmt(entities_micro));
  }

  // 7. re-representation: similarity gaps before/after training, H3 vs decoder
  {
    std::vector<AnalogyPair> pairs = build_analogy_pairs(test_corpus, 100, 7);
    std::map<std::string, const REInstance*> by_id;
    for (const REInstance& inst : test_corpus.instances) by_id[inst.id] = &inst;
    auto heads_gap = [&](Model& model) {
      EmbeddingProvider provider = [&](const std::string& id) {
        return model.entity_embeddings(*by_id.at(id));
      };
      CategoryMatrix matrix = category_matrix(pairs, provider, PairMetric::cosine, "x");
      const auto& last = matrix.values.back();
      return last[0] - last[1];
    };

    Model before_model(vocab, train_corpus.relations, reference_model_config("h3"));
    Model decoder_model(vocab, train_corpus.relations,
                        reference_model_config("decoder"));
    decoder_model.train(train_corpus, reference_train_config());

    const double before_gap = heads_gap(before_model);
    const double h3_gap = heads_gap(h3_model);
    const double decoder_gap = heads_gap(decoder_model);
    criterion(7, "heads cosine gap: small before, large after, H3 beats decoder",
              h3_gap > 0.2 && std::abs(before_gap) < 0.1 && h3_gap > decoder_gap,
              "before " + fmt(before_gap) + ", H3 " + fmt(h3_gap) + ", decoder " +
                  fmt(decoder_gap));
  }

  // 8. label-noise mining on the reference test split
  {
    auto [noisy_test, flips] = inject_label_noise(test_corpus, 0.1, 21);
    auto records = h3_model.evaluate(noisy_test).second;
    auto categories = mine_disagreements(records);
    NoiseRecoveryReport report = noise_recovery_report(categories, flips);
    const double recall = report.recall.value_or(0.0);
    criterion(8, "10% injected flips recovered by disagreement mining",
              report.recall.has_value() && recall >= 0.7,
              "recall " + fmt(recall) + " of " + std::to_string(report.flipped) +
                  " flips");
  }

  // 9. exact micro/macro fixtures
  {
    auto rec = [](const char* gold, const char* pred) {
      PredictionRecord r;
      r.id = "x";
      r.gold = gold;
      r.predicted = pred;
      return r;
    };
    Metrics a = compute_metrics({rec("r1", "r1"), rec("r1", "r1"), rec("r1", "r2")});
    Metrics b = compute_metrics(
        {rec("r1", "r1"), rec("r2", "r2"), rec("no_relation", "no_relation")});
    Metrics c = compute_metrics({rec("A", "A"), rec("A", "A"), rec("A", "B"),
                                 rec("B", "B"), rec("B", "no_relation"),
                                 rec("no_relation", "A")});
    const bool ok = a.micro_f1 == 2.0 / 3.0 && b.micro_f1 == 1.0 && b.macro_f1 == 1.0 &&
                    c.micro_f1 == 3.0 / 5.0 &&
                    c.macro_f1 == (2.0 / 3.0 + 1.0 / 2.0) / 2.0;
    criterion(9, "micro/macro F1 match hand-computed confusion fixtures", ok,
              "micro " + fmt(a.micro_f1) + ", " + fmt(c.micro_f1) + ", macro " +
                  fmt(c.macro_f1));
  }

  // 10. byte-identical CLI reruns
  {
    std::string why;
    const bool ok = check_10_reproducibility(&why);
    criterion(10, "every CLI command reruns byte-identically", ok,
              ok ? "synth/train/eval/analyze/mine/render" : why);
  }

  fs::remove_all(g_work);
  if (g_failed == 0) {
    std::cout << "acceptance: all 10 criteria passed\n";
    return 0;
  }
  std::cout << "acceptance: " << g_failed << " criterion(s) failed\n";
  return 1;
}
