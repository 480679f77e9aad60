// caproute: batch front end over the library. One command per process:
//   synth    draw a synthetic corpus (plus optional label noise)
//   train    fit a model on a JSON-lines corpus
//   eval     score a trained model on a corpus
//   analyze  before/after category matrices + heatmaps for analogy pairs
//   mine     bucket disagreements, sample them, match against a flip log
//   render   re-render a heatmap from a category-matrix CSV
//
// Configuration comes from a JSON file (--config) with per-key overrides via
// --set key=value and a few convenience flags; flags win over --set, which
// wins over the file. Unknown keys are rejected. Every run writes the fully
// resolved config next to its outputs plus a run_meta.json sidecar that holds
// the only timestamp, so reruns with one config/seed are byte-identical.
//
// Exit codes: 0 ok, 1 runtime failure, 2 config error.

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "caproute/analysis.hpp"
#include "caproute/data.hpp"
#include "caproute/encoder.hpp"
#include "caproute/model.hpp"
#include "json.hpp"

using nlohmann::json;
using namespace caproute;
namespace fs = std::filesystem;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

// "--set key=value" or "--set nested.key=value"; the value is parsed as JSON
// when it is one, otherwise taken as a bare string.
void apply_override(json& cfg, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects key=value, got: " + spec);
  }
  const std::string key = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* slot = &cfg;
  std::size_t start = 0;
  for (auto dot = key.find('.'); dot != std::string::npos; dot = key.find('.', start)) {
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("--set key has an empty segment: " + key);
    slot = &(*slot)[part];
    if (slot->is_null()) *slot = json::object();
    if (!slot->is_object()) {
      throw ConfigError("--set cannot descend into non-object key: " + part);
    }
    start = dot + 1;
  }
  const std::string leaf = key.substr(start);
  if (leaf.empty()) throw ConfigError("--set key has an empty segment: " + key);
  (*slot)[leaf] = std::move(value);
}

// Consumes keys out of one JSON object and rejects leftovers, so configs
// cannot silently carry typos.
class ConfigReader {
 public:
  ConfigReader(json data, std::string scope)
      : data_(std::move(data)), scope_(std::move(scope)) {
    if (!data_.is_object()) throw ConfigError(scope_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return data_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!data_.contains(key)) return fallback;
    used_.insert(key);
    try {
      return data_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(scope_ + "." + key + ": wrong value type");
    }
  }

  template <typename T>
  T require(const std::string& key) {
    if (!data_.contains(key)) {
      throw ConfigError(scope_ + ": missing required key \"" + key + "\"");
    }
    return get<T>(key, T{});
  }

  ConfigReader section(const std::string& key) {
    used_.insert(key);
    json sub = data_.contains(key) ? data_.at(key) : json::object();
    return ConfigReader(std::move(sub), scope_ + "." + key);
  }

  void finish() const {
    for (const auto& item : data_.items()) {
      if (!used_.count(item.key())) {
        throw ConfigError(scope_ + ": unknown config key \"" + item.key() + "\"");
      }
    }
  }

 private:
  json data_;
  std::set<std::string> used_;
  std::string scope_;
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << body;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// resolved_config.json carries everything that shaped the run; run_meta.json
// is the only output with a timestamp, keeping the rest rerun-stable.
void write_run_files(const fs::path& dir, const std::string& command,
                     const json& resolved) {
  write_text(dir / "resolved_config.json", resolved.dump(2) + "\n");
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  json meta{{"command", command}, {"generated_at", stamp}};
  write_text(dir / "run_meta.json", meta.dump(2) + "\n");
}

// --- synth ---------------------------------------------------------------------------

// Salt for the noise stream so flips are not correlated with the world draw
// that consumed the raw seed (splitmix64's golden-gamma constant).
constexpr std::uint64_t kNoiseSeedSalt = 0x9E3779B97F4A7C15ull;

int cmd_synth(json cfg) {
  ConfigReader r(std::move(cfg), "synth");
  SynthSpec spec;
  spec.n_relations = r.get<std::int64_t>("n_relations", spec.n_relations);
  spec.n_entity_types = r.get<std::int64_t>("n_entity_types", spec.n_entity_types);
  spec.negative_ratio = r.get<double>("negative_ratio", spec.negative_ratio);
  spec.templates_per_relation =
      r.get<std::int64_t>("templates_per_relation", spec.templates_per_relation);
  spec.type_determines_relation =
      r.get<bool>("type_determines_relation", spec.type_determines_relation);
  spec.noise_rate = r.get<double>("noise_rate", spec.noise_rate);
  spec.seed = r.get<std::uint64_t>("seed", spec.seed);
  spec.size = r.get<std::int64_t>("size", spec.size);
  spec.split = r.get<std::string>("split", spec.split);
  spec.surface_pool = r.get<std::int64_t>("surface_pool", spec.surface_pool);
  const std::string out = r.require<std::string>("out");
  r.finish();

  // All generation happens before the first write: an invalid spec leaves no
  // partial files behind.
  Corpus corpus = generate_synthetic(spec);
  std::vector<LabelFlip> flips;
  if (spec.noise_rate > 0.0) {
    auto noised = inject_label_noise(corpus, spec.noise_rate, spec.seed ^ kNoiseSeedSalt);
    corpus = std::move(noised.first);
    flips = std::move(noised.second);
  }

  fs::create_directories(out);
  save_corpus_jsonl(corpus, (fs::path(out) / "corpus.jsonl").string());
  if (spec.noise_rate > 0.0) {
    save_flip_log_csv(flips, (fs::path(out) / "flips.csv").string());
  }
  DatasetStats stats = dataset_stats(corpus);
  json stats_json{{"n_relations", stats.n_relations},
                  {"n_entity_types", stats.n_entity_types},
                  {"size", stats.size},
                  {"negative_fraction", stats.negative_fraction}};
  write_text(fs::path(out) / "stats.json", stats_json.dump(2) + "\n");

  json resolved{{"n_relations", spec.n_relations},
                {"n_entity_types", spec.n_entity_types},
                {"negative_ratio", spec.negative_ratio},
                {"templates_per_relation", spec.templates_per_relation},
                {"type_determines_relation", spec.type_determines_relation},
                {"noise_rate", spec.noise_rate},
                {"seed", spec.seed},
                {"size", spec.size},
                {"split", spec.split},
                {"surface_pool", spec.surface_pool},
                {"out", out}};
  write_run_files(out, "synth", resolved);
  return 0;
}

// --- train ---------------------------------------------------------------------------

json encoder_json(const EncoderConfig& e) {
  return json{{"layers", e.layers},
              {"d", e.d},
              {"heads", e.heads},
              {"ffn", e.ffn},
              {"max_len", e.max_len}};
}

json head_json(const HeadConfig& h) {
  return json{{"n_hid", h.n_hid},
              {"hidden_d", h.hidden_d},
              {"out_d", h.out_d},
              {"iterations", h.iterations}};
}

json decoder_json(const DecoderHeadConfig& d) {
  return json{{"layers", d.layers},
              {"heads", d.heads},
              {"max_target_len", d.max_target_len}};
}

// Reads the model-shaped keys out of a train run's resolved config so eval
// and analyze can rebuild the exact architecture.
ModelConfig model_config_from_resolved(const json& rc, const std::string& origin) {
  try {
    ModelConfig mc;
    mc.heads = HeadSet::parse(rc.at("heads").get<std::string>());
    mc.config_kind = parse_config_kind(rc.at("sentence_config").get<std::string>());
    mc.seed = rc.at("seed").get<std::uint64_t>();
    const json& e = rc.at("encoder");
    mc.encoder = EncoderConfig{e.at("layers").get<std::int64_t>(),
                               e.at("d").get<std::int64_t>(),
                               e.at("heads").get<std::int64_t>(),
                               e.at("ffn").get<std::int64_t>(),
                               e.at("max_len").get<std::int64_t>()};
    const json& h = rc.at("head");
    mc.head = HeadConfig{h.at("n_hid").get<std::int64_t>(),
                         h.at("hidden_d").get<std::int64_t>(),
                         h.at("out_d").get<std::int64_t>(),
                         h.at("iterations").get<std::int64_t>()};
    const json& d = rc.at("decoder");
    mc.decoder = DecoderHeadConfig{d.at("layers").get<std::int64_t>(),
                                   d.at("heads").get<std::int64_t>(),
                                   d.at("max_target_len").get<std::int64_t>()};
    return mc;
  } catch (const json::exception& e) {
    throw ConfigError(origin + " does not look like a train resolved config: " +
                      e.what());
  }
}

std::unique_ptr<Model> build_model(const Vocabulary& vocab,
                                   const std::vector<std::string>& relations,
                                   const ModelConfig& mc,
                                   const std::string& states_path) {
  if (states_path.empty()) {
    return std::make_unique<Model>(vocab, relations, mc);
  }
  auto states = std::make_shared<HiddenStateFile>(HiddenStateFile::open(states_path));
  return std::make_unique<Model>(vocab, relations, mc, std::move(states));
}

int cmd_train(json cfg) {
  ConfigReader r(std::move(cfg), "train");
  const std::string corpus_path = r.require<std::string>("corpus");
  const std::string out = r.require<std::string>("out");

  ModelConfig mc;
  mc.heads = HeadSet::parse(r.get<std::string>("heads", "h3"));
  mc.config_kind = parse_config_kind(r.get<std::string>("sentence_config", "mix"));
  if (mc.config_kind == SentenceConfigKind::Mask && mc.heads.decoder) {
    throw std::invalid_argument(
        "the decoder cannot be trained on the mask configuration: masked "
        "sentences leave it no entity tokens to emit");
  }
  mc.seed = r.get<std::uint64_t>("seed", 0);
  {
    ConfigReader e = r.section("encoder");
    mc.encoder.layers = e.get<std::int64_t>("layers", mc.encoder.layers);
    mc.encoder.d = e.get<std::int64_t>("d", mc.encoder.d);
    mc.encoder.heads = e.get<std::int64_t>("heads", mc.encoder.heads);
    mc.encoder.ffn = e.get<std::int64_t>("ffn", mc.encoder.ffn);
    mc.encoder.max_len = e.get<std::int64_t>("max_len", mc.encoder.max_len);
    e.finish();
  }
  {
    ConfigReader h = r.section("head");
    mc.head.n_hid = h.get<std::int64_t>("n_hid", mc.head.n_hid);
    mc.head.hidden_d = h.get<std::int64_t>("hidden_d", mc.head.hidden_d);
    mc.head.out_d = h.get<std::int64_t>("out_d", mc.head.out_d);
    mc.head.iterations = h.get<std::int64_t>("iterations", mc.head.iterations);
    h.finish();
  }
  {
    ConfigReader d = r.section("decoder");
    mc.decoder.layers = d.get<std::int64_t>("layers", mc.decoder.layers);
    mc.decoder.heads = d.get<std::int64_t>("heads", mc.decoder.heads);
    mc.decoder.max_target_len =
        d.get<std::int64_t>("max_target_len", mc.decoder.max_target_len);
    d.finish();
  }

  const std::string states_path = r.get<std::string>("states", "");
  TrainConfig tc;
  tc.batch_size = r.get<std::int64_t>("batch_size", tc.batch_size);
  // Frozen file-backed states want a much smaller step than a jointly trained
  // encoder; pick the default by mode, explicit config always wins.
  tc.learning_rate =
      r.get<double>("learning_rate", states_path.empty() ? 1e-3 : 1e-5);
  tc.epochs = r.get<std::int64_t>("epochs", tc.epochs);
  tc.seed = r.get<std::uint64_t>("train_seed", mc.seed);
  tc.early_stop_train_micro =
      r.get<double>("early_stop_train_micro", tc.early_stop_train_micro);
  const std::string init_path = r.get<std::string>("init", "");
  r.finish();

  Corpus corpus = load_corpus_jsonl(corpus_path);
  Vocabulary vocab = build_vocabulary(corpus, mc.config_kind);
  std::unique_ptr<Model> model = build_model(vocab, corpus.relations, mc, states_path);
  if (!init_path.empty()) load_checkpoint(init_path, *model);

  TrainTrace trace = model->train(corpus, tc);

  fs::create_directories(out);
  vocab.save((fs::path(out) / "vocab.json").string());
  save_checkpoint((fs::path(out) / "model.capk").string(), *model);
  std::string csv = "epoch,mean_loss,train_micro_f1\n";
  for (const EpochStats& s : trace.epochs) {
    csv += std::to_string(s.epoch) + "," + fmt_double(s.mean_loss) + "," +
           fmt_double(s.train_micro_f1) + "\n";
  }
  write_text(fs::path(out) / "trace.csv", csv);

  json resolved{{"corpus", corpus_path},
                {"out", out},
                {"heads", mc.heads.to_string()},
                {"sentence_config", config_kind_name(mc.config_kind)},
                {"seed", mc.seed},
                {"encoder", encoder_json(mc.encoder)},
                {"head", head_json(mc.head)},
                {"decoder", decoder_json(mc.decoder)},
                {"states", states_path},
                {"init", init_path},
                {"batch_size", tc.batch_size},
                {"learning_rate", tc.learning_rate},
                {"epochs", tc.epochs},
                {"train_seed", tc.seed},
                {"early_stop_train_micro", tc.early_stop_train_micro}};
  write_run_files(out, "train", resolved);
  return 0;
}

// --- eval ----------------------------------------------------------------------------

std::unique_ptr<Model> rebuild_model(const std::string& model_dir, bool load_weights) {
  const fs::path dir(model_dir);
  json rc = load_config_file((dir / "resolved_config.json").string());
  ModelConfig mc = model_config_from_resolved(rc, (dir / "resolved_config.json").string());
  Vocabulary vocab = Vocabulary::load((dir / "vocab.json").string());
  const std::string states_path = rc.value("states", "");
  std::unique_ptr<Model> model = build_model(vocab, vocab.relations(), mc, states_path);
  if (load_weights) load_checkpoint((dir / "model.capk").string(), *model);
  return model;
}

int cmd_eval(json cfg) {
  ConfigReader r(std::move(cfg), "eval");
  const std::string model_dir = r.require<std::string>("model_dir");
  const std::string corpus_path = r.require<std::string>("corpus");
  const std::string out = r.require<std::string>("out");
  r.finish();

  std::unique_ptr<Model> model = rebuild_model(model_dir, /*load_weights=*/true);
  Corpus corpus = load_corpus_jsonl(corpus_path);
  if (corpus.instances.empty()) {
    throw std::runtime_error("evaluation corpus is empty: " + corpus_path);
  }
  auto [metrics, records] = model->evaluate(corpus);

  fs::create_directories(out);
  json mj{{"micro_f1", metrics.micro_f1},
          {"macro_f1", metrics.macro_f1},
          {"correct", metrics.correct},
          {"total", metrics.total},
          {"per_relation_f1", metrics.per_relation_f1}};
  write_text(fs::path(out) / "metrics.json", mj.dump(2) + "\n");
  save_predictions_csv(records, (fs::path(out) / "predictions.csv").string());
  save_predictions_jsonl(records, (fs::path(out) / "predictions.jsonl").string());

  json resolved{{"model_dir", model_dir}, {"corpus", corpus_path}, {"out", out}};
  write_run_files(out, "eval", resolved);
  return 0;
}

// --- analyze -------------------------------------------------------------------------

int cmd_analyze(json cfg) {
  ConfigReader r(std::move(cfg), "analyze");
  const std::string model_dir = r.require<std::string>("model_dir");
  const std::string corpus_path = r.require<std::string>("corpus");
  const std::string out = r.require<std::string>("out");
  const std::int64_t max_pairs = r.get<std::int64_t>("max_pairs", 200);
  const std::uint64_t seed = r.get<std::uint64_t>("seed", 0);
  r.finish();

  Corpus corpus = load_corpus_jsonl(corpus_path);
  // Same architecture twice: freshly initialized vs the trained checkpoint,
  // probed on one shared pair list.
  std::unique_ptr<Model> before = rebuild_model(model_dir, /*load_weights=*/false);
  std::unique_ptr<Model> after = rebuild_model(model_dir, /*load_weights=*/true);

  std::vector<AnalogyPair> pairs = build_analogy_pairs(corpus, max_pairs, seed);

  std::map<std::string, const REInstance*> by_id;
  for (const REInstance& inst : corpus.instances) by_id[inst.id] = &inst;
  auto provider_for = [&by_id](Model& model) {
    return EmbeddingProvider([&by_id, &model](const std::string& id) {
      return model.entity_embeddings(*by_id.at(id));
    });
  };

  fs::create_directories(out);
  const std::string after_tag = "after-" + after->config().heads.to_string();
  CategoryMatrix before_cos, after_cos;
  for (PairMetric metric : {PairMetric::cosine, PairMetric::euclidean}) {
    const std::string name = metric == PairMetric::cosine ? "cosine" : "euclidean";
    CategoryMatrix mb = category_matrix(pairs, provider_for(*before), metric, "before");
    CategoryMatrix ma = category_matrix(pairs, provider_for(*after), metric, after_tag);
    render_heatmap(mb, (fs::path(out) / ("before_" + name)).string());
    render_heatmap(ma, (fs::path(out) / ("after_" + name)).string());
    if (metric == PairMetric::cosine) {
      before_cos = mb;
      after_cos = ma;
    }
  }

  std::string pairs_csv = "id_i,id_j,polarity\n";
  for (const AnalogyPair& p : pairs) {
    pairs_csv += p.id_i + "," + p.id_j + "," +
                 (p.polarity == Polarity::positive ? "positive" : "negative") + "\n";
  }
  write_text(fs::path(out) / "pairs.csv", pairs_csv);

  // Last-layer positive-vs-negative separation, the number the probe is after.
  auto gaps = [](const CategoryMatrix& m) {
    const auto& last = m.values.back();
    return json{{"heads", last[0] - last[1]}, {"tails", last[2] - last[3]}};
  };
  json gap_json{{"metric", "cosine"},
                {"before", gaps(before_cos)},
                {"after", gaps(after_cos)}};
  write_text(fs::path(out) / "gaps.json", gap_json.dump(2) + "\n");

  json resolved{{"model_dir", model_dir},
                {"corpus", corpus_path},
                {"out", out},
                {"max_pairs", max_pairs},
                {"seed", seed}};
  write_run_files(out, "analyze", resolved);
  return 0;
}

// --- mine ----------------------------------------------------------------------------

std::vector<PredictionRecord> load_predictions_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open predictions file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "id,gold,pred") {
    throw std::runtime_error("predictions file missing the id,gold,pred header: " +
                             path);
  }
  std::vector<PredictionRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) {
      throw std::runtime_error("malformed predictions row: " + line);
    }
    PredictionRecord rec;
    rec.id = line.substr(0, c1);
    rec.gold = line.substr(c1 + 1, c2 - c1 - 1);
    rec.predicted = line.substr(c2 + 1);
    records.push_back(std::move(rec));
  }
  return records;
}

int cmd_mine(json cfg) {
  ConfigReader r(std::move(cfg), "mine");
  const std::string predictions_path = r.require<std::string>("predictions");
  const std::string corpus_path = r.require<std::string>("corpus");
  const std::string out = r.require<std::string>("out");
  const std::string flips_path = r.get<std::string>("flips", "");
  const std::int64_t k = r.get<std::int64_t>("samples_per_category", 5);
  const std::uint64_t seed = r.get<std::uint64_t>("seed", 0);
  const SentenceConfigKind kind =
      parse_config_kind(r.get<std::string>("sentence_config", "mix"));
  r.finish();

  std::vector<PredictionRecord> records = load_predictions_csv(predictions_path);
  Corpus corpus = load_corpus_jsonl(corpus_path);
  std::vector<DisagreementCategory> categories = mine_disagreements(records);

  fs::create_directories(out);
  save_category_samples_jsonl(categories, corpus, kind, k, seed,
                              (fs::path(out) / "samples.jsonl").string());
  save_disagreements_csv(categories, (fs::path(out) / "disagreements.csv").string());

  if (!flips_path.empty()) {
    std::vector<LabelFlip> flips = load_flip_log_csv(flips_path);
    NoiseRecoveryReport report = noise_recovery_report(categories, flips);
    json rj{{"flipped", report.flipped},
            {"disagreed", report.disagreed},
            {"overlap", report.overlap},
            {"precision", report.precision ? json(*report.precision) : json()},
            {"recall", report.recall ? json(*report.recall) : json()}};
    write_text(fs::path(out) / "recovery.json", rj.dump(2) + "\n");
  }

  json resolved{{"predictions", predictions_path},
                {"corpus", corpus_path},
                {"out", out},
                {"flips", flips_path},
                {"samples_per_category", k},
                {"seed", seed},
                {"sentence_config", config_kind_name(kind)}};
  write_run_files(out, "mine", resolved);
  return 0;
}

// --- render --------------------------------------------------------------------------

int cmd_render(json cfg) {
  ConfigReader r(std::move(cfg), "render");
  const std::string matrix_path = r.require<std::string>("matrix");
  const std::string out = r.require<std::string>("out");
  r.finish();

  CategoryMatrix matrix = parse_category_matrix_csv(matrix_path);
  const fs::path base(out);
  if (!base.parent_path().empty()) fs::create_directories(base.parent_path());
  render_heatmap(matrix, out);

  json resolved{{"matrix", matrix_path}, {"out", out}};
  const fs::path dir = base.parent_path().empty() ? fs::path(".") : base.parent_path();
  write_run_files(dir, "render", resolved);
  return 0;
}

// --- option plumbing -------------------------------------------------------------------

struct CommandLine {
  CLI::App* cmd = nullptr;
  std::string config_path;
  std::vector<std::string> sets;
  json flags = json::object();

  void attach(CLI::App* c) {
    cmd = c;
    c->add_option("--config", config_path, "JSON config file");
    c->add_option("--set", sets,
                  "override a config key, e.g. --set encoder.layers=2 (repeatable)");
  }
  void str(const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { flags[key] = v; }, help);
  }
  void num(const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::int64_t>(
        flag, [this, key](std::int64_t v) { flags[key] = v; }, help);
  }
  void real(const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<double>(
        flag, [this, key](double v) { flags[key] = v; }, help);
  }
};

int run_command(const std::string& name, const CommandLine& line, int (*fn)(json)) {
  try {
    json cfg = json::object();
    if (!line.config_path.empty()) cfg = load_config_file(line.config_path);
    if (!cfg.is_object()) throw ConfigError("config root must be a JSON object");
    for (const std::string& s : line.sets) apply_override(cfg, s);
    for (const auto& item : line.flags.items()) cfg[item.key()] = item.value();
    return fn(std::move(cfg));
  } catch (const ConfigError& e) {
    std::cerr << "caproute " << name << ": " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "caproute " << name << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "caproute " << name << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relation extraction with dynamic routing over hidden states"};
  app.require_subcommand(1);

  CommandLine synth;
  synth.attach(app.add_subcommand("synth", "generate a synthetic corpus"));
  synth.str("--out", "out", "output directory");
  synth.num("--seed", "seed", "world + draw seed");
  synth.num("--size", "size", "number of instances");
  synth.str("--split", "split", "split name (train/dev/test)");
  synth.real("--negative-ratio", "negative_ratio", "fraction of no_relation instances");
  synth.real("--noise-rate", "noise_rate", "fraction of labels to flip");

  CommandLine train;
  train.attach(app.add_subcommand("train", "train a model on a JSON-lines corpus"));
  train.str("--corpus", "corpus", "training corpus (JSON lines)");
  train.str("--out", "out", "output directory");
  train.str("--heads", "heads", "comma list of h1,h2,h3,decoder");
  train.str("--sentence-config", "sentence_config", "abstract|mask|entities|mix");
  train.num("--epochs", "epochs", "training epochs");
  train.num("--seed", "seed", "model init seed");
  train.str("--states", "states", "frozen hidden-state container");
  train.str("--init", "init", "checkpoint to resume from");

  CommandLine eval;
  eval.attach(app.add_subcommand("eval", "score a trained model"));
  eval.str("--model-dir", "model_dir", "directory written by train");
  eval.str("--corpus", "corpus", "evaluation corpus (JSON lines)");
  eval.str("--out", "out", "output directory");

  CommandLine analyze;
  analyze.attach(
      app.add_subcommand("analyze", "entity-similarity matrices before/after training"));
  analyze.str("--model-dir", "model_dir", "directory written by train");
  analyze.str("--corpus", "corpus", "corpus to draw analogy pairs from");
  analyze.str("--out", "out", "output directory");
  analyze.num("--max-pairs", "max_pairs", "cap per polarity");
  analyze.num("--seed", "seed", "pair sampling seed");

  CommandLine mine;
  mine.attach(app.add_subcommand("mine", "bucket gold/prediction disagreements"));
  mine.str("--predictions", "predictions", "predictions.csv from eval");
  mine.str("--corpus", "corpus", "corpus the predictions refer to");
  mine.str("--out", "out", "output directory");
  mine.str("--flips", "flips", "label-flip log to score recovery against");
  mine.num("--samples", "samples_per_category", "sampled sentences per category");
  mine.num("--seed", "seed", "sampling seed");

  CommandLine render;
  render.attach(app.add_subcommand("render", "re-render a heatmap from a matrix CSV"));
  render.str("--matrix", "matrix", "category-matrix CSV");
  render.str("--out", "out", "output base path (writes <out>.csv and <out>.ppm)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (synth.cmd->parsed()) return run_command("synth", synth, cmd_synth);
  if (train.cmd->parsed()) return run_command("train", train, cmd_train);
  if (eval.cmd->parsed()) return run_command("eval", eval, cmd_eval);
  if (analyze.cmd->parsed()) return run_command("analyze", analyze, cmd_analyze);
  if (mine.cmd->parsed()) return run_command("mine", mine, cmd_mine);
  if (render.cmd->parsed()) return run_command("render", render, cmd_render);
  return 2;  // unreachable: require_subcommand(1)
}
