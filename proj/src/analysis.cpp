#include "caproute/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace caproute {

std::vector<AnalogyPair> build_analogy_pairs(const Corpus& corpus,
                                             std::int64_t max_per_polarity,
                                             std::uint64_t seed) {
  if (max_per_polarity < 1) {
    throw std::invalid_argument("build_analogy_pairs: cap must be positive");
  }
  std::vector<const REInstance*> positives;
  std::set<std::string> relations;
  for (const auto& inst : corpus.instances) {
    if (inst.relation == kNoRelation) continue;
    positives.push_back(&inst);
    relations.insert(inst.relation);
  }
  if (positives.size() < 2) {
    throw std::invalid_argument("build_analogy_pairs: need at least 2 positive instances");
  }
  if (relations.size() < 2) {
    throw std::invalid_argument(
        "build_analogy_pairs: a single-relation corpus admits no negative pairs");
  }

  std::vector<AnalogyPair> pos, neg;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    for (std::size_t j = i + 1; j < positives.size(); ++j) {
      const bool same = positives[i]->relation == positives[j]->relation;
      auto& bucket = same ? pos : neg;
      bucket.push_back(AnalogyPair{positives[i]->id, positives[j]->id,
                                   same ? Polarity::positive : Polarity::negative});
    }
  }

  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const auto cap = static_cast<std::size_t>(max_per_polarity);
  if (pos.size() > cap) pos.resize(cap);
  if (neg.size() > cap) neg.resize(cap);

  std::vector<AnalogyPair> out = std::move(pos);
  out.insert(out.end(), neg.begin(), neg.end());
  return out;
}

std::vector<std::vector<double>> slice_entity_embedding(
    const HiddenStates& hs, const std::vector<std::int64_t>& span) {
  if (span.empty()) throw std::invalid_argument("slice_entity_embedding: empty span");
  std::vector<std::vector<double>> out;
  out.reserve(hs.layers.size());
  for (const Tensor& layer : hs.layers) {
    const std::int64_t n = layer.rows(), d = layer.cols();
    auto vals = layer.values();
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t pos : span) {
      if (pos < 0 || pos >= n) {
        throw std::out_of_range("slice_entity_embedding: span position out of range");
      }
      for (std::int64_t c = 0; c < d; ++c) {
        mean[static_cast<std::size_t>(c)] += vals[static_cast<std::size_t>(pos * d + c)];
      }
    }
    for (double& x : mean) x /= static_cast<double>(span.size());
    out.push_back(std::move(mean));
  }
  return out;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;  // degenerate zero vector
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("euclidean_distance: dimension mismatch");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

CategoryMatrix category_matrix(const std::vector<AnalogyPair>& pairs,
                               const EmbeddingProvider& provider, PairMetric metric,
                               std::string tag) {
  if (pairs.empty()) throw std::invalid_argument("category_matrix: no pairs");

  std::map<std::string, EntityEmbeddings> cache;
  auto embed = [&](const std::string& id) -> const EntityEmbeddings& {
    auto it = cache.find(id);
    if (it == cache.end()) it = cache.emplace(id, provider(id)).first;
    return it->second;
  };
  auto score = metric == PairMetric::cosine ? cosine_similarity : euclidean_distance;

  const std::size_t layers = embed(pairs.front().id_i).head.size();
  CategoryMatrix matrix;
  matrix.metric = metric;
  matrix.tag = std::move(tag);
  matrix.values.assign(layers, {0.0, 0.0, 0.0, 0.0});
  std::int64_t n_pos = 0, n_neg = 0;

  for (const auto& pair : pairs) {
    const EntityEmbeddings& a = embed(pair.id_i);
    const EntityEmbeddings& b = embed(pair.id_j);
    if (a.head.size() != layers || b.head.size() != layers) {
      throw std::invalid_argument("category_matrix: inconsistent layer counts");
    }
    const bool positive = pair.polarity == Polarity::positive;
    (positive ? n_pos : n_neg) += 1;
    const std::size_t head_col = positive ? 0 : 1;
    const std::size_t tail_col = positive ? 2 : 3;
    for (std::size_t l = 0; l < layers; ++l) {
      matrix.values[l][head_col] += score(a.head[l], b.head[l]);
      matrix.values[l][tail_col] += score(a.tail[l], b.tail[l]);
    }
  }
  for (auto& row : matrix.values) {
    if (n_pos > 0) {
      row[0] /= static_cast<double>(n_pos);
      row[2] /= static_cast<double>(n_pos);
    }
    if (n_neg > 0) {
      row[1] /= static_cast<double>(n_neg);
      row[3] /= static_cast<double>(n_neg);
    }
  }
  return matrix;
}

// --- heatmap rendering -----------------------------------------------------------

namespace {

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void render_heatmap(const CategoryMatrix& matrix, const std::string& base_path) {
  if (matrix.values.empty()) throw std::invalid_argument("render_heatmap: empty matrix");
  for (const auto& row : matrix.values) {
    for (double v : row) {
      if (!std::isfinite(v)) throw std::invalid_argument("render_heatmap: non-finite cell");
    }
  }

  std::ofstream csv(base_path + ".csv", std::ios::binary);
  if (!csv) throw std::runtime_error("render_heatmap: cannot write " + base_path + ".csv");
  csv << "layer,heads_pos,heads_neg,tails_pos,tails_neg\n";
  for (std::size_t l = 0; l < matrix.values.size(); ++l) {
    csv << l;
    for (double v : matrix.values[l]) csv << ',' << format_value(v);
    csv << '\n';
  }
  if (!csv) throw std::runtime_error("render_heatmap: write failed");

  double lo = matrix.values[0][0], hi = lo;
  for (const auto& row : matrix.values) {
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }

  constexpr int kCell = 24;  // pixels per matrix cell
  const int width = static_cast<int>(matrix.values.size()) * kCell;
  const int height = 4 * kCell;
  std::string pixels;
  pixels.reserve(static_cast<std::size_t>(width * height * 3));
  for (int y = 0; y < height; ++y) {
    const std::size_t category = static_cast<std::size_t>(y / kCell);
    for (int x = 0; x < width; ++x) {
      const std::size_t layer = static_cast<std::size_t>(x / kCell);
      const double v = matrix.values[layer][category];
      const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
      // Low values blue, high values red.
      const auto r = static_cast<unsigned char>(std::lround(40.0 + t * 190.0));
      const auto g = static_cast<unsigned char>(60);
      const auto b = static_cast<unsigned char>(std::lround(230.0 - t * 190.0));
      pixels.push_back(static_cast<char>(r));
      pixels.push_back(static_cast<char>(g));
      pixels.push_back(static_cast<char>(b));
    }
  }
  std::ofstream ppm(base_path + ".ppm", std::ios::binary);
  if (!ppm) throw std::runtime_error("render_heatmap: cannot write " + base_path + ".ppm");
  ppm << "P6\n" << width << ' ' << height << "\n255\n";
  ppm.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
  if (!ppm) throw std::runtime_error("render_heatmap: write failed");
}

CategoryMatrix parse_category_matrix_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("category matrix: cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != "layer,heads_pos,heads_neg,tails_pos,tails_neg") {
    throw std::runtime_error("category matrix: bad header in " + path);
  }
  CategoryMatrix matrix;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::array<double, 4> row{};
    if (!std::getline(ss, field, ',')) {
      throw std::runtime_error("category matrix: bad row in " + path);
    }
    if (std::stoll(field) != static_cast<std::int64_t>(matrix.values.size())) {
      throw std::runtime_error("category matrix: layers out of order in " + path);
    }
    for (auto& cell : row) {
      if (!std::getline(ss, field, ',')) {
        throw std::runtime_error("category matrix: bad row in " + path);
      }
      cell = std::stod(field);
    }
    matrix.values.push_back(row);
  }
  return matrix;
}

// --- disagreement mining ---------------------------------------------------------

std::vector<DisagreementCategory> mine_disagreements(
    const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw std::invalid_argument("mine_disagreements: no records");
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> buckets;
  for (const auto& rec : records) {
    if (rec.gold == rec.predicted) continue;
    buckets[{rec.gold, rec.predicted}].push_back(rec.id);
  }
  std::vector<DisagreementCategory> out;
  out.reserve(buckets.size());
  for (auto& [key, ids] : buckets) {
    DisagreementCategory cat;
    cat.gold = key.first;
    cat.predicted = key.second;
    cat.count = static_cast<std::int64_t>(ids.size());
    cat.member_ids = std::move(ids);
    out.push_back(std::move(cat));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.gold != b.gold) return a.gold < b.gold;
    return a.predicted < b.predicted;
  });
  return out;
}

std::vector<std::string> sample_category(const DisagreementCategory& category,
                                         std::int64_t k, std::uint64_t seed) {
  if (category.member_ids.empty()) {
    throw std::invalid_argument("sample_category: empty category");
  }
  if (k < 1) throw std::invalid_argument("sample_category: k must be positive");
  std::vector<std::string> pool = category.member_ids;
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  if (static_cast<std::int64_t>(pool.size()) > k) pool.resize(static_cast<std::size_t>(k));
  return pool;
}

NoiseRecoveryReport noise_recovery_report(
    const std::vector<DisagreementCategory>& categories,
    const std::vector<LabelFlip>& flips) {
  std::set<std::string> disagreed;
  for (const auto& cat : categories) {
    disagreed.insert(cat.member_ids.begin(), cat.member_ids.end());
  }
  std::set<std::string> flipped;
  for (const auto& flip : flips) flipped.insert(flip.id);

  NoiseRecoveryReport report;
  report.disagreed = static_cast<std::int64_t>(disagreed.size());
  report.flipped = static_cast<std::int64_t>(flipped.size());
  for (const auto& id : flipped) report.overlap += disagreed.count(id);
  if (report.disagreed > 0) {
    report.precision = static_cast<double>(report.overlap) / report.disagreed;
  }
  if (report.flipped > 0) {
    report.recall = static_cast<double>(report.overlap) / report.flipped;
  }
  return report;
}

void save_disagreements_csv(const std::vector<DisagreementCategory>& categories,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("disagreements: cannot write " + path);
  out << "gold,pred,count\n";
  for (const auto& cat : categories) {
    out << cat.gold << ',' << cat.predicted << ',' << cat.count << '\n';
  }
  if (!out) throw std::runtime_error("disagreements: write failed for " + path);
}

void save_category_samples_jsonl(std::vector<DisagreementCategory>& categories,
                                 const Corpus& corpus, SentenceConfigKind kind,
                                 std::int64_t k, std::uint64_t seed,
                                 const std::string& path) {
  std::map<std::string, const REInstance*> by_id;
  for (const auto& inst : corpus.instances) by_id[inst.id] = &inst;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("samples: cannot write " + path);
  for (auto& cat : categories) {
    cat.sample_ids = sample_category(cat, k, seed);
    for (const auto& id : cat.sample_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        throw std::invalid_argument("samples: id " + id + " not in the corpus");
      }
      nlohmann::json j;
      j["gold"] = cat.gold;
      j["pred"] = cat.predicted;
      j["id"] = id;
      j["text"] = render(*it->second, kind).text;
      out << j.dump() << '\n';
    }
  }
  if (!out) throw std::runtime_error("samples: write failed for " + path);
}

}  // namespace caproute
