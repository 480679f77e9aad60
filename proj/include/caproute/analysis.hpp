#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "caproute/data.hpp"
#include "caproute/hidden_states.hpp"
#include "caproute/model.hpp"

namespace caproute {

enum class Polarity { positive, negative };

// Analogy e_i^h : e_i^t :: e_j^h : e_j^t between two labelled instances.
// Positive iff both carry the same (non-negative) relation.
struct AnalogyPair {
  std::string id_i, id_j;
  Polarity polarity = Polarity::positive;
};

// Uniform sampling without replacement, up to the cap per polarity, over
// positive-labelled instances. Needs >= 2 positive instances and >= 2
// distinct positive relations (otherwise no negatives exist).
std::vector<AnalogyPair> build_analogy_pairs(const Corpus& corpus,
                                             std::int64_t max_per_polarity,
                                             std::uint64_t seed);

// Mean pool over the span's token vectors, separately per layer.
std::vector<std::vector<double>> slice_entity_embedding(
    const HiddenStates& hs, const std::vector<std::int64_t>& span);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);
double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b);

enum class PairMetric { cosine, euclidean };

// Per layer, the mean metric between head (resp. tail) embeddings over the
// pairs of each polarity. Column order: heads+, heads-, tails+, tails-.
struct CategoryMatrix {
  PairMetric metric = PairMetric::cosine;
  std::string tag;  // "before" / "after-h3" / "after-decoder" / ...
  std::vector<std::array<double, 4>> values;  // one row per layer

  std::int64_t layers() const { return static_cast<std::int64_t>(values.size()); }
};

using EmbeddingProvider = std::function<EntityEmbeddings(const std::string& id)>;

CategoryMatrix category_matrix(const std::vector<AnalogyPair>& pairs,
                               const EmbeddingProvider& provider, PairMetric metric,
                               std::string tag);

// Writes <base>.csv (header "layer,heads_pos,heads_neg,tails_pos,tails_neg")
// and <base>.ppm, a binary pixmap with one 24x24 block per cell: layers run
// left to right, categories top to bottom, colors ramp blue -> red linearly
// between the matrix minimum and maximum.
void render_heatmap(const CategoryMatrix& matrix, const std::string& base_path);

// Reads the CSV half back; metric and tag are not stored in the file.
CategoryMatrix parse_category_matrix_csv(const std::string& path);

// One (gold, predicted) confusion bucket across mispredicted records.
struct DisagreementCategory {
  std::string gold, predicted;
  std::int64_t count = 0;
  std::vector<std::string> member_ids;  // record order
  std::vector<std::string> sample_ids;  // filled when samples are drawn
};

// Buckets records with gold != predicted, sorted by count descending, then
// (gold, predicted) lexicographically.
std::vector<DisagreementCategory> mine_disagreements(
    const std::vector<PredictionRecord>& records);

// min(k, count) member ids, uniform without replacement, deterministic.
std::vector<std::string> sample_category(const DisagreementCategory& category,
                                         std::int64_t k, std::uint64_t seed);

struct NoiseRecoveryReport {
  // Unset when the denominator is empty: precision needs disagreements,
  // recall needs a nonempty flip log.
  std::optional<double> precision;
  std::optional<double> recall;
  std::int64_t flipped = 0;
  std::int64_t disagreed = 0;
  std::int64_t overlap = 0;
};

// How well the disagreement set points back at injected label flips.
NoiseRecoveryReport noise_recovery_report(
    const std::vector<DisagreementCategory>& categories,
    const std::vector<LabelFlip>& flips);

// "gold,pred,count" rows in mined order.
void save_disagreements_csv(const std::vector<DisagreementCategory>& categories,
                            const std::string& path);

// Draws k samples per category and writes one JSON line per sampled instance
// with its rendered sentence, for manual inspection.
void save_category_samples_jsonl(std::vector<DisagreementCategory>& categories,
                                 const Corpus& corpus, SentenceConfigKind kind,
                                 std::int64_t k, std::uint64_t seed,
                                 const std::string& path);

}  // namespace caproute
