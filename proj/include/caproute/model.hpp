#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "caproute/data.hpp"
#include "caproute/encoder.hpp"
#include "caproute/routing.hpp"
#include "caproute/tensor.hpp"

namespace caproute {

// Which experts take part. H1/H2/H3 feed the shared relation classifier; the
// decoder trains through its own sequence loss and predicts standalone.
struct HeadSet {
  bool h1 = false, h2 = false, h3 = false, decoder = false;

  bool any_routing() const { return h1 || h2 || h3; }
  bool empty() const { return !any_routing() && !decoder; }

  // Comma-separated names, case-insensitive: "h1,h3", "decoder", ...
  static HeadSet parse(const std::string& names);
  std::string to_string() const;
};

struct DecoderHeadConfig {
  std::int64_t layers = 2;
  std::int64_t heads = 4;
  std::int64_t max_target_len = 24;
  // Model dim always equals the encoder output dim.
};

struct ModelConfig {
  EncoderConfig encoder;
  HeadConfig head;  // shared stage geometry for H1/H2/H3
  DecoderHeadConfig decoder;
  HeadSet heads{false, false, true, false};  // H3 by default
  SentenceConfigKind config_kind = SentenceConfigKind::Mix;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  std::int64_t batch_size = 64;  // callers drop to 24 when the decoder is on
  double learning_rate = 1e-3;   // 1e-5 is the right scale for frozen file states
  std::int64_t epochs = 6;
  std::uint64_t seed = 0;
  // Stop once the train-split micro F1 reaches this value; <= 0 disables.
  double early_stop_train_micro = -1.0;
};

struct EpochStats {
  std::int64_t epoch = 0;
  double mean_loss = 0.0;
  double train_micro_f1 = 0.0;
};

struct TrainTrace {
  std::vector<EpochStats> epochs;
};

struct PredictionRecord {
  std::string id;
  std::string gold;
  std::string predicted;
  std::vector<double> logits;  // one per relation, model order; empty for decoder-only
  // Aggregated credit column sums per head ("h1" -> {positive, negative}).
  std::map<std::string, std::vector<double>> credit_summary;
};

struct Metrics {
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::map<std::string, double> per_relation_f1;  // positive relations only
  std::int64_t correct = 0;
  std::int64_t total = 0;
};

// TACRED-style scoring: "no_relation" is the negative class. Micro F1 counts
// TP/FP/FN over positive predictions and gold labels; macro F1 averages
// per-relation F1 over the positive relations present in gold or predictions.
Metrics compute_metrics(const std::vector<PredictionRecord>& records);

struct ForwardOutput {
  Tensor logits;  // 1 x |R|
  std::map<std::string, std::vector<double>> credit_summary;
};

struct EntityEmbeddings {
  // Per layer (h rows), the mean-pooled vector over the entity's surface
  // tokens in the rendered sequence.
  std::vector<std::vector<double>> head, tail;
};

// Builds the token vocabulary from the rendered train split plus one
// relation token per label (the decoder's target alphabet).
Vocabulary build_vocabulary(const Corpus& corpus, SentenceConfigKind kind);

// Target sequence for the decoder: subject tokens, SEP, object tokens, SEP,
// relation token, EOS. Throws when the result exceeds max_len.
std::vector<std::int64_t> decoder_target(const REInstance& inst, const Vocabulary& vocab,
                                         std::int64_t max_len);

class Model {
 public:
  // Toy-encoder model: the backbone is trained jointly.
  Model(Vocabulary vocab, std::vector<std::string> relations, ModelConfig cfg);
  // File-backed model: hidden states come frozen from a container keyed by
  // instance id; only heads/classifier/decoder have parameters.
  Model(Vocabulary vocab, std::vector<std::string> relations, ModelConfig cfg,
        std::shared_ptr<HiddenStateFile> states);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<std::string>& relations() const { return relations_; }
  bool file_backed() const { return states_ != nullptr; }
  std::int64_t classifier_input_dim() const { return classifier_dim_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  // Logits from the routing heads (requires at least one of H1/H2/H3).
  ForwardOutput forward(const REInstance& inst);
  // Classifier cross-entropy plus, when the decoder is on, its teacher-forced
  // token cross-entropy (weight 1).
  Tensor instance_loss(const REInstance& inst);
  Tensor batch_loss(const std::vector<const REInstance*>& batch);

  // Constrained argmax over relation tokens at the relation slot.
  std::string decoder_predict(const REInstance& inst);

  PredictionRecord predict(const REInstance& inst);
  std::pair<Metrics, std::vector<PredictionRecord>> evaluate(const Corpus& corpus);

  TrainTrace train(const Corpus& corpus, const TrainConfig& tc);

  // Per-layer mean-pooled vectors over the subject/object surface tokens of
  // the rendered sentence (rendered positions, markers excluded).
  EntityEmbeddings entity_embeddings(const REInstance& inst);

  // Checkpointing needs the optimizer state for exact resumption.
  friend void save_checkpoint(const std::string& path, const Model& model);
  friend void load_checkpoint(const std::string& path, Model& model);

 private:
  struct Prepared;
  Prepared prepare(const REInstance& inst) const;
  HiddenStates states_for(const Prepared& prep) const;
  Tensor head_vector(const HiddenStates& hs, const Prepared& prep, ForwardOutput* out);
  Tensor decoder_logits(const HiddenStates& hs, const std::vector<std::int64_t>& input_ids);
  Tensor decoder_loss(const HiddenStates& hs, const std::vector<std::int64_t>& target);
  void ensure_adam();

  Vocabulary vocab_;
  std::vector<std::string> relations_;
  std::map<std::string, std::int64_t> relation_index_;
  ModelConfig cfg_;
  std::shared_ptr<HiddenStateFile> states_;

  std::unique_ptr<ToyEncoder> encoder_;
  std::optional<RoutingHead> head1_, head2_, head3_;
  std::vector<Parameter> decoder_params_;
  std::int64_t classifier_dim_ = 0;
  Parameter cls_w_, cls_b_;

  std::vector<AdamState> adam_;  // aligned with parameters(); empty until training
};

void save_checkpoint(const std::string& path, const Model& model);
// Restores parameter values and optimizer state into an identically
// constructed model; throws on any name/shape mismatch.
void load_checkpoint(const std::string& path, Model& model);

void save_predictions_csv(const std::vector<PredictionRecord>& records,
                          const std::string& path);
void save_predictions_jsonl(const std::vector<PredictionRecord>& records,
                            const std::string& path);

}  // namespace caproute
