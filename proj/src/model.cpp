#include "caproute/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace caproute {

// --- head set ----------------------------------------------------------------------

HeadSet HeadSet::parse(const std::string& names) {
  HeadSet hs;
  std::istringstream ss(names);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::string token;
    for (char c : part) {
      if (!std::isspace(static_cast<unsigned char>(c))) {
        token += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      }
    }
    if (token.empty()) continue;
    bool* slot = nullptr;
    if (token == "h1") slot = &hs.h1;
    else if (token == "h2") slot = &hs.h2;
    else if (token == "h3") slot = &hs.h3;
    else if (token == "decoder") slot = &hs.decoder;
    else throw std::invalid_argument("unknown head: " + token);
    if (*slot) throw std::invalid_argument("duplicate head: " + token);
    *slot = true;
  }
  if (hs.empty()) throw std::invalid_argument("head set must not be empty");
  return hs;
}

std::string HeadSet::to_string() const {
  std::string out;
  auto append = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  append(h1, "h1");
  append(h2, "h2");
  append(h3, "h3");
  append(decoder, "decoder");
  return out;
}

// --- metrics ----------------------------------------------------------------------

Metrics compute_metrics(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw std::invalid_argument("compute_metrics: no records");
  struct Counts {
    std::int64_t tp = 0, fp = 0, fn = 0;
  };
  std::map<std::string, Counts> per_relation;
  Counts micro;
  Metrics metrics;
  metrics.total = static_cast<std::int64_t>(records.size());
  for (const auto& rec : records) {
    if (rec.predicted == rec.gold) ++metrics.correct;
    const bool gold_pos = rec.gold != kNoRelation;
    const bool pred_pos = rec.predicted != kNoRelation;
    if (gold_pos) {
      if (rec.predicted == rec.gold) {
        ++micro.tp;
        ++per_relation[rec.gold].tp;
      } else {
        ++micro.fn;
        ++per_relation[rec.gold].fn;
        if (pred_pos) {
          ++micro.fp;
          ++per_relation[rec.predicted].fp;
        }
      }
    } else if (pred_pos) {
      ++micro.fp;
      ++per_relation[rec.predicted].fp;
    }
  }
  auto f1_of = [](const Counts& c) {
    const double p = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
    const double r = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
    return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
  };
  metrics.micro_f1 = f1_of(micro);
  double macro_sum = 0.0;
  for (const auto& [rel, counts] : per_relation) {
    const double f1 = f1_of(counts);
    metrics.per_relation_f1[rel] = f1;
    macro_sum += f1;
  }
  metrics.macro_f1 = per_relation.empty()
                         ? 0.0
                         : macro_sum / static_cast<double>(per_relation.size());
  return metrics;
}

// --- vocabulary / decoder target ------------------------------------------------------

Vocabulary build_vocabulary(const Corpus& corpus, SentenceConfigKind kind) {
  std::vector<std::string> texts;
  texts.reserve(corpus.instances.size());
  for (const auto& inst : corpus.instances) texts.push_back(render(inst, kind).text);
  return Vocabulary::build(texts, corpus.relations);
}

std::vector<std::int64_t> decoder_target(const REInstance& inst, const Vocabulary& vocab,
                                         std::int64_t max_len) {
  validate_instance(inst);
  std::vector<std::int64_t> ids;
  for (std::int64_t i = inst.subj_start; i <= inst.subj_end; ++i) {
    ids.push_back(vocab.id_of(inst.tokens[static_cast<std::size_t>(i)]));
  }
  ids.push_back(Vocabulary::kSep);
  for (std::int64_t i = inst.obj_start; i <= inst.obj_end; ++i) {
    ids.push_back(vocab.id_of(inst.tokens[static_cast<std::size_t>(i)]));
  }
  ids.push_back(Vocabulary::kSep);
  ids.push_back(vocab.relation_token_id(inst.relation));
  ids.push_back(Vocabulary::kEos);
  if (static_cast<std::int64_t>(ids.size()) > max_len) {
    throw std::invalid_argument("decoder target for " + inst.id + " exceeds max length " +
                                std::to_string(max_len));
  }
  return ids;
}

// --- model ------------------------------------------------------------------------

namespace {

std::vector<std::string> normalize_relations(std::vector<std::string> relations) {
  std::sort(relations.begin(), relations.end());
  relations.erase(std::unique(relations.begin(), relations.end()), relations.end());
  if (relations.size() < 2) {
    throw std::invalid_argument("model needs at least 2 relation labels");
  }
  return relations;
}

}  // namespace

Model::Model(Vocabulary vocab, std::vector<std::string> relations, ModelConfig cfg)
    : Model(std::move(vocab), std::move(relations), std::move(cfg), nullptr) {}

Model::Model(Vocabulary vocab, std::vector<std::string> relations, ModelConfig cfg,
             std::shared_ptr<HiddenStateFile> states)
    : vocab_(std::move(vocab)),
      relations_(normalize_relations(std::move(relations))),
      cfg_(std::move(cfg)),
      states_(std::move(states)) {
  if (cfg_.heads.empty()) throw std::invalid_argument("model: head set must not be empty");
  for (std::size_t i = 0; i < relations_.size(); ++i) {
    relation_index_[relations_[i]] = static_cast<std::int64_t>(i);
  }

  std::mt19937_64 rng(cfg_.seed);
  if (!states_) {
    encoder_ = std::make_unique<ToyEncoder>(vocab_.size(), cfg_.encoder, rng, "enc");
  }
  const std::int64_t d = cfg_.encoder.d;
  if (cfg_.heads.h1) {
    head1_ = make_head(HeadKind::H1, d, cfg_.head, rng, "h1");
    classifier_dim_ += 2;  // two one-dimensional capsules
  }
  if (cfg_.heads.h2) {
    head2_ = make_head(HeadKind::H2, d, cfg_.head, rng, "h2");
    classifier_dim_ += cfg_.head.out_d;
  }
  if (cfg_.heads.h3) {
    head3_ = make_head(HeadKind::H3, d, cfg_.head, rng, "h3");
    classifier_dim_ += cfg_.head.out_d;
  }

  if (cfg_.heads.decoder) {
    if (d % cfg_.decoder.heads != 0) {
      throw std::invalid_argument("model: encoder dim not divisible by decoder heads");
    }
    const std::int64_t dh = d / cfg_.decoder.heads;
    const std::int64_t ffn = cfg_.encoder.ffn;
    const double attn_std = 1.0 / std::sqrt(static_cast<double>(d));
    auto param = [&](std::vector<std::int64_t> shape, double stddev, std::string name) {
      Tensor t = stddev == 0.0 ? Tensor::zeros(shape, true)
                               : Tensor::randn(shape, rng, stddev, true);
      decoder_params_.push_back(Parameter{std::move(t), std::move(name)});
    };
    param({vocab_.size(), d}, 0.02, "dec.tok_emb");
    for (std::int64_t l = 0; l < cfg_.decoder.layers; ++l) {
      const std::string lp = "dec.l" + std::to_string(l) + ".";
      for (const char* block : {"self", "cross"}) {
        for (std::int64_t h = 0; h < cfg_.decoder.heads; ++h) {
          const std::string hp = lp + block + ".h" + std::to_string(h) + ".";
          param({d, dh}, attn_std, hp + "wq");
          param({d, dh}, attn_std, hp + "wk");
          param({d, dh}, attn_std, hp + "wv");
          param({1, dh}, 0.0, hp + "bq");
          param({1, dh}, 0.0, hp + "bk");
          param({1, dh}, 0.0, hp + "bv");
        }
        param({d, d}, attn_std, lp + block + ".wo");
        param({1, d}, 0.0, lp + block + ".bo");
      }
      param({d, ffn}, attn_std, lp + "w1");
      param({1, ffn}, 0.0, lp + "b1");
      param({ffn, d}, 1.0 / std::sqrt(static_cast<double>(ffn)), lp + "w2");
      param({1, d}, 0.0, lp + "b2");
    }
    param({d, vocab_.size()}, attn_std, "dec.out_w");
    param({1, vocab_.size()}, 0.0, "dec.out_b");
  }

  if (cfg_.heads.any_routing()) {
    const auto k = static_cast<std::int64_t>(relations_.size());
    // Zero init: an untrained model is exactly uniform over relations.
    cls_w_ = Parameter{Tensor::zeros({classifier_dim_, k}, true), "cls.w"};
    cls_b_ = Parameter{Tensor::zeros({1, k}, true), "cls.b"};
  }
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  if (encoder_) {
    auto enc = encoder_->parameters();
    out.insert(out.end(), enc.begin(), enc.end());
  }
  for (auto* head : {&head1_, &head2_, &head3_}) {
    if (head->has_value()) {
      auto hp = head_parameters(**head);
      out.insert(out.end(), hp.begin(), hp.end());
    }
  }
  for (auto& p : decoder_params_) out.push_back(&p);
  if (cfg_.heads.any_routing()) {
    out.push_back(&cls_w_);
    out.push_back(&cls_b_);
  }
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto mutable_params = const_cast<Model*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

struct Model::Prepared {
  std::string id;
  RenderedInstance rendered;
  std::vector<std::int64_t> ids;
  std::vector<std::int64_t> h2_mask;
};

Model::Prepared Model::prepare(const REInstance& inst) const {
  Prepared prep;
  prep.id = inst.id;
  prep.rendered = render(inst, cfg_.config_kind);
  auto tok = vocab_.tokenize(prep.rendered.text, cfg_.encoder.max_len);
  if (tok.truncated) {
    throw std::runtime_error("instance " + inst.id + ": rendered sentence exceeds max_len " +
                             std::to_string(cfg_.encoder.max_len));
  }
  prep.ids = std::move(tok.ids);
  prep.h2_mask = prep.rendered.subj_inner;
  prep.h2_mask.insert(prep.h2_mask.end(), prep.rendered.obj_inner.begin(),
                      prep.rendered.obj_inner.end());
  std::sort(prep.h2_mask.begin(), prep.h2_mask.end());
  return prep;
}

HiddenStates Model::states_for(const Prepared& prep) const {
  if (!states_) return encoder_->encode(prep.ids);
  HiddenStates hs = states_->load(prep.id);
  if (hs.length() != static_cast<std::int64_t>(prep.ids.size()) ||
      hs.dim() != cfg_.encoder.d) {
    throw std::runtime_error("instance " + prep.id +
                             ": stored hidden states disagree with the rendered sentence");
  }
  return hs;
}

Tensor Model::head_vector(const HiddenStates& hs, const Prepared& prep, ForwardOutput* out) {
  std::vector<Tensor> pieces;
  auto run = [&](const std::optional<RoutingHead>& head, const char* name,
                 const std::optional<std::vector<std::int64_t>>& mask) {
    if (!head) return;
    HeadOutput ho = head_forward(hs, *head, mask);
    pieces.push_back(ho.vector);
    if (!out) return;
    if (head->kind == HeadKind::H1) {
      auto [pos, neg] = positivity_credit(ho);
      out->credit_summary[name] = {pos, neg};
    } else {
      const Tensor agg = aggregate_credits(ho);
      std::vector<double> sums(static_cast<std::size_t>(agg.cols()), 0.0);
      auto vals = agg.values();
      for (std::int64_t r = 0; r < agg.rows(); ++r) {
        for (std::int64_t c = 0; c < agg.cols(); ++c) {
          sums[static_cast<std::size_t>(c)] += vals[static_cast<std::size_t>(r * agg.cols() + c)];
        }
      }
      out->credit_summary[name] = std::move(sums);
    }
  };
  run(head1_, "h1", std::nullopt);
  run(head2_, "h2", prep.h2_mask);
  run(head3_, "h3", std::nullopt);
  return pieces.size() == 1 ? pieces.front() : concat_cols(pieces);
}

ForwardOutput Model::forward(const REInstance& inst) {
  if (!cfg_.heads.any_routing()) {
    throw std::logic_error("forward: model has no routing heads (decoder only)");
  }
  Prepared prep = prepare(inst);
  HiddenStates hs = states_for(prep);
  ForwardOutput out;
  Tensor vec = head_vector(hs, prep, &out);
  out.logits = add_rowvec(matmul(vec, cls_w_.value), cls_b_.value);
  return out;
}

Tensor Model::decoder_logits(const HiddenStates& hs,
                             const std::vector<std::int64_t>& input_ids) {
  const std::int64_t t = static_cast<std::int64_t>(input_ids.size());
  const std::int64_t d = cfg_.encoder.d;
  const std::int64_t dh = d / cfg_.decoder.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (t > cfg_.decoder.max_target_len) {
    throw std::invalid_argument("decoder input exceeds max target length");
  }

  std::size_t idx = 0;
  auto next = [&]() -> const Parameter& { return decoder_params_[idx++]; };
  const Parameter& emb = next();

  std::vector<std::int64_t> positions(static_cast<std::size_t>(t));
  for (std::int64_t i = 0; i < t; ++i) positions[static_cast<std::size_t>(i)] = i;
  const Tensor pe = sinusoidal_positions(cfg_.decoder.max_target_len, d);
  Tensor x = add(embedding_rows(emb.value, input_ids), select_rows(pe, positions));

  // Strictly lower-triangular-allowed attention: future positions get a large
  // negative score before the softmax.
  std::vector<double> mask_data(static_cast<std::size_t>(t * t), 0.0);
  for (std::int64_t i = 0; i < t; ++i) {
    for (std::int64_t j = i + 1; j < t; ++j) {
      mask_data[static_cast<std::size_t>(i * t + j)] = -1e9;
    }
  }
  const Tensor causal = Tensor::from_data({t, t}, std::move(mask_data));
  const Tensor memory = hs.layers.back();

  for (std::int64_t l = 0; l < cfg_.decoder.layers; ++l) {
    for (const bool cross : {false, true}) {
      Tensor a = layer_norm_rows(x);
      const Tensor& kv_src = cross ? memory : a;
      std::vector<Tensor> ctx;
      for (std::int64_t h = 0; h < cfg_.decoder.heads; ++h) {
        const Parameter& wq = next();
        const Parameter& wk = next();
        const Parameter& wv = next();
        const Parameter& bq = next();
        const Parameter& bk = next();
        const Parameter& bv = next();
        Tensor q = add_rowvec(matmul(a, wq.value), bq.value);
        Tensor k = add_rowvec(matmul(kv_src, wk.value), bk.value);
        Tensor v = add_rowvec(matmul(kv_src, wv.value), bv.value);
        Tensor scores = mul_scalar(matmul(q, k, false, true), scale);
        if (!cross) scores = add(scores, causal);
        ctx.push_back(matmul(softmax_rows(scores), v));
      }
      const Parameter& wo = next();
      const Parameter& bo = next();
      Tensor merged = cfg_.decoder.heads == 1 ? ctx.front() : concat_cols(ctx);
      x = add(x, add_rowvec(matmul(merged, wo.value), bo.value));
    }
    const Parameter& w1 = next();
    const Parameter& b1 = next();
    const Parameter& w2 = next();
    const Parameter& b2 = next();
    Tensor f = gelu(add_rowvec(matmul(layer_norm_rows(x), w1.value), b1.value));
    x = add(x, add_rowvec(matmul(f, w2.value), b2.value));
  }
  const Parameter& out_w = decoder_params_[decoder_params_.size() - 2];
  const Parameter& out_b = decoder_params_[decoder_params_.size() - 1];
  return add_rowvec(matmul(layer_norm_rows(x), out_w.value), out_b.value);
}

Tensor Model::decoder_loss(const HiddenStates& hs, const std::vector<std::int64_t>& target) {
  std::vector<std::int64_t> input;
  input.reserve(target.size());
  input.push_back(Vocabulary::kEos);  // doubles as the start symbol
  input.insert(input.end(), target.begin(), target.end() - 1);
  return cross_entropy_logits(decoder_logits(hs, input), target);
}

Tensor Model::instance_loss(const REInstance& inst) {
  auto rel = relation_index_.find(inst.relation);
  if (rel == relation_index_.end()) {
    throw std::invalid_argument("instance " + inst.id + ": unknown relation " + inst.relation);
  }
  Prepared prep = prepare(inst);
  HiddenStates hs = states_for(prep);
  std::optional<Tensor> loss;
  if (cfg_.heads.any_routing()) {
    Tensor vec = head_vector(hs, prep, nullptr);
    Tensor logits = add_rowvec(matmul(vec, cls_w_.value), cls_b_.value);
    loss = cross_entropy_logits(logits, {rel->second});
  }
  if (cfg_.heads.decoder) {
    Tensor dec = decoder_loss(hs, decoder_target(inst, vocab_, cfg_.decoder.max_target_len));
    loss = loss ? add(*loss, dec) : dec;
  }
  return *loss;
}

Tensor Model::batch_loss(const std::vector<const REInstance*>& batch) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  std::optional<Tensor> total;
  for (const REInstance* inst : batch) {
    Tensor l = instance_loss(*inst);
    total = total ? add(*total, l) : l;
  }
  return mul_scalar(*total, 1.0 / static_cast<double>(batch.size()));
}

std::string Model::decoder_predict(const REInstance& inst) {
  if (!cfg_.heads.decoder) throw std::logic_error("decoder_predict: no decoder head");
  NoGradGuard guard;
  Prepared prep = prepare(inst);
  HiddenStates hs = states_for(prep);

  // Teacher-force the known entity prefix; the relation slot is the next
  // prediction, constrained to relation tokens.
  std::vector<std::int64_t> input{Vocabulary::kEos};
  for (std::int64_t i = inst.subj_start; i <= inst.subj_end; ++i) {
    input.push_back(vocab_.id_of(inst.tokens[static_cast<std::size_t>(i)]));
  }
  input.push_back(Vocabulary::kSep);
  for (std::int64_t i = inst.obj_start; i <= inst.obj_end; ++i) {
    input.push_back(vocab_.id_of(inst.tokens[static_cast<std::size_t>(i)]));
  }
  input.push_back(Vocabulary::kSep);
  if (static_cast<std::int64_t>(input.size()) > cfg_.decoder.max_target_len) {
    throw std::invalid_argument("decoder_predict: entity prefix exceeds max target length");
  }

  Tensor logits = decoder_logits(hs, input);
  const std::int64_t last = logits.rows() - 1;
  auto vals = logits.values();
  std::string best;
  double best_score = 0.0;
  for (const auto& rel : relations_) {
    const std::int64_t id = vocab_.relation_token_id(rel);
    const double score = vals[static_cast<std::size_t>(last * logits.cols() + id)];
    if (best.empty() || score > best_score) {
      best = rel;
      best_score = score;
    }
  }
  return best;
}

PredictionRecord Model::predict(const REInstance& inst) {
  NoGradGuard guard;
  PredictionRecord rec;
  rec.id = inst.id;
  rec.gold = inst.relation;
  if (cfg_.heads.any_routing()) {
    ForwardOutput out = forward(inst);
    auto vals = out.logits.values();
    rec.logits.assign(vals.begin(), vals.end());
    rec.credit_summary = std::move(out.credit_summary);
    std::size_t best = 0;
    for (std::size_t i = 1; i < rec.logits.size(); ++i) {
      if (rec.logits[i] > rec.logits[best]) best = i;
    }
    rec.predicted = relations_[best];
  } else {
    rec.predicted = decoder_predict(inst);
  }
  return rec;
}

std::pair<Metrics, std::vector<PredictionRecord>> Model::evaluate(const Corpus& corpus) {
  if (corpus.instances.empty()) throw std::invalid_argument("evaluate: empty corpus");
  std::vector<PredictionRecord> records;
  records.reserve(corpus.instances.size());
  for (const auto& inst : corpus.instances) records.push_back(predict(inst));
  return {compute_metrics(records), std::move(records)};
}

void Model::ensure_adam() {
  if (!adam_.empty()) return;
  for (Parameter* p : parameters()) adam_.push_back(make_adam_state(*p));
}

TrainTrace Model::train(const Corpus& corpus, const TrainConfig& tc) {
  if (corpus.instances.empty()) throw std::invalid_argument("train: empty corpus");
  if (tc.batch_size < 1) throw std::invalid_argument("train: batch_size must be positive");
  if (!(tc.learning_rate > 0.0) || !std::isfinite(tc.learning_rate)) {
    throw std::invalid_argument("train: learning_rate must be positive");
  }
  if (tc.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  for (const auto& inst : corpus.instances) {
    if (!relation_index_.count(inst.relation)) {
      throw std::invalid_argument("train: corpus label " + inst.relation +
                                  " unknown to the model");
    }
  }

  ensure_adam();
  auto params = parameters();
  for (Parameter* p : params) p->value.zero_grad();  // drop any stale gradients
  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(corpus.instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainTrace trace;
  for (std::int64_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::int64_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      std::vector<const REInstance*> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(&corpus.instances[order[i]]);
      }
      Tensor loss = batch_loss(batch);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw std::runtime_error("train: diverged at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches) + " (loss not finite)");
      }
      loss.backward();
      for (std::size_t i = 0; i < params.size(); ++i) {
        adam_step(*params[i], adam_[i], tc.learning_rate);
        params[i]->value.zero_grad();
      }
      loss_sum += value;
      ++batches;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(batches);
    stats.train_micro_f1 = evaluate(corpus).first.micro_f1;
    trace.epochs.push_back(stats);
    if (tc.early_stop_train_micro > 0.0 &&
        stats.train_micro_f1 >= tc.early_stop_train_micro) {
      break;
    }
  }
  return trace;
}

EntityEmbeddings Model::entity_embeddings(const REInstance& inst) {
  NoGradGuard guard;
  Prepared prep = prepare(inst);
  HiddenStates hs = states_for(prep);
  auto pool = [&](const std::vector<std::int64_t>& span) {
    if (span.empty()) throw std::invalid_argument("entity_embeddings: empty span");
    std::vector<std::vector<double>> layers;
    for (const Tensor& layer : hs.layers) {
      auto vals = layer.values();
      const std::int64_t d = layer.cols();
      std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
      for (std::int64_t pos : span) {
        for (std::int64_t c = 0; c < d; ++c) {
          mean[static_cast<std::size_t>(c)] +=
              vals[static_cast<std::size_t>(pos * d + c)];
        }
      }
      for (double& x : mean) x /= static_cast<double>(span.size());
      layers.push_back(std::move(mean));
    }
    return layers;
  };
  EntityEmbeddings out;
  out.head = pool(prep.rendered.subj_surface);
  out.tail = pool(prep.rendered.obj_surface);
  return out;
}

// --- checkpointing ---------------------------------------------------------------
//
// "CAPK" little-endian: version u32 = 1, parameter count u32; per parameter:
// name (u16 length + bytes), rank u32, dims u32 each, float64 payload. Then
// u8 optimizer flag; when set, per parameter in the same order: m payload,
// v payload, step u64.

namespace {

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(buf, bits);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  if (!in.read(reinterpret_cast<char*>(b), 2)) throw std::runtime_error("checkpoint truncated");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  const std::uint64_t bits = get_u64(in);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

void put_tensor_values(std::string& buf, const Tensor& t) {
  for (double v : t.values()) put_f64(buf, v);
}

void read_tensor_values(std::istream& in, Tensor& t) {
  auto dst = t.mutable_values();
  for (double& v : dst) v = get_f64(in);
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  auto params = model.parameters();
  std::string buf;
  buf += "CAPK";
  put_u32(buf, 1);
  put_u32(buf, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    if (p->name.size() > 0xffff) throw std::runtime_error("checkpoint: name too long");
    put_u16(buf, static_cast<std::uint16_t>(p->name.size()));
    buf += p->name;
    const auto& shape = p->value.shape();
    put_u32(buf, static_cast<std::uint32_t>(shape.size()));
    for (auto dim : shape) put_u32(buf, static_cast<std::uint32_t>(dim));
    put_tensor_values(buf, p->value);
  }
  buf.push_back(model.adam_.empty() ? '\0' : '\x01');
  if (!model.adam_.empty()) {
    for (const AdamState& state : model.adam_) {
      put_tensor_values(buf, state.m);
      put_tensor_values(buf, state.v);
      put_u64(buf, static_cast<std::uint64_t>(state.step_count));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out.write(buf.data(), static_cast<std::streamsize>(buf.size()))) {
    throw std::runtime_error("checkpoint: cannot write " + path);
  }
}

void load_checkpoint(const std::string& path, Model& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "CAPK", 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  if (get_u32(in) != 1) throw std::runtime_error("checkpoint: unsupported version");
  auto params = model.parameters();
  const std::uint32_t count = get_u32(in);
  if (count != params.size()) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  for (Parameter* p : params) {
    const std::uint16_t name_len = get_u16(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw std::runtime_error("checkpoint truncated");
    if (name != p->name) {
      throw std::runtime_error("checkpoint: expected parameter " + p->name + ", found " +
                               name);
    }
    const std::uint32_t rank = get_u32(in);
    std::vector<std::int64_t> shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get_u32(in));
    if (shape != p->value.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + p->name);
    }
    read_tensor_values(in, p->value);
  }
  char flag = '\0';
  if (!in.get(flag)) throw std::runtime_error("checkpoint truncated");
  model.adam_.clear();
  if (flag == '\x01') {
    model.ensure_adam();
    for (AdamState& state : model.adam_) {
      read_tensor_values(in, state.m);
      read_tensor_values(in, state.v);
      state.step_count = static_cast<std::int64_t>(get_u64(in));
    }
  }
}

// --- prediction export -----------------------------------------------------------

void save_predictions_csv(const std::vector<PredictionRecord>& records,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("predictions: cannot write " + path);
  out << "id,gold,pred\n";
  for (const auto& rec : records) {
    out << rec.id << ',' << rec.gold << ',' << rec.predicted << '\n';
  }
  if (!out) throw std::runtime_error("predictions: write failed for " + path);
}

void save_predictions_jsonl(const std::vector<PredictionRecord>& records,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("predictions: cannot write " + path);
  for (const auto& rec : records) {
    nlohmann::json j;
    j["id"] = rec.id;
    j["gold"] = rec.gold;
    j["pred"] = rec.predicted;
    j["logits"] = rec.logits;
    j["credits"] = rec.credit_summary;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("predictions: write failed for " + path);
}

}  // namespace caproute
