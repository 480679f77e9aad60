#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace caproute {

inline constexpr const char* kNoRelation = "no_relation";

// One labelled sentence: D = {(subject, object, sentence, relation)}.
struct REInstance {
  std::string id;
  std::vector<std::string> tokens;
  std::int64_t subj_start = 0, subj_end = 0;  // inclusive token range
  std::int64_t obj_start = 0, obj_end = 0;    // inclusive token range
  std::string subj_type, obj_type;
  std::string relation;
};

// Throws invalid_argument on out-of-range or overlapping spans, empty
// types/tokens, or an empty relation.
void validate_instance(const REInstance& inst);

struct Corpus {
  std::vector<REInstance> instances;
  std::vector<std::string> relations;     // sorted unique labels, including no_relation
  std::vector<std::string> entity_types;  // sorted unique
  std::string split;                      // train | eval | test
};

// Rebuilds the relation / entity-type sets from the instances and validates
// every one of them.
Corpus make_corpus(std::vector<REInstance> instances, std::string split);

enum class SentenceConfigKind { Abstract, Mask, Entities, Mix };

SentenceConfigKind parse_config_kind(const std::string& name);
std::string config_kind_name(SentenceConfigKind kind);

// A marked sentence plus the positions needed downstream: `inner` spans cover
// everything strictly between the boundary markers (the H2 token mask),
// `surface` spans cover only the tokens standing in for the entity itself
// (surface form where present, otherwise the type token or MASK).
struct RenderedInstance {
  std::vector<std::string> tokens;
  std::string text;
  std::vector<std::int64_t> subj_inner, obj_inner;
  std::vector<std::int64_t> subj_surface, obj_surface;
};

RenderedInstance render(const REInstance& inst, SentenceConfigKind kind);

// Inverse of render(..., Mix): recovers tokens, spans and types from the
// marked sequence. The relation is not part of the rendered text and is
// passed through.
REInstance parse_mix(const std::vector<std::string>& rendered_tokens, std::string id,
                     std::string relation);

// --- readers / writers -----------------------------------------------------------

// Tacred-schema JSON: array of records with token, subj_start/end,
// obj_start/end, subj_type, obj_type, relation and id fields.
Corpus parse_tacred_json(const std::string& path, const std::string& split = "train");

// Conll04 .corp-style text: 9-column token blocks ('/'-joined multiwords kept
// as single tokens), then one "arg1 arg2 Relation" line per relation mention.
Corpus parse_conll04(const std::string& path, const std::string& split = "test");

void save_corpus_jsonl(const Corpus& corpus, const std::string& path);
Corpus load_corpus_jsonl(const std::string& path, const std::string& split = "");

// --- synthetic corpora -------------------------------------------------------------

struct SynthSpec {
  std::int64_t n_relations = 8;
  std::int64_t n_entity_types = 8;
  double negative_ratio = 0.0;  // fraction of no_relation instances
  std::int64_t templates_per_relation = 4;
  bool type_determines_relation = false;
  double noise_rate = 0.0;  // in [0, 0.5); applied via inject_label_noise by callers
  std::uint64_t seed = 0;
  std::int64_t size = 500;
  std::string split = "train";
  std::int64_t surface_pool = 40;  // entity names shared across types and relations
};

// Deterministic per (seed, split, size). Template banks and the
// type-pair->relation mapping depend on the seed alone, so corpora drawn for
// different splits of one seed describe the same synthetic world.
Corpus generate_synthetic(const SynthSpec& spec);

// --- label noise ---------------------------------------------------------------------

struct LabelFlip {
  std::string id;
  std::string old_label;
  std::string new_label;
};

// Flips floor(rate * N) uniformly chosen instances to a different uniformly
// chosen label from the corpus relation set. rate must lie in [0, 0.5).
std::pair<Corpus, std::vector<LabelFlip>> inject_label_noise(const Corpus& corpus,
                                                             double rate,
                                                             std::uint64_t seed);

void save_flip_log_csv(const std::vector<LabelFlip>& flips, const std::string& path);
std::vector<LabelFlip> load_flip_log_csv(const std::string& path);

// --- statistics / filters --------------------------------------------------------------

struct DatasetStats {
  std::int64_t n_relations = 0;  // positive relations only
  std::int64_t n_entity_types = 0;
  std::int64_t size = 0;
  double negative_fraction = 0.0;
};

DatasetStats dataset_stats(const Corpus& corpus);

// Keeps instances whose (subj_type, obj_type) matches exactly.
Corpus filter_by_type_pair(const Corpus& corpus, const std::string& subj_type,
                           const std::string& obj_type);

}  // namespace caproute
