#include "caproute/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace caproute {

namespace {

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::string> sorted_unique(std::set<std::string> values) {
  return {values.begin(), values.end()};
}

}  // namespace

void validate_instance(const REInstance& inst) {
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("instance " + (inst.id.empty() ? "<no id>" : inst.id) + ": " +
                                why);
  };
  if (inst.id.empty()) fail("empty id");
  if (inst.tokens.empty()) fail("no tokens");
  const auto n = static_cast<std::int64_t>(inst.tokens.size());
  if (inst.subj_start < 0 || inst.subj_end < inst.subj_start || inst.subj_end >= n) {
    fail("subject span out of range");
  }
  if (inst.obj_start < 0 || inst.obj_end < inst.obj_start || inst.obj_end >= n) {
    fail("object span out of range");
  }
  if (inst.subj_start <= inst.obj_end && inst.obj_start <= inst.subj_end) {
    fail("overlapping spans");
  }
  if (inst.subj_type.empty() || inst.obj_type.empty()) fail("empty entity type");
  if (inst.relation.empty()) fail("empty relation");
}

Corpus make_corpus(std::vector<REInstance> instances, std::string split) {
  std::set<std::string> relations, types;
  for (const auto& inst : instances) {
    validate_instance(inst);
    relations.insert(inst.relation);
    types.insert(inst.subj_type);
    types.insert(inst.obj_type);
  }
  Corpus corpus;
  corpus.instances = std::move(instances);
  corpus.relations = sorted_unique(std::move(relations));
  corpus.entity_types = sorted_unique(std::move(types));
  corpus.split = std::move(split);
  return corpus;
}

SentenceConfigKind parse_config_kind(const std::string& name) {
  if (name == "abstract") return SentenceConfigKind::Abstract;
  if (name == "mask") return SentenceConfigKind::Mask;
  if (name == "entities") return SentenceConfigKind::Entities;
  if (name == "mix") return SentenceConfigKind::Mix;
  throw std::invalid_argument("unknown sentence configuration: " + name);
}

std::string config_kind_name(SentenceConfigKind kind) {
  switch (kind) {
    case SentenceConfigKind::Abstract: return "abstract";
    case SentenceConfigKind::Mask: return "mask";
    case SentenceConfigKind::Entities: return "entities";
    case SentenceConfigKind::Mix: return "mix";
  }
  throw std::logic_error("unreachable config kind");
}

namespace {

struct Frame {
  std::vector<std::string> tokens;
  std::vector<std::int64_t> inner, surface;  // relative to frame start
};

Frame entity_frame(SentenceConfigKind kind, bool is_subject, const std::string& type,
                   const std::vector<std::string>& surf) {
  Frame f;
  const auto s = static_cast<std::int64_t>(surf.size());
  switch (kind) {
    case SentenceConfigKind::Mix:
      if (is_subject) {
        // [e11] + TYPE * SURFACE [e12]
        f.tokens = {"[e11]", "+", type, "*"};
        f.tokens.insert(f.tokens.end(), surf.begin(), surf.end());
        f.tokens.push_back("[e12]");
        for (std::int64_t i = 1; i <= 3 + s; ++i) f.inner.push_back(i);
        for (std::int64_t i = 4; i < 4 + s; ++i) f.surface.push_back(i);
      } else {
        // [e21] # TYPE & SURFACE @ [e22]
        f.tokens = {"[e21]", "#", type, "&"};
        f.tokens.insert(f.tokens.end(), surf.begin(), surf.end());
        f.tokens.push_back("@");
        f.tokens.push_back("[e22]");
        for (std::int64_t i = 1; i <= 4 + s; ++i) f.inner.push_back(i);
        for (std::int64_t i = 4; i < 4 + s; ++i) f.surface.push_back(i);
      }
      break;
    case SentenceConfigKind::Abstract:
      if (is_subject) {
        f.tokens = {"[e11]", "+", type, "*", "[e12]"};
        f.inner = {1, 2, 3};
      } else {
        f.tokens = {"[e21]", "#", type, "&", "@", "[e22]"};
        f.inner = {1, 2, 3, 4};
      }
      f.surface = {2};  // the type token carries the entity here
      break;
    case SentenceConfigKind::Entities:
      f.tokens = {is_subject ? "[e11]" : "[e21]"};
      f.tokens.insert(f.tokens.end(), surf.begin(), surf.end());
      f.tokens.push_back(is_subject ? "[e12]" : "[e22]");
      for (std::int64_t i = 1; i <= s; ++i) {
        f.inner.push_back(i);
        f.surface.push_back(i);
      }
      break;
    case SentenceConfigKind::Mask:
      f.tokens = {"MASK"};
      f.inner = {0};
      f.surface = {0};
      break;
  }
  return f;
}

}  // namespace

RenderedInstance render(const REInstance& inst, SentenceConfigKind kind) {
  validate_instance(inst);
  RenderedInstance out;
  auto emit_frame = [&](bool is_subject, std::int64_t start, std::int64_t end) {
    std::vector<std::string> surf(inst.tokens.begin() + start, inst.tokens.begin() + end + 1);
    Frame f = entity_frame(kind, is_subject, is_subject ? inst.subj_type : inst.obj_type, surf);
    const auto base = static_cast<std::int64_t>(out.tokens.size());
    out.tokens.insert(out.tokens.end(), f.tokens.begin(), f.tokens.end());
    auto& inner = is_subject ? out.subj_inner : out.obj_inner;
    auto& surface = is_subject ? out.subj_surface : out.obj_surface;
    for (auto i : f.inner) inner.push_back(base + i);
    for (auto i : f.surface) surface.push_back(base + i);
  };

  std::int64_t i = 0;
  const auto n = static_cast<std::int64_t>(inst.tokens.size());
  while (i < n) {
    if (i == inst.subj_start) {
      emit_frame(true, inst.subj_start, inst.subj_end);
      i = inst.subj_end + 1;
    } else if (i == inst.obj_start) {
      emit_frame(false, inst.obj_start, inst.obj_end);
      i = inst.obj_end + 1;
    } else {
      out.tokens.push_back(inst.tokens[static_cast<std::size_t>(i)]);
      ++i;
    }
  }
  for (std::size_t k = 0; k < out.tokens.size(); ++k) {
    if (k) out.text += ' ';
    out.text += out.tokens[k];
  }
  return out;
}

REInstance parse_mix(const std::vector<std::string>& rendered_tokens, std::string id,
                     std::string relation) {
  REInstance inst;
  inst.id = std::move(id);
  inst.relation = std::move(relation);
  bool saw_subj = false, saw_obj = false;

  const auto n = static_cast<std::int64_t>(rendered_tokens.size());
  auto word = [&](std::int64_t i) -> const std::string& {
    if (i < 0 || i >= n) throw std::invalid_argument("parse_mix: truncated entity frame");
    return rendered_tokens[static_cast<std::size_t>(i)];
  };
  auto expect = [&](std::int64_t i, const char* tok) {
    if (word(i) != tok) {
      throw std::invalid_argument(std::string("parse_mix: expected '") + tok + "' got '" +
                                  word(i) + "'");
    }
  };

  std::int64_t i = 0;
  while (i < n) {
    const std::string& tok = word(i);
    if (tok == "[e11]") {
      if (saw_subj) throw std::invalid_argument("parse_mix: duplicate subject frame");
      expect(i + 1, "+");
      inst.subj_type = word(i + 2);
      expect(i + 3, "*");
      std::int64_t j = i + 4;
      inst.subj_start = static_cast<std::int64_t>(inst.tokens.size());
      while (word(j) != "[e12]") {
        inst.tokens.push_back(word(j));
        ++j;
      }
      if (j == i + 4) throw std::invalid_argument("parse_mix: empty subject surface");
      inst.subj_end = static_cast<std::int64_t>(inst.tokens.size()) - 1;
      saw_subj = true;
      i = j + 1;
    } else if (tok == "[e21]") {
      if (saw_obj) throw std::invalid_argument("parse_mix: duplicate object frame");
      expect(i + 1, "#");
      inst.obj_type = word(i + 2);
      expect(i + 3, "&");
      std::int64_t j = i + 4;
      inst.obj_start = static_cast<std::int64_t>(inst.tokens.size());
      while (word(j) != "@") {
        inst.tokens.push_back(word(j));
        ++j;
      }
      if (j == i + 4) throw std::invalid_argument("parse_mix: empty object surface");
      inst.obj_end = static_cast<std::int64_t>(inst.tokens.size()) - 1;
      expect(j + 1, "[e22]");
      saw_obj = true;
      i = j + 2;
    } else {
      inst.tokens.push_back(tok);
      ++i;
    }
  }
  if (!saw_subj || !saw_obj) throw std::invalid_argument("parse_mix: missing entity frame");
  validate_instance(inst);
  return inst;
}

// --- readers -----------------------------------------------------------------------

Corpus parse_tacred_json(const std::string& path, const std::string& split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("tacred: cannot read " + path);
  nlohmann::json doc = nlohmann::json::parse(in);
  if (!doc.is_array()) throw std::runtime_error("tacred: top-level JSON array expected");

  std::vector<REInstance> instances;
  instances.reserve(doc.size());
  for (std::size_t r = 0; r < doc.size(); ++r) {
    const auto& rec = doc[r];
    auto need = [&](const char* key) -> const nlohmann::json& {
      if (!rec.contains(key)) {
        throw std::runtime_error("tacred record " + std::to_string(r) + ": missing field " +
                                 key);
      }
      return rec.at(key);
    };
    REInstance inst;
    try {
      inst.id = need("id").get<std::string>();
      inst.tokens = need("token").get<std::vector<std::string>>();
      inst.subj_start = need("subj_start").get<std::int64_t>();
      inst.subj_end = need("subj_end").get<std::int64_t>();
      inst.obj_start = need("obj_start").get<std::int64_t>();
      inst.obj_end = need("obj_end").get<std::int64_t>();
      inst.subj_type = need("subj_type").get<std::string>();
      inst.obj_type = need("obj_type").get<std::string>();
      inst.relation = need("relation").get<std::string>();
      validate_instance(inst);
    } catch (const std::exception& e) {
      throw std::runtime_error("tacred record " + std::to_string(r) + ": " + e.what());
    }
    instances.push_back(std::move(inst));
  }
  return make_corpus(std::move(instances), split);
}

Corpus parse_conll04(const std::string& path, const std::string& split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("conll04: cannot read " + path);

  struct Sentence {
    std::string sent_id;
    std::vector<std::string> tokens;
    std::vector<std::string> types;  // "O" for plain tokens
  };

  std::vector<REInstance> instances;
  Sentence current;
  bool have_sentence = false;
  std::int64_t mention = 0;

  auto fields_of = [](const std::string& line) {
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string f;
    while (ss >> f) fields.push_back(f);
    return fields;
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = fields_of(line);
    if (fields.empty()) continue;
    if (fields.size() >= 8) {
      // Token row: sent_id, entity tag, position, _, POS, word, ...
      if (have_sentence && fields[0] != current.sent_id) {
        current = Sentence{};
        mention = 0;
      }
      current.sent_id = fields[0];
      have_sentence = true;
      const auto pos = std::stoll(fields[2]);
      if (pos != static_cast<std::int64_t>(current.tokens.size())) {
        throw std::runtime_error("conll04 line " + std::to_string(lineno) +
                                 ": unexpected token position");
      }
      current.tokens.push_back(fields[5]);
      current.types.push_back(fields[1]);
    } else if (fields.size() == 3) {
      // Relation row: arg1 arg2 Relation.
      if (!have_sentence) {
        throw std::runtime_error("conll04 line " + std::to_string(lineno) +
                                 ": relation before any sentence");
      }
      const auto a1 = std::stoll(fields[0]);
      const auto a2 = std::stoll(fields[1]);
      const auto n = static_cast<std::int64_t>(current.tokens.size());
      if (a1 < 0 || a1 >= n || a2 < 0 || a2 >= n) {
        throw std::runtime_error("conll04 line " + std::to_string(lineno) +
                                 ": relation argument out of range");
      }
      if (current.types[static_cast<std::size_t>(a1)] == "O" ||
          current.types[static_cast<std::size_t>(a2)] == "O") {
        throw std::runtime_error("conll04 line " + std::to_string(lineno) +
                                 ": relation references a non-entity token");
      }
      REInstance inst;
      inst.id = "conll04-" + current.sent_id + "-" + std::to_string(mention++);
      inst.tokens = current.tokens;
      inst.subj_start = inst.subj_end = a1;
      inst.obj_start = inst.obj_end = a2;
      inst.subj_type = current.types[static_cast<std::size_t>(a1)];
      inst.obj_type = current.types[static_cast<std::size_t>(a2)];
      inst.relation = fields[2];
      validate_instance(inst);
      instances.push_back(std::move(inst));
    } else {
      throw std::runtime_error("conll04 line " + std::to_string(lineno) +
                               ": unrecognized row shape");
    }
  }
  return make_corpus(std::move(instances), split);
}

// --- JSONL serialization ---------------------------------------------------------------

void save_corpus_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("corpus: cannot write " + path);
  for (const auto& inst : corpus.instances) {
    nlohmann::json j;
    j["id"] = inst.id;
    j["tokens"] = inst.tokens;
    j["subj_start"] = inst.subj_start;
    j["subj_end"] = inst.subj_end;
    j["obj_start"] = inst.obj_start;
    j["obj_end"] = inst.obj_end;
    j["subj_type"] = inst.subj_type;
    j["obj_type"] = inst.obj_type;
    j["relation"] = inst.relation;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("corpus: write failed for " + path);
}

Corpus load_corpus_jsonl(const std::string& path, const std::string& split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("corpus: cannot read " + path);
  std::vector<REInstance> instances;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      REInstance inst;
      inst.id = j.at("id").get<std::string>();
      inst.tokens = j.at("tokens").get<std::vector<std::string>>();
      inst.subj_start = j.at("subj_start").get<std::int64_t>();
      inst.subj_end = j.at("subj_end").get<std::int64_t>();
      inst.obj_start = j.at("obj_start").get<std::int64_t>();
      inst.obj_end = j.at("obj_end").get<std::int64_t>();
      inst.subj_type = j.at("subj_type").get<std::string>();
      inst.obj_type = j.at("obj_type").get<std::string>();
      inst.relation = j.at("relation").get<std::string>();
      instances.push_back(std::move(inst));
    } catch (const std::exception& e) {
      throw std::runtime_error("corpus " + path + " line " + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  return make_corpus(std::move(instances), split);
}

// --- synthetic generation ----------------------------------------------------------------

namespace {

struct Template {
  std::vector<std::string> prefix, middle, suffix;
};

Template make_template(const std::string& stem) {
  return Template{{stem + "a"}, {stem + "b", stem + "c"}, {stem + "d", "."}};
}

struct SynthWorld {
  std::vector<std::string> types;
  std::vector<std::string> relations;
  std::vector<std::vector<Template>> rel_templates;  // indexed by relation; only when
                                                     // templates are relation-specific
  std::vector<Template> shared_templates;            // type-determined regime
  std::vector<Template> negative_templates;          // relation-specific regime
  std::vector<std::pair<std::int64_t, std::int64_t>> rel_type_pair;
  std::vector<std::pair<std::int64_t, std::int64_t>> unmapped_pairs;
  std::vector<std::vector<std::string>> surfaces;
};

SynthWorld build_world(const SynthSpec& spec) {
  if (spec.n_relations < 2) throw std::invalid_argument("synth: need at least 2 relations");
  if (spec.n_entity_types < 1) throw std::invalid_argument("synth: need entity types");
  if (spec.negative_ratio < 0.0 || spec.negative_ratio >= 1.0) {
    throw std::invalid_argument("synth: negative_ratio must lie in [0,1)");
  }
  if (spec.templates_per_relation < 1) throw std::invalid_argument("synth: need templates");
  if (spec.noise_rate < 0.0 || spec.noise_rate >= 0.5) {
    throw std::invalid_argument("synth: noise_rate must lie in [0, 0.5)");
  }
  if (spec.surface_pool < 2) throw std::invalid_argument("synth: surface pool too small");

  std::mt19937_64 rng(spec.seed);  // world structure depends on the seed alone
  SynthWorld w;
  for (std::int64_t t = 0; t < spec.n_entity_types; ++t) {
    w.types.push_back("type" + std::to_string(t));
  }
  for (std::int64_t r = 0; r < spec.n_relations; ++r) {
    w.relations.push_back("rel" + std::to_string(r));
  }

  if (spec.type_determines_relation) {
    const std::int64_t pairs = spec.n_entity_types * spec.n_entity_types;
    if (pairs < spec.n_relations) {
      throw std::invalid_argument(
          "synth: type_determines_relation needs n_entity_types^2 >= n_relations");
    }
    std::vector<std::pair<std::int64_t, std::int64_t>> all;
    for (std::int64_t a = 0; a < spec.n_entity_types; ++a) {
      for (std::int64_t b = 0; b < spec.n_entity_types; ++b) all.emplace_back(a, b);
    }
    std::shuffle(all.begin(), all.end(), rng);
    w.rel_type_pair.assign(all.begin(), all.begin() + spec.n_relations);
    w.unmapped_pairs.assign(all.begin() + spec.n_relations, all.end());
    if (spec.negative_ratio > 0.0 && w.unmapped_pairs.empty()) {
      throw std::invalid_argument("synth: no type pairs left for negatives");
    }
    // Relation-neutral templates: the type pair is the only relation signal.
    for (std::int64_t t = 0; t < spec.templates_per_relation; ++t) {
      w.shared_templates.push_back(make_template("s" + std::to_string(t) + "_"));
    }
  } else {
    for (std::int64_t r = 0; r < spec.n_relations; ++r) {
      std::vector<Template> bank;
      for (std::int64_t t = 0; t < spec.templates_per_relation; ++t) {
        bank.push_back(
            make_template("w" + std::to_string(r) + "_" + std::to_string(t) + "_"));
      }
      w.rel_templates.push_back(std::move(bank));
    }
    for (std::int64_t t = 0; t < spec.templates_per_relation; ++t) {
      w.negative_templates.push_back(make_template("wneg_" + std::to_string(t) + "_"));
    }
  }

  static const std::vector<std::string> suffixes = {"jr", "inc", "co", "ltd"};
  std::uniform_int_distribution<std::size_t> suffix_pick(0, suffixes.size() - 1);
  std::uniform_int_distribution<int> two_tokens(0, 3);  // 25% two-token surfaces
  for (std::int64_t s = 0; s < spec.surface_pool; ++s) {
    std::vector<std::string> surf{"ent" + std::to_string(s)};
    if (two_tokens(rng) == 0) surf.push_back(suffixes[suffix_pick(rng)]);
    w.surfaces.push_back(std::move(surf));
  }
  return w;
}

}  // namespace

Corpus generate_synthetic(const SynthSpec& spec) {
  if (spec.size < 1) throw std::invalid_argument("synth: size must be >= 1");
  if (spec.split.empty()) throw std::invalid_argument("synth: split tag required");
  SynthWorld w = build_world(spec);

  // Instance sampling gets its own stream so every split shares the world.
  std::mt19937_64 rng(spec.seed ^ (fnv1a64(spec.split) | 1));

  const auto n_neg = static_cast<std::int64_t>(
      std::llround(spec.negative_ratio * static_cast<double>(spec.size)));
  std::vector<char> negative(static_cast<std::size_t>(spec.size), 0);
  std::fill(negative.begin(), negative.begin() + n_neg, 1);
  std::shuffle(negative.begin(), negative.end(), rng);

  std::uniform_int_distribution<std::int64_t> rel_pick(0, spec.n_relations - 1);
  std::uniform_int_distribution<std::int64_t> type_pick(0, spec.n_entity_types - 1);
  std::uniform_int_distribution<std::size_t> surf_pick(0, w.surfaces.size() - 1);
  std::uniform_int_distribution<std::int64_t> tmpl_pick(0, spec.templates_per_relation - 1);

  std::vector<REInstance> instances;
  instances.reserve(static_cast<std::size_t>(spec.size));
  for (std::int64_t i = 0; i < spec.size; ++i) {
    REInstance inst;
    inst.id = spec.split + "-" + std::to_string(i);

    const Template* tmpl = nullptr;
    if (negative[static_cast<std::size_t>(i)]) {
      inst.relation = kNoRelation;
      if (spec.type_determines_relation) {
        std::uniform_int_distribution<std::size_t> pair_pick(0, w.unmapped_pairs.size() - 1);
        auto [a, b] = w.unmapped_pairs[pair_pick(rng)];
        inst.subj_type = w.types[static_cast<std::size_t>(a)];
        inst.obj_type = w.types[static_cast<std::size_t>(b)];
        tmpl = &w.shared_templates[static_cast<std::size_t>(tmpl_pick(rng))];
      } else {
        inst.subj_type = w.types[static_cast<std::size_t>(type_pick(rng))];
        inst.obj_type = w.types[static_cast<std::size_t>(type_pick(rng))];
        tmpl = &w.negative_templates[static_cast<std::size_t>(tmpl_pick(rng))];
      }
    } else {
      const auto r = rel_pick(rng);
      inst.relation = w.relations[static_cast<std::size_t>(r)];
      if (spec.type_determines_relation) {
        auto [a, b] = w.rel_type_pair[static_cast<std::size_t>(r)];
        inst.subj_type = w.types[static_cast<std::size_t>(a)];
        inst.obj_type = w.types[static_cast<std::size_t>(b)];
        tmpl = &w.shared_templates[static_cast<std::size_t>(tmpl_pick(rng))];
      } else {
        inst.subj_type = w.types[static_cast<std::size_t>(type_pick(rng))];
        inst.obj_type = w.types[static_cast<std::size_t>(type_pick(rng))];
        tmpl = &w.rel_templates[static_cast<std::size_t>(r)][static_cast<std::size_t>(
            tmpl_pick(rng))];
      }
    }

    const auto& subj = w.surfaces[surf_pick(rng)];
    const auto& obj = w.surfaces[surf_pick(rng)];
    inst.tokens = tmpl->prefix;
    inst.subj_start = static_cast<std::int64_t>(inst.tokens.size());
    inst.tokens.insert(inst.tokens.end(), subj.begin(), subj.end());
    inst.subj_end = static_cast<std::int64_t>(inst.tokens.size()) - 1;
    inst.tokens.insert(inst.tokens.end(), tmpl->middle.begin(), tmpl->middle.end());
    inst.obj_start = static_cast<std::int64_t>(inst.tokens.size());
    inst.tokens.insert(inst.tokens.end(), obj.begin(), obj.end());
    inst.obj_end = static_cast<std::int64_t>(inst.tokens.size()) - 1;
    inst.tokens.insert(inst.tokens.end(), tmpl->suffix.begin(), tmpl->suffix.end());

    instances.push_back(std::move(inst));
  }
  return make_corpus(std::move(instances), spec.split);
}

// --- label noise -----------------------------------------------------------------------

std::pair<Corpus, std::vector<LabelFlip>> inject_label_noise(const Corpus& corpus,
                                                             double rate,
                                                             std::uint64_t seed) {
  if (rate < 0.0 || rate >= 0.5) {
    throw std::invalid_argument("inject_label_noise: rate must lie in [0, 0.5)");
  }
  Corpus noisy = corpus;
  std::vector<LabelFlip> log;
  const auto n = static_cast<std::int64_t>(corpus.instances.size());
  const auto n_flips = static_cast<std::int64_t>(rate * static_cast<double>(n));
  if (n_flips == 0) return {std::move(noisy), std::move(log)};
  if (corpus.relations.size() < 2) {
    throw std::invalid_argument("inject_label_noise: need at least 2 labels to flip");
  }

  std::mt19937_64 rng(seed);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::int64_t> chosen(order.begin(), order.begin() + n_flips);
  std::sort(chosen.begin(), chosen.end());  // log in corpus order

  std::uniform_int_distribution<std::size_t> label_pick(0, corpus.relations.size() - 2);
  for (auto idx : chosen) {
    auto& inst = noisy.instances[static_cast<std::size_t>(idx)];
    // Draw from the label set minus the current one.
    std::vector<std::string> others;
    others.reserve(corpus.relations.size() - 1);
    for (const auto& r : corpus.relations) {
      if (r != inst.relation) others.push_back(r);
    }
    const std::string new_label = others[label_pick(rng)];
    log.push_back(LabelFlip{inst.id, inst.relation, new_label});
    inst.relation = new_label;
  }
  return {std::move(noisy), std::move(log)};
}

void save_flip_log_csv(const std::vector<LabelFlip>& flips, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("flip log: cannot write " + path);
  out << "id,old,new\n";
  for (const auto& f : flips) out << f.id << ',' << f.old_label << ',' << f.new_label << '\n';
  if (!out) throw std::runtime_error("flip log: write failed for " + path);
}

std::vector<LabelFlip> load_flip_log_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("flip log: cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != "id,old,new") {
    throw std::runtime_error("flip log: bad header in " + path);
  }
  std::vector<LabelFlip> flips;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw std::runtime_error("flip log: bad row in " + path);
    }
    flips.push_back(LabelFlip{line.substr(0, c1), line.substr(c1 + 1, c2 - c1 - 1),
                              line.substr(c2 + 1)});
  }
  return flips;
}

// --- statistics / filters -----------------------------------------------------------------

DatasetStats dataset_stats(const Corpus& corpus) {
  if (corpus.instances.empty()) throw std::invalid_argument("dataset_stats: empty corpus");
  DatasetStats stats;
  stats.size = static_cast<std::int64_t>(corpus.instances.size());
  std::set<std::string> relations, types;
  std::int64_t negatives = 0;
  for (const auto& inst : corpus.instances) {
    if (inst.relation == kNoRelation) {
      ++negatives;
    } else {
      relations.insert(inst.relation);
    }
    types.insert(inst.subj_type);
    types.insert(inst.obj_type);
  }
  stats.n_relations = static_cast<std::int64_t>(relations.size());
  stats.n_entity_types = static_cast<std::int64_t>(types.size());
  stats.negative_fraction = static_cast<double>(negatives) / static_cast<double>(stats.size);
  return stats;
}

Corpus filter_by_type_pair(const Corpus& corpus, const std::string& subj_type,
                           const std::string& obj_type) {
  std::vector<REInstance> kept;
  for (const auto& inst : corpus.instances) {
    if (inst.subj_type == subj_type && inst.obj_type == obj_type) kept.push_back(inst);
  }
  return make_corpus(std::move(kept), corpus.split);
}

}  // namespace caproute
