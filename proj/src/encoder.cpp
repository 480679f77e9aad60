#include "caproute/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace caproute {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> toks = {
      "[PAD]", "[UNK]", "MASK", "[EOS]", "[SEP]",
      "[e11]", "[e12]", "[e21]", "[e22]",
      "+",     "*",     "#",    "&",     "@"};
  return toks;
}

std::string relation_token(const std::string& relation) { return "[rel:" + relation + "]"; }

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

}  // namespace

std::int64_t Vocabulary::intern(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const auto id = static_cast<std::int64_t>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts,
                             const std::vector<std::string>& relations) {
  Vocabulary v;
  for (const auto& t : reserved_tokens()) v.intern(t);
  for (const auto& r : relations) {
    if (r.empty()) throw std::invalid_argument("vocabulary: empty relation name");
    if (v.index_.count(relation_token(r))) {
      throw std::invalid_argument("vocabulary: duplicate relation " + r);
    }
    v.intern(relation_token(r));
    v.relations_.push_back(r);
  }
  for (const auto& text : texts) {
    for (const auto& w : split_ws(text)) v.intern(w);
  }
  return v;
}

std::int64_t Vocabulary::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(std::int64_t id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocabulary: id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::int64_t Vocabulary::relation_token_id(const std::string& relation) const {
  auto it = index_.find(relation_token(relation));
  if (it == index_.end()) {
    throw std::invalid_argument("vocabulary: unknown relation " + relation);
  }
  return it->second;
}

std::string Vocabulary::relation_of_token(std::int64_t id) const {
  const std::string& tok = token_of(id);
  constexpr std::string_view prefix = "[rel:";
  if (tok.size() > prefix.size() + 1 && tok.compare(0, prefix.size(), prefix) == 0 &&
      tok.back() == ']') {
    return tok.substr(prefix.size(), tok.size() - prefix.size() - 1);
  }
  return "";
}

Vocabulary::TokenizeResult Vocabulary::tokenize(const std::string& text,
                                                std::int64_t max_len) const {
  auto words = split_ws(text);
  if (words.empty()) throw std::invalid_argument("tokenize: empty text");
  TokenizeResult out;
  out.ids.reserve(words.size());
  for (const auto& w : words) out.ids.push_back(id_of(w));
  if (max_len > 0 && static_cast<std::int64_t>(out.ids.size()) > max_len) {
    out.ids.resize(static_cast<std::size_t>(max_len));
    out.truncated = true;
  }
  return out;
}

std::string Vocabulary::detokenize(const std::vector<std::int64_t>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token_of(ids[i]);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  nlohmann::json j;
  j["tokens"] = tokens_;
  j["relations"] = relations_;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("vocabulary: cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("vocabulary: write failed for " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("vocabulary: cannot read " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  Vocabulary v;
  const auto tokens = j.at("tokens").get<std::vector<std::string>>();
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size()) {
    throw std::runtime_error("vocabulary: reserved block missing in " + path);
  }
  for (std::size_t i = 0; i < reserved.size(); ++i) {
    if (tokens[i] != reserved[i]) {
      throw std::runtime_error("vocabulary: reserved token order corrupted in " + path);
    }
  }
  for (const auto& t : tokens) v.intern(t);
  v.relations_ = j.at("relations").get<std::vector<std::string>>();
  for (const auto& r : v.relations_) {
    if (!v.index_.count(relation_token(r))) {
      throw std::runtime_error("vocabulary: relation token missing for " + r);
    }
  }
  return v;
}

// --- toy encoder -----------------------------------------------------------------

Tensor sinusoidal_positions(std::int64_t max_len, std::int64_t d) {
  std::vector<double> data(static_cast<std::size_t>(max_len * d));
  for (std::int64_t pos = 0; pos < max_len; ++pos) {
    for (std::int64_t i = 0; i < d; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      data[static_cast<std::size_t>(pos * d + i)] = (i % 2 == 0) ? std::sin(angle)
                                                                 : std::cos(angle);
    }
  }
  return Tensor::from_data({max_len, d}, std::move(data));
}

ToyEncoder::ToyEncoder(std::int64_t vocab_size, const EncoderConfig& cfg, std::mt19937_64& rng,
                       const std::string& name_prefix)
    : cfg_(cfg) {
  if (vocab_size < 1) throw std::invalid_argument("encoder: empty vocabulary");
  if (cfg.layers < 1 || cfg.d < 1 || cfg.heads < 1 || cfg.ffn < 1 || cfg.max_len < 1) {
    throw std::invalid_argument("encoder: config values must be >= 1");
  }
  if (cfg.d % cfg.heads != 0) {
    throw std::invalid_argument("encoder: d must be divisible by the head count");
  }
  const std::int64_t dh = cfg.d / cfg.heads;
  const double attn_std = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  const double ffn_std = 1.0 / std::sqrt(static_cast<double>(cfg.ffn));

  tok_emb_ = Parameter{Tensor::randn({vocab_size, cfg.d}, rng, 0.02, true),
                       name_prefix + ".tok_emb"};
  pos_ = sinusoidal_positions(cfg.max_len, cfg.d);

  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    Layer layer;
    const std::string lp = name_prefix + ".l" + std::to_string(l);
    for (std::int64_t h = 0; h < cfg.heads; ++h) {
      const std::string hp = lp + ".h" + std::to_string(h);
      Head head;
      head.wq = Parameter{Tensor::randn({cfg.d, dh}, rng, attn_std, true), hp + ".wq"};
      head.wk = Parameter{Tensor::randn({cfg.d, dh}, rng, attn_std, true), hp + ".wk"};
      head.wv = Parameter{Tensor::randn({cfg.d, dh}, rng, attn_std, true), hp + ".wv"};
      head.bq = Parameter{Tensor::zeros({1, dh}, true), hp + ".bq"};
      head.bk = Parameter{Tensor::zeros({1, dh}, true), hp + ".bk"};
      head.bv = Parameter{Tensor::zeros({1, dh}, true), hp + ".bv"};
      layer.heads.push_back(std::move(head));
    }
    layer.wo = Parameter{Tensor::randn({cfg.d, cfg.d}, rng, attn_std, true), lp + ".wo"};
    layer.bo = Parameter{Tensor::zeros({1, cfg.d}, true), lp + ".bo"};
    layer.w1 = Parameter{Tensor::randn({cfg.d, cfg.ffn}, rng, attn_std, true), lp + ".w1"};
    layer.b1 = Parameter{Tensor::zeros({1, cfg.ffn}, true), lp + ".b1"};
    layer.w2 = Parameter{Tensor::randn({cfg.ffn, cfg.d}, rng, ffn_std, true), lp + ".w2"};
    layer.b2 = Parameter{Tensor::zeros({1, cfg.d}, true), lp + ".b2"};
    layers_.push_back(std::move(layer));
  }
}

HiddenStates ToyEncoder::encode(const std::vector<std::int64_t>& ids) const {
  if (ids.empty()) throw std::invalid_argument("encode: empty input");
  const auto n = static_cast<std::int64_t>(ids.size());
  if (n > cfg_.max_len) throw std::invalid_argument("encode: sequence exceeds max_len");
  const std::int64_t dh = cfg_.d / cfg_.heads;
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<std::int64_t> positions(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = i;

  HiddenStates hs;
  hs.token_ids = ids;
  hs.source = HiddenStates::Source::toy;

  Tensor x = add(embedding_rows(tok_emb_.value, ids), select_rows(pos_, positions));
  hs.layers.push_back(x);

  for (const auto& layer : layers_) {
    Tensor ln1 = layer_norm_rows(x);
    std::vector<Tensor> ctx;
    ctx.reserve(layer.heads.size());
    for (const auto& head : layer.heads) {
      Tensor q = add_rowvec(matmul(ln1, head.wq.value), head.bq.value);
      Tensor k = add_rowvec(matmul(ln1, head.wk.value), head.bk.value);
      Tensor v = add_rowvec(matmul(ln1, head.wv.value), head.bv.value);
      Tensor attn = softmax_rows(mul_scalar(matmul(q, k, false, true), score_scale));
      ctx.push_back(matmul(attn, v));
    }
    Tensor merged = ctx.size() == 1 ? ctx.front() : concat_cols(ctx);
    x = add(x, add_rowvec(matmul(merged, layer.wo.value), layer.bo.value));
    Tensor ln2 = layer_norm_rows(x);
    Tensor hidden = gelu(add_rowvec(matmul(ln2, layer.w1.value), layer.b1.value));
    x = add(x, add_rowvec(matmul(hidden, layer.w2.value), layer.b2.value));
    hs.layers.push_back(x);
  }
  return hs;
}

std::vector<Parameter*> ToyEncoder::parameters() {
  std::vector<Parameter*> out{&tok_emb_};
  for (auto& layer : layers_) {
    for (auto& head : layer.heads) {
      out.push_back(&head.wq);
      out.push_back(&head.wk);
      out.push_back(&head.wv);
      out.push_back(&head.bq);
      out.push_back(&head.bk);
      out.push_back(&head.bv);
    }
    for (auto* p : {&layer.wo, &layer.bo, &layer.w1, &layer.b1, &layer.w2, &layer.b2}) {
      out.push_back(p);
    }
  }
  return out;
}

// --- hidden-state container --------------------------------------------------------

namespace {

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) buf.push_back(static_cast<char>((v >> s) & 0xff));
}

void put_f32(std::string& buf, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  put_u32(buf, u);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  if (!in) throw std::runtime_error("hidden container: truncated file");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("hidden container: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_hidden_container(const std::string& path,
                            const std::vector<std::pair<std::string, HiddenStates>>& records) {
  std::string buf;
  buf += "CAPH";
  put_u32(buf, 1);
  put_u32(buf, static_cast<std::uint32_t>(records.size()));

  nlohmann::json manifest;
  manifest["version"] = 1;
  auto& recs = manifest["records"] = nlohmann::json::array();

  for (const auto& [id, hs] : records) {
    if (id.empty() || id.size() > 0xffff) {
      throw std::invalid_argument("hidden container: bad record id");
    }
    if (hs.layers.empty()) throw std::invalid_argument("hidden container: empty record " + id);
    const std::int64_t h = hs.depth(), n = hs.length(), d = hs.dim();
    for (const auto& layer : hs.layers) {
      if (layer.rows() != n || layer.cols() != d) {
        throw std::invalid_argument("hidden container: ragged record " + id);
      }
    }
    const std::uint64_t offset = buf.size();
    put_u16(buf, static_cast<std::uint16_t>(id.size()));
    buf += id;
    put_u32(buf, static_cast<std::uint32_t>(h));
    put_u32(buf, static_cast<std::uint32_t>(n));
    put_u32(buf, static_cast<std::uint32_t>(d));
    for (const auto& layer : hs.layers) {
      for (double v : layer.values()) put_f32(buf, static_cast<float>(v));
    }
    recs.push_back({{"id", id}, {"offset", offset}, {"h", h}, {"n", n}, {"d", d}});
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("hidden container: cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("hidden container: write failed for " + path);
  out.close();

  std::ofstream mout(path + ".manifest.json", std::ios::binary);
  if (!mout) throw std::runtime_error("hidden container: cannot write manifest for " + path);
  mout << manifest.dump(2) << '\n';
  if (!mout) throw std::runtime_error("hidden container: manifest write failed for " + path);
}

HiddenStateFile HiddenStateFile::open(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("hidden container: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "CAPH") {
    throw std::runtime_error("hidden container: bad magic in " + path);
  }
  const auto version = get_u32(in);
  if (version != 1) throw std::runtime_error("hidden container: unsupported version");
  const auto count = get_u32(in);

  std::ifstream min(path + ".manifest.json", std::ios::binary);
  if (!min) throw std::runtime_error("hidden container: missing manifest for " + path);
  nlohmann::json manifest = nlohmann::json::parse(min);
  const auto& recs = manifest.at("records");
  if (recs.size() != count) {
    throw std::runtime_error("hidden container: manifest record count disagrees with file");
  }

  HiddenStateFile f;
  f.path_ = path;
  for (const auto& r : recs) {
    Entry e;
    e.offset = r.at("offset").get<std::uint64_t>();
    e.h = r.at("h").get<std::int64_t>();
    e.n = r.at("n").get<std::int64_t>();
    e.d = r.at("d").get<std::int64_t>();
    const auto id = r.at("id").get<std::string>();
    if (!f.entries_.emplace(id, e).second) {
      throw std::runtime_error("hidden container: duplicate id " + id);
    }
    f.order_.push_back(id);
  }
  return f;
}

HiddenStates HiddenStateFile::load(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw std::runtime_error("hidden container: missing id " + id);
  const Entry& e = it->second;

  std::ifstream in(path_, std::ios::binary);
  if (!in) throw std::runtime_error("hidden container: cannot open " + path_);
  in.seekg(static_cast<std::streamoff>(e.offset));
  const auto id_len = get_u16(in);
  std::string stored(id_len, '\0');
  in.read(stored.data(), id_len);
  if (!in || stored != id) {
    throw std::runtime_error("hidden container: manifest offset does not match record " + id);
  }
  const auto h = static_cast<std::int64_t>(get_u32(in));
  const auto n = static_cast<std::int64_t>(get_u32(in));
  const auto d = static_cast<std::int64_t>(get_u32(in));
  if (h != e.h || n != e.n || d != e.d) {
    throw std::runtime_error("hidden container: dimensions disagree with manifest for " + id);
  }
  if (h < 1 || n < 1 || d < 1) {
    throw std::runtime_error("hidden container: degenerate dimensions for " + id);
  }

  const std::size_t total = static_cast<std::size_t>(h * n * d);
  std::vector<unsigned char> raw(total * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw std::runtime_error("hidden container: truncated payload for " + id);
  }

  HiddenStates hs;
  hs.source = HiddenStates::Source::file;
  const std::size_t per_layer = static_cast<std::size_t>(n * d);
  for (std::int64_t l = 0; l < h; ++l) {
    std::vector<double> values(per_layer);
    for (std::size_t k = 0; k < per_layer; ++k) {
      const std::size_t byte = (static_cast<std::size_t>(l) * per_layer + k) * 4;
      std::uint32_t u = static_cast<std::uint32_t>(raw[byte]) |
                        (static_cast<std::uint32_t>(raw[byte + 1]) << 8) |
                        (static_cast<std::uint32_t>(raw[byte + 2]) << 16) |
                        (static_cast<std::uint32_t>(raw[byte + 3]) << 24);
      float fv;
      std::memcpy(&fv, &u, sizeof fv);
      values[k] = static_cast<double>(fv);
    }
    hs.layers.push_back(Tensor::from_data({n, d}, std::move(values)));
  }
  return hs;
}

}  // namespace caproute
