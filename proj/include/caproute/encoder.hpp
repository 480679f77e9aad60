#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "caproute/hidden_states.hpp"
#include "caproute/tensor.hpp"

namespace caproute {

// Whitespace vocabulary with a fixed reserved block: control tokens, entity
// markers, separator symbols, then one token per relation (decoder targets),
// then corpus words in first-seen order. Ids are dense from 0.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary build(const std::vector<std::string>& texts,
                          const std::vector<std::string>& relations);

  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kUnk = 1;
  static constexpr std::int64_t kMask = 2;
  static constexpr std::int64_t kEos = 3;
  static constexpr std::int64_t kSep = 4;
  static constexpr std::int64_t kE11 = 5;
  static constexpr std::int64_t kE12 = 6;
  static constexpr std::int64_t kE21 = 7;
  static constexpr std::int64_t kE22 = 8;
  // Separator symbols +, *, #, &, @ occupy 9..13.
  static constexpr std::int64_t kReservedCount = 14;

  std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }
  // Returns kUnk for out-of-vocabulary words.
  std::int64_t id_of(const std::string& token) const;
  const std::string& token_of(std::int64_t id) const;

  const std::vector<std::string>& relations() const { return relations_; }
  std::int64_t relation_token_id(const std::string& relation) const;
  // Inverse of relation_token_id; empty if the id is not a relation token.
  std::string relation_of_token(std::int64_t id) const;

  struct TokenizeResult {
    std::vector<std::int64_t> ids;
    bool truncated = false;
  };
  // Whitespace split; max_len 0 means unlimited. Empty text is an error.
  TokenizeResult tokenize(const std::string& text, std::int64_t max_len = 0) const;
  std::string detokenize(const std::vector<std::int64_t>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::int64_t intern(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> index_;
  std::vector<std::string> relations_;
};

// --- toy transformer encoder ----------------------------------------------------

struct EncoderConfig {
  std::int64_t layers = 4;
  std::int64_t d = 64;
  std::int64_t heads = 4;
  std::int64_t ffn = 256;
  std::int64_t max_len = 128;
};

// Pre-LN transformer encoder with sinusoidal positions. Stands in for a
// pretrained backbone: small enough to train on one core, same interface.
class ToyEncoder {
 public:
  ToyEncoder(std::int64_t vocab_size, const EncoderConfig& cfg, std::mt19937_64& rng,
             const std::string& name_prefix = "enc");

  // All layer outputs: depth = layers + 1 (embedding stack included).
  HiddenStates encode(const std::vector<std::int64_t>& ids) const;

  std::vector<Parameter*> parameters();
  const EncoderConfig& config() const { return cfg_; }

 private:
  struct Head {
    Parameter wq, wk, wv;  // d x dh
    Parameter bq, bk, bv;  // 1 x dh
  };
  struct Layer {
    std::vector<Head> heads;
    Parameter wo, bo;  // d x d, 1 x d
    Parameter w1, b1;  // d x ffn, 1 x ffn
    Parameter w2, b2;  // ffn x d, 1 x d
  };

  EncoderConfig cfg_;
  Parameter tok_emb_;  // vocab x d
  Tensor pos_;         // max_len x d, constant
  std::vector<Layer> layers_;
};

// Sinusoidal position table (constant, no gradient).
Tensor sinusoidal_positions(std::int64_t max_len, std::int64_t d);

// --- hidden-state container ------------------------------------------------------
//
// Binary layout, little-endian: magic "CAPH", version u32 = 1, record count
// u32; per record: id length u16, UTF-8 id bytes, h u32, n u32, d u32, then
// h*n*d float32 values (layer-major, then token, then dim). A JSON manifest
// sidecar at <path>.manifest.json lists ids, offsets and dims.

void write_hidden_container(const std::string& path,
                            const std::vector<std::pair<std::string, HiddenStates>>& records);

class HiddenStateFile {
 public:
  static HiddenStateFile open(const std::string& path);

  const std::vector<std::string>& ids() const { return order_; }
  HiddenStates load(const std::string& id) const;

 private:
  struct Entry {
    std::uint64_t offset = 0;
    std::int64_t h = 0, n = 0, d = 0;
  };
  std::string path_;
  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> entries_;
};

}  // namespace caproute
