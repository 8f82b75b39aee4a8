#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "aspectemb/vecmath.hpp"

namespace aspectemb {

enum class PoolingMode { Mean, FirstToken };

// Token -> dense id map. Id 0 is always the unknown token.
struct Vocabulary {
  static constexpr std::uint32_t kUnkId = 0;
  static constexpr const char* kUnkToken = "<unk>";

  std::vector<std::string> tokens;  // index == id; tokens[0] == kUnkToken
  std::unordered_map<std::string, std::uint32_t> ids;
  std::size_t min_freq = 1;

  std::size_t size() const { return tokens.size(); }
  std::uint32_t id_of(const std::string& token) const {
    auto it = ids.find(token);
    return it == ids.end() ? kUnkId : it->second;
  }
};

using TokenIds = std::vector<std::uint32_t>;

// Embedding table + two-layer tanh projection. Immutable during encoding;
// the trainer is the single writer.
struct EncoderParams {
  Vocabulary vocab;
  Matrix embedding;  // V x d
  Matrix w1;         // d x h
  Vec b1;            // h
  Matrix w2;         // h x d_out
  Vec b2;            // d_out
  PoolingMode pooling = PoolingMode::Mean;
  std::size_t max_seq_len = 320;

  std::size_t embed_dim() const { return embedding.cols; }
  std::size_t hidden_dim() const { return b1.size(); }
  std::size_t out_dim() const { return b2.size(); }
};

// Gradient (or optimizer-moment) storage with the same shapes as the params.
struct EncoderGrads {
  Matrix embedding;
  Matrix w1;
  Vec b1;
  Matrix w2;
  Vec b2;

  static EncoderGrads zeros_like(const EncoderParams& params);
  void reset();
};

inline constexpr std::size_t kDefaultEmbedDim = 64;
inline constexpr std::size_t kDefaultHiddenDim = 64;
inline constexpr std::size_t kDefaultOutDim = 64;
inline constexpr std::size_t kDefaultMinFreq = 2;
inline constexpr std::size_t kDefaultMaxSeqLen = 320;

// Lowercases (ASCII) and splits on maximal runs of non-alphanumeric bytes.
std::vector<std::string> split_tokens(const std::string& text);

// Tokens with frequency >= min_freq, ids assigned by (frequency desc, token
// asc); id 0 is the unknown token.
Vocabulary build_vocab(const std::vector<std::string>& texts, std::size_t min_freq);

TokenIds tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_seq_len);

// Pool token embeddings (mean or first row), then h = tanh(pooled*W1 + b1)*W2 + b2.
// Empty input pools to the zero vector; *empty_input is set when provided.
Vec encode(const EncoderParams& params, const TokenIds& ids, bool* empty_input = nullptr);

// Accumulates d(loss)/d(params) for one input given d(loss)/d(encode output).
void encode_backward_accum(const EncoderParams& params, const TokenIds& ids,
                           const Vec& upstream, EncoderGrads& grads);
EncoderGrads encode_backward(const EncoderParams& params, const TokenIds& ids,
                             const Vec& upstream);

// Weights uniform in +-1/sqrt(fan_in) per tensor (fan_in: d for the embedding
// table and W1, h for W2), biases zero, deterministic per seed.
EncoderParams init_params(std::uint64_t seed, Vocabulary vocab, std::size_t embed_dim,
                          std::size_t hidden_dim, std::size_t out_dim, PoolingMode pooling,
                          std::size_t max_seq_len);

// Binary model file: magic, format version, dims, pooling, vocab, row-major
// little-endian f64 tensors, trailing checksum. Round-trips bit-exactly.
void save_params(const EncoderParams& params, const std::string& path);
EncoderParams load_params(const std::string& path);

// Lines of "id v1 v2 ... vd". Rejects ragged dimensions and duplicate ids.
std::map<std::string, Vec> load_external_embeddings(const std::string& path);
void write_external_embedding(std::ostream& out, const std::string& id, const Vec& vec);

const char* pooling_name(PoolingMode mode);
PoolingMode pooling_from_name(const std::string& name);

}  // namespace aspectemb
