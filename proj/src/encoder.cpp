#include "aspectemb/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "aspectemb/rng.hpp"

namespace aspectemb {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

bool is_token_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

}  // namespace

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (is_token_char(c)) {
      current.push_back(ascii_lower(c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocabulary build_vocab(const std::vector<std::string>& texts, std::size_t min_freq) {
  if (min_freq < 1) throw std::invalid_argument("build_vocab: min_freq must be >= 1");
  std::unordered_map<std::string, std::size_t> freq;
  for (const std::string& text : texts) {
    for (std::string& token : split_tokens(text)) ++freq[std::move(token)];
  }
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (auto& [token, count] : freq) {
    if (count >= min_freq) entries.emplace_back(token, count);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  vocab.min_freq = min_freq;
  vocab.tokens.reserve(entries.size() + 1);
  vocab.tokens.push_back(Vocabulary::kUnkToken);
  for (auto& [token, count] : entries) {
    vocab.ids.emplace(token, static_cast<std::uint32_t>(vocab.tokens.size()));
    vocab.tokens.push_back(token);
  }
  return vocab;
}

TokenIds tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_seq_len) {
  TokenIds ids;
  for (const std::string& token : split_tokens(text)) {
    if (ids.size() >= max_seq_len) break;
    ids.push_back(vocab.id_of(token));
  }
  return ids;
}

EncoderGrads EncoderGrads::zeros_like(const EncoderParams& params) {
  EncoderGrads g;
  g.embedding = Matrix(params.embedding.rows, params.embedding.cols);
  g.w1 = Matrix(params.w1.rows, params.w1.cols);
  g.b1.assign(params.b1.size(), 0.0);
  g.w2 = Matrix(params.w2.rows, params.w2.cols);
  g.b2.assign(params.b2.size(), 0.0);
  return g;
}

void EncoderGrads::reset() {
  std::fill(embedding.data.begin(), embedding.data.end(), 0.0);
  std::fill(w1.data.begin(), w1.data.end(), 0.0);
  std::fill(b1.begin(), b1.end(), 0.0);
  std::fill(w2.data.begin(), w2.data.end(), 0.0);
  std::fill(b2.begin(), b2.end(), 0.0);
}

namespace {

void check_ids(const EncoderParams& params, const TokenIds& ids) {
  for (std::uint32_t id : ids) {
    if (id >= params.embedding.rows) fail("encode: token id out of range");
  }
}

Vec pool_tokens(const EncoderParams& params, const TokenIds& ids) {
  const std::size_t d = params.embed_dim();
  Vec pooled(d, 0.0);
  if (ids.empty()) return pooled;
  if (params.pooling == PoolingMode::FirstToken) {
    const double* row = params.embedding.row(ids[0]);
    pooled.assign(row, row + d);
    return pooled;
  }
  for (std::uint32_t id : ids) {
    const double* row = params.embedding.row(id);
    for (std::size_t i = 0; i < d; ++i) pooled[i] += row[i];
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (double& x : pooled) x *= inv;
  return pooled;
}

}  // namespace

Vec encode(const EncoderParams& params, const TokenIds& ids, bool* empty_input) {
  check_ids(params, ids);
  if (empty_input != nullptr) *empty_input = ids.empty();

  const std::size_t d = params.embed_dim();
  const std::size_t h = params.hidden_dim();
  const std::size_t out = params.out_dim();

  const Vec pooled = pool_tokens(params, ids);

  Vec hidden(h);
  for (std::size_t j = 0; j < h; ++j) {
    double z = params.b1[j];
    for (std::size_t i = 0; i < d; ++i) z += pooled[i] * params.w1.at(i, j);
    hidden[j] = std::tanh(z);
  }

  Vec result(out);
  for (std::size_t k = 0; k < out; ++k) {
    double z = params.b2[k];
    for (std::size_t j = 0; j < h; ++j) z += hidden[j] * params.w2.at(j, k);
    result[k] = z;
  }
  return result;
}

void encode_backward_accum(const EncoderParams& params, const TokenIds& ids,
                           const Vec& upstream, EncoderGrads& grads) {
  check_ids(params, ids);
  const std::size_t d = params.embed_dim();
  const std::size_t h = params.hidden_dim();
  const std::size_t out = params.out_dim();
  if (upstream.size() != out) fail("encode_backward: upstream gradient has wrong dimension");

  // Recompute the forward activations.
  const Vec pooled = pool_tokens(params, ids);
  Vec hidden(h);
  for (std::size_t j = 0; j < h; ++j) {
    double z = params.b1[j];
    for (std::size_t i = 0; i < d; ++i) z += pooled[i] * params.w1.at(i, j);
    hidden[j] = std::tanh(z);
  }

  // Output layer: out_k = sum_j hidden_j * w2[j][k] + b2_k.
  Vec grad_hidden(h, 0.0);
  for (std::size_t k = 0; k < out; ++k) {
    grads.b2[k] += upstream[k];
    for (std::size_t j = 0; j < h; ++j) {
      grads.w2.at(j, k) += hidden[j] * upstream[k];
      grad_hidden[j] += params.w2.at(j, k) * upstream[k];
    }
  }

  // tanh layer: d tanh(z) / dz = 1 - tanh(z)^2.
  Vec grad_z(h);
  for (std::size_t j = 0; j < h; ++j) {
    grad_z[j] = grad_hidden[j] * (1.0 - hidden[j] * hidden[j]);
  }

  Vec grad_pooled(d, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    grads.b1[j] += grad_z[j];
    for (std::size_t i = 0; i < d; ++i) {
      grads.w1.at(i, j) += pooled[i] * grad_z[j];
      grad_pooled[i] += params.w1.at(i, j) * grad_z[j];
    }
  }

  if (ids.empty()) return;  // zero pooled vector: no embedding rows touched
  if (params.pooling == PoolingMode::FirstToken) {
    double* row = grads.embedding.row(ids[0]);
    for (std::size_t i = 0; i < d; ++i) row[i] += grad_pooled[i];
    return;
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (std::uint32_t id : ids) {
    double* row = grads.embedding.row(id);
    for (std::size_t i = 0; i < d; ++i) row[i] += inv * grad_pooled[i];
  }
}

EncoderGrads encode_backward(const EncoderParams& params, const TokenIds& ids,
                             const Vec& upstream) {
  EncoderGrads grads = EncoderGrads::zeros_like(params);
  encode_backward_accum(params, ids, upstream, grads);
  return grads;
}

EncoderParams init_params(std::uint64_t seed, Vocabulary vocab, std::size_t embed_dim,
                          std::size_t hidden_dim, std::size_t out_dim, PoolingMode pooling,
                          std::size_t max_seq_len) {
  if (embed_dim < 1 || hidden_dim < 1 || out_dim < 1) {
    throw std::invalid_argument("init_params: dimensions must be >= 1");
  }
  EncoderParams params;
  params.vocab = std::move(vocab);
  params.pooling = pooling;
  params.max_seq_len = max_seq_len;
  params.embedding = Matrix(params.vocab.size(), embed_dim);
  params.w1 = Matrix(embed_dim, hidden_dim);
  params.b1.assign(hidden_dim, 0.0);
  params.w2 = Matrix(hidden_dim, out_dim);
  params.b2.assign(out_dim, 0.0);

  Rng rng(seed);
  const auto fill = [&rng](Matrix& m, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : m.data) x = rng.uniform_symmetric(bound);
  };
  fill(params.embedding, embed_dim);
  fill(params.w1, embed_dim);
  fill(params.w2, hidden_dim);
  return params;
}

// ---------------------------------------------------------------------------
// Model file serialization.

namespace {

constexpr char kMagic[4] = {'A', 'E', 'M', 'B'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  return hash;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  std::string str(std::size_t n) {
    if (pos_ + n > end_) fail("model file: unexpected end of data");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == end_; }

 private:
  unsigned char byte() {
    if (pos_ >= end_) fail("model file: unexpected end of data");
    return static_cast<unsigned char>(bytes_[pos_++]);
  }

  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

void put_matrix(std::string& out, const Matrix& m) {
  put_u64(out, m.rows);
  put_u64(out, m.cols);
  for (double x : m.data) put_f64(out, x);
}

Matrix read_matrix(ByteReader& r) {
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  Matrix m(rows, cols);
  for (double& x : m.data) x = r.f64();
  return m;
}

void put_vec(std::string& out, const Vec& v) {
  put_u64(out, v.size());
  for (double x : v) put_f64(out, x);
}

Vec read_vec(ByteReader& r) {
  Vec v(r.u64());
  for (double& x : v) x = r.f64();
  return v;
}

}  // namespace

void save_params(const EncoderParams& params, const std::string& path) {
  std::string bytes;
  bytes.append(kMagic, sizeof kMagic);
  put_u32(bytes, kFormatVersion);
  bytes.push_back(params.pooling == PoolingMode::Mean ? 0 : 1);
  put_u64(bytes, params.max_seq_len);
  put_u64(bytes, params.vocab.min_freq);
  put_u64(bytes, params.vocab.tokens.size());
  for (const std::string& token : params.vocab.tokens) {
    put_u32(bytes, static_cast<std::uint32_t>(token.size()));
    bytes.append(token);
  }
  put_matrix(bytes, params.embedding);
  put_matrix(bytes, params.w1);
  put_vec(bytes, params.b1);
  put_matrix(bytes, params.w2);
  put_vec(bytes, params.b2);
  put_u64(bytes, fnv1a64(bytes));

  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open model file '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail("write to model file '" + path + "' failed");
}

EncoderParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open model file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();

  if (bytes.size() < sizeof kMagic + 4 + 8) fail("model file '" + path + "': checksum mismatch");
  const std::string payload = bytes.substr(0, bytes.size() - 8);
  ByteReader tail(bytes, bytes.size());
  tail.str(bytes.size() - 8);
  const std::uint64_t stored = tail.u64();
  if (fnv1a64(payload) != stored) fail("model file '" + path + "': checksum mismatch");

  ByteReader r(bytes, bytes.size() - 8);
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    fail("model file '" + path + "': bad magic bytes");
  }
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    fail("model file '" + path + "': unsupported format version " + std::to_string(version) +
         " (expected " + std::to_string(kFormatVersion) + ")");
  }

  EncoderParams params;
  const std::string pooling = r.str(1);
  params.pooling = pooling[0] == 0 ? PoolingMode::Mean : PoolingMode::FirstToken;
  params.max_seq_len = r.u64();
  params.vocab.min_freq = r.u64();
  const std::uint64_t vocab_size = r.u64();
  params.vocab.tokens.reserve(vocab_size);
  for (std::uint64_t i = 0; i < vocab_size; ++i) {
    const std::uint32_t len = r.u32();
    params.vocab.tokens.push_back(r.str(len));
    if (i > 0) params.vocab.ids.emplace(params.vocab.tokens.back(), static_cast<std::uint32_t>(i));
  }
  params.embedding = read_matrix(r);
  params.w1 = read_matrix(r);
  params.b1 = read_vec(r);
  params.w2 = read_matrix(r);
  params.b2 = read_vec(r);
  if (!r.done()) fail("model file '" + path + "': trailing data");
  if (params.embedding.rows != params.vocab.tokens.size() ||
      params.w1.rows != params.embedding.cols || params.b1.size() != params.w1.cols ||
      params.w2.rows != params.w1.cols || params.b2.size() != params.w2.cols) {
    fail("model file '" + path + "': inconsistent dimensions");
  }
  return params;
}

std::map<std::string, Vec> load_external_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open embedding file '" + path + "'");
  std::map<std::string, Vec> embeddings;
  std::string line;
  std::size_t lineno = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = path + ":" + std::to_string(lineno);
    std::istringstream fields(line);
    std::string id;
    if (!(fields >> id)) fail(where + ": missing document id");
    Vec vec;
    double value = 0.0;
    while (fields >> value) vec.push_back(value);
    if (!fields.eof()) fail(where + ": malformed number");
    if (vec.empty()) fail(where + ": no embedding values");
    if (dim == 0) {
      dim = vec.size();
    } else if (vec.size() != dim) {
      fail(where + ": dimension " + std::to_string(vec.size()) + " does not match " +
           std::to_string(dim));
    }
    if (!embeddings.emplace(id, std::move(vec)).second) {
      fail(where + ": duplicate document id '" + id + "'");
    }
  }
  return embeddings;
}

void write_external_embedding(std::ostream& out, const std::string& id, const Vec& vec) {
  out << id;
  char buf[32];
  for (double x : vec) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    out << ' ' << buf;
  }
  out << '\n';
}

const char* pooling_name(PoolingMode mode) {
  return mode == PoolingMode::Mean ? "mean" : "first";
}

PoolingMode pooling_from_name(const std::string& name) {
  if (name == "mean") return PoolingMode::Mean;
  if (name == "first") return PoolingMode::FirstToken;
  fail("unknown pooling mode '" + name + "' (expected 'mean' or 'first')");
}

}  // namespace aspectemb
