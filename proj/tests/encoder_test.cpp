#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <vector>

#include "aspectemb/encoder.hpp"
#include "aspectemb/rng.hpp"
#include "support/fd.hpp"
#include "support/tempfile.hpp"

using namespace aspectemb;
using testsupport::TempFile;

namespace {

// Small parameter set with hand-picked weights for straight-line checks.
EncoderParams tiny_params(PoolingMode pooling = PoolingMode::Mean) {
  EncoderParams p;
  p.vocab = build_vocab({"alpha beta gamma alpha beta gamma"}, 1);  // V = 4 with <unk>
  p.embedding = Matrix(4, 2);
  p.embedding.data = {0.0, 0.0,    // <unk>
                      0.1, -0.2,   // alpha (freq ties broken alphabetically)
                      0.3, 0.4,    // beta
                      -0.5, 0.6};  // gamma
  p.w1 = Matrix(2, 2);
  p.w1.data = {0.5, -0.25, 0.75, 0.125};
  p.b1 = {0.01, -0.02};
  p.w2 = Matrix(2, 2);
  p.w2.data = {1.0, 0.5, -0.5, 0.25};
  p.b2 = {0.1, -0.1};
  p.pooling = pooling;
  p.max_seq_len = 320;
  return p;
}

EncoderParams random_params(std::uint64_t seed, PoolingMode pooling) {
  const Vocabulary vocab =
      build_vocab({"one two three four", "one two three four"}, 1);  // V = 5
  return init_params(seed, vocab, 3, 4, 3, pooling, 320);
}

std::uint64_t ref_fnv1a64(const std::string& bytes) {
  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  return hash;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void dump(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  REQUIRE(out.good());
}

bool params_equal(const EncoderParams& a, const EncoderParams& b) {
  return a.vocab.tokens == b.vocab.tokens && a.vocab.min_freq == b.vocab.min_freq &&
         a.embedding.data == b.embedding.data && a.w1.data == b.w1.data && a.b1 == b.b1 &&
         a.w2.data == b.w2.data && a.b2 == b.b2 && a.pooling == b.pooling &&
         a.max_seq_len == b.max_seq_len && a.embedding.rows == b.embedding.rows &&
         a.w1.rows == b.w1.rows && a.w2.rows == b.w2.rows;
}

}  // namespace

TEST_CASE("split_tokens lowercases and splits on non-alphanumeric runs") {
  CHECK(split_tokens("Hello, World! 123") == std::vector<std::string>{"hello", "world", "123"});
  CHECK(split_tokens("a--b__c") == std::vector<std::string>{"a", "b", "c"});
  CHECK(split_tokens("trailing.") == std::vector<std::string>{"trailing"});
  CHECK(split_tokens("") == std::vector<std::string>{});
  CHECK(split_tokens("?!.,") == std::vector<std::string>{});
}

TEST_CASE("build_vocab applies the frequency cutoff") {
  const Vocabulary v = build_vocab({"a b", "a c"}, 2);
  CHECK(v.tokens == std::vector<std::string>{"<unk>", "a"});
  CHECK(v.id_of("a") == 1);
  CHECK(v.id_of("b") == Vocabulary::kUnkId);
  CHECK(v.min_freq == 2);
  CHECK_THROWS_AS(build_vocab({"a"}, 0), std::invalid_argument);
}

TEST_CASE("build_vocab orders by frequency, then alphabetically") {
  const Vocabulary v = build_vocab({"zeta zeta zeta mu nu mu nu"}, 1);
  CHECK(v.tokens == std::vector<std::string>{"<unk>", "zeta", "mu", "nu"});
  // identical inputs always give identical vocabularies
  const Vocabulary w = build_vocab({"zeta zeta zeta mu nu mu nu"}, 1);
  CHECK(v.tokens == w.tokens);
}

TEST_CASE("tokenize maps unknowns to id 0 and truncates") {
  const Vocabulary v = build_vocab({"apple banana apple banana"}, 2);
  CHECK(tokenize("banana unknown apple", v, 320) == TokenIds{2, 0, 1});
  CHECK(tokenize("Apple APPLE apple", v, 320) == TokenIds{1, 1, 1});

  std::string long_text;
  for (int i = 0; i < 500; ++i) long_text += "apple ";
  CHECK(tokenize(long_text, v, 320).size() == 320);
  CHECK(tokenize(long_text, v, 3) == TokenIds{1, 1, 1});
}

TEST_CASE("encode matches a straight-line computation") {
  const EncoderParams p = tiny_params();
  const TokenIds ids{1, 2};  // alpha, beta

  const double p0 = (0.1 + 0.3) / 2.0;
  const double p1 = (-0.2 + 0.4) / 2.0;
  const double h0 = std::tanh(p0 * 0.5 + p1 * 0.75 + 0.01);
  const double h1 = std::tanh(p0 * -0.25 + p1 * 0.125 - 0.02);
  const double o0 = h0 * 1.0 + h1 * -0.5 + 0.1;
  const double o1 = h0 * 0.5 + h1 * 0.25 - 0.1;

  const Vec out = encode(p, ids);
  REQUIRE(out.size() == 2);
  CHECK(out[0] == doctest::Approx(o0).epsilon(1e-14));
  CHECK(out[1] == doctest::Approx(o1).epsilon(1e-14));
}

TEST_CASE("pooling modes agree on a single token and differ on many") {
  EncoderParams mean = tiny_params(PoolingMode::Mean);
  EncoderParams first = tiny_params(PoolingMode::FirstToken);
  CHECK(encode(mean, {2}) == encode(first, {2}));
  CHECK(encode(mean, {2, 3}) != encode(first, {2, 3}));
  // first-token pooling ignores everything after the first id
  CHECK(encode(first, {2, 3}) == encode(first, {2, 1}));
}

TEST_CASE("mean pooling is order-insensitive") {
  const EncoderParams p = tiny_params();
  const Vec a = encode(p, {1, 2, 3});
  const Vec b = encode(p, {3, 1, 2});
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("encode flags empty input and rejects out-of-range ids") {
  const EncoderParams p = tiny_params();
  bool empty = false;
  const Vec out = encode(p, {}, &empty);
  CHECK(empty);
  // zero pooled vector, zero-ish biases: output is tanh(b1) * W2 + b2
  const double h0 = std::tanh(0.01), h1 = std::tanh(-0.02);
  CHECK(out[0] == doctest::Approx(h0 * 1.0 + h1 * -0.5 + 0.1).epsilon(1e-14));

  empty = true;
  encode(p, {1}, &empty);
  CHECK_FALSE(empty);

  CHECK_THROWS_WITH_AS(encode(p, {99}), doctest::Contains("token id out of range"),
                       std::runtime_error);
}

TEST_CASE("encode_backward touches only the embedding rows that occur") {
  const EncoderParams p = tiny_params();
  const Vec upstream{0.3, -0.7};

  SUBCASE("mean pooling") {
    const EncoderGrads g = encode_backward(p, {1, 3, 3}, upstream);
    const double* unk = g.embedding.row(0);
    const double* beta = g.embedding.row(2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(unk[i] == 0.0);
      CHECK(beta[i] == 0.0);
    }
    // gamma occurs twice, alpha once: gamma's row gets twice alpha's share
    const double* alpha = g.embedding.row(1);
    const double* gamma = g.embedding.row(3);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(gamma[i] == doctest::Approx(2.0 * alpha[i]).epsilon(1e-12));
    }
  }
  SUBCASE("first-token pooling") {
    EncoderParams first = tiny_params(PoolingMode::FirstToken);
    const EncoderGrads g = encode_backward(first, {1, 3, 3}, upstream);
    double touched = 0.0;
    for (std::size_t i = 0; i < 2; ++i) touched += std::abs(g.embedding.row(1)[i]);
    CHECK(touched > 0.0);
    for (std::size_t r : {0u, 2u, 3u}) {
      for (std::size_t i = 0; i < 2; ++i) CHECK(g.embedding.row(r)[i] == 0.0);
    }
  }
  SUBCASE("zero upstream, zero gradient") {
    const EncoderGrads g = encode_backward(p, {1, 2}, {0.0, 0.0});
    for (double x : g.embedding.data) CHECK(x == 0.0);
    for (double x : g.w1.data) CHECK(x == 0.0);
    for (double x : g.w2.data) CHECK(x == 0.0);
    for (double x : g.b1) CHECK(x == 0.0);
    for (double x : g.b2) CHECK(x == 0.0);
  }
  SUBCASE("empty input leaves the embedding untouched") {
    const EncoderGrads g = encode_backward(p, {}, upstream);
    for (double x : g.embedding.data) CHECK(x == 0.0);
    // but the projection still sees the zero pooled vector
    double b2_sum = 0.0;
    for (double x : g.b2) b2_sum += std::abs(x);
    CHECK(b2_sum > 0.0);
  }
  SUBCASE("wrong upstream dimension") {
    CHECK_THROWS_AS(encode_backward(p, {1}, {1.0, 2.0, 3.0}), std::runtime_error);
  }
}

TEST_CASE("encode_backward agrees with central differences on every tensor") {
  for (const PoolingMode pooling : {PoolingMode::Mean, PoolingMode::FirstToken}) {
    EncoderParams p = random_params(11, pooling);
    const TokenIds ids{1, 2, 2, 0};
    const Vec direction{0.7, -0.4, 0.9};  // projects the output to a scalar loss

    const auto loss = [&] {
      const Vec out = encode(p, ids);
      double l = 0.0;
      for (std::size_t k = 0; k < out.size(); ++k) l += direction[k] * out[k];
      return l;
    };

    const EncoderGrads g = encode_backward(p, ids, direction);
    std::vector<double> analytic, numeric;
    const auto compare = [&](std::vector<double>& tensor, const std::vector<double>& grad) {
      for (std::size_t i = 0; i < tensor.size(); ++i) {
        analytic.push_back(grad[i]);
        numeric.push_back(testsupport::central_diff(loss, tensor[i]));
      }
    };
    compare(p.embedding.data, g.embedding.data);
    compare(p.w1.data, g.w1.data);
    compare(p.b1, g.b1);
    compare(p.w2.data, g.w2.data);
    compare(p.b2, g.b2);
    CHECK(testsupport::max_rel_error(analytic, numeric) < 1e-7);
  }
}

TEST_CASE("init_params is seeded, bounded and zero-biased") {
  const Vocabulary vocab = build_vocab({"a b c a b c"}, 1);
  const EncoderParams p = init_params(5, vocab, 16, 8, 4, PoolingMode::Mean, 100);
  CHECK(p.embedding.rows == vocab.size());
  CHECK(p.embedding.cols == 16);
  CHECK(p.w1.rows == 16);
  CHECK(p.w1.cols == 8);
  CHECK(p.w2.rows == 8);
  CHECK(p.w2.cols == 4);
  CHECK(p.max_seq_len == 100);

  const double embed_bound = 1.0 / std::sqrt(16.0);
  for (double x : p.embedding.data) CHECK(std::abs(x) <= embed_bound);
  for (double x : p.w1.data) CHECK(std::abs(x) <= embed_bound);
  const double w2_bound = 1.0 / std::sqrt(8.0);
  for (double x : p.w2.data) CHECK(std::abs(x) <= w2_bound);
  for (double x : p.b1) CHECK(x == 0.0);
  for (double x : p.b2) CHECK(x == 0.0);

  CHECK(params_equal(p, init_params(5, vocab, 16, 8, 4, PoolingMode::Mean, 100)));
  CHECK_FALSE(params_equal(p, init_params(6, vocab, 16, 8, 4, PoolingMode::Mean, 100)));
  CHECK_THROWS_AS(init_params(5, vocab, 0, 8, 4, PoolingMode::Mean, 100), std::invalid_argument);
}

TEST_CASE("model file round-trips bit-exactly") {
  const EncoderParams p = random_params(21, PoolingMode::FirstToken);
  TempFile file("model.bin");
  save_params(p, file.path());
  const EncoderParams q = load_params(file.path());
  CHECK(params_equal(p, q));
  CHECK(encode(p, {1, 2, 3}) == encode(q, {1, 2, 3}));
}

TEST_CASE("model file corruption is caught by the checksum") {
  const EncoderParams p = random_params(22, PoolingMode::Mean);
  TempFile file("model.bin");
  save_params(p, file.path());
  const std::string original = slurp(file.path());

  SUBCASE("truncation") {
    dump(file.path(), original.substr(0, original.size() / 2));
    CHECK_THROWS_WITH_AS(load_params(file.path()), doctest::Contains("checksum mismatch"),
                         std::runtime_error);
  }
  SUBCASE("single flipped byte") {
    std::string corrupt = original;
    corrupt[corrupt.size() / 3] ^= 0x10;
    dump(file.path(), corrupt);
    CHECK_THROWS_WITH_AS(load_params(file.path()), doctest::Contains("checksum mismatch"),
                         std::runtime_error);
  }
  SUBCASE("trailing checksum matches an independent implementation") {
    REQUIRE(original.size() > 8);
    const std::string payload = original.substr(0, original.size() - 8);
    std::uint64_t stored = 0;
    for (int i = 7; i >= 0; --i) {
      stored = (stored << 8) | static_cast<unsigned char>(original[original.size() - 8 + i]);
    }
    CHECK(stored == ref_fnv1a64(payload));
  }
}

TEST_CASE("model file version and magic are validated after the checksum") {
  const EncoderParams p = random_params(23, PoolingMode::Mean);
  TempFile file("model.bin");
  save_params(p, file.path());
  const std::string original = slurp(file.path());

  // Rewrite a header field, then re-seal the checksum so only the intended
  // validation can fire.
  const auto reseal = [&](std::string bytes) {
    bytes.resize(bytes.size() - 8);
    const std::uint64_t sum = ref_fnv1a64(bytes);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((sum >> (8 * i)) & 0xFF));
    dump(file.path(), bytes);
  };

  SUBCASE("future format version") {
    std::string bytes = original;
    bytes[4] = 9;  // little-endian u32 version right after the 4 magic bytes
    reseal(bytes);
    CHECK_THROWS_WITH_AS(load_params(file.path()),
                         doctest::Contains("unsupported format version 9"), std::runtime_error);
  }
  SUBCASE("foreign magic") {
    std::string bytes = original;
    bytes[0] = 'Z';
    reseal(bytes);
    CHECK_THROWS_WITH_AS(load_params(file.path()), doctest::Contains("bad magic bytes"),
                         std::runtime_error);
  }
  SUBCASE("trailing garbage") {
    std::string bytes = original;
    bytes.insert(bytes.size() - 8, "\x00\x01\x02\x03", 4);
    reseal(bytes);
    CHECK_THROWS_WITH_AS(load_params(file.path()), doctest::Contains("trailing data"),
                         std::runtime_error);
  }
}

TEST_CASE("external embedding files round-trip at full precision") {
  std::ostringstream out;
  write_external_embedding(out, "doc-1", {0.1, -2.5e-17, 3.0});
  write_external_embedding(out, "doc-2", {1.0 / 3.0, 2.0 / 7.0, -0.0625});
  TempFile file("embeddings.txt", out.str());

  const auto loaded = load_external_embeddings(file.path());
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.at("doc-1") == Vec{0.1, -2.5e-17, 3.0});
  CHECK(loaded.at("doc-2") == Vec{1.0 / 3.0, 2.0 / 7.0, -0.0625});
}

TEST_CASE("external embedding files are validated") {
  SUBCASE("ragged dimensions") {
    TempFile file("embeddings.txt", "a 1.0 2.0\nb 1.0\n");
    CHECK_THROWS_WITH_AS(load_external_embeddings(file.path()), doctest::Contains(":2"),
                         std::runtime_error);
  }
  SUBCASE("duplicate ids") {
    TempFile file("embeddings.txt", "a 1.0\na 2.0\n");
    CHECK_THROWS_WITH_AS(load_external_embeddings(file.path()),
                         doctest::Contains("duplicate document id 'a'"), std::runtime_error);
  }
  SUBCASE("missing values") {
    TempFile file("embeddings.txt", "a\n");
    CHECK_THROWS_AS(load_external_embeddings(file.path()), std::runtime_error);
  }
  SUBCASE("non-numeric values") {
    TempFile file("embeddings.txt", "a 1.0 x\n");
    CHECK_THROWS_WITH_AS(load_external_embeddings(file.path()),
                         doctest::Contains("malformed number"), std::runtime_error);
  }
}

TEST_CASE("pooling names round-trip") {
  CHECK(pooling_from_name("mean") == PoolingMode::Mean);
  CHECK(pooling_from_name("first") == PoolingMode::FirstToken);
  CHECK(pooling_from_name(pooling_name(PoolingMode::Mean)) == PoolingMode::Mean);
  CHECK(pooling_from_name(pooling_name(PoolingMode::FirstToken)) == PoolingMode::FirstToken);
  CHECK_THROWS_WITH_AS(pooling_from_name("max"), doctest::Contains("unknown pooling mode 'max'"),
                       std::runtime_error);
}
