#include "aspectemb/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "aspectemb/rng.hpp"

namespace aspectemb {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

const char* objective_name(Objective objective) {
  return objective == Objective::Contrastive ? "contrastive" : "mnr";
}

Objective objective_from_name(const std::string& name) {
  if (name == "contrastive") return Objective::Contrastive;
  if (name == "mnr") return Objective::MultipleNegativesRanking;
  fail("unknown objective '" + name + "' (expected 'contrastive' or 'mnr')");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("train config: learning_rate must be positive");
  }
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("train config: temperature must be positive");
  }
  if (max_seq_len < 1) throw std::invalid_argument("train config: max_seq_len must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  std::size_t end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

std::size_t parse_count(const std::string& value, const std::string& where) {
  try {
    std::size_t pos = 0;
    const unsigned long long parsed = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::size_t>(parsed);
  } catch (const std::exception&) {
    fail(where + ": expected a non-negative integer, got '" + value + "'");
  }
}

double parse_real(const std::string& value, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double parsed = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return parsed;
  } catch (const std::exception&) {
    fail(where + ": expected a number, got '" + value + "'");
  }
}

}  // namespace

TrainConfig parse_train_config(std::istream& in, const std::string& origin) {
  TrainConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) fail(where + ": expected key=value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key == "epochs") {
      cfg.epochs = parse_count(value, where);
    } else if (key == "batch_size") {
      cfg.batch_size = parse_count(value, where);
    } else if (key == "learning_rate") {
      cfg.learning_rate = parse_real(value, where);
    } else if (key == "temperature") {
      cfg.temperature = parse_real(value, where);
    } else if (key == "max_seq_len") {
      cfg.max_seq_len = parse_count(value, where);
    } else if (key == "pooling") {
      cfg.pooling = pooling_from_name(value);
    } else if (key == "seed") {
      cfg.seed = parse_count(value, where);
    } else if (key == "objective") {
      cfg.objective = objective_from_name(value);
    } else {
      fail(where + ": unknown config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file '" + path + "'");
  return parse_train_config(in, path);
}

void write_train_config(const TrainConfig& cfg, std::ostream& out) {
  out << "epochs=" << cfg.epochs << '\n';
  out << "batch_size=" << cfg.batch_size << '\n';
  out << "learning_rate=" << format_double(cfg.learning_rate) << '\n';
  out << "temperature=" << format_double(cfg.temperature) << '\n';
  out << "max_seq_len=" << cfg.max_seq_len << '\n';
  out << "pooling=" << pooling_name(cfg.pooling) << '\n';
  out << "seed=" << cfg.seed << '\n';
  out << "objective=" << objective_name(cfg.objective) << '\n';
}

void write_loss_trace(const LossTrace& trace, std::ostream& out) {
  out << "epoch,step,loss\n";
  for (const TraceStep& step : trace.steps) {
    out << step.epoch << ',' << step.step << ',' << format_double(step.loss) << '\n';
  }
}

void write_loss_trace(const LossTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: no newline translation
  if (!out) fail("cannot open trace file '" + path + "' for writing");
  write_loss_trace(trace, out);
  if (!out) fail("write to trace file '" + path + "' failed");
}

double cosine_sim(const Vec& u, const Vec& v, bool* degenerate) {
  if (u.size() != v.size()) {
    throw std::invalid_argument("cosine_sim: dimension mismatch (" + std::to_string(u.size()) +
                                " vs " + std::to_string(v.size()) + ")");
  }
  if (degenerate != nullptr) *degenerate = false;
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) {
    if (degenerate != nullptr) *degenerate = true;
    return 0.0;
  }
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

namespace {

void check_embeddings(const std::vector<Vec>& vecs, const char* role) {
  for (const Vec& v : vecs) {
    if (!all_finite(v)) fail(std::string("non-finite ") + role + " embedding in batch");
  }
}

void check_batch(const Batch& batch) {
  const std::size_t n = batch.anchors.size();
  if (n == 0) fail("empty batch");
  if (batch.positives.size() != n || batch.negatives.size() != n) {
    fail("batch role lengths differ");
  }
  check_embeddings(batch.anchors, "anchor");
  check_embeddings(batch.positives, "positive");
  check_embeddings(batch.negatives, "negative");
}

// Row-stable log-sum-exp over a row of exponents.
double log_sum_exp(const std::vector<double>& exponents) {
  double m = exponents[0];
  for (double x : exponents) m = std::max(m, x);
  double sum = 0.0;
  for (double x : exponents) sum += std::exp(x - m);
  return m + std::log(sum);
}

// Adds coef * d sim(u,v)/du into gu and coef * d sim(u,v)/dv into gv.
// Degenerate (zero-norm) inputs have sim pinned at 0; their gradient
// contribution is defined as zero so training stays total.
void accumulate_cosine_grad(const Vec& u, const Vec& v, double nu, double nv, double sim,
                            double coef, Vec& gu, Vec& gv) {
  if (nu == 0.0 || nv == 0.0) return;
  const std::size_t d = u.size();
  for (std::size_t t = 0; t < d; ++t) {
    gu[t] += coef * (v[t] / (nu * nv) - sim * u[t] / (nu * nu));
    gv[t] += coef * (u[t] / (nu * nv) - sim * v[t] / (nv * nv));
  }
}

std::vector<double> norms_of(const std::vector<Vec>& vecs) {
  std::vector<double> out(vecs.size());
  for (std::size_t i = 0; i < vecs.size(); ++i) out[i] = norm(vecs[i]);
  return out;
}

std::vector<Vec> zero_grads(const std::vector<Vec>& vecs) {
  std::vector<Vec> out(vecs.size());
  for (std::size_t i = 0; i < vecs.size(); ++i) out[i].assign(vecs[i].size(), 0.0);
  return out;
}

}  // namespace

BatchLoss contrastive_loss(const Batch& batch, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
  check_batch(batch);
  const std::size_t n = batch.anchors.size();

  BatchLoss loss;
  loss.per_item.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> exponents;
    exponents.reserve(2 * n);
    double pos_term = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double s = cosine_sim(batch.anchors[i], batch.positives[j]) / tau;
      exponents.push_back(s);
      if (j == i) pos_term = s;
    }
    for (std::size_t j = 0; j < n; ++j) {
      exponents.push_back(cosine_sim(batch.anchors[i], batch.negatives[j]) / tau);
    }
    loss.per_item[i] = log_sum_exp(exponents) - pos_term;
  }
  double total = 0.0;
  for (double l : loss.per_item) total += l;
  loss.mean = total / static_cast<double>(n);
  return loss;
}

BatchGrads contrastive_loss_grad(const Batch& batch, double tau) {
  if (!(tau > 0.0)) {
    throw std::invalid_argument("contrastive_loss_grad: temperature must be positive");
  }
  check_batch(batch);
  const std::size_t n = batch.anchors.size();
  const double inv_ntau = 1.0 / (static_cast<double>(n) * tau);

  const std::vector<double> anchor_norms = norms_of(batch.anchors);
  const std::vector<double> positive_norms = norms_of(batch.positives);
  const std::vector<double> negative_norms = norms_of(batch.negatives);

  BatchGrads grads;
  grads.anchors = zero_grads(batch.anchors);
  grads.positives = zero_grads(batch.positives);
  grads.negatives = zero_grads(batch.negatives);

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sim_pos(n), sim_neg(n);
    std::vector<double> exponents;
    exponents.reserve(2 * n);
    for (std::size_t j = 0; j < n; ++j) {
      sim_pos[j] = cosine_sim(batch.anchors[i], batch.positives[j]);
      exponents.push_back(sim_pos[j] / tau);
    }
    for (std::size_t j = 0; j < n; ++j) {
      sim_neg[j] = cosine_sim(batch.anchors[i], batch.negatives[j]);
      exponents.push_back(sim_neg[j] / tau);
    }
    const double lse = log_sum_exp(exponents);

    for (std::size_t j = 0; j < n; ++j) {
      // d(mean loss)/d sim(a_i, p_j) = (softmax weight - [i==j]) / (N tau)
      const double q = std::exp(sim_pos[j] / tau - lse);
      const double coef = (q - (i == j ? 1.0 : 0.0)) * inv_ntau;
      accumulate_cosine_grad(batch.anchors[i], batch.positives[j], anchor_norms[i],
                             positive_norms[j], sim_pos[j], coef, grads.anchors[i],
                             grads.positives[j]);
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double q = std::exp(sim_neg[j] / tau - lse);
      accumulate_cosine_grad(batch.anchors[i], batch.negatives[j], anchor_norms[i],
                             negative_norms[j], sim_neg[j], q * inv_ntau, grads.anchors[i],
                             grads.negatives[j]);
    }
  }
  return grads;
}

BatchLoss mnr_loss(const std::vector<Vec>& anchors, const std::vector<Vec>& positives,
                   double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("mnr_loss: temperature must be positive");
  const std::size_t n = anchors.size();
  if (n == 0) fail("empty batch");
  if (positives.size() != n) fail("batch role lengths differ");
  check_embeddings(anchors, "anchor");
  check_embeddings(positives, "positive");

  BatchLoss loss;
  loss.per_item.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> exponents(n);
    for (std::size_t j = 0; j < n; ++j) {
      exponents[j] = cosine_sim(anchors[i], positives[j]) / tau;
    }
    loss.per_item[i] = log_sum_exp(exponents) - exponents[i];
  }
  double total = 0.0;
  for (double l : loss.per_item) total += l;
  loss.mean = total / static_cast<double>(n);
  return loss;
}

BatchGrads mnr_loss_grad(const std::vector<Vec>& anchors, const std::vector<Vec>& positives,
                         double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("mnr_loss_grad: temperature must be positive");
  const std::size_t n = anchors.size();
  if (n == 0) fail("empty batch");
  if (positives.size() != n) fail("batch role lengths differ");
  check_embeddings(anchors, "anchor");
  check_embeddings(positives, "positive");
  const double inv_ntau = 1.0 / (static_cast<double>(n) * tau);

  const std::vector<double> anchor_norms = norms_of(anchors);
  const std::vector<double> positive_norms = norms_of(positives);

  BatchGrads grads;
  grads.anchors = zero_grads(anchors);
  grads.positives = zero_grads(positives);

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sims(n);
    std::vector<double> exponents(n);
    for (std::size_t j = 0; j < n; ++j) {
      sims[j] = cosine_sim(anchors[i], positives[j]);
      exponents[j] = sims[j] / tau;
    }
    const double lse = log_sum_exp(exponents);
    for (std::size_t j = 0; j < n; ++j) {
      const double q = std::exp(exponents[j] - lse);
      const double coef = (q - (i == j ? 1.0 : 0.0)) * inv_ntau;
      accumulate_cosine_grad(anchors[i], positives[j], anchor_norms[i], positive_norms[j], sims[j],
                             coef, grads.anchors[i], grads.positives[j]);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Optimizer.

namespace {

struct TensorRef {
  double* param;
  const double* grad;
  double* m;
  double* v;
  std::size_t size;
};

std::vector<TensorRef> tensor_refs(EncoderParams& params, const EncoderGrads& grads,
                                   AdamState& state) {
  const auto ref = [](Vec& p, const Vec& g, Vec& m, Vec& v) {
    if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
      fail("adam_step: tensor shape mismatch");
    }
    return TensorRef{p.data(), g.data(), m.data(), v.data(), p.size()};
  };
  return {
      ref(params.embedding.data, grads.embedding.data, state.m.embedding.data,
          state.v.embedding.data),
      ref(params.w1.data, grads.w1.data, state.m.w1.data, state.v.w1.data),
      ref(params.b1, grads.b1, state.m.b1, state.v.b1),
      ref(params.w2.data, grads.w2.data, state.m.w2.data, state.v.w2.data),
      ref(params.b2, grads.b2, state.m.b2, state.v.b2),
  };
}

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

}  // namespace

AdamState AdamState::zeros_like(const EncoderParams& params) {
  AdamState state;
  state.m = EncoderGrads::zeros_like(params);
  state.v = EncoderGrads::zeros_like(params);
  return state;
}

void adam_step(EncoderParams& params, const EncoderGrads& grads, AdamState& state, double lr) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double m_correction = 1.0 - std::pow(kBeta1, t);
  const double v_correction = 1.0 - std::pow(kBeta2, t);
  for (TensorRef ref : tensor_refs(params, grads, state)) {
    for (std::size_t i = 0; i < ref.size; ++i) {
      const double g = ref.grad[i];
      ref.m[i] = kBeta1 * ref.m[i] + (1.0 - kBeta1) * g;
      ref.v[i] = kBeta2 * ref.v[i] + (1.0 - kBeta2) * g * g;
      const double m_hat = ref.m[i] / m_correction;
      const double v_hat = ref.v[i] / v_correction;
      ref.param[i] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEps);
    }
  }
}

double clip_global_norm(EncoderGrads& grads, double max_norm) {
  const Vec* tensors[] = {&grads.embedding.data, &grads.w1.data, &grads.b1, &grads.w2.data,
                          &grads.b2};
  double sq = 0.0;
  for (const Vec* t : tensors) {
    for (double x : *t) sq += x * x;
  }
  const double total = std::sqrt(sq);
  if (total > max_norm) {
    const double scale = max_norm / total;
    Vec* mutable_tensors[] = {&grads.embedding.data, &grads.w1.data, &grads.b1, &grads.w2.data,
                              &grads.b2};
    for (Vec* t : mutable_tensors) {
      for (double& x : *t) x *= scale;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Training loop.

namespace {

// Token-id cache for the documents referenced by the training set.
class TokenCache {
 public:
  TokenCache(const Corpus& corpus, const Vocabulary& vocab, std::size_t max_seq_len)
      : corpus_(corpus), vocab_(vocab), max_seq_len_(max_seq_len) {}

  const TokenIds& get(const std::string& id) {
    auto it = cache_.find(id);
    if (it != cache_.end()) return it->second;
    const Document& doc = corpus_.at(id);
    return cache_.emplace(id, tokenize(doc.text, vocab_, max_seq_len_)).first->second;
  }

 private:
  const Corpus& corpus_;
  const Vocabulary& vocab_;
  std::size_t max_seq_len_;
  std::unordered_map<std::string, TokenIds> cache_;
};

struct StepRoles {
  std::vector<const TokenIds*> anchors;
  std::vector<const TokenIds*> positives;
  std::vector<const TokenIds*> negatives;  // empty for the ranking objective
};

// Shared epoch/batch scaffolding for both objectives. `run_batch` receives
// the token sequences of one mini-batch and returns its mean loss.
template <typename RunBatch>
LossTrace run_epochs(std::size_t item_count, const TrainConfig& cfg, RunBatch&& run_batch) {
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(item_count);
  std::iota(order.begin(), order.end(), std::size_t{0});

  LossTrace trace;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    std::size_t step = 0;
    for (std::size_t begin = 0; begin < item_count; begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, item_count);
      ++step;
      const double loss = run_batch(order, begin, end);
      if (!std::isfinite(loss)) {
        fail("non-finite loss at epoch " + std::to_string(epoch) + " step " +
             std::to_string(step));
      }
      trace.steps.push_back({epoch, step, loss});
    }
  }
  return trace;
}

std::vector<Vec> encode_all(const EncoderParams& params,
                            const std::vector<const TokenIds*>& token_lists) {
  std::vector<Vec> out;
  out.reserve(token_lists.size());
  for (const TokenIds* ids : token_lists) out.push_back(encode(params, *ids));
  return out;
}

void backward_all(const EncoderParams& params, const std::vector<const TokenIds*>& token_lists,
                  const std::vector<Vec>& upstream, EncoderGrads& grads) {
  for (std::size_t i = 0; i < token_lists.size(); ++i) {
    encode_backward_accum(params, *token_lists[i], upstream[i], grads);
  }
}

}  // namespace

LossTrace train(const Corpus& corpus, const std::vector<Triplet>& triplets, EncoderParams& params,
                const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.objective != Objective::Contrastive) {
    throw std::invalid_argument("objective 'mnr' expects pairs, not triplets");
  }
  if (triplets.empty()) fail("training set is empty");

  params.pooling = cfg.pooling;
  params.max_seq_len = cfg.max_seq_len;
  TokenCache cache(corpus, params.vocab, cfg.max_seq_len);

  EncoderGrads grads = EncoderGrads::zeros_like(params);
  AdamState state = AdamState::zeros_like(params);
  return run_epochs(triplets.size(), cfg,
                    [&](const std::vector<std::size_t>& order, std::size_t begin,
                        std::size_t end) {
                      StepRoles roles;
                      for (std::size_t k = begin; k < end; ++k) {
                        const Triplet& t = triplets[order[k]];
                        roles.anchors.push_back(&cache.get(t.anchor_id));
                        roles.positives.push_back(&cache.get(t.positive_id));
                        roles.negatives.push_back(&cache.get(t.negative_id));
                      }
                      Batch batch;
                      batch.anchors = encode_all(params, roles.anchors);
                      batch.positives = encode_all(params, roles.positives);
                      batch.negatives = encode_all(params, roles.negatives);

                      const BatchLoss loss = contrastive_loss(batch, cfg.temperature);
                      const BatchGrads upstream = contrastive_loss_grad(batch, cfg.temperature);

                      grads.reset();
                      backward_all(params, roles.anchors, upstream.anchors, grads);
                      backward_all(params, roles.positives, upstream.positives, grads);
                      backward_all(params, roles.negatives, upstream.negatives, grads);
                      clip_global_norm(grads, kGradClipNorm);
                      adam_step(params, grads, state, cfg.learning_rate);
                      return loss.mean;
                    });
}

LossTrace train(const Corpus& corpus, const std::vector<Pair>& pairs, EncoderParams& params,
                const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.objective != Objective::MultipleNegativesRanking) {
    throw std::invalid_argument("objective 'contrastive' expects triplets, not pairs");
  }
  if (pairs.empty()) fail("training set is empty");

  params.pooling = cfg.pooling;
  params.max_seq_len = cfg.max_seq_len;
  TokenCache cache(corpus, params.vocab, cfg.max_seq_len);

  EncoderGrads grads = EncoderGrads::zeros_like(params);
  AdamState state = AdamState::zeros_like(params);
  return run_epochs(pairs.size(), cfg,
                    [&](const std::vector<std::size_t>& order, std::size_t begin,
                        std::size_t end) {
                      StepRoles roles;
                      for (std::size_t k = begin; k < end; ++k) {
                        const Pair& p = pairs[order[k]];
                        roles.anchors.push_back(&cache.get(p.anchor_id));
                        roles.positives.push_back(&cache.get(p.positive_id));
                      }
                      const std::vector<Vec> anchors = encode_all(params, roles.anchors);
                      const std::vector<Vec> positives = encode_all(params, roles.positives);

                      const BatchLoss loss = mnr_loss(anchors, positives, cfg.temperature);
                      const BatchGrads upstream = mnr_loss_grad(anchors, positives,
                                                                cfg.temperature);

                      grads.reset();
                      backward_all(params, roles.anchors, upstream.anchors, grads);
                      backward_all(params, roles.positives, upstream.positives, grads);
                      clip_global_norm(grads, kGradClipNorm);
                      adam_step(params, grads, state, cfg.learning_rate);
                      return loss.mean;
                    });
}

}  // namespace aspectemb
