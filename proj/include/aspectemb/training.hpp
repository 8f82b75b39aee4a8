#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "aspectemb/corpus.hpp"
#include "aspectemb/encoder.hpp"
#include "aspectemb/triplets.hpp"
#include "aspectemb/vecmath.hpp"

namespace aspectemb {

// Training objective. Contrastive consumes triplets: each anchor is scored
// against every positive and every negative in the mini-batch. Multiple
// negatives ranking consumes anchor-positive pairs only; the other positives
// in the batch act as negatives.
enum class Objective { Contrastive, MultipleNegativesRanking };

const char* objective_name(Objective objective);
Objective objective_from_name(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 14;
  double learning_rate = 1e-3;
  double temperature = 0.05;
  std::size_t max_seq_len = kDefaultMaxSeqLen;
  PoolingMode pooling = PoolingMode::Mean;
  std::uint64_t seed = 0;
  Objective objective = Objective::Contrastive;

  // Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

// Flat key=value file, one entry per line; '#' starts a comment. Keys match
// the TrainConfig field names. Unknown keys are an error.
TrainConfig parse_train_config(std::istream& in, const std::string& origin);
TrainConfig load_train_config(const std::string& path);
void write_train_config(const TrainConfig& cfg, std::ostream& out);

// One mini-batch of embeddings. `negatives` stays empty for the ranking
// objective.
struct Batch {
  std::vector<Vec> anchors;
  std::vector<Vec> positives;
  std::vector<Vec> negatives;
};

struct BatchLoss {
  double mean = 0.0;
  std::vector<double> per_item;
};

// Gradients of the mean batch loss with respect to every embedding.
struct BatchGrads {
  std::vector<Vec> anchors;
  std::vector<Vec> positives;
  std::vector<Vec> negatives;
};

struct TraceStep {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based within the epoch
  double loss = 0.0;
};

struct LossTrace {
  std::vector<TraceStep> steps;
};

// CSV with an "epoch,step,loss" header; losses printed with enough digits to
// round-trip exactly.
void write_loss_trace(const LossTrace& trace, std::ostream& out);
void write_loss_trace(const LossTrace& trace, const std::string& path);

// Cosine similarity clamped to [-1, 1]. A zero vector on either side yields 0
// and sets *degenerate when provided; dimension mismatch throws.
double cosine_sim(const Vec& u, const Vec& v, bool* degenerate = nullptr);

// Per-item loss for anchor i:
//   l_i = -log( e^{sim(a_i,p_i)/tau} / sum_j (e^{sim(a_i,p_j)/tau} + e^{sim(a_i,n_j)/tau}) )
// computed with a stable log-sum-exp. Requires a full batch (negatives
// present, equal lengths) and finite embeddings.
BatchLoss contrastive_loss(const Batch& batch, double tau);
BatchGrads contrastive_loss_grad(const Batch& batch, double tau);

// Ranking loss over anchor-positive pairs with in-batch negatives:
//   l_i = -log( e^{sim(a_i,p_i)/tau} / sum_j e^{sim(a_i,p_j)/tau} )
BatchLoss mnr_loss(const std::vector<Vec>& anchors, const std::vector<Vec>& positives, double tau);
BatchGrads mnr_loss_grad(const std::vector<Vec>& anchors, const std::vector<Vec>& positives,
                         double tau);

// Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8.
struct AdamState {
  EncoderGrads m;
  EncoderGrads v;
  std::size_t step = 0;

  static AdamState zeros_like(const EncoderParams& params);
};

void adam_step(EncoderParams& params, const EncoderGrads& grads, AdamState& state, double lr);

// Rescales all gradients in place when their joint L2 norm exceeds max_norm;
// returns the norm before clipping.
double clip_global_norm(EncoderGrads& grads, double max_norm);

constexpr double kGradClipNorm = 5.0;

// Trains `params` in place over seeded-shuffled mini-batches (the last,
// possibly short, batch is kept). Deterministic given (inputs, cfg.seed).
// Throws on an empty training set, an objective/input mismatch, or a
// non-finite loss (the message names the epoch and step).
LossTrace train(const Corpus& corpus, const std::vector<Triplet>& triplets, EncoderParams& params,
                const TrainConfig& cfg);
LossTrace train(const Corpus& corpus, const std::vector<Pair>& pairs, EncoderParams& params,
                const TrainConfig& cfg);

}  // namespace aspectemb
