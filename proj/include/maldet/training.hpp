#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "maldet/network.hpp"

namespace maldet::train {

inline constexpr double kProbabilityClamp = 1e-12;
inline constexpr double kDecisionThreshold = 0.5;

/// Mean binary cross-entropy; probabilities are clamped to [1e-12, 1 - 1e-12].
double bce_loss(std::span<const double> probs, std::span<const int> labels);
/// Differentiable form of bce_loss for a (B) vector of probabilities.
nd::Var bce_loss(nd::Var probs, std::span<const int> labels);

struct AdamOptions {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment estimates mirror the parameter map; `step` counts updates applied.
struct AdamState {
  AdamOptions options;
  std::map<std::string, nd::NumArray> m;
  std::map<std::string, nd::NumArray> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every parameter that has a gradient.
void adam_step(net::ModelParams& params, const std::map<std::string, nd::NumArray>& grads, AdamState& state);

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  AdamOptions adam;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  /// Running accuracy of the training-mode predictions over the epoch.
  double train_accuracy = 0.0;
  double seconds = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

struct TrainResult {
  net::ModelBundle bundle;
  TrainHistory history;
};

/// Mini-batch training from a fresh initialization. Parameter init, batch
/// order and dropout masks all derive from `seed`, which is also stored as
/// the bundle's config seed. The last partial batch is used.
/// Throws NonFiniteLoss if the loss or any activation stops being finite.
TrainResult train(const net::ModelConfig& config, const text::Vocabulary& vocabulary,
                  const text::EncodedDataset& data, const TrainOptions& options, std::uint64_t seed);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Confusion counts with malware as the positive class. The benign row
/// treats benign as positive. Undefined ratios (0/0) are reported as 0.
struct EvalMetrics {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  ClassMetrics benign;
  ClassMetrics malware;
  double accuracy = 0.0;

  std::size_t total() const noexcept { return tp + tn + fp + fn; }
};

EvalMetrics metrics_from_counts(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn);
double f1_score(double precision, double recall) noexcept;
/// Counts predictions `probs >= threshold` against `labels`.
EvalMetrics compute_metrics(std::span<const double> probs, std::span<const int> labels,
                            double threshold = kDecisionThreshold);
EvalMetrics evaluate(const net::ModelBundle& bundle, const text::EncodedDataset& data);

std::string metrics_to_json(const EvalMetrics& metrics);
/// `epoch,loss,train_acc,seconds` rows.
std::string history_to_csv(const TrainHistory& history);

struct GridCandidate {
  net::ModelConfig config;
  TrainOptions options;
};

struct GridRow {
  GridCandidate candidate;
  std::size_t param_count = 0;
  double val_accuracy = 0.0;
};

struct GridResult {
  std::size_t best_index = 0;
  std::vector<GridRow> table;

  const GridCandidate& best() const { return table.at(best_index).candidate; }
};

/// Every (filters, kernel) pair applied to all conv blocks of `base`.
std::vector<GridCandidate> make_grid(const net::ModelConfig& base, const TrainOptions& options,
                                     std::span<const std::size_t> filters, std::span<const std::size_t> kernels);

/// Trains each candidate on 80% of `data` (seed + cell index) and scores it on
/// the other 20%. Best = highest validation accuracy, then fewer parameters,
/// then the lexicographically smaller (filters, kernel) sequence.
GridResult grid_search(std::span<const GridCandidate> grid, const text::Vocabulary& vocabulary,
                       const text::EncodedDataset& data, std::uint64_t seed);

/// `filters,kernel,params,val_accuracy` with one row per cell.
std::string grid_table_to_csv(const GridResult& result);

}  // namespace maldet::train
