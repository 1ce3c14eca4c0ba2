#include "maldet/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <json.hpp>
#include <numeric>

#include "maldet/error.hpp"

namespace maldet::train {

using nd::NumArray;
using nd::Var;

namespace {

double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

void check_labels(std::size_t count, std::span<const int> labels) {
  if (count != labels.size()) {
    throw Error(ErrorKind::ShapeMismatch, std::to_string(count) + " probabilities for " +
                                              std::to_string(labels.size()) + " labels");
  }
}

}  // namespace

double bce_loss(std::span<const double> probs, std::span<const int> labels) {
  check_labels(probs.size(), labels);
  if (probs.empty()) throw Error(ErrorKind::ShapeMismatch, "bce_loss of an empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_probability(probs[i]);
    total -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(probs.size());
}

Var bce_loss(Var probs, std::span<const int> labels) {
  const NumArray& p = probs.value();
  const double loss = bce_loss(p.data(), labels);
  std::vector<int> y(labels.begin(), labels.end());
  return probs.tape().record(
      NumArray::scalar(loss), {probs},
      [&p, y = std::move(y)](const NumArray&, const NumArray& g, std::span<NumArray* const> gin) {
        const double inv_batch = 1.0 / static_cast<double>(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
          const double raw = p[i];
          if (raw < kProbabilityClamp || raw > 1.0 - kProbabilityClamp) continue;  // flat where clamped
          const double d = y[i] ? -1.0 / raw : 1.0 / (1.0 - raw);
          (*gin[0])[i] += g[0] * d * inv_batch;
        }
      },
      "bce_loss");
}

void adam_step(net::ModelParams& params, const std::map<std::string, NumArray>& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw Error(ErrorKind::ShapeMismatch, "gradient for unknown parameter " + name);
    if (it->second.shape() != g.shape()) {
      throw Error(ErrorKind::ShapeMismatch, "gradient shape mismatch for " + name);
    }
  }
  ++state.step;
  const AdamOptions& o = state.options;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(o.beta1, t);
  const double correct2 = 1.0 - std::pow(o.beta2, t);
  for (const auto& [name, g] : grads) {
    NumArray& w = params.at(name);
    auto [m_it, m_new] = state.m.try_emplace(name, g.shape());
    auto [v_it, v_new] = state.v.try_emplace(name, g.shape());
    NumArray& m = m_it->second;
    NumArray& v = v_it->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      w[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

TrainResult train(const net::ModelConfig& config, const text::Vocabulary& vocabulary,
                  const text::EncodedDataset& data, const TrainOptions& options, std::uint64_t seed) {
  net::validate(config);
  if (data.num_samples() == 0) throw Error(ErrorKind::EmptyCorpus, "no training samples");
  if (data.n != config.sequence_length) {
    throw Error(ErrorKind::ShapeMismatch, "data rows have length " + std::to_string(data.n) +
                                              ", model expects " + std::to_string(config.sequence_length));
  }
  if (options.batch_size == 0) throw Error(ErrorKind::InvalidConfig, "batch_size must be positive");

  net::ModelConfig seeded = config;
  seeded.seed = seed;
  TrainResult result{net::make_bundle(seeded, vocabulary), {}};
  net::ModelBundle& bundle = result.bundle;

  AdamState adam{options.adam, {}, {}, 0};
  nd::Rng order_rng = nd::Rng::derive(seed, 0x0bd3);
  nd::Rng dropout_rng = nd::Rng::derive(seed, 0xd207);
  const std::size_t total = data.num_samples();
  std::vector<std::size_t> order(total);

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<text::TokenId> batch_ids;
    std::vector<int> batch_labels;
    for (std::size_t start = 0; start < total; start += options.batch_size) {
      const std::size_t count = std::min(options.batch_size, total - start);
      batch_ids.clear();
      batch_labels.clear();
      for (std::size_t k = 0; k < count; ++k) {
        auto row = data.row(order[start + k]);
        batch_ids.insert(batch_ids.end(), row.begin(), row.end());
        batch_labels.push_back(data.labels[order[start + k]]);
      }

      nd::Tape tape;
      const net::ParamVars vars = net::bind_params(tape, bundle.params);
      std::vector<Var> param_vars;
      param_vars.reserve(vars.size());
      for (const auto& [name, var] : vars) param_vars.push_back(var);

      Var loss;
      try {
        Var probs = net::forward_graph(bundle.config, vars, batch_ids, count, net::Mode::Train, &dropout_rng);
        loss = bce_loss(probs, batch_labels);
        for (std::size_t k = 0; k < count; ++k) {
          correct += (probs.value()[k] >= kDecisionThreshold) == (batch_labels[k] == 1);
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NumericError) throw;
        throw Error(ErrorKind::NonFiniteLoss, fmt::format("epoch {} batch at {}: {}", epoch, start, e.what()));
      }
      const double loss_value = loss.value()[0];
      if (!std::isfinite(loss_value)) {
        throw Error(ErrorKind::NonFiniteLoss, fmt::format("epoch {} batch at {}: loss {}", epoch, start, loss_value));
      }
      loss_sum += loss_value * static_cast<double>(count);

      std::vector<NumArray> grads = tape.backward(loss, param_vars);
      std::map<std::string, NumArray> named;
      std::size_t i = 0;
      for (const auto& [name, var] : vars) named.emplace(name, std::move(grads[i++]));
      adam_step(bundle.params, named, adam);
    }
    for (const auto& [name, array] : bundle.params) {
      try {
        array.check_finite(name.c_str());
      } catch (const Error& e) {
        throw Error(ErrorKind::NonFiniteLoss, fmt::format("epoch {}: {}", epoch, e.what()));
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.loss = loss_sum / static_cast<double>(total);
    record.train_accuracy = static_cast<double>(correct) / static_cast<double>(total);
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    spdlog::info("epoch {}/{} loss {:.6f} train_acc {:.4f} ({:.2f}s)", epoch, options.epochs, record.loss,
                 record.train_accuracy, record.seconds);
    result.history.push_back(record);
  }
  return result;
}

double f1_score(double precision, double recall) noexcept {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

EvalMetrics metrics_from_counts(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn) {
  auto ratio = [](std::size_t num, std::size_t den) {
    return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
  };
  EvalMetrics m;
  m.tp = tp;
  m.tn = tn;
  m.fp = fp;
  m.fn = fn;
  m.malware.precision = ratio(tp, tp + fp);
  m.malware.recall = ratio(tp, tp + fn);
  m.malware.f1 = f1_score(m.malware.precision, m.malware.recall);
  m.benign.precision = ratio(tn, tn + fn);
  m.benign.recall = ratio(tn, tn + fp);
  m.benign.f1 = f1_score(m.benign.precision, m.benign.recall);
  m.accuracy = ratio(tp + tn, tp + tn + fp + fn);
  return m;
}

EvalMetrics compute_metrics(std::span<const double> probs, std::span<const int> labels, double threshold) {
  check_labels(probs.size(), labels);
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= threshold;
    const bool actual = labels[i] == 1;
    if (predicted && actual) ++tp;
    else if (predicted) ++fp;
    else if (actual) ++fn;
    else ++tn;
  }
  return metrics_from_counts(tp, tn, fp, fn);
}

EvalMetrics evaluate(const net::ModelBundle& bundle, const text::EncodedDataset& data) {
  if (data.num_samples() == 0) throw Error(ErrorKind::EmptyCorpus, "no evaluation samples");
  const std::vector<double> probs = net::forward(bundle, data.ids);
  return compute_metrics(probs, data.labels);
}

std::string metrics_to_json(const EvalMetrics& m) {
  auto row = [](const ClassMetrics& c) { return nlohmann::ordered_json{{"p", c.precision}, {"r", c.recall}, {"f1", c.f1}}; };
  const nlohmann::ordered_json doc{{"tp", m.tp},
                                   {"tn", m.tn},
                                   {"fp", m.fp},
                                   {"fn", m.fn},
                                   {"per_class", {{"benign", row(m.benign)}, {"malware", row(m.malware)}}},
                                   {"accuracy", m.accuracy}};
  return doc.dump(2) + "\n";
}

std::string history_to_csv(const TrainHistory& history) {
  std::string out = "epoch,loss,train_acc,seconds\n";
  for (const auto& r : history) out += fmt::format("{},{},{},{:.6f}\n", r.epoch, r.loss, r.train_accuracy, r.seconds);
  return out;
}

std::vector<GridCandidate> make_grid(const net::ModelConfig& base, const TrainOptions& options,
                                     std::span<const std::size_t> filters, std::span<const std::size_t> kernels) {
  std::vector<GridCandidate> grid;
  for (auto f : filters) {
    for (auto k : kernels) {
      GridCandidate cell{base, options};
      for (auto& block : cell.config.conv_blocks) {
        block.filters = f;
        block.kernel = k;
      }
      grid.push_back(std::move(cell));
    }
  }
  return grid;
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> conv_key(const net::ModelConfig& c) {
  std::vector<std::pair<std::size_t, std::size_t>> key;
  for (const auto& b : c.conv_blocks) key.emplace_back(b.filters, b.kernel);
  return key;
}

}  // namespace

GridResult grid_search(std::span<const GridCandidate> grid, const text::Vocabulary& vocabulary,
                       const text::EncodedDataset& data, std::uint64_t seed) {
  if (grid.empty()) throw Error(ErrorKind::InvalidConfig, "empty hyperparameter grid");
  const text::SplitIndices carve = text::split_indices(data.labels, 0.8, seed);
  const text::EncodedDataset fit_part = data.subset(carve.train);
  const text::EncodedDataset val_part = data.subset(carve.test);

  GridResult result;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const GridCandidate& cell = grid[i];
    TrainResult trained = train(cell.config, vocabulary, fit_part, cell.options, seed + i);
    GridRow row{cell, net::param_count(cell.config, vocabulary.size()), evaluate(trained.bundle, val_part).accuracy};
    spdlog::info("grid cell {}: val_accuracy {:.4f} params {}", i, row.val_accuracy, row.param_count);
    result.table.push_back(std::move(row));
  }

  auto better = [](const GridRow& a, const GridRow& b) {
    if (a.val_accuracy != b.val_accuracy) return a.val_accuracy > b.val_accuracy;
    if (a.param_count != b.param_count) return a.param_count < b.param_count;
    return conv_key(a.candidate.config) < conv_key(b.candidate.config);
  };
  for (std::size_t i = 1; i < result.table.size(); ++i) {
    if (better(result.table[i], result.table[result.best_index])) result.best_index = i;
  }
  return result;
}

std::string grid_table_to_csv(const GridResult& result) {
  std::string out = "filters,kernel,params,val_accuracy\n";
  for (const auto& row : result.table) {
    const auto& blocks = row.candidate.config.conv_blocks;
    const std::size_t filters = blocks.empty() ? 0 : blocks.front().filters;
    const std::size_t kernel = blocks.empty() ? 0 : blocks.front().kernel;
    out += fmt::format("{},{},{},{}\n", filters, kernel, row.param_count, row.val_accuracy);
  }
  return out;
}

}  // namespace maldet::train
