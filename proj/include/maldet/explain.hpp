#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "maldet/network.hpp"
#include "maldet/report_ingest.hpp"

namespace maldet::explain {

/// Binary masks over the non-padding positions of one encoded sequence.
/// Row 0 is the unmasked sequence. A 0 entry means the position is replaced
/// by the padding id when the model is queried.
struct PerturbationSet {
  std::size_t active = 0;  // non-padding positions
  std::vector<std::uint8_t> masks;  // rows x active
  std::vector<double> predictions;  // one per row, filled by the caller
  std::vector<double> proximities;  // one per row

  std::size_t rows() const noexcept { return active ? masks.size() / active : 0; }
  std::span<const std::uint8_t> mask(std::size_t row) const {
    return std::span<const std::uint8_t>(masks).subspan(row * active, active);
  }
};

/// Draws `num_samples` masks. Each row after the first disables k positions,
/// k uniform in 1..active-1. A single-token sequence gets the identity mask
/// followed by copies of its one-token-removed complement. Proximities are
/// filled in. Throws EmptySequence when every id is padding, and
/// InvalidConfig when num_samples < 2.
PerturbationSet perturb(std::span<const text::TokenId> ids, std::size_t num_samples, nd::Rng& rng);

/// exp(-d^2 / s^2) with d the cosine distance between `mask` and the
/// all-ones vector and s = 0.75 * sqrt(mask.size()). An all-zero mask has d = 1.
double proximity(std::span<const std::uint8_t> mask);

/// `masks` with disabled positions set to the padding id, one row per mask.
std::vector<text::TokenId> apply_masks(std::span<const text::TokenId> ids, const PerturbationSet& set);

struct Surrogate {
  std::vector<double> weights;
  double intercept = 0.0;
};

inline constexpr double kDefaultRidge = 0.01;

/// Proximity-weighted ridge regression of predictions on masks with an
/// unpenalized intercept, solved through the normal equations.
/// Throws SingularSystem when the system has no unique solution (only
/// possible with ridge == 0).
Surrogate fit_surrogate(const PerturbationSet& set, double ridge = kDefaultRidge);

struct TokenWeight {
  std::size_t index = 0;
  std::string api;
  double weight = 0.0;
};

struct Explanation {
  std::string sha256;
  ingest::Label predicted_class = ingest::Label::Benign;
  /// Model probability of malware for the unmasked sequence.
  double probability = 0.0;
  double intercept = 0.0;
  /// Surrogate output for the unmasked sequence: intercept + sum of weights.
  double local_prediction = 0.0;
  /// Per active position; positive weight supports the predicted class.
  std::vector<TokenWeight> tokens;

  /// Model probability of the predicted class.
  double class_probability() const noexcept {
    return predicted_class == ingest::Label::Malware ? probability : 1.0 - probability;
  }
  /// |local_prediction - class_probability()|.
  double residual() const noexcept;
  /// Largest positive weights first.
  std::vector<TokenWeight> supporters(std::size_t k) const;
  /// Most negative weights first.
  std::vector<TokenWeight> opposers(std::size_t k) const;
};

/// Probability of malware for `rows` encoded sequences laid out row-major.
using BlackBox = std::function<std::vector<double>(std::span<const text::TokenId> ids, std::size_t rows)>;

struct ExplainOptions {
  std::size_t num_samples = 1000;
  std::uint64_t seed = 42;
  double ridge = kDefaultRidge;
};

/// Explains one encoded sequence against any black box. `tokens[i]` names
/// position i and must cover every non-padding position.
Explanation explain_ids(const BlackBox& model, std::span<const text::TokenId> ids,
                        std::span<const std::string> tokens, const ExplainOptions& options);

/// Encodes `calls` with the bundle's vocabulary and explains the model's prediction.
Explanation explain(const net::ModelBundle& bundle, std::span<const std::string> calls,
                    const ExplainOptions& options, std::string sha256 = {});

/// `{sha256, predicted_class, probability, intercept, local_prediction, tokens: [{index, api, weight}]}`.
std::string explanation_to_json(const Explanation& explanation);

/// Standalone HTML page: class probabilities, top-k supporting and opposing
/// calls, and the indexed call sequence shaded by weight.
std::string render_html(const Explanation& explanation, std::size_t top_k = 10);
void render_html(const Explanation& explanation, const std::filesystem::path& path, std::size_t top_k = 10);

}  // namespace maldet::explain
