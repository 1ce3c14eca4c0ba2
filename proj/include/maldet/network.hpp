#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maldet/autodiff.hpp"
#include "maldet/text_pipeline.hpp"

namespace maldet::net {

using nd::NumArray;
using nd::Shape;
using nd::Tape;
using nd::Var;

struct ConvBlock {
  std::size_t filters = 64;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pool_window = 2;
  std::size_t pool_stride = 2;

  bool operator==(const ConvBlock&) const = default;
};

/// Architecture of the embedding -> CNN -> BiGRU -> dense classifier.
struct ModelConfig {
  std::size_t sequence_length = 100;
  std::size_t embed_dim = 100;
  std::vector<ConvBlock> conv_blocks{{64, 3, 1, 2, 2}, {32, 3, 1, 2, 2}};
  std::size_t gru_hidden = 64;  // per direction
  std::vector<std::size_t> dense_layers{128, 64};
  double dropout_rate = 0.2;
  std::uint64_t seed = 42;

  bool operator==(const ModelConfig&) const = default;
};

/// Throws InvalidConfig unless every dimension is positive, stride is 1,
/// dropout_rate is in [0, 1) and the sequence survives every conv/pool block.
void validate(const ModelConfig& config);

/// Time-axis length after each conv and pool stage, starting with
/// sequence_length. The last entry is the length fed to the BiGRU.
std::vector<std::size_t> length_chain(const ModelConfig& config);

/// Named parameter arrays, e.g. "embedding", "conv0.weight", "gru_fwd.u_zh".
using ModelParams = std::map<std::string, NumArray>;

/// Parameter names and shapes in initialization order.
std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& config, std::size_t vocab_size);
std::size_t param_count(const ModelConfig& config, std::size_t vocab_size);

/// Embedding uniform(-0.05, 0.05); conv, GRU and dense weights Glorot-uniform;
/// biases zero. Deterministic in `seed`.
ModelParams init_params(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed);

inline constexpr int kBundleFormatVersion = 1;

struct ModelBundle {
  int format_version = kBundleFormatVersion;
  ModelConfig config;
  text::Vocabulary vocabulary;
  ModelParams params;

  bool operator==(const ModelBundle&) const = default;
};

/// Fresh bundle with initialized parameters.
ModelBundle make_bundle(const ModelConfig& config, text::Vocabulary vocabulary);

std::string bundle_to_json(const ModelBundle& bundle);
/// Throws FormatVersionMismatch or CorruptBundle.
ModelBundle bundle_from_json(std::string_view text);
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Layers. Inputs may be unbatched (L x C) or batched (B x L x C) unless noted.

enum class Mode { Train, Eval };

/// Rows of the embedding table for `ids`; padding looks up row 0 like any id.
Var embed(Var table, std::span<const text::TokenId> ids);
Var conv1d_relu(Var x, Var weight, Var bias);
Var max_pool(Var x, std::size_t window, std::size_t stride);

/// One GRU parameter set: input weights w_* (in x H), recurrent u_* (H x H), biases b_* (H).
struct GruVars {
  Var w_zx, u_zh, b_z;
  Var w_rx, u_rh, b_r;
  Var w_hx, u_hh, b_h;
};

/// z = sig(x w_zx + h u_zh + b_z), r = sig(x w_rx + h u_rh + b_r),
/// h~ = tanh(x w_hx + r * (h u_hh) + b_h), h' = (1 - z) * h~ + z * h.
/// `x` is (B x in) and `h_prev` is (B x H).
Var gru_cell(Var x, Var h_prev, const GruVars& p);

/// Forward pass and a reversed-direction pass from zero states; row t holds
/// [h_fwd(t), h_bwd(t)]. Output is (L x 2H), batched likewise.
Var bigru(Var x, const GruVars& fwd, const GruVars& bwd);

/// Row-major flatten to a vector.
Var flatten(Var x);
/// Flattens everything but the leading batch axis.
Var flatten_batch(Var x);

/// ReLU(v W + b) followed by inverted dropout in Train mode. `v` is (B x in).
Var dense_relu_dropout(Var v, Var weight, Var bias, double rate, Mode mode, nd::Rng* rng);

using ParamVars = std::map<std::string, Var>;

/// Puts every parameter on the tape (tracked when the tape has gradients on).
ParamVars bind_params(Tape& tape, const ModelParams& params);
GruVars gru_vars(const ParamVars& vars, const std::string& prefix);

/// Full model graph for `batch` rows of `ids` (row-major, batch x n).
/// Returns a (batch) vector of malware probabilities.
Var forward_graph(const ModelConfig& config, const ParamVars& vars, std::span<const text::TokenId> ids,
                  std::size_t batch, Mode mode, nd::Rng* rng);

/// Probabilities for `ids` (row-major, k x n). Eval mode ignores `rng`.
std::vector<double> forward(const ModelBundle& bundle, std::span<const text::TokenId> ids, Mode mode = Mode::Eval,
                            nd::Rng* rng = nullptr, std::size_t chunk = 64);

}  // namespace maldet::net
