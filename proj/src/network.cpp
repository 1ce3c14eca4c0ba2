#include "maldet/network.hpp"

#include <cmath>
#include <string>

#include "maldet/error.hpp"

namespace maldet::net {

namespace {

constexpr double kEmbeddingLimit = 0.05;

[[noreturn]] void bad_config(const std::string& message) { throw Error(ErrorKind::InvalidConfig, message); }

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

std::string conv_name(std::size_t i, const char* part) { return "conv" + std::to_string(i) + "." + part; }
std::string dense_name(std::size_t i, const char* part) { return "dense" + std::to_string(i) + "." + part; }

constexpr const char* kGruParts[] = {"w_zx", "u_zh", "b_z", "w_rx", "u_rh", "b_r", "w_hx", "u_hh", "b_h"};

}  // namespace

void validate(const ModelConfig& c) {
  if (c.sequence_length == 0) bad_config("sequence_length must be positive");
  if (c.embed_dim == 0) bad_config("embed_dim must be positive");
  if (c.gru_hidden == 0) bad_config("gru_hidden must be positive");
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) bad_config("dropout_rate must lie in [0, 1)");
  for (std::size_t i = 0; i < c.conv_blocks.size(); ++i) {
    const auto& b = c.conv_blocks[i];
    const std::string where = "conv_blocks[" + std::to_string(i) + "]";
    if (b.filters == 0 || b.kernel == 0) bad_config(where + ": filters and kernel must be positive");
    if (b.stride != 1) bad_config(where + ": only stride 1 is supported");
    if (b.pool_window == 0 || b.pool_stride == 0) bad_config(where + ": pool window and stride must be positive");
  }
  for (auto width : c.dense_layers) {
    if (width == 0) bad_config("dense layer widths must be positive");
  }
  length_chain(c);
}

std::vector<std::size_t> length_chain(const ModelConfig& c) {
  std::vector<std::size_t> chain{c.sequence_length};
  std::size_t len = c.sequence_length;
  for (std::size_t i = 0; i < c.conv_blocks.size(); ++i) {
    const auto& b = c.conv_blocks[i];
    if (len < b.kernel) {
      bad_config("conv block " + std::to_string(i) + ": kernel " + std::to_string(b.kernel) + " exceeds length " +
                 std::to_string(len));
    }
    len = len - b.kernel + 1;
    chain.push_back(len);
    if (len < b.pool_window) {
      bad_config("conv block " + std::to_string(i) + ": pool window " + std::to_string(b.pool_window) +
                 " exceeds length " + std::to_string(len));
    }
    len = (len - b.pool_window) / b.pool_stride + 1;
    chain.push_back(len);
  }
  return chain;
}

std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& c, std::size_t vocab_size) {
  validate(c);
  std::vector<std::pair<std::string, Shape>> layout;
  layout.emplace_back("embedding", Shape{vocab_size, c.embed_dim});
  std::size_t channels = c.embed_dim;
  for (std::size_t i = 0; i < c.conv_blocks.size(); ++i) {
    const auto& b = c.conv_blocks[i];
    layout.emplace_back(conv_name(i, "weight"), Shape{b.filters, b.kernel, channels});
    layout.emplace_back(conv_name(i, "bias"), Shape{b.filters});
    channels = b.filters;
  }
  const std::size_t h = c.gru_hidden;
  for (const char* dir : {"gru_fwd.", "gru_bwd."}) {
    for (const char* part : kGruParts) {
      Shape shape = part[0] == 'w' ? Shape{channels, h} : part[0] == 'u' ? Shape{h, h} : Shape{h};
      layout.emplace_back(std::string(dir) + part, std::move(shape));
    }
  }
  std::size_t width = length_chain(c).back() * 2 * h;
  for (std::size_t i = 0; i < c.dense_layers.size(); ++i) {
    layout.emplace_back(dense_name(i, "weight"), Shape{width, c.dense_layers[i]});
    layout.emplace_back(dense_name(i, "bias"), Shape{c.dense_layers[i]});
    width = c.dense_layers[i];
  }
  layout.emplace_back("output.weight", Shape{width, 1});
  layout.emplace_back("output.bias", Shape{1});
  return layout;
}

std::size_t param_count(const ModelConfig& config, std::size_t vocab_size) {
  std::size_t total = 0;
  for (const auto& [name, shape] : param_layout(config, vocab_size)) total += nd::shape_size(shape);
  return total;
}

ModelParams init_params(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed) {
  nd::Rng rng = nd::Rng::derive(seed, 0x1417);
  ModelParams params;
  for (const auto& [name, shape] : param_layout(config, vocab_size)) {
    if (name == "embedding") {
      params.emplace(name, nd::init_uniform(shape, kEmbeddingLimit, rng));
    } else if (shape.size() == 1) {
      params.emplace(name, NumArray::zeros(shape));
    } else if (shape.size() == 3) {  // conv: filters x kernel x channels
      params.emplace(name, nd::init_uniform(shape, glorot_limit(shape[1] * shape[2], shape[1] * shape[0]), rng));
    } else {
      params.emplace(name, nd::init_uniform(shape, glorot_limit(shape[0], shape[1]), rng));
    }
  }
  return params;
}

ModelBundle make_bundle(const ModelConfig& config, text::Vocabulary vocabulary) {
  ModelBundle bundle;
  bundle.config = config;
  bundle.params = init_params(config, vocabulary.size(), config.seed);
  bundle.vocabulary = std::move(vocabulary);
  return bundle;
}

// ---------------------------------------------------------------------------
// Layers

Var embed(Var table, std::span<const text::TokenId> ids) { return nd::gather_rows(table, ids); }

Var conv1d_relu(Var x, Var weight, Var bias) { return nd::relu(nd::conv1d(x, weight, bias)); }

Var max_pool(Var x, std::size_t window, std::size_t stride) { return nd::max_pool_1d(x, window, stride); }

namespace {

// Gate arithmetic given precomputed input projections (x w + b) for one step.
Var gru_update(Var xz, Var xr, Var xh, Var h_prev, const GruVars& p) {
  Var z = nd::sigmoid(nd::add(xz, nd::matmul(h_prev, p.u_zh)));
  Var r = nd::sigmoid(nd::add(xr, nd::matmul(h_prev, p.u_rh)));
  Var candidate = nd::tanh(nd::add(xh, nd::mul(r, nd::matmul(h_prev, p.u_hh))));
  // (1 - z) * h~ + z * h  ==  h~ + z * (h - h~)
  return nd::add(candidate, nd::mul(z, nd::sub(h_prev, candidate)));
}

// (B x L x in) -> (B x L x H) projection x w + b for every step at once.
Var project(Var x, Var w, Var b) {
  const Shape& s = x.shape();
  Var flat = nd::reshape(x, {s[0] * s[1], s[2]});
  Var proj = nd::add(nd::matmul(flat, w), b);
  return nd::reshape(proj, {s[0], s[1], w.shape()[1]});
}

Var gru_pass(Var x, const GruVars& p, bool reverse) {
  const std::size_t batch = x.shape()[0], len = x.shape()[1];
  const std::size_t hidden = p.u_zh.shape()[0];
  Var xz = project(x, p.w_zx, p.b_z);
  Var xr = project(x, p.w_rx, p.b_r);
  Var xh = project(x, p.w_hx, p.b_h);
  Var h = x.tape().constant(NumArray::zeros({batch, hidden}));
  std::vector<Var> states(len);
  for (std::size_t step = 0; step < len; ++step) {
    const std::size_t t = reverse ? len - 1 - step : step;
    h = gru_update(nd::select(xz, 1, t), nd::select(xr, 1, t), nd::select(xh, 1, t), h, p);
    states[t] = h;
  }
  return nd::stack(states, 1);
}

}  // namespace

Var gru_cell(Var x, Var h_prev, const GruVars& p) {
  Var xz = nd::add(nd::matmul(x, p.w_zx), p.b_z);
  Var xr = nd::add(nd::matmul(x, p.w_rx), p.b_r);
  Var xh = nd::add(nd::matmul(x, p.w_hx), p.b_h);
  return gru_update(xz, xr, xh, h_prev, p);
}

Var bigru(Var x, const GruVars& fwd, const GruVars& bwd) {
  const bool batched = x.shape().size() == 3;
  if (!batched && x.shape().size() != 2) throw Error(ErrorKind::ShapeMismatch, "bigru input must be rank 2 or 3");
  Var input = batched ? x : nd::reshape(x, {1, x.shape()[0], x.shape()[1]});
  Var out = nd::concat(gru_pass(input, fwd, false), gru_pass(input, bwd, true), 2);
  if (batched) return out;
  return nd::reshape(out, {out.shape()[1], out.shape()[2]});
}

Var flatten(Var x) { return nd::reshape(x, {x.value().size()}); }

Var flatten_batch(Var x) {
  const std::size_t batch = x.shape()[0];
  return nd::reshape(x, {batch, x.value().size() / batch});
}

Var dense_relu_dropout(Var v, Var weight, Var bias, double rate, Mode mode, nd::Rng* rng) {
  Var act = nd::relu(nd::add(nd::matmul(v, weight), bias));
  if (mode == Mode::Eval || rate == 0.0) return act;
  if (!rng) throw Error(ErrorKind::InvalidConfig, "training-mode dropout needs a random stream");
  const double keep = 1.0 - rate;
  NumArray mask(act.shape());
  for (auto& m : mask.data()) m = rng->uniform01() < keep ? 1.0 / keep : 0.0;
  return nd::mul(act, act.tape().constant(std::move(mask)));
}

ParamVars bind_params(Tape& tape, const ModelParams& params) {
  ParamVars vars;
  for (const auto& [name, value] : params) vars.emplace(name, tape.parameter(value));
  return vars;
}

GruVars gru_vars(const ParamVars& vars, const std::string& prefix) {
  auto get = [&](const char* part) {
    auto it = vars.find(prefix + "." + part);
    if (it == vars.end()) throw Error(ErrorKind::CorruptBundle, "missing parameter " + prefix + "." + part);
    return it->second;
  };
  return GruVars{get("w_zx"), get("u_zh"), get("b_z"), get("w_rx"), get("u_rh"),
                 get("b_r"),  get("w_hx"), get("u_hh"), get("b_h")};
}

Var forward_graph(const ModelConfig& config, const ParamVars& vars, std::span<const text::TokenId> ids,
                  std::size_t batch, Mode mode, nd::Rng* rng) {
  const std::size_t n = config.sequence_length;
  if (batch == 0 || ids.size() != batch * n) {
    throw Error(ErrorKind::ShapeMismatch, "expected " + std::to_string(batch) + " rows of length " +
                                              std::to_string(n) + ", got " + std::to_string(ids.size()) + " ids");
  }
  auto param = [&](const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end()) throw Error(ErrorKind::CorruptBundle, "missing parameter " + name);
    return it->second;
  };

  Var x = nd::reshape(embed(param("embedding"), ids), {batch, n, config.embed_dim});
  for (std::size_t i = 0; i < config.conv_blocks.size(); ++i) {
    const auto& block = config.conv_blocks[i];
    x = conv1d_relu(x, param(conv_name(i, "weight")), param(conv_name(i, "bias")));
    x = max_pool(x, block.pool_window, block.pool_stride);
  }
  x = bigru(x, gru_vars(vars, "gru_fwd"), gru_vars(vars, "gru_bwd"));
  x = flatten_batch(x);
  for (std::size_t i = 0; i < config.dense_layers.size(); ++i) {
    x = dense_relu_dropout(x, param(dense_name(i, "weight")), param(dense_name(i, "bias")), config.dropout_rate,
                           mode, rng);
  }
  Var logits = nd::add(nd::matmul(x, param("output.weight")), param("output.bias"));
  return nd::reshape(nd::sigmoid(logits), {batch});
}

std::vector<double> forward(const ModelBundle& bundle, std::span<const text::TokenId> ids, Mode mode, nd::Rng* rng,
                            std::size_t chunk) {
  const std::size_t n = bundle.config.sequence_length;
  if (n == 0 || ids.size() % n != 0) throw Error(ErrorKind::ShapeMismatch, "ids do not form rows of length n");
  const std::size_t rows = ids.size() / n;
  std::vector<double> out;
  out.reserve(rows);
  for (std::size_t start = 0; start < rows; start += chunk) {
    const std::size_t count = std::min(chunk, rows - start);
    Tape tape(false);
    const ParamVars vars = bind_params(tape, bundle.params);
    Var probs = forward_graph(bundle.config, vars, ids.subspan(start * n, count * n), count, mode, rng);
    const auto values = probs.value().data();
    out.insert(out.end(), values.begin(), values.end());
  }
  return out;
}

}  // namespace maldet::net
