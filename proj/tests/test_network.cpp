#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "maldet/digest.hpp"
#include "maldet/error.hpp"
#include "maldet/json_io.hpp"
#include "maldet/network.hpp"
#include "maldet/training.hpp"
#include "oracle/oracle.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace maldet;
using namespace maldet::net;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::IoError;
}

const char* const kGruParts[] = {"w_zx", "u_zh", "b_z", "w_rx", "u_rh", "b_r", "w_hx", "u_hh", "b_h"};

ModelParams random_gru(std::size_t in, std::size_t H, nd::Rng& rng, const std::string& prefix = "g.") {
  ModelParams p;
  for (const char* part : kGruParts) {
    const std::string name(part);
    Shape shape = name[0] == 'w' ? Shape{in, H} : name[0] == 'u' ? Shape{H, H} : Shape{H};
    p.emplace(prefix + name, nd::init_uniform(shape, 1.0, rng));
  }
  return p;
}

GruVars bind_gru(Tape& tape, const ModelParams& p, const std::string& prefix = "g") {
  return gru_vars(bind_params(tape, p), prefix);
}

oracle::Mat to_mat(const NumArray& a) {
  oracle::Mat m(a.dim(0), std::vector<double>(a.dim(1)));
  for (std::size_t r = 0; r < a.dim(0); ++r)
    for (std::size_t c = 0; c < a.dim(1); ++c) m[r][c] = a(r, c);
  return m;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.sequence_length = 8;
  c.embed_dim = 4;
  c.conv_blocks = {{2, 2, 1, 2, 2}};
  c.gru_hidden = 3;
  c.dense_layers = {4};
  return c;
}

ModelConfig small_config() {
  ModelConfig c;
  c.sequence_length = 16;
  c.embed_dim = 6;
  c.conv_blocks = {{5, 3, 1, 2, 2}, {4, 2, 1, 2, 1}};
  c.gru_hidden = 3;
  c.dense_layers = {7, 5};
  return c;
}

text::Vocabulary vocab_of(std::size_t real_tokens) {
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < real_tokens; ++i) tokens.push_back("Api" + std::to_string(i));
  return text::Vocabulary::from_tokens(tokens);
}

std::vector<text::TokenId> random_ids(std::size_t count, std::size_t vocab_size, nd::Rng& rng) {
  std::vector<text::TokenId> ids(count);
  for (auto& id : ids) id = static_cast<text::TokenId>(rng.below(vocab_size));
  return ids;
}

// Spreads every parameter over a wider range than the initializer so ReLU
// units and pool windows are exercised in both states.
void randomize(ModelParams& params, std::uint64_t seed, double limit = 0.5) {
  nd::Rng rng(seed);
  for (auto& [name, value] : params) value = nd::init_uniform(value.shape(), limit, rng);
}

}  // namespace

TEST_CASE("embedding lookup") {
  Tape tape(false);
  const Var table = tape.constant(NumArray::matrix({{0, 0}, {1, 1}, {2, 3}, {4, 5}}));
  const std::vector<text::TokenId> ids{2, 3, 0, 2};
  const auto out = embed(table, ids).value();
  CHECK(out == NumArray::matrix({{2, 3}, {4, 5}, {0, 0}, {2, 3}}));
  const std::vector<text::TokenId> bad{4};
  CHECK(kind_of([&] { embed(table, bad); }) == ErrorKind::UnknownId);
}

TEST_CASE("conv1d_relu examples") {
  Tape tape(false);
  const Var x = tape.constant(NumArray({5, 1}, 1.0));
  const Var w = tape.constant(NumArray({1, 3, 1}, 1.0));
  CHECK(conv1d_relu(x, w, tape.constant(NumArray({1}, 0.0))).value() == NumArray({3, 1}, 3.0));
  CHECK(conv1d_relu(x, w, tape.constant(NumArray({1}, -10.0))).value() == NumArray({3, 1}, 0.0));

  nd::Rng rng(4);
  const Var r = tape.constant(nd::init_uniform({8, 4}, 1.0, rng));
  const NumArray weight = nd::init_uniform({2, 3, 4}, 1.0, rng);
  const NumArray bias = nd::init_uniform({2}, 1.0, rng);
  const auto out = conv1d_relu(r, tape.constant(weight), tape.constant(bias)).value();
  CHECK(out.shape() == Shape{6, 2});
  const auto expect = oracle::conv_relu(to_mat(r.value()), weight.values(), bias.values(), 2, 3);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t f = 0; f < 2; ++f) CHECK(out(t, f) == doctest::Approx(expect[t][f]).epsilon(1e-14));

  CHECK(kind_of([&] { conv1d_relu(tape.constant(NumArray({2, 4})), tape.constant(weight), tape.constant(bias)); }) ==
        ErrorKind::ShapeMismatch);
}

TEST_CASE("max_pool examples") {
  Tape tape(false);
  CHECK(max_pool(tape.constant(NumArray({4, 1}, {1, 5, 3, 2})), 2, 2).value() == NumArray({2, 1}, {5, 3}));
  CHECK(max_pool(tape.constant(NumArray({6, 1}, 7.0)), 2, 2).value() == NumArray({3, 1}, 7.0));
  CHECK(max_pool(tape.constant(NumArray({5, 2}, {1, 9, 4, 2, 8, 3, 2, 6, 0, 1})), 5, 1).value() ==
        NumArray({1, 2}, {8, 9}));
}

TEST_CASE("flatten is row-major") {
  Tape tape(false);
  CHECK(flatten(tape.constant(NumArray::matrix({{1, 2}, {3, 4}}))).value() == NumArray::vector({1, 2, 3, 4}));
  CHECK(flatten(tape.constant(NumArray({2, 3}, 1.0))).value().size() == 6);
  CHECK(flatten(tape.constant(NumArray({1, 1}, 4.5))).value() == NumArray::vector({4.5}));
  CHECK(flatten_batch(tape.constant(NumArray({2, 3, 2}, 1.0))).value().shape() == Shape{2, 6});
}

TEST_CASE("gru_cell with zero parameters") {
  nd::Rng rng(1);
  ModelParams p = random_gru(3, 2, rng);
  for (auto& [n, v] : p) v = NumArray(v.shape(), 0.0);
  Tape tape(false);
  const Var x = tape.constant(nd::init_uniform({1, 3}, 1.0, rng));
  const Var h = tape.constant(NumArray::matrix({{1, 0}}));
  CHECK(gru_cell(x, h, bind_gru(tape, p)).value() == NumArray::matrix({{0.5, 0.0}}));
}

TEST_CASE("gru_cell carries state when the update gate saturates") {
  nd::Rng rng(2);
  ModelParams p = random_gru(3, 2, rng);
  p.at("g.b_z") = NumArray({2}, 50.0);
  Tape tape(false);
  const NumArray h0 = NumArray::matrix({{0.3, -0.7}});
  const auto h1 = gru_cell(tape.constant(nd::init_uniform({1, 3}, 1.0, rng)), tape.constant(h0), bind_gru(tape, p));
  CHECK(h1.value()[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(h1.value()[1] == doctest::Approx(-0.7).epsilon(1e-12));
}

TEST_CASE("gru_cell matches the scalar oracle") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    nd::Rng rng(seed);
    const std::size_t in = 1 + rng.below(5), H = 1 + rng.below(4), B = 1 + rng.below(3);
    const ModelParams p = random_gru(in, H, rng);
    const NumArray x = nd::init_uniform({B, in}, 2.0, rng);
    const NumArray h = nd::init_uniform({B, H}, 1.0, rng);
    Tape tape(false);
    const auto out = gru_cell(tape.constant(x), tape.constant(h), bind_gru(tape, p)).value();
    const auto ref = oracle::gru_from(p, "g.", in, H);
    for (std::size_t b = 0; b < B; ++b) {
      const std::vector<double> xb(x.values().begin() + b * in, x.values().begin() + (b + 1) * in);
      const std::vector<double> hb(h.values().begin() + b * H, h.values().begin() + (b + 1) * H);
      const auto expect = oracle::gru_cell(xb, hb, ref);
      for (std::size_t j = 0; j < H; ++j) CHECK(std::abs(out(b, j) - expect[j]) < 1e-12);
    }
  }
}

TEST_CASE("bigru single step has identical halves with shared parameters") {
  nd::Rng rng(5);
  const ModelParams p = random_gru(3, 4, rng);
  Tape tape(false);
  const GruVars g = bind_gru(tape, p);
  const auto out = bigru(tape.constant(nd::init_uniform({1, 3}, 1.0, rng)), g, g).value();
  for (std::size_t j = 0; j < 4; ++j) CHECK(out(0, j) == out(0, 4 + j));
}

TEST_CASE("bigru reversal symmetry on a palindrome") {
  nd::Rng rng(6);
  const ModelParams p = random_gru(2, 3, rng);
  const NumArray half = nd::init_uniform({3, 2}, 1.0, rng);
  NumArray x({5, 2});
  for (std::size_t t = 0; t < 5; ++t) {
    const std::size_t src = t < 3 ? t : 4 - t;
    for (std::size_t c = 0; c < 2; ++c) x(t, c) = half(src, c);
  }
  Tape tape(false);
  const GruVars g = bind_gru(tape, p);
  const auto out = bigru(tape.constant(x), g, g).value();
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(out(t, j) == doctest::Approx(out(4 - t, 3 + j)).epsilon(1e-14));
    }
}

TEST_CASE("bigru matches two oracle passes, batched and unbatched") {
  nd::Rng rng(7);
  const ModelParams fwd = random_gru(3, 2, rng, "f.");
  const ModelParams bwd = random_gru(3, 2, rng, "b.");
  ModelParams both = fwd;
  both.insert(bwd.begin(), bwd.end());
  const NumArray x = nd::init_uniform({2, 4, 3}, 1.0, rng);

  Tape tape(false);
  const auto vars = bind_params(tape, both);
  const auto out = bigru(tape.constant(x), gru_vars(vars, "f"), gru_vars(vars, "b")).value();
  CHECK(out.shape() == Shape{2, 4, 4});
  for (std::size_t b = 0; b < 2; ++b) {
    oracle::Mat xb(4, std::vector<double>(3));
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < 3; ++c) xb[t][c] = x[(b * 4 + t) * 3 + c];
    const auto expect = oracle::bigru(xb, oracle::gru_from(fwd, "f.", 3, 2), oracle::gru_from(bwd, "b.", 3, 2));
    NumArray single({4, 3});
    for (std::size_t i = 0; i < 12; ++i) single[i] = x[b * 12 + i];
    const auto unbatched =
        bigru(tape.constant(single), gru_vars(vars, "f"), gru_vars(vars, "b")).value();
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(std::abs(out[(b * 4 + t) * 4 + j] - expect[t][j]) < 1e-12);
        CHECK(std::abs(unbatched(t, j) - expect[t][j]) < 1e-12);
      }
  }
}

TEST_CASE("dense_relu_dropout modes") {
  nd::Rng rng(8);
  const NumArray v = nd::init_uniform({1, 6}, 1.0, rng);
  const NumArray w = nd::init_uniform({6, 5}, 1.0, rng);
  const NumArray b = NumArray({5}, 0.5);
  Tape tape(false);
  const Var vv = tape.constant(v), vw = tape.constant(w), vb = tape.constant(b);
  const auto plain = oracle::dense_relu(v.values(), w.values(), b.values());

  nd::Rng r1(1), r2(2);
  const auto eval1 = dense_relu_dropout(vv, vw, vb, 0.2, Mode::Eval, &r1).value();
  const auto eval2 = dense_relu_dropout(vv, vw, vb, 0.2, Mode::Eval, &r2).value();
  CHECK(eval1 == eval2);
  const auto no_drop = dense_relu_dropout(vv, vw, vb, 0.0, Mode::Train, &r1).value();
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(eval1[j] == doctest::Approx(plain[j]).epsilon(1e-14));
    CHECK(no_drop[j] == eval1[j]);
  }

  // Inverted dropout keeps the expectation of every unit.
  std::vector<double> total(5, 0.0);
  nd::Rng masks(99);
  constexpr int kMasks = 10000;
  for (int i = 0; i < kMasks; ++i) {
    const auto out = dense_relu_dropout(vv, vw, vb, 0.2, Mode::Train, &masks).value();
    for (std::size_t j = 0; j < 5; ++j) total[j] += out[j];
  }
  for (std::size_t j = 0; j < 5; ++j) {
    if (eval1[j] == 0.0) {
      CHECK(total[j] == 0.0);
    } else {
      CHECK(std::abs(total[j] / kMasks - eval1[j]) <= 0.02 * eval1[j]);
    }
  }
}

TEST_CASE("configuration validation and length chain") {
  const ModelConfig def;
  CHECK_NOTHROW(validate(def));
  CHECK(length_chain(def) == std::vector<std::size_t>{100, 98, 49, 47, 23});
  CHECK(length_chain(tiny_config()) == std::vector<std::size_t>{8, 7, 3});

  auto bad = def;
  bad.conv_blocks[0].stride = 2;
  CHECK(kind_of([&] { validate(bad); }) == ErrorKind::InvalidConfig);
  bad = def;
  bad.dropout_rate = 1.0;
  CHECK(kind_of([&] { validate(bad); }) == ErrorKind::InvalidConfig);
  bad = def;
  bad.sequence_length = 6;
  CHECK(kind_of([&] { validate(bad); }) == ErrorKind::InvalidConfig);
  bad = def;
  bad.gru_hidden = 0;
  CHECK(kind_of([&] { validate(bad); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("parameter layout and initialization") {
  const ModelConfig c = small_config();
  const auto layout = param_layout(c, 9);
  const auto params = init_params(c, 9, 3);
  std::size_t total = 0;
  for (const auto& [name, shape] : layout) {
    REQUIRE(params.contains(name));
    CHECK(params.at(name).shape() == shape);
    total += nd::shape_size(shape);
  }
  CHECK(params.size() == layout.size());
  CHECK(param_count(c, 9) == total);
  CHECK(params.at("embedding").shape() == Shape{9, 6});
  CHECK(params.at("conv1.weight").shape() == Shape{4, 2, 5});
  CHECK(params.at("gru_bwd.u_hh").shape() == Shape{3, 3});
  CHECK(params.at("gru_fwd.w_zx").shape() == Shape{4, 3});
  CHECK(params.at("dense0.weight").shape() == Shape{5 * 2 * 3, 7});
  CHECK(params.at("output.weight").shape() == Shape{5, 1});
  for (double v : params.at("embedding").values()) CHECK(std::abs(v) < 0.05);
  for (double v : params.at("dense1.bias").values()) CHECK(v == 0.0);
  const double limit = std::sqrt(6.0 / (7 + 5));
  for (double v : params.at("dense1.weight").values()) CHECK(std::abs(v) < limit);
  CHECK(init_params(c, 9, 3) == params);
  CHECK_FALSE(init_params(c, 9, 4) == params);
}

TEST_CASE("forward with zero parameters is exactly one half") {
  ModelBundle bundle = make_bundle(small_config(), vocab_of(5));
  for (auto& [n, v] : bundle.params) v = NumArray(v.shape(), 0.0);
  nd::Rng rng(1);
  const auto probs = forward(bundle, random_ids(3 * 16, 7, rng));
  CHECK(probs == std::vector<double>(3, 0.5));
}

TEST_CASE("forward matches the composed scalar oracle") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ModelBundle bundle = make_bundle(small_config(), vocab_of(6));
    randomize(bundle.params, seed);
    nd::Rng rng(seed + 100);
    const auto ids = random_ids(8 * 16, 8, rng);
    const auto probs = forward(bundle, ids, Mode::Eval, nullptr, 3);
    REQUIRE(probs.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) {
      const std::vector<text::TokenId> row(ids.begin() + i * 16, ids.begin() + (i + 1) * 16);
      const double expect = oracle::forward(bundle.config, bundle.params, row);
      CHECK(std::abs(probs[i] - expect) < 1e-10);
      CHECK(probs[i] > 0.0);
      CHECK(probs[i] < 1.0);
    }
  }
}

TEST_CASE("forward is per-sample: permuting rows permutes outputs") {
  ModelBundle bundle = make_bundle(small_config(), vocab_of(6));
  randomize(bundle.params, 11);
  nd::Rng rng(12);
  const auto ids = random_ids(5 * 16, 8, rng);
  const auto probs = forward(bundle, ids);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<text::TokenId> permuted;
  for (auto i : perm) permuted.insert(permuted.end(), ids.begin() + i * 16, ids.begin() + (i + 1) * 16);
  const auto out = forward(bundle, permuted);
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(out[i] == probs[perm[i]]);
  CHECK(kind_of([&] { forward(bundle, std::vector<text::TokenId>(15, 0)); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("end-to-end loss gradient passes finite differences") {
  const ModelConfig c = tiny_config();
  ModelBundle bundle = make_bundle(c, vocab_of(4));
  randomize(bundle.params, 21);
  nd::Rng rng(22);
  const auto ids = random_ids(2 * 8, 6, rng);
  const std::vector<int> labels{1, 0};

  std::vector<std::string> names;
  std::vector<NumArray> inputs;
  for (const auto& [name, value] : bundle.params) {
    names.push_back(name);
    inputs.push_back(value);
  }
  for (Mode mode : {Mode::Eval, Mode::Train}) {
    const auto report = gradcheck::check(
        [&](Tape& tape, const std::vector<Var>& leaves) {
          ParamVars vars;
          for (std::size_t i = 0; i < names.size(); ++i) vars.emplace(names[i], leaves[i]);
          nd::Rng dropout(5);  // same mask on every evaluation
          return train::bce_loss(forward_graph(c, vars, ids, 2, mode, &dropout), labels);
        },
        inputs);
    CHECK(report.checked == param_count(c, 6));
    CHECK(report.max_error < 1e-4);
  }
}

TEST_CASE("bundle JSON round-trips exactly") {
  ModelBundle bundle = make_bundle(small_config(), vocab_of(5));
  randomize(bundle.params, 31, 3.0);
  bundle.params.at("embedding")[0] = 0.1 + 0.2;  // not exactly representable in short decimal
  bundle.params.at("embedding")[1] = -1.0e-300;
  bundle.params.at("embedding")[2] = 5e-324;
  const std::string text = bundle_to_json(bundle);
  const ModelBundle back = bundle_from_json(text);
  CHECK(back == bundle);
  CHECK(bundle_to_json(back) == text);

  const auto dir = fixtures::temp_dir("bundle");
  save_bundle(bundle, dir / "m.json");
  CHECK(load_bundle(dir / "m.json") == bundle);
}

TEST_CASE("bundle errors") {
  const ModelBundle bundle = make_bundle(tiny_config(), vocab_of(3));
  auto doc = nlohmann::json::parse(bundle_to_json(bundle));

  auto version = doc;
  version["format_version"] = 999;
  CHECK(kind_of([&] { bundle_from_json(version.dump()); }) == ErrorKind::FormatVersionMismatch);

  const std::string text = bundle_to_json(bundle);
  CHECK(kind_of([&] { bundle_from_json(text.substr(0, text.size() / 2)); }) == ErrorKind::CorruptBundle);
  CHECK(kind_of([&] { bundle_from_json(""); }) == ErrorKind::CorruptBundle);

  auto missing = doc;
  missing["params"].erase("output.bias");
  CHECK(kind_of([&] { bundle_from_json(missing.dump()); }) == ErrorKind::CorruptBundle);

  auto extra = doc;
  extra["params"]["stray"] = extra["params"]["output.bias"];
  CHECK(kind_of([&] { bundle_from_json(extra.dump()); }) == ErrorKind::CorruptBundle);

  auto shape = doc;
  shape["params"]["output.bias"]["shape"] = {2};
  CHECK(kind_of([&] { bundle_from_json(shape.dump()); }) == ErrorKind::CorruptBundle);

  auto vocab = doc;
  vocab["vocabulary"].push_back("Extra");
  CHECK(kind_of([&] { bundle_from_json(vocab.dump()); }) == ErrorKind::CorruptBundle);

  const auto dir = fixtures::temp_dir("bundle_errors");
  write_file(dir / "t.json", text.substr(0, 40));
  CHECK(kind_of([&] { load_bundle(dir / "t.json"); }) == ErrorKind::CorruptBundle);
  CHECK(kind_of([&] { load_bundle(dir / "absent.json"); }) == ErrorKind::IoError);
}

TEST_CASE("model config JSON names unknown keys") {
  const auto j = model_config_to_json(small_config());
  CHECK(model_config_from_json(nlohmann::json::parse(j.dump())) == small_config());
  try {
    model_config_from_json(nlohmann::json{{"embed_dims", 3}});
    FAIL("expected an Error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfig);
    CHECK(std::string(e.what()).find("embed_dims") != std::string::npos);
  }
}
