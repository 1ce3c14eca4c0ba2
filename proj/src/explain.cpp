#include "maldet/explain.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "maldet/digest.hpp"
#include "maldet/error.hpp"

namespace maldet::explain {

using text::TokenId;

namespace {

constexpr double kKernelWidthFactor = 0.75;

std::vector<std::size_t> active_positions(std::span<const TokenId> ids) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != text::kPadId) pos.push_back(i);
  }
  return pos;
}

std::string html_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

double proximity(std::span<const std::uint8_t> mask) {
  const std::size_t total = mask.size();
  if (total == 0) throw Error(ErrorKind::EmptySequence, "proximity of an empty mask");
  const auto on = static_cast<double>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  // cos(mask, ones) = on / (sqrt(on) * sqrt(total)) = sqrt(on / total)
  const double distance = 1.0 - std::sqrt(on / static_cast<double>(total));
  const double width = kKernelWidthFactor * std::sqrt(static_cast<double>(total));
  return std::exp(-distance * distance / (width * width));
}

PerturbationSet perturb(std::span<const TokenId> ids, std::size_t num_samples, nd::Rng& rng) {
  if (num_samples < 2) throw Error(ErrorKind::InvalidConfig, "perturbation needs at least 2 samples");
  const std::size_t active = active_positions(ids).size();
  if (active == 0) throw Error(ErrorKind::EmptySequence, "sequence has no non-padding tokens");

  PerturbationSet set;
  set.active = active;
  set.masks.assign(num_samples * active, 1);
  std::vector<std::size_t> slots(active);
  for (std::size_t row = 1; row < num_samples; ++row) {
    std::uint8_t* mask = set.masks.data() + row * active;
    if (active == 1) {
      mask[0] = 0;
      continue;
    }
    const std::size_t disable = 1 + static_cast<std::size_t>(rng.below(active - 1));
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    for (std::size_t k = 0; k < disable; ++k) {  // partial Fisher-Yates
      const std::size_t j = k + static_cast<std::size_t>(rng.below(active - k));
      std::swap(slots[k], slots[j]);
      mask[slots[k]] = 0;
    }
  }
  set.proximities.reserve(num_samples);
  for (std::size_t row = 0; row < num_samples; ++row) set.proximities.push_back(proximity(set.mask(row)));
  return set;
}

std::vector<TokenId> apply_masks(std::span<const TokenId> ids, const PerturbationSet& set) {
  const auto positions = active_positions(ids);
  if (positions.size() != set.active) throw Error(ErrorKind::ShapeMismatch, "masks do not match the sequence");
  std::vector<TokenId> out;
  out.reserve(set.rows() * ids.size());
  for (std::size_t row = 0; row < set.rows(); ++row) {
    const auto mask = set.mask(row);
    const std::size_t base = out.size();
    out.insert(out.end(), ids.begin(), ids.end());
    for (std::size_t k = 0; k < positions.size(); ++k) {
      if (!mask[k]) out[base + positions[k]] = text::kPadId;
    }
  }
  return out;
}

Surrogate fit_surrogate(const PerturbationSet& set, double ridge) {
  const std::size_t rows = set.rows();
  const std::size_t dim = set.active + 1;  // column 0 is the intercept
  if (rows == 0 || set.predictions.size() != rows || set.proximities.size() != rows) {
    throw Error(ErrorKind::ShapeMismatch, "perturbation set is missing predictions or proximities");
  }
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  Eigen::VectorXd x(static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < rows; ++r) {
    const auto mask = set.mask(r);
    x[0] = 1.0;
    for (std::size_t k = 0; k < set.active; ++k) x[static_cast<Eigen::Index>(k + 1)] = mask[k];
    const double w = set.proximities[r];
    gram.selfadjointView<Eigen::Lower>().rankUpdate(x, w);
    rhs += w * set.predictions[r] * x;
  }
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  for (std::size_t k = 1; k < dim; ++k) gram(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) += ridge;

  Eigen::VectorXd beta;
  if (ridge > 0.0) {
    beta = gram.ldlt().solve(rhs);
  } else {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
    if (lu.rank() < static_cast<Eigen::Index>(dim)) {
      throw Error(ErrorKind::SingularSystem, "unregularized surrogate system has rank " + std::to_string(lu.rank()) +
                                                 " < " + std::to_string(dim));
    }
    beta = lu.solve(rhs);
  }
  if (!beta.allFinite()) throw Error(ErrorKind::SingularSystem, "surrogate solve produced non-finite weights");

  Surrogate s;
  s.intercept = beta[0];
  s.weights.assign(beta.data() + 1, beta.data() + dim);
  return s;
}

double Explanation::residual() const noexcept { return std::abs(local_prediction - class_probability()); }

std::vector<TokenWeight> Explanation::supporters(std::size_t k) const {
  std::vector<TokenWeight> out;
  for (const auto& t : tokens) {
    if (t.weight > 0.0) out.push_back(t);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.weight > b.weight; });
  if (out.size() > k) out.resize(k);
  return out;
}

std::vector<TokenWeight> Explanation::opposers(std::size_t k) const {
  std::vector<TokenWeight> out;
  for (const auto& t : tokens) {
    if (t.weight < 0.0) out.push_back(t);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.weight < b.weight; });
  if (out.size() > k) out.resize(k);
  return out;
}

Explanation explain_ids(const BlackBox& model, std::span<const TokenId> ids, std::span<const std::string> tokens,
                        const ExplainOptions& options) {
  nd::Rng rng = nd::Rng::derive(options.seed, 0x11e);
  PerturbationSet set = perturb(ids, options.num_samples, rng);
  const auto positions = active_positions(ids);
  if (!positions.empty() && tokens.size() <= positions.back()) {
    throw Error(ErrorKind::InvalidConfig, "token names do not cover every position");
  }

  const std::vector<TokenId> batch = apply_masks(ids, set);
  const std::vector<double> malware = model(batch, set.rows());
  if (malware.size() != set.rows()) throw Error(ErrorKind::ShapeMismatch, "black box returned wrong row count");

  Explanation e;
  e.probability = malware[0];
  e.predicted_class = e.probability >= 0.5 ? ingest::Label::Malware : ingest::Label::Benign;
  const bool target_malware = e.predicted_class == ingest::Label::Malware;
  set.predictions.reserve(malware.size());
  for (double p : malware) set.predictions.push_back(target_malware ? p : 1.0 - p);

  const Surrogate s = fit_surrogate(set, options.ridge);
  e.intercept = s.intercept;
  e.local_prediction = s.intercept;
  for (std::size_t k = 0; k < positions.size(); ++k) {
    e.tokens.push_back({positions[k], tokens[positions[k]], s.weights[k]});
    e.local_prediction += s.weights[k];
  }
  return e;
}

Explanation explain(const net::ModelBundle& bundle, std::span<const std::string> calls, const ExplainOptions& options,
                    std::string sha256) {
  const std::size_t n = bundle.config.sequence_length;
  const std::vector<TokenId> ids = text::encode(calls, bundle.vocabulary, n);
  BlackBox model = [&bundle](std::span<const TokenId> rows, std::size_t) { return net::forward(bundle, rows); };
  Explanation e = explain_ids(model, ids, calls.subspan(0, std::min(n, calls.size())), options);
  e.sha256 = std::move(sha256);
  return e;
}

std::string explanation_to_json(const Explanation& e) {
  nlohmann::ordered_json tokens = nlohmann::ordered_json::array();
  for (const auto& t : e.tokens) tokens.push_back({{"index", t.index}, {"api", t.api}, {"weight", t.weight}});
  const nlohmann::ordered_json doc{
      {"sha256", e.sha256},
      {"predicted_class", e.predicted_class == ingest::Label::Malware ? "malware" : "benign"},
      {"probability", e.probability},
      {"intercept", e.intercept},
      {"local_prediction", e.local_prediction},
      {"tokens", tokens}};
  return doc.dump(2) + "\n";
}

std::string render_html(const Explanation& e, std::size_t top_k) {
  const bool malware = e.predicted_class == ingest::Label::Malware;
  const std::string predicted = malware ? "malware" : "benign";
  double max_abs = 0.0;
  for (const auto& t : e.tokens) max_abs = std::max(max_abs, std::abs(t.weight));

  std::string html;
  html += "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n";
  html += "<title>Prediction explanation</title>\n<style>\n";
  html +=
      "body{font-family:sans-serif;margin:2em;color:#222}"
      ".bar{background:#eee;width:320px;height:16px;display:inline-block;vertical-align:middle}"
      ".fill{height:16px}.benign{background:#1f77b4}.malware{background:#d62728}"
      "table{border-collapse:collapse;margin-bottom:1em}td,th{padding:2px 10px;text-align:left}"
      ".seq span{display:inline-block;margin:2px;padding:1px 4px;border-radius:3px;font-family:monospace}\n";
  html += "</style>\n</head>\n<body>\n";
  if (!e.sha256.empty()) html += fmt::format("<h2>{}</h2>\n", html_escape(e.sha256));

  html += "<h3>Prediction probabilities</h3>\n<table>\n";
  for (const auto& [name, p] : {std::pair<std::string, double>{"benign", 1.0 - e.probability},
                                std::pair<std::string, double>{"malware", e.probability}}) {
    html += fmt::format(
        "<tr><td>{0}</td><td><span class=\"bar\"><span class=\"fill {0}\" style=\"width:{1:.2f}%;display:block\">"
        "</span></span></td><td>{2:.4f}</td></tr>\n",
        name, 100.0 * p, p);
  }
  html += "</table>\n";
  html += fmt::format("<p>Predicted class: <b>{}</b>. Surrogate intercept {:.4f}, local prediction {:.4f}.</p>\n",
                      predicted, e.intercept, e.local_prediction);

  auto weight_table = [&](const std::string& title, const std::vector<TokenWeight>& rows) {
    html += fmt::format("<h3>{}</h3>\n<table>\n<tr><th>index</th><th>API call</th><th>weight</th></tr>\n", title);
    for (const auto& t : rows) {
      html += fmt::format("<tr><td>{}</td><td>{}</td><td>{:+.4f}</td></tr>\n", t.index, html_escape(t.api), t.weight);
    }
    html += "</table>\n";
  };
  weight_table("Supporting " + predicted, e.supporters(top_k));
  weight_table("Against " + predicted, e.opposers(top_k));

  html += "<h3>Text with highlighted words</h3>\n<div class=\"seq\">\n";
  for (const auto& t : e.tokens) {
    std::string style;
    if (max_abs > 0.0 && t.weight != 0.0) {
      const double alpha = std::abs(t.weight) / max_abs;
      style = t.weight > 0.0 ? fmt::format(" style=\"background:rgba(0,160,0,{:.3f})\"", alpha)
                             : fmt::format(" style=\"background:rgba(220,0,0,{:.3f})\"", alpha);
    }
    html += fmt::format("<span{}>{} {}</span>\n", style, t.index, html_escape(t.api));
  }
  html += "</div>\n</body>\n</html>\n";
  return html;
}

void render_html(const Explanation& explanation, const std::filesystem::path& path, std::size_t top_k) {
  write_file(path, render_html(explanation, top_k));
}

}  // namespace maldet::explain
