#include "maldet/cli.hpp"

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "maldet/digest.hpp"
#include "maldet/error.hpp"
#include "maldet/explain.hpp"
#include "maldet/json_io.hpp"
#include "maldet/report_ingest.hpp"
#include "maldet/text_pipeline.hpp"
#include "maldet/training.hpp"

namespace maldet::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kDefaultSeed = 42;

struct TrainSection {
  train::TrainOptions options;
  double split_ratio = 0.7;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_vocab;
  std::vector<std::size_t> grid_filters{32, 64, 128};
  std::vector<std::size_t> grid_kernels{3, 5, 7};
};

struct RunConfig {
  net::ModelConfig model;
  TrainSection train;
  std::optional<fs::path> dataset;
  std::optional<fs::path> model_path;
  std::optional<fs::path> output_dir;
};

[[noreturn]] void bad_key(const std::string& key, const std::string& why) {
  throw Error(ErrorKind::InvalidConfig, "config key '" + key + "': " + why);
}

std::size_t size_value(const json& v, const std::string& key) {
  if (!v.is_number_unsigned()) bad_key(key, "expected a non-negative integer");
  return v.get<std::size_t>();
}

double number_value(const json& v, const std::string& key) {
  if (!v.is_number()) bad_key(key, "expected a number");
  return v.get<double>();
}

std::vector<std::size_t> size_list(const json& v, const std::string& key) {
  if (!v.is_array() || v.empty()) bad_key(key, "expected a non-empty array");
  std::vector<std::size_t> out;
  for (const auto& x : v) out.push_back(size_value(x, key));
  return out;
}

fs::path path_value(const json& v, const std::string& key) {
  if (!v.is_string()) bad_key(key, "expected a string");
  return fs::path(v.get<std::string>());
}

RunConfig load_run_config(const std::optional<fs::path>& file) {
  RunConfig rc;
  if (!file) return rc;
  json doc;
  try {
    doc = json::parse(read_file(*file));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::InvalidConfig, file->string() + ": " + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorKind::InvalidConfig, file->string() + ": expected a JSON object");
  for (const auto& [section, body] : doc.items()) {
    if (section == "model") {
      rc.model = model_config_from_json(body, rc.model);
    } else if (section == "train") {
      if (!body.is_object()) bad_key(section, "expected an object");
      for (const auto& [key, v] : body.items()) {
        const std::string path = "train." + key;
        if (key == "epochs") rc.train.options.epochs = size_value(v, path);
        else if (key == "batch_size") rc.train.options.batch_size = size_value(v, path);
        else if (key == "learning_rate") rc.train.options.adam.learning_rate = number_value(v, path);
        else if (key == "beta1") rc.train.options.adam.beta1 = number_value(v, path);
        else if (key == "beta2") rc.train.options.adam.beta2 = number_value(v, path);
        else if (key == "epsilon") rc.train.options.adam.epsilon = number_value(v, path);
        else if (key == "split_ratio") rc.train.split_ratio = number_value(v, path);
        else if (key == "seed") rc.train.seed = size_value(v, path);
        else if (key == "max_vocab") rc.train.max_vocab = size_value(v, path);
        else if (key == "grid_filters") rc.train.grid_filters = size_list(v, path);
        else if (key == "grid_kernels") rc.train.grid_kernels = size_list(v, path);
        else bad_key(path, "unknown key");
      }
    } else if (section == "paths") {
      if (!body.is_object()) bad_key(section, "expected an object");
      for (const auto& [key, v] : body.items()) {
        const std::string path = "paths." + key;
        if (key == "dataset") rc.dataset = path_value(v, path);
        else if (key == "model") rc.model_path = path_value(v, path);
        else if (key == "output_dir") rc.output_dir = path_value(v, path);
        else bad_key(path, "unknown key");
      }
    } else {
      bad_key(section, "unknown section");
    }
  }
  return rc;
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config) {
  if (flag) return *flag;
  if (config) return *config;
  if (const char* env = std::getenv("MALDET_SEED")) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used == std::string_view(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::InvalidConfig, std::string("MALDET_SEED is not an unsigned integer: ") + env);
  }
  return kDefaultSeed;
}

void log_digest(const char* what, const fs::path& path) {
  spdlog::info("input {} {} sha256={}", what, path.string(), sha256_hex(read_file(path)));
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

fs::path sibling(const fs::path& primary, const std::optional<fs::path>& dir, const std::string& suffix) {
  const fs::path base = dir ? *dir : primary.parent_path();
  return base / (primary.stem().string() + suffix);
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::vector<ingest::LabeledSequence> read_dataset(const fs::path& path) {
  auto data = ingest::read_csv(path);
  if (data.empty()) throw Error(ErrorKind::CsvSchemaError, path.string() + ": dataset has no rows");
  return data;
}

// ---------------------------------------------------------------------------

int cmd_ingest(const fs::path& reports, const fs::path& labels_path, const fs::path& out) {
  const auto started = Clock::now();
  spdlog::info("ingest reports={} labels={} out={}", reports.string(), labels_path.string(), out.string());
  log_digest("labels", labels_path);
  if (!fs::is_directory(reports)) throw Error(ErrorKind::IoError, reports.string() + " is not a directory");
  const auto labels = ingest::read_labels(labels_path);
  const auto data = ingest::build_dataset(reports, labels);
  if (data.empty()) throw Error(ErrorKind::IoError, "no reports found in " + reports.string());
  ensure_parent(out);
  ingest::write_csv(data, out);

  std::size_t malware = 0;
  for (const auto& row : data) malware += row.label == ingest::Label::Malware;
  std::cout << "samples " << data.size() << " benign " << data.size() - malware << " malware " << malware << "\n";
  spdlog::info("ingest finished in {:.3f}s", seconds_since(started));
  return kExitOk;
}

struct TrainFlags {
  std::optional<fs::path> data;
  std::optional<fs::path> config;
  std::optional<fs::path> out;
  bool grid = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> learning_rate;
  std::optional<std::size_t> sequence_length;
};

int cmd_train(const TrainFlags& flags) {
  RunConfig rc = load_run_config(flags.config);
  if (flags.data) rc.dataset = flags.data;
  if (flags.out) rc.model_path = flags.out;
  if (flags.epochs) rc.train.options.epochs = *flags.epochs;
  if (flags.batch_size) rc.train.options.batch_size = *flags.batch_size;
  if (flags.learning_rate) rc.train.options.adam.learning_rate = *flags.learning_rate;
  if (flags.sequence_length) rc.model.sequence_length = *flags.sequence_length;
  if (!rc.dataset) throw Error(ErrorKind::InvalidConfig, "no dataset: pass --data or set paths.dataset");
  if (!rc.model_path) throw Error(ErrorKind::InvalidConfig, "no model output: pass --out or set paths.model");
  const std::uint64_t seed = resolve_seed(flags.seed, rc.train.seed);
  rc.model.seed = seed;
  net::validate(rc.model);

  spdlog::info("train seed={} grid={}", seed, flags.grid);
  spdlog::info("model config {}", model_config_to_json(rc.model).dump());
  spdlog::info("train epochs={} batch_size={} lr={} split_ratio={}", rc.train.options.epochs,
               rc.train.options.batch_size, rc.train.options.adam.learning_rate, rc.train.split_ratio);
  log_digest("dataset", *rc.dataset);
  if (flags.config) log_digest("config", *flags.config);

  const auto data = read_dataset(*rc.dataset);
  const auto [train_rows, test_rows] = text::train_test_split(data, rc.train.split_ratio, seed);
  const text::Vocabulary vocab = text::fit_vocabulary(train_rows, rc.train.max_vocab);
  spdlog::info("split train={} test={} vocabulary={} digest={}", train_rows.size(), test_rows.size(), vocab.size(),
               vocab.digest());
  const std::size_t n = rc.model.sequence_length;
  const text::EncodedDataset train_set = text::encode_dataset(train_rows, vocab, n);
  const text::EncodedDataset test_set = text::encode_dataset(test_rows, vocab, n);

  const fs::path& model_path = *rc.model_path;
  ensure_parent(model_path);
  if (rc.output_dir) fs::create_directories(*rc.output_dir);

  net::ModelConfig chosen = rc.model;
  train::TrainOptions chosen_options = rc.train.options;
  if (flags.grid) {
    const auto grid = train::make_grid(rc.model, rc.train.options, rc.train.grid_filters, rc.train.grid_kernels);
    const auto started = Clock::now();
    const train::GridResult result = train::grid_search(grid, vocab, train_set, seed);
    chosen = result.best().config;
    chosen_options = result.best().options;
    const fs::path table = sibling(model_path, rc.output_dir, ".grid.csv");
    write_file(table, train::grid_table_to_csv(result));
    spdlog::info("grid search {} cells in {:.3f}s; best cell {} -> {}", grid.size(), seconds_since(started),
                 result.best_index, table.string());
  }

  const auto train_started = Clock::now();
  train::TrainResult trained = train::train(chosen, vocab, train_set, chosen_options, seed);
  spdlog::info("training phase {:.3f}s", seconds_since(train_started));

  const auto test_started = Clock::now();
  const train::EvalMetrics metrics = train::evaluate(trained.bundle, test_set);
  spdlog::info("testing phase {:.3f}s", seconds_since(test_started));

  net::save_bundle(trained.bundle, model_path);
  const fs::path history = sibling(model_path, rc.output_dir, ".history.csv");
  const fs::path metrics_path = sibling(model_path, rc.output_dir, ".metrics.json");
  write_file(history, train::history_to_csv(trained.history));
  write_file(metrics_path, train::metrics_to_json(metrics));
  spdlog::info("wrote {} {} {}", model_path.string(), history.string(), metrics_path.string());
  std::cout << train::metrics_to_json(metrics);
  return kExitOk;
}

int cmd_evaluate(const fs::path& data_path, const fs::path& model_path) {
  log_digest("dataset", data_path);
  log_digest("model", model_path);
  const auto data = read_dataset(data_path);
  const net::ModelBundle bundle = net::load_bundle(model_path);

  std::size_t total = 0, oov = 0;
  for (const auto& row : data) {
    for (const auto& call : row.calls) {
      ++total;
      oov += !bundle.vocabulary.contains(call);
    }
  }
  const double oov_rate = total ? static_cast<double>(oov) / static_cast<double>(total) : 0.0;
  spdlog::info("vocabulary digest {} size {}", bundle.vocabulary.digest(), bundle.vocabulary.size());
  if (oov > 0) {
    spdlog::warn("dataset tokens missing from the model vocabulary: OOV rate {:.4f} ({} of {})", oov_rate, oov, total);
  } else {
    spdlog::info("OOV rate 0");
  }

  const auto started = Clock::now();
  const auto encoded = text::encode_dataset(data, bundle.vocabulary, bundle.config.sequence_length);
  const train::EvalMetrics metrics = train::evaluate(bundle, encoded);
  spdlog::info("testing phase {:.3f}s", seconds_since(started));
  std::cout << train::metrics_to_json(metrics);
  return kExitOk;
}

ingest::LabeledSequence read_report_sequence(const fs::path& report_path) {
  log_digest("report", report_path);
  const auto report = ingest::parse_report(read_file(report_path));
  return {report.sha256, ingest::Label::Benign, ingest::extract_sequence(report)};
}

int cmd_predict(const fs::path& report_path, const fs::path& model_path) {
  log_digest("model", model_path);
  const auto seq = read_report_sequence(report_path);
  const net::ModelBundle bundle = net::load_bundle(model_path);
  const auto ids = text::encode(seq.calls, bundle.vocabulary, bundle.config.sequence_length);
  const double p = net::forward(bundle, ids).front();
  const nlohmann::ordered_json out{
      {"sha256", seq.sha256}, {"probability", p}, {"class", p >= train::kDecisionThreshold ? "malware" : "benign"}};
  std::cout << out.dump() << "\n";
  return kExitOk;
}

int cmd_explain(const fs::path& report_path, const fs::path& model_path, const fs::path& out, std::size_t samples,
                std::optional<std::uint64_t> seed_flag, std::size_t top_k) {
  if (samples < 2) throw Error(ErrorKind::InvalidConfig, "--samples must be at least 2");
  const std::uint64_t seed = resolve_seed(seed_flag, std::nullopt);
  spdlog::info("explain seed={} samples={} top_k={}", seed, samples, top_k);
  log_digest("model", model_path);
  const auto seq = read_report_sequence(report_path);
  const net::ModelBundle bundle = net::load_bundle(model_path);

  const auto started = Clock::now();
  explain::ExplainOptions options;
  options.num_samples = samples;
  options.seed = seed;
  const explain::Explanation e = explain::explain(bundle, seq.calls, options, seq.sha256);
  spdlog::info("explanation computed in {:.3f}s (residual {:.4f})", seconds_since(started), e.residual());

  ensure_parent(out);
  explain::render_html(e, out, top_k);
  fs::path json_path = out;
  json_path.replace_extension(".json");
  write_file(json_path, explain::explanation_to_json(e));
  std::cout << "predicted " << (e.predicted_class == ingest::Label::Malware ? "malware" : "benign") << " probability "
            << e.probability << "\nwrote " << out.string() << " and " << json_path.string() << "\n";
  return kExitOk;
}

void setup_logging(bool verbose, bool quiet) {
  static const auto logger = [] {
    auto l = spdlog::stderr_logger_st("maldet");
    l->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
    return l;
  }();
  spdlog::set_default_logger(logger);
  spdlog::set_level(quiet ? spdlog::level::warn : verbose ? spdlog::level::debug : spdlog::level::info);
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Behaviour-based malware detection from API call sequences", "maldet"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors");

  fs::path reports, labels, ingest_out;
  auto* ingest_cmd = app.add_subcommand("ingest", "Build the labeled dataset CSV from JSON reports");
  ingest_cmd->add_option("--reports", reports, "Directory of JSON behavioural reports")->required();
  ingest_cmd->add_option("--labels", labels, "CSV with header sha256,label")->required();
  ingest_cmd->add_option("--out", ingest_out, "Dataset CSV to write")->required();

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Split, fit the vocabulary, train and report held-out metrics");
  train_cmd->add_option("--data", tf.data, "Dataset CSV");
  train_cmd->add_option("--config", tf.config, "JSON run configuration");
  train_cmd->add_option("--out", tf.out, "Model bundle to write");
  train_cmd->add_flag("--grid", tf.grid, "Grid-search conv filters and kernel sizes first");
  train_cmd->add_option("--seed", tf.seed, "Random seed (default: config, then MALDET_SEED, then 42)");
  train_cmd->add_option("--epochs", tf.epochs, "Override train.epochs");
  train_cmd->add_option("--batch-size", tf.batch_size, "Override train.batch_size");
  train_cmd->add_option("--lr", tf.learning_rate, "Override train.learning_rate");
  train_cmd->add_option("--sequence-length", tf.sequence_length, "Override model.sequence_length");

  fs::path eval_data, eval_model;
  auto* eval_cmd = app.add_subcommand("evaluate", "Print metrics of a model on a dataset CSV");
  eval_cmd->add_option("--data", eval_data, "Dataset CSV")->required();
  eval_cmd->add_option("--model", eval_model, "Model bundle")->required();

  fs::path predict_report, predict_model;
  auto* predict_cmd = app.add_subcommand("predict", "Classify one JSON report");
  predict_cmd->add_option("--report", predict_report, "JSON behavioural report")->required();
  predict_cmd->add_option("--model", predict_model, "Model bundle")->required();

  fs::path explain_report, explain_model, explain_out;
  std::size_t samples = 1000, top_k = 10;
  std::optional<std::uint64_t> explain_seed;
  auto* explain_cmd = app.add_subcommand("explain", "Explain one prediction as HTML and JSON");
  explain_cmd->add_option("--report", explain_report, "JSON behavioural report")->required();
  explain_cmd->add_option("--model", explain_model, "Model bundle")->required();
  explain_cmd->add_option("--out", explain_out, "HTML file to write; JSON goes next to it")->required();
  explain_cmd->add_option("--samples", samples, "Perturbed samples (>= 2)");
  explain_cmd->add_option("--seed", explain_seed, "Random seed");
  explain_cmd->add_option("--top-k", top_k, "Calls listed per side");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }
  setup_logging(verbose, quiet);

  try {
    if (*ingest_cmd) return cmd_ingest(reports, labels, ingest_out);
    if (*train_cmd) return cmd_train(tf);
    if (*eval_cmd) return cmd_evaluate(eval_data, eval_model);
    if (*predict_cmd) return cmd_predict(predict_report, predict_model);
    if (*explain_cmd) return cmd_explain(explain_report, explain_model, explain_out, samples, explain_seed, top_k);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    const bool numeric = e.kind() == ErrorKind::NonFiniteLoss || e.kind() == ErrorKind::NumericError;
    return numeric ? kExitNumeric : kExitUsage;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace maldet::cli
