#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace maldet::ingest {

/// API calls recorded for one process, in report order.
struct ProcessTrace {
  std::optional<std::int64_t> process_id;
  std::vector<std::string> calls;
};

/// The parts of a sandbox behavioural report this project uses.
struct BehaviorReport {
  std::string sha256;
  /// True when the report carried no target hash and `sha256` was computed
  /// over the raw report bytes instead.
  bool synthetic_hash = false;
  std::vector<ProcessTrace> processes;
};

enum class Label : int { Benign = 0, Malware = 1 };

struct LabeledSequence {
  std::string sha256;
  Label label = Label::Benign;
  std::vector<std::string> calls;

  bool operator==(const LabeledSequence&) const = default;
};

using LabelMap = std::map<std::string, Label>;

/// Token charset `[A-Za-z0-9_]+`.
bool is_valid_api_name(std::string_view name) noexcept;
/// `[0-9a-f]{64}`.
bool is_valid_sha256(std::string_view hash) noexcept;
/// Parses "0"/"1"; anything else is std::nullopt.
std::optional<Label> parse_label(std::string_view text) noexcept;

/// Parses a report. Reads `behavior.processes[].calls[].api` and the optional
/// `target.file.sha256`; every other key is ignored.
///
/// Throws MalformedJson, MissingBehaviorSection or InvalidApiName.
BehaviorReport parse_report(std::string_view raw_json);

/// All calls of all processes, concatenated in report order. Repeats are kept.
/// Throws EmptySequence when the report holds no calls.
std::vector<std::string> extract_sequence(const BehaviorReport& report);

/// Reads a `sha256,label` CSV.
LabelMap read_labels(const std::filesystem::path& path);

/// Parses every `*.json` file in `report_dir` and attaches labels. The result
/// is sorted by hash. Throws UnlabeledSample or DuplicateHash, plus any
/// parse error annotated with the file name.
std::vector<LabeledSequence> build_dataset(const std::filesystem::path& report_dir, const LabelMap& labels);

/// Canonical dataset CSV: header `sha256,label,api_sequence`, one row per
/// sample, tokens joined by single spaces, LF line endings.
std::string format_csv(const std::vector<LabeledSequence>& data);
std::vector<LabeledSequence> parse_csv(std::string_view text);

void write_csv(const std::vector<LabeledSequence>& data, const std::filesystem::path& path);
std::vector<LabeledSequence> read_csv(const std::filesystem::path& path);

/// Reads the wide layout used by the public MalBehavD-V1 release: columns
/// `sha256,labels,0,1,2,...` with one API call per cell and empty trailing cells.
std::vector<LabeledSequence> read_wide_csv(const std::filesystem::path& path);

}  // namespace maldet::ingest
