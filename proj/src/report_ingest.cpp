#include "maldet/report_ingest.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <json.hpp>

#include "maldet/digest.hpp"
#include "maldet/error.hpp"

namespace maldet::ingest {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kCsvHeader = "sha256,label,api_sequence";
constexpr std::string_view kLabelsHeader = "sha256,label";

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(text.substr(start));
      return out;
    }
    out.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

// Lines without their terminators; a trailing empty line is dropped and CR is tolerated.
std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  for (auto& line : lines) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  }
  return lines;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string checked_hash(std::string_view raw, const std::string& where) {
  std::string hash = lowercase(raw);
  if (!is_valid_sha256(hash)) throw Error(ErrorKind::CsvSchemaError, where + ": invalid sha256 '" + std::string(raw) + "'");
  return hash;
}

std::string checked_token(std::string_view token, const std::string& where) {
  if (!is_valid_api_name(token)) {
    throw Error(ErrorKind::InvalidApiName, where + ": invalid API name '" + std::string(token) + "'");
  }
  return std::string(token);
}

}  // namespace

bool is_valid_api_name(std::string_view name) noexcept {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](unsigned char c) { return std::isalnum(c) || c == '_'; });
}

bool is_valid_sha256(std::string_view hash) noexcept {
  return hash.size() == 64 &&
         std::all_of(hash.begin(), hash.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

std::optional<Label> parse_label(std::string_view text) noexcept {
  if (text == "0") return Label::Benign;
  if (text == "1") return Label::Malware;
  return std::nullopt;
}

BehaviorReport parse_report(std::string_view raw_json) {
  json doc;
  try {
    doc = json::parse(raw_json);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::MalformedJson, e.what());
  }
  if (!doc.is_object()) throw Error(ErrorKind::MalformedJson, "top-level value is not an object");

  BehaviorReport report;
  const json* hash = nullptr;
  if (auto t = doc.find("target"); t != doc.end() && t->is_object()) {
    if (auto f = t->find("file"); f != t->end() && f->is_object()) {
      if (auto h = f->find("sha256"); h != f->end()) hash = &*h;
    }
  }
  if (hash) {
    if (!hash->is_string()) throw Error(ErrorKind::MalformedJson, "target.file.sha256 is not a string");
    report.sha256 = lowercase(hash->get<std::string>());
    if (!is_valid_sha256(report.sha256)) {
      throw Error(ErrorKind::MalformedJson, "target.file.sha256 is not a 64-digit hex string");
    }
  } else {
    report.sha256 = sha256_hex(raw_json);
    report.synthetic_hash = true;
    spdlog::warn("report has no target.file.sha256; using digest of report bytes {}", report.sha256);
  }

  auto behavior = doc.find("behavior");
  if (behavior == doc.end() || !behavior->is_object()) {
    throw Error(ErrorKind::MissingBehaviorSection, "no \"behavior\" object");
  }
  auto processes = behavior->find("processes");
  if (processes == behavior->end()) return report;
  if (!processes->is_array()) throw Error(ErrorKind::MalformedJson, "behavior.processes is not an array");

  for (const json& proc : *processes) {
    if (!proc.is_object()) throw Error(ErrorKind::MalformedJson, "process entry is not an object");
    ProcessTrace trace;
    if (auto pid = proc.find("process_id"); pid != proc.end()) {
      if (!pid->is_number_integer()) throw Error(ErrorKind::MalformedJson, "process_id is not an integer");
      trace.process_id = pid->get<std::int64_t>();
    }
    if (auto calls = proc.find("calls"); calls != proc.end()) {
      if (!calls->is_array()) throw Error(ErrorKind::MalformedJson, "calls is not an array");
      trace.calls.reserve(calls->size());
      for (const json& call : *calls) {
        if (!call.is_object()) throw Error(ErrorKind::MalformedJson, "call entry is not an object");
        auto api = call.find("api");
        if (api == call.end() || !api->is_string()) throw Error(ErrorKind::MalformedJson, "call without string \"api\"");
        const auto& name = api->get_ref<const std::string&>();
        if (!is_valid_api_name(name)) throw Error(ErrorKind::InvalidApiName, "invalid API name '" + name + "'");
        trace.calls.push_back(name);
      }
    }
    report.processes.push_back(std::move(trace));
  }
  return report;
}

std::vector<std::string> extract_sequence(const BehaviorReport& report) {
  std::vector<std::string> seq;
  for (const auto& proc : report.processes) seq.insert(seq.end(), proc.calls.begin(), proc.calls.end());
  if (seq.empty()) throw Error(ErrorKind::EmptySequence, "report " + report.sha256 + " holds no API calls");
  return seq;
}

LabelMap read_labels(const fs::path& path) {
  const std::string text = read_file(path);
  const auto lines = lines_of(text);
  if (lines.empty() || lines.front() != kLabelsHeader) {
    throw Error(ErrorKind::CsvSchemaError, path.string() + ": expected header '" + std::string(kLabelsHeader) + "'");
  }
  LabelMap labels;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    const auto cols = split(lines[i], ',');
    if (cols.size() != 2) throw Error(ErrorKind::CsvSchemaError, where + ": expected 2 columns");
    const auto label = parse_label(cols[1]);
    if (!label) throw Error(ErrorKind::CsvSchemaError, where + ": label must be 0 or 1");
    if (!labels.emplace(checked_hash(cols[0], where), *label).second) {
      throw Error(ErrorKind::DuplicateHash, where + ": hash listed twice");
    }
  }
  return labels;
}

std::vector<LabeledSequence> build_dataset(const fs::path& report_dir, const LabelMap& labels) {
  std::error_code ec;
  fs::directory_iterator it(report_dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot list " + report_dir.string() + ": " + ec.message());

  std::vector<fs::path> files;
  for (const auto& entry : it) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::map<std::string, LabeledSequence> by_hash;
  for (const auto& file : files) {
    BehaviorReport report;
    std::vector<std::string> calls;
    try {
      report = parse_report(read_file(file));
      calls = extract_sequence(report);
    } catch (const Error& e) {
      throw Error(e.kind(), file.filename().string() + ": " + e.what());
    }
    auto label = labels.find(report.sha256);
    if (label == labels.end()) {
      throw Error(ErrorKind::UnlabeledSample, file.filename().string() + ": no label for " + report.sha256);
    }
    LabeledSequence seq{report.sha256, label->second, std::move(calls)};
    if (!by_hash.emplace(report.sha256, std::move(seq)).second) {
      throw Error(ErrorKind::DuplicateHash, file.filename().string() + ": hash " + report.sha256 + " seen before");
    }
  }

  std::vector<LabeledSequence> out;
  out.reserve(by_hash.size());
  for (auto& [hash, seq] : by_hash) out.push_back(std::move(seq));
  return out;
}

std::string format_csv(const std::vector<LabeledSequence>& data) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& row : data) {
    if (!is_valid_sha256(row.sha256)) throw Error(ErrorKind::CsvSchemaError, "invalid sha256 '" + row.sha256 + "'");
    if (row.calls.empty()) throw Error(ErrorKind::EmptySequence, "row " + row.sha256 + " has no calls");
    out += row.sha256;
    out += row.label == Label::Malware ? ",1," : ",0,";
    for (std::size_t i = 0; i < row.calls.size(); ++i) {
      if (!is_valid_api_name(row.calls[i])) {
        throw Error(ErrorKind::InvalidApiName, "row " + row.sha256 + ": invalid API name '" + row.calls[i] + "'");
      }
      if (i) out += ' ';
      out += row.calls[i];
    }
    out += '\n';
  }
  return out;
}

std::vector<LabeledSequence> parse_csv(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty() || lines.front() != kCsvHeader) {
    throw Error(ErrorKind::CsvSchemaError, "expected header '" + std::string(kCsvHeader) + "'");
  }
  std::vector<LabeledSequence> out;
  out.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = "line " + std::to_string(i + 1);
    const auto cols = split(lines[i], ',');
    if (cols.size() != 3) throw Error(ErrorKind::CsvSchemaError, where + ": expected 3 columns");
    const auto label = parse_label(cols[1]);
    if (!label) throw Error(ErrorKind::CsvSchemaError, where + ": label must be 0 or 1");
    if (cols[2].empty()) throw Error(ErrorKind::CsvSchemaError, where + ": empty api_sequence");
    LabeledSequence row{checked_hash(cols[0], where), *label, {}};
    for (auto token : split(cols[2], ' ')) row.calls.push_back(checked_token(token, where));
    out.push_back(std::move(row));
  }
  return out;
}

void write_csv(const std::vector<LabeledSequence>& data, const fs::path& path) {
  write_file(path, format_csv(data));
}

std::vector<LabeledSequence> read_csv(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return parse_csv(text);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<LabeledSequence> read_wide_csv(const fs::path& path) {
  const std::string text = read_file(path);
  const auto lines = lines_of(text);
  if (lines.empty()) throw Error(ErrorKind::CsvSchemaError, path.string() + ": empty file");
  const auto header = split(lines.front(), ',');
  if (header.size() < 3 || lowercase(header[0]) != "sha256" || lowercase(header[1]).rfind("label", 0) != 0) {
    throw Error(ErrorKind::CsvSchemaError, path.string() + ": expected header 'sha256,labels,0,1,...'");
  }
  std::vector<LabeledSequence> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    const auto cols = split(lines[i], ',');
    if (cols.size() < 3) throw Error(ErrorKind::CsvSchemaError, where + ": too few columns");
    const auto label = parse_label(cols[1]);
    if (!label) throw Error(ErrorKind::CsvSchemaError, where + ": label must be 0 or 1");
    LabeledSequence row{checked_hash(cols[0], where), *label, {}};
    for (std::size_t c = 2; c < cols.size(); ++c) {
      if (!cols[c].empty()) row.calls.push_back(checked_token(cols[c], where));
    }
    if (row.calls.empty()) throw Error(ErrorKind::EmptySequence, where + ": row has no calls");
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace maldet::ingest
