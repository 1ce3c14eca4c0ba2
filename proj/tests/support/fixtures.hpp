#pragma once

// Synthetic corpora and small helpers shared by the unit and acceptance tests.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "maldet/report_ingest.hpp"
#include "maldet/rng.hpp"

namespace fixtures {

using maldet::ingest::Label;
using maldet::ingest::LabeledSequence;

inline std::string fake_hash(std::uint64_t i) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string h(64, '0');
  maldet::nd::Rng rng = maldet::nd::Rng::derive(0xfeed, i);
  for (auto& ch : h) ch = kHex[rng.below(16)];
  return h;
}

inline constexpr std::array<std::string_view, 24> kCommonApis{
    "NtAllocateVirtualMemory", "LdrLoadDll",        "LdrGetProcedureAddress", "NtClose",
    "NtCreateFile",            "NtReadFile",        "GetSystemTimeAsFileTime", "RegOpenKeyExW",
    "RegQueryValueExW",        "RegCloseKey",       "NtQueryInformationFile", "GetFileAttributesW",
    "NtProtectVirtualMemory",  "NtMapViewOfSection", "NtUnmapViewOfSection",   "GetSystemMetrics",
    "NtOpenKey",               "NtQueryValueKey",   "FindFirstFileExW",       "GetFileSize",
    "SetFilePointer",          "NtFreeVirtualMemory", "GetSystemInfo",        "CoInitializeEx"};

inline constexpr std::array<std::string_view, 9> kMalwareApis{
    "Process32NextW",     "Process32FirstW",  "CreateToolhelp32Snapshot", "NtDelayExecution",
    "WriteProcessMemory", "NtWriteVirtualMemory", "SetWindowsHookExA",    "CryptEncrypt",
    "InternetOpenA"};

inline constexpr std::array<std::string_view, 7> kBenignApis{
    "DrawTextExW", "LoadStringW", "GetKeyState", "SendMessageW", "CreateWindowExW", "GetCursorPos", "ShowWindow"};

// Malware rows contain "EVIL" somewhere; benign rows never do.
inline std::vector<LabeledSequence> evil_dataset(std::size_t count, std::size_t n, std::uint64_t seed) {
  maldet::nd::Rng rng = maldet::nd::Rng::derive(seed, 0xe71);
  std::vector<LabeledSequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    LabeledSequence s;
    s.sha256 = fake_hash(seed * 100003 + i);
    s.label = i % 2 ? Label::Malware : Label::Benign;
    const std::size_t len = n / 2 + rng.below(n / 2 + 1);
    for (std::size_t t = 0; t < len; ++t) s.calls.emplace_back(kCommonApis[rng.below(kCommonApis.size())]);
    if (s.label == Label::Malware) s.calls[rng.below(len)] = "EVIL";
    out.push_back(std::move(s));
  }
  return out;
}

// Closer to real traces: a shared background of common calls, with a handful
// of class-indicative calls mixed in (and occasional cross-class noise).
inline std::vector<LabeledSequence> behaviour_corpus(std::size_t count, std::size_t max_len, std::uint64_t seed) {
  maldet::nd::Rng rng = maldet::nd::Rng::derive(seed, 0xc0de);
  std::vector<LabeledSequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    LabeledSequence s;
    s.sha256 = fake_hash(seed * 100019 + i + 7);
    s.label = rng.below(2) ? Label::Malware : Label::Benign;
    const std::size_t len = max_len / 3 + rng.below(max_len - max_len / 3 + 1);
    for (std::size_t t = 0; t < len; ++t) s.calls.emplace_back(kCommonApis[rng.below(kCommonApis.size())]);
    const std::size_t marks = 2 + rng.below(3);
    for (std::size_t m = 0; m < marks; ++m) {
      const bool own_class = rng.uniform01() < 0.9;
      const bool use_malware = (s.label == Label::Malware) == own_class;
      const std::string_view api = use_malware ? kMalwareApis[rng.below(kMalwareApis.size())]
                                               : kBenignApis[rng.below(kBenignApis.size())];
      s.calls[rng.below(len)] = std::string(api);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<int> labels_of(const std::vector<LabeledSequence>& data) {
  std::vector<int> out;
  for (const auto& s : data) out.push_back(static_cast<int>(s.label));
  return out;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("maldet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
