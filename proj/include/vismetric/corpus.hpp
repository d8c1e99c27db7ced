#pragma once

// Dataset model: JSONL ingestion/serialization, validation, human-judgment
// aggregation and token normalization for the n-gram metrics.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "json.hpp"
#include "vismetric/error.hpp"
#include "vismetric/text.hpp"

namespace vismetric {

enum class TokenizationPolicy {
  kDefault,     // lowercase, punctuation as standalone tokens, whitespace split
  kWhitespace,  // whitespace split only, case preserved
};

inline std::string to_string(TokenizationPolicy p) {
  return p == TokenizationPolicy::kDefault ? "default" : "whitespace";
}

inline TokenizationPolicy parse_tokenization_policy(std::string_view s) {
  if (s == "default") return TokenizationPolicy::kDefault;
  if (s == "whitespace") return TokenizationPolicy::kWhitespace;
  throw ValidationError("unknown tokenization policy '" + std::string(s) + "'");
}

inline std::vector<std::string> normalize_tokens(std::string_view text,
                                                 TokenizationPolicy policy = TokenizationPolicy::kDefault) {
  std::string source(text);
  if (policy == TokenizationPolicy::kDefault) {
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(source);
    u.toLower();
    source.clear();
    u.toUTF8String(source);
  }
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (UChar32 c : text::codepoints(source)) {
    if (text::is_space(c)) {
      flush();
    } else if (policy == TokenizationPolicy::kDefault && text::is_punct(c)) {
      flush();
      text::append_utf8(current, c);
      flush();
    } else {
      text::append_utf8(current, c);
    }
  }
  flush();
  return tokens;
}

// Heuristic BPE-equivalent count used when the provider does not report one:
// every default-policy token costs ceil(codepoints / 6), at least 1.
inline int estimate_bpe_tokens(std::string_view text) {
  int total = 0;
  for (const auto& tok : normalize_tokens(text)) {
    const auto n = static_cast<int>(text::codepoints(tok).size());
    total += std::max(1, (n + 5) / 6);
  }
  return total;
}

struct TextSnippet {
  std::string text;
  int token_estimate = 0;

  TextSnippet() = default;
  explicit TextSnippet(std::string t) : text(std::move(t)), token_estimate(estimate_bpe_tokens(text)) {}

  bool operator==(const TextSnippet&) const = default;
};

inline std::vector<std::string> normalize_tokens(const TextSnippet& snippet,
                                                 TokenizationPolicy policy = TokenizationPolicy::kDefault) {
  return normalize_tokens(snippet.text, policy);
}

struct EvalExample {
  std::string id;
  std::optional<std::string> source;
  TextSnippet hypothesis;
  std::vector<TextSnippet> references;
  std::vector<int> judge_scores;

  bool operator==(const EvalExample&) const = default;
};

enum class Task { kMachineTranslation, kSummarization, kDataToText };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::kMachineTranslation: return "machine-translation";
    case Task::kSummarization: return "summarization";
    case Task::kDataToText: return "data-to-text";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  if (s == "machine-translation") return Task::kMachineTranslation;
  if (s == "summarization") return Task::kSummarization;
  if (s == "data-to-text") return Task::kDataToText;
  throw ValidationError("unknown task '" + std::string(s) + "'");
}

struct Dataset {
  std::string name;
  Task task = Task::kMachineTranslation;
  std::vector<EvalExample> examples;

  std::size_t size() const { return examples.size(); }

  double mean_references() const {
    if (examples.empty()) return 0.0;
    std::size_t total = 0;
    for (const auto& ex : examples) total += ex.references.size();
    return static_cast<double>(total) / static_cast<double>(examples.size());
  }

  std::size_t total_references() const {
    std::size_t total = 0;
    for (const auto& ex : examples) total += ex.references.size();
    return total;
  }

  const EvalExample* find(std::string_view id) const {
    for (const auto& ex : examples)
      if (ex.id == id) return &ex;
    return nullptr;
  }

  bool operator==(const Dataset&) const = default;
};

inline constexpr int kDatasetSchemaVersion = 1;

inline double mean_human_score(const EvalExample& example) {
  if (example.judge_scores.empty())
    throw ValidationError("example '" + example.id + "' has no judge scores");
  const double sum = std::accumulate(example.judge_scores.begin(), example.judge_scores.end(), 0.0);
  return sum / static_cast<double>(example.judge_scores.size());
}

/// Sidecar manifest path for a dataset file: `data.jsonl` -> `data.manifest.json`.
inline std::filesystem::path manifest_path(const std::filesystem::path& data) {
  auto p = data;
  p.replace_extension(".manifest.json");
  return p;
}

namespace detail {

inline TextSnippet snippet_from_json(const nlohmann::json& j, const char* field) {
  if (!j.is_string()) throw ValidationError(std::string(field) + " must be a string");
  std::string raw = j.get<std::string>();
  if (text::trim(raw).empty()) throw ValidationError(std::string(field) + " is empty");
  return TextSnippet(std::move(raw));
}

inline EvalExample example_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("record is not a JSON object");
  EvalExample ex;
  if (!j.contains("id") || !j["id"].is_string()) throw ValidationError("missing string field 'id'");
  ex.id = j["id"].get<std::string>();
  if (ex.id.empty()) throw ValidationError("empty id");
  if (j.contains("source") && !j["source"].is_null()) {
    if (!j["source"].is_string()) throw ValidationError("source must be string or null");
    ex.source = j["source"].get<std::string>();
  }
  if (!j.contains("hypothesis")) throw ValidationError("missing field 'hypothesis'");
  ex.hypothesis = snippet_from_json(j["hypothesis"], "hypothesis");
  if (!j.contains("references") || !j["references"].is_array())
    throw ValidationError("missing array field 'references'");
  for (const auto& r : j["references"]) ex.references.push_back(snippet_from_json(r, "reference"));
  if (ex.references.empty()) throw ValidationError("example '" + ex.id + "' has empty references");
  if (j.contains("judge_scores")) {
    if (!j["judge_scores"].is_array()) throw ValidationError("judge_scores must be an array");
    for (const auto& s : j["judge_scores"]) {
      if (!s.is_number_integer()) throw ValidationError("judge score must be an integer");
      const int v = s.get<int>();
      if (v < 1 || v > 4) throw ValidationError("judge score " + std::to_string(v) + " outside [1,4]");
      ex.judge_scores.push_back(v);
    }
  }
  return ex;
}

}  // namespace detail

inline nlohmann::json to_json(const EvalExample& ex) {
  nlohmann::json j;
  j["id"] = ex.id;
  j["source"] = ex.source ? nlohmann::json(*ex.source) : nlohmann::json(nullptr);
  j["hypothesis"] = ex.hypothesis.text;
  j["references"] = nlohmann::json::array();
  for (const auto& r : ex.references) j["references"].push_back(r.text);
  j["judge_scores"] = ex.judge_scores;
  return j;
}

/// Validates a whole dataset; throws on the first violated invariant.
inline void validate(const Dataset& ds) {
  if (ds.examples.empty()) throw ValidationError("empty dataset");
  std::set<std::string> seen;
  for (const auto& ex : ds.examples) {
    if (!seen.insert(ex.id).second) throw ValidationError("duplicate id '" + ex.id + "'");
    if (ex.references.empty()) throw ValidationError("example '" + ex.id + "' has empty references");
  }
}

inline Dataset load_dataset(const std::filesystem::path& path, int schema_version = kDatasetSchemaVersion) {
  if (schema_version != kDatasetSchemaVersion)
    throw ValidationError("unsupported schema_version " + std::to_string(schema_version));
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset " + path.string());

  Dataset ds;
  ds.name = path.stem().string();
  const auto mpath = manifest_path(path);
  if (std::filesystem::exists(mpath)) {
    std::ifstream min(mpath);
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(min);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("malformed manifest " + mpath.string() + ": " + e.what());
    }
    if (m.value("schema_version", 0) != schema_version)
      throw ValidationError("manifest schema_version mismatch in " + mpath.string());
    ds.name = m.value("name", ds.name);
    ds.task = parse_task(m.value("task", std::string("machine-translation")));
  }

  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
    EvalExample ex;
    try {
      ex = detail::example_from_json(j);
    } catch (const ValidationError& e) {
      throw ParseError(lineno, e.what());
    }
    if (!seen.insert(ex.id).second) throw ValidationError("line " + std::to_string(lineno) + ": duplicate id '" + ex.id + "'");
    ds.examples.push_back(std::move(ex));
  }
  validate(ds);
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  validate(ds);
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    for (const auto& ex : ds.examples) out << to_json(ex).dump() << '\n';
  }
  std::ofstream mout(manifest_path(path), std::ios::binary);
  nlohmann::json m{{"name", ds.name}, {"task", to_string(ds.task)}, {"schema_version", kDatasetSchemaVersion}};
  mout << m.dump(2) << '\n';
}

}  // namespace vismetric
