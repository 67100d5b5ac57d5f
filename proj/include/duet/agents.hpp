#pragma once
// Critic and generator agents.
//
// The critic reads a dataset description plus a statistical summary and
// returns advice in two sections (SEMANTIC, DISTRIBUTION). The generator
// turns that advice into a token sequence wrapped in <SEQ>...</SEQ>.
// Both talk to the model through ChatBackend, so a recorded transcript or
// the offline heuristic can stand in for a remote model.

#include <chrono>
#include <ctime>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "duet/expr.hpp"
#include "duet/stats.hpp"
#include "duet/table.hpp"

namespace duet {

enum class Role { critic, generator };

inline constexpr std::string_view role_name(Role r) { return r == Role::critic ? "critic" : "generator"; }

inline Role role_from_name(std::string_view s) {
  if (s == "critic") return Role::critic;
  if (s == "generator") return Role::generator;
  throw std::invalid_argument("unknown role '" + std::string(s) + "'");
}

struct ChatRequest {
  Role role = Role::critic;
  std::string system;
  std::string user;
  double temperature = 0.0;
  int max_tokens = 1024;
};

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Transcript

struct TranscriptRecord {
  Role role = Role::critic;
  std::string system;
  std::string user;
  std::string response;
  std::string ts;  // ISO-8601 UTC
};

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Append-only log of backend calls. Appends are serialized.
class Transcript {
 public:
  Transcript() = default;
  Transcript(const Transcript& other) : records_(other.snapshot()) {}
  Transcript& operator=(const Transcript& other) {
    if (this != &other) {
      auto copy = other.snapshot();
      std::lock_guard lock(mu_);
      records_ = std::move(copy);
    }
    return *this;
  }

  void append(TranscriptRecord record) {
    std::lock_guard lock(mu_);
    records_.push_back(std::move(record));
  }

  std::vector<TranscriptRecord> snapshot() const {
    std::lock_guard lock(mu_);
    return records_;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return records_.size();
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& r : snapshot()) {
      nlohmann::json j{{"role", role_name(r.role)}, {"system", r.system}, {"user", r.user},
                       {"response", r.response}, {"ts", r.ts}};
      out += j.dump() + "\n";
    }
    return out;
  }

  static Transcript from_jsonl(std::string_view text) {
    Transcript t;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        t.records_.push_back({role_from_name(j.at("role").get<std::string>()), j.value("system", ""),
                              j.value("user", ""), j.at("response").get<std::string>(), j.value("ts", "")});
      } catch (const std::exception& e) {
        throw DataError(DataError::Kind::schema,
                        "transcript line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    return t;
  }

  static Transcript load(const std::string& path) { return from_jsonl(read_file(path)); }
  void save(const std::string& path) const { write_text(path, to_jsonl()); }

 private:
  mutable std::mutex mu_;
  std::vector<TranscriptRecord> records_;
};

// Decorator: forwards to `inner` and appends every completed call.
class RecordingBackend : public ChatBackend {
 public:
  RecordingBackend(ChatBackend& inner, Transcript& transcript) : inner_(inner), transcript_(transcript) {}

  std::string complete(const ChatRequest& request) override {
    std::string response = inner_.complete(request);
    transcript_.append({request.role, request.system, request.user, response, utc_timestamp()});
    return response;
  }

 private:
  ChatBackend& inner_;
  Transcript& transcript_;
};

// Serves recorded responses in order. Roles must line up with the recording;
// running past the end is an error.
class ReplayBackend : public ChatBackend {
 public:
  explicit ReplayBackend(Transcript transcript) : records_(transcript.snapshot()) {}

  std::string complete(const ChatRequest& request) override {
    std::lock_guard lock(mu_);
    if (cursor_ >= records_.size()) {
      throw BackendError("replay transcript exhausted after " + std::to_string(records_.size()) + " records");
    }
    const auto& r = records_[cursor_];
    if (r.role != request.role) {
      throw BackendError("replay record " + std::to_string(cursor_) + " is a " + std::string(role_name(r.role)) +
                         " call, but a " + std::string(role_name(request.role)) + " call was made");
    }
    ++cursor_;
    return r.response;
  }

  std::size_t consumed() const {
    std::lock_guard lock(mu_);
    return cursor_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<TranscriptRecord> records_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Prompts

struct Prompt {
  std::string system;
  std::string user;

  friend bool operator==(const Prompt&, const Prompt&) = default;
};

struct CritiqueAdvice {
  std::vector<std::string> semantic_advice;
  std::vector<std::string> distributional_advice;
  std::string raw_response;

  std::vector<std::string> items() const {
    auto all = semantic_advice;
    all.insert(all.end(), distributional_advice.begin(), distributional_advice.end());
    return all;
  }
};

inline nlohmann::json to_json(const CritiqueAdvice& a) {
  return {{"semantic", a.semantic_advice}, {"distribution", a.distributional_advice}, {"raw_response", a.raw_response}};
}

// Where the generator's optimization direction came from.
enum class AdviceSource { critic, human };

namespace prompts {

inline constexpr std::string_view kSeqOpen = "<SEQ>";
inline constexpr std::string_view kSeqClose = "</SEQ>";
inline constexpr std::string_view kFormatExemplar = "(f1*f2),log(f3),(f4/f5)";
inline constexpr std::string_view kAdviceHeaderCritic = "Optimization direction from the critic:";
inline constexpr std::string_view kAdviceHeaderHuman = "Optimization direction from the domain expert:";

inline std::string feature_descriptions(const DatasetMeta& meta, const FeatureTable& table) {
  std::string out;
  for (std::size_t c = 0; c < table.cols(); ++c) {
    const auto& info = table.info(c);
    out += "f" + std::to_string(c + 1) + ": " + info.name;
    if (info.original()) {
      const std::string* d = meta.describe(info.name);
      if (d && !d->empty()) out += " - " + *d;
    } else {
      out += " (generated)";
    }
    out += "\n";
  }
  return out;
}

inline std::string generated_list(const FeatureTable& table) {
  std::string out;
  for (std::size_t c = 0; c < table.cols(); ++c) {
    const auto& info = table.info(c);
    if (info.original()) continue;
    out += "- f" + std::to_string(c + 1) + " = " + render(*info.expr) + "\n";
  }
  return out.empty() ? "none\n" : out;
}

inline std::string operator_lines(const OperatorSet& ops) {
  std::string binary;
  for (auto op : ops.binary()) {
    if (!binary.empty()) binary += ' ';
    binary += op_symbol(op);
  }
  std::string unary;
  for (auto op : ops.unary()) {
    if (!unary.empty()) unary += ", ";
    unary += op_name(op);
  }
  return "- binary operators: " + (binary.empty() ? std::string("none") : binary) + "\n" +
         "- unary operators, written name(expr): " + (unary.empty() ? std::string("none") : unary) + "\n";
}

}  // namespace prompts

inline Prompt build_critic_prompt(const DatasetMeta& meta, const Summary& stats, const FeatureTable& table) {
  Prompt p;
  p.system =
      "You are the critic agent of a feature transformation team. You diagnose a tabular feature space "
      "without access to labels and advise how to transform it so that classification patterns become "
      "easier to separate.\n"
      "Perform two analyses:\n"
      "1. Semantic diagnosis: use the task description and the true feature names to find meaningful "
      "relationships between the predictors and the target, and interactions worth constructing.\n"
      "2. Distribution diagnosis: use the statistics to judge skew, scale, redundancy, correlation and "
      "completeness, and suggest transformations that reshape the distributions.\n"
      "Answer with exactly two sections. Each section is a list of lines starting with \"- \":\n"
      "SEMANTIC:\n- <advice>\nDISTRIBUTION:\n- <advice>\n"
      "Refer to features by their tokens (f1, f2, ...). Keep every item to one actionable sentence.\n";
  p.user = "Task: " + meta.task_description + "\n" + "Target: " + meta.target_name + "\n" +
           "Features:\n" + prompts::feature_descriptions(meta, table) + "Feature statistics:\n" + render_stats(stats) +
           "Generated features so far:\n" + prompts::generated_list(table) +
           "Diagnose this feature space and give your advice.\n";
  return p;
}

inline Prompt build_generator_prompt(const DatasetMeta& meta, const OperatorSet& ops, const CritiqueAdvice& advice,
                                     const FeatureTable& table, const Summary& stats, std::size_t k_max,
                                     AdviceSource source = AdviceSource::critic) {
  if (k_max < 1) throw std::invalid_argument("k_max must be >= 1");
  Prompt p;
  std::string mapping;
  for (std::size_t c = 0; c < table.cols(); ++c) {
    mapping += "  f" + std::to_string(c + 1) + " = " + table.name(c) + "\n";
  }
  p.system =
      "You are the generator agent of a feature transformation team. You write new features as token "
      "sequences.\n"
      "Token language:\n"
      "- feature tokens:\n" +
      mapping + prompts::operator_lines(ops) +
      "- parentheses group sub-expressions; there are no numeric constants and no unary minus\n"
      "- a sequence lists transformed features separated by commas, for example " +
      std::string(prompts::kFormatExemplar) +
      "\n"
      "Examples:\n"
      "Input features: f1 = height, f2 = weight, f3 = age\n"
      "Output: <SEQ>f2/(f1*f1),log(f3),f2/f3</SEQ>\n"
      "Input features: f1 = distance, f2 = duration, f3 = fuel, f4 = cargo, f5 = stops\n"
      "Output: <SEQ>" +
      std::string(prompts::kFormatExemplar) +
      "</SEQ>\n"
      "Input features: f1 = glucose, f2 = insulin, f3 = bmi, f4 = age\n"
      "Output: <SEQ>f1*f2,f3/f4,sqrt(f2)</SEQ>\n"
      "You may think briefly, but the final line of your answer must be exactly one sequence wrapped "
      "as <SEQ>...</SEQ>.\n";

  std::string items;
  for (const auto& item : advice.items()) items += "- " + item + "\n";
  p.user = "Task: " + meta.task_description + "\n" + "Target: " + meta.target_name + "\n" +
           "Current features: f1..f" + std::to_string(table.cols()) + "\n" + "Feature statistics:\n" +
           render_stats(stats) + "Generated features so far:\n" + prompts::generated_list(table) +
           std::string(source == AdviceSource::critic ? prompts::kAdviceHeaderCritic : prompts::kAdviceHeaderHuman) +
           "\n" + items + "\n" + "Propose at most " + std::to_string(k_max) +
           " new features that follow this direction. Use only the feature tokens f1..f" +
           std::to_string(table.cols()) + " and the listed operators.\n";
  return p;
}

// ---------------------------------------------------------------------------
// Response parsing

namespace detail {

inline std::string upper_bare(std::string_view line) {
  std::string out;
  for (char c : line) {
    if (c == '*' || c == '#' || c == '_') continue;
    out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return trim(out);
}

// Returns the item text if `line` starts with a bullet or list number.
inline std::optional<std::string> bullet_item(std::string_view raw) {
  std::string line = trim(raw);
  if (line.empty()) return std::nullopt;
  std::size_t skip = 0;
  if (line.rfind("\xE2\x80\xA2", 0) == 0) {
    skip = 3;
  } else if (line[0] == '-' || line[0] == '*' || line[0] == '+') {
    skip = 1;
  } else {
    std::size_t d = 0;
    while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
    if (d == 0 || d >= line.size() || (line[d] != '.' && line[d] != ')')) return std::nullopt;
    skip = d + 1;
  }
  std::string item = trim(std::string_view(line).substr(skip));
  // Drop bold markers around the whole item.
  while (item.size() >= 2 && item.front() == '*' && item.back() == '*') item = trim(item.substr(1, item.size() - 2));
  if (item.empty()) return std::nullopt;
  return item;
}

}  // namespace detail

// Parses a critic response. Returns nothing when neither header is present
// or no items were found.
inline std::optional<CritiqueAdvice> parse_critique(std::string_view response) {
  enum class Section { none, semantic, distribution };
  Section section = Section::none;
  bool saw_header = false;
  CritiqueAdvice advice;
  advice.raw_response = std::string(response);
  std::istringstream in{std::string(response)};
  std::string line;
  while (std::getline(in, line)) {
    std::string bare = detail::upper_bare(line);
    auto header = [&](std::string_view word) {
      if (bare.rfind(word, 0) != 0) return false;
      std::string rest = trim(std::string_view(bare).substr(word.size()));
      return rest.empty() || rest[0] == ':' || rest.rfind("DIAGNOSIS", 0) == 0 || rest.rfind("ADVICE", 0) == 0;
    };
    Section next = Section::none;
    if (header("SEMANTIC")) next = Section::semantic;
    if (header("DISTRIBUTION") || header("DISTRIBUTIONAL")) next = Section::distribution;
    if (next != Section::none) {
      section = next;
      saw_header = true;
      // Text after the colon on the header line counts as an item.
      auto colon = line.find(':');
      if (colon != std::string::npos) {
        std::string tail = trim(std::string_view(line).substr(colon + 1));
        while (!tail.empty() && tail.front() == '*') tail.erase(0, 1);
        tail = trim(tail);
        if (!tail.empty()) (section == Section::semantic ? advice.semantic_advice : advice.distributional_advice).push_back(tail);
      }
      continue;
    }
    if (section == Section::none) continue;
    if (auto item = detail::bullet_item(line)) {
      (section == Section::semantic ? advice.semantic_advice : advice.distributional_advice).push_back(*item);
    }
  }
  if (!saw_header || advice.items().empty()) return std::nullopt;
  return advice;
}

class GenerationError : public std::runtime_error {
 public:
  GenerationError(const std::string& message, std::size_t attempts)
      : std::runtime_error(message), attempts_(attempts) {}
  std::size_t attempts() const { return attempts_; }

 private:
  std::size_t attempts_;
};

// Pulls the sequence out of a generator response: the content of the last
// <SEQ>...</SEQ> pair, else the last line that parses on its own.
inline TransformSequence extract_sequence(std::string_view response, const OperatorSet& ops,
                                          const ParseOptions& options = {}) {
  auto close = response.rfind(prompts::kSeqClose);
  if (close != std::string_view::npos) {
    auto open = response.rfind(prompts::kSeqOpen, close);
    if (open != std::string_view::npos) {
      auto body = response.substr(open + prompts::kSeqOpen.size(), close - open - prompts::kSeqOpen.size());
      return parse(trim(body), ops, options);
    }
  }
  std::vector<std::string> lines;
  std::istringstream in{std::string(response)};
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) lines.push_back(trim(line));
  }
  if (lines.empty()) throw ParseError(0, "empty response", response);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    try {
      return parse(*it, ops, options);
    } catch (const ParseError&) {
    }
  }
  // Report against the final line, which is where the answer belongs.
  try {
    parse(lines.back(), ops, options);
  } catch (const ParseError& e) {
    throw ParseError(e.position(), "no <SEQ> markers and no parseable line; last line: " + e.message(), lines.back());
  }
  throw ParseError(0, "no sequence found", response);
}

struct AgentConfig {
  double temperature_critic = 0.7;
  double temperature_generator = 0.2;
  int max_tokens = 1024;
  std::size_t generator_retries = 2;
  ParseOptions parse;
};

inline constexpr std::string_view kCriticFormatReminder =
    "\n\nFormat reminder: answer with a line \"SEMANTIC:\" followed by advice lines starting with \"- \", "
    "then a line \"DISTRIBUTION:\" followed by advice lines starting with \"- \".\n";

inline CritiqueAdvice run_critic(ChatBackend& backend, const Prompt& prompt, const AgentConfig& cfg = {}) {
  ChatRequest req{Role::critic, prompt.system, prompt.user, cfg.temperature_critic, cfg.max_tokens};
  std::string response = backend.complete(req);
  if (auto advice = parse_critique(response)) return *advice;
  req.user = prompt.user + std::string(kCriticFormatReminder);
  response = backend.complete(req);
  if (auto advice = parse_critique(response)) return *advice;
  CritiqueAdvice degraded;
  std::string text = trim(response);
  degraded.semantic_advice.push_back(text.empty() ? "no advice returned" : text);
  degraded.raw_response = response;
  return degraded;
}

inline TransformSequence run_generator(ChatBackend& backend, const Prompt& prompt, const OperatorSet& ops,
                                       std::size_t k_max, const AgentConfig& cfg = {}) {
  ChatRequest req{Role::generator, prompt.system, prompt.user, cfg.temperature_generator, cfg.max_tokens};
  std::string last_error;
  const std::size_t attempts = cfg.generator_retries + 1;
  for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
    std::string response = backend.complete(req);
    try {
      TransformSequence seq = extract_sequence(response, ops, cfg.parse);
      if (seq.exprs.size() > k_max) seq.exprs.erase(seq.exprs.begin() + static_cast<std::ptrdiff_t>(k_max), seq.exprs.end());
      return seq;
    } catch (const ParseError& e) {
      last_error = e.what();
      req.user = prompt.user + "\nYour previous answer was:\n" + response +
                 "\nIt could not be parsed: " + last_error +
                 "\nReply again. The final line must be exactly one corrected sequence wrapped as <SEQ>...</SEQ>.\n";
    }
  }
  throw GenerationError("generator output unparseable after " + std::to_string(attempts) + " attempts: " + last_error,
                        attempts);
}

}  // namespace duet
