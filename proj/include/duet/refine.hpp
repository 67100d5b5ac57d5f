#pragma once
// The critic/generator loop and its human-in-the-loop variant.
//
// Each round: summarize the current table, ask the critic for advice, hand
// the advice to the generator, apply the proposed sequence. Labels are not
// an input anywhere in this header.

#include <chrono>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "duet/agents.hpp"
#include "duet/stats.hpp"
#include "duet/table.hpp"

namespace duet {

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An operation is not allowed in the session's current state.
class StateConflict : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct LoopConfig {
  std::size_t iterations = 3;
  std::size_t k_max = 10;
  double budget_multiplier = 4.0;
  std::uint64_t seed = 0;
  AgentConfig agent;

  void validate() const {
    if (iterations < 1) throw ValidationError("iterations must be >= 1");
    if (k_max < 1) throw ValidationError("k_max must be >= 1");
    if (!(budget_multiplier >= 1.0)) throw ValidationError("budget multiplier must be >= 1");
  }

  AcceptancePolicy policy() const {
    AcceptancePolicy p;
    p.budget_multiplier = budget_multiplier;
    return p;
  }
};

struct IterationTiming {
  double diagnosis_s = 0.0;
  double critic_s = 0.0;
  double generator_s = 0.0;
  double apply_s = 0.0;

  double backend_s() const { return critic_s + generator_s; }
  double total_s() const { return diagnosis_s + critic_s + generator_s + apply_s; }
};

struct IterationRecord {
  std::size_t index = 0;
  CritiqueAdvice advice;
  std::optional<TransformSequence> proposed;  // empty when generation failed
  std::string skipped;                        // why the round was skipped
  std::vector<Expr> accepted;
  std::vector<Rejection> rejections;
  std::size_t rows_after = 0;
  std::size_t cols_after = 0;
  IterationTiming timing;
};

struct RunResult {
  FeatureTable table;
  std::vector<IterationRecord> iterations;
  Transcript transcript;
};

class RunAborted : public std::runtime_error {
 public:
  RunAborted(const std::string& message, RunResult partial)
      : std::runtime_error(message), partial_(std::move(partial)) {}
  const RunResult& partial() const { return partial_; }

 private:
  RunResult partial_;
};

inline nlohmann::json to_json(const IterationTiming& t) {
  return {{"diagnosis_s", t.diagnosis_s}, {"critic_s", t.critic_s}, {"generator_s", t.generator_s},
          {"apply_s", t.apply_s},         {"backend_s", t.backend_s()}, {"total_s", t.total_s()}};
}

inline nlohmann::json to_json(const IterationRecord& r) {
  nlohmann::json accepted = nlohmann::json::array();
  for (const auto& e : r.accepted) accepted.push_back(render(e));
  nlohmann::json rejections = nlohmann::json::array();
  for (const auto& x : r.rejections) rejections.push_back(to_json(x));
  return {{"index", r.index},
          {"advice", to_json(r.advice)},
          {"proposed", r.proposed ? nlohmann::json(render(*r.proposed)) : nlohmann::json(nullptr)},
          {"skipped", r.skipped},
          {"accepted", accepted},
          {"rejections", rejections},
          {"shape_after", {r.rows_after, r.cols_after}},
          {"timing", to_json(r.timing)}};
}

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double lap() {
    auto now = std::chrono::steady_clock::now();
    double s = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// One critic -> generator -> apply round. BackendError propagates.
inline IterationRecord run_round(FeatureTable& table, const DatasetMeta& meta, const OperatorSet& ops,
                                 const LoopConfig& cfg, ChatBackend& backend, std::size_t index) {
  IterationRecord rec;
  rec.index = index;
  Stopwatch sw;
  Summary stats = summarize(table);
  Prompt critic_prompt = build_critic_prompt(meta, stats, table);
  rec.timing.diagnosis_s = sw.lap();
  rec.advice = run_critic(backend, critic_prompt, cfg.agent);
  rec.timing.critic_s = sw.lap();
  Prompt gen_prompt = build_generator_prompt(meta, ops, rec.advice, table, stats, cfg.k_max);
  try {
    rec.proposed = run_generator(backend, gen_prompt, ops, cfg.k_max, cfg.agent);
  } catch (const GenerationError& e) {
    rec.skipped = e.what();
  }
  rec.timing.generator_s = sw.lap();
  if (rec.proposed) {
    ApplyResult applied = apply_sequence(table, *rec.proposed, cfg.policy());
    for (auto pos : applied.accepted) rec.accepted.push_back(rec.proposed->exprs[pos]);
    rec.rejections = std::move(applied.rejections);
    table = std::move(applied.table);
  }
  rec.timing.apply_s = sw.lap();
  rec.rows_after = table.rows();
  rec.cols_after = table.cols();
  return rec;
}

}  // namespace detail

inline RunResult run(const FeatureTable& table, const DatasetMeta& meta, const OperatorSet& ops, const LoopConfig& cfg,
                     ChatBackend& backend) {
  cfg.validate();
  RunResult result;
  result.table = table;
  RecordingBackend recorder(backend, result.transcript);
  for (std::size_t i = 0; i < cfg.iterations; ++i) {
    try {
      result.iterations.push_back(detail::run_round(result.table, meta, ops, cfg, recorder, i));
    } catch (const BackendError& e) {
      throw RunAborted(std::string("round ") + std::to_string(i) + " aborted: " + e.what(), std::move(result));
    }
  }
  return result;
}

// All accepted expressions, one canonical sequence per productive round.
inline std::string to_fts(const RunResult& r) {
  std::string out;
  for (const auto& it : r.iterations) {
    if (it.accepted.empty()) continue;
    out += render(TransformSequence{it.accepted}) + "\n";
  }
  return out;
}

inline std::string iterations_json(const std::vector<IterationRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records) arr.push_back(to_json(r));
  return arr.dump(2) + "\n";
}

// Writes transformed.csv, sequences.fts, transcript.jsonl and iterations.json.
inline void write_run_outputs(const RunResult& r, const std::string& out_dir,
                              const std::optional<LabelColumn>& labels = std::nullopt) {
  std::filesystem::create_directories(out_dir);
  auto path = [&](const char* name) { return (std::filesystem::path(out_dir) / name).string(); };
  write_text(path("transformed.csv"), to_csv(r.table, labels));
  write_text(path("sequences.fts"), to_fts(r));
  write_text(path("transcript.jsonl"), r.transcript.to_jsonl());
  write_text(path("iterations.json"), iterations_json(r.iterations));
}

// ---------------------------------------------------------------------------
// Conversational mode: the human replaces the critic.

struct CandidatePreview {
  std::string expr;
  bool evaluable = true;
  std::string problem;
  FeatureStats stats;
};

struct Proposal {
  std::string instruction;
  TransformSequence seq;
  std::vector<CandidatePreview> previews;
};

inline nlohmann::json to_json(const Proposal& p) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& c : p.previews) {
    nlohmann::json j{{"expr", c.expr}, {"evaluable", c.evaluable}};
    if (c.evaluable) {
      j["stats"] = to_json(c.stats);
    } else {
      j["problem"] = c.problem;
    }
    items.push_back(std::move(j));
  }
  nlohmann::json rendered = nlohmann::json::array();
  for (const auto& e : p.seq.exprs) rendered.push_back(render(e));
  return {{"instruction", p.instruction}, {"proposal", rendered}, {"preview", items}};
}

inline constexpr std::size_t kMaxHistoryDepth = 50;

class ConversationSession {
 public:
  ConversationSession(FeatureTable table, DatasetMeta meta, OperatorSet ops, LoopConfig cfg = {})
      : table_(std::move(table)), meta_(std::move(meta)), ops_(std::move(ops)), cfg_(cfg) {
    cfg_.validate();
  }

  const FeatureTable& table() const { return table_; }
  const DatasetMeta& meta() const { return meta_; }
  const OperatorSet& ops() const { return ops_; }
  const LoopConfig& config() const { return cfg_; }
  const std::optional<Proposal>& pending() const { return pending_; }
  std::size_t history_depth() const { return history_.size(); }
  const Transcript& transcript() const { return transcript_; }
  const std::vector<IterationRecord>& rounds() const { return rounds_; }

  // Runs the generator with `instruction` as the sole advice. The proposal is
  // staged, not applied.
  const Proposal& instruct(ChatBackend& backend, const std::string& instruction) {
    if (trim(instruction).empty()) throw ValidationError("instruction must not be empty");
    if (pending_) throw StateConflict("a proposal is pending; accept or discard it first");
    RecordingBackend recorder(backend, transcript_);
    Summary stats = summarize(table_);
    CritiqueAdvice advice;
    advice.semantic_advice.push_back(instruction);
    Prompt prompt = build_generator_prompt(meta_, ops_, advice, table_, stats, cfg_.k_max, AdviceSource::human);
    Proposal p;
    p.instruction = instruction;
    p.seq = run_generator(recorder, prompt, ops_, cfg_.k_max, cfg_.agent);
    for (const auto& e : p.seq.exprs) {
      CandidatePreview c;
      c.expr = render(e);
      try {
        EvalResult r = table_.evaluate(e);
        double nan_fraction = static_cast<double>(r.non_finite) / static_cast<double>(table_.rows());
        impute_median(r.values);
        c.stats = column_stats(r.values, nan_fraction);
      } catch (const IndexError& err) {
        c.evaluable = false;
        c.problem = err.what();
      }
      p.previews.push_back(std::move(c));
    }
    pending_ = std::move(p);
    return *pending_;
  }

  // Applies the chosen subset of the pending proposal.
  ApplyResult accept(std::span<const std::size_t> indices) {
    if (!pending_) throw StateConflict("no pending proposal");
    TransformSequence chosen;
    for (auto i : indices) {
      if (i >= pending_->seq.exprs.size()) {
        throw ValidationError("proposal index " + std::to_string(i) + " out of range (" +
                              std::to_string(pending_->seq.exprs.size()) + " proposed)");
      }
      chosen.exprs.push_back(pending_->seq.exprs[i]);
    }
    ApplyResult r{table_, {}, {}};
    if (!chosen.exprs.empty()) r = apply_sequence(table_, chosen, cfg_.policy());
    push_history();
    table_ = r.table;
    pending_.reset();
    return r;
  }

  // Discards a pending proposal, or else reverts the last accepted change.
  void undo() {
    if (pending_) {
      pending_.reset();
      return;
    }
    if (history_.empty()) throw StateConflict("nothing to undo");
    table_ = std::move(history_.back());
    history_.pop_back();
  }

  CritiqueAdvice diagnose(ChatBackend& backend) {
    RecordingBackend recorder(backend, transcript_);
    Summary stats = summarize(table_);
    return run_critic(recorder, build_critic_prompt(meta_, stats, table_), cfg_.agent);
  }

  // Automatic rounds on the session's table; undo reverts all of them at once.
  std::vector<IterationRecord> auto_rounds(ChatBackend& backend, std::size_t iterations) {
    if (iterations < 1) throw ValidationError("iterations must be >= 1");
    if (pending_) throw StateConflict("a proposal is pending; accept or discard it first");
    RecordingBackend recorder(backend, transcript_);
    FeatureTable work = table_;
    std::vector<IterationRecord> out;
    for (std::size_t i = 0; i < iterations; ++i) {
      out.push_back(detail::run_round(work, meta_, ops_, cfg_, recorder, rounds_.size() + i));
    }
    push_history();
    table_ = std::move(work);
    rounds_.insert(rounds_.end(), out.begin(), out.end());
    return out;
  }

  // Restores a snapshot; used when reloading persisted sessions.
  void restore(FeatureTable table, std::vector<FeatureTable> history) {
    table_ = std::move(table);
    history_.assign(history.begin(), history.end());
    pending_.reset();
  }
  const std::deque<FeatureTable>& history() const { return history_; }

 private:
  void push_history() {
    history_.push_back(table_);
    while (history_.size() > kMaxHistoryDepth) history_.pop_front();
  }

  FeatureTable table_;
  DatasetMeta meta_;
  OperatorSet ops_;
  LoopConfig cfg_;
  std::optional<Proposal> pending_;
  std::deque<FeatureTable> history_;
  Transcript transcript_;
  std::vector<IterationRecord> rounds_;
};

}  // namespace duet
