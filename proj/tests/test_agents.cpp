#include <gtest/gtest.h>

#include <random>

#include "duet/agents.hpp"
#include "duet/heuristic.hpp"
#include "duet/stats.hpp"
#include "oracles.hpp"

using namespace duet;

namespace {

const OperatorSet kOps = OperatorSet::standard();

struct Fixture {
  FeatureTable table;
  DatasetMeta meta;
  Summary stats;
};

// f1 symmetric, f2 = 2*f1, f3 exponential (skewed), f4 symmetric noise.
Fixture correlated_skewed() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  std::exponential_distribution<double> ex(1.0);
  std::vector<std::vector<double>> cols(4, std::vector<double>(200));
  for (std::size_t r = 0; r < 200; ++r) {
    double x = (static_cast<double>(r) - 99.5) / 100.0;
    cols[0][r] = x;
    cols[1][r] = 2 * x;
    cols[2][r] = ex(rng);
    cols[3][r] = u(rng);
  }
  auto t = FeatureTable::from_columns({"height", "height2", "income", "noise"}, cols);
  auto meta = oracle::plain_meta({"height", "height2", "income", "noise"});
  return {t, meta, summarize(t)};
}

// Responses queued in order; requests kept for inspection.
class ScriptedBackend : public ChatBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> responses) : responses_(std::move(responses)) {}
  std::string complete(const ChatRequest& r) override {
    requests.push_back(r);
    if (next_ >= responses_.size()) throw BackendError("script exhausted");
    return responses_[next_++];
  }
  std::vector<ChatRequest> requests;

 private:
  std::vector<std::string> responses_;
  std::size_t next_ = 0;
};

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(CriticPrompt, NamesOnceAndDeterministic) {
  auto fx = correlated_skewed();
  auto p = build_critic_prompt(fx.meta, fx.stats, fx.table);
  EXPECT_EQ(p, build_critic_prompt(fx.meta, fx.stats, fx.table));
  for (const auto& name : {"height", "income", "noise"}) {
    EXPECT_EQ(count_of(p.user, std::string(": ") + name + " - "), 1u) << name;
  }
  EXPECT_NE(p.user.find(fx.meta.task_description), std::string::npos);
  EXPECT_NE(p.user.find(render_stats(fx.stats)), std::string::npos);
  EXPECT_NE(p.system.find("SEMANTIC:"), std::string::npos);
  EXPECT_NE(p.system.find("DISTRIBUTION:"), std::string::npos);
}

TEST(CriticPrompt, ListsGeneratedFeatures) {
  auto fx = correlated_skewed();
  auto t = apply_sequence(fx.table, parse("f1*f3", kOps)).table;
  auto p = build_critic_prompt(fx.meta, summarize(t), t);
  EXPECT_NE(p.user.find("- f5 = f1*f3"), std::string::npos);
  EXPECT_NE(p.user.find("f5: f1*f3 (generated)"), std::string::npos);
}

TEST(CriticPrompt, HeuristicGivesBothSections) {
  auto fx = correlated_skewed();
  HeuristicBackend h;
  auto advice = run_critic(h, build_critic_prompt(fx.meta, fx.stats, fx.table));
  EXPECT_FALSE(advice.semantic_advice.empty());
  EXPECT_FALSE(advice.distributional_advice.empty());
}

TEST(GeneratorPrompt, ContractContents) {
  auto fx = correlated_skewed();
  CritiqueAdvice advice;
  advice.semantic_advice = {"ratio of f1 to f2 matters", "x"};
  advice.distributional_advice = {"log-transform skewed f3"};
  auto p = build_generator_prompt(fx.meta, kOps, advice, fx.table, fx.stats, 7);
  EXPECT_EQ(p, build_generator_prompt(fx.meta, kOps, advice, fx.table, fx.stats, 7));
  EXPECT_NE(p.system.find("(f1*f2),log(f3),(f4/f5)"), std::string::npos);
  EXPECT_NE(p.system.find("f3 = income"), std::string::npos);
  EXPECT_GE(count_of(p.system, "Output: <SEQ>"), 2u);
  for (const auto& item : advice.items()) EXPECT_NE(p.user.find(item), std::string::npos) << item;
  EXPECT_NE(p.user.find("at most 7 new features"), std::string::npos);
  EXPECT_THROW(build_generator_prompt(fx.meta, kOps, advice, fx.table, fx.stats, 0), std::invalid_argument);
}

TEST(GeneratorPrompt, AdviceEmbeddingProperty) {
  auto fx = correlated_skewed();
  std::mt19937_64 rng(1);
  const std::string alphabet = "abcdefghij f1f2()*,.:-|";
  for (int trial = 0; trial < 50; ++trial) {
    CritiqueAdvice a;
    for (int k = 0; k < 1 + static_cast<int>(rng() % 4); ++k) {
      std::string s;
      for (int c = 0; c < 5 + static_cast<int>(rng() % 30); ++c) s += alphabet[rng() % alphabet.size()];
      (k % 2 ? a.semantic_advice : a.distributional_advice).push_back(s);
    }
    auto p = build_generator_prompt(fx.meta, kOps, a, fx.table, fx.stats, 10);
    for (const auto& item : a.items()) EXPECT_NE(p.user.find(item), std::string::npos);
  }
}

TEST(GeneratorPrompt, HumanAdviceHeader) {
  auto fx = correlated_skewed();
  CritiqueAdvice a;
  a.semantic_advice = {"try f3"};
  auto p = build_generator_prompt(fx.meta, kOps, a, fx.table, fx.stats, 10, AdviceSource::human);
  EXPECT_NE(p.user.find(prompts::kAdviceHeaderHuman), std::string::npos);
}

TEST(ParseCritique, Sections) {
  auto a = parse_critique("SEMANTIC:\n- ratio of f1 to f2\nDISTRIBUTION:\n- log-transform skewed f3");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->semantic_advice, (std::vector<std::string>{"ratio of f1 to f2"}));
  EXPECT_EQ(a->distributional_advice, (std::vector<std::string>{"log-transform skewed f3"}));
}

TEST(ParseCritique, MarkdownAndNumbers) {
  auto a = parse_critique("Sure.\n**Semantic diagnosis:**\n1. combine f1 and f2\n2) **use f4**\n### Distribution\n* log f3\n");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->semantic_advice, (std::vector<std::string>{"combine f1 and f2", "use f4"}));
  EXPECT_EQ(a->distributional_advice, (std::vector<std::string>{"log f3"}));
  EXPECT_FALSE(parse_critique("just some prose without structure"));
}

TEST(RunCritic, DegradesAfterOneRetry) {
  ScriptedBackend b({"I think f1 matters.", "Still prose, f2 too."});
  auto a = run_critic(b, {"sys", "usr"});
  ASSERT_EQ(b.requests.size(), 2u);
  EXPECT_NE(b.requests[1].user.find("Format reminder"), std::string::npos);
  EXPECT_EQ(a.semantic_advice, (std::vector<std::string>{"Still prose, f2 too."}));
  EXPECT_TRUE(a.distributional_advice.empty());
}

TEST(RunCritic, RetrySucceeds) {
  ScriptedBackend b({"prose", "SEMANTIC:\n- a\nDISTRIBUTION:\n- b\n"});
  auto a = run_critic(b, {"sys", "usr"});
  EXPECT_EQ(a.items(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(b.requests[0].temperature, 0.7);
  EXPECT_EQ(b.requests[0].role, Role::critic);
}

TEST(Transcript, RecordThenReplayReproducesAdvice) {
  auto fx = correlated_skewed();
  HeuristicBackend h;
  Transcript t;
  RecordingBackend rec(h, t);
  auto prompt = build_critic_prompt(fx.meta, fx.stats, fx.table);
  auto live = run_critic(rec, prompt);
  ASSERT_EQ(t.size(), 1u);
  auto reloaded = Transcript::from_jsonl(t.to_jsonl());
  ReplayBackend replay(reloaded);
  auto again = run_critic(replay, prompt);
  EXPECT_EQ(again.raw_response, live.raw_response);
  EXPECT_EQ(again.items(), live.items());
  EXPECT_THROW(replay.complete({Role::critic, "", "", 0, 1}), BackendError);  // exhausted
}

TEST(Transcript, JsonlFields) {
  Transcript t;
  t.append({Role::generator, "s", "u", "r\n\"q\"", "2026-01-01T00:00:00Z"});
  auto line = t.to_jsonl();
  auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["role"], "generator");
  EXPECT_EQ(j["system"], "s");
  EXPECT_EQ(j["user"], "u");
  EXPECT_EQ(j["response"], "r\n\"q\"");
  EXPECT_EQ(j["ts"], "2026-01-01T00:00:00Z");
  EXPECT_THROW(Transcript::from_jsonl("{not json}\n"), DataError);
}

TEST(Transcript, ReplayRoleMismatchFails) {
  Transcript t;
  t.append({Role::generator, "", "", "<SEQ>f1</SEQ>", ""});
  ReplayBackend r(t);
  EXPECT_THROW(r.complete({Role::critic, "", "", 0, 1}), BackendError);
}

TEST(ExtractSequence, Markers) {
  EXPECT_EQ(extract_sequence("<SEQ>f1*f2,log(f3)</SEQ>", kOps).exprs.size(), 2u);
  EXPECT_EQ(render(extract_sequence("sure! here: <SEQ>f1/f2</SEQ>", kOps)), "f1/f2");
  EXPECT_EQ(render(extract_sequence("<SEQ>f9</SEQ> then <SEQ>f1+f2</SEQ>", kOps)), "f1+f2");
  EXPECT_EQ(render(extract_sequence("Here you go:\nf1*f2, sqrt(f3)\nHope it helps", kOps)), "f1*f2,sqrt(f3)");
  EXPECT_THROW(extract_sequence("no sequence here", kOps), ParseError);
  EXPECT_THROW(extract_sequence("<SEQ>f1**f2</SEQ>", kOps), ParseError);
}

TEST(RunGenerator, SelfRepairWithErrorFeedback) {
  ScriptedBackend b({"<SEQ>f1**f2,log(f3)</SEQ>", "Sorry, fixed:\n<SEQ>f1*f2,log(f3)</SEQ>"});
  auto seq = run_generator(b, {"sys", "usr"}, kOps, 10);
  EXPECT_EQ(render(seq), "f1*f2,log(f3)");
  ASSERT_EQ(b.requests.size(), 2u);
  EXPECT_NE(b.requests[1].user.find("offset 3"), std::string::npos);
  EXPECT_NE(b.requests[1].user.find("f1**f2"), std::string::npos);
  EXPECT_EQ(b.requests[1].temperature, 0.2);
}

TEST(RunGenerator, ReplayedTwoTurnTranscript) {
  Transcript t;
  t.append({Role::generator, "", "", "<SEQ>log(f1</SEQ>", ""});
  t.append({Role::generator, "", "", "<SEQ>log(f1)</SEQ>", ""});
  ReplayBackend r(t);
  EXPECT_EQ(render(run_generator(r, {"s", "u"}, kOps, 10)), "log(f1)");
  EXPECT_EQ(r.consumed(), 2u);
}

TEST(RunGenerator, GivesUpAfterTwoRetries) {
  ScriptedBackend b({"bad", "worse", "<SEQ>f1-</SEQ>", "<SEQ>f1</SEQ>"});
  try {
    run_generator(b, {"s", "u"}, kOps, 10);
    FAIL();
  } catch (const GenerationError& e) {
    EXPECT_EQ(e.attempts(), 3u);
  }
  EXPECT_EQ(b.requests.size(), 3u);
}

TEST(RunGenerator, TruncatesToKMax) {
  ScriptedBackend b({"<SEQ>f1,f2,f3,f4</SEQ>"});
  EXPECT_EQ(render(run_generator(b, {"s", "u"}, kOps, 2)), "f1,f2");
}

TEST(Heuristic, RuleTrace) {
  auto fx = correlated_skewed();
  HeuristicBackend h;
  auto advice = run_critic(h, build_critic_prompt(fx.meta, fx.stats, fx.table));
  ASSERT_EQ(advice.semantic_advice.size(), 1u);
  EXPECT_NE(advice.semantic_advice[0].find("f1 and f2"), std::string::npos);
  EXPECT_NE(advice.distributional_advice[0].find("f3"), std::string::npos);
  auto gp = build_generator_prompt(fx.meta, kOps, advice, fx.table, fx.stats, 10);
  std::string response = h.complete({Role::generator, gp.system, gp.user, 0.2, 1024});
  EXPECT_EQ(response, "<SEQ>f1*f2,log(f3),f1/f2</SEQ>");
  EXPECT_EQ(response, h.complete({Role::generator, gp.system, gp.user, 0.2, 1024}));
}

TEST(Heuristic, IndependentSymmetricColumnsTieToF1F2) {
  // Columns built to have zero correlation and zero skew exactly.
  std::vector<double> a{-1, 1, -1, 1}, b{-1, -1, 1, 1}, c{1, -1, -1, 1};
  auto t = FeatureTable::from_columns({"a", "b", "c"}, {a, b, c});
  auto stats = summarize(t);
  auto meta = oracle::plain_meta({"a", "b", "c"});
  HeuristicBackend h;
  auto advice = run_critic(h, build_critic_prompt(meta, stats, t));
  auto gp = build_generator_prompt(meta, kOps, advice, t, stats, 10);
  EXPECT_EQ(h.complete({Role::generator, gp.system, gp.user, 0.2, 1024}), "<SEQ>f1*f2,log(f1),f1/f2</SEQ>");
}

TEST(Heuristic, RespectsOperatorSet) {
  auto fx = correlated_skewed();
  auto ops = OperatorSet::from_names({"+", "sqrt", "/"});
  HeuristicBackend h;
  auto advice = run_critic(h, build_critic_prompt(fx.meta, fx.stats, fx.table));
  auto seq = run_generator(h, build_generator_prompt(fx.meta, ops, advice, fx.table, fx.stats, 10), ops, 10);
  EXPECT_EQ(render(seq), "f1/f2");
}

TEST(Heuristic, VariantsOfMentionedFeature) {
  auto fx = correlated_skewed();
  CritiqueAdvice a;
  a.semantic_advice = {"Generate variants of f3"};
  HeuristicBackend h;
  auto seq = run_generator(h, build_generator_prompt(fx.meta, kOps, a, fx.table, fx.stats, 10), kOps, 10);
  for (const auto& e : seq.exprs) EXPECT_TRUE(e.references(3)) << render(e);
  EXPECT_EQ(render(seq.exprs.front()), "log(f3)");
}
