#pragma once
// Deterministic, offline stand-in for the language model.
//
// It reads only the prompt text (the statistics block, the operator list,
// the advice block and the k_max request) and answers with fixed rules:
//   critic:    a SEMANTIC item naming the most correlated pair and a
//              DISTRIBUTION item naming the most skewed feature.
//   generator: MUL of the pair, LOG of the skewed feature, DIV of the pair.
//              When the advice asks for "variants" of named features, it
//              instead emits unary and pairwise variants of those features.
// Correlations below 0.3 and |skew| below 0.5 count as zero, so in a space
// with no usable structure ties resolve to f1, f2 by lowest index.

#include <algorithm>
#include <map>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "duet/agents.hpp"

namespace duet {

inline constexpr double kHeuristicMinCorrelation = 0.3;
inline constexpr double kHeuristicMinSkew = 0.5;

struct PromptFacts {
  std::size_t column_count = 0;
  std::map<std::size_t, double> skew;                  // 1-based token -> skew
  std::vector<std::tuple<std::size_t, std::size_t, double>> pairs;  // listed order
  std::set<BinaryOp> binary;
  std::set<UnaryOp> unary;
  std::vector<std::string> advice;
  std::size_t k_max = 10;
};

inline PromptFacts read_prompt_facts(const ChatRequest& req) {
  PromptFacts f;
  static const std::regex stat_re(R"(^f(\d+) mean=\S+ std=\S+ min=\S+ max=\S+ skew=(\S+))");
  static const std::regex pair_re(R"(^f(\d+)~f(\d+) \|r\|=(\S+))");
  static const std::regex cols_re(R"(^rows=\d+ columns=(\d+))");
  static const std::regex kmax_re(R"(at most (\d+) new features)");
  std::istringstream in(req.user);
  std::string line;
  bool in_advice = false;
  while (std::getline(in, line)) {
    std::smatch m;
    if (std::regex_search(line, m, cols_re)) f.column_count = std::stoul(m[1]);
    if (std::regex_search(line, m, stat_re)) f.skew[std::stoul(m[1])] = std::stod(m[2]);
    if (std::regex_search(line, m, pair_re)) f.pairs.emplace_back(std::stoul(m[1]), std::stoul(m[2]), std::stod(m[3]));
    if (std::regex_search(line, m, kmax_re)) f.k_max = std::stoul(m[1]);
    if (line == prompts::kAdviceHeaderCritic || line == prompts::kAdviceHeaderHuman) {
      in_advice = true;
      continue;
    }
    if (in_advice) {
      if (line.rfind("- ", 0) == 0) {
        f.advice.push_back(line.substr(2));
      } else {
        in_advice = false;
      }
    }
  }
  std::istringstream sys(req.system);
  while (std::getline(sys, line)) {
    if (line.rfind("- binary operators:", 0) == 0) {
      for (auto op : kAllBinaryOps) {
        if (line.find(std::string(" ") + op_symbol(op)) != std::string::npos) f.binary.insert(op);
      }
    } else if (line.rfind("- unary operators", 0) == 0) {
      auto colon = line.find(':');
      std::string rest = line.substr(colon + 1);
      for (auto op : kAllUnaryOps) {
        std::regex word("\\b" + std::string(op_name(op)) + "\\b");
        if (std::regex_search(rest, word)) f.unary.insert(op);
      }
    }
  }
  if (req.role == Role::critic) {
    f.binary = {kAllBinaryOps.begin(), kAllBinaryOps.end()};
    f.unary = {kAllUnaryOps.begin(), kAllUnaryOps.end()};
  }
  return f;
}

struct HeuristicChoice {
  std::size_t a = 1, b = 2;  // correlated pair, a < b
  double abs_r = 0.0;
  std::size_t skewed = 1;
  double skew = 0.0;
};

inline HeuristicChoice heuristic_choice(const PromptFacts& f) {
  HeuristicChoice c;
  for (const auto& [i, j, r] : f.pairs) {
    double eff = r >= kHeuristicMinCorrelation ? r : 0.0;
    double best = c.abs_r >= kHeuristicMinCorrelation ? c.abs_r : 0.0;
    auto lo = std::min(i, j), hi = std::max(i, j);
    if (eff > best || (eff == best && std::pair(lo, hi) < std::pair(c.a, c.b))) {
      c.a = lo;
      c.b = hi;
      c.abs_r = r;
    }
  }
  if (c.abs_r < kHeuristicMinCorrelation) c.abs_r = 0.0;
  double best = -1.0;
  for (const auto& [col, s] : f.skew) {
    double eff = std::fabs(s) >= kHeuristicMinSkew ? std::fabs(s) : 0.0;
    if (eff > best) {  // map iterates ascending, so ties keep the lowest index
      best = eff;
      c.skewed = col;
      c.skew = s;
    }
  }
  return c;
}

namespace detail {

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::vector<std::size_t> mentioned_features(const std::string& text) {
  static const std::regex tok(R"(\bf(\d+)\b)");
  std::vector<std::size_t> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), tok); it != std::sregex_iterator(); ++it) {
    std::size_t k = std::stoul((*it)[1]);
    if (k >= 1 && std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  return out;
}

inline bool asks_for_variants(const std::vector<std::string>& advice) {
  for (auto s : advice) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s.find("variant") != std::string::npos) return true;
  }
  return false;
}

}  // namespace detail

inline std::string heuristic_critic_response(const PromptFacts& f) {
  auto c = heuristic_choice(f);
  std::string a = "f" + std::to_string(c.a), b = "f" + std::to_string(c.b), s = "f" + std::to_string(c.skewed);
  std::string out = "SEMANTIC:\n";
  if (c.abs_r > 0.0) {
    out += "- " + a + " and " + b + " are the most strongly related features (|r|=" + detail::fmt4(c.abs_r) +
           "); their product and ratio can expose how they interact.\n";
  } else {
    out += "- No pair is strongly correlated; start from " + a + " and " + b +
           " and combine them through their product and ratio.\n";
  }
  out += "DISTRIBUTION:\n";
  out += "- " + s + " is the most skewed feature (skew=" + detail::fmt4(c.skew) +
         "); a log transform will compress its tail.\n";
  return out;
}

inline std::vector<std::string> heuristic_generator_candidates(const PromptFacts& f) {
  std::vector<std::string> out;
  auto add = [&](std::string s) {
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
  };
  auto tok = [](std::size_t k) { return "f" + std::to_string(k); };
  std::string advice_text;
  for (const auto& a : f.advice) advice_text += a + "\n";
  if (detail::asks_for_variants(f.advice)) {
    for (std::size_t k : detail::mentioned_features(advice_text)) {
      if (f.column_count && k > f.column_count) continue;
      for (auto op : {UnaryOp::log, UnaryOp::sqrt, UnaryOp::square, UnaryOp::reciprocal, UnaryOp::tanh}) {
        if (f.unary.count(op)) add(std::string(op_name(op)) + "(" + tok(k) + ")");
      }
      // Pair with the feature it correlates with most, else the lowest other index.
      std::size_t partner = 0;
      double best = -1.0;
      for (const auto& [i, j, r] : f.pairs) {
        if ((i == k || j == k) && r > best) {
          best = r;
          partner = i == k ? j : i;
        }
      }
      if (partner == 0) partner = k == 1 ? 2 : 1;
      if (f.binary.count(BinaryOp::mul)) add(tok(k) + "*" + tok(partner));
      if (f.binary.count(BinaryOp::div)) add(tok(k) + "/" + tok(partner));
    }
    if (!out.empty()) return out;
  }
  auto c = heuristic_choice(f);
  if (f.binary.count(BinaryOp::mul)) add(tok(c.a) + "*" + tok(c.b));
  if (f.unary.count(UnaryOp::log)) add("log(" + tok(c.skewed) + ")");
  if (f.binary.count(BinaryOp::div)) add(tok(c.a) + "/" + tok(c.b));
  if (out.empty()) add(tok(c.a));
  return out;
}

inline std::string heuristic_generator_response(const PromptFacts& f) {
  auto cands = heuristic_generator_candidates(f);
  if (cands.size() > f.k_max) cands.resize(std::max<std::size_t>(f.k_max, 1));
  std::string seq;
  for (std::size_t i = 0; i < cands.size(); ++i) seq += (i ? "," : "") + cands[i];
  return "<SEQ>" + seq + "</SEQ>";
}

class HeuristicBackend : public ChatBackend {
 public:
  std::string complete(const ChatRequest& request) override {
    PromptFacts facts = read_prompt_facts(request);
    return request.role == Role::critic ? heuristic_critic_response(facts) : heuristic_generator_response(facts);
  }
};

}  // namespace duet
