#pragma once
// Distribution summary of a feature space. This is what the critic sees
// instead of raw rows.
//
// All sums are taken over sorted terms, which makes every statistic
// bit-identical under row permutation.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "duet/table.hpp"

namespace duet {

inline constexpr double kLowVarianceStd = 1e-8;
inline constexpr std::size_t kMaxListedPairs = 10;

struct FeatureStats {
  double mean = 0.0;
  double std = 0.0;  // population (1/n)
  double min = 0.0;
  double max = 0.0;
  double skewness = 0.0;  // Fisher g1, bias-uncorrected; 0 for constant columns
  std::size_t distinct_count = 0;
  double nan_fraction = 0.0;  // before imputation

  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

struct CorrelatedPair {
  std::size_t i = 0;  // 0-based, i < j
  std::size_t j = 0;
  double abs_r = 0.0;

  friend bool operator==(const CorrelatedPair&, const CorrelatedPair&) = default;
};

struct SpaceStats {
  std::size_t row_count = 0;
  std::size_t column_count = 0;
  std::vector<std::vector<double>> abs_correlation;
  std::vector<CorrelatedPair> top_pairs;  // descending |r|, at most 10
  std::vector<std::size_t> low_variance;  // std < 1e-8

  friend bool operator==(const SpaceStats&, const SpaceStats&) = default;
};

struct Summary {
  std::vector<FeatureStats> features;
  SpaceStats space;

  friend bool operator==(const Summary&, const Summary&) = default;
};

namespace detail {

inline double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

}  // namespace detail

inline FeatureStats column_stats(const std::vector<double>& v, double nan_fraction = 0.0) {
  FeatureStats s;
  const double n = static_cast<double>(v.size());
  std::vector<double> terms(v);
  s.mean = detail::sorted_sum(terms) / n;
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  s.min = *lo;
  s.max = *hi;
  // Rounding can push the mean a hair outside [min, max] for near-constant data.
  s.mean = std::clamp(s.mean, s.min, s.max);
  for (std::size_t k = 0; k < v.size(); ++k) terms[k] = (v[k] - s.mean) * (v[k] - s.mean);
  double m2 = detail::sorted_sum(terms) / n;
  s.std = std::sqrt(m2);
  if (s.std >= kLowVarianceStd) {
    for (std::size_t k = 0; k < v.size(); ++k) {
      double d = v[k] - s.mean;
      terms[k] = d * d * d;
    }
    double m3 = detail::sorted_sum(terms) / n;
    s.skewness = m3 / std::pow(m2, 1.5);
  }
  std::unordered_set<double> distinct(v.begin(), v.end());
  s.distinct_count = distinct.size();
  s.nan_fraction = nan_fraction;
  return s;
}

inline Summary summarize(const FeatureTable& table) {
  Summary out;
  const std::size_t d = table.cols();
  const std::size_t n = table.rows();
  for (std::size_t c = 0; c < d; ++c) {
    out.features.push_back(column_stats(table.column(c), table.info(c).missing_fraction));
  }
  auto& sp = out.space;
  sp.row_count = n;
  sp.column_count = d;
  sp.abs_correlation.assign(d, std::vector<double>(d, 0.0));
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < d; ++i) {
    sp.abs_correlation[i][i] = 1.0;
    const auto& fi = out.features[i];
    if (fi.std < kLowVarianceStd) sp.low_variance.push_back(i);
    for (std::size_t j = i + 1; j < d; ++j) {
      const auto& fj = out.features[j];
      double r = 0.0;
      if (fi.std >= kLowVarianceStd && fj.std >= kLowVarianceStd) {
        const auto& x = table.column(i);
        const auto& y = table.column(j);
        for (std::size_t k = 0; k < n; ++k) terms[k] = (x[k] - fi.mean) * (y[k] - fj.mean);
        double cov = detail::sorted_sum(terms) / static_cast<double>(n);
        r = std::min(1.0, std::fabs(cov / (fi.std * fj.std)));
      }
      sp.abs_correlation[i][j] = sp.abs_correlation[j][i] = r;
      sp.top_pairs.push_back({i, j, r});
    }
  }
  std::stable_sort(sp.top_pairs.begin(), sp.top_pairs.end(),
                   [](const CorrelatedPair& a, const CorrelatedPair& b) { return a.abs_r > b.abs_r; });
  if (sp.top_pairs.size() > kMaxListedPairs) sp.top_pairs.resize(kMaxListedPairs);
  return out;
}

namespace detail {

inline std::string sig4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace detail

// Compact text block for prompts. Columns are referred to by their feature
// tokens (f1, f2, ...); names and descriptions are listed elsewhere.
inline std::string render_stats(const Summary& s) {
  using detail::sig4;
  std::string out;
  out += "rows=" + std::to_string(s.space.row_count) + " columns=" + std::to_string(s.space.column_count) + "\n";
  out += "per-feature statistics:\n";
  for (std::size_t c = 0; c < s.features.size(); ++c) {
    const auto& f = s.features[c];
    std::string line = "f" + std::to_string(c + 1) + " mean=" + sig4(f.mean) + " std=" + sig4(f.std) +
                       " min=" + sig4(f.min) + " max=" + sig4(f.max) + " skew=" + sig4(f.skewness) +
                       " distinct=" + std::to_string(f.distinct_count) + " missing=" + sig4(f.nan_fraction);
    if (f.std < kLowVarianceStd) line += " constant";
    out += line + "\n";
  }
  out += "most correlated pairs:\n";
  for (const auto& p : s.space.top_pairs) {
    out += "f" + std::to_string(p.i + 1) + "~f" + std::to_string(p.j + 1) + " |r|=" + sig4(p.abs_r) + "\n";
  }
  out += "low variance:";
  if (s.space.low_variance.empty()) out += " none";
  for (auto c : s.space.low_variance) out += " f" + std::to_string(c + 1);
  out += "\n";
  return out;
}

inline nlohmann::json to_json(const FeatureStats& f) {
  return {{"mean", f.mean},       {"std", f.std},
          {"min", f.min},         {"max", f.max},
          {"skewness", f.skewness}, {"distinct_count", f.distinct_count},
          {"nan_fraction", f.nan_fraction}};
}

inline nlohmann::json to_json(const Summary& s, const FeatureTable* table = nullptr) {
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t c = 0; c < s.features.size(); ++c) {
    auto j = to_json(s.features[c]);
    j["token"] = "f" + std::to_string(c + 1);
    if (table) j["name"] = table->name(c);
    features.push_back(std::move(j));
  }
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : s.space.top_pairs) pairs.push_back({{"i", p.i + 1}, {"j", p.j + 1}, {"abs_r", p.abs_r}});
  nlohmann::json low = nlohmann::json::array();
  for (auto c : s.space.low_variance) low.push_back(c + 1);
  return {{"row_count", s.space.row_count},
          {"column_count", s.space.column_count},
          {"features", features},
          {"top_correlated_pairs", pairs},
          {"low_variance_features", low},
          {"abs_correlation", s.space.abs_correlation}};
}

}  // namespace duet
