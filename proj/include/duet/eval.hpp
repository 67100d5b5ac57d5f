#pragma once
// Downstream evaluation. This is the only place labels are consumed.
//
// Classifiers are deliberately small and fully deterministic:
//   - CART with Gini impurity. Thresholds are midpoints between consecutive
//     distinct values; a row goes left when x <= threshold. Ties go to the
//     lowest feature index, then the lowest threshold.
//   - Random forest: bootstrap rows and ceil(sqrt(d)) features per split,
//     all drawn from SplitMix64 streams derived from the forest seed.
//   - k-NN: Euclidean distance on features z-scored with training stats.
// Majority votes break ties toward the lowest class index. Training rows
// are put into a canonical order first, so shuffling the training set does
// not change any prediction.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "duet/refine.hpp"
#include "duet/rng.hpp"
#include "duet/table.hpp"

namespace duet {

enum class ClassifierKind { decision_tree, random_forest, knn };

inline constexpr std::string_view kind_name(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::decision_tree: return "decision_tree";
    case ClassifierKind::random_forest: return "random_forest";
    case ClassifierKind::knn: return "knn";
  }
  return "?";
}

inline ClassifierKind kind_from_name(std::string_view s) {
  if (s == "dt" || s == "tree" || s == "decision_tree") return ClassifierKind::decision_tree;
  if (s == "rf" || s == "forest" || s == "random_forest") return ClassifierKind::random_forest;
  if (s == "knn") return ClassifierKind::knn;
  throw std::invalid_argument("unknown model '" + std::string(s) + "' (expected dt, rf or knn)");
}

struct TreeParams {
  std::size_t max_depth = 8;
  std::size_t min_samples_leaf = 2;
};

struct ClassifierSpec {
  ClassifierKind kind = ClassifierKind::random_forest;
  TreeParams tree;
  std::size_t n_trees = 100;
  std::uint64_t seed = 0;
  std::size_t k = 5;

  void validate() const {
    if (tree.max_depth < 1 || tree.min_samples_leaf < 1 || n_trees < 1 || k < 1) {
      throw std::invalid_argument("classifier counts must be >= 1");
    }
  }
};

using Columns = std::vector<std::vector<double>>;

inline int vote(const std::vector<std::size_t>& counts) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < counts.size(); ++c) {
    if (counts[c] > counts[best]) best = c;
  }
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// Decision tree

class DecisionTree {
 public:
  struct Node {
    int feature = -1;  // -1 for leaves
    double threshold = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
    int prediction = 0;
  };

  DecisionTree(TreeParams params, std::size_t n_classes) : params_(params), n_classes_(n_classes) {}

  // `rows` may contain repeats (bootstrap). When `rng` is set, each split
  // considers `max_features` features drawn without replacement.
  void fit(const Columns& x, const std::vector<int>& y, std::vector<std::size_t> rows, SplitMix64* rng = nullptr,
           std::size_t max_features = 0) {
    nodes_.clear();
    x_ = &x;
    y_ = &y;
    rng_ = rng;
    max_features_ = max_features == 0 ? x.size() : std::min(max_features, x.size());
    build(std::move(rows), 0);
    x_ = nullptr;
    y_ = nullptr;
    rng_ = nullptr;
  }

  int predict(const Columns& x, std::size_t row) const {
    std::size_t n = 0;
    while (nodes_[n].feature >= 0) {
      n = x[static_cast<std::size_t>(nodes_[n].feature)][row] <= nodes_[n].threshold ? nodes_[n].left : nodes_[n].right;
    }
    return nodes_[n].prediction;
  }

  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::size_t build(std::vector<std::size_t> rows, std::size_t depth) {
    std::vector<std::size_t> counts(n_classes_, 0);
    for (auto r : rows) ++counts[static_cast<std::size_t>((*y_)[r])];
    std::size_t id = nodes_.size();
    nodes_.push_back({});
    nodes_[id].prediction = vote(counts);
    bool pure = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) <= 1;
    if (pure || depth >= params_.max_depth || rows.size() < 2 * params_.min_samples_leaf) return id;

    auto split = best_split(rows, counts);
    if (split.feature < 0) return id;
    std::vector<std::size_t> left, right;
    const auto& col = (*x_)[static_cast<std::size_t>(split.feature)];
    for (auto r : rows) (col[r] <= split.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    std::size_t l = build(std::move(left), depth + 1);
    std::size_t rr = build(std::move(right), depth + 1);
    nodes_[id].feature = split.feature;
    nodes_[id].threshold = split.threshold;
    nodes_[id].left = l;
    nodes_[id].right = rr;
    return id;
  }

  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double score = -1.0;  // sum_c nl_c^2/nl + sum_c nr_c^2/nr, higher is purer
  };

  std::vector<std::size_t> candidate_features() {
    std::vector<std::size_t> f(x_->size());
    std::iota(f.begin(), f.end(), 0);
    if (rng_ && max_features_ < f.size()) {
      // Partial Fisher-Yates from the front.
      for (std::size_t i = 0; i < max_features_; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng_->below(f.size() - i));
        std::swap(f[i], f[j]);
      }
      f.resize(max_features_);
      std::sort(f.begin(), f.end());
    }
    return f;
  }

  Split best_split(const std::vector<std::size_t>& rows, const std::vector<std::size_t>& total) {
    Split best;
    const std::size_t n = rows.size();
    const std::size_t min_leaf = params_.min_samples_leaf;
    std::vector<std::size_t> order(rows);
    std::vector<std::size_t> left(n_classes_);
    for (std::size_t f : candidate_features()) {
      const auto& col = (*x_)[f];
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return col[a] < col[b]; });
      std::fill(left.begin(), left.end(), 0);
      // sum of squared class counts on each side, updated incrementally
      double sq_left = 0.0;
      double sq_right = 0.0;
      for (auto c : total) sq_right += static_cast<double>(c) * static_cast<double>(c);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        auto cls = static_cast<std::size_t>((*y_)[order[i]]);
        double lc = static_cast<double>(left[cls]);
        double rc = static_cast<double>(total[cls] - left[cls]);
        sq_left += 2.0 * lc + 1.0;
        sq_right -= 2.0 * rc - 1.0;
        ++left[cls];
        double a = col[order[i]];
        double b = col[order[i + 1]];
        if (!(a < b)) continue;
        std::size_t nl = i + 1;
        std::size_t nr = n - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        double score = sq_left / static_cast<double>(nl) + sq_right / static_cast<double>(nr);
        if (score > best.score + 1e-12 * std::fabs(best.score)) {
          double mid = a + (b - a) / 2.0;
          if (!(mid < b)) mid = a;
          best = {static_cast<int>(f), mid, score};
        }
      }
    }
    return best;
  }

  TreeParams params_;
  std::size_t n_classes_;
  std::vector<Node> nodes_;
  const Columns* x_ = nullptr;
  const std::vector<int>* y_ = nullptr;
  SplitMix64* rng_ = nullptr;
  std::size_t max_features_ = 0;
};

// ---------------------------------------------------------------------------
// Training and prediction

struct Prediction {
  std::vector<int> predictions;
  double accuracy = 0.0;
  bool degenerate_train = false;  // single class in training data
};

namespace detail {

// Canonical order: lexicographic on (features..., label).
inline std::vector<std::size_t> canonical_rows(const Columns& x, const std::vector<int>& y) {
  std::vector<std::size_t> rows(y.size());
  std::iota(rows.begin(), rows.end(), 0);
  std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    for (const auto& col : x) {
      if (col[a] != col[b]) return col[a] < col[b];
    }
    return y[a] < y[b];
  });
  return rows;
}

inline Columns reorder(const Columns& x, const std::vector<std::size_t>& rows) {
  Columns out(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) {
    out[c].reserve(rows.size());
    for (auto r : rows) out[c].push_back(x[c][r]);
  }
  return out;
}

inline std::vector<int> predict_knn(const Columns& train, const std::vector<int>& y, const Columns& test,
                                    std::size_t k, std::size_t n_classes) {
  const std::size_t d = train.size();
  const std::size_t n = y.size();
  std::vector<double> mean(d, 0.0), scale(d, 1.0);
  for (std::size_t c = 0; c < d; ++c) {
    auto s = column_stats(train[c]);
    mean[c] = s.mean;
    scale[c] = s.std > 0.0 ? s.std : 1.0;
  }
  k = std::min(k, n);
  const std::size_t m = test.empty() ? 0 : test.front().size();
  std::vector<int> out(m);
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t q = 0; q < m; ++q) {
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double diff = (train[c][r] - test[c][q]) / scale[c];
        s += diff * diff;
      }
      dist[r] = {s, r};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::vector<std::size_t> counts(n_classes, 0);
    for (std::size_t i = 0; i < k; ++i) ++counts[static_cast<std::size_t>(y[dist[i].second])];
    out[q] = vote(counts);
  }
  return out;
}

}  // namespace detail

inline double accuracy(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == predicted[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

inline Prediction train_predict(const ClassifierSpec& spec, const Columns& train_x, const std::vector<int>& train_y,
                                const Columns& test_x, const std::vector<int>& test_y) {
  spec.validate();
  if (train_y.empty()) throw DataError(DataError::Kind::empty, "no training rows");
  Prediction out;
  const std::size_t m = test_y.size();
  int max_label = 0;
  for (int v : train_y) max_label = std::max(max_label, v);
  for (int v : test_y) max_label = std::max(max_label, v);
  const auto n_classes = static_cast<std::size_t>(max_label) + 1;

  bool single = std::all_of(train_y.begin(), train_y.end(), [&](int v) { return v == train_y.front(); });
  if (single) {
    out.degenerate_train = true;
    out.predictions.assign(m, train_y.front());
    out.accuracy = accuracy(test_y, out.predictions);
    return out;
  }

  auto order = detail::canonical_rows(train_x, train_y);
  Columns x = detail::reorder(train_x, order);
  std::vector<int> y;
  for (auto r : order) y.push_back(train_y[r]);
  const std::size_t n = y.size();

  switch (spec.kind) {
    case ClassifierKind::decision_tree: {
      DecisionTree tree(spec.tree, n_classes);
      std::vector<std::size_t> rows(n);
      std::iota(rows.begin(), rows.end(), 0);
      tree.fit(x, y, std::move(rows));
      for (std::size_t q = 0; q < m; ++q) out.predictions.push_back(tree.predict(test_x, q));
      break;
    }
    case ClassifierKind::random_forest: {
      const auto max_features = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(x.size()))));
      SplitMix64 master(spec.seed);
      std::vector<std::vector<std::size_t>> votes(m, std::vector<std::size_t>(n_classes, 0));
      for (std::size_t t = 0; t < spec.n_trees; ++t) {
        SplitMix64 rng(master.next());
        std::vector<std::size_t> rows(n);
        for (auto& r : rows) r = static_cast<std::size_t>(rng.below(n));
        DecisionTree tree(spec.tree, n_classes);
        tree.fit(x, y, std::move(rows), &rng, max_features);
        for (std::size_t q = 0; q < m; ++q) ++votes[q][static_cast<std::size_t>(tree.predict(test_x, q))];
      }
      for (const auto& v : votes) out.predictions.push_back(vote(v));
      break;
    }
    case ClassifierKind::knn:
      out.predictions = detail::predict_knn(x, y, test_x, spec.k, n_classes);
      break;
  }
  out.accuracy = accuracy(test_y, out.predictions);
  return out;
}

inline Prediction train_predict(const ClassifierSpec& spec, const LabeledSplit& split) {
  return train_predict(spec, split.train_x.columns(), split.train_y, split.test_x.columns(), split.test_y);
}

// ---------------------------------------------------------------------------
// Original vs transformed comparison

struct EvalCell {
  std::string variant;  // "original" or "transformed"
  ClassifierSpec spec;
  std::vector<double> accuracies;  // per seed
  double mean_accuracy = 0.0;
  double train_predict_s = 0.0;
  bool degenerate_train = false;
};

struct EvalReport {
  std::vector<std::uint64_t> seeds;
  double test_fraction = 0.25;
  double transform_s = 0.0;  // supplied by the caller when known
  std::vector<EvalCell> cells;

  const EvalCell* find(std::string_view variant, ClassifierKind kind) const {
    for (const auto& c : cells) {
      if (c.variant == variant && c.spec.kind == kind) return &c;
    }
    return nullptr;
  }
};

inline EvalReport compare(const FeatureTable& original, const FeatureTable& transformed, const std::vector<int>& labels,
                          const std::vector<ClassifierSpec>& specs, const std::vector<std::uint64_t>& seeds,
                          double test_fraction = 0.25) {
  if (original.rows() != labels.size() || transformed.rows() != labels.size()) {
    throw DataError(DataError::Kind::schema, "tables and labels are not row aligned (" + std::to_string(original.rows()) +
                                                 ", " + std::to_string(transformed.rows()) + ", " +
                                                 std::to_string(labels.size()) + ")");
  }
  if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
  EvalReport report;
  report.seeds = seeds;
  report.test_fraction = test_fraction;
  const std::pair<const char*, const FeatureTable*> variants[] = {{"original", &original},
                                                                  {"transformed", &transformed}};
  for (const auto& [name, table] : variants) {
    for (const auto& spec : specs) report.cells.push_back({name, spec, {}, 0.0, 0.0, false});
  }
  for (auto seed : seeds) {
    SplitIndices idx = split_indices(labels, test_fraction, seed);
    std::size_t cell = 0;
    for (const auto& [name, table] : variants) {
      LabeledSplit s = apply_split(*table, labels, idx);
      for (const auto& base : specs) {
        ClassifierSpec spec = base;
        spec.seed = seed;
        auto t0 = std::chrono::steady_clock::now();
        Prediction p = train_predict(spec, s);
        auto& c = report.cells[cell++];
        c.train_predict_s += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        c.accuracies.push_back(p.accuracy);
        c.degenerate_train = c.degenerate_train || p.degenerate_train;
      }
    }
  }
  for (auto& c : report.cells) {
    c.mean_accuracy = std::accumulate(c.accuracies.begin(), c.accuracies.end(), 0.0) /
                      static_cast<double>(c.accuracies.size());
  }
  return report;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"variant", c.variant},
                     {"model", kind_name(c.spec.kind)},
                     {"accuracy", c.mean_accuracy},
                     {"per_seed_accuracy", c.accuracies},
                     {"train_predict_s", c.train_predict_s},
                     {"degenerate_train", c.degenerate_train}});
  }
  return {{"seeds", r.seeds},
          {"split", {{"kind", "stratified"}, {"test_fraction", r.test_fraction}}},
          {"transform_s", r.transform_s},
          {"cells", cells}};
}

// Aligned text table: one row per model, Original vs Transformed columns.
inline std::string to_text(const EvalReport& r) {
  std::vector<ClassifierKind> kinds;
  for (const auto& c : r.cells) {
    if (std::find(kinds.begin(), kinds.end(), c.spec.kind) == kinds.end()) kinds.push_back(c.spec.kind);
  }
  char buf[128];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-14s %9s %12s\n", "model", "Original", "Transformed");
  out += buf;
  for (auto k : kinds) {
    const EvalCell* o = r.find("original", k);
    const EvalCell* t = r.find("transformed", k);
    std::snprintf(buf, sizeof buf, "%-14s %9.3f %12.3f\n", std::string(kind_name(k)).c_str(),
                  o ? o->mean_accuracy : 0.0, t ? t->mean_accuracy : 0.0);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Timing of a transformation run

struct TimingProfile {
  std::vector<IterationTiming> iterations;
  IterationTiming totals;
  double total_s = 0.0;

  // Coefficient of variation (population std / mean) of per-round totals.
  double iteration_cv() const {
    if (iterations.empty()) return 0.0;
    std::vector<double> t;
    for (const auto& i : iterations) t.push_back(i.total_s());
    double mean = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
    if (mean <= 0.0) return 0.0;
    double ss = 0.0;
    for (double v : t) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(t.size())) / mean;
  }
};

inline TimingProfile timing_profile(const RunResult& run) {
  TimingProfile p;
  for (const auto& it : run.iterations) {
    p.iterations.push_back(it.timing);
    p.totals.diagnosis_s += it.timing.diagnosis_s;
    p.totals.critic_s += it.timing.critic_s;
    p.totals.generator_s += it.timing.generator_s;
    p.totals.apply_s += it.timing.apply_s;
  }
  p.total_s = p.totals.total_s();
  return p;
}

inline nlohmann::json to_json(const TimingProfile& p) {
  nlohmann::json its = nlohmann::json::array();
  for (const auto& t : p.iterations) its.push_back(to_json(t));
  return {{"iterations", its}, {"totals", to_json(p.totals)}, {"total_s", p.total_s}, {"iteration_cv", p.iteration_cv()}};
}

}  // namespace duet
