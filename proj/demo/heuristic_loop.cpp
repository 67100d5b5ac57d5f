// Runs the offline critic/generator loop on the bundled sample and compares accuracy.
#include <iostream>

#include "duet/eval.hpp"
#include "duet/heuristic.hpp"
#include "duet/refine.hpp"

int main() {
  using namespace duet;
  std::string root = DUET_SOURCE_DIR;
  auto ds = load_csv(root + "/data/sample/credit.csv", root + "/data/sample/credit.meta.json");
  HeuristicBackend backend;
  LoopConfig cfg;
  auto result = run(ds.table, ds.meta, OperatorSet::standard(), cfg, backend);
  for (const auto& it : result.iterations) {
    std::cout << "round " << it.index << ": ";
    for (const auto& a : it.accepted) std::cout << render(a) << ' ';
    std::cout << "\n";
  }
  std::vector<ClassifierSpec> specs(3);
  specs[0].kind = ClassifierKind::decision_tree;
  specs[1].kind = ClassifierKind::random_forest;
  specs[2].kind = ClassifierKind::knn;
  std::cout << to_text(compare(ds.table, result.table, ds.labels, specs, {0, 1, 2, 3, 4}));
}
