// Parses a sequence, evaluates it on a tiny table and applies it.
#include <iostream>

#include "duet/refine.hpp"

int main(int argc, char** argv) {
  using namespace duet;
  std::string text = argc > 1 ? argv[1] : "f1*f2, log(f3), f1/(f2-f2), f1*f2";
  auto ops = OperatorSet::standard();
  TransformSequence seq;
  try {
    seq = parse(text, ops);
  } catch (const ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  auto table = FeatureTable::from_columns({"a", "b", "c"}, {{1, 2, 3, 4}, {0.5, -1, 2, 8}, {10, 100, 0, 1e-3}});
  for (const auto& e : seq.exprs) {
    auto r = evaluate(e, table.columns(), table.rows());
    std::cout << render(e) << " ->";
    for (double v : r.values) std::cout << ' ' << v;
    std::cout << "  (non-finite " << r.non_finite << ")\n";
  }
  auto applied = apply_sequence(table, seq);
  std::cout << "columns now:";
  for (const auto& n : applied.table.names()) std::cout << ' ' << n;
  std::cout << "\n";
  for (const auto& rej : applied.rejections) std::cout << "rejected " << rej.expr << ": " << reason_name(rej.reason) << "\n";
}
