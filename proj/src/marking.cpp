#include "marknmt/marking.hpp"

#include <cmath>

#include "marknmt/error.hpp"

namespace marknmt {

std::vector<std::vector<int>> lcs_table(const TokenSeq& a, const TokenSeq& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::vector<int>> table(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      table[i][j] = a[i - 1] == b[j - 1]
                        ? table[i - 1][j - 1] + 1
                        : std::max(table[i - 1][j], table[i][j - 1]);
  return table;
}

int lcs_length(const TokenSeq& a, const TokenSeq& b) {
  return lcs_table(a, b)[a.size()][b.size()];
}

MarkedHypothesis mark_hypothesis(const TokenSeq& hyp, const TokenSeq& ref,
                                 double delta_plus, double delta_minus) {
  if (!std::isfinite(delta_plus) || !std::isfinite(delta_minus))
    throw NumericError("mark_hypothesis: delta weights must be finite");

  MarkedHypothesis out;
  out.hyp = hyp;
  out.marks.assign(hyp.size(), 0);

  const auto table = lcs_table(hyp, ref);
  std::size_t i = hyp.size(), j = ref.size();
  while (i > 0 && j > 0) {
    if (hyp[i - 1] == ref[j - 1]) {
      out.marks[i - 1] = 1;
      --i;
      --j;
    } else if (table[i - 1][j] >= table[i][j - 1]) {
      --i;  // tie-break: drop a hypothesis token first
    } else {
      --j;
    }
  }

  out.weights.resize(hyp.size());
  for (std::size_t k = 0; k < hyp.size(); ++k)
    out.weights[k] = out.marks[k] ? delta_plus : delta_minus;
  return out;
}

}  // namespace marknmt
