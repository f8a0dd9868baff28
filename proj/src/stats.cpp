#include "apef/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "apef/error.hpp"

namespace apef {

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });

  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

namespace {

struct Moments {
  double cov = 0.0;
  double var_a = 0.0;
  double var_b = 0.0;
};

Moments centered_moments(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / n;
  Moments m;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    m.cov += da * db;
    m.var_a += da * da;
    m.var_b += db * db;
  }
  return m;
}

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw Error(ErrorCode::kInvalidParams, "correlation needs two sequences of equal length >= 2");
  }
}

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b);
  const Moments m = centered_moments(a, b);
  if (m.var_a <= 0.0 || m.var_b <= 0.0) {
    throw Error(ErrorCode::kDegenerateRanking, "zero variance in correlation input");
  }
  return std::clamp(m.cov / std::sqrt(m.var_a * m.var_b), -1.0, 1.0);
}

double spearman(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b);
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  return pearson(ra, rb);
}

double fleiss_kappa(const std::vector<std::vector<int>>& ratings) {
  if (ratings.empty() || ratings.front().empty()) {
    throw Error(ErrorCode::kInvalidParams, "fleiss_kappa needs at least one item and one category");
  }
  const std::size_t categories = ratings.front().size();
  const int raters = std::accumulate(ratings.front().begin(), ratings.front().end(), 0);
  if (raters < 2) throw Error(ErrorCode::kInvalidParams, "fleiss_kappa needs at least 2 raters per item");

  std::vector<double> category_totals(categories, 0.0);
  double p_bar = 0.0;
  for (const auto& row : ratings) {
    if (row.size() != categories) throw Error(ErrorCode::kInvalidParams, "ragged rating matrix");
    int row_sum = 0;
    double agree = 0.0;
    for (std::size_t j = 0; j < categories; ++j) {
      if (row[j] < 0) throw Error(ErrorCode::kInvalidParams, "negative rating count");
      row_sum += row[j];
      agree += static_cast<double>(row[j]) * (row[j] - 1);
      category_totals[j] += row[j];
    }
    if (row_sum != raters) throw Error(ErrorCode::kInvalidParams, "every item must have the same number of raters");
    p_bar += agree / (static_cast<double>(raters) * (raters - 1));
  }
  const double items = static_cast<double>(ratings.size());
  p_bar /= items;

  double p_e = 0.0;
  for (double total : category_totals) {
    const double pj = total / (items * raters);
    p_e += pj * pj;
  }
  if (p_e >= 1.0) throw Error(ErrorCode::kDegenerateAgreement, "expected agreement is 1");
  return (p_bar - p_e) / (1.0 - p_e);
}

}  // namespace apef
