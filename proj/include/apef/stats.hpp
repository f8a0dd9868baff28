#pragma once

#include <span>
#include <vector>

namespace apef {

// 1-based ranks, ties receive the average of the positions they occupy.
// The ranks always sum to n(n+1)/2.
std::vector<double> average_ranks(std::span<const double> values);

double pearson(std::span<const double> a, std::span<const double> b);

// Pearson correlation of average-rank vectors. Throws
// Error(kDegenerateRanking) when either side has zero rank variance and
// Error(kInvalidParams) on length mismatch or n < 2.
double spearman(std::span<const double> a, std::span<const double> b);

// ratings[i][j] = number of raters assigning item i to category j. Every row
// must sum to the same rater count r >= 2. Throws Error(kDegenerateAgreement)
// when expected agreement is 1.
double fleiss_kappa(const std::vector<std::vector<int>>& ratings);

}  // namespace apef
