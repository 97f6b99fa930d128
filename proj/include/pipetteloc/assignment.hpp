#pragma once

#include <utility>
#include <vector>

#include "pipetteloc/types.hpp"

namespace pipetteloc {

// n_pred x n_true grid of non-negative finite costs, row-major.
struct CostMatrix {
    int n_pred = 0;
    int n_true = 0;
    std::vector<double> entries;

    double at(int i, int j) const { return entries[static_cast<size_t>(i) * n_true + j]; }
    double& at(int i, int j) { return entries[static_cast<size_t>(i) * n_true + j]; }
};

// One-to-one pairing of min(n_pred, n_true) (pred_index, true_index) pairs,
// sorted by pred index, plus the sum of matched entries.
struct Assignment {
    std::vector<std::pair<int, int>> pairs;
    double total_cost = 0.0;
};

// Euclidean distances between every pred/true pair. Throws on empty input.
CostMatrix cost_matrix(const std::vector<Vec2>& pred, const std::vector<Vec2>& truth);

// Exact minimum-cost assignment via shortest augmenting paths (Jonker-Volgenant
// style, O(n^3)). Rectangular matrices are padded to square with a large
// sentinel cost internally; sentinel pairs are dropped from the result so
// min(n_pred, n_true) pairs are returned. Among equal-cost optima the
// lexicographically smallest pair list is returned (refinement applied up to
// 16x16; beyond that the solver's deterministic solution stands).
// Throws on non-finite entries or an empty matrix.
Assignment hungarian(const CostMatrix& cost);

// Test oracle: exhaustive enumeration of all injective matchings, global
// minimum, ties broken by lexicographic pair order. Guarded to
// min(n_pred, n_true) <= 8.
Assignment brute_force_assignment(const CostMatrix& cost);

}  // namespace pipetteloc
