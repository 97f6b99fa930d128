#include "pipetteloc/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pipetteloc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest-augmenting-path solver for a square matrix; returns row -> col.
std::vector<int> solve_square(const std::vector<double>& a, int n) {
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = a[static_cast<size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

// Optimal total over min(rows, cols) pairs for an arbitrary rectangular
// submatrix, with no pair recovery. Dummy rows/cols carry a uniform
// sentinel, so their contribution is a fixed constant that is subtracted.
double optimal_cost(const CostMatrix& cost, const std::vector<int>& rows,
                    const std::vector<int>& cols) {
    const int r = static_cast<int>(rows.size());
    const int c = static_cast<int>(cols.size());
    if (r == 0 || c == 0) return 0.0;
    const int n = std::max(r, c);
    double sentinel = 0.0;
    for (int i : rows)
        for (int j : cols) sentinel = std::max(sentinel, cost.at(i, j));
    sentinel += 1.0;

    std::vector<double> a(static_cast<size_t>(n) * n, sentinel);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) a[static_cast<size_t>(i) * n + j] = cost.at(rows[i], cols[j]);

    const std::vector<int> row_to_col = solve_square(a, n);
    double total = 0.0;
    for (int i = 0; i < r; ++i) {
        const int j = row_to_col[i];
        if (j >= 0 && j < c) total += cost.at(rows[i], cols[j]);
    }
    return total;
}

void validate(const CostMatrix& cost) {
    if (cost.n_pred <= 0 || cost.n_true <= 0)
        throw std::invalid_argument("assignment: empty cost matrix");
    if (cost.entries.size() != static_cast<size_t>(cost.n_pred) * cost.n_true)
        throw std::invalid_argument("assignment: entry count does not match dimensions");
    for (double e : cost.entries)
        if (!std::isfinite(e)) throw std::invalid_argument("assignment: non-finite cost entry");
}

double pair_total(const CostMatrix& cost, const std::vector<std::pair<int, int>>& pairs) {
    double t = 0.0;
    for (const auto& [i, j] : pairs) t += cost.at(i, j);
    return t;
}

}  // namespace

CostMatrix cost_matrix(const std::vector<Vec2>& pred, const std::vector<Vec2>& truth) {
    if (pred.empty() || truth.empty())
        throw std::invalid_argument("cost_matrix: empty tip list");
    CostMatrix m;
    m.n_pred = static_cast<int>(pred.size());
    m.n_true = static_cast<int>(truth.size());
    m.entries.resize(static_cast<size_t>(m.n_pred) * m.n_true);
    for (int i = 0; i < m.n_pred; ++i)
        for (int j = 0; j < m.n_true; ++j) m.at(i, j) = euclidean(pred[i], truth[j]);
    return m;
}

Assignment hungarian(const CostMatrix& cost) {
    validate(cost);
    const int n = cost.n_pred;
    const int m = cost.n_true;
    const int side = std::max(n, m);
    const int want = std::min(n, m);

    double sentinel = 0.0;
    for (double e : cost.entries) sentinel = std::max(sentinel, e);
    sentinel += 1.0;

    std::vector<double> a(static_cast<size_t>(side) * side, sentinel);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) a[static_cast<size_t>(i) * side + j] = cost.at(i, j);

    const std::vector<int> row_to_col = solve_square(a, side);

    Assignment result;
    for (int i = 0; i < n; ++i) {
        const int j = row_to_col[i];
        if (j >= 0 && j < m) result.pairs.emplace_back(i, j);
    }
    std::sort(result.pairs.begin(), result.pairs.end());
    result.total_cost = pair_total(cost, result.pairs);

    if (side > 16 || static_cast<int>(result.pairs.size()) != want) return result;

    // Lexicographic refinement among equal-cost optima: fix the smallest
    // feasible (pred, true) pair row by row, re-solving the residual problem.
    const double eps = 1e-9 * (1.0 + std::abs(result.total_cost));
    std::vector<std::pair<int, int>> fixed;
    std::vector<char> col_used(m, 0);
    double fixed_cost = 0.0;
    for (int i = 0; i < n && static_cast<int>(fixed.size()) < want; ++i) {
        const int still_needed = want - static_cast<int>(fixed.size());
        std::vector<int> rest_rows;
        for (int r = i + 1; r < n; ++r) rest_rows.push_back(r);
        bool matched = false;
        for (int j = 0; j < m && !matched; ++j) {
            if (col_used[j]) continue;
            std::vector<int> rest_cols;
            for (int cjj = 0; cjj < m; ++cjj)
                if (!col_used[cjj] && cjj != j) rest_cols.push_back(cjj);
            if (static_cast<int>(std::min(rest_rows.size(), rest_cols.size())) < still_needed - 1)
                continue;
            const double cand = fixed_cost + cost.at(i, j) + optimal_cost(cost, rest_rows, rest_cols);
            if (cand <= result.total_cost + eps) {
                fixed.emplace_back(i, j);
                col_used[j] = 1;
                fixed_cost += cost.at(i, j);
                matched = true;
            }
        }
        // Row i stays unmatched only when n_pred > n_true and later rows can
        // still cover the remaining pairs; feasibility was checked above.
    }
    if (static_cast<int>(fixed.size()) == want) {
        result.pairs = std::move(fixed);
        result.total_cost = pair_total(cost, result.pairs);
    }
    return result;
}

Assignment brute_force_assignment(const CostMatrix& cost) {
    validate(cost);
    const int n = cost.n_pred;
    const int m = cost.n_true;
    const int want = std::min(n, m);
    if (want > 8)
        throw std::invalid_argument("brute_force_assignment: size guard exceeded (min dim > 8)");

    std::vector<std::pair<int, int>> best, current;
    double best_total = kInf;
    std::vector<char> col_used(m, 0);

    // Rows in ascending order; each tries columns in ascending order, then
    // (when enough rows remain) being left unmatched.
    auto consider = [&](double total) {
        if (total < best_total ||
            (total == best_total && current < best)) {
            best_total = total;
            best = current;
        }
    };
    auto recurse = [&](auto&& self, int row, int matched, double total) -> void {
        if (matched == want) {
            consider(total);
            return;
        }
        if (row == n) return;
        for (int j = 0; j < m; ++j) {
            if (col_used[j]) continue;
            col_used[j] = 1;
            current.emplace_back(row, j);
            self(self, row + 1, matched + 1, total + cost.at(row, j));
            current.pop_back();
            col_used[j] = 0;
        }
        if (n - row - 1 >= want - matched) self(self, row + 1, matched, total);
    };
    recurse(recurse, 0, 0, 0.0);

    Assignment result;
    result.pairs = std::move(best);
    result.total_cost = pair_total(cost, result.pairs);
    return result;
}

}  // namespace pipetteloc
