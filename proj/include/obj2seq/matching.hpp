#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "obj2seq/common.hpp"

namespace obj2seq {

// Finite sentinel marking a forbidden prediction/ground-truth pairing.
inline constexpr double kExcludedCost = 1e30;

// rows = predictions, cols = ground-truth instances
struct CostMatrix {
    int rows = 0, cols = 0;
    std::vector<double> data;

    CostMatrix() = default;
    CostMatrix(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}
    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

struct MatchAssignment {
    std::vector<std::pair<int, int>> pairs;  // (pred_index, gt_index), sorted by pred
    double total_cost = 0.0;
};

namespace detail {

// O(n^3) shortest augmenting path assignment on a square matrix.
// Returns row assigned to each column.
inline std::vector<int> solve_square(const std::vector<double>& cost, int n) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost[static_cast<size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_of_col(n, -1);
    for (int j = 1; j <= n; ++j) row_of_col[j - 1] = p[j] - 1;
    return row_of_col;
}

// Minimum total cost of assigning every column to a distinct row,
// rows.size() >= cols.size(). Rectangular case handled by zero-cost padding.
inline double min_assignment_cost(const CostMatrix& m, const std::vector<int>& rows,
                                  const std::vector<int>& cols) {
    int n = static_cast<int>(rows.size());
    if (cols.empty()) return 0.0;
    std::vector<double> sq(static_cast<size_t>(n) * n, 0.0);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < static_cast<int>(cols.size()); ++c)
            sq[static_cast<size_t>(r) * n + c] = m.at(rows[r], cols[c]);
    auto row_of_col = solve_square(sq, n);
    double total = 0.0;
    for (int c = 0; c < static_cast<int>(cols.size()); ++c)
        total += m.at(rows[row_of_col[c]], cols[c]);
    return total;
}

}  // namespace detail

// Optimal bipartite assignment of every ground-truth column to a distinct
// prediction row. Among equal-cost optima the lexicographically smallest
// pair list is returned, which makes matching reproducible under ties.
inline MatchAssignment hungarian(const CostMatrix& cost) {
    if (cost.rows < cost.cols)
        throw MatchingError("hungarian: " + std::to_string(cost.rows) +
                            " predictions cannot cover " + std::to_string(cost.cols) +
                            " ground-truth instances");
    for (double v : cost.data)
        if (std::isnan(v)) throw ContractError("hungarian: NaN cost entry");
    for (int c = 0; c < cost.cols; ++c) {
        bool feasible = false;
        for (int r = 0; r < cost.rows; ++r) feasible = feasible || cost.at(r, c) < kExcludedCost / 2;
        if (!feasible)
            throw MatchingError("hungarian: ground-truth index " + std::to_string(c) +
                                " has no admissible prediction");
    }

    MatchAssignment out;
    if (cost.cols == 0) return out;

    std::vector<int> all_rows(cost.rows), remaining_cols(cost.cols);
    for (int r = 0; r < cost.rows; ++r) all_rows[r] = r;
    for (int c = 0; c < cost.cols; ++c) remaining_cols[c] = c;

    double budget = detail::min_assignment_cost(cost, all_rows, remaining_cols);
    const double tol = 1e-9 * std::max(1.0, std::abs(budget));

    std::vector<int> rows_left = all_rows;
    for (int r = 0; r < cost.rows && !remaining_cols.empty(); ++r) {
        rows_left.erase(rows_left.begin());  // row r no longer available below
        int chosen = -1;
        for (size_t ci = 0; ci < remaining_cols.size(); ++ci) {
            int c = remaining_cols[ci];
            if (cost.at(r, c) >= kExcludedCost / 2) continue;
            std::vector<int> rest_cols = remaining_cols;
            rest_cols.erase(rest_cols.begin() + static_cast<long>(ci));
            if (static_cast<int>(rest_cols.size()) > static_cast<int>(rows_left.size())) break;
            double rest = detail::min_assignment_cost(cost, rows_left, rest_cols);
            if (cost.at(r, c) + rest <= budget + tol) {
                chosen = c;
                budget -= cost.at(r, c);
                remaining_cols = rest_cols;
                break;
            }
        }
        if (chosen < 0) {
            // leaving r unmatched must still be optimal
            if (static_cast<int>(remaining_cols.size()) > static_cast<int>(rows_left.size()))
                throw MatchingError("hungarian: no optimal completion found");
        } else {
            out.pairs.emplace_back(r, chosen);
        }
    }

    double total = 0.0;
    std::vector<std::pair<int, int>> by_gt = out.pairs;
    std::sort(by_gt.begin(), by_gt.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    for (const auto& [r, c] : by_gt) total += cost.at(r, c);
    out.total_cost = total;
    return out;
}

}  // namespace obj2seq
