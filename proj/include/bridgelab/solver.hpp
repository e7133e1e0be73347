#ifndef BRIDGELAB_SOLVER_HPP
#define BRIDGELAB_SOLVER_HPP

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "grid.hpp"
#include "kernels.hpp"
#include "threads.hpp"

namespace bridgelab {

struct SchrodingerProblem {
    ReferenceProcess process;
    Density mu;
    Density nu;
};

// R[i][j] = m(x_i) p_1(x_i, x_j) w_i w_j, the reference path law seen at times {0,1}
inline Mat build_joint_reference(const ReferenceProcess& process, double horizon = 1.0) {
    TransitionKernel k = build_kernel(process, horizon);
    const Vec w = process.grid.weights();
    return Vec(process.m_values.array() * w.array()).asDiagonal() * k.values * w.asDiagonal();
}

struct SinkhornOptions {
    double tol = 1e-10;   // sup-norm of the log marginal ratio
    int max_iter = 100000;
    std::optional<Vec> init_log_f;
    std::optional<Vec> init_log_g;
};

struct SchrodingerSolution {
    Grid grid;
    Field f, g;       // scaling factors; these are the continuous Schrodinger potentials
    Vec log_f, log_g;
    Mat coupling;     // optimal pi as point masses (quadrature weights included)
    double cost = 0.0;    // KL(pi | R) = h_f0 + h_b1
    double h_f0 = 0.0;    // integral of log f against mu
    double h_b1 = 0.0;    // integral of log g against nu
    int iterations = 0;
    double final_marginal_error = 0.0;
    std::vector<double> marginal_error_trace;  // L1 row-marginal error per sweep
    bool improper = false;
    bool converged = false;
};

namespace detail {

inline double logsumexp_row(const Mat& logR, const Vec& add, int i) {
    double m = -std::numeric_limits<double>::infinity();
    const int n = static_cast<int>(add.size());
    for (int j = 0; j < n; ++j) m = std::max(m, logR(i, j) + add[j]);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::exp(logR(i, j) + add[j] - m);
    return m + std::log(s);
}

inline double logsumexp_col(const Mat& logR, const Vec& add, int j) {
    double m = -std::numeric_limits<double>::infinity();
    const int n = static_cast<int>(add.size());
    for (int i = 0; i < n; ++i) m = std::max(m, logR(i, j) + add[i]);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(logR(i, j) + add[i] - m);
    return m + std::log(s);
}

}  // namespace detail

// log-domain iterative proportional fitting on the two marginal constraints
inline SchrodingerSolution sinkhorn(const SchrodingerProblem& problem,
                                    const SinkhornOptions& opts = {}) {
    const Grid& grid = problem.process.grid;
    require_same_grid(grid, problem.mu.grid, "sinkhorn");
    require_same_grid(grid, problem.nu.grid, "sinkhorn");
    const int n = grid.n;
    const Vec w = grid.weights();

    const Vec a = problem.mu.values.array() * w.array();  // target point masses
    const Vec b = problem.nu.values.array() * w.array();

    // exact zeros stay -inf: flooring them would add phantom reference mass
    // that distorts the solution once the potentials grow past the floor gap
    const double ninf = -std::numeric_limits<double>::infinity();
    Mat R = build_joint_reference(problem.process);
    Mat logR(n, n);
    parallel_for(n, [&](int i) {
        for (int j = 0; j < n; ++j) logR(i, j) = R(i, j) > 0 ? std::log(R(i, j)) : ninf;
    });
    Vec log_a(n), log_b(n);
    for (int i = 0; i < n; ++i) log_a[i] = a[i] > 0 ? std::log(a[i]) : ninf;
    for (int j = 0; j < n; ++j) log_b[j] = b[j] > 0 ? std::log(b[j]) : ninf;

    Vec log_u = opts.init_log_f.value_or(Vec::Zero(n));
    Vec log_v = opts.init_log_g.value_or(Vec::Zero(n));
    if (log_u.size() != n || log_v.size() != n)
        throw std::invalid_argument("warm start has wrong length");

    SchrodingerSolution sol;
    sol.grid = grid;
    sol.improper = problem.process.improper;

    Vec row_lse(n), col_lse(n);
    int it = 0;
    for (; it < opts.max_iter; ++it) {
        parallel_for(n, [&](int i) { row_lse[i] = detail::logsumexp_row(logR, log_v, i); });
        for (int i = 0; i < n; ++i) log_u[i] = log_a[i] - row_lse[i];
        parallel_for(n, [&](int j) { col_lse[j] = detail::logsumexp_col(logR, log_u, j); });
        for (int j = 0; j < n; ++j) log_v[j] = log_b[j] - col_lse[j];

        // after the v half-step the column constraint is exact; measure the rows
        double sup_log_ratio = 0.0, l1 = 0.0;
        parallel_for(n, [&](int i) { row_lse[i] = detail::logsumexp_row(logR, log_v, i); });
        for (int i = 0; i < n; ++i) {
            double log_ratio = log_a[i] - (log_u[i] + row_lse[i]);
            if (a[i] > 0) sup_log_ratio = std::max(sup_log_ratio, std::abs(log_ratio));
            l1 += std::abs(std::exp(log_u[i] + row_lse[i]) - a[i]);
        }
        sol.marginal_error_trace.push_back(l1);
        sol.final_marginal_error = l1;
        if (sup_log_ratio <= opts.tol) {
            sol.converged = true;
            ++it;
            break;
        }
    }
    sol.iterations = it;

    // gauge: split the additive freedom so that the two endpoint entropies agree
    double hf = 0.0, hb = 0.0;
    for (int i = 0; i < n; ++i) {
        if (a[i] > 0) hf += a[i] * log_u[i];
        if (b[i] > 0) hb += b[i] * log_v[i];
    }
    double shift = 0.5 * (hf - hb);
    for (int i = 0; i < n; ++i) {
        log_u[i] -= shift;
        log_v[i] += shift;
    }
    sol.h_f0 = hf - shift;
    sol.h_b1 = hb + shift;
    sol.cost = sol.h_f0 + sol.h_b1;

    sol.log_f = log_u;
    sol.log_g = log_v;
    sol.f = Field(grid, log_u.array().exp());
    sol.g = Field(grid, log_v.array().exp());
    sol.coupling.resize(n, n);
    parallel_for(n, [&](int i) {
        for (int j = 0; j < n; ++j)
            sol.coupling(i, j) = std::exp(log_u[i] + logR(i, j) + log_v[j]);
    });
    return sol;
}

// direct evaluation of KL(pi | R); the solver reports the equivalent potential split
inline double entropic_cost(const Mat& coupling, const Mat& R) {
    if (coupling.rows() != R.rows() || coupling.cols() != R.cols())
        throw std::invalid_argument("entropic_cost: shape mismatch");
    double s = 0.0;
    for (int i = 0; i < coupling.rows(); ++i)
        for (int j = 0; j < coupling.cols(); ++j) {
            double p = coupling(i, j);
            if (p > 0) s += p * std::log(p / R(i, j));
        }
    return s;
}

}  // namespace bridgelab

#endif
