#ifndef BRIDGELAB_EXPERIMENTS_HPP
#define BRIDGELAB_EXPERIMENTS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "diagnostics.hpp"
#include "flow.hpp"
#include "grid.hpp"
#include "kernels.hpp"
#include "rng.hpp"
#include "solver.hpp"
#include "threads.hpp"

namespace bridgelab {

// ---- one-dimensional transport distances ----

// trapezoid prefix sums; the final value is exactly the density's (unit) mass
inline Vec density_cdf(const Density& mu) {
    const int n = mu.grid.n;
    const double h = mu.grid.h();
    Vec F(n);
    F[0] = 0.0;
    for (int k = 1; k < n; ++k)
        F[k] = F[k - 1] + 0.5 * h * (mu.values[k - 1] + mu.values[k]);
    double total = F[n - 1];
    if (!(total > 0)) throw std::runtime_error("density_cdf: zero mass");
    for (int k = 0; k < n; ++k) F[k] = std::min(1.0, std::max(0.0, F[k] / total));
    return F;
}

inline double quantile_from_cdf(const Vec& F, const Grid& g, double u) {
    if (u <= 0.0) return g.lower;
    if (u >= 1.0) return g.upper;
    const double* begin = F.data();
    const double* it = std::lower_bound(begin, begin + g.n, u);
    int k = static_cast<int>(it - begin);
    if (k <= 0) return g.lower;
    if (k >= g.n) return g.upper;
    double span = F[k] - F[k - 1];
    double frac = span > 1e-300 ? (u - F[k - 1]) / span : 0.0;
    return g.point(k - 1) + frac * g.h();
}

// W1 between gridded densities: L1 distance of the CDFs
inline double w1_distance(const Density& a, const Density& b) {
    require_same_grid(a.grid, b.grid, "w1_distance");
    Vec Fa = density_cdf(a), Fb = density_cdf(b);
    Field diff(a.grid, Vec((Fa - Fb).cwiseAbs()));
    return integrate(diff);
}

// W2^2 via the quantile representation, midpoint rule in u
inline double w2_squared(const Density& a, const Density& b, int n_quad = 16384) {
    Vec Fa = density_cdf(a), Fb = density_cdf(b);
    double s = 0.0;
    for (int k = 0; k < n_quad; ++k) {
        double u = (k + 0.5) / n_quad;
        double d = quantile_from_cdf(Fa, a.grid, u) - quantile_from_cdf(Fb, b.grid, u);
        s += d * d;
    }
    return s / n_quad;
}

// W1 to the displacement interpolant between mu and nu at time t, entirely in quantile form:
// the interpolant's quantile is the convex combination of the endpoint quantiles
inline double w1_to_displacement_interpolant(const Density& a, const Density& mu, const Density& nu,
                                             double t, int n_quad = 16384) {
    Vec Fa = density_cdf(a), Fm = density_cdf(mu), Fn = density_cdf(nu);
    double s = 0.0;
    for (int k = 0; k < n_quad; ++k) {
        double u = (k + 0.5) / n_quad;
        double target = (1.0 - t) * quantile_from_cdf(Fm, mu.grid, u) +
                        t * quantile_from_cdf(Fn, nu.grid, u);
        s += std::abs(quantile_from_cdf(Fa, a.grid, u) - target);
    }
    return s / n_quad;
}

// exact L1 distance between the empirical CDF of sorted samples and the piecewise-linear
// grid CDF, by sweeping the merged breakpoints and splitting at sign changes
inline double w1_empirical(const std::vector<double>& sorted_samples, const Density& mu) {
    if (sorted_samples.empty()) throw std::invalid_argument("w1_empirical: no samples");
    const Grid& g = mu.grid;
    Vec F = density_cdf(mu);
    auto grid_cdf = [&](double x) {
        if (x <= g.lower) return 0.0;
        if (x >= g.upper) return 1.0;
        double pos = (x - g.lower) / g.h();
        int k = std::min(static_cast<int>(pos), g.n - 2);
        double frac = pos - k;
        return F[k] + frac * (F[k + 1] - F[k]);
    };
    const std::size_t N = sorted_samples.size();

    std::vector<double> events;
    events.reserve(N + g.n + 2);
    events.push_back(std::min(sorted_samples.front(), g.lower));
    for (double s : sorted_samples) events.push_back(s);
    for (int k = 0; k < g.n; ++k) events.push_back(g.point(k));
    events.push_back(std::max(sorted_samples.back(), g.upper));
    std::sort(events.begin(), events.end());
    events.erase(std::unique(events.begin(), events.end()), events.end());

    double total = 0.0;
    std::size_t count = 0;  // samples <= current left endpoint
    for (std::size_t e = 0; e + 1 < events.size(); ++e) {
        double a = events[e], b = events[e + 1];
        while (count < N && sorted_samples[count] <= a) ++count;
        double emp = static_cast<double>(count) / N;
        double da = emp - grid_cdf(a);
        double db = emp - grid_cdf(b);
        double len = b - a;
        if (da * db >= 0.0) {
            total += 0.5 * (std::abs(da) + std::abs(db)) * len;
        } else {
            double split = len * std::abs(da) / (std::abs(da) + std::abs(db));
            total += 0.5 * (std::abs(da) * split + std::abs(db) * (len - split));
        }
    }
    return total;
}

inline double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw std::invalid_argument("loglog_slope needs paired data");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = static_cast<int>(xs.size());
    for (int i = 0; i < n; ++i) {
        double lx = std::log(xs[i]), ly = std::log(ys[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---- hot gas: particles drawn from the static coupling, moved along reference bridges ----

struct HotGasRun {
    int n_particles = 0;
    std::vector<double> t_samples;
    std::uint64_t seed = 0;
    bool low_particle_warning = false;
    std::vector<std::vector<double>> samples;      // per t, sorted positions
    std::vector<Density> empirical_densities;      // per t, histogram on the grid
    std::vector<double> distances;                 // per t, W1 against the propagated mu_t
};

inline HotGasRun hot_gas(const SchrodingerSolution& sol, const ReferenceProcess& process,
                         int n_particles, const std::vector<double>& t_samples,
                         std::uint64_t seed) {
    if (n_particles < 1) throw std::invalid_argument("hot_gas needs particles");
    const Grid& g = sol.grid;
    const int n = g.n;
    HotGasRun run;
    run.n_particles = n_particles;
    run.t_samples = t_samples;
    run.seed = seed;
    run.low_particle_warning = n_particles < 100;

    // cumulative row masses, then cumulative within the chosen row
    Vec row_mass = sol.coupling.rowwise().sum();
    double total = row_mass.sum();
    std::vector<double> row_cum(n);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc += row_mass[i] / total;
        row_cum[i] = acc;
    }

    const int nt = static_cast<int>(t_samples.size());
    std::vector<std::vector<double>> positions(nt, std::vector<double>(n_particles));
    parallel_for(n_particles, [&](int p) {
        CounterRng rng(seed, static_cast<std::uint64_t>(p));
        double u1 = rng.next_double();
        int i = static_cast<int>(std::lower_bound(row_cum.begin(), row_cum.end(), u1) - row_cum.begin());
        i = std::min(i, n - 1);
        double u2 = rng.next_double() * row_mass[i];
        double c = 0.0;
        int j = n - 1;
        for (int k = 0; k < n; ++k) {
            c += sol.coupling(i, k);
            if (c >= u2) {
                j = k;
                break;
            }
        }
        double x = g.point(i), y = g.point(j);
        for (int s = 0; s < nt; ++s)
            positions[s][p] = ou_bridge_sample(x, y, t_samples[s], process.alpha, process.sigma, rng);
    });

    for (int s = 0; s < nt; ++s) {
        std::vector<double>& xs = positions[s];
        std::sort(xs.begin(), xs.end());
        Vec hist = Vec::Zero(n);
        for (double x : xs) {
            int k = static_cast<int>(std::floor((x - g.lower) / g.h() + 0.5));
            k = std::max(0, std::min(k, n - 1));
            hist[k] += 1.0;
        }
        const Vec w = g.weights();
        for (int k = 0; k < n; ++k) hist[k] /= n_particles * w[k];
        run.empirical_densities.emplace_back(g, hist, /*normalize=*/false);
        FlowSlice slice = propagate(sol, process, t_samples[s]);
        run.distances.push_back(w1_empirical(xs, slice.mu_t));
        run.samples.push_back(std::move(xs));
    }
    return run;
}

// averaging exact bridge densities over the coupling must reproduce the propagated
// marginal: this ties the solver, the flow, and the sampler together without Monte Carlo
inline double mixture_crosscheck(const SchrodingerSolution& sol, const ReferenceProcess& process,
                                 const FlowSlice& slice, int probe_stride = 50) {
    const Grid& g = sol.grid;
    double t = slice.t;
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("mixture_crosscheck needs interior t");
    BridgeMoments ref = bridge_moments(process, 0.0, 0.0, t);  // variance is x,y independent
    double var = ref.var;
    // mean is affine in (x, y); recover the coefficients from two probes
    double ca = bridge_moments(process, 1.0, 0.0, t).mean;
    double cb = bridge_moments(process, 0.0, 1.0, t).mean;
    const double norm = 1.0 / std::sqrt(2.0 * M_PI * var);

    std::vector<int> probes;
    for (int k = 0; k < g.n; k += probe_stride) probes.push_back(k);
    std::vector<double> mix(probes.size());
    const Vec x = g.points();
    parallel_for(static_cast<int>(probes.size()), [&](int pi) {
        double xp = x[probes[pi]];
        double s = 0.0;
        for (int i = 0; i < g.n; ++i) {
            double mi = ca * x[i];
            for (int j = 0; j < g.n; ++j) {
                double d = xp - (mi + cb * x[j]);
                s += sol.coupling(i, j) * std::exp(-d * d / (2.0 * var));
            }
        }
        mix[pi] = s * norm;
    });
    double worst = 0.0;
    for (std::size_t pi = 0; pi < probes.size(); ++pi)
        worst = std::max(worst, std::abs(mix[pi] - slice.mu_t.values[probes[pi]]));
    return worst;
}

// ---- small-noise sweep ----

struct SmallNoiseSweep {
    std::vector<double> epsilons;
    std::vector<double> costs;         // T^eps
    std::vector<double> scaled_costs;  // eps * T^eps
    std::vector<int> iteration_counts;
    double w2_half_sq = 0.0;           // (1/2) W2^2 oracle from the quantile formula
    std::vector<double> geodesic_distances;  // W1(mu^eps_t, displacement interpolant) at probe_t
    double probe_t = 0.5;
};

inline SmallNoiseSweep small_noise_sweep(const Density& mu, const Density& nu,
                                         const std::vector<double>& epsilons, const Grid& grid,
                                         double probe_t = 0.5,
                                         const SinkhornOptions& base_opts = {}) {
    for (std::size_t k = 0; k + 1 < epsilons.size(); ++k)
        if (!(epsilons[k] > epsilons[k + 1]) || !(epsilons[k + 1] > 0))
            throw std::invalid_argument("epsilons must be strictly decreasing and positive");
    SmallNoiseSweep sweep;
    sweep.epsilons = epsilons;
    sweep.probe_t = probe_t;
    sweep.w2_half_sq = 0.5 * w2_squared(mu, nu);

    Vec warm_f, warm_g;
    double prev_eps = 0.0;
    for (double eps : epsilons) {
        ReferenceProcess family = ReferenceProcess::brownian(grid, eps);
        SchrodingerProblem prob{family, mu, nu};
        SinkhornOptions opts = base_opts;
        if (prev_eps > 0) {
            // potentials scale like Kantorovich/eps, so rescale the previous logs
            double ratio = prev_eps / eps;
            opts.init_log_f = Vec(warm_f * ratio);
            opts.init_log_g = Vec(warm_g * ratio);
        }
        SchrodingerSolution sol = sinkhorn(prob, opts);
        sweep.costs.push_back(sol.cost);
        sweep.scaled_costs.push_back(eps * sol.cost);
        sweep.iteration_counts.push_back(sol.iterations);
        FlowSlice slice = propagate(sol, family, probe_t);
        sweep.geodesic_distances.push_back(
            w1_to_displacement_interpolant(slice.mu_t, mu, nu, probe_t));
        warm_f = sol.log_f;
        warm_g = sol.log_g;
        prev_eps = eps;
    }
    return sweep;
}

struct TalagrandCheck {
    double eps = 0.0;
    double lambda = 0.0;
    double H_mu = 0.0;
    double cost = 0.0;
    double upper = 0.0;  // H_mu / (1 - e^{-lambda eps})
    bool pass(double tol = 1e-4) const { return cost >= H_mu - tol && cost <= upper + tol; }
};

// sandwich against the stationary marginal at small noise:
// H(mu) <= T^eps(mu, m) <= H(mu)/(1 - e^{-lambda eps})
inline TalagrandCheck talagrand_check(const Density& mu, double alpha, double eps, double lambda,
                                      const Grid& grid) {
    ReferenceProcess process = ReferenceProcess::ou(grid, alpha, eps);
    TalagrandCheck chk;
    chk.eps = eps;
    chk.lambda = lambda;
    chk.H_mu = entropy(mu, process);
    SchrodingerProblem prob{process, mu, process.stationary()};
    chk.cost = sinkhorn(prob).cost;
    chk.upper = chk.H_mu / (1.0 - std::exp(-lambda * eps));
    return chk;
}

// ---- log-concavity flags (necessary conditions on second differences) ----

struct LogConcavityFlags {
    bool axis_pass = true;
    bool diagonal_pass = true;
    bool minor_pass = true;
    double worst_second_diff = 0.0;  // most positive second difference found
    bool pass() const { return axis_pass && diagonal_pass && minor_pass; }
};

inline LogConcavityFlags coupling_log_concavity(const Mat& coupling, double mass_floor = 1e-14,
                                                double tol = 1e-9, int stride = 8) {
    const int n = static_cast<int>(coupling.rows());
    LogConcavityFlags flags;
    auto lg = [&](int i, int j) { return std::log(coupling(i, j)); };
    auto usable = [&](int i, int j) {
        for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
                if (!(coupling(i + di, j + dj) > mass_floor)) return false;
        return true;
    };
    for (int i = 1; i + 1 < n; i += stride) {
        for (int j = 1; j + 1 < n; j += stride) {
            if (!usable(i, j)) continue;
            double dxx = lg(i + 1, j) - 2 * lg(i, j) + lg(i - 1, j);
            double dyy = lg(i, j + 1) - 2 * lg(i, j) + lg(i, j - 1);
            double diag1 = lg(i + 1, j + 1) - 2 * lg(i, j) + lg(i - 1, j - 1);
            double diag2 = lg(i + 1, j - 1) - 2 * lg(i, j) + lg(i - 1, j + 1);
            double dxy = 0.25 * (diag1 - diag2);
            flags.worst_second_diff = std::max({flags.worst_second_diff, dxx, dyy, diag1, diag2});
            if (dxx > tol || dyy > tol) flags.axis_pass = false;
            if (diag1 > tol || diag2 > tol) flags.diagonal_pass = false;
            // 2x2 Hessian minors: concavity needs dxx <= 0 and dxx*dyy - dxy^2 >= 0
            if (dxx * dyy - dxy * dxy < -tol) flags.minor_pass = false;
        }
    }
    return flags;
}

struct DensityLogConcavity {
    bool pass = true;
    double worst_second_diff = 0.0;
};

inline DensityLogConcavity density_log_concavity(const Density& mu,
                                                 double mass_floor = kDefaultMassFloor,
                                                 double tol = 1e-9) {
    DensityLogConcavity out;
    const int n = mu.grid.n;
    for (int i = 1; i + 1 < n; ++i) {
        if (!(mu.values[i - 1] > mass_floor && mu.values[i] > mass_floor &&
              mu.values[i + 1] > mass_floor))
            continue;
        double d = std::log(mu.values[i + 1]) - 2 * std::log(mu.values[i]) + std::log(mu.values[i - 1]);
        out.worst_second_diff = std::max(out.worst_second_diff, d);
        if (d > tol) out.pass = false;
    }
    return out;
}

// ---- Fisher-information convexity study ----

struct ConvexityStudyRow {
    double alpha = 0.0;  // 0 means Brownian
    bool coupling_log_concave = false;
    bool marginal_log_concave = false;
    bool convexity_checked = false;
    bool convexity_pass = false;
    double worst_margin = 0.0;
};

inline ConvexityStudyRow convexity_study_instance(double alpha, const Density& mu,
                                                  const Density& nu, int n_t = 17,
                                                  double t_lo = 0.1, double t_hi = 0.9) {
    const Grid& grid = mu.grid;
    ReferenceProcess process = alpha > 0 ? ReferenceProcess::ou(grid, alpha, 1.0)
                                         : ReferenceProcess::brownian(grid, 1.0);
    SchrodingerProblem prob{process, mu, nu};
    SchrodingerSolution sol = sinkhorn(prob);

    ConvexityStudyRow row;
    row.alpha = alpha;
    row.coupling_log_concave = coupling_log_concavity(sol.coupling).pass();

    std::vector<FisherSample> samples;
    bool marginals_ok = true;
    for (int k = 0; k < n_t; ++k) {
        double t = t_lo + (t_hi - t_lo) * k / (n_t - 1);
        FlowSlice s = propagate(sol, process, t);
        marginals_ok = marginals_ok && density_log_concavity(s.mu_t).pass;
        FisherSample fs;
        fs.t = t;
        fs.fisher = fisher_information(s.mu_t, process, s.mass_floor);
        double vn = masked_weighted_l2_norm(s.v_t, s.mu_t, s.mass_floor);
        fs.velocity_norm_sq = vn * vn;
        double gn = masked_weighted_l2_norm(fisher_gradient(s.mu_t, process, s.mass_floor), s.mu_t,
                                            s.mass_floor);
        fs.fisher_grad_norm_sq = gn * gn;
        samples.push_back(fs);
    }
    row.marginal_log_concave = marginals_ok;
    row.convexity_checked = row.coupling_log_concave && marginals_ok;
    FisherConvexityReport rep =
        fisher_convexity_check(samples, alpha > 0 ? alpha * alpha : 0.0);
    row.convexity_pass = rep.pass;
    row.worst_margin = rep.worst_margin;
    return row;
}

inline std::vector<ConvexityStudyRow> fisher_convexity_study(const std::vector<double>& alphas,
                                                             const Density& mu, const Density& nu,
                                                             int n_t = 17) {
    std::vector<ConvexityStudyRow> rows;
    for (double a : alphas) rows.push_back(convexity_study_instance(a, mu, nu, n_t));
    return rows;
}

// ---- Feynman-Kac verification ----

struct FkLevel {
    Grid grid;
    double dt = 2e-3;
    int n_trotter = 16;
};

struct FkVerification {
    std::vector<double> t_samples;
    double residual_coarse = 0.0;
    double residual_fine = 0.0;
    double order = 0.0;            // log2(coarse/fine) under joint refinement
    double const_invariance = 0.0; // max |v(K=c) - v(K=0)| at the probe times
};

inline double fk_residual_at_level(const FkLevel& lvl, const std::function<double(double)>& K_fn,
                                   const std::function<double(double)>& f_fn,
                                   const std::function<double(double)>& g_fn,
                                   const std::vector<double>& t_samples) {
    FkProblem fk;
    fk.process = ReferenceProcess::brownian(lvl.grid, 1.0);
    fk.K = Field::sample(lvl.grid, K_fn);
    fk.f0 = Field::sample(lvl.grid, f_fn);
    fk.g1 = Field::sample(lvl.grid, g_fn);
    fk.n_trotter = lvl.n_trotter;
    double worst = 0.0;
    for (double t : t_samples) {
        FlowSlice lo = fk_flow(fk, t - lvl.dt);
        FlowSlice mid = fk_flow(fk, t);
        FlowSlice hi = fk_flow(fk, t + lvl.dt);
        worst = std::max(worst, fk_ode_residual(lo, mid, hi, fk.process, fk.K));
    }
    return worst;
}

inline FkVerification fk_verification(const std::function<double(double)>& K_fn,
                                      const std::function<double(double)>& f_fn,
                                      const std::function<double(double)>& g_fn,
                                      const std::vector<double>& t_samples, const FkLevel& coarse,
                                      const FkLevel& fine, double const_c = 0.7) {
    FkVerification out;
    out.t_samples = t_samples;
    out.residual_coarse = fk_residual_at_level(coarse, K_fn, f_fn, g_fn, t_samples);
    out.residual_fine = fk_residual_at_level(fine, K_fn, f_fn, g_fn, t_samples);
    out.order = std::log2(out.residual_coarse / out.residual_fine);

    // adding a constant to K rescales f_t, g_t by reciprocal exponentials: v_t is unchanged
    FkProblem base, shifted;
    base.process = ReferenceProcess::brownian(coarse.grid, 1.0);
    base.K = Field::sample(coarse.grid, [](double) { return 0.0; });
    base.f0 = Field::sample(coarse.grid, f_fn);
    base.g1 = Field::sample(coarse.grid, g_fn);
    base.n_trotter = coarse.n_trotter;
    shifted = base;
    shifted.K = Field::sample(coarse.grid, [const_c](double) { return const_c; });
    for (double t : t_samples) {
        FlowSlice a = fk_flow(base, t);
        FlowSlice b = fk_flow(shifted, t);
        out.const_invariance =
            std::max(out.const_invariance, (a.v_t.values - b.v_t.values).cwiseAbs().maxCoeff());
    }
    return out;
}

}  // namespace bridgelab

#endif
