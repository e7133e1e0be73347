#ifndef BRIDGELAB_KERNELS_HPP
#define BRIDGELAB_KERNELS_HPP

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "grid.hpp"
#include "rng.hpp"
#include "threads.hpp"

namespace bridgelab {

// generator sigma*(Delta/2 - grad U . grad); sigma enters only through t_eff = sigma*t
struct ReferenceProcess {
    enum class Kind { brownian, ou, tabulated };

    Kind kind = Kind::brownian;
    double alpha = 0.0;
    double sigma = 1.0;
    Grid grid;
    Field U;          // potential sampled on the grid
    Vec m_values;     // stationary density values; all-ones for the improper case
    bool improper = false;

    static ReferenceProcess brownian(const Grid& g, double sigma) {
        check_sigma(sigma);
        ReferenceProcess p;
        p.kind = Kind::brownian;
        p.sigma = sigma;
        p.grid = g;
        p.U = Field(g, Vec::Zero(g.n));
        p.m_values = Vec::Ones(g.n);  // lebesgue reference, not a probability
        p.improper = true;
        return p;
    }

    static ReferenceProcess ou(const Grid& g, double alpha, double sigma) {
        check_sigma(sigma);
        if (!(alpha > 0)) throw std::invalid_argument("ou process needs alpha > 0");
        ReferenceProcess p;
        p.kind = Kind::ou;
        p.alpha = alpha;
        p.sigma = sigma;
        p.grid = g;
        p.U = Field::sample(g, [alpha](double x) { return 0.5 * alpha * x * x; });
        p.m_values = gaussian_density(g, 0.0, 1.0 / (2.0 * alpha)).values;
        return p;
    }

    // dm = exp(-2U) dx, normalized on the grid
    static ReferenceProcess tabulated(const Grid& g, const Field& U, double sigma) {
        check_sigma(sigma);
        require_same_grid(g, U.grid, "tabulated process");
        require_finite(U, "tabulated process");
        ReferenceProcess p;
        p.kind = Kind::tabulated;
        p.sigma = sigma;
        p.grid = g;
        p.U = U;
        Vec raw(g.n);
        for (int i = 0; i < g.n; ++i) raw[i] = std::exp(-2.0 * U.values[i]);
        p.m_values = Density(g, std::move(raw)).values;
        return p;
    }

    Density stationary() const {
        if (improper) throw std::logic_error("improper reference has no stationary probability");
        return Density(grid, m_values, /*normalize=*/false);
    }

  private:
    static void check_sigma(double sigma) {
        if (!(sigma > 0)) throw std::invalid_argument("sigma must be positive");
    }
};

inline double ou_gamma(double alpha, double t) {
    return 2.0 * alpha / (1.0 - std::exp(-2.0 * alpha * t));
}

inline double gaussian_pdf(double z, double mean, double variance) {
    double d = z - mean;
    return std::exp(-d * d / (2.0 * variance)) / std::sqrt(2.0 * M_PI * variance);
}

inline double ou_transition_density(double x, double z, double t, double alpha, double sigma) {
    if (!(t > 0)) throw std::invalid_argument("transition density needs t > 0");
    double te = sigma * t;
    double rho = std::exp(-alpha * te);
    return gaussian_pdf(z, rho * x, 1.0 / ou_gamma(alpha, te));
}

inline double brownian_transition_density(double x, double z, double t, double sigma) {
    if (!(t > 0)) throw std::invalid_argument("transition density needs t > 0");
    return gaussian_pdf(z, x, sigma * t);
}

inline double transition_density(const ReferenceProcess& p, double x, double z, double t) {
    switch (p.kind) {
        case ReferenceProcess::Kind::brownian: return brownian_transition_density(x, z, t, p.sigma);
        case ReferenceProcess::Kind::ou: return ou_transition_density(x, z, t, p.alpha, p.sigma);
        default: throw std::logic_error("tabulated process has no closed-form density; use build_kernel");
    }
}

struct TransitionKernel {
    Grid grid;
    double t = 0.0;
    Mat values;            // values(i,j) = p_t(x_i, x_j), density in the second argument
    Vec row_renorm;        // factor each row was multiplied by to integrate to 1
    double max_guarded_renorm_dev = 0.0;  // max |factor-1| over rows with full quadrature reach
    bool substochastic = false;
    double trotter_doubling_change = 0.0;
    bool trotter_flagged = false;

    // propagate a function: (K f)(x_i) = integral p_t(x_i, z) f(z) dz
    Vec apply(const Vec& f) const {
        return values * (f.array() * grid.weights().array()).matrix();
    }

    // same integral carried out on log f, for potentials whose exp overflows
    Vec apply_log(const Vec& log_f) const {
        const int n = grid.n;
        const Vec base = log_f + Vec(grid.weights().array().log().matrix());
        Vec out(n);
        parallel_for(n, [&](int i) {
            Vec term = Vec(values.row(i).transpose().array().log().matrix()) + base;
            double m = term.maxCoeff();
            if (!std::isfinite(m)) {
                out[i] = -std::numeric_limits<double>::infinity();
                return;
            }
            out[i] = m + std::log((term.array() - m).exp().sum());
        });
        return out;
    }
};

namespace detail {

// rows whose +-5 sd reach stays inside the window are held to the 1e-6 renorm
// standard; rows truncated by the window edge are renormalized without complaint
inline void renormalize_rows(TransitionKernel& k, const Vec& row_mean, double row_sd) {
    const Vec w = k.grid.weights();
    const int n = k.grid.n;
    k.row_renorm = Vec::Ones(n);
    double worst = 0.0;
    bool coarse = false;
    for (int i = 0; i < n; ++i) {
        double mass = k.values.row(i).dot(w);
        if (!(mass > 0)) throw std::runtime_error("grid too coarse for this t");
        double factor = 1.0 / mass;
        k.values.row(i) *= factor;
        k.row_renorm[i] = factor;
        bool guarded = row_mean[i] - 5 * row_sd >= k.grid.lower && row_mean[i] + 5 * row_sd <= k.grid.upper;
        if (guarded) {
            worst = std::max(worst, std::abs(factor - 1.0));
            if (factor < 0.99 || factor > 1.01) coarse = true;
        }
    }
    k.max_guarded_renorm_dev = worst;
    if (coarse) throw std::runtime_error("grid too coarse for this t");
}

}  // namespace detail

inline TransitionKernel build_kernel(const ReferenceProcess& p, double t);

// symmetric trotter step for exp(t(L - K)): [e^{-K d/2} P_d e^{-K d/2}]^n_trotter,
// composed through grid quadrature; rows are sub-probability for K >= 0
inline TransitionKernel fk_kernel(const ReferenceProcess& p, const Field& K, double t, int n_trotter,
                                  double trotter_tol = 1e-6, bool check_doubling = false) {
    if (n_trotter < 1) throw std::invalid_argument("n_trotter must be >= 1");
    require_same_grid(p.grid, K.grid, "fk_kernel");
    require_finite(K, "fk_kernel");

    // square-and-multiply on T = S*diag(w); the kernel after k steps is T^{k-1} * S,
    // since (A o B)(x,z) = integral A(x,y) B(y,z) dy = A * diag(w) * B on the grid
    auto build = [&](int steps) -> Mat {
        double dt = t / steps;
        TransitionKernel base = build_kernel(p, dt);
        const int n = p.grid.n;
        Vec half(n);
        for (int i = 0; i < n; ++i) half[i] = std::exp(-0.5 * dt * K.values[i]);
        Mat S = half.asDiagonal() * base.values * half.asDiagonal();
        if (steps == 1) return S;
        Mat T = S * p.grid.weights().asDiagonal();
        Mat acc;  // T^(steps-1)
        bool has_acc = false;
        Mat sq = T;
        int e = steps - 1;
        while (e > 0) {
            if (e & 1) {
                acc = has_acc ? Mat(acc * sq) : sq;
                has_acc = true;
            }
            e >>= 1;
            if (e > 0) sq = sq * sq;
        }
        return acc * S;
    };

    TransitionKernel out;
    out.grid = p.grid;
    out.t = t;
    out.values = build(n_trotter);
    out.substochastic = true;
    out.row_renorm = Vec::Ones(p.grid.n);
    if (check_doubling) {
        Mat doubled = build(2 * n_trotter);
        out.trotter_doubling_change = (out.values - doubled).cwiseAbs().maxCoeff();
        out.trotter_flagged = out.trotter_doubling_change > trotter_tol;
    }
    return out;
}

inline TransitionKernel build_kernel(const ReferenceProcess& p, double t) {
    if (!(t > 0)) throw std::invalid_argument("build_kernel needs t > 0");
    const int n = p.grid.n;
    const Vec x = p.grid.points();
    TransitionKernel k;
    k.grid = p.grid;
    k.t = t;
    k.values.resize(n, n);

    if (p.kind == ReferenceProcess::Kind::tabulated) {
        // ground-state transform: p_t(x,z) = e^{U(x)} q_t(x,z) e^{-U(z)} where q is the
        // Feynman-Kac kernel of sigma*(Delta/2 - Uscript)
        Field Uscript = Field(p.grid, Vec(0.5 * gradient(p.U).values.array().square() -
                                          0.5 * laplacian(p.U).values.array()));
        Field K(p.grid, Vec(p.sigma * Uscript.values.array()));
        ReferenceProcess bm = ReferenceProcess::brownian(p.grid, p.sigma);
        TransitionKernel q = fk_kernel(bm, K, t, /*n_trotter=*/128);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                k.values(i, j) = std::exp(p.U.values[i] - p.U.values[j]) * q.values(i, j);
        Vec mean = x;  // mean-reversion unknown; guard rows by their own numeric reach
        double sd = std::sqrt(p.sigma * t);
        detail::renormalize_rows(k, mean, sd);
        return k;
    }

    double mean_slope, var;
    if (p.kind == ReferenceProcess::Kind::brownian) {
        mean_slope = 1.0;
        var = p.sigma * t;
    } else {
        double te = p.sigma * t;
        mean_slope = std::exp(-p.alpha * te);
        var = 1.0 / ou_gamma(p.alpha, te);
    }
    const double sd = std::sqrt(var);
    const double norm = 1.0 / std::sqrt(2.0 * M_PI * var);
    Mat& V = k.values;
    parallel_for(n, [&](int i) {
        double mi = mean_slope * x[i];
        for (int j = 0; j < n; ++j) {
            double d = x[j] - mi;
            V(i, j) = norm * std::exp(-d * d / (2.0 * var));
        }
    });
    detail::renormalize_rows(k, Vec(mean_slope * x), sd);
    return k;
}

// m-th partial in x of the ou transition density:
//   d^m/dx^m p_t(x,z) = gamma^{m/2} e^{-m alpha t_eff} He_m(sqrt(gamma) (z - e^{-alpha t_eff} x)) p_t(x,z)
// with He_m the probabilists' Hermite polynomials
inline double hermite_kernel_derivative(int m, double x, double z, double t, double alpha,
                                        double sigma = 1.0) {
    if (m < 1 || m > 3) throw std::invalid_argument("hermite_kernel_derivative supports m in 1..3");
    if (!(t > 0)) throw std::invalid_argument("transition density needs t > 0");
    double te = sigma * t;
    double rho = std::exp(-alpha * te);
    double gamma = ou_gamma(alpha, te);
    double u = std::sqrt(gamma) * (z - rho * x);
    double he = (m == 1) ? u : (m == 2) ? u * u - 1.0 : u * u * u - 3.0 * u;
    return std::pow(gamma, 0.5 * m) * std::pow(rho, m) * he * ou_transition_density(x, z, t, alpha, sigma);
}

struct BridgeMoments {
    double mean = 0.0;
    double var = 0.0;
};

// pinned diffusion at interior time: complete the square in p_t(x,.) p_{1-t}(.,y)
inline BridgeMoments bridge_moments(const ReferenceProcess& p, double x, double y, double t) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("bridge time must lie in (0,1)");
    if (p.kind == ReferenceProcess::Kind::brownian) {
        return {(1.0 - t) * x + t * y, p.sigma * t * (1.0 - t)};
    }
    if (p.kind == ReferenceProcess::Kind::ou) {
        double te = p.sigma * t, se = p.sigma * (1.0 - t);
        double gt = ou_gamma(p.alpha, te), gs = ou_gamma(p.alpha, se);
        double rt = std::exp(-p.alpha * te), rs = std::exp(-p.alpha * se);
        double prec = gt + gs * rs * rs;
        return {(gt * rt * x + gs * rs * y) / prec, 1.0 / prec};
    }
    throw std::logic_error("bridge sampling needs a closed-form reference");
}

inline double ou_bridge_sample(double x, double y, double t, double alpha, double sigma,
                               CounterRng& rng) {
    ReferenceProcess p;  // moments only read kind/alpha/sigma
    p.kind = alpha > 0 ? ReferenceProcess::Kind::ou : ReferenceProcess::Kind::brownian;
    p.alpha = alpha;
    p.sigma = sigma;
    BridgeMoments bm = bridge_moments(p, x, y, t);
    return bm.mean + std::sqrt(bm.var) * rng.next_normal();
}

inline double ou_bridge_sample(double x, double y, double t, double alpha, double sigma,
                               std::uint64_t rng_seed) {
    CounterRng rng(rng_seed);
    return ou_bridge_sample(x, y, t, alpha, sigma, rng);
}

struct ReciprocalCharacteristic {
    Field U_script;    // (|grad U|^2 - lap U)/2
    double alpha_sq = 0.0;  // lower bound on Hess of U_script
};

inline ReciprocalCharacteristic reciprocal_characteristic(const ReferenceProcess& p) {
    ReciprocalCharacteristic rc;
    switch (p.kind) {
        case ReferenceProcess::Kind::brownian:
            rc.U_script = Field(p.grid, Vec::Zero(p.grid.n));
            rc.alpha_sq = 0.0;
            break;
        case ReferenceProcess::Kind::ou: {
            double a = p.alpha;
            rc.U_script = Field::sample(p.grid, [a](double x) { return 0.5 * a * a * x * x - 0.5 * a; });
            rc.alpha_sq = a * a;
            break;
        }
        case ReferenceProcess::Kind::tabulated: {
            Vec gu = gradient(p.U).values;
            Vec lu = laplacian(p.U).values;
            rc.U_script = Field(p.grid, Vec(0.5 * gu.array().square() - 0.5 * lu.array()));
            Vec hess = laplacian(rc.U_script).values;
            rc.alpha_sq = hess.segment(1, p.grid.n - 2).minCoeff();
            break;
        }
    }
    return rc;
}

// worst relative error of the closed-form kernel derivatives against fourth-order
// finite differences in x, over m in 1..3 and the probe points
inline double hermite_fd_relative_error(double alpha, double sigma, double t,
                                        const std::vector<double>& xs,
                                        const std::vector<double>& zs, double step = 0.02) {
    auto p = [&](double x, double z) { return ou_transition_density(x, z, t, alpha, sigma); };
    double worst = 0.0;
    for (int m = 1; m <= 3; ++m) {
        for (double x : xs) {
            for (double z : zs) {
                double fm3 = p(x - 3 * step, z), fm2 = p(x - 2 * step, z), fm1 = p(x - step, z);
                double fp1 = p(x + step, z), fp2 = p(x + 2 * step, z), fp3 = p(x + 3 * step, z);
                double f0 = p(x, z);
                double fd;
                if (m == 1)
                    fd = (-fp2 + 8 * fp1 - 8 * fm1 + fm2) / (12 * step);
                else if (m == 2)
                    fd = (-fp2 + 16 * fp1 - 30 * f0 + 16 * fm1 - fm2) / (12 * step * step);
                else
                    fd = (-13 * (fp1 - fm1) + 8 * (fp2 - fm2) - (fp3 - fm3)) /
                         (8 * step * step * step);
                double exact = hermite_kernel_derivative(m, x, z, t, alpha, sigma);
                double te = sigma * t;
                double scale = std::pow(ou_gamma(alpha, te), 0.5 * m) *
                               std::exp(-m * alpha * te) * std::max(f0, 1e-30);
                double rel = std::abs(fd - exact) / std::max(std::abs(exact), 1e-2 * scale);
                worst = std::max(worst, rel);
            }
        }
    }
    return worst;
}

// discrete generator sigma*(laplacian/2 - grad U . grad)
inline Field apply_generator(const ReferenceProcess& p, const Field& u) {
    require_same_grid(p.grid, u.grid, "apply_generator");
    Vec gu = gradient(u).values;
    Vec lu = laplacian(u).values;
    Vec gU = gradient(p.U).values;
    return Field(p.grid, Vec(p.sigma * (0.5 * lu.array() - gU.array() * gu.array())));
}

}  // namespace bridgelab

#endif
