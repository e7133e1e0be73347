#ifndef BRIDGELAB_DIAGNOSTICS_HPP
#define BRIDGELAB_DIAGNOSTICS_HPP

#include <array>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "flow.hpp"
#include "grid.hpp"
#include "kernels.hpp"

namespace bridgelab {

// relative entropy against the stationary measure; plain differential entropy when improper
inline double entropy(const Density& mu, const ReferenceProcess& process) {
    require_same_grid(mu.grid, process.grid, "entropy");
    const Vec w = mu.grid.weights();
    double s = 0.0;
    for (int i = 0; i < mu.grid.n; ++i) {
        double d = mu.values[i];
        if (d <= 0) continue;
        double ref = process.improper ? 0.0 : std::log(std::max(process.m_values[i], kLogFloor));
        s += d * (std::log(std::max(d, kLogFloor)) - ref) * w[i];
    }
    return s;
}

// grad log(mu/m), the Wasserstein gradient of the entropy
inline Field entropy_gradient(const Density& mu, const ReferenceProcess& process) {
    require_same_grid(mu.grid, process.grid, "entropy_gradient");
    Vec rel = log_of(mu).values;
    if (!process.improper) rel -= log_field(process.m_values, process.grid).values;
    return gradient(Field(mu.grid, std::move(rel)));
}

inline double fisher_information(const Density& mu, const ReferenceProcess& process,
                                 double mass_floor = kDefaultMassFloor) {
    double n = masked_weighted_l2_norm(entropy_gradient(mu, process), mu, mass_floor);
    return n * n;
}

// grad(-|grad log mu|^2 - 2 lap log mu + 8 Uscript), the Wasserstein gradient of the Fisher
// information; zeroed outside the mass floor
inline Field fisher_gradient(const Density& mu, const ReferenceProcess& process,
                             double mass_floor = kDefaultMassFloor) {
    require_same_grid(mu.grid, process.grid, "fisher_gradient");
    Field lm = log_of(mu);
    Vec glm = gradient(lm).values;
    Vec llm = laplacian(lm).values;
    Vec uscript = reciprocal_characteristic(process).U_script.values;
    Field inner(mu.grid, Vec(-glm.array().square() - 2.0 * llm.array() + 8.0 * uscript.array()));
    Vec out = gradient(inner).values;
    for (int i = 0; i < mu.grid.n; ++i)
        if (!(mu.values[i] > mass_floor)) out[i] = 0.0;
    return Field(mu.grid, std::move(out));
}

namespace detail {

// second-order first-derivative weights on three equispaced slices, evaluated at index e
inline std::array<double, 3> fd1_weights(int e, double dt) {
    if (e == 0) return {-1.5 / dt, 2.0 / dt, -0.5 / dt};
    if (e == 2) return {0.5 / dt, -2.0 / dt, 1.5 / dt};
    return {-0.5 / dt, 0.0, 0.5 / dt};
}

inline double triple_dt(const FlowSlice& s0, const FlowSlice& s1, const FlowSlice& s2) {
    double dt = s1.t - s0.t;
    if (!(dt > 0) || std::abs((s2.t - s1.t) - dt) > 1e-12 * (1.0 + dt))
        throw std::invalid_argument("slice triple must be equispaced and increasing");
    return dt;
}

}  // namespace detail

// material derivative of the velocity: d/dt v + half grad |v|^2, evaluated at slice `eval`
// (1 = centered, 0/2 = one-sided fallback at the range ends)
inline Field acceleration(const FlowSlice& s0, const FlowSlice& s1, const FlowSlice& s2,
                          int eval = 1) {
    double dt = detail::triple_dt(s0, s1, s2);
    auto w = detail::fd1_weights(eval, dt);
    const FlowSlice& at = eval == 0 ? s0 : eval == 2 ? s2 : s1;
    Vec dv = w[0] * s0.v_t.values + w[1] * s1.v_t.values + w[2] * s2.v_t.values;
    Vec ke = 0.5 * gradient(Field(at.v_t.grid, Vec(at.v_t.values.array().square()))).values;
    return Field(at.v_t.grid, Vec(dv + ke));
}

// L2(mu_t) defect of  D/dt v = (sigma^2/8) grad^W I
inline double ode_residual(const FlowSlice& s0, const FlowSlice& s1, const FlowSlice& s2,
                           const ReferenceProcess& process, int eval = 1) {
    const FlowSlice& at = eval == 0 ? s0 : eval == 2 ? s2 : s1;
    Field acc = acceleration(s0, s1, s2, eval);
    Field fg = fisher_gradient(at.mu_t, process, at.mass_floor);
    double s2g = process.sigma * process.sigma;
    Field resid(acc.grid, Vec(acc.values - (s2g / 8.0) * fg.values));
    return masked_weighted_l2_norm(resid, at.mu_t, at.mass_floor);
}

// Feynman-Kac variant:  D/dt v = grad^W(I/8 + E_K) = (1/8) grad^W I + grad K,  sigma = 1
inline double fk_ode_residual(const FlowSlice& s0, const FlowSlice& s1, const FlowSlice& s2,
                              const ReferenceProcess& process, const Field& K, int eval = 1) {
    require_same_grid(process.grid, K.grid, "fk_ode_residual");
    const FlowSlice& at = eval == 0 ? s0 : eval == 2 ? s2 : s1;
    Field acc = acceleration(s0, s1, s2, eval);
    Field fg = fisher_gradient(at.mu_t, process, at.mass_floor);
    Vec gk = gradient(K).values;
    Field resid(acc.grid, Vec(acc.values - fg.values / 8.0 - gk));
    return masked_weighted_l2_norm(resid, at.mu_t, at.mass_floor);
}

struct ConservationPair {
    double c = 0.0;      //  |v|^2 / sigma^2 - I/4
    double c_alt = 0.0;  // -int (grad log tilde-f . grad log tilde-g + 2 Uscript) d mu
};

inline ConservationPair conservation_constant(const FlowSlice& s, const ReferenceProcess& process) {
    ConservationPair out;
    double vn = masked_weighted_l2_norm(s.v_t, s.mu_t, s.mass_floor);
    double s2 = process.sigma * process.sigma;
    out.c = vn * vn / s2 - fisher_information(s.mu_t, process, s.mass_floor) / 4.0;

    Vec gf = gradient(Field(s.f_t.grid, Vec(s.log_ft.values - process.U.values))).values;
    Vec gg = gradient(Field(s.g_t.grid, Vec(s.log_gt.values - process.U.values))).values;
    Vec uscript = reciprocal_characteristic(process).U_script.values;
    Field integrand(s.f_t.grid, Vec(gf.array() * gg.array() + 2.0 * uscript.array()));
    out.c_alt = -masked_integrate(integrand, s.mu_t, s.mass_floor);
    return out;
}

// carre du champ and its iterate, composed from the discrete generator per definition
inline Field gamma(const Field& f, const Field& g, const ReferenceProcess& process) {
    require_same_grid(f.grid, g.grid, "gamma");
    Field fg(f.grid, Vec(f.values.array() * g.values.array()));
    Vec lfg = apply_generator(process, fg).values;
    Vec lf = apply_generator(process, f).values;
    Vec lg = apply_generator(process, g).values;
    return Field(f.grid,
                 Vec(0.5 * (lfg.array() - f.values.array() * lg.array() - g.values.array() * lf.array())));
}

inline Field gamma2(const Field& f, const Field& g, const ReferenceProcess& process) {
    Field gfg = gamma(f, g, process);
    Field lf(f.grid, apply_generator(process, f).values);
    Field lg(g.grid, apply_generator(process, g).values);
    Vec lgamma = apply_generator(process, gfg).values;
    Vec a = gamma(lf, g, process).values;
    Vec b = gamma(f, lg, process).values;
    return Field(f.grid, Vec(0.5 * (lgamma - a - b)));
}

inline double h_forward(const FlowSlice& s) { return integrate(s.log_ft, s.mu_t); }
inline double h_backward(const FlowSlice& s) { return integrate(s.log_gt, s.mu_t); }

struct EntropyDerivativeReport {
    double t = 0.0, dt = 0.0;
    double h_f = 0.0, h_b = 0.0;
    double dt_h_f_fd = 0.0, dt_h_b_fd = 0.0;        // centered differences
    double gamma_dt_h_f = 0.0, gamma_dt_h_b = 0.0;  // carre-du-champ forms
    double velocity_dt_h_f = 0.0, velocity_dt_h_b = 0.0;
    double dtt_h_f_fd = 0.0, dtt_h_f_gamma2 = 0.0;
    double dtt_h_b_fd = 0.0, dtt_h_b_gamma2 = 0.0;
};

inline EntropyDerivativeReport entropy_derivative_checks(const FlowSlice& s0, const FlowSlice& s1,
                                                         const FlowSlice& s2,
                                                         const ReferenceProcess& process,
                                                         int eval = 1) {
    double dt = detail::triple_dt(s0, s1, s2);
    const FlowSlice& at = eval == 0 ? s0 : eval == 2 ? s2 : s1;
    auto w = detail::fd1_weights(eval, dt);
    EntropyDerivativeReport r;
    r.t = at.t;
    r.dt = dt;
    r.h_f = h_forward(at);
    r.h_b = h_backward(at);
    double hf0 = h_forward(s0), hf1 = h_forward(s1), hf2 = h_forward(s2);
    double hb0 = h_backward(s0), hb1 = h_backward(s1), hb2 = h_backward(s2);
    r.dt_h_f_fd = w[0] * hf0 + w[1] * hf1 + w[2] * hf2;
    r.dt_h_b_fd = w[0] * hb0 + w[1] * hb1 + w[2] * hb2;
    r.dtt_h_f_fd = (hf2 - 2.0 * hf1 + hf0) / (dt * dt);
    r.dtt_h_b_fd = (hb2 - 2.0 * hb1 + hb0) / (dt * dt);

    r.gamma_dt_h_f = -masked_integrate(gamma(at.log_ft, at.log_ft, process), at.mu_t, at.mass_floor);
    r.gamma_dt_h_b = masked_integrate(gamma(at.log_gt, at.log_gt, process), at.mu_t, at.mass_floor);
    r.dtt_h_f_gamma2 =
        2.0 * masked_integrate(gamma2(at.log_ft, at.log_ft, process), at.mu_t, at.mass_floor);
    r.dtt_h_b_gamma2 =
        2.0 * masked_integrate(gamma2(at.log_gt, at.log_gt, process), at.mu_t, at.mass_floor);

    // velocity forms: dt h_f = -(1/2sigma)|v - (sigma/2) grad^W H|^2 and mirrored for h_b
    Field gH = entropy_gradient(at.mu_t, process);
    double sg = process.sigma;
    Field wf(gH.grid, Vec(at.v_t.values - 0.5 * sg * gH.values));
    Field wb(gH.grid, Vec(at.v_t.values + 0.5 * sg * gH.values));
    double nf = masked_weighted_l2_norm(wf, at.mu_t, at.mass_floor);
    double nb = masked_weighted_l2_norm(wb, at.mu_t, at.mass_floor);
    r.velocity_dt_h_f = -nf * nf / (2.0 * sg);
    r.velocity_dt_h_b = nb * nb / (2.0 * sg);
    return r;
}

// closed-form right side of the entropy bound along the bridge
inline double entropy_bound_rhs(double t, double lambda, double sigma, double H_mu, double H_nu,
                                double cost) {
    if (!(lambda > 0) || !(sigma > 0)) throw std::invalid_argument("entropy_bound_rhs needs positive lambda, sigma");
    double u = sigma * lambda;
    double w0 = (1.0 - std::exp(-u * (1.0 - t))) / (1.0 - std::exp(-u));
    double w1 = (1.0 - std::exp(-u * t)) / (1.0 - std::exp(-u));
    double C = (std::cosh(0.5 * u) - std::cosh(u * (t - 0.5))) / std::sinh(0.5 * u);
    return w0 * H_mu + w1 * H_nu - C * cost;
}

struct DiagnosticsReport {
    double t = 0.0;
    double entropy = 0.0;
    double fisher = 0.0;
    double velocity_norm_sq = 0.0;
    double acceleration_residual_l2 = 0.0;
    double conservation_c = 0.0;
    double conservation_c_alt = 0.0;
    double h_f = 0.0, h_b = 0.0;
    double dt_h_f = 0.0, dt_h_b = 0.0;
    double gamma_dt_h_f = 0.0, gamma_dt_h_b = 0.0;
    double dtt_h_f_gamma2 = 0.0;
    double dtt_h_f_fd = 0.0;
    double mass_drift = 0.0;
};

inline DiagnosticsReport diagnose(const FlowSlice& s0, const FlowSlice& s1, const FlowSlice& s2,
                                  const ReferenceProcess& process, int eval = 1) {
    const FlowSlice& at = eval == 0 ? s0 : eval == 2 ? s2 : s1;
    DiagnosticsReport r;
    r.t = at.t;
    r.entropy = entropy(at.mu_t, process);
    r.fisher = fisher_information(at.mu_t, process, at.mass_floor);
    double vn = masked_weighted_l2_norm(at.v_t, at.mu_t, at.mass_floor);
    r.velocity_norm_sq = vn * vn;
    r.acceleration_residual_l2 = ode_residual(s0, s1, s2, process, eval);
    ConservationPair c = conservation_constant(at, process);
    r.conservation_c = c.c;
    r.conservation_c_alt = c.c_alt;
    EntropyDerivativeReport e = entropy_derivative_checks(s0, s1, s2, process, eval);
    r.h_f = e.h_f;
    r.h_b = e.h_b;
    r.dt_h_f = e.dt_h_f_fd;
    r.dt_h_b = e.dt_h_b_fd;
    r.gamma_dt_h_f = e.gamma_dt_h_f;
    r.gamma_dt_h_b = e.gamma_dt_h_b;
    r.dtt_h_f_gamma2 = e.dtt_h_f_gamma2;
    r.dtt_h_f_fd = e.dtt_h_f_fd;
    r.mass_drift = at.mass_drift;
    return r;
}

// full report series along the bridge, with one-sided stencils where the centered
// triple would leave [0,1]
inline std::vector<DiagnosticsReport> diagnose_flow(const SchrodingerSolution& sol,
                                                    const ReferenceProcess& process,
                                                    const std::vector<double>& ts,
                                                    double dt = 1e-3,
                                                    double mass_floor = kDefaultMassFloor) {
    std::vector<DiagnosticsReport> out;
    out.reserve(ts.size());
    for (double t : ts) {
        double base;
        int eval;
        if (t - dt < 0.0) {
            base = t;
            eval = 0;
        } else if (t + dt > 1.0) {
            base = t - 2.0 * dt;
            eval = 2;
        } else {
            base = t - dt;
            eval = 1;
        }
        FlowSlice s0 = propagate(sol, process, base, mass_floor);
        FlowSlice s1 = propagate(sol, process, base + dt, mass_floor);
        FlowSlice s2 = propagate(sol, process, base + 2.0 * dt, mass_floor);
        out.push_back(diagnose(s0, s1, s2, process, eval));
    }
    return out;
}

struct BoundCheckPoint {
    double t = 0.0;
    double lhs = 0.0;   // entropy along the flow
    double rhs = 0.0;   // closed-form bound
    double margin = 0.0;  // rhs + slack - lhs; negative means violated
};

struct BoundVerdict {
    bool pass = true;
    double lambda = 0.0;
    double worst_margin = 0.0;
    double worst_t = 0.0;
    std::vector<BoundCheckPoint> points;
};

inline BoundVerdict bound_verification(const std::vector<std::pair<double, double>>& entropy_series,
                                       double lambda, double sigma, double H_mu, double H_nu,
                                       double cost, double slack = 0.0) {
    BoundVerdict v;
    v.lambda = lambda;
    bool first = true;
    for (const auto& [t, H] : entropy_series) {
        BoundCheckPoint p;
        p.t = t;
        p.lhs = H;
        p.rhs = entropy_bound_rhs(t, lambda, sigma, H_mu, H_nu, cost);
        p.margin = p.rhs + slack - H;
        if (first || p.margin < v.worst_margin) {
            v.worst_margin = p.margin;
            v.worst_t = t;
            first = false;
        }
        if (p.margin < 0) v.pass = false;
        v.points.push_back(p);
    }
    return v;
}

// largest lambda on a grid for which the bound holds over the whole series
inline double max_admissible_lambda(const std::vector<std::pair<double, double>>& entropy_series,
                                    double sigma, double H_mu, double H_nu, double cost,
                                    double slack, double lambda_lo = 0.1, double lambda_hi = 2.5,
                                    double step = 0.1) {
    double best = 0.0;
    for (double lam = lambda_lo; lam <= lambda_hi + 1e-12; lam += step) {
        if (bound_verification(entropy_series, lam, sigma, H_mu, H_nu, cost, slack).pass)
            best = lam;
    }
    return best;
}

struct SandwichVerdict {
    double lower_margin = 0.0;  // cost - H(mu)
    double upper_margin = 0.0;  // H(mu)/(1-e^{-sigma lambda}) - cost
    double pair_margin = 0.0;   // (H(mu)+H(nu))/(1-e^{-sigma lambda/2}) - cost
    bool pass(double tol) const {
        return lower_margin >= -tol && upper_margin >= -tol && pair_margin >= -tol;
    }
};

inline SandwichVerdict cost_entropy_sandwich(double cost, double H_mu, double H_nu, double sigma,
                                             double lambda) {
    SandwichVerdict v;
    v.lower_margin = cost - H_mu;
    v.upper_margin = H_mu / (1.0 - std::exp(-sigma * lambda)) - cost;
    v.pair_margin = (H_mu + H_nu) / (1.0 - std::exp(-0.5 * sigma * lambda)) - cost;
    return v;
}

struct FisherConvexityPoint {
    double t = 0.0;
    double second_diff = 0.0;  // centered second difference of t -> I(mu_t)
    double rhs = 0.0;          // 8 alpha^2 |v|^2 + |grad^W I|^2 / 8
    double margin = 0.0;
};

struct FisherConvexityReport {
    bool pass = true;
    bool convex = true;     // all second differences nonnegative up to tol
    double worst_margin = 0.0;
    double worst_t = 0.0;
    std::vector<FisherConvexityPoint> points;
};

struct FisherSample {
    double t = 0.0;
    double fisher = 0.0;
    double velocity_norm_sq = 0.0;
    double fisher_grad_norm_sq = 0.0;
};

// second differences taken on the (uniformly spaced) sample times themselves
inline FisherConvexityReport fisher_convexity_check(const std::vector<FisherSample>& samples,
                                                    double alpha_sq,
                                                    double slack_scale = 0.05,
                                                    double convexity_tol = 1e-6) {
    if (samples.size() < 3) throw std::invalid_argument("fisher_convexity_check needs >= 3 samples");
    FisherConvexityReport r;
    bool first = true;
    for (std::size_t k = 1; k + 1 < samples.size(); ++k) {
        double dt = 0.5 * (samples[k + 1].t - samples[k - 1].t);
        FisherConvexityPoint p;
        p.t = samples[k].t;
        p.second_diff =
            (samples[k + 1].fisher - 2.0 * samples[k].fisher + samples[k - 1].fisher) / (dt * dt);
        p.rhs = 8.0 * alpha_sq * samples[k].velocity_norm_sq + samples[k].fisher_grad_norm_sq / 8.0;
        p.margin = p.second_diff - p.rhs + slack_scale * (p.rhs + 1.0);
        if (p.margin < 0) r.pass = false;
        if (p.second_diff < -convexity_tol * (std::abs(samples[k].fisher) + 1.0)) r.convex = false;
        if (first || p.margin < r.worst_margin) {
            r.worst_margin = p.margin;
            r.worst_t = p.t;
            first = false;
        }
        r.points.push_back(p);
    }
    return r;
}

struct FisherTwoTermCheck {
    double t = 0.0;
    double fd_dtt = 0.0;     // d/dt of <grad^W I, v> by centered difference
    double two_term = 0.0;   // <D/dt grad^W I, v> + |grad^W I|^2 / 8
    double discrepancy = 0.0;
};

inline FisherTwoTermCheck fisher_two_term_check(const FlowSlice& lo, const FlowSlice& mid,
                                                const FlowSlice& hi,
                                                const ReferenceProcess& process) {
    double dt = 0.5 * (hi.t - lo.t);
    if (!(dt > 0)) throw std::invalid_argument("fisher_two_term_check needs increasing times");
    Field w_lo = fisher_gradient(lo.mu_t, process, lo.mass_floor);
    Field w_mid = fisher_gradient(mid.mu_t, process, mid.mass_floor);
    Field w_hi = fisher_gradient(hi.mu_t, process, hi.mass_floor);

    auto pairing = [](const Field& w, const FlowSlice& s) {
        Field prod(w.grid, Vec(w.values.array() * s.v_t.values.array()));
        return masked_integrate(prod, s.mu_t, s.mass_floor);
    };
    FisherTwoTermCheck r;
    r.t = mid.t;
    r.fd_dtt = (pairing(w_hi, hi) - pairing(w_lo, lo)) / (2.0 * dt);

    Vec dtw = (w_hi.values - w_lo.values) / (2.0 * dt);
    Vec conv = mid.v_t.values.array() * gradient(w_mid).values.array();
    Field material(w_mid.grid, Vec(dtw + conv));
    Field paired(w_mid.grid, Vec(material.values.array() * mid.v_t.values.array()));
    double term1 = masked_integrate(paired, mid.mu_t, mid.mass_floor);
    double wn = masked_weighted_l2_norm(w_mid, mid.mu_t, mid.mass_floor);
    r.two_term = term1 + wn * wn / 8.0;
    r.discrepancy = std::abs(r.fd_dtt - r.two_term);
    return r;
}

}  // namespace bridgelab

#endif
