#ifndef BRIDGELAB_FLOW_HPP
#define BRIDGELAB_FLOW_HPP

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "grid.hpp"
#include "kernels.hpp"
#include "solver.hpp"

namespace bridgelab {

struct FlowSlice {
    double t = 0.0;
    Field f_t, g_t;
    Density mu_t;          // renormalized product f_t g_t m
    Field v_t;             // (sigma/2) grad(log g_t - log f_t), zeroed where masked
    Field log_ft, log_gt;
    double mass_drift = 0.0;      // |integral of f_t g_t m - 1| before renormalization
    double log_normalizer = 0.0;  // log of that integral; nonzero for Feynman-Kac flows
    std::vector<bool> mask;       // mu_t above the mass floor
    double mass_floor = kDefaultMassFloor;
};

namespace detail {

// everything is combined in log space so that potentials with huge dynamic
// range (small-noise regime) never pass through exp before cancellation
inline FlowSlice assemble_slice(const Grid& grid, double t, double sigma, Vec log_f, Vec log_g,
                                const Vec& m_values, double mass_floor) {
    FlowSlice s;
    s.t = t;
    s.mass_floor = mass_floor;
    const int n = grid.n;
    // the mass sum must see the raw -inf of vanished potentials: small-noise
    // potentials legitimately reach magnitudes beyond any fixed floor, so no
    // clamping before this point
    Vec sum(n);
    for (int i = 0; i < n; ++i)
        sum[i] = log_f[i] + log_g[i] + std::log(std::max(m_values[i], kLogFloor));
    // the stored logs feed difference stencils and must be finite; only -inf
    // entries are synthetic (vanished marginal or kernel row with no support
    // overlap), and the mask voids every point they can influence
    auto definite = [n](Vec& v) {
        double lo = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i)
            if (std::isfinite(v[i])) lo = std::min(lo, v[i]);
        double fill = std::isfinite(lo) ? lo - 1.0 : std::log(kLogFloor);
        for (int i = 0; i < n; ++i)
            if (!std::isfinite(v[i])) v[i] = fill;
    };
    definite(log_f);
    definite(log_g);
    double shift = sum.maxCoeff();
    if (!std::isfinite(shift)) throw std::runtime_error("flow slice has no usable mass");
    const Vec w = grid.weights();
    double shifted_mass = 0.0;
    for (int i = 0; i < n; ++i) shifted_mass += std::exp(sum[i] - shift) * w[i];
    double log_mass = shift + std::log(shifted_mass);
    if (!std::isfinite(log_mass)) throw std::runtime_error("flow slice has no usable mass");
    s.mass_drift = std::abs(std::expm1(log_mass));
    s.log_normalizer = log_mass;
    Vec mu(n);
    for (int i = 0; i < n; ++i) mu[i] = std::exp(sum[i] - log_mass);
    s.mu_t = Density(grid, std::move(mu), /*normalize=*/false);
    s.f_t = Field(grid, Vec(log_f.array().exp().matrix()));
    s.g_t = Field(grid, Vec(log_g.array().exp().matrix()));
    s.log_ft = Field(grid, std::move(log_f));
    s.log_gt = Field(grid, std::move(log_g));
    Vec diff = s.log_gt.values - s.log_ft.values;
    Vec v = 0.5 * sigma * gradient(Field(grid, std::move(diff))).values;
    s.mask.assign(n, false);
    for (int i = 0; i < n; ++i) {
        s.mask[i] = s.mu_t.values[i] >= mass_floor;
        if (!s.mask[i]) v[i] = 0.0;
    }
    s.v_t = Field(grid, std::move(v));
    return s;
}

}  // namespace detail

// f_t = P_t f and g_t = P_{1-t} g; both directions use the same kernel by reversibility
inline FlowSlice propagate(const SchrodingerSolution& sol, const ReferenceProcess& process,
                           double t, double mass_floor = kDefaultMassFloor) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("propagate needs t in [0,1]");
    require_same_grid(sol.grid, process.grid, "propagate");
    Vec log_ft = t == 0.0 ? sol.log_f : build_kernel(process, t).apply_log(sol.log_f);
    Vec log_gt = t == 1.0 ? sol.log_g : build_kernel(process, 1.0 - t).apply_log(sol.log_g);
    return detail::assemble_slice(process.grid, t, process.sigma, std::move(log_ft),
                                  std::move(log_gt), process.m_values, mass_floor);
}

struct HeatFlowReport {
    double t = 0.0;
    double dt = 0.0;
    double kolmogorov_forward = 0.0;   // |FD d/dt f_t - L f_t| in L2(mu_t)
    double kolmogorov_backward = 0.0;  // |FD d/dt g_t + L g_t|
    double hjb_forward = 0.0;   // d/dt log tilde-f - (sigma/2)(lap + |grad|^2) log tilde-f + sigma*Uscript
    double hjb_backward = 0.0;  // mirrored sign
};

inline HeatFlowReport heat_flow_check(const FlowSlice& lo, const FlowSlice& mid,
                                      const FlowSlice& hi, const ReferenceProcess& process) {
    double dt = 0.5 * (hi.t - lo.t);
    if (!(dt > 0)) throw std::invalid_argument("heat_flow_check needs increasing slice times");
    HeatFlowReport r;
    r.t = mid.t;
    r.dt = dt;

    Vec dfdt = (hi.f_t.values - lo.f_t.values) / (2.0 * dt);
    Vec dgdt = (hi.g_t.values - lo.g_t.values) / (2.0 * dt);
    Vec lf = apply_generator(process, mid.f_t).values;
    Vec lg = apply_generator(process, mid.g_t).values;
    const Grid& grid = process.grid;
    r.kolmogorov_forward =
        masked_weighted_l2_norm(Field(grid, Vec(dfdt - lf)), mid.mu_t, mid.mass_floor);
    r.kolmogorov_backward =
        masked_weighted_l2_norm(Field(grid, Vec(dgdt + lg)), mid.mu_t, mid.mass_floor);

    ReciprocalCharacteristic rc = reciprocal_characteristic(process);
    auto hjb = [&](const Field& lo_log, const Field& mid_log, const Field& hi_log, double sign) {
        Vec phi = mid_log.values - process.U.values;  // log of the tilde potential
        Vec dphi = (hi_log.values - lo_log.values) / (2.0 * dt);
        Field phi_f(process.grid, phi);
        Vec gp = gradient(phi_f).values;
        Vec lp = laplacian(phi_f).values;
        Vec resid = dphi - sign * (0.5 * process.sigma * (lp.array() + gp.array().square()).matrix() -
                                   process.sigma * rc.U_script.values);
        return masked_weighted_l2_norm(Field(process.grid, std::move(resid)), mid.mu_t,
                                       mid.mass_floor);
    };
    r.hjb_forward = hjb(lo.log_ft, mid.log_ft, hi.log_ft, +1.0);
    r.hjb_backward = hjb(lo.log_gt, mid.log_gt, hi.log_gt, -1.0);
    return r;
}

// endpoint functions evolved under exp(t(L - K)); marginals are the renormalized products
struct FkProblem {
    ReferenceProcess process;  // brownian reference
    Field K;
    Field f0;  // value of f at time 0
    Field g1;  // value of g at time 1
    int n_trotter = 32;
};

inline FlowSlice fk_flow(const FkProblem& fk, double t, double mass_floor = kDefaultMassFloor) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("fk_flow needs t in [0,1]");
    require_same_grid(fk.process.grid, fk.K.grid, "fk_flow");
    Vec log_f0 = log_field(fk.f0.values, fk.process.grid).values;
    Vec log_g1 = log_field(fk.g1.values, fk.process.grid).values;
    Vec log_ft = t == 0.0
                     ? std::move(log_f0)
                     : fk_kernel(fk.process, fk.K, t, fk.n_trotter).apply_log(log_f0);
    Vec log_gt = t == 1.0
                     ? std::move(log_g1)
                     : fk_kernel(fk.process, fk.K, 1.0 - t, fk.n_trotter).apply_log(log_g1);
    return detail::assemble_slice(fk.process.grid, t, fk.process.sigma, std::move(log_ft),
                                  std::move(log_gt), fk.process.m_values, mass_floor);
}

// centered triple around t for time-derivative diagnostics
template <typename SliceFn>
inline std::array<FlowSlice, 3> slice_triple(SliceFn&& make, double t, double dt) {
    double lo = t - dt, hi = t + dt;
    if (lo < 0.0 || hi > 1.0) throw std::invalid_argument("slice triple leaves [0,1]");
    return {make(lo), make(t), make(hi)};
}

}  // namespace bridgelab

#endif
