#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <limits>

#include <bridgelab/bridgelab.hpp>

using namespace bridgelab;
using Catch::Approx;

namespace {

// zooming grid search over the 4 free coupling entries of a 3x3 transport polytope
struct BruteForce {
    Mat coupling = Mat::Zero(3, 3);
    double cost = std::numeric_limits<double>::infinity();
};

double kl_objective(const Mat& pi, const Mat& R) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            if (pi(i, j) < 0) return std::numeric_limits<double>::infinity();
            if (pi(i, j) > 0) s += pi(i, j) * std::log(pi(i, j) / R(i, j));
        }
    return s;
}

BruteForce brute_force_3x3(const Vec& a, const Vec& b, const Mat& R) {
    std::array<double, 4> lo{0, 0, 0, 0};
    std::array<double, 4> hi{std::min(a[0], b[0]), std::min(a[0], b[1]), std::min(a[1], b[0]),
                             std::min(a[1], b[1])};
    BruteForce best;
    const int pts = 40;
    for (int round = 0; round < 8; ++round) {
        std::array<double, 4> argbest{};
        double roundbest = std::numeric_limits<double>::infinity();
        std::array<double, 4> step;
        for (int k = 0; k < 4; ++k) step[k] = (hi[k] - lo[k]) / pts;
        std::array<int, 4> idx;
        for (idx[0] = 0; idx[0] <= pts; ++idx[0])
            for (idx[1] = 0; idx[1] <= pts; ++idx[1])
                for (idx[2] = 0; idx[2] <= pts; ++idx[2])
                    for (idx[3] = 0; idx[3] <= pts; ++idx[3]) {
                        Mat pi(3, 3);
                        pi(0, 0) = lo[0] + idx[0] * step[0];
                        pi(0, 1) = lo[1] + idx[1] * step[1];
                        pi(1, 0) = lo[2] + idx[2] * step[2];
                        pi(1, 1) = lo[3] + idx[3] * step[3];
                        pi(0, 2) = a[0] - pi(0, 0) - pi(0, 1);
                        pi(1, 2) = a[1] - pi(1, 0) - pi(1, 1);
                        pi(2, 0) = b[0] - pi(0, 0) - pi(1, 0);
                        pi(2, 1) = b[1] - pi(0, 1) - pi(1, 1);
                        pi(2, 2) = a[2] - pi(2, 0) - pi(2, 1);
                        double c = kl_objective(pi, R);
                        if (c < roundbest) {
                            roundbest = c;
                            argbest = {pi(0, 0), pi(0, 1), pi(1, 0), pi(1, 1)};
                        }
                    }
        if (roundbest < best.cost) {
            best.cost = roundbest;
            best.coupling(0, 0) = argbest[0];
            best.coupling(0, 1) = argbest[1];
            best.coupling(1, 0) = argbest[2];
            best.coupling(1, 1) = argbest[3];
            best.coupling(0, 2) = a[0] - argbest[0] - argbest[1];
            best.coupling(1, 2) = a[1] - argbest[2] - argbest[3];
            best.coupling(2, 0) = b[0] - argbest[0] - argbest[2];
            best.coupling(2, 1) = b[1] - argbest[1] - argbest[3];
            best.coupling(2, 2) = best.coupling(2, 0) >= 0 && best.coupling(2, 1) >= 0
                                      ? a[2] - best.coupling(2, 0) - best.coupling(2, 1)
                                      : 0.0;
        }
        for (int k = 0; k < 4; ++k) {  // zoom on the incumbent
            double c = argbest[k], half = 2.0 * step[k];
            lo[k] = std::max(0.0, c - half);
            hi[k] = std::min(hi[k], c + half);
        }
    }
    return best;
}

}  // namespace

TEST_CASE("three-point coupling matches an independent brute-force minimizer") {
    Grid g{-1.0, 1.0, 3};
    ReferenceProcess p = ReferenceProcess::ou(g, 1.0, 1.0);
    Density mu(g, Vec{{0.4, 0.5, 0.6}});
    Density nu(g, Vec{{0.7, 0.4, 0.5}});
    SchrodingerSolution sol = sinkhorn({p, mu, nu});

    const Vec w = g.weights();
    Vec a = mu.values.array() * w.array();
    Vec b = nu.values.array() * w.array();
    Mat R = build_joint_reference(p);
    BruteForce bf = brute_force_3x3(a, b, R);

    REQUIRE(sol.cost == Approx(bf.cost).margin(1e-6));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            REQUIRE(sol.coupling(i, j) == Approx(bf.coupling(i, j)).margin(1e-6));
    REQUIRE(sol.final_marginal_error <= 1e-10);
    REQUIRE(sol.converged);
}

TEST_CASE("stationary endpoints produce the reference itself at zero cost") {
    Grid g{-6.0, 6.0, 201};
    ReferenceProcess p = ReferenceProcess::ou(g, 1.0, 1.0);
    Density m = p.stationary();
    SchrodingerSolution sol = sinkhorn({p, m, m});
    REQUIRE(std::abs(sol.cost) < 1e-10);
    // potentials are constant up to the gauge
    double span_f = sol.log_f.maxCoeff() - sol.log_f.minCoeff();
    double span_g = sol.log_g.maxCoeff() - sol.log_g.minCoeff();
    REQUIRE(span_f < 1e-8);
    REQUIRE(span_g < 1e-8);
}

TEST_CASE("gaussian pair on the ou reference hits the closed-form cost") {
    // mu = nu = N(0, 0.25), alpha = sigma = 1: the static problem is solvable
    // in closed form through the gaussian algebra of the joint reference
    Grid g{-6.0, 6.0, 801};
    ReferenceProcess p = ReferenceProcess::ou(g, 1.0, 1.0);
    Density mu = gaussian_density(g, 0.0, 0.25);
    SchrodingerSolution sol = sinkhorn({p, mu, mu});
    REQUIRE(sol.cost == Approx(0.176556).margin(3e-4));
}

TEST_CASE("converged potentials satisfy the fixpoint equations") {
    Grid g{-6.0, 6.0, 201};
    ReferenceProcess p = ReferenceProcess::ou(g, 1.0, 1.0);
    Density mu = gaussian_density(g, -1.0, 0.16);
    Density nu = gaussian_density(g, 1.0, 0.36);
    SchrodingerSolution sol = sinkhorn({p, mu, nu});

    const Vec w = g.weights();
    Vec a = mu.values.array() * w.array();
    Mat R = build_joint_reference(p);
    double worst = 0.0;
    for (int i = 0; i < g.n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < g.n; ++j)
            m = std::max(m, std::log(R(i, j)) + sol.log_g[j]);
        double s = 0.0;
        for (int j = 0; j < g.n; ++j) s += std::exp(std::log(R(i, j)) + sol.log_g[j] - m);
        double lse = m + std::log(s);
        worst = std::max(worst, std::abs(sol.log_f[i] - (std::log(a[i]) - lse)));
    }
    REQUIRE(worst < 1e-9);
}

TEST_CASE("swapping the marginals transposes the coupling") {
    Grid g{-6.0, 6.0, 201};
    ReferenceProcess p = ReferenceProcess::ou(g, 1.0, 1.0);
    Density mu = gaussian_density(g, -0.8, 0.2);
    Density nu = gaussian_density(g, 0.9, 0.3);
    SchrodingerSolution fwd = sinkhorn({p, mu, nu});
    SchrodingerSolution bwd = sinkhorn({p, nu, mu});
    REQUIRE(fwd.cost == Approx(bwd.cost).margin(1e-9));
    REQUIRE((fwd.coupling - bwd.coupling.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("marginal error trace is monotone up to roundoff") {
    Grid g{-6.0, 6.0, 201};
    ReferenceProcess p = ReferenceProcess::brownian(g, 0.2);
    Density mu = gaussian_density(g, -1.0, 0.25);
    Density nu = gaussian_density(g, 1.0, 0.25);
    SchrodingerSolution sol = sinkhorn({p, mu, nu});
    REQUIRE(sol.marginal_error_trace.size() >= 3);
    for (std::size_t k = 1; k < sol.marginal_error_trace.size(); ++k)
        REQUIRE(sol.marginal_error_trace[k] <=
                sol.marginal_error_trace[k - 1] * 1.01 + 1e-15);
}

TEST_CASE("cost against a proper reference is nonnegative") {
    Grid g{-6.0, 6.0, 201};
    ReferenceProcess p = ReferenceProcess::ou(g, 2.0, 1.0);
    Density mu = gaussian_density(g, 0.5, 0.1);
    Density nu = gaussian_density(g, -0.5, 0.4);
    SchrodingerSolution sol = sinkhorn({p, mu, nu});
    REQUIRE(sol.cost >= 0.0);
    REQUIRE(sol.improper == false);
}

TEST_CASE("gauge splits the cost evenly between the endpoint potentials") {
    Grid g{-6.0, 6.0, 201};
    ReferenceProcess p = ReferenceProcess::ou(g, 1.0, 1.0);
    Density mu = gaussian_density(g, -1.0, 0.16);
    Density nu = gaussian_density(g, 1.0, 0.36);
    SchrodingerSolution sol = sinkhorn({p, mu, nu});
    REQUIRE(sol.h_f0 == Approx(sol.h_b1).margin(1e-12));
    REQUIRE(sol.cost == Approx(sol.h_f0 + sol.h_b1).margin(1e-12));
}

TEST_CASE("potential-split cost agrees with the direct kl evaluation") {
    Grid g{-6.0, 6.0, 201};
    ReferenceProcess p = ReferenceProcess::ou(g, 1.0, 1.0);
    Density mu = gaussian_density(g, -1.0, 0.16);
    Density nu = gaussian_density(g, 1.0, 0.36);
    SchrodingerSolution sol = sinkhorn({p, mu, nu});
    double direct = entropic_cost(sol.coupling, build_joint_reference(p));
    REQUIRE(sol.cost == Approx(direct).margin(1e-8));
}

TEST_CASE("warm starting from the solution converges immediately") {
    Grid g{-6.0, 6.0, 201};
    ReferenceProcess p = ReferenceProcess::ou(g, 1.0, 1.0);
    Density mu = gaussian_density(g, -1.0, 0.16);
    Density nu = gaussian_density(g, 1.0, 0.36);
    SchrodingerSolution cold = sinkhorn({p, mu, nu});
    SinkhornOptions opts;
    opts.init_log_f = cold.log_f;
    opts.init_log_g = cold.log_g;
    SchrodingerSolution warm = sinkhorn({p, mu, nu}, opts);
    REQUIRE(warm.iterations <= 2);
    REQUIRE(warm.cost == Approx(cold.cost).margin(1e-10));
}
