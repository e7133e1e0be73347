#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <bridgelab/bridgelab.hpp>

using namespace bridgelab;
using Catch::Approx;

TEST_CASE("quantile function inverts the cdf of a uniform density") {
    Grid g{-1.0, 1.0, 201};
    Density u = Density::sample(g, [](double) { return 1.0; });
    Vec F = density_cdf(u);
    REQUIRE(F[0] == 0.0);
    REQUIRE(F[g.n - 1] == 1.0);
    REQUIRE(quantile_from_cdf(F, g, 0.25) == Approx(-0.5).margin(1e-12));
    REQUIRE(quantile_from_cdf(F, g, 0.5) == Approx(0.0).margin(1e-12));
    REQUIRE(quantile_from_cdf(F, g, 0.0) == g.lower);
    REQUIRE(quantile_from_cdf(F, g, 1.0) == g.upper);
}

TEST_CASE("transport distances match gaussian closed forms") {
    Grid g{-6.0, 6.0, 801};
    Density a = gaussian_density(g, -1.0, 0.25);
    Density b = gaussian_density(g, 1.0, 0.25);
    // translation: W1 = |shift|, W2^2 = shift^2
    REQUIRE(w1_distance(a, b) == Approx(2.0).margin(1e-4));
    REQUIRE(w2_squared(a, b) == Approx(4.0).margin(1e-3));
    REQUIRE(w1_distance(a, a) == 0.0);

    // different spreads: W2^2 = (m1-m2)^2 + (s1-s2)^2
    Density c = gaussian_density(g, 0.0, 0.25);
    Density d = gaussian_density(g, 0.5, 0.36);
    REQUIRE(w2_squared(c, d) == Approx(0.25 + 0.01).margin(1e-3));
}

TEST_CASE("displacement interpolant distance vanishes at the endpoints") {
    Grid g{-6.0, 6.0, 401};
    Density mu = gaussian_density(g, -1.0, 0.25);
    Density nu = gaussian_density(g, 1.0, 0.36);
    REQUIRE(w1_to_displacement_interpolant(mu, mu, nu, 0.0) < 1e-10);
    REQUIRE(w1_to_displacement_interpolant(nu, mu, nu, 1.0) < 1e-10);
    // equal-variance endpoints displace to the translated gaussian at the midpoint
    Density syma = gaussian_density(g, -1.0, 0.25);
    Density symb = gaussian_density(g, 1.0, 0.25);
    Density mid = gaussian_density(g, 0.0, 0.25);
    REQUIRE(w1_to_displacement_interpolant(mid, syma, symb, 0.5) < 1e-4);
}

TEST_CASE("empirical transport distance is exact on hand cases") {
    Grid g{-1.0, 1.0, 201};
    Density u = Density::sample(g, [](double) { return 1.0; });
    // one sample at the median of a uniform law
    REQUIRE(w1_empirical({0.0}, u) == Approx(0.5).margin(1e-12));
    // two symmetric samples: 1/16 + ... integrates to exactly 1/4
    REQUIRE(w1_empirical({-0.5, 0.5}, u) == Approx(0.25).margin(1e-12));
    REQUIRE_THROWS(w1_empirical({}, u));
}

TEST_CASE("loglog slope recovers exact power laws") {
    std::vector<double> xs{1e2, 1e3, 1e4};
    std::vector<double> ys;
    for (double x : xs) ys.push_back(3.7 * std::pow(x, -0.5));
    REQUIRE(loglog_slope(xs, ys) == Approx(-0.5).margin(1e-12));
    REQUIRE_THROWS(loglog_slope({1.0}, {1.0}));
    REQUIRE_THROWS(loglog_slope(xs, {1.0, 2.0}));
}

TEST_CASE("hot gas runs are reproducible and conserve mass") {
    Grid g{-6.0, 6.0, 201};
    ReferenceProcess p = ReferenceProcess::ou(g, 1.0, 1.0);
    Density mu = gaussian_density(g, 0.0, 0.25);
    SchrodingerSolution sol = sinkhorn({p, mu, mu});
    std::vector<double> ts{0.25, 0.5, 0.75};

    HotGasRun r1 = hot_gas(sol, p, 500, ts, 42);
    HotGasRun r2 = hot_gas(sol, p, 500, ts, 42);
    REQUIRE_FALSE(r1.low_particle_warning);
    for (std::size_t s = 0; s < ts.size(); ++s) {
        REQUIRE(r1.samples[s] == r2.samples[s]);
        REQUIRE(r1.distances[s] == r2.distances[s]);
        REQUIRE(r1.distances[s] > 0.0);
        REQUIRE(r1.distances[s] < 0.5);
        Field one = Field::sample(g, [](double) { return 1.0; });
        REQUIRE(integrate(one, r1.empirical_densities[s]) == Approx(1.0).margin(1e-12));
    }
    HotGasRun r3 = hot_gas(sol, p, 500, ts, 43);
    REQUIRE(r1.samples[0] != r3.samples[0]);
    REQUIRE(hot_gas(sol, p, 50, {0.5}, 1).low_particle_warning);
    REQUIRE_THROWS(hot_gas(sol, p, 0, ts, 1));
}

TEST_CASE("averaging bridge densities over the coupling reproduces the flow marginal") {
    Grid g{-6.0, 6.0, 201};
    ReferenceProcess p = ReferenceProcess::ou(g, 1.0, 1.0);
    Density mu = gaussian_density(g, 0.0, 0.25);
    SchrodingerSolution sol = sinkhorn({p, mu, mu});
    FlowSlice s = propagate(sol, p, 0.5);
    REQUIRE(mixture_crosscheck(sol, p, s, 10) < 1e-8);
    FlowSlice end = propagate(sol, p, 1.0);
    REQUIRE_THROWS(mixture_crosscheck(sol, p, end, 10));
}

TEST_CASE("small-noise sweep approaches the quadratic transport cost from below") {
    Grid g{-6.0, 6.0, 401};
    Density mu = gaussian_density(g, -1.0, 0.25);
    Density nu = gaussian_density(g, 1.0, 0.25);
    SmallNoiseSweep sweep = small_noise_sweep(mu, nu, {1.0, 0.5, 0.2, 0.1}, g);

    REQUIRE(sweep.w2_half_sq == Approx(2.0).margin(2e-3));
    for (std::size_t k = 0; k + 1 < sweep.scaled_costs.size(); ++k)
        REQUIRE(sweep.scaled_costs[k] < sweep.scaled_costs[k + 1]);
    REQUIRE(sweep.scaled_costs.back() < sweep.w2_half_sq + 1e-6);
    REQUIRE(sweep.scaled_costs.back() > 1.7);
    for (std::size_t k = 0; k + 1 < sweep.geodesic_distances.size(); ++k)
        REQUIRE(sweep.geodesic_distances[k + 1] <= sweep.geodesic_distances[k] * (1.0 + 1e-6));

    // the rescaled warm start must not cost more iterations than a cold solve
    ReferenceProcess cold = ReferenceProcess::brownian(g, 0.1);
    SchrodingerSolution direct = sinkhorn({cold, mu, nu});
    REQUIRE(sweep.iteration_counts.back() <= direct.iterations);

    REQUIRE_THROWS(small_noise_sweep(mu, nu, {0.5, 0.5}, g));
    REQUIRE_THROWS(small_noise_sweep(mu, nu, {0.5, -0.1}, g));
}

TEST_CASE("stationary-target cost stays inside the entropy bracket at small noise") {
    Grid g{-6.0, 6.0, 401};
    Density mu = gaussian_density(g, 0.0, 0.25);
    TalagrandCheck chk = talagrand_check(mu, 1.0, 0.05, 2.0, g);
    REQUIRE(chk.pass(1e-4));
    REQUIRE(chk.cost >= chk.H_mu - 1e-4);
    REQUIRE(chk.cost <= chk.upper + 1e-4);
}

TEST_CASE("log-concavity flags separate gaussian and bimodal shapes") {
    Grid g{-6.0, 6.0, 401};
    Density gauss = gaussian_density(g, 0.0, 0.25);
    REQUIRE(density_log_concavity(gauss).pass);

    Density bimodal = Density::sample(g, [](double x) {
        return 0.5 * std::exp(-(x + 1.2) * (x + 1.2) / 0.1) + 0.5 * std::exp(-(x - 1.2) * (x - 1.2) / 0.1);
    });
    DensityLogConcavity flag = density_log_concavity(bimodal);
    REQUIRE_FALSE(flag.pass);
    REQUIRE(flag.worst_second_diff > 0.0);
}

TEST_CASE("coupling log-concavity holds for gaussian marginals and fails for bimodal ones") {
    Grid g{-6.0, 6.0, 201};
    ReferenceProcess p = ReferenceProcess::ou(g, 1.0, 1.0);
    Density mu = gaussian_density(g, -0.5, 0.25);
    Density nu = gaussian_density(g, 0.5, 0.36);
    SchrodingerSolution sol = sinkhorn({p, mu, nu});
    REQUIRE(coupling_log_concavity(sol.coupling).pass());

    // modes must be wide enough that the saddle stays above the usable mass floor
    Density bimodal(g, Vec(gaussian_density(g, -1.0, 0.15).values + gaussian_density(g, 1.0, 0.15).values));
    SchrodingerSolution bad = sinkhorn({p, bimodal, bimodal});
    LogConcavityFlags flags = coupling_log_concavity(bad.coupling);
    REQUIRE_FALSE(flags.pass());
    REQUIRE(flags.worst_second_diff > 0.0);
}

TEST_CASE("convexity study separates checked and unchecked instances") {
    Grid g{-6.0, 6.0, 201};
    Density mu = gaussian_density(g, -0.5, 0.25);
    Density nu = gaussian_density(g, 0.5, 0.36);
    ConvexityStudyRow row = convexity_study_instance(1.0, mu, nu, 9);
    REQUIRE(row.coupling_log_concave);
    REQUIRE(row.marginal_log_concave);
    REQUIRE(row.convexity_checked);
    REQUIRE(row.convexity_pass);

    Density bimodal(g, Vec(gaussian_density(g, -1.2, 0.05).values + gaussian_density(g, 1.2, 0.05).values));
    ConvexityStudyRow counter = convexity_study_instance(1.0, bimodal, bimodal, 9);
    REQUIRE_FALSE(counter.convexity_checked);
}

TEST_CASE("feynman-kac residual refines at first order and ignores constant shifts") {
    FkLevel coarse{Grid{-6.0, 6.0, 201}, 4e-3, 8};
    FkLevel fine{Grid{-6.0, 6.0, 401}, 2e-3, 16};
    FkVerification v = fk_verification([](double x) { return 0.5 * x * x; },
                                       [](double x) { return std::exp(-x * x / 0.5); },
                                       [](double x) { return std::exp(-x * x / 0.5); },
                                       {0.5}, coarse, fine);
    REQUIRE(v.order >= 0.8);
    REQUIRE(v.const_invariance < 1e-10);
}

TEST_CASE("deep small-noise potentials keep the slice mass on the transport ray") {
    // at eps = 0.01 the log potentials reach magnitude ~2.5e3; any clamping of
    // finite log values during slice assembly shows up here as far-field mass
    // and a wrecked distance to the displacement interpolant
    Grid g{-6.0, 6.0, 401};
    Density mu = gaussian_density(g, -1.0, 0.25);
    Density nu = gaussian_density(g, 1.0, 0.25);
    SmallNoiseSweep sweep = small_noise_sweep(mu, nu, {0.1, 0.05, 0.02, 0.01}, g);
    for (std::size_t k = 0; k + 1 < sweep.geodesic_distances.size(); ++k)
        REQUIRE(sweep.geodesic_distances[k + 1] <=
                sweep.geodesic_distances[k] * (1.0 + 1e-6));
    REQUIRE(sweep.geodesic_distances.back() < 1e-2);
}
