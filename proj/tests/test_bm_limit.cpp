#include <catch2/catch.hpp>

#include <cmath>

#include "coxcp/bm_limit.hpp"
#include "coxcp/math.hpp"

using namespace coxcp;

namespace {

DriftedBmSpec random_spec(Rng& rng) {
    return DriftedBmSpec{0.4 + 1.6 * rng.uniform01(), 0.4 + 1.6 * rng.uniform01(),
                         0.6 + 0.8 * rng.uniform01(), 0.6 + 0.8 * rng.uniform01()};
}

double density_mass(const DriftedBmSpec& spec) {
    const double a1_left = spec.tau1 / spec.sigma1;
    const double a1_right = spec.tau2 / spec.sigma2;
    const double h_left = std::max(150.0 / (a1_left * a1_left), 60.0);
    const double h_right = std::max(150.0 / (a1_right * a1_right), 60.0);
    const double left =
        integrate([&](double s) { return argmax_density(spec, -s); }, 0.0, h_left, 1e-10);
    const double right =
        integrate([&](double s) { return argmax_density(spec, s); }, 0.0, h_right, 1e-10);
    return left + right;
}

}  // namespace

TEST_CASE("one-sided crossing law", "[bm_limit]") {
    CHECK(drifted_bm_tail_prob(1.0, 1.0) == Approx(std::exp(-2.0)).epsilon(1e-15));
    CHECK(drifted_bm_tail_prob(1e-12, 1.0) == Approx(1.0).epsilon(1e-9));
    CHECK_THROWS_AS(drifted_bm_tail_prob(0.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(drifted_bm_tail_prob(1.0, -0.5), std::domain_error);
}

TEST_CASE("one-sided crossing law matches simulated paths", "[bm_limit]") {
    // suppress the left side with a steep drift; the two-sided sup is then
    // the right-side sup up to an e^{-100} contamination
    DriftedBmSpec spec{50.0, 1.0, 1.0, 1.0};
    BmSimConfig config;
    config.paths = 20000;
    config.seed = 99;
    const auto sim = simulate_sup_and_argmax(spec, config);
    double exceed = 0.0;
    for (double s : sim.sup_samples) exceed += s > 1.0 ? 1.0 : 0.0;
    const double p_hat = exceed / static_cast<double>(sim.sup_samples.size());
    const double expect = drifted_bm_tail_prob(1.0, 1.0);
    const double se = std::sqrt(expect * (1.0 - expect) / sim.sup_samples.size());
    CHECK(std::abs(p_hat - expect) <= 3.0 * se);
}

TEST_CASE("expected supremum closed form", "[bm_limit]") {
    CHECK(expected_supremum(DriftedBmSpec{0.5, 0.5, 1.0, 1.0}) == 1.5);
    // hand integral: 1/2 + 1 - 1/3
    CHECK(expected_supremum(DriftedBmSpec{1.0, 0.5, 1.0, 1.0}) ==
          Approx(7.0 / 6.0).epsilon(1e-15));
    CHECK(expected_supremum(DriftedBmSpec{1e6, 1e6, 1.0, 1.0}) <= 1e-5);
    CHECK_THROWS_AS(expected_supremum(DriftedBmSpec{0.0, 1.0, 1.0, 1.0}), std::domain_error);

    // decreasing in each drift, increasing in each diffusion
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto spec = random_spec(rng);
        auto bigger_tau = spec;
        bigger_tau.tau1 *= 1.3;
        CHECK(expected_supremum(bigger_tau) < expected_supremum(spec));
        auto bigger_sigma = spec;
        bigger_sigma.sigma2 *= 1.3;
        CHECK(expected_supremum(bigger_sigma) > expected_supremum(spec));
        CHECK(expected_supremum(spec) > 0.0);
    }
}

TEST_CASE("argmax density normalizes and is symmetric when balanced", "[bm_limit]") {
    const DriftedBmSpec symmetric{0.5, 0.5, 1.0, 1.0};
    CHECK(density_mass(symmetric) == Approx(1.0).margin(1e-6));
    for (double s : {0.2, 0.7, 1.9, 4.5})
        CHECK(argmax_density(symmetric, s) == Approx(argmax_density(symmetric, -s)).epsilon(1e-12));

    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial)
        CHECK(density_mass(random_spec(rng)) == Approx(1.0).margin(1e-6));
}

TEST_CASE("depth at an independent copy's argmax", "[bm_limit]") {
    const DriftedBmSpec symmetric{0.5, 0.5, 1.0, 1.0};
    CHECK(expected_depth_at_copy_argmax(symmetric) == Approx(1.5).margin(1e-6));
    CHECK(expected_depth_at_copy_argmax(symmetric) ==
          Approx(expected_supremum(symmetric)).margin(1e-6));

    // space scaling: (tau, sigma) -> (c tau, c sigma) scales values by c
    Rng rng(23);
    for (int trial = 0; trial < 5; ++trial) {
        const auto spec = random_spec(rng);
        const double c = 0.5 + 2.0 * rng.uniform01();
        DriftedBmSpec scaled{c * spec.tau1, c * spec.tau2, c * spec.sigma1, c * spec.sigma2};
        CHECK(expected_depth_at_copy_argmax(scaled) ==
              Approx(c * expected_depth_at_copy_argmax(spec)).epsilon(1e-6));
        CHECK(expected_supremum(scaled) == Approx(c * expected_supremum(spec)).epsilon(1e-12));

        // time scaling: (tau, sigma^2) -> (c tau, c sigma^2) leaves values alone
        DriftedBmSpec time_scaled{c * spec.tau1, c * spec.tau2, std::sqrt(c) * spec.sigma1,
                                  std::sqrt(c) * spec.sigma2};
        CHECK(expected_depth_at_copy_argmax(time_scaled) ==
              Approx(expected_depth_at_copy_argmax(spec)).epsilon(1e-6));
        CHECK(expected_supremum(time_scaled) ==
              Approx(expected_supremum(spec)).epsilon(1e-12));
    }
}

TEST_CASE("simulation agrees with the closed form", "[bm_limit]") {
    const DriftedBmSpec symmetric{0.5, 0.5, 1.0, 1.0};
    BmSimConfig config;
    config.paths = 20000;
    config.seed = 2024;
    const auto sim = simulate_sup_and_argmax(symmetric, config);
    CHECK(std::abs(sim.mean_sup - 1.5) <= 3.0 * sim.se_sup);
    CHECK(std::abs(sim.mean_depth_at_copy_argmax - 1.5) <= 3.0 * sim.se_depth);
}

TEST_CASE("simulation is bit-identical under a fixed seed", "[bm_limit]") {
    const DriftedBmSpec spec{0.8, 0.5, 1.0, 1.2};
    BmSimConfig config;
    config.paths = 2000;
    config.seed = 7;
    const auto a = simulate_sup_and_argmax(spec, config);
    const auto b = simulate_sup_and_argmax(spec, config);
    CHECK(a.mean_sup == b.mean_sup);
    CHECK(a.mean_depth_at_copy_argmax == b.mean_depth_at_copy_argmax);
    CHECK(a.sup_samples == b.sup_samples);
    CHECK(a.argmax_samples == b.argmax_samples);
}

TEST_CASE("halving the step does not move the supremum estimate", "[bm_limit]") {
    const DriftedBmSpec spec{0.5, 0.5, 1.0, 1.0};
    BmSimConfig coarse;
    coarse.paths = 20000;
    coarse.seed = 31;
    const auto a = simulate_sup_and_argmax(spec, coarse);
    BmSimConfig fine = coarse;
    fine.horizon = a.horizon;
    fine.step = a.step / 2.0;
    fine.seed = 32;
    const auto b = simulate_sup_and_argmax(spec, fine);
    const double band = 3.0 * std::sqrt(a.se_sup * a.se_sup + b.se_sup * b.se_sup);
    CHECK(std::abs(a.mean_sup - b.mean_sup) <= band);
}

TEST_CASE("spec construction from quadratic forms", "[bm_limit]") {
    const auto spec = spec_from_quadratic_forms(4.0, 4.0, 4.0, 4.0);
    CHECK(spec.tau1 == 2.0);
    CHECK(spec.tau2 == 2.0);
    CHECK(spec.sigma1 == 2.0);
    CHECK(spec.sigma2 == 2.0);
    CHECK_THROWS_AS(spec_from_quadratic_forms(-1.0, 1.0, 1.0, 1.0), std::domain_error);

    // rescaling the direction leaves the expected supremum unchanged
    Rng rng(37);
    for (int trial = 0; trial < 10; ++trial) {
        const double d1 = 0.2 + rng.uniform01(), d2 = 0.2 + rng.uniform01();
        const double e1 = 0.2 + rng.uniform01(), e2 = 0.2 + rng.uniform01();
        const double c2 = std::pow(0.5 + 2.0 * rng.uniform01(), 2);
        const double base = expected_supremum(spec_from_quadratic_forms(d1, d2, e1, e2));
        const double scaled = expected_supremum(
            spec_from_quadratic_forms(c2 * d1, c2 * d2, c2 * e1, c2 * e2));
        CHECK(scaled == Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("verification gate fires on a corrupted constant", "[bm_limit]") {
    const DriftedBmSpec symmetric{0.5, 0.5, 1.0, 1.0};
    BmSimConfig config;
    config.paths = 5000;
    config.seed = 77;
    const auto good = verify_bias_constants(symmetric, config, 3.0);
    CHECK(good.agree);
    const auto bad = verify_bias_constants(symmetric, config, 3.4);
    CHECK_FALSE(bad.agree);
}
