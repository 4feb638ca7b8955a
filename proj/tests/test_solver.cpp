#include <catch2/catch_amalgamated.hpp>

#include "dear/selftest.hpp"
#include "dear/solver.hpp"

using namespace dear;

TEST_CASE("picard on the scalar halving map") {
    // f(z) = z/2 + 1, fixed point 2
    auto f = [](const Tensor& x) {
        Tensor y = x;
        y[0] = x[0] / 2.0 + 1.0;
        return y;
    };
    SolverConfig cfg;
    cfg.method = SolveMethod::picard;
    cfg.stop_mode = StopMode::absolute;
    cfg.epsilon = 1e-3;
    cfg.max_iters = 64;
    SolveResult r = solve_fixed_point(f, Tensor({1}), cfg);
    CHECK(r.converged);
    CHECK(r.iterations <= 12);
    CHECK(std::abs(r.state[0] - 2.0) <= 2e-3);
    CHECK(r.residual <= 1e-3);
}

TEST_CASE("a fixed point as the start converges after one check, state unchanged") {
    auto f = [](const Tensor& x) { return x; };
    SolverConfig cfg;
    cfg.epsilon = 1e-3;
    Tensor x0({4}, 0.7);
    SolveResult r = solve_fixed_point(f, x0, cfg);
    CHECK(r.converged);
    CHECK(r.iterations == 1);
    CHECK(max_abs_diff(r.state, x0) == 0.0);
    CHECK(r.residual == 0.0);
}

TEST_CASE("anderson matches the closed form on an affine contraction") {
    namespace sd = selftest_detail;
    const int dim = 8;
    Rng rng(1234);
    std::vector<double> a(dim * dim);
    for (double& v : a) v = rng.gauss();
    const double radius = sd::spectral_radius_estimate(a, dim, rng);
    for (double& v : a) v *= 0.5 / radius;
    Tensor b({dim});
    for (int i = 0; i < dim; ++i) b[i] = rng.gauss();

    std::vector<double> ia(static_cast<size_t>(dim) * dim);
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < dim; ++c)
            ia[static_cast<size_t>(r) * dim + c] = (r == c ? 1.0 : 0.0) - a[static_cast<size_t>(r) * dim + c];
    const auto xstar = sd::gauss_jordan_solve(ia, b.values());

    auto f = [&](const Tensor& x) {
        Tensor y = b;
        for (int r = 0; r < dim; ++r) {
            double s = 0.0;
            for (int c = 0; c < dim; ++c) s += a[static_cast<size_t>(r) * dim + c] * x[c];
            y[r] += s;
        }
        return y;
    };
    SolverConfig cfg;
    cfg.stop_mode = StopMode::absolute;
    cfg.epsilon = 1e-7;
    cfg.max_iters = 1000;
    cfg.method = SolveMethod::anderson;
    SolveResult ra = solve_fixed_point(f, Tensor({dim}), cfg);
    cfg.method = SolveMethod::picard;
    SolveResult rp = solve_fixed_point(f, Tensor({dim}), cfg);

    CHECK(ra.converged);
    for (int i = 0; i < dim; ++i)
        CHECK(std::abs(ra.state[i] - xstar[static_cast<size_t>(i)]) <= 1e-5);
    CHECK(ra.iterations < rp.iterations);
}

TEST_CASE("contraction suite holds for both solvers") {
    for (const auto& r : selftest_solvers(23)) {
        INFO(r.name << ": " << r.detail);
        CHECK(r.pass);
    }
}

TEST_CASE("non-finite iterates abort with a diagnostic") {
    auto f = [](const Tensor& x) {
        Tensor y = x;
        y[0] = y[0] * 3.0 + 1.0;  // divergent
        return y;
    };
    SolverConfig cfg;
    cfg.method = SolveMethod::picard;
    cfg.epsilon = 1e-6;
    cfg.max_iters = 10000;
    CHECK_THROWS_WITH(solve_fixed_point(f, Tensor::row({1.0}), cfg),
                      Catch::Matchers::ContainsSubstring("divergence"));
}

TEST_CASE("exhaustion returns the last iterate with diagnostics") {
    auto f = [](const Tensor& x) {
        Tensor y = x;
        y[0] = x[0] * 0.99 + 1.0;  // slow contraction toward 100
        return y;
    };
    SolverConfig cfg;
    cfg.method = SolveMethod::picard;
    cfg.epsilon = 1e-12;
    cfg.max_iters = 5;
    SolveResult r = solve_fixed_point(f, Tensor({1}), cfg);
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 5);
    CHECK(r.residual > 0.0);
}

TEST_CASE("relative stopping uses the scaled threshold") {
    // f(z) = z/2 + 100: fixed point 200 with large norm, so the relative rule
    // stops much earlier than the absolute one
    auto f = [](const Tensor& x) {
        Tensor y = x;
        y[0] = x[0] / 2.0 + 100.0;
        return y;
    };
    SolverConfig rel;
    rel.method = SolveMethod::picard;
    rel.stop_mode = StopMode::relative;
    rel.epsilon = 0.1;
    rel.max_iters = 200;
    SolverConfig abs = rel;
    abs.stop_mode = StopMode::absolute;
    abs.epsilon = 1e-3;
    SolveResult rr = solve_fixed_point(f, Tensor({1}), rel);
    SolveResult ra = solve_fixed_point(f, Tensor({1}), abs);
    CHECK(rr.converged);
    CHECK(ra.converged);
    CHECK(rr.iterations < ra.iterations);
    CHECK(rr.residual / (std::abs(200.0 - (200.0 - rr.state[0]) / 2.0) + 1e-12) <= 0.1);
}

TEST_CASE("solver config validation") {
    SolverConfig cfg;
    cfg.epsilon = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SolverConfig{};
    cfg.max_iters = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SolverConfig{};
    cfg.anderson_m = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK(SolverConfig::default_epsilon(StopMode::absolute) == 1e-3);
    CHECK(SolverConfig::default_epsilon(StopMode::relative) == 0.1);
}
