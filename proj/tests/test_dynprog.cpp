#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qfc/dynprog.hpp"
#include "qfc/filters.hpp"
#include "qfc/stochastic.hpp"

using namespace qfc;

namespace {

TwoLevelParams base_params() {
    TwoLevelParams p;
    p.mu = 0.1;
    p.a = 1.0;
    p.b = 0.5;
    p.c = 1.0;
    return p;
}

DpGridConfig small_grid() {
    DpGridConfig g;
    g.nx = g.ny = g.nz = 21;
    g.dt = 5e-3;
    g.control_n = 17;
    g.search_stride = 4;
    g.refine = true;
    g.value_stride = 30;
    g.policy_stride = 10;
    return g;
}

}  // namespace

TEST_CASE("grid preconditions are enforced") {
    TwoLevelParams p = base_params();
    DpGridConfig g = small_grid();
    g.nx = 15;
    CHECK_THROWS_AS(rs_backward_solve(p, g), ConfigError);
    g = small_grid();
    g.control_n = 9;
    CHECK_THROWS_AS(rs_backward_solve(p, g), ConfigError);
    p.mu = 0.0;
    CHECK_THROWS_AS(rs_backward_solve(p, small_grid()), ConfigError);
}

TEST_CASE("stability bound violation reports the admissible step") {
    TwoLevelParams p = base_params();
    p.T = 4.0;
    DpGridConfig g = small_grid();
    g.dt = 2.0;
    try {
        rn_backward_solve(p, g);
        FAIL("expected SolverError");
    } catch (const SolverError& e) {
        CHECK(e.max_admissible_dt > 0.0);
        CHECK(e.max_admissible_dt < 2.0);
    }
}

TEST_CASE("NaN in a terminal slice is rejected") {
    TwoLevelParams p = base_params();
    DpGridConfig g = small_grid();
    const Lattice lat = Lattice::over_unit_cube(g.nx, g.ny, g.nz);
    std::vector<double> term(lat.nodes(), 1.0);
    term[lat.index(10, 10, 10)] = std::nan("");
    CHECK_THROWS_AS(
        solve_backward_from(DpMode::risk_sensitive, p, g, 0.05, term),
        SolverError);
}

TEST_CASE("terminal slices match the cost functional at the nodes") {
    TwoLevelParams p = base_params();
    p.T = 0.25;
    DpGridConfig g = small_grid();
    g.value_stride = 1000;  // terminal and t = 0 still kept

    SUBCASE("risk-sensitive: <sigma, exp(mu C2)> at unit mass") {
        const DpResult res = rs_backward_solve(p, g);
        const Lattice& lat = res.value.lat;
        const double* term = res.value.slice(res.value.times.size() - 1);
        CHECK(res.value.times.back() == doctest::Approx(p.T));
        for (int k = 0; k < lat.nz; ++k) {
            const double z = lat.zs[k];
            const double expect =
                0.5 * (1.0 + z) + 0.5 * (1.0 - z) * std::exp(p.mu * p.c);
            CHECK(term[lat.index(10, 10, k)] == expect);
            CHECK(term[lat.index(10, 10, k)] > 0.0);
        }
    }

    SUBCASE("risk-neutral default: (1 - z)/2 * c") {
        const DpResult res = rn_backward_solve(p, g);
        const Lattice& lat = res.value.lat;
        const double* term = res.value.slice(res.value.times.size() - 1);
        for (int k = 0; k < lat.nz; ++k)
            CHECK(term[lat.index(10, 10, k)] == 0.5 * (1.0 - lat.zs[k]) * p.c);
    }

    SUBCASE("risk-neutral exp-c switch: (1 - z)/2 * e^c") {
        DpGridConfig ge = g;
        ge.terminal = TerminalKind::exp_c;
        const DpResult res = rn_backward_solve(p, ge);
        const Lattice& lat = res.value.lat;
        const double* term = res.value.slice(res.value.times.size() - 1);
        for (int k = 0; k < lat.nz; ++k)
            CHECK(term[lat.index(10, 10, k)] ==
                  0.5 * (1.0 - lat.zs[k]) * std::exp(p.c));
    }
}

TEST_CASE("risk-neutral zero-cost problem has zero value and zero policy") {
    TwoLevelParams p = base_params();
    p.a = 0.0;
    p.c = 0.0;
    p.T = 0.25;
    const DpResult res = rn_backward_solve(p, small_grid());
    const Lattice& lat = res.value.lat;
    for (std::size_t s = 0; s < res.value.times.size(); ++s) {
        const double* sl = res.value.slice(s);
        for (long i = 0; i < lat.nodes(); ++i) CHECK(sl[i] == 0.0);
    }
    for (double v : res.policy.u_re) CHECK(v == 0.0);
    for (double v : res.policy.u_im) CHECK(v == 0.0);
}

TEST_CASE("value symmetry under the (y, u_i) sign flip") {
    TwoLevelParams p = base_params();
    p.T = 0.25;
    const DpResult res = rs_backward_solve(p, small_grid());
    const Lattice& lat = res.value.lat;
    const double* v0 = res.value.slice(0);
    const double* pr = res.policy.u_re.data();
    const double* pi = res.policy.u_im.data();
    for (int k = 0; k < lat.nz; ++k)
        for (int j = 0; j < lat.ny; ++j)
            for (int i = 0; i < lat.nx; ++i) {
                const int jm = lat.ny - 1 - j;  // y -> -y
                CHECK(std::abs(v0[lat.index(i, j, k)] - v0[lat.index(i, jm, k)]) <=
                      1e-12);
                CHECK(std::abs(pr[lat.index(i, j, k)] - pr[lat.index(i, jm, k)]) <=
                      1e-9);
                CHECK(std::abs(pi[lat.index(i, j, k)] + pi[lat.index(i, jm, k)]) <=
                      1e-9);
            }
}

TEST_CASE("risk-neutral value prefers the up state") {
    TwoLevelParams p = base_params();
    p.T = 0.5;
    const DpResult res = rn_backward_solve(p, small_grid());
    for (std::size_t s = 0; s < res.value.times.size(); ++s) {
        const double t = res.value.times[s];
        CHECK(res.value.at(0, 0, 1.0, t) <= res.value.at(0, 0, -1.0, t) + 1e-12);
    }
}

TEST_CASE("dynamic-programming consistency from an intermediate slice") {
    TwoLevelParams p = base_params();
    p.T = 0.6;
    DpGridConfig g = small_grid();
    g.value_stride = 30;  // stores t = 0.3 for N = 120
    const DpResult full = rs_backward_solve(p, g);

    const double t1 = 0.3;
    const std::size_t si = full.value.nearest_time_index(t1);
    REQUIRE(full.value.times[si] == doctest::Approx(t1).epsilon(1e-12));
    const double* mid = full.value.slice(si);
    std::vector<double> term(mid, mid + full.value.lat.nodes());
    const DpResult re = solve_backward_from(DpMode::risk_sensitive, p, g, t1, term);

    const double* a = full.value.slice(0);
    const double* b = re.value.slice(0);
    double worst = 0.0;
    for (long i = 0; i < full.value.lat.nodes(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]));
    CHECK(worst <= 1e-8);
}

TEST_CASE("homogeneous reconstruction is exactly scale-linear") {
    TwoLevelParams p = base_params();
    p.T = 0.25;
    const DpResult res = rs_backward_solve(p, small_grid());
    NoiseStream ns(71, 0);
    for (int trial = 0; trial < 200; ++trial) {
        const double x = 0.3 * ns.gaussian();
        const double y = 0.3 * ns.gaussian();
        const double z = 0.3 * ns.gaussian();
        const double lam = std::exp(ns.gaussian());
        const double s1 = res.value.reconstruct(1.0, x, y, z, 0.0);
        const double s2 = res.value.reconstruct(lam, lam * x, lam * y, lam * z, 0.0);
        CHECK(s2 == doctest::Approx(lam * s1).epsilon(1e-12));
    }
    CHECK_THROWS_AS(res.value.reconstruct(-1.0, 0, 0, 0, 0.0), ConfigError);
}

TEST_CASE("normalized transition kernel tracks the raw four-field flow") {
    // The DP lattice evolves normalized coordinates with the mass as a
    // multiplicative weight; against the raw coefficient SDE this
    // factorization must be exact pathwise (same controls, same record).
    TwoLevelParams p = base_params();
    NoiseStream ns(55, 0);
    const double dt = 1e-3;
    BlochState raw{1, 0.1, -0.2, 0.6, 0};
    double logm = 0.0;
    Eigen::Vector3d r(0.1, -0.2, 0.6);
    double worst = 0.0;
    for (int k = 0; k < 5000; ++k) {
        const Complex u(std::sin(0.02 * k), 0.4 * std::cos(0.03 * k));
        const double dy = ns.wiener_increment(dt);
        raw = bloch_rs_step(p, raw, u, dy, dt);
        BlochState unit{1.0, r[0], r[1], r[2], 0.0};
        const BlochState o = bloch_rs_step(p, unit, u, dy, dt);
        logm += std::log(o.n);
        r = Eigen::Vector3d(o.x / o.n, o.y / o.n, o.z / o.n);
        const double m = std::exp(logm);
        const double scale = std::max(1.0, std::abs(raw.n));
        worst = std::max({worst, std::abs(m - raw.n) / scale,
                          std::abs(m * r[0] - raw.x) / scale,
                          std::abs(m * r[1] - raw.y) / scale,
                          std::abs(m * r[2] - raw.z) / scale});
    }
    CHECK(worst <= 1e-9);
}

TEST_CASE("closed-form minimizer hand checks") {
    TwoLevelParams p = base_params();

    // Axial symmetry point: x = y = 0 and W_x = W_y = 0 give u = 0.
    const OptimalControl axial =
        optimal_u_rs(p, 1.0, 0.0, 0.0, 0.9, Eigen::Vector3d(0.0, 0.0, 1.7));
    CHECK(axial.u == Complex(0.0, 0.0));
    CHECK(!axial.clamped);

    // gradW = (1,0,0) at (n,x,y,z) = (1,0,0,1): u = -2 kappa_f / b.
    const OptimalControl oc =
        optimal_u_rs(p, 1.0, 0.0, 0.0, 1.0, Eigen::Vector3d(1.0, 0.0, 0.0));
    CHECK(oc.u.real() == doctest::Approx(-2.0 * p.kappa_f / p.b).epsilon(1e-15));
    CHECK(oc.u.imag() == 0.0);
    CHECK(!oc.clamped);

    // Identical algebra for the risk-neutral form.
    const OptimalControl rn =
        optimal_u_rn(p, 1.0, 0.0, 0.0, 1.0, Eigen::Vector3d(1.0, 0.0, 0.0));
    CHECK(rn.u == oc.u);

    // Oversized gradients are clamped to the disc with the flag set.
    const OptimalControl big =
        optimal_u_rs(p, 1.0, 0.0, 0.0, 1.0, Eigen::Vector3d(100.0, 0.0, 0.0));
    CHECK(std::abs(big.u) == doctest::Approx(p.u_max).epsilon(1e-12));
    CHECK(big.clamped);

    CHECK_THROWS_AS(optimal_u_rs(p, 0.0, 0, 0, 0, Eigen::Vector3d(1, 0, 0)),
                    ConfigError);
}

TEST_CASE("generator oracle: martingale functional") {
    TwoLevelParams p = base_params();
    p.mu = 0.0;
    const ModelSpec spec = two_level_model(p);
    CylindricalFunction f;
    f.ops = {CMatrix(CMatrix::Identity(2, 2))};
    f.g = [](const Eigen::VectorXd& v) { return v[0]; };
    f.grad = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Ones(1).eval(); };
    f.hess = [](const Eigen::VectorXd&) {
        return Eigen::MatrixXd::Zero(1, 1).eval();
    };
    const CMatrix sigma = 0.5 * CMatrix::Identity(2, 2) + 0.2 * CMatrix(pauli_x());
    const GeneratorEstimate est =
        generator_oracle(spec, f, sigma, Complex(0.7, -0.4), 5e-4, 200000, 4, 2027);
    // tr sigma is a reference-measure martingale for every control.
    CHECK(std::abs(est.analytic) < 1e-12);
    CHECK(std::abs(est.mc_estimate - est.analytic) <= 3.0 * est.mc_se);
}

TEST_CASE("generator oracle: linear functional <sigma, sigma_z> at |up>") {
    TwoLevelParams p = base_params();
    p.mu = 0.0;
    const ModelSpec spec = two_level_model(p);
    CylindricalFunction f;
    f.ops = {CMatrix(pauli_z())};
    f.g = [](const Eigen::VectorXd& v) { return v[0]; };
    f.grad = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Ones(1).eval(); };
    f.hess = [](const Eigen::VectorXd&) {
        return Eigen::MatrixXd::Zero(1, 1).eval();
    };
    const CMatrix sigma = proj_up();  // (n, z) = (1, 1)
    const GeneratorEstimate est =
        generator_oracle(spec, f, sigma, Complex(0, 0), 5e-4, 200000, 4, 11);
    // Coefficient-equation drift of z at (n, z) = (1, 1): -z - n = -2.
    CHECK(est.analytic == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(std::abs(est.mc_estimate - est.analytic) <= 3.0 * est.mc_se);
}

TEST_CASE("generator oracle: quadratic functional exercises the diffusion term") {
    TwoLevelParams p = base_params();
    p.mu = 0.0;
    const ModelSpec spec = two_level_model(p);
    CylindricalFunction f;
    f.ops = {CMatrix(pauli_x())};
    f.g = [](const Eigen::VectorXd& v) { return v[0] * v[0]; };
    f.grad = [](const Eigen::VectorXd& v) { return (2.0 * v).eval(); };
    f.hess = [](const Eigen::VectorXd&) {
        return (2.0 * Eigen::MatrixXd::Identity(1, 1)).eval();
    };
    const CMatrix sigma = 0.5 * CMatrix::Identity(2, 2) + 0.3 * CMatrix(pauli_x());
    const GeneratorEstimate est =
        generator_oracle(spec, f, sigma, Complex(0, 0), 5e-4, 250000, 4, 12);
    // Coefficient form at (n, x, z) = (1, 0.6, 0): generator of x^2 is
    // 2x(-x/2) + kappa_s^2 (n+z)^2 = -0.36 + 0.5 = 0.14.
    CHECK(est.analytic == doctest::Approx(0.14).epsilon(1e-12));
    CHECK(std::abs(est.mc_estimate - est.analytic) <= 3.0 * est.mc_se);
}

TEST_CASE("generator oracle: risk-sensitive drift with a complex control") {
    // Nonzero mu and complex u: the Monte Carlo route cross-checks the
    // termwise assembly including the adjoint placement on K^mu.
    TwoLevelParams p = base_params();
    p.mu = 0.3;
    const ModelSpec spec = two_level_model(p);
    CylindricalFunction f;
    f.ops = {CMatrix(pauli_z())};
    f.g = [](const Eigen::VectorXd& v) { return v[0]; };
    f.grad = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Ones(1).eval(); };
    f.hess = [](const Eigen::VectorXd&) {
        return Eigen::MatrixXd::Zero(1, 1).eval();
    };
    const CMatrix sigma = 0.5 * CMatrix::Identity(2, 2) +
                          0.25 * CMatrix(pauli_x()) + 0.15 * CMatrix(pauli_z());
    const GeneratorEstimate est =
        generator_oracle(spec, f, sigma, Complex(0.8, 0.5), 5e-4, 250000, 4, 13);
    CHECK(std::abs(est.mc_estimate - est.analytic) <= 3.0 * est.mc_se);
}

TEST_CASE("policy lookup clamps to the control disc and the unit ball") {
    TwoLevelParams p = base_params();
    p.T = 0.25;
    const DpResult res = rs_backward_solve(p, small_grid());
    const Complex u = res.policy.at(2.0, 2.0, 2.0, 0.0);
    CHECK(std::abs(u) <= p.u_max + 1e-12);
    const double v = res.value.at(2.0, 0.0, 0.0, 0.0);
    CHECK(std::isfinite(v));
    // Stored policy respects the control disc everywhere.
    const double cap2 = p.u_max * p.u_max * (1.0 + 1e-12);
    for (std::size_t i = 0; i < res.policy.u_re.size(); ++i)
        CHECK(res.policy.u_re[i] * res.policy.u_re[i] +
                  res.policy.u_im[i] * res.policy.u_im[i] <=
              cap2);
}
