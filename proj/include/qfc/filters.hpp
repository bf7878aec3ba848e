#pragma once

// Conditional-state dynamics: the standard (Belavkin) filter, the
// risk-sensitive filter, their normalized variants and efficiency-eta
// generalization, in matrix form for any dimension and in two-level
// Bloch-coefficient form.
//
// Unnormalized filters are driven directly by the measurement record y2 and
// never renormalized (their trace growth carries the likelihood mass).
// Normalized filters apply the unnormalized generator and renormalize the
// trace after every step, which keeps pi = sigma / tr sigma exact stepwise.

#include <cmath>

#include "qfc/model.hpp"
#include "qfc/operators.hpp"
#include "qfc/stochastic.hpp"

namespace qfc {

namespace detail {

// One Euler increment of
//   d sigma = (-A sigma - sigma A^+ + L sigma L^+ + M sigma M^+) dt
//             + g (M sigma + sigma M^+) dy.
template <typename Mat>
Mat filter_increment(const Mat& A, const Mat& L, const Mat& M,
                     const Mat& sigma, double g, double dy, double dt) {
    Mat drift = -(A * sigma) - sigma * A.adjoint() + L * sigma * L.adjoint() +
                M * sigma * M.adjoint();
    Mat meas = M * sigma + sigma * M.adjoint();
    Mat out = drift * dt + (g * dy) * meas;
    return out;
}

// Positivity floor for Euler-stepped states.  A single Euler step from a
// near-pure state produces eigenvalues of order -dt * chi^2, so the guard
// scales with dt; the 1e-6 absolute floor applies in the small-step limit.
// Tripping it indicates a misconfigured (too large) time step.
inline double positivity_floor(double dt) { return std::max(1e-6, 50.0 * dt); }

inline void check_positivity(const CMatrix& sigma, const char* where, double dt,
                             long step = -1) {
    const double scale = std::max(1.0, std::abs(sigma.trace()));
    if (min_eigenvalue(sigma) < -positivity_floor(dt) * scale)
        throw NumericError(std::string(where) +
                               ": positivity violated beyond tolerance, step too large",
                           step);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Unnormalized matrix filters (record-driven).

// Standard unnormalized filter (stochastic master equation):
// d sigma = (-K sigma - sigma K^+ + L sigma L^+ + M sigma M^+) dt
//           + (M sigma + sigma M^+) dy2.  Linear in sigma.
inline StateMatrix belavkin_unnormalized_step(const ModelSpec& spec,
                                              const StateMatrix& sigma,
                                              Complex u, double dy2, double dt) {
    const CMatrix A = k_of_u(spec, u);
    CMatrix next = sigma.matrix() + detail::filter_increment(A, spec.L, spec.M,
                                                             sigma.matrix(), 1.0,
                                                             dy2, dt);
    next = hermitized(next);
    detail::check_positivity(next, "belavkin_unnormalized_step", dt);
    return StateMatrix(std::move(next), /*normalized=*/false,
                       detail::positivity_floor(dt));
}

// Risk-sensitive filter: K^mu(u) in place of K(u).
inline StateMatrix rs_filter_step(const ModelSpec& spec, const StateMatrix& sigma_mu,
                                  Complex u, double dy2, double dt) {
    const CMatrix A = k_mu_of_u(spec, u);
    CMatrix next = sigma_mu.matrix() +
                   detail::filter_increment(A, spec.L, spec.M, sigma_mu.matrix(),
                                            1.0, dy2, dt);
    next = hermitized(next);
    detail::check_positivity(next, "rs_filter_step", dt);
    return StateMatrix(std::move(next), /*normalized=*/false,
                       detail::positivity_floor(dt));
}

// Risk-sensitive filter with measurement efficiency eta: the measurement
// update is scaled by sqrt(eta) and driven by the record z.
inline StateMatrix rs_filter_eta_step(const ModelSpec& spec,
                                      const StateMatrix& sigma_mu, Complex u,
                                      double dz, double dt) {
    if (spec.eta < 0.0 || spec.eta > 1.0)
        throw ConfigError("rs_filter_eta_step: eta outside [0, 1]");
    const CMatrix A = k_mu_of_u(spec, u);
    CMatrix next = sigma_mu.matrix() +
                   detail::filter_increment(A, spec.L, spec.M, sigma_mu.matrix(),
                                            std::sqrt(spec.eta), dz, dt);
    next = hermitized(next);
    detail::check_positivity(next, "rs_filter_eta_step", dt);
    return StateMatrix(std::move(next), /*normalized=*/false,
                       detail::positivity_floor(dt));
}

// ---------------------------------------------------------------------------
// Normalized matrix filters.

struct NormalizedStep {
    StateMatrix state;       // renormalized post-step state
    double dy2 = 0.0;        // record increment fed to the controller
    double cost_rate = 0.0;  // tr(C1(u) pi), for physical-measure accumulators
};

namespace detail {

// Shared normalized step: compute the record increment from the innovation,
// apply the unnormalized generator, renormalize.  g scales the measurement
// channel (sqrt(eta)).
inline NormalizedStep normalized_step_impl(const ModelSpec& spec, const CMatrix& A,
                                           const CMatrix& pi, Complex u,
                                           double innovation, double g, double dt,
                                           const char* where) {
    const double h = ((spec.M + spec.M.adjoint()) * pi).trace().real();
    const double dy2 = g * h * dt + innovation;
    CMatrix next = pi + filter_increment(A, spec.L, spec.M, pi, g, dy2, dt);
    next = hermitized(next);
    const double tr = next.trace().real();
    if (!(tr > 0.0) || !std::isfinite(tr))
        throw NumericError(std::string(where) + ": state trace collapsed");
    next /= tr;
    check_positivity(next, where, dt);
    NormalizedStep out;
    out.state = StateMatrix(std::move(next), /*normalized=*/true, positivity_floor(dt));
    out.dy2 = dy2;
    out.cost_rate = (spec.c1(u) * pi).trace().real();
    return out;
}

// Record-driven variant used on the controller side of the loop.
inline StateMatrix normalized_step_record_impl(const ModelSpec& spec,
                                               const CMatrix& A, const CMatrix& pi,
                                               double dy2, double g, double dt,
                                               const char* where) {
    CMatrix next = pi + filter_increment(A, spec.L, spec.M, pi, g, dy2, dt);
    next = hermitized(next);
    const double tr = next.trace().real();
    if (!(tr > 0.0) || !std::isfinite(tr))
        throw NumericError(std::string(where) + ": state trace collapsed");
    next /= tr;
    check_positivity(next, where, dt);
    return StateMatrix(std::move(next), /*normalized=*/true, positivity_floor(dt));
}

}  // namespace detail

// Normalized standard filter (Belavkin equation) driven by the innovation:
// returns the renormalized state and the record increment
// dy2 = tr[(M + M^+) pi] dt + dW.
inline NormalizedStep belavkin_step(const ModelSpec& spec, const StateMatrix& pi,
                                    Complex u, double dW, double dt) {
    return detail::normalized_step_impl(spec, k_of_u(spec, u), pi.matrix(), u, dW,
                                        1.0, dt, "belavkin_step");
}

inline StateMatrix belavkin_step_record(const ModelSpec& spec, const StateMatrix& pi,
                                        Complex u, double dy2, double dt) {
    return detail::normalized_step_record_impl(spec, k_of_u(spec, u), pi.matrix(),
                                               dy2, 1.0, dt, "belavkin_step");
}

// Normalized standard filter with measurement efficiency eta (the truth
// model of the closed loop): record dz = sqrt(eta) tr[(M+M^+) pi] dt + dW.
// Reduces bitwise to belavkin_step at eta = 1.
inline NormalizedStep belavkin_eta_step(const ModelSpec& spec, const StateMatrix& pi,
                                        Complex u, double dW, double dt) {
    if (spec.eta < 0.0 || spec.eta > 1.0)
        throw ConfigError("belavkin_eta_step: eta outside [0, 1]");
    return detail::normalized_step_impl(spec, k_of_u(spec, u), pi.matrix(), u, dW,
                                        std::sqrt(spec.eta), dt, "belavkin_eta_step");
}

inline StateMatrix belavkin_eta_step_record(const ModelSpec& spec,
                                            const StateMatrix& pi, Complex u,
                                            double dz, double dt) {
    if (spec.eta < 0.0 || spec.eta > 1.0)
        throw ConfigError("belavkin_eta_step: eta outside [0, 1]");
    return detail::normalized_step_record_impl(spec, k_of_u(spec, u), pi.matrix(),
                                               dz, std::sqrt(spec.eta), dt,
                                               "belavkin_eta_step");
}

// Normalized risk-sensitive filter driven by its innovation w^mu; also
// returns tr(C1(u) pi^mu) for the physical-measure cost accumulator.
inline NormalizedStep rs_filter_normalized_step(const ModelSpec& spec,
                                                const StateMatrix& pi_mu, Complex u,
                                                double dW_mu, double dt) {
    return detail::normalized_step_impl(spec, k_mu_of_u(spec, u), pi_mu.matrix(), u,
                                        dW_mu, 1.0, dt, "rs_filter_normalized_step");
}

inline StateMatrix rs_filter_normalized_step_record(const ModelSpec& spec,
                                                    const StateMatrix& pi_mu,
                                                    Complex u, double dy2,
                                                    double dt) {
    return detail::normalized_step_record_impl(spec, k_mu_of_u(spec, u),
                                               pi_mu.matrix(), dy2, 1.0, dt,
                                               "rs_filter_normalized_step");
}

// Efficiency-eta normalized risk-sensitive filter; the record is
// dz = sqrt(eta) tr[(M + M^+) pi] dt + dW.
inline NormalizedStep rs_filter_eta_normalized_step(const ModelSpec& spec,
                                                    const StateMatrix& pi_mu,
                                                    Complex u, double dW,
                                                    double dt) {
    if (spec.eta < 0.0 || spec.eta > 1.0)
        throw ConfigError("rs_filter_eta_normalized_step: eta outside [0, 1]");
    return detail::normalized_step_impl(spec, k_mu_of_u(spec, u), pi_mu.matrix(), u,
                                        dW, std::sqrt(spec.eta), dt,
                                        "rs_filter_eta_normalized_step");
}

inline StateMatrix rs_filter_eta_normalized_step_record(const ModelSpec& spec,
                                                        const StateMatrix& pi_mu,
                                                        Complex u, double dz,
                                                        double dt) {
    if (spec.eta < 0.0 || spec.eta > 1.0)
        throw ConfigError("rs_filter_eta_normalized_step: eta outside [0, 1]");
    return detail::normalized_step_record_impl(spec, k_mu_of_u(spec, u),
                                               pi_mu.matrix(), dz, std::sqrt(spec.eta),
                                               dt, "rs_filter_eta_normalized_step");
}

// ---------------------------------------------------------------------------
// Two-level Bloch-coefficient form.

// Factored risk-sensitive state: sigma^mu = exp(log_factor) *
// (n I + x sx + y sy + z sz)/2.  The control-energy part of C1 lives in
// log_factor; the a-part lives in the coefficient drift.
struct BlochState {
    double n = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double log_factor = 0.0;

    Matrix2c reconstruct() const {
        Matrix2c m;
        m << Complex(n + z, 0.0), Complex(x, -y), Complex(x, y), Complex(n - z, 0.0);
        return std::exp(log_factor) * 0.5 * m;
    }
};

// Euler step of the risk-sensitive coefficient SDEs, record-driven.  The
// measurement coefficients carry sqrt(eta); log_factor accumulates
// (mu b / 2) |u|^2 dt.
inline BlochState bloch_rs_step(const TwoLevelParams& p, const BlochState& s,
                                Complex u, double dy2, double dt) {
    const double ur = u.real(), ui = u.imag();
    const double gdy = std::sqrt(p.eta) * dy2;
    const double ma = p.mu * p.a;
    BlochState o;
    o.n = s.n + 0.5 * ma * (s.n - s.z) * dt + p.kappa_s * s.x * gdy;
    o.x = s.x - 0.5 * (1.0 - ma) * s.x * dt + 2.0 * p.kappa_f * ur * s.z * dt +
          p.kappa_s * (s.n + s.z) * gdy;
    o.y = s.y - 0.5 * (1.0 - ma) * s.y * dt - 2.0 * p.kappa_f * ui * s.z * dt;
    o.z = s.z - (1.0 - 0.5 * ma) * s.z * dt - (1.0 + 0.5 * ma) * s.n * dt -
          2.0 * p.kappa_f * (ur * s.x - ui * s.y) * dt - p.kappa_s * s.x * gdy;
    o.log_factor = s.log_factor + 0.5 * p.mu * p.b * std::norm(u) * dt;
    if (!std::isfinite(o.n) || !std::isfinite(o.x) || !std::isfinite(o.y) ||
        !std::isfinite(o.z) || !std::isfinite(o.log_factor))
        throw NumericError("bloch_rs_step: non-finite state");
    return o;
}

// Risk-neutral (standard) coefficient SDEs; no log_factor accumulation.
inline BlochState bloch_rn_step(const TwoLevelParams& p, const BlochState& s,
                                Complex u, double dy2, double dt) {
    const double ur = u.real(), ui = u.imag();
    const double gdy = std::sqrt(p.eta) * dy2;
    BlochState o;
    o.n = s.n + p.kappa_s * s.x * gdy;
    o.x = s.x - 0.5 * s.x * dt + 2.0 * p.kappa_f * ur * s.z * dt +
          p.kappa_s * (s.n + s.z) * gdy;
    o.y = s.y - 0.5 * s.y * dt - 2.0 * p.kappa_f * ui * s.z * dt;
    o.z = s.z - s.z * dt - s.n * dt -
          2.0 * p.kappa_f * (ur * s.x - ui * s.y) * dt - p.kappa_s * s.x * gdy;
    o.log_factor = s.log_factor;
    if (!std::isfinite(o.n) || !std::isfinite(o.x) || !std::isfinite(o.y) ||
        !std::isfinite(o.z))
        throw NumericError("bloch_rn_step: non-finite state");
    return o;
}

// Bloch coefficients (n, x, y, z) of a Hermitian 2x2 matrix.
template <typename Derived>
Eigen::Vector4d bloch_of_matrix(const Eigen::MatrixBase<Derived>& s) {
    Eigen::Vector4d v;
    v[0] = (s(0, 0) + s(1, 1)).real();
    v[1] = 2.0 * s(1, 0).real();
    v[2] = 2.0 * s(1, 0).imag();
    v[3] = (s(0, 0) - s(1, 1)).real();
    return v;
}

inline Matrix2c matrix_of_bloch(double n, double x, double y, double z) {
    Matrix2c m;
    m << Complex(n + z, 0.0), Complex(x, -y), Complex(x, y), Complex(n - z, 0.0);
    return 0.5 * m;
}

// Normalized two-level filter in Bloch coordinates: steps the unnormalized
// coefficient SDE from unit mass and divides by the new mass.  Used by
// controllers and physical-measure estimators; identical map to the
// normalized matrix filters, in coefficient form.
struct TwoLevelNormalizedFilter {
    TwoLevelParams params;  // params.mu = 0 gives the standard filter
    Eigen::Vector3d r{0.0, 0.0, 1.0};

    // Record measurement drift: dy2 = sqrt(eta) kappa_s x dt + dW.
    double record_drift() const {
        return std::sqrt(params.eta) * params.kappa_s * r[0];
    }

    // Innovation-driven step; returns the record increment.
    double step(Complex u, double dW, double dt) {
        const double dy2 = record_drift() * dt + dW;
        step_record(u, dy2, dt);
        return dy2;
    }

    // Record-driven step (controller side).
    void step_record(Complex u, double dy2, double dt) {
        BlochState s{1.0, r[0], r[1], r[2], 0.0};
        const BlochState o = bloch_rs_step(params, s, u, dy2, dt);
        if (!(o.n > 0.0))
            throw NumericError("TwoLevelNormalizedFilter: mass collapsed");
        r = Eigen::Vector3d(o.x / o.n, o.y / o.n, o.z / o.n);
    }
};

}  // namespace qfc
