#pragma once

// Problem definition: system operators, cost operators, couplings, and the
// derived drift operators K(u) = iH(u) + (L^+L + M^+M)/2 and
// K^mu(u) = K(u) - (mu/2) C1(u).  Natural units, hbar = 1.

#include <cmath>
#include <complex>
#include <functional>

#include "qfc/operators.hpp"

namespace qfc {

// Parameters of the monitored two-level atom.  kappa_f^2 and kappa_s^2 are
// the decay rates into the control and measurement channels; a, b, c weight
// the state, control-energy and terminal cost components.
struct TwoLevelParams {
    double kappa_f = std::sqrt(0.5);
    double kappa_s = std::sqrt(0.5);
    double a = 1.0;
    double b = 0.5;
    double c = 1.0;
    double mu = 0.1;
    double eta = 1.0;
    double T = 5.0;
    double dt = 1e-3;
    double u_max = 5.0;

    void validate() const {
        if (kappa_f < 0 || kappa_s < 0)
            throw ConfigError("TwoLevelParams: couplings must be nonnegative");
        if (std::abs(kappa_f * kappa_f + kappa_s * kappa_s - 1.0) > 1e-12)
            throw ConfigError(
                "TwoLevelParams: kappa_f^2 + kappa_s^2 must equal 1 within 1e-12");
        if (!(b > 0.0))
            throw ConfigError("TwoLevelParams: b must be strictly positive");
        if (a < 0 || c < 0 || mu < 0)
            throw ConfigError("TwoLevelParams: a, c, mu must be nonnegative");
        if (eta < 0.0 || eta > 1.0)
            throw ConfigError("TwoLevelParams: eta must lie in [0, 1]");
        if (!(T > 0.0) || !(dt > 0.0) || dt > T)
            throw ConfigError("TwoLevelParams: need 0 < dt <= T");
        if (!(u_max > 0.0))
            throw ConfigError("TwoLevelParams: u_max must be positive");
    }

    long steps() const { return static_cast<long>(std::llround(T / dt)); }
};

// Full problem definition.  Immutable after construction; shareable across
// threads.  The control domain is the disc |u| <= u_max.
struct ModelSpec {
    CMatrix L;
    CMatrix M;
    std::function<CMatrix(Complex)> hamiltonian;  // H(u), Hermitian
    std::function<CMatrix(Complex)> c1;           // running cost operator
    CMatrix c2;                                   // terminal cost operator
    double mu = 0.0;
    double eta = 1.0;
    double T = 1.0;
    double dt = 1e-3;
    double u_max = 5.0;

    long dim() const { return L.rows(); }
    long steps() const { return static_cast<long>(std::llround(T / dt)); }

    void validate() const {
        if (L.rows() != L.cols() || M.rows() != M.cols() || L.rows() != M.rows())
            throw DimensionError("ModelSpec", L.rows(), M.rows());
        if (c2.rows() != L.rows())
            throw DimensionError("ModelSpec.c2", c2.rows(), L.rows());
        if (max_abs_antihermitian(c2) > 1e-12 || min_eigenvalue(c2) < -1e-12)
            throw ConfigError("ModelSpec: C2 must be nonnegative Hermitian");
        for (Complex u : {Complex(0, 0), Complex(1, 0), Complex(0.3, -1.1)}) {
            CMatrix c = c1(u);
            if (max_abs_antihermitian(c) > 1e-12 || min_eigenvalue(c) < -1e-12)
                throw ConfigError("ModelSpec: C1(u) must be nonnegative Hermitian");
        }
        if (mu < 0) throw ConfigError("ModelSpec: mu must be nonnegative");
        if (eta < 0 || eta > 1) throw ConfigError("ModelSpec: eta must be in [0,1]");
        if (!(dt > 0) || dt > T) throw ConfigError("ModelSpec: need 0 < dt <= T");
        const double ratio = T / dt;
        if (std::abs(ratio - std::llround(ratio)) > 1e-6)
            throw ConfigError("ModelSpec: T/dt must be an integer (round at load)");
    }
};

// Two-level atom instance: L = kappa_f sigma_-, M = kappa_s sigma_-,
// H(u) = i (u* L - u L^+), C1(u) = a |down><down| + (b/2)|u|^2 I,
// C2 = c |down><down|.
inline ModelSpec two_level_model(const TwoLevelParams& p) {
    p.validate();
    ModelSpec spec;
    spec.L = p.kappa_f * sigma_minus();
    spec.M = p.kappa_s * sigma_minus();
    const CMatrix L = spec.L;
    spec.hamiltonian = [L](Complex u) -> CMatrix {
        return kI * (std::conj(u) * L - u * L.adjoint());
    };
    const double a = p.a, b = p.b;
    spec.c1 = [a, b](Complex u) -> CMatrix {
        return a * CMatrix(proj_down()) +
               0.5 * b * std::norm(u) * CMatrix::Identity(2, 2);
    };
    spec.c2 = p.c * proj_down();
    spec.mu = p.mu;
    spec.eta = p.eta;
    spec.T = p.T;
    spec.dt = p.dt;
    spec.u_max = p.u_max;
    spec.validate();
    return spec;
}

// K(u) = i H(u) + (L^+L + M^+M)/2.  Hermitian part is (L^+L + M^+M)/2 for
// any u since iH is anti-Hermitian.
inline CMatrix k_of_u(const ModelSpec& spec, Complex u) {
    return kI * spec.hamiltonian(u) +
           0.5 * (spec.L.adjoint() * spec.L + spec.M.adjoint() * spec.M);
}

// K^mu(u) = K(u) - (mu/2) C1(u).
inline CMatrix k_mu_of_u(const ModelSpec& spec, Complex u) {
    return k_of_u(spec, u) - (0.5 * spec.mu) * spec.c1(u);
}

// Master equation right-hand side
// rho_dot = -i[H(u), rho] + D[L]rho + D[M]rho.  Traceless and Hermitian.
inline CMatrix master_rhs(const ModelSpec& spec, const CMatrix& rho, Complex u) {
    if (rho.rows() != spec.dim())
        throw DimensionError("master_rhs", rho.rows(), spec.dim());
    const CMatrix h = spec.hamiltonian(u);
    return -kI * (h * rho - rho * h) + decoherence_apply(spec.L, rho) +
           decoherence_apply(spec.M, rho);
}

inline CMatrix master_rhs(const ModelSpec& spec, const StateMatrix& rho,
                          Complex u) {
    return master_rhs(spec, rho.matrix(), u);
}

}  // namespace qfc
