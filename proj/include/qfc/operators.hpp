#pragma once

// Dense complex small-matrix algebra: system operators, conditional states,
// and the superoperators the filtering equations are assembled from.

#include <complex>
#include <Eigen/Dense>

#include "qfc/errors.hpp"

namespace qfc {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using Matrix2c = Eigen::Matrix2cd;

inline constexpr Complex kI{0.0, 1.0};

// Pauli matrices and the lowering operator, in the basis
// |up> = (1,0)^T, |down> = (0,1)^T.
inline Matrix2c pauli_x() { return (Matrix2c() << 0, 1, 1, 0).finished(); }
inline Matrix2c pauli_y() {
    return (Matrix2c() << 0, Complex(0, -1), Complex(0, 1), 0).finished();
}
inline Matrix2c pauli_z() { return (Matrix2c() << 1, 0, 0, -1).finished(); }
inline Matrix2c sigma_minus() { return (Matrix2c() << 0, 0, 1, 0).finished(); }
inline Matrix2c sigma_plus() { return (Matrix2c() << 0, 1, 0, 0).finished(); }
inline Matrix2c proj_up() { return (Matrix2c() << 1, 0, 0, 0).finished(); }
inline Matrix2c proj_down() { return (Matrix2c() << 0, 0, 0, 1).finished(); }

namespace detail {
template <typename A, typename B>
inline void check_same_dim(const char* where, const Eigen::MatrixBase<A>& a,
                           const Eigen::MatrixBase<B>& b) {
    if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows())
        throw DimensionError(where, a.rows(), b.rows());
}
}  // namespace detail

// Decoherence superoperator D[c]rho = c rho c^+ - 1/2 (c^+ c rho + rho c^+ c).
// Traceless for any c, rho; maps Hermitian inputs to Hermitian outputs.
template <typename A, typename B>
auto decoherence_apply(const Eigen::MatrixBase<A>& c,
                       const Eigen::MatrixBase<B>& rho) {
    detail::check_same_dim("decoherence_apply", c, rho);
    using Out = typename Eigen::Matrix<Complex, A::RowsAtCompileTime,
                                       A::ColsAtCompileTime>;
    Out cc = c.adjoint() * c;
    Out out = c * rho * c.adjoint() - 0.5 * (cc * rho + rho * cc);
    return out;
}

// Measurement superoperator without trace correction:
// Htilde[c]rho = c rho + rho c^+.
template <typename A, typename B>
auto h_tilde_apply(const Eigen::MatrixBase<A>& c,
                   const Eigen::MatrixBase<B>& rho) {
    detail::check_same_dim("h_tilde_apply", c, rho);
    using Out = typename Eigen::Matrix<Complex, A::RowsAtCompileTime,
                                       A::ColsAtCompileTime>;
    Out out = c * rho + rho * c.adjoint();
    return out;
}

// Nonlinear (trace-corrected) measurement superoperator
// H[c]rho = c rho + rho c^+ - rho tr(c rho + rho c^+); requires tr rho = 1.
template <typename A, typename B>
auto h_apply(const Eigen::MatrixBase<A>& c, const Eigen::MatrixBase<B>& rho) {
    detail::check_same_dim("h_apply", c, rho);
    const double tr = rho.trace().real();
    if (std::abs(rho.trace() - Complex(1.0, 0.0)) > 1e-6)
        throw NumericError("h_apply: input state not normalized, tr = " +
                           std::to_string(tr));
    using Out = typename Eigen::Matrix<Complex, A::RowsAtCompileTime,
                                       A::ColsAtCompileTime>;
    Out ht = c * rho + rho * c.adjoint();
    Out out = ht - ht.trace() * rho;
    return out;
}

// Enforce exact Hermiticity; Euler steps accumulate asymmetry.
template <typename A>
auto hermitized(const Eigen::MatrixBase<A>& m) {
    using Out = typename Eigen::Matrix<Complex, A::RowsAtCompileTime,
                                       A::ColsAtCompileTime>;
    Out out = 0.5 * (m + m.adjoint().eval());
    return out;
}

template <typename A>
double max_abs_antihermitian(const Eigen::MatrixBase<A>& m) {
    return (m - m.adjoint().eval()).cwiseAbs().maxCoeff();
}

// Smallest eigenvalue of a Hermitian matrix; closed form for 2x2.
inline double min_eigenvalue(const CMatrix& h) {
    if (h.rows() == 2) {
        const double tr = h.trace().real();
        const double det = (h(0, 0) * h(1, 1) - h(0, 1) * h(1, 0)).real();
        const double disc = std::max(0.0, tr * tr - 4.0 * det);
        return 0.5 * (tr - std::sqrt(disc));
    }
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline double min_eigenvalue(const Matrix2c& h) {
    const double tr = h.trace().real();
    const double det = (h(0, 0) * h(1, 1) - h(0, 1) * h(1, 0)).real();
    const double disc = std::max(0.0, tr * tr - 4.0 * det);
    return 0.5 * (tr - std::sqrt(disc));
}

// A system operator: square complex matrix, optionally validated Hermitian
// at construction (tolerance 1e-12 elementwise).
class Operator {
public:
    Operator() = default;
    explicit Operator(CMatrix m, bool hermitian = false)
        : m_(std::move(m)), hermitian_(hermitian) {
        if (m_.rows() != m_.cols())
            throw DimensionError("Operator", m_.rows(), m_.cols());
        if (hermitian_ && max_abs_antihermitian(m_) > 2e-12)
            throw ConfigError("Operator: matrix declared hermitian is not");
    }

    long dim() const { return m_.rows(); }
    bool is_hermitian() const { return hermitian_; }
    const CMatrix& matrix() const { return m_; }

private:
    CMatrix m_;
    bool hermitian_ = false;
};

// A conditional (possibly unnormalized) state.  Hermitian within 1e-10,
// positive up to -1e-9 eigenvalue slack, unit trace within 1e-9 when the
// normalized flag is set.
class StateMatrix {
public:
    StateMatrix() = default;
    // positivity_slack widens the eigenvalue floor for states produced by an
    // Euler step, whose negativity noise scales with dt.
    explicit StateMatrix(CMatrix m, bool normalized = true,
                         double positivity_slack = 1e-9)
        : m_(std::move(m)), normalized_(normalized) {
        if (m_.rows() != m_.cols())
            throw DimensionError("StateMatrix", m_.rows(), m_.cols());
        if (max_abs_antihermitian(m_) > 1e-10)
            throw ConfigError("StateMatrix: not Hermitian within 1e-10");
        if (normalized_ && std::abs(m_.trace() - Complex(1.0, 0.0)) > 1e-9)
            throw ConfigError("StateMatrix: trace differs from 1 by more than 1e-9");
        if (min_eigenvalue(m_) < -positivity_slack * std::max(1.0, std::abs(m_.trace())))
            throw ConfigError("StateMatrix: negative eigenvalue beyond slack");
    }

    long dim() const { return m_.rows(); }
    bool normalized() const { return normalized_; }
    const CMatrix& matrix() const { return m_; }

private:
    CMatrix m_;
    bool normalized_ = true;
};

}  // namespace qfc
