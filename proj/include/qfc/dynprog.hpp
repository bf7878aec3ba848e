#pragma once

// Backward dynamic programming for the two-level feedback problem.
//
// The four-field coefficient SDE is positively homogeneous, so the value is
// solved on the normalized lattice (x, y, z) = (x, y, z)/n inside the unit
// ball, with the mass carried as a multiplicative per-step weight.  The
// scheme is an explicit Markov-chain approximation: per node and control, a
// two-point (+-sqrt(dt)) record increment, Euler successors renormalized to
// unit mass, radial projection into the ball, trilinear interpolation of the
// next slice.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qfc/model.hpp"
#include "qfc/operators.hpp"

namespace qfc {

enum class DpMode { risk_sensitive, risk_neutral };

// Terminal condition for the risk-neutral solve: (1-z)/2 * c (consistent
// with the additive cost representation, the default) or the alternative
// (1-z)/2 * e^c reading.
enum class TerminalKind { linear_c, exp_c };

struct DpGridConfig {
    int nx = 41, ny = 41, nz = 41;  // lattice per axis over [-1, 1]
    double dt = 2.5e-3;             // backward-induction time step
    int control_n = 21;             // control lattice per axis over [-u_max, u_max]
    int search_stride = 4;          // coarse search: every stride-th control point
    bool refine = true;             // closed-form candidate from value gradients
    TerminalKind terminal = TerminalKind::linear_c;
    int value_stride = 100;         // keep every k-th value slice (plus t=0, t=T)
    int policy_stride = 5;          // keep every k-th policy slice (plus t=0)

    void validate() const {
        if (nx < 21 || ny < 21 || nz < 21)
            throw ConfigError("DpGridConfig: lattice resolutions must be >= 21");
        if (control_n < 17)
            throw ConfigError("DpGridConfig: control grid must be >= 17 per axis");
        if (!(dt > 0.0)) throw ConfigError("DpGridConfig: dt must be positive");
        if (search_stride < 1 || value_stride < 1 || policy_stride < 1)
            throw ConfigError("DpGridConfig: strides must be >= 1");
    }
};

// Regular lattice over [-1, 1]^3 with trilinear interpolation.  Queries are
// projected radially into the closed unit ball first; nodes just outside the
// ball (one cell of halo) exist so that boundary cells interpolate cleanly.
struct Lattice {
    int nx = 0, ny = 0, nz = 0;
    double hx = 0, hy = 0, hz = 0;
    std::vector<double> xs, ys, zs;

    static Lattice over_unit_cube(int nx, int ny, int nz);

    long nodes() const { return static_cast<long>(nx) * ny * nz; }
    long index(int i, int j, int k) const {
        return (static_cast<long>(k) * ny + j) * nx + i;
    }
    double cell_diag() const { return std::sqrt(hx * hx + hy * hy + hz * hz); }
    bool active(int i, int j, int k) const {
        const double r = std::sqrt(xs[i] * xs[i] + ys[j] * ys[j] + zs[k] * zs[k]);
        return r <= 1.0 + cell_diag() + 1e-12;
    }

    // Trilinear interpolation of slice at a point already inside [-1,1]^3.
    double interp(const double* slice, double x, double y, double z) const {
        const double fx = (x + 1.0) / hx, fy = (y + 1.0) / hy, fz = (z + 1.0) / hz;
        int i = static_cast<int>(fx), j = static_cast<int>(fy), k = static_cast<int>(fz);
        i = std::min(std::max(i, 0), nx - 2);
        j = std::min(std::max(j, 0), ny - 2);
        k = std::min(std::max(k, 0), nz - 2);
        const double ax = fx - i, ay = fy - j, az = fz - k;
        const double* base = slice + index(i, j, k);
        const long sy = nx, sz = static_cast<long>(nx) * ny;
        const double c000 = base[0], c100 = base[1];
        const double c010 = base[sy], c110 = base[sy + 1];
        const double c001 = base[sz], c101 = base[sz + 1];
        const double c011 = base[sz + sy], c111 = base[sz + sy + 1];
        const double c00 = c000 + ax * (c100 - c000);
        const double c10 = c010 + ax * (c110 - c010);
        const double c01 = c001 + ax * (c101 - c001);
        const double c11 = c011 + ax * (c111 - c011);
        const double c0 = c00 + ay * (c10 - c00);
        const double c1 = c01 + ay * (c11 - c01);
        return c0 + az * (c1 - c0);
    }

    // Project into the closed unit ball, then interpolate.
    double interp_ball(const double* slice, double x, double y, double z) const {
        const double r2 = x * x + y * y + z * z;
        if (r2 > 1.0) {
            const double s = 1.0 / std::sqrt(r2);
            x *= s; y *= s; z *= s;
        }
        return interp(slice, x, y, z);
    }
};

// Bellman right-hand side at one normalized node.  Shared between the
// solver's inner loop and the brute-force minimizer used in tests.
struct BellmanNode {
    DpMode mode;
    double x, y, z;
    double dt;
    double an, bn;            // successor mass n+- = an +- bn
    double ax, bx, ay, az;    // drift bases and x-noise
    double cx, cy, czr, czi;  // control couplings
    double add_base = 0.0;    // risk-neutral state-cost addend
    double ucost = 0.0;       // |u|^2 coefficient (exponent or addend)

    BellmanNode(DpMode m, const TwoLevelParams& p, double x_, double y_, double z_,
                double dt_)
        : mode(m), x(x_), y(y_), z(z_), dt(dt_) {
        const double sdt = std::sqrt(dt);
        const double ma = (m == DpMode::risk_sensitive) ? p.mu * p.a : 0.0;
        an = 1.0 + 0.5 * ma * (1.0 - z) * dt;
        bn = p.kappa_s * x * sdt;
        ax = x - 0.5 * (1.0 - ma) * x * dt;
        bx = p.kappa_s * (1.0 + z) * sdt;
        ay = y - 0.5 * (1.0 - ma) * y * dt;
        az = z - (1.0 - 0.5 * ma) * z * dt - (1.0 + 0.5 * ma) * dt;
        cx = 2.0 * p.kappa_f * z * dt;
        cy = -2.0 * p.kappa_f * z * dt;
        czr = -2.0 * p.kappa_f * x * dt;
        czi = 2.0 * p.kappa_f * y * dt;
        if (m == DpMode::risk_neutral) {
            add_base = 0.5 * p.a * (1.0 - z) * dt;
            ucost = 0.5 * p.b * dt;
        } else {
            ucost = 0.5 * p.mu * p.b * dt;
        }
    }

    // Expected next-slice value weighted by the successor masses (these are
    // exactly the physical-measure weights).
    double expected_next(double ur, double ui, const Lattice& lat,
                         const double* next) const {
        const double xp = ax + cx * ur;
        const double yp = ay + cy * ui;
        const double zp = az + czr * ur + czi * ui;
        const double np1 = an + bn, np2 = an - bn;
        const double i1 = 1.0 / np1, i2 = 1.0 / np2;
        const double v1 = lat.interp_ball(next, (xp + bx) * i1, yp * i1, (zp - bn) * i1);
        const double v2 = lat.interp_ball(next, (xp - bx) * i2, yp * i2, (zp + bn) * i2);
        return 0.5 * (np1 * v1 + np2 * v2);
    }

    double rhs(double ur, double ui, const Lattice& lat, const double* next) const {
        const double u2 = ur * ur + ui * ui;
        const double ev = expected_next(ur, ui, lat, next);
        if (mode == DpMode::risk_sensitive) return std::exp(ucost * u2) * ev;
        return add_base + ucost * u2 + ev;
    }
};

// Discretized value function on the normalized lattice; slice-major storage,
// times ascending.  Reconstruction to unnormalized states is
// S(n, x, y, z, t) = n * value(x/n, y/n, z/n, t).
struct ValueGrid {
    DpMode mode = DpMode::risk_neutral;
    TwoLevelParams params;
    DpGridConfig grid;
    Lattice lat;
    double dt_dp = 0.0;              // effective solver step (T / n_slices)
    std::vector<double> times;       // stored slice times, ascending
    std::vector<double> values;      // times.size() * lat.nodes()

    const double* slice(std::size_t si) const { return values.data() + si * lat.nodes(); }
    std::size_t nearest_time_index(double t) const;
    // Value at a normalized point, nearest stored slice in time.
    double at(double x, double y, double z, double t) const;
    // Homogeneous reconstruction at an unnormalized coefficient vector.
    double reconstruct(double n, double x, double y, double z, double t) const {
        if (!(n > 0.0)) throw ConfigError("ValueGrid::reconstruct: n must be positive");
        return n * at(x / n, y / n, z / n, t);
    }
};

// Feedback law on the same lattice: trilinear in space, nearest stored slice
// in time, clamped to |u| <= u_max.
struct Policy {
    DpMode mode = DpMode::risk_neutral;
    TwoLevelParams params;
    DpGridConfig grid;
    Lattice lat;
    double dt_dp = 0.0;
    std::vector<double> times;
    std::vector<double> u_re, u_im;  // times.size() * lat.nodes() each
    std::string provenance;          // "closed-form" or "grid-search"

    std::size_t nearest_time_index(double t) const;
    Complex at(double x, double y, double z, double t) const;
};

struct DpResult {
    ValueGrid value;
    Policy policy;
};

DpResult rs_backward_solve(const TwoLevelParams& p, const DpGridConfig& grid);
DpResult rn_backward_solve(const TwoLevelParams& p, const DpGridConfig& grid);

// Backward induction with an arbitrary terminal slice (used by the
// dynamic-programming consistency checks); terminal has lat.nodes() entries
// at time t_terminal, solving down to t = 0.
DpResult solve_backward_from(DpMode mode, const TwoLevelParams& p,
                             const DpGridConfig& grid, double t_terminal,
                             const std::vector<double>& terminal);

struct OptimalControl {
    Complex u;
    bool clamped = false;
};

// Stationary point of the minimized Hamiltonian, clamped to the control disc.
// gradW = (W_x, W_y, W_z) of the risk-sensitive ansatz potential
// (respectively the risk-neutral value) at the unnormalized point.
OptimalControl optimal_u_rs(const TwoLevelParams& p, double n, double x, double y,
                            double z, const Eigen::Vector3d& gradW);
OptimalControl optimal_u_rn(const TwoLevelParams& p, double n, double x, double y,
                            double z, const Eigen::Vector3d& gradW);

// Cylindrical test functional f(sigma) = g(<sigma, X_1>, ..., <sigma, X_J>).
struct CylindricalFunction {
    std::vector<CMatrix> ops;
    std::function<double(const Eigen::VectorXd&)> g;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hess;

    Eigen::VectorXd coords(const CMatrix& sigma) const;
    double eval(const CMatrix& sigma) const { return g(coords(sigma)); }
};

struct GeneratorEstimate {
    double mc_estimate = 0.0;
    double mc_se = 0.0;
    double analytic = 0.0;
};

// Monte Carlo finite-difference estimate of the generator of the
// risk-sensitive filter Markov process at sigma for fixed control u,
// together with the termwise analytic assembly.  Test oracle only.
GeneratorEstimate generator_oracle(const ModelSpec& spec,
                                   const CylindricalFunction& f,
                                   const CMatrix& sigma, Complex u, double h,
                                   int n_paths, int n_substeps, std::uint64_t seed);

}  // namespace qfc
