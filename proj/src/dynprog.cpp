#include "qfc/dynprog.hpp"

#include <algorithm>
#include <cmath>

#include "qfc/filters.hpp"
#include "qfc/parallel.hpp"
#include "qfc/stochastic.hpp"

namespace qfc {

Lattice Lattice::over_unit_cube(int nx, int ny, int nz) {
    Lattice lat;
    lat.nx = nx;
    lat.ny = ny;
    lat.nz = nz;
    lat.hx = 2.0 / (nx - 1);
    lat.hy = 2.0 / (ny - 1);
    lat.hz = 2.0 / (nz - 1);
    auto fill = [](std::vector<double>& v, int n, double h) {
        v.resize(n);
        for (int i = 0; i < n; ++i) v[i] = -1.0 + i * h;
        v.front() = -1.0;
        v.back() = 1.0;
    };
    fill(lat.xs, nx, lat.hx);
    fill(lat.ys, ny, lat.hy);
    fill(lat.zs, nz, lat.hz);
    return lat;
}

namespace {

std::size_t nearest_index(const std::vector<double>& times, double t) {
    if (times.empty()) throw Error("grid has no stored time slices");
    auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0;
    if (it == times.end()) return times.size() - 1;
    const std::size_t hi = it - times.begin();
    return (t - times[hi - 1] <= times[hi] - t) ? hi - 1 : hi;
}

void project_into_ball(double& x, double& y, double& z) {
    const double r2 = x * x + y * y + z * z;
    if (r2 > 1.0) {
        const double s = 1.0 / std::sqrt(r2);
        x *= s;
        y *= s;
        z *= s;
    }
}

}  // namespace

std::size_t ValueGrid::nearest_time_index(double t) const {
    return nearest_index(times, t);
}

double ValueGrid::at(double x, double y, double z, double t) const {
    project_into_ball(x, y, z);
    return lat.interp(slice(nearest_time_index(t)), x, y, z);
}

std::size_t Policy::nearest_time_index(double t) const {
    return nearest_index(times, t);
}

Complex Policy::at(double x, double y, double z, double t) const {
    project_into_ball(x, y, z);
    const std::size_t si = nearest_time_index(t);
    const double* re = u_re.data() + si * lat.nodes();
    const double* im = u_im.data() + si * lat.nodes();
    double ur = lat.interp(re, x, y, z);
    double ui = lat.interp(im, x, y, z);
    const double r2 = ur * ur + ui * ui;
    const double cap = params.u_max * params.u_max;
    if (r2 > cap) {
        const double s = params.u_max / std::sqrt(r2);
        ur *= s;
        ui *= s;
    }
    return Complex(ur, ui);
}

namespace {

OptimalControl clamp_to_disc(double ur, double ui, double u_max) {
    OptimalControl oc;
    const double r2 = ur * ur + ui * ui;
    if (r2 > u_max * u_max) {
        const double s = u_max / std::sqrt(r2);
        oc.u = Complex(ur * s, ui * s);
        oc.clamped = true;
    } else {
        oc.u = Complex(ur, ui);
    }
    return oc;
}

}  // namespace

OptimalControl optimal_u_rs(const TwoLevelParams& p, double n, double x, double y,
                            double z, const Eigen::Vector3d& gradW) {
    if (!(n > 0.0)) throw ConfigError("optimal_u_rs: n must be positive");
    const double f = 2.0 * p.kappa_f / (p.b * n);
    const double ur = f * (x * gradW[2] - z * gradW[0]);
    const double ui = f * (z * gradW[1] - y * gradW[2]);
    return clamp_to_disc(ur, ui, p.u_max);
}

OptimalControl optimal_u_rn(const TwoLevelParams& p, double n, double x, double y,
                            double z, const Eigen::Vector3d& gradW) {
    if (!(n > 0.0)) throw ConfigError("optimal_u_rn: n must be positive");
    const double f = 2.0 * p.kappa_f / (p.b * n);
    const double ur = f * (x * gradW[2] - z * gradW[0]);
    const double ui = f * (z * gradW[1] - y * gradW[2]);
    return clamp_to_disc(ur, ui, p.u_max);
}

// ---------------------------------------------------------------------------
// Backward induction.

namespace {

struct ControlCandidate {
    double ur, ui;
};

// Control lattice points inside the disc |u| <= u_max; stride 1 gives the
// full grid, larger strides the coarse search set (axis endpoints kept).
std::vector<ControlCandidate> control_candidates(double u_max, int n, int stride) {
    std::vector<int> axis;
    for (int i = 0; i < n; i += stride) axis.push_back(i);
    if (axis.back() != n - 1) axis.push_back(n - 1);
    std::vector<ControlCandidate> out;
    const double h = 2.0 * u_max / (n - 1);
    const double cap = u_max * u_max * (1.0 + 1e-12);
    for (int i : axis)
        for (int j : axis) {
            const double ur = -u_max + i * h;
            const double ui = -u_max + j * h;
            if (ur * ur + ui * ui <= cap) out.push_back({ur, ui});
        }
    return out;
}

// Central differences of a slice at a node, one-sided where the neighbor
// leaves the lattice or the active region.
Eigen::Vector3d slice_gradient(const Lattice& lat, const std::vector<uint8_t>& active,
                               const double* s, int i, int j, int k) {
    auto diff = [&](int axis) -> double {
        int di = axis == 0, dj = axis == 1, dk = axis == 2;
        const double h = axis == 0 ? lat.hx : (axis == 1 ? lat.hy : lat.hz);
        const int n = axis == 0 ? lat.nx : (axis == 1 ? lat.ny : lat.nz);
        const int c = axis == 0 ? i : (axis == 1 ? j : k);
        const bool up_ok = c + 1 < n && active[lat.index(i + di, j + dj, k + dk)];
        const bool dn_ok = c - 1 >= 0 && active[lat.index(i - di, j - dj, k - dk)];
        const double v0 = s[lat.index(i, j, k)];
        if (up_ok && dn_ok)
            return (s[lat.index(i + di, j + dj, k + dk)] -
                    s[lat.index(i - di, j - dj, k - dk)]) / (2.0 * h);
        if (up_ok) return (s[lat.index(i + di, j + dj, k + dk)] - v0) / h;
        if (dn_ok) return (v0 - s[lat.index(i - di, j - dj, k - dk)]) / h;
        return 0.0;
    };
    return {diff(0), diff(1), diff(2)};
}

struct SliceKeep {
    std::vector<long> kept;           // slice indices k, ascending
    std::vector<long> slot_of_k;      // -1 when not stored
};

SliceKeep plan_storage(long n_slices_max, long stride, bool from_end, long anchor) {
    SliceKeep plan;
    plan.slot_of_k.assign(n_slices_max + 1, -1);
    for (long k = 0; k <= n_slices_max; ++k) {
        const long phase = from_end ? anchor - k : k;
        if (k == 0 || k == anchor || phase % stride == 0) plan.kept.push_back(k);
    }
    for (std::size_t s = 0; s < plan.kept.size(); ++s)
        plan.slot_of_k[plan.kept[s]] = static_cast<long>(s);
    return plan;
}

DpResult solve_backward_impl(DpMode mode, const TwoLevelParams& p,
                             const DpGridConfig& grid, long n_slices, double dt,
                             const std::vector<double>& terminal) {
    p.validate();
    grid.validate();

    const Lattice lat = Lattice::over_unit_cube(grid.nx, grid.ny, grid.nz);
    const long nodes = lat.nodes();
    if (static_cast<long>(terminal.size()) != nodes)
        throw ConfigError("solve_backward: terminal slice size mismatch");

    // Chain admissibility: the down-branch successor mass must stay positive
    // over the active region, |x| <= 1 + cell diagonal.
    const double xmax = 1.0 + lat.cell_diag();
    const double sdt = std::sqrt(dt);
    if (p.kappa_s * xmax * sdt > 0.9) {
        const double max_dt = std::pow(0.9 / (p.kappa_s * xmax), 2);
        throw SolverError(
            "solve_backward: time step violates the two-point chain positivity "
            "bound; maximal admissible dt = " + std::to_string(max_dt),
            max_dt);
    }

    std::vector<uint8_t> active(nodes);
    for (int k = 0; k < lat.nz; ++k)
        for (int j = 0; j < lat.ny; ++j)
            for (int i = 0; i < lat.nx; ++i)
                active[lat.index(i, j, k)] = lat.active(i, j, k) ? 1 : 0;

    const auto coarse =
        control_candidates(p.u_max, grid.control_n, grid.search_stride);
    std::vector<double> coarse_factor(coarse.size());
    for (std::size_t c = 0; c < coarse.size(); ++c) {
        const double u2 = coarse[c].ur * coarse[c].ur + coarse[c].ui * coarse[c].ui;
        coarse_factor[c] = (mode == DpMode::risk_sensitive)
                               ? std::exp(0.5 * p.mu * p.b * dt * u2)
                               : 0.5 * p.b * dt * u2;
    }

    const SliceKeep vkeep = plan_storage(n_slices, grid.value_stride, true, n_slices);
    const SliceKeep pkeep = plan_storage(n_slices - 1, grid.policy_stride, false,
                                         n_slices - 1);

    DpResult res;
    res.value.mode = mode;
    res.value.params = p;
    res.value.grid = grid;
    res.value.lat = lat;
    res.value.dt_dp = dt;
    res.value.times.resize(vkeep.kept.size());
    res.value.values.assign(vkeep.kept.size() * nodes, 0.0);
    for (std::size_t s = 0; s < vkeep.kept.size(); ++s)
        res.value.times[s] = vkeep.kept[s] * dt;

    res.policy.mode = mode;
    res.policy.params = p;
    res.policy.grid = grid;
    res.policy.lat = lat;
    res.policy.dt_dp = dt;
    res.policy.times.resize(pkeep.kept.size());
    res.policy.u_re.assign(pkeep.kept.size() * nodes, 0.0);
    res.policy.u_im.assign(pkeep.kept.size() * nodes, 0.0);
    for (std::size_t s = 0; s < pkeep.kept.size(); ++s)
        res.policy.times[s] = pkeep.kept[s] * dt;
    res.policy.provenance = grid.refine ? "closed-form" : "grid-search";

    std::vector<double> next = terminal;
    std::vector<double> cur(nodes, 0.0);

    if (vkeep.slot_of_k[n_slices] >= 0)
        std::copy(next.begin(), next.end(),
                  res.value.values.begin() + vkeep.slot_of_k[n_slices] * nodes);

    const bool rs = mode == DpMode::risk_sensitive;
    const double inv_mu = rs && p.mu > 0.0 ? 1.0 / p.mu : 0.0;

    for (long k = n_slices - 1; k >= 0; --k) {
        const double t = k * dt;
        const long pslot = pkeep.slot_of_k[k];
        double* pol_re = pslot >= 0 ? res.policy.u_re.data() + pslot * nodes : nullptr;
        double* pol_im = pslot >= 0 ? res.policy.u_im.data() + pslot * nodes : nullptr;
        const double* np = next.data();

        parallel_for(nodes, [&](long b, long e) {
            for (long idx = b; idx < e; ++idx) {
                if (!active[idx]) {
                    cur[idx] = 0.0;
                    if (pol_re) pol_re[idx] = 0.0, pol_im[idx] = 0.0;
                    continue;
                }
                const int i = static_cast<int>(idx % lat.nx);
                const int j = static_cast<int>((idx / lat.nx) % lat.ny);
                const int kk = static_cast<int>(idx / (static_cast<long>(lat.nx) * lat.ny));
                const BellmanNode node(mode, p, lat.xs[i], lat.ys[j], lat.zs[kk], dt);

                double best = std::numeric_limits<double>::infinity();
                double best_ur = 0.0, best_ui = 0.0;
                for (std::size_t c = 0; c < coarse.size(); ++c) {
                    const double ev =
                        node.expected_next(coarse[c].ur, coarse[c].ui, lat, np);
                    const double val = rs ? coarse_factor[c] * ev
                                          : node.add_base + coarse_factor[c] + ev;
                    if (val < best) {
                        best = val;
                        best_ur = coarse[c].ur;
                        best_ui = coarse[c].ui;
                    }
                }

                if (grid.refine) {
                    // One Newton step through the closed-form minimizer, with
                    // central-difference gradients of the next value slice.
                    Eigen::Vector3d gw = slice_gradient(lat, active, np, i, j, kk);
                    bool ok = true;
                    if (rs) {
                        const double s0 = np[idx];
                        if (s0 > 0.0)
                            gw *= inv_mu / s0;
                        else
                            ok = false;
                    }
                    if (ok) {
                        const OptimalControl oc = optimal_u_rs(
                            p, 1.0, lat.xs[i], lat.ys[j], lat.zs[kk], gw);
                        const double val =
                            node.rhs(oc.u.real(), oc.u.imag(), lat, np);
                        if (val < best) {
                            best = val;
                            best_ur = oc.u.real();
                            best_ui = oc.u.imag();
                        }
                    }
                }

                if (!std::isfinite(best))
                    throw SolverError("solve_backward: NaN at node (" +
                                      std::to_string(i) + "," + std::to_string(j) +
                                      "," + std::to_string(kk) + "), t = " +
                                      std::to_string(t));
                cur[idx] = best;
                if (pol_re) {
                    pol_re[idx] = best_ur;
                    pol_im[idx] = best_ui;
                }
            }
        });

        const long vslot = vkeep.slot_of_k[k];
        if (vslot >= 0)
            std::copy(cur.begin(), cur.end(),
                      res.value.values.begin() + vslot * nodes);
        std::swap(next, cur);
    }

    if (rs) {
        // Risk-sensitive values are products of positive factors.
        for (std::size_t s = 0; s < res.value.times.size(); ++s) {
            const double* sl = res.value.slice(s);
            for (long idx = 0; idx < nodes; ++idx)
                if (active[idx] && !(sl[idx] > 0.0))
                    throw SolverError("solve_backward: nonpositive risk-sensitive value");
        }
    }
    return res;
}

std::vector<double> standard_terminal(DpMode mode, const TwoLevelParams& p,
                                      const Lattice& lat, TerminalKind term) {
    std::vector<double> v(lat.nodes());
    for (int k = 0; k < lat.nz; ++k)
        for (int j = 0; j < lat.ny; ++j)
            for (int i = 0; i < lat.nx; ++i) {
                const double z = lat.zs[k];
                if (mode == DpMode::risk_sensitive) {
                    // <sigma, exp(mu C2)> at unit mass.
                    v[lat.index(i, j, k)] =
                        0.5 * (1.0 + z) + 0.5 * (1.0 - z) * std::exp(p.mu * p.c);
                } else {
                    const double w = term == TerminalKind::linear_c
                                         ? p.c
                                         : std::exp(p.c);
                    v[lat.index(i, j, k)] = 0.5 * (1.0 - z) * w;
                }
            }
    return v;
}

}  // namespace

DpResult solve_backward_from(DpMode mode, const TwoLevelParams& p,
                             const DpGridConfig& grid, double t_terminal,
                             const std::vector<double>& terminal) {
    const long n = std::max<long>(1, std::llround(t_terminal / grid.dt));
    const double dt = t_terminal / n;
    return solve_backward_impl(mode, p, grid, n, dt, terminal);
}

DpResult rs_backward_solve(const TwoLevelParams& p, const DpGridConfig& grid) {
    if (!(p.mu > 0.0))
        throw ConfigError(
            "rs_backward_solve: mu must be positive (use the risk-neutral solver "
            "at mu = 0)");
    const Lattice lat = Lattice::over_unit_cube(grid.nx, grid.ny, grid.nz);
    const long n = std::max<long>(1, std::llround(p.T / grid.dt));
    const double dt = p.T / n;
    return solve_backward_impl(DpMode::risk_sensitive, p, grid, n, dt,
                               standard_terminal(DpMode::risk_sensitive, p, lat,
                                                 grid.terminal));
}

DpResult rn_backward_solve(const TwoLevelParams& p, const DpGridConfig& grid) {
    const Lattice lat = Lattice::over_unit_cube(grid.nx, grid.ny, grid.nz);
    const long n = std::max<long>(1, std::llround(p.T / grid.dt));
    const double dt = p.T / n;
    return solve_backward_impl(DpMode::risk_neutral, p, grid, n, dt,
                               standard_terminal(DpMode::risk_neutral, p, lat,
                                                 grid.terminal));
}

// ---------------------------------------------------------------------------
// Generator oracle.

Eigen::VectorXd CylindricalFunction::coords(const CMatrix& sigma) const {
    Eigen::VectorXd v(ops.size());
    for (std::size_t j = 0; j < ops.size(); ++j)
        v[j] = (sigma * ops[j]).trace().real();
    return v;
}

GeneratorEstimate generator_oracle(const ModelSpec& spec,
                                   const CylindricalFunction& f,
                                   const CMatrix& sigma, Complex u, double h,
                                   int n_paths, int n_substeps, std::uint64_t seed) {
    GeneratorEstimate out;

    // Termwise analytic assembly for cylindrical f.
    const CMatrix kmu = k_mu_of_u(spec, u);
    const Eigen::VectorXd v = f.coords(sigma);
    const Eigen::VectorXd gj = f.grad(v);
    const Eigen::MatrixXd gjk = f.hess(v);
    const long J = static_cast<long>(f.ops.size());
    Eigen::VectorXd drift(J), meas(J);
    for (long j = 0; j < J; ++j) {
        const CMatrix& X = f.ops[j];
        const CMatrix dop = -(kmu.adjoint() * X) - X * kmu +
                            spec.L.adjoint() * X * spec.L +
                            spec.M.adjoint() * X * spec.M;
        drift[j] = (sigma * dop).trace().real();
        const CMatrix mop = spec.M.adjoint() * X + X * spec.M;
        meas[j] = (sigma * mop).trace().real();
    }
    out.analytic = gj.dot(drift);
    for (long j = 0; j < J; ++j)
        for (long k = 0; k < J; ++k)
            out.analytic += 0.5 * gjk(j, k) * meas[j] * meas[k];

    // Monte Carlo finite difference (E0[f(sigma_h)] - f(sigma)) / h with the
    // unnormalized risk-sensitive filter under the reference measure.
    const double f0 = f.eval(sigma);
    const double dt = h / n_substeps;
    std::vector<double> vals(n_paths);
    parallel_for(n_paths, [&](long b, long e) {
        for (long path = b; path < e; ++path) {
            NoiseStream ns(seed, static_cast<std::uint64_t>(path));
            StateMatrix s(sigma, /*normalized=*/false);
            for (int step = 0; step < n_substeps; ++step) {
                const double dy = ns.wiener_increment(dt);
                s = rs_filter_step(spec, s, u, dy, dt);
            }
            vals[path] = f.eval(s.matrix());
        }
    });
    double mean = 0.0;
    for (double x : vals) mean += x;
    mean /= n_paths;
    double var = 0.0;
    for (double x : vals) var += (x - mean) * (x - mean);
    var /= std::max(1, n_paths - 1);
    out.mc_estimate = (mean - f0) / h;
    out.mc_se = std::sqrt(var / n_paths) / h;
    return out;
}

}  // namespace qfc
