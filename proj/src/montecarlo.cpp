#include "qfc/montecarlo.hpp"

#include <chrono>
#include <cmath>

#include "qfc/hashing.hpp"
#include "qfc/parallel.hpp"

namespace qfc {

// ---------------------------------------------------------------------------
// ControllerHandle.

ControllerHandle ControllerHandle::constant(Complex u, const TwoLevelParams& p,
                                            const Eigen::Vector3d& initial_bloch) {
    ControllerHandle h;
    h.const_u_ = u;
    h.kind_ = FilterKind::standard;
    h.filter_.params = p;
    h.filter_.params.mu = 0.0;
    h.init_ = initial_bloch;
    h.filter_.r = initial_bloch;
    return h;
}

ControllerHandle ControllerHandle::from_policy(std::shared_ptr<const Policy> policy,
                                               FilterKind kind,
                                               const TwoLevelParams& p,
                                               const Eigen::Vector3d& initial_bloch) {
    if (!policy) throw ConfigError("ControllerHandle: null policy");
    ControllerHandle h;
    h.policy_ = std::move(policy);
    h.kind_ = kind;
    h.filter_.params = p;
    if (kind == FilterKind::standard) h.filter_.params.mu = 0.0;
    h.init_ = initial_bloch;
    h.filter_.r = initial_bloch;
    return h;
}

Complex ControllerHandle::control(double t) const {
    if (!policy_) return const_u_;
    const Eigen::Vector3d& r = filter_.r;
    return policy_->at(r[0], r[1], r[2], t);
}

void ControllerHandle::advance(double /*t*/, Complex u, double dy2, double dt) {
    filter_.step_record(u, dy2, dt);
}

void ControllerHandle::reset() { filter_.r = init_; }

// ---------------------------------------------------------------------------
// Closed loop.

TrajectoryRecord run_closed_loop(const ModelSpec& spec, const StateMatrix& pi0,
                                 ControllerHandle controller, NoiseStream stream) {
    spec.validate();
    const long n = spec.steps();
    const double dt = spec.dt;
    const bool qubit = spec.dim() == 2;

    TrajectoryRecord rec;
    rec.master_seed = stream.master_seed();
    rec.stream_index = stream.stream_index();
    rec.times.reserve(n + 1);
    rec.y_increments.reserve(n);
    rec.truth_bloch.reserve(n + 1);
    rec.controller_bloch.reserve(n + 1);
    rec.controls.reserve(n);
    rec.cost_additive.reserve(n + 1);
    rec.cost_log_factor.reserve(n + 1);

    StateMatrix pi = pi0;
    const CMatrix c1_zero = spec.c1(Complex(0.0, 0.0));
    const double dim = static_cast<double>(spec.dim());

    auto truth_coords = [&](const StateMatrix& s) -> Eigen::Vector3d {
        if (!qubit) return Eigen::Vector3d::Zero();
        const Eigen::Vector4d b = bloch_of_matrix(s.matrix());
        return {b[1], b[2], b[3]};
    };

    rec.times.push_back(0.0);
    rec.truth_bloch.push_back(truth_coords(pi));
    rec.controller_bloch.push_back(controller.filter_bloch());
    rec.cost_additive.push_back(0.0);
    rec.cost_log_factor.push_back(0.0);

    double cost_add = 0.0, cost_lf = 0.0;
    for (long k = 0; k < n; ++k) {
        const double t = k * dt;
        const Complex u = controller.control(t);
        const double dW = stream.wiener_increment(dt);
        // Truth: standard normalized filter with the configured efficiency.
        const NormalizedStep ns = belavkin_eta_step(spec, pi, u, dW, dt);
        controller.advance(t, u, ns.dy2, dt);

        cost_add += ns.cost_rate * dt;
        // Rate of the factored control-energy exponent,
        // mu * tr(C1(u) - C1(0)) / dim.
        cost_lf += spec.mu * ((spec.c1(u) - c1_zero).trace().real() / dim) * dt;

        pi = ns.state;
        rec.times.push_back((k + 1) * dt);
        rec.y_increments.push_back(ns.dy2);
        rec.controls.push_back(u);
        rec.truth_bloch.push_back(truth_coords(pi));
        rec.controller_bloch.push_back(controller.filter_bloch());
        rec.cost_additive.push_back(cost_add);
        rec.cost_log_factor.push_back(cost_lf);
    }
    rec.validate_lengths();
    return rec;
}

// ---------------------------------------------------------------------------
// Master equation.

MasterSeries propagate_master(const ModelSpec& spec, const StateMatrix& rho0,
                              const std::function<Complex(double)>& control_signal,
                              double T, double dt) {
    const long n = std::max<long>(1, std::llround(T / dt));
    const double h = T / n;
    MasterSeries out;
    out.times.reserve(n + 1);
    out.states.reserve(n + 1);
    CMatrix rho = rho0.matrix();
    out.times.push_back(0.0);
    out.states.push_back(rho);
    for (long k = 0; k < n; ++k) {
        const double t = k * h;
        const CMatrix k1 = master_rhs(spec, rho, control_signal(t));
        const CMatrix k2 =
            master_rhs(spec, CMatrix(rho + 0.5 * h * k1), control_signal(t + 0.5 * h));
        const CMatrix k3 =
            master_rhs(spec, CMatrix(rho + 0.5 * h * k2), control_signal(t + 0.5 * h));
        const CMatrix k4 = master_rhs(spec, CMatrix(rho + h * k3), control_signal(t + h));
        rho = hermitized(CMatrix(rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)));
        if (std::abs(rho.trace() - Complex(1.0, 0.0)) > 1e-8)
            throw NumericError("propagate_master: trace drift beyond 1e-8", k);
        out.times.push_back((k + 1) * h);
        out.states.push_back(rho);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cost estimators.

namespace {

struct Accumulator {
    double sum = 0.0;
    double sum_sq = 0.0;
    long saturations = 0;
};

constexpr double kLogPayoffCap = 700.0;

CostReport reduce(const std::string& id, const TwoLevelParams& p,
                  const std::vector<double>& vals, long saturations,
                  std::uint64_t seed, double wall_s) {
    CostReport r;
    r.estimator_id = id;
    r.n_paths = static_cast<long>(vals.size());
    r.seed = seed;
    r.model_hash = model_hash(p);
    r.wall_time_s = wall_s;
    r.saturation_count = saturations;
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= r.n_paths;
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= std::max<long>(1, r.n_paths - 1);
    r.estimate = mean;
    r.standard_error = std::sqrt(var / r.n_paths);
    return r;
}

template <typename PathFn>
CostReport run_paths(const std::string& id, const TwoLevelParams& p, long n_paths,
                     std::uint64_t seed, PathFn&& path_fn) {
    if (n_paths < 1) throw ConfigError("estimator: n_paths must be >= 1");
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> vals(n_paths);
    std::vector<long> sats(n_paths, 0);
    parallel_for(n_paths, [&](long b, long e) {
        for (long i = b; i < e; ++i) {
            NoiseStream ns(seed, static_cast<std::uint64_t>(i));
            vals[i] = path_fn(ns, sats[i]);
        }
    });
    long sat = 0;
    for (long s : sats) sat += s;
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return reduce(id, p, vals, sat, seed, wall);
}

}  // namespace

CostReport estimate_cost_rs_reference(const TwoLevelParams& p,
                                      const ControllerHandle& controller,
                                      const Eigen::Vector3d& ib, long n_paths,
                                      std::uint64_t seed) {
    p.validate();
    const long n = p.steps();
    const double dt = p.dt;
    const double emc = std::exp(p.mu * p.c);
    return run_paths("rs-reference", p, n_paths, seed, [&](NoiseStream& ns, long& sat) {
        ControllerHandle c = controller;
        c.reset();
        BlochState s{1.0, ib[0], ib[1], ib[2], 0.0};
        for (long k = 0; k < n; ++k) {
            const double t = k * dt;
            const Complex u = c.control(t);
            const double dy2 = ns.wiener_increment(dt);  // y2 Wiener under P0
            s = bloch_rs_step(p, s, u, dy2, dt);
            c.advance(t, u, dy2, dt);
        }
        double lf = s.log_factor;
        if (lf > kLogPayoffCap) {
            lf = kLogPayoffCap;
            ++sat;
        }
        // <sigma_T, exp(mu C2)> = factor * [ (n+z)/2 + (n-z)/2 e^{mu c} ].
        return std::exp(lf) * (0.5 * (s.n + s.z) + 0.5 * (s.n - s.z) * emc);
    });
}

CostReport estimate_cost_rs_physical(const TwoLevelParams& p,
                                     const ControllerHandle& controller,
                                     const Eigen::Vector3d& ib, long n_paths,
                                     std::uint64_t seed) {
    p.validate();
    const long n = p.steps();
    const double dt = p.dt;
    const double emc = std::exp(p.mu * p.c);
    return run_paths("rs-physical", p, n_paths, seed, [&](NoiseStream& ns, long& sat) {
        ControllerHandle c = controller;
        c.reset();
        TwoLevelNormalizedFilter pi_mu{p, ib};  // normalized risk-sensitive state
        double logpay = 0.0;
        for (long k = 0; k < n; ++k) {
            const double t = k * dt;
            const Complex u = c.control(t);
            // mu tr(C1(u) pi^mu) dt, accumulated in log space.
            logpay += p.mu *
                      (0.5 * p.a * (1.0 - pi_mu.r[2]) + 0.5 * p.b * std::norm(u)) * dt;
            const double dW = ns.wiener_increment(dt);  // w^mu Wiener under P^mu
            const double dy2 = pi_mu.step(u, dW, dt);
            c.advance(t, u, dy2, dt);
        }
        if (logpay > kLogPayoffCap) {
            logpay = kLogPayoffCap;
            ++sat;
        }
        const double zT = pi_mu.r[2];
        return std::exp(logpay) * (0.5 * (1.0 + zT) + 0.5 * (1.0 - zT) * emc);
    });
}

CostReport estimate_cost_rn(const TwoLevelParams& p,
                            const ControllerHandle& controller,
                            const Eigen::Vector3d& ib, long n_paths,
                            std::uint64_t seed, Measure measure) {
    p.validate();
    const long n = p.steps();
    const double dt = p.dt;
    if (measure == Measure::reference) {
        return run_paths("rn-reference", p, n_paths, seed,
                         [&](NoiseStream& ns, long&) {
            ControllerHandle c = controller;
            c.reset();
            BlochState s{1.0, ib[0], ib[1], ib[2], 0.0};
            double cost = 0.0;
            for (long k = 0; k < n; ++k) {
                const double t = k * dt;
                const Complex u = c.control(t);
                // <sigma, C1(u)> = a (n - z)/2 + (b/2)|u|^2 n.
                cost += (0.5 * p.a * (s.n - s.z) + 0.5 * p.b * std::norm(u) * s.n) * dt;
                const double dy2 = ns.wiener_increment(dt);
                s = bloch_rn_step(p, s, u, dy2, dt);
                c.advance(t, u, dy2, dt);
            }
            return cost + 0.5 * (s.n - s.z) * p.c;
        });
    }
    return run_paths("rn-physical", p, n_paths, seed, [&](NoiseStream& ns, long&) {
        ControllerHandle c = controller;
        c.reset();
        TwoLevelParams p0 = p;
        p0.mu = 0.0;
        TwoLevelNormalizedFilter pi{p0, ib};
        double cost = 0.0;
        for (long k = 0; k < n; ++k) {
            const double t = k * dt;
            const Complex u = c.control(t);
            cost += (0.5 * p.a * (1.0 - pi.r[2]) + 0.5 * p.b * std::norm(u)) * dt;
            const double dW = ns.wiener_increment(dt);
            const double dy2 = pi.step(u, dW, dt);
            c.advance(t, u, dy2, dt);
        }
        return cost + 0.5 * (1.0 - pi.r[2]) * p.c;
    });
}

}  // namespace qfc
