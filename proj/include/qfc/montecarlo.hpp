#pragma once

// Closed-loop simulation (truth conditional state plus feedback controller),
// deterministic master-equation propagation, and Monte Carlo estimators for
// the risk-sensitive and risk-neutral cost representations.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "qfc/dynprog.hpp"
#include "qfc/filters.hpp"
#include "qfc/model.hpp"
#include "qfc/stochastic.hpp"

namespace qfc {

// A causal feedback controller: an optional DP policy on top of an internal
// record-driven filter (risk-sensitive or standard, in normalized Bloch
// form).  The handle is fed record increments strictly in time order and has
// no access to the future; u(t) depends only on the internal state and t.
class ControllerHandle {
public:
    enum class FilterKind { standard, risk_sensitive };

    static ControllerHandle constant(Complex u, const TwoLevelParams& p,
                                     const Eigen::Vector3d& initial_bloch = {0, 0, 1});
    static ControllerHandle from_policy(std::shared_ptr<const Policy> policy,
                                        FilterKind kind, const TwoLevelParams& p,
                                        const Eigen::Vector3d& initial_bloch = {0, 0, 1});

    Complex control(double t) const;
    void advance(double t, Complex u, double dy2, double dt);
    void reset();

    FilterKind filter_kind() const { return kind_; }
    bool has_policy() const { return policy_ != nullptr; }
    const Eigen::Vector3d& filter_bloch() const { return filter_.r; }
    const Policy* policy() const { return policy_.get(); }

private:
    ControllerHandle() = default;
    Complex const_u_{0.0, 0.0};
    std::shared_ptr<const Policy> policy_;
    FilterKind kind_ = FilterKind::standard;
    TwoLevelNormalizedFilter filter_;
    Eigen::Vector3d init_{0.0, 0.0, 1.0};
};

// One closed-loop trajectory under the physical measure: the truth is the
// normalized conditional state driven by its innovation, emitting the record
// dy2 consumed by the controller.
TrajectoryRecord run_closed_loop(const ModelSpec& spec, const StateMatrix& pi0,
                                 ControllerHandle controller, NoiseStream stream);

struct MasterSeries {
    std::vector<double> times;
    std::vector<CMatrix> states;
};

// Deterministic master-equation propagation (classic RK4) under an open-loop
// control signal.
MasterSeries propagate_master(const ModelSpec& spec, const StateMatrix& rho0,
                              const std::function<Complex(double)>& control_signal,
                              double T, double dt);

struct CostReport {
    std::string estimator_id;
    double estimate = 0.0;
    double standard_error = 0.0;
    long n_paths = 0;
    std::uint64_t seed = 0;
    std::uint64_t model_hash = 0;
    double wall_time_s = 0.0;
    long saturation_count = 0;
};

enum class Measure { physical, reference };

// Reference-measure risk-sensitive estimator: y2 is a Wiener path under P0
// driving the unnormalized risk-sensitive coefficient filter; the payoff is
// exp(log_factor) <sigma_T, exp(mu C2)>.
CostReport estimate_cost_rs_reference(const TwoLevelParams& p,
                                      const ControllerHandle& controller,
                                      const Eigen::Vector3d& initial_bloch,
                                      long n_paths, std::uint64_t seed);

// Physical-measure risk-sensitive estimator: the normalized risk-sensitive
// state driven by its own innovation, multiplicative running cost
// exp(mu int tr(C1(u) pi^mu) dt) accumulated in log space.
CostReport estimate_cost_rs_physical(const TwoLevelParams& p,
                                     const ControllerHandle& controller,
                                     const Eigen::Vector3d& initial_bloch,
                                     long n_paths, std::uint64_t seed);

// Risk-neutral estimator in either measure: additive running cost
// int <state, C1(u)> dt plus terminal <state, C2>.
CostReport estimate_cost_rn(const TwoLevelParams& p,
                            const ControllerHandle& controller,
                            const Eigen::Vector3d& initial_bloch, long n_paths,
                            std::uint64_t seed, Measure measure);

}  // namespace qfc
