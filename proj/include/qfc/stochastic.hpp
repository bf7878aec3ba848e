#pragma once

// Reproducible random-number streams, Wiener increments, and the
// Euler-Maruyama stepping contract shared by every SDE in the library.

#include <cmath>
#include <cstdint>
#include <random>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "qfc/errors.hpp"
#include "qfc/operators.hpp"

namespace qfc {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// One independent Gaussian stream per trajectory.  (master_seed,
// stream_index) fully determines the sequence; replay is exact.  Streams are
// single-owner: copy one per worker, never share.
class NoiseStream {
public:
    NoiseStream(std::uint64_t master_seed, std::uint64_t stream_index)
        : master_seed_(master_seed), stream_index_(stream_index),
          engine_(splitmix64(splitmix64(master_seed) ^
                             splitmix64(stream_index * 0x9E3779B97F4A7C15ull + 1))) {}

    // Standard normal draw (Marsaglia polar, cached spare).
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        have_spare_ = true;
        return u * f;
    }

    // Wiener increment ~ N(0, dt); advances the position counter.
    double wiener_increment(double dt) {
        if (!(dt > 0.0)) throw ConfigError("wiener_increment: dt must be positive");
        ++position_;
        return std::sqrt(dt) * gaussian();
    }

    std::uint64_t master_seed() const { return master_seed_; }
    std::uint64_t stream_index() const { return stream_index_; }
    std::uint64_t position() const { return position_; }

private:
    double uniform() {  // [0, 1)
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    std::uint64_t master_seed_;
    std::uint64_t stream_index_;
    std::uint64_t position_ = 0;
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

namespace detail {
inline bool all_finite(double x) { return std::isfinite(x); }
template <typename Derived>
inline bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}
}  // namespace detail

// Euler-Maruyama step: state + drift(state) dt + diffusion(state) dW.
// Throws NumericError carrying step_index when the result is non-finite.
template <typename State, typename Drift, typename Diffusion>
State em_step(const State& state, Drift&& drift, Diffusion&& diffusion,
              double dW, double dt, long step_index = -1) {
    State out = state + drift(state) * dt + diffusion(state) * dW;
    if (!detail::all_finite(out))
        throw NumericError("em_step: non-finite state", step_index);
    return out;
}

// One closed-loop trajectory: record increments, truth and controller filter
// states, controls, and running cost accumulators, with RNG provenance.
// Written once by the simulation loop, immutable afterwards.
struct TrajectoryRecord {
    std::vector<double> times;                       // steps + 1
    std::vector<double> y_increments;                // steps
    std::vector<Eigen::Vector3d> truth_bloch;        // steps + 1, normalized
    std::vector<Eigen::Vector3d> controller_bloch;   // steps + 1, normalized
    std::vector<Complex> controls;                   // steps
    std::vector<double> cost_additive;               // steps + 1, int <pi,C1(u)> dt
    std::vector<double> cost_log_factor;             // steps + 1, (mu b/2) int |u|^2 dt
    std::uint64_t master_seed = 0;
    std::uint64_t stream_index = 0;

    void validate_lengths() const {
        const std::size_t n = y_increments.size();
        const bool ok = times.size() == n + 1 && truth_bloch.size() == n + 1 &&
                        controller_bloch.size() == n + 1 && controls.size() == n &&
                        cost_additive.size() == n + 1 &&
                        cost_log_factor.size() == n + 1;
        if (!ok) throw Error("TrajectoryRecord: inconsistent series lengths");
    }
};

}  // namespace qfc
