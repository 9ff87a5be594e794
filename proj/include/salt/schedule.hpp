#pragma once

#include <cmath>
#include <vector>

#include "core.hpp"

namespace salt {

// Linear-beta diffusion schedule. alpha_bar is accumulated in double no
// matter the working precision; t is 1-based, alpha_bar(0) == 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t-1], t in 1..T
    std::vector<double> alpha_bar;  // alpha_bar[t-1]

    double alpha_bar_at(int t) const {
        if (t < 0 || t > T) throw contract_error("timestep out of range");
        return t == 0 ? 1.0 : alpha_bar[t - 1];
    }
};

inline NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw config_error("build_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw config_error("build_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        double b = T == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * double(t - 1) / double(T - 1);
        s.beta[t - 1] = b;
        prod *= 1.0 - b;
        s.alpha_bar[t - 1] = prod;
    }
    return s;
}

inline NoiseSchedule default_schedule() { return build_schedule(200, 1e-4, 0.02); }

// z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps
template <typename S>
Grid<S> q_sample(const Grid<S>& z0, int t, const Grid<S>& eps, const NoiseSchedule& sched) {
    check_same_shape(z0, eps, "q_sample");
    double ab = sched.alpha_bar_at(t);
    if (t == 0) return z0;
    S a = S(std::sqrt(ab)), b = S(std::sqrt(1.0 - ab));
    Grid<S> out(z0.shape);
    for (size_t i = 0; i < z0.numel(); ++i) out.v[i] = a * z0.v[i] + b * eps.v[i];
    return out;
}

}  // namespace salt
