#pragma once

#include <functional>
#include <optional>

#include "denoiser.hpp"
#include "rng.hpp"
#include "schedule.hpp"

namespace salt {

struct SamplerConfig {
    int steps = 50;
    double cfg_weight = 3.0;  // w in the conditional/unconditional interpolation

    void validate(int T) const {
        if (steps < 1 || steps > T) throw config_error("sampler steps must be in 1..T");
        if (cfg_weight < 0) throw config_error("cfg weight must be >= 0");
    }
};

// Uniform subsequence 0 = tau_0 < ... < tau_steps = T.
inline std::vector<int> timestep_subsequence(int T, int steps) {
    std::vector<int> tau(steps + 1);
    for (int j = 0; j <= steps; ++j) tau[j] = px_round(double(j) * T / steps);
    return tau;
}

template <typename S>
struct TrajectoryPoint {
    int t;
    Grid<S> z;
    std::optional<AttentionCapture<S>> capture;
};

template <typename S>
struct Trajectory {
    std::vector<TrajectoryPoint<S>> points;
};

// w * eps_cond + (1 - w) * eps_uncond
template <typename S>
Grid<S> cfg_combine(const Grid<S>& eps_cond, const Grid<S>& eps_uncond, double w) {
    check_same_shape(eps_cond, eps_uncond, "cfg_combine");
    if (w == 1.0) return eps_cond;
    if (w == 0.0) return eps_uncond;
    Grid<S> out(eps_cond.shape);
    for (size_t i = 0; i < out.numel(); ++i)
        out.v[i] = S(w) * eps_cond.v[i] + S(1.0 - w) * eps_uncond.v[i];
    return out;
}

// Deterministic DDIM move t -> t_next (either direction) for a fixed eps_hat:
// x0_hat = (z_t - sqrt(1-ab_t) eps) / sqrt(ab_t); out = sqrt(ab_n) x0_hat +
// sqrt(1-ab_n) eps.
template <typename S>
Grid<S> ddim_step(const Grid<S>& z_t, int t, int t_next, const Grid<S>& eps_hat,
                  const NoiseSchedule& sched) {
    check_same_shape(z_t, eps_hat, "ddim_step");
    if (t == t_next) throw contract_error("ddim_step: t == t_next");
    double ab_t = sched.alpha_bar_at(t);
    double ab_n = sched.alpha_bar_at(t_next);
    double c0 = std::sqrt(ab_n / ab_t);
    double ce = std::sqrt(1.0 - ab_n) - std::sqrt(ab_n / ab_t) * std::sqrt(1.0 - ab_t);
    Grid<S> out(z_t.shape);
    for (size_t i = 0; i < out.numel(); ++i)
        out.v[i] = S(c0) * z_t.v[i] + S(ce) * eps_hat.v[i];
    return out;
}

// Latent-editing hook applied before the DDIM step on early timesteps.
/// Arguments: latent, timestep t, sampling step index (0 = first).
template <typename S>
using GuidanceHook = std::function<Grid<S>(const Grid<S>&, int, int)>;

// Classifier-free-guided DDIM sampling from z_init at t = start (default T)
// down to 0. The hook fires on the first guided_steps indices.
template <typename S>
Trajectory<S> ddim_sample(const Denoiser<S>& dn, const Grid<S>& z_init, const TokenSequence& toks,
                          const NoiseSchedule& sched, const SamplerConfig& cfg,
                          const std::type_identity_t<GuidanceHook<S>>& hook = nullptr,
                          int guided_steps = 0,
                          bool record_capture = false, int start_index = -1) {
    cfg.validate(sched.T);
    std::vector<int> tau = timestep_subsequence(sched.T, cfg.steps);
    if (start_index < 0) start_index = cfg.steps;

    RowMat<S> cond = dn.embed(toks);
    RowMat<S> uncond = dn.embed(null_tokens());

    Trajectory<S> traj;
    Grid<S> z = z_init;
    int step_index = 0;
    for (int j = start_index; j >= 1; --j, ++step_index) {
        int t = tau[j], t_next = tau[j - 1];
        if (hook && step_index < guided_steps) z = hook(z, t, step_index);
        AttentionCapture<S> cap;
        Grid<S> eps_c = dn.predict_noise(z, t, cond, record_capture ? &cap : nullptr);
        Grid<S> eps_u = dn.predict_noise(z, t, uncond);
        Grid<S> eps = cfg_combine(eps_c, eps_u, cfg.cfg_weight);
        TrajectoryPoint<S> pt{t, z, std::nullopt};
        if (record_capture) pt.capture = std::move(cap);
        traj.points.push_back(std::move(pt));
        z = ddim_step(z, t, t_next, eps, sched);
    }
    traj.points.push_back({0, z, std::nullopt});
    return traj;
}

template <typename S>
const Grid<S>& final_latent(const Trajectory<S>& traj) {
    return traj.points.back().z;
}

// Unconditional DDIM inversion z0 -> z_T* over the same uniform subsequence.
// eps is evaluated at the lower timestep of each move (clamped to 1).
template <typename S>
std::pair<Grid<S>, Trajectory<S>> ddim_invert(const Denoiser<S>& dn, const Grid<S>& z0,
                                              const NoiseSchedule& sched, int steps) {
    if (steps < 1 || steps > sched.T) throw contract_error("ddim_invert: steps must be in 1..T");
    std::vector<int> tau = timestep_subsequence(sched.T, steps);
    RowMat<S> uncond = dn.embed(null_tokens());

    Trajectory<S> traj;
    Grid<S> z = z0;
    for (int j = 0; j < steps; ++j) {
        int t = tau[j], t_next = tau[j + 1];
        traj.points.push_back({t, z, std::nullopt});
        Grid<S> eps = dn.predict_noise(z, std::max(t, 1), uncond);
        z = ddim_step(z, t, t_next, eps, sched);
    }
    traj.points.push_back({sched.T, z, std::nullopt});
    return {z, std::move(traj)};
}

// SDEdit-style stochastic forward noising at strength t.
template <typename S>
Grid<S> sde_noise(const Grid<S>& z0, int t, const NoiseSchedule& sched, Rng& rng) {
    if (t < 1 || t > sched.T) throw contract_error("sde_noise: t must be in 1..T");
    Grid<S> eps = randn<S>(z0.shape, rng);
    return q_sample(z0, t, eps, sched);
}

}  // namespace salt
