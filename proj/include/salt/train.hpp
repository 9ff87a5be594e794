#pragma once

#include <span>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "io.hpp"
#include "rng.hpp"
#include "schedule.hpp"

namespace salt {

template <typename S>
struct TrainExample {
    Grid<S> image;
    TokenSequence tokens;
    uint64_t id = 0;
};

struct TrainConfig {
    int steps = 6000;
    int batch = 32;
    double lr = 1e-3;
    double p_drop = 0.1;  // classifier-free condition dropout
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    int log_every = 100;
};

struct LossPoint {
    int step;
    double loss;
};

template <typename S>
class Trainer {
  public:
    Denoiser<S>& dn;
    NoiseSchedule sched;
    TrainConfig cfg;

    Trainer(Denoiser<S>& d, NoiseSchedule s, TrainConfig c) : dn(d), sched(std::move(s)), cfg(c) {
        m_ = dn.zero_grads();
        v_ = dn.zero_grads();
    }

    // One optimizer step over a batch. Per-example noise streams are keyed by
    // (seed, example id, step), and gradients are accumulated in ascending id
    // order, so permuting the batch list does not change the result.
    double train_step(std::vector<const TrainExample<S>*> batch, int step, uint64_t seed) {
        std::sort(batch.begin(), batch.end(),
                  [](const TrainExample<S>* a, const TrainExample<S>* b) { return a->id < b->id; });
        DenoiserParams<S> grads = dn.zero_grads();
        double loss_sum = 0;
        size_t numel = size_t(dn.cfg.Cimg) * dn.cfg.H * dn.cfg.W;
        const TokenSequence null_seq = null_tokens();

        for (const TrainExample<S>* ex : batch) {
            Rng ex_rng(mix_seed(seed, ex->id, uint64_t(step)));
            int t = 1 + int(ex_rng.uniform_int(uint64_t(sched.T)));
            bool drop = ex_rng.uniform() < cfg.p_drop;
            Grid<S> eps = randn<S>(ex->image.shape, ex_rng);
            Grid<S> z_t = q_sample(ex->image, t, eps, sched);

            RowMat<S> cond = dn.embed(drop ? null_seq : ex->tokens);
            DenoiserTape<S> tape;
            Grid<S> eps_hat = dn.predict_noise(z_t, t, cond, nullptr, &tape);

            double l = 0;
            Grid<S> d_eps(eps_hat.shape);
            S scale = S(2.0 / (double(numel) * batch.size()));
            for (size_t i = 0; i < numel; ++i) {
                double d = double(eps_hat.v[i]) - double(eps.v[i]);
                l += d * d;
                d_eps.v[i] = scale * S(d);
            }
            loss_sum += l / double(numel);

            RowMat<S> dcond;
            dn.backward(tape, d_eps, nullptr, nullptr, &grads, &dcond);
            // scatter embedding gradient back to the table rows
            const TokenSequence& toks = drop ? null_seq : ex->tokens;
            for (int k = 0; k < toks.size(); ++k)
                for (int j = 0; j < dn.cfg.d_embed; ++j)
                    grads.embed.v[size_t(toks.ids[k]) * dn.cfg.d_embed + j] += dcond(k, j);
        }

        double loss = loss_sum / double(batch.size());
        if (!std::isfinite(loss))
            throw training_error("training diverged at step " + std::to_string(step));
        adam_update(grads);
        return loss;
    }

    std::vector<LossPoint> train(const std::vector<TrainExample<S>>& examples, uint64_t seed,
                                 std::ostream* log_stream = nullptr) {
        if (examples.empty()) throw contract_error("train: empty train set");
        std::vector<LossPoint> log;
        for (int step = 0; step < cfg.steps; ++step) {
            Rng batch_rng(mix_seed(seed, 0xBA7C4ull, uint64_t(step)));
            std::vector<const TrainExample<S>*> batch;
            std::vector<uint64_t> seen;
            while (int(batch.size()) < cfg.batch) {
                const TrainExample<S>& ex = examples[batch_rng.uniform_int(examples.size())];
                if (std::find(seen.begin(), seen.end(), ex.id) != seen.end() &&
                    examples.size() > size_t(cfg.batch))
                    continue;
                seen.push_back(ex.id);
                batch.push_back(&ex);
            }
            double loss = train_step(std::move(batch), step, seed);
            if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
                log.push_back({step, loss});
                if (log_stream)
                    *log_stream << "{\"step\": " << step << ", \"loss\": " << loss << "}\n";
            }
        }
        return log;
    }

    // Held-out eps-MSE with fixed per-example streams.
    double eval_mse(const std::vector<TrainExample<S>>& examples, uint64_t seed) const {
        double total = 0;
        size_t numel = size_t(dn.cfg.Cimg) * dn.cfg.H * dn.cfg.W;
        for (const auto& ex : examples) {
            Rng ex_rng(mix_seed(seed, ex.id, 0xE7A1ull));
            int t = 1 + int(ex_rng.uniform_int(uint64_t(sched.T)));
            Grid<S> eps = randn<S>(ex.image.shape, ex_rng);
            Grid<S> z_t = q_sample(ex.image, t, eps, sched);
            Grid<S> eps_hat = dn.predict_noise(z_t, t, dn.embed(ex.tokens));
            double l = 0;
            for (size_t i = 0; i < numel; ++i) {
                double d = double(eps_hat.v[i]) - double(eps.v[i]);
                l += d * d;
            }
            total += l / double(numel);
        }
        return total / double(examples.size());
    }

  private:
    DenoiserParams<S> m_, v_;
    long adam_t_ = 0;

    void adam_update(DenoiserParams<S>& grads) {
        ++adam_t_;
        double bc1 = 1.0 - std::pow(cfg.beta1, double(adam_t_));
        double bc2 = 1.0 - std::pow(cfg.beta2, double(adam_t_));
        auto upd = [&](const char*, Tensor<S>& p, Tensor<S>& gm, Tensor<S>& gv, Tensor<S>& gr) {
            for (size_t i = 0; i < p.numel(); ++i) {
                double gi = double(gr.v[i]);
                double mi = cfg.beta1 * double(gm.v[i]) + (1 - cfg.beta1) * gi;
                double vi = cfg.beta2 * double(gv.v[i]) + (1 - cfg.beta2) * gi * gi;
                gm.v[i] = S(mi);
                gv.v[i] = S(vi);
                p.v[i] -= S(cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps));
            }
        };
        // walk the three mirrored structures in lockstep
        std::vector<Tensor<S>*> ps, ms, vs, gs;
        visit_params(dn.params, [&](const char*, Tensor<S>& t) { ps.push_back(&t); });
        visit_params(m_, [&](const char*, Tensor<S>& t) { ms.push_back(&t); });
        visit_params(v_, [&](const char*, Tensor<S>& t) { vs.push_back(&t); });
        visit_params(grads, [&](const char*, Tensor<S>& t) { gs.push_back(&t); });
        for (size_t i = 0; i < ps.size(); ++i) upd("", *ps[i], *ms[i], *vs[i], *gs[i]);
    }
};

// ---------------------------------------------------------------------------
// checkpoint container: schedule tensors + f32 denoiser params + config meta
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, const Denoiser<float>& dn,
                            const NoiseSchedule& sched, json extra_meta = json::object()) {
    TensorContainer c;
    c.tensors.push_back(NamedTensor::from_f64_vec("schedule.beta", sched.beta));
    c.tensors.push_back(NamedTensor::from_f64_vec("schedule.alpha_bar", sched.alpha_bar));
    visit_params(const_cast<DenoiserParams<float>&>(dn.params),
                 [&](const char* name, Tensor<float>& t) {
                     c.tensors.push_back(NamedTensor::from_f32(std::string("denoiser.") + name, t));
                 });
    c.meta = {{"config",
               {{"H", dn.cfg.H},
                {"W", dn.cfg.W},
                {"Cimg", dn.cfg.Cimg},
                {"c1", dn.cfg.c1},
                {"c2", dn.cfg.c2},
                {"c3", dn.cfg.c3},
                {"heads", dn.cfg.heads},
                {"head_dim", dn.cfg.head_dim},
                {"d_embed", dn.cfg.d_embed},
                {"pe_dim", dn.cfg.pe_dim},
                {"temb_dim", dn.cfg.temb_dim},
                {"vocab", dn.cfg.vocab}}}};
    c.meta.update(extra_meta);
    save_container(path, c);
}

inline std::pair<Denoiser<float>, NoiseSchedule> load_checkpoint(const std::string& path) {
    TensorContainer c = load_container(path);
    const json& jc = c.meta.at("config");
    DenoiserConfig cfg;
    cfg.H = jc.at("H");
    cfg.W = jc.at("W");
    cfg.Cimg = jc.at("Cimg");
    cfg.c1 = jc.at("c1");
    cfg.c2 = jc.at("c2");
    cfg.c3 = jc.at("c3");
    cfg.heads = jc.at("heads");
    cfg.head_dim = jc.at("head_dim");
    cfg.d_embed = jc.at("d_embed");
    cfg.pe_dim = jc.at("pe_dim");
    cfg.temb_dim = jc.at("temb_dim");
    cfg.vocab = jc.at("vocab");

    NoiseSchedule sched;
    sched.beta = c.get("schedule.beta").as_f64().v;
    sched.alpha_bar = c.get("schedule.alpha_bar").as_f64().v;
    sched.T = int(sched.beta.size());

    Denoiser<float> dn(cfg);
    visit_params(dn.params, [&](const char* name, Tensor<float>& t) {
        Tensor<float> loaded = c.get(std::string("denoiser.") + name).as_f32();
        if (loaded.shape != t.shape)
            throw io_error(std::string("checkpoint shape mismatch for ") + name);
        if (!all_finite(loaded)) throw io_error(std::string("non-finite tensor ") + name);
        t = std::move(loaded);
    });
    return {std::move(dn), std::move(sched)};
}

// Convert a trained float model to double for high-precision checks.
inline Denoiser<double> to_double(const Denoiser<float>& dn) {
    Denoiser<double> out(dn.cfg);
    std::vector<const Tensor<float>*> src;
    visit_params(const_cast<DenoiserParams<float>&>(dn.params),
                 [&](const char*, Tensor<float>& t) { src.push_back(&t); });
    size_t i = 0;
    visit_params(out.params,
                 [&](const char*, Tensor<double>& t) { t = src[i++]->template cast<double>(); });
    return out;
}

}  // namespace salt
