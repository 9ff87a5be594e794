#pragma once

#include <atomic>
#include <mutex>
#include <thread>

#include "guidance.hpp"
#include "train.hpp"

namespace salt {

// Reference-object asset for a shape class: the class shape rasterized at
// 16x16, so composed reference images match what the detector looks for.
inline ObjectAsset shape_object_asset(int class_idx) {
    const ClassDef& cd = shape_classes()[class_idx];
    SceneSpec s;
    s.background = "plain-white";
    s.placements = {{class_idx, BBox{0.0, 0.0, 1.0, 1.0}}};
    auto [img, gts] = render_scene<float>(s, 16, 16);
    ObjectAsset o;
    o.class_name = cd.name;
    o.color = cd.rgb;
    o.mask = Tensor<uint8_t>({16, 16});
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
            bool hit = std::abs(double(img.at(0, r, c)) - cd.rgb[0]) < 1e-3 &&
                       std::abs(double(img.at(1, r, c)) - cd.rgb[1]) < 1e-3 &&
                       std::abs(double(img.at(2, r, c)) - cd.rgb[2]) < 1e-3;
            o.mask.v[size_t(r) * 16 + c] = hit ? 1 : 0;
        }
    o.validate();
    return o;
}

template <typename S>
struct RecordResult {
    uint64_t id = 0;
    double iou = 0;
    double fidelity = 0;
    double mass_final = 0;
    double drift = 0;
    ImageDetections dets;  // for corpus-level mAP
};

struct MethodReport {
    std::string method;
    std::string split;
    double iou_mean = 0;
    double map50 = 0;
    double fidelity_mean = 0;
    double attention_mass_mean = 0;
    double drift_mean = 0;
    int n = 0;
};

inline json report_to_json(const MethodReport& r) {
    return json{{"method", r.method},
                {"split", r.split},
                {"iou_mean", r.iou_mean},
                {"map50", r.map50},
                {"fidelity_mean", r.fidelity_mean},
                {"attention_mass_mean", r.attention_mass_mean},
                {"drift_mean", r.drift_mean},
                {"n", r.n}};
}

// One record end to end. The per-record RNG stream is derived from
// (seed, method index, record id), so results are order- and
// parallelism-independent.
template <typename S>
RecordResult<S> eval_record(Method method, const SceneSpec& spec, const Denoiser<S>& dn,
                            const NoiseSchedule& sched, const PipelineConfig& pcfg,
                            uint64_t seed, const std::string& background_override = "",
                            const std::string& object_override = "") {
    LayoutSpec layout = scene_layout(spec);
    PipelineAssets assets;
    assets.object = object_override.empty() ? shape_object_asset(spec.placements[0].class_idx)
                                            : builtin_object(object_override);
    assets.background = background_override.empty() ? spec.background : background_override;
    assets.available = true;

    size_t method_idx = 0;
    for (size_t i = 0; i < method_names().size(); ++i)
        if (method_names()[i].first == method) method_idx = i;
    Rng rng(mix_seed(seed, uint64_t(method_idx), spec.id));
    GenerationResult<S> gen =
        run_pipeline(method, spec.caption, layout, assets, dn, sched, pcfg, rng);

    RecordResult<S> out;
    out.id = spec.id;
    out.iou = gen.iou_mean;
    out.fidelity = gen.fidelity;
    out.drift = gen.drift;
    double mass = 0;
    for (const auto& series : gen.attention_mass_series)
        if (!series.empty()) mass += series.back();
    out.mass_final = gen.attention_mass_series.empty()
                         ? 0.0
                         : mass / double(gen.attention_mass_series.size());
    out.dets.preds = gen.detections;
    for (const auto& pl : spec.placements)
        out.dets.gts.push_back({shape_classes()[pl.class_idx].name, pl.box});
    return out;
}

// Evaluate one method over a record list. Records are processed by a worker
// pool but stored by index and aggregated in record order, so --jobs does
// not change the report.
template <typename S>
MethodReport evaluate_method(Method method, const std::vector<SceneSpec>& records,
                             const std::string& split, const Denoiser<S>& dn,
                             const NoiseSchedule& sched, const PipelineConfig& pcfg,
                             uint64_t seed, int jobs = 1,
                             const std::string& background_override = "",
                             const std::string& object_override = "") {
    if (records.empty()) throw contract_error("evaluate_method: empty record list");
    if (jobs < 1) throw config_error("jobs must be >= 1");
    std::vector<RecordResult<S>> results(records.size());
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= records.size()) return;
            try {
                results[i] = eval_record(method, records[i], dn, sched, pcfg, seed,
                                         background_override, object_override);
            } catch (...) {
                std::lock_guard<std::mutex> lk(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);

    MethodReport rep;
    rep.method = method_name(method);
    rep.split = split;
    rep.n = int(records.size());
    std::vector<ImageDetections> images;
    for (const auto& r : results) {
        rep.iou_mean += r.iou;
        rep.fidelity_mean += r.fidelity;
        rep.attention_mass_mean += r.mass_final;
        rep.drift_mean += r.drift;
        images.push_back(r.dets);
    }
    double n = double(records.size());
    rep.iou_mean /= n;
    rep.fidelity_mean /= n;
    rep.attention_mass_mean /= n;
    rep.drift_mean /= n;
    rep.map50 = map50(images);
    return rep;
}

template <typename S>
std::vector<MethodReport> evaluate(const std::vector<Method>& methods,
                                   const std::vector<SceneSpec>& records,
                                   const std::string& split, const Denoiser<S>& dn,
                                   const NoiseSchedule& sched, const PipelineConfig& pcfg,
                                   uint64_t seed, int jobs = 1) {
    std::vector<MethodReport> reps;
    for (Method m : methods)
        reps.push_back(evaluate_method(m, records, split, dn, sched, pcfg, seed, jobs));
    return reps;
}

inline std::string reports_to_csv(const std::vector<MethodReport>& reps) {
    std::ostringstream os;
    os << "method,split,iou_mean,map50,fidelity_mean,attention_mass_mean,drift_mean,n\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    for (const auto& r : reps)
        os << r.method << "," << r.split << "," << r.iou_mean << "," << r.map50 << ","
           << r.fidelity_mean << "," << r.attention_mass_mean << "," << r.drift_mean << "," << r.n
           << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// ablation grids: each grid varies one knob of the SALT-AG pipeline
// ---------------------------------------------------------------------------

struct AblationCell {
    std::string knob;
    std::string value;
    MethodReport report;
};

template <typename S>
std::vector<AblationCell> run_ablation(const std::string& grid,
                                       const std::vector<SceneSpec>& records,
                                       const std::string& split, const Denoiser<S>& dn,
                                       const NoiseSchedule& sched, const PipelineConfig& base,
                                       uint64_t seed, int jobs = 1) {
    std::vector<AblationCell> cells;
    auto cell = [&](const std::string& knob, const std::string& value, Method m,
                    const PipelineConfig& pcfg, const std::string& bg = "",
                    const std::string& obj = "") {
        cells.push_back({knob, value,
                         evaluate_method(m, records, split, dn, sched, pcfg, seed, jobs, bg, obj)});
    };
    if (grid == "regularization") {
        for (double lam : {0.05, 0.0}) {
            PipelineConfig p = base;
            p.guidance.lambda = lam;
            cell("lambda", lam == 0.0 ? "0" : "0.05", Method::SALT_AG, p);
        }
    } else if (grid == "inversion-steps") {
        for (int s : {20, 50, 100}) {
            PipelineConfig p = base;
            p.inv_steps = s;
            cell("inv_steps", std::to_string(s), Method::SALT, p);
        }
    } else if (grid == "guidance-steps") {
        for (int it : {1, 2, 3, 5, 10}) {
            PipelineConfig p = base;
            p.guidance.inner_iters = it;
            cell("inner_iters", std::to_string(it), Method::SALT_AG, p);
        }
    } else if (grid == "init-kind") {
        cell("init", "salt", Method::SALT_AG, base);
        cell("init", "sdedit", Method::SDEditAG, base);
        cell("init", "random", Method::AttentionOnly, base);
    } else if (grid == "background") {
        // composed-reference background override for SALT
        for (const char* bg : {"plain-green", "plain-gray", "plain-white", "farm"})
            cell("background", bg, Method::SALT, base, bg);
    } else if (grid == "object") {
        cell("object", "shape", Method::SALT, base);
        for (const char* obj : {"cat", "dog", "bread"})
            cell("object", obj, Method::SALT, base, "", obj);
    } else {
        throw config_error("unknown ablation grid: " + grid);
    }
    return cells;
}

inline json ablation_to_json(const std::string& grid, const std::vector<AblationCell>& cells) {
    json out = {{"grid", grid}, {"cells", json::array()}};
    for (const auto& c : cells)
        out["cells"].push_back(
            {{"knob", c.knob}, {"value", c.value}, {"report", report_to_json(c.report)}});
    return out;
}

}  // namespace salt
