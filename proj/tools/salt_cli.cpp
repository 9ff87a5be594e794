// salt: desk-scale latent-diffusion lab with layout-aware initialization.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <salt/eval.hpp>

namespace fs = std::filesystem;
using namespace salt;

namespace {

// ---------------------------------------------------------------------------
// run configuration: JSON with strict key checking
// ---------------------------------------------------------------------------

struct RunConfig {
    DenoiserConfig model;
    int T = 200;
    double beta_start = 1e-4, beta_end = 0.02;
    TrainConfig train;
    CorpusConfig corpus;
    PipelineConfig pipeline;
    std::string asset_object = "shape";  // "shape" = per-record class asset
    std::string asset_background;        // empty = per-record background
};

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw config_error("config section \"" + section + "\" must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) ok |= it.key() == k;
        if (!ok)
            throw config_error("unknown key \"" + it.key() + "\" in config section \"" + section +
                               "\"");
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    if (path.empty()) return rc;
    if (!fs::exists(path)) throw config_error("config file not found: " + path);
    json j = load_json_file(path);
    check_keys(j, "<top>", {"model", "schedule", "train", "corpus", "sampler", "guidance",
                            "pipeline", "assets"});
    if (j.contains("model")) {
        const json& m = j["model"];
        check_keys(m, "model", {"H", "W", "c1", "c2", "c3", "heads", "head_dim", "d_embed",
                                "pe_dim", "temb_dim"});
        get_if(m, "H", rc.model.H);
        get_if(m, "W", rc.model.W);
        get_if(m, "c1", rc.model.c1);
        get_if(m, "c2", rc.model.c2);
        get_if(m, "c3", rc.model.c3);
        get_if(m, "heads", rc.model.heads);
        get_if(m, "head_dim", rc.model.head_dim);
        get_if(m, "d_embed", rc.model.d_embed);
        get_if(m, "pe_dim", rc.model.pe_dim);
        get_if(m, "temb_dim", rc.model.temb_dim);
        rc.model.validate();
    }
    if (j.contains("schedule")) {
        const json& s = j["schedule"];
        check_keys(s, "schedule", {"T", "beta_start", "beta_end"});
        get_if(s, "T", rc.T);
        get_if(s, "beta_start", rc.beta_start);
        get_if(s, "beta_end", rc.beta_end);
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        check_keys(t, "train", {"steps", "batch", "lr", "p_drop", "log_every"});
        get_if(t, "steps", rc.train.steps);
        get_if(t, "batch", rc.train.batch);
        get_if(t, "lr", rc.train.lr);
        get_if(t, "p_drop", rc.train.p_drop);
        get_if(t, "log_every", rc.train.log_every);
    }
    if (j.contains("corpus")) {
        const json& c = j["corpus"];
        check_keys(c, "corpus", {"train_count", "eval_single_count", "eval_multiple_count",
                                 "min_side", "max_side"});
        get_if(c, "train_count", rc.corpus.train_count);
        get_if(c, "eval_single_count", rc.corpus.eval_single_count);
        get_if(c, "eval_multiple_count", rc.corpus.eval_multiple_count);
        get_if(c, "min_side", rc.corpus.min_side);
        get_if(c, "max_side", rc.corpus.max_side);
    }
    if (j.contains("sampler")) {
        const json& s = j["sampler"];
        check_keys(s, "sampler", {"steps", "cfg_weight"});
        get_if(s, "steps", rc.pipeline.sampler.steps);
        get_if(s, "cfg_weight", rc.pipeline.sampler.cfg_weight);
    }
    if (j.contains("guidance")) {
        const json& g = j["guidance"];
        check_keys(g, "guidance",
                   {"lambda", "eta", "inner_iters", "guided_fraction", "max_backtrack"});
        get_if(g, "lambda", rc.pipeline.guidance.lambda);
        get_if(g, "eta", rc.pipeline.guidance.eta);
        get_if(g, "inner_iters", rc.pipeline.guidance.inner_iters);
        get_if(g, "guided_fraction", rc.pipeline.guidance.guided_fraction);
        get_if(g, "max_backtrack", rc.pipeline.guidance.max_backtrack);
        rc.pipeline.guidance.validate();
    }
    if (j.contains("pipeline")) {
        const json& p = j["pipeline"];
        check_keys(p, "pipeline", {"inv_steps", "sde_strength", "attention_only_iters"});
        get_if(p, "inv_steps", rc.pipeline.inv_steps);
        get_if(p, "sde_strength", rc.pipeline.sde_strength);
        get_if(p, "attention_only_iters", rc.pipeline.attention_only_iters);
    }
    if (j.contains("assets")) {
        const json& a = j["assets"];
        check_keys(a, "assets", {"object", "background"});
        get_if(a, "object", rc.asset_object);
        get_if(a, "background", rc.asset_background);
    }
    return rc;
}

std::vector<Method> parse_methods(const std::string& list) {
    std::vector<Method> out;
    std::stringstream ss(list);
    std::string name;
    while (std::getline(ss, name, ',')) {
        if (name.empty()) continue;
        out.push_back(parse_method(name));
    }
    if (out.empty()) throw config_error("empty method list");
    return out;
}

LayoutSpec parse_boxes(const std::string& spec, const TokenSequence& toks) {
    // "x0,y0,x1,y1[;x0,y0,x1,y1...]"; box i binds to the i-th shape word
    std::vector<int> shape_positions;
    for (int i = 0; i < toks.size(); ++i)
        for (const auto& c : shape_classes())
            if (vocabulary()[toks.ids[i]] == c.name) shape_positions.push_back(i);

    LayoutSpec layout;
    std::stringstream ss(spec);
    std::string one;
    while (std::getline(ss, one, ';')) {
        if (one.empty()) continue;
        std::stringstream bs(one);
        double v[4];
        char comma;
        for (int k = 0; k < 4; ++k) {
            if (!(bs >> v[k])) throw config_error("malformed box string: \"" + one + "\"");
            if (k < 3 && !(bs >> comma)) throw config_error("malformed box string: \"" + one + "\"");
        }
        size_t idx = layout.entries.size();
        if (idx >= shape_positions.size())
            throw config_error("more boxes than shape words in the caption");
        layout.entries.push_back({BBox{v[0], v[1], v[2], v[3]}, {shape_positions[idx]}});
        layout.entries.back().box.validate();
    }
    layout.validate(toks.size());
    return layout;
}

PipelineAssets resolve_assets(const RunConfig& rc, const std::string& caption) {
    PipelineAssets assets;
    assets.background = rc.asset_background.empty() ? "plain-green" : rc.asset_background;
    if (rc.asset_object == "shape") {
        // first shape word in the caption picks the reference object
        TokenSequence toks = tokenize(caption);
        for (int i = 0; i < toks.size() && !assets.available; ++i)
            for (size_t c = 0; c < shape_classes().size(); ++c)
                if (vocabulary()[toks.ids[i]] == shape_classes()[c].name) {
                    assets.object = shape_object_asset(int(c));
                    assets.available = true;
                }
        if (!assets.available)
            throw config_error("no shape word in caption to derive a reference object from");
    } else {
        assets.object = builtin_object(rc.asset_object);
        assets.available = true;
    }
    return assets;
}

json detection_to_json(const Detection& d) {
    return {{"class", d.class_name},
            {"box", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}},
            {"score", d.score}};
}

template <typename S>
void dump_trajectory(const fs::path& dir, const Trajectory<S>& traj) {
    fs::create_directories(dir);
    TensorContainer c;
    json index = json::array();
    for (size_t i = 0; i < traj.points.size(); ++i) {
        std::string name = "latent." + std::to_string(i);
        c.tensors.push_back(NamedTensor::from_f32(name, traj.points[i].z.template cast<float>()));
        index.push_back({{"name", name}, {"t", traj.points[i].t}});
    }
    c.meta = {{"points", index}};
    save_container((dir / "trajectory.salt").string(), c);
    save_json_file((dir / "index.json").string(), json{{"points", index}});
}

// grayscale map -> red-to-white heatmap PPM
template <typename S>
void save_heatmap(const fs::path& path, const Tensor<S>& map) {
    int H = map.shape[0], W = map.shape[1];
    double mx = 1e-30;
    for (auto v : map.v) mx = std::max(mx, double(v));
    Grid<float> img({3, H, W});
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double v = double(map.v[size_t(r) * W + c]) / mx;
            img.at(0, r, c) = float(v);
            img.at(1, r, c) = float(v * v);
            img.at(2, r, c) = float(v * v * v);
        }
    save_ppm(path.string(), img);
}

std::vector<TrainExample<float>> render_train_set(const Corpus& corpus, int H, int W) {
    std::vector<TrainExample<float>> out;
    out.reserve(corpus.train.size());
    for (const auto& s : corpus.train) {
        auto [img, gts] = render_scene<float>(s, H, W);
        out.push_back({std::move(img), tokenize(s.caption), s.id});
    }
    return out;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& rc, uint64_t seed, const std::string& out_dir) {
    fs::create_directories(out_dir);
    NoiseSchedule sched = build_schedule(rc.T, rc.beta_start, rc.beta_end);
    Corpus corpus = make_corpus(rc.corpus, seed);
    std::vector<TrainExample<float>> train_set = render_train_set(corpus, rc.model.H, rc.model.W);

    Denoiser<float> dn(rc.model);
    Rng init_rng(mix_seed(seed, 0x1417ull));
    dn.init_weights(init_rng);

    Trainer<float> trainer(dn, sched, rc.train);
    std::ofstream log(fs::path(out_dir) / "train_log.jsonl");
    auto curve = trainer.train(train_set, seed, &log);

    save_checkpoint((fs::path(out_dir) / "checkpoint.salt").string(), dn, sched,
                    json{{"seed", seed}});
    std::cout << "final loss: " << curve.back().loss << "\n";
    std::cout << "checkpoint: " << (fs::path(out_dir) / "checkpoint.salt").string() << "\n";
    return 0;
}

int cmd_generate(const RunConfig& rc, const std::string& ckpt, const std::string& methods_arg,
                 const std::string& caption, const std::string& boxes_arg, uint64_t seed,
                 const std::string& out_dir, bool dump_traj) {
    fs::create_directories(out_dir);
    if (!fs::exists(ckpt)) throw config_error("checkpoint not found: " + ckpt);
    auto [dn, sched] = load_checkpoint(ckpt);

    TokenSequence toks = tokenize(caption);
    LayoutSpec layout = parse_boxes(boxes_arg, toks);
    PipelineAssets assets = resolve_assets(rc, caption);

    json manifest = {{"caption", caption}, {"seed", seed}, {"records", json::array()}};
    for (Method m : parse_methods(methods_arg)) {
        std::string name = method_name(m);
        size_t midx = 0;
        for (size_t i = 0; i < method_names().size(); ++i)
            if (method_names()[i].first == m) midx = i;
        Rng rng(mix_seed(seed, uint64_t(midx)));
        GenerationResult<float> res =
            run_pipeline(m, caption, layout, assets, dn, sched, rc.pipeline, rng);

        fs::path img_path = fs::path(out_dir) / (name + ".ppm");
        save_ppm(img_path.string(), res.image);
        if (dump_traj) dump_trajectory(fs::path(out_dir) / (name + "_trajectory"), res.trajectory);

        json rec = {{"method", name},
                    {"image", img_path.filename().string()},
                    {"iou_mean", res.iou_mean},
                    {"fidelity", res.fidelity},
                    {"drift", res.drift},
                    {"detections", json::array()}};
        for (const auto& d : res.detections) rec["detections"].push_back(detection_to_json(d));
        manifest["records"].push_back(rec);
        std::cout << name << ": iou=" << res.iou_mean << " fidelity=" << res.fidelity << "\n";
    }
    save_json_file((fs::path(out_dir) / "generate.json").string(), manifest);
    return 0;
}

int cmd_evaluate(const RunConfig& rc, const std::string& ckpt, const std::string& methods_arg,
                 const std::string& split, uint64_t seed, int jobs, int limit,
                 const std::string& out_dir) {
    fs::create_directories(out_dir);
    if (!fs::exists(ckpt)) throw config_error("checkpoint not found: " + ckpt);
    if (split != "single" && split != "multiple")
        throw config_error("split must be \"single\" or \"multiple\"");
    auto [dn, sched] = load_checkpoint(ckpt);

    Corpus corpus = make_corpus(rc.corpus, seed);
    std::vector<SceneSpec> records = split == "single" ? corpus.eval_single : corpus.eval_multiple;
    if (limit > 0 && size_t(limit) < records.size()) records.resize(limit);

    std::vector<MethodReport> reports = evaluate(parse_methods(methods_arg), records, split, dn,
                                                 sched, rc.pipeline, seed, jobs);
    json out = json::array();
    for (const auto& r : reports) out.push_back(report_to_json(r));
    save_json_file((fs::path(out_dir) / "metrics.json").string(), out);
    std::ofstream csv(fs::path(out_dir) / "summary.csv");
    csv << reports_to_csv(reports);
    std::cout << reports_to_csv(reports);
    return 0;
}

int cmd_ablate(const RunConfig& rc, const std::string& ckpt, const std::string& grid,
               uint64_t seed, int jobs, int limit, const std::string& out_dir) {
    fs::create_directories(out_dir);
    if (!fs::exists(ckpt)) throw config_error("checkpoint not found: " + ckpt);
    auto [dn, sched] = load_checkpoint(ckpt);

    Corpus corpus = make_corpus(rc.corpus, seed);
    std::vector<SceneSpec> records = corpus.eval_single;
    if (limit > 0 && size_t(limit) < records.size()) records.resize(limit);

    auto cells = run_ablation(grid, records, "single", dn, sched, rc.pipeline, seed, jobs);
    json out = ablation_to_json(grid, cells);
    save_json_file((fs::path(out_dir) / ("ablation_" + grid + ".json")).string(), out);
    for (const auto& c : cells)
        std::cout << grid << " " << c.knob << "=" << c.value
                  << " iou=" << c.report.iou_mean << " map50=" << c.report.map50 << "\n";
    return 0;
}

int cmd_inspect(const RunConfig& rc, const std::string& ckpt, const std::string& caption,
                uint64_t seed, const std::string& out_dir) {
    fs::create_directories(out_dir);
    if (!fs::exists(ckpt)) throw config_error("checkpoint not found: " + ckpt);
    auto [dn, sched] = load_checkpoint(ckpt);

    TokenSequence toks = tokenize(caption);
    Rng rng(mix_seed(seed, 0x1A5Dull));
    Grid<float> z = randn<float>({dn.cfg.Cimg, dn.cfg.H, dn.cfg.W}, rng);
    AttentionCapture<float> cap;
    dn.predict_noise(z, sched.T, dn.embed(toks), &cap);

    json info = {{"caption", caption},
                 {"T", sched.T},
                 {"config",
                  {{"H", dn.cfg.H},
                   {"W", dn.cfg.W},
                   {"c1", dn.cfg.c1},
                   {"c2", dn.cfg.c2},
                   {"c3", dn.cfg.c3},
                   {"heads", dn.cfg.heads}}},
                 {"maps", json::array()}};
    for (int i = 0; i < toks.size(); ++i) {
        Tensor<float> m = attention_map(cap, {i});
        std::string fname = "attn_tok" + std::to_string(i) + "_" + vocabulary()[toks.ids[i]] +
                            ".ppm";
        save_heatmap(fs::path(out_dir) / fname, m);
        double mass = 0;
        for (auto v : m.v) mass += double(v);
        info["maps"].push_back({{"token", vocabulary()[toks.ids[i]]}, {"file", fname},
                                {"total_mass", mass}});
    }
    save_json_file((fs::path(out_dir) / "inspect.json").string(), info);
    std::cout << info.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale latent-diffusion lab with layout-aware initialization"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", ckpt, methods = "sd", split = "single";
    std::string caption = "a red circle on green plain", boxes = "0.25,0.25,0.75,0.75";
    std::string grid = "regularization";
    uint64_t seed = 42;
    int jobs = 1, limit = 0;
    bool dump_traj = false;

    app.add_option("--config", config_path, "run configuration JSON");
    app.add_option("--seed", seed, "global seed");
    app.add_option("--out", out_dir, "output directory");

    auto* train = app.add_subcommand("train", "train a denoiser on the toy corpus");

    auto* gen = app.add_subcommand("generate", "generate images for one caption + layout");
    gen->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    gen->add_option("--method", methods, "comma-separated method list");
    gen->add_option("--caption", caption, "text prompt");
    gen->add_option("--boxes", boxes, "semicolon-separated x0,y0,x1,y1 boxes");
    gen->add_flag("--dump-trajectory", dump_traj, "write per-step latents");

    auto* eval = app.add_subcommand("evaluate", "metric sweep over an eval split");
    eval->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    eval->add_option("--method", methods, "comma-separated method list");
    eval->add_option("--split", split, "single | multiple");
    eval->add_option("--jobs", jobs, "worker threads");
    eval->add_option("--limit", limit, "cap the record count (0 = all)");

    auto* abl = app.add_subcommand("ablate", "run one ablation grid");
    abl->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    abl->add_option("--grid", grid,
                    "regularization | inversion-steps | guidance-steps | init-kind | background | "
                    "object");
    abl->add_option("--jobs", jobs, "worker threads");
    abl->add_option("--limit", limit, "cap the record count (0 = all)");

    auto* ins = app.add_subcommand("inspect", "dump attention maps as PPM heatmaps");
    ins->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    ins->add_option("--caption", caption, "text prompt");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig rc = load_run_config(config_path);
        if (train->parsed()) return cmd_train(rc, seed, out_dir);
        if (gen->parsed())
            return cmd_generate(rc, ckpt, methods, caption, boxes, seed, out_dir, dump_traj);
        if (eval->parsed())
            return cmd_evaluate(rc, ckpt, methods, split, seed, jobs, limit, out_dir);
        if (abl->parsed()) return cmd_ablate(rc, ckpt, grid, seed, jobs, limit, out_dir);
        if (ins->parsed()) return cmd_inspect(rc, ckpt, caption, seed, out_dir);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
