#include "metanerv/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "metanerv/compress.hpp"
#include "metanerv/errors.hpp"
#include "metanerv/serialize.hpp"

namespace fs = std::filesystem;

namespace metanerv {

namespace {

void check_keys(const Json& j, const std::set<std::string>& allowed, const char* context) {
    if (!j.is_object()) throw DomainError(std::string(context) + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) {
            throw DomainError(std::string("unknown key \"") + key + "\" in " + context);
        }
    }
}

template <typename T>
T get_or(const Json& j, const char* key, T def) {
    if (!j.contains(key)) return def;
    return j.at(key).get<T>();
}

std::string require_string(const Json& j, const char* key, const char* context) {
    if (!j.contains(key)) {
        throw DomainError(std::string(context) + " config needs \"" + key + "\"");
    }
    return j.at(key).get<std::string>();
}

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    if (fs::path(path).has_parent_path()) {
        std::error_code ec;
        fs::create_directories(fs::path(path).parent_path(), ec);
        if (ec) throw IoError("cannot create directory for: " + path);
    }
    write_file_bytes(path, text);
}

// Shared report plumbing: echo the effective config, stamp the time in its
// own field, write the file when a path was configured.
Json finish_report(const char* command, const Json& cfg, Json report) {
    report["command"] = command;
    report["config"] = cfg;
    report["timestamp"] = iso_timestamp();
    if (cfg.contains("report")) {
        write_text(cfg.at("report").get<std::string>(), report.dump(2) + "\n");
    }
    return report;
}

struct InitialModel {
    ModelConfig config;
    std::vector<double> theta;
    std::vector<double> beta; // empty when absent or declined
};

// Starting point for adapt/denoise: a checkpoint, or --random-init + model.
InitialModel initial_model(const Json& cfg, const char* context) {
    const bool random_init = get_or(cfg, "random_init", false);
    InitialModel m;
    if (random_init) {
        if (cfg.contains("checkpoint")) {
            throw DomainError(std::string(context) + ": give a checkpoint or random_init, not both");
        }
        m.config = model_from_json(cfg.contains("model") ? cfg.at("model") : Json::object());
        Rng rng(get_or<uint64_t>(cfg, "seed", 0));
        m.theta = flatten_params(init_params(m.config, rng));
        return m;
    }
    if (!cfg.contains("checkpoint")) {
        throw DomainError(std::string(context) + " config needs \"checkpoint\" or random_init");
    }
    Checkpoint ckpt = load_checkpoint(cfg.at("checkpoint").get<std::string>());
    m.config = ckpt.model;
    m.theta = std::move(ckpt.theta);
    if (get_or(cfg, "use_beta", true) && !ckpt.beta.empty()) m.beta = std::move(ckpt.beta);
    return m;
}

AdaptOptions adapt_options(const Json& cfg) {
    AdaptOptions opt;
    opt.fixed_lr = get_or(cfg, "fixed_lr", 1e-3);
    opt.spatial = get_or(cfg, "spatial", true);
    opt.loss = loss_from_json(cfg.contains("loss") ? cfg.at("loss") : Json::object());
    return opt;
}

std::string adapt_csv(const std::vector<AdaptRow>& trace) {
    std::string csv = "step,psnr_db,ms_ssim\n";
    for (const AdaptRow& row : trace) {
        csv += std::to_string(row.step) + "," + fmt_double(row.psnr_db) + "," +
               fmt_double(row.ms_ssim) + "\n";
    }
    return csv;
}

} // namespace

ModelConfig model_from_json(const Json& j) {
    check_keys(j,
               {"scales", "seed_h", "seed_w", "channels", "pe_b", "pe_l", "embed_dim",
                "norm_dim", "t_norm"},
               "model");
    ModelConfig cfg;
    cfg.scale_factors = get_or(j, "scales", cfg.scale_factors);
    cfg.seed_h = get_or(j, "seed_h", cfg.seed_h);
    cfg.seed_w = get_or(j, "seed_w", cfg.seed_w);
    cfg.channels = get_or(j, "channels", cfg.channels);
    cfg.pe_b = get_or(j, "pe_b", cfg.pe_b);
    cfg.pe_l = get_or(j, "pe_l", cfg.pe_l);
    cfg.embed_dim = get_or(j, "embed_dim", cfg.embed_dim);
    cfg.norm_dim = get_or(j, "norm_dim", cfg.norm_dim);
    if (j.contains("t_norm")) {
        const std::string name = j.at("t_norm").get<std::string>();
        if (name == "index_over_n") {
            cfg.t_norm = TNorm::index_over_n;
        } else if (name == "index_over_n_minus_1") {
            cfg.t_norm = TNorm::index_over_n_minus_1;
        } else {
            throw DomainError("unknown t_norm \"" + name + "\"");
        }
    }
    cfg.validate();
    return cfg;
}

Json json_from_model(const ModelConfig& cfg) {
    Json j;
    j["scales"] = cfg.scale_factors;
    j["seed_h"] = cfg.seed_h;
    j["seed_w"] = cfg.seed_w;
    j["channels"] = cfg.channels;
    j["pe_b"] = cfg.pe_b;
    j["pe_l"] = cfg.pe_l;
    j["embed_dim"] = cfg.embed_dim;
    j["norm_dim"] = cfg.norm_dim;
    j["t_norm"] =
        cfg.t_norm == TNorm::index_over_n ? "index_over_n" : "index_over_n_minus_1";
    return j;
}

LossConfig loss_from_json(const Json& j) {
    check_keys(j, {"alpha", "head_weights", "ssim_window", "ssim_sigma", "c1", "c2"}, "loss");
    LossConfig cfg;
    cfg.alpha = get_or(j, "alpha", cfg.alpha);
    cfg.head_weights = get_or(j, "head_weights", cfg.head_weights);
    cfg.ssim_window = get_or(j, "ssim_window", cfg.ssim_window);
    cfg.ssim_sigma = get_or(j, "ssim_sigma", cfg.ssim_sigma);
    cfg.c1 = get_or(j, "c1", cfg.c1);
    cfg.c2 = get_or(j, "c2", cfg.c2);
    cfg.validate();
    return cfg;
}

MetaConfig meta_from_json(const Json& j, const Json& loss_block) {
    check_keys(j,
               {"inner_steps", "outer_steps", "outer_lr", "beta_init", "progressive",
                "progressive_ramp", "spatial"},
               "meta");
    MetaConfig cfg;
    cfg.inner_steps = get_or(j, "inner_steps", cfg.inner_steps);
    cfg.outer_steps = get_or(j, "outer_steps", cfg.outer_steps);
    cfg.outer_lr = get_or(j, "outer_lr", cfg.outer_lr);
    cfg.beta_init = get_or(j, "beta_init", cfg.beta_init);
    cfg.progressive = get_or(j, "progressive", cfg.progressive);
    cfg.progressive_ramp = get_or(j, "progressive_ramp", cfg.progressive_ramp);
    cfg.spatial = get_or(j, "spatial", cfg.spatial);
    cfg.loss = loss_from_json(loss_block);
    cfg.validate();
    return cfg;
}

std::vector<Video> load_dataset(const std::string& dir, const std::string& split) {
    if (!fs::is_directory(dir)) throw NotFound("no such dataset directory: " + dir);
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    std::vector<Video> videos;
    if (fs::exists(manifest_path)) {
        Json manifest = Json::parse(read_file_bytes(manifest_path.string()));
        if (!manifest.contains(split)) {
            throw DomainError("manifest has no \"" + split + "\" split");
        }
        for (const Json& entry : manifest.at(split)) {
            Video v = load_video((fs::path(dir) / entry.at("path").get<std::string>()).string());
            v.id = entry.at("id").get<std::string>();
            videos.push_back(std::move(v));
        }
    } else {
        std::vector<std::string> names;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().extension() == ".mnvr") names.push_back(entry.path().string());
        }
        std::sort(names.begin(), names.end());
        for (const std::string& name : names) {
            Video v = load_video(name);
            v.id = fs::path(name).stem().string();
            videos.push_back(std::move(v));
        }
    }
    if (videos.empty()) throw EmptyVideo("dataset split \"" + split + "\" is empty");
    return videos;
}

Json cmd_gen_dataset(const Json& cfg) {
    check_keys(cfg,
               {"out_dir", "train", "test", "families", "height", "width", "n_frames",
                "format", "velocity", "size", "contrast", "seed", "report"},
               "gen-dataset");
    const std::string out_dir = require_string(cfg, "out_dir", "gen-dataset");
    const int n_train = get_or(cfg, "train", 24);
    const int n_test = get_or(cfg, "test", 8);
    if (n_train < 0 || n_test < 0) throw DomainError("split sizes must be >= 0");
    std::vector<std::string> families = get_or<std::vector<std::string>>(
        cfg, "families", {"moving_box", "bouncing_ball", "gradient_pan", "sector_scan"});
    if (families.empty()) throw DomainError("families must be nonempty");
    const std::string format = get_or<std::string>(cfg, "format", "mnvr");
    if (format != "mnvr" && format != "png") throw DomainError("format must be mnvr or png");
    const uint64_t seed = get_or<uint64_t>(cfg, "seed", 0);

    SyntheticSpec base;
    base.height = get_or(cfg, "height", base.height);
    base.width = get_or(cfg, "width", base.width);
    base.n_frames = get_or(cfg, "n_frames", base.n_frames);
    base.velocity = get_or(cfg, "velocity", base.velocity);
    base.size = get_or(cfg, "size", base.size);
    base.contrast = get_or(cfg, "contrast", base.contrast);

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "train", ec);
    if (!ec) fs::create_directories(fs::path(out_dir) / "test", ec);
    if (ec) throw IoError("cannot create dataset directories under: " + out_dir);

    Json manifest;
    manifest["format"] = format;
    manifest["height"] = base.height;
    manifest["width"] = base.width;
    manifest["n_frames"] = base.n_frames;
    manifest["seed"] = seed;
    int global_index = 0;
    for (const auto& [split, count] :
         std::vector<std::pair<std::string, int>>{{"train", n_train}, {"test", n_test}}) {
        manifest[split] = Json::array();
        for (int i = 0; i < count; ++i, ++global_index) {
            SyntheticSpec spec = base;
            spec.family = family_from_name(families[global_index % families.size()]);
            spec.seed = mix_seed(seed, static_cast<uint64_t>(global_index));
            char name[32];
            std::snprintf(name, sizeof(name), "%s_%03d", split.c_str(), i);
            const std::string rel = split + "/" + name + (format == "mnvr" ? ".mnvr" : "");
            Video v = generate_synthetic(spec);
            v.id = name;
            save_video(v, (fs::path(out_dir) / rel).string());
            Json entry;
            entry["id"] = name;
            entry["family"] = family_name(spec.family);
            entry["seed"] = spec.seed;
            entry["path"] = rel;
            manifest[split].push_back(entry);
        }
    }
    write_text((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");

    Json report;
    report["manifest"] = (fs::path(out_dir) / "manifest.json").string();
    report["train"] = n_train;
    report["test"] = n_test;
    return finish_report("gen-dataset", cfg, std::move(report));
}

Json cmd_meta_train(const Json& cfg) {
    check_keys(cfg,
               {"dataset", "split", "model", "meta", "loss", "seed", "resume",
                "checkpoint_out", "log_csv", "report"},
               "meta-train");
    const std::string dataset = require_string(cfg, "dataset", "meta-train");
    const std::string checkpoint_out = require_string(cfg, "checkpoint_out", "meta-train");

    // Validate every config block before touching the filesystem.
    MetaConfig mcfg = meta_from_json(cfg.contains("meta") ? cfg.at("meta") : Json::object(),
                                     cfg.contains("loss") ? cfg.at("loss") : Json::object());
    mcfg.seed = get_or<uint64_t>(cfg, "seed", 0);
    ModelConfig mc = model_from_json(cfg.contains("model") ? cfg.at("model") : Json::object());

    std::vector<Video> videos = load_dataset(dataset, get_or<std::string>(cfg, "split", "train"));

    MetaState state;
    if (cfg.contains("resume")) {
        state = state_from_checkpoint(load_checkpoint(cfg.at("resume").get<std::string>()));
    } else {
        Rng rng(mcfg.seed);
        state = make_meta_state(init_params(mc, rng), mcfg);
    }

    const std::vector<TrainLogRow> log = meta_train(state, videos, mcfg);
    save_checkpoint(checkpoint_from_state(state), checkpoint_out);

    if (cfg.contains("log_csv")) {
        std::string csv = "outer_iter,task_id,frames_used";
        for (int i = 1; i <= mcfg.inner_steps; ++i) csv += ",loss_" + std::to_string(i);
        csv += "\n";
        for (const TrainLogRow& row : log) {
            csv += std::to_string(row.outer_iter) + "," + row.task_id + "," +
                   std::to_string(row.frames_used);
            for (double l : row.losses) csv += "," + fmt_double(l);
            csv += "\n";
        }
        write_text(cfg.at("log_csv").get<std::string>(), csv);
    }

    Json report;
    report["checkpoint"] = checkpoint_out;
    report["outer_iter"] = state.outer_iter;
    report["steps_run"] = log.size();
    report["final_losses"] = log.empty() ? std::vector<double>{} : log.back().losses;
    return finish_report("meta-train", cfg, std::move(report));
}

Json cmd_adapt(const Json& cfg) {
    check_keys(cfg,
               {"video", "steps", "checkpoint", "random_init", "model", "seed", "use_beta",
                "fixed_lr", "spatial", "loss", "checkpoint_out", "metrics_csv", "dump_frames",
                "report"},
               "adapt");
    Video video = load_video(require_string(cfg, "video", "adapt"));
    const int steps = get_or(cfg, "steps", 3);
    InitialModel init = initial_model(cfg, "adapt");
    AdaptResult result = adapt(init.config, init.theta, init.beta.empty() ? nullptr : &init.beta,
                               video, steps, adapt_options(cfg));

    if (cfg.contains("checkpoint_out")) {
        Checkpoint out;
        out.model = init.config;
        out.theta = result.params;
        save_checkpoint(out, cfg.at("checkpoint_out").get<std::string>());
    }
    if (cfg.contains("metrics_csv")) {
        write_text(cfg.at("metrics_csv").get<std::string>(), adapt_csv(result.trace));
    }
    if (cfg.contains("dump_frames")) {
        Video recon;
        recon.frames = render_video(init.config, result.params, video.n());
        for (Tensor& f : recon.frames) {
            for (double& x : f.data()) x = quantize_unit_f32(x);
        }
        recon.id = "recon";
        save_video(recon, cfg.at("dump_frames").get<std::string>());
    }

    Json report;
    report["steps"] = steps;
    report["rows"] = result.trace.size();
    report["psnr_db"] = result.trace.back().psnr_db;
    report["ms_ssim"] = result.trace.back().ms_ssim;
    report["used_beta"] = !init.beta.empty();
    return finish_report("adapt", cfg, std::move(report));
}

Json cmd_compress(const Json& cfg) {
    check_keys(cfg,
               {"checkpoint", "video", "ratio", "bits", "finetune_steps", "finetune_lr", "loss",
                "container_out", "report"},
               "compress");
    Checkpoint ckpt = load_checkpoint(require_string(cfg, "checkpoint", "compress"));
    Video video = load_video(require_string(cfg, "video", "compress"));
    const std::string container_out = require_string(cfg, "container_out", "compress");
    CompressOptions opt;
    opt.prune_ratio = get_or(cfg, "ratio", 0.0);
    opt.q_bits = get_or(cfg, "bits", 8);
    const int finetune_steps = get_or(cfg, "finetune_steps", 0);

    const double psnr_before =
        psnr_frames(render_video(ckpt.model, ckpt.theta, video.n()), video.frames);

    std::vector<double> theta = ckpt.theta;
    if (opt.prune_ratio > 0.0 && finetune_steps > 0) {
        FinetuneOptions fopt;
        fopt.lr = get_or(cfg, "finetune_lr", 1e-3);
        fopt.loss = loss_from_json(cfg.contains("loss") ? cfg.at("loss") : Json::object());
        KeepMask mask = prune_global_magnitude(ckpt.model, theta, opt.prune_ratio);
        theta = finetune_pruned(ckpt.model, theta, mask, video, finetune_steps, fopt);
    }

    CompressedModel cm = compress_model(ckpt.model, theta, opt);
    save_container(cm, container_out);
    const std::vector<double> restored = decompress_model(cm);
    const double psnr_after =
        psnr_frames(render_video(ckpt.model, restored, video.n()), video.frames);

    Json report;
    report["container"] = container_out;
    report["container_bits"] = fs::file_size(container_out) * 8;
    report["bpp"] = bpp(cm, video);
    report["psnr_before"] = psnr_before;
    report["psnr_after"] = psnr_after;
    report["ratio"] = opt.prune_ratio;
    report["bits"] = opt.q_bits;
    return finish_report("compress", cfg, std::move(report));
}

Json cmd_decompress(const Json& cfg) {
    check_keys(cfg, {"container", "checkpoint_out", "report"}, "decompress");
    CompressedModel cm = load_container(require_string(cfg, "container", "decompress"));
    const std::string checkpoint_out = require_string(cfg, "checkpoint_out", "decompress");
    Checkpoint out;
    out.model = cm.config;
    out.theta = decompress_model(cm);
    save_checkpoint(out, checkpoint_out);

    size_t kept = 0;
    for (uint8_t b : cm.mask) kept += b;
    Json report;
    report["checkpoint"] = checkpoint_out;
    report["params"] = out.theta.size();
    report["kept"] = kept;
    report["q_bits"] = cm.q_bits;
    return finish_report("decompress", cfg, std::move(report));
}

Json cmd_denoise_eval(const Json& cfg) {
    check_keys(cfg,
               {"video", "sigma", "noise_seed", "steps", "checkpoint", "random_init", "model",
                "seed", "use_beta", "fixed_lr", "spatial", "loss", "recon_out", "report"},
               "denoise-eval");
    Video clean = load_video(require_string(cfg, "video", "denoise-eval"));
    const double sigma = get_or(cfg, "sigma", 0.1);
    if (sigma < 0.0) throw DomainError("sigma must be >= 0");
    const int steps = get_or(cfg, "steps", 200);
    Video noisy = add_noise(clean, sigma, get_or<uint64_t>(cfg, "noise_seed", 0));

    InitialModel init = initial_model(cfg, "denoise-eval");
    AdaptResult result = adapt(init.config, init.theta, init.beta.empty() ? nullptr : &init.beta,
                               noisy, steps, adapt_options(cfg));
    std::vector<Tensor> recon = render_video(init.config, result.params, clean.n());

    if (cfg.contains("recon_out")) {
        Video rv;
        rv.frames = recon;
        for (Tensor& f : rv.frames) {
            for (double& x : f.data()) x = quantize_unit_f32(x);
        }
        rv.id = "denoised";
        save_video(rv, cfg.at("recon_out").get<std::string>());
    }

    Json report;
    report["sigma"] = sigma;
    report["steps"] = steps;
    report["psnr_noisy"] = psnr_frames(noisy.frames, clean.frames);
    report["psnr_recon"] = psnr_frames(recon, clean.frames);
    return finish_report("denoise-eval", cfg, std::move(report));
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"image-wise implicit video representation toolkit"};
    app.require_subcommand(1);

    struct VerbState {
        std::string config;
        uint64_t seed = 0;
        int steps = 0;
        double ratio = 0.0;
        int bits = 8;
        bool no_spatial = false;
        bool no_progressive = false;
        bool random_init = false;
    };
    VerbState vs;

    struct Verb {
        const char* name;
        Json (*run)(const Json&);
        CLI::App* sub = nullptr;
    };
    Verb verbs[] = {
        {"gen-dataset", cmd_gen_dataset},   {"meta-train", cmd_meta_train},
        {"adapt", cmd_adapt},               {"compress", cmd_compress},
        {"decompress", cmd_decompress},     {"denoise-eval", cmd_denoise_eval},
    };
    for (Verb& v : verbs) {
        v.sub = app.add_subcommand(v.name, "");
        v.sub->add_option("--config", vs.config, "JSON config path")->required();
        v.sub->add_option("--seed", vs.seed, "override config seed");
        const std::string name = v.name;
        if (name == "meta-train") {
            v.sub->add_flag("--no-spatial", vs.no_spatial, "train on the final head only");
            v.sub->add_flag("--no-progressive", vs.no_progressive, "use all frames from step 1");
            v.sub->add_option("--steps", vs.steps, "override outer step count");
        }
        if (name == "adapt" || name == "denoise-eval") {
            v.sub->add_flag("--no-spatial", vs.no_spatial, "fit the final head only");
            v.sub->add_flag("--random-init", vs.random_init, "start from a seeded random model");
            v.sub->add_option("--steps", vs.steps, "override fit step count");
        }
        if (name == "compress") {
            v.sub->add_option("--ratio", vs.ratio, "override prune ratio");
            v.sub->add_option("--bits", vs.bits, "override quantization bit width");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    auto was_set = [](CLI::App* sub, const std::string& name) {
        const CLI::Option* opt = sub->get_option_no_throw(name);
        return opt != nullptr && opt->count() > 0;
    };

    try {
        for (const Verb& v : verbs) {
            if (!v.sub->parsed()) continue;
            Json cfg = Json::parse(read_file_bytes(vs.config));
            if (!cfg.is_object()) throw DomainError("config must be a JSON object");
            if (was_set(v.sub, "--seed")) cfg["seed"] = vs.seed;
            if (was_set(v.sub, "--no-spatial")) {
                if (std::string(v.name) == "meta-train") {
                    cfg["meta"]["spatial"] = false;
                } else {
                    cfg["spatial"] = false;
                }
            }
            if (was_set(v.sub, "--no-progressive")) cfg["meta"]["progressive"] = false;
            if (was_set(v.sub, "--random-init")) cfg["random_init"] = true;
            if (was_set(v.sub, "--steps")) {
                if (std::string(v.name) == "meta-train") {
                    cfg["meta"]["outer_steps"] = vs.steps;
                } else {
                    cfg["steps"] = vs.steps;
                }
            }
            if (was_set(v.sub, "--ratio")) cfg["ratio"] = vs.ratio;
            if (was_set(v.sub, "--bits")) cfg["bits"] = vs.bits;
            const Json report = v.run(cfg);
            std::cout << report.dump(2) << "\n";
            return 0;
        }
        return 1; // unreachable with require_subcommand(1)
    } catch (const Json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace metanerv
