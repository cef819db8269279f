#include "metanerv/meta.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

#include "metanerv/errors.hpp"

namespace metanerv {

namespace {

// Hardware concurrency capped by METANERV_THREADS.
int worker_count() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("METANERV_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) {
            hw = std::min(hw, static_cast<unsigned>(v));
        }
    }
    return static_cast<int>(hw);
}

} // namespace

void MetaConfig::validate() const {
    if (inner_steps < 0) throw DomainError("inner_steps must be >= 0");
    if (outer_steps < 1) throw DomainError("outer_steps must be >= 1");
    if (!(outer_lr > 0.0)) throw DomainError("outer_lr must be positive");
    if (!(beta_init >= kBetaMin && beta_init <= kBetaMax)) {
        throw DomainError("beta_init must lie in the beta clamp range");
    }
    if (!(progressive_ramp > 0.0)) throw DomainError("progressive_ramp must be positive");
    loss.validate();
}

InnerResult inner_loop_flat(const std::vector<double>& theta0, const std::vector<double>& beta,
                            int m, const Objective& obj) {
    if (beta.size() != theta0.size()) {
        throw LengthMismatch("beta length differs from parameter count");
    }
    const size_t n = theta0.size();
    InnerResult res;
    res.phi = theta0;
    res.theta_grad.assign(n, 0.0);
    res.beta_grad.assign(n, 0.0);
    if (m == 0) return res;

    auto eval = [&](const std::vector<double>& p) {
        auto lg = obj(p);
        if (!std::isfinite(lg.first)) throw NonFiniteLoss("inner objective diverged");
        if (lg.second.size() != n) throw LengthMismatch("objective gradient length mismatch");
        return lg;
    };

    // g_used is the gradient the upcoming step consumes; after stepping, the
    // gradient at the new iterate is both the meta-gradient sample for this
    // step and the next step's g_used.
    auto [loss, g_used] = eval(res.phi);
    for (int i = 0; i < m; ++i) {
        res.losses.push_back(loss);
        for (size_t p = 0; p < n; ++p) res.phi[p] -= beta[p] * g_used[p];
        auto [post_loss, g_post] = eval(res.phi);
        for (size_t p = 0; p < n; ++p) {
            res.theta_grad[p] += g_post[p];
            res.beta_grad[p] -= g_post[p] * g_used[p];
        }
        loss = post_loss;
        g_used = std::move(g_post);
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    for (size_t p = 0; p < n; ++p) {
        res.theta_grad[p] *= inv_m;
        res.beta_grad[p] *= inv_m;
    }
    return res;
}

void outer_update_flat(std::vector<double>& theta0, std::vector<double>& beta,
                       AdamState& opt_theta, AdamState& opt_beta,
                       const std::vector<Objective>& tasks, int m, double lr,
                       std::vector<std::vector<double>>* losses_out) {
    if (tasks.empty()) throw DomainError("outer update needs at least one task");
    const size_t n = theta0.size();

    // Tasks are independent given (theta0, beta); the reduction below runs in
    // fixed task-index order so worker scheduling cannot change the result.
    std::vector<InnerResult> results(tasks.size());
    const int workers =
        std::min<int>(worker_count(), static_cast<int>(tasks.size()));
    if (workers > 1) {
        std::atomic<size_t> cursor{0};
        std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (size_t i = cursor++; i < tasks.size(); i = cursor++) {
                        results[i] = inner_loop_flat(theta0, beta, m, tasks[i]);
                    }
                } catch (...) {
                    errors[static_cast<size_t>(w)] = std::current_exception();
                }
            });
        }
        for (std::thread& t : pool) t.join();
        for (const std::exception_ptr& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    } else {
        for (size_t i = 0; i < tasks.size(); ++i) {
            results[i] = inner_loop_flat(theta0, beta, m, tasks[i]);
        }
    }

    std::vector<double> tg(n, 0.0), bg(n, 0.0);
    if (losses_out) losses_out->clear();
    for (InnerResult& r : results) {
        for (size_t p = 0; p < n; ++p) {
            tg[p] += r.theta_grad[p];
            bg[p] += r.beta_grad[p];
        }
        if (losses_out) losses_out->push_back(std::move(r.losses));
    }
    const double inv = 1.0 / static_cast<double>(tasks.size());
    for (size_t p = 0; p < n; ++p) {
        tg[p] *= inv;
        bg[p] *= inv;
    }
    adam_step(theta0, tg, opt_theta, lr);
    adam_step(beta, bg, opt_beta, lr);
    for (double& b : beta) b = std::clamp(b, kBetaMin, kBetaMax);
}

Objective video_objective(const ModelConfig& mc, const Video& video, int frames_used,
                          bool spatial, const LossConfig& lcfg) {
    video.validate();
    if (video.h() != mc.out_h() || video.w() != mc.out_w()) {
        throw ShapeMismatch("video resolution differs from the model output");
    }
    if (frames_used < 1 || frames_used > video.n()) {
        throw DomainError("frames_used out of range");
    }
    const int total = video.n();
    return [&video, mc, frames_used, total, spatial, lcfg](const std::vector<double>& flat) {
        ModelParams p = unflatten_params(mc, flat);
        std::vector<double> grad(flat.size(), 0.0);
        const double inv = 1.0 / static_cast<double>(frames_used);
        double total_loss = 0.0;
        for (int f = 0; f < frames_used; ++f) {
            const double t = frame_time(f, total, mc.t_norm);
            Tape tape;
            Tensor loss;
            if (spatial) {
                MultiResOutput out = forward_multires(tape, t, p);
                loss = multires_loss(tape, video.frames[f], out, lcfg);
            } else {
                Tensor pred = forward_final(tape, t, p);
                loss = fusion_loss(tape, pred, video.frames[f], lcfg);
            }
            tape.backward(loss);
            total_loss += loss.item();
            size_t off = 0;
            for (Tensor t_param : p.tensors()) {
                const auto& g = t_param.grad();
                for (double gv : g) grad[off++] += gv * inv;
            }
        }
        return std::make_pair(total_loss * inv, std::move(grad));
    };
}

int frames_used(int64_t j, int video_frames, const MetaConfig& cfg) {
    if (video_frames < 1) throw EmptyVideo("video has no frames");
    if (!cfg.progressive) return video_frames;
    if (j < 1) throw DomainError("outer iteration must be >= 1");
    const double unlocked = std::floor(static_cast<double>(j) * cfg.progressive_ramp);
    const int64_t t = std::max<int64_t>(1, static_cast<int64_t>(unlocked));
    return static_cast<int>(std::min<int64_t>(t, video_frames));
}

Video progressive_frames(int64_t j, const Video& video, const MetaConfig& cfg) {
    video.validate();
    const int t = frames_used(j, video.n(), cfg);
    Video out;
    out.fps = video.fps;
    out.id = video.id;
    out.frames.assign(video.frames.begin(), video.frames.begin() + t);
    return out;
}

MetaState make_meta_state(const ModelParams& init, const MetaConfig& cfg) {
    cfg.validate();
    MetaState state;
    state.model = init.cfg;
    state.theta0 = flatten_params(init);
    state.beta.assign(state.theta0.size(), cfg.beta_init);
    return state;
}

InnerResult inner_loop(const MetaState& state, const Video& video, const MetaConfig& cfg) {
    cfg.validate();
    const int used = frames_used(state.outer_iter + 1, video.n(), cfg);
    Objective obj = video_objective(state.model, video, used, cfg.spatial, cfg.loss);
    return inner_loop_flat(state.theta0, state.beta, cfg.inner_steps, obj);
}

void outer_step(MetaState& state, const std::vector<Video>& tasks, const MetaConfig& cfg) {
    cfg.validate();
    if (tasks.empty()) throw DomainError("outer_step needs at least one task");
    const int64_t j = state.outer_iter + 1;
    std::vector<Objective> objectives;
    objectives.reserve(tasks.size());
    for (const Video& v : tasks) {
        objectives.push_back(
            video_objective(state.model, v, frames_used(j, v.n(), cfg), cfg.spatial, cfg.loss));
    }
    outer_update_flat(state.theta0, state.beta, state.opt_theta, state.opt_beta, objectives,
                      cfg.inner_steps, cfg.outer_lr);
    state.outer_iter = j;
}

namespace {

size_t sampled_index(uint64_t seed, int64_t j, size_t dataset_size) {
    const int64_t pos0 = j - 1;
    const uint64_t epoch = static_cast<uint64_t>(pos0) / dataset_size;
    const size_t pos = static_cast<size_t>(static_cast<uint64_t>(pos0) % dataset_size);
    std::vector<size_t> perm(dataset_size);
    std::iota(perm.begin(), perm.end(), size_t{0});
    Rng rng(mix_seed(seed, epoch));
    rng.shuffle(perm);
    return perm[pos];
}

} // namespace

std::vector<TrainLogRow> meta_train(MetaState& state, const std::vector<Video>& dataset,
                                    const MetaConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw EmptyVideo("meta_train needs a nonempty dataset");
    for (const Video& v : dataset) v.validate();
    std::vector<TrainLogRow> log;
    log.reserve(static_cast<size_t>(cfg.outer_steps));
    for (int step = 0; step < cfg.outer_steps; ++step) {
        const int64_t j = state.outer_iter + 1;
        const size_t idx = sampled_index(cfg.seed, j, dataset.size());
        const Video& task = dataset[idx];
        const int used = frames_used(j, task.n(), cfg);
        std::vector<Objective> objectives = {
            video_objective(state.model, task, used, cfg.spatial, cfg.loss)};
        std::vector<std::vector<double>> losses;
        outer_update_flat(state.theta0, state.beta, state.opt_theta, state.opt_beta, objectives,
                          cfg.inner_steps, cfg.outer_lr, &losses);
        state.outer_iter = j;
        TrainLogRow row;
        row.outer_iter = j;
        row.task_id = task.id.empty() ? std::to_string(idx) : task.id;
        row.frames_used = used;
        row.losses = losses.empty() ? std::vector<double>{} : losses[0];
        log.push_back(std::move(row));
    }
    return log;
}

std::vector<Tensor> render_video(const ModelConfig& mc, const std::vector<double>& theta,
                                 int n_frames) {
    if (n_frames < 1) throw EmptyVideo("cannot render zero frames");
    ModelParams p = unflatten_params(mc, theta);
    std::vector<Tensor> frames;
    frames.reserve(static_cast<size_t>(n_frames));
    for (int f = 0; f < n_frames; ++f) {
        Tape tape;
        frames.push_back(forward_final(tape, frame_time(f, n_frames, mc.t_norm), p));
    }
    return frames;
}

AdaptResult adapt(const ModelConfig& mc, const std::vector<double>& theta,
                  const std::vector<double>* beta, const Video& video, int steps,
                  const AdaptOptions& opt) {
    if (steps < 0) throw DomainError("adaptation steps must be >= 0");
    video.validate();
    if (beta && beta->size() != theta.size()) {
        throw LengthMismatch("beta length differs from parameter count");
    }
    Objective obj = video_objective(mc, video, video.n(), opt.spatial, opt.loss);

    AdaptResult res;
    res.params = theta;
    auto record = [&](int step) {
        std::vector<Tensor> recon = render_video(mc, res.params, video.n());
        double ms = 0.0;
        for (int f = 0; f < video.n(); ++f) {
            ms += ms_ssim(recon[f], video.frames[f], opt.loss);
        }
        AdaptRow row;
        row.step = step;
        row.psnr_db = psnr_frames(recon, video.frames);
        row.ms_ssim = ms / video.n();
        res.trace.push_back(row);
    };
    record(0);
    for (int s = 1; s <= steps; ++s) {
        auto [loss, grad] = obj(res.params);
        if (!std::isfinite(loss)) throw NonFiniteLoss("adaptation objective diverged");
        if (beta) {
            for (size_t p = 0; p < res.params.size(); ++p) {
                res.params[p] -= (*beta)[p] * grad[p];
            }
        } else {
            for (size_t p = 0; p < res.params.size(); ++p) {
                res.params[p] -= opt.fixed_lr * grad[p];
            }
        }
        record(s);
    }
    return res;
}

} // namespace metanerv
