#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "metanerv/loss.hpp"
#include "metanerv/model.hpp"
#include "metanerv/video.hpp"

namespace metanerv {

inline constexpr double kBetaMin = 1e-6;
inline constexpr double kBetaMax = 1.0;

enum class GradMode : uint8_t { first_order = 0 };

struct MetaConfig {
    int inner_steps = 3;  // m
    int outer_steps = 1;  // M
    double outer_lr = 1e-4;
    GradMode grad_mode = GradMode::first_order;
    double beta_init = 1e-2;
    bool progressive = true;
    double progressive_ramp = 1.0; // frames unlocked per outer step
    bool spatial = true;           // false trains on the final head only
    LossConfig loss;
    uint64_t seed = 0;

    void validate() const;
};

struct MetaState {
    ModelConfig model;
    std::vector<double> theta0;
    std::vector<double> beta;
    AdamState opt_theta;
    AdamState opt_beta;
    int64_t outer_iter = 0;
};

/// Evaluate loss and its gradient at a flat parameter vector.
using Objective =
    std::function<std::pair<double, std::vector<double>>(const std::vector<double>&)>;

struct InnerResult {
    std::vector<double> phi;        // adapted parameters after m steps
    std::vector<double> losses;     // L_i evaluated before step i, i = 1..m
    std::vector<double> theta_grad; // mean over steps of the post-step gradient
    std::vector<double> beta_grad;  // first-order chain term, see inner_loop_flat
};

/// Plain elementwise gradient descent, phi <- phi - beta (.) grad, for m
/// steps. The outer-update quantities use one extra gradient evaluation: the
/// gradient at each post-step iterate phi_i serves both as the next step's
/// descent direction and as the first-order meta-gradient sample; the beta
/// term pairs it with the gradient the step actually used,
/// d L(phi_i)/d beta_p ~= -grad_post[p] * grad_used[p].
InnerResult inner_loop_flat(const std::vector<double>& theta0, const std::vector<double>& beta,
                            int m, const Objective& obj);

/// One meta-update over a fixed-order task list: runs inner_loop_flat per
/// task, averages theta/beta gradients across tasks, applies adam to both,
/// clamps beta to [kBetaMin, kBetaMax]. Fills losses_out (if given) with each
/// task's inner losses concatenated in task order.
void outer_update_flat(std::vector<double>& theta0, std::vector<double>& beta,
                       AdamState& opt_theta, AdamState& opt_beta,
                       const std::vector<Objective>& tasks, int m, double lr,
                       std::vector<std::vector<double>>* losses_out = nullptr);

/// Mean multires (or final-head fusion) loss over the first frames_used
/// frames. Frame times are normalized by the full video length so a frame
/// keeps its embedding as the progressive schedule unlocks more of the clip.
Objective video_objective(const ModelConfig& mc, const Video& video, int frames_used,
                          bool spatial, const LossConfig& lcfg);

/// Number of frames task j (1-based outer iteration) may see.
int frames_used(int64_t j, int video_frames, const MetaConfig& cfg);

/// Prefix of the video per the progressive schedule; whole video when the
/// schedule is disabled.
Video progressive_frames(int64_t j, const Video& video, const MetaConfig& cfg);

MetaState make_meta_state(const ModelParams& init, const MetaConfig& cfg);

InnerResult inner_loop(const MetaState& state, const Video& video, const MetaConfig& cfg);

void outer_step(MetaState& state, const std::vector<Video>& tasks, const MetaConfig& cfg);

struct TrainLogRow {
    int64_t outer_iter; // 1-based
    std::string task_id;
    int frames_used;
    std::vector<double> losses; // inner losses L_1..m
};

/// Runs cfg.outer_steps more outer iterations, one sampled task per step
/// (seeded epoch shuffle). Resuming with the same state continues the
/// sampling sequence exactly where it left off.
std::vector<TrainLogRow> meta_train(MetaState& state, const std::vector<Video>& dataset,
                                    const MetaConfig& cfg);

struct AdaptOptions {
    double fixed_lr = 1e-3; // used when beta is absent
    bool spatial = true;
    LossConfig loss;
};

struct AdaptRow {
    int step;
    double psnr_db;
    double ms_ssim;
};

struct AdaptResult {
    std::vector<double> params;
    std::vector<AdaptRow> trace; // steps + 1 rows, row 0 is pure inference
};

/// Test-time fitting on the full video. beta == nullptr selects the fixed
/// scalar learning rate (the random-init baseline's rule).
AdaptResult adapt(const ModelConfig& mc, const std::vector<double>& theta,
                  const std::vector<double>* beta, const Video& video, int steps,
                  const AdaptOptions& opt);

/// Reconstruct every frame from the final head.
std::vector<Tensor> render_video(const ModelConfig& mc, const std::vector<double>& theta,
                                 int n_frames);

} // namespace metanerv
