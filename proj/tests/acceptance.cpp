// Acceptance gate. Runs nine end-to-end checks, prints one PASS/FAIL line
// per check, and exits nonzero unless all nine pass. Every tolerance is
// pinned as a named constant below. Artifacts land in ./acceptance_artifacts
// so a failed run can be inspected after the fact.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "metanerv/commands.hpp"
#include "metanerv/compress.hpp"
#include "metanerv/errors.hpp"
#include "metanerv/loss.hpp"
#include "metanerv/meta.hpp"
#include "metanerv/model.hpp"
#include "metanerv/rng.hpp"
#include "metanerv/serialize.hpp"
#include "metanerv/tensor.hpp"
#include "metanerv/video.hpp"
#include "support/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace metanerv;
using metanerv::testing::gradcheck;

namespace {

// ---- pinned tolerances and budgets -----------------------------------------

constexpr double kGradRelTol = 1e-5;   // analytic vs central differences
constexpr int kGradMinTrials = 100;    // random trials across all ops
constexpr double kOracleTol = 1e-6;    // loss values vs direct-summation refs
constexpr double kScalarTol = 1e-12;   // meta update vs scalar brute force
constexpr int kScalarDraws = 1000;     // random quadratic task draws
constexpr double kMetaGapDb = 2.0;     // meta init over random init, steps 1 and 3
constexpr double kAblationSlackDb = 0.1; // STG may trail NoG by at most this
constexpr int kAblationMinWins = 5;    // of 8 held-out videos
constexpr int kScheduleSteps = 1000;   // progressive schedule dry run length
constexpr int kEntropyStreams = 10000; // random round-trip streams
constexpr double kQuantRelSlack = 1e-9;  // fp guard on the scale/2 bound
constexpr double kQuantDropDb = 0.5;   // 8-bit ratio-0 compression
constexpr double kPruneDropDb = 1.0;   // ratio 0.2 plus 30 fine-tune steps

// Desk protocol: 24 train / 8 held-out synthetic videos, 8 frames at 48x40
// (the default model config renders exactly that), M=500 outer steps, m=3.
constexpr int kDeskTrain = 24;
constexpr int kDeskTest = 8;
constexpr int kDeskFrames = 8;
constexpr int kDeskOuterSteps = 500;
constexpr int kDeskInnerSteps = 3;
constexpr double kDeskOuterLr = 0.01;
constexpr uint64_t kDeskDataSeed = 77;
constexpr uint64_t kDeskMetaSeed = 3;
constexpr uint64_t kDeskRandomSeed = 9;
constexpr double kDeskBaselineLr = 1e-3;

// Toy protocol for compression and denoising: one 16x16, 2-frame video and a
// small model fitted by plain gradient descent.
constexpr int kToyFitSteps = 400;
constexpr double kToyFitLr = 1.0;
constexpr uint64_t kToyDataSeed = 5;
constexpr uint64_t kToyInitSeed = 21;
constexpr double kDenoiseSigma = 0.1;
constexpr uint64_t kDenoiseNoiseSeed = 404;
constexpr int kDenoiseSteps = 200;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

// ---- shared artifact paths --------------------------------------------------

struct Paths {
    fs::path work;
    fs::path data;          // desk dataset directory
    fs::path toy;           // toy dataset directory
    fs::path stg_ckpt, stg_csv;
    fs::path nog_ckpt, nog_csv;
    fs::path eval;          // adapt metrics CSVs
    fs::path toy_ckpt;
    fs::path q8_container, pruned_container;
    fs::path rerun;         // criterion 9 writes here
};

Paths make_paths() {
    Paths p;
    p.work = fs::current_path() / "acceptance_artifacts";
    fs::remove_all(p.work);
    fs::create_directories(p.work);
    p.data = p.work / "data";
    p.toy = p.work / "toy";
    p.stg_ckpt = p.work / "stg.ckpt";
    p.stg_csv = p.work / "stg_log.csv";
    p.nog_ckpt = p.work / "nog.ckpt";
    p.nog_csv = p.work / "nog_log.csv";
    p.eval = p.work / "eval";
    fs::create_directories(p.eval);
    p.toy_ckpt = p.work / "toy_fit.ckpt";
    p.q8_container = p.work / "toy_q8.mnrc";
    p.pruned_container = p.work / "toy_pruned.mnrc";
    p.rerun = p.work / "rerun";
    fs::create_directories(p.rerun);
    return p;
}

// ---- criterion 1: gradients vs finite differences ---------------------------

Outcome criterion_gradients() {
    Rng rng(101);
    int trials = 0;
    double worst = 0.0;
    auto run = [&](auto&& make_loss, const std::vector<Tensor>& inputs) {
        worst = std::max(worst, gradcheck(make_loss, inputs));
        ++trials;
    };
    auto u = [&](std::vector<int> shape, double lo, double hi) {
        return Tensor::uniform(std::move(shape), rng, lo, hi, true);
    };

    for (int t = 0; t < 5; ++t) {
        {
            Tensor a = u({2, 3}, -1, 1), b = u({2, 3}, -1, 1);
            run([&](Tape& tp) { return tp.mean(tp.add(a, b)); }, {a, b});
            run([&](Tape& tp) { return tp.mean(tp.sub(a, b)); }, {a, b});
            run([&](Tape& tp) { return tp.mean(tp.mul(a, b)); }, {a, b});
        }
        {
            // Denominator bounded away from zero so the quotient is smooth.
            Tensor a = u({3, 2}, -1, 1), b = u({3, 2}, 0.5, 1.5);
            run([&](Tape& tp) { return tp.mean(tp.div(a, b)); }, {a, b});
        }
        {
            Tensor a = u({4}, -2, 2);
            run([&](Tape& tp) { return tp.mean(tp.scale(a, 1.7)); }, {a});
            run([&](Tape& tp) { return tp.mean(tp.offset(a, -0.3)); }, {a});
            run([&](Tape& tp) { return tp.mean(tp.gelu(a)); }, {a});
            run([&](Tape& tp) { return tp.mean(tp.sigmoid(a)); }, {a});
            run([&](Tape& tp) { return tp.sum(tp.mul(a, a)); }, {a});
        }
        {
            // Away from the |x| kink, where the central difference is valid.
            std::vector<double> vals(6);
            for (double& v : vals) v = rng.uniform(0.2, 1.0) * (rng.uniform() < 0.5 ? -1 : 1);
            Tensor a = Tensor::from_data({6}, vals, true);
            run([&](Tape& tp) { return tp.mean(tp.abs(a)); }, {a});
        }
        {
            Tensor a = u({2, 6}, -1, 1), b = u({3, 4}, -1, 1);
            run([&](Tape& tp) { return tp.mean(tp.mul(tp.reshape(a, {3, 4}), b)); }, {a, b});
        }
        {
            Tensor a = u({3, 4}, -1, 1), b = u({4, 2}, -1, 1);
            run([&](Tape& tp) { return tp.mean(tp.matmul(a, b)); }, {a, b});
        }
        {
            Tensor x = u({2, 5, 4}, -1, 1), w = u({3, 2, 3, 3}, -0.5, 0.5);
            Tensor b = u({3}, -0.2, 0.2);
            run([&](Tape& tp) { return tp.mean(tp.conv2d(x, w, b, 1)); }, {x, w, b});
        }
        {
            Tensor x = u({8, 2, 3}, -1, 1);
            run([&](Tape& tp) { return tp.mean(tp.mul(tp.pixel_shuffle(x, 2),
                                                      tp.pixel_shuffle(x, 2))); },
                {x});
        }
        {
            Tensor x = u({3, 4, 6}, -1, 1);
            run([&](Tape& tp) { return tp.mean(tp.mul(tp.avg_pool2d(x, 2),
                                                      tp.avg_pool2d(x, 2))); },
                {x});
        }
        {
            Tensor x = u({3, 2, 2}, -1, 1), g = u({3}, 0.5, 1.5), b = u({3}, -0.5, 0.5);
            run([&](Tape& tp) { return tp.mean(tp.mul(tp.affine_channels(x, g, b),
                                                      tp.affine_channels(x, g, b))); },
                {x, g, b});
        }
        {
            const auto k = gaussian_kernel(3, 1.5);
            Tensor x = u({2, 5, 4}, -1, 1);
            run([&](Tape& tp) { return tp.mean(tp.mul(tp.filter_rows(x, k),
                                                      tp.filter_rows(x, k))); },
                {x});
            run([&](Tape& tp) { return tp.mean(tp.mul(tp.filter_cols(x, k),
                                                      tp.filter_cols(x, k))); },
                {x});
        }
        {
            // Composite: conv -> gelu -> sigmoid against a target.
            Tensor x = u({2, 4, 4}, -1, 1), w = u({2, 2, 3, 3}, -0.5, 0.5);
            Tensor b = u({2}, -0.2, 0.2), y = u({2, 4, 4}, 0.1, 0.9);
            run([&](Tape& tp) {
                    Tensor out = tp.sigmoid(tp.gelu(tp.conv2d(x, w, b, 1)));
                    return tp.mean(tp.abs(tp.sub(out, y)));
                },
                {x, w, b});
        }
    }

    // End to end through the tiny model and the multi-resolution loss.
    ModelConfig tiny;
    tiny.scale_factors = {2};
    tiny.seed_h = 2;
    tiny.seed_w = 2;
    tiny.channels = {4, 4};
    tiny.pe_l = 2;
    tiny.embed_dim = 3;
    tiny.norm_dim = 4;
    LossConfig tiny_loss;
    tiny_loss.ssim_window = 3;
    for (int t = 0; t < 5; ++t) {
        ModelParams p = init_params(tiny, rng);
        Tensor gt = Tensor::uniform({3, 4, 4}, rng, 0.05, 0.95);
        const double time = rng.uniform();
        run([&](Tape& tape) {
                MultiResOutput out = forward_multires(tape, time, p);
                return multires_loss(tape, gt, out, tiny_loss);
            },
            p.tensors());
    }

    Outcome o;
    o.pass = trials >= kGradMinTrials && worst <= kGradRelTol;
    o.detail = fmt("%d trials, max rel err %.2e (tol %.0e)", trials, worst, kGradRelTol);
    return o;
}

// ---- criterion 2: loss oracles ----------------------------------------------

// Direct-summation references, deliberately structured unlike the library
// (nested loops per window instead of separable filters).

std::vector<double> ref_kernel(int window, double sigma) {
    std::vector<double> k(static_cast<size_t>(window));
    const double c = (window - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < window; ++i) {
        k[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        sum += k[static_cast<size_t>(i)];
    }
    for (double& v : k) v /= sum;
    return k;
}

struct RefSsimParts {
    double full = 0.0;     // mean of luminance * contrast
    double contrast = 0.0; // mean of the contrast map alone
};

RefSsimParts ref_ssim_parts(const Tensor& x, const Tensor& y, const LossConfig& cfg) {
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int win = cfg.ssim_window;
    const auto k = ref_kernel(win, cfg.ssim_sigma);
    RefSsimParts parts;
    int count = 0;
    for (int cc = 0; cc < c; ++cc) {
        for (int i0 = 0; i0 + win <= h; ++i0) {
            for (int j0 = 0; j0 + win <= w; ++j0) {
                double mx = 0, my = 0, ex2 = 0, ey2 = 0, exy = 0;
                for (int a = 0; a < win; ++a) {
                    for (int b = 0; b < win; ++b) {
                        const double wt = k[static_cast<size_t>(a)] * k[static_cast<size_t>(b)];
                        const size_t idx =
                            (static_cast<size_t>(cc) * h + (i0 + a)) * w + (j0 + b);
                        const double xv = x.data()[idx], yv = y.data()[idx];
                        mx += wt * xv;
                        my += wt * yv;
                        ex2 += wt * xv * xv;
                        ey2 += wt * yv * yv;
                        exy += wt * xv * yv;
                    }
                }
                const double sx = ex2 - mx * mx, sy = ey2 - my * my, cov = exy - mx * my;
                const double lum = (2 * mx * my + cfg.c1) / (mx * mx + my * my + cfg.c1);
                const double con = (2 * cov + cfg.c2) / (sx + sy + cfg.c2);
                parts.full += lum * con;
                parts.contrast += con;
                ++count;
            }
        }
    }
    parts.full /= count;
    parts.contrast /= count;
    return parts;
}

double ref_ssim(const Tensor& x, const Tensor& y, const LossConfig& cfg) {
    return ref_ssim_parts(x, y, cfg).full;
}

Tensor ref_halve(const Tensor& x) {
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int eh = h - h % 2, ew = w - w % 2;
    Tensor out = Tensor::zeros({c, eh / 2, ew / 2});
    for (int cc = 0; cc < c; ++cc) {
        for (int i = 0; i < eh / 2; ++i) {
            for (int j = 0; j < ew / 2; ++j) {
                double s = 0.0;
                for (int a = 0; a < 2; ++a) {
                    for (int b = 0; b < 2; ++b) {
                        s += x.data()[(static_cast<size_t>(cc) * h + 2 * i + a) * w + 2 * j + b];
                    }
                }
                out.data()[(static_cast<size_t>(cc) * (eh / 2) + i) * (ew / 2) + j] = s / 4.0;
            }
        }
    }
    return out;
}

double ref_ms_ssim(Tensor x, Tensor y, const LossConfig& cfg) {
    static const double canonical[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    int levels = 0;
    {
        int h = x.shape()[1], w = x.shape()[2];
        for (int j = 0; j < 5; ++j) {
            if (std::min(h, w) < cfg.ssim_window) break;
            ++levels;
            h = (h - h % 2) / 2;
            w = (w - w % 2) / 2;
        }
    }
    double wsum = 0.0;
    for (int j = 0; j < levels; ++j) wsum += canonical[j];
    double product = 1.0;
    for (int j = 0; j < levels; ++j) {
        RefSsimParts parts = ref_ssim_parts(x, y, cfg);
        const double weight = canonical[j] / wsum;
        const double val = (j + 1 < levels) ? parts.contrast : parts.full;
        product *= std::pow(std::max(val, 0.0), weight);
        if (j + 1 < levels) {
            x = ref_halve(x);
            y = ref_halve(y);
        }
    }
    return product;
}

Tensor ref_pool(const Tensor& gt, int th, int tw) {
    const int c = gt.shape()[0], h = gt.shape()[1], w = gt.shape()[2];
    const int f = h / th;
    if (f == 1) return gt;
    Tensor out = Tensor::zeros({c, th, tw});
    for (int cc = 0; cc < c; ++cc) {
        for (int i = 0; i < th; ++i) {
            for (int j = 0; j < tw; ++j) {
                double s = 0.0;
                for (int a = 0; a < f; ++a) {
                    for (int b = 0; b < f; ++b) {
                        s += gt.data()[(static_cast<size_t>(cc) * h + i * f + a) * w + j * f + b];
                    }
                }
                out.data()[(static_cast<size_t>(cc) * th + i) * tw + j] = s / (f * f);
            }
        }
    }
    return out;
}

double ref_fusion(const Tensor& pred, const Tensor& gt, const LossConfig& cfg) {
    double l1 = 0.0;
    for (size_t i = 0; i < pred.data().size(); ++i) {
        l1 += std::fabs(pred.data()[i] - gt.data()[i]);
    }
    l1 /= static_cast<double>(pred.data().size());
    return cfg.alpha * l1 + (1.0 - cfg.alpha) * (1.0 - ref_ssim(pred, gt, cfg));
}

Outcome criterion_loss_oracles() {
    Rng rng(7);
    double worst = 0.0;
    auto note = [&](double a, double b) { worst = std::max(worst, std::fabs(a - b)); };

    LossConfig small;
    small.ssim_window = 5;
    for (int t = 0; t < 4; ++t) {
        Tensor x = Tensor::uniform({3, 11, 9}, rng, 0.0, 1.0);
        Tensor y = Tensor::uniform({3, 11, 9}, rng, 0.0, 1.0);
        note(ssim_value(x, y, small), ref_ssim(x, y, small));
    }

    LossConfig dflt; // window 7
    for (int t = 0; t < 3; ++t) {
        Tensor x = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
        Tensor y = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
        note(ms_ssim(x, y, dflt), ref_ms_ssim(x, y, dflt));
    }
    {
        Tensor x = Tensor::uniform({1, 37, 29}, rng, 0.0, 1.0);
        Tensor y = Tensor::uniform({1, 37, 29}, rng, 0.0, 1.0);
        note(ms_ssim(x, y, dflt), ref_ms_ssim(x, y, dflt));
    }

    for (int t = 0; t < 3; ++t) {
        Tensor gt = Tensor::uniform({3, 8, 8}, rng, 0.0, 1.0);
        MultiResOutput heads;
        heads.frames.push_back(Tensor::uniform({3, 4, 4}, rng, 0.0, 1.0));
        heads.frames.push_back(Tensor::uniform({3, 8, 8}, rng, 0.0, 1.0));
        LossConfig lc;
        lc.ssim_window = 3;
        if (t == 2) lc.head_weights = {0.3, 0.7};
        Tape tape;
        const double lib = multires_loss(tape, gt, heads, lc).item();
        const double w0 = lc.head_weights.empty() ? 0.5 : lc.head_weights[0];
        const double w1 = lc.head_weights.empty() ? 0.5 : lc.head_weights[1];
        const double ref = w0 * ref_fusion(heads.frames[0], ref_pool(gt, 4, 4), lc) +
                           w1 * ref_fusion(heads.frames[1], gt, lc);
        note(lib, ref);
    }

    // Degenerate fusion cases must be exact, not merely close.
    bool exact = true;
    {
        Tensor x = Tensor::uniform({3, 9, 9}, rng, 0.0, 1.0);
        Tensor y = Tensor::uniform({3, 9, 9}, rng, 0.0, 1.0);
        LossConfig lc;
        lc.ssim_window = 5;
        Tape t1, t2, t3;
        lc.alpha = 1.0;
        exact = exact && fusion_loss(t1, x, y, lc).item() == l1_loss(t2, x, y).item();
        lc.alpha = 0.0;
        exact = exact && fusion_loss(t3, x, y, lc).item() == 1.0 - ssim_value(x, y, lc);
        lc.alpha = 0.7;
        Tape t4;
        exact = exact && fusion_loss(t4, x, x, lc).item() == 0.0;
    }

    Outcome o;
    o.pass = worst <= kOracleTol && exact;
    o.detail = fmt("max |lib - ref| %.2e (tol %.0e), degenerate cases %s", worst, kOracleTol,
                   exact ? "exact" : "NOT exact");
    return o;
}

// ---- criterion 3: meta update vs scalar brute force --------------------------

// Standalone scalar Adam, written from the update formula rather than shared
// with the library.
struct ScalarAdam {
    double m = 0.0, v = 0.0;
    int64_t step = 0;
    void apply(double& p, double g, double lr) {
        step += 1;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, static_cast<double>(step)));
        const double vhat = v / (1.0 - std::pow(0.999, static_cast<double>(step)));
        p -= lr * mhat / (std::sqrt(vhat) + 1e-8);
    }
};

Outcome criterion_scalar_equivalence() {
    Rng rng(2024);
    double worst = 0.0;
    for (int draw = 0; draw < kScalarDraws; ++draw) {
        const int n_tasks = 1 + static_cast<int>(rng.uniform_int(3));
        std::vector<double> centers, curvatures;
        std::vector<Objective> tasks;
        for (int t = 0; t < n_tasks; ++t) {
            const double a = rng.uniform(-2.0, 2.0);
            const double c = rng.uniform(0.2, 3.0);
            centers.push_back(a);
            curvatures.push_back(c);
            tasks.push_back([a, c](const std::vector<double>& p)
                                -> std::pair<double, std::vector<double>> {
                const double d = p[0] - a;
                return {0.5 * c * d * d, {c * d}};
            });
        }
        const int m = static_cast<int>(rng.uniform_int(4)); // 0..3 inner steps
        const int rounds = 1 + static_cast<int>(rng.uniform_int(3));
        const double lr = std::pow(10.0, rng.uniform(-3.0, -1.0));
        const double theta_init = rng.uniform(-1.0, 1.0);
        const double beta_init = rng.uniform(1e-3, 0.5);

        std::vector<double> theta{theta_init}, beta{beta_init};
        AdamState ot, ob;
        for (int r = 0; r < rounds; ++r) {
            outer_update_flat(theta, beta, ot, ob, tasks, m, lr);
        }

        double rt = theta_init, rb = beta_init;
        ScalarAdam sat, sab;
        for (int r = 0; r < rounds; ++r) {
            double tg = 0.0, bg = 0.0;
            for (int t = 0; t < n_tasks; ++t) {
                const double a = centers[static_cast<size_t>(t)];
                const double c = curvatures[static_cast<size_t>(t)];
                double phi = rt, task_tg = 0.0, task_bg = 0.0;
                if (m > 0) {
                    double g_used = c * (phi - a);
                    for (int i = 0; i < m; ++i) {
                        phi -= rb * g_used;
                        const double g_post = c * (phi - a);
                        task_tg += g_post;
                        task_bg -= g_post * g_used;
                        g_used = g_post;
                    }
                    task_tg /= m;
                    task_bg /= m;
                }
                tg += task_tg;
                bg += task_bg;
            }
            tg /= n_tasks;
            bg /= n_tasks;
            sat.apply(rt, tg, lr);
            sab.apply(rb, bg, lr);
            rb = std::clamp(rb, kBetaMin, kBetaMax);
        }
        worst = std::max(worst, std::fabs(theta[0] - rt));
        worst = std::max(worst, std::fabs(beta[0] - rb));
    }
    Outcome o;
    o.pass = worst <= kScalarTol;
    o.detail = fmt("%d draws, max |lib - brute force| %.2e (tol %.0e)", kScalarDraws, worst,
                   kScalarTol);
    return o;
}

// ---- criteria 4/5/9: desk-scale meta training --------------------------------

Json desk_train_cfg(const Paths& p, bool stg, const fs::path& ckpt, const fs::path& csv) {
    Json meta = {{"inner_steps", kDeskInnerSteps},
                 {"outer_steps", kDeskOuterSteps},
                 {"outer_lr", kDeskOuterLr}};
    if (!stg) {
        meta["spatial"] = false;
        meta["progressive"] = false;
    }
    return Json{{"dataset", p.data.string()},
                {"split", "train"},
                {"meta", meta},
                {"seed", kDeskMetaSeed},
                {"checkpoint_out", ckpt.string()},
                {"log_csv", csv.string()}};
}

Json adapt_meta_cfg(const fs::path& video, const fs::path& ckpt, const fs::path& csv) {
    return Json{{"video", video.string()},
                {"steps", 3},
                {"checkpoint", ckpt.string()},
                {"metrics_csv", csv.string()}};
}

Json adapt_random_cfg(const fs::path& video, const fs::path& csv) {
    return Json{{"video", video.string()},
                {"steps", 3},
                {"random_init", true},
                {"model", Json::object()},
                {"seed", kDeskRandomSeed},
                {"fixed_lr", kDeskBaselineLr},
                {"metrics_csv", csv.string()}};
}

// PSNR column of an adapt metrics CSV, indexed by step.
std::vector<double> psnr_trace(const fs::path& csv) {
    std::ifstream in(csv);
    if (!in) throw IoError("cannot read " + csv.string());
    std::string line;
    std::getline(in, line); // header
    std::vector<double> psnr;
    while (std::getline(in, line)) {
        const size_t c1 = line.find(',');
        const size_t c2 = line.find(',', c1 + 1);
        psnr.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
    }
    return psnr;
}

fs::path desk_test_video(const Paths& p, int i) {
    return p.data / "test" / fmt("test_%03d.mnvr", i);
}

struct DeskResults {
    std::vector<double> stg1, stg3, nog3, rand1, rand3;
};

DeskResults run_desk_protocol(const Paths& p) {
    cmd_gen_dataset(Json{{"out_dir", p.data.string()},
                         {"train", kDeskTrain},
                         {"test", kDeskTest},
                         {"height", 48},
                         {"width", 40},
                         {"n_frames", kDeskFrames},
                         {"seed", kDeskDataSeed}});
    cmd_meta_train(desk_train_cfg(p, true, p.stg_ckpt, p.stg_csv));
    cmd_meta_train(desk_train_cfg(p, false, p.nog_ckpt, p.nog_csv));

    DeskResults r;
    for (int i = 0; i < kDeskTest; ++i) {
        const fs::path video = desk_test_video(p, i);
        const fs::path mc = p.eval / fmt("meta_%d.csv", i);
        const fs::path nc = p.eval / fmt("nog_%d.csv", i);
        const fs::path rc = p.eval / fmt("rand_%d.csv", i);
        cmd_adapt(adapt_meta_cfg(video, p.stg_ckpt, mc));
        cmd_adapt(adapt_meta_cfg(video, p.nog_ckpt, nc));
        cmd_adapt(adapt_random_cfg(video, rc));
        const auto ms = psnr_trace(mc), ns = psnr_trace(nc), rs = psnr_trace(rc);
        r.stg1.push_back(ms[1]);
        r.stg3.push_back(ms[3]);
        r.nog3.push_back(ns[3]);
        r.rand1.push_back(rs[1]);
        r.rand3.push_back(rs[3]);
    }
    return r;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

Outcome criterion_meta_advantage(const DeskResults& r) {
    const double gap1 = mean(r.stg1) - mean(r.rand1);
    const double gap3 = mean(r.stg3) - mean(r.rand3);
    Outcome o;
    o.pass = gap1 >= kMetaGapDb && gap3 >= kMetaGapDb;
    o.detail = fmt("step-1 gap %.2f dB, step-3 gap %.2f dB (need >= %.1f); meta %.2f/%.2f, "
                   "random %.2f/%.2f",
                   gap1, gap3, kMetaGapDb, mean(r.stg1), mean(r.stg3), mean(r.rand1),
                   mean(r.rand3));
    return o;
}

Outcome criterion_ablation(const DeskResults& r) {
    const double stg = mean(r.stg3), nog = mean(r.nog3);
    int wins = 0;
    for (size_t i = 0; i < r.stg3.size(); ++i) {
        if (r.stg3[i] > r.nog3[i]) ++wins;
    }
    Outcome o;
    o.pass = stg >= nog - kAblationSlackDb && wins >= kAblationMinWins;
    o.detail = fmt("STG %.2f dB vs NoG %.2f dB (slack %.1f), STG wins %d/%d (need >= %d)", stg,
                   nog, kAblationSlackDb, wins, kDeskTest, kAblationMinWins);
    return o;
}

// ---- criterion 6: progressive schedule --------------------------------------

Outcome criterion_schedule() {
    MetaConfig on; // progressive, ramp 1.0
    MetaConfig off;
    off.progressive = false;
    Video clip;
    clip.id = "dry";
    for (int i = 0; i < 8; ++i) clip.frames.push_back(Tensor::zeros({3, 2, 2}));
    bool ok = true;
    for (int64_t j = 1; j <= kScheduleSteps && ok; ++j) {
        ok = ok && frames_used(j, 8, on) == static_cast<int>(std::min<int64_t>(j, 8));
        ok = ok && frames_used(j, 30, on) == static_cast<int>(std::min<int64_t>(j, 30));
        ok = ok && frames_used(j, 8, off) == 8;
        ok = ok && frames_used(j, 30, off) == 30;
        if (j <= 16) {
            ok = ok && progressive_frames(j, clip, on).n() ==
                           static_cast<int>(std::min<int64_t>(j, 8));
            ok = ok && progressive_frames(j, clip, off).n() == 8;
        }
    }
    Outcome o;
    o.pass = ok;
    o.detail = fmt("T_j = min(j, N) over %d steps for N in {8, 30}; schedule off gives N",
                   kScheduleSteps);
    return o;
}

// ---- criteria 7/8/9: toy fit, compression, denoising -------------------------

Json toy_model_json() {
    return Json{{"seed_h", 4},   {"seed_w", 4},     {"scales", Json::array({2, 2})},
                {"channels", Json::array({16, 12, 8})}, {"pe_l", 8},
                {"embed_dim", 24}, {"norm_dim", 12}};
}

fs::path toy_video_path(const Paths& p) { return p.toy / "train" / "train_000.mnvr"; }

void run_toy_fit(const Paths& p, const fs::path& ckpt) {
    cmd_adapt(Json{{"video", toy_video_path(p).string()},
                   {"steps", kToyFitSteps},
                   {"random_init", true},
                   {"seed", kToyInitSeed},
                   {"fixed_lr", kToyFitLr},
                   {"model", toy_model_json()},
                   {"checkpoint_out", ckpt.string()}});
}

Json compress_cfg(const Paths& p, const fs::path& ckpt, double ratio, int finetune_steps,
                  const fs::path& out) {
    Json cfg{{"checkpoint", ckpt.string()},
             {"video", toy_video_path(p).string()},
             {"ratio", ratio},
             {"bits", 8},
             {"container_out", out.string()}};
    if (finetune_steps > 0) {
        cfg["finetune_steps"] = finetune_steps;
        cfg["finetune_lr"] = kToyFitLr;
    }
    return cfg;
}

Outcome criterion_compression(const Paths& p) {
    // (a) entropy round trips
    Rng rng(555);
    int stream_fails = 0;
    for (int s = 0; s < kEntropyStreams; ++s) {
        const uint32_t alphabet = 1 + static_cast<uint32_t>(rng.uniform_int(256));
        const size_t len = 1 + rng.uniform_int(256);
        std::vector<uint32_t> symbols(len);
        const int kind = static_cast<int>(rng.uniform_int(3));
        for (uint32_t& v : symbols) {
            if (kind == 0) {
                v = static_cast<uint32_t>(rng.uniform_int(alphabet)); // uniform
            } else if (kind == 1) {
                // Skewed: resample the bound so low symbols dominate.
                const uint64_t bound = 1 + rng.uniform_int(alphabet);
                v = static_cast<uint32_t>(rng.uniform_int(bound));
            } else {
                v = static_cast<uint32_t>(alphabet - 1); // constant stream
            }
        }
        if (entropy_decode(entropy_encode(symbols, alphabet)) != symbols) ++stream_fails;
    }

    // (b) quantization error bound
    double worst_ratio = 0.0; // |error| / (scale/2)
    for (int t = 0; t < 200; ++t) {
        const int bits = 2 + static_cast<int>(rng.uniform_int(15));
        const size_t len = 1 + rng.uniform_int(400);
        std::vector<double> w(len);
        const double lo = rng.uniform(-5.0, 5.0);
        const double hi = lo + rng.uniform(0.0, 10.0);
        for (double& v : w) v = rng.uniform(lo, hi);
        if (t % 17 == 0) w.assign(len, lo); // constant tensor
        QuantizedTensor qt = quantize_values(w, bits);
        const std::vector<double> back = dequantize_values(qt);
        for (size_t i = 0; i < len; ++i) {
            worst_ratio = std::max(worst_ratio, std::fabs(back[i] - w[i]) / (qt.scale / 2.0));
        }
    }

    // (c) 8-bit ratio-0 compression of the fitted toy model
    cmd_gen_dataset(Json{{"out_dir", p.toy.string()},
                         {"train", 1},
                         {"test", 0},
                         {"height", 16},
                         {"width", 16},
                         {"n_frames", 2},
                         {"families", Json::array({"gradient_pan"})},
                         {"seed", kToyDataSeed}});
    run_toy_fit(p, p.toy_ckpt);
    const Json q8 = cmd_compress(compress_cfg(p, p.toy_ckpt, 0.0, 0, p.q8_container));
    const double q8_drop = q8["psnr_before"].get<double>() - q8["psnr_after"].get<double>();
    const auto file_bits = static_cast<double>(fs::file_size(p.q8_container)) * 8.0;
    const double want_bpp = file_bits / (16.0 * 16.0 * 2.0);
    const bool bpp_exact = q8["bpp"].get<double>() == want_bpp &&
                           q8["container_bits"].get<double>() == file_bits;

    // (d) prune 0.2 plus 30 fine-tune steps
    const Json pr = cmd_compress(compress_cfg(p, p.toy_ckpt, 0.2, 30, p.pruned_container));
    const double pr_drop = pr["psnr_before"].get<double>() - pr["psnr_after"].get<double>();

    Outcome o;
    o.pass = stream_fails == 0 && worst_ratio <= 1.0 + kQuantRelSlack && q8_drop <= kQuantDropDb &&
             bpp_exact && pr_drop <= kPruneDropDb;
    o.detail = fmt("%d/%d streams exact; quant err/(scale/2) max %.6f; 8-bit drop %.3f dB "
                   "(tol %.1f); bpp %s; prune+finetune drop %.3f dB (tol %.1f)",
                   kEntropyStreams - stream_fails, kEntropyStreams, worst_ratio, q8_drop,
                   kQuantDropDb, bpp_exact ? "exact" : "MISMATCH", pr_drop, kPruneDropDb);
    return o;
}

Outcome criterion_denoising(const Paths& p) {
    const Json rep = cmd_denoise_eval(Json{{"video", toy_video_path(p).string()},
                                           {"sigma", kDenoiseSigma},
                                           {"noise_seed", kDenoiseNoiseSeed},
                                           {"steps", kDenoiseSteps},
                                           {"random_init", true},
                                           {"seed", kToyInitSeed},
                                           {"fixed_lr", kToyFitLr},
                                           {"model", toy_model_json()}});
    const double noisy = rep["psnr_noisy"].get<double>();
    const double recon = rep["psnr_recon"].get<double>();
    Outcome o;
    o.pass = recon > noisy;
    o.detail = fmt("recon vs clean %.3f dB, noisy vs clean %.3f dB (%d steps, sigma %.2f)", recon,
                   noisy, kDenoiseSteps, kDenoiseSigma);
    return o;
}

// ---- criterion 9: determinism ------------------------------------------------

bool same_bytes(const fs::path& a, const fs::path& b) {
    return read_file_bytes(a.string()) == read_file_bytes(b.string());
}

Outcome criterion_determinism(const Paths& p) {
    // Repeat the meta-training run and its held-out evaluation.
    const fs::path ckpt2 = p.rerun / "stg.ckpt";
    const fs::path csv2 = p.rerun / "stg_log.csv";
    cmd_meta_train(desk_train_cfg(p, true, ckpt2, csv2));
    const fs::path meta0 = p.rerun / "meta_0.csv";
    const fs::path rand0 = p.rerun / "rand_0.csv";
    cmd_adapt(adapt_meta_cfg(desk_test_video(p, 0), ckpt2, meta0));
    cmd_adapt(adapt_random_cfg(desk_test_video(p, 0), rand0));

    // Repeat the toy fit and both compression runs.
    const fs::path toy2 = p.rerun / "toy_fit.ckpt";
    run_toy_fit(p, toy2);
    const fs::path q8_2 = p.rerun / "toy_q8.mnrc";
    const fs::path pr_2 = p.rerun / "toy_pruned.mnrc";
    cmd_compress(compress_cfg(p, toy2, 0.0, 0, q8_2));
    cmd_compress(compress_cfg(p, toy2, 0.2, 30, pr_2));

    struct Pair {
        const char* what;
        fs::path a, b;
    };
    const Pair pairs[] = {
        {"meta checkpoint", p.stg_ckpt, ckpt2},
        {"train log", p.stg_csv, csv2},
        {"adapt metrics", p.eval / "meta_0.csv", meta0},
        {"baseline metrics", p.eval / "rand_0.csv", rand0},
        {"toy checkpoint", p.toy_ckpt, toy2},
        {"8-bit container", p.q8_container, q8_2},
        {"pruned container", p.pruned_container, pr_2},
    };
    std::string bad;
    for (const Pair& pr : pairs) {
        if (!same_bytes(pr.a, pr.b)) bad += std::string(bad.empty() ? "" : ", ") + pr.what;
    }
    Outcome o;
    o.pass = bad.empty();
    o.detail = bad.empty() ? fmt("%zu artifact pairs byte-identical", std::size(pairs))
                           : "differ: " + bad;
    return o;
}

} // namespace

int main() {
    struct Row {
        const char* name;
        Outcome outcome;
        double seconds = 0.0;
    };
    Row rows[9] = {{"gradient correctness", {}, 0},  {"loss/metric oracles", {}, 0},
                   {"meta update equivalence", {}, 0}, {"meta-init advantage", {}, 0},
                   {"ablation ordering", {}, 0},      {"progressive schedule", {}, 0},
                   {"compression pipeline", {}, 0},   {"denoising direction", {}, 0},
                   {"determinism", {}, 0}};
    const auto t0 = std::chrono::steady_clock::now();
    auto timed = [&](int idx, auto&& fn) {
        const auto s = std::chrono::steady_clock::now();
        try {
            rows[idx].outcome = fn();
        } catch (const std::exception& e) {
            rows[idx].outcome = {false, std::string("exception: ") + e.what()};
        }
        rows[idx].seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - s)
                                .count();
        std::printf("[%d/9] %-24s %s (%s) [%.1fs]\n", idx + 1, rows[idx].name,
                    rows[idx].outcome.pass ? "PASS" : "FAIL", rows[idx].outcome.detail.c_str(),
                    rows[idx].seconds);
        std::fflush(stdout);
    };

    Paths paths = make_paths();
    timed(0, criterion_gradients);
    timed(1, criterion_loss_oracles);
    timed(2, criterion_scalar_equivalence);

    DeskResults desk;
    bool desk_ok = false;
    {
        const auto s = std::chrono::steady_clock::now();
        try {
            desk = run_desk_protocol(paths);
            desk_ok = true;
        } catch (const std::exception& e) {
            const std::string msg = std::string("desk protocol failed: ") + e.what();
            rows[3].outcome = {false, msg};
            rows[4].outcome = {false, msg};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - s).count();
        std::printf("      desk protocol (dataset + 2 trainings + evals) took %.1fs\n", secs);
        std::fflush(stdout);
    }
    if (desk_ok) {
        timed(3, [&] { return criterion_meta_advantage(desk); });
        timed(4, [&] { return criterion_ablation(desk); });
    } else {
        for (int i : {3, 4}) {
            std::printf("[%d/9] %-24s FAIL (%s)\n", i + 1, rows[i].name,
                        rows[i].outcome.detail.c_str());
        }
    }
    timed(5, criterion_schedule);
    timed(6, [&] { return criterion_compression(paths); });
    timed(7, [&] { return criterion_denoising(paths); });
    if (desk_ok) {
        timed(8, [&] { return criterion_determinism(paths); });
    } else {
        rows[8].outcome = {false, "skipped: desk protocol failed"};
        std::printf("[9/9] %-24s FAIL (%s)\n", rows[8].name, rows[8].outcome.detail.c_str());
    }

    int passed = 0;
    for (const Row& r : rows) passed += r.outcome.pass ? 1 : 0;
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                             .count();
    std::printf("ACCEPTANCE: %d/9 PASS [%.1fs total]\n", passed, total);
    return passed == 9 ? 0 : 1;
}
