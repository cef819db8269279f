#include "metanerv/loss.hpp"

#include <algorithm>
#include <cmath>

#include "metanerv/errors.hpp"

namespace metanerv {

void LossConfig::validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw DomainError("alpha must lie in [0, 1]");
    if (ssim_window < 1 || ssim_window % 2 == 0) throw InvalidShape("ssim_window must be odd");
    if (!(ssim_sigma > 0.0)) throw DomainError("ssim_sigma must be positive");
    if (!head_weights.empty()) {
        double sum = 0.0;
        for (double w : head_weights) {
            if (w < 0.0) throw DomainError("head weights must be nonnegative");
            sum += w;
        }
        if (std::fabs(sum - 1.0) > 1e-9) throw DomainError("head weights must sum to 1");
    }
}

std::vector<double> gaussian_kernel(int window, double sigma) {
    std::vector<double> k(static_cast<size_t>(window));
    const double c = (window - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < window; ++i) {
        k[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

Tensor l1_loss(Tape& tape, const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) throw ShapeMismatch("l1_loss shapes differ");
    return tape.mean(tape.abs(tape.sub(pred, gt)));
}

namespace {

struct SsimMaps {
    Tensor luminance; // (2 mu_x mu_y + c1) / (mu_x^2 + mu_y^2 + c1)
    Tensor contrast;  // (2 cov + c2) / (sig_x + sig_y + c2)
};

SsimMaps ssim_maps(Tape& tape, const Tensor& x, const Tensor& y, const LossConfig& cfg) {
    if (x.shape() != y.shape()) throw ShapeMismatch("ssim shapes differ");
    if (x.shape().size() != 3) throw ShapeMismatch("ssim expects C x H x W frames");
    cfg.validate();
    const int h = x.shape()[1], w = x.shape()[2];
    if (cfg.ssim_window > std::min(h, w)) {
        throw WindowTooLarge("ssim window exceeds the frame side");
    }
    const auto k = gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma);
    auto blur = [&](const Tensor& t) { return tape.filter_cols(tape.filter_rows(t, k), k); };
    Tensor mu_x = blur(x);
    Tensor mu_y = blur(y);
    Tensor ex2 = blur(tape.mul(x, x));
    Tensor ey2 = blur(tape.mul(y, y));
    Tensor exy = blur(tape.mul(x, y));
    Tensor mu_x2 = tape.mul(mu_x, mu_x);
    Tensor mu_y2 = tape.mul(mu_y, mu_y);
    Tensor sig_x = tape.sub(ex2, mu_x2);
    Tensor sig_y = tape.sub(ey2, mu_y2);
    Tensor cov = tape.sub(exy, tape.mul(mu_x, mu_y));
    SsimMaps maps;
    maps.luminance = tape.div(tape.offset(tape.scale(tape.mul(mu_x, mu_y), 2.0), cfg.c1),
                              tape.offset(tape.add(mu_x2, mu_y2), cfg.c1));
    maps.contrast = tape.div(tape.offset(tape.scale(cov, 2.0), cfg.c2),
                             tape.offset(tape.add(sig_x, sig_y), cfg.c2));
    return maps;
}

} // namespace

Tensor ssim(Tape& tape, const Tensor& x, const Tensor& y, const LossConfig& cfg) {
    SsimMaps maps = ssim_maps(tape, x, y, cfg);
    return tape.mean(tape.mul(maps.luminance, maps.contrast));
}

Tensor fusion_loss(Tape& tape, const Tensor& pred, const Tensor& gt, const LossConfig& cfg) {
    cfg.validate();
    Tensor l1 = l1_loss(tape, pred, gt);
    Tensor sim = ssim(tape, pred, gt, cfg);
    Tensor dissim = tape.sub(Tensor::scalar(1.0), sim);
    return tape.add(tape.scale(l1, cfg.alpha), tape.scale(dissim, 1.0 - cfg.alpha));
}

Tensor pool_gt(const Tensor& gt, int target_h, int target_w) {
    if (gt.shape().size() != 3) throw ShapeMismatch("pool_gt expects C x H x W");
    const int h = gt.shape()[1], w = gt.shape()[2];
    if (target_h < 1 || target_w < 1 || h % target_h != 0 || w % target_w != 0 ||
        h / target_h != w / target_w) {
        throw NonIntegerFactor("ground truth is not an integer multiple of the head resolution");
    }
    const int f = h / target_h;
    if (f == 1) return gt;
    Tape scratch;
    return scratch.avg_pool2d(gt, f);
}

Tensor multires_loss(Tape& tape, const Tensor& gt, const MultiResOutput& heads,
                     const LossConfig& cfg) {
    cfg.validate();
    const size_t k = heads.frames.size();
    if (k == 0) throw ShapeMismatch("multires_loss needs at least one head");
    std::vector<double> weights = cfg.head_weights;
    if (weights.empty()) {
        weights.assign(k, 1.0 / static_cast<double>(k));
    } else if (weights.size() != k) {
        throw LengthMismatch("head_weights length differs from head count");
    }
    Tensor total;
    for (size_t i = 0; i < k; ++i) {
        const Tensor& head = heads.frames[i];
        Tensor pooled = pool_gt(gt, head.shape()[1], head.shape()[2]);
        Tensor term = tape.scale(fusion_loss(tape, head, pooled, cfg), weights[i]);
        total = total.valid() ? tape.add(total, term) : term;
    }
    return total;
}

double psnr(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) throw ShapeMismatch("psnr shapes differ");
    const size_t n = pred.data().size();
    double mse = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = pred.data()[i] - gt.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

double psnr_frames(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt) {
    if (pred.size() != gt.size() || pred.empty()) {
        throw ShapeMismatch("psnr over videos needs matching nonempty frame lists");
    }
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) acc += psnr(pred[i], gt[i]);
    return acc / static_cast<double>(pred.size());
}

double ssim_value(const Tensor& x, const Tensor& y, const LossConfig& cfg) {
    Tape scratch;
    return ssim(scratch, x, y, cfg).item();
}

namespace {

// Crop trailing odd row/column, then halve with a 2x2 mean.
Tensor dyadic_pool(const Tensor& x) {
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int eh = h - (h % 2), ew = w - (w % 2);
    Tensor cropped = x;
    if (eh != h || ew != w) {
        cropped = Tensor::zeros({c, eh, ew});
        for (int cc = 0; cc < c; ++cc) {
            for (int i = 0; i < eh; ++i) {
                const double* src = x.data().data() + (static_cast<size_t>(cc) * h + i) * w;
                double* dst =
                    cropped.data().data() + (static_cast<size_t>(cc) * eh + i) * ew;
                std::copy(src, src + ew, dst);
            }
        }
    }
    Tape scratch;
    return scratch.avg_pool2d(cropped, 2);
}

} // namespace

double ms_ssim(const Tensor& x, const Tensor& y, const LossConfig& cfg) {
    if (x.shape() != y.shape()) throw ShapeMismatch("ms_ssim shapes differ");
    if (x.shape().size() != 3) throw ShapeMismatch("ms_ssim expects C x H x W frames");
    cfg.validate();
    static const double canonical[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    // Count how many of the five scales keep both sides >= window.
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
    if (levels == 0) throw WindowTooLarge("ms_ssim window exceeds the frame side");
    double wsum = 0.0;
    for (int j = 0; j < levels; ++j) wsum += canonical[j];

    Tensor cx = x, cy = y;
    double product = 1.0;
    for (int j = 0; j < levels; ++j) {
        Tape scratch;
        SsimMaps maps = ssim_maps(scratch, cx, cy, cfg);
        const double weight = canonical[j] / wsum;
        if (j + 1 < levels) {
            const double cs = scratch.mean(maps.contrast).item();
            product *= std::pow(std::max(cs, 0.0), weight);
            cx = dyadic_pool(cx);
            cy = dyadic_pool(cy);
        } else {
            const double sim = scratch.mean(scratch.mul(maps.luminance, maps.contrast)).item();
            product *= std::pow(std::max(sim, 0.0), weight);
        }
    }
    return product;
}

} // namespace metanerv
