#pragma once

#include <vector>

#include "metanerv/model.hpp"
#include "metanerv/tensor.hpp"

namespace metanerv {

struct LossConfig {
    double alpha = 0.7;                // L1 weight in the fusion loss
    std::vector<double> head_weights;  // empty selects uniform 1/K
    int ssim_window = 7;
    double ssim_sigma = 1.5;
    double c1 = 0.0001; // (0.01)^2 for [0,1] range
    double c2 = 0.0009; // (0.03)^2

    void validate() const;
};

/// Mean absolute difference over all elements.
Tensor l1_loss(Tape& tape, const Tensor& pred, const Tensor& gt);

/// Gaussian-windowed structural similarity, averaged over valid window
/// positions and channels. Differentiable through the tape.
Tensor ssim(Tape& tape, const Tensor& x, const Tensor& y, const LossConfig& cfg);

/// alpha*L1 + (1-alpha)*(1-SSIM).
Tensor fusion_loss(Tape& tape, const Tensor& pred, const Tensor& gt, const LossConfig& cfg);

/// Average-pool the ground truth down to a head resolution. f = H/target_h
/// must be an integer and match W/target_w.
Tensor pool_gt(const Tensor& gt, int target_h, int target_w);

/// Weighted sum of per-head fusion losses against pooled ground truth.
Tensor multires_loss(Tape& tape, const Tensor& gt, const MultiResOutput& heads,
                     const LossConfig& cfg);

/// 10*log10(1/MSE), capped at 100 dB below MSE 1e-10. Metric only.
double psnr(const Tensor& pred, const Tensor& gt);

/// Mean per-frame PSNR.
double psnr_frames(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt);

/// Metric-only SSIM value.
double ssim_value(const Tensor& x, const Tensor& y, const LossConfig& cfg);

/// Multiscale SSIM with the canonical 5-level weights; levels that cannot
/// fit the window are dropped and the kept weights renormalized.
double ms_ssim(const Tensor& x, const Tensor& y, const LossConfig& cfg);

std::vector<double> gaussian_kernel(int window, double sigma);

} // namespace metanerv
