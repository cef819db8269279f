#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metanerv/rng.hpp"
#include "metanerv/tensor.hpp"

namespace metanerv {

enum class TNorm : uint8_t {
    index_over_n = 0,         // t = n / N, n zero-based
    index_over_n_minus_1 = 1, // t = n / max(N-1, 1), endpoints hit 0 and 1
};

struct ModelConfig {
    std::vector<int> scale_factors = {2, 2, 2};
    int seed_h = 6;
    int seed_w = 5;
    std::vector<int> channels = {32, 24, 16, 12};
    double pe_b = 1.25;
    int pe_l = 20;
    int embed_dim = 196;
    int norm_dim = 128;
    TNorm t_norm = TNorm::index_over_n_minus_1;

    int num_blocks() const { return static_cast<int>(scale_factors.size()); }
    /// Resolution after block k (0-based): seed * prod(scale_factors[0..k]).
    int stage_h(int k) const;
    int stage_w(int k) const;
    int out_h() const { return stage_h(num_blocks() - 1); }
    int out_w() const { return stage_w(num_blocks() - 1); }

    void validate() const; // throws InvalidShape on a malformed config
};

struct ModelParams {
    struct ConvLayer {
        Tensor w;
        Tensor b;
    };

    ModelConfig cfg;
    Tensor embed_w1;   // {2*pe_l, embed_dim}
    Tensor embed_b1;   // {1, embed_dim}
    Tensor embed_w2;   // {embed_dim, channels[0]*seed_h*seed_w}
    Tensor embed_b2;   // {1, channels[0]*seed_h*seed_w}
    Tensor norm_gamma; // {channels[0]}, per-channel affine on the seed map
    Tensor norm_beta;  // {channels[0]}
    std::vector<ConvLayer> blocks;  // w {channels[k+1]*s^2, channels[k], 3, 3}
    std::vector<ConvLayer> headers; // w {3, channels[k+1], 3, 3}

    ModelParams clone() const;
    /// All parameter tensors in flatten order.
    std::vector<Tensor> tensors();
    std::vector<Tensor> tensors() const;
};

struct MultiResOutput {
    std::vector<Tensor> frames; // frame k is 3 x stage_h(k) x stage_w(k)
};

/// Named slice of the flattened parameter vector. Order is the container
/// order and is stable across runs; prunable marks weight matrices eligible
/// for magnitude pruning (biases and the affine pair are exempt).
struct TensorSpan {
    std::string name;
    size_t offset;
    size_t len;
    bool prunable;
    std::vector<int> shape;
};

std::vector<TensorSpan> param_layout(const ModelConfig& cfg);
int64_t param_count(const ModelConfig& cfg);

/// Kaiming-uniform fan-in init for weights, zero biases, identity affine.
ModelParams init_params(const ModelConfig& cfg, Rng& rng);

std::vector<double> flatten_params(const ModelParams& params);
/// Inverse of flatten_params; throws LengthMismatch when flat has the wrong
/// length for the config.
ModelParams unflatten_params(const ModelConfig& cfg, const std::vector<double>& flat);

/// [sin(b^0 pi t), cos(b^0 pi t), ..., sin(b^(l-1) pi t), cos(b^(l-1) pi t)].
std::vector<double> positional_encoding(double t, double b, int l);

/// Normalized time for zero-based frame index n of an N-frame video.
double frame_time(int n, int total, TNorm mode);

/// PE -> two-layer MLP -> seed map with per-channel affine.
Tensor embed(Tape& tape, double t, const ModelParams& params);

/// Full pipeline; emits one sigmoid-squashed frame per stage.
MultiResOutput forward_multires(Tape& tape, double t, const ModelParams& params);

/// Final frame only; earlier headers are skipped entirely.
Tensor forward_final(Tape& tape, double t, const ModelParams& params);

} // namespace metanerv
