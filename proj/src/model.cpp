#include "metanerv/model.hpp"

#include <cmath>
#include <cstring>

#include "metanerv/errors.hpp"

namespace metanerv {

int ModelConfig::stage_h(int k) const {
    int h = seed_h;
    for (int i = 0; i <= k; ++i) h *= scale_factors[i];
    return h;
}

int ModelConfig::stage_w(int k) const {
    int w = seed_w;
    for (int i = 0; i <= k; ++i) w *= scale_factors[i];
    return w;
}

void ModelConfig::validate() const {
    if (scale_factors.empty()) throw InvalidShape("config needs at least one upscale block");
    for (int s : scale_factors) {
        if (s < 1) throw InvalidShape("scale factors must be >= 1");
    }
    if (channels.size() != scale_factors.size() + 1) {
        throw InvalidShape("channels list must have one entry per stage plus the seed");
    }
    for (int c : channels) {
        if (c < 1) throw InvalidShape("channel widths must be positive");
    }
    if (seed_h < 1 || seed_w < 1) throw InvalidShape("seed map must be at least 1x1");
    if (pe_l < 1) throw InvalidShape("pe_l must be >= 1");
    if (!(pe_b > 1.0)) throw InvalidShape("pe_b must exceed 1");
    if (embed_dim < 1) throw InvalidShape("embed_dim must be positive");
    if (norm_dim < 1) throw InvalidShape("norm_dim must be positive");
}

ModelParams ModelParams::clone() const {
    ModelParams out;
    out.cfg = cfg;
    out.embed_w1 = embed_w1.clone();
    out.embed_b1 = embed_b1.clone();
    out.embed_w2 = embed_w2.clone();
    out.embed_b2 = embed_b2.clone();
    out.norm_gamma = norm_gamma.clone();
    out.norm_beta = norm_beta.clone();
    for (const auto& bl : blocks) out.blocks.push_back({bl.w.clone(), bl.b.clone()});
    for (const auto& hd : headers) out.headers.push_back({hd.w.clone(), hd.b.clone()});
    return out;
}

std::vector<Tensor> ModelParams::tensors() {
    std::vector<Tensor> out = {embed_w1, embed_b1, embed_w2, embed_b2, norm_gamma, norm_beta};
    for (auto& bl : blocks) {
        out.push_back(bl.w);
        out.push_back(bl.b);
    }
    for (auto& hd : headers) {
        out.push_back(hd.w);
        out.push_back(hd.b);
    }
    return out;
}

std::vector<Tensor> ModelParams::tensors() const {
    return const_cast<ModelParams*>(this)->tensors();
}

std::vector<TensorSpan> param_layout(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<TensorSpan> spans;
    size_t off = 0;
    auto push = [&](std::string name, std::vector<int> shape, bool prunable) {
        const size_t len = static_cast<size_t>(shape_numel(shape));
        spans.push_back({std::move(name), off, len, prunable, std::move(shape)});
        off += len;
    };
    const int c0 = cfg.channels[0];
    const int seed_elems = c0 * cfg.seed_h * cfg.seed_w;
    push("embed_w1", {2 * cfg.pe_l, cfg.embed_dim}, true);
    push("embed_b1", {1, cfg.embed_dim}, false);
    push("embed_w2", {cfg.embed_dim, seed_elems}, true);
    push("embed_b2", {1, seed_elems}, false);
    push("norm_gamma", {c0}, false);
    push("norm_beta", {c0}, false);
    for (int k = 0; k < cfg.num_blocks(); ++k) {
        const int cin = cfg.channels[k];
        const int cout = cfg.channels[k + 1] * cfg.scale_factors[k] * cfg.scale_factors[k];
        push("block" + std::to_string(k) + "_w", {cout, cin, 3, 3}, true);
        push("block" + std::to_string(k) + "_b", {cout}, false);
    }
    for (int k = 0; k < cfg.num_blocks(); ++k) {
        const int cin = cfg.channels[k + 1];
        push("header" + std::to_string(k) + "_w", {3, cin, 3, 3}, true);
        push("header" + std::to_string(k) + "_b", {3}, false);
    }
    return spans;
}

int64_t param_count(const ModelConfig& cfg) {
    const auto spans = param_layout(cfg);
    return static_cast<int64_t>(spans.back().offset + spans.back().len);
}

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    auto kaiming = [&](std::vector<int> shape, int fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        return Tensor::uniform(std::move(shape), rng, -bound, bound, true);
    };
    const int c0 = cfg.channels[0];
    const int seed_elems = c0 * cfg.seed_h * cfg.seed_w;
    p.embed_w1 = kaiming({2 * cfg.pe_l, cfg.embed_dim}, 2 * cfg.pe_l);
    p.embed_b1 = Tensor::zeros({1, cfg.embed_dim}, true);
    p.embed_w2 = kaiming({cfg.embed_dim, seed_elems}, cfg.embed_dim);
    p.embed_b2 = Tensor::zeros({1, seed_elems}, true);
    p.norm_gamma = Tensor::full({c0}, 1.0, true);
    p.norm_beta = Tensor::zeros({c0}, true);
    for (int k = 0; k < cfg.num_blocks(); ++k) {
        const int cin = cfg.channels[k];
        const int cout = cfg.channels[k + 1] * cfg.scale_factors[k] * cfg.scale_factors[k];
        ModelParams::ConvLayer bl;
        bl.w = kaiming({cout, cin, 3, 3}, cin * 9);
        bl.b = Tensor::zeros({cout}, true);
        p.blocks.push_back(std::move(bl));
    }
    for (int k = 0; k < cfg.num_blocks(); ++k) {
        const int cin = cfg.channels[k + 1];
        ModelParams::ConvLayer hd;
        hd.w = kaiming({3, cin, 3, 3}, cin * 9);
        hd.b = Tensor::zeros({3}, true);
        p.headers.push_back(std::move(hd));
    }
    return p;
}

std::vector<double> flatten_params(const ModelParams& params) {
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(param_count(params.cfg)));
    for (const Tensor& t : params.tensors()) {
        flat.insert(flat.end(), t.data().begin(), t.data().end());
    }
    return flat;
}

ModelParams unflatten_params(const ModelConfig& cfg, const std::vector<double>& flat) {
    const auto spans = param_layout(cfg);
    const size_t total = spans.back().offset + spans.back().len;
    if (flat.size() != total) {
        throw LengthMismatch("flat parameter vector has wrong length for this config");
    }
    ModelParams p;
    p.cfg = cfg;
    auto take = [&](const TensorSpan& s) {
        std::vector<double> d(flat.begin() + static_cast<ptrdiff_t>(s.offset),
                              flat.begin() + static_cast<ptrdiff_t>(s.offset + s.len));
        return Tensor::from_data(s.shape, std::move(d), true);
    };
    size_t i = 0;
    p.embed_w1 = take(spans[i++]);
    p.embed_b1 = take(spans[i++]);
    p.embed_w2 = take(spans[i++]);
    p.embed_b2 = take(spans[i++]);
    p.norm_gamma = take(spans[i++]);
    p.norm_beta = take(spans[i++]);
    for (int k = 0; k < cfg.num_blocks(); ++k) {
        ModelParams::ConvLayer bl;
        bl.w = take(spans[i++]);
        bl.b = take(spans[i++]);
        p.blocks.push_back(std::move(bl));
    }
    for (int k = 0; k < cfg.num_blocks(); ++k) {
        ModelParams::ConvLayer hd;
        hd.w = take(spans[i++]);
        hd.b = take(spans[i++]);
        p.headers.push_back(std::move(hd));
    }
    return p;
}

std::vector<double> positional_encoding(double t, double b, int l) {
    if (t < 0.0 || t > 1.0) throw DomainError("frame time must lie in [0, 1]");
    if (l < 1) throw InvalidShape("pe_l must be >= 1");
    if (!(b > 1.0)) throw InvalidShape("pe_b must exceed 1");
    std::vector<double> pe(static_cast<size_t>(2 * l));
    double freq = M_PI * t;
    for (int i = 0; i < l; ++i) {
        pe[2 * i] = std::sin(freq);
        pe[2 * i + 1] = std::cos(freq);
        freq *= b;
    }
    return pe;
}

double frame_time(int n, int total, TNorm mode) {
    if (total < 1 || n < 0 || n >= total) throw DomainError("frame index out of range");
    switch (mode) {
    case TNorm::index_over_n:
        return static_cast<double>(n) / static_cast<double>(total);
    case TNorm::index_over_n_minus_1:
    default:
        return static_cast<double>(n) / static_cast<double>(std::max(total - 1, 1));
    }
}

Tensor embed(Tape& tape, double t, const ModelParams& params) {
    const ModelConfig& cfg = params.cfg;
    Tensor pe = Tensor::from_data({1, 2 * cfg.pe_l}, positional_encoding(t, cfg.pe_b, cfg.pe_l));
    Tensor h = tape.gelu(tape.add(tape.matmul(pe, params.embed_w1), params.embed_b1));
    Tensor seed = tape.add(tape.matmul(h, params.embed_w2), params.embed_b2);
    Tensor map = tape.reshape(seed, {cfg.channels[0], cfg.seed_h, cfg.seed_w});
    return tape.affine_channels(map, params.norm_gamma, params.norm_beta);
}

namespace {

Tensor run_block(Tape& tape, const Tensor& x, const ModelParams::ConvLayer& block, int s) {
    Tensor c = tape.conv2d(x, block.w, block.b, 1);
    Tensor up = tape.pixel_shuffle(c, s);
    return tape.gelu(up);
}

} // namespace

MultiResOutput forward_multires(Tape& tape, double t, const ModelParams& params) {
    const ModelConfig& cfg = params.cfg;
    Tensor x = embed(tape, t, params);
    MultiResOutput out;
    for (int k = 0; k < cfg.num_blocks(); ++k) {
        x = run_block(tape, x, params.blocks[k], cfg.scale_factors[k]);
        Tensor head = tape.conv2d(x, params.headers[k].w, params.headers[k].b, 1);
        out.frames.push_back(tape.sigmoid(head));
    }
    return out;
}

Tensor forward_final(Tape& tape, double t, const ModelParams& params) {
    const ModelConfig& cfg = params.cfg;
    Tensor x = embed(tape, t, params);
    for (int k = 0; k < cfg.num_blocks(); ++k) {
        x = run_block(tape, x, params.blocks[k], cfg.scale_factors[k]);
    }
    const int last = cfg.num_blocks() - 1;
    Tensor head = tape.conv2d(x, params.headers[last].w, params.headers[last].b, 1);
    return tape.sigmoid(head);
}

} // namespace metanerv
