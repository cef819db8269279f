#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metanerv/loss.hpp"
#include "metanerv/model.hpp"
#include "metanerv/video.hpp"

namespace metanerv {

/// Keep-mask over the flattened parameter vector: 1 = kept, 0 = pruned.
using KeepMask = std::vector<uint8_t>;

/// Zeroes the floor(ratio * #prunable) smallest-magnitude weights across all
/// weight matrices (biases and the affine pair are exempt and always kept).
/// Ties in |w| are broken by flattened index, lower index pruned first.
KeepMask prune_global_magnitude(const ModelConfig& cfg, std::vector<double>& theta, double ratio);

struct FinetuneOptions {
    double lr = 1e-3;
    LossConfig loss;
};

/// Plain gradient descent on the final-head fusion loss with pruned entries
/// forced back to zero after every step. steps == 0 returns theta unchanged.
std::vector<double> finetune_pruned(const ModelConfig& cfg, std::vector<double> theta,
                                    const KeepMask& mask, const Video& video, int steps,
                                    const FinetuneOptions& opt);

struct QuantizedTensor {
    double scale = 1.0;
    double zero = 0.0;
    std::vector<uint32_t> q;
};

/// Linear grid over [min, max] with 2^bits levels: q = round((w - min)/scale).
/// A constant tensor maps to q = 0 with scale 1 so dequantization is exact.
QuantizedTensor quantize_values(const std::vector<double>& w, int bits);
std::vector<double> dequantize_values(const QuantizedTensor& t);

struct Codebook {
    std::vector<uint8_t> lengths; // canonical code length per symbol, 0 = unused
};

struct EncodedStream {
    uint64_t count = 0; // number of symbols in the stream
    Codebook codebook;
    std::string payload; // bits packed MSB-first
};

/// Canonical Huffman coding over the empirical histogram. A stream with one
/// distinct symbol is stored as the count plus a single length-1 codebook
/// entry and an empty payload.
EncodedStream entropy_encode(const std::vector<uint32_t>& symbols, uint32_t alphabet_size);
std::vector<uint32_t> entropy_decode(const EncodedStream& stream);

struct TensorQuant {
    double scale = 1.0;
    double zero = 0.0;
    uint64_t count = 0; // kept (encoded) entries in this span
};

/// Pruned + quantized + entropy-coded model, container magic "MNRC1".
struct CompressedModel {
    ModelConfig config;
    KeepMask mask;
    int q_bits = 8;
    std::vector<TensorQuant> tensors; // one per param_layout span
    Codebook codebook;
    std::string payload;
    uint32_t checksum = 0; // CRC-32 of payload
};

struct CompressOptions {
    double prune_ratio = 0.0;
    int q_bits = 8;
};

/// Prunes, quantizes each layout span over its kept entries, and Huffman
/// codes the concatenated symbol stream.
CompressedModel compress_model(const ModelConfig& cfg, const std::vector<double>& theta,
                               const CompressOptions& opt);

/// Dequantized flat parameters; pruned entries come back as exact zeros.
std::vector<double> decompress_model(const CompressedModel& model);

std::string encode_container(const CompressedModel& model);
CompressedModel decode_container(const std::string& bytes);

void save_container(const CompressedModel& model, const std::string& path);
CompressedModel load_container(const std::string& path);

/// Total container bits divided by H * W * N of the video it encodes.
double bpp(const CompressedModel& model, const Video& video);

} // namespace metanerv
