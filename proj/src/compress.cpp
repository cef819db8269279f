#include "metanerv/compress.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include <zlib.h>

#include "bytes.hpp"
#include "config_codec.hpp"
#include "metanerv/errors.hpp"
#include "metanerv/meta.hpp"
#include "metanerv/serialize.hpp"

namespace metanerv {

namespace {

constexpr char kMagic[] = {'M', 'N', 'R', 'C', '1'};
constexpr uint16_t kVersion = 1;

uint32_t crc32_of(const std::string& bytes) {
    return static_cast<uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

struct BitWriter {
    std::string bytes;
    int free_bits = 0; // unused low bits in the last byte

    void put(uint32_t code, int len) {
        for (int i = len - 1; i >= 0; --i) {
            if (free_bits == 0) {
                bytes.push_back(0);
                free_bits = 8;
            }
            const uint8_t bit = (code >> i) & 1u;
            bytes.back() = static_cast<char>(static_cast<uint8_t>(bytes.back()) |
                                             (bit << (free_bits - 1)));
            --free_bits;
        }
    }
};

struct BitReader {
    const std::string& bytes;
    size_t pos = 0; // bit position

    explicit BitReader(const std::string& b) : bytes(b) {}

    uint8_t get() {
        if (pos >= bytes.size() * 8) throw BadHeader("entropy payload exhausted");
        const uint8_t byte = static_cast<uint8_t>(bytes[pos / 8]);
        const uint8_t bit = (byte >> (7 - pos % 8)) & 1u;
        ++pos;
        return bit;
    }
};

struct HuffNode {
    uint64_t count;
    uint64_t tie;
    int left = -1, right = -1; // -1 marks a leaf
    uint32_t symbol = 0;
};

// Code lengths via a deterministic Huffman merge (ties broken by creation
// order, so identical histograms always give identical codebooks).
std::vector<uint8_t> huffman_lengths(const std::vector<uint64_t>& hist) {
    std::vector<HuffNode> nodes;
    using Item = std::pair<std::pair<uint64_t, uint64_t>, int>; // ((count, tie), node)
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    uint64_t tie = 0;
    for (uint32_t s = 0; s < hist.size(); ++s) {
        if (hist[s] == 0) continue;
        nodes.push_back({hist[s], tie, -1, -1, s});
        heap.push({{hist[s], tie}, static_cast<int>(nodes.size()) - 1});
        ++tie;
    }
    std::vector<uint8_t> lengths(hist.size(), 0);
    if (nodes.empty()) return lengths;
    if (nodes.size() == 1) {
        lengths[nodes[0].symbol] = 1;
        return lengths;
    }
    while (heap.size() > 1) {
        const Item a = heap.top();
        heap.pop();
        const Item b = heap.top();
        heap.pop();
        nodes.push_back({a.first.first + b.first.first, tie, a.second, b.second, 0});
        heap.push({{nodes.back().count, tie}, static_cast<int>(nodes.size()) - 1});
        ++tie;
    }
    // Depth-first walk assigns each leaf its depth.
    std::vector<std::pair<int, int>> stack = {{heap.top().second, 0}};
    while (!stack.empty()) {
        auto [idx, depth] = stack.back();
        stack.pop_back();
        const HuffNode& n = nodes[static_cast<size_t>(idx)];
        if (n.left < 0) {
            if (depth > 255) throw DomainError("code length exceeds the u8 codebook");
            lengths[n.symbol] = static_cast<uint8_t>(depth);
        } else {
            stack.push_back({n.left, depth + 1});
            stack.push_back({n.right, depth + 1});
        }
    }
    return lengths;
}

struct CanonicalCodes {
    // Symbols holding a code, sorted by (length, symbol); codes are the
    // canonical sequence in that order.
    std::vector<uint32_t> symbols;
    std::vector<uint32_t> codes;
    std::vector<uint8_t> lengths; // per entry of symbols
    int max_len = 0;
};

CanonicalCodes canonicalize(const std::vector<uint8_t>& lengths) {
    CanonicalCodes cc;
    for (uint32_t s = 0; s < lengths.size(); ++s) {
        if (lengths[s] > 0) cc.symbols.push_back(s);
    }
    std::sort(cc.symbols.begin(), cc.symbols.end(), [&](uint32_t a, uint32_t b) {
        return std::make_pair(lengths[a], a) < std::make_pair(lengths[b], b);
    });
    uint32_t code = 0;
    int prev_len = 0;
    for (uint32_t s : cc.symbols) {
        const int len = lengths[s];
        code <<= (len - prev_len);
        cc.codes.push_back(code);
        cc.lengths.push_back(static_cast<uint8_t>(len));
        ++code;
        prev_len = len;
        cc.max_len = len;
    }
    return cc;
}

int popcount_mask(const KeepMask& mask) {
    return static_cast<int>(std::count(mask.begin(), mask.end(), uint8_t{1}));
}

} // namespace

KeepMask prune_global_magnitude(const ModelConfig& cfg, std::vector<double>& theta, double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0)) throw InvalidRatio("prune ratio must lie in [0, 1)");
    const auto spans = param_layout(cfg);
    if (theta.size() != static_cast<size_t>(param_count(cfg))) {
        throw LengthMismatch("flat parameter vector has wrong length for this config");
    }
    std::vector<size_t> prunable;
    for (const TensorSpan& s : spans) {
        if (!s.prunable) continue;
        for (size_t i = 0; i < s.len; ++i) prunable.push_back(s.offset + i);
    }
    const size_t k = static_cast<size_t>(std::floor(ratio * static_cast<double>(prunable.size())));
    KeepMask mask(theta.size(), uint8_t{1});
    if (k == 0) return mask;
    std::sort(prunable.begin(), prunable.end(), [&](size_t a, size_t b) {
        return std::make_pair(std::fabs(theta[a]), a) < std::make_pair(std::fabs(theta[b]), b);
    });
    for (size_t i = 0; i < k; ++i) {
        theta[prunable[i]] = 0.0;
        mask[prunable[i]] = 0;
    }
    return mask;
}

std::vector<double> finetune_pruned(const ModelConfig& cfg, std::vector<double> theta,
                                    const KeepMask& mask, const Video& video, int steps,
                                    const FinetuneOptions& opt) {
    if (mask.size() != theta.size()) throw LengthMismatch("mask length differs from theta");
    if (steps < 0) throw DomainError("finetune steps must be >= 0");
    if (steps == 0) return theta;
    Objective obj = video_objective(cfg, video, video.n(), /*spatial=*/false, opt.loss);
    for (int s = 0; s < steps; ++s) {
        auto [loss, grad] = obj(theta);
        if (!std::isfinite(loss)) throw NonFiniteLoss("finetune objective diverged");
        for (size_t p = 0; p < theta.size(); ++p) {
            theta[p] -= opt.lr * grad[p];
            if (!mask[p]) theta[p] = 0.0;
        }
    }
    return theta;
}

QuantizedTensor quantize_values(const std::vector<double>& w, int bits) {
    if (bits < 2 || bits > 16) throw InvalidBits("q_bits must lie in [2, 16]");
    QuantizedTensor t;
    if (w.empty()) return t;
    const auto [mn_it, mx_it] = std::minmax_element(w.begin(), w.end());
    const double mn = *mn_it, mx = *mx_it;
    t.zero = mn;
    t.q.resize(w.size());
    if (mx == mn) {
        t.scale = 1.0;
        return t; // q already zero-filled
    }
    const uint32_t levels = (1u << bits) - 1u;
    t.scale = (mx - mn) / static_cast<double>(levels);
    for (size_t i = 0; i < w.size(); ++i) {
        const double q = std::round((w[i] - mn) / t.scale);
        t.q[i] = static_cast<uint32_t>(std::clamp(q, 0.0, static_cast<double>(levels)));
    }
    return t;
}

std::vector<double> dequantize_values(const QuantizedTensor& t) {
    std::vector<double> w(t.q.size());
    for (size_t i = 0; i < t.q.size(); ++i) {
        w[i] = static_cast<double>(t.q[i]) * t.scale + t.zero;
    }
    return w;
}

EncodedStream entropy_encode(const std::vector<uint32_t>& symbols, uint32_t alphabet_size) {
    if (symbols.empty()) throw DomainError("cannot entropy code an empty stream");
    if (alphabet_size == 0) throw DomainError("alphabet must be nonempty");
    std::vector<uint64_t> hist(alphabet_size, 0);
    for (uint32_t s : symbols) {
        if (s >= alphabet_size) throw DomainError("symbol outside the alphabet");
        ++hist[s];
    }
    EncodedStream out;
    out.count = symbols.size();
    out.codebook.lengths = huffman_lengths(hist);
    const CanonicalCodes cc = canonicalize(out.codebook.lengths);
    if (cc.symbols.size() == 1) return out; // count header only, zero payload bits
    std::vector<uint32_t> code_of(alphabet_size, 0);
    std::vector<uint8_t> len_of(alphabet_size, 0);
    for (size_t i = 0; i < cc.symbols.size(); ++i) {
        code_of[cc.symbols[i]] = cc.codes[i];
        len_of[cc.symbols[i]] = cc.lengths[i];
    }
    BitWriter bw;
    for (uint32_t s : symbols) bw.put(code_of[s], len_of[s]);
    out.payload = std::move(bw.bytes);
    return out;
}

std::vector<uint32_t> entropy_decode(const EncodedStream& stream) {
    const CanonicalCodes cc = canonicalize(stream.codebook.lengths);
    if (cc.symbols.empty()) {
        if (stream.count != 0) throw BadHeader("empty codebook with a nonzero symbol count");
        return {};
    }
    std::vector<uint32_t> out;
    out.reserve(stream.count);
    if (cc.symbols.size() == 1) {
        out.assign(stream.count, cc.symbols[0]);
        return out;
    }
    // Canonical decode tables: per code length, the first code value and the
    // index of its first symbol in the sorted order.
    std::vector<uint32_t> first_code(static_cast<size_t>(cc.max_len) + 1, 0);
    std::vector<uint32_t> first_index(static_cast<size_t>(cc.max_len) + 1, 0);
    std::vector<uint32_t> count(static_cast<size_t>(cc.max_len) + 1, 0);
    for (size_t i = 0; i < cc.symbols.size(); ++i) {
        const int len = cc.lengths[i];
        if (count[static_cast<size_t>(len)] == 0) {
            first_code[static_cast<size_t>(len)] = cc.codes[i];
            first_index[static_cast<size_t>(len)] = static_cast<uint32_t>(i);
        }
        ++count[static_cast<size_t>(len)];
    }
    BitReader br(stream.payload);
    for (uint64_t n = 0; n < stream.count; ++n) {
        uint32_t code = 0;
        for (int len = 1; len <= cc.max_len; ++len) {
            code = (code << 1) | br.get();
            const size_t l = static_cast<size_t>(len);
            if (count[l] != 0 && code >= first_code[l] && code - first_code[l] < count[l]) {
                out.push_back(cc.symbols[first_index[l] + (code - first_code[l])]);
                break;
            }
            if (len == cc.max_len) throw BadHeader("invalid entropy code");
        }
    }
    return out;
}

CompressedModel compress_model(const ModelConfig& cfg, const std::vector<double>& theta,
                               const CompressOptions& opt) {
    CompressedModel cm;
    cm.config = cfg;
    cm.q_bits = opt.q_bits;
    std::vector<double> pruned = theta;
    cm.mask = prune_global_magnitude(cfg, pruned, opt.prune_ratio);
    if (opt.q_bits < 2 || opt.q_bits > 16) throw InvalidBits("q_bits must lie in [2, 16]");

    const auto spans = param_layout(cfg);
    std::vector<uint32_t> symbols;
    symbols.reserve(pruned.size());
    for (const TensorSpan& s : spans) {
        std::vector<double> kept;
        kept.reserve(s.len);
        for (size_t i = 0; i < s.len; ++i) {
            if (cm.mask[s.offset + i]) kept.push_back(pruned[s.offset + i]);
        }
        QuantizedTensor qt = quantize_values(kept, opt.q_bits);
        cm.tensors.push_back({qt.scale, qt.zero, static_cast<uint64_t>(qt.q.size())});
        symbols.insert(symbols.end(), qt.q.begin(), qt.q.end());
    }
    EncodedStream es = entropy_encode(symbols, 1u << opt.q_bits);
    cm.codebook = std::move(es.codebook);
    cm.payload = std::move(es.payload);
    cm.checksum = crc32_of(cm.payload);
    return cm;
}

std::vector<double> decompress_model(const CompressedModel& cm) {
    const auto spans = param_layout(cm.config);
    const size_t total = static_cast<size_t>(param_count(cm.config));
    if (cm.mask.size() != total) throw BadHeader("mask length differs from the config");
    if (cm.tensors.size() != spans.size()) throw BadHeader("per-tensor record count mismatch");
    uint64_t n_symbols = 0;
    for (const TensorQuant& t : cm.tensors) n_symbols += t.count;
    if (n_symbols != static_cast<uint64_t>(popcount_mask(cm.mask))) {
        throw BadHeader("symbol count differs from the keep mask");
    }
    EncodedStream es;
    es.count = n_symbols;
    es.codebook = cm.codebook;
    es.payload = cm.payload;
    const std::vector<uint32_t> symbols = entropy_decode(es);

    std::vector<double> theta(total, 0.0);
    size_t cursor = 0;
    for (size_t k = 0; k < spans.size(); ++k) {
        const TensorSpan& s = spans[k];
        const TensorQuant& t = cm.tensors[k];
        uint64_t taken = 0;
        for (size_t i = 0; i < s.len; ++i) {
            if (!cm.mask[s.offset + i]) continue;
            if (taken == t.count) throw BadHeader("span symbol count differs from its mask");
            theta[s.offset + i] =
                static_cast<double>(symbols[cursor + taken]) * t.scale + t.zero;
            ++taken;
        }
        if (taken != t.count) throw BadHeader("span symbol count differs from its mask");
        cursor += taken;
    }
    return theta;
}

std::string encode_container(const CompressedModel& cm) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    bytes::put_u16(out, kVersion);
    bytes::put_model_config(out, cm.config);
    bytes::put_u8(out, static_cast<uint8_t>(cm.q_bits));
    bytes::put_u64(out, cm.mask.size());
    for (size_t i = 0; i < cm.mask.size(); i += 8) {
        uint8_t byte = 0;
        for (size_t b = 0; b < 8 && i + b < cm.mask.size(); ++b) {
            byte |= static_cast<uint8_t>((cm.mask[i + b] & 1u) << b);
        }
        bytes::put_u8(out, byte);
    }
    bytes::put_u32(out, static_cast<uint32_t>(cm.tensors.size()));
    for (const TensorQuant& t : cm.tensors) {
        bytes::put_f64(out, t.scale);
        bytes::put_f64(out, t.zero);
        bytes::put_u64(out, t.count);
    }
    bytes::put_u32(out, static_cast<uint32_t>(cm.codebook.lengths.size()));
    for (uint8_t l : cm.codebook.lengths) bytes::put_u8(out, l);
    bytes::put_u64(out, cm.payload.size());
    out.append(cm.payload);
    bytes::put_u32(out, cm.checksum);
    return out;
}

CompressedModel decode_container(const std::string& raw) {
    bytes::Reader r(raw);
    if (r.raw(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw BadMagic("not a compressed model container");
    }
    if (r.u16() != kVersion) throw VersionUnsupported("unknown container version");
    CompressedModel cm;
    cm.config = bytes::get_model_config(r);
    cm.q_bits = r.u8();
    if (cm.q_bits < 2 || cm.q_bits > 16) throw BadHeader("q_bits outside [2, 16]");
    const uint64_t n = r.u64();
    if (n != static_cast<uint64_t>(param_count(cm.config))) {
        throw BadHeader("mask length differs from the config");
    }
    cm.mask.assign(n, 0);
    for (size_t i = 0; i < n; i += 8) {
        const uint8_t byte = r.u8();
        for (size_t b = 0; b < 8 && i + b < n; ++b) cm.mask[i + b] = (byte >> b) & 1u;
    }
    const uint32_t n_spans = r.u32();
    if (n_spans != param_layout(cm.config).size()) {
        throw BadHeader("per-tensor record count mismatch");
    }
    for (uint32_t i = 0; i < n_spans; ++i) {
        TensorQuant t;
        t.scale = r.f64();
        t.zero = r.f64();
        t.count = r.u64();
        cm.tensors.push_back(t);
    }
    const uint32_t alphabet = r.u32();
    if (alphabet != (1u << cm.q_bits)) throw BadHeader("codebook size differs from q_bits");
    cm.codebook.lengths.assign(alphabet, 0);
    for (uint32_t i = 0; i < alphabet; ++i) cm.codebook.lengths[i] = r.u8();
    const uint64_t payload_len = r.u64();
    cm.payload = r.raw(payload_len);
    cm.checksum = r.u32();
    if (!r.done()) throw BadHeader("trailing bytes after container");
    if (crc32_of(cm.payload) != cm.checksum) {
        throw ChecksumMismatch("payload checksum mismatch");
    }
    return cm;
}

void save_container(const CompressedModel& cm, const std::string& path) {
    write_file_bytes(path, encode_container(cm));
}

CompressedModel load_container(const std::string& path) {
    return decode_container(read_file_bytes(path));
}

double bpp(const CompressedModel& cm, const Video& video) {
    video.validate();
    const double bits = static_cast<double>(encode_container(cm).size()) * 8.0;
    const double pixels =
        static_cast<double>(video.h()) * video.w() * static_cast<double>(video.n());
    return bits / pixels;
}

} // namespace metanerv
