#include "metanerv/serialize.hpp"

#include <fstream>

#include "bytes.hpp"
#include "config_codec.hpp"
#include "metanerv/errors.hpp"

namespace metanerv {

namespace {

constexpr char kMagic[] = {'M', 'N', 'R', 'V', '1'};
constexpr uint16_t kVersion = 1;
constexpr uint8_t kFlagMeta = 0x01;

void put_adam(std::string& out, const AdamState& st, size_t n) {
    if (st.m.size() != n || st.v.size() != n) {
        // A fresh AdamState has empty moment vectors until its first step.
        if (st.step != 0 || !st.m.empty() || !st.v.empty()) {
            throw LengthMismatch("optimizer state length differs from parameter count");
        }
    }
    bytes::put_i64(out, st.step);
    bytes::put_f64_vec(out, st.m.empty() ? std::vector<double>(n, 0.0) : st.m);
    bytes::put_f64_vec(out, st.v.empty() ? std::vector<double>(n, 0.0) : st.v);
}

AdamState get_adam(bytes::Reader& r, size_t n) {
    AdamState st;
    st.step = r.i64();
    st.m = bytes::get_f64_vec(r, n);
    st.v = bytes::get_f64_vec(r, n);
    return st;
}

} // namespace

void Checkpoint::validate() const {
    model.validate();
    const size_t p = static_cast<size_t>(param_count(model));
    if (theta.size() != p) throw LengthMismatch("theta length differs from the config");
    if (!beta.empty() && beta.size() != p) {
        throw LengthMismatch("beta length differs from the config");
    }
    if (has_meta && beta.empty()) throw DomainError("meta state requires beta");
    if (outer_iter < 0) throw DomainError("outer_iter must be >= 0");
}

Checkpoint checkpoint_from_state(const MetaState& state) {
    Checkpoint c;
    c.model = state.model;
    c.theta = state.theta0;
    c.beta = state.beta;
    c.has_meta = true;
    c.outer_iter = state.outer_iter;
    c.opt_theta = state.opt_theta;
    c.opt_beta = state.opt_beta;
    c.validate();
    return c;
}

MetaState state_from_checkpoint(const Checkpoint& ckpt) {
    ckpt.validate();
    if (!ckpt.has_meta) throw DomainError("checkpoint carries no meta state");
    MetaState s;
    s.model = ckpt.model;
    s.theta0 = ckpt.theta;
    s.beta = ckpt.beta;
    s.opt_theta = ckpt.opt_theta;
    s.opt_beta = ckpt.opt_beta;
    s.outer_iter = ckpt.outer_iter;
    return s;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    ckpt.validate();
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    bytes::put_u16(out, kVersion);
    bytes::put_u8(out, ckpt.has_meta ? kFlagMeta : 0);
    bytes::put_model_config(out, ckpt.model);
    bytes::put_u64(out, ckpt.theta.size());
    bytes::put_f64_vec(out, ckpt.theta);
    bytes::put_u64(out, ckpt.beta.size());
    bytes::put_f64_vec(out, ckpt.beta);
    if (ckpt.has_meta) {
        bytes::put_i64(out, ckpt.outer_iter);
        put_adam(out, ckpt.opt_theta, ckpt.theta.size());
        put_adam(out, ckpt.opt_beta, ckpt.beta.size());
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string& raw) {
    bytes::Reader r(raw);
    if (r.raw(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw BadMagic("not a model checkpoint");
    }
    if (r.u16() != kVersion) throw VersionUnsupported("unknown checkpoint version");
    const uint8_t flags = r.u8();
    if (flags & ~kFlagMeta) throw BadHeader("unknown checkpoint flags");
    Checkpoint c;
    c.model = bytes::get_model_config(r);
    const size_t p = static_cast<size_t>(param_count(c.model));
    const uint64_t tn = r.u64();
    if (tn != p) throw BadHeader("parameter count differs from the config");
    c.theta = bytes::get_f64_vec(r, p);
    const uint64_t bn = r.u64();
    if (bn != 0 && bn != p) throw BadHeader("beta count differs from the config");
    c.beta = bytes::get_f64_vec(r, bn);
    if (flags & kFlagMeta) {
        c.has_meta = true;
        c.outer_iter = r.i64();
        c.opt_theta = get_adam(r, p);
        c.opt_beta = get_adam(r, bn);
    }
    if (!r.done()) throw BadHeader("trailing bytes after checkpoint");
    c.validate();
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
    return decode_checkpoint(read_file_bytes(path));
}

std::string read_file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFound("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (is.bad()) throw IoError("read failed: " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.flush();
    if (!os) throw IoError("write failed: " + path);
}

} // namespace metanerv
