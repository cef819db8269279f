#pragma once

#include "bytes.hpp"
#include "metanerv/model.hpp"

// Model-config byte codec shared by the checkpoint and compressed containers.
namespace metanerv::bytes {

inline void put_model_config(std::string& out, const ModelConfig& cfg) {
    put_i32(out, cfg.seed_h);
    put_i32(out, cfg.seed_w);
    put_u32(out, static_cast<uint32_t>(cfg.scale_factors.size()));
    for (int s : cfg.scale_factors) put_i32(out, s);
    put_u32(out, static_cast<uint32_t>(cfg.channels.size()));
    for (int c : cfg.channels) put_i32(out, c);
    put_i32(out, cfg.pe_l);
    put_f64(out, cfg.pe_b);
    put_i32(out, cfg.embed_dim);
    put_i32(out, cfg.norm_dim);
    put_u8(out, static_cast<uint8_t>(cfg.t_norm));
}

inline ModelConfig get_model_config(Reader& r) {
    ModelConfig cfg;
    cfg.seed_h = r.i32();
    cfg.seed_w = r.i32();
    cfg.scale_factors.assign(r.u32(), 0);
    for (int& s : cfg.scale_factors) s = r.i32();
    cfg.channels.assign(r.u32(), 0);
    for (int& c : cfg.channels) c = r.i32();
    cfg.pe_l = r.i32();
    cfg.pe_b = r.f64();
    cfg.embed_dim = r.i32();
    cfg.norm_dim = r.i32();
    const uint8_t tn = r.u8();
    if (tn > 1) throw BadHeader("unknown time normalization id");
    cfg.t_norm = static_cast<TNorm>(tn);
    cfg.validate();
    return cfg;
}

} // namespace metanerv::bytes
