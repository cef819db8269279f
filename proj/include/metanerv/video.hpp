#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metanerv/tensor.hpp"

namespace metanerv {

/// Frame sequence in [0,1] RGB. Every value is exactly representable as an
/// f32 so the raw container round-trips bitwise.
struct Video {
    std::vector<Tensor> frames; // each 3 x H x W
    double fps = 0.0;           // metadata only; 0 means unset
    std::string id;

    int n() const { return static_cast<int>(frames.size()); }
    int h() const { return frames.at(0).shape()[1]; }
    int w() const { return frames.at(0).shape()[2]; }

    void validate() const;
};

enum class SyntheticFamily : uint8_t {
    moving_box = 0,
    bouncing_ball = 1,
    gradient_pan = 2,
    sector_scan = 3,
};

const char* family_name(SyntheticFamily f);
SyntheticFamily family_from_name(const std::string& name);

struct SyntheticSpec {
    SyntheticFamily family = SyntheticFamily::moving_box;
    int height = 48;
    int width = 40;
    int n_frames = 8;
    uint64_t seed = 0;
    double velocity = 2.0; // pixels per frame
    double size = 0.25;    // object size as a fraction of the short side
    double contrast = 1.0;
};

/// A pure function of its argument; adjacent frames differ by small motion.
Video generate_synthetic(const SyntheticSpec& spec);

/// i.i.d. Gaussian noise per element, clamped back to [0,1].
Video add_noise(const Video& video, double sigma, uint64_t seed);

/// Path ending in ".mnvr" selects the raw container; otherwise the path is a
/// directory of numbered PNG frames ("000001.png", ...).
Video load_video(const std::string& path);
void save_video(const Video& video, const std::string& path);

/// Round to the nearest f32 and clamp to [0,1]; applied by every producer.
double quantize_unit_f32(double v);

} // namespace metanerv
