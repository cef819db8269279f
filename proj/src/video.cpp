#include "metanerv/video.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "metanerv/errors.hpp"
#include "metanerv/rng.hpp"

namespace fs = std::filesystem;

namespace metanerv {

double quantize_unit_f32(double v) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    return static_cast<double>(static_cast<float>(clamped));
}

void Video::validate() const {
    if (frames.empty()) throw EmptyVideo("video has no frames");
    const int fh = h(), fw = w();
    for (const Tensor& f : frames) {
        if (f.shape() != std::vector<int>{3, fh, fw}) {
            throw MixedResolutions("frames disagree on resolution");
        }
        for (double v : f.data()) {
            if (v < 0.0 || v > 1.0) throw DomainError("frame values must lie in [0,1]");
        }
    }
}

const char* family_name(SyntheticFamily f) {
    switch (f) {
    case SyntheticFamily::moving_box: return "moving_box";
    case SyntheticFamily::bouncing_ball: return "bouncing_ball";
    case SyntheticFamily::gradient_pan: return "gradient_pan";
    case SyntheticFamily::sector_scan: return "sector_scan";
    }
    throw DomainError("unknown synthetic family");
}

SyntheticFamily family_from_name(const std::string& name) {
    if (name == "moving_box") return SyntheticFamily::moving_box;
    if (name == "bouncing_ball") return SyntheticFamily::bouncing_ball;
    if (name == "gradient_pan") return SyntheticFamily::gradient_pan;
    if (name == "sector_scan") return SyntheticFamily::sector_scan;
    throw DomainError("unknown synthetic family: " + name);
}

namespace {

Tensor quantized_frame(std::vector<double> rgb, int h, int w) {
    for (double& v : rgb) v = quantize_unit_f32(v);
    return Tensor::from_data({3, h, w}, std::move(rgb));
}

struct BoxParams {
    double x0, y0, dirx, diry, box, r, g, b, bg;
};

Video gen_moving_box(const SyntheticSpec& spec) {
    Rng rng(mix_seed(spec.seed, 0x6d6f7662)); // family tag
    const int h = spec.height, w = spec.width;
    const double box = std::max(2.0, spec.size * std::min(h, w));
    BoxParams p;
    p.x0 = rng.uniform(0.0, w - box);
    p.y0 = rng.uniform(0.0, h - box);
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    p.dirx = std::cos(ang);
    p.diry = std::sin(ang);
    p.box = box;
    p.r = rng.uniform(0.6, 1.0);
    p.g = rng.uniform(0.6, 1.0);
    p.b = rng.uniform(0.6, 1.0);
    p.bg = rng.uniform(0.05, 0.25);

    Video video;
    for (int n = 0; n < spec.n_frames; ++n) {
        // Reflecting walk keeps the box fully inside the frame.
        auto bounce = [](double pos, double limit) {
            if (limit <= 0.0) return 0.0;
            double m = std::fmod(pos, 2.0 * limit);
            if (m < 0.0) m += 2.0 * limit;
            return m <= limit ? m : 2.0 * limit - m;
        };
        const double bx = bounce(p.x0 + n * spec.velocity * p.dirx, w - box);
        const double by = bounce(p.y0 + n * spec.velocity * p.diry, h - box);
        std::vector<double> rgb(static_cast<size_t>(3) * h * w, p.bg);
        const double base[3] = {p.r, p.g, p.b};
        for (int c = 0; c < 3; ++c) {
            const double val = p.bg + (base[c] - p.bg) * spec.contrast;
            for (int y = std::max(0, static_cast<int>(by));
                 y < std::min(h, static_cast<int>(by + box)); ++y) {
                for (int x = std::max(0, static_cast<int>(bx));
                     x < std::min(w, static_cast<int>(bx + box)); ++x) {
                    rgb[(static_cast<size_t>(c) * h + y) * w + x] = val;
                }
            }
        }
        video.frames.push_back(quantized_frame(std::move(rgb), h, w));
    }
    return video;
}

Video gen_bouncing_ball(const SyntheticSpec& spec) {
    Rng rng(mix_seed(spec.seed, 0x62616c6c));
    const int h = spec.height, w = spec.width;
    const double radius = std::max(1.5, spec.size * std::min(h, w) * 0.5);
    double x = rng.uniform(radius, w - radius);
    double y = rng.uniform(radius, h - radius);
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    double vx = spec.velocity * std::cos(ang);
    double vy = spec.velocity * std::sin(ang);
    const double hue[3] = {rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0)};
    const double bg = rng.uniform(0.0, 0.15);

    Video video;
    for (int n = 0; n < spec.n_frames; ++n) {
        std::vector<double> rgb(static_cast<size_t>(3) * h * w, bg);
        for (int yy = 0; yy < h; ++yy) {
            for (int xx = 0; xx < w; ++xx) {
                const double d = std::hypot(xx - x, yy - y);
                if (d < radius) {
                    // Radial falloff gives the disc a soft shaded look.
                    const double shade = 1.0 - 0.5 * (d / radius) * (d / radius);
                    for (int c = 0; c < 3; ++c) {
                        rgb[(static_cast<size_t>(c) * h + yy) * w + xx] =
                            bg + (hue[c] * shade - bg) * spec.contrast;
                    }
                }
            }
        }
        video.frames.push_back(quantized_frame(std::move(rgb), h, w));
        x += vx;
        y += vy;
        if (x < radius) { x = 2 * radius - x; vx = -vx; }
        if (x > w - radius) { x = 2 * (w - radius) - x; vx = -vx; }
        if (y < radius) { y = 2 * radius - y; vy = -vy; }
        if (y > h - radius) { y = 2 * (h - radius) - y; vy = -vy; }
    }
    return video;
}

Video gen_gradient_pan(const SyntheticSpec& spec) {
    Rng rng(mix_seed(spec.seed, 0x67726164));
    const int h = spec.height, w = spec.width;
    const double ax = rng.uniform(0.5, 1.5);
    const double ay = rng.uniform(0.5, 1.5);
    const double phase[3] = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
    const double speed = spec.velocity / std::max(1, spec.n_frames);

    Video video;
    for (int n = 0; n < spec.n_frames; ++n) {
        std::vector<double> rgb(static_cast<size_t>(3) * h * w);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const double u = ax * x / w + ay * y / h + n * speed + phase[c];
                    rgb[(static_cast<size_t>(c) * h + y) * w + x] =
                        0.5 + 0.5 * spec.contrast * std::sin(2.0 * M_PI * u);
                }
            }
        }
        video.frames.push_back(quantized_frame(std::move(rgb), h, w));
    }
    return video;
}

Video gen_sector_scan(const SyntheticSpec& spec) {
    Rng rng(mix_seed(spec.seed, 0x73656374));
    const int h = spec.height, w = spec.width;
    const double apex_x = w / 2.0 + rng.uniform(-w * 0.05, w * 0.05);
    const double apex_y = h - 1.0;
    const double rmax = 0.95 * h;
    const double half_width = rng.uniform(0.35, 0.55); // radians
    const double sweep_amp = rng.uniform(0.1, 0.2);
    const double band = rng.uniform(6.0, 10.0);

    Video video;
    for (int n = 0; n < spec.n_frames; ++n) {
        const double center =
            -M_PI / 2.0 + sweep_amp * std::sin(2.0 * M_PI * n * spec.velocity /
                                               std::max(8, spec.n_frames));
        std::vector<double> rgb(static_cast<size_t>(3) * h * w, 0.05);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double dx = x - apex_x;
                const double dy = y - apex_y;
                const double r = std::hypot(dx, dy);
                if (r < 1e-9 || r > rmax) continue;
                const double theta = std::atan2(dy, dx);
                if (std::fabs(theta - center) > half_width) continue;
                // Depth falloff plus faint concentric banding.
                double v = 0.75 - 0.45 * r / rmax + 0.08 * std::sin(r / band * 2.0 * M_PI);
                v = 0.05 + (v - 0.05) * spec.contrast;
                for (int c = 0; c < 3; ++c) {
                    rgb[(static_cast<size_t>(c) * h + y) * w + x] = v;
                }
            }
        }
        video.frames.push_back(quantized_frame(std::move(rgb), h, w));
    }
    return video;
}

} // namespace

Video generate_synthetic(const SyntheticSpec& spec) {
    if (spec.height < 1 || spec.width < 1 || spec.n_frames < 1) {
        throw InvalidShape("synthetic spec needs positive resolution and frame count");
    }
    Video video;
    switch (spec.family) {
    case SyntheticFamily::moving_box: video = gen_moving_box(spec); break;
    case SyntheticFamily::bouncing_ball: video = gen_bouncing_ball(spec); break;
    case SyntheticFamily::gradient_pan: video = gen_gradient_pan(spec); break;
    case SyntheticFamily::sector_scan: video = gen_sector_scan(spec); break;
    }
    video.id = std::string(family_name(spec.family)) + "_" + std::to_string(spec.seed);
    video.validate();
    return video;
}

Video add_noise(const Video& video, double sigma, uint64_t seed) {
    if (sigma < 0.0) throw DomainError("noise sigma must be nonnegative");
    video.validate();
    Video out;
    out.fps = video.fps;
    out.id = video.id.empty() ? "noisy" : video.id + "_noisy";
    if (sigma == 0.0) {
        for (const Tensor& f : video.frames) out.frames.push_back(f.clone());
        return out;
    }
    Rng rng(mix_seed(seed, 0x6e6f6973));
    for (const Tensor& f : video.frames) {
        std::vector<double> d = f.data();
        for (double& v : d) v = quantize_unit_f32(v + sigma * rng.normal());
        out.frames.push_back(Tensor::from_data(f.shape(), std::move(d)));
    }
    return out;
}

// -- persistence -------------------------------------------------------------

namespace {

constexpr char kRawMagic[4] = {'M', 'N', 'V', 'R'};

void write_u32(std::ofstream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw BadHeader("truncated raw video header");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void save_raw(const Video& video, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kRawMagic, 4);
    write_u32(os, static_cast<uint32_t>(video.n()));
    write_u32(os, static_cast<uint32_t>(video.h()));
    write_u32(os, static_cast<uint32_t>(video.w()));
    std::vector<float> plane;
    for (const Tensor& f : video.frames) {
        plane.assign(f.data().begin(), f.data().end());
        os.write(reinterpret_cast<const char*>(plane.data()),
                 static_cast<std::streamsize>(plane.size() * sizeof(float)));
    }
    if (!os) throw IoError("short write: " + path);
}

Video load_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFound("no such video file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kRawMagic, 4) != 0) {
        throw BadHeader("not a raw video container: " + path);
    }
    const uint32_t n = read_u32(is), h = read_u32(is), w = read_u32(is);
    if (n == 0 || h == 0 || w == 0) throw BadHeader("degenerate raw video dimensions");
    Video video;
    const size_t plane = static_cast<size_t>(3) * h * w;
    std::vector<float> buf(plane);
    for (uint32_t i = 0; i < n; ++i) {
        is.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(plane * sizeof(float)));
        if (!is) throw BadHeader("raw video shorter than its header promises");
        std::vector<double> d(plane);
        for (size_t j = 0; j < plane; ++j) d[j] = static_cast<double>(buf[j]);
        video.frames.push_back(
            Tensor::from_data({3, static_cast<int>(h), static_cast<int>(w)}, std::move(d)));
    }
    video.id = fs::path(path).stem().string();
    video.validate();
    return video;
}

void save_png_frame(const Tensor& frame, const std::string& path) {
    const int h = frame.shape()[1], w = frame.shape()[2];
    std::vector<unsigned char> rgb8(static_cast<size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = frame.data()[(static_cast<size_t>(c) * h + y) * w + x];
                rgb8[(static_cast<size_t>(y) * w + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    png_image im;
    std::memset(&im, 0, sizeof(im));
    im.version = PNG_IMAGE_VERSION;
    im.width = static_cast<png_uint_32>(w);
    im.height = static_cast<png_uint_32>(h);
    im.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&im, path.c_str(), 0, rgb8.data(), 0, nullptr)) {
        throw IoError(std::string("png write failed: ") + im.message);
    }
}

Tensor load_png_frame(const std::string& path) {
    png_image im;
    std::memset(&im, 0, sizeof(im));
    im.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&im, path.c_str())) {
        throw BadHeader(std::string("png read failed: ") + im.message);
    }
    im.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> rgb8(PNG_IMAGE_SIZE(im));
    if (!png_image_finish_read(&im, nullptr, rgb8.data(), 0, nullptr)) {
        throw BadHeader(std::string("png decode failed: ") + im.message);
    }
    const int h = static_cast<int>(im.height), w = static_cast<int>(im.width);
    std::vector<double> d(static_cast<size_t>(3) * h * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                d[(static_cast<size_t>(c) * h + y) * w + x] = quantize_unit_f32(
                    rgb8[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0);
            }
        }
    }
    return Tensor::from_data({3, h, w}, std::move(d));
}

std::string frame_filename(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d.png", index);
    return buf;
}

} // namespace

void save_video(const Video& video, const std::string& path) {
    video.validate();
    if (fs::path(path).extension() == ".mnvr") {
        if (fs::path(path).has_parent_path()) {
            fs::create_directories(fs::path(path).parent_path());
        }
        save_raw(video, path);
        return;
    }
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory: " + path);
    for (int i = 0; i < video.n(); ++i) {
        save_png_frame(video.frames[i], (fs::path(path) / frame_filename(i + 1)).string());
    }
}

Video load_video(const std::string& path) {
    if (fs::is_regular_file(path)) {
        return load_raw(path);
    }
    if (!fs::is_directory(path)) {
        throw NotFound("no such video path: " + path);
    }
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(path)) {
        if (entry.path().extension() == ".png") names.push_back(entry.path().string());
    }
    if (names.empty()) throw NotFound("no PNG frames under: " + path);
    std::sort(names.begin(), names.end());
    Video video;
    for (const std::string& name : names) {
        Tensor frame = load_png_frame(name);
        if (!video.frames.empty() && frame.shape() != video.frames[0].shape()) {
            throw MixedResolutions("frame sizes differ under: " + path);
        }
        video.frames.push_back(std::move(frame));
    }
    video.id = fs::path(path).filename().string();
    video.validate();
    return video;
}

} // namespace metanerv
