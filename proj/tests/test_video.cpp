#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "metanerv/video.hpp"

using namespace metanerv;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "metanerv_video_tests";
    fs::create_directories(dir);
    return dir;
}

bool frames_bitwise_equal(const Video& a, const Video& b) {
    if (a.n() != b.n()) return false;
    for (int i = 0; i < a.n(); ++i) {
        const auto& da = a.frames[i].data();
        const auto& db = b.frames[i].data();
        if (da.size() != db.size()) return false;
        if (std::memcmp(da.data(), db.data(), da.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

} // namespace

TEST_CASE("synthetic generation is deterministic") {
    for (auto family : {SyntheticFamily::moving_box, SyntheticFamily::bouncing_ball,
                        SyntheticFamily::gradient_pan, SyntheticFamily::sector_scan}) {
        SyntheticSpec spec;
        spec.family = family;
        spec.seed = 77;
        Video a = generate_synthetic(spec);
        Video b = generate_synthetic(spec);
        CHECK(frames_bitwise_equal(a, b));
        CHECK(a.n() == 8);
        a.validate();
    }
}

TEST_CASE("moving box with zero velocity is static") {
    SyntheticSpec spec;
    spec.family = SyntheticFamily::moving_box;
    spec.velocity = 0.0;
    spec.seed = 5;
    Video v = generate_synthetic(spec);
    for (int i = 1; i < v.n(); ++i) {
        CHECK(v.frames[i].data() == v.frames[0].data());
    }
}

TEST_CASE("bouncing ball moves gently between frames") {
    SyntheticSpec spec;
    spec.family = SyntheticFamily::bouncing_ball;
    spec.height = 48;
    spec.width = 40;
    spec.n_frames = 8;
    spec.seed = 12;
    Video v = generate_synthetic(spec);
    for (int i = 1; i < v.n(); ++i) {
        double l1 = 0.0;
        for (size_t j = 0; j < v.frames[i].data().size(); ++j) {
            l1 += std::fabs(v.frames[i].data()[j] - v.frames[i - 1].data()[j]);
        }
        l1 /= static_cast<double>(v.frames[i].data().size());
        CHECK(l1 > 0.0);
        CHECK(l1 < 0.1);
    }
}

TEST_CASE("every family emits in-range f32-exact frames") {
    for (auto family : {SyntheticFamily::moving_box, SyntheticFamily::bouncing_ball,
                        SyntheticFamily::gradient_pan, SyntheticFamily::sector_scan}) {
        for (uint64_t seed : {1ull, 9ull, 42ull}) {
            SyntheticSpec spec;
            spec.family = family;
            spec.seed = seed;
            spec.height = 24;
            spec.width = 20;
            spec.n_frames = 4;
            Video v = generate_synthetic(spec);
            v.validate();
            for (const Tensor& f : v.frames) {
                for (double x : f.data()) {
                    CHECK(x == static_cast<double>(static_cast<float>(x)));
                }
            }
        }
    }
}

TEST_CASE("raw container round trip is bitwise exact") {
    SyntheticSpec spec;
    spec.family = SyntheticFamily::gradient_pan;
    spec.seed = 3;
    Video v = generate_synthetic(spec);
    const auto path = (temp_dir() / "roundtrip.mnvr").string();
    save_video(v, path);
    Video loaded = load_video(path);
    CHECK(frames_bitwise_equal(v, loaded));
    CHECK(loaded.id == "roundtrip");
}

TEST_CASE("png round trip stays within 8-bit rounding") {
    SyntheticSpec spec;
    spec.family = SyntheticFamily::bouncing_ball;
    spec.seed = 8;
    spec.height = 16;
    spec.width = 12;
    spec.n_frames = 3;
    Video v = generate_synthetic(spec);
    const auto dir = (temp_dir() / "png_seq").string();
    fs::remove_all(dir);
    save_video(v, dir);
    Video loaded = load_video(dir);
    REQUIRE(loaded.n() == v.n());
    double max_err = 0.0;
    for (int i = 0; i < v.n(); ++i) {
        for (size_t j = 0; j < v.frames[i].data().size(); ++j) {
            max_err = std::max(max_err,
                               std::fabs(v.frames[i].data()[j] - loaded.frames[i].data()[j]));
        }
    }
    CHECK(max_err <= 1.0 / 255.0 + 1e-9);
}

TEST_CASE("mixed frame sizes are rejected") {
    SyntheticSpec spec;
    spec.family = SyntheticFamily::moving_box;
    spec.seed = 4;
    spec.n_frames = 1;
    spec.height = 16;
    spec.width = 16;
    Video big = generate_synthetic(spec);
    spec.height = 8;
    spec.width = 8;
    Video small = generate_synthetic(spec);

    const auto dir = temp_dir() / "mixed";
    const auto other = temp_dir() / "mixed_other";
    fs::remove_all(dir);
    fs::remove_all(other);
    save_video(big, dir.string());
    save_video(small, other.string());
    fs::copy_file(other / "000001.png", dir / "000002.png");
    CHECK_THROWS_AS((void)load_video(dir.string()), MixedResolutions);
}

TEST_CASE("missing paths and corrupt headers are reported") {
    CHECK_THROWS_AS((void)load_video((temp_dir() / "nope.mnvr").string()), NotFound);
    CHECK_THROWS_AS((void)load_video((temp_dir() / "nope_dir").string()), NotFound);

    const auto bad = temp_dir() / "bad.mnvr";
    std::ofstream os(bad, std::ios::binary);
    os << "JUNKDATA";
    os.close();
    CHECK_THROWS_AS((void)load_video(bad.string()), BadHeader);
}

TEST_CASE("noise injection: identity, statistics, range") {
    SyntheticSpec spec;
    spec.family = SyntheticFamily::moving_box;
    spec.seed = 21;
    Video v = generate_synthetic(spec);
    Video same = add_noise(v, 0.0, 99);
    CHECK(frames_bitwise_equal(v, same));

    // Constant mid-gray video, 20 frames of 48x40: > 1e5 samples.
    Video gray;
    for (int i = 0; i < 20; ++i) gray.frames.push_back(Tensor::full({3, 48, 40}, 0.5));
    Video noisy = add_noise(gray, 0.1, 7);
    double sum = 0.0, sum2 = 0.0;
    size_t count = 0;
    for (const Tensor& f : noisy.frames) {
        for (double x : f.data()) {
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
            const double d = x - 0.5;
            sum += d;
            sum2 += d * d;
            ++count;
        }
    }
    REQUIRE(count >= 100000);
    const double mean = sum / count;
    const double std = std::sqrt(sum2 / count - mean * mean);
    CHECK(std > 0.09);
    CHECK(std < 0.11);

    Video n1 = add_noise(gray, 0.1, 7);
    CHECK(frames_bitwise_equal(noisy, n1));
}
