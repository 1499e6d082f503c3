#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "residiff/data/dataset.hpp"
#include "residiff/models/segmenter.hpp"

#include <filesystem>
#include <fstream>

using namespace residiff;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const char* tag) {
    auto p = fs::temp_directory_path() / (std::string("residiff_test_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}
} // namespace

TEST_CASE("sample generation is bit-deterministic") {
    auto a = data::generate_camo_sample(123, 64, 0.4);
    auto b = data::generate_camo_sample(123, 64, 0.4);
    REQUIRE(a.image.rgb == b.image.rgb);
    for (std::size_t i = 0; i < a.mask.size(); ++i) REQUIRE(a.mask[i] == b.mask[i]);
    auto c = data::generate_camo_sample(124, 64, 0.4);
    CHECK(a.image.rgb != c.image.rgb);
}

TEST_CASE("area fraction always lands in the valid band") {
    for (int i = 0; i < 1000; ++i) {
        auto s = data::generate_camo_sample(10'000 + i, 64, 0.4);
        const double frac = data::foreground_fraction(s.mask);
        REQUIRE(frac >= 0.02);
        REQUIRE(frac <= 0.6);
    }
}

TEST_CASE("full camouflage strength separates the mean intensities") {
    int clear = 0;
    double min_gap = 1.0;
    for (int i = 0; i < 100; ++i) {
        auto s = data::generate_camo_sample(20'000 + i, 64, 1.0);
        const double gap = data::mean_intensity_gap(s);
        min_gap = std::min(min_gap, gap);
        if (gap > 0.2) ++clear;
    }
    MESSAGE("min gap at strength 1: ", min_gap);
    CHECK(clear == 100);
    // low strength means harder camouflage on average
    double avg_low = 0.0, avg_high = 0.0;
    for (int i = 0; i < 40; ++i) {
        avg_low += data::mean_intensity_gap(data::generate_camo_sample(30'000 + i, 64, 0.1));
        avg_high += data::mean_intensity_gap(data::generate_camo_sample(30'000 + i, 64, 1.0));
    }
    CHECK(avg_low < avg_high);
}

TEST_CASE("dataset write / load round trip") {
    auto dir = temp_dir("roundtrip");
    data::DatasetManifest m;
    m.seed = 7;
    m.train_count = 6;
    m.test_count = 3;
    m.image_size = 32;
    data::write_dataset(m, dir);

    auto ds = data::load_dataset(dir);
    CHECK(ds.train.size() == 6);
    CHECK(ds.test.size() == 3);
    CHECK(ds.manifest.seed == 7);

    // masks must round-trip exactly; images within 8-bit quantization
    for (int i = 0; i < 6; ++i) {
        const auto fresh = data::generate_camo_sample(
            derive_seed(7, (std::uint64_t(1) << 32) | std::uint64_t(i)), 32, m.strength);
        const auto& loaded = ds.train[i];
        for (std::size_t px = 0; px < fresh.mask.size(); ++px)
            REQUIRE(loaded.mask[px] == fresh.mask[px]);
        for (std::size_t px = 0; px < fresh.image.rgb.size(); ++px)
            REQUIRE(std::abs(loaded.image.rgb[px] - fresh.image.rgb[px]) <= 0.5f / 255.0f + 1e-6f);
    }
    fs::remove_all(dir);
}

TEST_CASE("regeneration from the same manifest is byte-identical") {
    auto dir1 = temp_dir("regen1");
    auto dir2 = temp_dir("regen2");
    data::DatasetManifest m;
    m.seed = 99;
    m.train_count = 4;
    m.test_count = 2;
    m.image_size = 32;
    data::write_dataset(m, dir1);
    const auto text = file_bytes(dir1 / "manifest.json");
    data::write_dataset(data::DatasetManifest::from_json(text), dir2);
    for (const char* rel : {"train/images/train_0000.png", "train/masks/train_0003.png",
                            "test/images/test_0001.png", "test/masks/test_0000.png"})
        REQUIRE(file_bytes(dir1 / rel) == file_bytes(dir2 / rel));
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("missing mask file raises a corpus error") {
    auto dir = temp_dir("corrupt");
    data::DatasetManifest m;
    m.seed = 3;
    m.train_count = 2;
    m.test_count = 1;
    m.image_size = 32;
    data::write_dataset(m, dir);
    fs::remove(dir / "train" / "masks" / "train_0001.png");
    CHECK_THROWS_AS(data::load_dataset(dir), data::DataError);
    fs::remove_all(dir);
}

TEST_CASE("image hashing is stable across the png round trip") {
    auto dir = temp_dir("hash");
    auto s = data::generate_camo_sample(42, 32, 0.5);
    data::write_image_png(dir / "img.png", s.image);
    auto loaded = data::read_image_png(dir / "img.png");
    CHECK(data::image_content_hash(s.image) == data::image_content_hash(loaded));
    fs::remove_all(dir);
}

TEST_CASE("default corruption spec yields coarse masks in the target error band") {
    // measured over a reduced corpus; the full-corpus check runs in acceptance
    data::CorruptionSpec spec;
    double total = 0.0;
    const int n = 60;
    for (int i = 0; i < n; ++i) {
        auto s = data::generate_camo_sample(50'000 + i, 64, 0.4);
        Rng rng(derive_seed(5, data::image_content_hash(s.image)));
        auto mc = models::corrupt_mask(s.mask, spec, rng);
        double err = 0.0;
        for (std::size_t px = 0; px < mc.size(); ++px) err += std::abs(mc[px] - s.mask[px]);
        total += err / static_cast<double>(mc.size());
    }
    const double mean_mae = total / n;
    MESSAGE("corpus-mean coarse MAE: ", mean_mae);
    CHECK(mean_mae >= 0.03);
    CHECK(mean_mae <= 0.08);
}
