#pragma once

#include "residiff/data/synthetic.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace residiff::data {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Degradation applied to the ground truth to fake a plausible coarse
// segmentation: boundary dilation/erosion, blur, spurious and dropped blobs.
struct CorruptionSpec {
    double morph_radius_min = 1.0;
    double morph_radius_max = 2.5;
    double blur_sigma_min = 0.3;
    double blur_sigma_max = 0.8;
    int false_blob_min = 0;
    int false_blob_max = 2;
    int drop_blob_min = 0;
    int drop_blob_max = 2;
    double softness = 0.15; // scales how soft the final probabilities are
};

struct DatasetManifest {
    std::uint64_t seed = 42;
    int train_count = 500;
    int test_count = 100;
    int image_size = 64;
    double strength = 0.4; // foreground/background parameter offset
    int texture_octaves = 3;
    CorruptionSpec corruption;

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
};

// Layout: root/{train,test}/{images,masks}/<id>.png + root/manifest.json.
void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& root);

struct Dataset {
    DatasetManifest manifest;
    std::vector<DatasetSample> train;
    std::vector<DatasetSample> test;
};

Dataset load_dataset(const std::filesystem::path& root);

// PNG helpers (8-bit, images RGB / masks grayscale binarized at >127).
void write_image_png(const std::filesystem::path& path, const Image& img);
void write_mask_png(const std::filesystem::path& path, const Grid& mask);
Image read_image_png(const std::filesystem::path& path);
BinaryMap read_mask_png(const std::filesystem::path& path);
ProbMap read_probmap_png(const std::filesystem::path& path);

} // namespace residiff::data
