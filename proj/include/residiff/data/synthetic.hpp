#pragma once

#include "residiff/grid.hpp"
#include "residiff/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace residiff::data {

// Planar RGB image, channels-first, values in [0,1].
struct Image {
    int height = 0, width = 0;
    std::vector<float> rgb; // 3 * height * width

    float& at(int c, int y, int x) { return rgb[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return rgb[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

struct DatasetSample {
    std::string id;
    Image image;
    BinaryMap mask;
};

// One camouflage image: a procedural noise background and one or two blob
// foregrounds filled with the same texture family under a parameter offset
// scaled by `strength` (lower strength = harder camouflage). The mask's
// foreground fraction always lands in [0.02, 0.6].
DatasetSample generate_camo_sample(std::uint64_t seed, int size, double strength);

// 8-bit quantization used for PNG output; hashing runs over these bytes so
// identity is stable across a save/load round trip.
std::vector<std::uint8_t> quantize_image(const Image& img);
std::uint64_t image_content_hash(const Image& img);

double foreground_fraction(const BinaryMap& mask);
double mean_intensity_gap(const DatasetSample& s);

} // namespace residiff::data
