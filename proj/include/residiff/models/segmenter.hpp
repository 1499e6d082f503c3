#pragma once

#include "residiff/data/dataset.hpp"
#include "residiff/models/uncertainty_net.hpp"

#include <array>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

namespace residiff::models {

// Frozen multi-resolution features exposed by a prior segmenter; levels at
// strides 4/8/16/32 with channels {32,64,128,256}.
struct FeaturePyramid {
    std::array<nn::Tensor<float>, 4> levels;
};

inline constexpr std::array<int, 4> kPriorChannels{32, 64, 128, 256};

nn::Tensor<float> image_to_tensor(const data::Image& img);

// Ground-truth uncertainty: per-pixel L1 distance between the coarse mask and
// the hard reference.
UncertaintyMap uncertainty_gt(const ProbMap& coarse, const BinaryMap& gt);

// Degrades a clean mask into a plausible coarse prediction.
ProbMap corrupt_mask(const BinaryMap& gt, const data::CorruptionSpec& spec, Rng& rng);

class PriorSegmenter {
public:
    virtual ~PriorSegmenter() = default;
    virtual ProbMap coarse_mask(const data::Image& image) const = 0;
    virtual FeaturePyramid features(const data::Image& image) const = 0;
    virtual std::uint64_t checksum() const = 0;
    virtual std::string kind() const = 0;

    std::pair<ProbMap, FeaturePyramid> segment(const data::Image& image) const {
        return {coarse_mask(image), features(image)};
    }
};

// Oracle prior: serves precomputed corruptions of the ground truth, keyed by
// image content, with features from a fixed random-parameter encoder. Only
// valid for images it was constructed over.
class CorruptedOracleSegmenter : public PriorSegmenter {
public:
    CorruptedOracleSegmenter(const std::vector<const data::DatasetSample*>& samples,
                             const data::CorruptionSpec& spec, std::uint64_t seed);

    ProbMap coarse_mask(const data::Image& image) const override;
    FeaturePyramid features(const data::Image& image) const override;
    std::uint64_t checksum() const override;
    std::string kind() const override { return "corrupted_oracle"; }

    const data::CorruptionSpec& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }
    Encoder<float>& encoder() { return encoder_; }
    const Encoder<float>& encoder() const { return encoder_; }

private:
    data::CorruptionSpec spec_;
    std::uint64_t seed_ = 0;
    Encoder<float> encoder_;
    std::unordered_map<std::uint64_t, ProbMap> table_;
};

// Small trainable encoder-decoder, deliberately under-fit and then frozen.
class ToyCnnSegmenter : public PriorSegmenter {
public:
    explicit ToyCnnSegmenter(std::uint64_t seed);

    ProbMap coarse_mask(const data::Image& image) const override;
    FeaturePyramid features(const data::Image& image) const override;
    std::uint64_t checksum() const override;
    std::string kind() const override { return "toy_cnn"; }

    void collect(nn::ParamMap<float>& m, const std::string& prefix) const;
    nn::Var<float> forward_mask(const nn::Var<float>& image) const; // differentiable path

private:
    Encoder<float> encoder_;
    nn::ConvT2xLayer<float> up3_, up2_, up1_;
    nn::Conv2dLayer<float> c3_, c2_, c1_, proj_;
};

// Trains a ToyCnnSegmenter with plain BCE for a few epochs.
std::unique_ptr<ToyCnnSegmenter> train_toy_segmenter(const std::vector<data::DatasetSample>& train,
                                                     int epochs, std::uint64_t seed);

std::uint64_t params_checksum(const nn::ParamMap<float>& params);

} // namespace residiff::models
