#pragma once

#include "residiff/nn/layers.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace residiff::pipeline {

// Single-file model snapshot: a JSON header (format tag, config, tensor
// manifest) followed by raw little-endian float32 data in manifest order.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, nn::Tensor<float>>> tensors;

    const nn::Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ParamMap / buffer adapters.
void pack_params(Checkpoint& ck, const nn::ParamMap<float>& params);
void pack_buffers(Checkpoint& ck, const std::vector<std::pair<std::string, nn::Tensor<float>*>>& bufs);
void unpack_params(const Checkpoint& ck, nn::ParamMap<float>& params);
void unpack_buffers(const Checkpoint& ck,
                    const std::vector<std::pair<std::string, nn::Tensor<float>*>>& bufs);

} // namespace residiff::pipeline
