#include "residiff/pipeline/checkpoint.hpp"

#include "residiff/data/dataset.hpp"

#include <cstring>
#include <fstream>

namespace residiff::pipeline {

using nlohmann::json;

namespace {
constexpr char kMagic[4] = {'R', 'D', 'F', 'C'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void read_raw(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
}
} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    json header;
    header["meta"] = ck.meta;
    header["tensors"] = json::array();
    for (const auto& [name, t] : ck.tensors) {
        json e;
        e["name"] = name;
        e["shape"] = t.shape;
        header["tensors"].push_back(e);
    }
    const std::string hs = header.dump();

    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data::DataError("cannot open checkpoint for writing: " + path.string());
    out.write(kMagic, 4);
    write_raw(out, kVersion);
    const std::uint64_t hlen = hs.size();
    write_raw(out, hlen);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : ck.tensors)
        out.write(reinterpret_cast<const char*>(t.ptr()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw data::DataError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data::DataError("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    std::uint32_t version = 0;
    read_raw(in, version);
    if (!in || std::memcmp(magic, kMagic, 4) != 0 || version != kVersion)
        throw data::DataError("bad checkpoint header: " + path.string());
    std::uint64_t hlen = 0;
    read_raw(in, hlen);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    json header = json::parse(hs);

    Checkpoint ck;
    ck.meta = header.value("meta", json::object());
    for (const auto& e : header["tensors"]) {
        const std::string name = e["name"];
        nn::Shape shape = e["shape"].get<nn::Shape>();
        nn::Tensor<float> t(shape);
        in.read(reinterpret_cast<char*>(t.ptr()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        ck.tensors.emplace_back(name, std::move(t));
    }
    if (!in) throw data::DataError("truncated checkpoint: " + path.string());
    return ck;
}

void pack_params(Checkpoint& ck, const nn::ParamMap<float>& params) {
    for (const auto& [name, v] : params.items) ck.tensors.emplace_back(name, v.value());
}

void pack_buffers(Checkpoint& ck,
                  const std::vector<std::pair<std::string, nn::Tensor<float>*>>& bufs) {
    for (const auto& [name, t] : bufs) ck.tensors.emplace_back(name, *t);
}

void unpack_params(const Checkpoint& ck, nn::ParamMap<float>& params) {
    for (auto& [name, v] : params.items) {
        const auto* t = ck.find(name);
        if (t == nullptr) throw data::DataError("checkpoint missing tensor " + name);
        if (t->shape != v.shape())
            throw data::DataError("checkpoint shape mismatch for " + name + ": stored " +
                                  nn::shape_str(t->shape) + " vs model " + nn::shape_str(v.shape()));
        v.value().data = t->data;
    }
}

void unpack_buffers(const Checkpoint& ck,
                    const std::vector<std::pair<std::string, nn::Tensor<float>*>>& bufs) {
    for (const auto& [name, t] : bufs) {
        const auto* src = ck.find(name);
        if (src == nullptr) throw data::DataError("checkpoint missing buffer " + name);
        if (src->shape != t->shape) throw data::DataError("checkpoint buffer shape mismatch " + name);
        t->data = src->data;
    }
}

} // namespace residiff::pipeline
