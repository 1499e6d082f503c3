#include "residiff/data/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>

namespace residiff::data {

using nlohmann::json;

namespace {

json corruption_to_json(const CorruptionSpec& c) {
    return json{{"morph_radius_min", c.morph_radius_min}, {"morph_radius_max", c.morph_radius_max},
                {"blur_sigma_min", c.blur_sigma_min},     {"blur_sigma_max", c.blur_sigma_max},
                {"false_blob_min", c.false_blob_min},     {"false_blob_max", c.false_blob_max},
                {"drop_blob_min", c.drop_blob_min},       {"drop_blob_max", c.drop_blob_max},
                {"softness", c.softness}};
}

CorruptionSpec corruption_from_json(const json& j) {
    CorruptionSpec c;
    c.morph_radius_min = j.value("morph_radius_min", c.morph_radius_min);
    c.morph_radius_max = j.value("morph_radius_max", c.morph_radius_max);
    c.blur_sigma_min = j.value("blur_sigma_min", c.blur_sigma_min);
    c.blur_sigma_max = j.value("blur_sigma_max", c.blur_sigma_max);
    c.false_blob_min = j.value("false_blob_min", c.false_blob_min);
    c.false_blob_max = j.value("false_blob_max", c.false_blob_max);
    c.drop_blob_min = j.value("drop_blob_min", c.drop_blob_min);
    c.drop_blob_max = j.value("drop_blob_max", c.drop_blob_max);
    c.softness = j.value("softness", c.softness);
    if (c.morph_radius_min < 0 || c.blur_sigma_min < 0 || c.false_blob_min < 0 || c.drop_blob_min < 0)
        throw DataError("corruption spec: negative range");
    return c;
}

std::string sample_id(const DatasetManifest& m, const char* split, int index) {
    (void)m;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%04d", split, index);
    return buf;
}

std::uint64_t sample_seed(const DatasetManifest& m, const char* split, int index) {
    const std::uint64_t split_tag = std::string(split) == "train" ? 1 : 2;
    return derive_seed(m.seed, (split_tag << 32) | static_cast<std::uint64_t>(index));
}

} // namespace

std::string DatasetManifest::to_json() const {
    json j{{"seed", seed},
           {"train_count", train_count},
           {"test_count", test_count},
           {"image_size", image_size},
           {"strength", strength},
           {"texture_octaves", texture_octaves},
           {"corruption", corruption_to_json(corruption)}};
    return j.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    json j = json::parse(text);
    DatasetManifest m;
    m.seed = j.value("seed", m.seed);
    m.train_count = j.value("train_count", m.train_count);
    m.test_count = j.value("test_count", m.test_count);
    m.image_size = j.value("image_size", m.image_size);
    m.strength = j.value("strength", m.strength);
    m.texture_octaves = j.value("texture_octaves", m.texture_octaves);
    if (j.contains("corruption")) m.corruption = corruption_from_json(j["corruption"]);
    return m;
}

void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    for (const char* split : {"train", "test"}) {
        fs::create_directories(root / split / "images");
        fs::create_directories(root / split / "masks");
        const int count = std::string(split) == "train" ? manifest.train_count : manifest.test_count;
        for (int i = 0; i < count; ++i) {
            const auto sample =
                generate_camo_sample(sample_seed(manifest, split, i), manifest.image_size,
                                     manifest.strength);
            const std::string id = sample_id(manifest, split, i);
            write_image_png(root / split / "images" / (id + ".png"), sample.image);
            write_mask_png(root / split / "masks" / (id + ".png"), sample.mask);
        }
    }
    std::ofstream out(root / "manifest.json");
    out << manifest.to_json() << "\n";
    if (!out) throw DataError("failed to write manifest");
}

Dataset load_dataset(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::ifstream in(root / "manifest.json");
    if (!in) throw DataError("missing manifest: " + (root / "manifest.json").string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Dataset ds;
    ds.manifest = DatasetManifest::from_json(text);
    for (const char* split : {"train", "test"}) {
        auto& dst = std::string(split) == "train" ? ds.train : ds.test;
        const fs::path img_dir = root / split / "images";
        if (!fs::exists(img_dir)) throw DataError("missing split directory " + img_dir.string());
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(img_dir))
            if (e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            DatasetSample s;
            s.id = f.stem().string();
            s.image = read_image_png(f);
            const fs::path mask_path = root / split / "masks" / f.filename();
            if (!fs::exists(mask_path))
                throw DataError("corrupt dataset: missing mask for " + s.id);
            s.mask = read_mask_png(mask_path);
            if (s.mask.height() != s.image.height || s.mask.width() != s.image.width)
                throw DataError("corrupt dataset: size mismatch for " + s.id);
            dst.push_back(std::move(s));
        }
    }
    return ds;
}

} // namespace residiff::data
