#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sadm/model.hpp"

namespace sadm {

inline constexpr int kCheckpointVersion = 1;

// A checkpoint is two files: <base>.json (manifest) and <base>.bin (all
// parameters then batch-norm buffers as little-endian float64).
struct CheckpointPaths {
    std::string manifest;
    std::string blob;
};

inline CheckpointPaths checkpoint_paths(const std::string& path) {
    std::string base = path;
    if (base.ends_with(".json") || base.ends_with(".bin")) base = std::filesystem::path(base).replace_extension().string();
    return {base + ".json", base + ".bin"};
}

namespace detail {

inline void put_le(std::vector<unsigned char>& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
}

inline double get_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    return std::bit_cast<double>(bits);
}

inline nlohmann::json config_json(const ModelConfig& c) {
    return {{"d_h", c.d_h},
            {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},
            {"ff_hidden", c.ff_hidden},
            {"clip", c.clip},
            {"activations", {{"attention", to_string(c.attention)}, {"output", to_string(c.output)}}}};
}

}  // namespace detail

// Writes the checkpoint; `extra` is stored verbatim under "meta".
inline void save_checkpoint(ModelParams& params, const std::string& path, const nlohmann::json& extra = nullptr) {
    const auto files = checkpoint_paths(path);
    nlohmann::json table = nlohmann::json::array();
    std::vector<unsigned char> blob;
    auto add = [&](const std::string& name, const Array& a, const char* kind) {
        table.push_back({{"name", name}, {"kind", kind}, {"shape", a.shape()}, {"offset", blob.size()}});
        for (double v : a.values()) detail::put_le(blob, v);
    };
    for (auto& [name, v] : params.named_parameters()) add(name, v.value(), "parameter");
    for (auto& [name, a] : params.named_buffers()) add(name, *a, "buffer");

    nlohmann::json manifest = detail::config_json(params.config);
    manifest["format"] = "sadm-checkpoint";
    manifest["version"] = kCheckpointVersion;
    manifest["dtype"] = "float64-le";
    manifest["blob"] = std::filesystem::path(files.blob).filename().string();
    manifest["blob_bytes"] = blob.size();
    manifest["tensors"] = table;
    if (!extra.is_null()) manifest["meta"] = extra;

    if (auto dir = std::filesystem::path(files.manifest).parent_path(); !dir.empty()) {
        std::filesystem::create_directories(dir);
    }
    std::ofstream bin(files.blob, std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot open '" + files.blob + "' for writing");
    bin.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    std::ofstream js(files.manifest, std::ios::trunc);
    if (!js) throw IoError("cannot open '" + files.manifest + "' for writing");
    js << manifest.dump(2) << '\n';
    if (!bin || !js) throw IoError("writing checkpoint '" + path + "' failed");
}

inline nlohmann::json read_checkpoint_manifest(const std::string& path) {
    const auto files = checkpoint_paths(path);
    std::ifstream js(files.manifest);
    if (!js) throw IoError("cannot open checkpoint manifest '" + files.manifest + "'");
    nlohmann::json m;
    try {
        js >> m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(files.manifest + ": " + e.what());
    }
    if (m.value("format", "") != "sadm-checkpoint") throw VersionError(files.manifest + ": not a checkpoint manifest");
    if (m.value("version", -1) != kCheckpointVersion) {
        throw VersionError(files.manifest + ": checkpoint version " + m.value("version", nlohmann::json(-1)).dump() +
                           ", expected " + std::to_string(kCheckpointVersion));
    }
    return m;
}

inline ModelConfig config_from_manifest(const nlohmann::json& m) {
    ModelConfig c;
    c.d_h = m.at("d_h").get<std::size_t>();
    c.n_layers = m.at("n_layers").get<std::size_t>();
    c.n_heads = m.at("n_heads").get<std::size_t>();
    c.ff_hidden = m.at("ff_hidden").get<std::size_t>();
    c.clip = m.at("clip").get<double>();
    c.attention = activation_from_string(m.at("activations").at("attention").get<std::string>());
    c.output = activation_from_string(m.at("activations").at("output").get<std::string>());
    return c;
}

// Loads values into `params`, whose configuration must match the manifest.
inline void load_checkpoint_into(ModelParams& params, const std::string& path) {
    const auto files = checkpoint_paths(path);
    const auto m = read_checkpoint_manifest(path);
    if (!(config_from_manifest(m) == params.config)) {
        throw VersionError(files.manifest + ": model configuration " + detail::config_json(config_from_manifest(m)).dump() +
                           " does not match expected " + detail::config_json(params.config).dump());
    }
    std::ifstream bin(files.blob, std::ios::binary);
    if (!bin) throw IoError("cannot open checkpoint blob '" + files.blob + "'");
    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if (blob.size() != m.at("blob_bytes").get<std::size_t>()) {
        throw VersionError(files.manifest + ": blob size " + std::to_string(blob.size()) + " differs from manifest");
    }

    std::vector<std::pair<std::string, Array*>> targets;
    for (auto& [name, v] : params.named_parameters()) targets.emplace_back(name, &v.mutable_value());
    for (auto& nb : params.named_buffers()) targets.push_back(nb);
    const auto& table = m.at("tensors");
    if (table.size() != targets.size()) throw VersionError(files.manifest + ": tensor count does not match the model");
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& entry = table[i];
        auto& [name, arr] = targets[i];
        const auto shape = entry.at("shape").get<Shape>();
        if (entry.at("name").get<std::string>() != name || shape != arr->shape()) {
            throw VersionError(files.manifest + ": tensor '" + entry.at("name").get<std::string>() + "' " +
                               shape_string(shape) + " does not match model tensor '" + name + "' " +
                               shape_string(arr->shape()));
        }
        const auto offset = entry.at("offset").get<std::size_t>();
        if (offset + 8 * arr->size() > blob.size()) throw VersionError(files.manifest + ": tensor '" + name + "' overruns blob");
        for (std::size_t k = 0; k < arr->size(); ++k) (*arr)[k] = detail::get_le(blob.data() + offset + 8 * k);
    }
}

inline ModelParams load_checkpoint(const std::string& path) {
    auto params = ModelParams::initialize(config_from_manifest(read_checkpoint_manifest(path)), 0);
    load_checkpoint_into(params, path);
    return params;
}

}  // namespace sadm
