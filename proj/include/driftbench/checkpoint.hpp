#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "driftbench/model.hpp"

namespace driftbench {

// Parameter checkpoint: magic, little-endian u64 header length, JSON header
// with tensor names/shapes, then the parameters as little-endian 32-bit
// floats in header order. float-precision states round-trip bitwise.
inline constexpr char kCheckpointMagic[8] = {'D', 'B', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void save_checkpoint(const std::string& path, const ModelState<T>& state) {
    nlohmann::json header;
    header["dtype"] = "f32";
    header["tensors"] = nlohmann::json::array();
    for (const auto& spec : param_specs(state.cfg))
        header["tensors"].push_back({{"name", spec.name}, {"rows", spec.rows}, {"cols", spec.cols}});
    std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    std::uint64_t len = header_text.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((len >> (8 * i)) & 0xff);
    out.write(lenbuf, 8);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& tensor : state.params.tensors) {
        for (T v : tensor.data) {
            float f = static_cast<float>(v);
            char buf[4];
            std::memcpy(buf, &f, 4);
            out.write(buf, 4);
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

template <typename T>
void load_checkpoint(const std::string& path, ModelState<T>& state) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error(path + ": not a driftbench checkpoint");
    char lenbuf[8];
    in.read(lenbuf, 8);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
    std::string header_text(len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error(path + ": truncated header");
    auto header = nlohmann::json::parse(header_text);

    auto specs = param_specs(state.cfg);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != specs.size())
        throw std::runtime_error(path + ": tensor count does not match the configured model");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (tensors[i].at("name") != specs[i].name || tensors[i].at("rows") != specs[i].rows ||
            tensors[i].at("cols") != specs[i].cols)
            throw std::runtime_error(path + ": tensor '" + specs[i].name + "' shape/name mismatch");
    }
    for (auto& tensor : state.params.tensors) {
        for (auto& v : tensor.data) {
            char buf[4];
            in.read(buf, 4);
            float f;
            std::memcpy(&f, buf, 4);
            v = static_cast<T>(f);
        }
    }
    if (!in) throw std::runtime_error(path + ": truncated payload");
}

}  // namespace driftbench
