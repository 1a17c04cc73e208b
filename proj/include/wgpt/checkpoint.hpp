#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "wgpt/io.hpp"
#include "wgpt/model.hpp"
#include "wgpt/optim.hpp"

namespace wgpt {

// WGP1 checkpoint: magic, u32 format version, length-prefixed canonical JSON
// (model config + training progress), per-parameter records in lexicographic
// order (name, shape, float32 payload), optional Adam state, trailing CRC32
// over everything before it.
struct Checkpoint {
    ModelConfig config;
    ParameterSet params;
    std::optional<AdamState> adam;
    int epoch = 0;            // last completed epoch
    std::uint64_t step = 0;   // optimizer steps taken
};

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                            const ParameterSet& params, const AdamState* adam, int epoch,
                            std::uint64_t step) {
    ByteWriter w;
    w.magic("WGP1");
    w.u32(kCheckpointVersion);
    nlohmann::json j{{"model", cfg.to_json()}, {"progress", {{"epoch", epoch}, {"step", step}}}};
    w.str(j.dump());
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, p] : params) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(p.value.ndim()));
        for (auto d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (std::int64_t i = 0; i < p.value.numel(); ++i) w.f32(static_cast<float>(p.value[i]));
    }
    if (adam && !adam->empty()) {
        w.u16(1);
        w.u64(adam->step);
        w.f64(adam->beta1);
        w.f64(adam->beta2);
        w.f64(adam->epsilon);
        for (const auto& [name, p] : params) {
            const Tensor& m = adam->m.at(name);
            const Tensor& v = adam->v.at(name);
            for (std::int64_t i = 0; i < m.numel(); ++i) w.f32(static_cast<float>(m[i]));
            for (std::int64_t i = 0; i < v.numel(); ++i) w.f32(static_cast<float>(v[i]));
        }
    } else {
        w.u16(0);
    }
    w.u32(w.crc());
    w.save(path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    ByteReader r = ByteReader::from_file(path);
    if (r.size() < 8) r.err("file too small");
    {
        const std::uint32_t stored_crc =
            static_cast<std::uint32_t>(r.data()[r.size() - 4]) |
            (static_cast<std::uint32_t>(r.data()[r.size() - 3]) << 8) |
            (static_cast<std::uint32_t>(r.data()[r.size() - 2]) << 16) |
            (static_cast<std::uint32_t>(r.data()[r.size() - 1]) << 24);
        const std::uint32_t actual = crc32(r.data(), r.size() - 4);
        if (stored_crc != actual)
            fail_parse(path.string(), ": checksum mismatch (stored ", stored_crc, ", computed ",
                       actual, ")");
    }
    r.expect_magic("WGP1");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) r.err("unsupported version " + std::to_string(version));

    Checkpoint ck;
    {
        const nlohmann::json j = nlohmann::json::parse(r.str());
        ck.config = ModelConfig::from_json(j.at("model"));
        ck.epoch = j.at("progress").at("epoch").get<int>();
        ck.step = j.at("progress").at("step").get<std::uint64_t>();
    }

    // The expected parameter inventory comes from the config itself.
    ParameterSet expected = make_parameters(ck.config, nullptr);
    const std::uint32_t n_params = r.u32();
    if (n_params != expected.size())
        r.err("parameter count " + std::to_string(n_params) + " does not match config (" +
              std::to_string(expected.size()) + ")");
    for (std::uint32_t pi = 0; pi < n_params; ++pi) {
        const std::string name = r.str();
        if (!expected.contains(name)) r.err("unexpected parameter '" + name + "'");
        Parameter& p = expected.at(name);
        const std::uint32_t ndim = r.u32();
        std::vector<std::int64_t> shape(ndim);
        for (auto& d : shape) d = static_cast<std::int64_t>(r.u32());
        if (shape != p.value.shape())
            r.err("shape mismatch for '" + name + "': file " + Tensor::shape_str(shape) +
                  " vs config " + p.value.shape_str());
        for (std::int64_t i = 0; i < p.value.numel(); ++i) p.value[i] = r.f32();
    }
    ck.params = std::move(expected);

    const std::uint16_t has_adam = r.u16();
    if (has_adam == 1) {
        AdamState adam;
        adam.step = r.u64();
        adam.beta1 = r.f64();
        adam.beta2 = r.f64();
        adam.epsilon = r.f64();
        for (const auto& [name, p] : ck.params) {
            Tensor m(p.value.shape()), v(p.value.shape());
            for (std::int64_t i = 0; i < m.numel(); ++i) m[i] = r.f32();
            for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = r.f32();
            adam.m.emplace(name, std::move(m));
            adam.v.emplace(name, std::move(v));
        }
        ck.adam = std::move(adam);
    } else if (has_adam != 0) {
        r.err("bad adam flag");
    }
    return ck;
}

} // namespace wgpt
