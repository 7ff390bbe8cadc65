// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint container: 8-byte magic, little-endian u64 header length, a
// JSON header (kind, config, tensor names/shapes), then the raw float32
// tensor payloads in declared order, little-endian.

#include <fstream>

#include <nlohmann/json.hpp>

#include "cfx/denoiser.hpp"
#include "cfx/embedding.hpp"
#include "cfx/nets.hpp"

namespace cfx {

inline constexpr char kCkptMagic[8] = {'C', 'F', 'X', 'C', 'K', 'P', 'T', '1'};

inline void save_pack(std::ostream& out, const std::string& kind, const nlohmann::json& config,
                      const nn::ParamPack<float>& pack) {
    nlohmann::json header;
    header["kind"] = kind;
    header["config"] = config;
    auto tensors = nlohmann::json::array();
    for (size_t i = 0; i < pack.names.size(); ++i)
        tensors.push_back({{"name", pack.names[i]}, {"shape", pack.tensors[i].shape}});
    header["tensors"] = tensors;
    const std::string hs = header.dump();
    out.write(kCkptMagic, 8);
    uint64_t len = hs.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& t : pack.tensors)
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

inline nn::ParamPack<float> load_pack(std::istream& in, const std::string& expected_kind,
                                      nlohmann::json* config_out = nullptr) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file");
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    nlohmann::json header = nlohmann::json::parse(hs);
    if (header.at("kind") != expected_kind)
        throw std::runtime_error("checkpoint kind mismatch: expected " + expected_kind +
                                 ", found " + header.at("kind").get<std::string>());
    if (config_out) *config_out = header.at("config");
    nn::ParamPack<float> pack;
    for (const auto& t : header.at("tensors")) {
        auto& tensor = pack.add(t.at("name"), t.at("shape").get<std::vector<int>>());
        in.read(reinterpret_cast<char*>(tensor.data.data()),
                static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
    }
    if (!in) throw std::runtime_error("truncated checkpoint");
    return pack;
}

inline void save_pack_file(const std::string& path, const std::string& kind,
                           const nlohmann::json& config, const nn::ParamPack<float>& pack) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    save_pack(out, kind, config, pack);
}

inline nn::ParamPack<float> load_pack_file(const std::string& path, const std::string& kind,
                                           nlohmann::json* config_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("missing checkpoint: " + path);
    return load_pack(in, kind, config_out);
}

// ---------------------------------------------------------------------------

inline nlohmann::json denoiser_config_json(const DenoiserConfig& c) {
    return {{"channels", c.channels}, {"height", c.height},     {"width", c.width},
            {"base", c.base},         {"cond_dim", c.cond_dim}, {"attn_dim", c.attn_dim},
            {"time_dim", c.time_dim}, {"max_cond_len", c.max_cond_len}};
}

inline DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.channels = j.at("channels");
    c.height = j.at("height");
    c.width = j.at("width");
    c.base = j.at("base");
    c.cond_dim = j.at("cond_dim");
    c.attn_dim = j.at("attn_dim");
    c.time_dim = j.at("time_dim");
    c.max_cond_len = j.at("max_cond_len");
    return c;
}

inline void save_denoiser(const std::string& path, const Denoiser<float>& d) {
    save_pack_file(path, "denoiser", denoiser_config_json(d.cfg), d.params);
}

inline Denoiser<float> load_denoiser(const std::string& path) {
    nlohmann::json cfg;
    nn::ParamPack<float> pack = load_pack_file(path, "denoiser", &cfg);
    Denoiser<float> d(denoiser_config_from_json(cfg));
    d.params = std::move(pack);
    return d;
}

inline nlohmann::json convnet_config_json(const ConvNetConfig& c) {
    return {{"in_ch", c.in_ch}, {"size", c.size},     {"w1", c.w1},
            {"w2", c.w2},       {"w3", c.w3},         {"fc_dim", c.fc_dim},
            {"out_dim", c.out_dim}};
}

inline ConvNetConfig convnet_config_from_json(const nlohmann::json& j) {
    ConvNetConfig c;
    c.in_ch = j.at("in_ch");
    c.size = j.at("size");
    c.w1 = j.at("w1");
    c.w2 = j.at("w2");
    c.w3 = j.at("w3");
    c.fc_dim = j.at("fc_dim");
    c.out_dim = j.at("out_dim");
    return c;
}

inline void save_convnet(const std::string& path, const ConvNet<float>& n,
                         const std::string& kind = "convnet") {
    save_pack_file(path, kind, convnet_config_json(n.cfg), n.params);
}

inline ConvNet<float> load_convnet(const std::string& path, const std::string& kind = "convnet") {
    nlohmann::json cfg;
    nn::ParamPack<float> pack = load_pack_file(path, kind, &cfg);
    ConvNet<float> n(convnet_config_from_json(cfg));
    n.params = std::move(pack);
    return n;
}

inline void save_autoencoder(const std::string& path, const AutoEncoder<float>& ae) {
    nn::ParamPack<float> merged;
    for (size_t i = 0; i < ae.encoder.params.names.size(); ++i) {
        merged.add("enc." + ae.encoder.params.names[i], ae.encoder.params.tensors[i].shape);
        merged.tensors.back() = ae.encoder.params.tensors[i];
    }
    for (size_t i = 0; i < ae.dec_params.names.size(); ++i) {
        merged.add("dec." + ae.dec_params.names[i], ae.dec_params.tensors[i].shape);
        merged.tensors.back() = ae.dec_params.tensors[i];
    }
    save_pack_file(path, "autoencoder", convnet_config_json(ae.enc_cfg), merged);
}

inline AutoEncoder<float> load_autoencoder(const std::string& path) {
    nlohmann::json cfg;
    nn::ParamPack<float> merged = load_pack_file(path, "autoencoder", &cfg);
    AutoEncoder<float> ae(convnet_config_from_json(cfg), 0);
    for (size_t i = 0; i < merged.names.size(); ++i) {
        const std::string& name = merged.names[i];
        if (name.starts_with("enc."))
            ae.encoder.params.at(name.substr(4)) = merged.tensors[i];
        else
            ae.dec_params.at(name.substr(4)) = merged.tensors[i];
    }
    return ae;
}

// ---------------------------------------------------------------------------
// Embedding table: token-id -> row mapping in the header, rows as tensors.

inline void save_embedding_table(const std::string& path, const EmbeddingTable& t) {
    nn::ParamPack<float> pack;
    std::vector<int> fixed_ids, learnable_ids;
    for (const auto& [id, row] : t.fixed_tokens) fixed_ids.push_back(id);
    for (const auto& [id, row] : t.learnable_tokens) learnable_ids.push_back(id);
    auto& fixed = pack.add("fixed", {static_cast<int>(fixed_ids.size()), t.cond_dim});
    auto& learn = pack.add("learnable", {static_cast<int>(learnable_ids.size()), t.cond_dim});
    for (size_t i = 0; i < fixed_ids.size(); ++i) {
        const auto& r = t.fixed_tokens.at(fixed_ids[i]);
        std::copy(r.begin(), r.end(), fixed.ptr() + static_cast<int64_t>(i) * t.cond_dim);
    }
    for (size_t i = 0; i < learnable_ids.size(); ++i) {
        const auto& r = t.learnable_tokens.at(learnable_ids[i]);
        std::copy(r.begin(), r.end(), learn.ptr() + static_cast<int64_t>(i) * t.cond_dim);
    }
    nlohmann::json cfg{{"cond_dim", t.cond_dim},
                       {"fixed_ids", fixed_ids},
                       {"learnable_ids", learnable_ids}};
    save_pack_file(path, "embedding_table", cfg, pack);
}

inline EmbeddingTable load_embedding_table(const std::string& path) {
    nlohmann::json cfg;
    nn::ParamPack<float> pack = load_pack_file(path, "embedding_table", &cfg);
    EmbeddingTable t;
    t.cond_dim = cfg.at("cond_dim");
    const auto fixed_ids = cfg.at("fixed_ids").get<std::vector<int>>();
    const auto learnable_ids = cfg.at("learnable_ids").get<std::vector<int>>();
    const auto& fixed = pack.at("fixed");
    const auto& learn = pack.at("learnable");
    for (size_t i = 0; i < fixed_ids.size(); ++i)
        t.fixed_tokens[fixed_ids[i]] =
            std::vector<float>(fixed.ptr() + static_cast<int64_t>(i) * t.cond_dim,
                               fixed.ptr() + static_cast<int64_t>(i + 1) * t.cond_dim);
    for (size_t i = 0; i < learnable_ids.size(); ++i)
        t.learnable_tokens[learnable_ids[i]] =
            std::vector<float>(learn.ptr() + static_cast<int64_t>(i) * t.cond_dim,
                               learn.ptr() + static_cast<int64_t>(i + 1) * t.cond_dim);
    return t;
}

} // namespace cfx
