#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "dear/model.hpp"

namespace dear {

// Checkpoint format, version 1: a JSON document
//   { "format_version": 1,
//     "model": { "algorithm", "latent_dim", "msg_hidden_layers", "msg_hidden_dim" },
//     "params": { name: { "shape": [...], "data": [row-major values] }, ... } }
// Doubles round-trip exactly through the serializer.

inline json model_config_to_json(const ModelConfig& cfg) {
    return json{{"algorithm", to_string(cfg.algorithm)},
                {"latent_dim", cfg.latent_dim},
                {"msg_hidden_layers", cfg.msg_hidden_layers},
                {"msg_hidden_dim", cfg.msg_hidden_dim}};
}

inline ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.algorithm = algo_from_string(j.at("algorithm").get<std::string>());
    cfg.latent_dim = j.at("latent_dim").get<int>();
    cfg.msg_hidden_layers = j.at("msg_hidden_layers").get<int>();
    cfg.msg_hidden_dim = j.at("msg_hidden_dim").get<int>();
    cfg.validate();
    return cfg;
}

inline void save_checkpoint(const std::string& path, Model& model) {
    json params = json::object();
    for (Parameter* p : model.parameters()) {
        if (p->name.empty()) throw std::logic_error("save_checkpoint: unnamed parameter");
        params[p->name] = {{"shape", p->value.shape()}, {"data", p->value.values()}};
    }
    json doc{{"format_version", 1},
             {"model", model_config_to_json(model.cfg)},
             {"params", std::move(params)}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out << doc.dump() << '\n';
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed checkpoint " + path + ": " + e.what());
    }
    if (doc.at("format_version").get<int>() != 1)
        throw std::runtime_error("unsupported checkpoint format version in " + path);
    Model model = Model::init(model_config_from_json(doc.at("model")), 0);
    const json& params = doc.at("params");
    for (Parameter* p : model.parameters()) {
        if (!params.contains(p->name))
            throw std::runtime_error("checkpoint " + path + " missing parameter " + p->name);
        const json& entry = params.at(p->name);
        const auto shape = entry.at("shape").get<std::vector<int>>();
        if (shape != p->value.shape())
            throw std::runtime_error("checkpoint " + path + ": shape mismatch for " + p->name);
        const auto data = entry.at("data").get<std::vector<double>>();
        if (static_cast<int64_t>(data.size()) != p->value.numel())
            throw std::runtime_error("checkpoint " + path + ": size mismatch for " + p->name);
        p->value.values() = data;
        p->zero_grad();
    }
    return model;
}

}  // namespace dear
