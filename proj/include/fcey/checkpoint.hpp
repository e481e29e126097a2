#pragma once

// Model checkpoints: <stem>.json manifest (ordered entry list with names,
// shapes, kinds) + <stem>.bin of concatenated tensor dumps. Learnable
// parameters are tagged "param", batchnorm running stats "buffer";
// round-trip is bit-exact for 32-bit weights.

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fcey/io.hpp"
#include "fcey/yolo.hpp"

namespace fcey {

template <typename T>
void save_checkpoint(Model<T>& model, const std::string& stem) {
    nlohmann::json manifest;
    manifest["format"] = "fcey-checkpoint-v1";
    manifest["scale"] = model.graph().cfg.scale.name;
    manifest["num_classes"] = model.graph().cfg.num_classes;
    manifest["fce"] = fce_kind_name(model.graph().cfg.fce);
    manifest["method"] = method_name(model.graph().cfg.method);
    manifest["entries"] = nlohmann::json::array();

    std::ofstream bin(stem + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open for write: " + stem + ".bin");
    std::int64_t param_scalars = 0;
    for (auto& [name, t] : model.params()) {
        nlohmann::json e;
        e["name"] = name;
        e["kind"] = "param";
        e["shape"] = t->shape();
        manifest["entries"].push_back(e);
        dump_tensor(bin, *t);
        param_scalars += t->size();
    }
    for (auto& [name, buf] : model.buffers()) {
        nlohmann::json e;
        e["name"] = name;
        e["kind"] = "buffer";
        e["shape"] = std::vector<int>{int(buf->size())};
        manifest["entries"].push_back(e);
        Tensor<T> t({int(buf->size())}, *buf);
        dump_tensor(bin, t);
    }
    manifest["param_scalars"] = param_scalars;
    std::ofstream js(stem + ".json");
    if (!js) throw std::runtime_error("cannot open for write: " + stem + ".json");
    js << manifest.dump(1) << "\n";
}

template <typename T>
void load_checkpoint(Model<T>& model, const std::string& stem) {
    std::ifstream js(stem + ".json");
    if (!js) throw std::runtime_error("cannot open for read: " + stem + ".json");
    nlohmann::json manifest = nlohmann::json::parse(js);
    if (manifest.value("format", "") != "fcey-checkpoint-v1")
        throw std::runtime_error("unrecognized checkpoint format in " + stem + ".json");
    std::ifstream bin(stem + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open for read: " + stem + ".bin");

    auto params = model.params();
    auto buffers = model.buffers();
    size_t pi = 0, bi = 0;
    for (const auto& e : manifest["entries"]) {
        const std::string name = e["name"];
        const std::string kind = e["kind"];
        Tensor<T> t = load_tensor<T>(bin);
        if (kind == "param") {
            if (pi >= params.size() || params[pi].first != name)
                throw std::runtime_error("checkpoint/model parameter mismatch at " + name);
            if (t.shape() != params[pi].second->shape())
                throw std::runtime_error("checkpoint shape mismatch at " + name);
            params[pi].second->data() = t.data();
            ++pi;
        } else if (kind == "buffer") {
            if (bi >= buffers.size() || buffers[bi].first != name)
                throw std::runtime_error("checkpoint/model buffer mismatch at " + name);
            if (t.size() != std::int64_t(buffers[bi].second->size()))
                throw std::runtime_error("checkpoint buffer size mismatch at " + name);
            *buffers[bi].second = t.data();
            ++bi;
        } else {
            throw std::runtime_error("unknown checkpoint entry kind: " + kind);
        }
    }
    if (pi != params.size() || bi != buffers.size())
        throw std::runtime_error("checkpoint is missing entries");
}

// Number of scalars the weight writer serializes as learnable parameters.
template <typename T>
std::int64_t checkpoint_param_scalars(Model<T>& model) {
    std::int64_t n = 0;
    for (auto& [name, t] : model.params()) n += t->size();
    return n;
}

}  // namespace fcey
