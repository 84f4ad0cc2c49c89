// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include "storm/checkpoint.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>

namespace storm {

namespace fs = std::filesystem;

namespace {

int block_of(const std::string& name) {
    const auto pos = name.find("block");
    if (pos == std::string::npos) return -1;
    std::size_t i = pos + 5;
    int block = 0;
    bool any = false;
    while (i < name.size() && name[i] >= '0' && name[i] <= '9') {
        block = block * 10 + (name[i] - '0');
        ++i;
        any = true;
    }
    return any ? block : -1;
}

std::string file_of(const std::string& name) {
    std::string f = name;
    for (char& c : f) {
        if (c == '.') c = '_';
    }
    return f + ".tnsr";
}

void save_named(const std::string& dir,
                const std::vector<std::pair<std::string, const Tensor*>>& items) {
    fs::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["format"] = "storm-checkpoint-v1";
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    for (const auto& [name, t] : items) {
        const std::string file = file_of(name);
        save_tensor(dir + "/" + file, *t);
        tensors.push_back({{"name", name},
                           {"file", file},
                           {"block", block_of(name)},
                           {"shape", t->shape()}});
    }
    manifest["tensors"] = tensors;
    std::ofstream os(dir + "/manifest.json");
    if (!os) throw std::runtime_error("cannot write manifest in " + dir);
    os << manifest.dump(2) << '\n';
}

} // namespace

void save_checkpoint(const std::string& dir, driving::ModelParams& params) {
    std::vector<std::pair<std::string, const Tensor*>> items;
    params.for_each([&](const std::string& name, Tensor& t) { items.emplace_back(name, &t); });
    save_named(dir, items);
}

void load_checkpoint(const std::string& dir, driving::ModelParams& params) {
    std::ifstream is(dir + "/manifest.json");
    if (!is) throw std::runtime_error("missing manifest in " + dir);
    nlohmann::json manifest;
    is >> manifest;
    std::map<std::string, std::string> files;
    for (const auto& entry : manifest.at("tensors")) {
        files[entry.at("name").get<std::string>()] = entry.at("file").get<std::string>();
    }
    params.for_each([&](const std::string& name, Tensor& t) {
        const auto it = files.find(name);
        if (it == files.end()) throw std::runtime_error("checkpoint lacks tensor " + name);
        Tensor loaded = load_tensor(dir + "/" + it->second);
        if (!loaded.same_shape(t)) {
            throw ShapeError("checkpoint tensor " + name + " has shape " + loaded.shape_str() +
                             ", expected " + t.shape_str());
        }
        t = std::move(loaded);
    });
}

void save_teacher_checkpoint(const std::string& dir, const teacher::Teacher& teacher) {
    std::vector<std::pair<std::string, const Tensor*>> items;
    const auto& blocks = teacher.decoder.blocks();
    std::vector<std::string> names;
    names.reserve(blocks.size() * 6 + 1);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string prefix = "teacher.block" + std::to_string(b) + ".";
        items.emplace_back(prefix + "wq", &blocks[b].wq);
        items.emplace_back(prefix + "wk", &blocks[b].wk);
        items.emplace_back(prefix + "wv", &blocks[b].wv);
        items.emplace_back(prefix + "wo", &blocks[b].wo);
        items.emplace_back(prefix + "wf1", &blocks[b].wf1);
        items.emplace_back(prefix + "wf2", &blocks[b].wf2);
    }
    items.emplace_back("teacher.aux_projection", &teacher.aux_projection);
    save_named(dir, items);
}

} // namespace storm
