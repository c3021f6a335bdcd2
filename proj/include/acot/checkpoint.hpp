#pragma once

// Checkpoint container: a text header (config, stage tag, codebook hash,
// endianness, tensor directory) followed by raw little-endian float64 blocks
// in the model's fixed parameter order. Round-trips bit-exactly.

#include <acot/model.hpp>
#include <acot/rng.hpp>

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acot {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");

struct CheckpointMeta {
    std::string stage;  // e.g. warmup-1, distill-1, rl-step-2000
    uint64_t codebook_hash = 0;
    std::map<std::string, std::string> extra;  // counters, seeds, lineage
};

inline std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline void save_checkpoint(const std::string& path, Model& model, const CheckpointMeta& meta) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    const auto& c = model.cfg;
    f << "acot-checkpoint v1\n";
    f << "endian little\n";
    f << "precision f64\n";
    f << "config n_layers " << c.n_layers << " n_heads " << c.n_heads << " d_model " << c.d_model
      << " d_ff " << c.d_ff << " max_context " << c.max_context << " vocab_size " << c.vocab_size
      << " pos_scheme " << c.pos_scheme << "\n";
    f << "stage " << meta.stage << "\n";
    f << "codebook_hash " << hash_hex(meta.codebook_hash) << "\n";
    for (const auto& [k, v] : meta.extra) f << "meta " << k << " " << v << "\n";
    auto named = model.named_params();
    for (auto& [name, t] : named) {
        f << "tensor " << name;
        for (int d : t->shape()) f << " " << d;
        f << "\n";
    }
    f << "data\n";
    for (auto& [name, t] : named) {
        f.write(reinterpret_cast<const char*>(t->values().data()),
                static_cast<std::streamsize>(t->numel() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

// expected_codebook_hash = 0 skips the hash check (used by inspection tools).
inline Model load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr,
                             uint64_t expected_codebook_hash = 0) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string line;
    auto fail = [&path](const std::string& why) {
        throw std::runtime_error("load_checkpoint: " + why + " in " + path);
    };

    if (!std::getline(f, line) || line != "acot-checkpoint v1") fail("bad magic");
    if (!std::getline(f, line) || line != "endian little") fail("bad endianness line");
    if (!std::getline(f, line) || line != "precision f64") fail("bad precision line");

    ModelConfig cfg;
    if (!std::getline(f, line)) fail("missing config");
    {
        std::istringstream ss(line);
        std::string word, key;
        ss >> word;
        if (word != "config") fail("missing config");
        while (ss >> key) {
            if (key == "n_layers") ss >> cfg.n_layers;
            else if (key == "n_heads") ss >> cfg.n_heads;
            else if (key == "d_model") ss >> cfg.d_model;
            else if (key == "d_ff") ss >> cfg.d_ff;
            else if (key == "max_context") ss >> cfg.max_context;
            else if (key == "vocab_size") ss >> cfg.vocab_size;
            else if (key == "pos_scheme") ss >> cfg.pos_scheme;
            else fail("unknown config key " + key);
        }
        cfg.validate();
    }

    CheckpointMeta meta;
    if (!std::getline(f, line) || line.rfind("stage ", 0) != 0) fail("missing stage");
    meta.stage = line.substr(6);
    if (!std::getline(f, line) || line.rfind("codebook_hash ", 0) != 0) fail("missing codebook hash");
    meta.codebook_hash = std::stoull(line.substr(14), nullptr, 16);
    if (expected_codebook_hash != 0 && meta.codebook_hash != expected_codebook_hash) {
        throw std::runtime_error("load_checkpoint: codebook hash mismatch, checkpoint " +
                                 hash_hex(meta.codebook_hash) + " vs current " +
                                 hash_hex(expected_codebook_hash));
    }

    // Build the skeleton with a throwaway RNG; every value is overwritten.
    Rng skeleton_rng(0);
    Model model = Model::init(cfg, skeleton_rng);
    auto named = model.named_params();

    size_t next_tensor = 0;
    while (std::getline(f, line)) {
        if (line == "data") break;
        std::istringstream ss(line);
        std::string word, name;
        ss >> word;
        if (word == "meta") {
            std::string k, v;
            ss >> k >> v;
            meta.extra[k] = v;
            continue;
        }
        if (word != "tensor") fail("unexpected header line '" + line + "'");
        ss >> name;
        if (next_tensor >= named.size() || named[next_tensor].first != name) {
            fail("tensor order mismatch at '" + name + "'");
        }
        Shape shape;
        int d;
        while (ss >> d) shape.push_back(d);
        if (shape != named[next_tensor].second->shape()) fail("tensor shape mismatch for " + name);
        ++next_tensor;
    }
    if (next_tensor != named.size()) fail("incomplete tensor directory");

    for (auto& [name, t] : named) {
        f.read(reinterpret_cast<char*>(t->values().data()),
               static_cast<std::streamsize>(t->numel() * sizeof(double)));
        if (!f) fail("truncated data for " + name);
    }
    f.peek();
    if (!f.eof()) fail("trailing bytes");

    if (meta_out) *meta_out = meta;
    return model;
}

}  // namespace acot
