#pragma once

// Checkpoint container: an 8-byte little-endian header length, a JSON
// header (profile, config, meta, tensor directory of name/shape/offset)
// and raw little-endian 32-bit floats. Round-trips bit-exactly.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "singfuse/common.hpp"

namespace singfuse {

struct checkpoint_tensor {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;
    bool trainable = false;
};

struct checkpoint {
    nlohmann::json meta;   // profile, resolved config, step, rng, opt state, ...
    std::vector<checkpoint_tensor> tensors;

    const checkpoint_tensor & find(const std::string & name) const {
        for (const auto & t : tensors)
            if (t.name == name) return t;
        throw format_error("checkpoint: missing tensor " + name);
    }

    bool has(const std::string & name) const {
        for (const auto & t : tensors)
            if (t.name == name) return true;
        return false;
    }

    void save(const std::string & path) const {
        nlohmann::json hdr;
        hdr["meta"] = meta;
        nlohmann::json dir = nlohmann::json::array();
        uint64_t offset = 0;
        for (const auto & t : tensors) {
            dir.push_back({{"name", t.name}, {"shape", t.shape},
                           {"offset", offset}, {"trainable", t.trainable}});
            offset += t.data.size();
        }
        hdr["tensors"] = dir;
        std::string h = hdr.dump();

        std::ofstream out(path, std::ios::binary);
        if (!out) throw format_error("checkpoint: cannot write " + path);
        uint64_t len = h.size();
        for (int i = 0; i < 8; ++i) out.put((char)((len >> (8 * i)) & 0xff));
        out.write(h.data(), (std::streamsize)h.size());
        for (const auto & t : tensors)
            out.write((const char *)t.data.data(), (std::streamsize)(t.data.size() * 4));
    }

    static checkpoint load(const std::string & path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw format_error("checkpoint: cannot open " + path);
        uint64_t len = 0;
        for (int i = 0; i < 8; ++i) {
            int c = in.get();
            if (c < 0) throw format_error("checkpoint: truncated header length in " + path);
            len |= (uint64_t)(unsigned char)c << (8 * i);
        }
        std::string h(len, '\0');
        in.read(h.data(), (std::streamsize)len);
        if ((uint64_t)in.gcount() != len) throw format_error("checkpoint: truncated header in " + path);
        nlohmann::json hdr = nlohmann::json::parse(h);

        checkpoint ck;
        ck.meta = hdr.value("meta", nlohmann::json::object());
        for (const auto & e : hdr["tensors"]) {
            checkpoint_tensor t;
            t.name = e["name"].get<std::string>();
            t.shape = e["shape"].get<std::vector<int64_t>>();
            t.trainable = e.value("trainable", false);
            int64_t n = 1;
            for (int64_t d : t.shape) n *= d;
            t.data.resize((size_t)n);
            in.read((char *)t.data.data(), (std::streamsize)(n * 4));
            if (in.gcount() != (std::streamsize)(n * 4))
                throw format_error("checkpoint: truncated tensor " + t.name + " in " + path);
            ck.tensors.push_back(std::move(t));
        }
        return ck;
    }
};

} // namespace singfuse
