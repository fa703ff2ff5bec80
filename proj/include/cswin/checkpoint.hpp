#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "cswin/errors.hpp"
#include "cswin/params.hpp"

namespace cswin {

// Single-file checkpoint container:
//   magic "CSWINCKPT1\n" | u64 manifest length | manifest JSON | f32le payload
// The manifest carries arbitrary metadata (config, seed, kind) plus a tensor
// index with offsets into the payload. Values are always stored as 32-bit
// floats in ParamStore registration order, so load->save round-trips
// byte-identically.

struct CkptTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct Checkpoint {
    nlohmann::json meta;  // everything except the tensor index
    std::vector<CkptTensor> tensors;

    static constexpr char kMagic[] = "CSWINCKPT1\n";

    const CkptTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }

    template <class T>
    static Checkpoint from_store(nlohmann::json meta, const ParamStore<T>& ps) {
        Checkpoint c;
        c.meta = std::move(meta);
        for (size_t i = 0; i < ps.size(); ++i) {
            Tensor<T> t = ps.at(i);
            CkptTensor ct;
            ct.name = ps.names()[i];
            ct.shape = t.shape();
            ct.values.reserve(t.data().size());
            for (T v : t.data()) ct.values.push_back(static_cast<float>(v));
            c.tensors.push_back(std::move(ct));
        }
        return c;
    }

    void save(const std::filesystem::path& path) const {
        nlohmann::json manifest = meta;
        nlohmann::json index = nlohmann::json::array();
        uint64_t offset = 0;
        for (const auto& t : tensors) {
            nlohmann::json e;
            e["name"] = t.name;
            e["shape"] = t.shape;
            e["offset"] = offset;
            e["count"] = t.values.size();
            index.push_back(std::move(e));
            offset += t.values.size() * sizeof(float);
        }
        manifest["tensors"] = std::move(index);
        const std::string m = manifest.dump();

        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw io_error("checkpoint: cannot open " + path.string());
        f.write(kMagic, sizeof(kMagic) - 1);
        uint64_t len = m.size();
        f.write(reinterpret_cast<const char*>(&len), sizeof(len));
        f.write(m.data(), static_cast<std::streamsize>(m.size()));
        for (const auto& t : tensors)
            f.write(reinterpret_cast<const char*>(t.values.data()),
                    static_cast<std::streamsize>(t.values.size() * sizeof(float)));
        if (!f) throw io_error("checkpoint: short write to " + path.string());
    }

    static Checkpoint load(const std::filesystem::path& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw io_error("checkpoint: cannot open " + path.string());
        char magic[sizeof(kMagic) - 1];
        f.read(magic, sizeof(magic));
        if (!f || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
            throw io_error("checkpoint: " + path.string() + " is not a checkpoint file");
        uint64_t len = 0;
        f.read(reinterpret_cast<char*>(&len), sizeof(len));
        std::string m(len, '\0');
        f.read(m.data(), static_cast<std::streamsize>(len));
        if (!f) throw io_error("checkpoint: truncated manifest in " + path.string());

        nlohmann::json manifest;
        try {
            manifest = nlohmann::json::parse(m);
        } catch (const nlohmann::json::exception& e) {
            throw io_error("checkpoint: malformed manifest in " + path.string() + ": " + e.what());
        }
        Checkpoint c;
        try {
            auto index = manifest.at("tensors");
            manifest.erase("tensors");
            c.meta = std::move(manifest);
            for (const auto& e : index) {
                CkptTensor t;
                t.name = e.at("name").get<std::string>();
                t.shape = e.at("shape").get<Shape>();
                size_t count = e.at("count").get<size_t>();
                if (static_cast<int64_t>(count) != numel_of(t.shape))
                    throw io_error("checkpoint: tensor '" + t.name +
                                   "' count disagrees with shape " + shape_str(t.shape));
                t.values.resize(count);
                c.tensors.push_back(std::move(t));
            }
        } catch (const nlohmann::json::exception& e) {
            throw io_error("checkpoint: bad manifest fields in " + path.string() + ": " + e.what());
        }
        for (auto& t : c.tensors) {
            f.read(reinterpret_cast<char*>(t.values.data()),
                   static_cast<std::streamsize>(t.values.size() * sizeof(float)));
            if (!f) throw io_error("checkpoint: truncated payload in " + path.string());
        }
        return c;
    }

    // Copies every checkpoint tensor whose name starts with `prefix` into the
    // store. The store's `prefix` subset and the checkpoint's must coincide
    // exactly; anything missing or extra is a config mismatch, reported by
    // name.
    template <class T>
    void copy_prefix_to(ParamStore<T>& ps, const std::string& prefix) const {
        std::vector<std::string> missing, extra, shape_bad;
        for (const auto& name : ps.names()) {
            if (name.rfind(prefix, 0) != 0) continue;
            const CkptTensor* src = find(name);
            if (!src) {
                missing.push_back(name);
                continue;
            }
            Tensor<T> dst = ps.get(name);
            if (dst.shape() != src->shape) {
                shape_bad.push_back(name + " " + shape_str(src->shape) + " vs " +
                                    shape_str(dst.shape()));
                continue;
            }
            auto& d = dst.data();
            for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(src->values[i]);
        }
        for (const auto& t : tensors)
            if (t.name.rfind(prefix, 0) == 0 && !ps.has(t.name)) extra.push_back(t.name);
        if (!missing.empty() || !extra.empty() || !shape_bad.empty()) {
            std::string msg = "checkpoint does not match architecture;";
            auto list = [&](const char* label, const std::vector<std::string>& v) {
                if (v.empty()) return;
                msg += std::string(" ") + label + ":";
                for (size_t i = 0; i < v.size() && i < 8; ++i) msg += " " + v[i];
                if (v.size() > 8) msg += " (+" + std::to_string(v.size() - 8) + " more)";
            };
            list("absent from checkpoint", missing);
            list("unexpected in checkpoint", extra);
            list("shape mismatch", shape_bad);
            throw config_error(msg);
        }
    }
};

}  // namespace cswin
