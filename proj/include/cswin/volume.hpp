#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "cswin/errors.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

static_assert(std::endian::native == std::endian::little,
              "volume payloads are little-endian; big-endian hosts are unsupported");

// Channel-major 4D volume with physical spacing; the bpMRI stand-in carries
// three channels (T2W/DWI/ADC analogs), masks and detection maps carry one.
struct Volume {
    Shape shape;  // (C,H,W,D)
    std::vector<float> data;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel along H,W,D
    std::vector<std::string> channels;
    bool preprocessed = false;

    int64_t C() const { return shape[0]; }
    int64_t H() const { return shape[1]; }
    int64_t W() const { return shape[2]; }
    int64_t D() const { return shape[3]; }
    int64_t voxels() const { return shape[1] * shape[2] * shape[3]; }

    size_t index(int64_t c, int64_t h, int64_t w, int64_t d) const {
        return static_cast<size_t>(((c * shape[1] + h) * shape[2] + w) * shape[3] + d);
    }
    float& at(int64_t c, int64_t h, int64_t w, int64_t d) { return data[index(c, h, w, d)]; }
    float at(int64_t c, int64_t h, int64_t w, int64_t d) const { return data[index(c, h, w, d)]; }

    static Volume zeros(Shape s, std::array<double, 3> spacing = {1.0, 1.0, 1.0}) {
        Volume v;
        v.shape = std::move(s);
        v.spacing = spacing;
        v.data.assign(static_cast<size_t>(numel_of(v.shape)), 0.0f);
        return v;
    }
};

// ---- file format -------------------------------------------------------------
// `<base>.json` holds the header, `<base>.raw` the payload: raw little-endian
// 32-bit floats, row-major, C*H*W*D values.

inline void write_volume(const Volume& v, const std::filesystem::path& json_path) {
    if (numel_of(v.shape) != static_cast<int64_t>(v.data.size()))
        throw value_error("write_volume: data length does not match shape " + shape_str(v.shape));
    std::filesystem::path raw_path = json_path;
    raw_path.replace_extension(".raw");

    nlohmann::json h;
    h["shape"] = v.shape;
    h["spacing_mm"] = v.spacing;
    h["channels"] = v.channels;
    h["dtype"] = "f32le";
    h["raw"] = raw_path.filename().string();
    h["preprocessed"] = v.preprocessed;

    std::ofstream jf(json_path, std::ios::binary | std::ios::trunc);
    if (!jf) throw io_error("write_volume: cannot open " + json_path.string());
    jf << h.dump(2) << "\n";
    jf.close();

    std::ofstream rf(raw_path, std::ios::binary | std::ios::trunc);
    if (!rf) throw io_error("write_volume: cannot open " + raw_path.string());
    rf.write(reinterpret_cast<const char*>(v.data.data()),
             static_cast<std::streamsize>(v.data.size() * sizeof(float)));
    if (!rf) throw io_error("write_volume: short write to " + raw_path.string());
}

inline Volume read_volume(const std::filesystem::path& json_path) {
    std::ifstream jf(json_path, std::ios::binary);
    if (!jf) throw io_error("read_volume: cannot open " + json_path.string());
    nlohmann::json h;
    try {
        jf >> h;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("read_volume: malformed header " + json_path.string() + ": " + e.what());
    }

    Volume v;
    try {
        v.shape = h.at("shape").get<Shape>();
        v.spacing = h.at("spacing_mm").get<std::array<double, 3>>();
        if (h.contains("channels")) v.channels = h.at("channels").get<std::vector<std::string>>();
        if (h.contains("preprocessed")) v.preprocessed = h.at("preprocessed").get<bool>();
        std::string dtype = h.at("dtype").get<std::string>();
        if (dtype != "f32le")
            throw io_error("read_volume: unsupported dtype '" + dtype + "' in " +
                           json_path.string());
    } catch (const nlohmann::json::exception& e) {
        throw io_error("read_volume: bad header fields in " + json_path.string() + ": " + e.what());
    }
    if (v.shape.size() != 4) throw io_error("read_volume: header shape must be (C,H,W,D)");
    for (double s : v.spacing)
        if (!(s > 0)) throw io_error("read_volume: spacing must be positive");

    std::filesystem::path raw_path = json_path.parent_path() / h.at("raw").get<std::string>();
    std::ifstream rf(raw_path, std::ios::binary);
    if (!rf) throw io_error("read_volume: cannot open payload " + raw_path.string());
    const int64_t n = numel_of(v.shape);
    v.data.resize(static_cast<size_t>(n));
    rf.read(reinterpret_cast<char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
    if (rf.gcount() != static_cast<std::streamsize>(v.data.size() * sizeof(float)))
        throw io_error("read_volume: payload " + raw_path.string() + " shorter than 4*" +
                       std::to_string(n) + " bytes");
    char extra;
    if (rf.read(&extra, 1))
        throw io_error("read_volume: payload " + raw_path.string() + " longer than header shape " +
                       shape_str(v.shape));
    return v;
}

// ---- tensor bridges ------------------------------------------------------------

template <class T>
Tensor<T> volume_to_tensor(const Volume& v) {
    std::vector<T> d(v.data.begin(), v.data.end());
    return Tensor<T>::from_data(v.shape, std::move(d));
}

// Stacks volumes (same shape) into a batch tensor (N,C,H,W,D).
template <class T>
Tensor<T> volumes_to_batch(const std::vector<const Volume*>& vols) {
    if (vols.empty()) throw value_error("volumes_to_batch: empty batch");
    const Shape& s = vols[0]->shape;
    std::vector<T> d;
    d.reserve(static_cast<size_t>(numel_of(s)) * vols.size());
    for (const Volume* v : vols) {
        if (v->shape != s)
            throw shape_error("volumes_to_batch: mixed shapes " + shape_str(s) + " and " +
                              shape_str(v->shape));
        d.insert(d.end(), v->data.begin(), v->data.end());
    }
    Shape bs = s;
    bs.insert(bs.begin(), static_cast<int64_t>(vols.size()));
    return Tensor<T>::from_data(bs, std::move(d));
}

template <class T>
Volume tensor_to_volume(const Tensor<T>& t, std::array<double, 3> spacing,
                        std::vector<std::string> channels = {}) {
    if (t.rank() != 4)
        throw shape_error("tensor_to_volume: expected (C,H,W,D), got " + shape_str(t.shape()));
    Volume v;
    v.shape = t.shape();
    v.spacing = spacing;
    v.channels = std::move(channels);
    v.data.assign(t.data().begin(), t.data().end());
    return v;
}

}  // namespace cswin
