#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lrd/nn/model.hpp"
#include "lrd/train/optimizer.hpp"
#include "lrd/util/config.hpp"
#include "lrd/util/crc32.hpp"

// Versioned binary checkpoint container. Little-endian, row-major tensor
// payloads, one CRC32 per record. Layout (see README for the field table):
//   magic "LRDCKPT1" | u32 version | json config | json meta |
//   u64 n_records | records { u32 name_len, name, u8 dtype, u8 ndim,
//   i64 dims[], u64 payload_bytes, payload, u32 crc }

namespace lrd {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace ckpt_detail {

constexpr char kMagic[8] = {'L', 'R', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError(std::string("checkpoint: truncated while reading ") + what);
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const char* what) {
    const auto len = read_pod<std::uint32_t>(is, what);
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw IoError(std::string("checkpoint: truncated while reading ") + what);
    return s;
}

template <typename S>
constexpr std::uint8_t dtype_code() {
    return sizeof(S) == 4 ? 0 : 1;
}

template <typename S>
void write_record(std::ostream& os, const std::string& name, const Tensor<S>& t) {
    write_string(os, name);
    write_pod<std::uint8_t>(os, dtype_code<S>());
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (std::int64_t d : t.shape()) write_pod<std::int64_t>(os, d);
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t.numel()) * sizeof(S);
    write_pod<std::uint64_t>(os, nbytes);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(nbytes));
    write_pod<std::uint32_t>(os, crc32(t.data(), nbytes));
}

template <typename S>
void read_record_into(std::istream& is, const std::string& name, Tensor<S>& target) {
    const auto dtype = read_pod<std::uint8_t>(is, "dtype");
    if (dtype != dtype_code<S>())
        throw IoError("checkpoint: dtype mismatch for tensor '" + name + "'");
    const auto ndim = read_pod<std::uint8_t>(is, "ndim");
    Shape shape(ndim);
    for (auto& d : shape) d = read_pod<std::int64_t>(is, "dims");
    const auto nbytes = read_pod<std::uint64_t>(is, "payload size");
    if (shape != target.shape())
        throw ShapeError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                         " but the model expects " + shape_str(target.shape()));
    if (nbytes != static_cast<std::uint64_t>(target.numel()) * sizeof(S))
        throw IoError("checkpoint: payload size mismatch for tensor '" + name + "'");
    std::vector<char> buf(nbytes);
    is.read(buf.data(), static_cast<std::streamsize>(nbytes));
    if (!is) throw IoError("checkpoint: truncated payload for tensor '" + name + "'");
    const auto crc = read_pod<std::uint32_t>(is, "crc");
    if (crc != crc32(buf.data(), nbytes))
        throw IoError("checkpoint: CRC mismatch for tensor '" + name + "' (corrupted payload)");
    std::memcpy(target.data(), buf.data(), nbytes);
}

}  // namespace ckpt_detail

template <typename S>
struct LoadedCheckpoint {
    ModelConfig cfg;
    LrdNet<S> model;
    RealCenter<S> center;
    std::int64_t adam_t = 0;
    std::vector<std::vector<S>> adam_m, adam_v;  // aligned with model.parameters()
    std::string rng_state;

    explicit LoadedCheckpoint(const ModelConfig& c) : cfg(c), model(c), center(c.d_e, c.mu) {}
};

template <typename S>
void save_checkpoint(const std::string& path, const LrdNet<S>& model, const RealCenter<S>& center,
                     const Adam<S>* opt = nullptr, const std::string& rng_state = "") {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot write '" + path + "'");
    os.write(ckpt_detail::kMagic, sizeof(ckpt_detail::kMagic));
    ckpt_detail::write_pod<std::uint32_t>(os, ckpt_detail::kVersion);
    ckpt_detail::write_string(os, model_config_to_json(model.cfg));

    std::string meta = "{\"center_step\":" + std::to_string(center.step) +
                       ",\"center_initialized\":" + (center.initialized ? std::string("true") : std::string("false")) +
                       ",\"center_last_drift\":" + std::to_string(static_cast<double>(center.last_drift)) +
                       ",\"adam_t\":" + std::to_string(opt ? opt->t() : 0) + "}";
    ckpt_detail::write_string(os, meta);
    ckpt_detail::write_string(os, rng_state);

    TensorList<S> records = model.parameters();
    for (auto& b : model.buffers()) records.push_back(b);
    records.push_back({"center.c", center.c});
    records.push_back({"center.c_prev", center.c_prev});
    if (opt) {
        const TensorList<S>& params = opt->params();
        auto& m = const_cast<Adam<S>*>(opt)->moment1();
        auto& v = const_cast<Adam<S>*>(opt)->moment2();
        for (std::size_t i = 0; i < params.size(); ++i) {
            records.push_back({"adam.m." + params[i].name,
                               Tensor<S>::from_values(params[i].tensor.shape(), m[i])});
            records.push_back({"adam.v." + params[i].name,
                               Tensor<S>::from_values(params[i].tensor.shape(), v[i])});
        }
    }
    ckpt_detail::write_pod<std::uint64_t>(os, records.size());
    for (const auto& r : records) ckpt_detail::write_record(os, r.name, r.tensor);
    if (!os) throw IoError("checkpoint: write failure on '" + path + "'");
}

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot read '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, ckpt_detail::kMagic, 8) != 0)
        throw IoError("checkpoint: bad magic in '" + path + "'");
    const auto version = ckpt_detail::read_pod<std::uint32_t>(is, "version");
    if (version != ckpt_detail::kVersion)
        throw IoError("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(ckpt_detail::kVersion) + ")");
    const std::string cfg_json = ckpt_detail::read_string(is, "config");
    const std::string meta_json = ckpt_detail::read_string(is, "meta");
    const std::string rng_state = ckpt_detail::read_string(is, "rng state");

    LoadedCheckpoint<S> out(model_config_from_json(cfg_json));
    out.rng_state = rng_state;

    // meta (flat json written by save_checkpoint)
    auto find_num = [&](const std::string& key) -> double {
        const auto pos = meta_json.find("\"" + key + "\":");
        if (pos == std::string::npos) throw IoError("checkpoint: meta key '" + key + "' missing");
        return std::stod(meta_json.substr(pos + key.size() + 3));
    };
    out.center.step = static_cast<std::int64_t>(find_num("center_step"));
    out.center.last_drift = static_cast<S>(find_num("center_last_drift"));
    out.center.initialized = meta_json.find("\"center_initialized\":true") != std::string::npos;
    out.adam_t = static_cast<std::int64_t>(find_num("adam_t"));

    TensorList<S> params = out.model.parameters();
    std::map<std::string, Tensor<S>> by_name;
    for (auto& p : params) by_name.emplace(p.name, p.tensor);
    for (auto& b : out.model.buffers()) by_name.emplace(b.name, b.tensor);
    by_name.emplace("center.c", out.center.c);
    by_name.emplace("center.c_prev", out.center.c_prev);
    out.adam_m.resize(params.size());
    out.adam_v.resize(params.size());

    const auto n_records = ckpt_detail::read_pod<std::uint64_t>(is, "record count");
    std::size_t adam_loaded = 0;
    for (std::uint64_t r = 0; r < n_records; ++r) {
        const std::string name = ckpt_detail::read_string(is, "record name");
        if (name.rfind("adam.", 0) == 0) {
            const bool is_m = name.rfind("adam.m.", 0) == 0;
            const std::string pname = name.substr(7);
            std::size_t idx = params.size();
            for (std::size_t i = 0; i < params.size(); ++i)
                if (params[i].name == pname) {
                    idx = i;
                    break;
                }
            if (idx == params.size()) throw IoError("checkpoint: optimizer state for unknown parameter '" + pname + "'");
            Tensor<S> tmp = Tensor<S>::zeros(params[idx].tensor.shape());
            ckpt_detail::read_record_into(is, name, tmp);
            (is_m ? out.adam_m : out.adam_v)[idx] = tmp.values();
            ++adam_loaded;
            continue;
        }
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint: unexpected tensor '" + name + "'");
        ckpt_detail::read_record_into(is, name, it->second);
        by_name.erase(it);
    }
    if (!by_name.empty()) throw IoError("checkpoint: tensor '" + by_name.begin()->first + "' missing from file");
    if (adam_loaded == 0) {
        out.adam_m.clear();
        out.adam_v.clear();
    }
    return out;
}

}  // namespace lrd
