#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "acr/error.hpp"
#include "acr/model.hpp"

namespace acr {

/// Binary checkpoint, all integers and floats little-endian:
///
///   magic        8 bytes  "ACRCKPT\0"
///   version      u32      1
///   head         u32      0 = dsvdd, 1 = bce
///   test_mode    u32      0 = batch-stats, 1 = identity, 2 = frozen
///   freeze_c     u32      0 / 1
///   inverse_eps  f64
///   bn_eps       f64
///   input_dim    u64
///   n_linear     u64
///   widths       u64 x n_linear
///   bn_mask      u8  x (n_linear + 1)
///   n_values     u64      number of f64 parameters that follow
///   parameters   f64 x n_values, in DetectorModel::parameters() order
///                (input BN gamma, beta; per layer W row-major, b, BN gamma, beta; DSVDD center)
///   per active BN position, ascending:
///     has_frozen u8; if 1: mean f64 x width, var f64 x width
///   checksum     u64      FNV-1a over every preceding byte
inline constexpr std::array<char, 8> checkpoint_magic = {'A', 'C', 'R', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        put(bits, 8);
    }
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() {
        const std::uint64_t bits = get(8);
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    void raw(char* p, std::size_t n) {
        need(n);
        std::memcpy(p, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > end_) throw ParseError("checkpoint: truncated file");
    }
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const DetectorModel<double>& model) {
    detail::ByteWriter w;
    w.raw(checkpoint_magic.data(), checkpoint_magic.size());
    w.u32(checkpoint_version);
    w.u32(model.head == HeadKind::dsvdd ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(model.test_mode));
    w.u32(model.dsvdd.freeze_center ? 1 : 0);
    w.f64(model.dsvdd.inverse_eps);
    const auto& arch = model.net.architecture();
    w.f64(arch.bn_eps);
    w.u64(static_cast<std::uint64_t>(arch.input_dim));
    w.u64(arch.widths.size());
    for (Index width : arch.widths) w.u64(static_cast<std::uint64_t>(width));
    for (bool b : arch.bn_mask) w.u8(b ? 1 : 0);

    const auto params = model.parameters();
    std::uint64_t n_values = 0;
    for (const auto& p : params) n_values += p.size();
    w.u64(n_values);
    for (const auto& p : params)
        for (double v : p) w.f64(v);

    for (const auto& bn : model.net.bn_layers()) {
        if (!bn) continue;
        const bool has = bn->frozen_mean.has_value() && bn->frozen_var.has_value();
        w.u8(has ? 1 : 0);
        if (!has) continue;
        for (Index i = 0; i < bn->features(); ++i) w.f64((*bn->frozen_mean)[i]);
        for (Index i = 0; i < bn->features(); ++i) w.f64((*bn->frozen_var)[i]);
    }
    auto bytes = w.bytes();
    const std::uint64_t sum = detail::fnv1a(bytes.data(), bytes.size());
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(sum >> (8 * i)));
    return bytes;
}

inline DetectorModel<double> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < checkpoint_magic.size() + 8) throw ParseError("checkpoint: file too short");
    const std::size_t body = bytes.size() - 8;
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body + static_cast<std::size_t>(i)]) << (8 * i);
    if (stored != detail::fnv1a(bytes.data(), body)) throw ParseError("checkpoint: checksum mismatch");

    detail::ByteReader r(bytes, body);
    std::array<char, 8> magic{};
    r.raw(magic.data(), magic.size());
    if (magic != checkpoint_magic) throw ParseError("checkpoint: bad magic");
    const std::uint32_t version = r.u32();
    if (version != checkpoint_version)
        throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t head = r.u32();
    const std::uint32_t mode = r.u32();
    if (head > 1 || mode > 2) throw ParseError("checkpoint: corrupt header");
    const bool freeze = r.u32() != 0;
    const double inverse_eps = r.f64();

    nn::MlpArchitecture arch;
    arch.bn_eps = r.f64();
    arch.input_dim = static_cast<Index>(r.u64());
    const std::uint64_t n_linear = r.u64();
    if (n_linear == 0 || n_linear > 1024) throw ParseError("checkpoint: implausible layer count");
    for (std::uint64_t k = 0; k < n_linear; ++k) arch.widths.push_back(static_cast<Index>(r.u64()));
    for (std::uint64_t k = 0; k <= n_linear; ++k) arch.bn_mask.push_back(r.u8() != 0);

    Rng unused(0);
    DetectorModel<double> model;
    try {
        model = DetectorModel<double>::create(arch, head == 0 ? HeadKind::dsvdd : HeadKind::bce, unused, inverse_eps);
    } catch (const ConfigError& e) {
        throw ParseError(std::string("checkpoint: invalid architecture: ") + e.what());
    }
    model.dsvdd.freeze_center = freeze;
    model.test_mode = static_cast<nn::BnMode>(mode);

    auto params = model.parameters();
    std::uint64_t expected = 0;
    for (const auto& p : params) expected += p.size();
    if (r.u64() != expected) throw ParseError("checkpoint: parameter count does not match architecture");
    for (auto& p : params)
        for (double& v : p) v = r.f64();

    for (auto& bn : model.net.bn_layers()) {
        if (!bn) continue;
        if (r.u8() == 0) continue;
        VectorD mean(bn->features()), var(bn->features());
        for (Index i = 0; i < mean.size(); ++i) mean[i] = r.f64();
        for (Index i = 0; i < var.size(); ++i) var[i] = r.f64();
        bn->frozen_mean = std::move(mean);
        bn->frozen_var = std::move(var);
    }
    if (r.position() != body) throw ParseError("checkpoint: trailing bytes");
    return model;
}

inline void save_checkpoint(const std::string& path, const DetectorModel<double>& model) {
    const auto bytes = serialize_checkpoint(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ParseError("write to '" + path + "' failed");
}

inline DetectorModel<double> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace acr
