#pragma once

// Adapter checkpoints. Layout, all integers and doubles little-endian:
//
//   "SOLA"            4 bytes magic
//   u32 version       currently 1
//   u32 layer count
//   per layer:
//     u32 layer_index, u32 d, u32 r, u32 k
//     u64 seed        regenerates A through init_adapter
//     f64 sparsity_rate
//     u8  mask_built, u8 has_refinement
//     f64[k]          ĥ, only when has_refinement
//     u8[ceil(d·r/8)] mask bitmap, bit b of byte p is position 8p+b (row-major)
//     u64 kept        number of set mask bits
//     f64[kept]       B at the kept positions, in index order
//
// A itself is never stored.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "soldfl/adapter.hpp"
#include "soldfl/error.hpp"

namespace soldfl {

inline constexpr char kCheckpointMagic[4] = {'S', 'O', 'L', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& what) : Error("checkpoint: " + what) {}
};

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), sizeof buf);
}

template <class U>
U get_le(std::istream& is) {
    unsigned char buf[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof buf)) throw CheckpointError("truncated stream");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

inline void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }

inline std::uint32_t narrow32(std::size_t v, const char* what) {
    if (v > 0xffffffffULL) throw CheckpointError(std::string(what) + " does not fit in 32 bits");
    return static_cast<std::uint32_t>(v);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const AdapterStack& stack) {
    os.write(kCheckpointMagic, 4);
    detail::put_le(os, kCheckpointVersion);
    detail::put_le(os, detail::narrow32(stack.size(), "layer count"));
    for (const AdapterPair& a : stack) {
        detail::put_le(os, detail::narrow32(a.layer_index, "layer index"));
        detail::put_le(os, detail::narrow32(a.d(), "d"));
        detail::put_le(os, detail::narrow32(a.r(), "r"));
        detail::put_le(os, detail::narrow32(a.k(), "k"));
        detail::put_le(os, a.seed);
        detail::put_f64(os, a.sparsity_rate);
        detail::put_le(os, static_cast<std::uint8_t>(a.mask_built));
        detail::put_le(os, static_cast<std::uint8_t>(a.refinement.has_value()));
        if (a.refinement)
            for (double v : *a.refinement) detail::put_f64(os, v);
        std::vector<std::uint8_t> bits((a.mask.size() + 7) / 8, 0);
        for (std::size_t p = 0; p < a.mask.size(); ++p)
            if (a.mask[p]) bits[p / 8] |= static_cast<std::uint8_t>(1u << (p % 8));
        os.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
        detail::put_le(os, static_cast<std::uint64_t>(a.active_count()));
        const auto b = a.expansion.data();
        for (std::size_t p = 0; p < a.mask.size(); ++p)
            if (a.mask[p]) detail::put_f64(os, b[p]);
    }
    if (!os) throw CheckpointError("write failed");
}

inline AdapterStack read_checkpoint(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4)) throw CheckpointError("truncated stream");
    if (std::string(magic, 4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("bad magic");
    const auto version = detail::get_le<std::uint32_t>(is);
    if (version != kCheckpointVersion) throw CheckpointError("unsupported version " + std::to_string(version));
    const auto layers = detail::get_le<std::uint32_t>(is);
    AdapterStack stack;
    for (std::uint32_t l = 0; l < layers; ++l) {
        const auto layer_index = detail::get_le<std::uint32_t>(is);
        const auto d = detail::get_le<std::uint32_t>(is);
        const auto r = detail::get_le<std::uint32_t>(is);
        const auto k = detail::get_le<std::uint32_t>(is);
        const auto seed = detail::get_le<std::uint64_t>(is);
        AdapterPair a;
        try {
            a = init_adapter(d, k, r, seed, layer_index);
        } catch (const DimensionError& e) {
            throw CheckpointError(std::string("layer ") + std::to_string(l) + ": " + e.what());
        }
        a.sparsity_rate = detail::get_f64(is);
        a.mask_built = detail::get_le<std::uint8_t>(is) != 0;
        if (detail::get_le<std::uint8_t>(is) != 0) {
            Vector h(k);
            for (double& v : h) v = detail::get_f64(is);
            Matrix refined = a.projection;
            for (std::size_t i = 0; i < refined.rows(); ++i)
                for (std::size_t j = 0; j < refined.cols(); ++j) refined(i, j) *= h[j];
            a.refinement = std::move(h);
            a.refined_projection = std::move(refined);
        }
        const std::size_t n = static_cast<std::size_t>(d) * r;
        std::vector<std::uint8_t> bits((n + 7) / 8);
        if (!is.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size())))
            throw CheckpointError("truncated stream");
        for (std::size_t p = 0; p < n; ++p) a.mask[p] = (bits[p / 8] >> (p % 8)) & 1u;
        const auto kept = detail::get_le<std::uint64_t>(is);
        if (kept != a.active_count()) throw CheckpointError("kept count disagrees with mask in layer " + std::to_string(l));
        auto b = a.expansion.data();
        for (std::size_t p = 0; p < n; ++p)
            if (a.mask[p]) b[p] = detail::get_f64(is);
        stack.push_back(std::move(a));
    }
    return stack;
}

inline std::string checkpoint_bytes(const AdapterStack& stack) {
    std::ostringstream os(std::ios::binary);
    write_checkpoint(os, stack);
    return os.str();
}

inline AdapterStack checkpoint_from_bytes(const std::string& bytes) {
    std::istringstream is(bytes, std::ios::binary);
    return read_checkpoint(is);
}

}  // namespace soldfl
