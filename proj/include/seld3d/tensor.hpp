#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace seld3d {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major tensor of up to 4 dimensions. Scalar type is a template
// parameter: float for training/feature data, double for loss/gradient checks.
template <typename T>
struct TensorT {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(std::vector<std::size_t> dims, T fill = T{})
        : shape(std::move(dims)),
          data(std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               std::multiplies<>()),
               fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }

    std::size_t dim(std::size_t i) const { return shape.at(i); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    T& at(std::size_t i, std::size_t j) {
        return data[i * shape[1] + j];
    }
    const T& at(std::size_t i, std::size_t j) const {
        return data[i * shape[1] + j];
    }

    T& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    const T& at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    const T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i)
            out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// ---------------------------------------------------------------------------
// S3DT binary tensor file: magic "S3DT", u32 version, u32 ndim, u32 dims[],
// float32 little-endian row-major payload.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("unexpected end of tensor file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline float read_f32(std::istream& is) {
    std::uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace detail

inline constexpr std::uint32_t kTensorFileVersion = 1;

inline void save_tensor(const Tensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("S3DT", 4);
    detail::write_u32(os, kTensorFileVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
    for (float v : t.data) detail::write_f32(os, v);
    if (!os) throw IoError("write failed: " + path);
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "S3DT", 4) != 0)
        throw IoError("bad tensor magic in " + path);
    const std::uint32_t version = detail::read_u32(is);
    if (version != kTensorFileVersion)
        throw IoError("unsupported tensor version in " + path);
    const std::uint32_t ndim = detail::read_u32(is);
    if (ndim == 0 || ndim > 8) throw IoError("bad tensor rank in " + path);
    std::vector<std::size_t> dims(ndim);
    for (auto& d : dims) d = detail::read_u32(is);
    Tensor t(dims);
    for (auto& v : t.data) v = detail::read_f32(is);
    return t;
}

} // namespace seld3d
