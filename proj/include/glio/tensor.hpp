#pragma once

#include <cstddef>
#include <vector>

#include "glio/error.hpp"

namespace glio {

// Dense rank-4 array (channels, x, y, z), C layout with z fastest.
template <typename T>
struct Tensor4T {
    int c = 0, nx = 0, ny = 0, nz = 0;
    std::vector<T> v;

    Tensor4T() = default;
    Tensor4T(int c_, int nx_, int ny_, int nz_)
        : c(c_), nx(nx_), ny(ny_), nz(nz_),
          v(static_cast<std::size_t>(c_) * nx_ * ny_ * nz_, T(0)) {}

    std::size_t spatial_size() const { return static_cast<std::size_t>(nx) * ny * nz; }
    std::size_t size() const { return v.size(); }

    std::size_t idx(int ch, int x, int y, int z) const {
        return ((static_cast<std::size_t>(ch) * nx + x) * ny + y) * nz + z;
    }
    T& at(int ch, int x, int y, int z) { return v[idx(ch, x, y, z)]; }
    T at(int ch, int x, int y, int z) const { return v[idx(ch, x, y, z)]; }

    T* channel(int ch) { return v.data() + static_cast<std::size_t>(ch) * spatial_size(); }
    const T* channel(int ch) const { return v.data() + static_cast<std::size_t>(ch) * spatial_size(); }

    bool same_shape(const Tensor4T& o) const {
        return c == o.c && nx == o.nx && ny == o.ny && nz == o.nz;
    }

    void fill(T value) { std::fill(v.begin(), v.end(), value); }
};

using Tensor4 = Tensor4T<float>;

template <typename T>
Tensor4T<T> zeros_like(const Tensor4T<T>& t) {
    return Tensor4T<T>(t.c, t.nx, t.ny, t.nz);
}

} // namespace glio
