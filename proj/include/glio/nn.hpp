#pragma once

#include <cmath>
#include <cstring>
#include <deque>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "glio/error.hpp"
#include "glio/rng.hpp"
#include "glio/tensor.hpp"

namespace glio::nn {

template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<T> w;
    std::vector<T> g;

    std::size_t size() const { return w.size(); }
};

template <typename T>
class ParamStore {
public:
    Param<T>& add(std::string name, std::vector<int> shape) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        params_.push_back(Param<T>{std::move(name), std::move(shape), std::vector<T>(n, T(0)),
                                   std::vector<T>(n, T(0))});
        return params_.back();
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p.g.begin(), p.g.end(), T(0));
    }

    void scale_grad(T factor) {
        for (auto& p : params_)
            for (auto& g : p.g) g *= factor;
    }

    std::size_t total_weights() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

    std::deque<Param<T>>& params() { return params_; }
    const std::deque<Param<T>>& params() const { return params_; }

private:
    std::deque<Param<T>> params_; // deque keeps references stable
};

template <typename T>
void he_normal_init(Param<T>& p, std::size_t fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& w : p.w) w = static_cast<T>(rng.normal(0.0, stddev));
}

// ---------------------------------------------------------------------------
// Spatial helpers
// ---------------------------------------------------------------------------

template <typename T>
Tensor4T<T> pad_spatial(const Tensor4T<T>& x, int px, int py, int pz) {
    if (px == 0 && py == 0 && pz == 0) return x;
    Tensor4T<T> out(x.c, x.nx + px, x.ny + py, x.nz + pz);
    for (int c = 0; c < x.c; ++c)
        for (int i = 0; i < x.nx; ++i)
            for (int j = 0; j < x.ny; ++j)
                std::memcpy(&out.at(c, i, j, 0), &x.at(c, i, j, 0), sizeof(T) * x.nz);
    return out;
}

template <typename T>
Tensor4T<T> crop_spatial(const Tensor4T<T>& x, int nx, int ny, int nz) {
    if (nx == x.nx && ny == x.ny && nz == x.nz) return x;
    Tensor4T<T> out(x.c, nx, ny, nz);
    for (int c = 0; c < x.c; ++c)
        for (int i = 0; i < nx; ++i)
            for (int j = 0; j < ny; ++j)
                std::memcpy(&out.at(c, i, j, 0), &x.at(c, i, j, 0), sizeof(T) * nz);
    return out;
}

template <typename T>
Tensor4T<T> concat_channels(const Tensor4T<T>& a, const Tensor4T<T>& b) {
    if (a.nx != b.nx || a.ny != b.ny || a.nz != b.nz)
        throw runtime_error("concat_channels: spatial dims mismatch");
    Tensor4T<T> out(a.c + b.c, a.nx, a.ny, a.nz);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
    return out;
}

template <typename T>
void split_channels(const Tensor4T<T>& joined, Tensor4T<T>& a, Tensor4T<T>& b, int c_a) {
    a = Tensor4T<T>(c_a, joined.nx, joined.ny, joined.nz);
    b = Tensor4T<T>(joined.c - c_a, joined.nx, joined.ny, joined.nz);
    std::copy(joined.v.begin(), joined.v.begin() + a.v.size(), a.v.begin());
    std::copy(joined.v.begin() + a.v.size(), joined.v.end(), b.v.begin());
}

// ---------------------------------------------------------------------------
// 3D convolution (im2col + GEMM, chunked over x-slabs to bound memory)
// ---------------------------------------------------------------------------

template <typename T>
class Conv3d {
public:
    Conv3d() = default;
    Conv3d(ParamStore<T>& store, const std::string& name, int cin, int cout, int ksize, int stride,
           int pad, Rng& rng)
        : cin_(cin), cout_(cout), k_(ksize), stride_(stride), pad_(pad) {
        weight_ = &store.add(name + ".weight", {cout, cin, ksize, ksize, ksize});
        bias_ = &store.add(name + ".bias", {cout});
        he_normal_init(*weight_, static_cast<std::size_t>(cin) * ksize * ksize * ksize, rng);
        // bias stays zero
    }

    int out_dim(int n) const { return (n + 2 * pad_ - k_) / stride_ + 1; }

    Tensor4T<T> forward(const Tensor4T<T>& x) {
        if (x.c != cin_) throw runtime_error("conv: channel mismatch");
        input_ = x;
        const int ox = out_dim(x.nx), oy = out_dim(x.ny), oz = out_dim(x.nz);
        if (ox <= 0 || oy <= 0 || oz <= 0) throw runtime_error("conv: output dim collapsed");
        Tensor4T<T> out(cout_, ox, oy, oz);

        const int K = cin_ * k_ * k_ * k_;
        const int slab = slab_size(ox, oy, oz);
        std::vector<T> cols(static_cast<std::size_t>(K) * slab * oy * oz);

        using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Eigen::Map<const Mat> w(weight_->w.data(), cout_, K);

        for (int x0 = 0; x0 < ox; x0 += slab) {
            const int xs = std::min(slab, ox - x0);
            const int ncols = xs * oy * oz;
            im2col(x, x0, xs, oy, oz, cols.data());
            Eigen::Map<const Mat> colmat(cols.data(), K, ncols);
            Mat y = w * colmat;
            for (int c = 0; c < cout_; ++c) {
                T* dst = out.channel(c) + static_cast<std::size_t>(x0) * oy * oz;
                const T b = bias_->w[c];
                for (int j = 0; j < ncols; ++j) dst[j] = y(c, j) + b;
            }
        }
        return out;
    }

    Tensor4T<T> backward(const Tensor4T<T>& dy) {
        const Tensor4T<T>& x = input_;
        const int ox = dy.nx, oy = dy.ny, oz = dy.nz;
        Tensor4T<T> dx(x.c, x.nx, x.ny, x.nz);

        const int K = cin_ * k_ * k_ * k_;
        const int slab = slab_size(ox, oy, oz);
        std::vector<T> cols(static_cast<std::size_t>(K) * slab * oy * oz);

        using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Eigen::Map<const Mat> w(weight_->w.data(), cout_, K);
        Eigen::Map<Mat> dw(weight_->g.data(), cout_, K);

        for (int x0 = 0; x0 < ox; x0 += slab) {
            const int xs = std::min(slab, ox - x0);
            const int ncols = xs * oy * oz;

            Mat dyslab(cout_, ncols);
            for (int c = 0; c < cout_; ++c) {
                const T* src = dy.channel(c) + static_cast<std::size_t>(x0) * oy * oz;
                for (int j = 0; j < ncols; ++j) dyslab(c, j) = src[j];
            }

            im2col(x, x0, xs, oy, oz, cols.data());
            Eigen::Map<const Mat> colmat(cols.data(), K, ncols);
            dw.noalias() += dyslab * colmat.transpose();
            for (int c = 0; c < cout_; ++c) {
                T s = T(0);
                for (int j = 0; j < ncols; ++j) s += dyslab(c, j);
                bias_->g[c] += s;
            }

            Mat dcols = w.transpose() * dyslab;
            col2im_add(dcols.data(), x0, xs, oy, oz, dx);
        }
        return dx;
    }

    Param<T>* weight() { return weight_; }
    Param<T>* bias() { return bias_; }

private:
    int slab_size(int ox, int oy, int oz) const {
        // Keep the column buffer around ~32 MB.
        const std::size_t per_x = static_cast<std::size_t>(cin_) * k_ * k_ * k_ * oy * oz;
        const std::size_t budget = (32u << 20) / sizeof(T);
        int slab = static_cast<int>(budget / std::max<std::size_t>(per_x, 1));
        return std::max(1, std::min(slab, ox));
    }

    // cols is (K x ncols) row-major; row r spans output voxels of the slab in
    // (x, y, z) order, z fastest.
    void im2col(const Tensor4T<T>& x, int x0, int xs, int oy, int oz, T* cols) const {
        const int oz_stride = stride_;
        for (int ci = 0; ci < cin_; ++ci) {
            for (int dx = 0; dx < k_; ++dx)
                for (int dyk = 0; dyk < k_; ++dyk)
                    for (int dz = 0; dz < k_; ++dz) {
                        const int r = ((ci * k_ + dx) * k_ + dyk) * k_ + dz;
                        T* row = cols + static_cast<std::size_t>(r) * xs * oy * oz;
                        for (int xo = 0; xo < xs; ++xo) {
                            const int xi = (x0 + xo) * stride_ + dx - pad_;
                            for (int yo = 0; yo < oy; ++yo) {
                                T* dst = row + (static_cast<std::size_t>(xo) * oy + yo) * oz;
                                const int yi = yo * stride_ + dyk - pad_;
                                if (xi < 0 || xi >= x.nx || yi < 0 || yi >= x.ny) {
                                    std::fill(dst, dst + oz, T(0));
                                    continue;
                                }
                                const T* src = &x.at(ci, xi, yi, 0);
                                if (oz_stride == 1) {
                                    // valid z range: zi = zo + dz - pad in [0, nz)
                                    const int zi0 = dz - pad_;
                                    const int lo = std::max(0, -zi0);
                                    const int hi = std::min(oz, x.nz - zi0);
                                    for (int zo = 0; zo < lo; ++zo) dst[zo] = T(0);
                                    if (hi > lo)
                                        std::memcpy(dst + lo, src + zi0 + lo,
                                                    sizeof(T) * static_cast<std::size_t>(hi - lo));
                                    for (int zo = std::max(lo, hi); zo < oz; ++zo) dst[zo] = T(0);
                                } else {
                                    for (int zo = 0; zo < oz; ++zo) {
                                        const int zi = zo * stride_ + dz - pad_;
                                        dst[zo] = (zi >= 0 && zi < x.nz) ? src[zi] : T(0);
                                    }
                                }
                            }
                        }
                    }
        }
    }

    void col2im_add(const T* dcols, int x0, int xs, int oy, int oz, Tensor4T<T>& dx) const {
        for (int ci = 0; ci < cin_; ++ci) {
            for (int dxk = 0; dxk < k_; ++dxk)
                for (int dyk = 0; dyk < k_; ++dyk)
                    for (int dz = 0; dz < k_; ++dz) {
                        const int r = ((ci * k_ + dxk) * k_ + dyk) * k_ + dz;
                        const T* row = dcols + static_cast<std::size_t>(r) * xs * oy * oz;
                        for (int xo = 0; xo < xs; ++xo) {
                            const int xi = (x0 + xo) * stride_ + dxk - pad_;
                            if (xi < 0 || xi >= dx.nx) continue;
                            for (int yo = 0; yo < oy; ++yo) {
                                const int yi = yo * stride_ + dyk - pad_;
                                if (yi < 0 || yi >= dx.ny) continue;
                                const T* src = row + (static_cast<std::size_t>(xo) * oy + yo) * oz;
                                T* dst = &dx.at(ci, xi, yi, 0);
                                for (int zo = 0; zo < oz; ++zo) {
                                    const int zi = zo * stride_ + dz - pad_;
                                    if (zi >= 0 && zi < dx.nz) dst[zi] += src[zo];
                                }
                            }
                        }
                    }
        }
    }

    int cin_ = 0, cout_ = 0, k_ = 3, stride_ = 1, pad_ = 1;
    Param<T>* weight_ = nullptr;
    Param<T>* bias_ = nullptr;
    Tensor4T<T> input_;
};

// ---------------------------------------------------------------------------
// Instance normalization (per sample, per channel; no batch statistics)
// ---------------------------------------------------------------------------

template <typename T>
class InstanceNorm {
public:
    static constexpr double kEps = 1e-5;

    InstanceNorm() = default;
    InstanceNorm(ParamStore<T>& store, const std::string& name, int channels) : c_(channels) {
        gamma_ = &store.add(name + ".gamma", {channels});
        beta_ = &store.add(name + ".beta", {channels});
        std::fill(gamma_->w.begin(), gamma_->w.end(), T(1));
    }

    Tensor4T<T> forward(const Tensor4T<T>& x) {
        if (x.c != c_) throw runtime_error("instance norm: channel mismatch");
        const std::size_t n = x.spatial_size();
        xhat_ = Tensor4T<T>(x.c, x.nx, x.ny, x.nz);
        invstd_.assign(c_, T(0));
        Tensor4T<T> out(x.c, x.nx, x.ny, x.nz);
        for (int c = 0; c < c_; ++c) {
            const T* src = x.channel(c);
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += src[i];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = src[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(n);
            const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
            invstd_[c] = inv;
            T* xh = xhat_.channel(c);
            T* dst = out.channel(c);
            const T g = gamma_->w[c], b = beta_->w[c];
            for (std::size_t i = 0; i < n; ++i) {
                xh[i] = static_cast<T>((src[i] - mean) * inv);
                dst[i] = g * xh[i] + b;
            }
        }
        return out;
    }

    Tensor4T<T> backward(const Tensor4T<T>& dy) {
        const std::size_t n = xhat_.spatial_size();
        Tensor4T<T> dx(dy.c, dy.nx, dy.ny, dy.nz);
        for (int c = 0; c < c_; ++c) {
            const T* dyc = dy.channel(c);
            const T* xh = xhat_.channel(c);
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                sum_dy += dyc[i];
                sum_dy_xh += static_cast<double>(dyc[i]) * xh[i];
            }
            gamma_->g[c] += static_cast<T>(sum_dy_xh);
            beta_->g[c] += static_cast<T>(sum_dy);
            const double g = gamma_->w[c];
            const double mean_dy = sum_dy / static_cast<double>(n);
            const double mean_dy_xh = sum_dy_xh / static_cast<double>(n);
            const double scale = g * invstd_[c];
            T* dxc = dx.channel(c);
            for (std::size_t i = 0; i < n; ++i)
                dxc[i] = static_cast<T>(scale * (dyc[i] - mean_dy - xh[i] * mean_dy_xh));
        }
        return dx;
    }

private:
    int c_ = 0;
    Param<T>* gamma_ = nullptr;
    Param<T>* beta_ = nullptr;
    Tensor4T<T> xhat_;
    std::vector<T> invstd_;
};

// ---------------------------------------------------------------------------
// Activations / pooling / resampling
// ---------------------------------------------------------------------------

template <typename T>
class ReLU {
public:
    Tensor4T<T> forward(const Tensor4T<T>& x) {
        mask_.assign(x.size(), 0);
        Tensor4T<T> out = x;
        for (std::size_t i = 0; i < out.v.size(); ++i) {
            if (out.v[i] > T(0)) mask_[i] = 1;
            else out.v[i] = T(0);
        }
        return out;
    }
    Tensor4T<T> backward(const Tensor4T<T>& dy) {
        Tensor4T<T> dx = dy;
        for (std::size_t i = 0; i < dx.v.size(); ++i)
            if (!mask_[i]) dx.v[i] = T(0);
        return dx;
    }

private:
    std::vector<std::uint8_t> mask_;
};

// 2x2x2 max pooling, stride 2. Input dims must be even.
template <typename T>
class MaxPool2 {
public:
    Tensor4T<T> forward(const Tensor4T<T>& x) {
        if (x.nx % 2 || x.ny % 2 || x.nz % 2)
            throw runtime_error("maxpool: dims must be even (pad first)");
        in_shape_ = {x.c, x.nx, x.ny, x.nz};
        Tensor4T<T> out(x.c, x.nx / 2, x.ny / 2, x.nz / 2);
        argmax_.assign(out.size(), 0);
        std::size_t o = 0;
        for (int c = 0; c < x.c; ++c)
            for (int i = 0; i < out.nx; ++i)
                for (int j = 0; j < out.ny; ++j)
                    for (int k = 0; k < out.nz; ++k, ++o) {
                        T best = -std::numeric_limits<T>::infinity();
                        std::size_t best_idx = 0;
                        for (int di = 0; di < 2; ++di)
                            for (int dj = 0; dj < 2; ++dj)
                                for (int dk = 0; dk < 2; ++dk) {
                                    const std::size_t idx =
                                        x.idx(c, 2 * i + di, 2 * j + dj, 2 * k + dk);
                                    if (x.v[idx] > best) {
                                        best = x.v[idx];
                                        best_idx = idx;
                                    }
                                }
                        out.v[o] = best;
                        argmax_[o] = best_idx;
                    }
        return out;
    }

    Tensor4T<T> backward(const Tensor4T<T>& dy) {
        Tensor4T<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
        for (std::size_t o = 0; o < dy.v.size(); ++o) dx.v[argmax_[o]] += dy.v[o];
        return dx;
    }

private:
    std::array<int, 4> in_shape_ = {0, 0, 0, 0};
    std::vector<std::size_t> argmax_;
};

// Nearest-neighbor 2x upsampling.
template <typename T>
class Upsample2 {
public:
    Tensor4T<T> forward(const Tensor4T<T>& x) {
        in_shape_ = {x.c, x.nx, x.ny, x.nz};
        Tensor4T<T> out(x.c, 2 * x.nx, 2 * x.ny, 2 * x.nz);
        for (int c = 0; c < x.c; ++c)
            for (int i = 0; i < out.nx; ++i)
                for (int j = 0; j < out.ny; ++j) {
                    const T* src = &x.at(c, i / 2, j / 2, 0);
                    T* dst = &out.at(c, i, j, 0);
                    for (int k = 0; k < out.nz; ++k) dst[k] = src[k / 2];
                }
        return out;
    }

    Tensor4T<T> backward(const Tensor4T<T>& dy) {
        Tensor4T<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
        for (int c = 0; c < dx.c; ++c)
            for (int i = 0; i < dy.nx; ++i)
                for (int j = 0; j < dy.ny; ++j) {
                    const T* src = &dy.at(c, i, j, 0);
                    T* dst = &dx.at(c, i / 2, j / 2, 0);
                    for (int k = 0; k < dy.nz; ++k) dst[k / 2] += src[k];
                }
        return dx;
    }

private:
    std::array<int, 4> in_shape_ = {0, 0, 0, 0};
};

// Adaptive average pool to 1x1x1: per-channel spatial mean. Output shape is
// independent of the spatial input dims, which is what lets the classifier
// accept arbitrary ROI sizes.
template <typename T>
class GlobalAvgPool {
public:
    std::vector<T> forward(const Tensor4T<T>& x) {
        in_shape_ = {x.c, x.nx, x.ny, x.nz};
        std::vector<T> out(x.c);
        const std::size_t n = x.spatial_size();
        for (int c = 0; c < x.c; ++c) {
            double s = 0.0;
            const T* src = x.channel(c);
            for (std::size_t i = 0; i < n; ++i) s += src[i];
            out[c] = static_cast<T>(s / static_cast<double>(n));
        }
        return out;
    }

    Tensor4T<T> backward(const std::vector<T>& dy) {
        Tensor4T<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
        const std::size_t n = dx.spatial_size();
        for (int c = 0; c < dx.c; ++c) {
            const T g = static_cast<T>(dy[c] / static_cast<double>(n));
            T* dst = dx.channel(c);
            for (std::size_t i = 0; i < n; ++i) dst[i] = g;
        }
        return dx;
    }

private:
    std::array<int, 4> in_shape_ = {0, 0, 0, 0};
};

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng)
        : in_(in), out_(out) {
        weight_ = &store.add(name + ".weight", {out, in});
        bias_ = &store.add(name + ".bias", {out});
        he_normal_init(*weight_, static_cast<std::size_t>(in), rng);
    }

    std::vector<T> forward(const std::vector<T>& x) {
        input_ = x;
        std::vector<T> y(out_);
        for (int o = 0; o < out_; ++o) {
            double s = bias_->w[o];
            const T* w = weight_->w.data() + static_cast<std::size_t>(o) * in_;
            for (int i = 0; i < in_; ++i) s += static_cast<double>(w[i]) * x[i];
            y[o] = static_cast<T>(s);
        }
        return y;
    }

    std::vector<T> backward(const std::vector<T>& dy) {
        std::vector<T> dx(in_, T(0));
        for (int o = 0; o < out_; ++o) {
            const T* w = weight_->w.data() + static_cast<std::size_t>(o) * in_;
            T* gw = weight_->g.data() + static_cast<std::size_t>(o) * in_;
            bias_->g[o] += dy[o];
            for (int i = 0; i < in_; ++i) {
                gw[i] += dy[o] * input_[i];
                dx[i] += dy[o] * w[i];
            }
        }
        return dx;
    }

private:
    int in_ = 0, out_ = 0;
    Param<T>* weight_ = nullptr;
    Param<T>* bias_ = nullptr;
    std::vector<T> input_;
};

// conv -> instance norm -> ReLU, the unit both networks are built from.
template <typename T>
class ConvBlock {
public:
    ConvBlock() = default;
    ConvBlock(ParamStore<T>& store, const std::string& name, int cin, int cout, int stride,
              Rng& rng)
        : conv_(store, name + ".conv", cin, cout, 3, stride, 1, rng),
          norm_(store, name + ".norm", cout) {}

    Tensor4T<T> forward(const Tensor4T<T>& x) {
        return relu_.forward(norm_.forward(conv_.forward(x)));
    }
    Tensor4T<T> backward(const Tensor4T<T>& dy) {
        return conv_.backward(norm_.backward(relu_.backward(dy)));
    }

private:
    Conv3d<T> conv_;
    InstanceNorm<T> norm_;
    ReLU<T> relu_;
};

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay. A zero-gradient step still multiplies
// the weights by (1 - lr*wd).
// ---------------------------------------------------------------------------

template <typename T>
class AdamW {
public:
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore<T>& store) {
        auto& params = store.params();
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t p = 0; p < params.size(); ++p) {
                m_[p].assign(params[p].size(), 0.0);
                v_[p].assign(params[p].size(), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto& par = params[p];
            auto& m = m_[p];
            auto& v = v_[p];
            for (std::size_t i = 0; i < par.size(); ++i) {
                const double g = par.g[i];
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                double w = par.w[i];
                w -= lr_ * wd_ * w;
                w -= lr_ * mhat / (std::sqrt(vhat) + eps_);
                par.w[i] = static_cast<T>(w);
            }
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    double lr_, wd_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace glio::nn
