#pragma once

#include <cmath>
#include <optional>
#include <set>

#include "glio/error.hpp"
#include "glio/rng.hpp"
#include "glio/tensor.hpp"
#include "glio/volume.hpp"

namespace glio {

struct ElasticConfig {
    double grid_mm = 32.0;     // coarse control-grid spacing
    double max_disp_mm = 4.0;  // displacement vector magnitude bound
    double p_apply = 0.3;
};

struct AugmentConfig {
    std::array<double, 3> p_flip = {0.5, 0.5, 0.5};
    double rot_max_deg = 15.0;    // continuous in-plane range [-r, +r]
    bool rot_right_angles = false; // draw k*90 deg instead (index permutation)
    std::pair<double, double> intensity_scale_range = {0.9, 1.1};
    ElasticConfig elastic;
    double p_channel_drop = 0.25;
    std::uint64_t seed = 0;

    void validate() const {
        for (double p : p_flip)
            if (p < 0.0 || p > 1.0) throw data_error("augment: p_flip must be in [0,1]");
        if (p_channel_drop < 0.0 || p_channel_drop > 1.0)
            throw data_error("augment: p_channel_drop must be in [0,1]");
        if (elastic.p_apply < 0.0 || elastic.p_apply > 1.0)
            throw data_error("augment: elastic p_apply must be in [0,1]");
        if (intensity_scale_range.first > intensity_scale_range.second)
            throw data_error("augment: intensity scale lo > hi");
        if (elastic.max_disp_mm < 0.0) throw data_error("augment: max displacement < 0");
        if (elastic.grid_mm <= 0.0) throw data_error("augment: elastic grid spacing <= 0");
        if (rot_max_deg < 0.0) throw data_error("augment: rotation range < 0");
    }
};

enum class Interp { Nearest, Linear };

// ---------------------------------------------------------------------------
// Deterministic transform cores (random wrappers below draw the parameters)
// ---------------------------------------------------------------------------

namespace aug {

template <typename T>
void flip_axes(Tensor4T<T>& x, bool fx, bool fy, bool fz) {
    if (!fx && !fy && !fz) return;
    Tensor4T<T> out(x.c, x.nx, x.ny, x.nz);
    for (int c = 0; c < x.c; ++c)
        for (int i = 0; i < x.nx; ++i)
            for (int j = 0; j < x.ny; ++j)
                for (int k = 0; k < x.nz; ++k)
                    out.at(c, fx ? x.nx - 1 - i : i, fy ? x.ny - 1 - j : j,
                           fz ? x.nz - 1 - k : k) = x.at(c, i, j, k);
    x = std::move(out);
}

inline void flip_axes(Volume& v, bool fx, bool fy, bool fz) {
    if (!fx && !fy && !fz) return;
    Volume out(v.nx, v.ny, v.nz, v.spacing);
    for (int i = 0; i < v.nx; ++i)
        for (int j = 0; j < v.ny; ++j)
            for (int k = 0; k < v.nz; ++k)
                out.at(fx ? v.nx - 1 - i : i, fy ? v.ny - 1 - j : j, fz ? v.nz - 1 - k : k) =
                    v.at(i, j, k);
    v = std::move(out);
}

// In-plane sampler shared by rotation: reads (fx, fy, k-th slice) with the
// requested interpolation; out-of-bounds reads are zero.
template <typename Read>
double sample_plane(Read&& read, int nx, int ny, double fx, double fy, Interp interp) {
    if (interp == Interp::Nearest) {
        const int x = static_cast<int>(std::lround(fx));
        const int y = static_cast<int>(std::lround(fy));
        if (x < 0 || x >= nx || y < 0 || y >= ny) return 0.0;
        return read(x, y);
    }
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    const double tx = fx - x0, ty = fy - y0;
    double acc = 0.0;
    for (int dx = 0; dx <= 1; ++dx)
        for (int dy = 0; dy <= 1; ++dy) {
            const int x = x0 + dx, y = y0 + dy;
            if (x < 0 || x >= nx || y < 0 || y >= ny) continue;
            acc += (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * read(x, y);
        }
    return acc;
}

// Rotation about the z (inferior-superior) axis by an arbitrary angle.
// Output keeps the input dims; corners exposed by the rotation become zero.
template <typename T>
Tensor4T<T> rotate_inplane(const Tensor4T<T>& x, double degrees, Interp interp) {
    const double rad = degrees * M_PI / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cx = 0.5 * (x.nx - 1), cy = 0.5 * (x.ny - 1);
    Tensor4T<T> out(x.c, x.nx, x.ny, x.nz);
    for (int ch = 0; ch < x.c; ++ch)
        for (int i = 0; i < x.nx; ++i)
            for (int j = 0; j < x.ny; ++j) {
                // pull-back: source position = R(-theta) * (out - center)
                const double u = i - cx, v = j - cy;
                const double fx = cx + c * u + s * v;
                const double fy = cy - s * u + c * v;
                for (int k = 0; k < x.nz; ++k)
                    out.at(ch, i, j, k) = static_cast<T>(sample_plane(
                        [&](int a, int b) { return static_cast<double>(x.at(ch, a, b, k)); },
                        x.nx, x.ny, fx, fy, interp));
            }
    return out;
}

inline Volume rotate_inplane(const Volume& v, double degrees, Interp interp) {
    Tensor4T<float> t(1, v.nx, v.ny, v.nz);
    std::copy(v.data.begin(), v.data.end(), t.v.begin());
    Tensor4T<float> r = rotate_inplane(t, degrees, interp);
    Volume out(v.nx, v.ny, v.nz, v.spacing);
    std::copy(r.v.begin(), r.v.end(), out.data.begin());
    return out;
}

// Exact +90-degree steps as index permutation. Requires square in-plane
// dims. One step maps voxel (x, y) to (N-1-y, x).
template <typename T>
Tensor4T<T> rotate90_inplane(const Tensor4T<T>& x, int quarter_turns) {
    if (x.nx != x.ny) throw data_error("rotate90: in-plane dims must be square");
    int k = ((quarter_turns % 4) + 4) % 4;
    Tensor4T<T> cur = x;
    const int n = x.nx;
    for (int step = 0; step < k; ++step) {
        Tensor4T<T> out(cur.c, n, n, cur.nz);
        for (int c = 0; c < cur.c; ++c)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    for (int z = 0; z < cur.nz; ++z)
                        out.at(c, n - 1 - j, i, z) = cur.at(c, i, j, z);
        cur = std::move(out);
    }
    return cur;
}

inline Volume rotate90_inplane(const Volume& v, int quarter_turns) {
    Tensor4T<float> t(1, v.nx, v.ny, v.nz);
    std::copy(v.data.begin(), v.data.end(), t.v.begin());
    Tensor4T<float> r = rotate90_inplane(t, quarter_turns);
    Volume out(v.nx, v.ny, v.nz, v.spacing);
    std::copy(r.v.begin(), r.v.end(), out.data.begin());
    return out;
}

// Smooth random displacement field: vectors on a coarse grid, trilinearly
// interpolated to voxel resolution. Vector magnitudes are bounded by
// max_disp (mm), and trilinear blending keeps the bound everywhere.
struct DisplacementField {
    int gx = 0, gy = 0, gz = 0;          // grid node counts
    double step_vox[3] = {1, 1, 1};      // node spacing in voxels
    std::vector<std::array<float, 3>> nodes; // displacement in voxels

    std::array<double, 3> at(double x, double y, double z) const {
        const double fx = x / step_vox[0], fy = y / step_vox[1], fz = z / step_vox[2];
        const int x0 = std::min(static_cast<int>(std::floor(fx)), gx - 2);
        const int y0 = std::min(static_cast<int>(std::floor(fy)), gy - 2);
        const int z0 = std::min(static_cast<int>(std::floor(fz)), gz - 2);
        const double tx = fx - x0, ty = fy - y0, tz = fz - z0;
        std::array<double, 3> d = {0, 0, 0};
        for (int dx = 0; dx <= 1; ++dx)
            for (int dy = 0; dy <= 1; ++dy)
                for (int dz = 0; dz <= 1; ++dz) {
                    const double w =
                        (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
                    const auto& node =
                        nodes[(static_cast<std::size_t>(x0 + dx) * gy + (y0 + dy)) * gz +
                              (z0 + dz)];
                    for (int a = 0; a < 3; ++a) d[a] += w * node[a];
                }
        return d;
    }
};

inline DisplacementField make_elastic_field(int nx, int ny, int nz,
                                            const std::array<double, 3>& spacing_mm,
                                            const ElasticConfig& cfg, Rng& rng) {
    DisplacementField f;
    for (int a = 0; a < 3; ++a) {
        const int n = (a == 0 ? nx : a == 1 ? ny : nz);
        double step = cfg.grid_mm / spacing_mm[a];
        if (step >= n) step = std::max(1.0, n - 1.0); // grid must fit inside the volume
        f.step_vox[a] = step;
        const int nodes = static_cast<int>(std::ceil((n - 1) / step)) + 2;
        if (a == 0) f.gx = nodes;
        else if (a == 1) f.gy = nodes;
        else f.gz = nodes;
    }
    f.nodes.resize(static_cast<std::size_t>(f.gx) * f.gy * f.gz);
    for (auto& node : f.nodes) {
        // uniform in the ball of radius max_disp_mm, then to voxel units
        double v[3];
        do {
            for (double& c : v) c = rng.uniform(-cfg.max_disp_mm, cfg.max_disp_mm);
        } while (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] >
                 cfg.max_disp_mm * cfg.max_disp_mm);
        for (int a = 0; a < 3; ++a) node[a] = static_cast<float>(v[a] / spacing_mm[a]);
    }
    return f;
}

template <typename T>
Tensor4T<T> apply_field(const Tensor4T<T>& x, const DisplacementField& f, Interp interp) {
    Tensor4T<T> out(x.c, x.nx, x.ny, x.nz);
    for (int i = 0; i < x.nx; ++i)
        for (int j = 0; j < x.ny; ++j)
            for (int k = 0; k < x.nz; ++k) {
                const auto d = f.at(i, j, k);
                const double sx = i - d[0], sy = j - d[1], sz = k - d[2];
                for (int c = 0; c < x.c; ++c) {
                    double val = 0.0;
                    if (interp == Interp::Nearest) {
                        const int a = static_cast<int>(std::lround(sx));
                        const int b = static_cast<int>(std::lround(sy));
                        const int g = static_cast<int>(std::lround(sz));
                        if (a >= 0 && a < x.nx && b >= 0 && b < x.ny && g >= 0 && g < x.nz)
                            val = x.at(c, a, b, g);
                    } else {
                        const int x0 = static_cast<int>(std::floor(sx));
                        const int y0 = static_cast<int>(std::floor(sy));
                        const int z0 = static_cast<int>(std::floor(sz));
                        const double tx = sx - x0, ty = sy - y0, tz = sz - z0;
                        for (int dx = 0; dx <= 1; ++dx)
                            for (int dy = 0; dy <= 1; ++dy)
                                for (int dz = 0; dz <= 1; ++dz) {
                                    const int a = x0 + dx, b = y0 + dy, g = z0 + dz;
                                    if (a < 0 || a >= x.nx || b < 0 || b >= x.ny || g < 0 ||
                                        g >= x.nz)
                                        continue;
                                    val += (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) *
                                           (dz ? tz : 1 - tz) * x.at(c, a, b, g);
                                }
                    }
                    out.at(c, i, j, k) = static_cast<T>(val);
                }
            }
    return out;
}

inline Volume apply_field(const Volume& v, const DisplacementField& f, Interp interp) {
    Tensor4T<float> t(1, v.nx, v.ny, v.nz);
    std::copy(v.data.begin(), v.data.end(), t.v.begin());
    Tensor4T<float> r = apply_field(t, f, interp);
    Volume out(v.nx, v.ny, v.nz, v.spacing);
    std::copy(r.v.begin(), r.v.end(), out.data.begin());
    return out;
}

} // namespace aug

// ---------------------------------------------------------------------------
// Randomized training-time transforms
// ---------------------------------------------------------------------------

// Independently zeroes droppable channels, under the hard constraint that
// T1ce is never zeroed and at least one of {T2, FLAIR} stays nonzero. A draw
// violating the constraint is redrawn (rejection sampling).
inline Tensor4 modality_dropout(const Tensor4& channels, const std::set<Modality>& present,
                                Rng& rng, double p_channel_drop) {
    if (channels.c != kNumModalities) throw data_error("modality_dropout: expected 4 channels");
    if (!present.count(Modality::T1ce))
        throw data_error("modality_dropout: T1ce must be present");
    if (!present.count(Modality::T2) && !present.count(Modality::FLAIR))
        throw data_error("modality_dropout: need at least one of T2/FLAIR");
    if (p_channel_drop <= 0.0) return channels;

    const bool has_t2 = present.count(Modality::T2) > 0;
    const bool has_flair = present.count(Modality::FLAIR) > 0;
    std::array<bool, kNumModalities> drop{};
    for (int attempt = 0; attempt < 10000; ++attempt) {
        drop = {false, false, false, false};
        for (Modality m : {Modality::T1, Modality::T2, Modality::FLAIR})
            if (present.count(m)) drop[static_cast<int>(m)] = rng.bernoulli(p_channel_drop);
        const bool t2_alive = has_t2 && !drop[static_cast<int>(Modality::T2)];
        const bool flair_alive = has_flair && !drop[static_cast<int>(Modality::FLAIR)];
        if (t2_alive || flair_alive) break;
        drop = {false, false, false, false}; // p=1 degenerate case: keep everything
    }

    Tensor4 out = channels;
    for (int m = 0; m < kNumModalities; ++m)
        if (drop[m]) {
            float* ch = out.channel(m);
            std::fill(ch, ch + out.spatial_size(), 0.0f);
        }
    return out;
}

// Each spatial axis reversed independently with probability p_flip[axis];
// image and mask receive the identical flip decision.
inline void random_flip(Tensor4& x, Volume* mask, Rng& rng, const AugmentConfig& cfg) {
    const bool fx = rng.bernoulli(cfg.p_flip[0]);
    const bool fy = rng.bernoulli(cfg.p_flip[1]);
    const bool fz = rng.bernoulli(cfg.p_flip[2]);
    aug::flip_axes(x, fx, fy, fz);
    if (mask) aug::flip_axes(*mask, fx, fy, fz);
}

// Rotation about the z axis; linear resampling for the image, nearest for
// the mask, one shared angle. With rot_right_angles and square in-plane
// dims the rotation is an exact index permutation.
inline void axial_rotate(Tensor4& x, Volume* mask, Rng& rng, const AugmentConfig& cfg) {
    if (cfg.rot_right_angles && x.nx == x.ny) {
        const int k = static_cast<int>(rng.below(4));
        if (k == 0) return;
        x = aug::rotate90_inplane(x, k);
        if (mask) *mask = aug::rotate90_inplane(*mask, k);
        return;
    }
    const double angle = rng.uniform(-cfg.rot_max_deg, cfg.rot_max_deg);
    if (angle == 0.0) return;
    x = aug::rotate_inplane(x, angle, Interp::Linear);
    if (mask) {
        *mask = aug::rotate_inplane(*mask, angle, Interp::Nearest);
        for (float& v : mask->data) v = (v >= 0.5f) ? 1.0f : 0.0f;
    }
}

// One multiplicative factor per present channel, drawn independently.
inline void intensity_scale(Tensor4& x, const std::set<Modality>& present, Rng& rng,
                            const AugmentConfig& cfg) {
    for (Modality m : all_modalities()) {
        if (!present.count(m)) continue;
        const float f = static_cast<float>(
            rng.uniform(cfg.intensity_scale_range.first, cfg.intensity_scale_range.second));
        float* ch = x.channel(static_cast<int>(m));
        for (std::size_t i = 0; i < x.spatial_size(); ++i) ch[i] *= f;
    }
}

inline void elastic_deform(Tensor4& x, Volume* mask, Rng& rng, const AugmentConfig& cfg,
                           const std::array<double, 3>& spacing_mm = {1.0, 1.0, 1.0}) {
    if (!rng.bernoulli(cfg.elastic.p_apply)) return;
    if (cfg.elastic.max_disp_mm == 0.0) return;
    const auto field = aug::make_elastic_field(x.nx, x.ny, x.nz, spacing_mm, cfg.elastic, rng);
    x = aug::apply_field(x, field, Interp::Linear);
    if (mask) {
        *mask = aug::apply_field(*mask, field, Interp::Nearest);
        for (float& v : mask->data) v = (v >= 0.5f) ? 1.0f : 0.0f;
    }
}

// Full pipeline in the fixed order: dropout, flip, rotate, elastic,
// intensity scale.
inline void augment_sample(Tensor4& channels, Volume* mask, const std::set<Modality>& present,
                           Rng& rng, const AugmentConfig& cfg,
                           const std::array<double, 3>& spacing_mm = {1.0, 1.0, 1.0}) {
    cfg.validate();
    channels = modality_dropout(channels, present, rng, cfg.p_channel_drop);
    random_flip(channels, mask, rng, cfg);
    axial_rotate(channels, mask, rng, cfg);
    elastic_deform(channels, mask, rng, cfg, spacing_mm);
    intensity_scale(channels, present, rng, cfg);
}

} // namespace glio
