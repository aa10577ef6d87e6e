#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "glio/error.hpp"
#include "glio/volume.hpp"

namespace glio {

struct PreprocessConfig {
    std::array<double, 3> target_spacing = {1.0, 1.0, 1.0};
    int image_order = 1; // 0 = nearest, 1 = trilinear, 3 = cubic (Keys)
    // Masks are always resampled nearest-neighbor and re-binarized.

    void validate() const {
        for (double s : target_spacing)
            if (!(s > 0.0)) throw data_error("preprocess: target spacing must be > 0");
        if (image_order != 0 && image_order != 1 && image_order != 3)
            throw data_error("preprocess: interpolation order must be 0, 1 or 3");
    }
};

namespace detail {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Keys cubic convolution kernel, a = -0.5.
inline double cubic_weight(double t) {
    t = std::fabs(t);
    if (t < 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    return 0.0;
}

inline float sample_nearest(const Volume& v, double fx, double fy, double fz) {
    const int x = clampi(static_cast<int>(std::lround(fx)), 0, v.nx - 1);
    const int y = clampi(static_cast<int>(std::lround(fy)), 0, v.ny - 1);
    const int z = clampi(static_cast<int>(std::lround(fz)), 0, v.nz - 1);
    return v.at(x, y, z);
}

inline float sample_trilinear(const Volume& v, double fx, double fy, double fz) {
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    const int z0 = static_cast<int>(std::floor(fz));
    const double tx = fx - x0, ty = fy - y0, tz = fz - z0;
    double acc = 0.0;
    for (int dx = 0; dx <= 1; ++dx)
        for (int dy = 0; dy <= 1; ++dy)
            for (int dz = 0; dz <= 1; ++dz) {
                const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
                if (w == 0.0) continue;
                acc += w * v.at(clampi(x0 + dx, 0, v.nx - 1), clampi(y0 + dy, 0, v.ny - 1),
                                clampi(z0 + dz, 0, v.nz - 1));
            }
    return static_cast<float>(acc);
}

inline float sample_cubic(const Volume& v, double fx, double fy, double fz) {
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    const int z0 = static_cast<int>(std::floor(fz));
    double wx[4], wy[4], wz[4];
    for (int i = 0; i < 4; ++i) {
        wx[i] = cubic_weight(fx - (x0 - 1 + i));
        wy[i] = cubic_weight(fy - (y0 - 1 + i));
        wz[i] = cubic_weight(fz - (z0 - 1 + i));
    }
    double acc = 0.0;
    for (int i = 0; i < 4; ++i) {
        const int x = clampi(x0 - 1 + i, 0, v.nx - 1);
        for (int j = 0; j < 4; ++j) {
            const int y = clampi(y0 - 1 + j, 0, v.ny - 1);
            const double wxy = wx[i] * wy[j];
            if (wxy == 0.0) continue;
            for (int k = 0; k < 4; ++k) {
                const int z = clampi(z0 - 1 + k, 0, v.nz - 1);
                acc += wxy * wz[k] * v.at(x, y, z);
            }
        }
    }
    return static_cast<float>(acc);
}

inline float sample_volume(const Volume& v, double fx, double fy, double fz, int order) {
    switch (order) {
        case 0: return sample_nearest(v, fx, fy, fz);
        case 1: return sample_trilinear(v, fx, fy, fz);
        case 3: return sample_cubic(v, fx, fy, fz);
    }
    throw data_error("unsupported interpolation order " + std::to_string(order));
}

} // namespace detail

// Resamples to the target spacing. Output dims are round(n*s/target) per
// axis (minimum 1), which preserves the physical extent to within a voxel.
// Voxel centers sit at (i + 0.5) * spacing, so the grids share their corner
// origin. A volume already at the target spacing passes through untouched.
inline Volume resample_isotropic(const Volume& v, const PreprocessConfig& cfg) {
    cfg.validate();
    if (v.nx <= 0 || v.ny <= 0 || v.nz <= 0) throw data_error("resample: empty volume");
    if (v.spacing[0] == cfg.target_spacing[0] && v.spacing[1] == cfg.target_spacing[1] &&
        v.spacing[2] == cfg.target_spacing[2])
        return v;

    const int dims_in[3] = {v.nx, v.ny, v.nz};
    int dims_out[3];
    for (int a = 0; a < 3; ++a) {
        const double extent = dims_in[a] * v.spacing[a];
        long n = std::lround(extent / cfg.target_spacing[a]);
        if (n <= 0) {
            if (n < 0) throw data_error("resample: degenerate output dims");
            n = 1;
        }
        dims_out[a] = static_cast<int>(n);
    }

    Volume out(dims_out[0], dims_out[1], dims_out[2], cfg.target_spacing);
    const double rx = cfg.target_spacing[0] / v.spacing[0];
    const double ry = cfg.target_spacing[1] / v.spacing[1];
    const double rz = cfg.target_spacing[2] / v.spacing[2];
    for (int x = 0; x < out.nx; ++x) {
        const double fx = (x + 0.5) * rx - 0.5;
        for (int y = 0; y < out.ny; ++y) {
            const double fy = (y + 0.5) * ry - 0.5;
            for (int z = 0; z < out.nz; ++z) {
                const double fz = (z + 0.5) * rz - 0.5;
                out.at(x, y, z) = detail::sample_volume(v, fx, fy, fz, cfg.image_order);
            }
        }
    }
    return out;
}

struct VolumeStats {
    double mean = 0.0;
    double stddev = 0.0; // population
};

inline VolumeStats volume_stats(const Volume& v) {
    if (v.data.empty()) throw data_error("stats of empty volume");
    double sum = 0.0;
    for (float x : v.data) sum += x;
    const double mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (float x : v.data) {
        const double d = x - mean;
        ss += d * d;
    }
    return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

// Z-score over all voxels (population std). Constant input is an error.
inline Volume zscore_normalize(const Volume& v) {
    const VolumeStats st = volume_stats(v);
    if (st.stddev < 1e-12)
        throw data_error("zscore_normalize: zero variance (constant volume, mean=" +
                         std::to_string(st.mean) + ")");
    Volume out = v;
    const double inv = 1.0 / st.stddev;
    for (float& x : out.data) x = static_cast<float>((x - st.mean) * inv);
    return out;
}

// Resample-then-normalize each present modality independently; the mask is
// resampled nearest-neighbor and re-binarized.
inline std::pair<MRIStudy, std::optional<SegmentationMask>> preprocess_study(
    const MRIStudy& study, const std::optional<SegmentationMask>& mask,
    const PreprocessConfig& cfg) {
    cfg.validate();
    {
        auto problems = validate_study(study);
        if (!problems.empty())
            throw data_error("preprocess: invalid study '" + study.patient_id +
                             "': " + problems.front());
    }
    MRIStudy out;
    out.patient_id = study.patient_id;
    for (Modality m : all_modalities()) {
        if (!study.has(m)) continue;
        try {
            Volume v = resample_isotropic(study.get(m), cfg);
            out.set(m, zscore_normalize(v));
        } catch (const Error& e) {
            throw Error(e.kind(),
                        std::string(modality_name(m)) + " (" + study.patient_id + "): " + e.what());
        }
    }
    std::optional<SegmentationMask> out_mask;
    if (mask) {
        PreprocessConfig mask_cfg = cfg;
        mask_cfg.image_order = 0;
        out_mask = binarize(resample_isotropic(mask->vol, mask_cfg));
    }
    auto problems = validate_study(out);
    if (!problems.empty())
        throw runtime_error("preprocess produced an invalid study: " + problems.front());
    return {std::move(out), std::move(out_mask)};
}

} // namespace glio
