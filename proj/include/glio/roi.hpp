#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>

#include "glio/error.hpp"
#include "glio/tensor.hpp"
#include "glio/volume.hpp"

namespace glio {

// Axis-aligned box, inclusive voxel indices on both ends.
struct BoundingBox {
    std::array<int, 3> lo = {0, 0, 0};
    std::array<int, 3> hi = {0, 0, 0};

    int dim(int axis) const { return hi[axis] - lo[axis] + 1; }

    bool inside(const std::array<int, 3>& dims) const {
        for (int a = 0; a < 3; ++a)
            if (lo[a] < 0 || hi[a] >= dims[a] || lo[a] > hi[a]) return false;
        return true;
    }
};

// Tight box over the nonzero voxels, expanded by margin per side and
// clipped to the volume. Disconnected components are all covered.
inline BoundingBox mask_bbox(const SegmentationMask& mask, int margin = 0) {
    if (margin < 0) throw data_error("mask_bbox: negative margin");
    const Volume& v = mask.vol;
    BoundingBox box;
    box.lo = {v.nx, v.ny, v.nz};
    box.hi = {-1, -1, -1};
    for (int x = 0; x < v.nx; ++x)
        for (int y = 0; y < v.ny; ++y)
            for (int z = 0; z < v.nz; ++z) {
                if (v.at(x, y, z) == 0.0f) continue;
                box.lo[0] = std::min(box.lo[0], x);
                box.lo[1] = std::min(box.lo[1], y);
                box.lo[2] = std::min(box.lo[2], z);
                box.hi[0] = std::max(box.hi[0], x);
                box.hi[1] = std::max(box.hi[1], y);
                box.hi[2] = std::max(box.hi[2], z);
            }
    if (box.hi[0] < 0) throw data_error("mask_bbox: no tumor voxels");
    const std::array<int, 3> dims = {v.nx, v.ny, v.nz};
    for (int a = 0; a < 3; ++a) {
        box.lo[a] = std::max(0, box.lo[a] - margin);
        box.hi[a] = std::min(dims[a] - 1, box.hi[a] + margin);
    }
    return box;
}

struct TumorROI {
    std::string patient_id;
    Tensor4 channels; // 4 x box dims (after any min-size expansion)
    BoundingBox box;  // in study voxel coordinates
};

namespace detail {

// Symmetric expansion to min_dim per axis, clipped at [0, n). When one side
// hits the boundary the remainder is pushed to the other side; if the whole
// axis is shorter than min_dim the box covers the full axis.
inline void expand_axis(int& lo, int& hi, int n, int min_dim) {
    int len = hi - lo + 1;
    if (len >= min_dim) return;
    if (n <= min_dim) {
        lo = 0;
        hi = n - 1;
        return;
    }
    int need = min_dim - len;
    lo -= need / 2;
    hi += need - need / 2;
    if (lo < 0) {
        hi -= lo;
        lo = 0;
    }
    if (hi > n - 1) {
        lo -= hi - (n - 1);
        hi = n - 1;
    }
    lo = std::max(0, lo);
}

} // namespace detail

// Pure windowing of the assembled 4-channel tensor; no resampling, no
// resizing. Boxes smaller than min_roi_dim are expanded in place.
inline TumorROI crop_roi_channels(const Tensor4& channels, const std::string& patient_id,
                                  BoundingBox box, int min_roi_dim = 16) {
    const std::array<int, 3> dims = {channels.nx, channels.ny, channels.nz};
    if (!box.inside(dims)) throw data_error("crop_roi: box out of bounds");
    detail::expand_axis(box.lo[0], box.hi[0], dims[0], min_roi_dim);
    detail::expand_axis(box.lo[1], box.hi[1], dims[1], min_roi_dim);
    detail::expand_axis(box.lo[2], box.hi[2], dims[2], min_roi_dim);

    TumorROI roi;
    roi.patient_id = patient_id;
    roi.box = box;
    roi.channels = Tensor4(channels.c, box.dim(0), box.dim(1), box.dim(2));
    for (int c = 0; c < channels.c; ++c)
        for (int x = 0; x < roi.channels.nx; ++x)
            for (int y = 0; y < roi.channels.ny; ++y) {
                const float* src = &channels.at(c, box.lo[0] + x, box.lo[1] + y, box.lo[2]);
                float* dst = &roi.channels.at(c, x, y, 0);
                std::copy(src, src + roi.channels.nz, dst);
            }
    return roi;
}

inline TumorROI crop_roi(const MRIStudy& study, const BoundingBox& box, int min_roi_dim = 16) {
    return crop_roi_channels(assemble_channels(study), study.patient_id, box, min_roi_dim);
}

// ---------------------------------------------------------------------------
// ROI container file (.roi): magic "GLRO", u32 version, id, box, dims, f32
// channel data. Little-endian.
// ---------------------------------------------------------------------------

constexpr std::uint32_t kRoiFormatVersion = 1;

inline void write_roi(const TumorROI& roi, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw runtime_error("cannot write ROI file: " + path);
    out.write("GLRO", 4);
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_i32 = [&](std::int32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(kRoiFormatVersion);
    put_u32(static_cast<std::uint32_t>(roi.patient_id.size()));
    out.write(roi.patient_id.data(), static_cast<std::streamsize>(roi.patient_id.size()));
    for (int a = 0; a < 3; ++a) put_i32(roi.box.lo[a]);
    for (int a = 0; a < 3; ++a) put_i32(roi.box.hi[a]);
    put_u32(static_cast<std::uint32_t>(roi.channels.c));
    put_u32(static_cast<std::uint32_t>(roi.channels.nx));
    put_u32(static_cast<std::uint32_t>(roi.channels.ny));
    put_u32(static_cast<std::uint32_t>(roi.channels.nz));
    out.write(reinterpret_cast<const char*>(roi.channels.v.data()),
              static_cast<std::streamsize>(roi.channels.v.size() * sizeof(float)));
    if (!out) throw runtime_error("ROI write failed: " + path);
}

inline TumorROI read_roi(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open ROI file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "GLRO") throw data_error("bad ROI magic: " + path);
    auto get_u32 = [&]() {
        std::uint32_t v;
        in.read(reinterpret_cast<char*>(&v), 4);
        if (!in) throw data_error("truncated ROI file: " + path);
        return v;
    };
    auto get_i32 = [&]() {
        std::int32_t v;
        in.read(reinterpret_cast<char*>(&v), 4);
        if (!in) throw data_error("truncated ROI file: " + path);
        return v;
    };
    if (get_u32() != kRoiFormatVersion)
        throw data_error("unsupported ROI format version: " + path);
    TumorROI roi;
    const auto id_len = get_u32();
    roi.patient_id.resize(id_len);
    in.read(roi.patient_id.data(), id_len);
    for (int a = 0; a < 3; ++a) roi.box.lo[a] = get_i32();
    for (int a = 0; a < 3; ++a) roi.box.hi[a] = get_i32();
    const int c = static_cast<int>(get_u32());
    const int nx = static_cast<int>(get_u32());
    const int ny = static_cast<int>(get_u32());
    const int nz = static_cast<int>(get_u32());
    roi.channels = Tensor4(c, nx, ny, nz);
    in.read(reinterpret_cast<char*>(roi.channels.v.data()),
            static_cast<std::streamsize>(roi.channels.v.size() * sizeof(float)));
    if (!in) throw data_error("truncated ROI file: " + path);
    return roi;
}

} // namespace glio
