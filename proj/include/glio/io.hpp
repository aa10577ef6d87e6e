#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "glio/error.hpp"
#include "glio/volume.hpp"

namespace glio {

static_assert(std::endian::native == std::endian::little,
              "volume file formats are little-endian; big-endian hosts unsupported");

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// zlib gz* reads both gzip and plain files transparently; writing uses
// transparent mode ("T") when no compression is wanted.
class GzFile {
public:
    GzFile(const std::string& path, const char* mode) : path_(path) {
        f_ = gzopen(path.c_str(), mode);
        if (!f_) throw data_error("cannot open file: " + path);
    }
    ~GzFile() {
        if (f_) gzclose(f_);
    }
    GzFile(const GzFile&) = delete;
    GzFile& operator=(const GzFile&) = delete;

    void read(void* dst, std::size_t n) {
        if (gzread(f_, dst, static_cast<unsigned>(n)) != static_cast<int>(n))
            throw data_error("truncated or unreadable file: " + path_);
    }
    void write(const void* src, std::size_t n) {
        if (gzwrite(f_, src, static_cast<unsigned>(n)) != static_cast<int>(n))
            throw runtime_error("write failed: " + path_);
    }
    void skip(std::size_t n) {
        std::array<char, 4096> buf;
        while (n > 0) {
            std::size_t chunk = std::min(n, buf.size());
            read(buf.data(), chunk);
            n -= chunk;
        }
    }

private:
    std::string path_;
    gzFile f_ = nullptr;
};

template <typename T>
T bswap(T v) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

} // namespace detail

// ---------------------------------------------------------------------------
// NIfTI-1
// ---------------------------------------------------------------------------

struct NiftiHeader {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

namespace nifti_dtype {
constexpr std::int16_t kUint8 = 2;
constexpr std::int16_t kInt16 = 4;
constexpr std::int16_t kInt32 = 8;
constexpr std::int16_t kFloat32 = 16;
constexpr std::int16_t kFloat64 = 64;
constexpr std::int16_t kInt8 = 256;
constexpr std::int16_t kUint16 = 512;
} // namespace nifti_dtype

namespace detail {

template <typename Raw>
void convert_voxels(const std::vector<char>& raw, std::vector<float>& out, bool swap) {
    const Raw* src = reinterpret_cast<const Raw*>(raw.data());
    for (std::size_t i = 0; i < out.size(); ++i) {
        Raw x = src[i];
        if (swap && sizeof(Raw) > 1) x = bswap(x);
        out[i] = static_cast<float>(x);
    }
}

} // namespace detail

inline Volume read_nifti(const std::string& path) {
    detail::GzFile f(path, "rb");
    NiftiHeader h{};
    f.read(&h, sizeof(h));

    bool swap = false;
    if (h.sizeof_hdr != 348) {
        if (detail::bswap(h.sizeof_hdr) != 348)
            throw data_error("not a NIfTI-1 file: " + path);
        swap = true;
    }
    auto s16 = [&](std::int16_t v) { return swap ? detail::bswap(v) : v; };
    auto sf = [&](float v) { return swap ? detail::bswap(v) : v; };

    if (std::strncmp(h.magic, "n+1", 3) != 0) {
        if (std::strncmp(h.magic, "ni1", 3) == 0)
            throw data_error("two-file NIfTI (.hdr/.img) not supported: " + path);
        throw data_error("bad NIfTI magic: " + path);
    }

    const int ndim = s16(h.dim[0]);
    if (ndim < 3 || ndim > 7) throw data_error("expected a 3D NIfTI volume: " + path);
    for (int d = 4; d <= ndim; ++d)
        if (s16(h.dim[d]) > 1)
            throw data_error("multi-volume NIfTI not supported (dim>3 nontrivial): " + path);

    const int nx = s16(h.dim[1]), ny = s16(h.dim[2]), nz = s16(h.dim[3]);
    if (nx <= 0 || ny <= 0 || nz <= 0) throw data_error("non-positive NIfTI dims: " + path);

    std::array<double, 3> spacing = {sf(h.pixdim[1]), sf(h.pixdim[2]), sf(h.pixdim[3])};
    for (double& s : spacing) {
        if (!(s > 0.0)) throw data_error("non-positive voxel spacing in header: " + path);
    }

    const std::int16_t dtype = s16(h.datatype);
    std::size_t elem_size;
    switch (dtype) {
        case nifti_dtype::kUint8:
        case nifti_dtype::kInt8: elem_size = 1; break;
        case nifti_dtype::kInt16:
        case nifti_dtype::kUint16: elem_size = 2; break;
        case nifti_dtype::kInt32:
        case nifti_dtype::kFloat32: elem_size = 4; break;
        case nifti_dtype::kFloat64: elem_size = 8; break;
        default:
            throw data_error("unsupported NIfTI datatype " + std::to_string(dtype) + ": " + path);
    }

    const float vox_offset = sf(h.vox_offset);
    if (vox_offset < 348.0f) throw data_error("bad vox_offset in NIfTI header: " + path);
    f.skip(static_cast<std::size_t>(vox_offset) - sizeof(h));

    const std::size_t n = static_cast<std::size_t>(nx) * ny * nz;
    std::vector<char> raw(n * elem_size);
    f.read(raw.data(), raw.size());

    std::vector<float> linear(n);
    switch (dtype) {
        case nifti_dtype::kUint8: detail::convert_voxels<std::uint8_t>(raw, linear, swap); break;
        case nifti_dtype::kInt8: detail::convert_voxels<std::int8_t>(raw, linear, swap); break;
        case nifti_dtype::kInt16: detail::convert_voxels<std::int16_t>(raw, linear, swap); break;
        case nifti_dtype::kUint16: detail::convert_voxels<std::uint16_t>(raw, linear, swap); break;
        case nifti_dtype::kInt32: detail::convert_voxels<std::int32_t>(raw, linear, swap); break;
        case nifti_dtype::kFloat32: detail::convert_voxels<float>(raw, linear, swap); break;
        case nifti_dtype::kFloat64: detail::convert_voxels<double>(raw, linear, swap); break;
    }

    const float slope = sf(h.scl_slope), inter = sf(h.scl_inter);
    if (slope != 0.0f && (slope != 1.0f || inter != 0.0f))
        for (float& x : linear) x = slope * x + inter;

    // NIfTI stores x fastest; internal layout is z fastest.
    Volume v(nx, ny, nz, spacing);
    std::size_t i = 0;
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) v.at(x, y, z) = linear[i++];
    return v;
}

inline void write_nifti(const Volume& v, const std::string& path) {
    NiftiHeader h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<std::int16_t>(v.nx);
    h.dim[2] = static_cast<std::int16_t>(v.ny);
    h.dim[3] = static_cast<std::int16_t>(v.nz);
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.datatype = nifti_dtype::kFloat32;
    h.bitpix = 32;
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = static_cast<float>(v.spacing[0]);
    h.pixdim[2] = static_cast<float>(v.spacing[1]);
    h.pixdim[3] = static_cast<float>(v.spacing[2]);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2; // mm
    std::snprintf(h.descrip, sizeof(h.descrip), "gliopipe");
    h.qform_code = 0;
    h.sform_code = 1;
    h.srow_x[0] = static_cast<float>(v.spacing[0]);
    h.srow_y[1] = static_cast<float>(v.spacing[1]);
    h.srow_z[2] = static_cast<float>(v.spacing[2]);
    std::memcpy(h.magic, "n+1", 4);

    std::vector<float> linear(v.size());
    std::size_t i = 0;
    for (int z = 0; z < v.nz; ++z)
        for (int y = 0; y < v.ny; ++y)
            for (int x = 0; x < v.nx; ++x) linear[i++] = v.at(x, y, z);

    const bool gz = detail::ends_with(path, ".gz");
    detail::GzFile f(path, gz ? "wb6" : "wbT");
    f.write(&h, sizeof(h));
    const std::uint32_t extension = 0;
    f.write(&extension, 4);
    f.write(linear.data(), linear.size() * sizeof(float));
}

// ---------------------------------------------------------------------------
// GLPV raw fallback: magic "GLPV", 3xu32 dims, 3xf32 spacing, u8 dtype code
// (0 = float32), then row-major ([x][y][z], z fastest) f32 voxels. All
// little-endian.
// ---------------------------------------------------------------------------

inline Volume read_glpv(const std::string& path) {
    detail::GzFile f(path, "rb");
    char magic[4];
    f.read(magic, 4);
    if (std::strncmp(magic, "GLPV", 4) != 0) throw data_error("bad GLPV magic: " + path);
    std::uint32_t dims[3];
    float spacing[3];
    std::uint8_t dtype;
    f.read(dims, sizeof(dims));
    f.read(spacing, sizeof(spacing));
    f.read(&dtype, 1);
    if (dtype != 0) throw data_error("unsupported GLPV dtype code: " + path);
    for (std::uint32_t d : dims)
        if (d == 0 || d > (1u << 24)) throw data_error("bad GLPV dims: " + path);
    for (float s : spacing)
        if (!(s > 0.0f)) throw data_error("non-positive GLPV spacing: " + path);

    Volume v(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
             {spacing[0], spacing[1], spacing[2]});
    f.read(v.data.data(), v.data.size() * sizeof(float));
    return v;
}

inline void write_glpv(const Volume& v, const std::string& path) {
    detail::GzFile f(path, "wbT");
    f.write("GLPV", 4);
    const std::uint32_t dims[3] = {static_cast<std::uint32_t>(v.nx),
                                   static_cast<std::uint32_t>(v.ny),
                                   static_cast<std::uint32_t>(v.nz)};
    const float spacing[3] = {static_cast<float>(v.spacing[0]), static_cast<float>(v.spacing[1]),
                              static_cast<float>(v.spacing[2])};
    const std::uint8_t dtype = 0;
    f.write(dims, sizeof(dims));
    f.write(spacing, sizeof(spacing));
    f.write(&dtype, 1);
    f.write(v.data.data(), v.data.size() * sizeof(float));
}

// ---------------------------------------------------------------------------
// Format dispatch by extension
// ---------------------------------------------------------------------------

inline Volume read_volume(const std::string& path) {
    if (detail::ends_with(path, ".nii") || detail::ends_with(path, ".nii.gz"))
        return read_nifti(path);
    if (detail::ends_with(path, ".glpv")) return read_glpv(path);
    throw data_error("unsupported volume format (expect .nii, .nii.gz or .glpv): " + path);
}

inline void write_volume(const Volume& v, const std::string& path) {
    if (detail::ends_with(path, ".nii") || detail::ends_with(path, ".nii.gz")) {
        write_nifti(v, path);
        return;
    }
    if (detail::ends_with(path, ".glpv")) {
        write_glpv(v, path);
        return;
    }
    throw data_error("unsupported volume format (expect .nii, .nii.gz or .glpv): " + path);
}

inline SegmentationMask read_mask(const std::string& path) {
    return binarize(read_volume(path));
}

// ---------------------------------------------------------------------------
// Manifest CSV: patient_id,t1,t1ce,t2,flair,mask,grade,idh,codel,split
// Empty cell = missing. Paths are resolved relative to the CSV's directory.
// ---------------------------------------------------------------------------

inline const std::array<std::string, 10>& manifest_columns() {
    static const std::array<std::string, 10> cols = {"patient_id", "t1",  "t1ce", "t2",  "flair",
                                                     "mask",       "grade", "idh", "codel", "split"};
    return cols;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    cells.push_back(cur);
    return cells;
}

inline std::optional<int> parse_label_cell(const std::string& cell, int row, const std::string& col) {
    if (cell.empty()) return std::nullopt;
    if (cell == "0") return 0;
    if (cell == "1") return 1;
    throw data_error("manifest row " + std::to_string(row) + ", column '" + col +
                     "': expected empty, 0 or 1, got '" + cell + "'");
}

inline std::string resolve_path(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return p;
    std::filesystem::path fp(p);
    if (fp.is_absolute()) return fp.string();
    return (base / fp).lexically_normal().string();
}

} // namespace detail

inline DatasetManifest read_manifest(const std::string& csv_path, bool check_paths = true) {
    std::ifstream in(csv_path);
    if (!in) throw data_error("cannot open manifest: " + csv_path);
    const std::filesystem::path base = std::filesystem::path(csv_path).parent_path();

    std::string line;
    if (!std::getline(in, line)) throw data_error("empty manifest: " + csv_path);
    auto header = detail::split_csv_line(line);
    const auto& cols = manifest_columns();
    if (header.size() != cols.size())
        throw data_error("manifest header: expected " + std::to_string(cols.size()) +
                         " columns, got " + std::to_string(header.size()));
    for (std::size_t i = 0; i < cols.size(); ++i)
        if (header[i] != cols[i])
            throw data_error("manifest header column " + std::to_string(i + 1) + ": expected '" +
                             cols[i] + "', got '" + header[i] + "'");

    DatasetManifest manifest;
    std::set<std::string> seen_ids;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != cols.size())
            throw data_error("manifest row " + std::to_string(row) + ": expected " +
                             std::to_string(cols.size()) + " cells, got " +
                             std::to_string(cells.size()));
        ManifestEntry e;
        e.patient_id = cells[0];
        if (e.patient_id.empty())
            throw data_error("manifest row " + std::to_string(row) + ": empty patient_id");
        if (!seen_ids.insert(e.patient_id).second)
            throw data_error("manifest row " + std::to_string(row) + ": duplicate patient_id '" +
                             e.patient_id + "'");
        for (int m = 0; m < kNumModalities; ++m)
            e.volume_paths[m] = detail::resolve_path(base, cells[1 + m]);
        e.mask_path = detail::resolve_path(base, cells[5]);
        e.labels.grade = detail::parse_label_cell(cells[6], row, "grade");
        e.labels.idh = detail::parse_label_cell(cells[7], row, "idh");
        e.labels.codel = detail::parse_label_cell(cells[8], row, "codel");
        e.split = cells[9];
        if (!e.split.empty() && e.split != "train" && e.split != "val" && e.split != "test")
            throw data_error("manifest row " + std::to_string(row) +
                             ", column 'split': expected empty/train/val/test, got '" + e.split +
                             "'");
        if (check_paths) {
            for (int m = 0; m < kNumModalities; ++m)
                if (!e.volume_paths[m].empty() && !std::filesystem::exists(e.volume_paths[m]))
                    throw data_error("manifest row " + std::to_string(row) + ": missing file " +
                                     e.volume_paths[m]);
            if (!e.mask_path.empty() && !std::filesystem::exists(e.mask_path))
                throw data_error("manifest row " + std::to_string(row) + ": missing file " +
                                 e.mask_path);
        }
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

inline void write_manifest(const DatasetManifest& manifest, const std::string& csv_path) {
    std::ofstream out(csv_path);
    if (!out) throw runtime_error("cannot write manifest: " + csv_path);
    const auto& cols = manifest_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << cols[i] << (i + 1 < cols.size() ? "," : "\n");
    auto label_cell = [](const std::optional<int>& l) { return l ? std::to_string(*l) : ""; };
    for (const auto& e : manifest.entries) {
        out << e.patient_id;
        for (int m = 0; m < kNumModalities; ++m) out << "," << e.volume_paths[m];
        out << "," << e.mask_path;
        out << "," << label_cell(e.labels.grade) << "," << label_cell(e.labels.idh) << ","
            << label_cell(e.labels.codel) << "," << e.split << "\n";
    }
    if (!out) throw runtime_error("write failed: " + csv_path);
}

// Loads the study referenced by a manifest row (volumes must exist on disk).
inline MRIStudy load_study(const ManifestEntry& e) {
    std::array<std::optional<Volume>, kNumModalities> mods;
    for (int m = 0; m < kNumModalities; ++m)
        if (!e.volume_paths[m].empty()) mods[m] = read_volume(e.volume_paths[m]);
    return make_study(e.patient_id, std::move(mods));
}

} // namespace glio
