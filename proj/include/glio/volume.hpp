#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "glio/error.hpp"
#include "glio/tensor.hpp"

namespace glio {

// Canonical channel order used everywhere a study becomes a tensor.
enum class Modality : int { T1 = 0, T1ce = 1, T2 = 2, FLAIR = 3 };

constexpr int kNumModalities = 4;

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::T1: return "T1";
        case Modality::T1ce: return "T1ce";
        case Modality::T2: return "T2";
        case Modality::FLAIR: return "FLAIR";
    }
    return "?";
}

inline std::optional<Modality> modality_from_name(const std::string& name) {
    if (name == "T1" || name == "t1") return Modality::T1;
    if (name == "T1ce" || name == "t1ce") return Modality::T1ce;
    if (name == "T2" || name == "t2") return Modality::T2;
    if (name == "FLAIR" || name == "flair") return Modality::FLAIR;
    return std::nullopt;
}

inline const std::array<Modality, 4>& all_modalities() {
    static const std::array<Modality, 4> order = {Modality::T1, Modality::T1ce,
                                                  Modality::T2, Modality::FLAIR};
    return order;
}

// One scalar 3D image. Layout is C-order with z fastest:
// data[(x*ny + y)*nz + z]. Spacing is in millimetres.
struct Volume {
    int nx = 0, ny = 0, nz = 0;
    std::array<double, 3> spacing = {1.0, 1.0, 1.0};
    std::vector<float> data;

    Volume() = default;
    Volume(int nx_, int ny_, int nz_, std::array<double, 3> spacing_ = {1.0, 1.0, 1.0})
        : nx(nx_), ny(ny_), nz(nz_), spacing(spacing_),
          data(static_cast<std::size_t>(nx_) * ny_ * nz_, 0.0f) {}

    std::size_t size() const { return data.size(); }
    std::size_t idx(int x, int y, int z) const {
        return (static_cast<std::size_t>(x) * ny + y) * nz + z;
    }
    float& at(int x, int y, int z) { return data[idx(x, y, z)]; }
    float at(int x, int y, int z) const { return data[idx(x, y, z)]; }

    bool same_grid(const Volume& o) const {
        return nx == o.nx && ny == o.ny && nz == o.nz && spacing == o.spacing;
    }
    bool same_dims(const Volume& o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }
};

inline std::vector<std::string> validate_volume(const Volume& v) {
    std::vector<std::string> problems;
    if (v.nx <= 0 || v.ny <= 0 || v.nz <= 0) problems.push_back("non-positive dims");
    for (double s : v.spacing)
        if (!(s > 0.0) || !std::isfinite(s)) {
            problems.push_back("non-positive spacing");
            break;
        }
    if (v.data.size() != static_cast<std::size_t>(v.nx) * v.ny * v.nz)
        problems.push_back("element count does not match dims");
    for (float x : v.data)
        if (!std::isfinite(x)) {
            problems.push_back("non-finite values");
            break;
        }
    return problems;
}

// Binary whole-tumor mask on the same grid as its parent study.
struct SegmentationMask {
    Volume vol; // values constrained to {0,1}

    SegmentationMask() = default;
    explicit SegmentationMask(Volume v) : vol(std::move(v)) {}

    std::size_t count() const {
        std::size_t n = 0;
        for (float x : vol.data) n += (x != 0.0f);
        return n;
    }
};

inline std::vector<std::string> validate_mask(const SegmentationMask& m) {
    std::vector<std::string> problems = validate_volume(m.vol);
    for (float x : m.vol.data)
        if (x != 0.0f && x != 1.0f) {
            problems.push_back("values outside {0,1}");
            break;
        }
    return problems;
}

inline SegmentationMask binarize(const Volume& v, float threshold = 0.5f) {
    SegmentationMask m{v};
    for (float& x : m.vol.data) x = (x >= threshold) ? 1.0f : 0.0f;
    return m;
}

// Three optional binary ground-truth labels; any subset may be present.
struct LabelTriple {
    std::optional<int> grade; // 1 = GBM, 0 = LGG
    std::optional<int> idh;   // 1 = mutant, 0 = wildtype
    std::optional<int> codel; // 1 = 1p19q co-deleted, 0 = intact

    bool fully_labeled() const { return grade && idh && codel; }
    bool any_label() const { return grade || idh || codel; }

    std::optional<int> task(int t) const {
        switch (t) {
            case 0: return grade;
            case 1: return idh;
            case 2: return codel;
        }
        return std::nullopt;
    }
};

inline const char* task_name(int t) {
    switch (t) {
        case 0: return "grade";
        case 1: return "idh";
        case 2: return "codel";
    }
    return "?";
}
constexpr int kNumTasks = 3;

// One patient's co-registered multi-modality stack. Absent modalities have
// no Volume; they become all-zero channels when assembled into a tensor.
struct MRIStudy {
    std::string patient_id;
    std::array<std::optional<Volume>, kNumModalities> modalities;

    bool has(Modality m) const { return modalities[static_cast<int>(m)].has_value(); }
    const Volume& get(Modality m) const { return *modalities[static_cast<int>(m)]; }
    Volume& get(Modality m) { return *modalities[static_cast<int>(m)]; }
    void set(Modality m, Volume v) { modalities[static_cast<int>(m)] = std::move(v); }

    std::set<Modality> present() const {
        std::set<Modality> p;
        for (Modality m : all_modalities())
            if (has(m)) p.insert(m);
        return p;
    }

    const Volume* reference_volume() const {
        for (const auto& mv : modalities)
            if (mv) return &*mv;
        return nullptr;
    }
};

// Returns every violated study invariant, in a fixed check order.
// Violations are data, not exceptions.
inline std::vector<std::string> validate_study(const MRIStudy& study) {
    std::vector<std::string> problems;
    if (!study.has(Modality::T1ce)) problems.push_back("missing modality: T1ce");
    if (!study.has(Modality::T2) && !study.has(Modality::FLAIR))
        problems.push_back("missing modality: T2 and FLAIR (at least one required)");

    const Volume* ref = study.reference_volume();
    if (!ref) {
        problems.push_back("no modalities present");
        return problems;
    }
    for (Modality m : all_modalities()) {
        if (!study.has(m)) continue;
        const Volume& v = study.get(m);
        const std::string name = modality_name(m);
        if (!v.same_dims(*ref)) problems.push_back("dims mismatch: " + name);
        if (v.spacing != ref->spacing) problems.push_back("spacing mismatch: " + name);
        for (auto& p : validate_volume(v)) {
            if (p == "element count does not match dims")
                problems.push_back("element count mismatch: " + name);
            else if (p == "non-finite values")
                problems.push_back("non-finite values: " + name);
            else if (p == "non-positive spacing")
                problems.push_back("non-positive spacing: " + name);
            else if (p == "non-positive dims")
                problems.push_back("non-positive dims: " + name);
        }
    }
    return problems;
}

// Validating factory used by loaders; tests may still build raw structs.
inline MRIStudy make_study(std::string patient_id,
                           std::array<std::optional<Volume>, kNumModalities> modalities) {
    MRIStudy study;
    study.patient_id = std::move(patient_id);
    study.modalities = std::move(modalities);
    auto problems = validate_study(study);
    if (!problems.empty()) {
        std::string msg = "invalid study '" + study.patient_id + "':";
        for (auto& p : problems) msg += " [" + p + "]";
        throw data_error(msg);
    }
    return study;
}

// Stacks a study into the fixed 4-channel tensor (T1, T1ce, T2, FLAIR).
// Absent modalities occupy exactly-zero channels so the network input shape
// never varies with modality availability.
inline Tensor4 assemble_channels(const MRIStudy& study) {
    auto problems = validate_study(study);
    if (!problems.empty())
        throw data_error("assemble_channels: invalid study '" + study.patient_id + "': " +
                         problems.front());
    const Volume* ref = study.reference_volume();
    Tensor4 out(kNumModalities, ref->nx, ref->ny, ref->nz);
    for (Modality m : all_modalities()) {
        if (!study.has(m)) continue;
        const Volume& v = study.get(m);
        std::copy(v.data.begin(), v.data.end(), out.channel(static_cast<int>(m)));
    }
    return out;
}

// Dataset manifest: one row per patient. Empty paths / labels mean missing.
struct ManifestEntry {
    std::string patient_id;
    std::array<std::string, kNumModalities> volume_paths; // canonical order
    std::string mask_path;
    LabelTriple labels;
    std::string split; // "", "train", "val", "test"
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> split(const std::string& tag) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries)
            if (e.split == tag) out.push_back(e);
        return out;
    }
};

} // namespace glio
