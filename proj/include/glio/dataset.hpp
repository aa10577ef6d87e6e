#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "glio/augment.hpp"
#include "glio/io.hpp"
#include "glio/preprocess.hpp"
#include "glio/volume.hpp"

namespace glio {

// One manifest row loaded, preprocessed and assembled, ready for training
// or inference. Everything is immutable after construction.
struct LoadedSample {
    std::string patient_id;
    Tensor4 channels; // preprocessed, canonical channel order
    std::set<Modality> present;
    std::optional<SegmentationMask> mask; // preprocessed, if the row has one
    LabelTriple labels;
};

inline LoadedSample load_sample(const ManifestEntry& entry, const PreprocessConfig& cfg,
                                bool need_mask) {
    MRIStudy study = load_study(entry);
    std::optional<SegmentationMask> mask;
    if (!entry.mask_path.empty()) mask = read_mask(entry.mask_path);
    else if (need_mask)
        throw data_error("entry '" + entry.patient_id + "' has no mask");
    auto [processed, processed_mask] = preprocess_study(study, mask, cfg);

    LoadedSample s;
    s.patient_id = entry.patient_id;
    s.present = processed.present();
    s.channels = assemble_channels(processed);
    s.mask = std::move(processed_mask);
    s.labels = entry.labels;
    return s;
}

inline std::vector<LoadedSample> load_samples(const std::vector<ManifestEntry>& entries,
                                              const PreprocessConfig& cfg, bool need_mask) {
    std::vector<LoadedSample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(load_sample(e, cfg, need_mask));
    return out;
}

// Training entries for a manifest: rows tagged "train", or every row when
// nothing is tagged.
inline std::vector<ManifestEntry> training_entries(const DatasetManifest& manifest) {
    auto tagged = manifest.split("train");
    if (!tagged.empty()) return tagged;
    bool any_tag = false;
    for (const auto& e : manifest.entries)
        if (!e.split.empty()) any_tag = true;
    if (any_tag) return tagged; // tags exist but no train rows: genuinely empty
    return manifest.entries;
}

} // namespace glio
