#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "glio/augment.hpp"
#include "glio/classifier.hpp"
#include "glio/dataset.hpp"
#include "glio/error.hpp"
#include "glio/losses.hpp"
#include "glio/metrics.hpp"
#include "glio/rng.hpp"
#include "glio/roi.hpp"
#include "glio/segmentation.hpp"

namespace glio {

// ---------------------------------------------------------------------------
// Split construction
// ---------------------------------------------------------------------------

struct SplitSpec {
    // Explicit counts win over fractions; -1 means "use the fraction".
    long train_count = -1;
    long val_count = -1;
    long test_count = -1;
    double val_fraction = 0.15;
    double test_fraction = 0.15;
    std::uint64_t seed = 0;
};

// Tags every entry train/val/test. Val and test are drawn only from fully
// labeled patients (all three markers known), stratified by grade; everyone
// else trains. Deterministic given the seed.
inline DatasetManifest make_splits(const DatasetManifest& manifest, const SplitSpec& spec) {
    const long n = static_cast<long>(manifest.entries.size());
    if (n == 0) throw data_error("make_splits: empty manifest");

    const long n_val = spec.val_count >= 0 ? spec.val_count : std::lround(n * spec.val_fraction);
    const long n_test =
        spec.test_count >= 0 ? spec.test_count : std::lround(n * spec.test_fraction);
    const long n_train = spec.train_count >= 0 ? spec.train_count : n - n_val - n_test;
    if (n_val < 0 || n_test < 0 || n_train < 0 || n_train + n_val + n_test != n)
        throw data_error("make_splits: infeasible spec: train+val+test = " +
                         std::to_string(n_train + n_val + n_test) + " but manifest has " +
                         std::to_string(n));

    std::vector<std::size_t> fully, rest;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        (manifest.entries[i].labels.fully_labeled() ? fully : rest).push_back(i);
    if (static_cast<long>(fully.size()) < n_val + n_test)
        throw data_error("make_splits: infeasible spec: " + std::to_string(n_val + n_test) +
                         " fully-labeled patients needed for val+test but only " +
                         std::to_string(fully.size()) + " available");

    // Stratify the fully-labeled pool by grade.
    std::array<std::vector<std::size_t>, 2> strata;
    for (std::size_t i : fully) strata[*manifest.entries[i].labels.grade].push_back(i);
    Rng rng(hash_combine(spec.seed, 0x5b71u));
    for (auto& s : strata)
        for (std::size_t i = s.size(); i > 1; --i) std::swap(s[i - 1], s[rng.below(i)]);

    // Largest-remainder allocation of a quota across the two strata.
    auto allocate = [&](long quota, const std::array<long, 2>& avail) {
        std::array<long, 2> out = {0, 0};
        const long total = avail[0] + avail[1];
        if (total == 0 || quota == 0) return out;
        std::array<double, 2> share;
        for (int g = 0; g < 2; ++g) {
            share[g] = static_cast<double>(quota) * avail[g] / total;
            out[g] = std::min(avail[g], static_cast<long>(share[g]));
        }
        while (out[0] + out[1] < quota) {
            const double r0 = (out[0] < avail[0]) ? share[0] - out[0] : -1.0;
            const double r1 = (out[1] < avail[1]) ? share[1] - out[1] : -1.0;
            if (r0 < 0 && r1 < 0) break;
            (r0 >= r1 ? out[0] : out[1])++;
        }
        return out;
    };

    DatasetManifest out = manifest;
    for (auto& e : out.entries) e.split = "train";
    std::array<long, 2> cursor = {0, 0};
    std::array<long, 2> avail = {static_cast<long>(strata[0].size()),
                                 static_cast<long>(strata[1].size())};
    for (const auto& [quota, tag] :
         std::vector<std::pair<long, const char*>>{{n_val, "val"}, {n_test, "test"}}) {
        const auto take = allocate(quota, {avail[0] - cursor[0], avail[1] - cursor[1]});
        for (int g = 0; g < 2; ++g)
            for (long k = 0; k < take[g]; ++k) out.entries[strata[g][cursor[g]++]].split = tag;
        if (take[0] + take[1] != quota)
            throw data_error("make_splits: infeasible stratified allocation");
    }
    if (n_test == 0)
        for (auto& e : out.entries)
            if (e.split == "test") throw runtime_error("make_splits: unexpected test tag");
    return out;
}

// ---------------------------------------------------------------------------
// Classifier training
// ---------------------------------------------------------------------------

struct ClfTrainConfig {
    double lr_init = 1e-5;
    double weight_decay = 1e-2;
    int batch_size = 8; // realized through gradient accumulation over single ROIs
    int epochs = 30;
    double focal_gamma = 2.0;
    double focal_alpha = 0.5;
    std::uint64_t seed = 0;
    int early_stop_patience = 0; // 0 disables early stopping
    bool cosine_lr = false;
    int roi_margin = 4;
    int min_roi_dim = 16;

    void validate() const {
        if (!(lr_init > 0.0)) throw data_error("clf train: lr_init must be > 0");
        if (batch_size < 1) throw data_error("clf train: batch_size must be >= 1");
        if (epochs < 1) throw data_error("clf train: epochs must be >= 1");
        if (focal_gamma < 0.0) throw data_error("clf train: focal gamma must be >= 0");
        if (focal_alpha < 0.0 || focal_alpha > 1.0)
            throw data_error("clf train: focal alpha must be in [0,1]");
        if (roi_margin < 0) throw data_error("clf train: roi_margin must be >= 0");
        if (min_roi_dim < 1) throw data_error("clf train: min_roi_dim must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"lr_init", lr_init},
                {"weight_decay", weight_decay},
                {"batch_size", batch_size},
                {"epochs", epochs},
                {"focal_gamma", focal_gamma},
                {"focal_alpha", focal_alpha},
                {"seed", seed},
                {"early_stop_patience", early_stop_patience},
                {"cosine_lr", cosine_lr},
                {"roi_margin", roi_margin},
                {"min_roi_dim", min_roi_dim}};
    }
    static ClfTrainConfig from_json(const nlohmann::json& j) {
        ClfTrainConfig cfg;
        for (auto& [key, value] : j.items()) {
            if (key == "lr_init") cfg.lr_init = value.get<double>();
            else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
            else if (key == "batch_size") cfg.batch_size = value.get<int>();
            else if (key == "epochs") cfg.epochs = value.get<int>();
            else if (key == "focal_gamma") cfg.focal_gamma = value.get<double>();
            else if (key == "focal_alpha") cfg.focal_alpha = value.get<double>();
            else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
            else if (key == "early_stop_patience") cfg.early_stop_patience = value.get<int>();
            else if (key == "cosine_lr") cfg.cosine_lr = value.get<bool>();
            else if (key == "roi_margin") cfg.roi_margin = value.get<int>();
            else if (key == "min_roi_dim") cfg.min_roi_dim = value.get<int>();
            else throw data_error("clf train config: unknown key '" + key + "'");
        }
        cfg.validate();
        return cfg;
    }
};

struct ClfStepLog {
    int epoch = 0;
    int step = 0;
    double loss = 0.0;
    std::array<double, kNumTasks> task_loss = {0, 0, 0};
    std::array<int, kNumTasks> task_count = {0, 0, 0};
};

struct ClfEpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    std::array<std::optional<double>, kNumTasks> val_auc;
    std::optional<double> val_mean_auc;
};

struct ClfTrainResult {
    Checkpoint checkpoint;
    std::vector<ClfEpochLog> log;
    std::vector<ClfStepLog> steps;
};

namespace detail {

// Ground-truth ROI for a training/validation row.
inline TumorROI sample_roi(const LoadedSample& s, int margin, int min_dim) {
    if (!s.mask) throw data_error("sample '" + s.patient_id + "' has no mask for ROI extraction");
    return crop_roi_channels(s.channels, s.patient_id, mask_bbox(*s.mask, margin), min_dim);
}

inline std::optional<double> mean_defined(const std::array<std::optional<double>, kNumTasks>& xs) {
    double sum = 0.0;
    int n = 0;
    for (const auto& x : xs)
        if (x) {
            sum += *x;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / n;
}

} // namespace detail

inline Checkpoint make_clf_checkpoint(const Classifier3D& net, const ClfTrainConfig& tcfg,
                                      const std::vector<ClfEpochLog>& log) {
    Checkpoint ckpt;
    ckpt.meta["kind"] = "classifier";
    ckpt.meta["format_version"] = Checkpoint::kFormatVersion;
    ckpt.meta["arch"] = net.config().to_json();
    ckpt.meta["train"] = tcfg.to_json();
    ckpt.meta["roi"] = {{"margin", tcfg.roi_margin}, {"min_dim", tcfg.min_roi_dim}};
    nlohmann::json jlog = nlohmann::json::array();
    for (const auto& e : log) {
        nlohmann::json row = {{"epoch", e.epoch}, {"train_loss", e.train_loss}};
        for (int t = 0; t < kNumTasks; ++t)
            if (e.val_auc[t]) row[std::string("val_auc_") + task_name(t)] = *e.val_auc[t];
        if (e.val_mean_auc) row["val_mean_auc"] = *e.val_mean_auc;
        jlog.push_back(row);
    }
    ckpt.meta["log"] = jlog;
    store_params(ckpt, net.params());
    return ckpt;
}

// Trains the multi-task classifier on ground-truth ROIs. The batch of eight
// is realized as gradient accumulation over eight single-ROI passes (the
// ROIs have heterogeneous dims, and instance norm keeps single-sample
// statistics sound), which yields exactly the batch-loss gradient. The
// best-validation-AUC weights are the ones checkpointed.
inline ClfTrainResult train_classifier(const DatasetManifest& manifest,
                                       const ClassifierConfig& arch, const ClfTrainConfig& tcfg,
                                       const AugmentConfig& acfg,
                                       const PreprocessConfig& pcfg = {},
                                       std::ostream* progress = nullptr) {
    arch.validate();
    tcfg.validate();
    acfg.validate();

    auto train_rows = training_entries(manifest);
    std::erase_if(train_rows, [](const ManifestEntry& e) { return !e.labels.any_label(); });
    if (train_rows.empty()) throw data_error("train_classifier: unlabeled training set");
    const auto val_rows = manifest.split("val");

    auto train_set = load_samples(train_rows, pcfg, /*need_mask=*/true);
    auto val_set = load_samples(val_rows, pcfg, /*need_mask=*/true);

    std::vector<TumorROI> train_rois, val_rois;
    for (const auto& s : train_set)
        train_rois.push_back(detail::sample_roi(s, tcfg.roi_margin, tcfg.min_roi_dim));
    for (const auto& s : val_set)
        val_rois.push_back(detail::sample_roi(s, tcfg.roi_margin, tcfg.min_roi_dim));

    Classifier3D net(arch);
    nn::AdamW<float> opt(tcfg.lr_init, tcfg.weight_decay);
    Rng rng(hash_combine(tcfg.seed, 0xc1f7u));

    ClfTrainResult result;
    std::vector<float> best_weights;
    double best_metric = -1.0;
    int since_best = 0;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        if (tcfg.cosine_lr)
            opt.set_lr(tcfg.lr_init * 0.5 * (1.0 + std::cos(M_PI * epoch / tcfg.epochs)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_loss = 0.0;
        int steps_in_epoch = 0;
        for (std::size_t pos = 0; pos < order.size(); pos += tcfg.batch_size) {
            const std::size_t end = std::min(pos + tcfg.batch_size, order.size());
            std::vector<LabelTriple> batch_labels;
            for (std::size_t k = pos; k < end; ++k)
                batch_labels.push_back(train_set[order[k]].labels);

            // Label pattern fixes the per-task normalization before any
            // forward pass, so each sample's gradient is independent.
            std::array<int, kNumTasks> task_n = {0, 0, 0};
            int active = 0;
            for (const auto& l : batch_labels)
                for (int t = 0; t < kNumTasks; ++t)
                    if (l.task(t)) task_n[t]++;
            for (int t = 0; t < kNumTasks; ++t)
                if (task_n[t] > 0) active++;
            if (active == 0) continue; // all-unlabeled batch cannot occur (filtered above)

            net.params().zero_grad();
            std::vector<TaskLogits> batch_logits;
            for (std::size_t k = pos; k < end; ++k) {
                const std::size_t idx = order[k];
                Tensor4 x = train_rois[idx].channels;
                Rng aug_rng = rng.fork(hash_combine(epoch * 131071 + static_cast<long>(k), idx));
                augment_sample(x, nullptr, train_set[idx].present, aug_rng, acfg);

                const TaskLogits logits = net.forward(x);
                batch_logits.push_back(logits);
                std::array<double, kNumTasks> dlogits = {0, 0, 0};
                for (int t = 0; t < kNumTasks; ++t) {
                    const auto y = train_set[idx].labels.task(t);
                    if (!y) continue;
                    const auto fl =
                        focal_bce_with_logit(logits.task(t), *y, tcfg.focal_gamma, tcfg.focal_alpha);
                    dlogits[t] = fl.dlogit / (static_cast<double>(active) * task_n[t]);
                }
                net.backward(dlogits);
            }
            opt.step(net.params());

            const auto lr = masked_multitask_loss(batch_logits, batch_labels, tcfg.focal_gamma,
                                                  tcfg.focal_alpha);
            epoch_loss += lr.loss;
            ++steps_in_epoch;
            ClfStepLog step;
            step.epoch = epoch;
            step.step = static_cast<int>(result.steps.size());
            step.loss = lr.loss;
            step.task_loss = lr.task_loss;
            step.task_count = lr.task_count;
            result.steps.push_back(step);
        }

        ClfEpochLog elog;
        elog.epoch = epoch;
        elog.train_loss = steps_in_epoch ? epoch_loss / steps_in_epoch : 0.0;

        if (!val_set.empty()) {
            std::array<TaskSamples, kNumTasks> samples;
            for (std::size_t i = 0; i < val_set.size(); ++i) {
                const TaskProbs probs = predict_probs(net, val_rois[i]);
                for (int t = 0; t < kNumTasks; ++t)
                    if (const auto y = val_set[i].labels.task(t)) {
                        samples[t].scores.push_back(probs.task(t));
                        samples[t].labels.push_back(*y);
                    }
            }
            for (int t = 0; t < kNumTasks; ++t) {
                bool has_pos = false, has_neg = false;
                for (int l : samples[t].labels) (l ? has_pos : has_neg) = true;
                if (has_pos && has_neg) elog.val_auc[t] = auc(samples[t].scores, samples[t].labels);
            }
            elog.val_mean_auc = detail::mean_defined(elog.val_auc);
            if (elog.val_mean_auc && *elog.val_mean_auc > best_metric) {
                best_metric = *elog.val_mean_auc;
                best_weights.clear();
                for (const auto& p : net.params().params())
                    best_weights.insert(best_weights.end(), p.w.begin(), p.w.end());
                since_best = 0;
            } else {
                ++since_best;
            }
        }

        if (progress) {
            (*progress) << "[train-clf] epoch " << epoch << " loss " << elog.train_loss;
            if (elog.val_mean_auc) (*progress) << " val_mean_auc " << *elog.val_mean_auc;
            (*progress) << "\n";
        }
        result.log.push_back(elog);
        if (tcfg.early_stop_patience > 0 && since_best >= tcfg.early_stop_patience) break;
    }

    if (!best_weights.empty()) {
        std::size_t off = 0;
        for (auto& p : net.params().params()) {
            std::copy(best_weights.begin() + off, best_weights.begin() + off + p.w.size(),
                      p.w.begin());
            off += p.w.size();
        }
    }
    result.checkpoint = make_clf_checkpoint(net, tcfg, result.log);
    return result;
}

// ---------------------------------------------------------------------------
// End-to-end evaluation: segment -> ROI -> predict -> metrics
// ---------------------------------------------------------------------------

struct PipelineModels {
    UNet3D seg;
    Classifier3D clf;
    int seg_patch = 64;
    float seg_threshold = 0.5f;
    int roi_margin = 4;
    int min_roi_dim = 16;
};

inline PipelineModels load_models(const Checkpoint& seg_ckpt, const Checkpoint& clf_ckpt,
                                  float seg_threshold = 0.5f) {
    PipelineModels m{load_segmenter(seg_ckpt), load_classifier(clf_ckpt)};
    m.seg_patch = seg_checkpoint_patch(seg_ckpt);
    m.seg_threshold = seg_threshold;
    if (clf_ckpt.meta.contains("roi")) {
        m.roi_margin = clf_ckpt.meta["roi"].value("margin", 4);
        m.min_roi_dim = clf_ckpt.meta["roi"].value("min_dim", 16);
    }
    return m;
}

struct PatientOutput {
    std::string patient_id;
    SegmentationMask mask;
    TumorROI roi;
    TaskProbs probs;
};

// Full per-patient pipeline on a preprocessed sample.
inline PatientOutput run_patient(const LoadedSample& sample, PipelineModels& models) {
    PatientOutput out;
    out.patient_id = sample.patient_id;
    out.mask = segment_channels(models.seg, sample.channels, models.seg_patch,
                                models.seg_threshold);
    out.roi = crop_roi_channels(sample.channels, sample.patient_id,
                                mask_bbox(out.mask, models.roi_margin), models.min_roi_dim);
    out.probs = predict_probs(models.clf, out.roi);
    return out;
}

struct PatientFailure {
    std::string patient_id;
    std::string message;
};

struct EvaluationResult {
    MetricsReport report;
    std::vector<PatientOutput> outputs;
    std::vector<PatientFailure> failures;
};

inline EvaluationResult evaluate_split(const DatasetManifest& manifest, const std::string& tag,
                                       const Checkpoint& seg_ckpt, const Checkpoint& clf_ckpt,
                                       const std::array<double, kNumTasks>& thresholds =
                                           {0.5, 0.5, 0.5},
                                       const PreprocessConfig& pcfg = {}) {
    const auto rows = tag.empty() ? manifest.entries : manifest.split(tag);
    if (rows.empty()) throw data_error("evaluate_split: empty split '" + tag + "'");

    PipelineModels models = load_models(seg_ckpt, clf_ckpt);
    EvaluationResult result;
    std::array<TaskSamples, kNumTasks> samples;
    for (const auto& row : rows) {
        try {
            LoadedSample sample = load_sample(row, pcfg, /*need_mask=*/false);
            PatientOutput out = run_patient(sample, models);
            for (int t = 0; t < kNumTasks; ++t)
                if (const auto y = row.labels.task(t)) {
                    samples[t].scores.push_back(out.probs.task(t));
                    samples[t].labels.push_back(*y);
                }
            result.outputs.push_back(std::move(out));
        } catch (const std::exception& e) {
            result.failures.push_back({row.patient_id, e.what()});
        }
    }
    result.report = compute_report(samples, thresholds);
    return result;
}

} // namespace glio
