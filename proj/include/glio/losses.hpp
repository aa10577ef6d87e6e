#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "glio/error.hpp"
#include "glio/volume.hpp"

namespace glio {

inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

struct ScalarLoss {
    double loss;
    double dlogit;
};

// Binary cross-entropy from the logit: loss = softplus(z) - z*y.
inline ScalarLoss bce_with_logit(double z, int y) {
    if (y != 0 && y != 1) throw data_error("bce: label must be 0 or 1");
    return {softplus(z) - z * static_cast<double>(y), sigmoid(z) - static_cast<double>(y)};
}

// Focal binary cross-entropy, computed from the logit:
//   y=1: alpha     * (1-p)^gamma * (-log p)
//   y=0: (1-alpha) * p^gamma     * (-log(1-p))
// with p = sigmoid(z). The modulating powers are evaluated as
// exp(-gamma*softplus(.)), which stays finite over the whole logit range.
inline ScalarLoss focal_bce_with_logit(double z, int y, double gamma, double alpha) {
    if (y != 0 && y != 1) throw data_error("focal bce: label must be 0 or 1");
    if (gamma < 0.0) throw data_error("focal bce: gamma must be >= 0");
    const double sp_pos = softplus(z);   // -log(1-p)
    const double sp_neg = softplus(-z);  // -log p
    const double sig_pos = sigmoid(z);
    const double sig_neg = sigmoid(-z);
    if (y == 1) {
        const double mod = std::exp(-gamma * sp_pos); // (1-p)^gamma
        const double loss = alpha * mod * sp_neg;
        const double grad = alpha * mod * (-gamma * sig_pos * sp_neg - sig_neg);
        return {loss, grad};
    }
    const double mod = std::exp(-gamma * sp_neg); // p^gamma
    const double loss = (1.0 - alpha) * mod * sp_pos;
    const double grad = (1.0 - alpha) * mod * (gamma * sig_neg * sp_pos + sig_pos);
    return {loss, grad};
}

// Raw per-sample outputs of the three task heads.
struct TaskLogits {
    double grade_logit = 0.0;
    double idh_logit = 0.0;
    double codel_logit = 0.0;

    double task(int t) const {
        switch (t) {
            case 0: return grade_logit;
            case 1: return idh_logit;
            case 2: return codel_logit;
        }
        throw data_error("bad task index");
    }
    void set_task(int t, double v) {
        switch (t) {
            case 0: grade_logit = v; return;
            case 1: idh_logit = v; return;
            case 2: codel_logit = v; return;
        }
        throw data_error("bad task index");
    }
};

struct MultitaskLossResult {
    double loss = 0.0;
    std::array<double, kNumTasks> task_loss = {0.0, 0.0, 0.0}; // defined where task_count > 0
    std::array<int, kNumTasks> task_count = {0, 0, 0};
    std::vector<std::array<double, kNumTasks>> dlogits; // per sample, per task
};

// Masked multi-task focal loss. Per task, the focal BCE is averaged over the
// samples whose label for that task exists; the global loss is the plain mean
// over tasks with at least one labeled sample. Samples with a missing label
// contribute nothing to that task, including through the gradient.
inline MultitaskLossResult masked_multitask_loss(const std::vector<TaskLogits>& logits,
                                                 const std::vector<LabelTriple>& labels,
                                                 double gamma, double alpha) {
    if (logits.empty()) throw data_error("masked_multitask_loss: empty batch");
    if (logits.size() != labels.size())
        throw data_error("masked_multitask_loss: logits/labels size mismatch");

    const std::size_t batch = logits.size();
    MultitaskLossResult r;
    r.dlogits.assign(batch, {0.0, 0.0, 0.0});

    std::array<std::vector<ScalarLoss>, kNumTasks> per_sample;
    std::array<std::vector<std::size_t>, kNumTasks> sample_index;
    for (int t = 0; t < kNumTasks; ++t) {
        for (std::size_t i = 0; i < batch; ++i) {
            const auto y = labels[i].task(t);
            if (!y) continue;
            per_sample[t].push_back(focal_bce_with_logit(logits[i].task(t), *y, gamma, alpha));
            sample_index[t].push_back(i);
        }
        r.task_count[t] = static_cast<int>(per_sample[t].size());
    }

    int active_tasks = 0;
    for (int t = 0; t < kNumTasks; ++t)
        if (r.task_count[t] > 0) active_tasks++;
    if (active_tasks == 0) throw data_error("masked_multitask_loss: unlabeled batch");

    for (int t = 0; t < kNumTasks; ++t) {
        if (r.task_count[t] == 0) continue;
        double sum = 0.0;
        for (const auto& s : per_sample[t]) sum += s.loss;
        r.task_loss[t] = sum / r.task_count[t];
        r.loss += r.task_loss[t];
        const double scale = 1.0 / (static_cast<double>(active_tasks) * r.task_count[t]);
        for (std::size_t k = 0; k < per_sample[t].size(); ++k)
            r.dlogits[sample_index[t][k]][t] = per_sample[t][k].dlogit * scale;
    }
    r.loss /= active_tasks;
    return r;
}

// ---------------------------------------------------------------------------
// Dice
// ---------------------------------------------------------------------------

// 2|A^B| / (|A|+|B|); both-empty is defined as 1.
inline double dice_score(const SegmentationMask& a, const SegmentationMask& b) {
    if (!a.vol.same_dims(b.vol)) throw data_error("dice_score: mask dims mismatch");
    std::size_t na = 0, nb = 0, inter = 0;
    for (std::size_t i = 0; i < a.vol.data.size(); ++i) {
        const bool va = a.vol.data[i] != 0.0f;
        const bool vb = b.vol.data[i] != 0.0f;
        na += va;
        nb += vb;
        inter += (va && vb);
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

constexpr double kSoftDiceEps = 1e-5;

// 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps)
inline double soft_dice_loss(std::span<const double> probs, std::span<const double> ref) {
    if (probs.size() != ref.size()) throw data_error("soft_dice_loss: size mismatch");
    if (probs.empty()) throw data_error("soft_dice_loss: empty input");
    double s_py = 0.0, s_p = 0.0, s_y = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        s_py += probs[i] * ref[i];
        s_p += probs[i];
        s_y += ref[i];
    }
    return 1.0 - (2.0 * s_py + kSoftDiceEps) / (s_p + s_y + kSoftDiceEps);
}

struct DiceLossGrad {
    double loss;
    std::vector<double> dprobs;
};

inline DiceLossGrad soft_dice_loss_grad(std::span<const double> probs,
                                        std::span<const double> ref) {
    if (probs.size() != ref.size()) throw data_error("soft_dice_loss: size mismatch");
    if (probs.empty()) throw data_error("soft_dice_loss: empty input");
    double s_py = 0.0, s_p = 0.0, s_y = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        s_py += probs[i] * ref[i];
        s_p += probs[i];
        s_y += ref[i];
    }
    const double denom = s_p + s_y + kSoftDiceEps;
    const double numer = 2.0 * s_py + kSoftDiceEps;
    DiceLossGrad out;
    out.loss = 1.0 - numer / denom;
    out.dprobs.resize(probs.size());
    const double inv_d2 = 1.0 / (denom * denom);
    for (std::size_t i = 0; i < probs.size(); ++i)
        out.dprobs[i] = -(2.0 * ref[i] * denom - numer) * inv_d2;
    return out;
}

} // namespace glio
