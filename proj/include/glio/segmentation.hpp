#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "glio/augment.hpp"
#include "glio/checkpoint.hpp"
#include "glio/dataset.hpp"
#include "glio/error.hpp"
#include "glio/losses.hpp"
#include "glio/nn.hpp"
#include "glio/rng.hpp"
#include "glio/volume.hpp"

namespace glio {

struct UNetConfig {
    int in_channels = 4;
    int base_filters = 16;
    int depth = 4; // number of pooling steps; dims must divide 2^depth after padding
    std::uint64_t seed = 0;

    int divisor() const { return 1 << depth; }

    void validate() const {
        if (in_channels < 1) throw data_error("unet: in_channels must be >= 1");
        if (depth < 2) throw data_error("unet: depth must be >= 2");
        if (base_filters < 4) throw data_error("unet: base_filters must be >= 4");
        if (depth > 6) throw data_error("unet: depth > 6 is not sensible here");
    }

    nlohmann::json to_json() const {
        return {{"in_channels", in_channels},
                {"base_filters", base_filters},
                {"depth", depth},
                {"seed", seed}};
    }
    static UNetConfig from_json(const nlohmann::json& j);
};

// Encoder-decoder with skip connections: two conv(3)-instancenorm-ReLU
// blocks per level, channel doubling downwards, max-pool downsampling,
// nearest-neighbor upsampling, 1x1x1 sigmoid head.
template <typename T>
class UNet3DT {
public:
    explicit UNet3DT(const UNetConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        Rng rng(hash_combine(cfg.seed, 0x5e67u));
        const int d = cfg.depth;
        enc1_.resize(d);
        enc2_.resize(d);
        pool_.resize(d);
        up_.resize(d);
        dec1_.resize(d);
        dec2_.resize(d);
        int cin = cfg.in_channels;
        for (int i = 0; i < d; ++i) {
            const int f = cfg.base_filters << i;
            enc1_[i] = nn::ConvBlock<T>(params_, "enc" + std::to_string(i) + ".0", cin, f, 1, rng);
            enc2_[i] = nn::ConvBlock<T>(params_, "enc" + std::to_string(i) + ".1", f, f, 1, rng);
            cin = f;
        }
        const int fb = cfg.base_filters << d;
        mid1_ = nn::ConvBlock<T>(params_, "mid.0", cin, fb, 1, rng);
        mid2_ = nn::ConvBlock<T>(params_, "mid.1", fb, fb, 1, rng);
        for (int i = d - 1; i >= 0; --i) {
            const int f = cfg.base_filters << i;
            const int fin = (cfg.base_filters << (i + 1)) + f; // upsampled + skip
            dec1_[i] = nn::ConvBlock<T>(params_, "dec" + std::to_string(i) + ".0", fin, f, 1, rng);
            dec2_[i] = nn::ConvBlock<T>(params_, "dec" + std::to_string(i) + ".1", f, f, 1, rng);
        }
        head_ = nn::Conv3d<T>(params_, "head", cfg.base_filters, 1, 1, 1, 0, rng);
    }

    const UNetConfig& config() const { return cfg_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }

    // Input dims must be divisible by 2^depth; returns one logit channel.
    Tensor4T<T> forward_logits(const Tensor4T<T>& x) {
        const int m = cfg_.divisor();
        if (x.nx % m || x.ny % m || x.nz % m)
            throw runtime_error("unet: input dims must be divisible by 2^depth");
        Tensor4T<T> cur = x;
        skips_.assign(cfg_.depth, Tensor4T<T>());
        for (int i = 0; i < cfg_.depth; ++i) {
            cur = enc2_[i].forward(enc1_[i].forward(cur));
            skips_[i] = cur;
            cur = pool_[i].forward(cur);
        }
        cur = mid2_.forward(mid1_.forward(cur));
        for (int i = cfg_.depth - 1; i >= 0; --i) {
            cur = up_[i].forward(cur);
            skip_channels_[i] = skips_[i].c;
            cur = nn::concat_channels(skips_[i], cur);
            cur = dec2_[i].forward(dec1_[i].forward(cur));
        }
        return head_.forward(cur);
    }

    Tensor4T<T> backward(const Tensor4T<T>& dlogits) {
        Tensor4T<T> cur = head_.backward(dlogits);
        std::vector<Tensor4T<T>> dskips(cfg_.depth);
        for (int i = 0; i < cfg_.depth; ++i) {
            cur = dec1_[i].backward(dec2_[i].backward(cur));
            Tensor4T<T> dskip, dup;
            nn::split_channels(cur, dskip, dup, skip_channels_[i]);
            dskips[i] = std::move(dskip);
            cur = up_[i].backward(dup);
        }
        cur = mid1_.backward(mid2_.backward(cur));
        for (int i = cfg_.depth - 1; i >= 0; --i) {
            cur = pool_[i].backward(cur);
            for (std::size_t k = 0; k < cur.v.size(); ++k) cur.v[k] += dskips[i].v[k];
            cur = enc1_[i].backward(enc2_[i].backward(cur));
        }
        return cur;
    }

    // Arbitrary input dims: zero-pads up to the next multiple of 2^depth,
    // runs the network, crops back, applies the sigmoid.
    Tensor4T<T> predict_probs(const Tensor4T<T>& x) {
        const int m = cfg_.divisor();
        auto up = [&](int n) { return ((n + m - 1) / m) * m; };
        Tensor4T<T> padded = nn::pad_spatial(x, up(x.nx) - x.nx, up(x.ny) - x.ny, up(x.nz) - x.nz);
        Tensor4T<T> logits = forward_logits(padded);
        Tensor4T<T> cropped = nn::crop_spatial(logits, x.nx, x.ny, x.nz);
        for (auto& v : cropped.v) v = static_cast<T>(sigmoid(static_cast<double>(v)));
        return cropped;
    }

private:
    UNetConfig cfg_;
    nn::ParamStore<T> params_;
    std::vector<nn::ConvBlock<T>> enc1_, enc2_;
    std::vector<nn::MaxPool2<T>> pool_;
    nn::ConvBlock<T> mid1_, mid2_;
    std::vector<nn::Upsample2<T>> up_;
    std::vector<nn::ConvBlock<T>> dec1_, dec2_;
    nn::Conv3d<T> head_;
    std::vector<Tensor4T<T>> skips_;
    std::array<int, 8> skip_channels_ = {};
};

using UNet3D = UNet3DT<float>;

inline UNet3D build_unet(const UNetConfig& cfg) { return UNet3D(cfg); }

// ---------------------------------------------------------------------------
// Segmentation loss: soft Dice + voxel-mean BCE, both evaluated from logits.
// ---------------------------------------------------------------------------

struct SegLoss {
    double loss = 0.0;
    double dice_part = 0.0;
    double bce_part = 0.0;
    Tensor4 dlogits;
};

inline SegLoss seg_loss(const Tensor4& logits, const Volume& ref_mask) {
    if (logits.c != 1) throw runtime_error("seg_loss: expected one logit channel");
    const std::size_t n = logits.spatial_size();
    if (n != ref_mask.data.size()) throw runtime_error("seg_loss: shape mismatch");

    std::vector<double> probs(n), ref(n);
    for (std::size_t i = 0; i < n; ++i) {
        probs[i] = sigmoid(static_cast<double>(logits.v[i]));
        ref[i] = ref_mask.data[i] != 0.0f ? 1.0 : 0.0;
    }
    const auto dice = soft_dice_loss_grad(probs, ref);

    SegLoss out;
    out.dice_part = dice.loss;
    out.dlogits = Tensor4(1, logits.nx, logits.ny, logits.nz);
    double bce = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double z = logits.v[i];
        bce += softplus(z) - z * ref[i];
        const double dsig = probs[i] * (1.0 - probs[i]);
        out.dlogits.v[i] =
            static_cast<float>(dice.dprobs[i] * dsig + (probs[i] - ref[i]) * inv_n);
    }
    out.bce_part = bce * inv_n;
    out.loss = out.dice_part + out.bce_part;
    return out;
}

// ---------------------------------------------------------------------------
// Sliding-window inference
// ---------------------------------------------------------------------------

// Voxelwise tumor probability for a whole (preprocessed, assembled) study.
// Volumes larger than the patch are tiled with half-window overlap and the
// overlapping probabilities averaged; a volume that fits in one window is a
// single direct forward pass.
inline Volume predict_prob_volume(UNet3D& net, const Tensor4& channels, int patch) {
    const int m = net.config().divisor();
    if (patch % m) throw data_error("segment: patch size must be divisible by 2^depth");
    auto up = [&](int n) { return ((n + m - 1) / m) * m; };
    const int pd[3] = {up(channels.nx), up(channels.ny), up(channels.nz)};
    const int w[3] = {std::min(patch, pd[0]), std::min(patch, pd[1]), std::min(patch, pd[2])};

    Tensor4 padded =
        nn::pad_spatial(channels, pd[0] - channels.nx, pd[1] - channels.ny, pd[2] - channels.nz);

    auto positions = [](int total, int win) {
        std::vector<int> pos;
        if (total <= win) return std::vector<int>{0};
        const int stride = std::max(1, win / 2);
        for (int p = 0; p + win < total; p += stride) pos.push_back(p);
        pos.push_back(total - win);
        return pos;
    };
    const auto xs = positions(pd[0], w[0]);
    const auto ys = positions(pd[1], w[1]);
    const auto zs = positions(pd[2], w[2]);

    std::vector<double> acc(static_cast<std::size_t>(pd[0]) * pd[1] * pd[2], 0.0);
    std::vector<float> cnt(acc.size(), 0.0f);
    Tensor4 window(channels.c, w[0], w[1], w[2]);
    for (int x0 : xs)
        for (int y0 : ys)
            for (int z0 : zs) {
                for (int c = 0; c < channels.c; ++c)
                    for (int i = 0; i < w[0]; ++i)
                        for (int j = 0; j < w[1]; ++j) {
                            const float* src = &padded.at(c, x0 + i, y0 + j, z0);
                            std::copy(src, src + w[2], &window.at(c, i, j, 0));
                        }
                Tensor4 logits = net.forward_logits(window);
                for (int i = 0; i < w[0]; ++i)
                    for (int j = 0; j < w[1]; ++j)
                        for (int k = 0; k < w[2]; ++k) {
                            const std::size_t idx =
                                (static_cast<std::size_t>(x0 + i) * pd[1] + (y0 + j)) * pd[2] +
                                (z0 + k);
                            acc[idx] += sigmoid(static_cast<double>(logits.at(0, i, j, k)));
                            cnt[idx] += 1.0f;
                        }
            }

    Volume probs(channels.nx, channels.ny, channels.nz);
    for (int i = 0; i < probs.nx; ++i)
        for (int j = 0; j < probs.ny; ++j)
            for (int k = 0; k < probs.nz; ++k) {
                const std::size_t idx =
                    (static_cast<std::size_t>(i) * pd[1] + j) * pd[2] + k;
                probs.at(i, j, k) = static_cast<float>(acc[idx] / cnt[idx]);
            }
    return probs;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct SegTrainConfig {
    int epochs = 20;
    double lr = 1e-3;
    double weight_decay = 0.0;
    int batch_size = 2;
    int patch = 64;
    double tumor_patch_prob = 0.5; // patches centered on a tumor voxel with this probability
    std::uint64_t seed = 0;

    void validate(const UNetConfig& unet) const {
        if (epochs < 1) throw data_error("seg train: epochs must be >= 1");
        if (!(lr > 0.0)) throw data_error("seg train: lr must be > 0");
        if (batch_size < 1) throw data_error("seg train: batch_size must be >= 1");
        if (patch % unet.divisor())
            throw data_error("seg train: patch size must be divisible by 2^depth");
    }

    nlohmann::json to_json() const {
        return {{"epochs", epochs},          {"lr", lr},
                {"weight_decay", weight_decay}, {"batch_size", batch_size},
                {"patch", patch},            {"tumor_patch_prob", tumor_patch_prob},
                {"seed", seed}};
    }
    static SegTrainConfig from_json(const nlohmann::json& j);
};

// Random training patch; the window is clamped to the volume and zero-padded
// when an axis is shorter than the patch.
inline std::pair<Tensor4, Volume> sample_patch(const LoadedSample& s, int patch,
                                               double tumor_prob, Rng& rng) {
    const Volume& mv = s.mask->vol;
    std::array<int, 3> dims = {s.channels.nx, s.channels.ny, s.channels.nz};
    std::array<int, 3> origin = {0, 0, 0};

    bool center_on_tumor = rng.bernoulli(tumor_prob);
    std::array<int, 3> center = {0, 0, 0};
    if (center_on_tumor) {
        std::vector<std::array<int, 3>> tumor;
        for (int x = 0; x < mv.nx; ++x)
            for (int y = 0; y < mv.ny; ++y)
                for (int z = 0; z < mv.nz; ++z)
                    if (mv.at(x, y, z) != 0.0f) tumor.push_back({x, y, z});
        if (tumor.empty()) center_on_tumor = false;
        else center = tumor[rng.below(tumor.size())];
    }
    for (int a = 0; a < 3; ++a) {
        const int max_origin = std::max(0, dims[a] - patch);
        if (center_on_tumor) origin[a] = std::clamp(center[a] - patch / 2, 0, max_origin);
        else origin[a] = max_origin > 0 ? static_cast<int>(rng.below(max_origin + 1)) : 0;
    }

    Tensor4 x(s.channels.c, patch, patch, patch);
    Volume y(patch, patch, patch);
    for (int c = 0; c < x.c; ++c)
        for (int i = 0; i < patch && origin[0] + i < dims[0]; ++i)
            for (int j = 0; j < patch && origin[1] + j < dims[1]; ++j) {
                const int nz = std::min(patch, dims[2] - origin[2]);
                const float* src = &s.channels.at(c, origin[0] + i, origin[1] + j, origin[2]);
                std::copy(src, src + nz, &x.at(c, i, j, 0));
            }
    for (int i = 0; i < patch && origin[0] + i < dims[0]; ++i)
        for (int j = 0; j < patch && origin[1] + j < dims[1]; ++j) {
            const int nz = std::min(patch, dims[2] - origin[2]);
            const float* src = &mv.at(origin[0] + i, origin[1] + j, origin[2]);
            std::copy(src, src + nz, &y.at(i, j, 0));
        }
    return {std::move(x), std::move(y)};
}

struct SegEpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    std::optional<double> val_dice;
};

struct SegTrainResult {
    Checkpoint checkpoint;
    std::vector<SegEpochLog> log;
};

inline SegmentationMask segment_channels(UNet3D& net, const Tensor4& channels, int patch,
                                         float threshold = 0.5f) {
    return binarize(predict_prob_volume(net, channels, patch), threshold);
}

inline Checkpoint make_seg_checkpoint(const UNet3D& net, const SegTrainConfig& tcfg,
                                      const std::vector<SegEpochLog>& log) {
    Checkpoint ckpt;
    ckpt.meta["kind"] = "segmenter";
    ckpt.meta["format_version"] = Checkpoint::kFormatVersion;
    ckpt.meta["unet"] = net.config().to_json();
    ckpt.meta["train"] = tcfg.to_json();
    nlohmann::json jlog = nlohmann::json::array();
    for (const auto& e : log) {
        nlohmann::json row = {{"epoch", e.epoch}, {"train_loss", e.train_loss}};
        if (e.val_dice) row["val_dice"] = *e.val_dice;
        jlog.push_back(row);
    }
    ckpt.meta["log"] = jlog;
    store_params(ckpt, net.params());
    return ckpt;
}

inline UNet3D load_segmenter(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("kind") || ckpt.meta["kind"] != "segmenter")
        throw data_error("checkpoint is not a segmenter checkpoint");
    UNet3D net(UNetConfig::from_json(ckpt.meta.at("unet")));
    restore_params(ckpt, net.params(), "segmenter");
    return net;
}

inline int seg_checkpoint_patch(const Checkpoint& ckpt) {
    if (ckpt.meta.contains("train") && ckpt.meta["train"].contains("patch"))
        return ckpt.meta["train"]["patch"].get<int>();
    return 64;
}

// Trains the whole-tumor segmenter on the manifest's train rows (val rows,
// when tagged, drive a per-epoch whole-volume Dice). Modality dropout and
// the other augmentations run on every training patch.
inline SegTrainResult train_segmenter(const DatasetManifest& manifest, const UNetConfig& ucfg,
                                      const SegTrainConfig& tcfg, const AugmentConfig& acfg,
                                      const PreprocessConfig& pcfg = {},
                                      std::ostream* progress = nullptr) {
    ucfg.validate();
    tcfg.validate(ucfg);
    acfg.validate();

    const auto train_rows = training_entries(manifest);
    if (train_rows.empty()) throw data_error("train_segmenter: empty training manifest");
    const auto val_rows = manifest.split("val");

    auto train_set = load_samples(train_rows, pcfg, /*need_mask=*/true);
    auto val_set = load_samples(val_rows, pcfg, /*need_mask=*/true);

    UNet3D net(ucfg);
    nn::AdamW<float> opt(tcfg.lr, tcfg.weight_decay);
    Rng rng(hash_combine(tcfg.seed, 0x7ea1u));

    std::vector<SegEpochLog> log;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_loss = 0.0;
        int in_batch = 0;
        net.params().zero_grad();
        for (std::size_t step = 0; step < order.size(); ++step) {
            const LoadedSample& s = train_set[order[step]];
            auto [x, y] = sample_patch(s, tcfg.patch, tcfg.tumor_patch_prob, rng);
            Rng aug_rng = rng.fork(hash_combine(epoch, step));
            augment_sample(x, &y, s.present, aug_rng, acfg);

            Tensor4 logits = net.forward_logits(x);
            SegLoss loss = seg_loss(logits, y);
            net.backward(loss.dlogits);
            epoch_loss += loss.loss;
            if (++in_batch == tcfg.batch_size || step + 1 == order.size()) {
                net.params().scale_grad(1.0f / static_cast<float>(in_batch));
                opt.step(net.params());
                net.params().zero_grad();
                in_batch = 0;
            }
        }
        SegEpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = epoch_loss / static_cast<double>(order.size());
        if (!val_set.empty()) {
            double dice_sum = 0.0;
            for (const auto& s : val_set) {
                SegmentationMask pred = segment_channels(net, s.channels, tcfg.patch);
                dice_sum += dice_score(pred, *s.mask);
            }
            entry.val_dice = dice_sum / static_cast<double>(val_set.size());
        }
        if (progress) {
            (*progress) << "[train-seg] epoch " << epoch << " loss " << entry.train_loss;
            if (entry.val_dice) (*progress) << " val_dice " << *entry.val_dice;
            (*progress) << "\n";
        }
        log.push_back(entry);
    }

    return {make_seg_checkpoint(net, tcfg, log), log};
}

inline UNetConfig UNetConfig::from_json(const nlohmann::json& j) {
    UNetConfig cfg;
    for (auto& [key, value] : j.items()) {
        if (key == "in_channels") cfg.in_channels = value.get<int>();
        else if (key == "base_filters") cfg.base_filters = value.get<int>();
        else if (key == "depth") cfg.depth = value.get<int>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else throw data_error("unet config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline SegTrainConfig SegTrainConfig::from_json(const nlohmann::json& j) {
    SegTrainConfig cfg;
    for (auto& [key, value] : j.items()) {
        if (key == "epochs") cfg.epochs = value.get<int>();
        else if (key == "lr") cfg.lr = value.get<double>();
        else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
        else if (key == "batch_size") cfg.batch_size = value.get<int>();
        else if (key == "patch") cfg.patch = value.get<int>();
        else if (key == "tumor_patch_prob") cfg.tumor_patch_prob = value.get<double>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else throw data_error("seg train config: unknown key '" + key + "'");
    }
    return cfg;
}

} // namespace glio
