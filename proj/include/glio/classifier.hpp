#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "glio/checkpoint.hpp"
#include "glio/error.hpp"
#include "glio/losses.hpp"
#include "glio/nn.hpp"
#include "glio/roi.hpp"

namespace glio {

struct ClassifierConfig {
    int in_channels = 4;
    std::vector<int> widths = {32, 64, 128, 256}; // one entry per block
    bool residual = true;
    int min_input_dim = 16;
    std::uint64_t seed = 0;

    void validate() const {
        if (in_channels < 1) throw data_error("classifier: in_channels must be >= 1");
        if (widths.size() < 2) throw data_error("classifier: need at least 2 blocks");
        int prev = 0;
        for (int w : widths) {
            if (w <= 0) throw data_error("classifier: widths must be positive");
            if (w < prev) throw data_error("classifier: widths must be nondecreasing");
            prev = w;
        }
        if (min_input_dim < 1) throw data_error("classifier: min_input_dim must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"in_channels", in_channels},
                {"widths", widths},
                {"residual", residual},
                {"min_input_dim", min_input_dim},
                {"seed", seed}};
    }
    static ClassifierConfig from_json(const nlohmann::json& j);
};

namespace nn_detail {

// conv-IN-ReLU, conv-IN, identity skip, final ReLU.
template <typename T>
class ResidualUnit {
public:
    ResidualUnit() = default;
    ResidualUnit(nn::ParamStore<T>& store, const std::string& name, int channels, Rng& rng)
        : conv1_(store, name + ".conv1", channels, channels, 3, 1, 1, rng),
          norm1_(store, name + ".norm1", channels),
          conv2_(store, name + ".conv2", channels, channels, 3, 1, 1, rng),
          norm2_(store, name + ".norm2", channels) {}

    Tensor4T<T> forward(const Tensor4T<T>& x) {
        Tensor4T<T> t = relu1_.forward(norm1_.forward(conv1_.forward(x)));
        Tensor4T<T> u = norm2_.forward(conv2_.forward(t));
        for (std::size_t i = 0; i < u.v.size(); ++i) u.v[i] += x.v[i];
        return relu2_.forward(u);
    }

    Tensor4T<T> backward(const Tensor4T<T>& dy) {
        Tensor4T<T> d = relu2_.backward(dy);
        Tensor4T<T> dx = conv1_.backward(norm1_.backward(relu1_.backward(
            conv2_.backward(norm2_.backward(d)))));
        for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += d.v[i];
        return dx;
    }

private:
    nn::Conv3d<T> conv1_;
    nn::InstanceNorm<T> norm1_;
    nn::ReLU<T> relu1_;
    nn::Conv3d<T> conv2_;
    nn::InstanceNorm<T> norm2_;
    nn::ReLU<T> relu2_;
};

} // namespace nn_detail

// Shared convolutional trunk (conv-instancenorm-ReLU blocks with stride-2
// downsampling between blocks), adaptive average pooling to a fixed-length
// feature vector, and three parallel single-logit heads.
template <typename T>
class Classifier3DT {
public:
    explicit Classifier3DT(const ClassifierConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        Rng rng(hash_combine(cfg.seed, 0xc1a5u));
        const int blocks = static_cast<int>(cfg.widths.size());
        entry_.resize(blocks);
        unit_.resize(blocks);
        plain_.resize(blocks);
        int cin = cfg.in_channels;
        for (int b = 0; b < blocks; ++b) {
            const int w = cfg.widths[b];
            const int stride = (b == 0) ? 1 : 2;
            entry_[b] = nn::ConvBlock<T>(params_, "block" + std::to_string(b) + ".entry", cin, w,
                                         stride, rng);
            if (cfg.residual)
                unit_[b] = nn_detail::ResidualUnit<T>(params_, "block" + std::to_string(b) + ".res",
                                                      w, rng);
            else
                plain_[b] =
                    nn::ConvBlock<T>(params_, "block" + std::to_string(b) + ".conv", w, w, 1, rng);
            cin = w;
        }
        heads_[0] = nn::Linear<T>(params_, "head.grade", cin, 1, rng);
        heads_[1] = nn::Linear<T>(params_, "head.idh", cin, 1, rng);
        heads_[2] = nn::Linear<T>(params_, "head.codel", cin, 1, rng);
    }

    const ClassifierConfig& config() const { return cfg_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }

    TaskLogits forward(const Tensor4T<T>& x) {
        if (x.c != cfg_.in_channels) throw data_error("classifier: channel count mismatch");
        Tensor4T<T> cur = x;
        for (std::size_t b = 0; b < entry_.size(); ++b) {
            cur = entry_[b].forward(cur);
            cur = cfg_.residual ? unit_[b].forward(cur) : plain_[b].forward(cur);
        }
        feature_ = pool_.forward(cur);
        TaskLogits out;
        for (int t = 0; t < kNumTasks; ++t)
            out.set_task(t, static_cast<double>(heads_[t].forward(feature_)[0]));
        return out;
    }

    void backward(const std::array<double, kNumTasks>& dlogits) {
        std::vector<T> dfeature(feature_.size(), T(0));
        for (int t = 0; t < kNumTasks; ++t) {
            const std::vector<T> d = heads_[t].backward({static_cast<T>(dlogits[t])});
            for (std::size_t i = 0; i < dfeature.size(); ++i) dfeature[i] += d[i];
        }
        Tensor4T<T> cur = pool_.backward(dfeature);
        for (std::size_t b = entry_.size(); b-- > 0;) {
            cur = cfg_.residual ? unit_[b].backward(cur) : plain_[b].backward(cur);
            cur = entry_[b].backward(cur);
        }
    }

private:
    ClassifierConfig cfg_;
    nn::ParamStore<T> params_;
    std::vector<nn::ConvBlock<T>> entry_;
    std::vector<nn_detail::ResidualUnit<T>> unit_;
    std::vector<nn::ConvBlock<T>> plain_;
    nn::GlobalAvgPool<T> pool_;
    std::array<nn::Linear<T>, kNumTasks> heads_;
    std::vector<T> feature_;
};

using Classifier3D = Classifier3DT<float>;

inline Classifier3D build_classifier(const ClassifierConfig& cfg) { return Classifier3D(cfg); }

struct TaskProbs {
    double p_gbm = 0.5;
    double p_idhmut = 0.5;
    double p_codel = 0.5;

    double task(int t) const {
        switch (t) {
            case 0: return p_gbm;
            case 1: return p_idhmut;
            case 2: return p_codel;
        }
        throw data_error("bad task index");
    }
};

// Sigmoid of the three head logits for one ROI. The ROI must satisfy the
// minimum-size contract before it reaches the network.
inline TaskProbs predict_probs(Classifier3D& net, const TumorROI& roi) {
    const auto& cfg = net.config();
    if (roi.channels.nx < cfg.min_input_dim || roi.channels.ny < cfg.min_input_dim ||
        roi.channels.nz < cfg.min_input_dim)
        throw data_error("predict: ROI smaller than min_input_dim (" +
                         std::to_string(cfg.min_input_dim) + ")");
    const TaskLogits logits = net.forward(roi.channels);
    return {sigmoid(logits.grade_logit), sigmoid(logits.idh_logit), sigmoid(logits.codel_logit)};
}

inline ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
    ClassifierConfig cfg;
    for (auto& [key, value] : j.items()) {
        if (key == "in_channels") cfg.in_channels = value.get<int>();
        else if (key == "widths") cfg.widths = value.get<std::vector<int>>();
        else if (key == "residual") cfg.residual = value.get<bool>();
        else if (key == "min_input_dim") cfg.min_input_dim = value.get<int>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else throw data_error("classifier config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline Classifier3D load_classifier(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("kind") || ckpt.meta["kind"] != "classifier")
        throw data_error("checkpoint is not a classifier checkpoint");
    Classifier3D net(ClassifierConfig::from_json(ckpt.meta.at("arch")));
    restore_params(ckpt, net.params(), "classifier");
    return net;
}

} // namespace glio
