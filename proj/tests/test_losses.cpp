#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "glio/losses.hpp"
#include "glio/rng.hpp"

using namespace glio;

namespace {

// Brute-force oracle via the naive probability-space formula. Deliberately
// avoids the softplus/exp path the implementation uses.
double focal_oracle(double z, int y, double gamma, double alpha) {
    const double p = 1.0 / (1.0 + std::exp(-z));
    if (y == 1) return alpha * std::pow(1.0 - p, gamma) * (-std::log(p));
    return (1.0 - alpha) * std::pow(p, gamma) * (-std::log(1.0 - p));
}

// Literal per-sample, per-task double loop over the batch.
double masked_loss_oracle(const std::vector<TaskLogits>& logits,
                          const std::vector<LabelTriple>& labels, double gamma, double alpha) {
    double total = 0.0;
    int active = 0;
    for (int t = 0; t < kNumTasks; ++t) {
        double sum = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const auto y = labels[i].task(t);
            if (!y) continue;
            sum += focal_oracle(logits[i].task(t), *y, gamma, alpha);
            ++n;
        }
        if (n > 0) {
            total += sum / n;
            ++active;
        }
    }
    return total / active;
}

std::vector<TaskLogits> random_logits(Rng& rng, int n, double range = 4.0) {
    std::vector<TaskLogits> out(n);
    for (auto& l : out) {
        l.grade_logit = rng.uniform(-range, range);
        l.idh_logit = rng.uniform(-range, range);
        l.codel_logit = rng.uniform(-range, range);
    }
    return out;
}

std::vector<LabelTriple> random_labels(Rng& rng, int n, double p_missing) {
    std::vector<LabelTriple> out(n);
    for (auto& l : out) {
        if (!rng.bernoulli(p_missing)) l.grade = rng.bernoulli(0.5) ? 1 : 0;
        if (!rng.bernoulli(p_missing)) l.idh = rng.bernoulli(0.5) ? 1 : 0;
        if (!rng.bernoulli(p_missing)) l.codel = rng.bernoulli(0.5) ? 1 : 0;
    }
    return out;
}

bool batch_has_label(const std::vector<LabelTriple>& labels) {
    for (const auto& l : labels)
        if (l.any_label()) return true;
    return false;
}

} // namespace

TEST_CASE("focal loss hand value: y=1, p=0.5, gamma=2, alpha=1") {
    // (1-0.5)^2 * (-log 0.5) = 0.25 * ln 2
    const auto r = focal_bce_with_logit(0.0, 1, 2.0, 1.0);
    REQUIRE(r.loss == Catch::Approx(0.25 * std::log(2.0)).margin(1e-9));
}

TEST_CASE("focal loss with gamma=0, alpha=0.5 is half the BCE") {
    Rng rng(50);
    for (int i = 0; i < 1000; ++i) {
        const double z = rng.uniform(-10.0, 10.0);
        const int y = rng.bernoulli(0.5) ? 1 : 0;
        const auto focal = focal_bce_with_logit(z, y, 0.0, 0.5);
        const auto bce = bce_with_logit(z, y);
        REQUIRE(focal.loss == Catch::Approx(0.5 * bce.loss).margin(1e-9));
        REQUIRE(focal.dlogit == Catch::Approx(0.5 * bce.dlogit).margin(1e-9));
    }
}

TEST_CASE("focal loss matches the probability-space oracle") {
    Rng rng(51);
    for (int i = 0; i < 500; ++i) {
        const double z = rng.uniform(-8.0, 8.0);
        const int y = rng.bernoulli(0.5) ? 1 : 0;
        const double gamma = rng.uniform(0.0, 4.0);
        const double alpha = rng.uniform(0.1, 0.9);
        REQUIRE(focal_bce_with_logit(z, y, gamma, alpha).loss ==
                Catch::Approx(focal_oracle(z, y, gamma, alpha)).margin(1e-9));
    }
}

TEST_CASE("focal loss is strictly decreasing in p for y=1") {
    for (double gamma : {0.0, 1.0, 2.0, 5.0}) {
        double prev = std::numeric_limits<double>::infinity();
        for (double z = -8.0; z <= 8.0; z += 0.05) {
            const double cur = focal_bce_with_logit(z, 1, gamma, 0.7).loss;
            REQUIRE(cur < prev);
            prev = cur;
        }
    }
}

TEST_CASE("focal loss stays finite over the stabilized logit range") {
    for (double z = -50.0; z <= 50.0; z += 1.0)
        for (int y : {0, 1})
            for (double gamma : {0.0, 2.0, 4.0}) {
                const auto r = focal_bce_with_logit(z, y, gamma, 0.25);
                REQUIRE(std::isfinite(r.loss));
                REQUIRE(std::isfinite(r.dlogit));
            }
}

TEST_CASE("focal gradient matches central finite differences") {
    Rng rng(52);
    const double h = 1e-6;
    for (int i = 0; i < 200; ++i) {
        const double z = rng.uniform(-6.0, 6.0);
        const int y = rng.bernoulli(0.5) ? 1 : 0;
        const double gamma = rng.uniform(0.0, 3.0);
        const double alpha = rng.uniform(0.1, 0.9);
        const double fd = (focal_bce_with_logit(z + h, y, gamma, alpha).loss -
                           focal_bce_with_logit(z - h, y, gamma, alpha).loss) /
                          (2 * h);
        const double an = focal_bce_with_logit(z, y, gamma, alpha).dlogit;
        REQUIRE(an == Catch::Approx(fd).margin(1e-6 + 1e-4 * std::fabs(fd)));
    }
}

TEST_CASE("masked loss collapses to the single labeled task") {
    Rng rng(53);
    auto logits = random_logits(rng, 8);
    std::vector<LabelTriple> labels(8);
    for (auto& l : labels) l.grade = rng.bernoulli(0.5) ? 1 : 0;
    const auto r = masked_multitask_loss(logits, labels, 2.0, 0.5);
    REQUIRE(r.loss == Catch::Approx(r.task_loss[0]).margin(1e-12));
    REQUIRE(r.task_count[1] == 0);
    REQUIRE(r.task_count[2] == 0);
}

TEST_CASE("masked loss equals the brute-force double loop on random batches") {
    Rng rng(54);
    for (int trial = 0; trial < 100; ++trial) {
        auto logits = random_logits(rng, 8);
        auto labels = random_labels(rng, 8, 0.4);
        if (!batch_has_label(labels)) labels[0].grade = 1;
        const auto r = masked_multitask_loss(logits, labels, 2.0, 0.5);
        REQUIRE(r.loss == Catch::Approx(masked_loss_oracle(logits, labels, 2.0, 0.5)).margin(1e-6));
    }
}

TEST_CASE("batches with an all-missing task exclude it from the task mean") {
    Rng rng(55);
    auto logits = random_logits(rng, 6);
    std::vector<LabelTriple> labels(6);
    for (auto& l : labels) {
        l.grade = rng.bernoulli(0.5) ? 1 : 0;
        l.idh = rng.bernoulli(0.5) ? 1 : 0;
        // codel entirely missing
    }
    const auto r = masked_multitask_loss(logits, labels, 2.0, 0.5);
    REQUIRE(r.task_count[2] == 0);
    REQUIRE(r.loss == Catch::Approx(0.5 * (r.task_loss[0] + r.task_loss[1])).margin(1e-12));
}

TEST_CASE("fully unlabeled batch is an error") {
    Rng rng(56);
    auto logits = random_logits(rng, 4);
    std::vector<LabelTriple> labels(4);
    try {
        masked_multitask_loss(logits, labels, 2.0, 0.5);
        FAIL("expected error");
    } catch (const Error& e) {
        REQUIRE(std::string(e.what()).find("unlabeled batch") != std::string::npos);
    }
}

TEST_CASE("perturbing a logit with a missing label leaves that task loss unchanged") {
    Rng rng(57);
    auto logits = random_logits(rng, 8);
    auto labels = random_labels(rng, 8, 0.5);
    if (!batch_has_label(labels)) labels[0].grade = 1;
    // find a (sample, task) hole
    for (int t = 0; t < kNumTasks; ++t)
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i].task(t)) continue;
            auto base = masked_multitask_loss(logits, labels, 2.0, 0.5);
            auto perturbed = logits;
            perturbed[i].set_task(t, perturbed[i].task(t) + 100.0);
            auto after = masked_multitask_loss(perturbed, labels, 2.0, 0.5);
            REQUIRE(after.loss == base.loss); // exact
            REQUIRE(base.dlogits[i][t] == 0.0);
        }
}

TEST_CASE("masked loss is permutation invariant") {
    Rng rng(58);
    auto logits = random_logits(rng, 8);
    auto labels = random_labels(rng, 8, 0.3);
    if (!batch_has_label(labels)) labels[0].grade = 1;
    const double base = masked_multitask_loss(logits, labels, 2.0, 0.5).loss;
    std::vector<std::size_t> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 8; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<TaskLogits> pl(8);
    std::vector<LabelTriple> pb(8);
    for (std::size_t i = 0; i < 8; ++i) {
        pl[i] = logits[perm[i]];
        pb[i] = labels[perm[i]];
    }
    REQUIRE(masked_multitask_loss(pl, pb, 2.0, 0.5).loss == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("masked loss gradient matches central finite differences") {
    Rng rng(59);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        auto logits = random_logits(rng, 5);
        auto labels = random_labels(rng, 5, 0.35);
        if (!batch_has_label(labels)) labels[0].idh = 0;
        const auto r = masked_multitask_loss(logits, labels, 2.0, 0.5);
        for (std::size_t i = 0; i < logits.size(); ++i)
            for (int t = 0; t < kNumTasks; ++t) {
                auto up = logits, dn = logits;
                up[i].set_task(t, up[i].task(t) + h);
                dn[i].set_task(t, dn[i].task(t) - h);
                const double fd = (masked_multitask_loss(up, labels, 2.0, 0.5).loss -
                                   masked_multitask_loss(dn, labels, 2.0, 0.5).loss) /
                                  (2 * h);
                const double an = r.dlogits[i][t];
                const double tol = 1e-4 * std::max(1e-3, std::fabs(fd));
                REQUIRE(std::fabs(an - fd) <= tol);
            }
    }
}

TEST_CASE("dice_score equals direct voxel counting") {
    Rng rng(60);

    SECTION("identical nonempty masks give 1") {
        Volume v(8, 8, 8);
        for (auto& x : v.data) x = rng.bernoulli(0.4) ? 1.0f : 0.0f;
        SegmentationMask m{v};
        REQUIRE(dice_score(m, m) == 1.0);
    }
    SECTION("disjoint nonempty masks give 0") {
        Volume a(4, 4, 4), b(4, 4, 4);
        a.at(0, 0, 0) = 1.0f;
        b.at(3, 3, 3) = 1.0f;
        REQUIRE(dice_score(SegmentationMask{a}, SegmentationMask{b}) == 0.0);
    }
    SECTION("both empty gives 1 by definition") {
        Volume a(4, 4, 4), b(4, 4, 4);
        REQUIRE(dice_score(SegmentationMask{a}, SegmentationMask{b}) == 1.0);
    }
    SECTION("counting oracle: |A|=8, |B|=8, |A^B|=4 gives 0.5") {
        Volume a(8, 8, 8), b(8, 8, 8);
        // A: 8 voxels in a row at y=z=0; B: shifted by 4.
        for (int x = 0; x < 8; ++x) a.at(x, 0, 0) = 1.0f;
        for (int x = 4; x < 8; ++x) b.at(x, 0, 0) = 1.0f;
        for (int x = 0; x < 4; ++x) b.at(x, 1, 0) = 1.0f;
        REQUIRE(dice_score(SegmentationMask{a}, SegmentationMask{b}) == 0.5);
    }
    SECTION("random masks against the counting oracle") {
        for (int trial = 0; trial < 100; ++trial) {
            Volume a(6, 6, 6), b(6, 6, 6);
            std::size_t na = 0, nb = 0, ni = 0;
            for (std::size_t i = 0; i < a.data.size(); ++i) {
                const bool va = rng.bernoulli(0.3), vb = rng.bernoulli(0.3);
                a.data[i] = va ? 1.0f : 0.0f;
                b.data[i] = vb ? 1.0f : 0.0f;
                na += va;
                nb += vb;
                ni += (va && vb);
            }
            const double expected = (na + nb) ? 2.0 * ni / double(na + nb) : 1.0;
            REQUIRE(dice_score(SegmentationMask{a}, SegmentationMask{b}) == expected);
        }
    }
    SECTION("symmetry") {
        Volume a(5, 5, 5), b(5, 5, 5);
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            a.data[i] = rng.bernoulli(0.4) ? 1.0f : 0.0f;
            b.data[i] = rng.bernoulli(0.4) ? 1.0f : 0.0f;
        }
        REQUIRE(dice_score(SegmentationMask{a}, SegmentationMask{b}) ==
                dice_score(SegmentationMask{b}, SegmentationMask{a}));
    }
    SECTION("dimension mismatch is an error") {
        REQUIRE_THROWS_AS(dice_score(SegmentationMask{Volume(4, 4, 4)},
                                     SegmentationMask{Volume(5, 4, 4)}),
                          Error);
    }
}

TEST_CASE("soft dice loss at the extremes") {
    Rng rng(61);
    std::vector<double> ref(64);
    for (auto& y : ref) y = rng.bernoulli(0.5) ? 1.0 : 0.0;
    ref[0] = 1.0; // nonempty
    std::vector<double> inverted(64);
    for (std::size_t i = 0; i < ref.size(); ++i) inverted[i] = 1.0 - ref[i];
    REQUIRE(soft_dice_loss(ref, ref) == Catch::Approx(0.0).margin(1e-4));
    REQUIRE(soft_dice_loss(inverted, ref) == Catch::Approx(1.0).margin(1e-4));
}

TEST_CASE("soft dice gradient matches central finite differences on 4^3 instances") {
    Rng rng(62);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> probs(64), ref(64);
        for (auto& p : probs) p = rng.uniform(0.01, 0.99);
        for (auto& y : ref) y = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const auto grad = soft_dice_loss_grad(probs, ref);
        for (std::size_t i = 0; i < probs.size(); i += 7) {
            auto up = probs, dn = probs;
            up[i] += h;
            dn[i] -= h;
            const double fd = (soft_dice_loss(up, ref) - soft_dice_loss(dn, ref)) / (2 * h);
            const double tol = 1e-4 * std::max(1e-6, std::fabs(fd));
            REQUIRE(std::fabs(grad.dprobs[i] - fd) <= tol);
        }
    }
}
