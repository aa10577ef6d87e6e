#include <catch2/catch_amalgamated.hpp>

#include "glio/preprocess.hpp"
#include "test_helpers.hpp"

using namespace glio;
using glio::testing::random_volume;

namespace {

// Independent two-pass mean/std oracle used to pin the normalization tests.
std::pair<double, double> two_pass_stats(const std::vector<float>& xs) {
    double mean = 0.0;
    for (float x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (float x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size()))};
}

} // namespace

TEST_CASE("resampling arithmetic: 64^3 at 2 mm becomes 128^3 at 1 mm") {
    Rng rng(20);
    Volume v = random_volume(64, 64, 64, rng, {2.0, 2.0, 2.0});
    Volume r = resample_isotropic(v, PreprocessConfig{});
    REQUIRE(r.nx == 128);
    REQUIRE(r.ny == 128);
    REQUIRE(r.nz == 128);
    REQUIRE(r.spacing == std::array<double, 3>{1.0, 1.0, 1.0});
}

TEST_CASE("resampling arithmetic: anisotropic 10x10x10 at (1,2,1) becomes 10x20x10") {
    Rng rng(21);
    Volume v = random_volume(10, 10, 10, rng, {1.0, 2.0, 1.0});
    Volume r = resample_isotropic(v, PreprocessConfig{});
    REQUIRE(r.nx == 10);
    REQUIRE(r.ny == 20);
    REQUIRE(r.nz == 10);
}

TEST_CASE("volume already at target spacing passes through bit-identically") {
    Rng rng(22);
    Volume v = random_volume(17, 13, 9, rng, {1.0, 1.0, 1.0});
    Volume r = resample_isotropic(v, PreprocessConfig{});
    REQUIRE(r.data == v.data);
    REQUIRE(r.nx == v.nx);
}

TEST_CASE("resampling preserves physical extent within one voxel") {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const int nx = 4 + static_cast<int>(rng.below(24));
        const int ny = 4 + static_cast<int>(rng.below(24));
        const int nz = 4 + static_cast<int>(rng.below(24));
        const std::array<double, 3> spacing = {rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0),
                                               rng.uniform(0.5, 3.0)};
        Volume v = random_volume(nx, ny, nz, rng, spacing);
        PreprocessConfig cfg;
        cfg.target_spacing = {rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)};
        Volume r = resample_isotropic(v, cfg);
        const int in_dims[3] = {nx, ny, nz};
        const int out_dims[3] = {r.nx, r.ny, r.nz};
        for (int a = 0; a < 3; ++a) {
            const double in_extent = in_dims[a] * spacing[a];
            const double out_extent = out_dims[a] * cfg.target_spacing[a];
            REQUIRE(std::fabs(in_extent - out_extent) <= cfg.target_spacing[a] * 0.5 + 1e-9);
        }
    }
}

TEST_CASE("interpolation orders 0, 1, 3 all reproduce a constant region") {
    Volume v(8, 8, 8, {2.0, 2.0, 2.0});
    std::fill(v.data.begin(), v.data.end(), 3.5f);
    for (int order : {0, 1, 3}) {
        PreprocessConfig cfg;
        cfg.image_order = order;
        Volume r = resample_isotropic(v, cfg);
        REQUIRE(r.nx == 16);
        for (float x : r.data) REQUIRE(x == Catch::Approx(3.5).margin(1e-5));
    }
}

TEST_CASE("zscore_normalize matches the two-pass oracle") {
    Rng rng(24);
    Volume v = random_volume(12, 11, 10, rng);
    Volume n = zscore_normalize(v);
    auto [mean, stddev] = two_pass_stats(n.data);
    REQUIRE(std::fabs(mean) < 1e-5);
    REQUIRE(std::fabs(stddev - 1.0) < 1e-5);

    // Spot-check individual voxels against the direct formula.
    auto [m0, s0] = two_pass_stats(v.data);
    for (std::size_t i = 0; i < 20; ++i) {
        const std::size_t j = rng.below(v.data.size());
        REQUIRE(n.data[j] == Catch::Approx((v.data[j] - m0) / s0).margin(1e-5));
    }
}

TEST_CASE("zscore_normalize is a fixed point on already-normal data") {
    Rng rng(25);
    Volume v = random_volume(10, 10, 10, rng);
    Volume n1 = zscore_normalize(v);
    Volume n2 = zscore_normalize(n1);
    for (std::size_t i = 0; i < n1.data.size(); ++i)
        REQUIRE(n2.data[i] == Catch::Approx(n1.data[i]).margin(1e-5));
}

TEST_CASE("constant volume cannot be normalized") {
    Volume v(6, 6, 6);
    std::fill(v.data.begin(), v.data.end(), 5.0f);
    try {
        zscore_normalize(v);
        FAIL("expected error");
    } catch (const Error& e) {
        REQUIRE(std::string(e.what()).find("zero variance") != std::string::npos);
    }
}

TEST_CASE("preprocess_study resamples and normalizes each modality independently") {
    Rng rng(26);
    MRIStudy s;
    s.patient_id = "p";
    s.set(Modality::T1ce, random_volume(16, 16, 16, rng, {2.0, 2.0, 2.0}));
    s.set(Modality::T2, random_volume(16, 16, 16, rng, {2.0, 2.0, 2.0}));
    auto [out, mask] = preprocess_study(s, std::nullopt, PreprocessConfig{});
    REQUIRE_FALSE(mask.has_value());
    REQUIRE(validate_study(out).empty());
    for (Modality m : {Modality::T1ce, Modality::T2}) {
        const Volume& v = out.get(m);
        REQUIRE(v.nx == 32);
        auto [mean, stddev] = two_pass_stats(v.data);
        REQUIRE(std::fabs(mean) < 1e-5);
        REQUIRE(std::fabs(stddev - 1.0) < 1e-5);
    }
}

TEST_CASE("normalization statistics never mix across modalities") {
    Rng rng(27);
    MRIStudy a;
    a.patient_id = "p";
    a.set(Modality::T1ce, random_volume(12, 12, 12, rng));
    a.set(Modality::FLAIR, random_volume(12, 12, 12, rng));

    MRIStudy b = a;
    for (float& x : b.get(Modality::FLAIR).data) x *= 10.0f;

    auto [pa, ma] = preprocess_study(a, std::nullopt, PreprocessConfig{});
    auto [pb, mb] = preprocess_study(b, std::nullopt, PreprocessConfig{});
    REQUIRE(pa.get(Modality::T1ce).data == pb.get(Modality::T1ce).data);
}

TEST_CASE("mask resampling stays binary and matches study dims") {
    Rng rng(28);
    MRIStudy s;
    s.patient_id = "p";
    s.set(Modality::T1ce, random_volume(10, 10, 10, rng, {1.7, 1.7, 1.7}));
    s.set(Modality::FLAIR, random_volume(10, 10, 10, rng, {1.7, 1.7, 1.7}));
    Volume mv(10, 10, 10, {1.7, 1.7, 1.7});
    for (auto& x : mv.data) x = rng.bernoulli(0.3) ? 1.0f : 0.0f;
    auto [out, mask] = preprocess_study(s, SegmentationMask{mv}, PreprocessConfig{});
    REQUIRE(mask.has_value());
    REQUIRE(mask->vol.same_dims(out.get(Modality::T1ce)));
    for (float x : mask->vol.data) REQUIRE((x == 0.0f || x == 1.0f));
}

TEST_CASE("preprocess error names the offending modality") {
    Rng rng(29);
    MRIStudy s;
    s.patient_id = "p";
    s.set(Modality::T1ce, random_volume(8, 8, 8, rng));
    Volume constant(8, 8, 8);
    std::fill(constant.data.begin(), constant.data.end(), 2.0f);
    s.set(Modality::T2, constant);
    try {
        preprocess_study(s, std::nullopt, PreprocessConfig{});
        FAIL("expected error");
    } catch (const Error& e) {
        REQUIRE(std::string(e.what()).find("T2") != std::string::npos);
    }
}

TEST_CASE("already-processed study is unchanged within tolerance") {
    Rng rng(30);
    MRIStudy s;
    s.patient_id = "p";
    s.set(Modality::T1ce, zscore_normalize(random_volume(9, 9, 9, rng)));
    s.set(Modality::T2, zscore_normalize(random_volume(9, 9, 9, rng)));
    auto [out, mask] = preprocess_study(s, std::nullopt, PreprocessConfig{});
    for (Modality m : {Modality::T1ce, Modality::T2})
        for (std::size_t i = 0; i < out.get(m).data.size(); ++i)
            REQUIRE(out.get(m).data[i] == Catch::Approx(s.get(m).data[i]).margin(1e-5));
}
