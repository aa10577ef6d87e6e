#include <catch2/catch_amalgamated.hpp>

#include "glio/volume.hpp"
#include "test_helpers.hpp"

using namespace glio;
using glio::testing::random_volume;

TEST_CASE("assemble_channels copies all four modalities unchanged") {
    Rng rng(1);
    MRIStudy s = glio::testing::full_study(32, rng);
    Tensor4 t = assemble_channels(s);
    REQUIRE(t.c == 4);
    REQUIRE(t.nx == 32);
    REQUIRE(t.ny == 32);
    REQUIRE(t.nz == 32);
    for (Modality m : all_modalities()) {
        const Volume& v = s.get(m);
        const float* ch = t.channel(static_cast<int>(m));
        bool equal = true;
        for (std::size_t i = 0; i < v.data.size(); ++i)
            if (ch[i] != v.data[i]) equal = false;
        REQUIRE(equal);
    }
}

TEST_CASE("assemble_channels zero-fills the absent modalities") {
    Rng rng(2);
    MRIStudy s;
    s.patient_id = "p";
    s.set(Modality::T1ce, random_volume(16, 16, 16, rng));
    s.set(Modality::FLAIR, random_volume(16, 16, 16, rng));
    Tensor4 t = assemble_channels(s);
    auto channel_zero = [&](int c) {
        const float* ch = t.channel(c);
        for (std::size_t i = 0; i < t.spatial_size(); ++i)
            if (ch[i] != 0.0f) return false;
        return true;
    };
    REQUIRE(channel_zero(0));        // T1 absent
    REQUIRE_FALSE(channel_zero(1));  // T1ce present (positive intensities)
    REQUIRE(channel_zero(2));        // T2 absent
    REQUIRE_FALSE(channel_zero(3));  // FLAIR present
}

TEST_CASE("study without T1ce is rejected at construction") {
    Rng rng(3);
    std::array<std::optional<Volume>, kNumModalities> mods;
    mods[static_cast<int>(Modality::T2)] = random_volume(8, 8, 8, rng);
    REQUIRE_THROWS_AS(make_study("p", std::move(mods)), Error);
}

TEST_CASE("validate_study reports every violation deterministically") {
    Rng rng(4);
    SECTION("valid study has no violations") {
        MRIStudy s = glio::testing::full_study(16, rng);
        REQUIRE(validate_study(s).empty());
    }
    SECTION("dims mismatch names the offending modality") {
        MRIStudy s;
        s.patient_id = "p";
        s.set(Modality::T1ce, random_volume(32, 32, 32, rng));
        s.set(Modality::T2, random_volume(16, 16, 16, rng));
        auto problems = validate_study(s);
        REQUIRE(problems.size() == 1);
        REQUIRE(problems[0] == "dims mismatch: T2");
    }
    SECTION("non-finite voxel names the offending modality") {
        MRIStudy s = glio::testing::full_study(8, rng);
        s.get(Modality::FLAIR).at(1, 2, 3) = std::numeric_limits<float>::quiet_NaN();
        auto problems = validate_study(s);
        REQUIRE(problems.size() == 1);
        REQUIRE(problems[0] == "non-finite values: FLAIR");
    }
    SECTION("same invalid study yields the same violation order twice") {
        MRIStudy s;
        s.patient_id = "p";
        s.set(Modality::T1, random_volume(8, 8, 8, rng));
        s.get(Modality::T1).at(0, 0, 0) = std::numeric_limits<float>::infinity();
        REQUIRE(validate_study(s) == validate_study(s));
    }
}

TEST_CASE("assemble_channels is idempotent in content") {
    Rng rng(5);
    MRIStudy s = glio::testing::full_study(12, rng);
    Tensor4 a = assemble_channels(s);
    Tensor4 b = assemble_channels(s);
    REQUIRE(a.v == b.v);
}

TEST_CASE("zero channels of the assembled tensor are exactly the absent modalities") {
    Rng rng(6);
    // Every legal modality subset: T1ce always present, at least one of T2/FLAIR.
    const std::array<bool, 2> tf = {false, true};
    for (bool has_t1 : tf)
        for (bool has_t2 : tf)
            for (bool has_flair : tf) {
                if (!has_t2 && !has_flair) continue;
                MRIStudy s;
                s.patient_id = "p";
                s.set(Modality::T1ce, random_volume(8, 8, 8, rng));
                if (has_t1) s.set(Modality::T1, random_volume(8, 8, 8, rng));
                if (has_t2) s.set(Modality::T2, random_volume(8, 8, 8, rng));
                if (has_flair) s.set(Modality::FLAIR, random_volume(8, 8, 8, rng));
                Tensor4 t = assemble_channels(s);
                for (Modality m : all_modalities()) {
                    const float* ch = t.channel(static_cast<int>(m));
                    bool all_zero = true;
                    for (std::size_t i = 0; i < t.spatial_size(); ++i)
                        if (ch[i] != 0.0f) all_zero = false;
                    REQUIRE(all_zero == !s.has(m));
                }
            }
}

TEST_CASE("mask validation catches non-binary values") {
    Volume v(4, 4, 4);
    v.at(0, 0, 0) = 0.5f;
    SegmentationMask m{v};
    auto problems = validate_mask(m);
    REQUIRE_FALSE(problems.empty());
    REQUIRE(problems[0] == "values outside {0,1}");
    REQUIRE(validate_mask(binarize(v)).empty());
}
