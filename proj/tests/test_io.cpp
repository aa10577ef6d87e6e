#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "glio/io.hpp"
#include "test_helpers.hpp"

using namespace glio;
using glio::testing::TempDir;

TEST_CASE("NIfTI round trip preserves voxels and spacing") {
    Rng rng(10);
    Volume v = glio::testing::random_volume(9, 7, 5, rng, {1.5, 2.0, 0.5});
    TempDir dir("nifti");

    for (const char* name : {"vol.nii", "vol.nii.gz"}) {
        const std::string path = dir.str(name);
        write_volume(v, path);
        Volume r = read_volume(path);
        REQUIRE(r.nx == v.nx);
        REQUIRE(r.ny == v.ny);
        REQUIRE(r.nz == v.nz);
        REQUIRE(r.spacing[0] == Catch::Approx(1.5));
        REQUIRE(r.spacing[1] == Catch::Approx(2.0));
        REQUIRE(r.spacing[2] == Catch::Approx(0.5));
        REQUIRE(r.data == v.data);
    }
}

TEST_CASE("GLPV round trip is bit exact") {
    Rng rng(11);
    Volume v = glio::testing::random_volume(6, 8, 10, rng, {2.0, 1.0, 1.0});
    TempDir dir("glpv");
    const std::string path = dir.str("vol.glpv");
    write_volume(v, path);
    Volume r = read_volume(path);
    REQUIRE(r.data == v.data);
    REQUIRE(r.nx == 6);
    REQUIRE(r.spacing[0] == Catch::Approx(2.0).margin(1e-7));
}

TEST_CASE("GLPV layout matches the documented header") {
    // magic, 3xu32 dims, 3xf32 spacing, u8 dtype, then f32 voxels.
    Volume v(2, 1, 1);
    v.at(0, 0, 0) = 3.0f;
    v.at(1, 0, 0) = 4.0f;
    TempDir dir("glpvhdr");
    const std::string path = dir.str("v.glpv");
    write_volume(v, path);

    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    REQUIRE(std::string(magic, 4) == "GLPV");
    std::uint32_t dims[3];
    in.read(reinterpret_cast<char*>(dims), 12);
    REQUIRE(dims[0] == 2);
    REQUIRE(dims[1] == 1);
    REQUIRE(dims[2] == 1);
    float spacing[3];
    in.read(reinterpret_cast<char*>(spacing), 12);
    REQUIRE(spacing[0] == 1.0f);
    char dtype;
    in.read(&dtype, 1);
    REQUIRE(dtype == 0);
    float vox[2];
    in.read(reinterpret_cast<char*>(vox), 8);
    REQUIRE(vox[0] == 3.0f);
    REQUIRE(vox[1] == 4.0f);
}

TEST_CASE("reading garbage fails with a data error") {
    TempDir dir("garbage");
    const std::string path = dir.str("junk.nii");
    std::ofstream(path) << "this is not a nifti file at all";
    REQUIRE_THROWS_AS(read_volume(path), Error);
    REQUIRE_THROWS_AS(read_volume(dir.str("missing.nii")), Error);
    REQUIRE_THROWS_AS(read_volume(dir.str("unknown.xyz")), Error);
}

TEST_CASE("manifest round trip") {
    TempDir dir("manifest");
    Rng rng(12);
    Volume v = glio::testing::random_volume(4, 4, 4, rng);
    write_volume(v, dir.str("a_t1ce.nii.gz"));
    write_volume(v, dir.str("a_flair.nii.gz"));

    DatasetManifest m;
    ManifestEntry e;
    e.patient_id = "a";
    e.volume_paths[static_cast<int>(Modality::T1ce)] = "a_t1ce.nii.gz";
    e.volume_paths[static_cast<int>(Modality::FLAIR)] = "a_flair.nii.gz";
    e.labels.grade = 1;
    e.labels.codel = 0;
    e.split = "train";
    m.entries.push_back(e);

    const std::string csv = dir.str("manifest.csv");
    write_manifest(m, csv);
    DatasetManifest r = read_manifest(csv);
    REQUIRE(r.entries.size() == 1);
    REQUIRE(r.entries[0].patient_id == "a");
    REQUIRE(r.entries[0].labels.grade == 1);
    REQUIRE_FALSE(r.entries[0].labels.idh.has_value());
    REQUIRE(r.entries[0].labels.codel == 0);
    REQUIRE(r.entries[0].split == "train");
    // relative paths resolve against the manifest directory
    REQUIRE(std::filesystem::exists(r.entries[0].volume_paths[1]));

    MRIStudy s = load_study(r.entries[0]);
    REQUIRE(s.patient_id == "a");
    REQUIRE(s.has(Modality::T1ce));
    REQUIRE_FALSE(s.has(Modality::T1));
}

TEST_CASE("manifest diagnostics carry row and column context") {
    TempDir dir("manifest_bad");
    SECTION("bad header column") {
        std::ofstream(dir.str("m.csv"))
            << "patient_id,t1,t1ce,t2,flair,mask,grade,idh,codel,SPLIT\n";
        try {
            read_manifest(dir.str("m.csv"));
            FAIL("expected error");
        } catch (const Error& e) {
            REQUIRE(e.kind() == ErrorKind::Data);
            REQUIRE(std::string(e.what()).find("column 10") != std::string::npos);
        }
    }
    SECTION("bad label cell") {
        std::ofstream(dir.str("m.csv"))
            << "patient_id,t1,t1ce,t2,flair,mask,grade,idh,codel,split\n"
            << "p1,,,,,,2,,,\n";
        try {
            read_manifest(dir.str("m.csv"));
            FAIL("expected error");
        } catch (const Error& e) {
            REQUIRE(std::string(e.what()).find("row 2") != std::string::npos);
            REQUIRE(std::string(e.what()).find("grade") != std::string::npos);
        }
    }
    SECTION("duplicate patient id") {
        std::ofstream(dir.str("m.csv"))
            << "patient_id,t1,t1ce,t2,flair,mask,grade,idh,codel,split\n"
            << "p1,,,,,,,,,\np1,,,,,,,,,\n";
        REQUIRE_THROWS_AS(read_manifest(dir.str("m.csv")), Error);
    }
    SECTION("missing referenced file") {
        std::ofstream(dir.str("m.csv"))
            << "patient_id,t1,t1ce,t2,flair,mask,grade,idh,codel,split\n"
            << "p1,,nope.nii.gz,,,,,,,\n";
        REQUIRE_THROWS_AS(read_manifest(dir.str("m.csv")), Error);
        REQUIRE_NOTHROW(read_manifest(dir.str("m.csv"), /*check_paths=*/false));
    }
}
