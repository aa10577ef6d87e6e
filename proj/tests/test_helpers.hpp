#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "glio/rng.hpp"
#include "glio/volume.hpp"

namespace glio::testing {

// Volume filled with strictly positive pseudo-random intensities.
inline Volume random_volume(int nx, int ny, int nz, Rng& rng,
                            std::array<double, 3> spacing = {1.0, 1.0, 1.0}) {
    Volume v(nx, ny, nz, spacing);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform(0.1, 2.0));
    return v;
}

inline MRIStudy full_study(int n, Rng& rng, std::array<double, 3> spacing = {1.0, 1.0, 1.0}) {
    MRIStudy s;
    s.patient_id = "test";
    for (Modality m : all_modalities())
        s.set(m, random_volume(n, n, n, rng, spacing));
    return s;
}

// Unique scratch directory under the system temp dir, wiped on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("glio_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string str(const std::string& rel) const { return (path_ / rel).string(); }

private:
    std::filesystem::path path_;
};

} // namespace glio::testing
