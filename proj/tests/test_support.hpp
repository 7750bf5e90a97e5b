#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "rnvkit/volume.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("rnvkit_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline rnvkit::Volume random_volume(int z, int x, int y, std::mt19937_64& rng, rnvkit::Modality m = rnvkit::Modality::OCT)
{
    rnvkit::Volume v(z, x, y, {3.05f, 40.0f, 40.0f}, m);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& f : v.data()) f = u(rng);
    return v;
}

inline rnvkit::VriSurface random_surface(int depth, int width, int bscans, std::mt19937_64& rng)
{
    rnvkit::VriSurface s{depth, rnvkit::Image2D<std::int32_t>(width, bscans)};
    std::uniform_int_distribution<int> u(0, depth);
    for (auto& z : s.z.data()) z = u(rng);
    return s;
}

} // namespace testing_support
