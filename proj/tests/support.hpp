#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "icolorit/image.hpp"

namespace testing {

using Gen = std::mt19937_64;

inline int uniform_int(Gen& g, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(g); }

inline double uniform(Gen& g, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(g);
}

inline icolorit::RgbImage random_rgb(Gen& g, int w, int h) {
    icolorit::RgbImage img(w, h);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(uniform_int(g, 0, 255));
    return img;
}

inline icolorit::LabImage random_lab(Gen& g, int w, int h) {
    icolorit::LabImage img(w, h);
    for (auto& v : img.L.data) v = uniform(g, 0.0, 100.0);
    for (auto& v : img.a.data) v = uniform(g, -100.0, 100.0);
    for (auto& v : img.b.data) v = uniform(g, -100.0, 100.0);
    return img;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("icolorit-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
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

}  // namespace testing
