#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "tomfield/matrix.hpp"
#include "tomfield/rng.hpp"

namespace test_support {

inline tomfield::Matrix random_matrix(std::size_t rows, std::size_t cols, tomfield::Rng& rng, double scale = 1.0) {
    tomfield::Matrix m(rows, cols);
    for (double& v : m.values()) v = rng.uniform(-scale, scale);
    return m;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        tomfield::Rng rng(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(::getpid()));
        path_ = std::filesystem::temp_directory_path() / ("tomfield_" + tag + "_" + std::to_string(rng.next_u64() % 1000000));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace test_support
