#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <random>
#include <string>

#include "dash/dataset.hpp"
#include "dash/error.hpp"

namespace testing {

/// Unique scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "dash") {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

/// Small fast dataset for engine-level tests.
inline dash::BiasedDatasetSpec tiny_spec(std::uint64_t seed = 5, double rho = 0.95) {
    dash::BiasedDatasetSpec s;
    s.image_size = 16;
    s.train_count = 36;
    s.val_count = 9;
    s.test_count = 18;
    s.bias_strength = rho;
    s.seed = seed;
    return s;
}

inline dash::ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const dash::Error& e) {
        return e.kind();
    }
    throw std::runtime_error("expected a dash::Error");
}

}  // namespace testing
