#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unistd.h>
#include <random>
#include <vector>

#include "rfstyle/error.hpp"
#include "rfstyle/grid.hpp"
#include "rfstyle/image.hpp"

namespace testing {

using rfstyle::Vec3;

// Portable uniform draws so instances do not depend on the standard library's distributions.
struct Rng {
    explicit Rng(std::uint64_t seed) : gen(seed) {}
    double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int below(int n) { return static_cast<int>(gen() % static_cast<std::uint64_t>(n)); }
    std::mt19937_64 gen;
};

inline rfstyle::Image random_image(Rng& rng, int h, int w, double lo = 0.0, double hi = 1.0) {
    rfstyle::Image im(h, w, 3);
    for (double& v : im.data) v = rng.uniform(lo, hi);
    return im;
}

inline rfstyle::FeatureMap random_features(Rng& rng, int h, int w, int c,
                                           rfstyle::FeatureSpace s = rfstyle::FeatureSpace::Texture) {
    rfstyle::FeatureMap f(h, w, c, s);
    for (double& v : f.data) v = rng.uniform(-1.0, 1.0);
    return f;
}

inline rfstyle::LabelMask random_mask(Rng& rng, int h, int w, int labels) {
    rfstyle::LabelMask m(h, w);
    for (int& l : m.labels) l = rng.below(labels);
    return m;
}

/// Grid with densities in [dlo, dhi] and SH coefficients whose DC term keeps
/// colors well inside (0, 1).
inline rfstyle::VoxelGrid random_grid(Rng& rng, std::array<int, 3> dims, double dlo = 0.0, double dhi = 4.0,
                                      int degree = 1) {
    rfstyle::VoxelGrid g(dims, Vec3::Constant(-1.0), Vec3::Constant(1.0), degree);
    for (float& d : g.mutable_density()) d = static_cast<float>(rng.uniform(dlo, dhi));
    const int nb = g.basis_count();
    auto sh = g.mutable_sh();
    for (std::size_t i = 0; i < sh.size(); ++i)
        sh[i] = static_cast<float>(i % nb == 0 ? rng.uniform(1.2, 2.3) : rng.uniform(-0.2, 0.2));
    return g;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Error code thrown by f, or nullopt if it returned normally.
template <class F>
std::optional<rfstyle::ErrorCode> code_of(F&& f) {
    try {
        f();
    } catch (const rfstyle::Error& e) {
        return e.code();
    }
    return std::nullopt;
}

/// Fresh scratch directory, removed on destruction.
struct TempDir {
    explicit TempDir(const std::string& tag)
        : path(std::filesystem::temp_directory_path() / ("rfstyle_" + tag + "_" + std::to_string(::getpid()))) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::filesystem::path path;
};

}  // namespace testing
