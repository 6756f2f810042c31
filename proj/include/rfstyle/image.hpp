#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace rfstyle {

/// Row-major H×W×C buffer of doubles. Used for RGB images (C = 3) and
/// per-pixel gradients.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c = 3, double fill = 0.0);

    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
    std::size_t index(int y, int x) const { return (static_cast<std::size_t>(y) * width + x) * channels; }
    double& at(int y, int x, int c) { return data[index(y, x) + c]; }
    double at(int y, int x, int c) const { return data[index(y, x) + c]; }
    std::span<double> pixel(int y, int x) { return {data.data() + index(y, x), static_cast<std::size_t>(channels)}; }
    std::span<const double> pixel(int y, int x) const {
        return {data.data() + index(y, x), static_cast<std::size_t>(channels)};
    }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

enum class FeatureSpace { Texture, Semantic };

struct FeatureMap {
    int height = 0;
    int width = 0;
    int channels = 0;
    FeatureSpace space = FeatureSpace::Texture;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int h, int w, int c, FeatureSpace s, double fill = 0.0);

    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
    std::span<double> vec(std::size_t p) { return {data.data() + p * channels, static_cast<std::size_t>(channels)}; }
    std::span<const double> vec(std::size_t p) const {
        return {data.data() + p * channels, static_cast<std::size_t>(channels)};
    }
    double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    bool same_shape(const FeatureMap& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    /// Throws Dimension on non-finite entries or channels < 1.
    void validate() const;
};

/// Per-pixel integer labels in {0..M}.
struct LabelMask {
    int height = 0;
    int width = 0;
    std::vector<int> labels;

    LabelMask() = default;
    LabelMask(int h, int w, int fill = 0);

    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
    int& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    /// Largest label present (M); 0 for an empty mask.
    int max_label() const;
    std::size_t count(int label) const;
};

/// FNV-1a over the raw bytes of a double buffer. Used as a cache key.
std::uint64_t fingerprint(std::span<const double> values);
std::uint64_t fingerprint(std::span<const float> values);

}  // namespace rfstyle
