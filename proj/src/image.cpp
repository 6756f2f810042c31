#include "rfstyle/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "rfstyle/error.hpp"

namespace rfstyle {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::OutOfBounds: return "out of bounds";
        case ErrorCode::Dimension: return "dimension mismatch";
        case ErrorCode::Contract: return "contract violation";
        case ErrorCode::Stale: return "stale data";
        case ErrorCode::MissingFeature: return "missing feature";
        case ErrorCode::NonDifferentiable: return "non-differentiable extractor";
        case ErrorCode::EmptyCandidates: return "empty candidate set";
        case ErrorCode::DegenerateVector: return "degenerate vector";
        case ErrorCode::Configuration: return "configuration error";
        case ErrorCode::Divergence: return "divergence";
        case ErrorCode::Io: return "i/o error";
        case ErrorCode::Format: return "format error";
    }
    return "error";
}

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

FeatureMap::FeatureMap(int h, int w, int c, FeatureSpace s, double fill)
    : height(h), width(w), channels(c), space(s), data(static_cast<std::size_t>(h) * w * c, fill) {}

void FeatureMap::validate() const {
    if (channels < 1) throw Error(ErrorCode::Dimension, "feature map needs at least one channel");
    if (data.size() != pixels() * channels) throw Error(ErrorCode::Dimension, "feature map payload size");
    if (!std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); }))
        throw Error(ErrorCode::Dimension, "feature map holds non-finite values");
}

LabelMask::LabelMask(int h, int w, int fill) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

int LabelMask::max_label() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
}

std::size_t LabelMask::count(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

namespace {
std::uint64_t fnv1a(const unsigned char* bytes, std::size_t n) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}
}  // namespace

std::uint64_t fingerprint(std::span<const double> values) {
    return fnv1a(reinterpret_cast<const unsigned char*>(values.data()), values.size_bytes());
}

std::uint64_t fingerprint(std::span<const float> values) {
    return fnv1a(reinterpret_cast<const unsigned char*>(values.data()), values.size_bytes());
}

}  // namespace rfstyle
