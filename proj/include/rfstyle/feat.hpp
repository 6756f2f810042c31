#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rfstyle/grid.hpp"
#include "rfstyle/image.hpp"

namespace rfstyle {

enum class ExtractorKind {
    RgbPatch,        // box average over patch×patch windows
    RandomConvBank,  // seeded 3×3 conv bank, optional |.| rectifier
    SoftPalette,     // smoothed soft color quantization, forward only
    Precomputed,     // tensors loaded from disk, keyed by image stem
};

/// Per-pixel feature extractor. The synthetic kinds stand in for the pretrained
/// texture and semantic encoders; the real ones are run offline and arrive as
/// Precomputed tables.
class Extractor {
public:
    static Extractor rgb_patch(int patch = 1, int stride = 1);
    /// Kernels are a pure function of the seed (portable bit generator, no
    /// std::*_distribution).
    static Extractor random_conv_bank(std::uint64_t seed, int kernels = 16, int stride = 2, bool rectify = true);
    /// Soft assignment to palette colors after a 3×3 box blur; `sharpness` is
    /// 1 / (2 s^2) of the Gaussian similarity.
    static Extractor soft_palette(std::vector<Vec3> palette, double sharpness = 20.0);
    static Extractor precomputed(std::string name, FeatureSpace space,
                                 std::shared_ptr<const std::map<std::string, FeatureMap>> table);

    ExtractorKind kind() const { return kind_; }
    const std::string& name() const { return name_; }
    FeatureSpace space() const { return space_; }
    bool differentiable() const { return kind_ == ExtractorKind::RgbPatch || kind_ == ExtractorKind::RandomConvBank; }
    int stride() const { return stride_; }
    int channels() const;
    /// Output size for an input of the given size: ceil(in / stride).
    int out_size(int in) const { return (in + stride_ - 1) / stride_; }
    /// Stable identity used to key feature caches.
    std::uint64_t identity() const;

    const std::vector<double>& kernel_weights() const { return weights_; }

private:
    ExtractorKind kind_ = ExtractorKind::RgbPatch;
    std::string name_;
    FeatureSpace space_ = FeatureSpace::Texture;
    int patch_ = 1;
    int stride_ = 1;
    std::uint64_t seed_ = 0;
    int kernels_ = 0;
    bool rectify_ = false;
    std::vector<double> weights_;  // [kernel][channel][ky][kx]
    std::vector<Vec3> palette_;
    double sharpness_ = 0.0;
    std::shared_ptr<const std::map<std::string, FeatureMap>> table_;

    friend FeatureMap extract(const Extractor&, const Image&, const std::string&);
    friend Image backprop_extract(const Extractor&, const Image&, const FeatureMap&);
};

/// Throws Contract for images outside [0,1] and MissingFeature when a
/// Precomputed table has no entry for `key`.
FeatureMap extract(const Extractor& extractor, const Image& image, const std::string& key = {});

/// Vector-Jacobian product of extract at `image`. For the linear kinds this is
/// the exact adjoint; with the rectifier it is the adjoint of the linear map
/// at the sign pattern of `image`. Throws NonDifferentiable otherwise.
Image backprop_extract(const Extractor& extractor, const Image& image, const FeatureMap& feature_grad);

/// Bilinear resampling with half-pixel centers (align_corners = false).
FeatureMap resample_bilinear(const FeatureMap& map, int out_h, int out_w);

/// Nearest-neighbor label resampling; never blends labels.
LabelMask downsample_mask(const LabelMask& mask, int out_h, int out_w);

}  // namespace rfstyle
