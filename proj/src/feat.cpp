#include "rfstyle/feat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rfstyle/error.hpp"

namespace rfstyle {

namespace {

constexpr int kConvSize = 3;

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double unit_uniform(std::uint64_t& state) { return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53; }

void check_image(const Image& image) {
    if (image.channels != 3) throw Error(ErrorCode::Dimension, "extractors take RGB images");
    for (double v : image.data)
        if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::Contract, "image values must lie in [0,1]");
}

}  // namespace

Extractor Extractor::rgb_patch(int patch, int stride) {
    if (patch < 1 || stride < 1) throw Error(ErrorCode::Configuration, "patch and stride must be >= 1");
    Extractor e;
    e.kind_ = ExtractorKind::RgbPatch;
    e.name_ = "rgb-patch";
    e.patch_ = patch;
    e.stride_ = stride;
    return e;
}

Extractor Extractor::random_conv_bank(std::uint64_t seed, int kernels, int stride, bool rectify) {
    if (kernels < 1 || stride < 1) throw Error(ErrorCode::Configuration, "kernel count and stride must be >= 1");
    Extractor e;
    e.kind_ = ExtractorKind::RandomConvBank;
    e.name_ = "random-conv";
    e.seed_ = seed;
    e.kernels_ = kernels;
    e.stride_ = stride;
    e.rectify_ = rectify;
    const int taps = 3 * kConvSize * kConvSize;
    const double scale = 1.0 / std::sqrt(static_cast<double>(taps));
    std::uint64_t state = seed;
    e.weights_.resize(static_cast<std::size_t>(kernels) * taps);
    for (double& w : e.weights_) w = (2.0 * unit_uniform(state) - 1.0) * scale;
    return e;
}

Extractor Extractor::soft_palette(std::vector<Vec3> palette, double sharpness) {
    if (palette.size() < 2) throw Error(ErrorCode::Configuration, "palette needs at least two colors");
    if (!(sharpness > 0.0)) throw Error(ErrorCode::Configuration, "palette sharpness must be positive");
    Extractor e;
    e.kind_ = ExtractorKind::SoftPalette;
    e.name_ = "soft-palette";
    e.space_ = FeatureSpace::Semantic;
    e.palette_ = std::move(palette);
    e.sharpness_ = sharpness;
    return e;
}

Extractor Extractor::precomputed(std::string name, FeatureSpace space,
                                 std::shared_ptr<const std::map<std::string, FeatureMap>> table) {
    Extractor e;
    e.kind_ = ExtractorKind::Precomputed;
    e.name_ = std::move(name);
    e.space_ = space;
    e.table_ = std::move(table);
    return e;
}

int Extractor::channels() const {
    switch (kind_) {
        case ExtractorKind::RgbPatch: return 3;
        case ExtractorKind::RandomConvBank: return kernels_;
        case ExtractorKind::SoftPalette: return static_cast<int>(palette_.size());
        case ExtractorKind::Precomputed:
            if (table_ && !table_->empty()) return table_->begin()->second.channels;
            return 0;
    }
    return 0;
}

std::uint64_t Extractor::identity() const {
    std::vector<double> key{static_cast<double>(kind_),   static_cast<double>(patch_), static_cast<double>(stride_),
                            static_cast<double>(kernels_), rectify_ ? 1.0 : 0.0,      sharpness_,
                            static_cast<double>(seed_ & 0xffffffffu), static_cast<double>(seed_ >> 32)};
    key.insert(key.end(), weights_.begin(), weights_.end());
    for (const auto& c : palette_) key.insert(key.end(), {c.x(), c.y(), c.z()});
    for (char ch : name_) key.push_back(static_cast<double>(ch));
    if (table_) key.push_back(static_cast<double>(reinterpret_cast<std::uintptr_t>(table_.get())));
    return fingerprint(key);
}

FeatureMap extract(const Extractor& e, const Image& image, const std::string& key) {
    if (e.kind_ == ExtractorKind::Precomputed) {
        if (!e.table_) throw Error(ErrorCode::MissingFeature, "precomputed extractor has no table");
        const auto it = e.table_->find(key);
        if (it == e.table_->end())
            throw Error(ErrorCode::MissingFeature, "no precomputed " + e.name_ + " features for '" + key + "'");
        return it->second;
    }
    check_image(image);
    const int H = image.height, W = image.width;
    switch (e.kind_) {
        case ExtractorKind::RgbPatch: {
            FeatureMap out(e.out_size(H), e.out_size(W), 3, e.space_);
            for (int i = 0; i < out.height; ++i)
                for (int j = 0; j < out.width; ++j) {
                    const int y1 = std::min(H, i * e.stride_ + e.patch_);
                    const int x1 = std::min(W, j * e.stride_ + e.patch_);
                    const double n = double(y1 - i * e.stride_) * (x1 - j * e.stride_);
                    for (int y = i * e.stride_; y < y1; ++y)
                        for (int x = j * e.stride_; x < x1; ++x)
                            for (int c = 0; c < 3; ++c) out.at(i, j, c) += image.at(y, x, c) / n;
                }
            return out;
        }
        case ExtractorKind::RandomConvBank: {
            FeatureMap out(e.out_size(H), e.out_size(W), e.kernels_, e.space_);
            for (int i = 0; i < out.height; ++i)
                for (int j = 0; j < out.width; ++j)
                    for (int k = 0; k < e.kernels_; ++k) {
                        const double* w = e.weights_.data() + static_cast<std::size_t>(k) * 27;
                        double acc = 0.0;
                        for (int c = 0; c < 3; ++c)
                            for (int ky = 0; ky < kConvSize; ++ky) {
                                const int y = i * e.stride_ + ky - 1;
                                if (y < 0 || y >= H) continue;
                                for (int kx = 0; kx < kConvSize; ++kx) {
                                    const int x = j * e.stride_ + kx - 1;
                                    if (x < 0 || x >= W) continue;
                                    acc += w[(c * kConvSize + ky) * kConvSize + kx] * image.at(y, x, c);
                                }
                            }
                        out.at(i, j, k) = e.rectify_ ? std::abs(acc) : acc;
                    }
            return out;
        }
        case ExtractorKind::SoftPalette: {
            const int K = static_cast<int>(e.palette_.size());
            FeatureMap out(H, W, K, e.space_);
            std::vector<double> d2(K);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    Vec3 mean = Vec3::Zero();
                    int n = 0;
                    for (int yy = std::max(0, y - 1); yy <= std::min(H - 1, y + 1); ++yy)
                        for (int xx = std::max(0, x - 1); xx <= std::min(W - 1, x + 1); ++xx, ++n)
                            mean += Vec3(image.at(yy, xx, 0), image.at(yy, xx, 1), image.at(yy, xx, 2));
                    mean /= n;
                    double best = std::numeric_limits<double>::infinity();
                    for (int k = 0; k < K; ++k) {
                        d2[k] = (mean - e.palette_[k]).squaredNorm();
                        best = std::min(best, d2[k]);
                    }
                    double total = 0.0;
                    for (int k = 0; k < K; ++k) total += (out.at(y, x, k) = std::exp(-e.sharpness_ * (d2[k] - best)));
                    for (int k = 0; k < K; ++k) out.at(y, x, k) /= total;
                }
            return out;
        }
        case ExtractorKind::Precomputed: break;
    }
    throw Error(ErrorCode::Configuration, "unknown extractor kind");
}

Image backprop_extract(const Extractor& e, const Image& image, const FeatureMap& g) {
    if (!e.differentiable()) throw Error(ErrorCode::NonDifferentiable, e.name_ + " is not differentiable");
    const int H = image.height, W = image.width;
    if (g.height != e.out_size(H) || g.width != e.out_size(W) || g.channels != e.channels())
        throw Error(ErrorCode::Dimension, "feature gradient does not match extractor output");
    Image out(H, W, 3);
    if (e.kind_ == ExtractorKind::RgbPatch) {
        for (int i = 0; i < g.height; ++i)
            for (int j = 0; j < g.width; ++j) {
                const int y1 = std::min(H, i * e.stride_ + e.patch_);
                const int x1 = std::min(W, j * e.stride_ + e.patch_);
                const double n = double(y1 - i * e.stride_) * (x1 - j * e.stride_);
                for (int y = i * e.stride_; y < y1; ++y)
                    for (int x = j * e.stride_; x < x1; ++x)
                        for (int c = 0; c < 3; ++c) out.at(y, x, c) += g.at(i, j, c) / n;
            }
        return out;
    }
    // Conv bank: the rectifier needs the pre-activation sign at this image.
    FeatureMap pre;
    if (e.rectify_) {
        Extractor linear = e;
        linear.rectify_ = false;
        pre = extract(linear, image);
    }
    for (int i = 0; i < g.height; ++i)
        for (int j = 0; j < g.width; ++j)
            for (int k = 0; k < e.kernels_; ++k) {
                double gk = g.at(i, j, k);
                if (e.rectify_) {
                    const double v = pre.at(i, j, k);
                    gk = v > 0.0 ? gk : (v < 0.0 ? -gk : 0.0);
                }
                if (gk == 0.0) continue;
                const double* w = e.weights_.data() + static_cast<std::size_t>(k) * 27;
                for (int c = 0; c < 3; ++c)
                    for (int ky = 0; ky < kConvSize; ++ky) {
                        const int y = i * e.stride_ + ky - 1;
                        if (y < 0 || y >= H) continue;
                        for (int kx = 0; kx < kConvSize; ++kx) {
                            const int x = j * e.stride_ + kx - 1;
                            if (x < 0 || x >= W) continue;
                            out.at(y, x, c) += w[(c * kConvSize + ky) * kConvSize + kx] * gk;
                        }
                    }
            }
    return out;
}

namespace {
struct Tap {
    int i0, i1;
    double t;
};

Tap bilinear_tap(int o, int in, int out) {
    double src = (o + 0.5) * static_cast<double>(in) / out - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    return {i0, i1, src - i0};
}
}  // namespace

FeatureMap resample_bilinear(const FeatureMap& map, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw Error(ErrorCode::Dimension, "resample target must be at least 1×1");
    if (out_h == map.height && out_w == map.width) return map;
    FeatureMap out(out_h, out_w, map.channels, map.space);
    for (int y = 0; y < out_h; ++y) {
        const Tap ty = bilinear_tap(y, map.height, out_h);
        for (int x = 0; x < out_w; ++x) {
            const Tap tx = bilinear_tap(x, map.width, out_w);
            for (int c = 0; c < map.channels; ++c) {
                const double top = (1.0 - tx.t) * map.at(ty.i0, tx.i0, c) + tx.t * map.at(ty.i0, tx.i1, c);
                const double bot = (1.0 - tx.t) * map.at(ty.i1, tx.i0, c) + tx.t * map.at(ty.i1, tx.i1, c);
                out.at(y, x, c) = (1.0 - ty.t) * top + ty.t * bot;
            }
        }
    }
    return out;
}

LabelMask downsample_mask(const LabelMask& mask, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw Error(ErrorCode::Dimension, "mask target must be at least 1×1");
    if (out_h == mask.height && out_w == mask.width) return mask;
    LabelMask out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(mask.height - 1, static_cast<int>((y + 0.5) * mask.height / out_h));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(mask.width - 1, static_cast<int>((x + 0.5) * mask.width / out_w));
            out.at(y, x) = mask.at(sy, sx);
        }
    }
    return out;
}

}  // namespace rfstyle
