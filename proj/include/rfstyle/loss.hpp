#pragma once

#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rfstyle/grid.hpp"
#include "rfstyle/image.hpp"
#include "rfstyle/match.hpp"
#include "rfstyle/render.hpp"
#include "rfstyle/task.hpp"

namespace rfstyle {

struct FeatureLoss {
    double value = 0.0;
    FeatureMap grad;
};

struct PixelLoss {
    double value = 0.0;
    Image grad;
    std::size_t pixels = 0;
};

struct GridLoss {
    double value = 0.0;
    std::vector<double> grad;  // same layout as grid.sh()
};

/// Mean squared error over all entries; grad = 2 (F_r - F_c) / count.
FeatureLoss l2_feature_loss(const FeatureMap& rendered, const FeatureMap& content);

/// MSE over the pixels where mask == label (all channels). An empty region
/// gives value 0 and a zero gradient.
PixelLoss l2_pixel_loss(const Image& rendered, const Image& truth, const LabelMask& mask, int label);

/// Mean squared difference of SH coefficients between axis-adjacent voxels.
GridLoss tv_loss(const VoxelGrid& grid);

/// Mean matched cosine distance. Matches are constants of the gradient; pass
/// `frozen` to reuse a previous assignment.
FeatureLoss nnfm_loss(const FeatureMap& rendered, const FeatureMap& style, const MatchResult* frozen = nullptr);

/// Mean texture cosine distance over pixels labelled `label`, matched with
/// sannfm_match. No gradient flows through the semantic maps.
FeatureLoss sannfm_loss(int label, const FeatureMap& rendered_tex, const FeatureMap& style_tex,
                        const FeatureMap& rendered_sem, const FeatureMap& style_sem, const LabelMask& rendered_mask,
                        const LabelMask& style_mask, double alpha, const MatchResult* frozen = nullptr);

struct LabelTerm {
    int label = 0;
    bool preserve = false;
    double style = 0.0;
    double content = 0.0;
    double preserve_mse = 0.0;
    std::size_t pixels = 0;  // feature pixels for style labels, image pixels for preserve labels
};

struct LossReport {
    double total = 0.0;
    double style = 0.0;
    double content = 0.0;
    double preserve = 0.0;
    double tv = 0.0;          // unweighted
    double lambda_tv = 0.0;
    std::size_t feature_pixels = 0;  // N for style/content terms
    std::size_t image_pixels = 0;    // N for the preserve term
    std::vector<LabelTerm> labels;

    double data_total() const { return style + content + preserve; }
    const LabelTerm* label(int id) const;
    nlohmann::json to_json() const;
};

/// Matching assignments keyed by (view, label), for freezing matches across evaluations.
struct MatchCache {
    std::map<std::pair<std::size_t, int>, std::vector<int>> indices;
};

struct LossOptions {
    bool style = true;
    bool content = true;
    bool preserve = true;
    bool tv = true;
    const MatchCache* replay = nullptr;
    MatchCache* record = nullptr;
    std::size_t view_key = 0;  // first half of the MatchCache key
};

struct MaskedLoss {
    LossReport report;
    Image pixel_grad;          // d(total)/d(clamped rendered image)
    FeatureMap texture_grad;   // d(total)/d(rendered texture features); empty without style labels
};

/// Label-dispatched loss of one rendered view:
///   (1/N_f) sum over style-label feature pixels of (style + lambda * content)
///   + (1/N_px) sum over preserve-label pixels of per-pixel MSE
///   + lambda_tv * tv(grid).
/// The TV gradient is not part of pixel_grad; take it from tv_loss.
MaskedLoss composite_masked_loss(const Image& rendered, const View& view, const TaskSpec& task,
                                 const VoxelGrid& grid, const LossOptions& options = {});

}  // namespace rfstyle
