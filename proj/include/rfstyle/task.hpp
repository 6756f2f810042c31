#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "rfstyle/feat.hpp"
#include "rfstyle/image.hpp"
#include "rfstyle/render.hpp"

namespace rfstyle {

enum class TaskMode { ObjectSelect, Compositional, SemanticAware };

const char* to_string(TaskMode mode);
/// Accepts "object-select", "compositional", "semantic-aware".
TaskMode parse_task_mode(const std::string& text);

struct LossConfig {
    double lambda = 1e-3;    // content weight
    double lambda_tv = 1.0;  // smoothness weight
    double alpha = 0.5;      // texture/semantic blend for matching
    /// Pixel MSE on preserve labels; false reproduces the style-overflow ablation.
    bool preserve_term = true;

    void validate() const;
};

/// A style image prepared for one label. Feature maps are at the texture
/// extractor's resolution; `mask` is the style label mask at that resolution and
/// `image_mask` at image resolution.
struct StyleTarget {
    std::string source;
    Image image;
    FeatureMap texture;
    FeatureMap semantic;  // semantic-aware only, resampled onto the texture grid
    LabelMask mask;
    LabelMask image_mask;
};

struct LabelBinding {
    bool preserve = false;
    std::shared_ptr<const StyleTarget> style;

    static LabelBinding keep() { return {true, nullptr}; }
    static LabelBinding stylize(std::shared_ptr<const StyleTarget> s) { return {false, std::move(s)}; }
};

struct OptimizerSettings {
    double step_size = 1e-2;
    int steps = 300;
    double decay = 0.99;
    double epsilon = 1e-8;
    /// Views rendered per step; 0 uses every view. Subsets are drawn from `seed`.
    int views_per_step = 0;
    std::uint64_t seed = 0;
    /// Apply region-wise color transfer to ground truth before caching features.
    bool color_transfer = true;
};

struct TaskSpec {
    TaskMode mode = TaskMode::ObjectSelect;
    std::map<int, LabelBinding> bindings;
    LossConfig loss;
    OptimizerSettings optimizer;
    Extractor texture = Extractor::random_conv_bank(0);
    std::optional<Extractor> semantic;
    RenderOptions render;

    /// Throws Configuration when the bindings do not fit the mode.
    void validate() const;
    const LabelBinding& binding(int label) const;
};

/// One training viewpoint. content_texture caches texture features of gt_image;
/// content_key ties the cache to the image and extractor that produced it.
struct View {
    std::string name;
    Camera camera;
    Image gt_image;
    LabelMask mask;
    FeatureMap content_texture;
    std::uint64_t content_key = 0;

    /// Recomputes the cache from gt_image with `texture`.
    void cache_features(const Extractor& texture);
    /// Throws Stale if gt_image or the extractor changed since cache_features.
    void check_cache(const Extractor& texture) const;
};

}  // namespace rfstyle
