#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rfstyle/grid.hpp"
#include "rfstyle/loss.hpp"
#include "rfstyle/render.hpp"
#include "rfstyle/task.hpp"

namespace rfstyle {

// ---------------------------------------------------------------------------
// Color transfer
// ---------------------------------------------------------------------------

/// rgb -> A * rgb + b.
struct ColorMap {
    Mat3 matrix = Mat3::Identity();
    Vec3 offset = Vec3::Zero();
    bool fallback = false;  // selection too small; identity was used

    Vec3 apply(const Vec3& rgb) const { return matrix * rgb + offset; }
};

/// Which pixels take part. Without a RegionSelect every pixel of every source
/// and of the style image is used.
struct RegionSelect {
    std::vector<LabelMask> source_masks;  // one per source image
    int label = 1;
    std::optional<LabelMask> style_mask;  // unset: the whole style image
    int style_label = 1;
};

struct ColorTransferResult {
    std::vector<Image> images;
    ColorMap map;
};

/// One affine map, fitted on the pooled selected source pixels, that matches
/// their mean and covariance to the selected style pixels:
///   A = S_t^{1/2} S_s^{-1/2},  b = mu_t - A mu_s,  S = Cov + 1e-5 I.
/// Applied to the selected pixels of every source and clamped to [0,1];
/// unselected pixels are copied untouched. Fewer than 10 pixels on either side
/// yields the identity map.
ColorTransferResult color_transfer(std::span<const Image> sources, const Image& style,
                                   const std::optional<RegionSelect>& region = std::nullopt);

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

/// RMSProp: acc = decay * acc + (1 - decay) g^2;  p -= step * g / (sqrt(acc) + eps).
class RmsProp {
public:
    RmsProp(std::size_t size, double step, double decay = 0.99, double epsilon = 1e-8)
        : acc_(size, 0.0), step_(step), decay_(decay), epsilon_(epsilon) {}

    void apply(std::span<float> params, std::span<const double> grad);
    const std::vector<double>& accumulator() const { return acc_; }

private:
    std::vector<double> acc_;
    double step_, decay_, epsilon_;
};

struct PretrainSettings {
    int steps = 2000;
    double density_step = 0.5;
    double sh_step = 5e-2;
    double decay = 0.99;
    double epsilon = 1e-8;
    /// Stop when the loss improved by less than this fraction over `plateau_window` steps.
    double plateau_tolerance = 1e-5;
    int plateau_window = 50;
    RenderOptions render;
    bool freeze_density = true;
};

struct PretrainResult {
    VoxelGrid grid;
    std::vector<double> losses;  // loss before each applied step
    int steps_run = 0;
};

/// Fits density and radiance to the views by pixel MSE (mean over views), then
/// freezes density. Throws Contract for fewer than 2 views and Divergence on a
/// non-finite loss.
PretrainResult pretrain(VoxelGrid grid, std::span<const View> views, const PretrainSettings& settings = {},
                        const std::function<void(int, double)>& on_step = {});

/// Seeded starting point for pretraining: small positive raw density, gray radiance.
VoxelGrid random_init_grid(std::array<int, 3> dims, const Vec3& bbox_min, const Vec3& bbox_max, int sh_degree,
                           std::uint64_t seed);

/// Mean photometric MSE of the grid's renders against the views.
double photometric_mse(const VoxelGrid& grid, std::span<const View> views, const RenderOptions& render = {});
double psnr_from_mse(double mse);

/// Sum over views of composite_masked_loss, its SH gradient (data terms
/// through backward_radiance plus lambda_tv * TV), and per-view reports.
struct Objective {
    LossReport report;
    std::vector<LossReport> per_view;
    std::vector<double> grad;
};

Objective evaluate_objective(const VoxelGrid& grid, std::span<const View> views, const TaskSpec& task,
                             const LossOptions& options = {}, std::span<const std::size_t> subset = {});

struct OptState {
    int step = 0;
    std::vector<LossReport> reports;
    std::vector<double> accumulator;
};

struct FinetuneResult {
    VoxelGrid grid;
    OptState state;
};

/// Stylizes radiance only. Requires a density-frozen grid and fresh feature
/// caches; aborts with Divergence on a non-finite loss.
FinetuneResult finetune(VoxelGrid grid, std::span<const View> views, const TaskSpec& task,
                        const std::function<void(int, const LossReport&)>& on_step = {});

/// Color-transfers the ground truth per the task's region policy (if enabled)
/// and caches content features.
std::vector<View> prepare_views(std::vector<View> views, const TaskSpec& task);

/// Texture (and, with a semantic extractor, semantic) features and masks of a
/// style image, placed on the texture feature grid.
StyleTarget make_style_target(std::string source, Image image, const LabelMask* image_mask, const Extractor& texture,
                              const Extractor* semantic);

// ---------------------------------------------------------------------------
// Gradient audit
// ---------------------------------------------------------------------------

struct ViewContribution {
    std::size_t view = 0;
    std::string name;
    double weight = 0.0;  // summed rendering weight of the audited voxel
    int label = 0;        // mask label of the pixel seeing the voxel most
    std::array<double, 3> rgb_grad{};
    std::vector<double> sh_grad;  // [channel][basis] of the audited voxel
};

struct AuditReport {
    Vec3 point = Vec3::Zero();
    std::size_t voxel = 0;
    std::vector<ViewContribution> views;  // views with nonzero weight only
    std::vector<double> accumulated;      // data gradient of the voxel from all views
    std::vector<double> tv_grad;          // lambda_tv * TV gradient of the voxel

    nlohmann::json to_json() const;
};

/// Per-view decomposition of the gradient at the lattice voxel nearest to
/// `point`. Throws OutOfBounds for a point outside the bbox.
AuditReport gradient_audit(const VoxelGrid& grid, std::span<const View> views, const TaskSpec& task,
                           const Vec3& point, const LossOptions& options = {});

}  // namespace rfstyle
