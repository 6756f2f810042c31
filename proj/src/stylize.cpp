#include "rfstyle/stylize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <random>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "rfstyle/error.hpp"

namespace rfstyle {

namespace {

constexpr double kColorRegularizer = 1e-5;
constexpr std::size_t kMinColorPixels = 10;

struct Moments {
    Vec3 mean = Vec3::Zero();
    Mat3 cov = Mat3::Zero();
    std::size_t count = 0;
};

template <typename Selector>
Moments moments(std::span<const Image> images, Selector&& selected) {
    Moments m;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t p = 0; p < images[i].pixels(); ++p)
            if (selected(i, p)) {
                m.mean += Vec3(images[i].data[p * 3], images[i].data[p * 3 + 1], images[i].data[p * 3 + 2]);
                ++m.count;
            }
    if (m.count == 0) return m;
    m.mean /= static_cast<double>(m.count);
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t p = 0; p < images[i].pixels(); ++p)
            if (selected(i, p)) {
                const Vec3 d =
                    Vec3(images[i].data[p * 3], images[i].data[p * 3 + 1], images[i].data[p * 3 + 2]) - m.mean;
                m.cov += d * d.transpose();
            }
    m.cov /= static_cast<double>(m.count);
    return m;
}

Mat3 sym_power(const Mat3& s, double power) {
    Eigen::SelfAdjointEigenSolver<Mat3> eig(s);
    const Vec3 ev = eig.eigenvalues().cwiseMax(0.0).array().pow(power);
    return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

void check_finite(double value, const char* what) {
    if (!std::isfinite(value)) throw Error(ErrorCode::Divergence, std::string(what) + " loss is not finite");
}

std::vector<std::size_t> draw_views(std::size_t n, int per_step, std::mt19937_64& rng) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (per_step <= 0 || static_cast<std::size_t>(per_step) >= n) return all;
    for (std::size_t i = 0; i < static_cast<std::size_t>(per_step); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
        std::swap(all[i], all[j]);
    }
    all.resize(per_step);
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace

ColorTransferResult color_transfer(std::span<const Image> sources, const Image& style,
                                   const std::optional<RegionSelect>& region) {
    if (region && region->source_masks.size() != sources.size())
        throw Error(ErrorCode::Dimension, "color transfer needs one mask per source image");
    for (std::size_t i = 0; i < sources.size(); ++i) {
        if (sources[i].channels != 3) throw Error(ErrorCode::Dimension, "color transfer takes RGB images");
        if (region && (region->source_masks[i].height != sources[i].height ||
                       region->source_masks[i].width != sources[i].width))
            throw Error(ErrorCode::Dimension, "color transfer mask does not match its image");
    }
    if (region && region->style_mask &&
        (region->style_mask->height != style.height || region->style_mask->width != style.width))
        throw Error(ErrorCode::Dimension, "style mask does not match the style image");

    auto source_selected = [&](std::size_t i, std::size_t p) {
        return !region || region->source_masks[i].labels[p] == region->label;
    };
    auto style_selected = [&](std::size_t, std::size_t p) {
        return !region || !region->style_mask || region->style_mask->labels[p] == region->style_label;
    };

    ColorTransferResult out;
    out.images.assign(sources.begin(), sources.end());
    const Moments src = moments(sources, source_selected);
    const Moments tgt = moments(std::span<const Image>(&style, 1), style_selected);
    if (src.count < kMinColorPixels || tgt.count < kMinColorPixels) {
        spdlog::warn("color_transfer: selection has {} source / {} style pixels; using the identity map", src.count,
                     tgt.count);
        out.map.fallback = true;
        return out;
    }
    const Mat3 reg = kColorRegularizer * Mat3::Identity();
    out.map.matrix = sym_power(tgt.cov + reg, 0.5) * sym_power(src.cov + reg, -0.5);
    out.map.offset = tgt.mean - out.map.matrix * src.mean;

    for (std::size_t i = 0; i < out.images.size(); ++i) {
        Image& img = out.images[i];
        for (std::size_t p = 0; p < img.pixels(); ++p) {
            if (!source_selected(i, p)) continue;
            const Vec3 v = out.map.apply(Vec3(img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]));
            for (int c = 0; c < 3; ++c) img.data[p * 3 + c] = std::clamp(v[c], 0.0, 1.0);
        }
    }
    return out;
}

void RmsProp::apply(std::span<float> params, std::span<const double> grad) {
    if (params.size() != acc_.size() || grad.size() != acc_.size())
        throw Error(ErrorCode::Dimension, "optimizer buffer size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        acc_[i] = decay_ * acc_[i] + (1.0 - decay_) * g * g;
        if (g == 0.0) continue;
        params[i] = static_cast<float>(params[i] - step_ * g / (std::sqrt(acc_[i]) + epsilon_));
    }
}

VoxelGrid random_init_grid(std::array<int, 3> dims, const Vec3& bbox_min, const Vec3& bbox_max, int sh_degree,
                           std::uint64_t seed) {
    VoxelGrid grid(dims, bbox_min, bbox_max, sh_degree);
    std::mt19937_64 rng(seed);
    auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    for (float& d : grid.mutable_density()) d = static_cast<float>(0.05 + 0.1 * uniform());
    const int nb = grid.basis_count();
    auto sh = grid.mutable_sh();
    for (std::size_t v = 0; v < grid.voxel_count(); ++v)
        for (int c = 0; c < 3; ++c)
            for (int b = 0; b < nb; ++b)
                sh[v * grid.coeffs_per_voxel() + c * nb + b] =
                    static_cast<float>(b == 0 ? (0.5 + 0.2 * (uniform() - 0.5)) / 0.28209479177387814
                                              : 0.05 * (uniform() - 0.5));
    return grid;
}

double photometric_mse(const VoxelGrid& grid, std::span<const View> views, const RenderOptions& render) {
    if (views.empty()) return 0.0;
    double total = 0.0;
    for (const View& v : views) {
        const Image img = render_view(grid, v.camera, render).image;
        if (!img.same_shape(v.gt_image)) throw Error(ErrorCode::Dimension, "render does not match view image");
        double s = 0.0;
        for (std::size_t i = 0; i < img.data.size(); ++i) s += (img.data[i] - v.gt_image.data[i]) * (img.data[i] - v.gt_image.data[i]);
        total += s / img.data.size();
    }
    return total / views.size();
}

double psnr_from_mse(double mse) { return mse <= 0.0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(mse); }

PretrainResult pretrain(VoxelGrid grid, std::span<const View> views, const PretrainSettings& settings,
                        const std::function<void(int, double)>& on_step) {
    if (views.size() < 2) throw Error(ErrorCode::Contract, "pretraining needs at least two views");
    if (grid.density_frozen()) grid.unfreeze_density();
    PretrainResult out{std::move(grid), {}, 0};
    VoxelGrid& g = out.grid;
    RmsProp density_opt(g.density().size(), settings.density_step, settings.decay, settings.epsilon);
    RmsProp sh_opt(g.sh().size(), settings.sh_step, settings.decay, settings.epsilon);
    std::vector<double> dgrad(g.density().size()), sgrad(g.sh().size());

    for (int step = 0; step < settings.steps; ++step) {
        std::fill(dgrad.begin(), dgrad.end(), 0.0);
        std::fill(sgrad.begin(), sgrad.end(), 0.0);
        double loss = 0.0;
        for (const View& v : views) {
            const RenderResult r = render_view(g, v.camera, settings.render);
            if (!r.image.same_shape(v.gt_image)) throw Error(ErrorCode::Dimension, "render does not match view image");
            const double n = static_cast<double>(r.image.data.size()) * views.size();
            Image pg(r.image.height, r.image.width, 3);
            for (std::size_t i = 0; i < pg.data.size(); ++i) {
                const double d = r.image.data[i] - v.gt_image.data[i];
                loss += d * d / n;
                pg.data[i] = 2.0 * d / n;
            }
            accumulate_density_gradient(g, r.aux, pg, dgrad);
            accumulate_radiance_gradient(g, r.aux, pg, sgrad);
        }
        check_finite(loss, "pretraining");
        out.losses.push_back(loss);
        if (on_step) on_step(step, loss);
        const int w = settings.plateau_window;
        if (w > 0 && step >= w) {
            const double before = out.losses[step - w];
            if (before > 0.0 && (before - loss) / before < settings.plateau_tolerance) break;
        }
        density_opt.apply(g.mutable_density(), dgrad);
        sh_opt.apply(g.mutable_sh(), sgrad);
        ++out.steps_run;
    }
    if (settings.freeze_density) g.freeze_density();
    return out;
}

Objective evaluate_objective(const VoxelGrid& grid, std::span<const View> views, const TaskSpec& task,
                             const LossOptions& options, std::span<const std::size_t> subset) {
    std::vector<std::size_t> order(subset.begin(), subset.end());
    if (order.empty()) {
        order.resize(views.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
    }
    if (order.empty()) throw Error(ErrorCode::Contract, "objective needs at least one view");
    Objective out;
    out.grad.assign(grid.sh().size(), 0.0);
    // Views add up (the voxel gradient is the sum of per-view terms); the
    // per-label MSE is reported as a mean over views.
    const double inv = 1.0 / order.size();
    LossOptions per_view = options;
    per_view.tv = false;
    std::map<int, LabelTerm> label_sum;
    for (std::size_t vi : order) {
        const View& v = views[vi];
        const RenderResult r = render_view(grid, v.camera, task.render);
        per_view.view_key = vi;
        MaskedLoss ml = composite_masked_loss(r.image, v, task, grid, per_view);
        accumulate_radiance_gradient(grid, r.aux, ml.pixel_grad, out.grad);
        out.report.style += ml.report.style;
        out.report.content += ml.report.content;
        out.report.preserve += ml.report.preserve;
        out.report.feature_pixels += ml.report.feature_pixels;
        out.report.image_pixels += ml.report.image_pixels;
        for (const LabelTerm& t : ml.report.labels) {
            LabelTerm& acc = label_sum[t.label];
            acc.label = t.label;
            acc.preserve = t.preserve;
            acc.style += t.style;
            acc.content += t.content;
            acc.preserve_mse += inv * t.preserve_mse;
            acc.pixels += t.pixels;
        }
        out.per_view.push_back(std::move(ml.report));
    }
    for (auto& [label, t] : label_sum) out.report.labels.push_back(t);
    out.report.lambda_tv = task.loss.lambda_tv;
    if (options.tv && task.loss.lambda_tv > 0.0) {
        const GridLoss tv = tv_loss(grid);
        out.report.tv = tv.value;
        for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += task.loss.lambda_tv * tv.grad[i];
    }
    out.report.total = out.report.data_total() + task.loss.lambda_tv * out.report.tv;
    return out;
}

FinetuneResult finetune(VoxelGrid grid, std::span<const View> views, const TaskSpec& task,
                        const std::function<void(int, const LossReport&)>& on_step) {
    task.validate();
    if (!grid.density_frozen()) throw Error(ErrorCode::Contract, "finetune needs a density-frozen grid");
    if (views.empty()) throw Error(ErrorCode::Contract, "finetune needs at least one view");
    for (const View& v : views) {
        for (int label : std::set<int>(v.mask.labels.begin(), v.mask.labels.end())) task.binding(label);
        v.check_cache(task.texture);
    }
    const auto& opt = task.optimizer;
    FinetuneResult out{std::move(grid), {}};
    RmsProp rms(out.grid.sh().size(), opt.step_size, opt.decay, opt.epsilon);
    std::mt19937_64 rng(opt.seed);
    for (int step = 0; step < opt.steps; ++step) {
        const auto subset = draw_views(views.size(), opt.views_per_step, rng);
        Objective obj = evaluate_objective(out.grid, views, task, {}, subset);
        check_finite(obj.report.total, "stylization");
        if (on_step) on_step(step, obj.report);
        out.state.reports.push_back(std::move(obj.report));
        rms.apply(out.grid.mutable_sh(), obj.grad);
        out.state.step = step + 1;
    }
    out.state.accumulator = rms.accumulator();
    return out;
}

StyleTarget make_style_target(std::string source, Image image, const LabelMask* image_mask, const Extractor& texture,
                              const Extractor* semantic) {
    StyleTarget t;
    t.source = std::move(source);
    t.texture = extract(texture, image, t.source);
    if (semantic) t.semantic = resample_bilinear(extract(*semantic, image, t.source), t.texture.height, t.texture.width);
    if (image_mask) {
        if (image_mask->height != image.height || image_mask->width != image.width)
            throw Error(ErrorCode::Dimension, "style mask does not match the style image");
        t.image_mask = *image_mask;
        t.mask = downsample_mask(*image_mask, t.texture.height, t.texture.width);
    }
    t.image = std::move(image);
    return t;
}

std::vector<View> prepare_views(std::vector<View> views, const TaskSpec& task) {
    task.validate();
    if (task.optimizer.color_transfer && !views.empty()) {
        std::vector<Image> gts;
        std::vector<LabelMask> masks;
        for (const View& v : views) {
            gts.push_back(v.gt_image);
            masks.push_back(v.mask);
        }
        for (const auto& [label, b] : task.bindings) {
            if (b.preserve) continue;
            RegionSelect sel;
            sel.source_masks = masks;
            sel.label = label;
            if (task.mode == TaskMode::SemanticAware && b.style->image_mask.pixels() > 0 &&
                b.style->image_mask.count(label) > 0) {
                sel.style_mask = b.style->image_mask;
                sel.style_label = label;
            }
            gts = color_transfer(gts, b.style->image, sel).images;
        }
        for (std::size_t i = 0; i < views.size(); ++i) views[i].gt_image = std::move(gts[i]);
    }
    for (View& v : views) v.cache_features(task.texture);
    return views;
}

nlohmann::json AuditReport::to_json() const {
    nlohmann::json j;
    j["point"] = {point.x(), point.y(), point.z()};
    j["voxel"] = voxel;
    j["accumulated"] = accumulated;
    j["tv_grad"] = tv_grad;
    auto& arr = j["contributions"] = nlohmann::json::array();
    for (const auto& c : views)
        arr.push_back({{"view", c.view},
                       {"name", c.name},
                       {"weight", c.weight},
                       {"label", c.label},
                       {"rgb_grad", c.rgb_grad},
                       {"sh_grad", c.sh_grad}});
    return j;
}

AuditReport gradient_audit(const VoxelGrid& grid, std::span<const View> views, const TaskSpec& task, const Vec3& point,
                           const LossOptions& options) {
    if (!grid.contains(point)) throw Error(ErrorCode::OutOfBounds, "audit point lies outside the grid bbox");
    if (views.empty()) throw Error(ErrorCode::Contract, "audit needs at least one view");
    AuditReport rep;
    rep.point = point;
    rep.voxel = grid.nearest_voxel(point);
    const int nc = grid.coeffs_per_voxel();
    const std::size_t base = rep.voxel * nc;
    LossOptions per_view = options;
    per_view.tv = false;

    rep.accumulated.assign(nc, 0.0);
    for (std::size_t vi = 0; vi < views.size(); ++vi) {
        const View& v = views[vi];
        const RenderResult r = render_view(grid, v.camera, task.render);
        per_view.view_key = vi;
        const MaskedLoss ml = composite_masked_loss(r.image, v, task, grid, per_view);

        ViewContribution c;
        c.view = vi;
        c.name = v.name;
        double best_pixel = 0.0;
        for (std::size_t p = 0; p < r.aux.offsets.size() - 1; ++p) {
            double pixel_weight = 0.0;
            for (const auto& s : r.aux.pixel_samples(p)) {
                const Footprint fp = r.aux.footprint(s);
                for (int k = 0; k < 8; ++k)
                    if (fp.voxel[k] == rep.voxel) pixel_weight += s.weight * fp.weight[k];
            }
            if (pixel_weight == 0.0) continue;
            c.weight += pixel_weight;
            for (int ch = 0; ch < 3; ++ch) {
                const double raw = r.aux.raw.data[p * 3 + ch];
                if (raw >= 0.0 && raw <= 1.0) c.rgb_grad[ch] += pixel_weight * ml.pixel_grad.data[p * 3 + ch];
            }
            if (pixel_weight > best_pixel) {
                best_pixel = pixel_weight;
                c.label = v.mask.labels[p];
            }
        }
        std::vector<double> g(grid.sh().size(), 0.0);
        accumulate_radiance_gradient(grid, r.aux, ml.pixel_grad, g);
        c.sh_grad.assign(g.begin() + base, g.begin() + base + nc);
        if (c.weight > 0.0) rep.views.push_back(std::move(c));
    }
    const Objective obj = evaluate_objective(grid, views, task, per_view);
    rep.accumulated.assign(obj.grad.begin() + base, obj.grad.begin() + base + nc);
    rep.tv_grad.assign(nc, 0.0);
    if (options.tv && task.loss.lambda_tv > 0.0) {
        const GridLoss tv = tv_loss(grid);
        for (int j = 0; j < nc; ++j) rep.tv_grad[j] = task.loss.lambda_tv * tv.grad[base + j];
    }
    return rep;
}

}  // namespace rfstyle
