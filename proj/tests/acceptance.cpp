// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Calibrated constants (step budgets, lambda_tv, seeds) are committed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include <spdlog/spdlog.h>

#include "rfstyle/cli.hpp"
#include "rfstyle/fixtures.hpp"
#include "rfstyle/io.hpp"
#include "rfstyle/stylize.hpp"
#include "support.hpp"

using namespace rfstyle;
using testing::Rng;
namespace fs = std::filesystem;

namespace {

constexpr int kPretrainSteps = 300;
constexpr int kStylizeSteps = 120;
constexpr double kLambdaTv = 0.01;  // see README: lambda_tv = 1 lets TV swamp the preserve term at 24^3

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::map<std::uint64_t, VoxelGrid> pretrained;

const VoxelGrid& pretrained_box(std::uint64_t seed) {
    auto it = pretrained.find(seed);
    if (it != pretrained.end()) return it->second;
    const Scene scene = build_scene(box_scene_spec(seed));
    PretrainSettings s;
    s.steps = kPretrainSteps;
    s.render = scene.render;
    VoxelGrid init = random_init_grid(scene.grid.dims(), scene.grid.bbox_min(), scene.grid.bbox_max(), 1, seed);
    return pretrained.emplace(seed, pretrain(std::move(init), scene.views(), s).grid).first->second;
}

TaskSpec object_select(std::uint64_t seed, bool preserve) {
    TaskSpec task;
    task.mode = TaskMode::ObjectSelect;
    task.bindings[0] = LabelBinding::keep();
    const StyleImage style = build_style_image(StyleKind::Stripes, seed, task.texture);
    task.bindings[1] = LabelBinding::stylize(
        std::make_shared<StyleTarget>(make_style_target("stripes", style.image, nullptr, task.texture, nullptr)));
    task.loss.lambda_tv = kLambdaTv;
    task.loss.preserve_term = preserve;
    task.optimizer.steps = kStylizeSteps;
    task.optimizer.seed = seed;
    return task;
}

double preserve_mse(const VoxelGrid& grid, std::span<const View> views, const TaskSpec& task) {
    LossOptions only;
    only.style = only.content = only.tv = false;
    TaskSpec t = task;
    t.loss.preserve_term = true;
    return evaluate_objective(grid, views, t, only).report.label(0)->preserve_mse;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    return testing::dot(a, b) / std::sqrt(testing::dot(a, a) * testing::dot(b, b));
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

Outcome rendering_identities() {
    std::vector<std::pair<VoxelGrid, std::vector<Camera>>> scenes;
    for (std::uint64_t seed : {0, 1}) {
        Scene s = build_scene(box_scene_spec(seed));
        scenes.emplace_back(s.grid, s.cameras);
    }
    OcclusionScene occ = build_occlusion_scene();
    scenes.emplace_back(occ.scene.grid, occ.scene.cameras);
    double worst = 0.0;
    bool monotone = true;
    std::size_t pixels = 0;
    for (const auto& [grid, cams] : scenes)
        for (const Camera& cam : cams) {
            const RenderResult r = render_view(grid, cam);
            for (std::size_t p = 0; p + 1 < r.aux.offsets.size(); ++p, ++pixels) {
                double sum = r.aux.residual[p], prev = 1.0;
                for (const auto& s : r.aux.pixel_samples(p)) {
                    sum += s.weight;
                    monotone &= s.transmittance <= prev;
                    prev = s.transmittance;
                }
                monotone &= r.aux.residual[p] <= prev;
                worst = std::max(worst, std::abs(sum - 1.0));
            }
        }
    return {worst <= 1e-6 && monotone,
            fmt("%.0f pixels, max |sum w + T - 1| = %.2e, monotone=%.0f", double(pixels), worst, monotone)};
}

Outcome full_chain_gradient() {
    Rng rng(2024);
    VoxelGrid grid = testing::random_grid(rng, {8, 8, 8}, 0.0, 3.0);
    grid.freeze_density();
    TaskSpec task;
    task.mode = TaskMode::Compositional;
    task.bindings[0] = LabelBinding::keep();
    task.bindings[1] = LabelBinding::stylize(std::make_shared<StyleTarget>(
        make_style_target("s", testing::random_image(rng, 16, 16), nullptr, task.texture, nullptr)));
    task.loss.lambda = 0.2;
    task.loss.lambda_tv = 0.5;
    task.optimizer.color_transfer = false;
    std::vector<View> views;
    for (int i = 0; i < 3; ++i) {
        View v;
        v.name = std::to_string(i);
        const double th = -0.4 + 0.4 * i;
        v.camera = Camera::look_at(Vec3(3 * std::sin(th), 0.5, -3 * std::cos(th)), Vec3::Zero(), Vec3::UnitY(), 16.0,
                                   14, 14);
        v.gt_image = testing::random_image(rng, 14, 14);
        v.mask = testing::random_mask(rng, 14, 14, 2);
        views.push_back(std::move(v));
    }
    views = prepare_views(std::move(views), task);
    MatchCache cache;
    LossOptions rec;
    rec.record = &cache;
    const Objective obj = evaluate_objective(grid, views, task, rec);
    LossOptions replay;
    replay.replay = &cache;
    double worst = 0.0;
    int checked = 0;
    while (checked < 20) {
        const std::size_t i = static_cast<std::size_t>(rng.below(static_cast<int>(grid.sh().size())));
        if (std::abs(obj.grad[i]) < 1e-6) continue;
        const float x0 = grid.sh()[i];
        grid.mutable_sh()[i] = x0 + 1e-3f;
        const double xp = grid.sh()[i], lp = evaluate_objective(grid, views, task, replay).report.total;
        grid.mutable_sh()[i] = x0 - 1e-3f;
        const double xm = grid.sh()[i], lm = evaluate_objective(grid, views, task, replay).report.total;
        grid.mutable_sh()[i] = x0;
        worst = std::max(worst, testing::rel_err((lp - lm) / (xp - xm), obj.grad[i]));
        ++checked;
    }
    return {worst <= 1e-3, fmt("20 coefficients, max relative error %.2e", worst)};
}

std::vector<int> oracle_match(const FeatureMap& ct, const FeatureMap& cs, const FeatureMap& st, const FeatureMap& ss,
                              const LabelMask* cm, const LabelMask* sm, double alpha) {
    auto dist = [](std::span<const double> a, std::span<const double> b) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t k = 0; k < a.size(); ++k) ab += a[k] * b[k], aa += a[k] * a[k], bb += b[k] * b[k];
        return 1.0 - ab / std::sqrt(aa * bb);
    };
    std::vector<int> out(ct.pixels());
    for (std::size_t p = 0; p < ct.pixels(); ++p) {
        bool any = false;
        if (cm)
            for (std::size_t q = 0; q < st.pixels(); ++q) any |= sm->labels[q] == cm->labels[p];
        double best = 1e300;
        for (std::size_t q = 0; q < st.pixels(); ++q) {
            double d;
            if (!cm) {
                d = dist(ct.vec(p), st.vec(q));
            } else if (!any) {
                d = dist(ct.vec(p), st.vec(q));
            } else {
                if (sm->labels[q] != cm->labels[p]) continue;
                d = alpha * dist(ct.vec(p), st.vec(q)) + (1 - alpha) * dist(cs.vec(p), ss.vec(q));
            }
            if (d < best) best = d, out[p] = static_cast<int>(q);
        }
    }
    return out;
}

Outcome matching_oracle() {
    Rng rng(50);
    int mismatches = 0;
    for (int inst = 0; inst < 50; ++inst) {
        const int h = 1 + rng.below(8), w = 1 + rng.below(8), sh = 1 + rng.below(8), sw = 1 + rng.below(8);
        const int ct = 1 + rng.below(6), cs = 1 + rng.below(4), labels = 1 + rng.below(4);
        const FeatureMap rt = testing::random_features(rng, h, w, ct), st = testing::random_features(rng, sh, sw, ct);
        const FeatureMap rs = testing::random_features(rng, h, w, cs), ss = testing::random_features(rng, sh, sw, cs);
        const LabelMask rm = testing::random_mask(rng, h, w, labels), sm = testing::random_mask(rng, sh, sw, labels);
        mismatches += nnfm_match(rt, st).index != oracle_match(rt, rs, st, ss, nullptr, nullptr, 1.0);
        for (double alpha : {0.0, 0.5, 1.0})
            mismatches += sannfm_match(rt, rs, st, ss, rm, sm, alpha).index != oracle_match(rt, rs, st, ss, &rm, &sm, alpha);
        const LabelMask r1(h, w, 0), s1(sh, sw, 0);
        mismatches += sannfm_match(rt, rs, st, ss, r1, s1, 1.0).index != nnfm_match(rt, st).index;
    }
    return {mismatches == 0, fmt("50 instances x 5 comparisons, %.0f mismatches", mismatches)};
}

Outcome occlusion_correction() {
    const OcclusionScene occ = build_occlusion_scene();
    TaskSpec task;
    task.bindings[0] = LabelBinding::keep();
    task.bindings[1] = LabelBinding::stylize(std::make_shared<StyleTarget>(make_style_target(
        "dots", build_style_image(StyleKind::Dots, 0, task.texture).image, nullptr, task.texture, nullptr)));
    const auto views = prepare_views(occ.scene.views(), task);
    VoxelGrid grid = occ.scene.grid;
    grid.freeze_density();
    Rng rng(17);
    for (float& x : grid.mutable_sh()) x += static_cast<float>(rng.uniform(-0.3, 0.3));

    LossOptions data;
    data.tv = false;
    const AuditReport all = gradient_audit(grid, views, task, occ.point, data);
    LossOptions pres = data;
    pres.style = pres.content = false;
    const AuditReport preserve = gradient_audit(grid, views, task, occ.point, pres);
    const double cos = cosine(all.accumulated, preserve.accumulated);
    double vis = 1e300, hidden = 0.0;
    int visible_views = 0;
    for (std::size_t i = 0; i < occ.visible.size(); ++i) {
        double w = 0.0;
        for (const auto& c : all.views)
            if (c.view == i) w = c.weight;
        if (occ.visible[i]) {
            vis = std::min(vis, w);
            ++visible_views;
        } else {
            hidden = std::max(hidden, w);
        }
    }
    const double ratio = hidden > 0.0 ? vis / hidden : std::numeric_limits<double>::infinity();
    return {visible_views == 2 && cos >= 0.9 && ratio >= 10.0,
            fmt("cosine %.4f, min visible / max occluded weight %.1f, visible views %.0f", cos, ratio, visible_views)};
}

Outcome style_overflow() {
    std::ostringstream detail;
    bool pass = true;
    for (std::uint64_t seed : {0, 1, 2}) {
        const Scene scene = build_scene(box_scene_spec(seed));
        const VoxelGrid& grid = pretrained_box(seed);
        double mse[2];
        for (int with = 0; with < 2; ++with) {
            const TaskSpec task = object_select(seed, with == 1);
            const auto views = prepare_views(scene.views(), task);
            mse[with] = preserve_mse(finetune(grid, views, task).grid, views, task);
        }
        pass &= mse[1] < mse[0];
        detail << (seed ? "; " : "") << "seed " << seed << ": " << fmt("%.5f with vs %.5f without", mse[1], mse[0]);
    }
    return {pass, detail.str()};
}

Outcome object_selection() {
    const std::uint64_t seed = 0;
    const Scene scene = build_scene(box_scene_spec(seed));
    const VoxelGrid& grid = pretrained_box(seed);
    TaskSpec task = object_select(seed, true);
    task.optimizer.steps = 300;
    const auto views = prepare_views(scene.views(), task);
    const double before = preserve_mse(grid, views, task);
    const FinetuneResult r = finetune(grid, views, task);
    const double after = preserve_mse(r.grid, views, task);
    LossOptions style_only;
    style_only.content = style_only.preserve = style_only.tv = false;
    const double s0 = evaluate_objective(grid, views, task, style_only).report.label(1)->style;
    const double s1 = evaluate_objective(r.grid, views, task, style_only).report.label(1)->style;
    const double drop = 1.0 - s1 / s0;
    return {after <= 2.0 * before && drop >= 0.30,
            fmt("preserve MSE x%.3f of baseline (limit 2), style loss drop %.1f%% (need 30%%)", after / before,
                100.0 * drop)};
}

Outcome compositional_decomposition() {
    const Scene scene = build_scene(box_scene_spec(3));
    TaskSpec task;
    task.mode = TaskMode::Compositional;
    task.loss.lambda = 0.3;
    const StyleImage a = build_style_image(StyleKind::Stripes, 3, task.texture);
    const StyleImage b = build_style_image(StyleKind::Dots, 3, task.texture);
    task.bindings[0] = LabelBinding::stylize(
        std::make_shared<StyleTarget>(make_style_target("a", a.image, nullptr, task.texture, nullptr)));
    task.bindings[1] = LabelBinding::stylize(
        std::make_shared<StyleTarget>(make_style_target("b", b.image, nullptr, task.texture, nullptr)));
    task.optimizer.color_transfer = false;
    const auto views = prepare_views(scene.views(), task);
    VoxelGrid grid = scene.grid;
    Rng rng(9);
    for (float& x : grid.mutable_sh()) x += static_cast<float>(rng.uniform(-0.2, 0.2));

    double worst = 0.0;
    bool local = true;
    for (const View& v : views) {
        const Image img = render_view(grid, v.camera).image;
        const MaskedLoss full = composite_masked_loss(img, v, task, grid);
        const FeatureMap fr = extract(task.texture, img);
        const LabelMask fm = downsample_mask(v.mask, fr.height, fr.width);
        double oracle = task.loss.lambda_tv * tv_loss(grid).value;
        for (int m : {0, 1}) {
            const FeatureMap& st = task.bindings.at(m).style->texture;
            for (std::size_t p = 0; p < fr.pixels(); ++p) {
                if (fm.labels[p] != m) continue;
                double best = 1e300, l2 = 0.0;
                for (std::size_t q = 0; q < st.pixels(); ++q) {
                    // Black background gives zero feature vectors; those score the maximum distance 2.
                    double ab = 0, aa = 0, bb = 0;
                    for (int k = 0; k < fr.channels; ++k) {
                        ab += fr.vec(p)[k] * st.vec(q)[k];
                        aa += fr.vec(p)[k] * fr.vec(p)[k];
                        bb += st.vec(q)[k] * st.vec(q)[k];
                    }
                    best = std::min(best, aa == 0 || bb == 0 ? 2.0 : 1.0 - ab / std::sqrt(aa * bb));
                }
                for (int k = 0; k < fr.channels; ++k) l2 += std::pow(fr.vec(p)[k] - v.content_texture.vec(p)[k], 2);
                oracle += (best + task.loss.lambda * l2 / fr.channels) / fr.pixels();
            }
            TaskSpec single = task;
            single.bindings[1 - m] = LabelBinding::keep();
            LossOptions no_pres;
            no_pres.preserve = no_pres.tv = false;
            const MaskedLoss part = composite_masked_loss(img, v, single, grid, no_pres);
            for (std::size_t p = 0; p < fr.pixels(); ++p)
                if (fm.labels[p] != m)
                    for (double g : part.texture_grad.vec(p)) local &= g == 0.0;
        }
        worst = std::max(worst, std::abs(full.report.total - oracle));
    }
    return {worst <= 1e-6 && local, fmt("max |composite - sum of regions| = %.2e, locality=%.0f", worst, local)};
}

Outcome color_transfer_moments() {
    Rng rng(31);
    auto gaussian = [&](int h, int w, const Vec3& mean, const Mat3& mix) {
        Image im(h, w, 3);
        for (std::size_t p = 0; p < im.pixels(); ++p) {
            Vec3 z;
            for (int c = 0; c < 3; ++c)
                z[c] = std::sqrt(-2.0 * std::log(std::max(rng.uniform(), 1e-12))) * std::cos(2 * M_PI * rng.uniform());
            const Vec3 v = mean + mix * z;
            for (int c = 0; c < 3; ++c) im.data[3 * p + c] = v[c];
        }
        return im;
    };
    Mat3 ms, mt;
    ms << 0.08, 0.02, 0.0, 0.01, 0.06, 0.0, 0.0, 0.02, 0.05;
    mt << 0.05, 0.0, 0.02, 0.0, 0.09, 0.01, 0.02, 0.0, 0.04;
    std::vector<Image> src = {gaussian(32, 32, Vec3(0.4, 0.45, 0.5), ms), gaussian(32, 32, Vec3(0.4, 0.45, 0.5), ms)};
    const Image style = gaussian(40, 40, Vec3(0.65, 0.35, 0.3), mt);
    RegionSelect sel;
    for (int i = 0; i < 2; ++i) sel.source_masks.push_back(testing::random_mask(rng, 32, 32, 2));
    sel.style_mask = testing::random_mask(rng, 40, 40, 2);
    const ColorTransferResult r = color_transfer(src, style, sel);

    std::vector<Vec3> mapped, target;
    bool untouched = true;
    for (int i = 0; i < 2; ++i)
        for (std::size_t p = 0; p < src[i].pixels(); ++p) {
            const Vec3 px(src[i].data[3 * p], src[i].data[3 * p + 1], src[i].data[3 * p + 2]);
            if (sel.source_masks[i].labels[p] == 1) mapped.push_back(r.map.apply(px));
            else
                for (int c = 0; c < 3; ++c) untouched &= r.images[i].data[3 * p + c] == src[i].data[3 * p + c];
        }
    for (std::size_t p = 0; p < style.pixels(); ++p)
        if (sel.style_mask->labels[p] == 1)
            target.push_back(Vec3(style.data[3 * p], style.data[3 * p + 1], style.data[3 * p + 2]));
    auto moments = [](const std::vector<Vec3>& v) {
        Vec3 m = Vec3::Zero();
        for (const Vec3& x : v) m += x;
        m /= double(v.size());
        Mat3 c = Mat3::Zero();
        for (const Vec3& x : v) c += (x - m) * (x - m).transpose();
        return std::pair{m, Mat3(c / double(v.size()))};
    };
    const auto [m1, c1] = moments(mapped);
    const auto [m2, c2] = moments(target);
    const double dm = (m1 - m2).cwiseAbs().maxCoeff(), dc = (c1 - c2).cwiseAbs().maxCoeff();
    return {dm <= 1e-2 && dc <= 5e-2 && untouched,
            fmt("mean err %.2e, covariance err %.2e, unselected identical=%.0f", dm, dc, untouched)};
}

Outcome determinism() {
    testing::TempDir dir("accept_det");
    std::ostringstream out, err;
    const std::string b = (dir.path / "bundle").string();
    if (run_cli({"fixture", "--kind", "box", "--seed", "5", "--out", b}, out, err) != 0) return {false, err.str()};
    const std::string grid = (dir.path / "bundle" / "gt_grid").string(), task = (dir.path / "bundle" / "task.json").string();
    for (const char* o : {"r1", "r2"})
        if (run_cli({"stylize", b, grid, task, (dir.path / o).string(), "--steps", "10", "--seed", "7",
                     "--views-per-step", "3"},
                    out, err) != 0)
            return {false, err.str()};
    std::size_t files = 0, differ = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir.path / "r1")) {
        if (!e.is_regular_file()) continue;
        ++files;
        const fs::path other = dir.path / "r2" / fs::relative(e.path(), dir.path / "r1");
        differ += !fs::exists(other) || read_bytes(e.path()) != read_bytes(other);
    }
    return {files > 0 && differ == 0, fmt("%.0f files compared, %.0f differ", double(files), double(differ))};
}

Outcome mask_robustness() {
    const std::uint64_t seed = 0;
    const Scene scene = build_scene(box_scene_spec(seed));
    const VoxelGrid& grid = pretrained_box(seed);
    const TaskSpec task = object_select(seed, true);
    auto clean_views = scene.views();
    auto noisy_views = clean_views;
    Rng rng(1010);
    for (View& v : noisy_views)
        for (int& l : v.mask.labels)
            if (rng.uniform() < 0.1) l = 1 - l;
    const VoxelGrid a = finetune(grid, prepare_views(clean_views, task), task).grid;
    const VoxelGrid b = finetune(grid, prepare_views(noisy_views, task), task).grid;
    double diff = 0.0;
    std::size_t n = 0;
    for (const Camera& cam : scene.cameras) {
        const Image ia = render_view(a, cam).image, ib = render_view(b, cam).image;
        for (std::size_t i = 0; i < ia.data.size(); ++i, ++n) diff += std::abs(ia.data[i] - ib.data[i]);
    }
    diff /= double(n);
    return {diff <= 0.05, fmt("mean |clean - noisy| = %.4f (limit 0.05)", diff)};
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    struct Criterion {
        const char* name;
        double budget_s;
        Outcome (*run)();
    };
    const Criterion criteria[] = {
        {"rendering-identities", 10, rendering_identities},
        {"full-chain-gradient", 60, full_chain_gradient},
        {"matching-oracle", 30, matching_oracle},
        {"occlusion-gradient-correction", 60, occlusion_correction},
        {"style-overflow", 300, style_overflow},
        {"object-selection", 300, object_selection},
        {"compositional-decomposition", 0, compositional_decomposition},
        {"color-transfer-moments", 0, color_transfer_moments},
        {"determinism", 0, determinism},
        {"mask-robustness", 0, mask_robustness},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.budget_s <= 0 || secs <= c.budget_s;
        const bool ok = o.pass && in_time;
        failed += !ok;
        std::printf("%s %s: %s [%.1fs%s]\n", ok ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs,
                    in_time ? "" : ", over budget");
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
