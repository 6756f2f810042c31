#include <doctest.h>

#include <cmath>
#include <limits>
#include <memory>

#include "rfstyle/error.hpp"
#include "rfstyle/loss.hpp"
#include "rfstyle/stylize.hpp"
#include "support.hpp"

using namespace rfstyle;
using testing::Rng;

namespace {

double ref_cos(std::span<const double> a, std::span<const double> b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return 1.0 - ab / std::sqrt(aa * bb);
}

double nearest(std::span<const double> v, const FeatureMap& s) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < s.pixels(); ++q) best = std::min(best, ref_cos(v, s.vec(q)));
    return best;
}

std::size_t tv_pairs(const std::array<int, 3>& d) {
    return std::size_t(d[0] - 1) * d[1] * d[2] + std::size_t(d[0]) * (d[1] - 1) * d[2] +
           std::size_t(d[0]) * d[1] * (d[2] - 1);
}

std::shared_ptr<const StyleTarget> style_of(const Image& im, const Extractor& tex, const LabelMask* mask = nullptr,
                                            const Extractor* sem = nullptr) {
    return std::make_shared<StyleTarget>(make_style_target("style", im, mask, tex, sem));
}

View make_view(const Image& gt, const LabelMask& mask, const Extractor& tex) {
    View v;
    v.name = "000";
    v.gt_image = gt;
    v.mask = mask;
    v.cache_features(tex);
    return v;
}

template <class F>
void check_feature_grad(const FeatureMap& x, const FeatureMap& grad, F&& f, double tol) {
    FeatureMap xp = x;
    for (std::size_t i = 0; i < x.data.size(); i += 3) {
        const double h = 1e-6;
        xp.data[i] = x.data[i] + h;
        const double lp = f(xp);
        xp.data[i] = x.data[i] - h;
        const double lm = f(xp);
        xp.data[i] = x.data[i];
        CHECK(std::abs((lp - lm) / (2 * h) - grad.data[i]) < tol);
    }
}

}  // namespace

TEST_CASE("pixel MSE restricted to a label") {
    Rng rng(1);
    const Image a = testing::random_image(rng, 5, 4), b = testing::random_image(rng, 5, 4);
    const LabelMask m = testing::random_mask(rng, 5, 4, 3);
    const PixelLoss l = l2_pixel_loss(a, b, m, 1);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < m.pixels(); ++p)
        if (m.labels[p] == 1) {
            ++n;
            for (int c = 0; c < 3; ++c) sum += std::pow(a.data[3 * p + c] - b.data[3 * p + c], 2);
        }
    REQUIRE(n > 0);
    CHECK(l.value == doctest::Approx(sum / (3.0 * n)).epsilon(1e-12));
    CHECK(l.pixels == n);
    Image ap = a;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double h = 1e-6;
        ap.data[i] = a.data[i] + h;
        const double lp = l2_pixel_loss(ap, b, m, 1).value;
        ap.data[i] = a.data[i] - h;
        const double lm = l2_pixel_loss(ap, b, m, 1).value;
        ap.data[i] = a.data[i];
        CHECK(std::abs((lp - lm) / (2 * h) - l.grad.data[i]) < 1e-6);
        if (m.labels[i / 3] != 1) CHECK(l.grad.data[i] == 0.0);
    }
    CHECK(l2_pixel_loss(a, a, m, 1).value == 0.0);
    const PixelLoss none = l2_pixel_loss(a, b, m, 7);
    CHECK(none.value == 0.0);
    for (double g : none.grad.data) CHECK(g == 0.0);
    // Region covering none of the differing pixels.
    Image c = a;
    for (std::size_t p = 0; p < m.pixels(); ++p)
        if (m.labels[p] != 2)
            for (int k = 0; k < 3; ++k) c.data[3 * p + k] = 0.5;
    CHECK(l2_pixel_loss(a, c, m, 2).value == 0.0);
}

TEST_CASE("feature l2 is a mean over entries") {
    Rng rng(2);
    const FeatureMap a = testing::random_features(rng, 3, 4, 5), b = testing::random_features(rng, 3, 4, 5);
    const FeatureLoss l = l2_feature_loss(a, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) sum += std::pow(a.data[i] - b.data[i], 2);
    CHECK(l.value == doctest::Approx(sum / a.data.size()));
    check_feature_grad(a, l.grad, [&](const FeatureMap& x) { return l2_feature_loss(x, b).value; }, 1e-7);
    CHECK_THROWS_AS(l2_feature_loss(a, testing::random_features(rng, 3, 4, 4)), Error);
}

TEST_CASE("TV: direct summation oracle, examples, finite differences") {
    Rng rng(3);
    VoxelGrid g({4, 3, 5}, Vec3::Constant(-1.0), Vec3::Constant(1.0), 1);
    for (float& v : g.mutable_sh()) v = 0.7f;
    const GridLoss flat = tv_loss(g);
    CHECK(flat.value == 0.0);
    for (double v : flat.grad) CHECK(v == 0.0);

    // One interior-corner coefficient raised by 1: three adjacent pairs differ by 1.
    g.mutable_sh()[g.index(0, 0, 0) * 12 + 5] += 1.0f;
    // Stored as float, so the step is 1 only to float precision.
    CHECK(tv_loss(g).value == doctest::Approx(3.0 / (tv_pairs(g.dims()) * 12.0)).epsilon(1e-6));

    for (float& v : g.mutable_sh()) v = static_cast<float>(rng.uniform(-1, 1));
    const GridLoss l = tv_loss(g);
    double sum = 0.0;
    const auto& d = g.dims();
    for (int z = 0; z < d[2]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[0]; ++x)
                for (int j = 0; j < 12; ++j) {
                    const double v = g.sh(g.index(x, y, z))[j];
                    if (x + 1 < d[0]) sum += std::pow(g.sh(g.index(x + 1, y, z))[j] - v, 2);
                    if (y + 1 < d[1]) sum += std::pow(g.sh(g.index(x, y + 1, z))[j] - v, 2);
                    if (z + 1 < d[2]) sum += std::pow(g.sh(g.index(x, y, z + 1))[j] - v, 2);
                }
    CHECK(l.value == doctest::Approx(sum / (tv_pairs(d) * 12.0)).epsilon(1e-12));
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t i = static_cast<std::size_t>(rng.below(static_cast<int>(g.sh().size())));
        const float x0 = g.sh()[i];
        g.mutable_sh()[i] = x0 + 1e-2f;
        const double xp = g.sh()[i], lp = tv_loss(g).value;
        g.mutable_sh()[i] = x0 - 1e-2f;
        const double xm = g.sh()[i], lm = tv_loss(g).value;
        g.mutable_sh()[i] = x0;
        CHECK(std::abs((lp - lm) / (xp - xm) - l.grad[i]) < 1e-5 * std::max(1.0, std::abs(l.grad[i])));
    }
}

TEST_CASE("NNFM loss: values and frozen-assignment gradients") {
    Rng rng(4);
    const FeatureMap r = testing::random_features(rng, 3, 3, 6);
    FeatureMap s = testing::random_features(rng, 4, 4, 6);
    const FeatureLoss l = nnfm_loss(r, s);
    double sum = 0.0;
    for (std::size_t p = 0; p < r.pixels(); ++p) sum += nearest(r.vec(p), s);
    CHECK(l.value == doctest::Approx(sum / r.pixels()).epsilon(1e-12));
    CHECK((l.value >= 0.0 && l.value <= 2.0));

    const MatchResult m = nnfm_match(r, s);
    check_feature_grad(r, l.grad, [&](const FeatureMap& x) { return nnfm_loss(x, s, &m).value; }, 1e-7);

    // Every rendered vector present in the style map.
    FeatureMap contains = s;
    for (std::size_t p = 0; p < r.pixels(); ++p)
        std::copy(r.vec(p).begin(), r.vec(p).end(), contains.vec(p + 2).begin());
    CHECK(nnfm_loss(r, contains).value == doctest::Approx(0.0).epsilon(1e-12));

    FeatureMap one_r(1, 1, 6, FeatureSpace::Texture), one_s(1, 1, 6, FeatureSpace::Texture);
    std::copy(r.vec(0).begin(), r.vec(0).end(), one_r.vec(0).begin());
    std::copy(s.vec(3).begin(), s.vec(3).end(), one_s.vec(0).begin());
    CHECK(nnfm_loss(one_r, one_s).value == doctest::Approx(cosine_distance(r.vec(0), s.vec(3))));
}

TEST_CASE("SANNFM loss: collapse, zero at identity, frozen gradients") {
    Rng rng(5);
    const FeatureMap rt = testing::random_features(rng, 4, 4, 5), st = testing::random_features(rng, 3, 5, 5);
    const FeatureMap rs = testing::random_features(rng, 4, 4, 3, FeatureSpace::Semantic);
    const FeatureMap ss = testing::random_features(rng, 3, 5, 3, FeatureSpace::Semantic);
    const LabelMask zeros_r(4, 4, 0), zeros_s(3, 5, 0);
    CHECK(sannfm_loss(0, rt, st, rs, ss, zeros_r, zeros_s, 1.0).value == doctest::Approx(nnfm_loss(rt, st).value));

    const LabelMask rm = testing::random_mask(rng, 4, 4, 2);
    CHECK(sannfm_loss(1, rt, rt, rs, rs, rm, rm, 0.5).value == doctest::Approx(0.0).epsilon(1e-12));

    const LabelMask sm = testing::random_mask(rng, 3, 5, 2);
    const MatchResult m = sannfm_match(rt, rs, st, ss, rm, sm, 0.5);
    const FeatureLoss l = sannfm_loss(1, rt, st, rs, ss, rm, sm, 0.5, &m);
    double sum = 0.0;
    for (std::size_t p = 0; p < rt.pixels(); ++p)
        if (rm.labels[p] == 1) sum += ref_cos(rt.vec(p), st.vec(m.index[p]));
    CHECK(l.value == doctest::Approx(sum / rm.count(1)).epsilon(1e-12));
    check_feature_grad(rt, l.grad, [&](const FeatureMap& x) { return sannfm_loss(1, x, st, rs, ss, rm, sm, 0.5, &m).value; },
                       1e-7);
    for (std::size_t p = 0; p < rt.pixels(); ++p)
        if (rm.labels[p] != 1)
            for (double g : l.grad.vec(p)) CHECK(g == 0.0);
}

TEST_CASE("composite: all-preserve at ground truth leaves only TV") {
    Rng rng(6);
    const Image gt = testing::random_image(rng, 8, 8);
    TaskSpec task;
    task.mode = TaskMode::Compositional;
    task.bindings[0] = LabelBinding::keep();
    task.bindings[1] = LabelBinding::keep();
    const VoxelGrid g = testing::random_grid(rng, {3, 3, 3});
    const View v = make_view(gt, testing::random_mask(rng, 8, 8, 2), task.texture);
    const MaskedLoss l = composite_masked_loss(gt, v, task, g);
    CHECK(l.report.data_total() == 0.0);
    CHECK(l.report.total == doctest::Approx(task.loss.lambda_tv * tv_loss(g).value));
    for (double x : l.pixel_grad.data) CHECK(x == 0.0);
}

TEST_CASE("composite: one style label over the whole image is the plain style loss") {
    Rng rng(7);
    const Image gt = testing::random_image(rng, 8, 8), rendered = testing::random_image(rng, 8, 8);
    const Image style = testing::random_image(rng, 10, 10);
    TaskSpec task;
    task.bindings[0] = LabelBinding::keep();
    task.bindings[1] = LabelBinding::stylize(style_of(style, task.texture));
    const VoxelGrid g = testing::random_grid(rng, {3, 3, 3});
    const View v = make_view(gt, LabelMask(8, 8, 1), task.texture);
    const MaskedLoss l = composite_masked_loss(rendered, v, task, g);
    const FeatureMap fr = extract(task.texture, rendered), fs = extract(task.texture, style);
    const double expect = nnfm_loss(fr, fs).value + task.loss.lambda * l2_feature_loss(fr, v.content_texture).value +
                          task.loss.lambda_tv * tv_loss(g).value;
    CHECK(l.report.total == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("composite: two-label decomposition against independent per-region losses") {
    Rng rng(8);
    const Image gt = testing::random_image(rng, 8, 8), rendered = testing::random_image(rng, 8, 8);
    const Image s1 = testing::random_image(rng, 8, 4), s2 = testing::random_image(rng, 8, 4);
    TaskSpec task;
    task.mode = TaskMode::Compositional;
    task.loss.lambda = 0.3;
    task.bindings[1] = LabelBinding::stylize(style_of(s1, task.texture));
    task.bindings[2] = LabelBinding::stylize(style_of(s2, task.texture));
    LabelMask mask(8, 8, 1);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            if (x + y > 7) mask.at(y, x) = 2;
    const VoxelGrid g = testing::random_grid(rng, {3, 3, 3});
    const View v = make_view(gt, mask, task.texture);
    const MaskedLoss l = composite_masked_loss(rendered, v, task, g);

    const FeatureMap fr = extract(task.texture, rendered), fc = extract(task.texture, gt);
    const LabelMask fm = downsample_mask(mask, fr.height, fr.width);
    const FeatureMap* styles[3] = {nullptr, &task.bindings[1].style->texture, &task.bindings[2].style->texture};
    const double nf = static_cast<double>(fr.pixels());
    double total = 0.0;
    for (int m = 1; m <= 2; ++m) {
        double region = 0.0;
        for (std::size_t p = 0; p < fr.pixels(); ++p) {
            if (fm.labels[p] != m) continue;
            double l2 = 0.0;
            for (int k = 0; k < fr.channels; ++k) l2 += std::pow(fr.vec(p)[k] - fc.vec(p)[k], 2);
            region += nearest(fr.vec(p), *styles[m]) + task.loss.lambda * l2 / fr.channels;
        }
        const LabelTerm* t = l.report.label(m);
        REQUIRE(t != nullptr);
        CHECK(t->style + t->content == doctest::Approx(region / nf).epsilon(1e-9));
        total += region / nf;
    }
    total += task.loss.lambda_tv * tv_loss(g).value;
    CHECK(std::abs(l.report.total - total) < 1e-6);
}

TEST_CASE("composite gradient: finite differences with frozen matches") {
    Rng rng(9);
    const Image gt = testing::random_image(rng, 8, 8), rendered = testing::random_image(rng, 8, 8, 0.05, 0.95);
    TaskSpec task;
    task.mode = TaskMode::Compositional;
    task.loss.lambda = 0.5;
    task.bindings[0] = LabelBinding::keep();
    task.bindings[1] = LabelBinding::stylize(style_of(testing::random_image(rng, 6, 6), task.texture));
    task.bindings[2] = LabelBinding::stylize(style_of(testing::random_image(rng, 6, 6), task.texture));
    const VoxelGrid g = testing::random_grid(rng, {3, 3, 3});
    const View v = make_view(gt, testing::random_mask(rng, 8, 8, 3), task.texture);
    MatchCache cache;
    LossOptions rec;
    rec.record = &cache;
    const MaskedLoss l = composite_masked_loss(rendered, v, task, g, rec);
    LossOptions replay;
    replay.replay = &cache;
    Image x = rendered;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double h = 1e-6;
        x.data[i] = rendered.data[i] + h;
        const double lp = composite_masked_loss(x, v, task, g, replay).report.total;
        x.data[i] = rendered.data[i] - h;
        const double lm = composite_masked_loss(x, v, task, g, replay).report.total;
        x.data[i] = rendered.data[i];
        CHECK(std::abs((lp - lm) / (2 * h) - l.pixel_grad.data[i]) < 1e-6);
    }
}

TEST_CASE("gradient locality") {
    Rng rng(10);
    const Image gt = testing::random_image(rng, 8, 8), rendered = testing::random_image(rng, 8, 8);
    SUBCASE("feature level: a label's style term touches only its own feature pixels") {
        TaskSpec task;
        task.mode = TaskMode::Compositional;
        task.bindings[0] = LabelBinding::keep();
        task.bindings[1] = LabelBinding::stylize(style_of(testing::random_image(rng, 6, 6), task.texture));
        task.bindings[2] = LabelBinding::stylize(style_of(testing::random_image(rng, 6, 6), task.texture));
        const LabelMask mask = testing::random_mask(rng, 8, 8, 3);
        const View v = make_view(gt, mask, task.texture);
        const VoxelGrid g = testing::random_grid(rng, {3, 3, 3});
        // Label 2 as preserve isolates label 1's terms.
        TaskSpec only1 = task;
        only1.bindings[2] = LabelBinding::keep();
        const MaskedLoss l = composite_masked_loss(rendered, v, only1, g);
        const LabelMask fm = downsample_mask(mask, l.texture_grad.height, l.texture_grad.width);
        bool any = false;
        for (std::size_t p = 0; p < fm.pixels(); ++p)
            for (double x : l.texture_grad.vec(p)) {
                if (fm.labels[p] != 1) CHECK(x == 0.0);
                any |= x != 0.0;
            }
        CHECK(any);
    }
    SUBCASE("pixel level with stride-aligned masks and a patch extractor") {
        TaskSpec task;
        task.mode = TaskMode::Compositional;
        task.texture = Extractor::rgb_patch(2, 2);
        task.bindings[0] = LabelBinding::keep();
        task.bindings[1] = LabelBinding::stylize(style_of(testing::random_image(rng, 6, 6), task.texture));
        task.bindings[2] = LabelBinding::stylize(style_of(testing::random_image(rng, 6, 6), task.texture));
        LabelMask mask(8, 8);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) mask.at(y, x) = ((y / 2) * 7 + (x / 2) * 3) % 3;
        const View v = make_view(gt, mask, task.texture);
        const VoxelGrid g = testing::random_grid(rng, {3, 3, 3});
        const MaskedLoss full = composite_masked_loss(rendered, v, task, g);
        LossOptions preserve_only;
        preserve_only.style = preserve_only.content = false;
        const MaskedLoss pres = composite_masked_loss(rendered, v, task, g, preserve_only);
        TaskSpec only1 = task;
        only1.bindings[2] = LabelBinding::keep();
        LossOptions style_only;
        style_only.preserve = false;
        const MaskedLoss s1 = composite_masked_loss(rendered, v, only1, g, style_only);
        for (std::size_t p = 0; p < mask.pixels(); ++p)
            for (int c = 0; c < 3; ++c) {
                const std::size_t i = 3 * p + c;
                if (mask.labels[p] == 0) CHECK(full.pixel_grad.data[i] == pres.pixel_grad.data[i]);
                else CHECK(pres.pixel_grad.data[i] == 0.0);
                if (mask.labels[p] != 1) CHECK(s1.pixel_grad.data[i] == 0.0);
            }
    }
}

TEST_CASE("composite errors") {
    Rng rng(11);
    const Image gt = testing::random_image(rng, 8, 8);
    TaskSpec task;
    task.mode = TaskMode::Compositional;
    task.bindings[0] = LabelBinding::keep();
    const VoxelGrid g = testing::random_grid(rng, {3, 3, 3});
    const View v = make_view(gt, testing::random_mask(rng, 8, 8, 3), task.texture);
    try {
        composite_masked_loss(gt, v, task, g);
        FAIL("expected Configuration");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Configuration);
    }
    task.bindings[1] = LabelBinding::stylize(style_of(testing::random_image(rng, 6, 6), task.texture));
    task.bindings[2] = LabelBinding::keep();
    View stale = v;
    stale.gt_image.data[0] = 1.0 - stale.gt_image.data[0];
    try {
        composite_masked_loss(gt, stale, task, g);
        FAIL("expected Stale");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Stale);
    }
    const MaskedLoss ok = composite_masked_loss(gt, v, task, g);
    const auto j = ok.report.to_json();
    CHECK(j.contains("total"));
    CHECK(j["labels"].size() == 3);
}
