#include "rfstyle/loss.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "rfstyle/error.hpp"

namespace rfstyle {

namespace {

// D(a, b) and, scaled by `scale`, its gradient w.r.t. a added into g.
// A zero-norm side gives D = 2 with no gradient.
double cosine_term(std::span<const double> a, std::span<const double> b, double scale, std::span<double> g) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 2.0;
    const double na = std::sqrt(aa), nb = std::sqrt(bb);
    const double cos = ab / (na * nb);
    for (std::size_t i = 0; i < a.size(); ++i) g[i] += scale * -(b[i] / (na * nb) - cos * a[i] / aa);
    return 1.0 - cos;
}

FeatureMap gather(const FeatureMap& f, const std::vector<std::size_t>& pixels) {
    FeatureMap out(1, static_cast<int>(pixels.size()), f.channels, f.space);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const auto src = f.vec(pixels[i]);
        std::copy(src.begin(), src.end(), out.vec(i).begin());
    }
    return out;
}

void check_frozen(const MatchResult& m, const FeatureMap& content) {
    if (m.index.size() != content.pixels()) throw Error(ErrorCode::Dimension, "frozen match does not fit content map");
}

}  // namespace

FeatureLoss l2_feature_loss(const FeatureMap& r, const FeatureMap& c) {
    if (!r.same_shape(c)) throw Error(ErrorCode::Dimension, "l2 feature loss on maps of different shape");
    FeatureLoss out{0.0, FeatureMap(r.height, r.width, r.channels, r.space)};
    const double n = static_cast<double>(r.data.size());
    if (n == 0) return out;
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        const double d = r.data[i] - c.data[i];
        out.value += d * d;
        out.grad.data[i] = 2.0 * d / n;
    }
    out.value /= n;
    return out;
}

PixelLoss l2_pixel_loss(const Image& r, const Image& t, const LabelMask& mask, int label) {
    if (!r.same_shape(t)) throw Error(ErrorCode::Dimension, "pixel loss on images of different shape");
    if (mask.height != r.height || mask.width != r.width) throw Error(ErrorCode::Dimension, "pixel loss mask shape");
    PixelLoss out{0.0, Image(r.height, r.width, r.channels), mask.count(label)};
    if (out.pixels == 0) return out;
    const double n = static_cast<double>(out.pixels) * r.channels;
    for (std::size_t p = 0; p < mask.pixels(); ++p) {
        if (mask.labels[p] != label) continue;
        for (int c = 0; c < r.channels; ++c) {
            const std::size_t i = p * r.channels + c;
            const double d = r.data[i] - t.data[i];
            out.value += d * d;
            out.grad.data[i] = 2.0 * d / n;
        }
    }
    out.value /= n;
    return out;
}

GridLoss tv_loss(const VoxelGrid& grid) {
    const auto& dims = grid.dims();
    const int nc = grid.coeffs_per_voxel();
    const auto sh = grid.sh();
    GridLoss out{0.0, std::vector<double>(sh.size(), 0.0)};
    const double pairs = double(dims[0] - 1) * dims[1] * dims[2] + double(dims[0]) * (dims[1] - 1) * dims[2] +
                         double(dims[0]) * dims[1] * (dims[2] - 1);
    const double scale = 1.0 / (pairs * nc);
    const std::size_t stride[3] = {1, static_cast<std::size_t>(dims[0]),
                                   static_cast<std::size_t>(dims[0]) * dims[1]};
    for (int z = 0; z < dims[2]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[0]; ++x) {
                const std::size_t v = grid.index(x, y, z);
                const int c[3] = {x, y, z};
                for (int a = 0; a < 3; ++a) {
                    if (c[a] + 1 >= dims[a]) continue;
                    const std::size_t u = v + stride[a];
                    for (int j = 0; j < nc; ++j) {
                        const double d = static_cast<double>(sh[u * nc + j]) - sh[v * nc + j];
                        out.value += d * d;
                        out.grad[u * nc + j] += 2.0 * d * scale;
                        out.grad[v * nc + j] -= 2.0 * d * scale;
                    }
                }
            }
    out.value *= scale;
    return out;
}

FeatureLoss nnfm_loss(const FeatureMap& r, const FeatureMap& s, const MatchResult* frozen) {
    MatchResult local;
    if (!frozen) local = nnfm_match(r, s);
    const MatchResult& m = frozen ? *frozen : local;
    check_frozen(m, r);
    FeatureLoss out{0.0, FeatureMap(r.height, r.width, r.channels, r.space)};
    const double n = static_cast<double>(r.pixels());
    if (n == 0) return out;
    for (std::size_t p = 0; p < r.pixels(); ++p)
        out.value += cosine_term(r.vec(p), s.vec(m.index[p]), 1.0 / n, out.grad.vec(p));
    out.value /= n;
    return out;
}

FeatureLoss sannfm_loss(int label, const FeatureMap& rt, const FeatureMap& st, const FeatureMap& rs,
                        const FeatureMap& ss, const LabelMask& rm, const LabelMask& sm, double alpha,
                        const MatchResult* frozen) {
    MatchResult local;
    if (!frozen) local = sannfm_match(rt, rs, st, ss, rm, sm, alpha);
    const MatchResult& m = frozen ? *frozen : local;
    check_frozen(m, rt);
    FeatureLoss out{0.0, FeatureMap(rt.height, rt.width, rt.channels, rt.space)};
    const double n = static_cast<double>(rm.count(label));
    if (n == 0) return out;
    for (std::size_t p = 0; p < rt.pixels(); ++p) {
        if (rm.labels[p] != label) continue;
        out.value += cosine_term(rt.vec(p), st.vec(m.index[p]), 1.0 / n, out.grad.vec(p));
    }
    out.value /= n;
    return out;
}

const LabelTerm* LossReport::label(int id) const {
    for (const auto& t : labels)
        if (t.label == id) return &t;
    return nullptr;
}

nlohmann::json LossReport::to_json() const {
    nlohmann::json j;
    j["total"] = total;
    j["style"] = style;
    j["content"] = content;
    j["preserve"] = preserve;
    j["tv"] = tv;
    j["lambda_tv"] = lambda_tv;
    j["feature_pixels"] = feature_pixels;
    j["image_pixels"] = image_pixels;
    auto& arr = j["labels"] = nlohmann::json::array();
    for (const auto& t : labels)
        arr.push_back({{"label", t.label},
                       {"preserve", t.preserve},
                       {"style", t.style},
                       {"content", t.content},
                       {"preserve_mse", t.preserve_mse},
                       {"pixels", t.pixels}});
    return j;
}

MaskedLoss composite_masked_loss(const Image& rendered, const View& view, const TaskSpec& task,
                                 const VoxelGrid& grid, const LossOptions& options) {
    const auto& cfg = task.loss;
    cfg.validate();
    if (!rendered.same_shape(view.gt_image) || view.mask.height != rendered.height ||
        view.mask.width != rendered.width)
        throw Error(ErrorCode::Dimension, "rendered image, ground truth and mask must share dims");

    std::set<int> present(view.mask.labels.begin(), view.mask.labels.end());
    bool any_style = false;
    for (int label : present) any_style |= !task.binding(label).preserve;

    MaskedLoss out;
    LossReport& rep = out.report;
    rep.image_pixels = rendered.pixels();
    rep.lambda_tv = cfg.lambda_tv;
    out.pixel_grad = Image(rendered.height, rendered.width, 3);

    // Preserve labels: pixel MSE at image resolution, normalized by the image pixel count.
    const bool use_preserve = options.preserve && cfg.preserve_term;
    for (int label : present) {
        if (!task.binding(label).preserve) continue;
        LabelTerm term;
        term.label = label;
        term.preserve = true;
        term.pixels = view.mask.count(label);
        if (use_preserve && term.pixels > 0) {
            const PixelLoss pl = l2_pixel_loss(rendered, view.gt_image, view.mask, label);
            const double share = static_cast<double>(term.pixels) / rep.image_pixels;
            term.preserve_mse = pl.value;
            rep.preserve += share * pl.value;
            for (std::size_t i = 0; i < pl.grad.data.size(); ++i) out.pixel_grad.data[i] += share * pl.grad.data[i];
        }
        rep.labels.push_back(term);
    }

    if (any_style && (options.style || options.content)) {
        view.check_cache(task.texture);
        const FeatureMap fr = extract(task.texture, rendered, view.name);
        if (!fr.same_shape(view.content_texture))
            throw Error(ErrorCode::Dimension, "cached content features do not match rendered features");
        const LabelMask fmask = downsample_mask(view.mask, fr.height, fr.width);
        rep.feature_pixels = fr.pixels();
        const double nf = static_cast<double>(fr.pixels());
        out.texture_grad = FeatureMap(fr.height, fr.width, fr.channels, fr.space);

        FeatureMap fr_sem;
        if (task.mode == TaskMode::SemanticAware && options.style) {
            fr_sem = resample_bilinear(extract(*task.semantic, rendered, view.name), fr.height, fr.width);
        }

        for (int label : present) {
            const LabelBinding& b = task.binding(label);
            if (b.preserve) continue;
            LabelTerm term;
            term.label = label;
            std::vector<std::size_t> pix;
            for (std::size_t p = 0; p < fmask.pixels(); ++p)
                if (fmask.labels[p] == label) pix.push_back(p);
            term.pixels = pix.size();
            if (pix.empty()) {
                rep.labels.push_back(term);
                continue;
            }
            if (options.content && cfg.lambda > 0.0) {
                const double scale = cfg.lambda / (nf * fr.channels);
                for (std::size_t p : pix) {
                    const auto r = fr.vec(p);
                    const auto c = view.content_texture.vec(p);
                    auto g = out.texture_grad.vec(p);
                    for (int k = 0; k < fr.channels; ++k) {
                        const double d = r[k] - c[k];
                        term.content += scale * d * d;
                        g[k] += 2.0 * scale * d;
                    }
                }
            }
            if (options.style) {
                std::vector<int> idx;
                const std::vector<int>* replay = nullptr;
                if (options.replay) {
                    const auto it = options.replay->indices.find({options.view_key, label});
                    if (it == options.replay->indices.end() || it->second.size() != pix.size())
                        throw Error(ErrorCode::Stale, "frozen matches do not cover label " + std::to_string(label));
                    replay = &it->second;
                }
                if (!replay) {
                    const FeatureMap sub = gather(fr, pix);
                    if (task.mode == TaskMode::SemanticAware) {
                        const FeatureMap sub_sem = gather(fr_sem, pix);
                        const LabelMask sub_mask(1, static_cast<int>(pix.size()), label);
                        idx = sannfm_match(sub, sub_sem, b.style->texture, b.style->semantic, sub_mask, b.style->mask,
                                           cfg.alpha)
                                  .index;
                    } else {
                        idx = nnfm_match(sub, b.style->texture).index;
                    }
                    if (options.record) options.record->indices[{options.view_key, label}] = idx;
                }
                const std::vector<int>& use = replay ? *replay : idx;
                for (std::size_t i = 0; i < pix.size(); ++i)
                    term.style += cosine_term(fr.vec(pix[i]), b.style->texture.vec(use[i]), 1.0 / nf,
                                              out.texture_grad.vec(pix[i])) /
                                  nf;
            }
            rep.style += term.style;
            rep.content += term.content;
            rep.labels.push_back(term);
        }
        const Image g = backprop_extract(task.texture, rendered, out.texture_grad);
        for (std::size_t i = 0; i < g.data.size(); ++i) out.pixel_grad.data[i] += g.data[i];
    }

    std::sort(rep.labels.begin(), rep.labels.end(),
              [](const LabelTerm& a, const LabelTerm& b) { return a.label < b.label; });
    if (options.tv && cfg.lambda_tv > 0.0) rep.tv = tv_loss(grid).value;
    rep.total = rep.data_total() + cfg.lambda_tv * rep.tv;
    return out;
}

}  // namespace rfstyle
