#include "rfstyle/match.hpp"

#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

#include "rfstyle/error.hpp"
#include "rfstyle/parallel.hpp"

namespace rfstyle {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double distance_from(double ab, double aa, double bb) {
    if (aa == 0.0 || bb == 0.0) return 2.0;
    return 1.0 - ab / std::sqrt(aa * bb);
}

std::vector<double> squared_norms(const FeatureMap& f) {
    std::vector<double> out(f.pixels());
    for (std::size_t p = 0; p < f.pixels(); ++p) out[p] = dot(f.vec(p), f.vec(p));
    return out;
}

}  // namespace

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error(ErrorCode::Dimension, "cosine distance of vectors with different lengths");
    const double aa = dot(a, a), bb = dot(b, b);
    if (aa == 0.0 || bb == 0.0) throw Error(ErrorCode::DegenerateVector, "cosine distance of a zero-norm vector");
    return 1.0 - dot(a, b) / std::sqrt(aa * bb);
}

double cosine_distance_or_max(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error(ErrorCode::Dimension, "cosine distance of vectors with different lengths");
    return distance_from(dot(a, b), dot(a, a), dot(b, b));
}

MatchResult nnfm_match(const FeatureMap& content, const FeatureMap& style) {
    if (content.channels != style.channels) throw Error(ErrorCode::Dimension, "content/style channel mismatch");
    if (style.pixels() == 0) throw Error(ErrorCode::EmptyCandidates, "style feature map is empty");
    MatchResult r;
    r.height = content.height;
    r.width = content.width;
    r.style_width = style.width;
    r.index.assign(content.pixels(), 0);
    r.distance.assign(content.pixels(), 0.0);
    const auto cn = squared_norms(content);
    const auto sn = squared_norms(style);
    parallel_for(content.pixels(), [&](std::size_t p) {
        const auto v = content.vec(p);
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t q = 0; q < style.pixels(); ++q) {
            const double d = distance_from(dot(v, style.vec(q)), cn[p], sn[q]);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(q);
            }
        }
        r.index[p] = best;
        r.distance[p] = best_d;
    });
    for (double n : cn) r.degenerate_pixels += (n == 0.0);
    if (r.degenerate_pixels > 0)
        spdlog::debug("nnfm_match: {} zero-norm content vectors treated as maximally distant", r.degenerate_pixels);
    r.candidate_counts[0] = style.pixels();
    return r;
}

MatchResult sannfm_match(const FeatureMap& ct, const FeatureMap& cs, const FeatureMap& st, const FeatureMap& ss,
                         const LabelMask& cm, const LabelMask& sm, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::Contract, "alpha must lie in [0,1]");
    if (ct.channels != st.channels || cs.channels != ss.channels)
        throw Error(ErrorCode::Dimension, "content/style channel mismatch");
    if (ct.height != cs.height || ct.width != cs.width || ct.height != cm.height || ct.width != cm.width)
        throw Error(ErrorCode::Dimension, "content features and mask must share spatial dims");
    if (st.height != ss.height || st.width != ss.width || st.height != sm.height || st.width != sm.width)
        throw Error(ErrorCode::Dimension, "style features and mask must share spatial dims");
    if (st.pixels() == 0) throw Error(ErrorCode::EmptyCandidates, "style feature map is empty");

    MatchResult r;
    r.height = ct.height;
    r.width = ct.width;
    r.style_width = st.width;
    r.index.assign(ct.pixels(), 0);
    r.distance.assign(ct.pixels(), 0.0);

    std::map<int, std::vector<int>> candidates;
    for (std::size_t q = 0; q < sm.pixels(); ++q) candidates[sm.labels[q]].push_back(static_cast<int>(q));
    for (int label : cm.labels) {
        if (r.candidate_counts.count(label)) continue;
        const auto it = candidates.find(label);
        const std::size_t n = it == candidates.end() ? 0 : it->second.size();
        r.candidate_counts[label] = n;
        if (n == 0) {
            r.fallback_labels.push_back(label);
            spdlog::warn("sannfm_match: label {} has no style pixels; using unrestricted texture matching", label);
        }
    }
    std::vector<int> all(st.pixels());
    for (std::size_t q = 0; q < all.size(); ++q) all[q] = static_cast<int>(q);

    const auto ctn = squared_norms(ct), csn = squared_norms(cs);
    const auto stn = squared_norms(st), ssn = squared_norms(ss);
    parallel_for(ct.pixels(), [&](std::size_t p) {
        const auto it = candidates.find(cm.labels[p]);
        const bool fallback = it == candidates.end();
        const std::vector<int>& pool = fallback ? all : it->second;
        const auto vt = ct.vec(p);
        const auto vs = cs.vec(p);
        int best = pool.front();
        double best_d = std::numeric_limits<double>::infinity();
        for (int q : pool) {  // pool is ascending, so strict < keeps the smallest index on ties
            const double dt = distance_from(dot(vt, st.vec(q)), ctn[p], stn[q]);
            const double d = fallback ? dt : alpha * dt + (1.0 - alpha) * distance_from(dot(vs, ss.vec(q)), csn[p], ssn[q]);
            if (d < best_d) {
                best_d = d;
                best = q;
            }
        }
        r.index[p] = best;
        r.distance[p] = best_d;
    });
    for (double n : ctn) r.degenerate_pixels += (n == 0.0);
    return r;
}

}  // namespace rfstyle
