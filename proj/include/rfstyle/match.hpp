#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "rfstyle/image.hpp"

namespace rfstyle {

/// D(a, b) = 1 - a.b / sqrt(a.a * b.b), in [0, 2]. Throws DegenerateVector
/// when either vector has zero norm and Dimension on a length mismatch.
double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Matching-time variant: zero-norm vectors are maximally far (2).
double cosine_distance_or_max(std::span<const double> a, std::span<const double> b);

struct MatchResult {
    int height = 0;  // content feature resolution
    int width = 0;
    int style_width = 0;
    std::vector<int> index;        // matched style pixel, row-major linear index
    std::vector<double> distance;  // achieved (blended) distance
    std::map<int, std::size_t> candidate_counts;
    std::size_t degenerate_pixels = 0;  // content pixels with a zero-norm feature
    std::vector<int> fallback_labels;   // labels matched without a style region

    /// (row, col) of the style pixel matched to content pixel (y, x).
    std::pair<int, int> matched(int y, int x) const {
        const int s = index[static_cast<std::size_t>(y) * width + x];
        return {s / style_width, s % style_width};
    }
};

/// Exhaustive nearest cosine neighbor of every content vector in the style
/// map; ties go to the smallest row-major index.
MatchResult nnfm_match(const FeatureMap& content, const FeatureMap& style);

/// Candidates restricted to style pixels with the content pixel's label;
/// distance alpha * D_texture + (1 - alpha) * D_semantic. A label with no style
/// pixels falls back to unrestricted texture matching for its pixels.
MatchResult sannfm_match(const FeatureMap& content_tex, const FeatureMap& content_sem, const FeatureMap& style_tex,
                         const FeatureMap& style_sem, const LabelMask& content_mask, const LabelMask& style_mask,
                         double alpha);

}  // namespace rfstyle
