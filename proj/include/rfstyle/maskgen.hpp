#pragma once

#include <span>
#include <string>
#include <vector>

#include "rfstyle/image.hpp"

namespace rfstyle {

struct LabelEmbedding {
    int id = 0;
    std::string name;
    std::vector<double> vec;
};

/// Text-side label embeddings in the semantic feature space.
struct LabelEmbeddingSet {
    std::vector<LabelEmbedding> labels;

    /// Throws Dimension on a channel mismatch and DegenerateVector on a zero embedding.
    void validate(int channels) const;
};

struct PixelQuery {
    int x = 0;
    int y = 0;
    int label = 1;
};

/// A query feature vector with the label it stands for.
struct QueryVector {
    std::vector<double> feature;
    int label = 1;
};

inline constexpr double kDefaultQueryThreshold = 0.3;

/// One query: binary mask, 1 where the cosine distance to the query is <= threshold.
/// Several queries: each pixel takes the label of its nearest query (first query
/// wins ties). Throws DegenerateVector for a zero-norm query.
LabelMask mask_from_query_vectors(const FeatureMap& sem, std::span<const QueryVector> queries,
                                  double threshold = kDefaultQueryThreshold);

/// Queries given as pixels of `sem` itself. Throws OutOfBounds for pixels outside the map.
LabelMask mask_from_pixel_query(const FeatureMap& sem, std::span<const PixelQuery> queries,
                                double threshold = kDefaultQueryThreshold);

/// Per-pixel nearest label embedding; ties go to the smallest label id.
LabelMask mask_from_embeddings(const FeatureMap& sem, const LabelEmbeddingSet& embeddings);

}  // namespace rfstyle
