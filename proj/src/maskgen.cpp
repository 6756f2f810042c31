#include "rfstyle/maskgen.hpp"

#include <algorithm>
#include <limits>

#include "rfstyle/error.hpp"
#include "rfstyle/match.hpp"
#include "rfstyle/parallel.hpp"

namespace rfstyle {

void LabelEmbeddingSet::validate(int channels) const {
    for (const auto& e : labels) {
        if (static_cast<int>(e.vec.size()) != channels)
            throw Error(ErrorCode::Dimension, "embedding '" + e.name + "' has " + std::to_string(e.vec.size()) +
                                                  " channels, semantic features have " + std::to_string(channels));
        if (std::all_of(e.vec.begin(), e.vec.end(), [](double v) { return v == 0.0; }))
            throw Error(ErrorCode::DegenerateVector, "embedding '" + e.name + "' is zero");
    }
}

LabelMask mask_from_query_vectors(const FeatureMap& sem, std::span<const QueryVector> queries, double threshold) {
    if (queries.empty()) throw Error(ErrorCode::Contract, "mask generation needs at least one query");
    for (const auto& q : queries) {
        if (static_cast<int>(q.feature.size()) != sem.channels)
            throw Error(ErrorCode::Dimension, "query feature does not match the semantic channels");
        if (std::all_of(q.feature.begin(), q.feature.end(), [](double v) { return v == 0.0; }))
            throw Error(ErrorCode::DegenerateVector, "query pixel has a zero-norm feature");
    }
    LabelMask out(sem.height, sem.width);
    parallel_for(sem.pixels(), [&](std::size_t p) {
        const auto v = sem.vec(p);
        if (queries.size() == 1) {
            out.labels[p] = cosine_distance_or_max(v, queries[0].feature) <= threshold ? 1 : 0;
            return;
        }
        double best = std::numeric_limits<double>::infinity();
        int label = queries[0].label;
        for (const auto& q : queries) {
            const double d = cosine_distance_or_max(v, q.feature);
            if (d < best) {
                best = d;
                label = q.label;
            }
        }
        out.labels[p] = label;
    });
    return out;
}

LabelMask mask_from_pixel_query(const FeatureMap& sem, std::span<const PixelQuery> queries, double threshold) {
    std::vector<QueryVector> vecs;
    for (const auto& q : queries) {
        if (q.x < 0 || q.y < 0 || q.x >= sem.width || q.y >= sem.height)
            throw Error(ErrorCode::OutOfBounds, "query pixel outside the feature map");
        const auto f = sem.vec(static_cast<std::size_t>(q.y) * sem.width + q.x);
        vecs.push_back({std::vector<double>(f.begin(), f.end()), q.label});
    }
    return mask_from_query_vectors(sem, vecs, threshold);
}

LabelMask mask_from_embeddings(const FeatureMap& sem, const LabelEmbeddingSet& embeddings) {
    if (embeddings.labels.empty()) throw Error(ErrorCode::Contract, "mask generation needs at least one embedding");
    embeddings.validate(sem.channels);
    std::vector<const LabelEmbedding*> order;
    for (const auto& e : embeddings.labels) order.push_back(&e);
    std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });
    LabelMask out(sem.height, sem.width);
    parallel_for(sem.pixels(), [&](std::size_t p) {
        const auto v = sem.vec(p);
        double best = std::numeric_limits<double>::infinity();
        int label = order.front()->id;
        for (const auto* e : order) {
            const double d = cosine_distance_or_max(v, e->vec);
            if (d < best) {
                best = d;
                label = e->id;
            }
        }
        out.labels[p] = label;
    });
    return out;
}

}  // namespace rfstyle
