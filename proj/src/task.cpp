#include "rfstyle/task.hpp"

#include <set>

#include "rfstyle/error.hpp"

namespace rfstyle {

const char* to_string(TaskMode mode) {
    switch (mode) {
        case TaskMode::ObjectSelect: return "object-select";
        case TaskMode::Compositional: return "compositional";
        case TaskMode::SemanticAware: return "semantic-aware";
    }
    return "unknown";
}

TaskMode parse_task_mode(const std::string& text) {
    if (text == "object-select") return TaskMode::ObjectSelect;
    if (text == "compositional") return TaskMode::Compositional;
    if (text == "semantic-aware") return TaskMode::SemanticAware;
    throw Error(ErrorCode::Configuration, "unknown task mode '" + text + "'");
}

void LossConfig::validate() const {
    if (!(lambda >= 0.0)) throw Error(ErrorCode::Configuration, "lambda must be >= 0");
    if (!(lambda_tv >= 0.0)) throw Error(ErrorCode::Configuration, "lambda_tv must be >= 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::Configuration, "alpha must lie in [0,1]");
}

void TaskSpec::validate() const {
    loss.validate();
    if (!texture.differentiable())
        throw Error(ErrorCode::Configuration, "the texture extractor must be differentiable");
    for (const auto& [label, b] : bindings) {
        if (label < 0) throw Error(ErrorCode::Configuration, "labels must be non-negative");
        if (!b.preserve && !b.style)
            throw Error(ErrorCode::Configuration, "label " + std::to_string(label) + " has neither style nor preserve");
        if (b.style && b.style->texture.channels != texture.channels())
            throw Error(ErrorCode::Configuration, "style features do not match the texture extractor");
    }
    if (mode == TaskMode::ObjectSelect) {
        if (bindings.size() != 2 || !bindings.count(0) || !bindings.count(1) || !bindings.at(0).preserve ||
            bindings.at(1).preserve)
            throw Error(ErrorCode::Configuration, "object-select binds label 0 to preserve and label 1 to a style");
    }
    if (mode == TaskMode::SemanticAware) {
        if (!semantic) throw Error(ErrorCode::Configuration, "semantic-aware mode needs a semantic extractor");
        for (const auto& [label, b] : bindings) {
            if (b.preserve) continue;
            if (b.style->semantic.pixels() == 0 || b.style->mask.pixels() == 0)
                throw Error(ErrorCode::Configuration,
                            "semantic-aware label " + std::to_string(label) + " needs semantic features and a style mask");
            if (b.style->semantic.height != b.style->texture.height ||
                b.style->semantic.width != b.style->texture.width ||
                b.style->mask.height != b.style->texture.height || b.style->mask.width != b.style->texture.width)
                throw Error(ErrorCode::Configuration, "style semantic features/mask must sit on the texture grid");
        }
    }
}

const LabelBinding& TaskSpec::binding(int label) const {
    const auto it = bindings.find(label);
    if (it == bindings.end())
        throw Error(ErrorCode::Configuration, "mask label " + std::to_string(label) + " has no task binding");
    return it->second;
}

namespace {
std::uint64_t cache_key(const Image& gt, const Extractor& e) {
    return fingerprint(gt.data) ^ (e.identity() * 0x9E3779B97F4A7C15ULL);
}
}  // namespace

void View::cache_features(const Extractor& texture) {
    content_texture = extract(texture, gt_image, name);
    content_key = cache_key(gt_image, texture);
}

void View::check_cache(const Extractor& texture) const {
    if (content_texture.pixels() == 0 || content_key != cache_key(gt_image, texture))
        throw Error(ErrorCode::Stale, "content feature cache of view '" + name + "' is stale");
}

}  // namespace rfstyle
