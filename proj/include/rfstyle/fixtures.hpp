#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "rfstyle/feat.hpp"
#include "rfstyle/grid.hpp"
#include "rfstyle/render.hpp"
#include "rfstyle/task.hpp"

namespace rfstyle {

struct Primitive {
    enum class Shape { Box, Sphere };
    Shape shape = Shape::Box;
    Vec3 center = Vec3::Zero();
    Vec3 half_extent = Vec3::Constant(0.25);  // sphere radius is half_extent.x()
    double density = 30.0;
    Vec3 color = Vec3::Constant(0.5);  // target rendered color
    double texture = 0.0;               // amplitude of seeded per-voxel color noise
    int label = 0;

    bool inside(const Vec3& p) const;
    /// Entry distance along a ray, or nullopt on a miss.
    std::optional<double> intersect(const Vec3& origin, const Vec3& dir) const;
};

struct CameraArc {
    int count = 4;
    double radius = 3.0;
    double span_degrees = 60.0;  // 360 gives a full ring
    double elevation_degrees = 15.0;
    Vec3 look_at = Vec3::Zero();
};

struct SceneSpec {
    std::uint64_t seed = 0;
    std::array<int, 3> dims{24, 24, 24};
    Vec3 bbox_min = Vec3::Constant(-1.0);
    Vec3 bbox_max = Vec3::Constant(1.0);
    int sh_degree = 1;
    std::vector<Primitive> primitives;
    CameraArc cameras;
    int width = 32;
    int height = 32;
    double focal = 40.0;
    RenderOptions render;
};

struct Scene {
    VoxelGrid grid;
    std::vector<int> voxel_owner;  // primitive index per voxel, -1 for empty
    std::vector<Camera> cameras;
    std::vector<Image> images;
    std::vector<LabelMask> masks;
    RenderOptions render;

    /// Views named "000", "001", ... with empty feature caches.
    std::vector<View> views() const;
};

/// Voxelizes the primitives (later ones win), renders every camera and derives
/// masks by analytic ray-primitive intersection (nearest hit's label, 0 on a miss).
/// Throws Contract for a primitive outside the bbox.
Scene build_scene(const SceneSpec& spec);

/// A colored box (label 1) in front of a backdrop plate (label 0).
SceneSpec box_scene_spec(std::uint64_t seed = 0);

struct OcclusionScene {
    Scene scene;
    Vec3 point = Vec3::Zero();  // on the wall; views 0,1 see it, views 2,3 look through the occluder
    std::vector<bool> visible;
};

OcclusionScene build_occlusion_scene(bool with_occluder = true);

enum class StyleKind { Stripes, Dots, TwoRegion };

struct StyleImage {
    Image image;
    FeatureMap texture;
    FeatureMap semantic;  // on the texture grid; empty without a semantic extractor
    LabelMask mask;       // image resolution; TwoRegion: left half 0, right half 1
};

StyleImage build_style_image(StyleKind kind, std::uint64_t seed, const Extractor& texture,
                             const Extractor* semantic = nullptr, int size = 32);

/// Semantic stand-in used with the fixtures: soft assignment to the RGB cube corners.
Extractor fixture_semantic_extractor();

}  // namespace rfstyle
