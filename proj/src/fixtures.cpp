#include "rfstyle/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "rfstyle/error.hpp"

namespace rfstyle {

namespace {

constexpr double kShC0 = 0.28209479177387814;

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

private:
    std::mt19937_64 gen_;
};

std::optional<double> ray_box(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi) {
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (d[a] == 0.0) {
            if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
            continue;
        }
        double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (t1 < std::max(t0, 0.0)) return std::nullopt;
    return std::max(t0, 0.0);
}

const std::array<Vec3, 6> kStylePalette = {Vec3(0.9, 0.8, 0.1), Vec3(0.1, 0.3, 0.8), Vec3(0.85, 0.15, 0.2),
                                           Vec3(0.15, 0.7, 0.3), Vec3(0.95, 0.95, 0.9), Vec3(0.2, 0.1, 0.3)};

Vec3 stripes_at(int x, int y, double angle, double period, const Vec3& a, const Vec3& b) {
    const double u = x * std::cos(angle) + y * std::sin(angle);
    const double t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * u / period);
    return (1.0 - t) * a + t * b;
}

struct DotField {
    std::vector<Vec3> centers;  // (x, y, radius)
    bool hit(int x, int y) const {
        for (const auto& c : centers)
            if ((x + 0.5 - c.x()) * (x + 0.5 - c.x()) + (y + 0.5 - c.y()) * (y + 0.5 - c.y()) <= c.z() * c.z())
                return true;
        return false;
    }
};

DotField make_dots(Rng& rng, int size) {
    DotField f;
    const int spacing = 8;
    for (int gy = 0; gy < size; gy += spacing)
        for (int gx = 0; gx < size; gx += spacing)
            f.centers.emplace_back(gx + rng.uniform(2.5, spacing - 2.5), gy + rng.uniform(2.5, spacing - 2.5),
                                   rng.uniform(1.6, 2.6));
    return f;
}

}  // namespace

bool Primitive::inside(const Vec3& p) const {
    if (shape == Shape::Sphere) return (p - center).norm() <= half_extent.x();
    return ((p - center).cwiseAbs() - half_extent).maxCoeff() <= 0.0;
}

std::optional<double> Primitive::intersect(const Vec3& o, const Vec3& d) const {
    if (shape == Shape::Box) return ray_box(o, d, center - half_extent, center + half_extent);
    const Vec3 oc = o - center;
    const double b = oc.dot(d);
    const double c = oc.squaredNorm() - half_extent.x() * half_extent.x();
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    const double s = std::sqrt(disc);
    if (-b + s < 0.0) return std::nullopt;
    return std::max(0.0, -b - s);
}

std::vector<View> Scene::views() const {
    std::vector<View> out;
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        View v;
        char name[24];
        std::snprintf(name, sizeof name, "%03zu", i);
        v.name = name;
        v.camera = cameras[i];
        v.gt_image = images[i];
        v.mask = masks[i];
        out.push_back(std::move(v));
    }
    return out;
}

Scene build_scene(const SceneSpec& spec) {
    Scene scene{VoxelGrid(spec.dims, spec.bbox_min, spec.bbox_max, spec.sh_degree), {}, {}, {}, {}, spec.render};
    VoxelGrid& grid = scene.grid;
    for (const auto& prim : spec.primitives) {
        const Vec3 lo = prim.shape == Primitive::Shape::Box ? Vec3(prim.center - prim.half_extent)
                                                            : Vec3(prim.center - Vec3::Constant(prim.half_extent.x()));
        const Vec3 hi = prim.shape == Primitive::Shape::Box ? Vec3(prim.center + prim.half_extent)
                                                            : Vec3(prim.center + Vec3::Constant(prim.half_extent.x()));
        if (!grid.contains(lo) || !grid.contains(hi)) throw Error(ErrorCode::Contract, "primitive outside the bbox");
    }

    Rng rng(spec.seed);
    const auto& dims = grid.dims();
    const int nb = grid.basis_count();
    const int nc = grid.coeffs_per_voxel();
    scene.voxel_owner.assign(grid.voxel_count(), -1);
    {
        auto density = grid.mutable_density();
        auto sh = grid.mutable_sh();
        for (int z = 0; z < dims[2]; ++z)
            for (int y = 0; y < dims[1]; ++y)
                for (int x = 0; x < dims[0]; ++x) {
                    const std::size_t v = grid.index(x, y, z);
                    const Vec3 p = grid.lattice_point(x, y, z);
                    for (std::size_t k = 0; k < spec.primitives.size(); ++k)
                        if (spec.primitives[k].inside(p)) scene.voxel_owner[v] = static_cast<int>(k);
                    // Draw noise for every voxel so the stream does not depend on the layout.
                    const Vec3 noise(rng.uniform() - 0.5, rng.uniform() - 0.5, rng.uniform() - 0.5);
                    const int owner = scene.voxel_owner[v];
                    if (owner < 0) continue;
                    const auto& prim = spec.primitives[owner];
                    density[v] = static_cast<float>(prim.density);
                    const Vec3 rgb = (prim.color + prim.texture * noise).cwiseMax(0.0).cwiseMin(1.0);
                    for (int c = 0; c < 3; ++c) sh[v * nc + c * nb] = static_cast<float>(rgb[c] / kShC0);
                }
        // One-voxel color dilation so interpolation at surfaces does not darken toward empty space.
        const std::vector<float> filled(sh.begin(), sh.end());
        const int offs[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (int z = 0; z < dims[2]; ++z)
            for (int y = 0; y < dims[1]; ++y)
                for (int x = 0; x < dims[0]; ++x) {
                    const std::size_t v = grid.index(x, y, z);
                    if (scene.voxel_owner[v] >= 0) continue;
                    for (const auto& o : offs) {
                        const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
                        if (nx < 0 || ny < 0 || nz < 0 || nx >= dims[0] || ny >= dims[1] || nz >= dims[2]) continue;
                        const std::size_t u = grid.index(nx, ny, nz);
                        if (scene.voxel_owner[u] < 0) continue;
                        std::copy_n(filled.begin() + u * nc, nc, sh.begin() + v * nc);
                        break;
                    }
                }
    }

    const auto& arc = spec.cameras;
    if (arc.count < 2) throw Error(ErrorCode::Contract, "scene needs at least two cameras");
    const double deg = std::numbers::pi / 180.0;
    const double phi = arc.elevation_degrees * deg;
    for (int k = 0; k < arc.count; ++k) {
        const double theta = arc.span_degrees >= 360.0
                                 ? 2.0 * std::numbers::pi * k / arc.count
                                 : (-0.5 * arc.span_degrees + arc.span_degrees * k / (arc.count - 1)) * deg;
        const Vec3 eye = arc.look_at + arc.radius * Vec3(std::sin(theta) * std::cos(phi), std::sin(phi),
                                                         -std::cos(theta) * std::cos(phi));
        scene.cameras.push_back(Camera::look_at(eye, arc.look_at, Vec3::UnitY(), spec.focal, spec.width,
                                                spec.height, 0.05, 2.0 * arc.radius + 10.0));
    }
    for (const Camera& cam : scene.cameras) {
        scene.images.push_back(render_view(grid, cam, spec.render).image);
        LabelMask mask(cam.height, cam.width);
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                const Vec3 d = cam.ray_direction(x, y);
                double best = std::numeric_limits<double>::infinity();
                for (const auto& prim : spec.primitives) {
                    const auto t = prim.intersect(cam.translation, d);
                    if (t && *t < best) {
                        best = *t;
                        mask.at(y, x) = prim.label;
                    }
                }
            }
        scene.masks.push_back(std::move(mask));
    }
    return scene;
}

SceneSpec box_scene_spec(std::uint64_t seed) {
    SceneSpec spec;
    spec.seed = seed;
    Primitive plate;
    plate.center = Vec3(0.0, 0.0, 0.6);
    plate.half_extent = Vec3(0.85, 0.85, 0.15);
    plate.density = 25.0;
    plate.color = Vec3(0.25, 0.5, 0.6);
    plate.texture = 0.15;
    plate.label = 0;
    Primitive box;
    box.center = Vec3(0.0, 0.0, -0.1);
    box.half_extent = Vec3(0.33, 0.33, 0.33);
    box.density = 25.0;
    box.color = Vec3(0.85, 0.55, 0.25);
    box.texture = 0.2;
    box.label = 1;
    spec.primitives = {plate, box};
    spec.cameras.count = 6;
    spec.cameras.radius = 3.2;
    spec.cameras.span_degrees = 60.0;
    spec.cameras.elevation_degrees = 15.0;
    return spec;
}

OcclusionScene build_occlusion_scene(bool with_occluder) {
    SceneSpec spec;
    spec.seed = 7;
    const VoxelGrid probe(spec.dims, spec.bbox_min, spec.bbox_max, spec.sh_degree);
    const Vec3 a = probe.lattice_point(14, 12, 17);

    Primitive wall;
    wall.center = Vec3(0.0, 0.0, 0.65);
    wall.half_extent = Vec3(0.9, 0.9, 0.25);
    wall.density = 30.0;
    wall.color = Vec3(0.3, 0.6, 0.3);
    wall.texture = 0.1;
    wall.label = 0;
    Primitive occluder;
    occluder.center = a + Vec3(0.0, 0.0, -0.75);
    occluder.half_extent = Vec3(0.2, 0.2, 0.12);
    occluder.density = 14.0;
    occluder.color = Vec3(0.85, 0.2, 0.2);
    occluder.texture = 0.1;
    occluder.label = 1;
    spec.primitives = {wall};
    if (with_occluder) spec.primitives.push_back(occluder);
    spec.cameras.count = 2;  // placeholder ring, replaced below

    OcclusionScene out{build_scene(spec), a, {}};
    const std::array<Vec3, 4> dirs = {Vec3(-0.55, 0.1, -1.0), Vec3(0.6, -0.1, -1.0), Vec3(0.0, 0.08, -1.0),
                                      Vec3(0.05, -0.08, -1.0)};
    Scene& s = out.scene;
    s.cameras.clear();
    s.images.clear();
    s.masks.clear();
    for (const Vec3& d : dirs) {
        const Vec3 eye = a + 3.5 * d.normalized();
        s.cameras.push_back(Camera::look_at(eye, a, Vec3::UnitY(), spec.focal, spec.width, spec.height, 0.05, 20.0));
    }
    for (const Camera& cam : s.cameras) {
        s.images.push_back(render_view(s.grid, cam, spec.render).image);
        LabelMask mask(cam.height, cam.width);
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                const Vec3 d = cam.ray_direction(x, y);
                double best = std::numeric_limits<double>::infinity();
                for (const auto& prim : spec.primitives) {
                    const auto t = prim.intersect(cam.translation, d);
                    if (t && *t < best) {
                        best = *t;
                        mask.at(y, x) = prim.label;
                    }
                }
            }
        s.masks.push_back(std::move(mask));
        const Vec3 to_a = a - cam.translation;
        const auto hit = with_occluder ? occluder.intersect(cam.translation, to_a.normalized()) : std::nullopt;
        out.visible.push_back(!(hit && *hit < to_a.norm()));
    }
    return out;
}

StyleImage build_style_image(StyleKind kind, std::uint64_t seed, const Extractor& texture, const Extractor* semantic,
                             int size) {
    Rng rng(seed);
    StyleImage out;
    out.image = Image(size, size, 3);
    out.mask = LabelMask(size, size, 0);
    const std::size_t ia = static_cast<std::size_t>(rng.uniform() * kStylePalette.size()) % kStylePalette.size();
    const std::size_t ib = (ia + 1 + static_cast<std::size_t>(rng.uniform() * (kStylePalette.size() - 1))) %
                           kStylePalette.size();
    const Vec3 ca = kStylePalette[ia], cb = kStylePalette[ib];
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double period = rng.uniform(5.0, 9.0);
    const DotField dots = make_dots(rng, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            Vec3 rgb = Vec3::Zero();
            switch (kind) {
                case StyleKind::Stripes: rgb = stripes_at(x, y, angle, period, ca, cb); break;
                case StyleKind::Dots: rgb = dots.hit(x, y) ? cb : ca; break;
                case StyleKind::TwoRegion:
                    if (x < size / 2) {
                        rgb = stripes_at(x, y, angle, period, ca, 0.6 * ca);
                    } else {
                        rgb = dots.hit(x, y) ? 0.5 * cb : cb;
                        out.mask.at(y, x) = 1;
                    }
                    break;
            }
            for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = std::clamp(rgb[c], 0.0, 1.0);
        }
    out.texture = extract(texture, out.image);
    if (semantic)
        out.semantic = resample_bilinear(extract(*semantic, out.image), out.texture.height, out.texture.width);
    return out;
}

Extractor fixture_semantic_extractor() {
    std::vector<Vec3> corners;
    for (int i = 0; i < 8; ++i) corners.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
    return Extractor::soft_palette(std::move(corners), 8.0);
}

}  // namespace rfstyle
