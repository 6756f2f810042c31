#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "rfstyle/grid.hpp"
#include "rfstyle/image.hpp"

namespace rfstyle {

/// Pinhole camera. rotation is camera-to-world with columns (right, down,
/// forward); translation is the camera center in world coordinates.
struct Camera {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double focal = 1.0;
    int width = 1;
    int height = 1;
    double near_plane = 0.01;
    double far_plane = 100.0;

    /// Throws Contract on a non-orthonormal rotation, bad clip planes or size.
    void validate() const;
    /// Unit world-space direction through pixel (x, y), sampled at the pixel center.
    Vec3 ray_direction(int x, int y) const;
    /// Continuous pixel coordinates of a world point (pixel centers at +0.5);
    /// the third component is the depth along the optical axis.
    Vec3 project(const Vec3& world) const;

    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
                          int height, double near_plane = 0.01, double far_plane = 100.0);
};

struct RenderOptions {
    /// Ray-march step; 0 selects half the smallest voxel edge.
    double step = 0.0;
    Vec3 background = Vec3::Zero();
    /// Rays stop once transmittance drops below this value.
    double termination = 1e-4;
};

/// Everything backward needs, recorded by render_view.
struct RenderAux {
    struct Sample {
        std::uint32_t base = 0;  // lower-corner voxel of the trilinear cell
        double fx = 0, fy = 0, fz = 0;
        double sigma = 0;
        double step = 0;
        double weight = 0;
        double transmittance = 1;
        std::array<double, 3> rgb{};
    };

    int height = 0;
    int width = 0;
    std::array<int, 3> grid_dims{};
    int sh_degree = 0;
    std::uint64_t grid_version = 0;
    Vec3 background = Vec3::Zero();
    std::vector<std::uint32_t> offsets;  // samples of pixel p are [offsets[p], offsets[p+1])
    std::vector<Sample> samples;
    std::vector<Vec3> directions;
    std::vector<double> residual;  // T_{N+1}: background weight per pixel
    std::vector<std::uint8_t> terminated;
    Image raw;  // composited color before the [0,1] clamp

    std::span<const Sample> pixel_samples(std::size_t p) const {
        return {samples.data() + offsets[p], samples.data() + offsets[p + 1]};
    }
    Footprint footprint(const Sample& s) const;
};

struct RenderResult {
    Image image;  // clamped to [0,1]
    RenderAux aux;
};

/// Uniform samples at t_entry + step/2 + k*step strictly inside the bbox and
/// within [t_near, t_far]. Returns an empty list on a miss.
std::vector<SamplePoint> march_ray(const VoxelGrid& grid, const Vec3& origin, const Vec3& direction, double step,
                                   double t_near = 0.0,
                                   double t_far = std::numeric_limits<double>::infinity());

struct CompositeResult {
    std::array<double, 3> rgb{};
    std::vector<double> weights;
    std::vector<double> transmittance;
    double residual = 1.0;
};

/// w_i = T_i (1 - exp(-sigma_i delta_i)), T_i = exp(-sum_{j<i} sigma_j delta_j),
/// color = sum_i w_i rgb_i + T_{N+1} * background.
CompositeResult composite(std::span<const double> sigma, std::span<const std::array<double, 3>> rgb,
                          std::span<const double> delta, const Vec3& background = Vec3::Zero());

RenderResult render_view(const VoxelGrid& grid, const Camera& camera, const RenderOptions& options = {});

/// Gradient of a scalar loss w.r.t. the SH coefficients, given dL/d(clamped
/// image). Same layout as grid.sh(). Throws Stale if the grid changed since
/// the render that produced aux.
std::vector<double> backward_radiance(const VoxelGrid& grid, const RenderAux& aux, const Image& pixel_grad);

/// Accumulating form of backward_radiance; out has grid.sh().size() entries.
void accumulate_radiance_gradient(const VoxelGrid& grid, const RenderAux& aux, const Image& pixel_grad,
                                  std::span<double> out);

/// Gradient w.r.t. raw density (ReLU applied after interpolation). Only used by
/// photometric pretraining; stylization never touches density.
void accumulate_density_gradient(const VoxelGrid& grid, const RenderAux& aux, const Image& pixel_grad,
                                 std::span<double> out);

}  // namespace rfstyle
