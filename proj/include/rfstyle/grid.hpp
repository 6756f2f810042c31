#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace rfstyle {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kMaxShDegree = 2;
inline constexpr int kColorChannels = 3;

constexpr int sh_basis_count(int degree) { return (degree + 1) * (degree + 1); }

/// Dense voxel radiance field. Voxel values live on lattice points: lattice
/// point i along an axis sits at bbox_min + i * (bbox_max - bbox_min) / (n - 1).
///
/// Storage is float so checkpoints round-trip bit-exactly; arithmetic is double.
/// Every mutable accessor stamps a new version, which render aux uses to
/// reject stale gradients.
class VoxelGrid {
public:
    VoxelGrid(std::array<int, 3> dims, const Vec3& bbox_min, const Vec3& bbox_max, int sh_degree = 1);

    const std::array<int, 3>& dims() const { return dims_; }
    const Vec3& bbox_min() const { return bbox_min_; }
    const Vec3& bbox_max() const { return bbox_max_; }
    int sh_degree() const { return sh_degree_; }
    int basis_count() const { return sh_basis_count(sh_degree_); }
    /// Coefficients per voxel: 3 channels × basis_count.
    int coeffs_per_voxel() const { return kColorChannels * basis_count(); }
    std::size_t voxel_count() const { return density_.size(); }
    Vec3 spacing() const;
    double min_spacing() const;

    std::size_t index(int ix, int iy, int iz) const {
        return static_cast<std::size_t>(ix) + static_cast<std::size_t>(dims_[0]) *
                                                  (static_cast<std::size_t>(iy) + static_cast<std::size_t>(dims_[1]) * iz);
    }
    std::array<int, 3> coords(std::size_t voxel) const;
    Vec3 lattice_point(int ix, int iy, int iz) const;
    /// Lattice voxel closest to a world position (position clamped into the bbox).
    std::size_t nearest_voxel(const Vec3& position) const;
    bool contains(const Vec3& position, double tolerance = 0.0) const;

    std::span<const float> density() const { return density_; }
    std::span<const float> sh() const { return sh_; }
    /// Coefficients for one voxel, laid out [channel][basis].
    std::span<const float> sh(std::size_t voxel) const {
        return {sh_.data() + voxel * coeffs_per_voxel(), static_cast<std::size_t>(coeffs_per_voxel())};
    }

    /// Throws Contract while the density is frozen.
    std::span<float> mutable_density();
    std::span<float> mutable_sh();

    bool density_frozen() const { return frozen_density_; }
    void freeze_density() { frozen_density_ = true; }
    void unfreeze_density() { frozen_density_ = false; }

    std::uint64_t version() const { return version_; }

private:
    void touch();

    std::array<int, 3> dims_;
    Vec3 bbox_min_;
    Vec3 bbox_max_;
    int sh_degree_;
    bool frozen_density_ = false;
    std::uint64_t version_;
    std::vector<float> density_;
    std::vector<float> sh_;
};

struct SamplePoint {
    Vec3 position;
    Vec3 direction;
    double step = 0.0;
};

/// The 8 lattice voxels surrounding a position and their trilinear weights.
struct Footprint {
    std::array<std::uint32_t, 8> voxel{};
    std::array<double, 8> weight{};
};

/// Throws OutOfBounds outside the bbox (a 1e-9 relative slack absorbs rounding
/// from ray clipping).
Footprint trilinear_footprint(const VoxelGrid& grid, const Vec3& position);

struct GridSample {
    double density_raw = 0.0;
    std::vector<double> sh;  // [channel][basis]
};

GridSample trilinear_sample(const VoxelGrid& grid, const Vec3& position);

/// Real SH basis values Y_b(direction) for b < (degree + 1)^2, written into out.
void sh_basis(int degree, const Vec3& direction, std::span<double> out);

/// rgb_c = sum_b sh[c][b] * Y_b(direction). Unclamped.
std::array<double, 3> eval_radiance(std::span<const double> sh, int degree, const Vec3& direction);

inline double activate_density(double raw) { return raw > 0.0 ? raw : 0.0; }

}  // namespace rfstyle
