#include "rfstyle/grid.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "rfstyle/error.hpp"

namespace rfstyle {

namespace {

std::uint64_t next_version() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

// Real SH constants (graphics convention, as used by Plenoxels).
constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                           0.5462742152960396};

}  // namespace

VoxelGrid::VoxelGrid(std::array<int, 3> dims, const Vec3& bbox_min, const Vec3& bbox_max, int sh_degree)
    : dims_(dims), bbox_min_(bbox_min), bbox_max_(bbox_max), sh_degree_(sh_degree), version_(next_version()) {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 2) throw Error(ErrorCode::Contract, "grid dims must be >= 2 on every axis");
        if (!(bbox_max[a] > bbox_min[a])) throw Error(ErrorCode::Contract, "bbox_max must exceed bbox_min");
    }
    if (sh_degree < 0 || sh_degree > kMaxShDegree) throw Error(ErrorCode::Contract, "sh degree must be in [0, 2]");
    const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    density_.assign(n, 0.0f);
    sh_.assign(n * coeffs_per_voxel(), 0.0f);
}

Vec3 VoxelGrid::spacing() const {
    Vec3 s;
    for (int a = 0; a < 3; ++a) s[a] = (bbox_max_[a] - bbox_min_[a]) / (dims_[a] - 1);
    return s;
}

double VoxelGrid::min_spacing() const { return spacing().minCoeff(); }

std::array<int, 3> VoxelGrid::coords(std::size_t voxel) const {
    const int ix = static_cast<int>(voxel % dims_[0]);
    const std::size_t rest = voxel / dims_[0];
    return {ix, static_cast<int>(rest % dims_[1]), static_cast<int>(rest / dims_[1])};
}

Vec3 VoxelGrid::lattice_point(int ix, int iy, int iz) const {
    const Vec3 s = spacing();
    return bbox_min_ + Vec3(ix * s[0], iy * s[1], iz * s[2]);
}

std::size_t VoxelGrid::nearest_voxel(const Vec3& position) const {
    const Vec3 s = spacing();
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) {
        const double u = std::round((position[a] - bbox_min_[a]) / s[a]);
        c[a] = std::clamp(static_cast<int>(u), 0, dims_[a] - 1);
    }
    return index(c[0], c[1], c[2]);
}

bool VoxelGrid::contains(const Vec3& position, double tolerance) const {
    for (int a = 0; a < 3; ++a) {
        const double slack = tolerance * (bbox_max_[a] - bbox_min_[a]);
        if (!(position[a] >= bbox_min_[a] - slack && position[a] <= bbox_max_[a] + slack)) return false;
    }
    return true;
}

std::span<float> VoxelGrid::mutable_density() {
    if (frozen_density_) throw Error(ErrorCode::Contract, "density is frozen");
    touch();
    return density_;
}

std::span<float> VoxelGrid::mutable_sh() {
    touch();
    return sh_;
}

void VoxelGrid::touch() { version_ = next_version(); }

Footprint trilinear_footprint(const VoxelGrid& grid, const Vec3& position) {
    if (!grid.contains(position, 1e-9)) throw Error(ErrorCode::OutOfBounds, "sample position outside the grid bbox");
    const auto& dims = grid.dims();
    const Vec3 s = grid.spacing();
    std::array<int, 3> base{};
    std::array<double, 3> frac{};
    for (int a = 0; a < 3; ++a) {
        const double u = std::clamp((position[a] - grid.bbox_min()[a]) / s[a], 0.0, double(dims[a] - 1));
        int i = static_cast<int>(std::floor(u));
        if (i > dims[a] - 2) i = dims[a] - 2;
        base[a] = i;
        frac[a] = u - i;
    }
    Footprint fp;
    int k = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx, ++k) {
                fp.voxel[k] = static_cast<std::uint32_t>(grid.index(base[0] + dx, base[1] + dy, base[2] + dz));
                fp.weight[k] = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                               (dz ? frac[2] : 1.0 - frac[2]);
            }
    return fp;
}

GridSample trilinear_sample(const VoxelGrid& grid, const Vec3& position) {
    const Footprint fp = trilinear_footprint(grid, position);
    const int nc = grid.coeffs_per_voxel();
    GridSample out;
    out.sh.assign(nc, 0.0);
    for (int k = 0; k < 8; ++k) {
        const double w = fp.weight[k];
        if (w == 0.0) continue;
        out.density_raw += w * grid.density()[fp.voxel[k]];
        const auto coeffs = grid.sh(fp.voxel[k]);
        for (int j = 0; j < nc; ++j) out.sh[j] += w * coeffs[j];
    }
    return out;
}

void sh_basis(int degree, const Vec3& d, std::span<double> out) {
    const std::size_t need = static_cast<std::size_t>(sh_basis_count(degree));
    if (degree < 0 || degree > kMaxShDegree || out.size() < need)
        throw Error(ErrorCode::Dimension, "sh basis buffer too small for degree");
    if (std::abs(d.norm() - 1.0) > 1e-6) throw Error(ErrorCode::Contract, "direction must be unit length");
    out[0] = kC0;
    if (degree >= 1) {
        out[1] = -kC1 * d.y();
        out[2] = kC1 * d.z();
        out[3] = -kC1 * d.x();
    }
    if (degree >= 2) {
        const double x = d.x(), y = d.y(), z = d.z();
        out[4] = kC2[0] * x * y;
        out[5] = kC2[1] * y * z;
        out[6] = kC2[2] * (2.0 * z * z - x * x - y * y);
        out[7] = kC2[3] * x * z;
        out[8] = kC2[4] * (x * x - y * y);
    }
}

std::array<double, 3> eval_radiance(std::span<const double> sh, int degree, const Vec3& direction) {
    const int nb = sh_basis_count(degree);
    if (sh.size() != static_cast<std::size_t>(kColorChannels * nb))
        throw Error(ErrorCode::Dimension, "sh coefficient count does not match degree");
    std::array<double, 9> basis{};
    sh_basis(degree, direction, basis);
    std::array<double, 3> rgb{};
    for (int c = 0; c < kColorChannels; ++c)
        for (int b = 0; b < nb; ++b) rgb[c] += sh[c * nb + b] * basis[b];
    return rgb;
}

}  // namespace rfstyle
