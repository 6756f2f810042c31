#include "rfstyle/render.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Geometry>

#include "rfstyle/error.hpp"
#include "rfstyle/parallel.hpp"

namespace rfstyle {

void Camera::validate() const {
    if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
        throw Error(ErrorCode::Contract, "camera rotation is not orthonormal");
    if (!(near_plane > 0.0 && near_plane < far_plane)) throw Error(ErrorCode::Contract, "camera needs 0 < near < far");
    if (width < 1 || height < 1) throw Error(ErrorCode::Contract, "camera size must be positive");
    if (!(focal > 0.0)) throw Error(ErrorCode::Contract, "camera focal must be positive");
}

Vec3 Camera::ray_direction(int x, int y) const {
    const Vec3 d((x + 0.5 - 0.5 * width) / focal, (y + 0.5 - 0.5 * height) / focal, 1.0);
    return (rotation * d).normalized();
}

Vec3 Camera::project(const Vec3& world) const {
    const Vec3 c = rotation.transpose() * (world - translation);
    return {focal * c.x() / c.z() + 0.5 * width, focal * c.y() / c.z() + 0.5 * height, c.z()};
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width, int height,
                       double near_plane, double far_plane) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-12) throw Error(ErrorCode::Contract, "look_at up vector is parallel to the view direction");
    right.normalize();
    const Vec3 down = forward.cross(right);
    Camera cam;
    cam.rotation.col(0) = right;
    cam.rotation.col(1) = down;
    cam.rotation.col(2) = forward;
    cam.translation = eye;
    cam.focal = focal;
    cam.width = width;
    cam.height = height;
    cam.near_plane = near_plane;
    cam.far_plane = far_plane;
    return cam;
}

Footprint RenderAux::footprint(const Sample& s) const {
    const std::size_t nx = grid_dims[0];
    const std::size_t nxy = nx * grid_dims[1];
    Footprint fp;
    int k = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx, ++k) {
                fp.voxel[k] = static_cast<std::uint32_t>(s.base + dx + dy * nx + dz * nxy);
                fp.weight[k] = (dx ? s.fx : 1.0 - s.fx) * (dy ? s.fy : 1.0 - s.fy) * (dz ? s.fz : 1.0 - s.fz);
            }
    return fp;
}

namespace {

bool clip_to_bbox(const VoxelGrid& grid, const Vec3& origin, const Vec3& dir, double& t0, double& t1) {
    for (int a = 0; a < 3; ++a) {
        const double lo = grid.bbox_min()[a];
        const double hi = grid.bbox_max()[a];
        if (dir[a] == 0.0) {
            if (origin[a] < lo || origin[a] > hi) return false;
            continue;
        }
        double ta = (lo - origin[a]) / dir[a];
        double tb = (hi - origin[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return t1 > t0;
}

// Lower cell corner and fractional offsets of a position, clamped into the lattice.
void locate(const VoxelGrid& grid, const Vec3& inv_spacing, const Vec3& p, std::uint32_t& base, double f[3]) {
    const auto& dims = grid.dims();
    int idx[3];
    for (int a = 0; a < 3; ++a) {
        const double u = std::clamp((p[a] - grid.bbox_min()[a]) * inv_spacing[a], 0.0, double(dims[a] - 1));
        int i = static_cast<int>(u);
        if (i > dims[a] - 2) i = dims[a] - 2;
        idx[a] = i;
        f[a] = u - i;
    }
    base = static_cast<std::uint32_t>(grid.index(idx[0], idx[1], idx[2]));
}

Image clamp_mask(const RenderAux& aux, const Image& pixel_grad) {
    Image g = pixel_grad;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        const double v = aux.raw.data[i];
        if (v < 0.0 || v > 1.0) g.data[i] = 0.0;
    }
    return g;
}

void check_backward_inputs(const VoxelGrid& grid, const RenderAux& aux, const Image& pixel_grad) {
    if (aux.grid_version != grid.version() || aux.grid_dims != grid.dims() || aux.sh_degree != grid.sh_degree())
        throw Error(ErrorCode::Stale, "render aux was produced from a different grid state");
    if (pixel_grad.height != aux.height || pixel_grad.width != aux.width || pixel_grad.channels != 3)
        throw Error(ErrorCode::Dimension, "pixel gradient does not match the rendered image");
}

}  // namespace

std::vector<SamplePoint> march_ray(const VoxelGrid& grid, const Vec3& origin, const Vec3& direction, double step,
                                   double t_near, double t_far) {
    if (!(step > 0.0)) throw Error(ErrorCode::Contract, "march step must be positive");
    std::vector<SamplePoint> out;
    double t0 = std::max(0.0, t_near);
    double t1 = t_far;
    if (!clip_to_bbox(grid, origin, direction, t0, t1)) return out;
    for (double t = t0 + 0.5 * step; t < t1; t += step) out.push_back({origin + t * direction, direction, step});
    return out;
}

CompositeResult composite(std::span<const double> sigma, std::span<const std::array<double, 3>> rgb,
                          std::span<const double> delta, const Vec3& background) {
    if (sigma.size() != rgb.size() || sigma.size() != delta.size())
        throw Error(ErrorCode::Dimension, "composite inputs differ in length");
    CompositeResult r;
    r.weights.resize(sigma.size());
    r.transmittance.resize(sigma.size());
    double optical = 0.0;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        if (sigma[i] < 0.0) throw Error(ErrorCode::Contract, "negative density in composite");
        if (!(delta[i] > 0.0)) throw Error(ErrorCode::Contract, "non-positive step in composite");
        const double T = std::exp(-optical);
        const double w = T * (1.0 - std::exp(-sigma[i] * delta[i]));
        r.transmittance[i] = T;
        r.weights[i] = w;
        for (int c = 0; c < 3; ++c) r.rgb[c] += w * rgb[i][c];
        optical += sigma[i] * delta[i];
    }
    r.residual = std::exp(-optical);
    for (int c = 0; c < 3; ++c) r.rgb[c] += r.residual * background[c];
    return r;
}

RenderResult render_view(const VoxelGrid& grid, const Camera& camera, const RenderOptions& options) {
    camera.validate();
    const double step = options.step > 0.0 ? options.step : 0.5 * grid.min_spacing();
    const int H = camera.height, W = camera.width;
    const int nb = grid.basis_count();
    const int nc = grid.coeffs_per_voxel();
    const Vec3 s = grid.spacing();
    const Vec3 inv_spacing(1.0 / s[0], 1.0 / s[1], 1.0 / s[2]);
    const std::size_t nx = grid.dims()[0];
    const std::size_t nxy = nx * grid.dims()[1];
    const auto density = grid.density();
    const auto sh = grid.sh();

    RenderResult out;
    RenderAux& aux = out.aux;
    aux.height = H;
    aux.width = W;
    aux.grid_dims = grid.dims();
    aux.sh_degree = grid.sh_degree();
    aux.grid_version = grid.version();
    aux.background = options.background;
    aux.directions.resize(static_cast<std::size_t>(H) * W);
    aux.residual.assign(static_cast<std::size_t>(H) * W, 1.0);
    aux.terminated.assign(static_cast<std::size_t>(H) * W, 0);
    aux.raw = Image(H, W, 3);

    std::vector<std::vector<RenderAux::Sample>> rows(H);
    std::vector<std::vector<std::uint32_t>> row_counts(H);

    parallel_for(static_cast<std::size_t>(H), [&](std::size_t y) {
        auto& row = rows[y];
        auto& counts = row_counts[y];
        counts.assign(W, 0);
        std::array<double, 9> basis{};
        std::array<double, 27> coeff{};
        for (int x = 0; x < W; ++x) {
            const std::size_t p = y * W + x;
            const Vec3 dir = camera.ray_direction(x, static_cast<int>(y));
            aux.directions[p] = dir;
            sh_basis(grid.sh_degree(), dir, basis);
            double t0 = std::max(0.0, camera.near_plane);
            double t1 = camera.far_plane;
            double T = 1.0;
            std::array<double, 3> color{};
            std::uint32_t n = 0;
            if (clip_to_bbox(grid, camera.translation, dir, t0, t1)) {
                for (double t = t0 + 0.5 * step; t < t1; t += step) {
                    if (T < options.termination) {
                        aux.terminated[p] = 1;
                        break;
                    }
                    const Vec3 pos = camera.translation + t * dir;
                    RenderAux::Sample smp;
                    double f[3];
                    locate(grid, inv_spacing, pos, smp.base, f);
                    smp.fx = f[0];
                    smp.fy = f[1];
                    smp.fz = f[2];
                    double raw_density = 0.0;
                    std::fill(coeff.begin(), coeff.begin() + nc, 0.0);
                    int k = 0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx, ++k) {
                                const double w = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) *
                                                 (dz ? f[2] : 1.0 - f[2]);
                                if (w == 0.0) continue;
                                const std::size_t v = smp.base + dx + dy * nx + dz * nxy;
                                raw_density += w * density[v];
                                const float* c = sh.data() + v * nc;
                                for (int j = 0; j < nc; ++j) coeff[j] += w * c[j];
                            }
                    smp.sigma = activate_density(raw_density);
                    smp.step = step;
                    smp.transmittance = T;
                    const double alpha = 1.0 - std::exp(-smp.sigma * step);
                    smp.weight = T * alpha;
                    for (int ch = 0; ch < 3; ++ch) {
                        double v = 0.0;
                        for (int b = 0; b < nb; ++b) v += coeff[ch * nb + b] * basis[b];
                        smp.rgb[ch] = v;
                        color[ch] += smp.weight * v;
                    }
                    T *= std::exp(-smp.sigma * step);
                    row.push_back(smp);
                    ++n;
                }
            }
            counts[x] = n;
            aux.residual[p] = T;
            for (int ch = 0; ch < 3; ++ch) aux.raw.at(static_cast<int>(y), x, ch) = color[ch] + T * options.background[ch];
        }
    });

    aux.offsets.resize(static_cast<std::size_t>(H) * W + 1);
    std::size_t total = 0;
    for (int y = 0; y < H; ++y) total += rows[y].size();
    aux.samples.reserve(total);
    std::uint32_t off = 0;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            aux.offsets[static_cast<std::size_t>(y) * W + x] = off;
            off += row_counts[y][x];
        }
        aux.samples.insert(aux.samples.end(), rows[y].begin(), rows[y].end());
    }
    aux.offsets.back() = off;

    out.image = aux.raw;
    for (double& v : out.image.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

std::vector<double> backward_radiance(const VoxelGrid& grid, const RenderAux& aux, const Image& pixel_grad) {
    std::vector<double> out(grid.sh().size(), 0.0);
    accumulate_radiance_gradient(grid, aux, pixel_grad, out);
    return out;
}

void accumulate_radiance_gradient(const VoxelGrid& grid, const RenderAux& aux, const Image& pixel_grad,
                                  std::span<double> out) {
    check_backward_inputs(grid, aux, pixel_grad);
    if (out.size() != grid.sh().size()) throw Error(ErrorCode::Dimension, "sh gradient buffer size");
    const Image g = clamp_mask(aux, pixel_grad);
    const int nb = grid.basis_count();
    const int nc = grid.coeffs_per_voxel();
    std::array<double, 9> basis{};
    for (std::size_t p = 0; p < g.pixels(); ++p) {
        const double* gp = g.data.data() + p * 3;
        if (gp[0] == 0.0 && gp[1] == 0.0 && gp[2] == 0.0) continue;
        sh_basis(aux.sh_degree, aux.directions[p], basis);
        for (const auto& s : aux.pixel_samples(p)) {
            if (s.weight == 0.0) continue;
            const Footprint fp = aux.footprint(s);
            for (int k = 0; k < 8; ++k) {
                const double tw = fp.weight[k] * s.weight;
                if (tw == 0.0) continue;
                double* dst = out.data() + static_cast<std::size_t>(fp.voxel[k]) * nc;
                for (int ch = 0; ch < 3; ++ch) {
                    const double gc = tw * gp[ch];
                    for (int b = 0; b < nb; ++b) dst[ch * nb + b] += gc * basis[b];
                }
            }
        }
    }
}

void accumulate_density_gradient(const VoxelGrid& grid, const RenderAux& aux, const Image& pixel_grad,
                                 std::span<double> out) {
    check_backward_inputs(grid, aux, pixel_grad);
    if (out.size() != grid.density().size()) throw Error(ErrorCode::Dimension, "density gradient buffer size");
    const Image g = clamp_mask(aux, pixel_grad);
    for (std::size_t p = 0; p < g.pixels(); ++p) {
        const double* gp = g.data.data() + p * 3;
        if (gp[0] == 0.0 && gp[1] == 0.0 && gp[2] == 0.0) continue;
        const auto samples = aux.pixel_samples(p);
        // d color / d sigma_k = delta_k (T_{k+1} rgb_k - sum_{i>k} w_i rgb_i - T_res bg)
        double tail = 0.0;
        for (int ch = 0; ch < 3; ++ch) tail += gp[ch] * aux.residual[p] * aux.background[ch];
        for (std::size_t k = samples.size(); k-- > 0;) {
            const auto& s = samples[k];
            double g_rgb = 0.0;
            for (int ch = 0; ch < 3; ++ch) g_rgb += gp[ch] * s.rgb[ch];
            const double t_next = s.transmittance * std::exp(-s.sigma * s.step);
            const double d_sigma = s.step * (t_next * g_rgb - tail);
            tail += s.weight * g_rgb;
            if (s.sigma <= 0.0) continue;
            const Footprint fp = aux.footprint(s);
            for (int j = 0; j < 8; ++j) out[fp.voxel[j]] += fp.weight[j] * d_sigma;
        }
    }
}

}  // namespace rfstyle
