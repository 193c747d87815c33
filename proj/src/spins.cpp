#include "mrdust/spins.hpp"

#include <Eigen/Geometry>
#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace mrdust {

void TissueParams::validate() const {
    if (!(t2_ms > 0.0) || !(t2_ms <= t1_ms))
        throw ConfigError(fmt::format("tissue requires 0 < t2 <= t1 (t1={}, t2={})", t1_ms, t2_ms));
    if (!(t2_star_ms > 0.0) || !(t2_star_ms <= t2_ms))
        throw ConfigError(fmt::format("tissue requires 0 < t2* <= t2 (t2={}, t2*={})", t2_ms, t2_star_ms));
}

double TissueParams::t2_prime_ms() const {
    const double rate = 1.0 / t2_star_ms - 1.0 / t2_ms;
    if (rate <= 0.0) return std::numeric_limits<double>::infinity();
    return 1.0 / rate;
}

void VoxelSpec::validate() const {
    if (!(width_x_mm > 0.0 && width_y_mm > 0.0 && width_z_mm > 0.0))
        throw ConfigError("voxel widths must be positive");
    if (grid_nx < 1 || grid_ny < 1 || grid_nz < 1) throw ConfigError("voxel grid counts must be >= 1");
}

std::vector<Vec3> voxel_grid_points_um(const VoxelSpec& voxel) {
    voxel.validate();
    std::vector<Vec3> pts;
    pts.reserve(voxel.count());
    const Vec3 width(voxel.width_x_mm, voxel.width_y_mm, voxel.width_z_mm);
    const Eigen::Vector3i n(voxel.grid_nx, voxel.grid_ny, voxel.grid_nz);
    const Vec3 origin = (voxel.center_mm - width / 2.0) * 1000.0;
    const Vec3 step = width.cwiseQuotient(n.cast<double>()) * 1000.0;
    for (int k = 0; k < n.z(); ++k)
        for (int j = 0; j < n.y(); ++j)
            for (int i = 0; i < n.x(); ++i)
                pts.emplace_back(origin + step.cwiseProduct(Vec3(i + 0.5, j + 0.5, k + 0.5)));
    return pts;
}

double equilibrium_magnetization(const PhysicalConstants& c, double volume_m3) {
    if (!(c.b0_t > 0.0 && c.temperature_k > 0.0 && c.spin_density_per_m3 > 0.0 && c.gamma_over_2pi_mhz_per_t > 0.0))
        throw DomainError("equilibrium_magnetization: constants must be positive");
    if (volume_m3 < 0.0) throw DomainError("equilibrium_magnetization: negative volume");
    constexpr double spin = 0.5;
    const double g = c.gamma();
    return c.spin_density_per_m3 * g * g * kHbar * kHbar * spin * (spin + 1.0) * c.b0_t * volume_m3 /
           (3.0 * kBoltzmann * c.temperature_k);
}

double larmor_frequency_mhz(double b0_t) {
    if (b0_t < 0.0) throw DomainError("larmor_frequency: negative B0");
    return kGammaOver2PiMHzPerT * b0_t;
}

double SpinEnsemble::max_magnitude_squared() const {
    if (size() == 0) return 0.0;
    return (m_xy.abs2() + m_z.square()).maxCoeff();
}

SpinEnsemble build_ensemble(const VoxelSpec& voxel, const TissueParams& tissue, const FieldMap& field,
                            InhomogeneityMode mode, std::uint64_t seed, double gamma) {
    tissue.validate();
    const auto grid = voxel_grid_points_um(voxel);
    if (grid.size() != field.size())
        throw ConfigError(fmt::format("field map has {} points but voxel grid has {}", field.size(), grid.size()));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if ((grid[i] - field.points_um[i]).norm() > 1e-6)
            throw ConfigError(fmt::format("field map point {} does not match the voxel grid", i));
    }

    const auto n = static_cast<Eigen::Index>(grid.size());
    SpinEnsemble e;
    e.tissue = tissue;
    e.mode = mode;
    e.positions_um.resize(3, n);
    for (Eigen::Index i = 0; i < n; ++i) e.positions_um.col(i) = grid[static_cast<std::size_t>(i)];
    e.induced_offres_per_amp = gamma * field.bz_per_amp;
    e.natural_offres = Eigen::ArrayXd::Zero(n);
    e.m_xy = Eigen::ArrayXcd::Zero(n);
    e.m_z = Eigen::ArrayXd::Ones(n);

    const double t2p = tissue.t2_prime_ms();
    if (mode == InhomogeneityMode::Explicit && std::isfinite(t2p)) {
        // Cauchy with half-width 1/T2' so the ensemble average decays as exp(-t/T2')
        const double half_width = 1000.0 / t2p;  // rad/s
        std::mt19937_64 rng(seed);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
            e.natural_offres(i) = half_width * std::tan(std::numbers::pi * (u - 0.5));
        }
    }
    return e;
}

void apply_rf(SpinEnsemble& e, double flip_deg, double phase_deg) {
    const double phi = phase_deg * std::numbers::pi / 180.0;
    const Eigen::Matrix3d r =
        Eigen::AngleAxisd(flip_deg * std::numbers::pi / 180.0, Vec3(std::cos(phi), std::sin(phi), 0.0))
            .toRotationMatrix();
    const auto n = static_cast<std::ptrdiff_t>(e.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const Vec3 m(e.m_xy(i).real(), e.m_xy(i).imag(), e.m_z(i));
        const Vec3 out = r * m;
        e.m_xy(i) = Complex(out.x(), out.y());
        e.m_z(i) = out.z();
    }
    e.dephasing_ms = 0.0;
}

void evolve(SpinEnsemble& e, double dt_ms, double coil_current_a) {
    if (dt_ms < 0.0) throw DomainError("evolve: negative dt");
    if (dt_ms == 0.0) return;
    const double e1 = std::exp(-dt_ms / e.tissue.t1_ms);
    const double e2 = std::exp(-dt_ms / e.tissue.t2_ms);
    const double dt_s = dt_ms * 1e-3;
    e.m_z = 1.0 + (e.m_z - 1.0) * e1;
    e.dephasing_ms += dt_ms;

    if (e.mode == InhomogeneityMode::Lumped && coil_current_a == 0.0) {
        e.m_xy *= e2;
        return;
    }
    const auto n = static_cast<std::ptrdiff_t>(e.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const double phase = (e.natural_offres(i) + coil_current_a * e.induced_offres_per_amp(i)) * dt_s;
        e.m_xy(i) *= std::polar(e2, -phase);
    }
}

void refocus(SpinEnsemble& e) {
    e.m_xy = e.m_xy.conjugate();
    e.m_z = -e.m_z;
    e.dephasing_ms = -e.dephasing_ms;
}

void spoil(SpinEnsemble& e) {
    e.m_xy.setZero();
    e.dephasing_ms = 0.0;
}

Complex readout(const SpinEnsemble& e, double m0) {
    if (e.size() == 0) return {0.0, 0.0};
    Complex mean = pairwise_sum(e.m_xy) / static_cast<double>(e.size());
    if (e.mode == InhomogeneityMode::Lumped) {
        const double t2p = e.tissue.t2_prime_ms();
        if (std::isfinite(t2p)) mean *= std::exp(-std::abs(e.dephasing_ms) / t2p);
    }
    return m0 * mean;
}

}  // namespace mrdust
