#ifndef MRDUST_SPINS_HPP
#define MRDUST_SPINS_HPP

#include "mrdust/common.hpp"
#include "mrdust/magnetics.hpp"

#include <cstdint>
#include <vector>

namespace mrdust {

/// Relaxation times in ms. Requires 0 < t2 <= t1 and t2_star <= t2.
struct TissueParams {
    double t1_ms = 832.0;
    double t2_ms = 80.0;
    double t2_star_ms = 44.7;

    void validate() const;
    /// Inhomogeneity-only decay constant: 1/T2' = 1/T2* - 1/T2. Infinite when T2* == T2.
    [[nodiscard]] double t2_prime_ms() const;
};

/// White matter at 3 T.
inline constexpr TissueParams kWhiteMatter3T{832.0, 80.0, 44.7};

/// Cuboid voxel sampled on a cell-centred grid. Lengths in mm.
struct VoxelSpec {
    double width_x_mm = 2.0;
    double width_y_mm = 2.0;
    double width_z_mm = 2.0;
    int grid_nx = 100;
    int grid_ny = 100;
    int grid_nz = 100;
    Vec3 center_mm = Vec3::Zero();

    void validate() const;
    [[nodiscard]] std::size_t count() const {
        return static_cast<std::size_t>(grid_nx) * static_cast<std::size_t>(grid_ny) * static_cast<std::size_t>(grid_nz);
    }
    [[nodiscard]] double volume_m3() const { return width_x_mm * width_y_mm * width_z_mm * 1e-9; }

    static VoxelSpec cube(double width_mm, int n) { return {width_mm, width_mm, width_mm, n, n, n, Vec3::Zero()}; }
};

/// Grid points in µm, x fastest, then y, then z.
std::vector<Vec3> voxel_grid_points_um(const VoxelSpec& voxel);

struct PhysicalConstants {
    double gamma_over_2pi_mhz_per_t = kGammaOver2PiMHzPerT;
    double b0_t = 3.0;
    double temperature_k = 310.0;
    double spin_density_per_m3 = 6.7e28;

    [[nodiscard]] double gamma() const { return 2.0 * std::numbers::pi * gamma_over_2pi_mhz_per_t * 1e6; }
};

/// Equilibrium moment N·γ²·ħ²·I(I+1)·B0·V/(3kT) with I = 1/2, in J/T.
double equilibrium_magnetization(const PhysicalConstants& constants, double volume_m3);

/// γ/2π · B0 in MHz.
double larmor_frequency_mhz(double b0_t);

enum class InhomogeneityMode {
    Explicit,  ///< per-spin Lorentzian off-resonance realises T2'
    Lumped,    ///< T2' applied analytically at readout
};

/// Quantised voxel state. Off-resonances are in rad/s; m_xy and m_z are
/// fractions of each spin's equilibrium share.
///
/// Transverse phasor convention: a right-handed rotation of +90 deg about
/// +x takes (m_xy, m_z) = (0, 1) to (-i, 0).
struct SpinEnsemble {
    Eigen::Matrix3Xd positions_um;
    Eigen::ArrayXd natural_offres;          // rad/s
    Eigen::ArrayXd induced_offres_per_amp;  // rad/(s·A)
    Eigen::ArrayXcd m_xy;
    Eigen::ArrayXd m_z;

    TissueParams tissue;
    InhomogeneityMode mode = InhomogeneityMode::Lumped;
    /// Net free-dephasing time of the natural inhomogeneity (ms). Advances
    /// with evolve, flips sign on refocus, resets on excitation or spoiling.
    double dephasing_ms = 0.0;

    [[nodiscard]] Eigen::Index size() const { return m_z.size(); }
    /// max over spins of |m_xy|² + m_z².
    [[nodiscard]] double max_magnitude_squared() const;
};

SpinEnsemble build_ensemble(const VoxelSpec& voxel, const TissueParams& tissue, const FieldMap& field,
                            InhomogeneityMode mode, std::uint64_t seed, double gamma = kGamma);

/// Hard pulse: rigid rotation by `flip_deg` about the transverse axis at `phase_deg` from +x.
void apply_rf(SpinEnsemble& ensemble, double flip_deg, double phase_deg = 0.0);

/// Free precession and relaxation for `dt_ms` at constant coil current.
void evolve(SpinEnsemble& ensemble, double dt_ms, double coil_current_a);

/// Ideal refocusing: conjugate every phasor and invert m_z.
void refocus(SpinEnsemble& ensemble);

/// Perfect spoiling: transverse magnetisation destroyed, m_z kept.
void spoil(SpinEnsemble& ensemble);

/// m0 · mean(m_xy), with the T2' envelope in lumped mode.
Complex readout(const SpinEnsemble& ensemble, double m0);

}  // namespace mrdust

#endif  // MRDUST_SPINS_HPP
