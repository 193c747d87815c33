#ifndef MRDUST_CONTRAST_HPP
#define MRDUST_CONTRAST_HPP

#include "mrdust/common.hpp"
#include "mrdust/magnetics.hpp"
#include "mrdust/sequences.hpp"
#include "mrdust/spins.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mrdust {

/// Everything needed to rebuild one coil-in-voxel simulation.
struct SimulationConfig {
    CoilSpec coil;
    VoxelSpec voxel = VoxelSpec::cube(2.0, 100);
    TissueParams tissue = kWhiteMatter3T;
    PhysicalConstants constants;
    SequenceParams sequence;
    FieldOptions field;
    double current_a = 100e-6;
    InhomogeneityMode mode = InhomogeneityMode::Lumped;
    std::uint64_t seed = 1;
};

nlohmann::json to_json(const SimulationConfig& config);

struct ContrastResult {
    Complex s_on;
    Complex s_off;
    double s0 = 0.0;
    double c_n = 0.0;
    double absolute_contrast = 0.0;  ///< |s_off| - |s_on|
};

/// (|s_off| - |s_on|) / |s0|.
double normalized_contrast(Complex s_on, Complex s_off, Complex s0);

/// absolute_contrast / noise_std.
double cnr(double absolute_contrast, double noise_std);

/// Scales a scanner SNR measured at one voxel volume to another (signal is
/// proportional to volume, body noise is not) and multiplies by C_n.
double estimate_cnr_from_scanner(double measured_snr, double measured_voxel_volume, double target_voxel_volume,
                                 double c_n_at_te);

/// Volume-scaled SNR used by estimate_cnr_from_scanner.
double scale_snr_to_volume(double measured_snr, double measured_voxel_volume, double target_voxel_volume);

/// Dipole field at `distance_m` of the moment lost to coil-induced dephasing.
double receiver_field_contrast(double moment_difference, double distance_m);

/// Moment difference M0 · C_n for a voxel of the given volume.
double contrast_moment(const PhysicalConstants& constants, double voxel_volume_m3, double c_n);

/// Coil, field, and spin ensemble built once for a fixed geometry. Sequence
/// timing and current may vary freely between calls.
class VoxelModel {
public:
    explicit VoxelModel(const SimulationConfig& config);

    [[nodiscard]] const SimulationConfig& config() const { return config_; }
    [[nodiscard]] const SegmentSet& segments() const { return segments_; }
    [[nodiscard]] const FieldMap& field() const { return field_; }
    [[nodiscard]] const SpinEnsemble& ensemble() const { return ensemble_; }
    [[nodiscard]] double m0() const { return m0_; }

    /// On/off contrast at TR index `tr_index` (1 = first TR from equilibrium).
    /// s0 is the post-excitation signal from full equilibrium, m0·sin(flip).
    [[nodiscard]] ContrastResult contrast(const SequenceParams& sequence, double current_a, int tr_index = 1) const;

    /// Same, with the bit-1 waveform replaced by `on_waveform`.
    [[nodiscard]] ContrastResult contrast_with(const SequenceParams& sequence, const CurrentWaveform& on_waveform,
                                               int tr_index = 1) const;

private:
    SimulationConfig config_;
    SegmentSet segments_;
    FieldMap field_;
    SpinEnsemble ensemble_;
    double m0_ = 0.0;
};

struct PeakContrast {
    double te_ms = 0.0;
    ContrastResult result;
};

/// Largest C_n over `te_grid_ms` (infeasible TEs skipped); ties keep the earliest TE.
PeakContrast peak_contrast_over_te(const VoxelModel& model, const SequenceParams& sequence, double current_a,
                                   std::span<const double> te_grid_ms, int tr_index = 1);

/// 5, 7.5, ..., up to `max_ms` inclusive.
std::vector<double> default_te_grid(double max_ms = 150.0, double step_ms = 2.5);

enum class SweepAxis { Te, Current, CoilWidth, CoilTurns, VoxelRatio, Tr, RotationAngle };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& text);

struct SweepSpec {
    SweepAxis axis = SweepAxis::Te;
    std::vector<double> values;  ///< TE/TR in ms, current in A, widths in µm, rotation in deg
    bool peak_over_te = false;   ///< record max over `te_grid_ms` instead of C_n at the base TE
    std::vector<double> te_grid_ms = default_te_grid();
    std::optional<double> snr_at_s0 = std::nullopt;  ///< enables the CNR column: CNR = C_n · SNR(t=0)
    double receiver_distance_m = 0.03;
};

struct SweepPoint {
    double axis_value = 0.0;
    double te_ms = 0.0;
    ContrastResult result;
    double m0 = 0.0;
    double receiver_field_t = 0.0;
};

struct SweepResult {
    std::string axis_name;
    std::vector<double> axis_values;
    std::vector<double> c_n_values;
    std::optional<std::vector<double>> cnr_values;
    std::vector<SweepPoint> points;
    nlohmann::json metadata;
};

/// Rebuilds whatever the axis touches for every value and records C_n.
/// TR-axis points use the second TR (steady state); all others the first.
SweepResult sweep(const SweepSpec& spec, const SimulationConfig& base);

/// CSV `axis_value,c_n,cnr` (cnr column empty when not configured).
void write_sweep_csv(std::ostream& out, const SweepResult& result);

/// Steady-state contrast at TR = 1/(rate·N), times √N, normalised to the
/// equilibrium post-excitation signal. Throws ConfigError if TR cannot hold
/// the acquisition.
double averaging_cnr(const VoxelModel& model, double data_rate_bps, int n_averages);
double averaging_cnr(double data_rate_bps, int n_averages, const SimulationConfig& base);

/// Lowest data rate at or above which N = 1 is at least as good as every
/// N in 2..max_n (infeasible N count as zero). Bisection on `rates` brackets.
double averaging_crossover_rate(const VoxelModel& model, int max_n, double rate_lo, double rate_hi,
                                double tol_bps = 1e-3);

}  // namespace mrdust

#endif  // MRDUST_CONTRAST_HPP
