#ifndef MRDUST_UPLINK_HPP
#define MRDUST_UPLINK_HPP

#include "mrdust/common.hpp"
#include "mrdust/contrast.hpp"
#include "mrdust/sequences.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace mrdust {

struct BitSchedule {
    std::vector<int> bits;
    std::vector<CurrentWaveform> waveforms;  ///< one per TR, bits.size() * n_averages
    int n_averages = 1;
};

/// Each bit repeated over `n_averages` consecutive TRs.
BitSchedule encode_bits(std::span<const int> bits, const SequenceParams& params, double current_a, int n_averages);

/// Synthetic single-implant image slice.
struct Scene {
    int nx = 8;
    int ny = 8;
    double baseline_intensity = 0.0;  ///< every non-implant voxel
    int implant_x = 0;
    int implant_y = 0;
    double noise_std = 0.0;  ///< per complex channel
    std::uint64_t seed = 1;

    void validate() const;
};

struct VoxelTimeSeries {
    std::vector<double> values;
    std::vector<int> labels;
};

/// Magnitude frames, one per TR. frames[k](iy, ix).
struct ImageStack {
    int nx = 0;
    int ny = 0;
    std::vector<Eigen::MatrixXd> frames;
    std::vector<int> labels;  ///< intended bit per frame
    nlohmann::json params;    ///< acquisition snapshot
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t size() const { return frames.size(); }
    [[nodiscard]] VoxelTimeSeries voxel_series(int ix, int iy) const;
};

/// Noiseless implant-voxel signal per TR: the schedule is run as one chain
/// from equilibrium on a copy of the model's ensemble.
std::vector<double> implant_magnitudes(const BitSchedule& schedule, const VoxelModel& model,
                                       const SequenceParams& params);

/// Runs the physics chain for the implant voxel, fills other voxels with the
/// baseline, adds complex Gaussian noise and takes magnitudes.
ImageStack synthesize_series(const BitSchedule& schedule, const Scene& scene, const VoxelModel& model,
                             const SequenceParams& params);

/// Same noise model from precomputed clean implant magnitudes.
ImageStack synthesize_from_magnitudes(std::span<const double> implant, std::span<const int> labels, const Scene& scene);

struct WelchResult {
    double t = 0.0;
    double dof = 0.0;
    double p = 1.0;  ///< one-sided: H1 mean(a) > mean(b)
    bool defined = false;
};

/// Welch two-sample t-test of group `a` against group `b`.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

struct TMap {
    int nx = 0;
    int ny = 0;
    Eigen::MatrixXd t;       // (iy, ix); NaN where undefined
    Eigen::MatrixXd p;       // 1 where undefined
    Eigen::MatrixXd dof;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> defined;

    [[nodiscard]] Eigen::Index defined_count() const { return defined.count(); }
};

/// Per voxel: off-frames (label 0) vs on-frames (label 1), one-sided for off > on.
TMap t_score_map(const ImageStack& stack);

struct VoxelIndex {
    int ix = 0;
    int iy = 0;
    friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
};

/// Lowest p. Equal p (including underflow) falls back to the larger t,
/// then to row-major order (iy, then ix).
VoxelIndex locate(const TMap& tmap);

struct Detection {
    VoxelIndex voxel;
    double t = 0.0;
    double p = 1.0;
    double p_bonferroni = 1.0;
    bool detected = false;
};

/// locate() plus a family-wise decision: p · (defined voxels) < alpha.
Detection detect(const TMap& tmap, double alpha = 0.05);

struct Calibration {
    double mean_on = 0.0;
    double mean_off = 0.0;
};

/// Means of the known preamble frames (`zeros` off-frames then `ones`
/// on-frames, each already expanded by averaging), skipping the first
/// `skip` frames of the off run.
Calibration calibrate_from_preamble(std::span<const double> values, int zeros, int ones, int skip = 1);

/// Averages each group of `n_averages` frames and thresholds at the
/// calibration midpoint: above -> 0, below -> 1.
std::vector<int> decode(std::span<const double> values, const Calibration& calibration, int n_averages);

double ber(std::span<const int> decoded, std::span<const int> truth);

/// Upper-tail standard normal probability.
double q_function(double x);

struct CurrentLevelRow {
    double current_a = 0.0;
    double mean = 0.0;
    double std = 0.0;
    double contrast = 0.0;  ///< mean(zero current) - mean(level)
    double cnr = 0.0;       ///< contrast / std(zero current)
};

struct CurrentLevelSeries {
    double current_a = 0.0;
    std::vector<double> values;
};

std::vector<CurrentLevelRow> contrast_vs_current_report(std::span<const CurrentLevelSeries> levels);

// Persistence: a directory of frame CSVs plus manifest.json.
void save_stack(const std::filesystem::path& dir, const ImageStack& stack);
ImageStack load_stack(const std::filesystem::path& dir);

/// ASCII bits: any '0'/'1' characters, whitespace ignored.
std::vector<int> read_bits(std::istream& in);
void write_bits(std::ostream& out, std::span<const int> bits);

}  // namespace mrdust

#endif  // MRDUST_UPLINK_HPP
