#ifndef MRDUST_MAGNETICS_HPP
#define MRDUST_MAGNETICS_HPP

#include "mrdust/common.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mrdust {

/// Parametric square-spiral micro-coil. Lengths in micrometres.
///
/// `outer_width_um` is the centreline width of the outermost turn. Each
/// further turn steps inward by one pitch (spacing + trace width) per side.
/// With several layers the turns are divided evenly and every layer carries
/// the same spiral footprint with the same winding sense.
struct CoilSpec {
    double outer_width_um = 600.0;
    int turns = 10;
    double trace_spacing_um = 10.0;
    double trace_width_um = 5.0;
    int layers = 1;
    std::vector<double> layer_z_offsets_um{0.0};
    double rotation_deg = 0.0;  ///< rigid rotation about the in-plane x axis through `center_um`
    Vec3 center_um = Vec3::Zero();

    [[nodiscard]] double pitch_um() const { return trace_spacing_um + trace_width_um; }
    /// Centreline width of turn `k` within a layer (k = 0 is outermost).
    [[nodiscard]] double turn_width_um(int k) const { return outer_width_um - 2.0 * k * pitch_um(); }

    /// Throws ConfigError / GeometryError when the spec cannot be built.
    void validate() const;
};

/// Default z offsets for `layers` stacked metal layers (0, -3, -6, ... µm).
std::vector<double> default_layer_offsets(int layers);

struct Segment {
    Vec3 start;  // µm
    Vec3 end;    // µm
    int current_sign = 1;
    int layer = 0;

    [[nodiscard]] double length() const { return (end - start).norm(); }
};

struct SegmentSet {
    std::vector<Segment> segments;

    [[nodiscard]] std::size_t size() const { return segments.size(); }
    [[nodiscard]] bool empty() const { return segments.empty(); }
    [[nodiscard]] double total_length() const;
    /// Per-layer chain connectivity within `tol_um`.
    [[nodiscard]] bool is_connected(double tol_um = 1e-9) const;
    /// Same current path traversed backwards with each segment's sign flipped.
    [[nodiscard]] SegmentSet reversed() const;
    /// Each segment split into `k` equal collinear pieces.
    [[nodiscard]] SegmentSet refined(int k) const;
};

SegmentSet build_square_spiral(const CoilSpec& spec);

/// Rigid rotation of every endpoint by `angle_deg` about `axis` through `pivot_um`.
SegmentSet rotate(const SegmentSet& set, const Vec3& axis, double angle_deg, const Vec3& pivot_um);

enum class ExclusionPolicy { Clamp, Skip };

struct FieldOptions {
    double exclusion_radius_um = 2.0;
    ExclusionPolicy policy = ExclusionPolicy::Clamp;
};

/// Longitudinal (B0-direction, lab z) field per unit coil current.
struct FieldMap {
    std::vector<Vec3> points_um;
    Eigen::ArrayXd bz_per_amp;  // T/A
    ExclusionPolicy policy = ExclusionPolicy::Clamp;
    double exclusion_radius_um = 2.0;
    std::size_t excluded_points = 0;  ///< points that fell inside the exclusion radius

    [[nodiscard]] std::size_t size() const { return points_um.size(); }
    /// Field at coil current `current_a` (linear in current).
    [[nodiscard]] Eigen::ArrayXd bz_at(double current_a) const { return current_a * bz_per_amp; }
};

/// Exact finite-segment Biot-Savart z component at `point` for unit current,
/// in T/A. Geometry in µm. Templated so the far-field and refinement checks
/// can run in extended precision.
template <typename Scalar>
Scalar segment_bz_per_amp(const Eigen::Matrix<Scalar, 3, 1>& start, const Eigen::Matrix<Scalar, 3, 1>& end,
                          const Eigen::Matrix<Scalar, 3, 1>& point) {
    using Vec = Eigen::Matrix<Scalar, 3, 1>;
    const Vec r1 = start - point;
    const Vec r2 = end - point;
    const Scalar n1 = r1.norm();
    const Scalar n2 = r2.norm();
    const Scalar denom = n1 * n2 * (n1 * n2 + r1.dot(r2));
    if (denom <= Scalar(0)) return Scalar(0);  // point on the segment line
    const Scalar cross_z = r1.x() * r2.y() - r1.y() * r2.x();
    // µ0/4π with lengths in µm -> factor 1e6 per inverse length
    return Scalar(1e-7) * Scalar(1e6) * cross_z * (n1 + n2) / denom;
}

FieldMap biot_savart_bz(const SegmentSet& segments, std::span<const Vec3> points_um,
                        const FieldOptions& options = {});

/// |B| on the dipole axis, (µ0/4π)·2m/r³. Moment in J/T, distance in m.
double dipole_field_magnitude(double moment, double distance_m);

/// Distance from `p` to the closest point of segment `s` (µm).
double distance_to_segment(const Segment& s, const Vec3& p);

/// CSV `x_um,y_um,z_um,bz_per_amp_T`; with a current, a trailing `bz_T` column.
void write_field_csv(std::ostream& out, const FieldMap& map, std::optional<double> current_a = std::nullopt);

}  // namespace mrdust

#endif  // MRDUST_MAGNETICS_HPP
