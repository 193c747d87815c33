#include "mrdust/magnetics.hpp"

#include <Eigen/Geometry>
#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <ostream>

namespace mrdust {

void CoilSpec::validate() const {
    if (turns < 1) throw ConfigError(fmt::format("coil turns must be >= 1 (got {})", turns));
    if (layers < 1) throw ConfigError(fmt::format("coil layers must be >= 1 (got {})", layers));
    if (turns % layers != 0)
        throw ConfigError(fmt::format("coil turns ({}) must divide evenly across {} layers", turns, layers));
    if (static_cast<int>(layer_z_offsets_um.size()) != layers)
        throw ConfigError(fmt::format("layer_z_offsets has {} entries, expected {}", layer_z_offsets_um.size(), layers));
    if (!(outer_width_um > 0.0)) throw ConfigError("coil outer width must be positive");
    if (trace_spacing_um < 0.0 || trace_width_um < 0.0) throw ConfigError("trace spacing and width must be >= 0");
    if (rotation_deg < -90.0 || rotation_deg > 90.0)
        throw ConfigError(fmt::format("rotation angle {} deg outside [-90, 90]", rotation_deg));

    const int per_layer = turns / layers;
    for (int k = 0; k < per_layer; ++k) {
        if (turn_width_um(k) <= 0.0)
            throw GeometryError(fmt::format("turn {} has non-positive width {} um", k, turn_width_um(k)), k);
    }
    // the closing side of the innermost turn is one pitch shorter than its width
    const double last_side = turn_width_um(per_layer - 1) - pitch_um();
    if (per_layer > 1 && last_side <= 0.0)
        throw GeometryError(fmt::format("turn {} closing side has non-positive length {} um", per_layer - 1, last_side),
                            per_layer - 1);
}

std::vector<double> default_layer_offsets(int layers) {
    std::vector<double> z(static_cast<std::size_t>(std::max(layers, 0)));
    for (int i = 0; i < layers; ++i) z[static_cast<std::size_t>(i)] = -3.0 * i;
    return z;
}

double SegmentSet::total_length() const {
    double len = 0.0;
    for (const auto& s : segments) len += s.length();
    return len;
}

bool SegmentSet::is_connected(double tol_um) const {
    for (std::size_t i = 1; i < segments.size(); ++i) {
        if (segments[i].layer != segments[i - 1].layer) continue;
        if ((segments[i].start - segments[i - 1].end).norm() > tol_um) return false;
    }
    return true;
}

SegmentSet SegmentSet::reversed() const {
    SegmentSet out;
    out.segments.reserve(segments.size());
    for (auto it = segments.rbegin(); it != segments.rend(); ++it)
        out.segments.push_back({it->end, it->start, -it->current_sign, it->layer});
    return out;
}

SegmentSet SegmentSet::refined(int k) const {
    if (k < 1) throw DomainError("refinement factor must be >= 1");
    SegmentSet out;
    out.segments.reserve(segments.size() * static_cast<std::size_t>(k));
    for (const auto& s : segments) {
        const Vec3 step = (s.end - s.start) / k;
        for (int i = 0; i < k; ++i) {
            const Vec3 a = s.start + i * step;
            const Vec3 b = (i + 1 == k) ? s.end : Vec3(s.start + (i + 1) * step);
            out.segments.push_back({a, b, s.current_sign, s.layer});
        }
    }
    return out;
}

SegmentSet build_square_spiral(const CoilSpec& spec) {
    spec.validate();

    // Counter-clockwise (viewed from +z) inward spiral: side lengths
    // w, w, w, w-p, w-p, w-2p, w-2p, ... so each turn is 2p narrower.
    static constexpr std::array<std::array<double, 2>, 4> kDirections{{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};
    const double w = spec.outer_width_um;
    const double p = spec.pitch_um();
    const int per_layer = spec.turns / spec.layers;

    SegmentSet set;
    set.segments.reserve(static_cast<std::size_t>(4 * spec.turns));
    for (int layer = 0; layer < spec.layers; ++layer) {
        const double z = spec.layer_z_offsets_um[static_cast<std::size_t>(layer)];
        Vec3 cursor(-w / 2.0, -w / 2.0, z);
        for (int j = 0; j < 4 * per_layer; ++j) {
            const double side = (j == 0) ? w : w - std::floor((j - 1) / 2.0) * p;
            const auto& d = kDirections[static_cast<std::size_t>(j % 4)];
            const Vec3 next = cursor + Vec3(d[0] * side, d[1] * side, 0.0);
            set.segments.push_back({cursor, next, 1, layer});
            cursor = next;
        }
    }
    for (auto& s : set.segments) {
        s.start += spec.center_um;
        s.end += spec.center_um;
    }
    if (spec.rotation_deg != 0.0) set = rotate(set, Vec3::UnitX(), spec.rotation_deg, spec.center_um);
    return set;
}

SegmentSet rotate(const SegmentSet& set, const Vec3& axis, double angle_deg, const Vec3& pivot_um) {
    const Eigen::AngleAxisd rot(angle_deg * std::numbers::pi / 180.0, axis.normalized());
    const Eigen::Matrix3d r = rot.toRotationMatrix();
    SegmentSet out = set;
    for (auto& s : out.segments) {
        s.start = pivot_um + r * (s.start - pivot_um);
        s.end = pivot_um + r * (s.end - pivot_um);
    }
    return out;
}

double distance_to_segment(const Segment& s, const Vec3& p) {
    const Vec3 d = s.end - s.start;
    const double len2 = d.squaredNorm();
    double t = len2 > 0.0 ? (p - s.start).dot(d) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return (p - (s.start + t * d)).norm();
}

namespace {

double summed_bz(const SegmentSet& set, const Vec3& p, std::vector<double>& scratch) {
    scratch.resize(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& s = set.segments[i];
        scratch[i] = s.current_sign * segment_bz_per_amp<double>(s.start, s.end, p);
    }
    return pairwise_sum(std::span<const double>(scratch));
}

// Moves `p` out to the exclusion surface of the nearest conductor.
Vec3 clamp_to_exclusion(const SegmentSet& set, const Vec3& p, double radius) {
    const Segment* nearest = nullptr;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : set.segments) {
        const double d = distance_to_segment(s, p);
        if (d < best) {
            best = d;
            nearest = &s;
        }
    }
    const Vec3 dir_seg = (nearest->end - nearest->start).normalized();
    const double t = std::clamp((p - nearest->start).dot(dir_seg), 0.0, nearest->length());
    const Vec3 foot = nearest->start + t * dir_seg;
    Vec3 offset = p - foot;
    if (offset.norm() < 1e-12) {
        // on the centreline: push along the direction perpendicular to the wire closest to +z
        offset = Vec3::UnitZ() - Vec3::UnitZ().dot(dir_seg) * dir_seg;
        if (offset.norm() < 1e-12) offset = Vec3::UnitX() - Vec3::UnitX().dot(dir_seg) * dir_seg;
    }
    return foot + radius * offset.normalized();
}

}  // namespace

FieldMap biot_savart_bz(const SegmentSet& segments, std::span<const Vec3> points_um, const FieldOptions& options) {
    if (segments.empty()) throw DomainError("biot_savart_bz: empty segment set");
    FieldMap map;
    map.points_um.assign(points_um.begin(), points_um.end());
    map.bz_per_amp.resize(static_cast<Eigen::Index>(points_um.size()));
    map.policy = options.policy;
    map.exclusion_radius_um = options.exclusion_radius_um;

    const auto n = static_cast<std::ptrdiff_t>(points_um.size());
    std::size_t excluded = 0;
#pragma omp parallel reduction(+ : excluded)
    {
        std::vector<double> scratch;
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const Vec3& p = points_um[static_cast<std::size_t>(i)];
            bool inside = false;
            if (options.exclusion_radius_um > 0.0) {
                for (const auto& s : segments.segments) {
                    if (distance_to_segment(s, p) < options.exclusion_radius_um) {
                        inside = true;
                        break;
                    }
                }
            }
            double bz = 0.0;
            if (!inside) {
                bz = summed_bz(segments, p, scratch);
            } else {
                ++excluded;
                if (options.policy == ExclusionPolicy::Clamp)
                    bz = summed_bz(segments, clamp_to_exclusion(segments, p, options.exclusion_radius_um), scratch);
            }
            map.bz_per_amp(i) = bz;
        }
    }
    map.excluded_points = excluded;
    return map;
}

double dipole_field_magnitude(double moment, double distance_m) {
    if (!(distance_m > 0.0)) throw DomainError(fmt::format("dipole distance must be > 0 (got {})", distance_m));
    return (kMu0 / (4.0 * std::numbers::pi)) * 2.0 * moment / (distance_m * distance_m * distance_m);
}

void write_field_csv(std::ostream& out, const FieldMap& map, std::optional<double> current_a) {
    out << "x_um,y_um,z_um,bz_per_amp_T" << (current_a ? ",bz_T\n" : "\n");
    for (std::size_t i = 0; i < map.size(); ++i) {
        const auto& p = map.points_um[i];
        const double b = map.bz_per_amp(static_cast<Eigen::Index>(i));
        out << fmt::format("{:.6f},{:.6f},{:.6f},{:.9e}", p.x(), p.y(), p.z(), b);
        if (current_a) out << fmt::format(",{:.9e}", *current_a * b + 0.0);  // no negative zero
        out << '\n';
    }
}

}  // namespace mrdust
