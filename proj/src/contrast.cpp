#include "mrdust/contrast.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

namespace mrdust {

namespace {

const char* to_string(InhomogeneityMode mode) { return mode == InhomogeneityMode::Explicit ? "explicit" : "lumped"; }
const char* to_string(ExclusionPolicy policy) { return policy == ExclusionPolicy::Clamp ? "clamp" : "skip"; }

nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

}  // namespace

nlohmann::json to_json(const SimulationConfig& c) {
    nlohmann::json j;
    j["coil"] = {{"outer_width_um", c.coil.outer_width_um},
                 {"turns", c.coil.turns},
                 {"trace_spacing_um", c.coil.trace_spacing_um},
                 {"trace_width_um", c.coil.trace_width_um},
                 {"layers", c.coil.layers},
                 {"layer_z_offsets_um", c.coil.layer_z_offsets_um},
                 {"rotation_deg", c.coil.rotation_deg},
                 {"center_um", vec_json(c.coil.center_um)}};
    j["voxel"] = {{"width_x_mm", c.voxel.width_x_mm}, {"width_y_mm", c.voxel.width_y_mm},
                  {"width_z_mm", c.voxel.width_z_mm}, {"grid_nx", c.voxel.grid_nx},
                  {"grid_ny", c.voxel.grid_ny},       {"grid_nz", c.voxel.grid_nz},
                  {"center_mm", vec_json(c.voxel.center_mm)}};
    j["tissue"] = {{"t1_ms", c.tissue.t1_ms}, {"t2_ms", c.tissue.t2_ms}, {"t2_star_ms", c.tissue.t2_star_ms}};
    j["constants"] = {{"gamma_over_2pi_mhz_per_t", c.constants.gamma_over_2pi_mhz_per_t},
                      {"b0_t", c.constants.b0_t},
                      {"temperature_k", c.constants.temperature_k},
                      {"spin_density_per_m3", c.constants.spin_density_per_m3}};
    j["sequence"] = {{"kind", to_string(c.sequence.kind)},
                     {"te_ms", c.sequence.te_ms},
                     {"tr_ms", c.sequence.tr_ms},
                     {"flip_deg", c.sequence.flip_deg},
                     {"acq_ms", c.sequence.acq_ms}};
    j["field"] = {{"exclusion_radius_um", c.field.exclusion_radius_um},
                  {"exclusion_policy", to_string(c.field.policy)}};
    j["physics"] = {{"current_ua", c.current_a * 1e6}, {"mode", to_string(c.mode)}};
    j["seed"] = c.seed;
    return j;
}

double normalized_contrast(Complex s_on, Complex s_off, Complex s0) {
    const double ref = std::abs(s0);
    if (!(ref > 0.0)) throw DomainError("normalized_contrast: |s0| must be > 0");
    return (std::abs(s_off) - std::abs(s_on)) / ref;
}

double cnr(double absolute_contrast, double noise_std) {
    if (!(noise_std > 0.0)) throw DomainError(fmt::format("cnr: noise std must be > 0 (got {})", noise_std));
    return absolute_contrast / noise_std;
}

double scale_snr_to_volume(double measured_snr, double measured_voxel_volume, double target_voxel_volume) {
    if (!(measured_snr > 0.0)) throw DomainError("measured SNR must be > 0");
    if (!(measured_voxel_volume > 0.0 && target_voxel_volume > 0.0)) throw DomainError("voxel volumes must be > 0");
    return measured_snr * (target_voxel_volume / measured_voxel_volume);
}

double estimate_cnr_from_scanner(double measured_snr, double measured_voxel_volume, double target_voxel_volume,
                                 double c_n_at_te) {
    return c_n_at_te * scale_snr_to_volume(measured_snr, measured_voxel_volume, target_voxel_volume);
}

double receiver_field_contrast(double moment_difference, double distance_m) {
    return dipole_field_magnitude(moment_difference, distance_m);
}

double contrast_moment(const PhysicalConstants& constants, double voxel_volume_m3, double c_n) {
    return equilibrium_magnetization(constants, voxel_volume_m3) * c_n;
}

VoxelModel::VoxelModel(const SimulationConfig& config) : config_(config) {
    config_.tissue.validate();
    config_.voxel.validate();
    segments_ = build_square_spiral(config_.coil);
    const auto points = voxel_grid_points_um(config_.voxel);
    field_ = biot_savart_bz(segments_, points, config_.field);
    ensemble_ = build_ensemble(config_.voxel, config_.tissue, field_, config_.mode, config_.seed,
                               config_.constants.gamma());
    m0_ = equilibrium_magnetization(config_.constants, config_.voxel.volume_m3());
}

ContrastResult VoxelModel::contrast(const SequenceParams& sequence, double current_a, int tr_index) const {
    if (current_a == 0.0) return contrast_with(sequence, CurrentWaveform{}, tr_index);
    return contrast_with(sequence, current_waveform_for_bit(1, sequence, std::abs(current_a)), tr_index);
}

ContrastResult VoxelModel::contrast_with(const SequenceParams& sequence, const CurrentWaveform& on_waveform,
                                         int tr_index) const {
    if (tr_index < 1) throw DomainError("tr_index must be >= 1");
    ContrastResult r;
    r.s_off = run_sequence(ensemble_, sequence, CurrentWaveform{}, tr_index, m0_).back();
    r.s_on = on_waveform.empty() ? r.s_off : run_sequence(ensemble_, sequence, on_waveform, tr_index, m0_).back();
    // readout immediately after excitation from equilibrium (all m_z = 1)
    r.s0 = m0_ * std::sin(sequence.flip_deg * std::numbers::pi / 180.0);
    r.c_n = normalized_contrast(r.s_on, r.s_off, r.s0);
    r.absolute_contrast = std::abs(r.s_off) - std::abs(r.s_on);
    return r;
}

PeakContrast peak_contrast_over_te(const VoxelModel& model, const SequenceParams& sequence, double current_a,
                                   std::span<const double> te_grid_ms, int tr_index) {
    std::optional<PeakContrast> best;
    for (const double te : te_grid_ms) {
        SequenceParams s = sequence;
        s.te_ms = te;
        if (!(te > 0.0) || s.acquisition_end_ms() > s.tr_ms || te >= s.tr_ms) continue;
        const ContrastResult r = model.contrast(s, current_a, tr_index);
        if (!best || r.c_n > best->result.c_n) best = PeakContrast{te, r};
    }
    if (!best) throw ConfigError("no feasible TE in the search grid");
    return *best;
}

std::vector<double> default_te_grid(double max_ms, double step_ms) {
    std::vector<double> grid;
    for (int i = 0;; ++i) {
        const double te = 5.0 + i * step_ms;
        if (te > max_ms + 1e-9) break;
        grid.push_back(te);
    }
    return grid;
}

std::string to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::Te: return "te";
        case SweepAxis::Current: return "current";
        case SweepAxis::CoilWidth: return "coil_width";
        case SweepAxis::CoilTurns: return "coil_turns";
        case SweepAxis::VoxelRatio: return "voxel_ratio";
        case SweepAxis::Tr: return "tr";
        case SweepAxis::RotationAngle: return "rotation_angle";
    }
    return "unknown";
}

SweepAxis parse_sweep_axis(const std::string& text) {
    for (auto a : {SweepAxis::Te, SweepAxis::Current, SweepAxis::CoilWidth, SweepAxis::CoilTurns,
                   SweepAxis::VoxelRatio, SweepAxis::Tr, SweepAxis::RotationAngle})
        if (to_string(a) == text) return a;
    throw ConfigError(fmt::format("unknown sweep axis '{}'", text));
}

namespace {

bool axis_changes_geometry(SweepAxis axis) {
    return axis == SweepAxis::CoilWidth || axis == SweepAxis::CoilTurns || axis == SweepAxis::VoxelRatio ||
           axis == SweepAxis::RotationAngle;
}

SimulationConfig apply_axis(const SimulationConfig& base, SweepAxis axis, double v) {
    SimulationConfig c = base;
    switch (axis) {
        case SweepAxis::Te: c.sequence.te_ms = v; break;
        case SweepAxis::Tr: c.sequence.tr_ms = v; break;
        case SweepAxis::Current: c.current_a = v; break;
        case SweepAxis::CoilWidth: c.coil.outer_width_um = v; break;
        case SweepAxis::CoilTurns: c.coil.turns = static_cast<int>(std::lround(v)); break;
        case SweepAxis::VoxelRatio:
            c.voxel.width_x_mm = c.voxel.width_y_mm = c.voxel.width_z_mm = v * c.coil.outer_width_um / 1000.0;
            break;
        case SweepAxis::RotationAngle: c.coil.rotation_deg = v; break;
    }
    return c;
}

template <typename F>
auto with_axis_context(SweepAxis axis, double v, F&& f) {
    const auto ctx = [&](const std::exception& e) { return fmt::format("{} = {}: {}", to_string(axis), v, e.what()); };
    try {
        return f();
    } catch (const GeometryError& e) {
        throw GeometryError(ctx(e), e.turn_index());
    } catch (const DomainError& e) {
        throw DomainError(ctx(e));
    } catch (const ConfigError& e) {
        throw ConfigError(ctx(e));
    }
}

void check_monotone(const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("sweep range is empty");
    bool inc = true, dec = true;
    for (std::size_t i = 1; i < values.size(); ++i) {
        inc = inc && values[i] > values[i - 1];
        dec = dec && values[i] < values[i - 1];
    }
    if (!inc && !dec) throw ConfigError("sweep range must be strictly monotone");
}

}  // namespace

SweepResult sweep(const SweepSpec& spec, const SimulationConfig& base) {
    check_monotone(spec.values);
    if (spec.peak_over_te && spec.axis == SweepAxis::Te) throw ConfigError("peak_over_te cannot be used on the te axis");

    SweepResult out;
    out.axis_name = to_string(spec.axis);
    const int tr_index = spec.axis == SweepAxis::Tr ? 2 : 1;

    std::optional<VoxelModel> shared;
    if (!axis_changes_geometry(spec.axis)) shared.emplace(base);

    for (const double v : spec.values) {
        SweepPoint pt = with_axis_context(spec.axis, v, [&] {
            const SimulationConfig cfg = apply_axis(base, spec.axis, v);
            std::optional<VoxelModel> local;
            if (!shared) local.emplace(cfg);
            const VoxelModel& model = shared ? *shared : *local;
            SweepPoint p;
            p.axis_value = v;
            p.m0 = model.m0();
            if (spec.peak_over_te) {
                const auto peak = peak_contrast_over_te(model, cfg.sequence, cfg.current_a, spec.te_grid_ms, tr_index);
                p.te_ms = peak.te_ms;
                p.result = peak.result;
            } else {
                cfg.sequence.validate();
                p.te_ms = cfg.sequence.te_ms;
                p.result = model.contrast(cfg.sequence, cfg.current_a, tr_index);
            }
            p.receiver_field_t = receiver_field_contrast(p.m0 * p.result.c_n, spec.receiver_distance_m);
            return p;
        });
        out.axis_values.push_back(v);
        out.c_n_values.push_back(pt.result.c_n);
        out.points.push_back(pt);
    }
    if (spec.snr_at_s0) {
        out.cnr_values.emplace();
        for (double c : out.c_n_values) out.cnr_values->push_back(c * *spec.snr_at_s0);
    }

    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : out.points) {
        pts.push_back({{"axis_value", p.axis_value},
                       {"te_ms", p.te_ms},
                       {"c_n", p.result.c_n},
                       {"s_on_abs", std::abs(p.result.s_on)},
                       {"s_off_abs", std::abs(p.result.s_off)},
                       {"s0", p.result.s0},
                       {"m0_J_per_T", p.m0},
                       {"receiver_field_T", p.receiver_field_t}});
    }
    out.metadata = {{"tool", "mrdust"},
                    {"version", kVersion},
                    {"axis", out.axis_name},
                    {"values", spec.values},
                    {"peak_over_te", spec.peak_over_te},
                    {"te_grid_ms", spec.te_grid_ms},
                    {"tr_index", tr_index},
                    {"receiver_distance_m", spec.receiver_distance_m},
                    {"config", to_json(base)},
                    {"seed", base.seed},
                    {"points", pts}};
    if (spec.snr_at_s0) out.metadata["snr_at_s0"] = *spec.snr_at_s0;
    return out;
}

void write_sweep_csv(std::ostream& out, const SweepResult& r) {
    out << "axis_value,c_n,cnr\n";
    for (std::size_t i = 0; i < r.axis_values.size(); ++i) {
        out << fmt::format("{:.10g},{:.10e},", r.axis_values[i], r.c_n_values[i]);
        if (r.cnr_values) out << fmt::format("{:.10e}", (*r.cnr_values)[i]);
        out << '\n';
    }
}

double averaging_cnr(const VoxelModel& model, double data_rate_bps, int n_averages) {
    if (n_averages < 1) throw ConfigError("n_averages must be >= 1");
    if (!(data_rate_bps > 0.0)) throw ConfigError("data rate must be > 0");
    SequenceParams seq = model.config().sequence;
    seq.tr_ms = 1000.0 / (data_rate_bps * n_averages);
    if (!(seq.tr_ms > seq.acquisition_end_ms()))
        throw ConfigError(fmt::format("infeasible TR {} ms for {} bps with N = {} (needs > {} ms)", seq.tr_ms,
                                      data_rate_bps, n_averages, seq.acquisition_end_ms()));
    const ContrastResult r = model.contrast(seq, model.config().current_a, 2);
    return r.c_n * std::sqrt(static_cast<double>(n_averages));
}

double averaging_cnr(double data_rate_bps, int n_averages, const SimulationConfig& base) {
    return averaging_cnr(VoxelModel(base), data_rate_bps, n_averages);
}

double averaging_crossover_rate(const VoxelModel& model, int max_n, double rate_lo, double rate_hi, double tol_bps) {
    if (max_n < 2) throw ConfigError("crossover needs max_n >= 2");
    const auto advantage = [&](double rate) {
        const double single = averaging_cnr(model, rate, 1);
        double best_avg = 0.0;
        for (int n = 2; n <= max_n; ++n) {
            try {
                best_avg = std::max(best_avg, averaging_cnr(model, rate, n));
            } catch (const ConfigError&) {
                // TR too short for this N
            }
        }
        return single - best_avg;
    };
    double lo = rate_lo, hi = rate_hi;
    if (advantage(lo) >= 0.0) return lo;
    if (advantage(hi) < 0.0) throw DomainError("averaging still beats N = 1 at the upper rate bound");
    while (hi - lo > tol_bps) {
        const double mid = 0.5 * (lo + hi);
        (advantage(mid) >= 0.0 ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace mrdust
