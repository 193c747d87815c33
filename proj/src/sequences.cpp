#include "mrdust/sequences.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

namespace mrdust {

std::string to_string(SequenceKind kind) { return kind == SequenceKind::GreEpi ? "gre_epi" : "se_epi"; }

SequenceKind parse_sequence_kind(const std::string& text) {
    std::string t = text;
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (t == "gre_epi" || t == "gre") return SequenceKind::GreEpi;
    if (t == "se_epi" || t == "se") return SequenceKind::SeEpi;
    throw ConfigError(fmt::format("unknown sequence kind '{}' (expected gre_epi or se_epi)", text));
}

void SequenceParams::validate() const {
    if (!(te_ms > 0.0)) throw ConfigError(fmt::format("sequence: te must be > 0 (te={})", te_ms));
    if (!(te_ms < tr_ms)) throw ConfigError(fmt::format("sequence: te must be < tr (te={}, tr={})", te_ms, tr_ms));
    if (acq_ms < 0.0) throw ConfigError(fmt::format("sequence: acq_duration must be >= 0 (acq={})", acq_ms));
    if (acquisition_end_ms() > tr_ms)
        throw ConfigError(fmt::format("sequence: te + acq/2 must be <= tr ({} > {})", acquisition_end_ms(), tr_ms));
    if (kind == SequenceKind::SeEpi && flip_deg != 90.0)
        throw ConfigError(fmt::format("sequence: se_epi requires a 90 deg excitation (flip={})", flip_deg));
    if (!(flip_deg > 0.0 && flip_deg <= 180.0))
        throw ConfigError(fmt::format("sequence: flip angle must lie in (0, 180] (flip={})", flip_deg));
}

std::size_t EventTimeline::count(EventKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(events.begin(), events.end(), [kind](const Event& e) { return e.kind == kind; }));
}

void CurrentWaveform::validate(double tr_ms) const {
    double magnitude = 0.0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& s = segments[i];
        if (!(s.start_ms >= 0.0 && s.end_ms > s.start_ms && s.end_ms <= tr_ms))
            throw ConfigError(fmt::format("waveform segment {} [{}, {}] outside [0, {}]", i, s.start_ms, s.end_ms, tr_ms));
        if (i > 0 && s.start_ms < segments[i - 1].end_ms)
            throw ConfigError(fmt::format("waveform segment {} overlaps its predecessor", i));
        if (s.current_a != 0.0) {
            if (magnitude == 0.0) magnitude = std::abs(s.current_a);
            else if (std::abs(s.current_a) != magnitude)
                throw ConfigError("waveform current magnitude must be constant across nonzero segments");
        }
    }
}

double CurrentWaveform::current_at(double t_ms) const {
    for (const auto& s : segments)
        if (t_ms >= s.start_ms && t_ms < s.end_ms) return s.current_a;
    return 0.0;
}

EventTimeline build_timeline(const SequenceParams& params) {
    params.validate();
    EventTimeline tl;
    tl.tr_ms = params.tr_ms;
    if (params.kind == SequenceKind::GreEpi) {
        tl.events.push_back({EventKind::Rf, 0.0, params.flip_deg, 0.0});
    } else {
        tl.events.push_back({EventKind::Rf, 0.0, 90.0, 0.0});
        tl.events.push_back({EventKind::Refocus, params.te_ms / 2.0});
    }
    tl.events.push_back({EventKind::Readout, params.te_ms});
    return tl;
}

CurrentWaveform current_waveform_for_bit(int bit, const SequenceParams& params, double current_a) {
    if (bit != 0 && bit != 1) throw DomainError(fmt::format("bit must be 0 or 1 (got {})", bit));
    if (!(current_a > 0.0)) throw DomainError("bit waveform current must be > 0");
    params.validate();
    CurrentWaveform w;
    if (bit == 0) return w;
    const double off = params.acquisition_end_ms();
    if (params.kind == SequenceKind::GreEpi) {
        w.segments.push_back({0.0, off, current_a});
    } else {
        const double flip = params.te_ms / 2.0;
        w.segments.push_back({0.0, flip, current_a});
        w.segments.push_back({flip, off, -current_a});
    }
    return w;
}

CurrentWaveform constant_current_waveform(const SequenceParams& params, double current_a) {
    params.validate();
    CurrentWaveform w;
    if (current_a != 0.0) w.segments.push_back({0.0, params.acquisition_end_ms(), current_a});
    return w;
}

namespace {

int priority(EventKind k) {
    switch (k) {
        case EventKind::Rf: return 0;
        case EventKind::Refocus: return 1;
        case EventKind::CurrentSet: return 2;
        case EventKind::Readout: return 3;
    }
    return 4;
}

}  // namespace

EventTimeline merge_waveform(const EventTimeline& timeline, const CurrentWaveform& waveform) {
    waveform.validate(timeline.tr_ms);
    EventTimeline out = timeline;
    for (std::size_t i = 0; i < waveform.segments.size(); ++i) {
        const auto& s = waveform.segments[i];
        out.events.push_back({EventKind::CurrentSet, s.start_ms, 0.0, 0.0, s.current_a});
        const bool contiguous = i + 1 < waveform.segments.size() && waveform.segments[i + 1].start_ms == s.end_ms;
        if (!contiguous) out.events.push_back({EventKind::CurrentSet, s.end_ms, 0.0, 0.0, 0.0});
    }
    std::stable_sort(out.events.begin(), out.events.end(), [](const Event& a, const Event& b) {
        if (a.time_ms != b.time_ms) return a.time_ms < b.time_ms;
        return priority(a.kind) < priority(b.kind);
    });
    return out;
}

namespace {

void check(const SpinEnsemble& e, const RunOptions& options, double t) {
    if (!options.check_magnitude) return;
    const double m = e.max_magnitude_squared();
    if (m > 1.0 + 1e-9) throw DomainError(fmt::format("magnetisation exceeds unit magnitude ({}) at t={} ms", m, t));
}

// Relaxation with phases frozen. Used after the last readout of a TR, where
// the transverse phase is about to be spoiled and only magnitudes matter.
void relax_only(SpinEnsemble& e, double dt_ms) {
    if (dt_ms <= 0.0) return;
    e.m_xy *= std::exp(-dt_ms / e.tissue.t2_ms);
    e.m_z = 1.0 + (e.m_z - 1.0) * std::exp(-dt_ms / e.tissue.t1_ms);
    e.dephasing_ms += dt_ms;
}

}  // namespace

std::vector<Complex> run_schedule(SpinEnsemble& ensemble, const SequenceParams& params,
                                  std::span<const CurrentWaveform> waveforms, double m0, const RunOptions& options) {
    const EventTimeline base = build_timeline(params);
    std::vector<Complex> signals;
    signals.reserve(waveforms.size());
    for (const auto& waveform : waveforms) {
        const EventTimeline tl = merge_waveform(base, waveform);
        double t = 0.0;
        double current = 0.0;
        bool read = false;
        Complex sample{};
        for (const auto& ev : tl.events) {
            if (read) relax_only(ensemble, ev.time_ms - t);
            else evolve(ensemble, ev.time_ms - t, current);
            t = ev.time_ms;
            switch (ev.kind) {
                case EventKind::Rf: apply_rf(ensemble, ev.flip_deg, ev.phase_deg); break;
                case EventKind::Refocus: refocus(ensemble); break;
                case EventKind::CurrentSet: current = ev.current_a; break;
                case EventKind::Readout:
                    sample = readout(ensemble, m0);
                    read = true;
                    break;
            }
            check(ensemble, options, t);
        }
        relax_only(ensemble, tl.tr_ms - t);
        spoil(ensemble);
        check(ensemble, options, tl.tr_ms);
        signals.push_back(sample);
    }
    return signals;
}

std::vector<Complex> run_sequence(SpinEnsemble ensemble, const SequenceParams& params, const CurrentWaveform& waveform,
                                  int n_tr, double m0, const RunOptions& options) {
    if (n_tr < 1) throw DomainError("run_sequence: n_tr must be >= 1");
    const std::vector<CurrentWaveform> schedule(static_cast<std::size_t>(n_tr), waveform);
    return run_schedule(ensemble, params, schedule, m0, options);
}

double steady_state_scale(double t1_ms, double tr_ms, double flip_deg) {
    if (!(t1_ms > 0.0 && tr_ms > 0.0)) throw DomainError("steady_state_scale: t1 and tr must be > 0");
    const double e1 = std::exp(-tr_ms / t1_ms);
    const double c = std::cos(flip_deg * std::numbers::pi / 180.0);
    return (1.0 - e1) / (1.0 - c * e1);
}

double ernst_angle(double t1_ms, double tr_ms) {
    if (!(t1_ms > 0.0 && tr_ms > 0.0)) throw DomainError("ernst_angle: t1 and tr must be > 0");
    return std::acos(std::exp(-tr_ms / t1_ms)) * 180.0 / std::numbers::pi;
}

void write_signals_csv(std::ostream& out, std::span<const Complex> signals) {
    out << "tr_index,re,im,mag\n";
    for (std::size_t i = 0; i < signals.size(); ++i)
        out << fmt::format("{},{:.12e},{:.12e},{:.12e}\n", i + 1, signals[i].real(), signals[i].imag(), std::abs(signals[i]));
}

}  // namespace mrdust
