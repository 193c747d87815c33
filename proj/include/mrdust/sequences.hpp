#ifndef MRDUST_SEQUENCES_HPP
#define MRDUST_SEQUENCES_HPP

#include "mrdust/common.hpp"
#include "mrdust/spins.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace mrdust {

enum class SequenceKind { GreEpi, SeEpi };

std::string to_string(SequenceKind kind);
SequenceKind parse_sequence_kind(const std::string& text);

/// Times in ms, angles in degrees. The readout window is centred on TE.
struct SequenceParams {
    SequenceKind kind = SequenceKind::SeEpi;
    double te_ms = 65.0;
    double tr_ms = 1250.0;
    double flip_deg = 90.0;
    double acq_ms = 40.0;

    /// Throws ConfigError naming the violated constraint.
    void validate() const;
    [[nodiscard]] double acquisition_end_ms() const { return te_ms + acq_ms / 2.0; }
};

enum class EventKind { Rf, Refocus, CurrentSet, Readout };

struct Event {
    EventKind kind;
    double time_ms;
    double flip_deg = 0.0;   // Rf
    double phase_deg = 0.0;  // Rf
    double current_a = 0.0;  // CurrentSet: signed level held until the next CurrentSet
};

struct EventTimeline {
    double tr_ms = 0.0;
    std::vector<Event> events;

    [[nodiscard]] std::size_t count(EventKind kind) const;
};

/// One piece of a piecewise-constant coil current schedule within a TR.
struct CurrentSegment {
    double start_ms;
    double end_ms;
    double current_a;
};

struct CurrentWaveform {
    std::vector<CurrentSegment> segments;

    [[nodiscard]] bool empty() const { return segments.empty(); }
    /// Ordered, non-overlapping, inside [0, tr], constant nonzero magnitude.
    void validate(double tr_ms) const;
    [[nodiscard]] double current_at(double t_ms) const;
};

EventTimeline build_timeline(const SequenceParams& params);

/// Bit 0: no current. Bit 1: current on right after excitation until the end
/// of acquisition; for SE-EPI the polarity flips at the refocusing pulse.
CurrentWaveform current_waveform_for_bit(int bit, const SequenceParams& params, double current_a);

/// Constant +current from excitation to the end of acquisition with no
/// reversal, regardless of sequence kind (SE control experiment).
CurrentWaveform constant_current_waveform(const SequenceParams& params, double current_a);

/// Base timeline plus CurrentSet events for `waveform`. Coincident events are
/// ordered Rf, Refocus, CurrentSet, Readout.
EventTimeline merge_waveform(const EventTimeline& timeline, const CurrentWaveform& waveform);

struct RunOptions {
    /// Verify |m_xy|² + m_z² <= 1 + 1e-9 for every spin at each event boundary.
    bool check_magnitude = false;
};

/// Executes one TR per waveform on `ensemble` (mutated; m_z carries over,
/// transverse magnetisation is spoiled at the end of each TR). Returns S_bb(TE) per TR.
std::vector<Complex> run_schedule(SpinEnsemble& ensemble, const SequenceParams& params,
                                  std::span<const CurrentWaveform> waveforms, double m0, const RunOptions& options = {});

/// `n_tr` repetitions of the same waveform starting from a copy of `ensemble`.
std::vector<Complex> run_sequence(SpinEnsemble ensemble, const SequenceParams& params, const CurrentWaveform& waveform,
                                  int n_tr, double m0, const RunOptions& options = {});

/// Steady-state longitudinal factor for spoiled excitation at flip angle α:
/// (1 - E1) / (1 - cos α · E1), E1 = exp(-TR/T1).
double steady_state_scale(double t1_ms, double tr_ms, double flip_deg);

/// acos(exp(-TR/T1)) in degrees.
double ernst_angle(double t1_ms, double tr_ms);

void write_signals_csv(std::ostream& out, std::span<const Complex> signals);

}  // namespace mrdust

#endif  // MRDUST_SEQUENCES_HPP
