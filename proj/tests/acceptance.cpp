// Acceptance suite: one line per criterion, desk scale (64^3 spins).

#include "mrdust/contrast.hpp"
#include "mrdust/magnetics.hpp"
#include "mrdust/sequences.hpp"
#include "mrdust/spins.hpp"
#include "mrdust/uplink.hpp"
#include "support.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <thread>

using namespace mrdust;
using mrdust::testing::rel_err;
using mrdust::testing::square_loop;
namespace fs = std::filesystem;

namespace {

constexpr int kGrid = 64;

struct Outcome {
    bool pass = false;
    std::string detail;
};

SimulationConfig base_config() {
    SimulationConfig c;
    c.voxel = VoxelSpec::cube(2.0, kGrid);
    return c;
}

SequenceParams se(double te = 65.0) { return {SequenceKind::SeEpi, te, 1250.0, 90.0, 40.0}; }
SequenceParams gre(double te = 40.0) {
    return {SequenceKind::GreEpi, te, 1250.0, ernst_angle(kWhiteMatter3T.t1_ms, 1250.0), 40.0};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

Outcome field_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    const double a = 600.0;
    const auto loop = square_loop(a);
    const std::vector<Vec3> centre{Vec3::Zero()};
    const double bc = biot_savart_bz(loop, centre).bz_per_amp(0);
    const double expected = 2.0 * std::sqrt(2.0) * kMu0 / (std::numbers::pi * a * 1e-6);
    const double e_centre = rel_err(bc, expected);
    double e_far = 0.0;
    for (double k : {10.0, 15.0, 25.0, 50.0}) {
        const std::vector<Vec3> p{Vec3(0, 0, k * a)};
        const double b = biot_savart_bz(loop, p).bz_per_amp(0);
        e_far = std::max(e_far, rel_err(b, dipole_field_magnitude(a * a * 1e-12, k * a * 1e-6)));
    }
    const double dt_oracle = seconds_since(t0);
    const auto t1 = std::chrono::steady_clock::now();
    const auto map = biot_savart_bz(build_square_spiral(CoilSpec{}), voxel_grid_points_um(VoxelSpec::cube(2.0, kGrid)));
    const double dt_map = seconds_since(t1);
    return {e_centre < 1e-3 && e_far < 0.02 && dt_oracle < 1.0,
            fmt::format("centre rel err {:.2e} (<1e-3), far-field max rel err {:.2e} (<0.02), oracle checks {:.3f} s "
                        "(<1 s); 10-turn coil over {} points {:.2f} s",
                        e_centre, e_far, dt_oracle, map.size(), dt_map)};
}

Outcome relaxation_closed_forms() {
    auto cfg = base_config();
    cfg.mode = InhomogeneityMode::Explicit;
    const VoxelModel model(cfg);
    const auto& t = cfg.tissue;
    double worst_gre = 0.0, worst_se = 0.0;
    for (double te : {20.0, 44.7, 80.0}) {
        auto p = gre(te);
        p.flip_deg = 90.0;
        const double s = std::abs(run_sequence(model.ensemble(), p, {}, 1, model.m0())[0]);
        worst_gre = std::max(worst_gre, rel_err(s, model.m0() * std::exp(-te / t.t2_star_ms)));
    }
    for (double te : {35.0, 65.0, 100.0}) {
        const double s = std::abs(run_sequence(model.ensemble(), se(te), {}, 1, model.m0())[0]);
        worst_se = std::max(worst_se, rel_err(s, model.m0() * std::exp(-te / t.t2_ms)));
    }
    return {worst_gre < 0.015 && worst_se < 0.015,
            fmt::format("explicit {}^3: GRE max rel err {:.3e}, SE max rel err {:.3e} (<1.5%)", kGrid, worst_gre,
                        worst_se)};
}

Outcome refocusing_control() {
    auto cfg = base_config();
    cfg.mode = InhomogeneityMode::Explicit;
    const VoxelModel model(cfg);
    const auto p = se();
    const double off = std::abs(run_sequence(model.ensemble(), p, {}, 1, model.m0())[0]);
    double worst_const = 0.0, max_rev_ratio = 0.0;
    for (double i : {50e-6, 100e-6, 200e-6, 400e-6, 750e-6, 1e-3}) {
        const double c = std::abs(run_sequence(model.ensemble(), p, constant_current_waveform(p, i), 1, model.m0())[0]);
        const double r =
            std::abs(run_sequence(model.ensemble(), p, current_waveform_for_bit(1, p, i), 1, model.m0())[0]);
        worst_const = std::max(worst_const, rel_err(c, off));
        max_rev_ratio = std::max(max_rev_ratio, r / off);
    }
    return {worst_const < 0.005 && max_rev_ratio < 1.0,
            fmt::format("constant-current echo max rel dev {:.2e} (<0.5%), reversed echo / no-current <= {:.4f} (<1) "
                        "over 50-1000 uA",
                        worst_const, max_rev_ratio)};
}

Outcome te_peaks() {
    const auto cfg = base_config();
    const VoxelModel model(cfg);
    const auto grid = default_te_grid();
    std::vector<double> c_se, c_gre;
    for (double te : grid) {
        c_se.push_back(model.contrast(se(te), cfg.current_a).c_n);
        c_gre.push_back(model.contrast(gre(te), cfg.current_a).c_n);
    }
    const double te_se = grid[argmax(c_se)], te_gre = grid[argmax(c_gre)];
    std::size_t above = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) above += c_se[i] > c_gre[i];
    const double peak_se = c_se[argmax(c_se)], peak_gre = c_gre[argmax(c_gre)];
    const bool pass = std::abs(te_gre - 40.0) <= 7.0 && std::abs(te_se - 65.0) <= 7.0 && above == grid.size();
    return {pass, fmt::format("100 uA: GRE argmax TE {} ms (40+-7), SE argmax TE {} ms (65+-7); peak C_n SE {:.4f} vs "
                              "GRE {:.4f}; SE above GRE at {}/{} TEs",
                              te_gre, te_se, peak_se, peak_gre, above, grid.size())};
}

Outcome current_axis() {
    const auto cfg = base_config();
    SweepSpec spec{SweepAxis::Current, {}};
    for (int ua = 50; ua <= 750; ua += 50) spec.values.push_back(ua * 1e-6);
    const auto r = sweep(spec, cfg);
    bool increasing = true;
    for (std::size_t i = 1; i < r.c_n_values.size(); ++i) increasing &= r.c_n_values[i] > r.c_n_values[i - 1];
    const double ratio = r.c_n_values[7] / r.c_n_values[1];
    return {increasing && ratio < 4.0,
            fmt::format("SE TE 65: strictly increasing over 50-750 uA: {}; C_n(400)/C_n(100) = {:.3f} (<4)",
                        increasing ? "yes" : "no", ratio)};
}

Outcome width_vs_turns() {
    const auto cfg = base_config();
    const auto w = sweep(SweepSpec{SweepAxis::CoilWidth, {400.0, 800.0}}, cfg);
    const auto n = sweep(SweepSpec{SweepAxis::CoilTurns, {5.0, 15.0}}, cfg);
    const double dw = w.c_n_values[1] - w.c_n_values[0];
    const double dn = n.c_n_values[1] - n.c_n_values[0];
    return {dw > dn, fmt::format("dC_n width 400->800 um = {:.4f} > dC_n turns 5->15 = {:.4f}", dw, dn)};
}

Outcome voxel_ratio() {
    const auto cfg = base_config();
    SweepSpec spec{SweepAxis::VoxelRatio, {}};
    for (double v = 1.0; v <= 8.0 + 1e-9; v += 0.5) spec.values.push_back(v);
    const auto r = sweep(spec, cfg);
    bool decreasing = true;
    for (std::size_t i = 1; i < r.points.size(); ++i)
        if (r.axis_values[i - 1] >= 2.0) decreasing &= r.c_n_values[i] < r.c_n_values[i - 1];
    std::vector<double> field;
    for (const auto& p : r.points) field.push_back(p.receiver_field_t);
    const auto at = [&](double x) {
        const auto it = std::find_if(r.axis_values.begin(), r.axis_values.end(), [&](double v) { return v >= x - 1e-9; });
        return field[static_cast<std::size_t>(it - r.axis_values.begin())];
    };
    // quarters of [1, 8] sampled at the nearest grid values
    const double first = (at(2.75 + 0.25) - at(1.0)) / 2.0;
    const double last = (at(8.0) - at(6.25 - 0.25)) / 2.0;
    const bool rises = field[1] > field[0];
    const bool pass = decreasing && rises && first > 0.0 && std::abs(last) < 0.1 * first;
    return {pass, fmt::format("C_n decreasing for ratio >= 2: {}; receiver field first-quarter slope {:.3e} T, "
                              "last-quarter slope {:.3e} T (ratio {:.3f}, <0.1)",
                              decreasing ? "yes" : "no", first, last, last / first)};
}

Outcome tr_axis() {
    const auto cfg = base_config();
    const std::vector<double> trs{300, 500, 750, 1000, 1250, 1500, 2000, 3000, 5000, 10000};
    const auto r = sweep(SweepSpec{SweepAxis::Tr, trs}, cfg);
    const VoxelModel model(cfg);
    const double asymptote = model.contrast(cfg.sequence, cfg.current_a, 1).c_n;
    bool increasing = true, bounded = true;
    for (std::size_t i = 0; i < trs.size(); ++i) {
        if (i) increasing &= r.c_n_values[i] > r.c_n_values[i - 1];
        bounded &= r.c_n_values[i] <= asymptote;
    }
    const double ratio = r.c_n_values[4] / asymptote;
    const double dev = ratio / 0.7774055663 - 1.0;
    return {increasing && bounded && std::abs(dev) <= 0.03,
            fmt::format("steady-state C_n increasing: {}, <= TR=inf value: {}; C_n(1250)/C_n(inf) = {:.4f} vs 0.7774 "
                        "({:+.2f}%, +-3%)",
                        increasing ? "yes" : "no", bounded ? "yes" : "no", ratio, 100.0 * dev)};
}

Outcome averaging_crossover() {
    const auto cfg = base_config();
    const VoxelModel model(cfg);
    const double rate = averaging_crossover_rate(model, 4, 0.1, 5.0, 1e-3);
    return {rate >= 0.4 && rate <= 0.8, fmt::format("N=1 overtakes N=2..4 at {:.3f} bps ([0.4, 0.8])", rate)};
}

Outcome rotation() {
    const auto cfg = base_config();
    SweepSpec spec{SweepAxis::RotationAngle, {}};
    for (double a = -90.0; a <= 90.0 + 1e-9; a += 22.5) spec.values.push_back(a);
    const auto r = sweep(spec, cfg);
    const double c0 = r.c_n_values[4];
    const double lo = r.c_n_values.front() / c0, hi = r.c_n_values.back() / c0;
    const bool max_at_zero = argmax(r.c_n_values) == 4;
    return {max_at_zero && std::abs(lo - 0.83) <= 0.05 && std::abs(hi - 0.83) <= 0.05,
            fmt::format("C_n(-90)/C_n(0) = {:.3f}, C_n(+90)/C_n(0) = {:.3f} (0.83+-0.05); max at 0 deg: {}", lo, hi,
                        max_at_zero ? "yes" : "no")};
}

Outcome cnr_estimate() {
    auto cfg = base_config();
    cfg.current_a = 200e-6;
    const VoxelModel model(cfg);
    const double c_n = model.contrast(se(65.0), cfg.current_a).c_n;
    const double scaled = scale_snr_to_volume(72.94, 2.0 * 2.0 * 3.6, 2.0 * 2.0 * 2.0);
    const double est = estimate_cnr_from_scanner(72.94, 2.0 * 2.0 * 3.6, 2.0 * 2.0 * 2.0, c_n);
    return {std::abs(scaled - 40.52) <= 0.01 && std::abs(est / 8.04 - 1.0) <= 0.25,
            fmt::format("scaled SNR {:.4f} (40.52+-0.01); C_n(200 uA, TE 65) = {:.4f}; CNR = {:.3f} (8.04+-25%)", scaled,
                        c_n, est)};
}

Outcome chip_design() {
    auto cfg = base_config();
    cfg.coil.outer_width_um = 630.0;
    cfg.coil.layers = 2;
    cfg.coil.layer_z_offsets_um = default_layer_offsets(2);
    const VoxelModel model(cfg);
    const double c_n = model.contrast(se(35.0), 100e-6).c_n;
    return {std::abs(c_n - 0.10) <= 0.03,
            fmt::format("630 um, 10 turns, 2 layers, 100 uA, SE TE 35: C_n = {:.4f} (0.10+-0.03)", c_n)};
}

Outcome uplink_end_to_end() {
    // Clean levels from the physics chain on a coarser ensemble; the noise is scaled to the target CNR.
    auto cfg = base_config();
    cfg.voxel = VoxelSpec::cube(2.0, 16);
    cfg.current_a = 200e-6;
    const VoxelModel model(cfg);
    const auto p = se();
    constexpr int kBits = 1'000'000, kZeros = 8, kOnes = 8;
    std::mt19937_64 rng(2024);
    std::vector<int> payload(kBits);
    for (auto& b : payload) b = static_cast<int>(rng() >> 63);
    std::vector<int> bits(kZeros, 0);
    bits.insert(bits.end(), kOnes, 1);
    bits.insert(bits.end(), payload.begin(), payload.end());
    const auto clean = implant_magnitudes(encode_bits(bits, p, cfg.current_a, 1), model, p);
    const auto levels = calibrate_from_preamble(clean, kZeros, kOnes);
    const double noise = (levels.mean_off - levels.mean_on) / 8.0;

    const auto stack = synthesize_from_magnitudes(clean, bits, Scene{1, 1, 0.0, 0, 0, noise, 99});
    std::vector<double> series;
    series.reserve(stack.size());
    for (const auto& f : stack.frames) series.push_back(f(0, 0));
    const std::span<const double> body = std::span<const double>(series).subspan(kZeros + kOnes);
    const double b_oracle = ber(decode(body, levels, 1), payload);
    const double b_preamble = ber(decode(body, calibrate_from_preamble(series, kZeros, kOnes), 1), payload);
    const double q4 = q_function(4.0);

    // localization: 50 off + 50 on frames on an 8x8 slice
    std::vector<int> trial_bits(100);
    for (int i = 0; i < 100; ++i) trial_bits[static_cast<std::size_t>(i)] = i % 2;
    std::shuffle(trial_bits.begin(), trial_bits.end(), rng);
    const auto trial_clean = implant_magnitudes(encode_bits(trial_bits, p, cfg.current_a, 1), model, p);
    int found = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Scene scene{8, 8, levels.mean_off, 3, 5, noise, static_cast<std::uint64_t>(1000 + trial)};
        const auto st = synthesize_from_magnitudes(trial_clean, trial_bits, scene);
        const auto d = detect(t_score_map(st));
        found += d.detected && d.voxel == VoxelIndex{3, 5};
    }
    const bool pass = b_oracle >= q4 / 3.0 && b_oracle <= 3.0 * q4 && found >= 99;
    return {pass, fmt::format("CNR 8, N=1, {} bits: BER {:.3e} vs Q(4) {:.3e} (x{:.2f}, within 3x); preamble-calibrated "
                              "BER {:.3e}; localization {}/100 (>=99)",
                              kBits, b_oracle, q4, b_oracle / q4, b_preamble, found)};
}

Outcome welch_oracle() {
    const std::vector<double> a{4, 5, 6}, b{1, 2, 3};
    const auto r = welch_t_test(a, b);
    return {std::abs(r.t - 3.674) <= 1e-3 && std::abs(r.dof - 4.0) <= 1e-6,
            fmt::format("t = {:.6f} (3.674+-1e-3), dof = {:.9f} (4+-1e-6), one-sided p = {:.6f}", r.t, r.dof, r.p)};
}

Outcome longer_te_contrast() {
    const auto cfg = base_config();
    const VoxelModel model(cfg);
    bool ok = true;
    std::string detail;
    for (double i : {100e-6, 200e-6, 400e-6}) {
        const double c35 = model.contrast(se(35.0), i).c_n, c65 = model.contrast(se(65.0), i).c_n;
        ok &= c65 > c35;
        detail += fmt::format("{} uA: TE65 {:.4f} vs TE35 {:.4f}; ", std::lround(i * 1e6), c65, c35);
    }
    return {ok, detail + "measured CNR 25.58 and scanner images not reproducible at desk scale"};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism() {
    const fs::path work = fs::temp_directory_path() / "mrdust_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);
    std::ofstream(work / "c.ini") << "seed = 11\n[coil]\nouter_width_um = 600\n[voxel]\ngrid_n = 24\n"
                                     "[sequence]\nkind = se_epi\nte_ms = 65\n[physics]\ncurrent_ua = 200\n"
                                     "[sweep]\naxis = te\nstart = 20\nstop = 100\nstep = 10\n"
                                     "[uplink]\nnx = 6\nny = 6\nimplant_x = 2\nimplant_y = 3\nbaseline = 0.5\n"
                                     "target_cnr = 4\n";
    std::ofstream(work / "bits.txt") << "0110100111010010110010100111\n";
    const int many = static_cast<int>(std::max(4u, std::thread::hardware_concurrency()));
    const auto cli = [&](int threads, const std::string& dir, const std::string& tail) {
        const std::string cmd = fmt::format("{} --threads {} --config {} --out {} {} > /dev/null 2>&1", MRDUST_CLI,
                                            threads, (work / "c.ini").string(), (work / dir).string(), tail);
        return std::system(cmd.c_str()) == 0;
    };
    const auto same = [&](const std::string& a, const std::string& b) {
        std::size_t files = 0;
        for (const auto& e : fs::recursive_directory_iterator(work / a)) {
            if (!e.is_regular_file()) continue;
            const auto other = work / b / fs::relative(e.path(), work / a);
            if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return std::size_t{0};
            ++files;
        }
        return files;
    };
    std::size_t compared = 0;
    bool ok = true;
    std::string failed;
    const std::vector<std::pair<std::string, std::string>> runs{
        {"field", "field"}, {"sweep", "sweep"}, {"sequence", "sequence"},
        {"uplink", "uplink " + (work / "bits.txt").string()},
        {"detect", "detect " + (work / "uplink_1" / "stack").string()}};
    for (const auto& [name, tail] : runs) {
        const bool ran = cli(1, name + "_1", tail) && cli(many, name + "_n", tail) && cli(1, name + "_r", tail);
        const std::size_t n1 = ran ? same(name + "_1", name + "_n") : 0;
        const std::size_t n2 = ran ? same(name + "_1", name + "_r") : 0;
        if (n1 == 0 || n2 == 0) {
            ok = false;
            failed += " " + name;
        }
        compared += n1;
    }
    return {ok, fmt::format("field/sweep/sequence/uplink/detect rerun at 1 and {} threads: {} files byte-identical{}",
                            many, compared, ok ? "" : "; mismatch in" + failed)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"field oracle", field_oracle},
        {"relaxation closed forms", relaxation_closed_forms},
        {"refocusing control", refocusing_control},
        {"TE peaks GRE/SE", te_peaks},
        {"current axis", current_axis},
        {"width vs turns", width_vs_turns},
        {"voxel/coil ratio", voxel_ratio},
        {"TR steady state", tr_axis},
        {"averaging crossover", averaging_crossover},
        {"rotation", rotation},
        {"scanner CNR estimate", cnr_estimate},
        {"chip coil design target", chip_design},
        {"uplink end to end", uplink_end_to_end},
        {"Welch t-test oracle", welch_oracle},
        {"longer TE gives more contrast", longer_te_contrast},
        {"determinism", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, fmt::format("threw: {}", e.what())};
        }
        failures += !o.pass;
        fmt::print("[{}] {:2d} {}: {} [{:.1f} s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail,
                   seconds_since(t0));
        std::fflush(stdout);
    }
    fmt::print("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failures), criteria.size());
    return failures == 0 ? 0 : 1;
}
