#include "mrdust/config.hpp"
#include "mrdust/contrast.hpp"
#include "mrdust/magnetics.hpp"
#include "mrdust/sequences.hpp"
#include "mrdust/spins.hpp"
#include "mrdust/uplink.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace mrdust;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kDomain = 3, kDetection = 4 };

struct Options {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::string bits_path;
    std::string stack_dir;
};

Config load(const Options& o) {
    Config cfg = o.config_path.empty() ? parse_config_text("", "<defaults>") : load_config(o.config_path);
    if (o.seed) set_seed(cfg, *o.seed);
    return cfg;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) { open_out(path) << j.dump(2) << '\n'; }

void write_sidecar(const fs::path& out, const std::string& subcommand, const Config& cfg) {
    nlohmann::json j;
    j["tool"] = "mrdust";
    j["version"] = kVersion;
    j["subcommand"] = subcommand;
    j["seed"] = cfg.sim.seed;
    j["config"] = cfg.resolved;
    write_json(out / "run.json", j);
}

void cmd_field(const Options& o) {
    Config cfg = load(o);
    require_sections(cfg, {"coil", "voxel"}, "field");
    const fs::path out(o.out_dir);
    fs::create_directories(out);
    cfg.sim.coil.validate();
    cfg.sim.voxel.validate();
    const auto segments = build_square_spiral(cfg.sim.coil);
    const auto points = voxel_grid_points_um(cfg.sim.voxel);
    const FieldMap map = biot_savart_bz(segments, points, cfg.sim.field);
    auto csv = open_out(out / "field.csv");
    write_field_csv(csv, map, cfg.sim.current_a);
    write_sidecar(out, "field", cfg);
}

void cmd_sweep(const Options& o) {
    Config cfg = load(o);
    require_sections(cfg, {"sweep"}, "sweep");
    const fs::path out(o.out_dir);
    fs::create_directories(out);
    const SweepResult result = sweep(cfg.sweep, cfg.sim);
    auto csv = open_out(out / "sweep.csv");
    write_sweep_csv(csv, result);
    nlohmann::json meta = result.metadata;
    meta["seed"] = cfg.sim.seed;
    write_json(out / "sweep.json", meta);
    write_sidecar(out, "sweep", cfg);
}

void cmd_sequence(const Options& o) {
    Config cfg = load(o);
    require_sections(cfg, {"sequence"}, "sequence");
    const fs::path out(o.out_dir);
    fs::create_directories(out);
    cfg.sim.sequence.validate();
    const VoxelModel model(cfg.sim);
    const auto waveform = current_waveform_for_bit(cfg.bit, cfg.sim.sequence, cfg.sim.current_a);
    const auto signals = run_sequence(model.ensemble(), cfg.sim.sequence, waveform, cfg.n_tr, model.m0());
    auto csv = open_out(out / "signals.csv");
    write_signals_csv(csv, signals);
    write_sidecar(out, "sequence", cfg);
}

Scene scene_from(const UplinkConfig& u, std::uint64_t seed) {
    Scene s;
    s.nx = u.nx;
    s.ny = u.ny;
    s.implant_x = u.implant_x;
    s.implant_y = u.implant_y;
    s.seed = seed;
    return s;
}

nlohmann::json detection_json(const Detection& d, const TMap& tmap, double alpha) {
    return {{"ix", d.voxel.ix},
            {"iy", d.voxel.iy},
            {"t", d.t},
            {"p", d.p},
            {"p_bonferroni", d.p_bonferroni},
            {"defined_voxels", tmap.defined_count()},
            {"alpha", alpha},
            {"detected", d.detected}};
}

void cmd_uplink(const Options& o) {
    Config cfg = load(o);
    require_sections(cfg, {"sequence", "uplink"}, "uplink");
    std::ifstream bits_in(o.bits_path);
    if (!bits_in) throw ConfigError(fmt::format("cannot open bits file {}", o.bits_path));
    std::vector<int> payload;
    try {
        payload = read_bits(bits_in);
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", o.bits_path, e.what()));
    }
    if (payload.empty()) throw ConfigError(fmt::format("{}: no bits", o.bits_path));
    const fs::path out(o.out_dir);
    fs::create_directories(out);

    const auto& u = cfg.uplink;
    const auto& seq = cfg.sim.sequence;
    seq.validate();
    std::vector<int> bits(static_cast<std::size_t>(u.preamble_zeros), 0);
    bits.insert(bits.end(), static_cast<std::size_t>(u.preamble_ones), 1);
    bits.insert(bits.end(), payload.begin(), payload.end());

    const VoxelModel model(cfg.sim);
    const BitSchedule schedule = encode_bits(bits, seq, cfg.sim.current_a, u.n_averages);
    const auto implant = implant_magnitudes(schedule, model, seq);
    std::vector<int> labels;
    for (const int b : bits)
        for (int k = 0; k < u.n_averages; ++k) labels.push_back(b);

    // steady-state levels from the clean preamble
    const auto clean = calibrate_from_preamble(implant, u.preamble_zeros * u.n_averages,
                                               u.preamble_ones * u.n_averages);
    const double contrast = clean.mean_off - clean.mean_on;
    Scene scene = scene_from(u, cfg.sim.seed);
    scene.baseline_intensity = u.baseline * model.m0();
    if (u.noise_std) scene.noise_std = *u.noise_std * model.m0();
    if (u.target_cnr) {
        if (!(*u.target_cnr > 0.0)) throw ConfigError("uplink.target_cnr must be > 0");
        scene.noise_std = contrast / *u.target_cnr;
    }
    ImageStack stack = synthesize_from_magnitudes(implant, labels, scene);
    stack.params = to_json(cfg.sim);
    stack.params["n_averages"] = u.n_averages;
    stack.params["scene"] = {{"nx", scene.nx},
                             {"ny", scene.ny},
                             {"baseline_intensity", scene.baseline_intensity},
                             {"implant_x", scene.implant_x},
                             {"implant_y", scene.implant_y},
                             {"noise_std", scene.noise_std}};
    save_stack(out / "stack", stack);

    const TMap tmap = t_score_map(stack);
    const Detection det = detect(tmap, u.alpha);
    const auto series = stack.voxel_series(det.voxel.ix, det.voxel.iy).values;
    const int pre = (u.preamble_zeros + u.preamble_ones) * u.n_averages;
    const auto cal = calibrate_from_preamble(series, u.preamble_zeros * u.n_averages, u.preamble_ones * u.n_averages);
    const auto decoded = decode(std::span<const double>(series).subspan(static_cast<std::size_t>(pre)), cal, u.n_averages);
    auto bits_out = open_out(out / "decoded.txt");
    write_bits(bits_out, decoded);

    std::size_t errors = 0;
    for (std::size_t i = 0; i < payload.size(); ++i) errors += decoded[i] != payload[i];
    nlohmann::json report;
    report["n_bits"] = payload.size();
    report["errors"] = errors;
    report["ber"] = ber(decoded, payload);
    report["noise_std"] = scene.noise_std;
    report["clean_contrast"] = contrast;
    report["cnr"] = scene.noise_std > 0.0 ? nlohmann::json(contrast / scene.noise_std) : nlohmann::json(nullptr);
    report["calibration"] = {{"mean_off", cal.mean_off}, {"mean_on", cal.mean_on}};
    report["detection"] = detection_json(det, tmap, u.alpha);
    report["located_implant"] = det.voxel == VoxelIndex{u.implant_x, u.implant_y};
    write_json(out / "report.json", report);
    write_sidecar(out, "uplink", cfg);
}

void write_tmap_csv(std::ostream& out, const TMap& m) {
    out << "ix,iy,t,p,dof\n";
    for (int iy = 0; iy < m.ny; ++iy)
        for (int ix = 0; ix < m.nx; ++ix) {
            if (!m.defined(iy, ix)) {
                out << fmt::format("{},{},,1,\n", ix, iy);
                continue;
            }
            out << fmt::format("{},{},{:.12e},{:.12e},{:.12e}\n", ix, iy, m.t(iy, ix), m.p(iy, ix), m.dof(iy, ix));
        }
}

void cmd_detect(const Options& o) {
    Config cfg = load(o);
    const fs::path out(o.out_dir);
    fs::create_directories(out);
    const ImageStack stack = load_stack(o.stack_dir);
    const TMap tmap = t_score_map(stack);
    const Detection det = detect(tmap, cfg.uplink.alpha);
    auto csv = open_out(out / "tmap.csv");
    write_tmap_csv(csv, tmap);
    write_json(out / "detection.json", detection_json(det, tmap, cfg.uplink.alpha));
    write_sidecar(out, "detect", cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MRDust data-uplink simulator"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config_path, "INI config or a run.json sidecar")->check(CLI::ExistingFile);
    app.add_option("--out", o.out_dir, "output directory");
    app.add_option("--seed", o.seed, "RNG seed (overrides the config)");
    app.add_option("--threads", o.threads, "worker threads (default: all cores)")->check(CLI::NonNegativeNumber);

    auto* field = app.add_subcommand("field", "coil Bz over the voxel grid -> field.csv");
    auto* sweep_cmd = app.add_subcommand("sweep", "contrast design-space sweep -> sweep.csv, sweep.json");
    auto* sequence = app.add_subcommand("sequence", "per-TR echo signals -> signals.csv");
    auto* uplink = app.add_subcommand("uplink", "encode, image, locate and decode a bit stream");
    uplink->add_option("bits", o.bits_path, "ASCII 0/1 bits file")->required();
    auto* detect_cmd = app.add_subcommand("detect", "t-score map and implant location for a saved stack");
    detect_cmd->add_option("stack", o.stack_dir, "image stack directory")->required()->check(CLI::ExistingDirectory);
    for (auto* sub : {field, sweep_cmd, sequence, uplink, detect_cmd}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (o.threads > 0) set_threads(o.threads);
        if (*field) cmd_field(o);
        else if (*sweep_cmd) cmd_sweep(o);
        else if (*sequence) cmd_sequence(o);
        else if (*uplink) cmd_uplink(o);
        else if (*detect_cmd) cmd_detect(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const DetectionFailure& e) {
        std::cerr << "detection failure: " << e.what() << '\n';
        return kDetection;
    } catch (const DomainError& e) {
        std::cerr << "domain error: " << e.what() << '\n';
        return kDomain;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kOther;
    }
    return kOk;
}
