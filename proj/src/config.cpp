#include "mrdust/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

namespace mrdust {

namespace {

struct Entry {
    std::string value;
    int line = 0;
};

using Section = std::map<std::string, Entry>;
using RawConfig = std::map<std::string, Section>;  // "" holds top-level keys

constexpr std::array<std::string_view, 10> kUnitSuffixes{"_per_m3", "_mhz_per_t", "_um", "_mm", "_ms",
                                                          "_ua",     "_deg",       "_t",  "_k",  "_m"};

std::string stem(const std::string& key) {
    for (auto suffix : kUnitSuffixes)
        if (key.size() > suffix.size() && key.ends_with(suffix)) return key.substr(0, key.size() - suffix.size());
    return key;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

class SectionReader {
public:
    SectionReader(std::string name, const Section* entries, std::string origin, nlohmann::json& resolved)
        : name_(std::move(name)), entries_(entries), origin_(std::move(origin)), resolved_(resolved) {}

    double number(const std::string& key, double fallback) {
        const double v = opt_number(key).value_or(fallback);
        record(key, v);
        return v;
    }

    std::optional<double> opt_number(const std::string& key, bool keep = false) {
        const Entry* e = find(key);
        if (!e) return std::nullopt;
        const double v = parse_double(key, *e, e->value);
        if (keep) record(key, v);
        return v;
    }

    int integer(const std::string& key, int fallback) {
        int v = fallback;
        if (const Entry* e = find(key)) {
            const std::string s = trim(e->value);
            const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) fail(key, *e, "expected an integer", s);
        }
        record(key, v);
        return v;
    }

    std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
        std::uint64_t v = fallback;
        if (const Entry* e = find(key)) {
            const std::string s = trim(e->value);
            const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
                fail(key, *e, "expected a non-negative integer", s);
        }
        record(key, v);
        return v;
    }

    std::string text(const std::string& key, const std::string& fallback) {
        std::string v = fallback;
        if (const Entry* e = find(key)) v = unquote(trim(e->value));
        record(key, v);
        return v;
    }

    bool flag(const std::string& key, bool fallback) {
        bool v = fallback;
        if (const Entry* e = find(key)) {
            const std::string s = trim(e->value);
            if (s == "true" || s == "1") v = true;
            else if (s == "false" || s == "0") v = false;
            else fail(key, *e, "expected true or false", s);
        }
        record(key, v);
        return v;
    }

    std::optional<std::vector<double>> opt_list(const std::string& key) {
        const Entry* e = find(key);
        if (!e) return std::nullopt;
        std::string s = trim(e->value);
        if (s.starts_with('[') && s.ends_with(']')) s = s.substr(1, s.size() - 2);
        std::vector<double> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(parse_double(key, *e, item));
        return out;
    }

    std::vector<double> list(const std::string& key, const std::vector<double>& fallback) {
        auto v = opt_list(key).value_or(fallback);
        record(key, v);
        return v;
    }

    Vec3 vec3(const std::string& key, const Vec3& fallback) {
        const auto v = opt_list(key);
        if (v && v->size() != 3) fail(key, *find(key), "expected three comma-separated numbers", find(key)->value);
        const Vec3 out = v ? Vec3((*v)[0], (*v)[1], (*v)[2]) : fallback;
        record(key, std::vector<double>{out.x(), out.y(), out.z()});
        return out;
    }

    /// Rejects keys that were never asked for, pointing out unit-suffix mistakes.
    void finish() const {
        if (!entries_) return;
        for (const auto& [key, entry] : *entries_) {
            if (queried_.contains(key)) continue;
            const std::string where = location(entry);
            for (const auto& known : queried_) {
                if (stem(known) == stem(key))
                    throw ConfigError(fmt::format("{}: key '{}' has the wrong unit suffix; expected '{}'", where,
                                                  qualified(key), qualified(known)));
            }
            throw ConfigError(fmt::format("{}: unknown key '{}'", where, qualified(key)));
        }
    }

private:
    const Entry* find(const std::string& key) {
        queried_.insert(key);
        if (!entries_) return nullptr;
        const auto it = entries_->find(key);
        return it == entries_->end() ? nullptr : &it->second;
    }

    template <typename T>
    void record(const std::string& key, const T& v) {
        if (name_.empty()) resolved_[key] = v;
        else resolved_[name_][key] = v;
    }

    double parse_double(const std::string& key, const Entry& e, const std::string& raw) const {
        const std::string s = trim(raw);
        double v = 0.0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v))
            fail(key, e, "expected a number", s);
        return v;
    }

    static std::string unquote(const std::string& s) {
        if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
            return s.substr(1, s.size() - 2);
        return s;
    }

    std::string qualified(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }
    std::string location(const Entry& e) const {
        return e.line > 0 ? fmt::format("{}:{}", origin_, e.line) : origin_;
    }

    [[noreturn]] void fail(const std::string& key, const Entry& e, const std::string& what,
                           const std::string& got) const {
        throw ConfigError(fmt::format("{}: '{}': {}, got '{}'", location(e), qualified(key), what, got));
    }

    std::string name_;
    const Section* entries_;
    std::string origin_;
    nlohmann::json& resolved_;
    std::set<std::string> queried_;
};

constexpr std::array<std::string_view, 9> kSections{"coil",   "voxel", "tissue", "constants", "sequence",
                                                    "field",  "physics", "sweep", "uplink"};

Config build(const RawConfig& raw, const std::string& origin) {
    for (const auto& [name, section] : raw) {
        if (name.empty()) continue;
        if (std::find(kSections.begin(), kSections.end(), name) == kSections.end()) {
            const int line = section.empty() ? 0 : section.begin()->second.line;
            throw ConfigError(fmt::format("{}: unknown section [{}]", line > 0 ? fmt::format("{}:{}", origin, line - 1)
                                                                               : origin, name));
        }
    }

    Config cfg;
    cfg.resolved = nlohmann::json::object();
    const auto section = [&](const std::string& name) {
        const auto it = raw.find(name);
        if (it != raw.end() && !name.empty()) cfg.sections.insert(name);
        return SectionReader(name, it == raw.end() ? nullptr : &it->second, origin, cfg.resolved);
    };
    auto& sim = cfg.sim;

    {
        auto r = section("");
        sim.seed = r.unsigned_integer("seed", 1);
        r.finish();
    }
    {
        auto r = section("coil");
        sim.coil.outer_width_um = r.number("outer_width_um", 600.0);
        sim.coil.turns = r.integer("turns", 10);
        sim.coil.trace_spacing_um = r.number("trace_spacing_um", 10.0);
        sim.coil.trace_width_um = r.number("trace_width_um", 5.0);
        sim.coil.layers = r.integer("layers", 1);
        sim.coil.layer_z_offsets_um = r.list("layer_z_offsets_um", default_layer_offsets(sim.coil.layers));
        sim.coil.rotation_deg = r.number("rotation_deg", 0.0);
        sim.coil.center_um = r.vec3("center_um", Vec3::Zero());
        r.finish();
    }
    {
        auto r = section("voxel");
        const double w = r.opt_number("width_mm").value_or(2.0);
        const auto n = r.opt_number("grid_n");
        if (n && (*n != std::floor(*n) || *n < 1)) throw ConfigError(fmt::format("{}: voxel.grid_n must be a positive integer", origin));
        const int gn = n ? static_cast<int>(*n) : 100;
        sim.voxel.width_x_mm = r.number("width_x_mm", w);
        sim.voxel.width_y_mm = r.number("width_y_mm", w);
        sim.voxel.width_z_mm = r.number("width_z_mm", w);
        sim.voxel.grid_nx = r.integer("grid_nx", gn);
        sim.voxel.grid_ny = r.integer("grid_ny", gn);
        sim.voxel.grid_nz = r.integer("grid_nz", gn);
        sim.voxel.center_mm = r.vec3("center_mm", Vec3::Zero());
        r.finish();
    }
    {
        auto r = section("tissue");
        sim.tissue.t1_ms = r.number("t1_ms", kWhiteMatter3T.t1_ms);
        sim.tissue.t2_ms = r.number("t2_ms", kWhiteMatter3T.t2_ms);
        sim.tissue.t2_star_ms = r.number("t2_star_ms", kWhiteMatter3T.t2_star_ms);
        r.finish();
    }
    {
        auto r = section("constants");
        sim.constants.gamma_over_2pi_mhz_per_t = r.number("gamma_over_2pi_mhz_per_t", kGammaOver2PiMHzPerT);
        sim.constants.b0_t = r.number("b0_t", 3.0);
        sim.constants.temperature_k = r.number("temperature_k", 310.0);
        sim.constants.spin_density_per_m3 = r.number("spin_density_per_m3", 6.7e28);
        r.finish();
        if (!(sim.constants.b0_t > 0.0)) throw ConfigError(fmt::format("{}: constants.b0_t must be > 0", origin));
    }
    {
        auto r = section("sequence");
        sim.sequence.kind = parse_sequence_kind(r.text("kind", "se_epi"));
        sim.sequence.te_ms = r.number("te_ms", 65.0);
        sim.sequence.tr_ms = r.number("tr_ms", 1250.0);
        const double default_flip = sim.sequence.kind == SequenceKind::SeEpi
                                        ? 90.0
                                        : std::round(ernst_angle(sim.tissue.t1_ms, sim.sequence.tr_ms) * 1e6) / 1e6;
        sim.sequence.flip_deg = r.number("flip_deg", default_flip);
        sim.sequence.acq_ms = r.number("acq_ms", 40.0);
        cfg.n_tr = r.integer("n_tr", 3);
        cfg.bit = r.integer("bit", 1);
        r.finish();
        if (cfg.n_tr < 1) throw ConfigError(fmt::format("{}: sequence.n_tr must be >= 1", origin));
        if (cfg.bit != 0 && cfg.bit != 1) throw ConfigError(fmt::format("{}: sequence.bit must be 0 or 1", origin));
    }
    {
        auto r = section("field");
        sim.field.exclusion_radius_um = r.number("exclusion_radius_um", 2.0);
        const std::string policy = r.text("exclusion_policy", "clamp");
        if (policy == "clamp") sim.field.policy = ExclusionPolicy::Clamp;
        else if (policy == "skip") sim.field.policy = ExclusionPolicy::Skip;
        else throw ConfigError(fmt::format("{}: field.exclusion_policy must be clamp or skip, got '{}'", origin, policy));
        r.finish();
    }
    {
        auto r = section("physics");
        cfg.current_ua = r.number("current_ua", 100.0);
        sim.current_a = cfg.current_ua * 1e-6;
        const std::string mode = r.text("mode", "lumped");
        if (mode == "lumped") sim.mode = InhomogeneityMode::Lumped;
        else if (mode == "explicit") sim.mode = InhomogeneityMode::Explicit;
        else throw ConfigError(fmt::format("{}: physics.mode must be lumped or explicit, got '{}'", origin, mode));
        r.finish();
    }
    {
        auto r = section("sweep");
        cfg.sweep_axis_name = r.text("axis", "te");
        cfg.sweep.axis = parse_sweep_axis(cfg.sweep_axis_name);
        std::vector<double> values;
        if (const auto explicit_values = r.opt_list("values")) {
            values = *explicit_values;
            cfg.resolved["sweep"]["values"] = values;
        } else {
            const auto start = r.opt_number("start", true);
            const auto stop = r.opt_number("stop", true);
            const auto step = r.opt_number("step", true);
            if (start || stop || step) {
                if (!(start && stop && step)) throw ConfigError(fmt::format("{}: sweep needs start, stop and step together", origin));
                if (*step == 0.0 || (*stop - *start) / *step < 0.0)
                    throw ConfigError(fmt::format("{}: sweep range is empty (start={}, stop={}, step={})", origin, *start, *stop, *step));
                const auto count = static_cast<long>(std::floor((*stop - *start) / *step + 1e-9)) + 1;
                for (long i = 0; i < count; ++i) values.push_back(*start + static_cast<double>(i) * *step);
            }
        }
        if (cfg.sweep.axis == SweepAxis::Current)
            for (auto& v : values) v *= 1e-6;  // µA -> A
        cfg.sweep.values = values;
        cfg.sweep.peak_over_te = r.flag("peak_over_te", false);
        const double te_max = r.number("te_max_ms", 150.0);
        const double te_step = r.number("te_step_ms", 2.5);
        if (!(te_step > 0.0)) throw ConfigError(fmt::format("{}: sweep.te_step_ms must be > 0", origin));
        cfg.sweep.te_grid_ms = default_te_grid(te_max, te_step);
        cfg.sweep.snr_at_s0 = r.opt_number("snr_at_s0", true);
        cfg.sweep.receiver_distance_m = r.number("receiver_distance_m", 0.03);
        r.finish();
    }
    {
        auto r = section("uplink");
        auto& u = cfg.uplink;
        u.n_averages = r.integer("n_averages", 1);
        u.nx = r.integer("nx", 8);
        u.ny = r.integer("ny", 8);
        u.implant_x = r.integer("implant_x", 3);
        u.implant_y = r.integer("implant_y", 4);
        u.baseline = r.number("baseline", 0.0);
        u.noise_std = r.opt_number("noise_std", true);
        u.target_cnr = r.opt_number("target_cnr", true);
        u.preamble_zeros = r.integer("preamble_zeros", 8);
        u.preamble_ones = r.integer("preamble_ones", 8);
        u.alpha = r.number("alpha", 0.05);
        r.finish();
        if (u.noise_std && u.target_cnr) throw ConfigError(fmt::format("{}: give uplink.noise_std or uplink.target_cnr, not both", origin));
        if (u.n_averages < 1) throw ConfigError(fmt::format("{}: uplink.n_averages must be >= 1", origin));
        if (u.preamble_zeros < 2 || u.preamble_ones < 1)
            throw ConfigError(fmt::format("{}: uplink preamble needs >= 2 zeros and >= 1 one", origin));
    }
    return cfg;
}

// Line numbers for `key = value` entries, keyed by section then key.
std::map<std::string, std::map<std::string, int>> index_lines(const std::string& text) {
    std::map<std::string, std::map<std::string, int>> lines;
    static const std::regex section_re(R"(^\s*\[\s*([^\]]+?)\s*\]\s*$)");
    static const std::regex key_re(R"(^\s*([^=;#\s][^=]*?)\s*=)");
    std::stringstream ss(text);
    std::string line, current;
    int n = 0;
    std::smatch m;
    while (std::getline(ss, line)) {
        ++n;
        if (std::regex_match(line, m, section_re)) {
            current = m[1];
            lines[current]["\x01section"] = n;
        } else if (std::regex_search(line, m, key_re)) {
            lines[current].emplace(m[1], n);
        }
    }
    return lines;
}

}  // namespace

Config parse_config_text(const std::string& text, const std::string& origin) {
    boost::property_tree::ptree tree;
    std::stringstream ss(text);
    try {
        boost::property_tree::ini_parser::read_ini(ss, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(fmt::format("{}:{}: {}", origin, e.line(), e.message()));
    }
    const auto lines = index_lines(text);
    const auto line_of = [&](const std::string& section, const std::string& key) {
        const auto s = lines.find(section);
        if (s == lines.end()) return 0;
        const auto k = s->second.find(key);
        return k == s->second.end() ? 0 : k->second;
    };
    RawConfig raw;
    for (const auto& [name, child] : tree) {
        if (child.empty()) {
            raw[""][name] = Entry{child.data(), line_of("", name)};
            continue;
        }
        auto& sec = raw[name];
        for (const auto& [key, value] : child) sec[key] = Entry{value.data(), line_of(name, key)};
    }
    // sections with no keys still count as present
    for (const auto& [name, keys] : lines)
        if (!name.empty()) raw.try_emplace(name);
    for (auto& [name, sec] : raw)
        if (!name.empty() && sec.empty()) {
            // keep an empty marker so presence is recorded
        }
    return build(raw, origin);
}

Config parse_config_json(const nlohmann::json& input, const std::string& origin) {
    const nlohmann::json& j = input.contains("config") ? input.at("config") : input;
    if (!j.is_object()) throw ConfigError(fmt::format("{}: config must be a JSON object", origin));
    const auto to_text = [](const nlohmann::json& v) -> std::string {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_array()) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i].dump();
            return s;
        }
        return v.dump();
    };
    RawConfig raw;
    for (const auto& [name, value] : j.items()) {
        if (value.is_object()) {
            auto& sec = raw[name];
            for (const auto& [key, v] : value.items()) sec[key] = Entry{to_text(v), 0};
        } else {
            raw[""][name] = Entry{to_text(value), 0};
        }
    }
    return build(raw, origin);
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config file {}", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (path.extension() == ".json" || (first != std::string::npos && text[first] == '{')) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
        }
        return parse_config_json(j, path.string());
    }
    return parse_config_text(text, path.string());
}

void require_sections(const Config& config, std::initializer_list<const char*> names, const std::string& subcommand) {
    for (const char* name : names)
        if (!config.sections.contains(name))
            throw ConfigError(fmt::format("subcommand '{}' requires a [{}] section", subcommand, name));
}

void set_seed(Config& config, std::uint64_t seed) {
    config.sim.seed = seed;
    config.resolved["seed"] = seed;
}

}  // namespace mrdust
