#ifndef MRDUST_CONFIG_HPP
#define MRDUST_CONFIG_HPP

#include "mrdust/contrast.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace mrdust {

struct UplinkConfig {
    int n_averages = 1;
    int nx = 8;
    int ny = 8;
    int implant_x = 3;
    int implant_y = 4;
    double baseline = 0.0;  ///< non-implant voxel intensity, in units of the implant's m0
    std::optional<double> noise_std;    ///< per channel, in units of m0
    std::optional<double> target_cnr;   ///< alternative: noise set from the simulated steady-state contrast
    int preamble_zeros = 8;
    int preamble_ones = 8;
    double alpha = 0.05;
};

/// Resolved configuration for one CLI run. Physical quantities are kept in
/// the units the user wrote them in; `sim` holds the SI-converted copy.
struct Config {
    SimulationConfig sim;
    double current_ua = 100.0;
    int n_tr = 3;
    int bit = 1;
    SweepSpec sweep;
    std::string sweep_axis_name;
    UplinkConfig uplink;
    std::set<std::string> sections;
    nlohmann::json resolved;  ///< every key with its effective value, grouped by section
};

/// Parses an INI-style file (`[section]`, `key_unit = value`) or a JSON
/// sidecar written by a previous run. Unknown keys and wrong unit suffixes
/// are rejected with file:line context.
Config load_config(const std::filesystem::path& path);
Config parse_config_text(const std::string& text, const std::string& origin = "<config>");
Config parse_config_json(const nlohmann::json& json, const std::string& origin = "<json>");

/// Throws ConfigError unless every listed section was present in the input.
void require_sections(const Config& config, std::initializer_list<const char*> names, const std::string& subcommand);

/// Overrides the seed everywhere it is recorded.
void set_seed(Config& config, std::uint64_t seed);

}  // namespace mrdust

#endif  // MRDUST_CONFIG_HPP
