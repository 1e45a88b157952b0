#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

namespace refinery {

/// Parses key=value lines. Blank lines and lines starting with '#' are
/// ignored; keys and values are trimmed. Throws a ParseError naming the line
/// for anything else.
std::map<std::string, std::string> parse_config_text(const std::string& text);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Reads the process environment.
std::optional<std::string> process_env(const std::string& name);

/// Layered settings: command-line flags, then REFINERY_<KEY> environment
/// variables, then the config file. Keys are lower_snake_case.
class ConfigLayers {
public:
    ConfigLayers(std::map<std::string, std::string> flags, EnvLookup env,
                 std::map<std::string, std::string> file);

    std::optional<std::string> lookup(const std::string& key) const;
    /// "flag", "env", "file" or "default".
    std::string source(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::optional<std::string> get_string(const std::string& key) const { return lookup(key); }
    double get_double(const std::string& key, double fallback) const;
    std::optional<double> get_double(const std::string& key) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::optional<std::int64_t> get_int(const std::string& key) const;

    static std::string env_name(const std::string& key);

private:
    std::map<std::string, std::string> flags_;
    EnvLookup env_;
    std::map<std::string, std::string> file_;
};

/// Settings shared by the subcommands, resolved and validated once.
struct RunConfig {
    std::filesystem::path dataset_root;
    std::filesystem::path workdir;
    double threshold = 0.2;
    double width_scale = 150.0;
    double iou_min = 0.25;
    double angle_max_deg = 30.0;
    int port = 8700;
    std::string host = "127.0.0.1";
    std::optional<std::uint64_t> seed;
};

/// Applies defaults, checks ranges (threshold and iou_min in [0,1],
/// width_scale > 0, angle_max in (0, 90], port in [0, 65535]) and makes
/// paths absolute. Throws a validation Error on any violation.
RunConfig resolve_run_config(const ConfigLayers& layers);

}  // namespace refinery
