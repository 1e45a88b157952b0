#include "refinery/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>

#include "refinery/error.hpp"

namespace refinery {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text, const std::string& origin) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) {
        throw Error(ErrorKind::validation, "setting '" + key + "' from " + origin + " is not a number: '" + text + "'");
    }
    return value;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        const std::string raw = text.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
        ++line_no;
        const std::string line = trim(raw);
        if (!line.empty() && line.front() != '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ParseError(line_no, "config line lacks '=': " + line);
            std::string key = trim(line.substr(0, eq));
            if (key.empty()) throw ParseError(line_no, "config line has an empty key");
            std::replace(key.begin(), key.end(), '-', '_');
            out[key] = trim(line.substr(eq + 1));
        }
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
    return out;
}

std::optional<std::string> process_env(const std::string& name) {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
}

ConfigLayers::ConfigLayers(std::map<std::string, std::string> flags, EnvLookup env,
                           std::map<std::string, std::string> file)
    : flags_(std::move(flags)), env_(std::move(env)), file_(std::move(file)) {}

std::string ConfigLayers::env_name(const std::string& key) {
    std::string name = "REFINERY_";
    for (const char c : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return name;
}

std::optional<std::string> ConfigLayers::lookup(const std::string& key) const {
    if (const auto f = flags_.find(key); f != flags_.end()) return f->second;
    if (env_) {
        if (auto v = env_(env_name(key)); v && !v->empty()) return v;
    }
    if (const auto f = file_.find(key); f != file_.end()) return f->second;
    return std::nullopt;
}

std::string ConfigLayers::source(const std::string& key) const {
    if (flags_.contains(key)) return "flag";
    if (env_) {
        if (auto v = env_(env_name(key)); v && !v->empty()) return "env";
    }
    if (file_.contains(key)) return "file";
    return "default";
}

std::string ConfigLayers::get_string(const std::string& key, const std::string& fallback) const {
    return lookup(key).value_or(fallback);
}

std::optional<double> ConfigLayers::get_double(const std::string& key) const {
    const auto v = lookup(key);
    if (!v) return std::nullopt;
    return parse_number<double>(key, *v, source(key));
}

double ConfigLayers::get_double(const std::string& key, double fallback) const {
    return get_double(key).value_or(fallback);
}

std::optional<std::int64_t> ConfigLayers::get_int(const std::string& key) const {
    const auto v = lookup(key);
    if (!v) return std::nullopt;
    return parse_number<std::int64_t>(key, *v, source(key));
}

std::int64_t ConfigLayers::get_int(const std::string& key, std::int64_t fallback) const {
    return get_int(key).value_or(fallback);
}

RunConfig resolve_run_config(const ConfigLayers& layers) {
    RunConfig c;
    if (const auto d = layers.lookup("dataset_root")) c.dataset_root = std::filesystem::absolute(*d).lexically_normal();
    c.workdir = std::filesystem::absolute(layers.get_string("workdir", ".")).lexically_normal();
    c.threshold = layers.get_double("threshold", c.threshold);
    c.width_scale = layers.get_double("width_scale", c.width_scale);
    c.iou_min = layers.get_double("iou_min", c.iou_min);
    c.angle_max_deg = layers.get_double("angle_max", c.angle_max_deg);
    const std::int64_t port = layers.get_int("port", c.port);
    c.host = layers.get_string("host", c.host);
    if (const auto s = layers.get_int("seed")) {
        if (*s < 0) throw Error(ErrorKind::validation, "seed must be non-negative");
        c.seed = static_cast<std::uint64_t>(*s);
    }

    if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) {
        throw Error(ErrorKind::validation, "threshold must lie in [0,1]");
    }
    if (!(c.iou_min >= 0.0 && c.iou_min <= 1.0)) throw Error(ErrorKind::validation, "iou_min must lie in [0,1]");
    if (!(c.width_scale > 0.0)) throw Error(ErrorKind::validation, "width_scale must be positive");
    if (!(c.angle_max_deg > 0.0 && c.angle_max_deg <= 90.0)) {
        throw Error(ErrorKind::validation, "angle_max must lie in (0, 90] degrees");
    }
    if (port < 0 || port > 65535) throw Error(ErrorKind::validation, "port must lie in [0, 65535]");
    c.port = static_cast<int>(port);
    if (std::filesystem::exists(c.workdir) && !std::filesystem::is_directory(c.workdir)) {
        throw Error(ErrorKind::io, "workdir " + c.workdir.string() + " is not a directory");
    }
    return c;
}

}  // namespace refinery
