#include "refinery/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

#include <nlohmann/json.hpp>

#include "refinery/digest.hpp"
#include "refinery/error.hpp"

namespace fs = std::filesystem;

namespace refinery {

namespace {

constexpr std::string_view kGraspSuffix = "_grasps.txt";
constexpr std::string_view kImageSuffix = "_RGB.png";

std::string_view trim(std::string_view s) {
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string format_fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    std::string out(buf);
    if (out == "-0.000000") out = "0.000000";
    return out;
}

void write_file(const fs::path& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorKind::io, "short write to " + path.string());
}

}  // namespace

const char* to_string(AnnotationSource source) {
    return source == AnnotationSource::original ? "original" : "pseudo_label";
}

GraspAnnotation original_annotation(const GraspPose& pose) {
    return GraspAnnotation{pose, AnnotationSource::original, std::nullopt};
}

GraspAnnotation pseudo_label(const GraspPose& pose, std::string prediction_id) {
    return GraspAnnotation{pose, AnnotationSource::pseudo_label, std::move(prediction_id)};
}

std::vector<GraspPose> ImageRecord::poses() const {
    std::vector<GraspPose> out;
    out.reserve(annotations.size());
    for (const auto& a : annotations) out.push_back(a.pose);
    return out;
}

std::size_t DatasetVersion::annotation_count() const {
    std::size_t n = 0;
    for (const auto& [id, rec] : records) n += rec.annotations.size();
    return n;
}

std::size_t Manifest::label_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.grasps_original + e.grasps_pseudo;
    return n;
}

std::string format_diagnostic(const Diagnostic& d) {
    std::string out = d.severity == Severity::error ? "error" : "warning";
    out += " [" + d.code + "]";
    if (!d.image_id.empty()) out += " " + d.image_id;
    if (!d.file.empty()) {
        out += " " + d.file.string();
        if (d.line > 0) out += ":" + std::to_string(d.line);
    }
    out += ": " + d.message;
    return out;
}

GraspPose parse_grasp_line(std::string_view line, std::size_t line_number) {
    std::array<double, 5> values{};
    std::size_t count = 0;
    std::string_view rest = trim(line);
    while (true) {
        const auto pos = rest.find(';');
        const std::string_view field = trim(rest.substr(0, pos));
        if (count == values.size()) {
            throw ParseError(line_number, "expected 5 fields separated by ';'");
        }
        double v = 0.0;
        const auto* first = field.data();
        const auto* last = field.data() + field.size();
        if (!field.empty() && *first == '+') ++first;
        const auto [ptr, ec] = std::from_chars(first, last, v);
        if (field.empty() || ec != std::errc{} || ptr != last || !std::isfinite(v)) {
            throw ParseError(line_number, "non-numeric field '" + std::string(field) + "'");
        }
        values[count++] = v;
        if (pos == std::string_view::npos) break;
        rest.remove_prefix(pos + 1);
    }
    if (count != values.size()) {
        throw ParseError(line_number,
                         "expected 5 fields separated by ';', got " + std::to_string(count));
    }
    GraspPose pose{values[0], values[1], canonical_angle(degrees_to_radians(values[2])), values[3],
                   values[4]};
    if (pose.opening <= 0.0 || pose.jaw_size <= 0.0) {
        throw ParseError(line_number, "opening and jaw_size must be positive");
    }
    return pose;
}

std::string format_grasp_line(const GraspPose& pose) {
    return format_fixed(pose.center_x) + ";" + format_fixed(pose.center_y) + ";" +
           format_fixed(radians_to_degrees(canonical_angle(pose.angle))) + ";" +
           format_fixed(pose.opening) + ";" + format_fixed(pose.jaw_size);
}

std::optional<std::pair<int, int>> read_png_dimensions(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::array<unsigned char, 24> head{};
    in.read(reinterpret_cast<char*>(head.data()), head.size());
    if (in.gcount() != static_cast<std::streamsize>(head.size())) return std::nullopt;
    static constexpr std::array<unsigned char, 8> kSignature{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (!std::equal(kSignature.begin(), kSignature.end(), head.begin())) return std::nullopt;
    if (std::string_view(reinterpret_cast<const char*>(head.data()) + 12, 4) != "IHDR") {
        return std::nullopt;
    }
    const auto be32 = [&](std::size_t at) {
        return (std::uint32_t{head[at]} << 24) | (std::uint32_t{head[at + 1]} << 16) |
               (std::uint32_t{head[at + 2]} << 8) | std::uint32_t{head[at + 3]};
    };
    const std::uint32_t w = be32(16);
    const std::uint32_t h = be32(20);
    if (w == 0 || h == 0 || w > 1u << 30 || h > 1u << 30) return std::nullopt;
    return std::pair<int, int>{static_cast<int>(w), static_cast<int>(h)};
}

LoadResult load_dataset(const fs::path& root) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) {
        throw Error(ErrorKind::io, "dataset root is not a directory: " + root.string());
    }

    LoadResult result;
    auto& diags = result.diagnostics;
    std::map<std::string, fs::path> grasp_files;
    std::map<std::string, fs::path> image_files;

    std::vector<fs::path> paths;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file()) paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());

    for (const auto& path : paths) {
        const std::string name = path.filename().string();
        std::map<std::string, fs::path>* target = nullptr;
        std::string id;
        if (ends_with(name, kGraspSuffix)) {
            target = &grasp_files;
            id = name.substr(0, name.size() - kGraspSuffix.size());
        } else if (ends_with(name, kImageSuffix)) {
            target = &image_files;
            id = name.substr(0, name.size() - kImageSuffix.size());
        } else {
            continue;
        }
        if (!target->emplace(id, path).second) {
            diags.push_back({Severity::error, "duplicate-id", id, path, 0,
                             "image id appears more than once; later file ignored"});
        }
    }

    for (const auto& [id, image] : image_files) {
        if (!grasp_files.contains(id)) {
            diags.push_back({Severity::warning, "image-without-grasps", id, image, 0,
                             "image has no grasp file; scene skipped"});
        }
    }

    for (const auto& [id, grasp_path] : grasp_files) {
        const auto image = image_files.find(id);
        if (image == image_files.end()) {
            diags.push_back({Severity::error, "grasps-without-image", id, grasp_path, 0,
                             "grasp file has no matching " + std::string(kImageSuffix)});
            continue;
        }
        const auto dims = read_png_dimensions(image->second);
        if (!dims) {
            diags.push_back({Severity::error, "unreadable-image", id, image->second, 0,
                             "cannot read PNG dimensions"});
            continue;
        }
        std::ifstream in(grasp_path);
        if (!in) {
            diags.push_back({Severity::error, "unreadable-grasps", id, grasp_path, 0,
                             "cannot open grasp file"});
            continue;
        }
        ImageRecord rec;
        rec.image_id = id;
        rec.rgb_path = image->second;
        rec.width = dims->first;
        rec.height = dims->second;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            try {
                rec.annotations.push_back(original_annotation(parse_grasp_line(line, line_no)));
            } catch (const ParseError& e) {
                diags.push_back({Severity::warning, "rejected-grasp", id, grasp_path, line_no, e.what()});
            }
        }
        result.version.records.emplace(id, std::move(rec));
    }

    if (result.version.records.empty()) {
        diags.push_back({Severity::warning, "empty-dataset", "", root, 0, "no scenes found"});
    }
    result.version.sealed = true;
    return result;
}

std::vector<Diagnostic> validate(const DatasetVersion& version) {
    std::vector<Diagnostic> diags;
    for (const auto& [id, rec] : version.records) {
        if (rec.annotations.empty()) {
            diags.push_back({Severity::error, "no-annotations", id, rec.rgb_path, 0,
                             "record has zero annotations"});
        }
        std::set<std::string> seen;
        for (std::size_t i = 0; i < rec.annotations.size(); ++i) {
            const auto& p = rec.annotations[i].pose;
            if (!(p.center_x >= 0.0 && p.center_x < rec.width && p.center_y >= 0.0 &&
                  p.center_y < rec.height)) {
                diags.push_back({Severity::error, "out-of-bounds", id, rec.rgb_path, i + 1,
                                 "grasp center (" + format_fixed(p.center_x) + ", " +
                                     format_fixed(p.center_y) + ") outside " +
                                     std::to_string(rec.width) + "x" + std::to_string(rec.height)});
            }
            const std::string line = format_grasp_line(p);
            if (!seen.insert(line).second) {
                diags.push_back({Severity::warning, "duplicate-grasp", id, rec.rgb_path, i + 1,
                                 "identical grasp line: " + line});
            }
        }
    }
    return diags;
}

DatasetVersion deduplicate(const DatasetVersion& version) {
    DatasetVersion out = version;
    for (auto& [id, rec] : out.records) {
        std::set<std::string> seen;
        std::vector<GraspAnnotation> kept;
        for (auto& a : rec.annotations) {
            if (seen.insert(format_grasp_line(a.pose)).second) kept.push_back(std::move(a));
        }
        rec.annotations = std::move(kept);
    }
    return out;
}

std::string grasp_file_contents(const ImageRecord& record) {
    std::string text;
    for (const auto& a : record.annotations) {
        text += format_grasp_line(a.pose);
        text += '\n';
    }
    return text;
}

Manifest compute_manifest(const DatasetVersion& version) {
    Manifest m;
    m.version_id = version.version_id;
    m.parent = version.parent;
    std::string canonical;
    for (const auto& [id, rec] : version.records) {
        ManifestEntry e;
        e.image_id = id;
        for (const auto& a : rec.annotations) {
            (a.source == AnnotationSource::original ? e.grasps_original : e.grasps_pseudo) += 1;
        }
        e.file_hash = sha256_hex(grasp_file_contents(rec));
        canonical += e.image_id + '\t' + std::to_string(e.grasps_original) + '\t' +
                     std::to_string(e.grasps_pseudo) + '\t' + e.file_hash + '\n';
        m.entries.push_back(std::move(e));
    }
    m.digest = sha256_hex(canonical);
    return m;
}

std::string manifest_to_json(const Manifest& manifest) {
    nlohmann::ordered_json j;
    j["version_id"] = manifest.version_id;
    j["parent"] = manifest.parent ? nlohmann::ordered_json(*manifest.parent) : nlohmann::ordered_json();
    auto entries = nlohmann::ordered_json::array();
    std::size_t pseudo = 0;
    for (const auto& e : manifest.entries) {
        entries.push_back({{"image_id", e.image_id},
                           {"grasps_original", e.grasps_original},
                           {"grasps_pseudo", e.grasps_pseudo},
                           {"file_hash", e.file_hash}});
        pseudo += e.grasps_pseudo;
    }
    j["entries"] = std::move(entries);
    j["totals"] = {{"images", manifest.image_count()},
                   {"labels", manifest.label_count()},
                   {"pseudo_labels", pseudo}};
    j["digest"] = manifest.digest;
    return j.dump(2) + "\n";
}

void write_manifest(const Manifest& manifest, const fs::path& file) {
    std::error_code ec;
    if (file.has_parent_path()) fs::create_directories(file.parent_path(), ec);
    write_file(file, manifest_to_json(manifest));
}

std::string write_dataset(const DatasetVersion& version, const fs::path& out) {
    if (!version.sealed) throw Error(ErrorKind::state, "write_dataset: version is not sealed");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) {
        throw Error(ErrorKind::io, "cannot create output directory " + out.string());
    }
    for (const auto& [id, rec] : version.records) {
        write_file(out / (id + std::string(kGraspSuffix)), grasp_file_contents(rec));
        if (!rec.rgb_path.empty() && fs::exists(rec.rgb_path)) {
            const fs::path dst = out / (id + std::string(kImageSuffix));
            if (!fs::equivalent(rec.rgb_path, dst, ec)) {
                fs::copy_file(rec.rgb_path, dst, fs::copy_options::overwrite_existing, ec);
                if (ec) throw Error(ErrorKind::io, "cannot copy image to " + dst.string());
            }
        }
    }
    const Manifest manifest = compute_manifest(version);
    write_manifest(manifest, out / "manifest.json");
    return manifest.digest;
}

}  // namespace refinery
