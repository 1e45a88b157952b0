#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "refinery/geometry.hpp"

namespace refinery {

enum class AnnotationSource { original, pseudo_label };

const char* to_string(AnnotationSource source);

struct GraspAnnotation {
    GraspPose pose;
    AnnotationSource source = AnnotationSource::original;
    // Prediction that was promoted; set iff source == pseudo_label.
    std::optional<std::string> origin_id;

    bool operator==(const GraspAnnotation&) const = default;
};

GraspAnnotation original_annotation(const GraspPose& pose);
GraspAnnotation pseudo_label(const GraspPose& pose, std::string prediction_id);

struct ImageRecord {
    std::string image_id;
    std::filesystem::path rgb_path;
    std::vector<GraspAnnotation> annotations;
    int width = 0;
    int height = 0;

    std::vector<GraspPose> poses() const;

    bool operator==(const ImageRecord&) const = default;
};

/// Snapshot of the dataset after `version_id` refinement iterations.
/// Records are ordered by image_id. Once sealed, the version is treated as
/// immutable and may be shared freely across threads.
struct DatasetVersion {
    std::uint64_t version_id = 0;
    std::map<std::string, ImageRecord> records;
    std::optional<std::uint64_t> parent;
    // Sequence of the ledger event this version was materialized through (0 for imports).
    std::uint64_t created_from = 0;
    bool sealed = false;

    std::size_t annotation_count() const;

    bool operator==(const DatasetVersion&) const = default;
};

enum class Severity { warning, error };

struct Diagnostic {
    Severity severity = Severity::warning;
    std::string code;
    std::string image_id;
    std::filesystem::path file;
    std::size_t line = 0;
    std::string message;
};

std::string format_diagnostic(const Diagnostic& d);

// Grasp line format: "x;y;theta_degrees;opening;jaw_size".
GraspPose parse_grasp_line(std::string_view line, std::size_t line_number = 1);
std::string format_grasp_line(const GraspPose& pose);

/// Reads width and height from a PNG header without decoding pixels.
std::optional<std::pair<int, int>> read_png_dimensions(const std::filesystem::path& path);

struct LoadResult {
    DatasetVersion version;
    std::vector<Diagnostic> diagnostics;
};

/// Imports a Jacquard-layout tree (<id>_RGB.png + <id>_grasps.txt) as sealed version 0.
/// Rejected lines and unmatched files are reported in diagnostics, never dropped silently.
LoadResult load_dataset(const std::filesystem::path& root);

std::vector<Diagnostic> validate(const DatasetVersion& version);

/// Copy of `version` with identical grasp lines collapsed per record (first occurrence kept).
DatasetVersion deduplicate(const DatasetVersion& version);

struct ManifestEntry {
    std::string image_id;
    std::size_t grasps_original = 0;
    std::size_t grasps_pseudo = 0;
    std::string file_hash;
};

struct Manifest {
    std::uint64_t version_id = 0;
    std::optional<std::uint64_t> parent;
    std::vector<ManifestEntry> entries;
    std::string digest;

    std::size_t image_count() const { return entries.size(); }
    std::size_t label_count() const;
};

/// Grasp-file text for a record, one formatted line per annotation.
std::string grasp_file_contents(const ImageRecord& record);

Manifest compute_manifest(const DatasetVersion& version);
std::string manifest_to_json(const Manifest& manifest);
void write_manifest(const Manifest& manifest, const std::filesystem::path& file);

/// Writes grasp files, copies referenced images and a manifest.json into `out`.
/// Returns the manifest digest.
std::string write_dataset(const DatasetVersion& version, const std::filesystem::path& out);

}  // namespace refinery
