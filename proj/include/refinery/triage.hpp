#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refinery/dataset.hpp"
#include "refinery/geometry.hpp"

namespace refinery {

inline constexpr double kDefaultTriageThreshold = 0.2;

struct PredictionEntry {
    GraspPose pose;
    double confidence = 0.0;
    std::string prediction_id;
};

/// Predictions from one model run, grouped per image and ranked by
/// confidence (descending, ties by prediction_id).
struct PredictionSet {
    std::string model_tag;
    std::uint64_t iteration = 0;
    std::map<std::string, std::vector<PredictionEntry>> entries;

    std::size_t size() const;
};

void rank_predictions(std::vector<PredictionEntry>& preds);

struct IngestReject {
    std::size_t line = 0;
    std::string reason;
};

struct IngestResult {
    PredictionSet predictions;
    std::vector<IngestReject> rejects;
    std::size_t lines = 0;
};

/// Parses newline-delimited JSON objects
/// {image_id, x, y, theta_deg, opening, jaw_size, confidence, prediction_id}.
/// Malformed lines go to `rejects`; more than 10% malformed aborts the ingest.
/// A repeated prediction_id is always fatal.
IngestResult ingest_predictions(std::istream& stream, std::string model_tag = "external",
                                std::uint64_t iteration = 0);

std::string prediction_to_ndjson(const std::string& image_id, const PredictionEntry& entry);

struct TriageVerdict {
    std::string image_id;
    std::optional<double> best_iou;  // empty when the image had no prediction
    std::size_t matched_gt_index = 0;
    bool flagged = false;
    std::optional<std::string> evaluated_prediction;

    bool prediction_missing() const { return !evaluated_prediction.has_value(); }
};

struct TriageOptions {
    double threshold = kDefaultTriageThreshold;
    // Number of top-ranked predictions tested; any one at or above threshold unflags.
    std::size_t top_k = 1;
    // Route images without predictions to review instead of skipping them.
    bool flag_missing = true;
};

/// Verdict for one image. Flagged iff best IOU < threshold (strict).
TriageVerdict triage_image(const std::string& image_id, std::span<const PredictionEntry> preds,
                           std::span<const GraspAnnotation> gts, const TriageOptions& opts = {});

struct Candidate {
    GraspPose pose;
    std::string prediction_id;

    bool operator==(const Candidate&) const = default;
};

enum class ItemStatus { pending, leased, decided };

const char* to_string(ItemStatus status);

struct Lease {
    std::string operator_id;
    std::int64_t expires_at_ms = 0;
};

struct ReviewQueueItem {
    std::uint64_t item_id = 0;
    std::uint64_t iteration = 0;
    std::string image_id;
    std::optional<Candidate> candidate;  // empty for prediction-missing items
    std::vector<GraspAnnotation> gt_snapshot;
    ItemStatus status = ItemStatus::pending;
    std::optional<Lease> lease;
};

struct TriageReport {
    std::uint64_t iteration = 0;
    double threshold = kDefaultTriageThreshold;
    std::size_t evaluated = 0;
    std::size_t flagged = 0;
    std::size_t unflagged = 0;
    std::size_t prediction_missing = 0;
    std::vector<TriageVerdict> verdicts;
    // Flagged counts of this and every earlier iteration, oldest first.
    std::vector<std::size_t> flagged_history;
};

struct TriageOutcome {
    TriageReport report;
    std::vector<ReviewQueueItem> queue;
};

/// Triage every image in `version`. Predictions naming images absent from the
/// version raise an integrity error listing the orphans.
TriageOutcome run_triage(const DatasetVersion& version, const PredictionSet& preds,
                         std::uint64_t iteration, const TriageOptions& opts = {},
                         std::span<const std::size_t> prior_flagged_history = {});

/// Decision counts for one iteration, as recorded in the ledger.
struct DecisionTally {
    std::uint64_t iteration = 0;
    std::size_t labels_added = 0;
    std::size_t images_removed = 0;
    std::size_t tn_count = 0;

    std::size_t fn_count() const { return labels_added + images_removed; }
};

struct StatsRow {
    std::uint64_t iteration = 0;
    std::size_t false_count = 0;
    std::size_t fn_count = 0;
    std::size_t tn_count = 0;
    std::optional<double> fn_proportion;
    std::size_t labels_added = 0;
    std::size_t images_removed = 0;
};

struct StatsSeries {
    std::vector<StatsRow> rows;

    std::size_t review_actions() const;
    bool false_count_non_increasing() const;
    bool false_count_strictly_decreasing() const;
};

inline constexpr const char* kStatsCsvHeader =
    "iteration,false_count,fn_count,tn_count,fn_proportion,labels_added,images_removed";

StatsSeries triage_stats(std::span<const TriageReport> reports, std::span<const DecisionTally> tallies);
std::string stats_to_csv(const StatsSeries& series);
nlohmann::ordered_json stats_to_json(const StatsSeries& series);

nlohmann::ordered_json to_json(const GraspPose& pose);
GraspPose pose_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const GraspAnnotation& a);
GraspAnnotation annotation_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const Candidate& c);
Candidate candidate_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const ReviewQueueItem& item);
ReviewQueueItem queue_item_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const TriageReport& report);
TriageReport report_from_json(const nlohmann::json& j);

}  // namespace refinery
