#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refinery/dataset.hpp"
#include "refinery/ledger.hpp"
#include "refinery/triage.hpp"

namespace refinery {

enum class Corruption { none, labels_dropped, labels_corrupted };

const char* to_string(Corruption c);

/// Geometric scene with a hidden complete label set and the (possibly
/// defective) labels that were published into the dataset.
struct SyntheticScene {
    std::string image_id;
    int width = 0;
    int height = 0;
    std::vector<GraspPose> complete_labels;
    // Orientation cluster index of each complete label.
    std::vector<std::size_t> cluster_of;
    std::size_t cluster_count = 0;
    std::vector<GraspPose> published_labels;
    Corruption corruption = Corruption::none;

    bool operator==(const SyntheticScene&) const = default;
};

/// Scene geometry used by generate_corpus.
struct CorpusShape {
    int image_size = 320;
    std::size_t min_clusters = 2;
    std::size_t max_clusters = 3;
    std::size_t min_labels_per_cluster = 2;
    std::size_t max_labels_per_cluster = 3;
};

/// Deterministic under `seed`. round(n * drop) scenes lose one orientation
/// cluster, round(n * corrupt) scenes publish implausible labels instead of
/// the truth, and the rest publish their complete labels.
std::vector<SyntheticScene> generate_corpus(std::size_t n_scenes, double drop_fraction,
                                            double corrupt_fraction, std::uint64_t seed,
                                            const CorpusShape& shape = {});

/// Version 0 built from the published labels.
DatasetVersion corpus_to_version(const std::vector<SyntheticScene>& corpus);

/// One prediction for `scene` in loop round `round` (1-based). Rounds visit
/// the scene's orientation clusters in a seeded order without repeats until
/// every cluster has been shown once, then cycle. The chosen label is
/// perturbed by Gaussian noise: `noise_level` pixels on center and opening,
/// `noise_level` degrees on angle. Confidence is 1 at zero noise and falls
/// with the perturbation.
PredictionEntry oracle_predict(const SyntheticScene& scene, double noise_level, std::uint64_t seed,
                               std::uint64_t round = 1);

inline constexpr const char* kScriptedOperatorId = "scripted-operator";

/// Verdict from the hidden truth. The returned decision has image, verdict,
/// candidate, operator and iteration filled; time and token are left to the caller.
ReviewDecision scripted_operator(const ReviewQueueItem& item, const SyntheticScene& scene,
                                 double valid_iou = 0.25);

struct LoopConfig {
    std::size_t iterations = 1;
    double noise_level = 0.0;
    std::uint64_t seed = 0;
    double threshold = kDefaultTriageThreshold;
};

struct LoopResult {
    StatsSeries stats;
    std::vector<TriageReport> reports;
    std::vector<DecisionTally> tallies;
    // Manifest digest of every version, version 0 first.
    std::vector<std::string> version_digests;
    DatasetVersion final_version;
    Ledger ledger;
};

/// predict -> triage -> scripted review -> ledger -> replay, `iterations` times.
LoopResult run_closed_loop(const std::vector<SyntheticScene>& corpus, const LoopConfig& config);

struct RecoveryMetrics {
    std::size_t dropped_labels = 0;
    std::size_t recovered_labels = 0;
    std::size_t corrupted_scenes = 0;
    std::size_t corrupted_removed = 0;
    std::size_t clean_removed = 0;
    double coverage() const {
        return dropped_labels == 0 ? 1.0 : static_cast<double>(recovered_labels) / dropped_labels;
    }
};

/// A dropped label counts as recovered when some label of the final version
/// reaches `iou_min` against it.
RecoveryMetrics measure_recovery(const std::vector<SyntheticScene>& corpus, const DatasetVersion& final_version,
                                 double iou_min = 0.25);

struct CorpusConfig {
    std::size_t scenes = 0;
    double drop_fraction = 0.0;
    double corrupt_fraction = 0.0;
    std::uint64_t seed = 0;
};

/// {seeds, config, iterations[], final_digest, recovery}.
nlohmann::ordered_json run_report(const CorpusConfig& corpus_config, const LoopConfig& loop_config,
                                  const LoopResult& result, const RecoveryMetrics& recovery);

}  // namespace refinery
