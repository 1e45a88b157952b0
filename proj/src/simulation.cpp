#include "refinery/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <random>

#include "refinery/error.hpp"

namespace refinery {

using nlohmann::ordered_json;

const char* to_string(Corruption c) {
    switch (c) {
        case Corruption::none: return "none";
        case Corruption::labels_dropped: return "labels_dropped";
        case Corruption::labels_corrupted: return "labels_corrupted";
    }
    return "unknown";
}

namespace {

// std distributions are implementation-defined, so draws are built directly
// on the raw 64-bit engine output to keep corpora identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
    std::size_t between(std::size_t lo, std::size_t hi) { return lo + index(hi - lo + 1); }
    double gaussian() {
        // Box-Muller; 1 - u keeps the log argument in (0, 1].
        const double u = 1.0 - uniform();
        const double v = uniform();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
    }
    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (std::size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[index(i)]);
    }

private:
    std::mt19937_64 engine_;
};

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a combined word.
    std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr double kAnchorMargin = 40.0;
constexpr double kAnchorSpacing = 80.0;
constexpr double kCenterJitter = 2.0;
constexpr double kAngleJitterDeg = 4.0;
constexpr double kOpeningJitter = 3.0;
constexpr double kSiblingIouMin = 0.5;
constexpr double kCorruptIouMax = 0.2;
constexpr int kMaxTries = 1000;

std::vector<GraspPose> make_cluster(Rng& rng, double x, double y, std::size_t count) {
    const double angle = canonical_angle(rng.uniform(-kHalfPi, kHalfPi));
    const double opening = rng.uniform(30.0, 50.0);
    const double jaw = rng.uniform(12.0, 20.0);
    const GraspPose anchor{x, y, angle, opening, jaw};
    std::vector<GraspPose> labels;
    while (labels.size() < count) {
        GraspPose g = anchor;
        for (int attempt = 0; attempt < kMaxTries; ++attempt) {
            GraspPose trial{x + rng.uniform(-kCenterJitter, kCenterJitter),
                            y + rng.uniform(-kCenterJitter, kCenterJitter),
                            canonical_angle(angle + degrees_to_radians(rng.uniform(-kAngleJitterDeg, kAngleJitterDeg))),
                            opening + rng.uniform(-kOpeningJitter, kOpeningJitter), jaw};
            const bool close = std::all_of(labels.begin(), labels.end(),
                                           [&](const GraspPose& s) { return iou(rect_from_grasp(trial), rect_from_grasp(s)) >= kSiblingIouMin; });
            if (close) {
                g = trial;
                break;
            }
        }
        labels.push_back(g);
    }
    return labels;
}

SyntheticScene make_scene(std::uint64_t seed, std::size_t index, Corruption corruption, const CorpusShape& shape) {
    Rng rng(mix(seed, index));
    SyntheticScene scene;
    char id[32];
    std::snprintf(id, sizeof id, "scene_%04zu", index);
    scene.image_id = id;
    scene.width = shape.image_size;
    scene.height = shape.image_size;
    scene.corruption = corruption;

    const double lo = kAnchorMargin;
    const double hi = shape.image_size - kAnchorMargin;
    const std::size_t k = rng.between(shape.min_clusters, shape.max_clusters);
    std::vector<Point> anchors;
    for (int attempt = 0; anchors.size() < k && attempt < kMaxTries * 10; ++attempt) {
        const Point p{rng.uniform(lo, hi), rng.uniform(lo, hi)};
        const bool spaced = std::all_of(anchors.begin(), anchors.end(), [&](const Point& q) {
            return std::hypot(p.x - q.x, p.y - q.y) >= kAnchorSpacing;
        });
        if (spaced) anchors.push_back(p);
    }
    if (anchors.size() < k) {
        throw Error(ErrorKind::validation, "image size too small to place " + std::to_string(k) + " clusters");
    }
    scene.cluster_count = k;
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t m = rng.between(shape.min_labels_per_cluster, shape.max_labels_per_cluster);
        for (const auto& g : make_cluster(rng, anchors[c].x, anchors[c].y, m)) {
            scene.complete_labels.push_back(g);
            scene.cluster_of.push_back(c);
        }
    }

    switch (corruption) {
        case Corruption::none:
            scene.published_labels = scene.complete_labels;
            break;
        case Corruption::labels_dropped: {
            const std::size_t dropped = rng.index(k);
            for (std::size_t i = 0; i < scene.complete_labels.size(); ++i) {
                if (scene.cluster_of[i] != dropped) scene.published_labels.push_back(scene.complete_labels[i]);
            }
            break;
        }
        case Corruption::labels_corrupted: {
            const std::size_t count = rng.between(1, 3);
            const double edge = 20.0;
            for (std::size_t n = 0; n < count; ++n) {
                for (int attempt = 0; attempt < kMaxTries; ++attempt) {
                    const GraspPose g{rng.uniform(edge, shape.image_size - edge),
                                      rng.uniform(edge, shape.image_size - edge),
                                      canonical_angle(rng.uniform(-kHalfPi, kHalfPi)), rng.uniform(20.0, 60.0),
                                      rng.uniform(8.0, 20.0)};
                    if (max_iou(g, scene.complete_labels).best_iou < kCorruptIouMax) {
                        scene.published_labels.push_back(g);
                        break;
                    }
                }
            }
            if (scene.published_labels.empty()) {
                throw Error(ErrorKind::validation, "could not place a corrupted label in " + scene.image_id);
            }
            break;
        }
    }
    return scene;
}

}  // namespace

std::vector<SyntheticScene> generate_corpus(std::size_t n_scenes, double drop_fraction, double corrupt_fraction,
                                            std::uint64_t seed, const CorpusShape& shape) {
    const auto in_unit = [](double f) { return f >= 0.0 && f <= 1.0; };
    if (!in_unit(drop_fraction) || !in_unit(corrupt_fraction) || drop_fraction + corrupt_fraction > 1.0) {
        throw Error(ErrorKind::validation, "drop and corrupt fractions must lie in [0,1] and sum to at most 1");
    }
    if (shape.min_clusters < 1 || shape.min_clusters > shape.max_clusters || shape.min_labels_per_cluster < 1 ||
        shape.min_labels_per_cluster > shape.max_labels_per_cluster) {
        throw Error(ErrorKind::validation, "invalid corpus shape");
    }
    const auto n = static_cast<double>(n_scenes);
    const auto n_drop = std::min<std::size_t>(n_scenes, static_cast<std::size_t>(std::llround(n * drop_fraction)));
    const auto n_corrupt =
        std::min<std::size_t>(n_scenes - n_drop, static_cast<std::size_t>(std::llround(n * corrupt_fraction)));

    std::vector<Corruption> kinds(n_scenes, Corruption::none);
    std::fill_n(kinds.begin(), n_drop, Corruption::labels_dropped);
    std::fill_n(kinds.begin() + static_cast<std::ptrdiff_t>(n_drop), n_corrupt, Corruption::labels_corrupted);
    Rng rng(seed);
    rng.shuffle(kinds);

    std::vector<SyntheticScene> corpus;
    corpus.reserve(n_scenes);
    for (std::size_t i = 0; i < n_scenes; ++i) corpus.push_back(make_scene(seed, i, kinds[i], shape));
    return corpus;
}

DatasetVersion corpus_to_version(const std::vector<SyntheticScene>& corpus) {
    DatasetVersion v;
    for (const auto& scene : corpus) {
        ImageRecord rec;
        rec.image_id = scene.image_id;
        rec.rgb_path = "synthetic://" + scene.image_id;
        rec.width = scene.width;
        rec.height = scene.height;
        for (const auto& g : scene.published_labels) rec.annotations.push_back(original_annotation(g));
        if (!v.records.emplace(scene.image_id, std::move(rec)).second) {
            throw Error(ErrorKind::validation, "duplicate scene id '" + scene.image_id + "'");
        }
    }
    v.sealed = true;
    return v;
}

PredictionEntry oracle_predict(const SyntheticScene& scene, double noise_level, std::uint64_t seed,
                               std::uint64_t round) {
    if (noise_level < 0.0) throw Error(ErrorKind::validation, "noise level must be non-negative");
    if (scene.complete_labels.empty()) {
        throw Error(ErrorKind::validation, "scene '" + scene.image_id + "' has no complete labels");
    }
    if (round == 0) throw Error(ErrorKind::validation, "rounds are numbered from 1");
    const std::uint64_t scene_seed = mix(seed, fnv1a(scene.image_id));
    const std::size_t k = std::max<std::size_t>(1, scene.cluster_count);
    const std::uint64_t cycle = (round - 1) / k;

    std::vector<std::size_t> order(k);
    for (std::size_t c = 0; c < k; ++c) order[c] = c;
    Rng order_rng(mix(scene_seed, cycle));
    order_rng.shuffle(order);
    const std::size_t cluster = order[(round - 1) % k];

    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < scene.complete_labels.size(); ++i) {
        if (scene.cluster_count == 0 || scene.cluster_of[i] == cluster) members.push_back(i);
    }
    Rng rng(mix(scene_seed, 0x5EED0000ULL + round));
    const GraspPose& truth = scene.complete_labels[members[rng.index(members.size())]];

    const double dx = noise_level * rng.gaussian();
    const double dy = noise_level * rng.gaussian();
    const double dtheta_deg = noise_level * rng.gaussian();
    const double dw = noise_level * rng.gaussian();
    GraspPose g = truth;
    g.center_x += dx;
    g.center_y += dy;
    g.angle = canonical_angle(g.angle + degrees_to_radians(dtheta_deg));
    g.opening = std::max(1.0, g.opening + dw);

    constexpr double kScale = 10.0;
    const double spread = (dx * dx + dy * dy + dw * dw + dtheta_deg * dtheta_deg) / (2.0 * kScale * kScale);

    PredictionEntry out;
    out.pose = g;
    out.confidence = std::exp(-spread);
    out.prediction_id = scene.image_id + "-r" + std::to_string(round);
    return out;
}

ReviewDecision scripted_operator(const ReviewQueueItem& item, const SyntheticScene& scene, double valid_iou) {
    if (item.image_id != scene.image_id) {
        throw Error(ErrorKind::contract, "queue item image '" + item.image_id + "' does not match scene '" +
                                             scene.image_id + "'");
    }
    ReviewDecision d;
    d.image_id = item.image_id;
    d.operator_id = kScriptedOperatorId;
    d.iteration = item.iteration;
    d.candidate = item.candidate;
    if (scene.corruption == Corruption::labels_corrupted) {
        d.verdict = Verdict::fn_annotation_error;
    } else if (scene.corruption == Corruption::labels_dropped && item.candidate &&
               max_iou(item.candidate->pose, scene.complete_labels).best_iou >= valid_iou) {
        d.verdict = Verdict::fn_missing_label;
    } else {
        d.verdict = Verdict::true_negative;
    }
    return d;
}

LoopResult run_closed_loop(const std::vector<SyntheticScene>& corpus, const LoopConfig& config) {
    if (config.iterations < 1) throw Error(ErrorKind::validation, "iterations must be at least 1");
    std::map<std::string, const SyntheticScene*> scenes;
    for (const auto& s : corpus) scenes[s.image_id] = &s;

    LoopResult result;
    DatasetVersion version = corpus_to_version(corpus);
    result.version_digests.push_back(compute_manifest(version).digest);
    std::vector<std::size_t> history;
    TriageOptions opts;
    opts.threshold = config.threshold;

    for (std::uint64_t t = 1; t <= config.iterations; ++t) {
        PredictionSet preds;
        preds.model_tag = "oracle";
        preds.iteration = t;
        for (const auto& [id, rec] : version.records) {
            preds.entries[id].push_back(oracle_predict(*scenes.at(id), config.noise_level, config.seed, t));
        }
        TriageOutcome outcome = run_triage(version, preds, t, opts, history);
        history = outcome.report.flagged_history;

        for (auto& item : outcome.queue) {
            item.status = ItemStatus::leased;
            item.lease = Lease{kScriptedOperatorId, std::numeric_limits<std::int64_t>::max()};
            ReviewDecision d = scripted_operator(item, *scenes.at(item.image_id));
            d.decided_at_ms = static_cast<std::int64_t>(t * 1'000'000 + item.item_id);
            d.token = "sim-" + std::to_string(t) + "-" + std::to_string(item.item_id);
            decide(item, d, result.ledger);
        }
        result.ledger.append(IterationBoundary{t});
        version = replay(version, result.ledger, t);
        result.version_digests.push_back(compute_manifest(version).digest);
        result.tallies.push_back(iteration_summary(result.ledger, t));
        result.reports.push_back(std::move(outcome.report));
    }
    result.stats = triage_stats(result.reports, result.tallies);
    result.final_version = std::move(version);
    return result;
}

RecoveryMetrics measure_recovery(const std::vector<SyntheticScene>& corpus, const DatasetVersion& final_version,
                                 double iou_min) {
    RecoveryMetrics m;
    for (const auto& scene : corpus) {
        const auto rec = final_version.records.find(scene.image_id);
        switch (scene.corruption) {
            case Corruption::labels_corrupted:
                ++m.corrupted_scenes;
                if (rec == final_version.records.end()) ++m.corrupted_removed;
                break;
            case Corruption::none:
                if (rec == final_version.records.end()) ++m.clean_removed;
                break;
            case Corruption::labels_dropped: {
                const std::vector<GraspPose> final_poses =
                    rec == final_version.records.end() ? std::vector<GraspPose>{} : rec->second.poses();
                for (const auto& g : scene.complete_labels) {
                    if (std::find(scene.published_labels.begin(), scene.published_labels.end(), g) !=
                        scene.published_labels.end()) {
                        continue;
                    }
                    ++m.dropped_labels;
                    if (!final_poses.empty() && max_iou(g, final_poses).best_iou >= iou_min) ++m.recovered_labels;
                }
                break;
            }
        }
    }
    return m;
}

ordered_json run_report(const CorpusConfig& corpus_config, const LoopConfig& loop_config, const LoopResult& result,
                        const RecoveryMetrics& recovery) {
    ordered_json j;
    j["seeds"] = {{"corpus", corpus_config.seed}, {"loop", loop_config.seed}};
    j["config"] = {{"scenes", corpus_config.scenes},
                   {"drop_fraction", corpus_config.drop_fraction},
                   {"corrupt_fraction", corpus_config.corrupt_fraction},
                   {"iterations", loop_config.iterations},
                   {"noise_level", loop_config.noise_level},
                   {"threshold", loop_config.threshold}};
    ordered_json rows = ordered_json::array();
    const ordered_json stats = stats_to_json(result.stats);
    for (std::size_t i = 0; i < stats.at("rows").size(); ++i) {
        ordered_json row = stats.at("rows")[i];
        if (i + 1 < result.version_digests.size()) row["digest"] = result.version_digests[i + 1];
        rows.push_back(std::move(row));
    }
    j["iterations"] = std::move(rows);
    j["review_actions"] = result.stats.review_actions();
    j["false_count_non_increasing"] = result.stats.false_count_non_increasing();
    j["ledger_events"] = result.ledger.size();
    j["final_digest"] = result.version_digests.back();
    j["recovery"] = {{"dropped_labels", recovery.dropped_labels},
                     {"recovered_labels", recovery.recovered_labels},
                     {"coverage", recovery.coverage()},
                     {"corrupted_scenes", recovery.corrupted_scenes},
                     {"corrupted_removed", recovery.corrupted_removed},
                     {"clean_removed", recovery.clean_removed}};
    return j;
}

}  // namespace refinery
