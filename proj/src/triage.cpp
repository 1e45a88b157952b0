#include "refinery/triage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <set>
#include <sstream>
#include <thread>

#include "refinery/error.hpp"

namespace refinery {

using nlohmann::json;
using nlohmann::ordered_json;

std::size_t PredictionSet::size() const {
    std::size_t n = 0;
    for (const auto& [id, preds] : entries) n += preds.size();
    return n;
}

void rank_predictions(std::vector<PredictionEntry>& preds) {
    std::sort(preds.begin(), preds.end(), [](const PredictionEntry& a, const PredictionEntry& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.prediction_id < b.prediction_id;
    });
}

ordered_json to_json(const GraspPose& pose) {
    return {{"x", pose.center_x},
            {"y", pose.center_y},
            {"theta_deg", radians_to_degrees(pose.angle)},
            {"theta_rad", pose.angle},
            {"opening", pose.opening},
            {"jaw_size", pose.jaw_size}};
}

GraspPose pose_from_json(const json& j) {
    // theta_rad, when present, is the exact stored angle; theta_deg is the
    // human-facing form and loses the last bits through the unit conversion.
    const double angle = j.contains("theta_rad") ? j.at("theta_rad").get<double>()
                                                 : degrees_to_radians(j.at("theta_deg").get<double>());
    GraspPose p{j.at("x").get<double>(), j.at("y").get<double>(), canonical_angle(angle),
                j.at("opening").get<double>(), j.at("jaw_size").get<double>()};
    validate_pose(p);
    return p;
}

IngestResult ingest_predictions(std::istream& stream, std::string model_tag, std::uint64_t iteration) {
    IngestResult result;
    result.predictions.model_tag = std::move(model_tag);
    result.predictions.iteration = iteration;
    std::set<std::string> seen_ids;
    std::size_t nonblank = 0;
    std::string line;
    while (std::getline(stream, line)) {
        ++result.lines;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++nonblank;
        std::string image_id;
        PredictionEntry entry;
        try {
            const json j = json::parse(line);
            if (!j.is_object()) throw Error(ErrorKind::parse, "line is not a JSON object");
            for (const char* key : {"image_id", "x", "y", "theta_deg", "opening", "jaw_size",
                                    "confidence", "prediction_id"}) {
                if (!j.contains(key)) throw Error(ErrorKind::parse, std::string("missing field ") + key);
            }
            image_id = j.at("image_id").get<std::string>();
            entry.pose = pose_from_json(j);
            entry.confidence = j.at("confidence").get<double>();
            if (!(entry.confidence >= 0.0 && entry.confidence <= 1.0)) {
                throw Error(ErrorKind::parse, "confidence outside [0,1]");
            }
            entry.prediction_id = j.at("prediction_id").get<std::string>();
            if (image_id.empty() || entry.prediction_id.empty()) {
                throw Error(ErrorKind::parse, "empty image_id or prediction_id");
            }
        } catch (const json::exception& e) {
            result.rejects.push_back({result.lines, e.what()});
            continue;
        } catch (const Error& e) {
            result.rejects.push_back({result.lines, e.what()});
            continue;
        }
        if (!seen_ids.insert(entry.prediction_id).second) {
            throw Error(ErrorKind::ingest, "duplicate prediction_id '" + entry.prediction_id +
                                               "' on line " + std::to_string(result.lines));
        }
        result.predictions.entries[image_id].push_back(std::move(entry));
    }
    if (nonblank > 0 && result.rejects.size() * 10 > nonblank) {
        throw Error(ErrorKind::ingest, "ingest aborted: " + std::to_string(result.rejects.size()) +
                                           " of " + std::to_string(nonblank) +
                                           " lines malformed (limit 10%)");
    }
    for (auto& [id, preds] : result.predictions.entries) rank_predictions(preds);
    return result;
}

std::string prediction_to_ndjson(const std::string& image_id, const PredictionEntry& entry) {
    ordered_json j;
    j["image_id"] = image_id;
    const ordered_json pose = to_json(entry.pose);
    for (const auto& [k, v] : pose.items()) j[k] = v;
    j["confidence"] = entry.confidence;
    j["prediction_id"] = entry.prediction_id;
    return j.dump();
}

TriageVerdict triage_image(const std::string& image_id, std::span<const PredictionEntry> preds,
                           std::span<const GraspAnnotation> gts, const TriageOptions& opts) {
    if (gts.empty()) {
        throw Error(ErrorKind::empty_ground_truth, "triage: image '" + image_id + "' has no ground truth");
    }
    TriageVerdict v;
    v.image_id = image_id;
    if (preds.empty()) {
        v.flagged = true;
        return v;
    }
    std::vector<GraspPose> gt_poses;
    gt_poses.reserve(gts.size());
    for (const auto& a : gts) gt_poses.push_back(a.pose);

    const std::size_t k = std::min(std::max<std::size_t>(opts.top_k, 1), preds.size());
    for (std::size_t i = 0; i < k; ++i) {
        const IouMatch m = max_iou(preds[i].pose, gt_poses);
        if (!v.best_iou || m.best_iou > *v.best_iou) {
            v.best_iou = m.best_iou;
            v.matched_gt_index = m.best_index;
            v.evaluated_prediction = preds[i].prediction_id;
        }
    }
    v.flagged = *v.best_iou < opts.threshold;
    return v;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers =
        std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), (n + 63) / 64);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        jobs.push_back(std::async(std::launch::async, [&fn, lo, hi] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        }));
    }
    for (auto& j : jobs) j.get();
}

}  // namespace

TriageOutcome run_triage(const DatasetVersion& version, const PredictionSet& preds,
                         std::uint64_t iteration, const TriageOptions& opts,
                         std::span<const std::size_t> prior_flagged_history) {
    std::vector<std::string> orphans;
    for (const auto& [id, list] : preds.entries) {
        if (!version.records.contains(id)) orphans.push_back(id);
    }
    if (!orphans.empty()) {
        std::string msg = "predictions reference images not in version " +
                          std::to_string(version.version_id) + ":";
        for (const auto& id : orphans) msg += " " + id;
        throw Error(ErrorKind::integrity, msg);
    }

    std::vector<const ImageRecord*> records;
    for (const auto& [id, rec] : version.records) {
        if (preds.entries.contains(id) || opts.flag_missing) records.push_back(&rec);
    }

    std::vector<TriageVerdict> verdicts(records.size());
    parallel_for(records.size(), [&](std::size_t i) {
        const ImageRecord& rec = *records[i];
        const auto it = preds.entries.find(rec.image_id);
        const std::span<const PredictionEntry> list =
            it == preds.entries.end() ? std::span<const PredictionEntry>{} : std::span(it->second);
        verdicts[i] = triage_image(rec.image_id, list, rec.annotations, opts);
    });

    TriageOutcome out;
    auto& report = out.report;
    report.iteration = iteration;
    report.threshold = opts.threshold;
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
        const TriageVerdict& v = verdicts[i];
        ++report.evaluated;
        if (!v.flagged) {
            ++report.unflagged;
            continue;
        }
        ++report.flagged;
        if (v.prediction_missing()) ++report.prediction_missing;

        const ImageRecord& rec = *records[i];
        ReviewQueueItem item;
        item.item_id = out.queue.size() + 1;
        item.iteration = iteration;
        item.image_id = rec.image_id;
        item.gt_snapshot = rec.annotations;
        if (v.evaluated_prediction) {
            const auto& list = preds.entries.at(rec.image_id);
            const auto p = std::find_if(list.begin(), list.end(), [&](const PredictionEntry& e) {
                return e.prediction_id == *v.evaluated_prediction;
            });
            item.candidate = Candidate{p->pose, p->prediction_id};
        }
        out.queue.push_back(std::move(item));
    }
    report.verdicts = std::move(verdicts);
    report.flagged_history.assign(prior_flagged_history.begin(), prior_flagged_history.end());
    report.flagged_history.push_back(report.flagged);
    return out;
}

std::size_t StatsSeries::review_actions() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.fn_count + r.tn_count;
    return n;
}

bool StatsSeries::false_count_non_increasing() const {
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].false_count > rows[i - 1].false_count) return false;
    }
    return true;
}

bool StatsSeries::false_count_strictly_decreasing() const {
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].false_count >= rows[i - 1].false_count) return false;
    }
    return true;
}

StatsSeries triage_stats(std::span<const TriageReport> reports, std::span<const DecisionTally> tallies) {
    StatsSeries series;
    for (const auto& report : reports) {
        StatsRow row;
        row.iteration = report.iteration;
        row.false_count = report.flagged;
        const auto t = std::find_if(tallies.begin(), tallies.end(), [&](const DecisionTally& d) {
            return d.iteration == report.iteration;
        });
        if (t != tallies.end()) {
            row.fn_count = t->fn_count();
            row.tn_count = t->tn_count;
            row.labels_added = t->labels_added;
            row.images_removed = t->images_removed;
        }
        const std::size_t decided = row.fn_count + row.tn_count;
        if (decided > 0) row.fn_proportion = static_cast<double>(row.fn_count) / static_cast<double>(decided);
        series.rows.push_back(row);
    }
    return series;
}

std::string stats_to_csv(const StatsSeries& series) {
    std::string out = std::string(kStatsCsvHeader) + "\n";
    for (const auto& r : series.rows) {
        std::string prop;
        if (r.fn_proportion) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", *r.fn_proportion);
            prop = buf;
        }
        out += std::to_string(r.iteration) + "," + std::to_string(r.false_count) + "," +
               std::to_string(r.fn_count) + "," + std::to_string(r.tn_count) + "," + prop + "," +
               std::to_string(r.labels_added) + "," + std::to_string(r.images_removed) + "\n";
    }
    return out;
}

ordered_json stats_to_json(const StatsSeries& series) {
    auto rows = ordered_json::array();
    for (const auto& r : series.rows) {
        rows.push_back({{"iteration", r.iteration},
                        {"false_count", r.false_count},
                        {"fn_count", r.fn_count},
                        {"tn_count", r.tn_count},
                        {"fn_proportion", r.fn_proportion ? ordered_json(*r.fn_proportion) : ordered_json()},
                        {"labels_added", r.labels_added},
                        {"images_removed", r.images_removed}});
    }
    return {{"iterations", series.rows.size()},
            {"review_actions", series.review_actions()},
            {"false_count_non_increasing", series.false_count_non_increasing()},
            {"false_count_strictly_decreasing", series.false_count_strictly_decreasing()},
            {"rows", std::move(rows)}};
}

const char* to_string(ItemStatus status) {
    switch (status) {
        case ItemStatus::pending: return "pending";
        case ItemStatus::leased: return "leased";
        case ItemStatus::decided: return "decided";
    }
    return "unknown";
}

ordered_json to_json(const GraspAnnotation& a) {
    ordered_json j = to_json(a.pose);
    j["source"] = to_string(a.source);
    if (a.origin_id) j["origin_id"] = *a.origin_id;
    return j;
}

GraspAnnotation annotation_from_json(const json& j) {
    GraspAnnotation a;
    a.pose = pose_from_json(j);
    const auto source = j.value("source", std::string("original"));
    if (source == "pseudo_label") {
        a.source = AnnotationSource::pseudo_label;
        a.origin_id = j.at("origin_id").get<std::string>();
    } else if (source != "original") {
        throw Error(ErrorKind::parse, "unknown annotation source '" + source + "'");
    }
    return a;
}

ordered_json to_json(const Candidate& c) {
    ordered_json j = to_json(c.pose);
    j["prediction_id"] = c.prediction_id;
    return j;
}

Candidate candidate_from_json(const json& j) {
    return Candidate{pose_from_json(j), j.at("prediction_id").get<std::string>()};
}

ordered_json to_json(const ReviewQueueItem& item) {
    ordered_json j;
    j["item_id"] = item.item_id;
    j["iteration"] = item.iteration;
    j["image_id"] = item.image_id;
    j["candidate"] = item.candidate ? to_json(*item.candidate) : ordered_json();
    auto gts = ordered_json::array();
    for (const auto& a : item.gt_snapshot) gts.push_back(to_json(a));
    j["gt_snapshot"] = std::move(gts);
    j["status"] = to_string(item.status);
    if (item.lease) {
        j["lease"] = {{"operator_id", item.lease->operator_id}, {"expires_at_ms", item.lease->expires_at_ms}};
    }
    return j;
}

ReviewQueueItem queue_item_from_json(const json& j) {
    ReviewQueueItem item;
    item.item_id = j.at("item_id").get<std::uint64_t>();
    item.iteration = j.at("iteration").get<std::uint64_t>();
    item.image_id = j.at("image_id").get<std::string>();
    if (j.contains("candidate") && !j.at("candidate").is_null()) {
        item.candidate = candidate_from_json(j.at("candidate"));
    }
    for (const auto& a : j.at("gt_snapshot")) item.gt_snapshot.push_back(annotation_from_json(a));
    // Status is runtime state; persisted queues always restart from pending.
    return item;
}

ordered_json to_json(const TriageReport& report) {
    auto verdicts = ordered_json::array();
    for (const auto& v : report.verdicts) {
        verdicts.push_back({{"image_id", v.image_id},
                            {"best_iou", v.best_iou ? ordered_json(*v.best_iou) : ordered_json()},
                            {"matched_gt_index", v.matched_gt_index},
                            {"flagged", v.flagged},
                            {"evaluated_prediction",
                             v.evaluated_prediction ? ordered_json(*v.evaluated_prediction) : ordered_json()}});
    }
    return {{"iteration", report.iteration},
            {"threshold", report.threshold},
            {"evaluated", report.evaluated},
            {"flagged", report.flagged},
            {"unflagged", report.unflagged},
            {"prediction_missing", report.prediction_missing},
            {"flagged_history", report.flagged_history},
            {"verdicts", std::move(verdicts)}};
}

TriageReport report_from_json(const json& j) {
    TriageReport r;
    r.iteration = j.at("iteration").get<std::uint64_t>();
    r.threshold = j.at("threshold").get<double>();
    r.evaluated = j.at("evaluated").get<std::size_t>();
    r.flagged = j.at("flagged").get<std::size_t>();
    r.unflagged = j.at("unflagged").get<std::size_t>();
    r.prediction_missing = j.value("prediction_missing", std::size_t{0});
    r.flagged_history = j.value("flagged_history", std::vector<std::size_t>{});
    for (const auto& v : j.at("verdicts")) {
        TriageVerdict t;
        t.image_id = v.at("image_id").get<std::string>();
        if (!v.at("best_iou").is_null()) t.best_iou = v.at("best_iou").get<double>();
        t.matched_gt_index = v.at("matched_gt_index").get<std::size_t>();
        t.flagged = v.at("flagged").get<bool>();
        if (!v.at("evaluated_prediction").is_null()) {
            t.evaluated_prediction = v.at("evaluated_prediction").get<std::string>();
        }
        r.verdicts.push_back(std::move(t));
    }
    return r;
}

}  // namespace refinery
