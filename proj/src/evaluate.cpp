#include "refinery/evaluate.hpp"

#include "refinery/error.hpp"

namespace refinery {

EvaluationResult evaluate(const DatasetVersion& version, const PredictionSet& predictions,
                          const SuccessCriterion& criterion) {
    EvaluationResult out;
    for (const auto& [image_id, entries] : predictions.entries) {
        if (entries.empty()) continue;
        const auto rec = version.records.find(image_id);
        if (rec == version.records.end()) {
            ++out.skipped;
            continue;
        }
        std::vector<PredictionEntry> ranked = entries;
        rank_predictions(ranked);
        const std::vector<GraspPose> gts = rec->second.poses();
        const bool ok = !gts.empty() && grasp_success(ranked.front().pose, gts, criterion);
        out.images.push_back({image_id, ranked.front().prediction_id, ok});
        ++out.evaluated;
        out.successes += ok ? 1 : 0;
    }
    if (out.evaluated == 0) {
        throw Error(ErrorKind::validation, "predictions cover no image of version " +
                                               std::to_string(version.version_id));
    }
    out.accuracy = static_cast<double>(out.successes) / static_cast<double>(out.evaluated);
    return out;
}

}  // namespace refinery
