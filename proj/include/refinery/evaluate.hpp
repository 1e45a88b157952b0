#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "refinery/dataset.hpp"
#include "refinery/geometry.hpp"
#include "refinery/triage.hpp"

namespace refinery {

struct ImageEvaluation {
    std::string image_id;
    std::string prediction_id;
    bool success = false;
};

struct EvaluationResult {
    double accuracy = 0.0;
    std::size_t evaluated = 0;
    std::size_t successes = 0;
    // Predicted images absent from the version (e.g. removed in a later iteration).
    std::size_t skipped = 0;
    std::vector<ImageEvaluation> images;
};

/// Fraction of covered images whose top-ranked prediction satisfies
/// grasp_success against the image's annotations. Throws when no image of
/// the version has a prediction.
EvaluationResult evaluate(const DatasetVersion& version, const PredictionSet& predictions,
                          const SuccessCriterion& criterion = {});

}  // namespace refinery
