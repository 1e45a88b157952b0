#include <gtest/gtest.h>

#include "oracles.hpp"
#include "refinery/error.hpp"
#include "refinery/evaluate.hpp"

using namespace refinery;

namespace {

const GraspPose kGt{100, 100, 0.0, 30, 10};

DatasetVersion version_of(std::size_t n) {
    DatasetVersion v;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string id = "img" + std::to_string(i);
        v.records[id] = ImageRecord{id, "", {original_annotation(kGt)}, 640, 480};
    }
    v.sealed = true;
    return v;
}

PredictionSet predictions_of(const std::vector<GraspPose>& poses) {
    PredictionSet set;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        set.entries["img" + std::to_string(i)].push_back({poses[i], 0.9, "p" + std::to_string(i)});
    }
    return set;
}

}  // namespace

TEST(Evaluate, PerfectPredictions) {
    const auto r = evaluate(version_of(5), predictions_of(std::vector<GraspPose>(5, kGt)));
    EXPECT_EQ(r.evaluated, 5u);
    EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
}

TEST(Evaluate, DisjointPredictions) {
    const auto r = evaluate(version_of(4), predictions_of(std::vector<GraspPose>(4, {400, 400, 0, 30, 10})));
    EXPECT_DOUBLE_EQ(r.accuracy, 0.0);
    EXPECT_EQ(r.successes, 0u);
}

TEST(Evaluate, MixedSevenOfTen) {
    const double deg = std::numbers::pi / 180.0;
    const std::vector<GraspPose> poses = {
        kGt,                                  // identical
        {102, 101, 0.0, 30, 10},              // small shift
        {100, 100, 20 * deg, 30, 10},         // rotated inside the angle bound
        {100, 100, -25 * deg, 32, 10},        // rotated the other way
        {105, 100, 0.0, 34, 12},              // larger box
        {100, 102, 10 * deg, 28, 9},          // mixed perturbation
        {96, 100, 0.0, 30, 10},               // shift along the axis
        {400, 400, 0.0, 30, 10},              // disjoint
        {100, 100, 60 * deg, 30, 10},         // overlapping but rotated too far
        {124, 100, 0.0, 30, 10},              // same angle, IOU below 0.25
    };
    const auto r = evaluate(version_of(10), predictions_of(poses));
    EXPECT_EQ(r.evaluated, 10u);
    EXPECT_EQ(r.successes, 7u);
    EXPECT_NEAR(r.accuracy, 0.7, 1e-12);
    // Each verdict agrees with a Monte Carlo IOU plus the angle test.
    for (const auto& img : r.images) {
        const GraspPose& p = poses[std::stoul(img.image_id.substr(3))];
        const double mc = oracle::monte_carlo_iou(p, kGt, 200000, 5).iou;
        const bool expected = mc >= 0.25 && angle_distance(p.angle, kGt.angle) <= 30 * deg;
        EXPECT_EQ(img.success, expected) << img.image_id << " mc iou " << mc;
    }
}

TEST(Evaluate, TopRankedPredictionIsUsedAndOrphansSkipped) {
    auto preds = predictions_of({kGt});
    preds.entries["img0"].push_back({{400, 400, 0, 30, 10}, 0.95, "better-ranked"});
    preds.entries["gone"].push_back({kGt, 0.5, "x"});
    const auto r = evaluate(version_of(1), preds);
    EXPECT_EQ(r.evaluated, 1u);
    EXPECT_EQ(r.skipped, 1u);
    EXPECT_EQ(r.images[0].prediction_id, "better-ranked");
    EXPECT_DOUBLE_EQ(r.accuracy, 0.0);
}

TEST(Evaluate, ZeroCoverageIsAnError) {
    PredictionSet preds;
    preds.entries["elsewhere"].push_back({kGt, 0.5, "x"});
    EXPECT_THROW(evaluate(version_of(3), preds), Error);
    EXPECT_THROW(evaluate(version_of(3), PredictionSet{}), Error);
}
