#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "refinery/error.hpp"
#include "refinery/triage.hpp"

using namespace refinery;

namespace {

ImageRecord make_record(const std::string& id, std::vector<GraspPose> gts) {
    ImageRecord r;
    r.image_id = id;
    r.width = 640;
    r.height = 480;
    for (const auto& g : gts) r.annotations.push_back(original_annotation(g));
    return r;
}

PredictionEntry pred(const GraspPose& g, double conf, std::string id) {
    return PredictionEntry{g, conf, std::move(id)};
}

// Ten images: gt is a 30x10 box at (100 + 10i, 100). Images in `low` get a
// prediction shifted far enough to fall below 0.2 IOU.
struct TenImages {
    DatasetVersion version;
    PredictionSet preds;
    std::set<std::string> low;
};

TenImages ten_images(const std::set<int>& low) {
    TenImages f;
    f.version.sealed = true;
    for (int i = 0; i < 10; ++i) {
        const std::string id = "img" + std::to_string(i);
        const GraspPose gt{100.0 + 10 * i, 100, 0, 30, 10};
        f.version.records[id] = make_record(id, {gt});
        GraspPose p = gt;
        if (low.contains(i)) {
            p.center_x += 25;  // overlap 5/55 < 0.2
            f.low.insert(id);
        } else {
            p.center_x += 2;
        }
        f.preds.entries[id] = {pred(p, 0.9, "p" + std::to_string(i))};
    }
    return f;
}

std::string ndjson_line(const std::string& image, double x, double conf, const std::string& id) {
    return prediction_to_ndjson(image, {{x, 50, 0.25, 20, 10}, conf, id});
}

}  // namespace

TEST(Ingest, GroupsAndRanksByConfidence) {
    std::stringstream in;
    in << ndjson_line("a", 10, 0.2, "p1") << "\n"
       << ndjson_line("b", 20, 0.5, "p2") << "\n\n"
       << ndjson_line("a", 30, 0.8, "p3") << "\n";
    const auto r = ingest_predictions(in, "model-x", 3);
    EXPECT_TRUE(r.rejects.empty());
    EXPECT_EQ(r.predictions.model_tag, "model-x");
    EXPECT_EQ(r.predictions.iteration, 3u);
    ASSERT_EQ(r.predictions.entries.size(), 2u);
    const auto& a = r.predictions.entries.at("a");
    ASSERT_EQ(a.size(), 2u);
    EXPECT_EQ(a[0].prediction_id, "p3");
    EXPECT_NEAR(a[0].pose.angle, 0.25, 1e-12);
    EXPECT_EQ(r.predictions.size(), 3u);
}

TEST(Ingest, MalformedLinesAreRejectedWithLineNumbers) {
    std::stringstream in;
    for (int i = 0; i < 12; ++i) in << ndjson_line("img", 10 + i, 0.5, "p" + std::to_string(i)) << "\n";
    in << R"({"image_id":"img","x":1,"y":2,"theta_deg":0,"opening":3,"jaw_size":4,"prediction_id":"nc"})" << "\n";
    const auto r = ingest_predictions(in);
    ASSERT_EQ(r.rejects.size(), 1u);
    EXPECT_EQ(r.rejects[0].line, 13u);
    EXPECT_NE(r.rejects[0].reason.find("confidence"), std::string::npos);
    EXPECT_EQ(r.predictions.size(), 12u);
}

TEST(Ingest, TooManyMalformedLinesAborts) {
    std::stringstream in;
    for (int i = 0; i < 8; ++i) in << ndjson_line("img", 10, 0.5, "p" + std::to_string(i)) << "\n";
    in << "not json\n" << R"({"image_id":"img"})" << "\n";
    try {
        ingest_predictions(in);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ingest);
    }
}

TEST(Ingest, InvalidValuesAreRejected) {
    std::stringstream in;
    for (int i = 0; i < 20; ++i) in << ndjson_line("img", 10, 0.5, "p" + std::to_string(i)) << "\n";
    in << ndjson_line("img", 10, 1.5, "bad-conf") << "\n";
    in << R"({"image_id":"img","x":1,"y":2,"theta_deg":0,"opening":0,"jaw_size":4,"confidence":0.5,"prediction_id":"z"})"
       << "\n";
    const auto r = ingest_predictions(in);
    EXPECT_EQ(r.rejects.size(), 2u);
}

TEST(Ingest, DuplicatePredictionIdIsFatal) {
    std::stringstream in;
    in << ndjson_line("a", 10, 0.2, "dup") << "\n" << ndjson_line("b", 10, 0.3, "dup") << "\n";
    try {
        ingest_predictions(in);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ingest);
        EXPECT_NE(std::string(e.what()).find("dup"), std::string::npos);
    }
}

TEST(TriageImage, TopOneIdenticalIsNotFlagged) {
    const GraspPose gt{50, 50, 0.3, 20, 10};
    const std::vector<GraspAnnotation> gts{original_annotation({10, 10, 0, 5, 5}), original_annotation(gt)};
    const std::vector<PredictionEntry> preds{pred(gt, 0.9, "top"), pred({300, 300, 0, 5, 5}, 0.1, "low")};
    const auto v = triage_image("x", preds, gts);
    EXPECT_FALSE(v.flagged);
    EXPECT_DOUBLE_EQ(*v.best_iou, 1.0);
    EXPECT_EQ(v.matched_gt_index, 1u);
    EXPECT_EQ(*v.evaluated_prediction, "top");
}

TEST(TriageImage, StrictThresholdBoundary) {
    // Axis-aligned equal boxes offset along x: IOU = (w - dx) / (w + dx).
    const GraspPose gt_a{100, 100, 0, 30, 10};
    const std::vector<GraspAnnotation> gts_a{original_annotation(gt_a)};
    const std::vector<PredictionEntry> at_020{pred({120, 100, 0, 30, 10}, 1.0, "p")};
    const auto v20 = triage_image("a", at_020, gts_a);
    EXPECT_EQ(*v20.best_iou, 0.2);
    EXPECT_FALSE(v20.flagged);

    const GraspPose gt_b{200, 100, 0, 119, 10};
    const std::vector<GraspAnnotation> gts_b{original_annotation(gt_b)};
    const std::vector<PredictionEntry> at_019{pred({281, 100, 0, 119, 10}, 1.0, "p")};
    const auto v19 = triage_image("b", at_019, gts_b);
    EXPECT_EQ(*v19.best_iou, 0.19);
    EXPECT_TRUE(v19.flagged);
}

TEST(TriageImage, MissingPredictionsAreFlagged) {
    const std::vector<GraspAnnotation> gts{original_annotation({10, 10, 0, 5, 5})};
    const auto v = triage_image("m", {}, gts);
    EXPECT_TRUE(v.flagged);
    EXPECT_TRUE(v.prediction_missing());
    EXPECT_FALSE(v.best_iou.has_value());
    EXPECT_THROW(triage_image("m", {}, {}), Error);
}

TEST(TriageImage, TopKAnyAboveThresholdUnflags) {
    const GraspPose gt{50, 50, 0, 20, 10};
    const std::vector<GraspAnnotation> gts{original_annotation(gt)};
    const std::vector<PredictionEntry> preds{pred({400, 400, 0, 20, 10}, 0.9, "a"), pred(gt, 0.8, "b")};
    EXPECT_TRUE(triage_image("x", preds, gts).flagged);
    const auto v = triage_image("x", preds, gts, {.top_k = 2});
    EXPECT_FALSE(v.flagged);
    EXPECT_EQ(*v.evaluated_prediction, "b");
}

TEST(RunTriage, QueueHoldsExactlyTheFlaggedImages) {
    const auto f = ten_images({1, 4, 6, 9});
    const auto out = run_triage(f.version, f.preds, 1);
    EXPECT_EQ(out.report.evaluated, 10u);
    EXPECT_EQ(out.report.flagged, 4u);
    EXPECT_EQ(out.report.unflagged, 6u);
    EXPECT_EQ(out.report.evaluated, out.report.flagged + out.report.unflagged);
    ASSERT_EQ(out.queue.size(), 4u);
    std::set<std::string> queued;
    for (const auto& item : out.queue) {
        queued.insert(item.image_id);
        EXPECT_EQ(item.status, ItemStatus::pending);
        ASSERT_TRUE(item.candidate.has_value());
        EXPECT_EQ(item.gt_snapshot, f.version.records.at(item.image_id).annotations);
        EXPECT_EQ(item.iteration, 1u);
    }
    EXPECT_EQ(queued, f.low);
    for (const auto& v : out.report.verdicts) EXPECT_EQ(v.flagged, f.low.contains(v.image_id));
    EXPECT_EQ(out.report.flagged_history, std::vector<std::size_t>{4});
}

TEST(RunTriage, ThresholdExtremes) {
    const auto f = ten_images({1, 4, 6, 9});
    EXPECT_TRUE(run_triage(f.version, f.preds, 1, {.threshold = 0.0}).queue.empty());
    const auto all = run_triage(f.version, f.preds, 1, {.threshold = 1.01});
    EXPECT_EQ(all.report.flagged, all.report.evaluated);
    EXPECT_EQ(all.queue.size(), 10u);
}

TEST(RunTriage, ThresholdMonotonicity) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> shift(0, 40);
    auto f = ten_images({});
    for (auto& [id, list] : f.preds.entries) list[0].pose.center_x += shift(rng);
    std::set<std::string> prev;
    for (double t = 0.0; t <= 1.0; t += 0.05) {
        const auto out = run_triage(f.version, f.preds, 1, {.threshold = t});
        std::set<std::string> now;
        for (const auto& item : out.queue) now.insert(item.image_id);
        EXPECT_TRUE(std::includes(now.begin(), now.end(), prev.begin(), prev.end()));
        prev = now;
    }
}

TEST(RunTriage, OrderIndependentAcrossInputPermutations) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> shift(-30, 30), conf(0, 1);
    std::vector<std::string> lines;
    DatasetVersion v;
    for (int i = 0; i < 30; ++i) {
        const std::string id = "s" + std::to_string(i);
        v.records[id] = make_record(id, {{200, 200, 0.1 * i, 40, 15}, {260, 220, -0.2, 30, 10}});
        for (int k = 0; k < 3; ++k) {
            lines.push_back(prediction_to_ndjson(
                id, {{200 + shift(rng), 200 + shift(rng), 0.3, 35, 12}, conf(rng), id + "-" + std::to_string(k)}));
        }
    }
    std::vector<TriageVerdict> baseline;
    for (int trial = 0; trial < 5; ++trial) {
        std::shuffle(lines.begin(), lines.end(), rng);
        std::stringstream in;
        for (const auto& l : lines) in << l << "\n";
        const auto preds = ingest_predictions(in).predictions;
        const auto out = run_triage(v, preds, 1);
        if (trial == 0) {
            baseline = out.report.verdicts;
            continue;
        }
        ASSERT_EQ(out.report.verdicts.size(), baseline.size());
        for (std::size_t i = 0; i < baseline.size(); ++i) {
            EXPECT_EQ(out.report.verdicts[i].image_id, baseline[i].image_id);
            EXPECT_EQ(out.report.verdicts[i].best_iou, baseline[i].best_iou);
            EXPECT_EQ(out.report.verdicts[i].evaluated_prediction, baseline[i].evaluated_prediction);
        }
    }
}

TEST(RunTriage, OrphanPredictionsAreAnIntegrityError) {
    auto f = ten_images({});
    f.preds.entries["ghost"] = {pred({1, 1, 0, 2, 2}, 0.5, "g")};
    try {
        run_triage(f.version, f.preds, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::integrity);
        EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
    }
}

TEST(RunTriage, ImagesWithoutPredictionsAreRoutedToReview) {
    auto f = ten_images({});
    f.preds.entries.erase("img3");
    const auto out = run_triage(f.version, f.preds, 2, {}, std::vector<std::size_t>{7, 5});
    EXPECT_EQ(out.report.flagged, 1u);
    EXPECT_EQ(out.report.prediction_missing, 1u);
    ASSERT_EQ(out.queue.size(), 1u);
    EXPECT_FALSE(out.queue[0].candidate.has_value());
    EXPECT_EQ(out.report.flagged_history, (std::vector<std::size_t>{7, 5, 1}));
    EXPECT_EQ(run_triage(f.version, f.preds, 2, {.flag_missing = false}).report.evaluated, 9u);
}

TEST(RunTriage, ReportJsonRoundTrip) {
    const auto f = ten_images({2, 3});
    const auto out = run_triage(f.version, f.preds, 4);
    const auto back = report_from_json(nlohmann::json::parse(to_json(out.report).dump()));
    EXPECT_EQ(back.flagged, 2u);
    EXPECT_EQ(back.verdicts.size(), 10u);
    EXPECT_EQ(back.verdicts[2].best_iou, out.report.verdicts[2].best_iou);
    const auto item = queue_item_from_json(nlohmann::json::parse(to_json(out.queue[0]).dump()));
    EXPECT_EQ(item.image_id, out.queue[0].image_id);
    EXPECT_EQ(item.candidate->prediction_id, out.queue[0].candidate->prediction_id);
    EXPECT_EQ(item.gt_snapshot.size(), 1u);
}

TEST(TriageStats, ProportionsAndTrend) {
    TriageReport r1;
    r1.iteration = 1;
    r1.flagged = 10;
    const std::vector<DecisionTally> one{{1, 2, 1, 1}};
    auto s = triage_stats(std::vector<TriageReport>{r1}, one);
    ASSERT_EQ(s.rows.size(), 1u);
    EXPECT_EQ(s.rows[0].fn_count, 3u);
    EXPECT_EQ(s.rows[0].tn_count, 1u);
    EXPECT_DOUBLE_EQ(*s.rows[0].fn_proportion, 0.75);

    s = triage_stats(std::vector<TriageReport>{r1}, std::vector<DecisionTally>{{1, 0, 0, 0}});
    EXPECT_FALSE(s.rows[0].fn_proportion.has_value());
    EXPECT_TRUE(stats_to_json(s)["rows"][0]["fn_proportion"].is_null());
    EXPECT_EQ(stats_to_csv(s), std::string(kStatsCsvHeader) + "\n1,10,0,0,,0,0\n");

    std::vector<TriageReport> reports(3);
    const std::size_t counts[] = {10, 6, 4};
    for (int i = 0; i < 3; ++i) {
        reports[i].iteration = i + 1;
        reports[i].flagged = counts[i];
    }
    s = triage_stats(reports, {});
    EXPECT_TRUE(s.false_count_strictly_decreasing());
    EXPECT_TRUE(s.false_count_non_increasing());
    reports[2].flagged = 6;
    s = triage_stats(reports, {});
    EXPECT_FALSE(s.false_count_strictly_decreasing());
    EXPECT_TRUE(s.false_count_non_increasing());
}

TEST(TriageStats, CsvHeaderIsFixed) {
    const auto csv = stats_to_csv({});
    EXPECT_EQ(csv, "iteration,false_count,fn_count,tn_count,fn_proportion,labels_added,images_removed\n");
}
