// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Tolerances are fixed constants below.

#include <httplib.h>
#include <sys/wait.h>

#include <atomic>
#include <cfloat>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <iostream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "refinery/dataset.hpp"
#include "refinery/geometry.hpp"
#include "refinery/heatmap.hpp"
#include "refinery/ledger.hpp"
#include "refinery/service.hpp"
#include "refinery/triage.hpp"
#include "refinery/workspace.hpp"
#include "service_fixture.hpp"

namespace {

using namespace refinery;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

constexpr double kPi = std::numbers::pi;

// Pinned tolerances.
constexpr double kGeometryMaxAbsError = 2e-2;
constexpr double kGeometryMaxSeconds = 10.0;
constexpr std::size_t kGeometryPairs = 1000;
constexpr std::size_t kMonteCarloSamples = 100000;
constexpr double kCodecAngleTol = 1e-6;
constexpr double kCodecWidthQuantum = kDefaultWidthScale * FLT_EPSILON;
constexpr double kScaleInvarianceTol = 1e-12;
constexpr double kLossFixtureTol = 1e-12;
constexpr double kRoundTripTol = 1e-5;
constexpr double kMinRecovery = 0.95;
constexpr double kLoopMaxSeconds = 60.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------------------
// Geometry: clipping IOU against point sampling of the pose definition.

struct SampledRect {
    double cx, cy, c, s, half_open, half_jaw;
    explicit SampledRect(const GraspPose& g)
        : cx(g.center_x),
          cy(g.center_y),
          c(std::cos(g.angle)),
          s(std::sin(g.angle)),
          half_open(g.opening / 2),
          half_jaw(g.jaw_size / 2) {}
    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        return std::fabs(dx * c + dy * s) <= half_open && std::fabs(-dx * s + dy * c) <= half_jaw;
    }
    double reach() const { return std::hypot(half_open, half_jaw); }
};

double monte_carlo_iou(const GraspPose& a, const GraspPose& b, std::mt19937_64& rng) {
    const SampledRect ra(a), rb(b);
    const double x0 = std::min(ra.cx - ra.reach(), rb.cx - rb.reach());
    const double x1 = std::max(ra.cx + ra.reach(), rb.cx + rb.reach());
    const double y0 = std::min(ra.cy - ra.reach(), rb.cy - rb.reach());
    const double y1 = std::max(ra.cy + ra.reach(), rb.cy + rb.reach());
    std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1);
    std::size_t in_a = 0, in_b = 0, both = 0;
    for (std::size_t i = 0; i < kMonteCarloSamples; ++i) {
        const double x = ux(rng), y = uy(rng);
        const bool pa = ra.contains(x, y), pb = rb.contains(x, y);
        in_a += pa;
        in_b += pb;
        both += pa && pb;
    }
    const std::size_t uni = in_a + in_b - both;
    return uni == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(uni);
}

Outcome geometry_oracle() {
    std::mt19937_64 rng(20240601);
    std::uniform_real_distribution<double> pos(0, 300), ang(-kPi / 2, kPi / 2), ext(5, 80), near(-40, 40);
    std::vector<std::pair<GraspPose, GraspPose>> pairs;
    for (std::size_t i = 0; i < kGeometryPairs; ++i) {
        const GraspPose a{pos(rng), pos(rng), ang(rng), ext(rng), ext(rng)};
        // Half the pairs are independent; the other half are placed near each
        // other so that the partial-overlap regime is well covered.
        const bool close = i % 2 == 1;
        const double bx = close ? std::clamp(a.center_x + near(rng), 0.0, 300.0) : pos(rng);
        const double by = close ? std::clamp(a.center_y + near(rng), 0.0, 300.0) : pos(rng);
        pairs.push_back({a, {bx, by, ang(rng), ext(rng), ext(rng)}});
    }
    const auto t0 = Clock::now();
    double max_err = 0.0;
    std::size_t overlapping = 0;
    for (const auto& [a, b] : pairs) {
        const double exact = iou(rect_from_grasp(a), rect_from_grasp(b));
        overlapping += exact > 0.0;
        max_err = std::max(max_err, std::fabs(exact - monte_carlo_iou(a, b, rng)));
    }
    const double secs = seconds_since(t0);
    const auto c0 = Clock::now();
    double checksum = 0.0;
    for (const auto& [a, b] : pairs) checksum += iou(rect_from_grasp(a), rect_from_grasp(b));
    const double clip_secs = seconds_since(c0);
    return {max_err <= kGeometryMaxAbsError && secs < kGeometryMaxSeconds && std::isfinite(checksum),
            std::to_string(pairs.size()) + " pairs (" + std::to_string(overlapping) +
                " overlapping), max |clip - MC| = " + fmt("%.4g", max_err) + " (tol " +
                fmt("%.0e", kGeometryMaxAbsError) + "), " + fmt("%.2f", secs) +
                " s including oracle (limit 10 s), clipping alone " + fmt("%.4f", clip_secs) + " s"};
}

// ---------------------------------------------------------------------------
// Triage: strict "below threshold" at analytically constructed IOUs.

Outcome triage_boundary() {
    // Equal axis-aligned boxes of opening w offset by dx along x: IOU = (w - dx) / (w + dx).
    const GraspPose gt20{100, 100, 0, 30, 10};
    const std::vector<GraspAnnotation> gts20{original_annotation(gt20)};
    const std::vector<PredictionEntry> p20{{{120, 100, 0, 30, 10}, 1.0, "p20"}};
    const auto v20 = triage_image("iou020", p20, gts20);

    const GraspPose gt19{200, 100, 0, 119, 10};
    const std::vector<GraspAnnotation> gts19{original_annotation(gt19)};
    const std::vector<PredictionEntry> p19{{{281, 100, 0, 119, 10}, 1.0, "p19"}};
    const auto v19 = triage_image("iou019", p19, gts19);

    const bool ok = v20.best_iou && v19.best_iou && std::fabs(*v20.best_iou - 0.20) < 1e-12 &&
                    std::fabs(*v19.best_iou - 0.19) < 1e-12 && !v20.flagged && v19.flagged;
    return {ok, "IOU " + fmt("%.17g", v19.best_iou.value_or(-1)) + " -> " + (v19.flagged ? "flagged" : "kept") +
                    ", IOU " + fmt("%.17g", v20.best_iou.value_or(-1)) + " -> " + (v20.flagged ? "flagged" : "kept") +
                    " at threshold 0.2"};
}

// ---------------------------------------------------------------------------
// Codec: encode then decode a single grasp.

Outcome codec_round_trip() {
    constexpr std::size_t kRows = 224, kCols = 224;
    std::mt19937_64 rng(500);
    std::uniform_real_distribution<double> pos(20, 204), ang(-kPi / 2, kPi / 2), open(6, 140), jaw(4, 40);
    double worst_angle = 0.0, worst_width = 0.0;
    std::size_t outside = 0, missing = 0;
    for (int i = 0; i < 500; ++i) {
        const GraspPose g{pos(rng), pos(rng), canonical_angle(ang(rng)), open(rng), jaw(rng)};
        const std::vector<GraspPose> gs{g};
        const auto maps = encode(gs, kRows, kCols);
        const auto d = decode(maps, 1, {.jaw_size = g.jaw_size});
        if (d.size() != 1) {
            ++missing;
            continue;
        }
        const GraspPose& p = d[0].pose;
        worst_angle = std::max(worst_angle, angle_distance(p.angle, g.angle));
        worst_width = std::max(worst_width, std::fabs(p.opening - g.opening));
        const auto cells = painted_cells(g, kRows, kCols);
        const std::pair<std::size_t, std::size_t> cell{static_cast<std::size_t>(p.center_y),
                                                       static_cast<std::size_t>(p.center_x)};
        if (std::find(cells.begin(), cells.end(), cell) == cells.end()) ++outside;
    }
    std::uniform_real_distribution<double> full(-kPi, kPi), scale(1e-3, 1e3), mag(0.05, 1.0);
    double worst_scale = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double t = full(rng), m = mag(rng), k = scale(rng);
        const double c = m * std::cos(2 * t), s = m * std::sin(2 * t);
        worst_scale = std::max(worst_scale, angle_distance(recover_angle(k * c, k * s), recover_angle(c, s)));
    }
    const bool ok = missing == 0 && outside == 0 && worst_angle <= kCodecAngleTol &&
                    worst_width <= kCodecWidthQuantum && worst_scale <= kScaleInvarianceTol;
    return {ok, "500 scenes: max angle err " + fmt("%.3g", worst_angle) + " rad (tol 1e-6), max opening err " +
                    fmt("%.3g", worst_width) + " (quantum " + fmt("%.3g", kCodecWidthQuantum) + "), " +
                    std::to_string(outside) + " centers outside painted region, " + std::to_string(missing) +
                    " undecoded; 100 scalings: max drift " + fmt("%.3g", worst_scale) + " rad"};
}

// ---------------------------------------------------------------------------
// Loss: additivity, a hand-computed fixture and the zero set.

HeatmapSet random_maps(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    std::uniform_real_distribution<double> unit(0, 1), sym(-1, 1);
    HeatmapSet m(rows, cols);
    for (auto& v : m.quality.values()) v = unit(rng);
    for (auto& v : m.cos2.values()) v = sym(rng);
    for (auto& v : m.sin2.values()) v = sym(rng);
    for (auto& v : m.width.values()) v = unit(rng);
    return m;
}

Outcome loss_correctness() {
    std::mt19937_64 rng(100);
    std::uniform_int_distribution<std::size_t> dim(1, 12);
    std::size_t additive_misses = 0, zero_misses = 0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t r = dim(rng), c = dim(rng);
        const auto a = random_maps(rng, r, c);
        const auto b = random_maps(rng, r, c);
        const auto l = loss(a, b);
        if (l.l_overall != l.l_center + l.l_cos + l.l_sin + l.l_width) ++additive_misses;
        if (loss(a, a).l_overall != 0.0 || !(l.l_overall > 0.0)) ++zero_misses;
        // A single perturbed cell in any one plane makes the loss positive.
        for (int plane = 0; plane < 4; ++plane) {
            HeatmapSet p = a;
            Plane& target = plane == 0 ? p.quality : plane == 1 ? p.cos2 : plane == 2 ? p.sin2 : p.width;
            target.at(r - 1, c - 1) += 1e-3;
            if (!(loss(p, a).l_overall > 0.0)) ++zero_misses;
        }
    }
    // Hand fixture on a 2x2 grid against an all-zero target:
    //   quality differs by 1 in one cell        -> 1 / 4         = 0.25
    //   cos2 differs by 0.5 in one cell         -> 0.25 / 4      = 0.0625
    //   sin2 differs by +0.2 and -0.2           -> 0.08 / 4      = 0.02
    //   width differs by 0.1 in every cell      -> 0.04 / 4      = 0.01
    HeatmapSet pred(2, 2);
    const HeatmapSet target(2, 2);
    pred.quality.at(0, 0) = 1.0;
    pred.cos2.at(0, 1) = 0.5;
    pred.sin2.at(1, 0) = 0.2;
    pred.sin2.at(1, 1) = -0.2;
    for (auto& v : pred.width.values()) v = 0.1;
    const auto h = loss(pred, target);
    const double fixture_err =
        std::max({std::fabs(h.l_center - 0.25), std::fabs(h.l_cos - 0.0625), std::fabs(h.l_sin - 0.02),
                  std::fabs(h.l_width - 0.01), std::fabs(h.l_overall - 0.3425)});
    const bool ok = additive_misses == 0 && zero_misses == 0 && fixture_err <= kLossFixtureTol;
    return {ok, "100 pairs: " + std::to_string(additive_misses) + " non-additive, " + std::to_string(zero_misses) +
                    " zero-set violations; 2x2 fixture max err " + fmt("%.3g", fixture_err) + " (tol 1e-12)"};
}

// ---------------------------------------------------------------------------
// Ledger: deterministic replay and located truncation.

Outcome ledger_determinism() {
    DatasetVersion base;
    for (int i = 0; i < 300; ++i) {
        const std::string id = "scene_" + std::to_string(1000 + i);
        base.records[id] = ImageRecord{id, "", {original_annotation({100.0 + i % 50, 120, 0.3, 30, 12})}, 640, 480};
    }
    base.sealed = true;

    std::mt19937_64 rng(500500);
    std::uniform_real_distribution<double> pos(20, 600), ang(-kPi / 2, kPi / 2), open(10, 80), jaw(5, 30);
    Ledger ledger;
    std::set<std::string> removed;
    std::uint64_t token = 0;
    for (std::uint64_t t = 1; t <= 5; ++t) {
        std::vector<std::string> ids;
        for (const auto& [id, rec] : base.records) {
            if (!removed.contains(id)) ids.push_back(id);
        }
        std::shuffle(ids.begin(), ids.end(), rng);
        for (std::size_t k = 0; k < 99; ++k) {
            const DecisionMeta meta{
                ids[k], "op-" + std::to_string(k % 7),   static_cast<std::int64_t>(t * 1000000 + k), t,
                k + 1,  "tok-" + std::to_string(++token)};
            switch (rng() % 3) {
                case 0:
                    ledger.append(AddGrasp{meta, pseudo_label({pos(rng), pos(rng), ang(rng), open(rng), jaw(rng)},
                                                              "pred-" + std::to_string(token))});
                    break;
                case 1:
                    ledger.append(RemoveImage{meta, "annotation_error"});
                    removed.insert(ids[k]);
                    break;
                default:
                    ledger.append(NoOp{meta, "true_negative"});
            }
        }
        ledger.append(IterationBoundary{t});
    }

    const std::string d1 = compute_manifest(replay(base, ledger, 5)).digest;
    const std::string d2 = compute_manifest(replay(base, ledger, 5)).digest;
    const std::string d3 = compute_manifest(replay(base, Ledger::from_text(ledger.text()), 5)).digest;

    // Cutting the file anywhere inside line k leaves a torn line k.
    const std::string text = ledger.text();
    std::size_t mislocated = 0;
    const auto last_cut = verify_ledger_text(text.substr(0, text.size() - 1));
    if (!last_cut || last_cut->first != ledger.size()) ++mislocated;
    std::uniform_int_distribution<std::size_t> offset(1, text.size() - 1);
    for (int i = 0; i < 50; ++i) {
        std::size_t cut = offset(rng);
        if (text[cut - 1] == '\n') ++cut;  // a cut just after a newline is a shorter valid ledger
        const auto line = static_cast<std::uint64_t>(std::count(text.begin(), text.begin() + cut, '\n')) + 1;
        const auto found = verify_ledger_text(text.substr(0, cut));
        if (!found || found->first != line) ++mislocated;
    }
    const bool ok = ledger.size() == 500 && d1 == d2 && d1 == d3 && !verify_ledger_text(text) && mislocated == 0;
    return {ok, std::to_string(ledger.size()) + " events, replay digests " +
                    (d1 == d2 && d1 == d3 ? "equal" : "DIFFER") + " (" + d1.substr(0, 16) +
                    "...); truncation by one byte reported at seq " +
                    (last_cut ? std::to_string(last_cut->first) : std::string("none")) + " of " +
                    std::to_string(ledger.size()) + ", " + std::to_string(mislocated) + " of 51 cuts mislocated"};
}

// ---------------------------------------------------------------------------
// Closed loop through the command-line binary.

Outcome closed_loop() {
    fixture::TempDir dir("acceptance-loop");
    const std::string cmd = std::string("'") + REFINERY_BIN + "' simulate --scenes 200 --drop 0.3 --corrupt 0.05 " +
                            "--iterations 5 --seed 7 --noise 0 --workdir '" + dir.path().string() + "' 2>&1";
    const auto t0 = Clock::now();
    FILE* pipe = popen(cmd.c_str(), "r");
    std::string out;
    char buf[4096];
    std::size_t n = 0;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
    const int status = pclose(pipe);
    const double secs = seconds_since(t0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, "simulate failed: " + out};

    const json stats = json::parse(read_text_file(dir / "stats.json"));
    const json report = json::parse(read_text_file(dir / "run_report.json"));
    const auto& rows = stats.at("rows");
    bool non_increasing = rows.size() == 5;
    bool proportions = rows.size() == 5;
    std::string series;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (i > 0 && r.at("false_count").get<long>() > rows[i - 1].at("false_count").get<long>()) {
            non_increasing = false;
        }
        const auto fn = r.at("fn_count").get<double>(), tn = r.at("tn_count").get<double>();
        const auto& p = r.at("fn_proportion");
        if (fn + tn > 0 ? !(p.is_number() && std::fabs(p.get<double>() - fn / (fn + tn)) < 1e-12) : !p.is_null()) {
            proportions = false;
        }
        series += (i ? "," : "") + std::to_string(r.at("false_count").get<long>());
    }
    const auto& rec = report.at("recovery");
    const auto corrupted = rec.at("corrupted_scenes").get<std::size_t>();
    const auto corrupted_removed = rec.at("corrupted_removed").get<std::size_t>();
    const double coverage = rec.at("coverage").get<double>();
    const bool ok = non_increasing && proportions && corrupted == 10 && corrupted_removed == 10 &&
                    coverage >= kMinRecovery && secs < kLoopMaxSeconds;
    return {ok, "false_count [" + series + "] " + (non_increasing ? "non-increasing" : "INCREASES") + ", " +
                    std::to_string(corrupted_removed) + "/" + std::to_string(corrupted) +
                    " corrupted removed, dropped-label recovery " + fmt("%.4f", coverage) + " (min 0.95), " +
                    "fn/tn proportions " + (proportions ? "emitted" : "MISSING") + ", " + fmt("%.2f", secs) +
                    " s (limit 60 s)"};
}

// ---------------------------------------------------------------------------
// Dataset round trip on the three-scene fixture plus random scenes.

Outcome dataset_round_trip() {
    fixture::TempDir src("acceptance-src"), out("acceptance-out");
    fixture::write_three_scene_fixture(src.path());
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> pos(0, 640), deg(-90, 90), open(1, 150), jaw(1, 60);
    for (int s = 0; s < 40; ++s) {
        std::vector<std::string> lines;
        for (int k = 0; k < 1 + s % 6; ++k) {
            lines.push_back(fmt("%.6f", pos(rng)) + ";" + fmt("%.6f", pos(rng)) + ";" + fmt("%.6f", deg(rng)) + ";" +
                            fmt("%.6f", open(rng)) + ";" + fmt("%.6f", jaw(rng)));
        }
        fixture::write_scene(src.path(), "rand_" + std::to_string(s), lines, 640, 640);
    }
    const auto first = load_dataset(src.path());
    write_dataset(first.version, out.path());
    const auto second = load_dataset(out.path());
    double worst = 0.0;
    bool shape_ok = first.diagnostics.empty() && second.diagnostics.empty() &&
                    first.version.records.size() == second.version.records.size() &&
                    first.version.annotation_count() == second.version.annotation_count();
    for (const auto& [id, rec] : first.version.records) {
        const auto it = second.version.records.find(id);
        if (it == second.version.records.end() || it->second.annotations.size() != rec.annotations.size()) {
            shape_ok = false;
            continue;
        }
        for (std::size_t i = 0; i < rec.annotations.size(); ++i) {
            const auto& a = rec.annotations[i].pose;
            const auto& b = it->second.annotations[i].pose;
            worst = std::max({worst, std::fabs(a.center_x - b.center_x), std::fabs(a.center_y - b.center_y),
                              angle_distance(a.angle, b.angle), std::fabs(a.opening - b.opening),
                              std::fabs(a.jaw_size - b.jaw_size)});
        }
    }
    return {shape_ok && worst <= kRoundTripTol, std::to_string(second.version.records.size()) + " images, " +
                                                    std::to_string(first.version.annotation_count()) + " -> " +
                                                    std::to_string(second.version.annotation_count()) +
                                                    " annotations, max field err " + fmt("%.3g", worst) +
                                                    " (tol 1e-5)"};
}

// ---------------------------------------------------------------------------
// Service: concurrent leasing and restart over HTTP.

int drain(int port, const std::string& op, int limit) {
    httplib::Client cli("127.0.0.1", port);
    int done = 0;
    while (limit < 0 || done < limit) {
        auto res = cli.Get("/api/queue/next?operator=" + op);
        if (!res || res->status != 200) break;
        const auto id = json::parse(res->body).at("item").at("item_id").get<std::uint64_t>();
        const json d = {
            {"item_id", id}, {"verdict", "true_negative"}, {"token", "tok-" + std::to_string(id)}, {"operator", op}};
        auto ack = cli.Post("/api/decisions", d.dump(), "application/json");
        if (!ack || ack->status != 200) break;
        ++done;
    }
    return done;
}

Outcome service_contract() {
    fixture::TempDir dir("acceptance-service");
    const auto f = fixture::make_review_fixture(50);

    // Stress: 100 clients race over a 50-item queue.
    std::multiset<std::uint64_t> leased;
    std::atomic<int> failures{0}, accepted{0};
    std::size_t stress_events = 0;
    {
        ReviewCoordinator co(f.version, f.queue, Ledger::open(dir / "stress.ndjson"), {f.report});
        ReviewServer server(co);
        const int port = server.start("127.0.0.1", 0);
        std::mutex mu;
        std::vector<std::future<void>> clients;
        for (int c = 0; c < 100; ++c) {
            clients.push_back(std::async(std::launch::async, [&, c] {
                httplib::Client cli("127.0.0.1", port);
                cli.set_read_timeout(30);
                const std::string op = "op" + std::to_string(c);
                for (;;) {
                    auto res = cli.Get("/api/queue/next?operator=" + op);
                    if (!res) {
                        ++failures;
                        return;
                    }
                    if (res->status == 204) return;
                    const auto id = json::parse(res->body).at("item").at("item_id").get<std::uint64_t>();
                    {
                        std::lock_guard lock(mu);
                        leased.insert(id);
                    }
                    const json d = {{"item_id", id},
                                    {"verdict", "true_negative"},
                                    {"token", op + "-" + std::to_string(id)},
                                    {"operator", op}};
                    auto ack = cli.Post("/api/decisions", d.dump(), "application/json");
                    (ack && ack->status == 200 ? accepted : failures)++;
                }
            }));
        }
        for (auto& c : clients) c.get();
        server.stop();
        stress_events = Ledger::open(dir / "stress.ndjson").size();
    }
    const std::size_t distinct = std::set<std::uint64_t>(leased.begin(), leased.end()).size();
    const std::size_t double_leases = leased.size() - distinct;

    // Restart: 20 decided and one leased, then a new server over the same ledger file.
    const fs::path file = dir / "restart.ndjson";
    int first_pass = 0;
    {
        ReviewCoordinator co(f.version, f.queue, Ledger::open(file), {f.report});
        ReviewServer server(co);
        const int port = server.start("127.0.0.1", 0);
        first_pass = drain(port, "alice", 20);
        httplib::Client("127.0.0.1", port).Get("/api/queue/next?operator=bob");
        server.stop();
    }
    json counts;
    int second_pass = 0;
    {
        ReviewCoordinator co(f.version, f.queue, Ledger::open(file), {f.report});
        ReviewServer server(co);
        const int port = server.start("127.0.0.1", 0);
        httplib::Client cli("127.0.0.1", port);
        if (auto res = cli.Get("/api/iterations"); res && res->status == 200)
            counts = json::parse(res->body)[0].at("queue");
        second_pass = drain(port, "carol", -1);
        server.stop();
    }
    const Ledger final_ledger = Ledger::open(file);
    bool verified = true;
    try {
        final_ledger.verify();
    } catch (const std::exception&) {
        verified = false;
    }
    const bool restart_ok = first_pass == 20 && counts.value("decided", -1) == 20 &&
                            counts.value("pending", -1) == 30 && counts.value("leased", -1) == 0 && second_pass == 30 &&
                            final_ledger.size() == 50 && verified;
    const bool ok =
        failures == 0 && accepted == 50 && double_leases == 0 && distinct == 50 && stress_events == 50 && restart_ok;
    return {ok, "stress: " + std::to_string(distinct) + " items leased, " + std::to_string(double_leases) +
                    " double leases, " + std::to_string(stress_events) + " ledger events, " +
                    std::to_string(failures.load()) + " failures; restart: decided " +
                    std::to_string(counts.value("decided", -1)) + " pending " +
                    std::to_string(counts.value("pending", -1)) + " leased " +
                    std::to_string(counts.value("leased", -1)) + ", drained " + std::to_string(second_pass) +
                    " more, final ledger " + std::to_string(final_ledger.size()) + " events" +
                    (verified ? " verified" : " CORRUPT")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, Outcome (*)()>> criteria = {
        {"geometry-oracle-equivalence", geometry_oracle}, {"triage-boundary-exactness", triage_boundary},
        {"codec-round-trip", codec_round_trip},           {"loss-correctness", loss_correctness},
        {"ledger-determinism", ledger_determinism},       {"closed-loop-dynamic", closed_loop},
        {"dataset-round-trip", dataset_round_trip},       {"service-contract", service_contract},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
