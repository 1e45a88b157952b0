// refinery: command-line entry point for importing a grasp dataset, triaging
// model predictions, serving the review queue, applying decisions, exporting
// versions, reporting statistics, simulating the closed loop and evaluating
// predictions.

#include <signal.h>

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "refinery/config.hpp"
#include "refinery/dataset.hpp"
#include "refinery/error.hpp"
#include "refinery/evaluate.hpp"
#include "refinery/ledger.hpp"
#include "refinery/service.hpp"
#include "refinery/simulation.hpp"
#include "refinery/triage.hpp"
#include "refinery/workspace.hpp"

namespace fs = std::filesystem;
using namespace refinery;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitUsage = 64;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void kv(const std::string& key, const std::string& value) { std::cout << key << ": " << value << "\n"; }
void kv(const std::string& key, std::size_t value) { kv(key, std::to_string(value)); }
void kv(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", value);
    kv(key, std::string(buf));
}
void kv(const std::string& key, bool value) { kv(key, std::string(value ? "true" : "false")); }

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

/// Raw flag values; only flags actually given on the command line are set.
struct Flags {
    std::map<std::string, std::string> values;
    std::optional<std::string> config_file;

    void bind(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
        app.add_option_function<std::string>(flag, [this, key](const std::string& v) { values[key] = v; }, help);
    }
};

ConfigLayers make_layers(const Flags& flags) {
    std::map<std::string, std::string> file;
    std::optional<std::string> path = flags.config_file;
    if (!path) path = process_env("REFINERY_CONFIG");
    if (path && !path->empty()) file = parse_config_text(read_text_file(*path));
    return ConfigLayers(flags.values, process_env, std::move(file));
}

Workspace open_workspace(const RunConfig& cfg) {
    Workspace ws(cfg.workdir);
    if (!ws.exists()) {
        throw Error(ErrorKind::state, "no workspace at " + cfg.workdir.string() + "; run import first");
    }
    return ws;
}

std::istream& open_input(const fs::path& file, std::ifstream& stream) {
    stream.open(file, std::ios::binary);
    if (!stream) throw Error(ErrorKind::io, "cannot read " + file.string());
    return stream;
}

IngestResult load_predictions(const ConfigLayers& layers, const std::string& model_tag, std::uint64_t iteration) {
    const auto path = layers.lookup("predictions");
    if (!path) throw UsageError("--predictions is required");
    std::ifstream in;
    IngestResult r = ingest_predictions(open_input(*path, in), model_tag, iteration);
    for (const auto& rej : r.rejects) {
        std::cerr << *path << ":" << rej.line << ": rejected prediction: " << rej.reason << "\n";
    }
    return r;
}

// ---------------------------------------------------------------------------

int cmd_import(const ConfigLayers& layers) {
    const RunConfig cfg = resolve_run_config(layers);
    if (cfg.dataset_root.empty()) throw UsageError("--dataset is required");
    if (!fs::is_directory(cfg.dataset_root)) {
        throw Error(ErrorKind::io, "dataset root " + cfg.dataset_root.string() + " is not a directory");
    }
    const LoadResult loaded = load_dataset(cfg.dataset_root);
    std::vector<Diagnostic> diags = loaded.diagnostics;
    for (auto& d : validate(loaded.version)) diags.push_back(std::move(d));
    std::size_t errors = 0;
    std::size_t warnings = 0;
    for (const auto& d : diags) {
        std::cerr << format_diagnostic(d) << "\n";
        (d.severity == Severity::error ? errors : warnings) += 1;
    }
    kv("images", loaded.version.records.size());
    kv("annotations", loaded.version.annotation_count());
    kv("warnings", warnings);
    kv("errors", errors);
    if (errors > 0) {
        std::cerr << "import aborted: " << errors << " validation error(s)\n";
        return kExitValidation;
    }
    const Workspace ws = Workspace::create(cfg.workdir, cfg.dataset_root, loaded.version);
    kv("version", std::size_t{0});
    kv("digest", compute_manifest(loaded.version).digest);
    kv("manifest", (ws.version_dir(0) / "manifest.json").string());
    return kExitOk;
}

int cmd_triage(const ConfigLayers& layers, const std::string& model_tag) {
    const RunConfig cfg = resolve_run_config(layers);
    const Workspace ws = open_workspace(cfg);
    const Ledger ledger = Ledger::open(ws.ledger_path());
    const std::uint64_t t = ledger.open_iteration();
    const std::uint64_t current = ws.current_version();
    if (current + 1 != t) {
        throw Error(ErrorKind::state, "version " + std::to_string(current) + " is current but iteration " +
                                          std::to_string(t) + " is open; run apply first");
    }
    for (const auto& e : ledger.events()) {
        if (const auto* m = e.decision(); m && m->iteration == t) {
            throw Error(ErrorKind::state, "iteration " + std::to_string(t) +
                                              " already has review decisions; its queue cannot be replaced");
        }
    }
    const IngestResult ingest = load_predictions(layers, model_tag, t);
    const DatasetVersion version = ws.read_version(current);
    std::vector<std::size_t> history;
    if (t > 1) history = ws.read_report(t - 1).flagged_history;
    TriageOptions opts;
    opts.threshold = cfg.threshold;
    const TriageOutcome out = run_triage(version, ingest.predictions, t, opts, history);
    ws.write_queue(t, out.queue);
    ws.write_report(out.report);
    kv("iteration", static_cast<std::size_t>(t));
    kv("predictions", ingest.predictions.size());
    kv("rejected_lines", ingest.rejects.size());
    kv("evaluated", out.report.evaluated);
    kv("flagged", out.report.flagged);
    kv("unflagged", out.report.unflagged);
    kv("prediction_missing", out.report.prediction_missing);
    kv("queue", (ws.iteration_dir(t) / "queue.json").string());
    return kExitOk;
}

int cmd_serve(const ConfigLayers& layers) {
    const RunConfig cfg = resolve_run_config(layers);
    const Workspace ws = open_workspace(cfg);
    Ledger ledger = Ledger::open(ws.ledger_path());
    const std::uint64_t t = ledger.open_iteration();
    std::vector<ReviewQueueItem> queue;
    if (ws.has_queue(t)) queue = ws.read_queue(t);
    ReviewCoordinator coordinator(ws.read_version(ws.current_version()), std::move(queue), std::move(ledger),
                                  ws.read_reports());

    // Block termination signals so they can be collected synchronously.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    ReviewServer server(coordinator);
    const int port = server.start(cfg.host, cfg.port);
    kv("iteration", static_cast<std::size_t>(t));
    kv("pending", coordinator.counts().pending);
    kv("listening", "http://" + cfg.host + ":" + std::to_string(port));
    std::cout.flush();
    int received = 0;
    sigwait(&signals, &received);
    server.stop();
    kv("stopped", std::string(received == SIGINT ? "SIGINT" : "SIGTERM"));
    return kExitOk;
}

int cmd_apply(const ConfigLayers& layers, bool force) {
    const RunConfig cfg = resolve_run_config(layers);
    const Workspace ws = open_workspace(cfg);
    Ledger ledger = Ledger::open(ws.ledger_path());
    const std::uint64_t t = ledger.open_iteration();
    if (!ws.has_queue(t)) {
        throw Error(ErrorKind::state, "iteration " + std::to_string(t) + " has not been triaged");
    }
    std::size_t undecided = 0;
    for (const auto& item : ws.read_queue(t)) undecided += ledger.find_decision(item.image_id, t) ? 0 : 1;
    if (undecided > 0 && !force) {
        std::cerr << undecided << " queue item(s) of iteration " << t
                  << " are undecided (use --force to apply anyway)\n";
        kv("undecided", undecided);
        return kExitValidation;
    }
    const DatasetVersion base = ws.read_version(ws.current_version());
    ledger.append(IterationBoundary{t});
    const DatasetVersion next = replay(base, ledger, t);
    ws.write_version(next);
    ws.set_current_version(t);
    const DecisionTally tally = iteration_summary(ledger, t);
    kv("iteration", static_cast<std::size_t>(t));
    kv("version", static_cast<std::size_t>(next.version_id));
    kv("labels_added", tally.labels_added);
    kv("images_removed", tally.images_removed);
    kv("tn_count", tally.tn_count);
    kv("undecided", undecided);
    kv("images", next.records.size());
    kv("annotations", next.annotation_count());
    kv("digest", compute_manifest(next).digest);
    return kExitOk;
}

bool is_within(const fs::path& child, const fs::path& parent) {
    const auto c = fs::weakly_canonical(child);
    const auto p = fs::weakly_canonical(parent);
    auto ci = c.begin();
    for (auto pi = p.begin(); pi != p.end(); ++pi, ++ci) {
        if (ci == c.end() || *ci != *pi) return false;
    }
    return true;
}

int cmd_export(const ConfigLayers& layers) {
    const RunConfig cfg = resolve_run_config(layers);
    const Workspace ws = open_workspace(cfg);
    const auto n =
        static_cast<std::uint64_t>(layers.get_int("version", static_cast<std::int64_t>(ws.current_version())));
    const fs::path out = fs::absolute(layers.get_string("out", (cfg.workdir / "exports" / std::to_string(n)).string()));
    if (is_within(out, ws.dataset_root())) {
        throw Error(ErrorKind::validation,
                    "refusing to export into the source dataset root " + ws.dataset_root().string());
    }
    const DatasetVersion v = ws.read_version(n);
    const std::string digest = write_dataset(v, out);
    kv("version", static_cast<std::size_t>(n));
    kv("images", v.records.size());
    kv("annotations", v.annotation_count());
    kv("digest", digest);
    kv("out", out.string());
    return kExitOk;
}

int cmd_stats(const ConfigLayers& layers, const std::string& format) {
    const RunConfig cfg = resolve_run_config(layers);
    const Workspace ws = open_workspace(cfg);
    const Ledger ledger = Ledger::open(ws.ledger_path());
    const StatsSeries series = triage_stats(ws.read_reports(), all_iteration_summaries(ledger));
    const std::string csv = stats_to_csv(series);
    write_text_file(cfg.workdir / "stats.csv", csv);
    write_text_file(cfg.workdir / "stats.json", stats_to_json(series).dump(2) + "\n");
    if (format == "csv") {
        std::cout << csv;
    } else if (format == "json") {
        std::cout << stats_to_json(series).dump(2) << "\n";
    } else {
        kv("iterations", series.rows.size());
        for (const auto& r : series.rows) {
            kv("iteration." + std::to_string(r.iteration),
               "false_count=" + std::to_string(r.false_count) + " fn_count=" + std::to_string(r.fn_count) +
                   " tn_count=" + std::to_string(r.tn_count) +
                   " fn_proportion=" + (r.fn_proportion ? fixed6(*r.fn_proportion) : std::string("null")));
        }
        kv("review_actions", series.review_actions());
        kv("false_count_non_increasing", series.false_count_non_increasing());
        kv("csv", (cfg.workdir / "stats.csv").string());
    }
    return kExitOk;
}

int cmd_simulate(const ConfigLayers& layers) {
    const RunConfig cfg = resolve_run_config(layers);
    if (!cfg.seed) throw UsageError("simulate requires --seed (no implicit clock seed)");
    if (fs::exists(cfg.workdir / "state.json")) {
        throw Error(ErrorKind::state,
                    "workdir " + cfg.workdir.string() + " holds an imported dataset; simulate elsewhere");
    }
    const auto scenes = layers.get_int("scenes", 200);
    const auto iterations = layers.get_int("iterations", 5);
    if (scenes < 0) throw Error(ErrorKind::validation, "scenes must be non-negative");
    if (iterations < 1) throw Error(ErrorKind::validation, "iterations must be at least 1");
    CorpusConfig corpus_cfg{
        static_cast<std::size_t>(scenes), layers.get_double("drop", 0.3), layers.get_double("corrupt", 0.05),
        static_cast<std::uint64_t>(layers.get_int("corpus_seed", static_cast<std::int64_t>(*cfg.seed)))};
    LoopConfig loop_cfg;
    loop_cfg.iterations = static_cast<std::size_t>(iterations);
    loop_cfg.noise_level = layers.get_double("noise", 0.0);
    loop_cfg.seed = *cfg.seed;
    loop_cfg.threshold = cfg.threshold;

    const auto corpus =
        generate_corpus(corpus_cfg.scenes, corpus_cfg.drop_fraction, corpus_cfg.corrupt_fraction, corpus_cfg.seed);
    const LoopResult result = run_closed_loop(corpus, loop_cfg);
    const RecoveryMetrics recovery = measure_recovery(corpus, result.final_version, cfg.iou_min);

    write_text_file(cfg.workdir / "stats.csv", stats_to_csv(result.stats));
    write_text_file(cfg.workdir / "stats.json", stats_to_json(result.stats).dump(2) + "\n");
    write_text_file(cfg.workdir / "run_report.json", run_report(corpus_cfg, loop_cfg, result, recovery).dump(2) + "\n");
    write_text_file(cfg.workdir / "ledger.ndjson", result.ledger.text());
    write_text_file(cfg.workdir / "final_manifest.json", manifest_to_json(compute_manifest(result.final_version)));

    std::size_t dropped = 0, corrupted = 0;
    for (const auto& s : corpus) {
        dropped += s.corruption == Corruption::labels_dropped;
        corrupted += s.corruption == Corruption::labels_corrupted;
    }
    kv("scenes", corpus.size());
    kv("dropped_scenes", dropped);
    kv("corrupted_scenes", corrupted);
    for (const auto& r : result.stats.rows) {
        kv("iteration." + std::to_string(r.iteration),
           "false_count=" + std::to_string(r.false_count) + " fn_count=" + std::to_string(r.fn_count) +
               " tn_count=" + std::to_string(r.tn_count) +
               " fn_proportion=" + (r.fn_proportion ? fixed6(*r.fn_proportion) : std::string("null")) +
               " labels_added=" + std::to_string(r.labels_added) +
               " images_removed=" + std::to_string(r.images_removed));
    }
    kv("false_count_non_increasing", result.stats.false_count_non_increasing());
    kv("corrupted_removed", recovery.corrupted_removed);
    kv("dropped_labels", recovery.dropped_labels);
    kv("recovered_labels", recovery.recovered_labels);
    kv("recovery_coverage", recovery.coverage());
    kv("ledger_events", result.ledger.size());
    kv("final_digest", result.version_digests.back());
    kv("stats_csv", (cfg.workdir / "stats.csv").string());
    return kExitOk;
}

int cmd_evaluate(const ConfigLayers& layers) {
    const RunConfig cfg = resolve_run_config(layers);
    const Workspace ws = open_workspace(cfg);
    const auto n =
        static_cast<std::uint64_t>(layers.get_int("version", static_cast<std::int64_t>(ws.current_version())));
    const DatasetVersion v = ws.read_version(n);
    const IngestResult ingest = load_predictions(layers, "evaluation", 0);
    SuccessCriterion criterion;
    criterion.iou_min = cfg.iou_min;
    criterion.angle_max = degrees_to_radians(cfg.angle_max_deg);
    const EvaluationResult r = evaluate(v, ingest.predictions, criterion);
    kv("version", static_cast<std::size_t>(n));
    kv("evaluated", r.evaluated);
    kv("successes", r.successes);
    kv("skipped", r.skipped);
    kv("accuracy", r.accuracy);
    return kExitOk;
}

int exit_code_for(const Error& e) { return e.kind() == ErrorKind::io ? kExitIo : kExitValidation; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Human-in-the-loop refinement of grasp datasets"};
    app.require_subcommand(1);
    app.fallthrough();
    Flags flags;
    app.add_option_function<std::string>(
        "--config", [&](const std::string& v) { flags.config_file = v; }, "key=value settings file");
    flags.bind(app, "--workdir", "workdir", "Working directory for all outputs");
    flags.bind(app, "--threshold", "threshold", "Triage IOU threshold (default 0.2)");
    flags.bind(app, "--iou-min", "iou_min", "Success IOU bound (default 0.25)");
    flags.bind(app, "--angle-max", "angle_max", "Success angle bound in degrees (default 30)");

    std::string command;
    auto* import = app.add_subcommand("import", "Load and validate a dataset, write version 0");
    flags.bind(*import, "--dataset", "dataset_root", "Dataset root directory");

    auto* triage = app.add_subcommand("triage", "Ingest predictions and build the review queue");
    std::string model_tag = "external";
    flags.bind(*triage, "--predictions", "predictions", "Prediction file (newline-delimited JSON)");
    triage->add_option("--model-tag", model_tag, "Label recorded with the predictions");

    auto* serve = app.add_subcommand("serve", "Serve the review queue over HTTP");
    flags.bind(*serve, "--port", "port", "Listen port (default 8700)");
    flags.bind(*serve, "--host", "host", "Listen address (default 127.0.0.1)");

    auto* apply = app.add_subcommand("apply", "Close the open iteration and materialize the next version");
    bool force = false;
    apply->add_flag("--force", force, "Apply even if queue items are undecided");

    auto* exp = app.add_subcommand("export", "Write a version as a dataset directory");
    flags.bind(*exp, "--version", "version", "Version to export (default current)");
    flags.bind(*exp, "--out", "out", "Output directory (default <workdir>/exports/<version>)");

    auto* stats = app.add_subcommand("stats", "Write per-iteration statistics");
    std::string format = "summary";
    stats->add_option("--format", format, "summary, csv or json")->check(CLI::IsMember({"summary", "csv", "json"}));

    auto* simulate = app.add_subcommand("simulate", "Run the synthetic closed loop");
    flags.bind(*simulate, "--scenes", "scenes", "Number of synthetic scenes");
    flags.bind(*simulate, "--drop", "drop", "Fraction of scenes missing a grasp cluster");
    flags.bind(*simulate, "--corrupt", "corrupt", "Fraction of scenes with corrupted labels");
    flags.bind(*simulate, "--iterations", "iterations", "Loop iterations");
    flags.bind(*simulate, "--noise", "noise", "Oracle noise level (pixels and degrees)");
    flags.bind(*simulate, "--seed", "seed", "Loop seed (required)");
    flags.bind(*simulate, "--corpus-seed", "corpus_seed", "Corpus seed (default: --seed)");

    auto* eval = app.add_subcommand("evaluate", "Score predictions against a version");
    flags.bind(*eval, "--predictions", "predictions", "Prediction file (newline-delimited JSON)");
    flags.bind(*eval, "--version", "version", "Version to score against (default current)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return kExitUsage;
    }

    try {
        const ConfigLayers layers = make_layers(flags);
        if (import->parsed()) return cmd_import(layers);
        if (triage->parsed()) return cmd_triage(layers, model_tag);
        if (serve->parsed()) return cmd_serve(layers);
        if (apply->parsed()) return cmd_apply(layers, force);
        if (exp->parsed()) return cmd_export(layers);
        if (stats->parsed()) return cmd_stats(layers, format);
        if (simulate->parsed()) return cmd_simulate(layers);
        if (eval->parsed()) return cmd_evaluate(layers);
        std::cerr << app.help();
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParseError& e) {
        std::cerr << "error: line " << e.line() << ": " << e.what() << "\n";
        return kExitValidation;
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error (io): " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}
