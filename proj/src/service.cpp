#include "refinery/service.hpp"

#include <algorithm>
#include <chrono>

// Many operators may connect at once; the library default backlog is 5.
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#include <httplib.h>

#include "refinery/workspace.hpp"

namespace refinery {

using nlohmann::json;
using nlohmann::ordered_json;

std::int64_t system_now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

int http_status(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::not_found: return 404;
        case ErrorKind::conflict:
        case ErrorKind::state: return 409;
        case ErrorKind::validation:
        case ErrorKind::contract:
        case ErrorKind::invalid_grasp: return 422;
        case ErrorKind::parse: return 400;
        default: return 500;
    }
}

ReviewCoordinator::ReviewCoordinator(DatasetVersion version, std::vector<ReviewQueueItem> queue, Ledger ledger,
                                     std::vector<TriageReport> reports, Clock clock, std::int64_t lease_ms)
    : version_(std::move(version)),
      queue_(std::move(queue)),
      ledger_(std::move(ledger)),
      reports_(std::move(reports)),
      clock_(std::move(clock)),
      lease_ms_(lease_ms),
      iteration_(ledger_.open_iteration()) {
    if (lease_ms_ <= 0) throw Error(ErrorKind::validation, "lease duration must be positive");
    std::sort(queue_.begin(), queue_.end(),
              [](const ReviewQueueItem& a, const ReviewQueueItem& b) { return a.item_id < b.item_id; });
    for (auto& item : queue_) {
        if (item.iteration != iteration_) {
            throw Error(ErrorKind::contract, "queue item " + std::to_string(item.item_id) + " belongs to iteration " +
                                                 std::to_string(item.iteration) + " but the ledger has iteration " +
                                                 std::to_string(iteration_) + " open");
        }
        // Leases are in-memory only; a restart returns undecided items to pending.
        item.lease.reset();
        item.status = ledger_.find_decision(item.image_id, iteration_) ? ItemStatus::decided : ItemStatus::pending;
    }
}

void ReviewCoordinator::expire_leases(std::int64_t now) {
    for (auto& item : queue_) {
        if (item.status == ItemStatus::leased && item.lease && item.lease->expires_at_ms <= now) {
            item.status = ItemStatus::pending;
            item.lease.reset();
        }
    }
}

ReviewQueueItem& ReviewCoordinator::item_ref(std::uint64_t item_id) {
    const auto it = std::find_if(queue_.begin(), queue_.end(),
                                 [&](const ReviewQueueItem& i) { return i.item_id == item_id; });
    if (it == queue_.end()) throw Error(ErrorKind::not_found, "no queue item " + std::to_string(item_id));
    return *it;
}

std::optional<LeaseGrant> ReviewCoordinator::lease_next(const std::string& operator_id) {
    if (operator_id.empty()) throw Error(ErrorKind::validation, "operator id is required");
    std::lock_guard lock(mutex_);
    const std::int64_t now = clock_();
    expire_leases(now);
    for (auto& item : queue_) {
        if (item.status != ItemStatus::pending) continue;
        item.status = ItemStatus::leased;
        item.lease = Lease{operator_id, now + lease_ms_};
        const auto pending = static_cast<std::size_t>(std::count_if(
            queue_.begin(), queue_.end(), [](const ReviewQueueItem& i) { return i.status == ItemStatus::pending; }));
        return LeaseGrant{item, *item.lease, pending};
    }
    return std::nullopt;
}

void ReviewCoordinator::release(std::uint64_t item_id, const std::string& operator_id) {
    std::lock_guard lock(mutex_);
    expire_leases(clock_());
    ReviewQueueItem& item = item_ref(item_id);
    if (item.status != ItemStatus::leased || !item.lease || item.lease->operator_id != operator_id) {
        throw Error(ErrorKind::conflict,
                    "item " + std::to_string(item_id) + " is not leased by operator '" + operator_id + "'");
    }
    item.status = ItemStatus::pending;
    item.lease.reset();
}

SubmitAck ReviewCoordinator::submit(const SubmitRequest& request) {
    if (request.token.empty()) throw Error(ErrorKind::validation, "decision token is required");
    if (request.operator_id.empty()) throw Error(ErrorKind::validation, "operator id is required");
    std::lock_guard lock(mutex_);
    if (const LedgerEvent* prior = ledger_.find_token(request.token)) {
        const DecisionMeta* meta = prior->decision();
        if (meta->item_id == request.item_id && meta->iteration == iteration_) {
            return SubmitAck{prior->sequence, request.item_id, true};
        }
        throw Error(ErrorKind::conflict, "token '" + request.token + "' was already used for another item");
    }
    ReviewQueueItem& item = item_ref(request.item_id);
    if (item.status == ItemStatus::decided) {
        throw Error(ErrorKind::conflict, "item " + std::to_string(item.item_id) + " is already decided");
    }
    const std::int64_t now = clock_();
    if (item.status == ItemStatus::leased && item.lease && item.lease->expires_at_ms <= now) {
        item.status = ItemStatus::pending;
        item.lease.reset();
        throw Error(ErrorKind::conflict, "lease on item " + std::to_string(item.item_id) + " expired");
    }
    if (item.status != ItemStatus::leased || !item.lease || item.lease->operator_id != request.operator_id) {
        throw Error(ErrorKind::conflict, "item " + std::to_string(item.item_id) + " is not leased by operator '" +
                                             request.operator_id + "'");
    }
    if (request.verdict == Verdict::fn_missing_label) {
        if (!item.candidate) {
            throw Error(ErrorKind::validation, "fn_missing_label needs a candidate but item " +
                                                   std::to_string(item.item_id) + " has none");
        }
        if (request.candidate_id && *request.candidate_id != item.candidate->prediction_id) {
            throw Error(ErrorKind::validation, "candidate '" + *request.candidate_id + "' is not the candidate of item " +
                                                   std::to_string(item.item_id));
        }
    }
    ReviewDecision decision;
    decision.image_id = item.image_id;
    decision.verdict = request.verdict;
    decision.candidate = item.candidate;
    decision.operator_id = request.operator_id;
    decision.decided_at_ms = now;
    decision.iteration = iteration_;
    decision.token = request.token;
    const LedgerEvent ev = decide(item, decision, ledger_);
    return SubmitAck{ev.sequence, item.item_id, false};
}

namespace {

ordered_json corners_json(const GraspPose& pose) {
    auto out = ordered_json::array();
    for (const auto& c : rect_from_grasp(pose).corners) out.push_back({c.x, c.y});
    return out;
}

}  // namespace

ordered_json ReviewCoordinator::overlay(const std::string& image_id) const {
    const auto rec = version_.records.find(image_id);
    if (rec == version_.records.end()) {
        throw Error(ErrorKind::not_found, "image '" + image_id + "' is not in version " +
                                              std::to_string(version_.version_id));
    }
    ordered_json j;
    j["image_id"] = image_id;
    j["image_url"] = "/api/images/" + image_id;
    j["width"] = rec->second.width;
    j["height"] = rec->second.height;
    j["version"] = version_.version_id;
    j["iteration"] = iteration_;
    auto polygons = ordered_json::array();
    for (const auto& a : rec->second.annotations) {
        ordered_json p;
        p["role"] = "ground_truth";
        p["source"] = to_string(a.source);
        p["grasp"] = to_json(a.pose);
        p["corners"] = corners_json(a.pose);
        polygons.push_back(std::move(p));
    }
    std::lock_guard lock(mutex_);
    for (const auto& item : queue_) {
        if (item.image_id != image_id) continue;
        j["item_id"] = item.item_id;
        j["status"] = to_string(item.status);
        if (item.candidate) {
            ordered_json p;
            p["role"] = "prediction";
            p["prediction_id"] = item.candidate->prediction_id;
            p["grasp"] = to_json(item.candidate->pose);
            p["corners"] = corners_json(item.candidate->pose);
            polygons.push_back(std::move(p));
        }
    }
    j["polygons"] = std::move(polygons);
    return j;
}

std::filesystem::path ReviewCoordinator::image_file(const std::string& image_id) const {
    const auto rec = version_.records.find(image_id);
    if (rec == version_.records.end()) throw Error(ErrorKind::not_found, "unknown image '" + image_id + "'");
    std::error_code ec;
    if (rec->second.rgb_path.empty() || !std::filesystem::is_regular_file(rec->second.rgb_path, ec)) {
        throw Error(ErrorKind::not_found, "no image file for '" + image_id + "'");
    }
    return rec->second.rgb_path;
}

StatsSeries ReviewCoordinator::stats() const {
    std::lock_guard lock(mutex_);
    return triage_stats(reports_, all_iteration_summaries(ledger_));
}

ordered_json ReviewCoordinator::iterations() const {
    std::lock_guard lock(mutex_);
    const auto tallies = all_iteration_summaries(ledger_);
    auto out = ordered_json::array();
    for (const auto& report : reports_) {
        ordered_json row;
        row["iteration"] = report.iteration;
        row["closed"] = ledger_.boundary_sequence(report.iteration).has_value();
        row["evaluated"] = report.evaluated;
        row["flagged"] = report.flagged;
        const auto t = std::find_if(tallies.begin(), tallies.end(),
                                    [&](const DecisionTally& d) { return d.iteration == report.iteration; });
        const DecisionTally tally = t == tallies.end() ? DecisionTally{report.iteration} : *t;
        row["labels_added"] = tally.labels_added;
        row["images_removed"] = tally.images_removed;
        row["tn_count"] = tally.tn_count;
        if (report.iteration == iteration_) {
            std::size_t pending = 0, leased = 0, decided = 0;
            for (const auto& item : queue_) {
                pending += item.status == ItemStatus::pending;
                leased += item.status == ItemStatus::leased;
                decided += item.status == ItemStatus::decided;
            }
            row["queue"] = {{"pending", pending}, {"leased", leased}, {"decided", decided}};
        }
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<ReviewQueueItem> ReviewCoordinator::queue() const {
    std::lock_guard lock(mutex_);
    return queue_;
}

QueueCounts ReviewCoordinator::counts() const {
    std::lock_guard lock(mutex_);
    QueueCounts c;
    for (const auto& item : queue_) {
        c.pending += item.status == ItemStatus::pending;
        c.leased += item.status == ItemStatus::leased;
        c.decided += item.status == ItemStatus::decided;
    }
    return c;
}

std::size_t ReviewCoordinator::ledger_size() const {
    std::lock_guard lock(mutex_);
    return ledger_.size();
}

namespace {

void send_json(httplib::Response& res, int status, const ordered_json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
    send_json(res, status, {{"error", kind}, {"message", message}});
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        send_error(res, http_status(e.kind()), to_string(e.kind()), e.what());
    } catch (const json::exception& e) {
        send_error(res, 400, "parse", e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
    }
}

std::string required_string(const json& body, const char* key) {
    if (!body.contains(key) || !body.at(key).is_string()) {
        throw Error(ErrorKind::validation, std::string("field '") + key + "' must be a string");
    }
    return body.at(key).get<std::string>();
}

SubmitRequest submit_from_json(const json& body) {
    if (!body.is_object()) throw Error(ErrorKind::validation, "request body must be a JSON object");
    SubmitRequest r;
    if (!body.contains("item_id") || !body.at("item_id").is_number_unsigned()) {
        throw Error(ErrorKind::validation, "field 'item_id' must be a non-negative integer");
    }
    r.item_id = body.at("item_id").get<std::uint64_t>();
    r.verdict = verdict_from_string(required_string(body, "verdict"));
    r.token = required_string(body, "token");
    r.operator_id = required_string(body, body.contains("operator_id") ? "operator_id" : "operator");
    if (body.contains("candidate") && !body.at("candidate").is_null()) {
        const json& c = body.at("candidate");
        if (c.is_string()) {
            r.candidate_id = c.get<std::string>();
        } else if (c.is_object() && c.contains("prediction_id") && c.at("prediction_id").is_string()) {
            r.candidate_id = c.at("prediction_id").get<std::string>();
        } else {
            throw Error(ErrorKind::validation, "field 'candidate' must be a prediction_id or {prediction_id}");
        }
    }
    return r;
}

std::string content_type_for(const std::filesystem::path& file) {
    std::string ext = file.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".tiff" || ext == ".tif") return "image/tiff";
    return "application/octet-stream";
}

}  // namespace

constexpr std::size_t kServerThreads = 16;

ReviewServer::ReviewServer(ReviewCoordinator& coordinator)
    : coordinator_(coordinator), server_(std::make_unique<httplib::Server>()) {
    install_routes();
}

ReviewServer::~ReviewServer() { stop(); }

void ReviewServer::install_routes() {
    auto& srv = *server_;
    ReviewCoordinator& co = coordinator_;
    srv.set_payload_max_length(1 << 20);
    srv.new_task_queue = [] { return new httplib::ThreadPool(kServerThreads); };

    srv.Get("/api/queue/next", [&co](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string op = req.get_param_value("operator");
            const auto grant = co.lease_next(op);
            if (!grant) {
                res.status = 204;
                return;
            }
            send_json(res, 200,
                      {{"item", to_json(grant->item)},
                       {"lease", {{"operator_id", grant->lease.operator_id},
                                  {"expires_at_ms", grant->lease.expires_at_ms}}},
                       {"pending", grant->pending_after}});
        });
    });

    srv.Post("/api/decisions", [&co](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const SubmitAck ack = co.submit(submit_from_json(json::parse(req.body)));
            send_json(res, 200, {{"sequence", ack.sequence}, {"item_id", ack.item_id}, {"replayed", ack.replayed}});
        });
    });

    srv.Post("/api/leases/release", [&co](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const json body = json::parse(req.body);
            if (!body.is_object() || !body.contains("item_id") || !body.at("item_id").is_number_unsigned()) {
                throw Error(ErrorKind::validation, "field 'item_id' must be a non-negative integer");
            }
            const auto id = body.at("item_id").get<std::uint64_t>();
            co.release(id, required_string(body, body.contains("operator_id") ? "operator_id" : "operator"));
            send_json(res, 200, {{"item_id", id}, {"status", "pending"}});
        });
    });

    srv.Get(R"(/api/images/([^/]+))", [&co](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto file = co.image_file(req.matches[1].str());
            res.status = 200;
            res.set_content(read_text_file(file), content_type_for(file));
        });
    });

    srv.Get(R"(/api/overlays/([^/]+))", [&co](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, co.overlay(req.matches[1].str())); });
    });

    srv.Get("/api/stats", [&co](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, stats_to_json(co.stats())); });
    });

    srv.Get("/api/iterations", [&co](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, co.iterations()); });
    });
}

int ReviewServer::start(const std::string& host, int port) {
    if (thread_.joinable()) throw Error(ErrorKind::state, "server already running");
    port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error(ErrorKind::io, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void ReviewServer::run(const std::string& host, int port) {
    if (!server_->bind_to_port(host, port)) {
        throw Error(ErrorKind::io, "cannot bind " + host + ":" + std::to_string(port));
    }
    port_ = port;
    server_->listen_after_bind();
}

void ReviewServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace refinery
