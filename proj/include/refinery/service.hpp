#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "refinery/dataset.hpp"
#include "refinery/error.hpp"
#include "refinery/ledger.hpp"
#include "refinery/triage.hpp"

namespace httplib {
class Server;
}

namespace refinery {

using Clock = std::function<std::int64_t()>;

/// Milliseconds since the Unix epoch from the system clock.
std::int64_t system_now_ms();

inline constexpr std::int64_t kDefaultLeaseMs = 10 * 60 * 1000;

struct LeaseGrant {
    ReviewQueueItem item;
    Lease lease;
    std::size_t pending_after = 0;
};

struct SubmitRequest {
    std::uint64_t item_id = 0;
    Verdict verdict = Verdict::true_negative;
    // prediction_id of the candidate the operator approved; must name the item's candidate.
    std::optional<std::string> candidate_id;
    std::string token;
    std::string operator_id;
};

struct SubmitAck {
    std::uint64_t sequence = 0;
    std::uint64_t item_id = 0;
    // True when the token had already been accepted and no new event was written.
    bool replayed = false;
};

struct QueueCounts {
    std::size_t pending = 0;
    std::size_t leased = 0;
    std::size_t decided = 0;
};

/// Serializes every queue transition and ledger append for one open
/// iteration. Queue status on construction is rebuilt from the ledger: items
/// whose (image, iteration) already has a decision event start decided,
/// everything else starts pending.
class ReviewCoordinator {
public:
    ReviewCoordinator(DatasetVersion version, std::vector<ReviewQueueItem> queue, Ledger ledger,
                      std::vector<TriageReport> reports, Clock clock = system_now_ms,
                      std::int64_t lease_ms = kDefaultLeaseMs);

    /// Leases the lowest-numbered pending item, after returning expired leases to pending.
    std::optional<LeaseGrant> lease_next(const std::string& operator_id);
    /// Returns a leased item to pending; only the lease holder may release.
    void release(std::uint64_t item_id, const std::string& operator_id);
    /// Records a decision. A token already in the ledger for the same item
    /// yields the original acknowledgment without a new event.
    SubmitAck submit(const SubmitRequest& request);

    /// {image_id, image_url, width, height, iteration, polygons[{role, corners, ...}]}.
    nlohmann::ordered_json overlay(const std::string& image_id) const;
    /// Path of the image file for `image_id`; not_found when unknown or missing on disk.
    std::filesystem::path image_file(const std::string& image_id) const;
    StatsSeries stats() const;
    nlohmann::ordered_json iterations() const;

    std::vector<ReviewQueueItem> queue() const;
    QueueCounts counts() const;
    std::size_t ledger_size() const;
    std::uint64_t iteration() const { return iteration_; }

private:
    void expire_leases(std::int64_t now);
    ReviewQueueItem& item_ref(std::uint64_t item_id);

    mutable std::mutex mutex_;
    const DatasetVersion version_;
    std::vector<ReviewQueueItem> queue_;
    Ledger ledger_;
    std::vector<TriageReport> reports_;
    Clock clock_;
    std::int64_t lease_ms_;
    std::uint64_t iteration_;
};

/// HTTP status for an error kind: not_found 404, conflict and state 409,
/// validation, contract and invalid_grasp 422, parse 400, anything else 500.
int http_status(ErrorKind kind);

/// JSON API over a coordinator:
///   GET  /api/queue/next?operator=ID     200 {item, lease, pending} or 204
///   POST /api/decisions                  {item_id, verdict, candidate?, token, operator}
///   POST /api/leases/release             {item_id, operator}
///   GET  /api/images/{id}                image bytes
///   GET  /api/overlays/{id}              overlay geometry
///   GET  /api/stats                      stats series
///   GET  /api/iterations                 per-iteration queue and ledger counts
class ReviewServer {
public:
    explicit ReviewServer(ReviewCoordinator& coordinator);
    ~ReviewServer();
    ReviewServer(const ReviewServer&) = delete;
    ReviewServer& operator=(const ReviewServer&) = delete;

    /// Binds (port 0 picks a free port) and serves on a background thread.
    int start(const std::string& host, int port);
    /// Binds and serves on the calling thread until stop() is called.
    void run(const std::string& host, int port);
    void stop();
    int port() const { return port_; }

private:
    void install_routes();

    ReviewCoordinator& coordinator_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace refinery
