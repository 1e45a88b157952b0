#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "refinery/dataset.hpp"
#include "refinery/triage.hpp"

namespace refinery {

enum class Verdict { true_negative, fn_missing_label, fn_annotation_error };

const char* to_string(Verdict verdict);
Verdict verdict_from_string(const std::string& s);

struct ReviewDecision {
    std::string image_id;
    Verdict verdict = Verdict::true_negative;
    std::optional<Candidate> candidate;  // required for fn_missing_label
    std::string operator_id;
    std::int64_t decided_at_ms = 0;
    std::uint64_t iteration = 0;
    // Idempotency token supplied by the client, echoed into the event.
    std::string token;
};

// Fields shared by every event produced from a review decision.
struct DecisionMeta {
    std::string image_id;
    std::string operator_id;
    std::int64_t decided_at_ms = 0;
    std::uint64_t iteration = 0;
    std::uint64_t item_id = 0;
    std::string token;

    bool operator==(const DecisionMeta&) const = default;
};

struct AddGrasp {
    DecisionMeta meta;
    GraspAnnotation annotation;
};

struct RemoveImage {
    DecisionMeta meta;
    std::string reason;
};

struct NoOp {
    DecisionMeta meta;
    std::string reason;
};

struct IterationBoundary {
    std::uint64_t iteration = 0;
};

using EventPayload = std::variant<AddGrasp, RemoveImage, NoOp, IterationBoundary>;

enum class EventKind { add_grasp, remove_image, no_op, iteration_boundary };

const char* to_string(EventKind kind);

struct LedgerEvent {
    std::uint64_t sequence = 0;
    EventPayload payload;
    std::string prev_checksum;

    EventKind kind() const { return static_cast<EventKind>(payload.index()); }
    const DecisionMeta* decision() const;
};

/// Checksum placed in the first event's prev_checksum.
extern const std::string kGenesisChecksum;

std::string serialize_event(const LedgerEvent& event);
LedgerEvent parse_event(const std::string& line);

/// Append-only, checksum-chained event log. Each line is one JSON event
/// {seq, kind, payload, prev_checksum}; prev_checksum is the SHA-256 of the
/// previous line's bytes. Sequences start at 1 and have no gaps.
///
/// Not internally synchronized: a single writer appends; concurrent readers
/// should work from copies of events().
class Ledger {
public:
    Ledger() = default;

    /// Opens (or creates) a file-backed ledger, verifying the existing chain.
    static Ledger open(const std::filesystem::path& file);
    /// Builds an in-memory ledger from raw text, verifying the chain.
    static Ledger from_text(const std::string& text);

    /// Validates and appends; throws on duplicate (image, iteration) decisions,
    /// reused tokens, or events for an iteration other than the open one.
    LedgerEvent append(EventPayload payload);

    const std::vector<LedgerEvent>& events() const { return events_; }
    const std::vector<std::string>& lines() const { return lines_; }
    std::string text() const;
    std::size_t size() const { return events_.size(); }
    std::uint64_t last_sequence() const { return events_.empty() ? 0 : events_.back().sequence; }

    /// Iterations closed by a boundary event, in order.
    std::vector<std::uint64_t> closed_iterations() const;
    /// Iteration receiving new decisions (last closed + 1).
    std::uint64_t open_iteration() const;
    /// Sequence of the boundary event closing `iteration`, if any.
    std::optional<std::uint64_t> boundary_sequence(std::uint64_t iteration) const;

    const LedgerEvent* find_decision(const std::string& image_id, std::uint64_t iteration) const;
    const LedgerEvent* find_token(const std::string& token) const;

    /// Re-hashes the whole chain; throws IntegrityError at the first bad sequence.
    void verify() const;

private:
    void index(const LedgerEvent& e);

    std::vector<LedgerEvent> events_;
    std::vector<std::string> lines_;
    std::map<std::pair<std::string, std::uint64_t>, std::size_t> decisions_;
    std::map<std::string, std::size_t> tokens_;
    std::map<std::uint64_t, std::uint64_t> boundaries_;  // iteration -> sequence
    std::filesystem::path file_;
    std::shared_ptr<std::ofstream> sink_;
};

/// Verifies raw ledger text. Returns nothing when intact, otherwise the first
/// sequence number at which verification fails and the reason. A final line
/// without a trailing newline counts as a torn write.
std::optional<std::pair<std::uint64_t, std::string>> verify_ledger_text(const std::string& text);

/// Records an operator verdict as a ledger event and marks the item decided.
/// The item must be leased by decision.operator_id.
LedgerEvent decide(ReviewQueueItem& item, const ReviewDecision& decision, Ledger& ledger);

/// Materializes the version closed by boundary `up_to` starting from `base`
/// (version 0 or a sealed ancestor whose created_from marks its boundary).
DatasetVersion replay(const DatasetVersion& base, const Ledger& ledger, std::uint64_t up_to);

DecisionTally iteration_summary(const Ledger& ledger, std::uint64_t iteration);
std::vector<DecisionTally> all_iteration_summaries(const Ledger& ledger);

}  // namespace refinery
