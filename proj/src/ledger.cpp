#include "refinery/ledger.hpp"

#include <sstream>

#include <nlohmann/json.hpp>

#include "refinery/digest.hpp"
#include "refinery/error.hpp"

namespace refinery {

using nlohmann::json;
using nlohmann::ordered_json;

const std::string kGenesisChecksum(64, '0');

const char* to_string(Verdict verdict) {
    switch (verdict) {
        case Verdict::true_negative: return "true_negative";
        case Verdict::fn_missing_label: return "fn_missing_label";
        case Verdict::fn_annotation_error: return "fn_annotation_error";
    }
    return "unknown";
}

Verdict verdict_from_string(const std::string& s) {
    if (s == "true_negative") return Verdict::true_negative;
    if (s == "fn_missing_label") return Verdict::fn_missing_label;
    if (s == "fn_annotation_error") return Verdict::fn_annotation_error;
    throw Error(ErrorKind::validation, "unknown verdict '" + s + "'");
}

const char* to_string(EventKind kind) {
    switch (kind) {
        case EventKind::add_grasp: return "add_grasp";
        case EventKind::remove_image: return "remove_image";
        case EventKind::no_op: return "no_op";
        case EventKind::iteration_boundary: return "iteration_boundary";
    }
    return "unknown";
}

const DecisionMeta* LedgerEvent::decision() const {
    return std::visit(
        [](const auto& p) -> const DecisionMeta* {
            if constexpr (requires { p.meta; }) {
                return &p.meta;
            } else {
                return nullptr;
            }
        },
        payload);
}

namespace {

void put_meta(ordered_json& j, const DecisionMeta& m) {
    j["image_id"] = m.image_id;
    j["item_id"] = m.item_id;
    j["iteration"] = m.iteration;
    j["operator_id"] = m.operator_id;
    j["decided_at_ms"] = m.decided_at_ms;
    j["token"] = m.token;
}

DecisionMeta get_meta(const json& j) {
    DecisionMeta m;
    m.image_id = j.at("image_id").get<std::string>();
    m.item_id = j.at("item_id").get<std::uint64_t>();
    m.iteration = j.at("iteration").get<std::uint64_t>();
    m.operator_id = j.at("operator_id").get<std::string>();
    m.decided_at_ms = j.at("decided_at_ms").get<std::int64_t>();
    m.token = j.at("token").get<std::string>();
    return m;
}

std::vector<std::string> split_lines(const std::string& text, bool& torn_tail) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        const auto nl = text.find('\n', start);
        if (nl == std::string::npos) {
            lines.push_back(text.substr(start));
            torn_tail = true;
            return lines;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    torn_tail = false;
    return lines;
}

}  // namespace

std::string serialize_event(const LedgerEvent& event) {
    ordered_json payload;
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, AddGrasp>) {
                put_meta(payload, p.meta);
                payload["annotation"] = to_json(p.annotation);
            } else if constexpr (std::is_same_v<T, RemoveImage> || std::is_same_v<T, NoOp>) {
                put_meta(payload, p.meta);
                payload["reason"] = p.reason;
            } else {
                payload["iteration"] = p.iteration;
            }
        },
        event.payload);
    ordered_json j;
    j["seq"] = event.sequence;
    j["kind"] = to_string(event.kind());
    j["payload"] = std::move(payload);
    j["prev_checksum"] = event.prev_checksum;
    return j.dump();
}

LedgerEvent parse_event(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("ledger line is not valid JSON: ") + e.what());
    }
    try {
        LedgerEvent ev;
        ev.sequence = j.at("seq").get<std::uint64_t>();
        ev.prev_checksum = j.at("prev_checksum").get<std::string>();
        const auto kind = j.at("kind").get<std::string>();
        const json& p = j.at("payload");
        if (kind == "add_grasp") {
            AddGrasp a{get_meta(p), annotation_from_json(p.at("annotation"))};
            if (a.annotation.source != AnnotationSource::pseudo_label) {
                throw Error(ErrorKind::parse, "add_grasp annotation must be a pseudo_label");
            }
            ev.payload = std::move(a);
        } else if (kind == "remove_image") {
            ev.payload = RemoveImage{get_meta(p), p.at("reason").get<std::string>()};
        } else if (kind == "no_op") {
            ev.payload = NoOp{get_meta(p), p.at("reason").get<std::string>()};
        } else if (kind == "iteration_boundary") {
            ev.payload = IterationBoundary{p.at("iteration").get<std::uint64_t>()};
        } else {
            throw Error(ErrorKind::parse, "unknown event kind '" + kind + "'");
        }
        return ev;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("malformed ledger event: ") + e.what());
    }
}

std::optional<std::pair<std::uint64_t, std::string>> verify_ledger_text(const std::string& text) {
    bool torn = false;
    const auto lines = split_lines(text, torn);
    std::string prev = kGenesisChecksum;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::uint64_t expected = i + 1;
        if (torn && i + 1 == lines.size()) {
            return std::pair{expected, std::string("torn write: final line lacks newline")};
        }
        LedgerEvent ev;
        try {
            ev = parse_event(lines[i]);
        } catch (const Error& e) {
            return std::pair{expected, std::string(e.what())};
        }
        if (ev.sequence != expected) {
            return std::pair{expected, "sequence " + std::to_string(ev.sequence) + " out of order"};
        }
        if (ev.prev_checksum != prev) return std::pair{expected, std::string("prev_checksum mismatch")};
        prev = sha256_hex(lines[i]);
    }
    return std::nullopt;
}

Ledger Ledger::from_text(const std::string& text) {
    if (const auto bad = verify_ledger_text(text)) throw IntegrityError(bad->first, bad->second);
    Ledger ledger;
    bool torn = false;
    for (auto& line : split_lines(text, torn)) {
        LedgerEvent ev = parse_event(line);
        ledger.lines_.push_back(std::move(line));
        ledger.index(ev);
        ledger.events_.push_back(std::move(ev));
    }
    return ledger;
}

Ledger Ledger::open(const std::filesystem::path& file) {
    Ledger ledger;
    if (std::filesystem::exists(file)) {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw Error(ErrorKind::io, "cannot read ledger " + file.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        ledger = from_text(ss.str());
    } else if (file.has_parent_path()) {
        std::filesystem::create_directories(file.parent_path());
    }
    ledger.file_ = file;
    ledger.sink_ = std::make_shared<std::ofstream>(file, std::ios::binary | std::ios::app);
    if (!*ledger.sink_) throw Error(ErrorKind::io, "cannot open ledger for append " + file.string());
    return ledger;
}

void Ledger::index(const LedgerEvent& e) {
    const std::size_t pos = events_.size();
    if (const auto* m = e.decision()) {
        decisions_[{m->image_id, m->iteration}] = pos;
        if (!m->token.empty()) tokens_[m->token] = pos;
    } else {
        boundaries_[std::get<IterationBoundary>(e.payload).iteration] = e.sequence;
    }
}

LedgerEvent Ledger::append(EventPayload payload) {
    LedgerEvent ev;
    ev.sequence = last_sequence() + 1;
    ev.payload = std::move(payload);
    ev.prev_checksum = lines_.empty() ? kGenesisChecksum : sha256_hex(lines_.back());

    const std::uint64_t open = open_iteration();
    if (const auto* m = ev.decision()) {
        if (m->iteration != open) {
            throw Error(ErrorKind::contract, "decision for iteration " + std::to_string(m->iteration) +
                                                 " but iteration " + std::to_string(open) + " is open");
        }
        if (decisions_.contains({m->image_id, m->iteration})) {
            throw Error(ErrorKind::state, "image '" + m->image_id + "' already decided in iteration " +
                                              std::to_string(m->iteration));
        }
        if (!m->token.empty() && tokens_.contains(m->token)) {
            throw Error(ErrorKind::conflict, "decision token '" + m->token + "' already used");
        }
    } else if (std::get<IterationBoundary>(ev.payload).iteration != open) {
        throw Error(ErrorKind::contract, "boundary must close the open iteration " + std::to_string(open));
    }

    std::string line = serialize_event(ev);
    // Keep the in-memory event identical to what a reader of the file sees.
    ev = parse_event(line);
    if (sink_) {
        *sink_ << line << '\n';
        sink_->flush();
        if (!*sink_) throw Error(ErrorKind::io, "ledger append failed for " + file_.string());
    }
    index(ev);
    lines_.push_back(std::move(line));
    events_.push_back(ev);
    return ev;
}

std::string Ledger::text() const {
    std::string out;
    for (const auto& l : lines_) {
        out += l;
        out += '\n';
    }
    return out;
}

std::vector<std::uint64_t> Ledger::closed_iterations() const {
    std::vector<std::uint64_t> out;
    for (const auto& [it, seq] : boundaries_) out.push_back(it);
    return out;
}

std::uint64_t Ledger::open_iteration() const {
    return boundaries_.empty() ? 1 : boundaries_.rbegin()->first + 1;
}

std::optional<std::uint64_t> Ledger::boundary_sequence(std::uint64_t iteration) const {
    const auto it = boundaries_.find(iteration);
    if (it == boundaries_.end()) return std::nullopt;
    return it->second;
}

const LedgerEvent* Ledger::find_decision(const std::string& image_id, std::uint64_t iteration) const {
    const auto it = decisions_.find({image_id, iteration});
    return it == decisions_.end() ? nullptr : &events_[it->second];
}

const LedgerEvent* Ledger::find_token(const std::string& token) const {
    const auto it = tokens_.find(token);
    return it == tokens_.end() ? nullptr : &events_[it->second];
}

void Ledger::verify() const {
    if (const auto bad = verify_ledger_text(text())) throw IntegrityError(bad->first, bad->second);
}

LedgerEvent decide(ReviewQueueItem& item, const ReviewDecision& decision, Ledger& ledger) {
    if (item.status == ItemStatus::decided) {
        throw Error(ErrorKind::state, "item " + std::to_string(item.item_id) + " is already decided");
    }
    if (item.status != ItemStatus::leased || !item.lease ||
        item.lease->operator_id != decision.operator_id) {
        throw Error(ErrorKind::state, "item " + std::to_string(item.item_id) +
                                          " is not leased by operator '" + decision.operator_id + "'");
    }
    if (decision.image_id != item.image_id) {
        throw Error(ErrorKind::contract, "decision image '" + decision.image_id +
                                             "' does not match queue item image '" + item.image_id + "'");
    }
    DecisionMeta meta{decision.image_id, decision.operator_id, decision.decided_at_ms,
                      decision.iteration,  item.item_id,         decision.token};
    EventPayload payload;
    switch (decision.verdict) {
        case Verdict::fn_missing_label:
            if (!decision.candidate) {
                throw Error(ErrorKind::contract, "fn_missing_label requires a candidate grasp");
            }
            validate_pose(decision.candidate->pose);
            payload = AddGrasp{meta, pseudo_label(decision.candidate->pose, decision.candidate->prediction_id)};
            break;
        case Verdict::fn_annotation_error:
            payload = RemoveImage{meta, "annotation_error"};
            break;
        case Verdict::true_negative:
            payload = NoOp{meta, "true_negative"};
            break;
    }
    LedgerEvent ev = ledger.append(std::move(payload));
    item.status = ItemStatus::decided;
    item.lease.reset();
    return ev;
}

DatasetVersion replay(const DatasetVersion& base, const Ledger& ledger, std::uint64_t up_to) {
    ledger.verify();
    if (up_to < base.version_id) {
        throw Error(ErrorKind::replay, "cannot replay backwards from version " +
                                           std::to_string(base.version_id) + " to " + std::to_string(up_to));
    }
    if (base.version_id > 0 && ledger.boundary_sequence(base.version_id) != base.created_from) {
        throw Error(ErrorKind::replay, "base version " + std::to_string(base.version_id) +
                                           " is not an ancestor in this ledger");
    }
    if (up_to == base.version_id) {
        DatasetVersion same = base;
        same.sealed = true;
        return same;
    }
    const auto end = ledger.boundary_sequence(up_to);
    if (!end) {
        throw Error(ErrorKind::not_found, "no iteration_boundary for iteration " + std::to_string(up_to));
    }

    DatasetVersion out = base;
    out.sealed = false;
    std::set<std::string> removed;
    std::size_t added = 0;
    std::size_t lost = 0;
    const std::size_t before = base.annotation_count();

    for (const auto& ev : ledger.events()) {
        if (ev.sequence <= base.created_from) continue;
        if (ev.sequence > *end) break;
        if (const auto* add = std::get_if<AddGrasp>(&ev.payload)) {
            const auto rec = out.records.find(add->meta.image_id);
            if (rec == out.records.end()) {
                throw Error(ErrorKind::replay,
                            "event " + std::to_string(ev.sequence) + " adds a grasp to " +
                                (removed.contains(add->meta.image_id) ? "removed" : "unknown") +
                                " image '" + add->meta.image_id + "'");
            }
            rec->second.annotations.push_back(add->annotation);
            ++added;
        } else if (const auto* rm = std::get_if<RemoveImage>(&ev.payload)) {
            const auto rec = out.records.find(rm->meta.image_id);
            if (rec == out.records.end()) {
                throw Error(ErrorKind::replay, "event " + std::to_string(ev.sequence) +
                                                   " removes absent image '" + rm->meta.image_id + "'");
            }
            lost += rec->second.annotations.size();
            removed.insert(rm->meta.image_id);
            out.records.erase(rec);
        }
    }
    if (out.annotation_count() != before + added - lost) {
        throw Error(ErrorKind::replay, "annotation conservation violated during replay");
    }
    out.version_id = up_to;
    out.parent = up_to - 1;
    out.created_from = *end;
    out.sealed = true;
    return out;
}

namespace {

DecisionTally tally_range(const Ledger& ledger, std::uint64_t iteration, std::uint64_t after,
                          std::uint64_t through) {
    DecisionTally t;
    t.iteration = iteration;
    for (const auto& ev : ledger.events()) {
        if (ev.sequence <= after) continue;
        if (ev.sequence > through) break;
        switch (ev.kind()) {
            case EventKind::add_grasp: ++t.labels_added; break;
            case EventKind::remove_image: ++t.images_removed; break;
            case EventKind::no_op: ++t.tn_count; break;
            case EventKind::iteration_boundary: break;
        }
    }
    return t;
}

}  // namespace

DecisionTally iteration_summary(const Ledger& ledger, std::uint64_t iteration) {
    if (iteration == 0 || iteration > ledger.open_iteration()) {
        throw Error(ErrorKind::not_found, "unknown iteration " + std::to_string(iteration));
    }
    const std::uint64_t after = iteration == 1 ? 0 : *ledger.boundary_sequence(iteration - 1);
    const auto end = ledger.boundary_sequence(iteration);
    return tally_range(ledger, iteration, after, end ? *end : ledger.last_sequence());
}

std::vector<DecisionTally> all_iteration_summaries(const Ledger& ledger) {
    std::vector<DecisionTally> out;
    for (const auto it : ledger.closed_iterations()) out.push_back(iteration_summary(ledger, it));
    const auto open = ledger.open_iteration();
    const std::uint64_t after = open == 1 ? 0 : *ledger.boundary_sequence(open - 1);
    if (ledger.last_sequence() > after) out.push_back(iteration_summary(ledger, open));
    return out;
}

}  // namespace refinery
