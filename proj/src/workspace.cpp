#include "refinery/workspace.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "refinery/error.hpp"

namespace refinery {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string read_text_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot read " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& file, const std::string& text) {
    std::error_code ec;
    if (file.has_parent_path()) fs::create_directories(file.parent_path(), ec);
    if (ec) throw Error(ErrorKind::io, "cannot create " + file.parent_path().string() + ": " + ec.message());
    const fs::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::io, "cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out) throw Error(ErrorKind::io, "write failed for " + tmp.string());
    }
    fs::rename(tmp, file, ec);
    if (ec) throw Error(ErrorKind::io, "cannot replace " + file.string() + ": " + ec.message());
}

namespace {

json parse_json_file(const fs::path& file) {
    const std::string text = read_text_file(file);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, file.string() + ": " + e.what());
    }
}

std::vector<std::uint64_t> numbered_subdirs(const fs::path& dir) {
    std::vector<std::uint64_t> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        if (name.empty() || !std::all_of(name.begin(), name.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            continue;
        }
        out.push_back(std::stoull(name));
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

ordered_json version_to_json(const DatasetVersion& version) {
    ordered_json j;
    j["version_id"] = version.version_id;
    j["parent"] = version.parent ? ordered_json(*version.parent) : ordered_json();
    j["created_from"] = version.created_from;
    j["sealed"] = version.sealed;
    auto records = ordered_json::array();
    for (const auto& [id, rec] : version.records) {
        ordered_json r;
        r["image_id"] = rec.image_id;
        r["rgb_path"] = rec.rgb_path.string();
        r["width"] = rec.width;
        r["height"] = rec.height;
        auto anns = ordered_json::array();
        for (const auto& a : rec.annotations) anns.push_back(to_json(a));
        r["annotations"] = std::move(anns);
        records.push_back(std::move(r));
    }
    j["records"] = std::move(records);
    return j;
}

DatasetVersion version_from_json(const json& j) {
    try {
        DatasetVersion v;
        v.version_id = j.at("version_id").get<std::uint64_t>();
        if (!j.at("parent").is_null()) v.parent = j.at("parent").get<std::uint64_t>();
        v.created_from = j.at("created_from").get<std::uint64_t>();
        v.sealed = j.at("sealed").get<bool>();
        for (const auto& r : j.at("records")) {
            ImageRecord rec;
            rec.image_id = r.at("image_id").get<std::string>();
            rec.rgb_path = r.at("rgb_path").get<std::string>();
            rec.width = r.at("width").get<int>();
            rec.height = r.at("height").get<int>();
            for (const auto& a : r.at("annotations")) rec.annotations.push_back(annotation_from_json(a));
            if (!v.records.emplace(rec.image_id, rec).second) {
                throw Error(ErrorKind::parse, "duplicate record '" + rec.image_id + "' in version snapshot");
            }
        }
        return v;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("malformed version snapshot: ") + e.what());
    }
}

Workspace Workspace::create(const fs::path& root, const fs::path& dataset_root, const DatasetVersion& version0) {
    Workspace ws(root);
    if (ws.exists()) throw Error(ErrorKind::state, "workspace already initialized at " + root.string());
    if (version0.version_id != 0) throw Error(ErrorKind::contract, "a workspace starts from version 0");
    ws.write_version(version0);
    ordered_json state;
    state["dataset_root"] = fs::absolute(dataset_root).lexically_normal().string();
    state["current_version"] = 0;
    ws.write_state(state);
    return ws;
}

fs::path Workspace::version_dir(std::uint64_t n) const { return root_ / "versions" / std::to_string(n); }

fs::path Workspace::iteration_dir(std::uint64_t t) const { return root_ / "iterations" / std::to_string(t); }

bool Workspace::exists() const { return fs::exists(root_ / "state.json"); }

json Workspace::read_state() const {
    if (!exists()) throw Error(ErrorKind::io, "no workspace at " + root_.string() + " (run import first)");
    return parse_json_file(root_ / "state.json");
}

void Workspace::write_state(const ordered_json& state) const {
    write_text_file(root_ / "state.json", state.dump(2) + "\n");
}

fs::path Workspace::dataset_root() const { return read_state().at("dataset_root").get<std::string>(); }

std::uint64_t Workspace::current_version() const { return read_state().at("current_version").get<std::uint64_t>(); }

void Workspace::set_current_version(std::uint64_t n) const {
    const json old = read_state();
    ordered_json state;
    state["dataset_root"] = old.at("dataset_root");
    state["current_version"] = n;
    write_state(state);
}

DatasetVersion Workspace::read_version(std::uint64_t n) const {
    const fs::path file = version_dir(n) / "version.json";
    if (!fs::exists(file)) throw Error(ErrorKind::not_found, "version " + std::to_string(n) + " does not exist");
    return version_from_json(parse_json_file(file));
}

void Workspace::write_version(const DatasetVersion& version) const {
    const fs::path dir = version_dir(version.version_id);
    write_text_file(dir / "version.json", version_to_json(version).dump() + "\n");
    write_text_file(dir / "manifest.json", manifest_to_json(compute_manifest(version)));
}

bool Workspace::has_queue(std::uint64_t t) const { return fs::exists(iteration_dir(t) / "queue.json"); }

std::vector<ReviewQueueItem> Workspace::read_queue(std::uint64_t t) const {
    const json j = parse_json_file(iteration_dir(t) / "queue.json");
    std::vector<ReviewQueueItem> queue;
    try {
        for (const auto& item : j.at("items")) queue.push_back(queue_item_from_json(item));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("malformed queue: ") + e.what());
    }
    return queue;
}

void Workspace::write_queue(std::uint64_t t, const std::vector<ReviewQueueItem>& queue) const {
    ordered_json j;
    j["iteration"] = t;
    auto items = ordered_json::array();
    for (const auto& item : queue) items.push_back(to_json(item));
    j["items"] = std::move(items);
    write_text_file(iteration_dir(t) / "queue.json", j.dump(2) + "\n");
}

TriageReport Workspace::read_report(std::uint64_t t) const {
    const json j = parse_json_file(iteration_dir(t) / "report.json");
    try {
        return report_from_json(j);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("malformed triage report: ") + e.what());
    }
}

void Workspace::write_report(const TriageReport& report) const {
    write_text_file(iteration_dir(report.iteration) / "report.json", to_json(report).dump(2) + "\n");
}

std::vector<TriageReport> Workspace::read_reports() const {
    std::vector<TriageReport> out;
    for (const auto t : numbered_subdirs(root_ / "iterations")) {
        if (fs::exists(iteration_dir(t) / "report.json")) out.push_back(read_report(t));
    }
    return out;
}

}  // namespace refinery
