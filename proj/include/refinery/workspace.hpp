#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "refinery/dataset.hpp"
#include "refinery/triage.hpp"

namespace refinery {

/// Full version snapshot (records and annotations), unlike the manifest which
/// only carries counts and hashes.
nlohmann::ordered_json version_to_json(const DatasetVersion& version);
DatasetVersion version_from_json(const nlohmann::json& j);

/// On-disk layout of a working directory:
///   state.json                      dataset root and current version
///   ledger.ndjson                   decision ledger
///   versions/<n>/version.json       snapshot of version n
///   versions/<n>/manifest.json      manifest of version n
///   iterations/<t>/queue.json       review queue produced by triage of iteration t
///   iterations/<t>/report.json      triage report of iteration t
class Workspace {
public:
    explicit Workspace(std::filesystem::path root) : root_(std::move(root)) {}

    /// Creates the layout and stores version 0. Refuses to overwrite an existing workspace.
    static Workspace create(const std::filesystem::path& root, const std::filesystem::path& dataset_root,
                            const DatasetVersion& version0);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path ledger_path() const { return root_ / "ledger.ndjson"; }
    std::filesystem::path version_dir(std::uint64_t n) const;
    std::filesystem::path iteration_dir(std::uint64_t t) const;

    bool exists() const;
    std::filesystem::path dataset_root() const;
    std::uint64_t current_version() const;
    void set_current_version(std::uint64_t n) const;

    DatasetVersion read_version(std::uint64_t n) const;
    void write_version(const DatasetVersion& version) const;

    bool has_queue(std::uint64_t t) const;
    std::vector<ReviewQueueItem> read_queue(std::uint64_t t) const;
    void write_queue(std::uint64_t t, const std::vector<ReviewQueueItem>& queue) const;
    TriageReport read_report(std::uint64_t t) const;
    void write_report(const TriageReport& report) const;
    /// Every stored triage report, oldest iteration first.
    std::vector<TriageReport> read_reports() const;

private:
    nlohmann::json read_state() const;
    void write_state(const nlohmann::ordered_json& state) const;

    std::filesystem::path root_;
};

/// Reads a whole file; throws an io error when it cannot be opened.
std::string read_text_file(const std::filesystem::path& file);
/// Writes through a temporary file and rename so readers never see partial content.
void write_text_file(const std::filesystem::path& file, const std::string& text);

}  // namespace refinery
