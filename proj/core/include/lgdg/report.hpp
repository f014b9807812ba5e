#pragma once

// Run-record persistence and report emission.

#include <filesystem>
#include <string>
#include <vector>

#include "lgdg/harness.hpp"

namespace lgdg {

std::string run_record_json(const RunRecord& record);
RunRecord run_record_from_json(const std::string& text);

// <dir>/runs/<fingerprint>-<seed>.json
std::filesystem::path write_run_record(const std::filesystem::path& dir, const RunRecord& record);
// Every record under <dir>/runs, ordered by (name, fingerprint, seed).
std::vector<RunRecord> read_run_records(const std::filesystem::path& dir);

// One row per run: fingerprint, seed, setting, variant, AP_c1, AP_c2, AP_c3, mAP.
struct CsvRow {
  std::string fingerprint;
  std::uint64_t seed = 0;
  std::string setting;
  std::string variant;
  std::array<double, kNumCriteria> ap{};
  double map = 0.0;

  friend bool operator==(const CsvRow&, const CsvRow&) = default;
};

CsvRow csv_row(const RunRecord& record);
std::string csv_report(const std::vector<RunRecord>& records);
std::vector<CsvRow> parse_csv_report(const std::string& text);

// Records grouped by fingerprint, each group carrying mean/std of test AP per
// criterion and of mAP plus the formatted "mean ± std" cell.
std::string json_report(const std::vector<RunRecord>& records);

// Markdown table with check/cross columns and one mean ± std cell per row.
std::string ablation_table(const AblationReport& report);
std::string detector_table(const DetectorBreakdown& breakdown, const std::string& source_name,
                           const std::string& target_name);

// Throws IoError when the path cannot be written.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace lgdg
