#include "lgdg/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json_io.hpp"

namespace lgdg {

namespace fs = std::filesystem;

namespace {

Json map_json(const MapResult& m) { return {{"ap", m.ap}, {"map", m.map}}; }

MapResult map_from(const Json& j) {
  MapResult m;
  m.ap = j.at("ap").get<std::array<double, kNumCriteria>>();
  m.map = j.at("map").get<double>();
  return m;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Json aggregate_json(const std::vector<double>& values) {
  const ResultAggregate a = aggregate(values);
  Json j = {{"mean", a.mean}, {"cell", format_mean_std(a)}, {"n", values.size()}};
  j["std"] = a.std ? Json(*a.std) : Json(nullptr);
  return j;
}

}  // namespace

std::string run_record_json(const RunRecord& r) {
  const Json j = {{"fingerprint", r.fingerprint},
                  {"seed", r.seed},
                  {"name", r.name},
                  {"setting", r.setting},
                  {"variant", r.variant},
                  {"step_losses", r.step_losses},
                  {"epoch_losses", r.epoch_losses},
                  {"val_history", r.val_history},
                  {"best_epoch", r.best_epoch},
                  {"val", map_json(r.val)},
                  {"test", map_json(r.test)},
                  {"wall_time_s", r.wall_time_s},
                  {"access_log", r.access_log}};
  return j.dump(1);
}

RunRecord run_record_from_json(const std::string& text) {
  try {
    const Json j = Json::parse(text);
    RunRecord r;
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.name = j.at("name").get<std::string>();
    r.setting = j.at("setting").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.step_losses = j.at("step_losses").get<std::vector<double>>();
    r.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
    r.val_history = j.at("val_history").get<std::vector<double>>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.val = map_from(j.at("val"));
    r.test = map_from(j.at("test"));
    r.wall_time_s = j.at("wall_time_s").get<double>();
    r.access_log = j.at("access_log").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt run record: ") + e.what());
  }
}

fs::path write_run_record(const fs::path& dir, const RunRecord& record) {
  const fs::path path = dir / "runs" / (record.fingerprint + "-" + std::to_string(record.seed) + ".json");
  write_text(path, run_record_json(record) + "\n");
  return path;
}

std::vector<RunRecord> read_run_records(const fs::path& dir) {
  const fs::path runs = dir / "runs";
  if (!fs::is_directory(runs)) throw IoError("no runs directory under " + dir.string());
  std::vector<RunRecord> out;
  for (const auto& entry : fs::directory_iterator(runs)) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    std::stringstream ss;
    ss << in.rdbuf();
    out.push_back(run_record_from_json(ss.str()));
  }
  std::sort(out.begin(), out.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.name, a.fingerprint, a.seed) < std::tie(b.name, b.fingerprint, b.seed);
  });
  return out;
}

CsvRow csv_row(const RunRecord& r) {
  return {r.fingerprint, r.seed, r.setting, r.variant, r.test.ap, r.test.map};
}

std::string csv_report(const std::vector<RunRecord>& records) {
  if (records.empty()) throw DomainError("report needs at least one record");
  std::string out = "fingerprint,seed,setting,variant,AP_c1,AP_c2,AP_c3,mAP\n";
  for (const RunRecord& r : records) {
    const CsvRow row = csv_row(r);
    out += row.fingerprint + "," + std::to_string(row.seed) + "," + row.setting + "," +
           row.variant + "," + num(row.ap[0]) + "," + num(row.ap[1]) + "," + num(row.ap[2]) + "," +
           num(row.map) + "\n";
  }
  return out;
}

std::vector<CsvRow> parse_csv_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "fingerprint,seed,setting,variant,AP_c1,AP_c2,AP_c3,mAP") {
    throw IoError("unexpected CSV header");
  }
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw IoError("CSV row with " + std::to_string(f.size()) + " fields");
    CsvRow r;
    r.fingerprint = f[0];
    r.seed = std::stoull(f[1]);
    r.setting = f[2];
    r.variant = f[3];
    for (std::size_t c = 0; c < kNumCriteria; ++c) r.ap[c] = std::stod(f[4 + c]);
    r.map = std::stod(f[7]);
    rows.push_back(r);
  }
  return rows;
}

std::string json_report(const std::vector<RunRecord>& records) {
  if (records.empty()) throw DomainError("report needs at least one record");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunRecord*>> groups;
  for (const RunRecord& r : records) {
    if (!groups.count(r.fingerprint)) order.push_back(r.fingerprint);
    groups[r.fingerprint].push_back(&r);
  }
  Json out = Json::array();
  for (const std::string& fp : order) {
    const auto& g = groups[fp];
    std::vector<double> maps;
    std::array<std::vector<double>, kNumCriteria> aps;
    std::vector<std::uint64_t> seeds;
    for (const RunRecord* r : g) {
      maps.push_back(r->test.map);
      for (std::size_t c = 0; c < kNumCriteria; ++c) aps[c].push_back(r->test.ap[c]);
      seeds.push_back(r->seed);
    }
    out.push_back({{"fingerprint", fp},
                   {"name", g.front()->name},
                   {"setting", g.front()->setting},
                   {"variant", g.front()->variant},
                   {"seeds", seeds},
                   {"mAP", aggregate_json(maps)},
                   {"AP_c1", aggregate_json(aps[0])},
                   {"AP_c2", aggregate_json(aps[1])},
                   {"AP_c3", aggregate_json(aps[2])}});
  }
  return Json{{"groups", out}}.dump(2);
}

std::string ablation_table(const AblationReport& report) {
  const std::string head = report.spec.head == GridHead::Cvs ? "CVS head" : "reconstruction";
  std::string out = "| Graph visual | Graph semantic | Backbone image | mAP (" + head + ") |\n";
  out += "|---|---|---|---|\n";
  for (const AblationRow& row : report.rows) {
    for (auto c : {FeatureCategory::GraphVisual, FeatureCategory::GraphSemantic,
                   FeatureCategory::BackboneImage}) {
      out += std::string("| ") + (row.kept.contains(c) ? "✓" : "✗") + " ";
    }
    out += "| " + format_mean_std(row.result.test_map) + " |\n";
  }
  return out;
}

std::string detector_table(const DetectorBreakdown& b, const std::string& source_name,
                           const std::string& target_name) {
  std::string out = "| Evaluated on |";
  for (auto n : kClassNames) out += " " + std::string(n) + " |";
  out += " mean |\n|---|";
  for (std::size_t k = 0; k <= kNumClasses; ++k) out += "---|";
  out += "\n";
  auto row = [&](const std::string& name, const DetectorEval& e) {
    out += "| " + name + " |";
    char buf[32];
    for (const auto& ap : e.ap) {
      if (ap) {
        std::snprintf(buf, sizeof buf, " %.2f |", 100.0 * *ap);
        out += buf;
      } else {
        out += " n/a |";
      }
    }
    if (e.mean) {
      std::snprintf(buf, sizeof buf, " %.2f |", 100.0 * *e.mean);
      out += buf;
    } else {
      out += " n/a |";
    }
    out += "\n";
  };
  row(source_name, b.source);
  row(target_name, b.target);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace lgdg
