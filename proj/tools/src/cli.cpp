#include "lgdg_cli/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lgdg/harness.hpp"
#include "lgdg/report.hpp"

namespace lgdg::cli {

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct Overrides {
  std::vector<std::uint64_t> seeds;
  int epochs = -1;

  void apply(ExperimentConfig& cfg) const {
    if (!seeds.empty()) cfg.seeds = seeds;
    if (epochs >= 0) cfg.train.epochs = epochs;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? default_config() : load_config(path);
}

void write_reports(const fs::path& dir, const std::vector<RunRecord>& records) {
  for (const RunRecord& r : records) write_run_record(dir, r);
  write_text(dir / "report.csv", csv_report(records));
  write_text(dir / "report.json", json_report(records));
}

GridSpec grid_from_json(const Json& j) {
  if (j.contains("preset")) {
    const std::string p = j["preset"].get<std::string>();
    if (p == "cvs-head") return cvs_head_grid();
    if (p == "reconstruction") return recon_grid();
    throw ConfigError("unknown grid preset '" + p + "'");
  }
  GridSpec spec;
  spec.name = j.value("name", std::string("grid"));
  const std::string head = j.value("head", std::string("cvs"));
  if (head == "cvs") {
    spec.head = GridHead::Cvs;
  } else if (head == "recon") {
    spec.head = GridHead::Recon;
  } else {
    throw ConfigError("grid head must be 'cvs' or 'recon'");
  }
  if (!j.contains("rows") || !j["rows"].is_array()) throw ConfigError("grid needs a 'rows' array");
  for (const Json& row : j["rows"]) {
    spec.kept.push_back(CategorySet::parse(row.get<std::vector<std::string>>()));
  }
  return spec;
}

int cmd_gen_data(const std::string& config, const std::string& out_dir, std::ostream& out) {
  const ExperimentConfig cfg = config_or_default(config);
  generate_datasets(cfg, out_dir);
  out << "wrote " << cfg.source.name << " and " << cfg.target.name << " datasets to " << out_dir
      << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config, std::uint64_t seed, const std::string& out_dir,
              const Overrides& ov, std::ostream& out) {
  ExperimentConfig cfg = config_or_default(config);
  ov.apply(cfg);
  DatasetCache cache;
  TrainOptions opts;
  opts.checkpoint_dir = (fs::path(out_dir) / "checkpoints").string();
  const RunRecord rec = train(cfg, seed, cache, opts);
  const fs::path path = write_run_record(out_dir, rec);
  char buf[128];
  std::snprintf(buf, sizeof buf, "val mAP %.2f, test mAP %.2f (best epoch %d)\n",
                100.0 * rec.val.map, 100.0 * rec.test.map, rec.best_epoch);
  out << rec.name << " [" << rec.fingerprint << "] seed " << seed << ": " << buf;
  out << "record: " << path.string() << "\n";
  return kExitOk;
}

int cmd_run_config(const std::string& config, const std::string& out_dir, const Overrides& ov,
                   std::ostream& out) {
  ExperimentConfig cfg = config_or_default(config);
  ov.apply(cfg);
  DatasetCache cache;
  const SettingResult r = run_setting(cfg, cache, thread_budget());
  write_reports(out_dir, r.records);
  out << cfg.name << " (" << to_string(cfg.variant) << ", " << to_string(cfg.setting)
      << "): test mAP " << format_mean_std(r.test_map) << "\n";
  return kExitOk;
}

int cmd_paper_grid(const std::string& out_dir, const Overrides& ov, std::ostream& out) {
  DatasetCache cache;
  const unsigned threads = thread_budget();
  std::vector<RunRecord> all;
  std::string tables;

  ExperimentConfig base = ablation_base();
  ov.apply(base);
  for (const GridSpec& spec : {cvs_head_grid(), recon_grid()}) {
    const AblationReport rep = run_ablation_grid(base, spec, cache, threads);
    tables += "## " + spec.name + "\n\n" + ablation_table(rep) + "\n";
    for (const auto& row : rep.rows) {
      all.insert(all.end(), row.result.records.begin(), row.result.records.end());
    }
  }

  ExperimentConfig forward = default_config();
  ov.apply(forward);
  for (const ExperimentConfig& dir : {forward, swap_domains(forward)}) {
    std::vector<std::pair<ExperimentConfig, std::uint64_t>> cells;
    const auto configs = model_comparison_configs(dir);
    for (const auto& c : configs) {
      for (std::uint64_t s : c.seeds) cells.emplace_back(c, s);
    }
    const auto records = run_cells(cells, cache, threads);
    tables += "## models " + dir.source.name + " -> " + dir.target.name + "\n\n";
    tables += "| variant | setting | test mAP |\n|---|---|---|\n";
    std::size_t k = 0;
    for (const auto& c : configs) {
      std::vector<double> maps;
      for (std::size_t i = 0; i < c.seeds.size(); ++i) maps.push_back(records[k++].test.map);
      tables += "| " + to_string(c.variant) + " | " + to_string(c.setting) + " | " +
                format_mean_std(aggregate(maps)) + " |\n";
    }
    tables += "\n";
    all.insert(all.end(), records.begin(), records.end());

    const DetectorBreakdown det = detector_breakdown(dir, dir.seeds.front(), cache);
    tables += "## detector trained on " + dir.source.name + "\n\n" +
              detector_table(det, dir.source.name, dir.target.name) + "\n";
  }
  write_reports(out_dir, all);
  write_text(fs::path(out_dir) / "tables.md", tables);
  out << tables;
  return kExitOk;
}

int cmd_ablate(const std::string& grid_path, const std::string& out_dir, const Overrides& ov,
               std::ostream& out) {
  Json j;
  try {
    j = Json::parse(read_file(grid_path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("grid file is not valid JSON: ") + e.what());
  }
  const GridSpec spec = grid_from_json(j);
  ExperimentConfig base =
      j.contains("base") ? config_from_json_text(j["base"].dump()) : ablation_base();
  ov.apply(base);
  DatasetCache cache;
  const AblationReport rep = run_ablation_grid(base, spec, cache, thread_budget());
  std::vector<RunRecord> all;
  for (const auto& row : rep.rows) {
    all.insert(all.end(), row.result.records.begin(), row.result.records.end());
  }
  write_reports(out_dir, all);
  const std::string table = ablation_table(rep);
  write_text(fs::path(out_dir) / (spec.name + ".md"), table);
  out << table;
  return kExitOk;
}

int cmd_report(const std::string& in_dir, const std::string& format, const std::string& out_path,
               std::ostream& out) {
  const auto records = read_run_records(in_dir);
  if (records.empty()) throw IoError("no run records under " + in_dir);
  const std::string text = format == "csv" ? csv_report(records) : json_report(records) + "\n";
  if (out_path.empty()) {
    out << text;
  } else {
    write_text(out_path, text);
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent-graph classification experiments on synthetic two-domain data", "lgdg"};
  app.require_subcommand(1);

  std::string config, out_dir = "lgdg-out", grid, preset, in_dir, format = "csv", out_path;
  std::uint64_t seed = 0;
  Overrides ov;

  auto* gen = app.add_subcommand("gen-data", "Generate both domains' datasets");
  gen->add_option("--config", config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train one (config, seed) cell");
  tr->add_option("--config", config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  tr->add_option("--seed", seed, "Run seed")->required();
  tr->add_option("--out", out_dir, "Output directory");
  tr->add_option("--epochs", ov.epochs, "Override train.epochs");

  auto* rn = app.add_subcommand("run", "Run every seed of a config, or a named preset");
  auto* preset_opt = rn->add_option("--preset", preset, "Named preset")
                         ->check(CLI::IsMember({"paper-grid"}));
  auto* config_opt =
      rn->add_option("--config", config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  preset_opt->excludes(config_opt);
  rn->add_option("--out", out_dir, "Output directory");
  rn->add_option("--seeds", ov.seeds, "Override seeds")->delimiter(',');
  rn->add_option("--epochs", ov.epochs, "Override train.epochs");

  auto* ab = app.add_subcommand("ablate", "Run an ablation grid");
  ab->add_option("--grid", grid, "Grid file (JSON)")->required()->check(CLI::ExistingFile);
  ab->add_option("--out", out_dir, "Output directory");
  ab->add_option("--seeds", ov.seeds, "Override seeds")->delimiter(',');
  ab->add_option("--epochs", ov.epochs, "Override train.epochs");

  auto* rp = app.add_subcommand("report", "Emit a report from stored run records");
  rp->add_option("--in", in_dir, "Directory holding runs/")->required();
  rp->add_option("--format", format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
  rp->add_option("--out", out_path, "Output file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, eo;
    const int code = app.exit(e, o, eo);
    out << o.str();
    err << eo.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config, out_dir, out);
    if (tr->parsed()) return cmd_train(config, seed, out_dir, ov, out);
    if (rn->parsed()) {
      if (!preset.empty()) return cmd_paper_grid(out_dir, ov, out);
      if (config.empty()) throw ConfigError("run needs --preset or --config");
      return cmd_run_config(config, out_dir, ov, out);
    }
    if (ab->parsed()) return cmd_ablate(grid, out_dir, ov, out);
    if (rp->parsed()) return cmd_report(in_dir, format, out_path, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ProtocolViolation& e) {
    err << "protocol violation: " << e.what() << "\n";
    return kExitProtocol;
  } catch (const NumericDivergence& e) {
    err << "numeric divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace lgdg::cli
