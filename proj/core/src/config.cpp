#include "lgdg/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json_io.hpp"
#include "lgdg/rng.hpp"

namespace lgdg {

namespace {

template <class E>
struct NameTable {
  E value;
  const char* name;
};

constexpr NameTable<Variant> kVariants[] = {
    {Variant::Lg, "lg"},       {Variant::LgDg, "lg-dg"}, {Variant::Layout, "layout"},
    {Variant::LayoutImage, "layout+image"}, {Variant::Image, "image"}, {Variant::DetInit, "det-init"}};
constexpr NameTable<Setting> kSettings[] = {
    {Setting::FullySupervised, "fully-supervised"},
    {Setting::PartiallySupervised, "partially-supervised"},
    {Setting::DomainGeneralization, "domain-generalization"}};
constexpr NameTable<DetectionSource> kSources[] = {{DetectionSource::Oracle, "oracle"},
                                                   {DetectionSource::Learned, "learned"}};

template <class E, std::size_t N>
std::string name_of(const NameTable<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <class E, std::size_t N>
E parse_name(const NameTable<E> (&table)[N], const std::string& s, const char* what) {
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!ok.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

Json categories_json(CategorySet s) { return s.names(); }

CategorySet categories_from(const Json& j, const char* key) {
  try {
    return CategorySet::parse(j.get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(key) + " must be a list of category names: " + e.what());
  }
}

Json profile_json(const NoiseProfile& p) {
  return {{"box_jitter_sigma", p.box_jitter_sigma},
          {"miss_rate", p.miss_rate},
          {"false_positive_rate", p.false_positive_rate},
          {"confusion", p.confusion},
          {"prob_temperature", p.prob_temperature}};
}

NoiseProfile profile_from(const Json& j, const std::string& key) {
  check_keys(j, {"box_jitter_sigma", "miss_rate", "false_positive_rate", "confusion",
                 "prob_temperature"},
             "noise profile '" + key + "'");
  NoiseProfile p;
  read_opt(j, "box_jitter_sigma", p.box_jitter_sigma);
  read_opt(j, "miss_rate", p.miss_rate);
  read_opt(j, "false_positive_rate", p.false_positive_rate);
  read_opt(j, "confusion", p.confusion);
  read_opt(j, "prob_temperature", p.prob_temperature);
  return p;
}

Json to_json_obj(const ExperimentConfig& cfg, bool include_seeds) {
  const MaskingConfig m = cfg.resolved_masking();
  const LossWeights w = cfg.resolved_weights();
  Json profiles = Json::object();
  for (const auto& [k, p] : cfg.noise_profiles) profiles[k] = profile_json(p);
  const auto& b = cfg.model.backbone;
  Json j = {
      {"name", cfg.name},
      {"variant", to_string(cfg.variant)},
      {"setting", to_string(cfg.setting)},
      {"cvs_mask", categories_json(m.cvs)},
      {"recon_mask", categories_json(m.recon)},
      {"weights", {{"sem", w.sem}, {"viz", w.viz}, {"img", w.img}, {"recon", w.recon}}},
      {"detection_source", to_string(cfg.detection_source)},
      {"noise_profiles", profiles},
      {"source", cfg.source},
      {"target", cfg.target},
      {"data",
       {{"n_videos", cfg.data.n_videos},
        {"frames_per_video", cfg.data.frames_per_video},
        {"seed", cfg.data.seed},
        {"split_fractions", cfg.data.split_fractions},
        {"annotated_every", cfg.data.annotated_every},
        {"dir", cfg.data.dir}}},
      {"train",
       {{"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"lr", cfg.train.adam.lr},
        {"beta1", cfg.train.adam.beta1},
        {"beta2", cfg.train.adam.beta2},
        {"eps", cfg.train.adam.eps},
        {"train_stride", cfg.train.train_stride},
        {"overfit_frames", cfg.train.overfit_frames}}},
      {"detector",
       {{"epochs", cfg.detector.epochs},
        {"batch_size", cfg.detector.batch_size},
        {"lr", cfg.detector.lr},
        {"score_threshold", cfg.detector.score_threshold},
        {"nms_iou", cfg.detector.nms_iou}}},
      {"model",
       {{"backbone",
         {{"input_size", b.input_size}, {"hidden_channels", b.hidden_channels}, {"channels", b.channels}}},
        {"gnn", {{"hidden", cfg.model.gnn.hidden}, {"layers", cfg.model.gnn.layers}}},
        {"recon",
         {{"layout_channels", cfg.model.recon.layout_channels},
          {"grid", cfg.model.recon.grid},
          {"hidden_channels", cfg.model.recon.hidden_channels},
          {"include_backbone", cfg.model.recon.include_backbone}}},
        {"with_recon", cfg.model.with_recon}}},
      {"baseline",
       {{"layout_grid", cfg.baseline.layout_grid},
        {"hidden_channels", cfg.baseline.hidden_channels}}},
      {"protocol",
       {{"balance_from", cfg.protocol.balance_from},
        {"selection_from", cfg.protocol.selection_from}}},
  };
  if (include_seeds) j["seeds"] = cfg.seeds;
  return j;
}

// Keeps the dependent architecture fields in sync with the model backbone.
void sync_backbones(ExperimentConfig& cfg) {
  cfg.detector.encoder = cfg.model.backbone;
  cfg.detector.grid = cfg.model.backbone.input_size / 8;
  cfg.baseline.backbone = cfg.model.backbone;
}

}  // namespace

std::string to_string(Variant v) { return name_of(kVariants, v); }
std::string to_string(Setting s) { return name_of(kSettings, s); }
std::string to_string(DetectionSource s) { return name_of(kSources, s); }
Variant parse_variant(const std::string& s) { return parse_name(kVariants, s, "variant"); }
Setting parse_setting(const std::string& s) { return parse_name(kSettings, s, "setting"); }
DetectionSource parse_detection_source(const std::string& s) {
  return parse_name(kSources, s, "detection source");
}

bool is_graph_variant(Variant v) { return v == Variant::Lg || v == Variant::LgDg; }

MaskingConfig ExperimentConfig::resolved_masking() const {
  MaskingConfig m;
  m.cvs = cvs_mask.value_or(CategorySet{});
  // The disentangled model reconstructs from semantic features only; the plain
  // model reconstructs from the intact graph.
  m.recon = recon_mask.value_or(variant == Variant::LgDg ? kKeepSemantic : CategorySet{});
  return m;
}

LossWeights ExperimentConfig::resolved_weights() const {
  if (weights) return *weights;
  LossWeights w;
  if (variant != Variant::LgDg) w.sem = w.viz = w.img = 0.0;
  return w;
}

const NoiseProfile& ExperimentConfig::noise_profile(const DomainConfig& detector_domain,
                                                    const DomainConfig& image_domain) const {
  const std::string key = detector_domain.noise_profile + "->" + image_domain.noise_profile;
  auto it = noise_profiles.find(key);
  if (it == noise_profiles.end()) throw ConfigError("missing noise profile '" + key + "'");
  return it->second;
}

void ExperimentConfig::validate() const {
  lgdg::validate(source);
  lgdg::validate(target);
  if (source.noise_profile == target.noise_profile) {
    throw ConfigError("source and target must reference distinct noise profiles");
  }
  for (const auto& [k, p] : noise_profiles) {
    try {
      p.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("noise profile '" + k + "': " + e.what());
    }
  }
  for (const auto* d : {&source, &target}) {
    for (const auto* i : {&source, &target}) noise_profile(*d, *i);
  }
  resolved_weights().validate();
  if (data.n_videos < 3) throw ConfigError("data.n_videos must be >= 3");
  if (data.frames_per_video < 1) throw ConfigError("data.frames_per_video must be >= 1");
  if (data.annotated_every < 1) throw ConfigError("data.annotated_every must be >= 1");
  double total = 0.0;
  for (double f : data.split_fractions) {
    if (!(f > 0)) throw ConfigError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (train.train_stride < 1) throw ConfigError("train.train_stride must be >= 1");
  if (train.overfit_frames < 0) throw ConfigError("train.overfit_frames must be >= 0");
  if (detector.epochs < 0) throw ConfigError("detector.epochs must be >= 0");
  const auto& b = model.backbone;
  if (b.input_size == 0 || b.input_size % 8 != 0) {
    throw ConfigError("model.backbone.input_size must be a positive multiple of 8");
  }
  if (model.with_recon && model.recon.grid * 4 != b.input_size) {
    throw ConfigError("model.recon.grid must equal input_size / 4");
  }
  if (b.input_size % baseline.layout_grid != 0) {
    throw ConfigError("baseline.layout_grid must divide the model input size");
  }
  for (const std::string* s : {&protocol.balance_from, &protocol.selection_from}) {
    if (*s != "train-domain" && *s != "target-domain") {
      throw ConfigError("protocol fields must be 'train-domain' or 'target-domain'");
    }
  }
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (!is_graph_variant(variant) && (cvs_mask || recon_mask)) {
    throw ConfigError("feature masks apply to the lg and lg-dg variants only");
  }
  if (variant == Variant::Image && setting == Setting::PartiallySupervised) {
    throw ConfigError("the image-only variant uses no detector, so partially-supervised is undefined");
  }
}

std::string to_json_text(const ExperimentConfig& cfg, bool include_seeds) {
  return to_json_obj(cfg, include_seeds).dump(2);
}

ExperimentConfig config_from_json_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, {"name", "variant", "setting", "cvs_mask", "recon_mask", "weights",
                 "detection_source", "noise_profiles", "source", "target", "data", "train",
                 "detector", "model", "baseline", "protocol", "seeds"},
             "config");
  ExperimentConfig cfg = default_config();
  try {
    read_opt(j, "name", cfg.name);
    if (j.contains("variant")) cfg.variant = parse_variant(j["variant"].get<std::string>());
    if (j.contains("setting")) cfg.setting = parse_setting(j["setting"].get<std::string>());
    if (j.contains("cvs_mask") && !j["cvs_mask"].is_null()) {
      cfg.cvs_mask = categories_from(j["cvs_mask"], "cvs_mask");
    }
    if (j.contains("recon_mask") && !j["recon_mask"].is_null()) {
      cfg.recon_mask = categories_from(j["recon_mask"], "recon_mask");
    }
    if (j.contains("weights") && !j["weights"].is_null()) {
      const Json& w = j["weights"];
      check_keys(w, {"sem", "viz", "img", "recon"}, "weights");
      LossWeights lw = cfg.resolved_weights();
      read_opt(w, "sem", lw.sem);
      read_opt(w, "viz", lw.viz);
      read_opt(w, "img", lw.img);
      read_opt(w, "recon", lw.recon);
      cfg.weights = lw;
    }
    if (j.contains("detection_source")) {
      cfg.detection_source = parse_detection_source(j["detection_source"].get<std::string>());
    }
    if (j.contains("noise_profiles")) {
      const Json& np = j["noise_profiles"];
      if (!np.is_object()) throw ConfigError("noise_profiles must be an object");
      for (auto it = np.begin(); it != np.end(); ++it) {
        cfg.noise_profiles[it.key()] = profile_from(it.value(), it.key());
      }
    }
    if (j.contains("source")) from_json(j["source"], cfg.source);
    if (j.contains("target")) from_json(j["target"], cfg.target);
    if (j.contains("data")) {
      const Json& d = j["data"];
      check_keys(d, {"n_videos", "frames_per_video", "seed", "split_fractions", "annotated_every",
                     "dir"},
                 "data");
      read_opt(d, "n_videos", cfg.data.n_videos);
      read_opt(d, "frames_per_video", cfg.data.frames_per_video);
      read_opt(d, "seed", cfg.data.seed);
      read_opt(d, "split_fractions", cfg.data.split_fractions);
      read_opt(d, "annotated_every", cfg.data.annotated_every);
      read_opt(d, "dir", cfg.data.dir);
    }
    if (j.contains("train")) {
      const Json& t = j["train"];
      check_keys(t, {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "train_stride",
                     "overfit_frames"},
                 "train");
      read_opt(t, "epochs", cfg.train.epochs);
      read_opt(t, "batch_size", cfg.train.batch_size);
      read_opt(t, "lr", cfg.train.adam.lr);
      read_opt(t, "beta1", cfg.train.adam.beta1);
      read_opt(t, "beta2", cfg.train.adam.beta2);
      read_opt(t, "eps", cfg.train.adam.eps);
      read_opt(t, "train_stride", cfg.train.train_stride);
      read_opt(t, "overfit_frames", cfg.train.overfit_frames);
    }
    if (j.contains("detector")) {
      const Json& d = j["detector"];
      check_keys(d, {"epochs", "batch_size", "lr", "score_threshold", "nms_iou"}, "detector");
      read_opt(d, "epochs", cfg.detector.epochs);
      read_opt(d, "batch_size", cfg.detector.batch_size);
      read_opt(d, "lr", cfg.detector.lr);
      read_opt(d, "score_threshold", cfg.detector.score_threshold);
      read_opt(d, "nms_iou", cfg.detector.nms_iou);
    }
    if (j.contains("model")) {
      const Json& m = j["model"];
      check_keys(m, {"backbone", "gnn", "recon", "with_recon"}, "model");
      if (m.contains("backbone")) {
        const Json& b = m["backbone"];
        check_keys(b, {"input_size", "hidden_channels", "channels"}, "model.backbone");
        read_opt(b, "input_size", cfg.model.backbone.input_size);
        read_opt(b, "hidden_channels", cfg.model.backbone.hidden_channels);
        read_opt(b, "channels", cfg.model.backbone.channels);
      }
      if (m.contains("gnn")) {
        check_keys(m["gnn"], {"hidden", "layers"}, "model.gnn");
        read_opt(m["gnn"], "hidden", cfg.model.gnn.hidden);
        read_opt(m["gnn"], "layers", cfg.model.gnn.layers);
      }
      if (m.contains("recon")) {
        const Json& r = m["recon"];
        check_keys(r, {"layout_channels", "grid", "hidden_channels", "include_backbone"},
                   "model.recon");
        read_opt(r, "layout_channels", cfg.model.recon.layout_channels);
        read_opt(r, "grid", cfg.model.recon.grid);
        read_opt(r, "hidden_channels", cfg.model.recon.hidden_channels);
        read_opt(r, "include_backbone", cfg.model.recon.include_backbone);
      }
      read_opt(m, "with_recon", cfg.model.with_recon);
    }
    if (j.contains("baseline")) {
      check_keys(j["baseline"], {"layout_grid", "hidden_channels"}, "baseline");
      read_opt(j["baseline"], "layout_grid", cfg.baseline.layout_grid);
      read_opt(j["baseline"], "hidden_channels", cfg.baseline.hidden_channels);
    }
    if (j.contains("protocol")) {
      check_keys(j["protocol"], {"balance_from", "selection_from"}, "protocol");
      read_opt(j["protocol"], "balance_from", cfg.protocol.balance_from);
      read_opt(j["protocol"], "selection_from", cfg.protocol.selection_from);
    }
    read_opt(j, "seeds", cfg.seeds);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  sync_backbones(cfg);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

std::string fingerprint(const ExperimentConfig& cfg) {
  // The data directory only says where the (deterministic) datasets live.
  Json j = to_json_obj(cfg, false);
  j["data"].erase("dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

std::map<std::string, NoiseProfile> default_noise_profiles() {
  NoiseProfile in_domain;
  in_domain.box_jitter_sigma = 1.0;
  in_domain.miss_rate.fill(0.05);
  in_domain.false_positive_rate = 0.05;
  in_domain.confusion = NoiseProfile::uniform_confusion(0.9);

  // A detector moved across domains degrades only mildly.
  NoiseProfile cross;
  cross.box_jitter_sigma = 1.5;
  cross.miss_rate.fill(0.1);
  cross.false_positive_rate = 0.1;
  cross.confusion = NoiseProfile::uniform_confusion(0.85);

  return {{"source->source", in_domain},
          {"target->target", in_domain},
          {"source->target", cross},
          {"target->source", cross}};
}

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.source = default_source_domain();
  cfg.target = default_target_domain();
  cfg.noise_profiles = default_noise_profiles();
  sync_backbones(cfg);
  return cfg;
}

ExperimentConfig swap_domains(const ExperimentConfig& cfg) {
  ExperimentConfig out = cfg;
  std::swap(out.source, out.target);
  return out;
}

}  // namespace lgdg
