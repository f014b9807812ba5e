#include "lgdg/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <thread>

#include "json_io.hpp"

namespace lgdg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Datasets

Dataset make_dataset(const DomainConfig& domain, const DataConfig& data) {
  const std::uint64_t seed = splitmix64(data.seed ^ fnv1a64(domain.name));
  return generate_dataset(domain, data.n_videos, data.frames_per_video, seed, data.split_fractions);
}

std::shared_ptr<const Dataset> DatasetCache::get(const DomainConfig& domain, const DataConfig& data) {
  const Json key = {{"domain", domain},
                    {"n_videos", data.n_videos},
                    {"frames", data.frames_per_video},
                    {"seed", data.seed},
                    {"fractions", data.split_fractions},
                    {"dir", data.dir}};
  const std::string k = key.dump();
  std::lock_guard lock(mutex_);
  if (auto it = cache_.find(k); it != cache_.end()) return it->second;
  std::shared_ptr<const Dataset> ds;
  if (!data.dir.empty()) {
    auto loaded = std::make_shared<Dataset>(read_dataset(fs::path(data.dir) / domain.name));
    if (!(loaded->domain == domain)) {
      throw ConfigError("dataset in " + data.dir + "/" + domain.name +
                        " was generated from a different domain config");
    }
    ds = loaded;
  } else {
    ds = std::make_shared<Dataset>(make_dataset(domain, data));
  }
  cache_[k] = ds;
  return ds;
}

void generate_datasets(const ExperimentConfig& cfg, const std::string& dir) {
  for (const DomainConfig* d : {&cfg.source, &cfg.target}) {
    write_dataset(make_dataset(*d, cfg.data), fs::path(dir) / d->name);
  }
}

// ---------------------------------------------------------------------------
// Protocol guard

std::string to_string(Role r) { return r == Role::Source ? "source" : "target"; }
std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

DataAccess::DataAccess(Setting setting, const Dataset& source, const Dataset& target)
    : setting_(setting), source_(source), target_(target) {}

std::vector<const Scene*> DataAccess::frames(Role role, Split split) {
  const std::string what = to_string(role) + "/" + to_string(split);
  if (setting_ == Setting::DomainGeneralization && role == Role::Target && !evaluating_) {
    log_.push_back("DENIED " + what);
    throw ProtocolViolation("domain generalization run tried to read target-domain " +
                            to_string(split) + " frames during training");
  }
  log_.push_back((evaluating_ ? "eval " : "train ") + what);
  const Dataset& ds = dataset(role);
  const std::string name = to_string(split);
  std::vector<const Scene*> out;
  for (const Scene& s : ds.scenes) {
    auto it = ds.split_of_video.find(s.video_id);
    if (it != ds.split_of_video.end() && it->second == name) out.push_back(&s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::uint64_t frame_key(const Scene& s) {
  return (static_cast<std::uint64_t>(s.domain_id) << 48) ^
         (static_cast<std::uint64_t>(s.video_id) << 24) ^ static_cast<std::uint64_t>(s.frame_index);
}

std::int64_t frame_id(const Scene& s) {
  return static_cast<std::int64_t>(s.video_id) * 100000 + s.frame_index;
}

bool needs_detections(Variant v) { return v != Variant::Image && v != Variant::DetInit; }

// Anything that turns a scene into detections.
class DetectionStage {
 public:
  DetectionStage(const ExperimentConfig& cfg, std::uint64_t seed, const GridDetector* learned)
      : cfg_(cfg), seed_(seed), learned_(learned) {}

  std::vector<Detection> run(const Scene& scene, const DomainConfig& detector_domain,
                             const DomainConfig& image_domain) const {
    if (!needs_detections(cfg_.variant)) return {};
    if (cfg_.detection_source == DetectionSource::Learned) return detect(*learned_, scene.image);
    Rng rng = Rng::derive(seed_, "detector-noise", frame_key(scene));
    return simulate_detect(scene, cfg_.noise_profile(detector_domain, image_domain), rng);
  }

 private:
  const ExperimentConfig& cfg_;
  std::uint64_t seed_;
  const GridDetector* learned_;
};

// The classifier under training, whichever variant it is.
class Classifier {
 public:
  Classifier(const ExperimentConfig& cfg, std::uint64_t seed, const GridDetector* detector)
      : masking_(cfg.resolved_masking()),
        weights_(cfg.resolved_weights()),
        augment_(Rng::derive(seed, "augment")),
        disentangle_(Rng::derive(seed, "disentangle")),
        seed_(seed) {
    Rng init = Rng::derive(seed, "init");
    switch (cfg.variant) {
      case Variant::Lg:
      case Variant::LgDg: {
        LgModelConfig mc = cfg.model;
        mc.with_recon = mc.with_recon && weights_.recon > 0;
        lg_.emplace(mc, init);
        break;
      }
      case Variant::Layout: baseline_.emplace(BaselineKind::LayoutOnly, cfg.baseline, init); break;
      case Variant::LayoutImage:
        baseline_.emplace(BaselineKind::LayoutImage, cfg.baseline, init);
        break;
      case Variant::Image: baseline_.emplace(BaselineKind::ImageOnly, cfg.baseline, init); break;
      case Variant::DetInit:
        if (detector == nullptr) throw ConfigError("det-init needs a trained grid detector");
        baseline_.emplace(BaselineClassifier::from_detector(*detector, cfg.baseline, init));
        break;
    }
  }

  NamedParams parameters() const { return lg_ ? lg_->parameters() : baseline_->parameters(); }

  Tensor loss(std::span<const Sample> batch, const ClassBalance& balance) {
    if (lg_) {
      return lgdg_total_loss(batch, *lg_, weights_, masking_, balance, augment_, disentangle_).total;
    }
    Tensor total;
    for (const Sample& s : batch) {
      const Tensor l = balanced_bce(baseline_->classify(s), s.labels, balance);
      total = total.defined() ? add(total, l) : l;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
  }

  PredictionSet predict(std::span<const Sample> samples) const {
    Rng eval = Rng::derive(seed_, "eval-masking");
    PredictionSet preds;
    for (const Sample& s : samples) {
      Tensor logits;
      if (lg_) {
        logits = lg_->classify(mask(lg_->encode(s), masking_.cvs, eval));
      } else {
        logits = baseline_->classify(s);
      }
      const Tensor p = sigmoid(logits);
      preds.add({p[0], p[1], p[2]}, s.labels, s.frame_id);
    }
    return preds;
  }

 private:
  MaskingConfig masking_;
  LossWeights weights_;
  Rng augment_;
  Rng disentangle_;
  std::uint64_t seed_;
  std::optional<LgModel> lg_;
  std::optional<BaselineClassifier> baseline_;
};

// mAP, or the mean AP over the criteria that are defined when some are not.
double selection_score(const PredictionSet& preds, MapResult* full = nullptr) {
  try {
    const MapResult r = map3(preds);
    if (full) *full = r;
    return r.map;
  } catch (const UndefinedMetric&) {
  }
  double total = 0.0;
  int n = 0;
  std::vector<double> s(preds.size());
  std::vector<std::uint8_t> y(preds.size());
  for (std::size_t c = 0; c < kNumCriteria; ++c) {
    for (std::size_t i = 0; i < preds.size(); ++i) {
      s[i] = preds.scores[i][c];
      y[i] = preds.labels[i][c];
    }
    try {
      total += average_precision(s, y, preds.frame_ids);
      ++n;
    } catch (const UndefinedMetric&) {
    }
  }
  return n > 0 ? total / n : 0.0;
}

const DomainConfig& domain_of(const ExperimentConfig& cfg, Role r) {
  return r == Role::Source ? cfg.source : cfg.target;
}

std::vector<const Scene*> annotated(const std::vector<const Scene*>& frames, int every) {
  std::vector<const Scene*> out;
  for (const Scene* s : frames) {
    if (s->frame_index % every == 0) out.push_back(s);
  }
  return out;
}

// Up to n frames for the overfit sanity mode: a positive and a negative of
// each criterion per round (two rounds), then an even stride over the rest.
std::vector<const Scene*> overfit_subset(const std::vector<const Scene*>& frames, std::size_t n) {
  n = std::min(n, frames.size());
  std::vector<bool> taken(frames.size(), false);
  std::vector<const Scene*> out;
  auto take_first = [&](auto&& pred) {
    for (std::size_t i = 0; i < frames.size() && out.size() < n; ++i) {
      if (!taken[i] && pred(*frames[i])) {
        taken[i] = true;
        out.push_back(frames[i]);
        return;
      }
    }
  };
  for (int round = 0; round < 2; ++round) {
    for (std::size_t c = 0; c < kNumCriteria; ++c) {
      take_first([c](const Scene& s) { return s.labels[c]; });
      take_first([c](const Scene& s) { return !s.labels[c]; });
    }
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!taken[i]) rest.push_back(i);
  }
  const std::size_t missing = n - out.size();
  for (std::size_t k = 0; k < missing; ++k) out.push_back(frames[rest[k * rest.size() / missing]]);
  return out;
}

}  // namespace

RunRecord train(const ExperimentConfig& cfg, std::uint64_t seed, DatasetCache& cache,
                const TrainOptions& options) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto source = cache.get(cfg.source, cfg.data);
  const auto target = cache.get(cfg.target, cfg.data);
  DataAccess access(cfg.setting, *source, *target);

  const Role train_role = cfg.setting == Setting::DomainGeneralization ? Role::Source : Role::Target;
  const Role detector_role =
      cfg.setting == Setting::FullySupervised ? Role::Target : Role::Source;
  const DomainConfig& train_domain = domain_of(cfg, train_role);
  const DomainConfig& detector_domain = domain_of(cfg, detector_role);

  RunRecord rec;
  rec.fingerprint = fingerprint(cfg);
  rec.seed = seed;
  rec.name = cfg.name;
  rec.setting = to_string(cfg.setting);
  rec.variant = to_string(cfg.variant);

  // Stage one.
  std::optional<GridDetector> detector;
  const bool learned_detections =
      cfg.detection_source == DetectionSource::Learned && needs_detections(cfg.variant);
  if (learned_detections || cfg.variant == Variant::DetInit) {
    const auto frames = annotated(access.frames(detector_role, Split::Train), cfg.data.annotated_every);
    detector = train_grid_detector(frames, cfg.detector, Rng::derive(seed, "detector").seed());
  }
  const DetectionStage detections(cfg, seed, detector ? &*detector : nullptr);
  const std::size_t size = cfg.model.backbone.input_size;

  auto build = [&](const std::vector<const Scene*>& frames, const DomainConfig& image_domain,
                   int stride) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < frames.size(); i += static_cast<std::size_t>(stride)) {
      const Scene& s = *frames[i];
      out.push_back(make_sample(s, detections.run(s, detector_domain, image_domain), size,
                                frame_id(s)));
    }
    return out;
  };

  auto train_frames = access.frames(train_role, Split::Train);
  const bool overfit = cfg.train.overfit_frames > 0;
  if (overfit) {
    train_frames = overfit_subset(train_frames, static_cast<std::size_t>(cfg.train.overfit_frames));
  }
  const std::vector<Sample> train_set =
      build(train_frames, train_domain, overfit ? 1 : cfg.train.train_stride);

  const Role balance_role = cfg.protocol.balance_from == "target-domain" ? Role::Target : train_role;
  std::vector<Labels> balance_labels;
  for (const Scene* s : access.frames(balance_role, Split::Train)) balance_labels.push_back(s->labels);
  const ClassBalance balance = ClassBalance::from_labels(balance_labels);

  const Role select_role = cfg.protocol.selection_from == "target-domain" ? Role::Target : train_role;
  const std::vector<Sample> val_set =
      overfit ? train_set
              : build(access.frames(select_role, Split::Val), domain_of(cfg, select_role), 1);

  // Stage two.
  Classifier clf(cfg, seed, detector ? &*detector : nullptr);
  NamedParams params = clf.parameters();
  Adam opt(params, cfg.train.adam);

  double best = selection_score(clf.predict(val_set));
  rec.val_history.push_back(best);
  auto best_values = snapshot(params);

  std::vector<std::size_t> order(train_set.size());
  long step = 0;
  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng batching = Rng::derive(seed, "batching", static_cast<std::uint64_t>(epoch));
    batching.shuffle(order.begin(), order.end());
    double epoch_total = 0.0;
    long epoch_steps = 0;
    std::vector<Sample> batch;
    for (std::size_t start = 0; start < order.size(); start += cfg.train.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + cfg.train.batch_size);
      for (std::size_t k = start; k < end; ++k) batch.push_back(train_set[order[k]]);
      Tape tape;
      TapeScope scope(tape);
      Tensor loss;
      try {
        loss = clf.loss(batch, balance);
      } catch (const NumericDivergence& e) {
        throw NumericDivergence("epoch " + std::to_string(epoch) + ", step " +
                                std::to_string(step) + ": " + e.what());
      }
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericDivergence("non-finite loss at epoch " + std::to_string(epoch));
      }
      opt.zero_grad();
      backward(loss);
      opt.step();
      rec.step_losses.push_back(value);
      epoch_total += value;
      ++epoch_steps;
      if (options.on_step) options.on_step(epoch, step, value);
      ++step;
    }
    rec.epoch_losses.push_back(epoch_steps ? epoch_total / static_cast<double>(epoch_steps) : 0.0);
    const double score = selection_score(clf.predict(val_set));
    rec.val_history.push_back(score);
    if (score > best) {
      best = score;
      rec.best_epoch = epoch;
      best_values = snapshot(params);
    }
  }
  opt.zero_grad();
  restore(params, best_values);

  // Equals map3 whenever every criterion is defined on the selection split.
  rec.val.map = selection_score(clf.predict(val_set), &rec.val);

  access.begin_evaluation();
  const std::vector<Sample> test_set =
      build(access.frames(Role::Target, Split::Test), cfg.target, 1);
  rec.test = map3(clf.predict(test_set));

  if (!options.checkpoint_dir.empty() && cfg.train.epochs > 0) {
    fs::create_directories(options.checkpoint_dir);
    const Json meta = {{"variant", rec.variant},
                       {"fingerprint", rec.fingerprint},
                       {"seed", seed},
                       {"best_epoch", rec.best_epoch}};
    save_parameters(fs::path(options.checkpoint_dir) /
                        (rec.fingerprint + "-" + std::to_string(seed) + ".ckpt"),
                    params, meta.dump());
  }
  rec.access_log = access.log();
  rec.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Settings and grids

unsigned thread_budget() {
  if (const char* env = std::getenv("LGDG_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
    throw ConfigError("LGDG_THREADS must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<RunRecord> run_cells(const std::vector<std::pair<ExperimentConfig, std::uint64_t>>& cells,
                                 DatasetCache& cache, unsigned threads) {
  std::vector<RunRecord> out(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        out[i] = train(cells[i].first, cells[i].second, cache);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(cells.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

namespace {

SettingResult collect(std::vector<RunRecord> records) {
  SettingResult r;
  r.records = std::move(records);
  std::vector<double> maps;
  for (const RunRecord& rec : r.records) maps.push_back(rec.test.map);
  r.test_map = aggregate(maps);
  return r;
}

}  // namespace

SettingResult run_setting(const ExperimentConfig& cfg, DatasetCache& cache, unsigned threads) {
  cfg.validate();
  std::vector<std::pair<ExperimentConfig, std::uint64_t>> cells;
  for (std::uint64_t s : cfg.seeds) cells.emplace_back(cfg, s);
  return collect(run_cells(cells, cache, threads));
}

std::string row_label(CategorySet kept) {
  std::string s;
  for (auto c : {FeatureCategory::GraphVisual, FeatureCategory::GraphSemantic,
                 FeatureCategory::BackboneImage}) {
    s += kept.contains(c) ? "✓" : "✗";
  }
  return s;
}

std::vector<ExperimentConfig> grid_configs(const ExperimentConfig& base, const GridSpec& spec) {
  if (spec.kept.empty()) throw ConfigError("ablation grid has no rows");
  if (!is_graph_variant(base.variant)) throw ConfigError("ablation grids need a graph variant");
  std::vector<ExperimentConfig> out;
  for (CategorySet kept : spec.kept) {
    ExperimentConfig c = base;
    const MaskingConfig m = base.resolved_masking();
    c.cvs_mask = m.cvs;
    c.recon_mask = m.recon;
    (spec.head == GridHead::Cvs ? c.cvs_mask : c.recon_mask) = kept.complement();
    c.name = spec.name + "/" + row_label(kept);
    out.push_back(std::move(c));
  }
  return out;
}

AblationReport run_ablation_grid(const ExperimentConfig& base, const GridSpec& spec,
                                 DatasetCache& cache, unsigned threads) {
  const auto configs = grid_configs(base, spec);
  std::vector<std::pair<ExperimentConfig, std::uint64_t>> cells;
  for (const auto& c : configs) {
    c.validate();
    for (std::uint64_t s : c.seeds) cells.emplace_back(c, s);
  }
  auto records = run_cells(cells, cache, threads);
  AblationReport report;
  report.spec = spec;
  std::size_t k = 0;
  for (std::size_t r = 0; r < configs.size(); ++r) {
    std::vector<RunRecord> rows(records.begin() + static_cast<std::ptrdiff_t>(k),
                                records.begin() + static_cast<std::ptrdiff_t>(k + configs[r].seeds.size()));
    k += configs[r].seeds.size();
    report.rows.push_back({spec.kept[r], row_label(spec.kept[r]), collect(std::move(rows))});
  }
  return report;
}

GridSpec cvs_head_grid() {
  using F = FeatureCategory;
  return {"cvs-head",
          GridHead::Cvs,
          {CategorySet{F::GraphVisual, F::GraphSemantic, F::BackboneImage},
           CategorySet{F::GraphVisual, F::GraphSemantic},
           CategorySet{F::GraphVisual, F::BackboneImage},
           CategorySet{F::GraphSemantic},
           CategorySet{F::GraphSemantic, F::BackboneImage},
           CategorySet{F::GraphVisual}}};
}

GridSpec recon_grid() {
  using F = FeatureCategory;
  return {"reconstruction",
          GridHead::Recon,
          {CategorySet{F::GraphVisual, F::GraphSemantic, F::BackboneImage},
           CategorySet{F::GraphVisual, F::GraphSemantic},
           CategorySet{F::GraphVisual, F::BackboneImage},
           CategorySet{F::GraphSemantic},
           CategorySet{F::GraphSemantic, F::BackboneImage}}};
}

ExperimentConfig ablation_base() {
  ExperimentConfig c = default_config();
  c.variant = Variant::Lg;
  c.setting = Setting::DomainGeneralization;
  return c;
}

std::vector<ExperimentConfig> model_comparison_configs(const ExperimentConfig& base) {
  std::vector<ExperimentConfig> out;
  for (Variant v : {Variant::Lg, Variant::LayoutImage, Variant::Layout, Variant::DetInit,
                    Variant::Image, Variant::LgDg}) {
    for (Setting s : {Setting::FullySupervised, Setting::PartiallySupervised,
                      Setting::DomainGeneralization}) {
      if (v == Variant::Image && s == Setting::PartiallySupervised) continue;
      ExperimentConfig c = base;
      c.variant = v;
      c.setting = s;
      c.cvs_mask.reset();
      c.recon_mask.reset();
      c.weights.reset();
      c.name = "models/" + base.source.name + "->" + base.target.name + "/" + to_string(v) + "/" +
               to_string(s);
      out.push_back(std::move(c));
    }
  }
  return out;
}

DetectorBreakdown detector_breakdown(const ExperimentConfig& cfg, std::uint64_t seed,
                                     DatasetCache& cache) {
  const auto source = cache.get(cfg.source, cfg.data);
  const auto target = cache.get(cfg.target, cfg.data);
  DataAccess access(Setting::PartiallySupervised, *source, *target);
  const auto frames = annotated(access.frames(Role::Source, Split::Train), cfg.data.annotated_every);
  const GridDetector det = train_grid_detector(frames, cfg.detector, Rng::derive(seed, "detector").seed());
  access.begin_evaluation();
  auto evaluate = [&](Role role) {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<SceneObject>> gts;
    for (const Scene* s : access.frames(role, Split::Test)) {
      dets.push_back(detect(det, s->image));
      gts.push_back(s->objects);
    }
    return evaluate_detections(dets, gts);
  };
  return {evaluate(Role::Source), evaluate(Role::Target)};
}

}  // namespace lgdg
