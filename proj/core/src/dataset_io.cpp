#include "lgdg/dataset_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "json_io.hpp"

namespace lgdg {

namespace fs = std::filesystem;

Dataset generate_dataset(const DomainConfig& cfg, int n_videos, int frames_per_video,
                         std::uint64_t seed, const std::array<double, 3>& fractions) {
  if (n_videos < 1) throw ConfigError("dataset needs at least one video");
  Dataset ds;
  ds.domain = cfg;
  for (int v = 0; v < n_videos; ++v) {
    auto video = generate_video(cfg, v, frames_per_video, seed);
    for (Scene& s : video) ds.scenes.push_back(std::move(s));
  }
  const auto summaries = summarize_videos(ds.scenes);
  const SplitAssignment split = stratified_split(summaries, fractions, seed);
  for (int id : split.train) ds.split_of_video[id] = "train";
  for (int id : split.val) ds.split_of_video[id] = "val";
  for (int id : split.test) ds.split_of_video[id] = "test";
  return ds;
}

namespace {

std::string blob_name(int video_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "video_%04d.bin", video_id);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  std::map<int, std::vector<const Scene*>> by_video;
  for (const Scene& s : dataset.scenes) by_video[s.video_id].push_back(&s);

  Json videos = Json::array();
  Json frames = Json::array();
  for (auto& [video_id, scenes] : by_video) {
    std::sort(scenes.begin(), scenes.end(),
              [](const Scene* a, const Scene* b) { return a->frame_index < b->frame_index; });
    std::vector<double> blob;
    for (const Scene* s : scenes) {
      if (s->image.height != dataset.domain.height || s->image.width != dataset.domain.width) {
        throw IoError("scene image dims differ from the dataset domain");
      }
      blob.insert(blob.end(), s->image.pixels.begin(), s->image.pixels.end());
      Json objects = Json::array();
      for (const SceneObject& o : s->objects) objects.push_back(o);
      frames.push_back({{"video_id", video_id},
                        {"frame_index", s->frame_index},
                        {"domain_id", s->domain_id},
                        {"labels", {int(s->labels[0]), int(s->labels[1]), int(s->labels[2])}},
                        {"render_seed", s->render_seed},
                        {"objects", objects}});
    }
    const std::string name = blob_name(video_id);
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    write_f64_le(out, blob);
    auto split_it = dataset.split_of_video.find(video_id);
    videos.push_back({{"video_id", video_id},
                      {"n_frames", scenes.size()},
                      {"blob", name},
                      {"values", blob.size()},
                      {"crc32", crc32_of(blob)},
                      {"split", split_it == dataset.split_of_video.end() ? "" : split_it->second}});
  }
  Json manifest = {{"format", "lgdg-dataset"},
                   {"version", 1},
                   {"domain", dataset.domain},
                   {"image", {{"channels", 3},
                              {"height", dataset.domain.height},
                              {"width", dataset.domain.width}}},
                   {"total_frames", dataset.scenes.size()},
                   {"videos", videos},
                   {"frames", frames}};
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw IoError("cannot write manifest in " + dir.string());
  mf << manifest.dump(1) << '\n';
  if (!mf) throw IoError("failed writing manifest in " + dir.string());
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("missing manifest.json in " + dir.string());
  Json manifest;
  try {
    manifest = Json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt manifest: ") + e.what());
  }
  Dataset ds;
  try {
    if (manifest.at("format") != "lgdg-dataset") throw IoError("corrupt manifest: wrong format tag");
    ds.domain = manifest.at("domain").get<DomainConfig>();
    const std::size_t plane = 3 * ds.domain.height * ds.domain.width;

    std::map<int, std::vector<Scene>> by_video;
    for (const Json& f : manifest.at("frames")) {
      Scene s;
      s.video_id = f.at("video_id").get<int>();
      s.frame_index = f.at("frame_index").get<int>();
      s.domain_id = f.at("domain_id").get<int>();
      const auto labels = f.at("labels").get<std::vector<int>>();
      if (labels.size() != kNumCriteria) throw IoError("corrupt manifest: label arity");
      for (std::size_t c = 0; c < kNumCriteria; ++c) s.labels[c] = labels[c] != 0;
      s.render_seed = f.at("render_seed").get<std::uint64_t>();
      s.objects = f.at("objects").get<std::vector<SceneObject>>();
      by_video[s.video_id].push_back(std::move(s));
    }

    std::size_t total = 0;
    for (const Json& v : manifest.at("videos")) {
      const int id = v.at("video_id").get<int>();
      const auto n_frames = v.at("n_frames").get<std::size_t>();
      auto& scenes = by_video[id];
      if (scenes.size() != n_frames) throw IoError("corrupt manifest: frame count mismatch");
      std::vector<double> blob(v.at("values").get<std::size_t>());
      if (blob.size() != n_frames * plane) throw IoError("corrupt manifest: blob size mismatch");
      const fs::path path = dir / v.at("blob").get<std::string>();
      std::ifstream in(path, std::ios::binary);
      if (!in) throw IoError("missing blob " + path.string());
      read_f64_le(in, blob);
      if (in.peek() != std::char_traits<char>::eof()) {
        throw ChecksumError("blob " + path.string() + " has trailing bytes");
      }
      if (crc32_of(blob) != v.at("crc32").get<std::uint32_t>()) {
        throw ChecksumError("checksum mismatch in " + path.string());
      }
      std::sort(scenes.begin(), scenes.end(),
                [](const Scene& a, const Scene& b) { return a.frame_index < b.frame_index; });
      for (std::size_t k = 0; k < scenes.size(); ++k) {
        scenes[k].image = Image(ds.domain.height, ds.domain.width);
        std::copy(blob.begin() + static_cast<std::ptrdiff_t>(k * plane),
                  blob.begin() + static_cast<std::ptrdiff_t>((k + 1) * plane),
                  scenes[k].image.pixels.begin());
      }
      const auto split = v.at("split").get<std::string>();
      if (!split.empty()) ds.split_of_video[id] = split;
      total += n_frames;
    }
    if (total != manifest.at("total_frames").get<std::size_t>()) {
      throw IoError("corrupt manifest: total_frames disagrees with videos");
    }
    for (auto& [id, scenes] : by_video) {
      for (Scene& s : scenes) ds.scenes.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt manifest: ") + e.what());
  }
  return ds;
}

}  // namespace lgdg
