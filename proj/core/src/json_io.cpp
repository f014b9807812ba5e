#include "json_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>

namespace lgdg {

ObjectClass class_from_name(const std::string& name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kClassNames[i] == name) return static_cast<ObjectClass>(i);
  }
  throw ConfigError("unknown object class '" + name + "'");
}

void to_json(Json& j, const DomainConfig& cfg) {
  Json colors = Json::object();
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    colors[std::string(kClassNames[i])] = cfg.class_colors[i];
  }
  Json priors = Json::object();
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    priors[std::string(kClassNames[i])] = cfg.presence_priors[i];
  }
  j = Json{{"name", cfg.name},
           {"domain_id", cfg.domain_id},
           {"width", cfg.width},
           {"height", cfg.height},
           {"fov_crop_fraction", cfg.fov_crop_fraction},
           {"background_mean", cfg.background_mean},
           {"background_std", cfg.background_std},
           {"hue_shift", cfg.hue_shift},
           {"class_colors", colors},
           {"color_jitter", cfg.color_jitter},
           {"texture_amplitude", cfg.texture_amplitude},
           {"presence_priors", priors},
           {"criterion_rates", cfg.criterion_rates},
           {"walk_sigma", cfg.walk_sigma},
           {"noise_profile", cfg.noise_profile}};
}

void from_json(const Json& j, DomainConfig& cfg) {
  if (!j.is_object()) throw ConfigError("domain config must be an object");
  read_opt(j, "name", cfg.name);
  read_opt(j, "domain_id", cfg.domain_id);
  read_opt(j, "width", cfg.width);
  read_opt(j, "height", cfg.height);
  read_opt(j, "fov_crop_fraction", cfg.fov_crop_fraction);
  read_opt(j, "background_mean", cfg.background_mean);
  read_opt(j, "background_std", cfg.background_std);
  read_opt(j, "hue_shift", cfg.hue_shift);
  if (auto it = j.find("class_colors"); it != j.end()) {
    for (const auto& [name, value] : it->items()) {
      cfg.class_colors[static_cast<std::size_t>(class_from_name(name))] = value.get<Rgb>();
    }
  }
  read_opt(j, "color_jitter", cfg.color_jitter);
  read_opt(j, "texture_amplitude", cfg.texture_amplitude);
  if (auto it = j.find("presence_priors"); it != j.end()) {
    for (const auto& [name, value] : it->items()) {
      cfg.presence_priors[static_cast<std::size_t>(class_from_name(name))] = value.get<double>();
    }
  }
  read_opt(j, "criterion_rates", cfg.criterion_rates);
  read_opt(j, "walk_sigma", cfg.walk_sigma);
  read_opt(j, "noise_profile", cfg.noise_profile);
}

void to_json(Json& j, const SceneObject& o) {
  j = Json{{"class", std::string(class_name(o.cls))},
           {"box", o.box},
           {"color", o.color},
           {"texture", o.texture},
           {"present", o.present}};
}

void from_json(const Json& j, SceneObject& o) {
  o.cls = class_from_name(j.at("class").get<std::string>());
  o.box = j.at("box").get<Box>();
  o.color = j.at("color").get<Rgb>();
  o.texture = j.at("texture").get<double>();
  o.present = j.at("present").get<bool>();
}

void write_f64_le(std::ostream& os, std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed");
}

void read_f64_le(std::istream& is, std::span<double> values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw ChecksumError("blob truncated");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[i * 8 + b]} << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
}

std::uint32_t crc32_of(std::span<const double> values) {
  uLong crc = crc32(0L, Z_NULL, 0);
  constexpr std::size_t kChunk = 4096;
  std::array<unsigned char, kChunk * 8> le{};
  for (std::size_t start = 0; start < values.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, values.size() - start);
    for (std::size_t i = 0; i < n; ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(values[start + i]);
      for (int b = 0; b < 8; ++b) le[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    crc = crc32(crc, le.data(), static_cast<uInt>(n * 8));
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace lgdg
