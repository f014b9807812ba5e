#pragma once

// nlohmann adapters for library types. Private to the core library and its
// direct consumers; public headers stay JSON-free.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lgdg/errors.hpp"
#include "lgdg/geometry.hpp"
#include "lgdg/scene.hpp"

namespace lgdg {

using Json = nlohmann::json;

inline void to_json(Json& j, const Box& b) { j = Json::array({b.x1, b.y1, b.x2, b.y2}); }
inline void from_json(const Json& j, Box& b) {
  if (!j.is_array() || j.size() != 4) throw ConfigError("box must be [x1, y1, x2, y2]");
  b = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

ObjectClass class_from_name(const std::string& name);

void to_json(Json& j, const DomainConfig& cfg);
// Missing keys keep the defaults already present in `cfg`.
void from_json(const Json& j, DomainConfig& cfg);

void to_json(Json& j, const SceneObject& o);
void from_json(const Json& j, SceneObject& o);

// Looks up `key` if present, converting with a ConfigError on type mismatch.
template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

// Little-endian f64 streams.
void write_f64_le(std::ostream& os, std::span<const double> values);
void read_f64_le(std::istream& is, std::span<double> values);

std::uint32_t crc32_of(std::span<const double> values);

}  // namespace lgdg
