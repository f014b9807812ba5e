#include "lgdg/container.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "json_io.hpp"

namespace lgdg {

namespace {

constexpr std::array<char, 8> kMagic = {'L', 'G', 'D', 'G', 'C', 'K', 'P', 'T'};

void write_uint_le(std::ostream& os, std::uint64_t value, int bytes) {
  for (int b = 0; b < bytes; ++b) os.put(static_cast<char>((value >> (8 * b)) & 0xff));
}

std::uint64_t read_uint_le(std::istream& is, int bytes) {
  std::uint64_t value = 0;
  for (int b = 0; b < bytes; ++b) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw IoError("container truncated in preamble");
    value |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return value;
}

}  // namespace

const ContainerBlob& Container::blob(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return b;
  }
  throw IoError("container has no blob named '" + name + "'");
}

void write_container(const std::filesystem::path& path, const Container& container) {
  Json table = Json::array();
  std::vector<double> payload;
  for (const auto& b : container.blobs) {
    if (shape_numel(b.shape) != b.values.size()) {
      throw IoError("blob '" + b.name + "' shape does not match its values");
    }
    table.push_back({{"name", b.name},
                     {"shape", b.shape},
                     {"offset", payload.size()},
                     {"count", b.values.size()}});
    payload.insert(payload.end(), b.values.begin(), b.values.end());
  }
  Json meta = container.metadata_json.empty() ? Json::object()
                                              : Json::parse(container.metadata_json);
  const Json header = {{"kind", container.kind},
                       {"metadata", meta},
                       {"blobs", table},
                       {"payload_values", payload.size()},
                       {"crc32", crc32_of(payload)}};
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  write_uint_le(os, kContainerVersion, 4);
  write_uint_le(os, text.size(), 8);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_f64_le(os, payload);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (is.gcount() != 8 || magic != kMagic) throw IoError("not an lgdg container: " + path.string());
  const auto version = read_uint_le(is, 4);
  if (version != kContainerVersion) {
    throw IoError("unsupported container version " + std::to_string(version));
  }
  const auto header_len = read_uint_le(is, 8);
  if (header_len > (1u << 30)) throw IoError("container header too large");
  std::string text(header_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::uint64_t>(is.gcount()) != header_len) throw IoError("container truncated");

  Container c;
  try {
    const Json header = Json::parse(text);
    c.kind = header.at("kind").get<std::string>();
    c.metadata_json = header.at("metadata").dump();
    std::vector<double> payload(header.at("payload_values").get<std::size_t>());
    read_f64_le(is, payload);
    if (crc32_of(payload) != header.at("crc32").get<std::uint32_t>()) {
      throw ChecksumError("container payload checksum mismatch: " + path.string());
    }
    for (const Json& entry : header.at("blobs")) {
      ContainerBlob b;
      b.name = entry.at("name").get<std::string>();
      b.shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (offset + count > payload.size() || shape_numel(b.shape) != count) {
        throw IoError("container blob table is inconsistent");
      }
      b.values.assign(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                      payload.begin() + static_cast<std::ptrdiff_t>(offset + count));
      c.blobs.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt container header: ") + e.what());
  }
  return c;
}

}  // namespace lgdg
