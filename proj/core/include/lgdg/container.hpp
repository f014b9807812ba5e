#pragma once

// Versioned binary container shared by detector and model checkpoints and by
// latent-graph dumps:
//
//   "LGDGCKPT"            8-byte magic
//   u32 LE                format version
//   u64 LE                header length in bytes
//   header                JSON: kind, metadata, blob table, payload crc32
//   payload               little-endian f64 blobs in table order

#include <filesystem>
#include <string>
#include <vector>

#include "lgdg/tensor.hpp"

namespace lgdg {

inline constexpr unsigned kContainerVersion = 1;

struct ContainerBlob {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Container {
  std::string kind;           // "grid-detector", "model", "latent-graph", ...
  std::string metadata_json;  // free-form JSON object text ("{}" when empty)
  std::vector<ContainerBlob> blobs;

  const ContainerBlob& blob(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const Container& container);
// Throws IoError on malformed input and ChecksumError on payload mismatch.
Container read_container(const std::filesystem::path& path);

}  // namespace lgdg
