#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "detlab/tensor.hpp"

namespace detlab {

/// Named tensors, ordered by name.
///
/// On disk an archive is a JSON manifest
///   {"data_file": "x.bin",
///    "tensors": [{"name", "shape", "dtype": "f64", "offset", "length"}]}
/// plus a raw file of little-endian 64-bit floats; `offset` and `length`
/// count values, not bytes. When "data_file" is absent the raw file is the
/// manifest path with its extension replaced by ".bin". Entries may instead
/// carry an inline "data" array (flat or nested), in which case no raw file
/// is needed.
struct TensorArchive {
  std::map<std::string, Tensor> tensors;

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }

  friend bool operator==(const TensorArchive&, const TensorArchive&) = default;
};

TensorArchive read_archive(const std::filesystem::path& manifest);

/// Writes the manifest and its companion raw file (`<stem>.bin`).
void write_archive(const TensorArchive& archive, const std::filesystem::path& manifest);

/// Manifest with inline data; handy for small fixtures.
nlohmann::json archive_to_inline_json(const TensorArchive& archive);
TensorArchive archive_from_json(const nlohmann::json& manifest,
                                const std::filesystem::path& raw_file = {});

}  // namespace detlab
