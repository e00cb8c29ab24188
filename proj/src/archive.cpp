#include "detlab/archive.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>

#include "detlab/error.hpp"
#include "detlab/json_io.hpp"

namespace detlab {

namespace {

using json_io::json;

std::filesystem::path default_raw_path(const std::filesystem::path& manifest) {
  std::filesystem::path raw = manifest;
  raw.replace_extension(".bin");
  return raw;
}

std::vector<double> read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ParseError, path.string() + ": cannot open raw tensor file");
  std::vector<double> values;
  std::array<unsigned char, 8> bytes{};
  while (in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[static_cast<std::size_t>(b)];
    values.push_back(std::bit_cast<double>(bits));
  }
  if (in.gcount() != 0) {
    throw Error(ErrorCode::ParseError, path.string() + ": size is not a multiple of 8 bytes");
  }
  return values;
}

void flatten(const json& v, const std::string& where, std::vector<double>& out) {
  if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) flatten(v[i], json_io::at(where, i), out);
  } else {
    out.push_back(json_io::as_double(v, where));
  }
}

}  // namespace

const Tensor& TensorArchive::get(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(ErrorCode::MissingWeight, "tensor '" + name + "' not in archive");
  return it->second;
}

TensorArchive archive_from_json(const nlohmann::json& manifest,
                                const std::filesystem::path& raw_file) {
  TensorArchive archive;
  const auto& entries = json_io::as_array(json_io::field(manifest, "tensors", ""), "/tensors");
  std::vector<double> raw;
  bool raw_loaded = false;

  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string where = json_io::at("/tensors", i);
    const json& entry = entries[i];
    const std::string name = json_io::as_string(json_io::field(entry, "name", where), json_io::at(where, "name"));
    if (const json* dtype = json_io::optional_field(entry, "dtype", where)) {
      if (json_io::as_string(*dtype, json_io::at(where, "dtype")) != "f64") {
        throw Error(ErrorCode::ParseError, "field " + json_io::at(where, "dtype") + ": only f64 is supported");
      }
    }
    Shape shape;
    const json& dims = json_io::as_array(json_io::field(entry, "shape", where), json_io::at(where, "shape"));
    for (std::size_t d = 0; d < dims.size(); ++d) {
      shape.push_back(static_cast<std::size_t>(json_io::as_uint(dims[d], json_io::at(json_io::at(where, "shape"), d))));
    }

    std::vector<double> data;
    if (const json* inline_data = json_io::optional_field(entry, "data", where)) {
      flatten(*inline_data, json_io::at(where, "data"), data);
    } else {
      if (!raw_loaded) {
        if (raw_file.empty()) {
          throw Error(ErrorCode::ParseError, "field " + where + ": no inline data and no raw file");
        }
        raw = read_raw(raw_file);
        raw_loaded = true;
      }
      const auto offset = json_io::as_uint(json_io::field(entry, "offset", where), json_io::at(where, "offset"));
      const auto length = json_io::as_uint(json_io::field(entry, "length", where), json_io::at(where, "length"));
      if (offset + length > raw.size()) {
        throw Error(ErrorCode::ParseError, "field " + where + ": range [" + std::to_string(offset) + ", " +
                                               std::to_string(offset + length) + ") exceeds raw file of " +
                                               std::to_string(raw.size()) + " values");
      }
      data.assign(raw.begin() + static_cast<std::ptrdiff_t>(offset),
                  raw.begin() + static_cast<std::ptrdiff_t>(offset + length));
    }
    try {
      archive.tensors.insert_or_assign(name, Tensor(std::move(shape), std::move(data)));
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, "field " + where + ": " + e.what());
    }
  }
  return archive;
}

TensorArchive read_archive(const std::filesystem::path& manifest) {
  const json doc = json_io::parse_file(manifest);
  std::filesystem::path raw = default_raw_path(manifest);
  if (const json* data_file = json_io::optional_field(doc, "data_file", "")) {
    raw = manifest.parent_path() / json_io::as_string(*data_file, "/data_file");
  }
  try {
    return archive_from_json(doc, raw);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ParseError) {
      throw Error(ErrorCode::ParseError, manifest.string() + ": " + e.what());
    }
    throw;
  }
}

void write_archive(const TensorArchive& archive, const std::filesystem::path& manifest) {
  const std::filesystem::path raw = default_raw_path(manifest);
  std::ofstream out(raw, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::ConfigError, raw.string() + ": cannot open for writing");

  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : archive.tensors) {
    for (const double v : tensor.data()) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      std::array<char, 8> bytes{};
      for (auto& b : bytes) {
        b = static_cast<char>(bits & 0xffu);
        bits >>= 8;
      }
      out.write(bytes.data(), bytes.size());
    }
    entries.push_back({{"name", name},
                       {"shape", tensor.shape()},
                       {"dtype", "f64"},
                       {"offset", offset},
                       {"length", tensor.size()}});
    offset += tensor.size();
  }
  if (!out) throw Error(ErrorCode::ConfigError, raw.string() + ": write failed");

  json doc = {{"data_file", raw.filename().string()}, {"tensors", std::move(entries)}};
  json_io::write_file(manifest, doc.dump(2) + "\n");
}

nlohmann::json archive_to_inline_json(const TensorArchive& archive) {
  json entries = json::array();
  for (const auto& [name, tensor] : archive.tensors) {
    entries.push_back({{"name", name},
                       {"shape", tensor.shape()},
                       {"dtype", "f64"},
                       {"data", tensor.values()}});
  }
  return {{"tensors", std::move(entries)}};
}

}  // namespace detlab
