#include "detlab/dataset.hpp"

#include <cmath>

#include "detlab/error.hpp"
#include "detlab/json_io.hpp"

namespace detlab {

namespace {

using json_io::at;
using json_io::json;

json box_json(const BoundingBox& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

[[noreturn]] void invalid(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::ParseError, "field " + where + ": " + what);
}

BoundingBox parse_box(const json& v, const std::string& where) {
  const std::vector<double> c = json_io::as_doubles(v, where);
  if (c.size() != 4) invalid(where, "box needs 4 numbers");
  BoundingBox box{c[0], c[1], c[2], c[3]};
  if (!box.valid()) invalid(where, "box corners out of order");
  return box;
}

}  // namespace

nlohmann::json dataset_to_json(const DatasetFile& dataset) {
  json images = json::array();
  for (const auto& image : dataset.images) {
    json gts = json::array();
    for (const auto& gt : image.gts) gts.push_back({{"box", box_json(gt.box)}, {"class", gt.class_id}});
    json preds = json::array();
    for (const auto& p : image.preds) {
      preds.push_back({{"anchor", json::array({p.anchor.x, p.anchor.y})},
                       {"stride", p.anchor.stride},
                       {"box", box_json(p.box)},
                       {"scores", p.scores}});
    }
    images.push_back({{"id", image.id}, {"gts", std::move(gts)}, {"preds", std::move(preds)}});
  }
  return {{"metadata",
           {{"num_classes", dataset.num_classes}, {"coordinate_frame", dataset.coordinate_frame}}},
          {"images", std::move(images)}};
}

DatasetFile dataset_from_json(const nlohmann::json& doc) {
  DatasetFile dataset;
  const json& meta = json_io::field(doc, "metadata", "");
  dataset.num_classes = static_cast<std::size_t>(
      json_io::as_uint(json_io::field(meta, "num_classes", "/metadata"), "/metadata/num_classes"));
  if (dataset.num_classes == 0) invalid("/metadata/num_classes", "must be positive");
  if (const json* frame = json_io::optional_field(meta, "coordinate_frame", "/metadata")) {
    dataset.coordinate_frame = json_io::as_string(*frame, "/metadata/coordinate_frame");
  }

  const json& images = json_io::as_array(json_io::field(doc, "images", ""), "/images");
  dataset.images.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = at("/images", i);
    const json& img = images[i];
    ImageRecord record;
    record.id = json_io::as_int(json_io::field(img, "id", where), at(where, "id"));

    const std::string gts_at = at(where, "gts");
    const json& gts = json_io::as_array(json_io::field(img, "gts", where), gts_at);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const std::string gw = at(gts_at, g);
      GroundTruthInstance gt;
      gt.box = parse_box(json_io::field(gts[g], "box", gw), at(gw, "box"));
      gt.class_id = static_cast<std::size_t>(
          json_io::as_uint(json_io::field(gts[g], "class", gw), at(gw, "class")));
      if (gt.class_id >= dataset.num_classes) {
        invalid(at(gw, "class"), "class " + std::to_string(gt.class_id) + " >= num_classes " +
                                     std::to_string(dataset.num_classes));
      }
      record.gts.push_back(gt);
    }

    const std::string preds_at = at(where, "preds");
    const json& preds = json_io::as_array(json_io::field(img, "preds", where), preds_at);
    for (std::size_t p = 0; p < preds.size(); ++p) {
      const std::string pw = at(preds_at, p);
      Prediction pred;
      const std::vector<double> anchor = json_io::as_doubles(json_io::field(preds[p], "anchor", pw), at(pw, "anchor"));
      if (anchor.size() != 2) invalid(at(pw, "anchor"), "anchor needs 2 numbers");
      pred.anchor.x = anchor[0];
      pred.anchor.y = anchor[1];
      pred.anchor.stride = json_io::as_double(json_io::field(preds[p], "stride", pw), at(pw, "stride"));
      if (!(pred.anchor.stride > 0.0)) invalid(at(pw, "stride"), "stride must be positive");
      pred.box = parse_box(json_io::field(preds[p], "box", pw), at(pw, "box"));
      pred.scores = json_io::as_doubles(json_io::field(preds[p], "scores", pw), at(pw, "scores"));
      if (pred.scores.size() != dataset.num_classes) {
        invalid(at(pw, "scores"), "expected " + std::to_string(dataset.num_classes) + " scores, got " +
                                      std::to_string(pred.scores.size()));
      }
      for (std::size_t s = 0; s < pred.scores.size(); ++s) {
        if (!(pred.scores[s] >= 0.0 && pred.scores[s] <= 1.0)) {
          invalid(at(at(pw, "scores"), s), "score outside [0, 1]");
        }
      }
      record.preds.push_back(std::move(pred));
    }
    dataset.images.push_back(std::move(record));
  }
  return dataset;
}

std::string serialize_dataset(const DatasetFile& dataset) {
  return dataset_to_json(dataset).dump() + "\n";
}

DatasetFile parse_dataset(std::string_view text, std::string_view source) {
  const json doc = json_io::parse_text(text, source);
  try {
    return dataset_from_json(doc);
  } catch (const Error& e) {
    throw Error(e.code(), std::string(source) + ": " + e.what());
  }
}

DatasetFile read_dataset(const std::filesystem::path& path) {
  return parse_dataset(json_io::read_text(path), path.string());
}

}  // namespace detlab
