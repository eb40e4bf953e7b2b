#include "rankpose_cli/dataset_store.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "rankpose/error.hpp"
#include "rankpose/field_io.hpp"
#include "rankpose_cli/run_config.hpp"

namespace rankpose::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string label_name(std::size_t sample, std::size_t keypoint) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "s%05zu_k%02zu.rphm", sample, keypoint);
  return buf;
}

fs::path manifest_path(const fs::path& dataset) {
  return fs::is_directory(dataset) ? dataset / "manifest.json" : dataset;
}

const json& require(const json& doc, const char* key, const std::string& where) {
  const auto it = doc.find(key);
  if (it == doc.end()) throw FormatError(where + ": missing '" + key + "'");
  return *it;
}

}  // namespace

std::string format_real(double value) {
  if (std::isnan(value)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": malformed JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

void save_dataset(const fs::path& dir, const SynthDataset& data, const Annotation& labels) {
  fs::create_directories(dir / "labels");
  const SynthSpec& spec = data.spec;

  json samples = json::array();
  for (std::size_t n = 0; n < data.samples.size(); ++n) {
    const auto& s = data.samples[n];
    json kps = json::array();
    for (std::size_t k = 0; k < s.gt_cells.size(); ++k) {
      const Cell c = cell_of(spec.grid, s.gt_cells[k]);
      kps.push_back({{"row", c.row},
                     {"col", c.col},
                     {"cell", s.gt_cells[k]},
                     {"visible", static_cast<bool>(s.visibility[k])},
                     {"label_file", "labels/" + label_name(n, k)}});
      const LabelField label = make_label(spec.grid, s.gt_cells[k], labels);
      io::save_field(dir / "labels" / label_name(n, k),
                     HeatmapField(spec.grid, label.labels, static_cast<std::uint32_t>(k), ValueKind::kProbabilities));
    }
    samples.push_back({{"index", n}, {"area", s.area}, {"bbox_diag", s.area}, {"keypoints", kps}});
  }

  std::vector<double> features;
  features.reserve(data.samples.size() * spec.feature_length());
  for (const auto& s : data.samples) features.insert(features.end(), s.features.begin(), s.features.end());
  const GridShape table = GridShape::two_d(static_cast<std::uint32_t>(data.samples.size()),
                                           static_cast<std::uint32_t>(spec.feature_length()));
  io::save_field(dir / "features.bin", HeatmapField(table, std::move(features)));

  json manifest = {{"format", "rankpose-dataset"},
                   {"version", 1},
                   {"seed", spec.seed},
                   {"spec", to_json(spec)},
                   {"label_annotation", to_json(labels)},
                   {"features", "features.bin"},
                   {"samples", samples}};
  write_json(dir / "manifest.json", manifest);
}

SynthDataset load_dataset(const fs::path& dir) {
  const json manifest = read_json(manifest_path(dir));
  const fs::path root = manifest_path(dir).parent_path();
  if (manifest.value("format", "") != "rankpose-dataset") throw FormatError("not a rankpose dataset manifest");

  SynthDataset data;
  try {
    data.spec = synth_from_json(require(manifest, "spec", "manifest"), "manifest.spec");
    data.spec.seed = require(manifest, "seed", "manifest").get<std::uint64_t>();
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  const HeatmapField table = io::load_field(root / manifest.value("features", "features.bin"));
  const json& samples = require(manifest, "samples", "manifest");
  const std::size_t width = data.spec.feature_length();
  if (table.shape.height != samples.size() || table.shape.width != width) {
    throw FormatError("features.bin does not match the manifest");
  }
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const json& js = samples[n];
    const std::string where = "manifest.samples[" + std::to_string(n) + "]";
    SynthSample s;
    s.area = require(js, "area", where).get<double>();
    const auto begin = table.values.begin() + static_cast<std::ptrdiff_t>(n * width);
    s.features.assign(begin, begin + static_cast<std::ptrdiff_t>(width));
    const json& kps = require(js, "keypoints", where);
    if (kps.size() != data.spec.num_keypoints) throw FormatError(where + ": wrong keypoint count");
    for (const auto& kp : kps) {
      s.gt_cells.push_back(require(kp, "cell", where).get<std::size_t>());
      s.visibility.push_back(require(kp, "visible", where).get<bool>());
      if (s.gt_cells.back() >= data.spec.grid.cell_count()) throw FormatError(where + ": cell out of range");
    }
    data.samples.push_back(std::move(s));
  }
  if (data.samples.size() != data.spec.num_instances) throw FormatError("manifest sample count differs from spec");
  return data;
}

std::vector<InstanceTruth> load_truths(const fs::path& dataset) {
  const json manifest = read_json(manifest_path(dataset));
  std::vector<InstanceTruth> out;
  const json& samples = require(manifest, "samples", "manifest");
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const std::string where = "manifest.samples[" + std::to_string(n) + "]";
    const json& js = samples[n];
    InstanceTruth t;
    t.area = require(js, "area", where).get<double>();
    if (js.contains("bbox_diag")) t.bbox_diag = js["bbox_diag"].get<double>();
    if (js.contains("head_size")) t.head_size = js["head_size"].get<double>();
    for (const auto& kp : require(js, "keypoints", where)) {
      t.keypoints.push_back({require(kp, "col", where).get<double>(), require(kp, "row", where).get<double>(),
                             kp.value("visible", true)});
    }
    out.push_back(std::move(t));
  }
  return out;
}

json predictions_to_json(const std::vector<InstancePrediction>& preds, const std::vector<std::size_t>& ids) {
  json instances = json::array();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    json kps = json::array();
    for (const auto& kp : preds[i].keypoints) {
      kps.push_back({{"x", kp.x}, {"y", kp.y}, {"confidence", kp.confidence}});
    }
    instances.push_back({{"instance_id", ids[i]}, {"keypoints", kps}});
  }
  return {{"instances", instances}};
}

std::pair<std::vector<InstancePrediction>, std::vector<std::size_t>> predictions_from_json(const json& doc) {
  std::pair<std::vector<InstancePrediction>, std::vector<std::size_t>> out;
  try {
    for (const auto& inst : doc.at("instances")) {
      InstancePrediction p;
      for (const auto& kp : inst.at("keypoints")) {
        p.keypoints.push_back({kp.at("x").get<double>(), kp.at("y").get<double>(), kp.at("confidence").get<double>()});
      }
      out.first.push_back(std::move(p));
      out.second.push_back(inst.at("instance_id").get<std::size_t>());
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("prediction file: ") + e.what());
  }
  return out;
}

}  // namespace rankpose::cli
