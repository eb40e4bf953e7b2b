#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "rankpose/heatmap.hpp"
#include "rankpose/metrics.hpp"
#include "rankpose/synth.hpp"
#include "rankpose/trainer.hpp"

namespace rankpose::cli {

// On-disk dataset layout:
//   manifest.json         spec echo, per-sample area and keypoints
//   features.bin          RPHM container, one row of features per sample
//   labels/sNNNNN_kKK.rphm  2D label field per sample and keypoint
// Features are stored as float32, so a reloaded dataset is the float32
// rounding of the generated one.
void save_dataset(const std::filesystem::path& dir, const SynthDataset& data, const Annotation& labels);
SynthDataset load_dataset(const std::filesystem::path& dir);

// Accepts a dataset directory or a manifest.json path.
std::vector<InstanceTruth> load_truths(const std::filesystem::path& dataset);

// {"instances": [{"instance_id": n, "keypoints": [{"x", "y", "confidence"}]}]}
nlohmann::json predictions_to_json(const std::vector<InstancePrediction>& preds,
                                   const std::vector<std::size_t>& ids);
// Returns predictions ordered as in the file together with their ids.
std::pair<std::vector<InstancePrediction>, std::vector<std::size_t>> predictions_from_json(
    const nlohmann::json& doc);

nlohmann::json read_json(const std::filesystem::path& path);
// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
void write_text(const std::filesystem::path& path, const std::string& text);

// Round-trip exact rendering (%.17g); "nan" for NaN.
std::string format_real(double value);

}  // namespace rankpose::cli
