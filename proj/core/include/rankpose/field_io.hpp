#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "rankpose/heatmap.hpp"

namespace rankpose::io {

// Binary heatmap container:
//   "RPHM" | version u16 | mode u8 | H u32 | W u32 | k u32 | keypoint_id u32 |
//   cell_count little-endian float32 values, row-major.
inline constexpr char kFieldMagic[4] = {'R', 'P', 'H', 'M'};
inline constexpr std::uint16_t kFieldVersion = 1;

// Parameter-file variant: the same header under magic "RPPM", followed by
// model u8 | rows u32 | cols u32 and rows * cols float32 values.
inline constexpr char kParamMagic[4] = {'R', 'P', 'P', 'M'};

void write_field(std::ostream& out, const HeatmapField& field);
HeatmapField read_field(std::istream& in);
void save_field(const std::filesystem::path& path, const HeatmapField& field);
HeatmapField load_field(const std::filesystem::path& path);

// Small-field JSON export; values are emitted as an array of rows (one row
// for 1D fields).
std::string field_to_json(const HeatmapField& field, int indent = -1);
HeatmapField field_from_json(const std::string& text);

struct ParamBlock {
  GridShape shape;
  std::uint32_t keypoint_id = 0;
  std::uint8_t model = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<double> values;  // rows * cols, row-major
};

void write_params(std::ostream& out, const ParamBlock& block);
ParamBlock read_params(std::istream& in);
void save_params(const std::filesystem::path& path, const ParamBlock& block);
ParamBlock load_params(const std::filesystem::path& path);

}  // namespace rankpose::io
