#include "rankpose/field_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"
#include "rankpose/error.hpp"

namespace rankpose::io {
namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw FormatError("truncated binary field");
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void write_header(std::ostream& out, const char (&magic)[4], const GridShape& shape,
                  std::uint32_t keypoint_id) {
  out.write(magic, 4);
  put_le<std::uint16_t>(out, kFieldVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(shape.mode));
  put_le<std::uint32_t>(out, shape.height);
  put_le<std::uint32_t>(out, shape.width);
  put_le<std::uint32_t>(out, shape.split_factor);
  put_le<std::uint32_t>(out, keypoint_id);
}

GridShape read_header(std::istream& in, const char (&magic)[4], std::uint32_t& keypoint_id) {
  char got[4];
  in.read(got, 4);
  if (!in || std::memcmp(got, magic, 4) != 0) {
    throw FormatError(std::string("bad magic, expected ") + std::string(magic, 4));
  }
  const auto version = get_le<std::uint16_t>(in);
  if (version != kFieldVersion) {
    throw FormatError("unsupported format version " + std::to_string(version));
  }
  const auto mode = get_le<std::uint8_t>(in);
  if (mode > 2) throw FormatError("unknown grid mode " + std::to_string(mode));
  GridShape shape;
  shape.mode = static_cast<GridMode>(mode);
  shape.height = get_le<std::uint32_t>(in);
  shape.width = get_le<std::uint32_t>(in);
  shape.split_factor = get_le<std::uint32_t>(in);
  keypoint_id = get_le<std::uint32_t>(in);
  try {
    shape.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("invalid header: ") + e.what());
  }
  return shape;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace

void write_field(std::ostream& out, const HeatmapField& field) {
  field.validate();
  write_header(out, kFieldMagic, field.shape, field.keypoint_id);
  for (double v : field.values) put_le<float>(out, static_cast<float>(v));
  if (!out) throw IoError("failed writing binary field");
}

HeatmapField read_field(std::istream& in) {
  std::uint32_t keypoint_id = 0;
  const GridShape shape = read_header(in, kFieldMagic, keypoint_id);
  std::vector<double> values(shape.cell_count());
  for (double& v : values) v = static_cast<double>(get_le<float>(in));
  return HeatmapField(shape, std::move(values), keypoint_id);
}

void save_field(const std::filesystem::path& path, const HeatmapField& field) {
  auto out = open_out(path);
  write_field(out, field);
}

HeatmapField load_field(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_field(in);
}

std::string field_to_json(const HeatmapField& field, int indent) {
  field.validate();
  const std::size_t cols = field.shape.mode == GridMode::kTwoD ? field.shape.width
                                                               : field.shape.cell_count();
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t start = 0; start < field.values.size(); start += cols) {
    rows.push_back(std::vector<double>(field.values.begin() + static_cast<std::ptrdiff_t>(start),
                                       field.values.begin() + static_cast<std::ptrdiff_t>(start + cols)));
  }
  nlohmann::json doc = {
      {"mode", static_cast<int>(field.shape.mode)},
      {"height", field.shape.height},
      {"width", field.shape.width},
      {"split_factor", field.shape.split_factor},
      {"keypoint_id", field.keypoint_id},
      {"values", rows},
  };
  return doc.dump(indent);
}

HeatmapField field_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
    GridShape shape;
    shape.mode = static_cast<GridMode>(doc.at("mode").get<int>());
    shape.height = doc.at("height").get<std::uint32_t>();
    shape.width = doc.at("width").get<std::uint32_t>();
    shape.split_factor = doc.at("split_factor").get<std::uint32_t>();
    std::vector<double> values;
    for (const auto& row : doc.at("values")) {
      for (const auto& v : row) values.push_back(v.get<double>());
    }
    return HeatmapField(shape, std::move(values), doc.at("keypoint_id").get<std::uint32_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid field JSON: ") + e.what());
  }
}

void write_params(std::ostream& out, const ParamBlock& block) {
  if (block.values.size() != static_cast<std::size_t>(block.rows) * block.cols) {
    throw ShapeError("parameter block size does not match rows * cols");
  }
  write_header(out, kParamMagic, block.shape, block.keypoint_id);
  put_le<std::uint8_t>(out, block.model);
  put_le<std::uint32_t>(out, block.rows);
  put_le<std::uint32_t>(out, block.cols);
  for (double v : block.values) put_le<float>(out, static_cast<float>(v));
  if (!out) throw IoError("failed writing parameter block");
}

ParamBlock read_params(std::istream& in) {
  ParamBlock block;
  block.shape = read_header(in, kParamMagic, block.keypoint_id);
  block.model = get_le<std::uint8_t>(in);
  block.rows = get_le<std::uint32_t>(in);
  block.cols = get_le<std::uint32_t>(in);
  block.values.resize(static_cast<std::size_t>(block.rows) * block.cols);
  for (double& v : block.values) v = static_cast<double>(get_le<float>(in));
  return block;
}

void save_params(const std::filesystem::path& path, const ParamBlock& block) {
  auto out = open_out(path);
  write_params(out, block);
}

ParamBlock load_params(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_params(in);
}

}  // namespace rankpose::io
