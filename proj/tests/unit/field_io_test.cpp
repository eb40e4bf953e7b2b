#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "rankpose/error.hpp"
#include "rankpose/field_io.hpp"

namespace rankpose {
namespace {

HeatmapField sample_field(const GridShape& g) {
  std::vector<double> v(g.cell_count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(static_cast<float>(0.37 * i - 2.0));
  return HeatmapField(g, v, 4);
}

TEST(FieldIo, BinaryRoundTrip) {
  for (const GridShape& g : {GridShape::two_d(6, 5), GridShape::one_d_x(7, 2), GridShape::one_d_y(3, 3)}) {
    const HeatmapField f = sample_field(g);
    std::stringstream ss;
    io::write_field(ss, f);
    const HeatmapField back = io::read_field(ss);
    EXPECT_EQ(back.shape, g);
    EXPECT_EQ(back.keypoint_id, 4u);
    EXPECT_EQ(back.values, f.values);
  }
}

TEST(FieldIo, HeaderLayout) {
  std::stringstream ss;
  io::write_field(ss, sample_field(GridShape::two_d(2, 3)));
  const std::string bytes = ss.str();
  // magic 4 + version 2 + mode 1 + four u32 + 6 float32
  EXPECT_EQ(bytes.size(), 4u + 2u + 1u + 16u + 24u);
  EXPECT_EQ(bytes.substr(0, 4), "RPHM");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0u);
}

TEST(FieldIo, RejectsCorruptInput) {
  std::stringstream bad_magic("XXXX0000000000000000000");
  EXPECT_THROW(io::read_field(bad_magic), FormatError);
  std::stringstream full;
  io::write_field(full, sample_field(GridShape::two_d(4, 4)));
  std::stringstream truncated(full.str().substr(0, 30));
  EXPECT_THROW(io::read_field(truncated), FormatError);
  EXPECT_THROW(io::load_field("/nonexistent/dir/field.rphm"), IoError);
}

TEST(FieldIo, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "rankpose_field_io_test.rphm";
  const HeatmapField f = sample_field(GridShape::two_d(8, 4));
  io::save_field(path, f);
  EXPECT_EQ(io::load_field(path).values, f.values);
  std::filesystem::remove(path);
}

TEST(FieldIo, JsonRoundTrip) {
  const HeatmapField f = sample_field(GridShape::two_d(3, 4));
  const HeatmapField back = io::field_from_json(io::field_to_json(f));
  EXPECT_EQ(back.shape, f.shape);
  EXPECT_EQ(back.values, f.values);
  EXPECT_THROW(io::field_from_json("{\"nope\": 1}"), FormatError);
}

TEST(ParamIo, RoundTrip) {
  io::ParamBlock b;
  b.shape = GridShape::two_d(2, 2);
  b.keypoint_id = 2;
  b.model = 1;
  b.rows = 5;
  b.cols = 3;
  for (int i = 0; i < 15; ++i) b.values.push_back(0.25 * i);
  std::stringstream ss;
  io::write_params(ss, b);
  EXPECT_EQ(ss.str().substr(0, 4), "RPPM");
  const io::ParamBlock back = io::read_params(ss);
  EXPECT_EQ(back.shape, b.shape);
  EXPECT_EQ(back.keypoint_id, 2u);
  EXPECT_EQ(back.model, 1);
  EXPECT_EQ(back.rows, 5u);
  EXPECT_EQ(back.cols, 3u);
  EXPECT_EQ(back.values, b.values);

  b.values.pop_back();
  std::stringstream bad;
  EXPECT_THROW(io::write_params(bad, b), ShapeError);
}

}  // namespace
}  // namespace rankpose
