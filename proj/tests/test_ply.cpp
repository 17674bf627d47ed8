#include <gtest/gtest.h>

#include <cstring>

#include "pcqa/ply.hpp"
#include "pcqa/random.hpp"

using namespace pcqa;

namespace {

PointCloud random_cloud(Rng& rng, std::size_t n) {
  PointCloud pc;
  auto coord = [&](double lo, double hi) {
    const float f = static_cast<float>(rng.uniform(lo, hi));
    return static_cast<double>(f);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const double x = coord(-100, 100), y = coord(-1, 1), z = coord(0, 1e4);
    pc.positions.push_back({x, y, z});
    pc.colors.push_back({static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256)),
                         static_cast<std::uint8_t>(rng.below(256))});
  }
  return pc;
}

void expect_bit_identical(const PointCloud& a, const PointCloud& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(std::memcmp(a.positions[i].data(), b.positions[i].data(), sizeof(Vec3)), 0)
        << "point " << i << ": " << a.positions[i][0] << "," << a.positions[i][1] << "," << a.positions[i][2] << " vs "
        << b.positions[i][0] << "," << b.positions[i][1] << "," << b.positions[i][2];
    EXPECT_EQ(a.colors[i], b.colors[i]) << "point " << i;
  }
}

const char* kAsciiTwo =
    "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
    "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    "0 0 0 255 0 0\n1 1 1 0 255 0\n";

}  // namespace

TEST(Ply, ParsesAsciiVertices) {
  const PointCloud pc = ply::parse_ply(kAsciiTwo);
  ASSERT_EQ(pc.size(), 2u);
  EXPECT_EQ(pc.colors[0], (Rgb8{255, 0, 0}));
  EXPECT_EQ(pc.colors[1], (Rgb8{0, 255, 0}));
  EXPECT_EQ(pc.positions[1], (Vec3{1, 1, 1}));
}

TEST(Ply, ShortAsciiBodyIsTruncated) {
  const std::string doc =
      "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 1 2 3\n1 1 1 4 5 6\n";
  try {
    ply::parse_ply(doc);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), "truncated");
  }
}

TEST(Ply, ShortBinaryBodyIsTruncated) {
  Rng rng(3);
  std::string doc = ply::write_ply(random_cloud(rng, 5));
  doc.resize(doc.size() - 4);
  try {
    ply::parse_ply(doc);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), "truncated");
  }
}

TEST(Ply, RejectsMissingColorBigEndianAndBadHeader) {
  auto kind_of = [](const std::string& doc) {
    try {
      ply::parse_ply(doc);
    } catch (const ParseError& e) {
      return e.kind();
    }
    return std::string("none");
  };
  EXPECT_EQ(kind_of("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n"
                    "end_header\n0 0 0\n"),
            "missing-attribute");
  EXPECT_EQ(kind_of("ply\nformat binary_big_endian 1.0\nelement vertex 1\nend_header\n"), "unsupported-encoding");
  EXPECT_EQ(kind_of("plx\nformat ascii 1.0\nend_header\n"), "header");
  EXPECT_EQ(kind_of("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"), "header");
  EXPECT_EQ(kind_of("ply\nelement vertex 1\nproperty float x\nend_header\n"), "header");
}

TEST(Ply, SkipsUnknownPropertiesAndElements) {
  const std::string doc =
      "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty double x\nproperty double y\n"
      "property double z\nproperty float nx\nproperty uchar r\nproperty uchar g\nproperty uchar b\n"
      "property uchar alpha\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
      "0.5 1.5 2.5 9 10 20 30 255\n-1 -2 -3 9 40 50 60 255\n3 0 1 1\n";
  const PointCloud pc = ply::parse_ply(doc);
  ASSERT_EQ(pc.size(), 2u);
  EXPECT_EQ(pc.positions[0], (Vec3{0.5, 1.5, 2.5}));
  EXPECT_EQ(pc.colors[1], (Rgb8{40, 50, 60}));
}

TEST(Ply, BinaryWithSkippedPropertiesAndPrecedingElement) {
  // A float normal property between position and color, and a face element
  // declared before the vertices.
  std::string doc =
      "ply\nformat binary_little_endian 1.0\nelement face 1\nproperty list uchar int vertex_indices\n"
      "element vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  auto put = [&](const void* p, std::size_t n) { doc.append(static_cast<const char*>(p), n); };
  const unsigned char count = 2;
  const int idx[2] = {0, 0};
  put(&count, 1);
  put(idx, sizeof idx);
  const float xyzn[4] = {1.25f, -2.5f, 3.0f, 0.7f};
  put(xyzn, sizeof xyzn);
  const unsigned char rgb[3] = {7, 8, 9};
  put(rgb, 3);
  doc += "trailing bytes are ignored";
  const PointCloud pc = ply::parse_ply(doc);
  ASSERT_EQ(pc.size(), 1u);
  EXPECT_EQ(pc.positions[0], (Vec3{1.25, -2.5, 3.0}));
  EXPECT_EQ(pc.colors[0], (Rgb8{7, 8, 9}));
}

TEST(Ply, WriteSinglePointDeclaresOneVertex) {
  PointCloud pc;
  pc.positions.push_back({0, 0, 0});
  pc.colors.push_back({255, 255, 255});
  const std::string doc = ply::write_ply(pc, ply::Encoding::ascii);
  EXPECT_NE(doc.find("element vertex 1\n"), std::string::npos);
  EXPECT_EQ(ply::parse_ply(doc).size(), 1u);
}

TEST(Ply, EmptyCloudViolatesInvariant) {
  PointCloud pc;
  EXPECT_THROW(ply::write_ply(pc), ShapeError);
}

TEST(Ply, BinaryRoundTripIsBitExactOver100RandomClouds) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const PointCloud pc = random_cloud(rng, 1 + rng.below(200));
    expect_bit_identical(pc, ply::parse_ply(ply::write_ply(pc)));
  }
}

TEST(Ply, AsciiRoundTripPreservesFloatValues) {
  Rng rng(12);
  const PointCloud pc = random_cloud(rng, 50);
  expect_bit_identical(pc, ply::parse_ply(ply::write_ply(pc, ply::Encoding::ascii)));
}
