#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pcqa/errors.hpp"
#include "pcqa/point_cloud.hpp"

namespace pcqa::ply {

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

enum class Encoding { ascii, binary_little_endian };

namespace detail {

enum class Scalar { i8, u8, i16, u16, i32, u32, f32, f64 };

inline std::optional<Scalar> scalar_from_name(std::string_view n) {
  if (n == "char" || n == "int8") return Scalar::i8;
  if (n == "uchar" || n == "uint8") return Scalar::u8;
  if (n == "short" || n == "int16") return Scalar::i16;
  if (n == "ushort" || n == "uint16") return Scalar::u16;
  if (n == "int" || n == "int32") return Scalar::i32;
  if (n == "uint" || n == "uint32") return Scalar::u32;
  if (n == "float" || n == "float32") return Scalar::f32;
  if (n == "double" || n == "float64") return Scalar::f64;
  return std::nullopt;
}

inline std::size_t scalar_width(Scalar s) {
  switch (s) {
    case Scalar::i8:
    case Scalar::u8: return 1;
    case Scalar::i16:
    case Scalar::u16: return 2;
    case Scalar::i32:
    case Scalar::u32:
    case Scalar::f32: return 4;
    case Scalar::f64: return 8;
  }
  return 0;
}

template <class T>
T load_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

inline double decode_scalar(Scalar s, const unsigned char* p) {
  switch (s) {
    case Scalar::i8: return load_le<std::int8_t>(p);
    case Scalar::u8: return load_le<std::uint8_t>(p);
    case Scalar::i16: return load_le<std::int16_t>(p);
    case Scalar::u16: return load_le<std::uint16_t>(p);
    case Scalar::i32: return load_le<std::int32_t>(p);
    case Scalar::u32: return load_le<std::uint32_t>(p);
    case Scalar::f32: return static_cast<double>(load_le<float>(p));
    case Scalar::f64: return load_le<double>(p);
  }
  return 0.0;
}

struct Property {
  std::string name;
  Scalar type = Scalar::f32;
  bool is_list = false;
  Scalar count_type = Scalar::u8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

struct Header {
  Encoding encoding = Encoding::ascii;
  std::vector<Element> elements;
  std::size_t body_offset = 0;
};

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline Header parse_header(std::string_view doc) {
  Header h;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::optional<std::string_view> {
    if (pos >= doc.size()) return std::nullopt;
    std::size_t end = doc.find('\n', pos);
    if (end == std::string_view::npos) return std::nullopt;  // header must be newline-terminated
    std::string_view line = doc.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
  };

  auto magic = next_line();
  if (!magic || *magic != "ply") throw ParseError("header", "missing 'ply' magic");

  bool have_format = false;
  for (;;) {
    auto line = next_line();
    if (!line) throw ParseError("header", "missing end_header");
    auto tok = split_ws(*line);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2) throw ParseError("header", "bad format line");
      if (tok[1] == "ascii") h.encoding = Encoding::ascii;
      else if (tok[1] == "binary_little_endian") h.encoding = Encoding::binary_little_endian;
      else if (tok[1] == "binary_big_endian") throw ParseError("unsupported-encoding", "binary_big_endian");
      else throw ParseError("header", "unknown format '" + std::string(tok[1]) + "'");
      have_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError("header", "bad element line");
      Element e;
      e.name = std::string(tok[1]);
      auto [ptr, ec] = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), e.count);
      if (ec != std::errc() || ptr != tok[2].data() + tok[2].size())
        throw ParseError("header", "bad element count '" + std::string(tok[2]) + "'");
      h.elements.push_back(std::move(e));
    } else if (tok[0] == "property") {
      if (h.elements.empty()) throw ParseError("header", "property before any element");
      Property p;
      if (tok.size() == 3) {
        auto t = scalar_from_name(tok[1]);
        if (!t) throw ParseError("header", "unknown property type '" + std::string(tok[1]) + "'");
        p.type = *t;
        p.name = std::string(tok[2]);
      } else if (tok.size() == 5 && tok[1] == "list") {
        auto ct = scalar_from_name(tok[2]);
        auto t = scalar_from_name(tok[3]);
        if (!ct || !t) throw ParseError("header", "unknown list property type");
        p.is_list = true;
        p.count_type = *ct;
        p.type = *t;
        p.name = std::string(tok[4]);
      } else {
        throw ParseError("header", "bad property line");
      }
      h.elements.back().properties.push_back(std::move(p));
    } else {
      throw ParseError("header", "unknown keyword '" + std::string(tok[0]) + "'");
    }
  }
  if (!have_format) throw ParseError("header", "missing format line");
  h.body_offset = pos;
  return h;
}

struct VertexLayout {
  int x = -1, y = -1, z = -1, r = -1, g = -1, b = -1;
};

inline VertexLayout locate_attributes(const Element& vertex) {
  VertexLayout l;
  for (int i = 0; i < static_cast<int>(vertex.properties.size()); ++i) {
    const auto& n = vertex.properties[i].name;
    if (n == "x") l.x = i;
    else if (n == "y") l.y = i;
    else if (n == "z") l.z = i;
    else if (n == "red" || n == "r") l.r = i;
    else if (n == "green" || n == "g") l.g = i;
    else if (n == "blue" || n == "b") l.b = i;
  }
  if (l.x < 0 || l.y < 0 || l.z < 0) throw ParseError("missing-attribute", "vertex element lacks x/y/z");
  if (l.r < 0 || l.g < 0 || l.b < 0) throw ParseError("missing-attribute", "vertex element lacks red/green/blue");
  for (int idx : {l.x, l.y, l.z, l.r, l.g, l.b})
    if (vertex.properties[idx].is_list) throw ParseError("header", "list-typed coordinate or color property");
  return l;
}

inline std::uint8_t to_channel(double v) {
  if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v))
    throw ParseError("bad-attribute", "color channel " + std::to_string(v) + " outside 0..255");
  return static_cast<std::uint8_t>(v);
}

inline void assign_vertex(PointCloud& pc, const VertexLayout& l, std::span<const double> values) {
  Vec3 p{values[l.x], values[l.y], values[l.z]};
  for (double c : p)
    if (!std::isfinite(c)) throw ParseError("bad-attribute", "non-finite coordinate");
  pc.positions.push_back(p);
  pc.colors.push_back({to_channel(values[l.r]), to_channel(values[l.g]), to_channel(values[l.b])});
}

class BinaryCursor {
 public:
  BinaryCursor(std::string_view doc, std::size_t offset) : doc_(doc), pos_(offset) {}

  double read(Scalar s) {
    const std::size_t w = scalar_width(s);
    if (pos_ + w > doc_.size()) throw ParseError("truncated", "binary body ended early");
    double v = decode_scalar(s, reinterpret_cast<const unsigned char*>(doc_.data() + pos_));
    pos_ += w;
    return v;
  }

  void skip_property(const Property& p) {
    if (!p.is_list) {
      read(p.type);
      return;
    }
    const double n = read(p.count_type);
    if (n < 0) throw ParseError("header", "negative list count");
    const std::size_t bytes = static_cast<std::size_t>(n) * scalar_width(p.type);
    if (pos_ + bytes > doc_.size()) throw ParseError("truncated", "binary body ended early");
    pos_ += bytes;
  }

 private:
  std::string_view doc_;
  std::size_t pos_;
};

class AsciiCursor {
 public:
  AsciiCursor(std::string_view doc, std::size_t offset) : doc_(doc), pos_(offset) {}

  // Returns the whitespace-separated tokens of the next non-empty line.
  std::vector<std::string_view> next_record() {
    while (pos_ < doc_.size()) {
      std::size_t end = doc_.find('\n', pos_);
      if (end == std::string_view::npos) end = doc_.size();
      std::string_view line = doc_.substr(pos_, end - pos_);
      pos_ = end + 1;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      auto tok = split_ws(line);
      if (!tok.empty()) return tok;
    }
    throw ParseError("truncated", "ascii body ended early");
  }

 private:
  std::string_view doc_;
  std::size_t pos_;
};

inline double parse_number(std::string_view t) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw ParseError("bad-attribute", "cannot parse number '" + std::string(t) + "'");
  return v;
}

}  // namespace detail

/// Parses an ascii or binary-little-endian PLY document. Only the vertex
/// element is decoded; other elements are skipped, trailing bytes ignored.
inline PointCloud parse_ply(std::string_view doc, std::string name = {}) {
  using namespace detail;
  const Header h = parse_header(doc);

  std::size_t vertex_idx = h.elements.size();
  for (std::size_t i = 0; i < h.elements.size(); ++i)
    if (h.elements[i].name == "vertex") {
      vertex_idx = i;
      break;
    }
  if (vertex_idx == h.elements.size()) throw ParseError("header", "no vertex element");
  const Element& vertex = h.elements[vertex_idx];
  const VertexLayout layout = locate_attributes(vertex);

  PointCloud pc;
  pc.name = std::move(name);
  pc.positions.reserve(vertex.count);
  pc.colors.reserve(vertex.count);
  std::vector<double> values(vertex.properties.size(), 0.0);

  if (h.encoding == Encoding::binary_little_endian) {
    BinaryCursor cur(doc, h.body_offset);
    for (std::size_t e = 0; e < vertex_idx; ++e)
      for (std::size_t n = 0; n < h.elements[e].count; ++n)
        for (const auto& p : h.elements[e].properties) cur.skip_property(p);
    for (std::size_t n = 0; n < vertex.count; ++n) {
      for (std::size_t p = 0; p < vertex.properties.size(); ++p) {
        const auto& prop = vertex.properties[p];
        if (prop.is_list) cur.skip_property(prop);
        else values[p] = cur.read(prop.type);
      }
      assign_vertex(pc, layout, values);
    }
  } else {
    AsciiCursor cur(doc, h.body_offset);
    for (std::size_t e = 0; e < vertex_idx; ++e)
      for (std::size_t n = 0; n < h.elements[e].count; ++n) cur.next_record();
    for (std::size_t n = 0; n < vertex.count; ++n) {
      auto tok = cur.next_record();
      std::size_t t = 0;
      for (std::size_t p = 0; p < vertex.properties.size(); ++p) {
        const auto& prop = vertex.properties[p];
        if (t >= tok.size()) throw ParseError("truncated", "vertex record " + std::to_string(n) + " is short");
        if (prop.is_list) {
          const double cnt = parse_number(tok[t++]);
          t += static_cast<std::size_t>(cnt);
          continue;
        }
        values[p] = parse_number(tok[t++]);
        if (prop.type == Scalar::f32) values[p] = static_cast<float>(values[p]);
      }
      assign_vertex(pc, layout, values);
    }
  }
  if (pc.positions.empty()) throw ParseError("header", "vertex element is empty");
  return pc;
}

/// Serializes with float32 coordinates and uchar colors. Binary output
/// reparses bit-exactly for coordinates that are representable as float.
inline std::string write_ply(const PointCloud& pc, Encoding enc = Encoding::binary_little_endian) {
  validate(pc);
  std::ostringstream os;
  os << "ply\n"
     << "format " << (enc == Encoding::ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
     << "element vertex " << pc.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n"
     << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
     << "end_header\n";
  std::string out = os.str();
  if (enc == Encoding::binary_little_endian) {
    constexpr std::size_t record = 3 * sizeof(float) + 3;
    const std::size_t base = out.size();
    out.resize(base + record * pc.size());
    char* dst = out.data() + base;
    for (std::size_t i = 0; i < pc.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        const float f = static_cast<float>(pc.positions[i][c]);
        std::memcpy(dst, &f, sizeof f);
        dst += sizeof f;
      }
      for (int c = 0; c < 3; ++c) *dst++ = static_cast<char>(pc.colors[i][c]);
    }
  } else {
    std::ostringstream body;
    body << std::setprecision(std::numeric_limits<float>::max_digits10);
    for (std::size_t i = 0; i < pc.size(); ++i) {
      const auto& p = pc.positions[i];
      const auto& c = pc.colors[i];
      body << static_cast<float>(p[0]) << ' ' << static_cast<float>(p[1]) << ' ' << static_cast<float>(p[2]) << ' '
           << int(c[0]) << ' ' << int(c[1]) << ' ' << int(c[2]) << '\n';
    }
    out += body.str();
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("io", "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline PointCloud load_ply(const std::string& path) { return parse_ply(read_file(path), path); }

inline void save_ply(const std::string& path, const PointCloud& pc, Encoding enc = Encoding::binary_little_endian) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("io", "cannot write '" + path + "'");
  const std::string doc = write_ply(pc, enc);
  out.write(doc.data(), static_cast<std::streamsize>(doc.size()));
}

}  // namespace pcqa::ply
