#include "ps/image_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ps {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

[[noreturn]] void parse_fail(const std::string& path, size_t offset,
                             const std::string& what) {
  throw std::runtime_error(path + ": parse error at byte " +
                           std::to_string(offset) + ": " + what);
}

// Consumes one whitespace-delimited token starting at `pos`.
std::string next_token(const std::string& buf, size_t& pos,
                       const std::string& path) {
  while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos])))
    ++pos;
  if (pos >= buf.size()) parse_fail(path, pos, "unexpected end of file");
  size_t start = pos;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])))
    ++pos;
  return buf.substr(start, pos - start);
}

}  // namespace

void save_pgm(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> row(img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double v = img.at(x, y);
      v = v < 0 ? 0 : (v > 1 ? 1 : v);
      row[x] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(row.data()), img.width);
  }
}

Image load_pgm(const std::string& path) {
  std::string buf = read_file(path);
  size_t pos = 0;
  std::string magic = next_token(buf, pos, path);
  if (magic != "P5") parse_fail(path, 0, "not a binary PGM (want P5)");
  Image img;
  try {
    img.width = std::stoi(next_token(buf, pos, path));
    img.height = std::stoi(next_token(buf, pos, path));
    int maxval = std::stoi(next_token(buf, pos, path));
    if (maxval != 255) parse_fail(path, pos, "only maxval 255 supported");
  } catch (const std::invalid_argument&) {
    parse_fail(path, pos, "malformed header field");
  }
  if (img.width < 1 || img.height < 1) parse_fail(path, pos, "bad dimensions");
  ++pos;  // single whitespace byte after maxval
  size_t need = static_cast<size_t>(img.width) * img.height;
  if (buf.size() - pos < need) parse_fail(path, pos, "truncated pixel data");
  img.pixels.resize(need);
  for (size_t i = 0; i < need; ++i)
    img.pixels[i] = static_cast<unsigned char>(buf[pos + i]) / 255.0;
  return img;
}

void save_pfm(const std::string& path, const DepthMap& map) {
  static_assert(std::endian::native == std::endian::little);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "Pf\n" << map.width << ' ' << map.height << "\n-1.0\n";
  std::vector<float> row(map.width);
  // PFM scanlines run bottom to top.
  for (int y = map.height - 1; y >= 0; --y) {
    for (int x = 0; x < map.width; ++x)
      row[x] = map.valid_at(x, y) ? static_cast<float>(map.at(x, y)) : 0.0f;
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(sizeof(float)) * map.width);
  }
}

DepthMap load_pfm(const std::string& path) {
  static_assert(std::endian::native == std::endian::little);
  std::string buf = read_file(path);
  size_t pos = 0;
  std::string magic = next_token(buf, pos, path);
  if (magic == "PF") parse_fail(path, 0, "color PFM not supported");
  if (magic != "Pf") parse_fail(path, 0, "not a PFM file (want 'Pf')");
  DepthMap map;
  double scale = 0;
  size_t field_at = pos;
  try {
    field_at = pos;
    map.width = std::stoi(next_token(buf, pos, path));
    field_at = pos;
    map.height = std::stoi(next_token(buf, pos, path));
    field_at = pos;
    scale = std::stod(next_token(buf, pos, path));
  } catch (const std::invalid_argument&) {
    parse_fail(path, field_at, "malformed header field");
  }
  if (map.width < 1 || map.height < 1) parse_fail(path, field_at, "bad dimensions");
  if (scale >= 0)
    parse_fail(path, field_at,
               "big-endian PFM (non-negative scale) not supported");
  ++pos;  // single whitespace byte terminating the header
  size_t need = static_cast<size_t>(map.width) * map.height * sizeof(float);
  if (buf.size() - pos < need) parse_fail(path, pos, "truncated pixel data");
  map.depth.resize(static_cast<size_t>(map.width) * map.height);
  map.valid.resize(map.depth.size());
  for (int y = map.height - 1; y >= 0; --y) {
    for (int x = 0; x < map.width; ++x) {
      float v;
      std::memcpy(&v, buf.data() + pos, sizeof v);
      pos += sizeof v;
      size_t i = static_cast<size_t>(y) * map.width + x;
      map.depth[i] = v;
      map.valid[i] = v != 0.0f ? 1 : 0;
    }
  }
  return map;
}

}  // namespace ps
