#include "mfrflow/image_io.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

namespace mfrflow {

namespace {

void write_netpbm(const std::filesystem::path& path, const char* magic, Index h, Index w,
                  const std::uint8_t* data, Index n) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  os << magic << '\n' << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(data), n);
  if (!os) throw FormatError("failed writing " + path.string());
}

Image8 read_netpbm(const std::filesystem::path& path, const std::string& magic, Index channels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string bytes(std::istreambuf_iterator<char>(is), {});
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_space();
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != magic) throw FormatError("expected " + magic + " image: " + path.string());
  Index w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(token());
    h = std::stol(token());
    maxval = std::stol(token());
  } catch (const std::exception&) {
    throw FormatError("malformed header in " + path.string());
  }
  if (w < 1 || h < 1 || maxval != 255) throw FormatError("unsupported image header in " + path.string());
  ++pos;  // single whitespace before raster
  const Index n = w * h * channels;
  if (bytes.size() < pos + static_cast<std::size_t>(n)) throw FormatError("truncated image " + path.string());
  Image8 out = channels == 3 ? Image8({h, w, 3}) : Image8({h, w});
  std::copy_n(bytes.data() + pos, n, reinterpret_cast<char*>(out.data()));
  return out;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image8& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) throw ShapeError("write_ppm: image must be [H,W,3]");
  write_netpbm(path, "P6", rgb.dim(0), rgb.dim(1), rgb.data(), rgb.size());
}

Image8 read_ppm(const std::filesystem::path& path) { return read_netpbm(path, "P6", 3); }

void write_pgm(const std::filesystem::path& path, const Image8& gray) {
  if (gray.rank() != 2) throw ShapeError("write_pgm: image must be [H,W]");
  write_netpbm(path, "P5", gray.dim(0), gray.dim(1), gray.data(), gray.size());
}

Image8 read_pgm(const std::filesystem::path& path) { return read_netpbm(path, "P5", 1); }

Image8 mask_to_gray(const Mask& m) {
  Image8 out(m.shape());
  out.array() = (m.array() != 0).template cast<std::uint8_t>() * std::uint8_t{255};
  return out;
}

Mask gray_to_mask(const Image8& g) {
  Mask out(g.shape());
  out.array() = (g.array() >= 128).template cast<std::uint8_t>();
  return out;
}

}  // namespace mfrflow
