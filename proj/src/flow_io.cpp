#include "mfrflow/flow_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <string>

namespace mfrflow {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

}  // namespace

void write_flo(const std::filesystem::path& path, const FlowField<float>& flow) {
  const Index h = flow.height(), w = flow.width();
  std::string out = "PIEH";
  put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(w)));
  put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(h)));
  out.reserve(12 + static_cast<std::size_t>(h * w * 8));
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      put_u32(out, std::bit_cast<std::uint32_t>(flow.data(0, i, j)));
      put_u32(out, std::bit_cast<std::uint32_t>(flow.data(1, i, j)));
    }
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw FormatError("failed writing " + path.string());
}

FlowField<float> read_flo(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  const std::string b(std::istreambuf_iterator<char>(is), {});
  if (b.size() < 12) throw FormatError("truncated .flo header: " + path.string());
  if (b.compare(0, 4, "PIEH") != 0) throw FormatError("bad .flo magic in " + path.string());
  const auto w = static_cast<std::int32_t>(get_u32(b, 4));
  const auto h = static_cast<std::int32_t>(get_u32(b, 8));
  if (w < 1 || h < 1) throw FormatError("invalid .flo dimensions in " + path.string());
  const std::size_t need = 12 + static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 8;
  if (b.size() < need) throw FormatError("truncated .flo payload: " + path.string());
  if (b.size() > need) throw FormatError("trailing bytes in .flo: " + path.string());
  Tensor<float> data({2, h, w});
  std::size_t at = 12;
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      data(0, i, j) = std::bit_cast<float>(get_u32(b, at));
      data(1, i, j) = std::bit_cast<float>(get_u32(b, at + 4));
      at += 8;
    }
  }
  return FlowField<float>(std::move(data));
}

}  // namespace mfrflow
