#include "mfrflow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mfrflow {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(std::string bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated checkpoint: " + origin_);
  }

  std::string bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
    for (Index d : e.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : e.value.values()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open checkpoint for writing: " + path.string());
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw FormatError("failed writing checkpoint: " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(is), {}), path.string());
  if (r.take(4) != std::string(kCheckpointMagic, 4)) {
    throw FormatError("bad checkpoint magic in " + path.string());
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<NamedTensor> entries;
  while (!r.done()) {
    NamedTensor e;
    e.name = r.take(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank in checkpoint");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32();
      if (d == 0) throw FormatError("zero dimension in checkpoint tensor '" + e.name + "'");
      shape.push_back(d);
    }
    Tensor<float> t(shape);
    for (float& f : t.values()) f = std::bit_cast<float>(r.u32());
    e.value = std::move(t);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace mfrflow
