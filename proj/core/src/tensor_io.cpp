#include "ngc/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ngc/error.hpp"

namespace ngc {

namespace {

constexpr char kMagic[4] = {'N', 'G', 'C', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }

  void magic() {
    need(4);
    require(std::memcmp(bytes_.data(), kMagic, 4) == 0, ErrorCode::IoError, "bad NGCT magic");
    pos_ += 4;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= bytes_.size(), ErrorCode::IoError, "truncated NGCT payload");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_ngct(const Tensor& t) {
  std::size_t count = 1;
  for (auto d : t.dims) count *= d;
  require(count == t.data.size(), ErrorCode::ShapeError, "tensor data length does not match dims");
  std::string out(kMagic, 4);
  put_u32(out, kNgctVersion);
  put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put_u32(out, d);
  out.reserve(out.size() + 8 * t.data.size());
  for (double v : t.data) put_f64(out, v);
  return out;
}

Tensor decode_ngct(const std::string& bytes) {
  Reader in(bytes);
  in.magic();
  const auto version = in.u32();
  require(version == kNgctVersion, ErrorCode::IoError, "unsupported NGCT version " + std::to_string(version));
  Tensor t;
  t.dims.resize(in.u32());
  std::size_t count = 1;
  for (auto& d : t.dims) {
    d = in.u32();
    count *= d;
  }
  t.data.resize(count);
  for (double& v : t.data) v = in.f64();
  require(in.at_end(), ErrorCode::IoError, "trailing bytes after NGCT payload");
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  const std::string bytes = encode_ngct(t);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorCode::IoError, "write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_ngct(buf.str());
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.assign(m.values().begin(), m.values().end());
  write_tensor(path, t);
}

Matrix read_matrix(const std::filesystem::path& path) {
  Tensor t = read_tensor(path);
  if (t.dims.size() == 1) return Matrix(1, t.dims[0], std::move(t.data));
  require(t.dims.size() == 2, ErrorCode::IoError, path.string() + ": expected a rank-2 tensor");
  return Matrix(t.dims[0], t.dims[1], std::move(t.data));
}

}  // namespace ngc
