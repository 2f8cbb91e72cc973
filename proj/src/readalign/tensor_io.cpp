#include "readalign/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "readalign/error.hpp"

namespace readalign {
namespace {

constexpr char kTensorMagic[4] = {'R', 'A', 'T', 'N'};
constexpr char kMaskMagic[4] = {'R', 'M', 'S', 'K'};
constexpr std::uint32_t kMaxRank = 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const std::string& source)
      : bytes_(bytes), source_(source) {}

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void expect_magic(const char (&magic)[4], const char* what) {
    need(4, what);
    if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0)
      fail(ErrorKind::ParseError, source_ + ": bad " + what + " magic at byte " + std::to_string(pos_));
    pos_ += 4;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  void f32s(std::vector<float>& out, std::size_t count) {
    need(count * 4, "tensor payload");
    out.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t v = 0;
      for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes_[pos_ + 4 * i + b]) << (8 * b);
      out[i] = std::bit_cast<float>(v);
    }
    pos_ += count * 4;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n)
      fail(ErrorKind::ParseError, source_ + ": truncated " + what + " at byte " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

Tensor read_tensor_body(Reader& r, const std::string& source) {
  r.expect_magic(kTensorMagic, "tensor");
  Tensor t;
  const std::uint32_t rank = r.u32("rank");
  if (rank == 0 || rank > kMaxRank)
    fail(ErrorKind::ParseError, source + ": tensor rank " + std::to_string(rank) + " outside 1.." +
                                    std::to_string(kMaxRank));
  t.dims.resize(rank);
  std::uint64_t count = 1;
  for (auto& d : t.dims) {
    d = r.u32("dimension header");
    count *= d;
  }
  if (count * 4 > r.remaining())
    fail(ErrorKind::ParseError, source + ": header declares " + std::to_string(count) +
                                    " values but payload is shorter");
  r.f32s(t.values, static_cast<std::size_t>(count));
  return t;
}

}  // namespace

std::size_t Tensor::element_count() const noexcept {
  std::size_t n = dims.empty() ? 0 : 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.dims.empty() || t.dims.size() > kMaxRank)
    fail(ErrorKind::InvalidArgument, "tensor rank must be 1..4");
  if (t.values.size() != t.element_count())
    fail(ErrorKind::InvalidArgument, "tensor value count does not match dimensions");
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * t.dims.size() + 4 * t.values.size());
  out.insert(out.end(), kTensorMagic, kTensorMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put_u32(out, d);
  for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

std::vector<std::uint8_t> encode_masked_tensor(const Tensor& t, std::span<const std::uint8_t> mask) {
  auto out = encode_tensor(t);
  out.insert(out.end(), kMaskMagic, kMaskMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(mask.size()));
  std::vector<std::uint8_t> packed((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  out.insert(out.end(), packed.begin(), packed.end());
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& source) {
  Reader r(bytes, source);
  Tensor t = read_tensor_body(r, source);
  if (!r.at_end())
    fail(ErrorKind::ParseError, source + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return t;
}

MaskedTensor decode_masked_tensor(std::span<const std::uint8_t> bytes, const std::string& source) {
  Reader r(bytes, source);
  MaskedTensor mt;
  mt.tensor = read_tensor_body(r, source);
  r.expect_magic(kMaskMagic, "mask");
  const std::uint32_t count = r.u32("mask count");
  auto packed = r.take((count + 7) / 8, "mask bits");
  mt.mask.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) mt.mask[i] = (packed[i / 8] >> (i % 8)) & 1u;
  if (!r.at_end())
    fail(ErrorKind::ParseError, source + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return mt;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFile, path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::string read_file_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFile, path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IOError, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::IOError, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::IOError, "rename " + tmp.string() + ": " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Tensor read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file_bytes(path), path.string());
}

MaskedTensor read_masked_tensor(const std::filesystem::path& path) {
  return decode_masked_tensor(read_file_bytes(path), path.string());
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_file_atomic(path, encode_tensor(t));
}

void write_masked_tensor(const std::filesystem::path& path, const Tensor& t,
                         std::span<const std::uint8_t> mask) {
  write_file_atomic(path, encode_masked_tensor(t, mask));
}

}  // namespace readalign
