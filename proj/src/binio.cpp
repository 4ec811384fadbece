#include "frshield/binio.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "frshield/error.hpp"

namespace frshield::binio {

Writer::Writer(std::string_view magic, std::uint32_t version) {
  buf_.insert(buf_.end(), magic.begin(), magic.end());
  u32(version);
}

void Writer::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::str(std::string_view s) {
  u64(s.size());
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void Writer::f32s(std::span<const float> v) {
  u64(v.size());
  for (float x : v) f32(x);
}

void Writer::f64s(std::span<const double> v) {
  u64(v.size());
  for (double x : v) f64(x);
}

void Writer::u64s(std::span<const std::uint64_t> v) {
  u64(v.size());
  for (auto x : v) u64(x);
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Reader::Reader(std::vector<std::uint8_t> bytes, std::string_view magic, std::uint32_t max_version)
    : buf_(std::move(bytes)), magic_(magic) {
  const auto* m = take(magic.size());
  if (std::memcmp(m, magic.data(), magic.size()) != 0)
    fail(ErrorKind::Format, "bad magic: expected " + magic_);
  version_ = u32();
  if (version_ == 0 || version_ > max_version)
    fail(ErrorKind::Format, magic_ + ": unsupported format version " + std::to_string(version_));
}

Reader Reader::open(const std::filesystem::path& path, std::string_view magic,
                    std::uint32_t max_version) {
  return Reader(read_file(path), magic, max_version);
}

const std::uint8_t* Reader::take(std::size_t n) {
  if (buf_.size() - pos_ < n) fail(ErrorKind::Format, magic_ + ": truncated container");
  const auto* p = buf_.data() + pos_;
  pos_ += n;
  return p;
}

std::uint8_t Reader::u8() { return *take(1); }

std::uint32_t Reader::u32() {
  const auto* p = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t Reader::u64() {
  const auto* p = take(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }
double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::str() {
  const auto n = u64();
  const auto* p = take(n);
  return {reinterpret_cast<const char*>(p), n};
}

std::vector<float> Reader::f32s() {
  const auto n = u64();
  if (n > (buf_.size() - pos_) / 4) fail(ErrorKind::Format, magic_ + ": truncated container");
  std::vector<float> v(n);
  for (auto& x : v) x = f32();
  return v;
}

std::vector<double> Reader::f64s() {
  const auto n = u64();
  if (n > (buf_.size() - pos_) / 8) fail(ErrorKind::Format, magic_ + ": truncated container");
  std::vector<double> v(n);
  for (auto& x : v) x = f64();
  return v;
}

std::vector<std::uint64_t> Reader::u64s() {
  const auto n = u64();
  if (n > (buf_.size() - pos_) / 8) fail(ErrorKind::Format, magic_ + ": truncated container");
  std::vector<std::uint64_t> v(n);
  for (auto& x : v) x = u64();
  return v;
}

void Reader::expect_end() const {
  if (pos_ != buf_.size()) fail(ErrorKind::Format, magic_ + ": trailing bytes in container");
}

}  // namespace frshield::binio
