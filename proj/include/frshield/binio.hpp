#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace frshield::binio {

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Versioned little-endian container: magic bytes, u32 format version, payload.
class Writer {
 public:
  Writer(std::string_view magic, std::uint32_t version);

  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v);
  void f64(double v);
  void str(std::string_view s);
  void f32s(std::span<const float> v);  // length-prefixed
  void f64s(std::span<const double> v);
  void u64s(std::span<const std::uint64_t> v);

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }
  void save(const std::filesystem::path& path) const { write_file(path, buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  // Throws Format on magic mismatch or a version newer than `max_version`.
  Reader(std::vector<std::uint8_t> bytes, std::string_view magic, std::uint32_t max_version);
  static Reader open(const std::filesystem::path& path, std::string_view magic,
                     std::uint32_t max_version);

  std::uint32_t version() const noexcept { return version_; }

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32();
  double f64();
  std::string str();
  std::vector<float> f32s();
  std::vector<double> f64s();
  std::vector<std::uint64_t> u64s();

  bool at_end() const noexcept { return pos_ == buf_.size(); }
  void expect_end() const;

 private:
  const std::uint8_t* take(std::size_t n);

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::uint32_t version_ = 0;
  std::string magic_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace frshield::binio
