#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace smae::io {

// All on-disk formats in this project are little-endian with explicit
// byte encoding, so files are portable across hosts.

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path)
      : out_(path, std::ios::binary), path_(path.string()) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path_);
  }

  void magic(const char tag[4]) { raw(tag, 4); }

  void u8(uint8_t v) { raw(&v, 1); }

  void u32(uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    raw(b, 4);
  }

  void u64(uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    raw(b, 8);
  }

  void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }

  void f32_array(std::span<const float> v) {
    for (float x : v) f32(x);
  }
  void f64_array(std::span<const double> v) {
    for (double x : v) f64(x);
  }

  // u32 length prefix followed by the bytes.
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("write failed: " + path_);
  }

 private:
  void raw(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw std::runtime_error("write failed: " + path_);
  }

  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path)
      : in_(path, std::ios::binary), path_(path.string()) {
    if (!in_) throw std::runtime_error("cannot open for reading: " + path_);
  }

  void expect_magic(const char tag[4]) {
    char got[4];
    raw(got, 4);
    if (std::memcmp(got, tag, 4) != 0)
      throw std::runtime_error("bad magic in " + path_ + ": expected '" +
                               std::string(tag, 4) + "', got '" + std::string(got, 4) + "'");
  }

  uint8_t u8() {
    unsigned char b;
    raw(&b, 1);
    return b;
  }

  uint32_t u32() {
    unsigned char b[4];
    raw(b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }

  uint64_t u64() {
    unsigned char b[8];
    raw(b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  void f32_array(std::span<float> v) {
    for (float& x : v) x = f32();
  }
  void f64_array(std::span<double> v) {
    for (double& x : v) x = f64();
  }

  std::string str() {
    uint32_t n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  bool at_eof() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  void raw(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n)
      throw std::runtime_error("truncated file: " + path_);
  }

  std::ifstream in_;
  std::string path_;
};

}  // namespace smae::io
