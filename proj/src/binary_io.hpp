#pragma once

// Little-endian primitive readers/writers shared by the trajectory and
// checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "mcdi/errors.hpp"

namespace mcdi::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::string_view bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void put_doubles(const double* data, std::size_t n) {
    const auto* p = reinterpret_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n * sizeof(double));
  }

  void write_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw Error("write failed for " + path.string());
  }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string() + " for reading");
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  template <typename T>
  T get(std::string_view field) {
    require(sizeof(T), field);
    T value;
    std::memcpy(&value, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_bytes(std::size_t n, std::string_view field) {
    require(n, field);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void get_doubles(double* out, std::size_t n, std::string_view field) {
    require(n * sizeof(double), field);
    std::memcpy(out, buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  [[noreturn]] void fail(std::string_view field, const std::string& what) const {
    throw FormatError("field '" + std::string(field) + "' at offset " +
                      std::to_string(pos_) + ": " + what);
  }

 private:
  void require(std::size_t n, std::string_view field) const {
    if (n > remaining()) {
      fail(field, "truncated (need " + std::to_string(n) + " bytes, " +
                      std::to_string(remaining()) + " left)");
    }
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace mcdi::io
