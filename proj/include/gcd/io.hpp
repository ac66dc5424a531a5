#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gcd/common.hpp"

namespace gcd {

// FNV-1a 64-bit over raw bytes; used for scene digests.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s) {
  return fnv1a(s.data(), s.size());
}

// Shortest decimal form that round-trips a double bit-exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// --- Binary file primitives. All multi-byte values little-endian. ---

class BinaryWriter {
public:
  explicit BinaryWriter(const std::string& path)
      : out_(path, std::ios::binary) {
    if (!out_) throw ConfigError("cannot open for writing: " + path);
  }

  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void i64(std::int64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void varint(std::uint64_t v) {
    while (v >= 0x80) {
      u8(static_cast<std::uint8_t>(v) | 0x80);
      v >>= 7;
    }
    u8(static_cast<std::uint8_t>(v));
  }
  void str(const std::string& s) {
    varint(s.size());
    bytes(s.data(), s.size());
  }
  void f64_array(const double* p, std::size_t n) { bytes(p, 8 * n); }

  void close() {
    out_.close();
    if (!out_) throw ConfigError("write failure on close");
  }

private:
  std::ofstream out_;
};

class BinaryReader {
public:
  explicit BinaryReader(const std::string& path)
      : in_(path, std::ios::binary) {
    if (!in_) throw ConfigError("cannot open for reading: " + path);
  }

  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw ConfigError("unexpected end of file");
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    bytes(&v, 8);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  std::uint64_t varint() {
    std::uint64_t v = 0;
    int shift = 0;
    while (true) {
      std::uint8_t b = u8();
      v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
      if (!(b & 0x80)) break;
      shift += 7;
      if (shift > 63) throw ConfigError("varint overflow");
    }
    return v;
  }
  std::string str() {
    std::string s(varint(), '\0');
    if (!s.empty()) bytes(s.data(), s.size());
    return s;
  }
  void f64_array(double* p, std::size_t n) { bytes(p, 8 * n); }

  bool at_eof() { return in_.peek() == EOF; }

private:
  std::ifstream in_;
};

inline void expect_magic(BinaryReader& r, const char magic[4],
                         const std::string& what) {
  char m[4];
  r.bytes(m, 4);
  if (std::memcmp(m, magic, 4) != 0)
    throw ConfigError("bad magic, not a " + what + " file");
}

// --- Line/token oriented text files (scene, experiment spec, configs). ---

// Splits a text file into lines of whitespace-separated tokens; '#' starts a
// comment, blank lines skipped.
class TextTokens {
public:
  static TextTokens from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open for reading: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return TextTokens(ss.str());
  }

  explicit TextTokens(const std::string& text) {
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream ls(line);
      std::vector<std::string> toks;
      std::string t;
      while (ls >> t) toks.push_back(t);
      if (!toks.empty()) lines_.push_back(std::move(toks));
    }
  }

  std::size_t size() const { return lines_.size(); }
  const std::vector<std::string>& line(std::size_t i) const {
    return lines_[i];
  }

private:
  std::vector<std::vector<std::string>> lines_;
};

inline double parse_double(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError("bad number: '" + s + "'");
  return v;
}

inline std::int64_t parse_int(const std::string& s) {
  char* end = nullptr;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError("bad integer: '" + s + "'");
  return v;
}

}  // namespace gcd
