// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared plumbing: error type, seeded rng streams, content digests,
// little-endian binary helpers and atomic file writes.

#pragma once

#include <openssl/evp.h>

#include <unistd.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace featrec {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename... Args>
[[noreturn]] inline void fail(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  throw Error(os.str());
}

// Non-fatal diagnostics go through a replaceable sink (stderr by default).
using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  return sink;
}

template <typename... Args>
inline void warn(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  warning_sink()(os.str());
}

// ---------------------------------------------------------------------------
// Random streams. Every consumer derives its own engine from (seed, tag, ...)
// so that adding a draw in one stream never shifts another.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t salt = 0) {
  return splitmix64(splitmix64(seed ^ fnv1a(tag)) + splitmix64(salt));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::string_view tag,
                    std::uint64_t salt = 0) {
  return Rng(derive_seed(seed, tag, salt));
}

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection, independent of the standard
// library's distribution implementation.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) fail("uniform_index: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

inline double normal01(Rng& rng) {
  // Box-Muller, one normal per two uniforms.
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// ---------------------------------------------------------------------------
// Digests: SHA-256, reported as the first 64 bits in hex.

class Hasher {
 public:
  Hasher() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      fail("sha256 init failed");
  }
  ~Hasher() { EVP_MD_CTX_free(ctx_); }
  Hasher(const Hasher&) = delete;
  Hasher& operator=(const Hasher&) = delete;

  Hasher& update(const void* data, std::size_t n) {
    EVP_DigestUpdate(ctx_, data, n);
    return *this;
  }
  Hasher& update(std::string_view s) {
    const std::uint64_t n = s.size();
    update(&n, sizeof n);
    return update(s.data(), s.size());
  }

  std::string hex64() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md.data(), &len);
    std::ostringstream os;
    for (int i = 0; i < 8; ++i)
      os << std::hex << std::setw(2) << std::setfill('0')
         << static_cast<int>(md[i]);
    return os.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string digest_string(std::string_view s) {
  return Hasher().update(s).hex64();
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string digest_file(const std::filesystem::path& path) {
  return digest_string(read_file_bytes(path));
}

// Writes via a sibling temp file and rename so readers never observe a
// partially written artifact.
inline void write_file_atomic(const std::filesystem::path& path,
                              std::string_view bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  static std::uint64_t counter = 0;
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(++counter);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot write ", tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail("short write to ", tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Little-endian encoding. Hosts are assumed little-endian (checked at
// compile time) so payloads are copied directly.

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what)
      : data_(data), what_(std::move(what)) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  const std::string& what() const { return what_; }

  void need(std::size_t n) const {
    if (remaining() < n)
      fail(what_, ": truncated payload, expected ", pos_ + n,
           " bytes but file has ", data_.size());
  }

 private:
  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline long long parse_int(std::string_view s, std::string_view what) {
  const std::string t = trim(s);
  if (t.empty()) fail(what, ": expected an integer, got empty field");
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(t, &used);
  } catch (const std::exception&) {
    fail(what, ": expected an integer, got '", t, "'");
  }
  if (used != t.size()) fail(what, ": expected an integer, got '", t, "'");
  return v;
}

inline double parse_double(std::string_view s, std::string_view what) {
  const std::string t = trim(s);
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    fail(what, ": expected a number, got '", t, "'");
  }
  if (used != t.size()) fail(what, ": expected a number, got '", t, "'");
  return v;
}

}  // namespace featrec
