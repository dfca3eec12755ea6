// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// RXCK named-tensor archive (little-endian):
//   "RXCK" | u32 version=1 | u32 entry count
//   per entry: u32 name length | UTF-8 name | u32 rank | rank x u32 dims
//              | prod(dims) f32 values

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "featrec/autodiff/tensor.hpp"
#include "featrec/common.hpp"

namespace featrec::ad {

inline constexpr char kRxckMagic[4] = {'R', 'X', 'C', 'K'};
inline constexpr std::uint32_t kRxckVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

class Checkpoint {
 public:
  void put(std::string name, Tensor<float> t) {
    for (auto& e : entries_)
      if (e.name == name) {
        e.tensor = std::move(t);
        return;
      }
    entries_.push_back({std::move(name), std::move(t)});
  }

  template <typename T>
  void put_params(const ParameterSet<T>& params) {
    for (const auto& p : params) put(p->name, p->value.template cast<float>());
  }

  const Tensor<float>* find(std::string_view name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }
  const Tensor<float>& at(std::string_view name) const {
    const auto* t = find(name);
    if (!t) fail("checkpoint has no entry '", name, "'");
    return *t;
  }

  // Copies every matching entry into `params`; shapes must agree. Returns the
  // number of parameters loaded.
  template <typename T>
  std::size_t load_into(ParameterSet<T>& params, bool require_all = true) const {
    std::size_t loaded = 0;
    for (auto& p : params) {
      const auto* t = find(p->name);
      if (!t) {
        if (require_all) fail("checkpoint is missing parameter '", p->name, "'");
        continue;
      }
      if (t->shape != p->value.shape)
        fail("checkpoint entry '", p->name, "' has shape ", shape_str(t->shape),
             ", expected ", shape_str(p->value.shape));
      p->value = t->template cast<T>();
      ++loaded;
    }
    return loaded;
  }

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::string encode() const {
    ByteWriter w;
    w.put_bytes(kRxckMagic, 4);
    w.put<std::uint32_t>(kRxckVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
      w.put_bytes(e.name.data(), e.name.size());
      w.put<std::uint32_t>(static_cast<std::uint32_t>(e.tensor.rank()));
      for (auto d : e.tensor.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
      w.put_bytes(e.tensor.data.data(), e.tensor.size() * sizeof(float));
    }
    return w.bytes();
  }

  static Checkpoint decode(std::string_view bytes, std::string what = "rxck") {
    ByteReader r(bytes, std::move(what));
    char magic[4];
    r.get_bytes(magic, 4);
    if (std::memcmp(magic, kRxckMagic, 4) != 0) fail(r.what(), ": bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kRxckVersion) fail(r.what(), ": unsupported version ", version);
    const auto count = r.get<std::uint32_t>();
    Checkpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto len = r.get<std::uint32_t>();
      std::string name(len, '\0');
      r.get_bytes(name.data(), len);
      const auto rank = r.get<std::uint32_t>();
      if (rank == 0 || rank > 3) fail(r.what(), ": entry '", name, "' has rank ", rank);
      Shape shape(rank);
      for (auto& d : shape) d = r.get<std::uint32_t>();
      Tensor<float> t(shape);
      r.get_bytes(t.data.data(), t.size() * sizeof(float));
      ck.entries_.push_back({std::move(name), std::move(t)});
    }
    if (r.remaining() != 0) fail(r.what(), ": ", r.remaining(), " unexpected trailing bytes");
    return ck;
  }

  void save(const std::filesystem::path& path) const { write_file_atomic(path, encode()); }
  static Checkpoint load(const std::filesystem::path& path) {
    return decode(read_file_bytes(path), path.string());
  }

 private:
  std::vector<NamedTensor> entries_;
};

}  // namespace featrec::ad
