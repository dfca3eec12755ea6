// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: an INI file with one section per pipeline stage.
//
//   [data]     catalog, interactions, token_embeddings, eol_token_embeddings,
//              text_source, texts, field_order, min_length
//   [pooling]  strategy
//   [adapter]  architecture, pca, d, d_pca, experts, pq_subspaces,
//              pq_centroids, pq_iterations, pq_restarts, seed
//   [fusion]   strategy, align_weight, id_checkpoint
//   [sasrec]   max_len, blocks, heads, dropout, lr, batch_size, epochs,
//              patience, loss
//   [eval]     seeds, negatives, valid_users
//
// Unknown sections or keys are errors. Relative paths resolve against the
// config file's directory. Every key can be overridden from the environment
// as FEATREC_<SECTION>_<KEY> (upper case), applied after the file.

#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "featrec/adapters.hpp"
#include "featrec/catalog.hpp"
#include "featrec/common.hpp"
#include "featrec/embedding_io.hpp"
#include "featrec/fusion.hpp"
#include "featrec/seqrec.hpp"

namespace featrec {

struct DataConfig {
  std::filesystem::path catalog;
  std::filesystem::path interactions;
  std::filesystem::path token_embeddings;
  std::filesystem::path eol_token_embeddings;  // optional; used by eol pooling
  TextSource text_source = TextSource::kSac;
  std::filesystem::path texts;  // enhanced texts file for non-SAC sources
  std::vector<std::string> field_order;  // empty = catalog order
  std::size_t min_length = 5;
};

struct RunConfig {
  DataConfig data;
  Pooling pooling = Pooling::kMean;
  AdapterSpec adapter;  // input_dim is filled from the pooled table
  std::uint64_t adapter_seed = 42;
  FusionSpec fusion;
  std::filesystem::path id_checkpoint;  // empty = pretrain one
  SasrecConfig sasrec;
  std::vector<std::uint64_t> seeds{kDefaultSeeds.begin(), kDefaultSeeds.end()};
  std::size_t negatives = kDefaultNegatives;
  std::size_t valid_users = 0;  // 0 = all

  void set(const std::string& dotted_key, const std::string& value,
           const std::filesystem::path& base_dir = {});
  std::string get(const std::string& dotted_key) const;

  // Canonical text: every key in fixed order. Parsing it back yields an
  // equal config.
  std::string serialize() const;
  std::string digest() const { return digest_string(serialize()); }
  void validate() const;
};

namespace detail {

struct ConfigKey {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::filesystem::path&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline bool parse_bool(const std::string& v, const std::string& what) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(what, ": expected a boolean, got '", v, "'");
}

inline std::size_t parse_size(const std::string& v, const std::string& what) {
  const auto n = parse_int(v, what);
  if (n < 0) fail(what, ": must be non-negative, got ", n);
  return static_cast<std::size_t>(n);
}

// Shortest text that parses back to exactly `v`.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::filesystem::path resolve(const std::string& v, const std::filesystem::path& base) {
  if (v.empty()) return {};
  std::filesystem::path p(v);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

inline std::string join(const std::vector<std::string>& xs) {
  std::string s;
  for (const auto& x : xs) s += (s.empty() ? "" : ",") + x;
  return s;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  for (const auto& part : split(v, ',')) {
    auto t = std::string(trim(part));
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

#define FEATREC_SIZE_KEY(sec, name, field)                                                    \
  ConfigKey {                                                                                 \
    sec, #name, [](RunConfig& c, const std::string& v, const auto&) {                         \
      c.field = parse_size(v, sec "." #name);                                                 \
    },                                                                                        \
        [](const RunConfig& c) { return std::to_string(c.field); }                            \
  }
#define FEATREC_PATH_KEY(sec, name, field)                                                    \
  ConfigKey {                                                                                 \
    sec, #name, [](RunConfig& c, const std::string& v, const std::filesystem::path& base) {   \
      c.field = resolve(v, base);                                                             \
    },                                                                                        \
        [](const RunConfig& c) { return c.field.string(); }                                   \
  }

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      FEATREC_PATH_KEY("data", catalog, data.catalog),
      FEATREC_PATH_KEY("data", interactions, data.interactions),
      FEATREC_PATH_KEY("data", token_embeddings, data.token_embeddings),
      FEATREC_PATH_KEY("data", eol_token_embeddings, data.eol_token_embeddings),
      {"data", "text_source",
       [](RunConfig& c, const std::string& v, const auto&) { c.data.text_source = parse_text_source(v); },
       [](const RunConfig& c) { return std::string(to_string(c.data.text_source)); }},
      FEATREC_PATH_KEY("data", texts, data.texts),
      {"data", "field_order",
       [](RunConfig& c, const std::string& v, const auto&) { c.data.field_order = split_list(v); },
       [](const RunConfig& c) { return join(c.data.field_order); }},
      FEATREC_SIZE_KEY("data", min_length, data.min_length),
      {"pooling", "strategy",
       [](RunConfig& c, const std::string& v, const auto&) { c.pooling = parse_pooling(v); },
       [](const RunConfig& c) { return std::string(to_string(c.pooling)); }},
      {"adapter", "architecture",
       [](RunConfig& c, const std::string& v, const auto&) { c.adapter.architecture = parse_architecture(v); },
       [](const RunConfig& c) { return std::string(to_string(c.adapter.architecture)); }},
      {"adapter", "pca",
       [](RunConfig& c, const std::string& v, const auto&) {
         c.adapter.use_pca_preprocess = parse_bool(v, "adapter.pca");
       },
       [](const RunConfig& c) { return std::string(c.adapter.use_pca_preprocess ? "true" : "false"); }},
      FEATREC_SIZE_KEY("adapter", d, adapter.d),
      FEATREC_SIZE_KEY("adapter", d_pca, adapter.d_pca),
      FEATREC_SIZE_KEY("adapter", experts, adapter.experts),
      FEATREC_SIZE_KEY("adapter", pq_subspaces, adapter.pq.subspaces),
      FEATREC_SIZE_KEY("adapter", pq_centroids, adapter.pq.centroids),
      FEATREC_SIZE_KEY("adapter", pq_iterations, adapter.pq.iterations),
      FEATREC_SIZE_KEY("adapter", pq_restarts, adapter.pq.restarts),
      {"adapter", "seed",
       [](RunConfig& c, const std::string& v, const auto&) {
         c.adapter_seed = parse_size(v, "adapter.seed");
       },
       [](const RunConfig& c) { return std::to_string(c.adapter_seed); }},
      {"fusion", "strategy",
       [](RunConfig& c, const std::string& v, const auto&) { c.fusion.strategy = parse_fusion(v); },
       [](const RunConfig& c) { return std::string(to_string(c.fusion.strategy)); }},
      {"fusion", "align_weight",
       [](RunConfig& c, const std::string& v, const auto&) {
         if (v.empty()) c.fusion.align_weight.reset();
         else c.fusion.align_weight = parse_double(v, "fusion.align_weight");
       },
       [](const RunConfig& c) {
         return c.fusion.align_weight ? fmt_double(*c.fusion.align_weight) : std::string();
       }},
      FEATREC_PATH_KEY("fusion", id_checkpoint, id_checkpoint),
      FEATREC_SIZE_KEY("sasrec", max_len, sasrec.max_len),
      FEATREC_SIZE_KEY("sasrec", blocks, sasrec.blocks),
      FEATREC_SIZE_KEY("sasrec", heads, sasrec.heads),
      {"sasrec", "dropout",
       [](RunConfig& c, const std::string& v, const auto&) { c.sasrec.dropout = parse_double(v, "sasrec.dropout"); },
       [](const RunConfig& c) { return fmt_double(c.sasrec.dropout); }},
      {"sasrec", "lr",
       [](RunConfig& c, const std::string& v, const auto&) { c.sasrec.lr = parse_double(v, "sasrec.lr"); },
       [](const RunConfig& c) { return fmt_double(c.sasrec.lr); }},
      FEATREC_SIZE_KEY("sasrec", batch_size, sasrec.batch_size),
      FEATREC_SIZE_KEY("sasrec", epochs, sasrec.epochs),
      FEATREC_SIZE_KEY("sasrec", patience, sasrec.patience),
      {"sasrec", "loss",
       [](RunConfig& c, const std::string& v, const auto&) { c.sasrec.loss = parse_seq_loss(v); },
       [](const RunConfig& c) { return std::string(to_string(c.sasrec.loss)); }},
      {"eval", "seeds",
       [](RunConfig& c, const std::string& v, const auto&) {
         c.seeds.clear();
         for (const auto& s : split_list(v)) c.seeds.push_back(parse_size(s, "eval.seeds"));
       },
       [](const RunConfig& c) {
         std::vector<std::string> s;
         for (auto x : c.seeds) s.push_back(std::to_string(x));
         return join(s);
       }},
      FEATREC_SIZE_KEY("eval", negatives, negatives),
      FEATREC_SIZE_KEY("eval", valid_users, valid_users),
  };
  return keys;
}

#undef FEATREC_SIZE_KEY
#undef FEATREC_PATH_KEY

inline const ConfigKey& find_key(const std::string& dotted) {
  const auto dot = dotted.find('.');
  if (dot == std::string::npos) fail("config key '", dotted, "' must be section.key");
  const auto sec = dotted.substr(0, dot), key = dotted.substr(dot + 1);
  for (const auto& k : config_keys())
    if (sec == k.section && key == k.key) return k;
  fail("unknown config key '", dotted, "'");
}

inline std::string env_name(const ConfigKey& k) {
  std::string n = std::string("FEATREC_") + k.section + "_" + k.key;
  for (auto& ch : n) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return n;
}

}  // namespace detail

inline void RunConfig::set(const std::string& dotted_key, const std::string& value,
                           const std::filesystem::path& base_dir) {
  detail::find_key(dotted_key).set(*this, std::string(trim(value)), base_dir);
}

inline std::string RunConfig::get(const std::string& dotted_key) const {
  return detail::find_key(dotted_key).get(*this);
}

inline std::string RunConfig::serialize() const {
  std::string out, section;
  for (const auto& k : detail::config_keys()) {
    if (section != k.section) {
      if (!section.empty()) out += "\n";
      section = k.section;
      out += "[" + section + "]\n";
    }
    out += std::string(k.key) + " = " + k.get(*this) + "\n";
  }
  return out;
}

inline void RunConfig::validate() const {
  if (seeds.empty()) fail("config: eval.seeds is empty");
  if (data.text_source != TextSource::kSac && data.texts.empty())
    fail("config: text_source=", to_string(data.text_source), " needs data.texts");
  (void)fusion.resolved();
  if (adapter.d == 0) fail("config: adapter.d must be positive");
  sasrec.validate(adapter.d);
}

// Parses INI text. `base_dir` anchors relative paths.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {},
                              bool apply_env = true) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail("config: ", e.message(), " (line ", e.line(), ")");
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      fail("config: key '", section, "' appears outside any section");
    for (const auto& [key, value] : body) {
      const std::string dotted = section + "." + key;
      bool known = false;
      for (const auto& k : detail::config_keys()) known |= section == k.section && key == k.key;
      if (!known) fail("config: unknown key '", dotted, "'");
      cfg.set(dotted, value.data(), base_dir);
    }
  }
  if (apply_env)
    for (const auto& k : detail::config_keys())
      if (const char* v = std::getenv(detail::env_name(k).c_str()))
        k.set(cfg, std::string(trim(v)), std::filesystem::current_path());
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path, bool apply_env = true) {
  try {
    return parse_config(read_file_bytes(path), std::filesystem::absolute(path).parent_path(), apply_env);
  } catch (const Error& e) {
    fail(path.string(), ": ", e.what());
  }
}

// The best-performing composition from the ablations: SAC text, mean
// pooling, MoE adapter over PCA-reduced inputs, semantic rows replacing ID
// embeddings. Embeddings come from an externally produced file.
inline RunConfig best_config() {
  RunConfig c;
  c.data.text_source = TextSource::kSac;
  c.pooling = Pooling::kMean;
  c.adapter.architecture = Architecture::kMoe;
  c.adapter.use_pca_preprocess = true;
  c.fusion.strategy = FusionStrategy::kReplace;
  return c;
}

// Small-model settings sized for the bundled synthetic dataset on one core.
inline void apply_desk_scale(RunConfig& c) {
  c.adapter.d = 32;
  c.adapter.experts = 8;
  c.sasrec.max_len = 20;
  c.sasrec.epochs = 20;
  c.sasrec.patience = 5;
}

}  // namespace featrec
