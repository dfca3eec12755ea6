// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner. A run is a chain of stages
//
//   ingest -> pool -> fit-adapter -> [pretrain-id] -> train(seed) -> evaluate(seed)
//
// Each stage's artifacts live in <cache>/<stage>/<key>/, where the key hashes
// the stage's inputs: content digests of input files, the config keys the
// stage reads, and the keys of upstream stages. A stage directory is
// published by rename after a `complete` marker is written, so an
// interrupted stage never leaves a directory that looks finished.

#pragma once

#include <chrono>
#include <iomanip>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unistd.h>
#include <vector>

#include <json.hpp>

#include "featrec/config.hpp"
#include "featrec/eval.hpp"
#include "featrec/seqrec.hpp"

namespace featrec {

struct RunOptions {
  std::filesystem::path cache_dir = ".featrec-cache";
  bool force = false;            // recompute every stage
  std::ostream* log = nullptr;   // progress messages
  bool verbose_training = false; // per-epoch lines
};

struct StageStats {
  std::map<std::string, std::size_t> executed;
  std::map<std::string, std::size_t> cached;

  std::size_t total_executed() const {
    std::size_t n = 0;
    for (const auto& [_, c] : executed) n += c;
    return n;
  }
  std::size_t total_cached() const {
    std::size_t n = 0;
    for (const auto& [_, c] : cached) n += c;
    return n;
  }
};

namespace detail {

inline std::string stage_key(std::initializer_list<std::string_view> parts) {
  std::string joined;
  for (auto p : parts) {
    joined += p;
    joined += '\x1f';
  }
  return digest_string(joined);
}

inline std::string section_text(const RunConfig& cfg, std::string_view section) {
  std::string out;
  for (const auto& k : config_keys())
    if (section == k.section) out += std::string(k.key) + "=" + k.get(cfg) + ";";
  return out;
}

inline std::string encode_dataset(const InteractionDataset& ds) {
  std::string out = "# num_items=" + std::to_string(ds.num_items) +
                    " duplicates_dropped=" + std::to_string(ds.duplicates_dropped) +
                    " users_dropped=" + std::to_string(ds.users_dropped) + "\n";
  for (const auto& u : ds.users) {
    out += std::to_string(u.user_id) + "\t";
    for (std::size_t i = 0; i < u.items.size(); ++i) out += (i ? " " : "") + std::to_string(u.items[i]);
    out += "\n";
  }
  return out;
}

inline InteractionDataset decode_dataset(const std::filesystem::path& path) {
  const auto lines = split(read_file_bytes(path), '\n');
  if (lines.empty() || !lines[0].starts_with("# ")) fail(path.string(), ": missing header");
  InteractionDataset ds;
  for (const auto& field : split(lines[0].substr(2), ' ')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const auto v = static_cast<std::size_t>(parse_int(field.substr(eq + 1), field));
    const auto name = field.substr(0, eq);
    if (name == "num_items") ds.num_items = v;
    else if (name == "duplicates_dropped") ds.duplicates_dropped = v;
    else if (name == "users_dropped") ds.users_dropped = v;
  }
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto cols = split(lines[n], '\t');
    if (cols.size() != 2) fail(path.string(), " line ", n + 1, ": malformed");
    UserSequence u;
    u.user_id = parse_int(cols[0], "user id");
    for (const auto& item : split(cols[1], ' '))
      u.items.push_back(static_cast<std::uint32_t>(parse_int(item, "item index")));
    ds.users.push_back(std::move(u));
  }
  return ds;
}

// Runs `fn`, prefixing any error with the stage name unless a nested stage
// already did.
template <typename F>
decltype(auto) in_stage(std::string_view stage, F&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (std::string_view(e.what()).starts_with("stage ")) throw;
    fail("stage ", stage, ": ", e.what());
  }
}

}  // namespace detail

// Runs one configuration. Stage results are memoized in memory and on disk.
class Experiment {
 public:
  Experiment(RunConfig cfg, RunOptions opts) : cfg_(std::move(cfg)), opts_(std::move(opts)) {
    cfg_.validate();
  }

  const RunConfig& config() const { return cfg_; }
  const StageStats& stats() const { return stats_; }
  // Artifact directory of the most recent invocation of a stage.
  const std::filesystem::path& artifact_dir(const std::string& stage) const {
    auto it = dirs_.find(stage);
    if (it == dirs_.end()) fail("stage '", stage, "' has not run");
    return it->second;
  }

  // --- ingest --------------------------------------------------------------
  const InteractionDataset& dataset() {
    if (dataset_) return *dataset_;
    return detail::in_stage("ingest", [&]() -> const InteractionDataset& { return ingest(); });
  }

  const ItemEmbeddingTable& pooled() {
    if (pooled_) return *pooled_;
    (void)dataset();
    return detail::in_stage("pool", [&]() -> const ItemEmbeddingTable& { return pool(); });
  }

  const AdapterPipeline& adapter() {
    if (adapter_) return *adapter_;
    (void)pooled();
    return detail::in_stage("fit-adapter", [&]() -> const AdapterPipeline& { return fit_adapter(); });
  }

  // The pretrained ID table used by concat and align fusion: either the
  // configured checkpoint or one trained here from the first seed.
  std::optional<IdEmbeddingTable> id_table() {
    if (!cfg_.fusion.needs_id_table()) return std::nullopt;
    if (ids_) return ids_;
    (void)dataset();
    return detail::in_stage("pretrain-id", [&] { return load_or_pretrain_ids(); });
  }

 private:
  const InteractionDataset& ingest() {
    const auto& d = cfg_.data;
    require_file(d.catalog, "data.catalog");
    require_file(d.interactions, "data.interactions");
    std::string texts_digest;
    if (d.text_source != TextSource::kSac) texts_digest = digest_file(require_file(d.texts, "data.texts"));
    ingest_key_ = detail::stage_key({"ingest/1", digest_file(d.catalog), digest_file(d.interactions),
                                     to_string(d.text_source), texts_digest, cfg_.get("data.field_order"),
                                     std::to_string(d.min_length)});
    dataset_ = run_stage<InteractionDataset>(
        "ingest", ingest_key_,
        [&](const std::filesystem::path& dir) {
          const auto catalog = load_catalog(d.catalog);
          auto ds = load_interactions(d.interactions, catalog, d.min_length);
          const auto texts =
              d.text_source == TextSource::kSac
                  ? catalog.render_all(d.field_order.empty() ? catalog.field_names() : d.field_order)
                  : load_enhanced_texts(d.texts, d.text_source, catalog);
          std::string tsv;
          for (std::size_t i = 0; i < texts.size(); ++i)
            tsv += std::to_string(catalog.items()[i].id) + "\t" + texts[i] + "\n";
          write_file_atomic(dir / "texts.tsv", tsv);
          write_file_atomic(dir / "dataset.tsv", detail::encode_dataset(ds));
          return ds;
        },
        [](const std::filesystem::path& dir) { return detail::decode_dataset(dir / "dataset.tsv"); });
    if (dataset_->users.empty()) fail("no user has at least ", cfg_.data.min_length, " interactions");
    return *dataset_;
  }

  const ItemEmbeddingTable& pool() {
    const auto& ds = dataset();
    const bool eol = cfg_.pooling == Pooling::kEol;
    const auto& src = eol && !cfg_.data.eol_token_embeddings.empty() ? cfg_.data.eol_token_embeddings
                                                                      : cfg_.data.token_embeddings;
    const auto src_digest = digest_file(require_file(src, eol ? "data.eol_token_embeddings" : "data.token_embeddings"));
    pool_key_ = detail::stage_key({"pool/1", src_digest, to_string(cfg_.pooling)});
    pooled_ = run_stage<ItemEmbeddingTable>(
        "pool", pool_key_,
        [&](const std::filesystem::path& dir) {
          auto t = build_item_table(read_token_embeddings(src), cfg_.pooling, src_digest);
          write_item_embeddings(t, dir / "items.rxeb");
          return t;
        },
        [](const std::filesystem::path& dir) { return read_item_embeddings(dir / "items.rxeb"); });
    if (pooled_->rows != ds.num_items)
      fail("embeddings have ", pooled_->rows, " rows but the catalog has ", ds.num_items, " items");
    return *pooled_;
  }

  const AdapterPipeline& fit_adapter() {
    const auto& table = pooled();
    adapter_key_ = detail::stage_key({"adapter/1", pool_key_, detail::section_text(cfg_, "adapter")});
    AdapterSpec spec = cfg_.adapter;
    spec.input_dim = table.dim;
    adapter_ = run_stage<AdapterPipeline>(
        "fit-adapter", adapter_key_,
        [&](const std::filesystem::path& dir) {
          auto p = AdapterPipeline::fit(spec, table, cfg_.adapter_seed);
          ad::Checkpoint ck;
          p.save_frozen(ck);
          ck.save(dir / "frozen.rxck");
          return p;
        },
        [&](const std::filesystem::path& dir) {
          return AdapterPipeline::restore(spec, ad::Checkpoint::load(dir / "frozen.rxck"));
        });
    return *adapter_;
  }

  std::optional<IdEmbeddingTable> load_or_pretrain_ids() {
    if (!cfg_.id_checkpoint.empty()) {
      ids_ = IdEmbeddingTable::load(require_file(cfg_.id_checkpoint, "fusion.id_checkpoint"));
      ids_key_ = ids_->source_digest;
      return ids_;
    }
    return ids_ = pretrained_ids();
  }

 public:
  // Trains an ID-only model regardless of the fusion strategy.
  IdEmbeddingTable pretrained_ids() {
    const auto& ds = dataset();
    const auto seed = cfg_.seeds.front();
    const auto key = detail::stage_key({"pretrain/1", ingest_key_, std::to_string(cfg_.adapter.d),
                                        detail::section_text(cfg_, "sasrec"), std::to_string(seed), validation_text()});
    auto t = run_stage<IdEmbeddingTable>(
        "pretrain-id", key,
        [&](const std::filesystem::path& dir) {
          pretrain_id_checkpoint(ds, cfg_.adapter.d, cfg_.sasrec, seed, train_options("pretrain-id"))
              .save(dir / "id.rxck");
          return IdEmbeddingTable::load(dir / "id.rxck");
        },
        [](const std::filesystem::path& dir) { return IdEmbeddingTable::load(dir / "id.rxck"); });
    ids_key_ = t.source_digest;
    return t;
  }

  // --- train / evaluate ----------------------------------------------------
  struct Trained {
    std::filesystem::path checkpoint;
    std::string checkpoint_digest;
    double best_valid_ndcg10 = 0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
  };

  Trained train_seed(std::uint64_t seed) {
    const auto& ds = dataset();
    auto rec = make_recommender();
    const auto key = train_key(seed);
    return run_stage<Trained>(
        "train", key,
        [&](const std::filesystem::path& dir) {
          const auto r = train(rec, ds, seed, train_options("train seed " + std::to_string(seed)));
          rec.checkpoint().save(dir / "model.rxck");
          nlohmann::ordered_json j;
          j["seed"] = seed;
          j["best_valid_ndcg10"] = r.best_valid_ndcg10;
          j["best_epoch"] = r.best_epoch;
          j["epochs_run"] = r.epochs_run;
          j["initial_valid_ndcg10"] = r.initial_valid_ndcg10;
          j["epoch_losses"] = r.epoch_losses;
          j["valid_ndcg10"] = r.valid_ndcg10;
          write_file_atomic(dir / "train.json", j.dump(2) + "\n");
          return read_trained(dir);
        },
        [](const std::filesystem::path& dir) { return read_trained(dir); });
  }

  SeedResult evaluate_seed(std::uint64_t seed) { return evaluate_trained(seed, train_seed(seed)); }

  // Evaluates an externally supplied model checkpoint for `seed`.
  SeedResult evaluate_checkpoint(std::uint64_t seed, const std::filesystem::path& checkpoint) {
    if (!std::filesystem::is_regular_file(checkpoint))
      fail("missing checkpoint for seed ", seed, ": ", checkpoint.string());
    Trained t;
    t.checkpoint = checkpoint;
    t.checkpoint_digest = digest_file(checkpoint);
    return evaluate_trained(seed, t);
  }

 private:
  SeedResult evaluate_trained(std::uint64_t seed, const Trained& trained) {
    const auto& ds = dataset();
    (void)adapter();
    (void)id_table();
    const auto key = detail::stage_key({"eval/1", trained.checkpoint_digest, ingest_key_, adapter_key_,
                                        detail::section_text(cfg_, "fusion"), ids_key_,
                                        detail::section_text(cfg_, "sasrec"), std::to_string(cfg_.negatives),
                                        std::to_string(seed)});
    auto metrics = run_stage<Metrics>(
        "evaluate", key,
        [&](const std::filesystem::path& dir) {
          auto rec = make_recommender();
          rec.init(seed);
          rec.load(ad::Checkpoint::load(trained.checkpoint));
          const auto res = evaluate_split(ds, Split::kTest, rec.scorer(), seed, cfg_.negatives);
          nlohmann::ordered_json j;
          j["seed"] = seed;
          j["cases"] = res.metrics.cases;
          for (std::size_t m = 0; m < Metrics::kNames.size(); ++m) j[std::string(Metrics::kNames[m])] = res.metrics.values[m];
          j["ranks"] = res.ranks;
          write_file_atomic(dir / "metrics.json", j.dump() + "\n");
          return res.metrics;
        },
        [](const std::filesystem::path& dir) {
          const auto j = nlohmann::json::parse(read_file_bytes(dir / "metrics.json"));
          Metrics m;
          m.cases = j["cases"].get<std::size_t>();
          for (std::size_t i = 0; i < Metrics::kNames.size(); ++i) m.values[i] = j[std::string(Metrics::kNames[i])].get<double>();
          return m;
        });
    SeedResult r;
    r.seed = seed;
    r.test = metrics;
    r.best_valid_ndcg10 = trained.best_valid_ndcg10;
    r.best_epoch = trained.best_epoch;
    r.checkpoint_digest = trained.checkpoint_digest;
    return r;
  }

 public:
  MetricsReport run(std::string label = {}) {
    MetricsReport report;
    report.label = label.empty() ? describe(cfg_) : std::move(label);
    report.config_text = cfg_.serialize();
    report.config_digest = cfg_.digest();
    report.dataset_digest = dataset().digest();
    for (auto seed : cfg_.seeds) report.seeds.push_back(evaluate_seed(seed));
    return report;
  }

  // Short human label, e.g. "mean+moe+pca/replace".
  static std::string describe(const RunConfig& c) {
    std::string s = std::string(to_string(c.pooling)) + "+" + std::string(to_string(c.adapter.architecture));
    if (c.adapter.use_pca_preprocess) s += "+pca";
    return s + "/" + std::string(to_string(c.fusion.strategy));
  }

 private:
  static std::filesystem::path require_file(const std::filesystem::path& p, std::string_view key) {
    if (p.empty()) fail("config: ", key, " is not set");
    if (!std::filesystem::is_regular_file(p)) fail(key, ": no such file ", p.string());
    return p;
  }

  static Trained read_trained(const std::filesystem::path& dir) {
    const auto j = nlohmann::json::parse(read_file_bytes(dir / "train.json"));
    Trained t;
    t.checkpoint = dir / "model.rxck";
    t.checkpoint_digest = digest_file(t.checkpoint);
    t.best_valid_ndcg10 = j["best_valid_ndcg10"].get<double>();
    t.best_epoch = j["best_epoch"].get<std::size_t>();
    t.epochs_run = j["epochs_run"].get<std::size_t>();
    return t;
  }

  std::string train_key(std::uint64_t seed) {
    (void)adapter();
    (void)id_table();
    return detail::stage_key({"train/1", ingest_key_, adapter_key_, detail::section_text(cfg_, "fusion"), ids_key_,
                              detail::section_text(cfg_, "sasrec"), validation_text(), std::to_string(seed)});
  }

  // Validation settings that shape training (model selection), excluding
  // the seed list so adding a seed reuses the others.
  std::string validation_text() const {
    return "negatives=" + std::to_string(cfg_.negatives) + ";valid_users=" + std::to_string(cfg_.valid_users);
  }

  Recommender<float> make_recommender() {
    return Recommender<float>(ItemTower<float>(adapter(), pooled(), cfg_.fusion, id_table()), cfg_.sasrec);
  }

  TrainOptions train_options(std::string what) const {
    TrainOptions o;
    o.valid_users = cfg_.valid_users;
    o.negatives = cfg_.negatives;
    if (opts_.log && opts_.verbose_training)
      o.on_epoch = [log = opts_.log, what](std::size_t epoch, double loss, double valid) {
        *log << "  " << what << " epoch " << epoch << " loss " << loss << " valid NDCG@10 " << valid << "\n";
      };
    return o;
  }

  template <typename T, typename Compute, typename Load>
  T run_stage(const std::string& name, const std::string& key, Compute&& compute, Load&& load) {
    const auto dir = opts_.cache_dir / name / key;
    dirs_[name] = dir;
    try {
      if (!opts_.force && std::filesystem::exists(dir / "complete")) {
        ++stats_.cached[name];
        if (opts_.log) *log() << "[" << name << "] cached " << key << "\n";
        return load(dir);
      }
      const auto start = std::chrono::steady_clock::now();
      const auto tmp = dir.parent_path() / (key + ".tmp-" + std::to_string(::getpid()));
      std::filesystem::remove_all(tmp);
      std::filesystem::create_directories(tmp);
      T value = compute(tmp);
      write_file_atomic(tmp / "complete", key + "\n");
      std::filesystem::remove_all(dir);
      std::filesystem::rename(tmp, dir);
      ++stats_.executed[name];
      if (opts_.log) {
        const std::chrono::duration<double> secs = std::chrono::steady_clock::now() - start;
        *log() << "[" << name << "] computed " << key << " in " << secs.count() << "s\n";
      }
      // Reload so paths recorded in the value point at the published dir.
      if constexpr (std::is_same_v<T, Trained> || std::is_same_v<T, IdEmbeddingTable>) return load(dir);
      return value;
    } catch (const Error& e) {
      fail("stage ", name, ": ", e.what());
    } catch (const std::filesystem::filesystem_error& e) {
      fail("stage ", name, ": ", e.what());
    }
  }

  std::ostream* log() const { return opts_.log; }

  RunConfig cfg_;
  RunOptions opts_;
  StageStats stats_;
  std::map<std::string, std::filesystem::path> dirs_;
  std::optional<InteractionDataset> dataset_;
  std::optional<ItemEmbeddingTable> pooled_;
  std::optional<AdapterPipeline> adapter_;
  std::optional<IdEmbeddingTable> ids_;
  std::string ingest_key_, pool_key_, adapter_key_, ids_key_;
};

// --- grids and reports ---------------------------------------------------------

struct GridAxis {
  std::string key;  // section.key
  std::vector<std::string> values;
};

// "section.key=v1,v2,..."
inline GridAxis parse_grid_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) fail("grid axis '", spec, "' must look like section.key=v1,v2");
  GridAxis a{trim(spec.substr(0, eq)), detail::split_list(spec.substr(eq + 1))};
  (void)detail::find_key(a.key);
  if (a.values.empty()) fail("grid axis '", a.key, "' has no values");
  return a;
}

struct GridResult {
  std::vector<MetricsReport> reports;
  StageStats stats;
};

// Cartesian product of the axes over `base`, first axis varying slowest.
// Every cell shares the cache, so stages common to several cells run once.
inline GridResult run_grid(const RunConfig& base, const std::vector<GridAxis>& axes, const RunOptions& opts) {
  std::vector<std::pair<RunConfig, std::string>> cells{{base, ""}};
  for (const auto& axis : axes) {
    std::vector<std::pair<RunConfig, std::string>> next;
    for (const auto& [cfg, label] : cells)
      for (const auto& v : axis.values) {
        RunConfig c = cfg;
        c.set(axis.key, v);
        next.emplace_back(std::move(c), label.empty() ? v : label + " " + v);
      }
    cells = std::move(next);
  }
  GridResult out;
  for (auto& [cfg, label] : cells) {
    try {
      Experiment e(cfg, opts);
      out.reports.push_back(e.run(axes.empty() ? std::string() : label));
      for (const auto& [k, n] : e.stats().executed) out.stats.executed[k] += n;
      for (const auto& [k, n] : e.stats().cached) out.stats.cached[k] += n;
    } catch (const Error& err) {
      fail("grid cell '", label, "': ", err.what());
    }
  }
  return out;
}

inline std::string format_report_text(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << format_table(reports) << "\n";
  for (const auto& r : reports) {
    os << "## " << r.label << "\n";
    os << "config " << r.config_digest << "  dataset " << r.dataset_digest << "  negatives "
       << r.negatives_policy << "\n";
    for (const auto& s : r.seeds) {
      os << "seed " << s.seed;
      for (std::size_t m = 0; m < Metrics::kNames.size(); ++m)
        os << "  " << Metrics::kNames[m] << " " << std::fixed << std::setprecision(4) << s.test.values[m];
      os << "  best_epoch " << s.best_epoch << "  checkpoint " << s.checkpoint_digest << "\n";
    }
    os << "\n";
  }
  return os.str();
}

// Writes report.txt, report.jsonl and one resolved config per report.
inline void write_reports(const std::vector<MetricsReport>& reports, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::string jsonl;
  for (const auto& r : reports) jsonl += r.to_jsonl();
  write_file_atomic(out_dir / "report.jsonl", jsonl);
  write_file_atomic(out_dir / "report.txt", format_report_text(reports));
  if (reports.size() == 1) {
    write_file_atomic(out_dir / "config.ini", reports[0].config_text);
  } else {
    for (std::size_t i = 0; i < reports.size(); ++i)
      write_file_atomic(out_dir / ("config-" + std::to_string(i + 1) + ".ini"),
                        "; " + reports[i].label + "\n" + reports[i].config_text);
  }
}

}  // namespace featrec
