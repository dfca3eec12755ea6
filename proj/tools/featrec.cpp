// Copyright 2026 The featrec Authors
// SPDX-License-Identifier: Apache-2.0
//
// featrec command-line interface. Every stage subcommand runs its upstream
// stages through the shared cache and copies its own artifacts to --out.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "featrec/runner.hpp"
#include "featrec/synthetic.hpp"

namespace fs = std::filesystem;
using namespace featrec;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string cache_dir = ".featrec-cache";
  std::vector<std::string> sets;
  bool force = false;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config, "Run config (INI)")->required()->check(CLI::ExistingFile);
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
  cmd->add_option("--cache-dir", c.cache_dir, "Stage cache directory")->capture_default_str();
  cmd->add_option("--set", c.sets, "Override a config key: section.key=value (repeatable)");
  cmd->add_flag("--force", c.force, "Recompute every stage, ignoring the cache");
  cmd->add_flag("-v,--verbose", c.verbose, "Print per-epoch training progress");
}

RunConfig load(const Common& c) {
  RunConfig cfg = load_config(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail("--set expects section.key=value, got '", s, "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1), fs::current_path());
  }
  cfg.validate();
  return cfg;
}

Experiment experiment(const Common& c) {
  return Experiment(load(c), RunOptions{c.cache_dir, c.force, &std::cerr, c.verbose});
}

void copy_out(const fs::path& from, const fs::path& out, const std::string& as = {}) {
  fs::create_directories(out);
  const auto dest = out / (as.empty() ? from.filename().string() : as);
  fs::copy_file(from, dest, fs::copy_options::overwrite_existing);
  std::cout << "wrote " << dest.string() << "\n";
}

void print_stats(const StageStats& s) {
  std::cerr << "stages executed " << s.total_executed() << ", cached " << s.total_cached() << "\n";
}

std::vector<std::uint64_t> seeds_for(const RunConfig& cfg, const std::optional<std::uint64_t>& seed) {
  return seed ? std::vector<std::uint64_t>{*seed} : cfg.seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"featrec: LLM-embedding sequential recommendation experiments"};
  app.require_subcommand(1);
  Common c;
  std::optional<std::uint64_t> seed;

  auto* ingest = app.add_subcommand("ingest", "Load the catalog and interactions; emit item texts and sequences");
  add_common(ingest, c);
  auto* pool = app.add_subcommand("pool", "Pool token embeddings into one vector per item (items.rxeb)");
  add_common(pool, c);
  auto* fit = app.add_subcommand("fit-adapter", "Fit the frozen adapter stages (frozen.rxck)");
  add_common(fit, c);
  auto* pretrain = app.add_subcommand("pretrain-id", "Train an ID-only model and save its table (id.rxck)");
  add_common(pretrain, c);
  auto* train_cmd = app.add_subcommand("train", "Train the recommender (model-<seed>.rxck)");
  add_common(train_cmd, c);
  train_cmd->add_option("--seed", seed, "Train one seed instead of all configured seeds");

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate on the test split and write a report");
  add_common(eval_cmd, c);
  eval_cmd->add_option("--seed", seed, "Evaluate one seed instead of all configured seeds");
  std::string checkpoints;
  eval_cmd->add_option("--checkpoints", checkpoints,
                       "Directory holding model-<seed>.rxck files (default: train through the cache)");

  auto* run = app.add_subcommand("run", "Run every stage for every seed and write the report");
  add_common(run, c);
  std::string label;
  run->add_option("--label", label, "Column label in the report table");

  auto* grid = app.add_subcommand("grid", "Run a grid over config values and write a comparison table");
  add_common(grid, c);
  std::vector<std::string> axes;
  grid->add_option("--axis", axes, "section.key=v1,v2,... (repeatable; cartesian product)")->required();

  auto* gen = app.add_subcommand("gen-synthetic", "Write the bundled synthetic dataset and a run config");
  std::string gen_out;
  SyntheticConfig syn;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--items", syn.items)->capture_default_str();
  gen->add_option("--users", syn.users)->capture_default_str();
  gen->add_option("--clusters", syn.clusters)->capture_default_str();
  gen->add_option("--dim", syn.dim, "Token embedding width H")->capture_default_str();
  gen->add_option("--seed", syn.seed)->capture_default_str();

  auto* best = app.add_subcommand("best-config", "Print the best-known configuration as INI");
  std::string best_out, data_dir;
  best->add_option("--out", best_out, "Write to this file instead of stdout");
  best->add_option("--data-dir", data_dir, "Fill data paths from a gen-synthetic directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto paths = write_synthetic(generate_synthetic(syn), gen_out);
      RunConfig cfg;
      apply_desk_scale(cfg);
      cfg.data.catalog = "catalog.tsv";
      cfg.data.interactions = "interactions.tsv";
      cfg.data.token_embeddings = "tokens.rxeb";
      cfg.data.eol_token_embeddings = "tokens_eol.rxeb";
      write_file_atomic(fs::path(gen_out) / "run.cfg",
                        "; Base configuration for the synthetic dataset; paths are relative to this file.\n" +
                            cfg.serialize());
      std::cout << "wrote " << paths.catalog.string() << ", " << paths.interactions.string() << ", "
                << paths.tokens.string() << ", " << paths.eol_tokens.string() << ", "
                << (fs::path(gen_out) / "run.cfg").string() << "\n";
      return 0;
    }
    if (*best) {
      RunConfig cfg = best_config();
      std::string header = "; Best-known composition. Supply token embeddings from your (fine-tuned) LLM.\n";
      if (!data_dir.empty()) {
        apply_desk_scale(cfg);
        const auto base = fs::absolute(data_dir);
        cfg.data.catalog = base / "catalog.tsv";
        cfg.data.interactions = base / "interactions.tsv";
        cfg.data.token_embeddings = base / "tokens.rxeb";
        cfg.data.eol_token_embeddings = base / "tokens_eol.rxeb";
      }
      const auto text = header + cfg.serialize();
      if (best_out.empty()) std::cout << text;
      else write_file_atomic(best_out, text);
      return 0;
    }

    auto exp = experiment(c);
    const fs::path out = c.out;
    if (*ingest) {
      const auto& ds = exp.dataset();
      copy_out(exp.artifact_dir("ingest") / "texts.tsv", out);
      copy_out(exp.artifact_dir("ingest") / "dataset.tsv", out);
      std::cout << ds.users.size() << " users, " << ds.num_items << " items, " << ds.users_dropped
                << " users dropped, " << ds.duplicates_dropped << " duplicates dropped, digest " << ds.digest()
                << "\n";
    } else if (*pool) {
      const auto& t = exp.pooled();
      copy_out(exp.artifact_dir("pool") / "items.rxeb", out);
      std::cout << t.rows << " x " << t.dim << " (" << to_string(exp.config().pooling) << ")\n";
    } else if (*fit) {
      (void)exp.adapter();
      copy_out(exp.artifact_dir("fit-adapter") / "frozen.rxck", out);
    } else if (*pretrain) {
      (void)exp.pretrained_ids();
      copy_out(exp.artifact_dir("pretrain-id") / "id.rxck", out);
    } else if (*train_cmd) {
      for (auto s : seeds_for(exp.config(), seed)) {
        const auto t = exp.train_seed(s);
        copy_out(t.checkpoint, out, "model-" + std::to_string(s) + ".rxck");
        copy_out(exp.artifact_dir("train") / "train.json", out, "train-" + std::to_string(s) + ".json");
        std::cout << "seed " << s << ": best valid NDCG@10 " << t.best_valid_ndcg10 << " at epoch "
                  << t.best_epoch << " of " << t.epochs_run << "\n";
      }
    } else if (*eval_cmd) {
      MetricsReport report;
      report.label = Experiment::describe(exp.config());
      report.config_text = exp.config().serialize();
      report.config_digest = exp.config().digest();
      report.dataset_digest = exp.dataset().digest();
      for (auto s : seeds_for(exp.config(), seed))
        report.seeds.push_back(checkpoints.empty()
                                   ? exp.evaluate_seed(s)
                                   : exp.evaluate_checkpoint(
                                         s, fs::path(checkpoints) / ("model-" + std::to_string(s) + ".rxck")));
      write_reports({report}, out);
      std::cout << format_table({report});
    } else if (*run) {
      const auto report = exp.run(label);
      write_reports({report}, out);
      std::cout << format_report_text({report});
    } else if (*grid) {
      std::vector<GridAxis> parsed;
      for (const auto& a : axes) parsed.push_back(parse_grid_axis(a));
      const auto res = run_grid(load(c), parsed, RunOptions{c.cache_dir, c.force, &std::cerr, c.verbose});
      write_reports(res.reports, out);
      std::cout << format_report_text(res.reports);
      print_stats(res.stats);
      return 0;
    }
    print_stats(exp.stats());
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
