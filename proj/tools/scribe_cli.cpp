// scribe: train, evaluate and sweep implicit-background segmenters.

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "scribe/error.hpp"
#include "scribe/harness.hpp"

using namespace scribe;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string kebab(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

struct ConfigOptions {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key=value config file (flags override it)");
    for (const std::string& key : config_keys()) {
      app->add_option("--" + kebab(key), values[key], "RunConfig " + key);
    }
  }

  RunConfig build() const {
    RunConfig cfg;
    if (!config_file.empty()) cfg = load_config_file(config_file);
    for (const auto& [key, v] : values) {
      if (!v.empty()) set_config_field(cfg, key, v);
    }
    cfg.validate();
    return cfg;
  }
};

std::vector<CorruptionAxis> parse_corruptions(const std::string& kinds, const std::string& severities) {
  std::vector<CorruptionAxis> out;
  if (kinds.empty() || kinds == "none") return out;
  std::vector<CorruptionKind> ks;
  if (kinds == "all") {
    ks = all_corruption_kinds();
  } else {
    for (const auto& k : split_list(kinds)) ks.push_back(parse_corruption_kind(k));
  }
  std::vector<int> sev;
  for (const auto& s : split_list(severities)) {
    const auto dash = s.find('-');
    if (dash != std::string::npos) {
      for (int v = std::stoi(s.substr(0, dash)); v <= std::stoi(s.substr(dash + 1)); ++v) sev.push_back(v);
    } else {
      sev.push_back(std::stoi(s));
    }
  }
  for (CorruptionKind k : ks)
    for (int s : sev) {
      CorruptionSpec{k, s, 0}.validate();
      out.push_back({k, s});
    }
  return out;
}

Dataset take(const Dataset& d, Index limit) {
  if (limit <= 0 || static_cast<std::size_t>(limit) >= d.size()) return d;
  Dataset out = d;
  out.items.resize(static_cast<std::size_t>(limit));
  return out;
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implicit-background weak segmentation: training, evaluation, sweeps and rendering"};
  app.require_subcommand(1);

  ConfigOptions train_opts, eval_opts, grid_opts, corrupt_opts, render_opts;

  auto* train_cmd = app.add_subcommand("train", "train one model");
  train_opts.attach(train_cmd);
  std::string train_ckpt;
  train_cmd->add_option("--checkpoint", train_ckpt, "checkpoint path (default <output-dir>/<config hash>.scrb)");
  bool quiet = false;
  train_cmd->add_flag("--quiet", quiet, "no per-epoch progress");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval_opts.attach(eval_cmd);
  std::string eval_ckpt, eval_kind, eval_json;
  int eval_sev = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate")->required();
  eval_cmd->add_option("--corruption", eval_kind, "corruption kind");
  eval_cmd->add_option("--severity", eval_sev, "corruption severity 1..5");
  eval_cmd->add_option("--json", eval_json, "also write the report as JSON here");

  auto* grid_cmd = app.add_subcommand("grid", "train and evaluate a fraction x augmentation grid");
  grid_opts.attach(grid_cmd);
  std::string g_fractions = "0.1,0.5,1.0", g_augs = "none", g_corr, g_sev = "5";
  grid_cmd->add_option("--fractions", g_fractions, "comma-separated training fractions");
  grid_cmd->add_option("--augmentations", g_augs, "comma-separated augmentation settings, or all");
  grid_cmd->add_option("--corruptions", g_corr, "comma-separated corruption kinds, all, or none");
  grid_cmd->add_option("--severities", g_sev, "severities, e.g. 5 or 1-5 or 1,3,5");

  auto* corrupt_cmd = app.add_subcommand("corrupt", "export corrupted test images as a PNG tree");
  corrupt_opts.attach(corrupt_cmd);
  std::string c_kinds = "all", c_sev = "1-5";
  std::uint64_t c_seed = 0;
  Index c_limit = 0;
  corrupt_cmd->add_option("--corruptions", c_kinds, "kinds, comma-separated, or all");
  corrupt_cmd->add_option("--severities", c_sev, "severities, e.g. 1-5");
  corrupt_cmd->add_option("--corruption-seed", c_seed, "seed for the stochastic kinds");
  corrupt_cmd->add_option("--limit", c_limit, "only the first N test images");

  auto* render_cmd = app.add_subcommand("render", "write mask/attention PNGs and trend SVGs");
  render_opts.attach(render_cmd);
  std::string r_ckpt, r_grid, r_out;
  Index r_limit = 16;
  render_cmd->add_option("--checkpoint", r_ckpt, "checkpoint for mask and attention PNGs");
  render_cmd->add_option("--grid-dir", r_grid, "grid output directory for trend plots");
  render_cmd->add_option("--out", r_out, "destination (default <output-dir>/render)");
  render_cmd->add_option("--limit", r_limit, "number of test images to render (0 = all)");

  auto* report_cmd = app.add_subcommand("report", "summarise a grid as markdown tables");
  std::string rep_grid, rep_out;
  report_cmd->add_option("--grid-dir", rep_grid, "grid output directory")->required();
  report_cmd->add_option("--out", rep_out, "write here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; real parse failures are usage errors
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) {
      const RunConfig cfg = train_opts.build();
      const DataSplits data = load_data(cfg);
      TrainResult tr = train(cfg, data.train, quiet ? nullptr : &std::cerr);
      const fs::path ckpt = train_ckpt.empty() ? fs::path(cfg.output_dir) / (hash_hex(config_hash(cfg)) + ".scrb") : fs::path(train_ckpt);
      if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
      save_checkpoint(tr.model, ckpt);
      fs::path log = ckpt;
      log.replace_extension(".log.csv");
      write_epoch_log(tr.log, log);
      std::cout << ckpt.string() << "\n";
      return 0;
    }
    if (*eval_cmd) {
      const RunConfig cfg = eval_opts.build();
      const ScribeNet model = load_checkpoint(eval_ckpt);
      const DataSplits data = load_data(cfg);
      std::optional<CorruptionSpec> spec;
      if (!eval_kind.empty()) spec = CorruptionSpec{parse_corruption_kind(eval_kind), eval_sev, cfg.data_seed};
      std::string desc = "checkpoint=" + fs::path(eval_ckpt).filename().string();
      if (spec) desc += ";corruption=" + eval_kind + ";severity=" + std::to_string(eval_sev);
      const Evaluation ev = evaluate(model, data.test, spec, cfg.lse_r, cfg.ece_bins, desc);
      std::cout << ev.report.csv_header() << "\n" << ev.report.csv_row() << "\n";
      if (!eval_json.empty()) write_file(eval_json, ev.report.to_json() + "\n");
      return 0;
    }
    if (*grid_cmd) {
      const RunConfig cfg = grid_opts.build();
      GridAxes axes;
      for (const auto& f : split_list(g_fractions)) axes.fractions.push_back(std::stod(f));
      if (g_augs == "all") {
        axes.augmentations = all_augment_settings();
      } else {
        for (const auto& a : split_list(g_augs)) axes.augmentations.push_back(parse_augment_setting(a));
      }
      axes.corruptions = parse_corruptions(g_corr, g_sev);
      const GridResult grid = run_grid(cfg, axes, &std::cerr);
      std::cout << (fs::path(cfg.output_dir) / "results.csv").string() << "\n";
      if (grid.failures()) {
        std::cerr << grid.failures() << " of " << grid.cells.size() << " cells failed\n";
        return 1;
      }
      return 0;
    }
    if (*corrupt_cmd) {
      const RunConfig cfg = corrupt_opts.build();
      const Dataset test = take(load_data(cfg).test, c_limit);
      for (const CorruptionAxis& c : parse_corruptions(c_kinds, c_sev)) {
        const CorruptionSpec spec{c.kind, c.severity, c_seed};
        export_corrupted_tree(corrupt_dataset(test, spec), spec, cfg.output_dir);
      }
      return 0;
    }
    if (*render_cmd) {
      const RunConfig cfg = render_opts.build();
      if (r_ckpt.empty() && r_grid.empty()) throw UsageError("render needs --checkpoint, --grid-dir or both");
      const fs::path out = r_out.empty() ? fs::path(cfg.output_dir) / "render" : fs::path(r_out);
      if (!r_ckpt.empty()) {
        const ScribeNet model = load_checkpoint(r_ckpt);
        render_images(model, take(load_data(cfg).test, r_limit), cfg.lse_r, out);
      }
      if (!r_grid.empty()) {
        for (const auto& p : render_trend_plots(load_grid(r_grid), out)) std::cout << p.string() << "\n";
      }
      return 0;
    }
    if (*report_cmd) {
      const GridResult g = load_grid(rep_grid);
      const std::string text = grid_report(g);
      if (rep_out.empty()) {
        std::cout << text;
      } else {
        write_file(rep_out, text);
      }
      return g.failures() ? 1 : 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParameterError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
