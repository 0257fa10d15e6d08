#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "scribe/error.hpp"
#include "scribe/harness.hpp"
#include "scribe/png_io.hpp"

namespace scribe {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::size_t GridResult::failures() const {
  return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const GridCell& c) { return !c.ok; }));
}

namespace {

std::string cell_suffix(const std::optional<CorruptionAxis>& c) {
  return c ? "_" + to_string(c->kind) + "_" + std::to_string(c->severity) : std::string();
}

std::string descriptor(const RunConfig& cfg, const std::optional<CorruptionAxis>& c) {
  std::ostringstream os;
  os << "fraction=" << cfg.fraction << ";augmentation=" << to_string(cfg.augmentation)
     << ";head_kind=" << to_string(cfg.head_kind) << ";seed=" << cfg.seed;
  if (c) os << ";corruption=" << to_string(c->kind) << ";severity=" << c->severity;
  return os.str();
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Leaves the file alone when the content is unchanged.
void write_text(const fs::path& p, const std::string& text) {
  std::error_code ec;
  if (fs::exists(p, ec)) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    if (ss.str() == text) return;
  }
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, p, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + p.string() + ": " + ec.message());
}

std::string cell_json(const GridCell& c) {
  ojson j;
  j["cell"] = c.id;
  j["config_hash"] = hash_hex(config_hash(c.config));
  j["fraction"] = c.config.fraction;
  j["augmentation"] = to_string(c.config.augmentation);
  j["head_kind"] = to_string(c.config.head_kind);
  j["corruption"] = c.corruption ? ojson(to_string(c.corruption->kind)) : ojson(nullptr);
  j["severity"] = c.corruption ? ojson(c.corruption->severity) : ojson(nullptr);
  j["seed"] = c.config.seed;
  j["status"] = c.ok ? "ok" : "failed";
  j["error"] = c.error;
  j["reference"] = c.reference;
  j["report"] = c.report ? ojson::parse(c.report->to_json()) : ojson(nullptr);
  j["config"] = config_text(c.config);
  return j.dump(2) + "\n";
}

GridCell parse_cell_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  GridCell c;
  c.id = j.at("cell").get<std::string>();
  c.config = parse_config_text(j.at("config").get<std::string>());
  if (!j.at("corruption").is_null()) {
    c.corruption = CorruptionAxis{parse_corruption_kind(j.at("corruption").get<std::string>()), j.at("severity").get<int>()};
  }
  c.ok = j.at("status").get<std::string>() == "ok";
  c.error = j.at("error").get<std::string>();
  c.reference = j.value("reference", false);
  if (!j.at("report").is_null()) c.report = MetricsReport::from_json(j.at("report").dump());
  return c;
}

void cache_maps(const std::vector<AttentionMap>& maps, const fs::path& dir) {
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const AttentionMap& m : maps) write_png16_gray(m.values, dir / (std::to_string(m.image_id) + ".png"));
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

}  // namespace

std::vector<AttentionMap> load_cached_maps(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("attention map cache " + dir.string() + " is missing");
  std::vector<std::pair<Index, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".png") continue;
    files.emplace_back(std::stoll(entry.path().stem().string()), entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<AttentionMap> maps;
  maps.reserve(files.size());
  for (const auto& [idx, path] : files) {
    const Image im = read_png(path);
    Eigen::ArrayXXd v(im.height, im.width);
    for (Index y = 0; y < im.height; ++y)
      for (Index x = 0; x < im.width; ++x) v(y, x) = im.at(0, y, x);
    maps.push_back(AttentionMap{std::move(v), idx});
  }
  return maps;
}

void write_results_csv(const GridResult& grid, const fs::path& path) {
  std::string out = "cell,config_hash,fraction,augmentation,head_kind,corruption,severity,seed,status,reference,error,";
  out += MetricsReport{}.csv_header() + "\n";
  for (const GridCell& c : grid.cells) {
    std::ostringstream row;
    std::string err = c.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    if (err.find_first_of(",\n") != std::string::npos) err = "\"" + err + "\"";
    char frac[40];
    std::snprintf(frac, sizeof frac, "%.17g", c.config.fraction);
    row << c.id << "," << hash_hex(config_hash(c.config)) << "," << frac << "," << to_string(c.config.augmentation) << ","
        << to_string(c.config.head_kind) << "," << (c.corruption ? to_string(c.corruption->kind) : "") << ","
        << (c.corruption ? std::to_string(c.corruption->severity) : "") << "," << c.config.seed << ","
        << (c.ok ? "ok" : "failed") << "," << (c.reference ? 1 : 0) << "," << err << ",";
    if (c.report) {
      row << c.report->csv_row();
    } else {
      row << ",,,,,,";
    }
    out += row.str() + "\n";
  }
  write_text(path, out);
}

GridResult run_grid(const RunConfig& base, const GridAxes& axes, std::ostream* progress) {
  base.validate();
  if (axes.fractions.empty() || axes.augmentations.empty()) throw ConfigError("grid axes must be non-empty");
  for (const CorruptionAxis& c : axes.corruptions) CorruptionSpec{c.kind, c.severity, 0}.validate();

  const fs::path root(base.output_dir);
  ensure_dir(root / "models");
  ensure_dir(root / "maps");
  ensure_dir(root / "cells");

  GridResult grid;
  std::optional<DataSplits> data;
  auto get_data = [&]() -> DataSplits& {
    if (!data) data = load_data(base);
    return *data;
  };
  auto say = [&](const std::string& msg) {
    if (progress) {
      *progress << msg << "\n";
      progress->flush();
    }
  };

  std::vector<std::optional<CorruptionAxis>> evals = {std::nullopt};
  for (const CorruptionAxis& c : axes.corruptions) evals.emplace_back(c);

  for (double f : axes.fractions) {
    for (AugmentSetting a : axes.augmentations) {
      RunConfig cfg = base;
      cfg.fraction = f;
      cfg.augmentation = a;
      const std::string hash = hash_hex(config_hash(cfg));
      const std::size_t first = grid.cells.size();
      std::vector<std::size_t> pending;
      for (const auto& ev : evals) {
        GridCell cell;
        cell.id = hash + cell_suffix(ev);
        cell.config = cfg;
        cell.corruption = ev;
        const fs::path js = root / "cells" / (cell.id + ".json");
        bool done = false;
        std::error_code ec;
        if (fs::exists(js, ec) && fs::is_directory(root / "maps" / cell.id, ec)) {
          try {
            GridCell loaded = parse_cell_json(read_text(js));
            if (loaded.ok && loaded.id == cell.id) {
              cell = std::move(loaded);
              cell.config.output_dir = cfg.output_dir;
              done = true;
            }
          } catch (const std::exception&) {
            done = false;
          }
        }
        if (!done) pending.push_back(grid.cells.size());
        grid.cells.push_back(std::move(cell));
      }
      if (pending.empty()) {
        say("model " + hash + ": all cells cached");
        continue;
      }

      std::optional<ScribeNet> model;
      std::string train_error;
      try {
        const fs::path ckpt = root / "models" / (hash + ".scrb");
        std::error_code ec;
        if (fs::exists(ckpt, ec)) {
          ScribeNet m = load_checkpoint(ckpt);
          if (m.metadata.config_hash == config_hash(cfg) && m.head_kind() == cfg.head_kind) model = std::move(m);
        }
        if (!model) {
          say("model " + hash + ": training (" + descriptor(cfg, std::nullopt) + ")");
          TrainResult tr = train(cfg, get_data().train, progress);
          save_checkpoint(tr.model, ckpt);
          write_epoch_log(tr.log, root / "models" / (hash + ".log.csv"));
          model = std::move(tr.model);
        } else {
          say("model " + hash + ": checkpoint reused");
        }
      } catch (const std::exception& e) {
        train_error = e.what();
      }

      for (std::size_t idx : pending) {
        GridCell& cell = grid.cells[idx];
        grid.computed.push_back(cell.id);
        if (!model) {
          cell.ok = false;
          cell.error = "training failed: " + train_error;
        } else {
          try {
            std::optional<CorruptionSpec> spec;
            if (cell.corruption) spec = CorruptionSpec{cell.corruption->kind, cell.corruption->severity, base.data_seed};
            Evaluation ev = evaluate(*model, get_data().test, spec, cfg.lse_r, cfg.ece_bins, descriptor(cfg, cell.corruption));
            cache_maps(ev.maps, root / "maps" / cell.id);
            cell.report = std::move(ev.report);
            cell.ok = true;
            cell.error.clear();
          } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
            cell.report.reset();
          }
        }
        say("cell " + cell.id + ": " + (cell.ok ? "ok" : "failed: " + cell.error));
        write_text(root / "cells" / (cell.id + ".json"), cell_json(cell));
      }
      (void)first;
    }
  }

  // Reference: best clean accuracy, first in grid order on ties.
  const GridCell* best = nullptr;
  for (const GridCell& c : grid.cells) {
    if (c.corruption || !c.ok || !c.report) continue;
    if (!best || c.report->accuracy > best->report->accuracy) best = &c;
  }
  std::map<std::string, std::vector<AttentionMap>> ref_maps;
  if (best) {
    grid.reference_model = hash_hex(config_hash(best->config));
    for (GridCell& c : grid.cells) {
      c.reference = hash_hex(config_hash(c.config)) == *grid.reference_model;
      if (!c.ok || !c.report) continue;
      const std::string ref_id = *grid.reference_model + cell_suffix(c.corruption);
      const auto ref = std::find_if(grid.cells.begin(), grid.cells.end(),
                                    [&](const GridCell& o) { return o.id == ref_id && o.ok; });
      if (ref == grid.cells.end()) {
        c.report->mse_alignment.reset();
        continue;
      }
      try {
        if (!ref_maps.count(ref_id)) ref_maps[ref_id] = load_cached_maps(root / "maps" / ref_id);
        const std::vector<AttentionMap> mine = load_cached_maps(root / "maps" / c.id);
        c.report->mse_alignment = mse_alignment(mine, ref_maps[ref_id]);
      } catch (const std::exception& e) {
        c.ok = false;
        c.error = std::string("MSE alignment failed: ") + e.what();
      }
    }
  }
  for (const GridCell& c : grid.cells) write_text(root / "cells" / (c.id + ".json"), cell_json(c));
  write_results_csv(grid, root / "results.csv");

  ojson manifest;
  manifest["reference_model"] = grid.reference_model ? ojson(*grid.reference_model) : ojson(nullptr);
  manifest["cells"] = ojson::array();
  for (const GridCell& c : grid.cells) manifest["cells"].push_back(c.id);
  manifest["failures"] = grid.failures();
  write_text(root / "grid.json", manifest.dump(2) + "\n");
  return grid;
}

GridResult load_grid(const fs::path& dir) {
  const auto manifest = nlohmann::json::parse(read_text(dir / "grid.json"));
  GridResult grid;
  if (!manifest.at("reference_model").is_null()) grid.reference_model = manifest.at("reference_model").get<std::string>();
  for (const auto& id : manifest.at("cells")) {
    grid.cells.push_back(parse_cell_json(read_text(dir / "cells" / (id.get<std::string>() + ".json"))));
  }
  return grid;
}

}  // namespace scribe
