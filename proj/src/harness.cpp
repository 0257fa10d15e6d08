#include "scribe/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "scribe/error.hpp"

namespace scribe {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long d = 0;
  try {
    d = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return d;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long d = 0;
  try {
    d = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v[0] == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return d;
}

using Getter = std::string (*)(const RunConfig&);
using Setter = void (*)(RunConfig&, const std::string&, const std::string&);

struct Field {
  const char* name;
  Getter get;
  Setter set;
};

// Kept in key order so config_text is sorted by construction.
const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"augmentation", [](const RunConfig& c) { return to_string(c.augmentation); },
       [](RunConfig& c, const std::string&, const std::string& v) { c.augmentation = parse_augment_setting(v); }},
      {"base_lr", [](const RunConfig& c) { return fmt(c.base_lr); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.base_lr = to_double(k, v); }},
      {"batch_size", [](const RunConfig& c) { return std::to_string(c.batch_size); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.batch_size = to_int(k, v); }},
      {"data_dir", [](const RunConfig& c) { return c.data_dir; },
       [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"data_seed", [](const RunConfig& c) { return std::to_string(c.data_seed); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.data_seed = to_u64(k, v); }},
      {"dataset", [](const RunConfig& c) { return c.dataset; },
       [](RunConfig& c, const std::string&, const std::string& v) { c.dataset = v; }},
      {"ece_bins", [](const RunConfig& c) { return std::to_string(c.ece_bins); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.ece_bins = static_cast<int>(to_int(k, v)); }},
      {"epochs", [](const RunConfig& c) { return std::to_string(c.epochs); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.epochs = static_cast<int>(to_int(k, v)); }},
      {"fraction", [](const RunConfig& c) { return fmt(c.fraction); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.fraction = to_double(k, v); }},
      {"head_kind", [](const RunConfig& c) { return to_string(c.head_kind); },
       [](RunConfig& c, const std::string&, const std::string& v) { c.head_kind = parse_head_kind(v); }},
      {"k_classes", [](const RunConfig& c) { return std::to_string(c.k_classes); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.k_classes = to_int(k, v); }},
      {"lr_decay", [](const RunConfig& c) { return fmt(c.lr_decay); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.lr_decay = to_double(k, v); }},
      {"lr_milestones",
       [](const RunConfig& c) {
         std::string s;
         for (int m : c.lr_milestones) s += (s.empty() ? "" : ",") + std::to_string(m);
         return s;
       },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.lr_milestones.clear();
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) {
           item = trim(item);
           if (!item.empty()) c.lr_milestones.push_back(static_cast<int>(to_int(k, item)));
         }
       }},
      {"lse_r", [](const RunConfig& c) { return fmt(c.lse_r); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.lse_r = to_double(k, v); }},
      {"momentum", [](const RunConfig& c) { return fmt(c.momentum); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.momentum = to_double(k, v); }},
      {"n_test", [](const RunConfig& c) { return std::to_string(c.n_test); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.n_test = to_int(k, v); }},
      {"n_train", [](const RunConfig& c) { return std::to_string(c.n_train); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.n_train = to_int(k, v); }},
      {"output_dir", nullptr,
       [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
      {"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }},
      {"weight_decay", [](const RunConfig& c) { return fmt(c.weight_decay); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.weight_decay = to_double(k, v); }},
      {"width", [](const RunConfig& c) { return std::to_string(c.width); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.width = to_int(k, v); }},
  };
  return f;
}

}  // namespace

void RunConfig::validate() const {
  if (dataset != "synthetic" && dataset != "cifar10" && dataset != "png") {
    throw ConfigError("dataset must be synthetic, cifar10 or png, got '" + dataset + "'");
  }
  if (dataset != "synthetic" && data_dir.empty()) throw ConfigError("dataset " + dataset + " needs data_dir");
  if (dataset == "synthetic" && (n_train < 4 || n_test < 4)) throw ConfigError("synthetic n_train and n_test must be >= 4");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must be in (0,1], got " + fmt(fraction));
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lse_r > 0.0) || !std::isfinite(lse_r)) throw ConfigError("lse_r must be positive");
  if (width < 4 || width % 4 != 0) throw ConfigError("width must be a positive multiple of 4 (group norm uses 4 groups)");
  if (ece_bins < 1) throw ConfigError("ece_bins must be >= 1");
  if (k_classes < 1) throw ConfigError("k_classes must be >= 1");
  for (int m : lr_milestones) {
    if (m < 1) throw ConfigError("lr milestones must be >= 1");
  }
}

std::string config_text(const RunConfig& config) {
  std::string out;
  for (const Field& f : fields()) {
    if (f.get) out += std::string(f.name) + "=" + f.get(config) + "\n";
  }
  return out;
}

std::uint64_t config_hash(const RunConfig& config) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : config_text(config)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.emplace_back(f.name);
  return keys;
}

void set_config_field(RunConfig& config, const std::string& key, const std::string& value) {
  std::string k = key;
  std::replace(k.begin(), k.end(), '-', '_');
  for (const Field& f : fields()) {
    if (k == f.name) {
      try {
        f.set(config, k, value);
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError(k + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    try {
      set_config_field(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

DataSplits load_data(const RunConfig& config) {
  config.validate();
  if (config.dataset == "synthetic") {
    return {synth_shapes(config.n_train, config.data_seed, "train"),
            synth_shapes(config.n_test, mix_seed(config.data_seed, 0x7e57), "test")};
  }
  if (config.dataset == "cifar10") {
    auto [tr, te] = load_cifar10(config.data_dir);
    return {std::move(tr), std::move(te)};
  }
  const std::filesystem::path root(config.data_dir);
  return {import_png_tree(root / "train", config.k_classes), import_png_tree(root / "test", config.k_classes)};
}

double learning_rate(const RunConfig& config, int epoch) {
  double lr = config.base_lr;
  for (int m : config.lr_milestones) {
    if (epoch >= m) lr *= config.lr_decay;
  }
  return lr;
}

namespace {

void tune_allocator() {
#ifdef __GLIBC__
  // Training churns through same-sized activation buffers; keep them in the
  // heap instead of mapping and unmapping pages every op.
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
    mallopt(M_TOP_PAD, 64 * 1024 * 1024);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace

TrainResult train(const RunConfig& config, const Dataset& train_set, std::ostream* progress) {
  config.validate();
  tune_allocator();
  if (train_set.empty()) throw ConfigError("training set is empty");
  const Dataset data = subset(train_set, config.fraction, config.seed);
  if (data.empty()) throw ConfigError("fraction " + fmt(config.fraction) + " leaves no training images");

  TrainResult result{ScribeNet(NetConfig{train_set.k_classes, config.width, 4, config.head_kind}), {}};
  ScribeNet& model = result.model;
  model.init_parameters(config.seed);
  model.fit_input_normalization(stack_images(data.items, [](const LabeledImage& li) -> const Image& { return li.rgb; }));
  model.metadata = TrainingMetadata{config.seed, 0, config_hash(config)};

  AugmentationSpec aug;
  aug.setting = config.augmentation;
  const LsePoolParams lse{config.lse_r};
  const Index n = static_cast<Index>(data.size());

  std::vector<Eigen::ArrayXd> velocity;
  for (const Parameter& p : model.parameters()) velocity.push_back(Eigen::ArrayXd::Zero(p.value.size()));

  std::vector<Index> order(static_cast<std::size_t>(n));
  Tape tape;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0x5eed0000ull + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = learning_rate(config, epoch);

    double loss_sum = 0.0;
    Index correct = 0;
    int batch_no = 0;
    for (Index start = 0; start < n; start += config.batch_size, ++batch_no) {
      const Index stop = std::min(n, start + config.batch_size);
      std::vector<Image> images;
      std::vector<int> targets;
      for (Index j = start; j < stop; ++j) {
        const LabeledImage& item = data.items[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
        if (config.augmentation == AugmentSetting::none) {
          images.push_back(item.rgb);
        } else {
          auto rng = augment_stream(config.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(item.index));
          const AugmentDraw draw = sample_draw(aug, item.rgb.height, item.rgb.width, rng);
          images.push_back(augment_image(item.rgb, item.label, aug, draw).first);
        }
        targets.push_back(item.label);
      }
      const Tensor batch = stack_images(images, [](const Image& im) -> const Image& { return im; });

      double loss_value = 0.0;
      try {
        tape.reset();
        const ScribeNet::Bound bound = model.forward_cam(tape, batch, true);
        const Variable loss = model.loss(bound.cam, targets, lse);
        loss_value = loss.value().item();
        if (!std::isfinite(loss_value)) throw NumericError("loss is not finite");
        const std::vector<Prediction> preds = model.predict(bound.cam.value(), lse);
        for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i].predicted == targets[i];
        tape.backward(loss);
        auto& params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
          Eigen::ArrayXd g = bound.params[i].grad().data();
          g += config.weight_decay * params[i].value.data();
          velocity[i] = config.momentum * velocity[i] + g;
          params[i].value.data() -= lr * velocity[i];
          if (!params[i].value.all_finite()) throw NumericError("parameter " + params[i].name + " is not finite");
        }
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch_no + 1) + ": " + e.what());
      }
      loss_sum += loss_value * static_cast<double>(stop - start);
    }
    EpochLog entry{epoch + 1, lr, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
    result.log.push_back(entry);
    model.metadata.epoch = static_cast<std::uint32_t>(epoch + 1);
    if (progress) {
      *progress << "epoch " << entry.epoch << "/" << config.epochs << " lr " << entry.lr << " loss " << entry.loss
                << " train_acc " << entry.train_accuracy << "\n";
      progress->flush();
    }
  }
  return result;
}

void write_epoch_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,lr,loss,train_accuracy\n";
  for (const EpochLog& e : log) out << e.epoch << "," << fmt(e.lr) << "," << fmt(e.loss) << "," << fmt(e.train_accuracy) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

Evaluation evaluate(const ScribeNet& model, const Dataset& data, const std::optional<CorruptionSpec>& corruption,
                    double lse_r, int ece_bins, const std::string& descriptor) {
  const Index k = model.config().k_classes;
  if (data.k_classes != k) {
    throw ConfigError("model has " + std::to_string(k) + " classes but the dataset has " + std::to_string(data.k_classes));
  }
  if (data.empty()) throw ParameterError("cannot evaluate on an empty dataset");
  const LsePoolParams lse{lse_r};
  lse.validate();
  const Dataset* src = &data;
  Dataset corrupted;
  if (corruption) {
    corrupted = corrupt_dataset(data, *corruption);
    src = &corrupted;
  }

  Evaluation ev;
  constexpr std::size_t chunk = 100;
  for (std::size_t start = 0; start < src->size(); start += chunk) {
    const std::size_t stop = std::min(src->size(), start + chunk);
    const std::span<const LabeledImage> items(src->items.data() + start, stop - start);
    const Tensor batch = stack_images(items, [](const LabeledImage& li) -> const Image& { return li.rgb; });
    const Tensor cam = model.forward_cam(batch);
    const std::vector<Prediction> preds = model.predict(cam, lse);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const LabeledImage& li = items[i];
      ev.records.push_back(PredictionRecord{preds[i].predicted, preds[i].confidence, li.label});
      ev.maps.push_back(attention_map(Cam<double>::from_batch(cam, static_cast<Index>(i)), lse, li.rgb.height,
                                      li.rgb.width, li.index));
    }
  }
  ev.report = summarize(ev.records, ev.maps, ece_bins, descriptor);
  return ev;
}

}  // namespace scribe
