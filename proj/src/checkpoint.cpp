// Checkpoint layout (all integers and floats little-endian):
//   "SCRB1"                                    5 bytes
//   u32 tensor_count
//   tensor_count records:
//     u32 name_len, name bytes (UTF-8, no terminator)
//     u32 rank, rank x u64 dims
//     prod(dims) x f64 values, row-major
//   metadata block:
//     u64 seed, u32 epoch, u64 config_hash
//     u8 head_kind (0 scribe, 1 softmax_baseline), u32 groups
//
// Input normalization travels as the tensors "input.mean" and "input.std".

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "scribe/error.hpp"
#include "scribe/net.hpp"

namespace scribe {

namespace {

constexpr char kMagic[5] = {'S', 'C', 'R', 'B', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw IoError("cannot open checkpoint for writing: " + path.string());
  }
  template <typename T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("write failed for checkpoint " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open checkpoint: " + path.string());
  }
  template <typename T>
  T pod(const std::string& what) {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof(T), what);
    return v;
  }
  void read(char* p, std::size_t n, const std::string& what) {
    in_.read(p, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw CheckpointError("checkpoint " + path_.string() + " is truncated while reading " + what);
    }
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) w.pod<std::uint64_t>(static_cast<std::uint64_t>(d));
  w.bytes(reinterpret_cast<const char*>(t.raw()), static_cast<std::size_t>(t.size()) * sizeof(double));
}

struct Contents {
  std::vector<std::pair<std::string, Tensor>> tensors;
  TrainingMetadata meta;
  HeadKind head = HeadKind::scribe;
  Index groups = 4;
};

Contents read_contents(const std::filesystem::path& path) {
  Reader r(path);
  char magic[5];
  r.read(magic, 5, "magic");
  if (std::memcmp(magic, kMagic, 5) != 0) throw CheckpointError(path.string() + " is not a SCRB1 checkpoint");
  Contents c;
  const auto count = r.pod<std::uint32_t>("tensor count");
  if (count > 4096) throw CheckpointError("implausible tensor count " + std::to_string(count) + " in " + path.string());
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.pod<std::uint32_t>("tensor name length");
    if (name_len > 1024) throw CheckpointError("implausible tensor name length in " + path.string());
    std::string name(name_len, '\0');
    r.read(name.data(), name_len, "tensor name");
    const auto rank = r.pod<std::uint32_t>("rank of tensor '" + name + "'");
    if (rank > 8) throw CheckpointError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.pod<std::uint64_t>("shape of tensor '" + name + "'");
      if (d > (1u << 28)) throw CheckpointError("tensor '" + name + "' has implausible dimension");
      shape.push_back(static_cast<Index>(d));
    }
    Tensor t(shape);
    r.read(reinterpret_cast<char*>(t.raw()), static_cast<std::size_t>(t.size()) * sizeof(double), "data of tensor '" + name + "'");
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  c.meta.seed = r.pod<std::uint64_t>("metadata seed");
  c.meta.epoch = r.pod<std::uint32_t>("metadata epoch");
  c.meta.config_hash = r.pod<std::uint64_t>("metadata config hash");
  const auto head = r.pod<std::uint8_t>("metadata head kind");
  if (head > 1) throw CheckpointError("unknown head kind code " + std::to_string(head));
  c.head = head == 0 ? HeadKind::scribe : HeadKind::softmax_baseline;
  c.groups = static_cast<Index>(r.pod<std::uint32_t>("metadata groups"));
  return c;
}

const Tensor& find_tensor(const Contents& c, const std::string& name, const std::filesystem::path& path) {
  for (const auto& [n, t] : c.tensors) {
    if (n == name) return t;
  }
  throw CheckpointError("checkpoint " + path.string() + " has no tensor '" + name + "'");
}

void apply(ScribeNet& model, const Contents& c, const std::filesystem::path& path) {
  for (Parameter& p : model.parameters()) {
    const Tensor& t = find_tensor(c, p.name, path);
    if (t.shape() != p.value.shape()) {
      throw CheckpointError("shape mismatch for tensor '" + p.name + "': checkpoint has " + shape_string(t.shape()) +
                            ", model expects " + shape_string(p.value.shape()));
    }
    p.value = t;
  }
  const Tensor& mean = find_tensor(c, "input.mean", path);
  const Tensor& stdv = find_tensor(c, "input.std", path);
  if (mean.size() != 3 || stdv.size() != 3) throw CheckpointError("input normalization tensors must hold 3 values");
  for (Index i = 0; i < 3; ++i) {
    model.input_mean[i] = mean[i];
    model.input_std[i] = stdv[i];
  }
  model.metadata = c.meta;
}

}  // namespace

void save_checkpoint(const ScribeNet& model, const std::filesystem::path& path) {
  Writer w(path);
  w.bytes(kMagic, 5);
  const auto& params = model.parameters();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.size() + 2));
  for (const Parameter& p : params) write_tensor(w, p.name, p.value);
  write_tensor(w, "input.mean", Tensor({3}, {model.input_mean[0], model.input_mean[1], model.input_mean[2]}));
  write_tensor(w, "input.std", Tensor({3}, {model.input_std[0], model.input_std[1], model.input_std[2]}));
  w.pod<std::uint64_t>(model.metadata.seed);
  w.pod<std::uint32_t>(model.metadata.epoch);
  w.pod<std::uint64_t>(model.metadata.config_hash);
  w.pod<std::uint8_t>(model.head_kind() == HeadKind::scribe ? 0 : 1);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(model.config().groups));
  w.finish();
}

ScribeNet load_checkpoint(const std::filesystem::path& path) {
  const Contents c = read_contents(path);
  const Tensor& head_bias = find_tensor(c, "head.bias", path);
  const Tensor& conv1 = find_tensor(c, "conv1.weight", path);
  if (head_bias.rank() != 1 || conv1.rank() != 4) throw CheckpointError("malformed head.bias or conv1.weight in " + path.string());
  NetConfig cfg;
  cfg.k_classes = head_bias.dim(0);
  cfg.width = conv1.dim(0);
  cfg.groups = c.groups;
  cfg.head = c.head;
  ScribeNet model(cfg);
  apply(model, c, path);
  return model;
}

void load_checkpoint_into(ScribeNet& model, const std::filesystem::path& path) {
  const Contents c = read_contents(path);
  ScribeNet staged = model;
  apply(staged, c, path);
  staged.set_head_kind(c.head);
  model = std::move(staged);
}

}  // namespace scribe
