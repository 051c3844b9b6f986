#include "bslb/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <vector>

namespace bslb {

namespace {

constexpr char kMagic[4] = {'B', 'S', 'L', 'B'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }
  template <typename T>
  void put(T v) {
    v = to_little(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void raw(const char* data, std::size_t n) { out_.write(data, static_cast<std::streamsize>(n)); }
  void array(const Eigen::VectorXd& v) {
    put<std::uint64_t>(static_cast<std::uint64_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) put<double>(v(i));
  }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("failed writing " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return to_little(v);
  }
  void raw(char* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  Eigen::VectorXd array() {
    const auto n = get<std::uint64_t>();
    if (n > (bytes_.size() - pos_) / sizeof(double))
      throw FormatError(path_.string() + ": array length " + std::to_string(n) + " exceeds file size");
    Eigen::VectorXd v(static_cast<Index>(n));
    for (Index i = 0; i < v.size(); ++i) v(i) = get<double>();
    return v;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(path_.string() + ": checkpoint truncated");
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
  std::filesystem::path path_;
};

void write_header(Writer& w, CheckpointKind kind, const NetworkSpec& spec, std::uint64_t arrays) {
  w.raw(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kind));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.class_count()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.layer_count()));
  for (const auto& layer : spec.layers()) {
    w.put<std::uint64_t>(static_cast<std::uint64_t>(layer.input_width));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(layer.output_width));
    w.put<std::uint8_t>(layer.has_bias ? 1 : 0);
    w.put<std::uint8_t>(layer.activation == Activation::relu ? 0 : 1);
  }
  w.put<std::uint64_t>(arrays);
}

void check_weights(const NetworkSpec& spec, const Eigen::VectorXd& v) {
  if (v.size() != spec.parameter_count()) throw ShapeError("array does not match the architecture");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec, const Weights& w) {
  check_weights(spec, w.values());
  Writer out(path);
  write_header(out, CheckpointKind::weights, spec, 1);
  out.array(w.values());
  out.finish();
}

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                     const PosteriorEnsemble& ensemble) {
  for (const auto& s : ensemble.samples) check_weights(spec, s.values());
  Writer out(path);
  write_header(out,
               ensemble.method == InferenceMethod::vi ? CheckpointKind::vi_ensemble
                                                      : CheckpointKind::hmc_ensemble,
               spec, ensemble.size());
  for (const auto& s : ensemble.samples) out.array(s.values());
  out.finish();
}

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                     const VariationalPosterior& posterior) {
  check_weights(spec, posterior.mu);
  check_weights(spec, posterior.rho);
  Writer out(path);
  write_header(out, CheckpointKind::variational, spec, 2);
  out.array(posterior.mu);
  out.array(posterior.rho);
  out.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader in(path);
  char magic[4];
  in.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(path.string() + ": bad magic '" + std::string(magic, 4) + "', expected 'BSLB'");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto kind_raw = in.get<std::uint32_t>();
  if (kind_raw > 3) throw FormatError(path.string() + ": unknown payload kind " + std::to_string(kind_raw));

  Checkpoint ck;
  ck.kind = static_cast<CheckpointKind>(kind_raw);
  const auto class_count = in.get<std::uint32_t>();
  const auto layer_count = in.get<std::uint32_t>();
  std::vector<LayerSpec> layers;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    LayerSpec layer;
    layer.input_width = static_cast<Index>(in.get<std::uint64_t>());
    layer.output_width = static_cast<Index>(in.get<std::uint64_t>());
    layer.has_bias = in.get<std::uint8_t>() != 0;
    const auto act = in.get<std::uint8_t>();
    if (act > 1) throw FormatError(path.string() + ": unknown activation code");
    layer.activation = act == 0 ? Activation::relu : Activation::identity;
    layers.push_back(layer);
  }
  ck.spec = NetworkSpec(std::move(layers), static_cast<int>(class_count));

  const auto arrays = in.get<std::uint64_t>();
  std::vector<Eigen::VectorXd> values;
  for (std::uint64_t i = 0; i < arrays; ++i) {
    values.push_back(in.array());
    check_weights(ck.spec, values.back());
  }
  if (!in.at_end()) throw FormatError(path.string() + ": trailing bytes after payload");

  switch (ck.kind) {
    case CheckpointKind::weights:
      if (values.size() != 1) throw FormatError(path.string() + ": weights payload needs one array");
      ck.weights.emplace(ck.spec, std::move(values.front()));
      break;
    case CheckpointKind::vi_ensemble:
    case CheckpointKind::hmc_ensemble: {
      PosteriorEnsemble e;
      e.method = ck.kind == CheckpointKind::vi_ensemble ? InferenceMethod::vi : InferenceMethod::hmc;
      for (auto& v : values) e.samples.emplace_back(ck.spec, std::move(v));
      ck.ensemble = std::move(e);
      break;
    }
    case CheckpointKind::variational:
      if (values.size() != 2) throw FormatError(path.string() + ": variational payload needs two arrays");
      ck.variational = VariationalPosterior{std::move(values[0]), std::move(values[1])};
      break;
  }
  return ck;
}

}  // namespace bslb
