#include "bslb/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "bslb/rng.hpp"

namespace bslb {

const char* to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::mnist: return "mnist";
    case DatasetKind::fashion_mnist: return "fashion-mnist";
    case DatasetKind::synthetic_manifold: return "synthetic-manifold";
  }
  return "?";
}

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::deterministic: return "deterministic";
    case ModelKind::vi: return "vi";
    case ModelKind::hmc: return "hmc";
  }
  return "?";
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty())
    throw ConfigError("expected a number, got '" + std::string(v) + "'");
  return out;
}

template <typename Int>
Int parse_int(std::string_view v) {
  Int out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty())
    throw ConfigError("expected an integer, got '" + std::string(v) + "'");
  return out;
}

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected true or false, got '" + std::string(v) + "'");
}

template <typename Int>
std::vector<Int> parse_int_list(std::string_view v) {
  std::vector<Int> out;
  for (auto item : split(v, ',')) out.push_back(parse_int<Int>(item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += fmt(xs[i]);
  }
  return out;
}

template <typename Int>
std::string join_ints(const std::vector<Int>& xs) {
  return join<Int>(xs, [](const Int& x) { return std::to_string(x); });
}

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view v, const std::pair<const char*, Enum> (&table)[N]) {
  for (const auto& [name, value] : table)
    if (v == name) return value;
  std::string allowed;
  for (const auto& [name, value] : table) allowed += std::string(allowed.empty() ? "" : ", ") + name;
  throw ConfigError("unknown value '" + std::string(v) + "' (allowed: " + allowed + ")");
}

template <typename Enum, std::size_t N>
std::string enum_name(Enum e, const std::pair<const char*, Enum> (&table)[N]) {
  for (const auto& [name, value] : table)
    if (value == e) return name;
  return "?";
}

constexpr std::pair<const char*, DatasetKind> kDatasets[] = {
    {"mnist", DatasetKind::mnist},
    {"fashion-mnist", DatasetKind::fashion_mnist},
    {"synthetic-manifold", DatasetKind::synthetic_manifold}};
constexpr std::pair<const char*, ModelKind> kModels[] = {{"deterministic", ModelKind::deterministic},
                                                          {"vi", ModelKind::vi},
                                                          {"hmc", ModelKind::hmc}};
constexpr std::pair<const char*, AttackMethod> kMethods[] = {{"fgsm", AttackMethod::fgsm},
                                                              {"pgd", AttackMethod::pgd}};
constexpr std::pair<const char*, Stabilizer> kStabilizers[] = {
    {"sign-matched", Stabilizer::sign_matched}, {"literal", Stabilizer::literal}};
constexpr std::pair<const char*, Ranking> kRankings[] = {{"signed", Ranking::signed_descending},
                                                          {"absolute", Ranking::absolute_descending}};
constexpr std::pair<const char*, SeedClassRule> kSeedRules[] = {
    {"predicted", SeedClassRule::predicted}, {"true", SeedClassRule::true_label}};
constexpr std::pair<const char*, BayesRobustnessMode> kModes[] = {
    {"averaged-heatmap", BayesRobustnessMode::averaged_heatmap},
    {"expected-robustness", BayesRobustnessMode::expected_robustness}};
constexpr std::pair<const char*, ManifoldKind> kManifolds[] = {{"circle", ManifoldKind::circle},
                                                                {"torus", ManifoldKind::torus}};

struct Key {
  std::string name;
  std::string help;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define BSLB_NUM(key, field, help)                                                        \
  Key {                                                                                   \
    key, help, [](ExperimentConfig& c, std::string_view v) { c.field = parse_double(v); }, \
        [](const ExperimentConfig& c) { return format_number(c.field); }                  \
  }
#define BSLB_INT(key, field, help)                                                          \
  Key {                                                                                     \
    key, help,                                                                              \
        [](ExperimentConfig& c, std::string_view v) {                                       \
          c.field = parse_int<std::remove_cvref_t<decltype(c.field)>>(v);                   \
        },                                                                                  \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }                   \
  }
#define BSLB_BOOL(key, field, help)                                                      \
  Key {                                                                                  \
    key, help, [](ExperimentConfig& c, std::string_view v) { c.field = parse_bool(v); }, \
        [](const ExperimentConfig& c) { return std::string(c.field ? "true" : "false"); } \
  }
#define BSLB_ENUM(key, field, table, help)                                                     \
  Key {                                                                                        \
    key, help, [](ExperimentConfig& c, std::string_view v) { c.field = parse_enum(v, table); }, \
        [](const ExperimentConfig& c) { return enum_name(c.field, table); }                    \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      BSLB_ENUM("dataset", dataset, kDatasets, "mnist | fashion-mnist | synthetic-manifold"),
      Key{"data_dir", "directory holding the four IDX files",
          [](ExperimentConfig& c, std::string_view v) { c.data_dir = std::string(v); },
          [](const ExperimentConfig& c) { return c.data_dir.string(); }},
      BSLB_INT("train_size", train_size, "training images (taken from the start of the train file)"),
      BSLB_INT("test_size", test_size, "class-balanced test points to attack"),
      Key{"hidden", "hidden layer widths, comma separated",
          [](ExperimentConfig& c, std::string_view v) { c.hidden = parse_int_list<Index>(v); },
          [](const ExperimentConfig& c) { return join_ints(c.hidden); }},
      BSLB_BOOL("bias", bias, "layers carry biases"),
      BSLB_NUM("train.learning_rate", train.learning_rate, "SGD learning rate"),
      BSLB_INT("train.epochs", train.epochs, "SGD epochs"),
      BSLB_INT("train.batch_size", train.batch_size, "SGD mini-batch size"),
      BSLB_NUM("train.momentum", train.momentum, "SGD momentum"),
      BSLB_NUM("train.weight_decay", train.weight_decay, "L2 coefficient on the mean loss"),
      BSLB_ENUM("attack.method", attack.method, kMethods, "fgsm | pgd"),
      BSLB_NUM("attack.delta", attack.delta, "FGSM strength"),
      BSLB_NUM("attack.eps", attack.eps, "PGD L-infinity radius"),
      BSLB_NUM("attack.alpha", attack.alpha, "PGD step size"),
      BSLB_INT("attack.steps", attack.steps, "PGD iterations"),
      BSLB_BOOL("attack.random_init", attack.random_init, "PGD random start"),
      BSLB_NUM("attack.clip_low", attack.clip_low, "lowest valid pixel value"),
      BSLB_NUM("attack.clip_high", attack.clip_high, "highest valid pixel value"),
      BSLB_NUM("lrp.eps", lrp.eps, "epsilon of the LRP rule"),
      BSLB_ENUM("lrp.stabilizer", lrp.stabilizer, kStabilizers, "sign-matched | literal"),
      BSLB_ENUM("lrp.ranking", lrp.ranking, kRankings, "signed | absolute top-k ranking"),
      BSLB_ENUM("lrp.seed_class", seed_class, kSeedRules, "predicted | true: logit explained at the last layer"),
      BSLB_ENUM("bayes_mode", bayes_mode, kModes, "averaged-heatmap | expected-robustness"),
      Key{"models", "model kinds to evaluate: deterministic, vi, hmc",
          [](ExperimentConfig& c, std::string_view v) {
            c.models.clear();
            for (auto item : split(v, ',')) c.models.push_back(parse_enum(item, kModels));
          },
          [](const ExperimentConfig& c) {
            return join<ModelKind>(c.models, [](const ModelKind& m) { return std::string(to_string(m)); });
          }},
      BSLB_NUM("prior.std", prior.std, "std of the isotropic Gaussian weight prior"),
      BSLB_INT("hmc.subset", hmc_subset, "training images in the HMC likelihood"),
      BSLB_BOOL("hmc.init_from_sgd", hmc_init_from_sgd, "start the chain at the trained network"),
      BSLB_NUM("hmc.step_size", hmc.step_size, "leapfrog step size"),
      BSLB_INT("hmc.leapfrog_steps", hmc.leapfrog_steps, "leapfrog steps per proposal"),
      BSLB_INT("hmc.draws", hmc.draws, "Markov transitions including burn-in"),
      BSLB_INT("hmc.burn_in", hmc.burn_in, "discarded transitions, -1 for 20% of draws"),
      BSLB_INT("hmc.thinning", hmc.thinning, "stride between kept draws, -1 for automatic"),
      BSLB_INT("vi.mc_samples", vi.mc_samples, "reparameterized draws per step"),
      BSLB_INT("vi.steps", vi.steps, "optimizer steps"),
      BSLB_NUM("vi.learning_rate", vi.learning_rate, "Adam learning rate"),
      BSLB_NUM("vi.final_lr_fraction", vi.final_lr_fraction, "learning rate at the last step, as a fraction"),
      BSLB_INT("vi.batch_size", vi.batch_size, "mini-batch size, 0 for full batch"),
      BSLB_NUM("vi.init_std", vi.init_std, "initial posterior std"),
      BSLB_INT("vi.samples", vi_samples, "weight samples drawn from the fitted posterior"),
      Key{"sample_counts", "posterior sample counts N to evaluate",
          [](ExperimentConfig& c, std::string_view v) { c.sample_counts = parse_int_list<std::size_t>(v); },
          [](const ExperimentConfig& c) { return join_ints(c.sample_counts); }},
      Key{"kgrid", "top-k sizes",
          [](ExperimentConfig& c, std::string_view v) { c.kgrid = parse_int_list<Index>(v); },
          [](const ExperimentConfig& c) { return join_ints(c.kgrid); }},
      Key{"layers", "learnable layer indices to seed LRP at (0-based)",
          [](ExperimentConfig& c, std::string_view v) { c.layers = parse_int_list<int>(v); },
          [](const ExperimentConfig& c) { return join_ints(c.layers); }},
      BSLB_ENUM("manifold.kind", manifold.kind, kManifolds, "circle | torus"),
      BSLB_INT("manifold.ambient_dim", manifold.ambient_dim, "ambient dimension"),
      BSLB_NUM("manifold.radius", manifold.radius, "circle radius or torus tube radius"),
      BSLB_NUM("manifold.major_radius", manifold.major_radius, "torus major radius"),
      BSLB_INT("manifold.frequency", manifold.frequency, "label oscillations per turn"),
      BSLB_NUM("manifold.phase", manifold.phase, "label phase offset"),
      BSLB_INT("manifold.eval_points", manifold_eval_points, "grid points for the zero-averaging ratio"),
      BSLB_INT("threads", threads, "worker threads for per-point evaluation"),
      Key{"seed", "global seed",
          [](ExperimentConfig& c, std::string_view v) { c.seed = parse_int<std::uint64_t>(v); },
          [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      Key{"output_dir", "where checkpoints and tables go",
          [](ExperimentConfig& c, std::string_view v) { c.output_dir = std::string(v); },
          [](const ExperimentConfig& c) { return c.output_dir.string(); }},
  };
  return table;
}

#undef BSLB_NUM
#undef BSLB_INT
#undef BSLB_BOOL
#undef BSLB_ENUM

void assign(ExperimentConfig& config, std::string_view key, std::string_view value) {
  for (const auto& k : keys()) {
    if (k.name == key) {
      k.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const auto list = [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : keys()) out.emplace_back(k.name, k.help);
    return out;
  }();
  return list;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig config;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find('\n', start), text.size());
    ++line_no;
    auto line = text.substr(start, end - start);
    start = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    try {
      assign(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void apply_override(ExperimentConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  assign(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string format_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (train_size < 1) fail("train_size must be positive");
  if (test_size < 1) fail("test_size must be positive");
  for (Index h : hidden)
    if (h < 1) fail("hidden widths must be positive");
  if (models.empty()) fail("models list is empty");
  if (sample_counts.empty()) fail("sample_counts is empty");
  for (auto n : sample_counts)
    if (n < 1) fail("sample counts must be positive");
  if (kgrid.empty()) fail("kgrid is empty");
  for (Index k : kgrid)
    if (k < 1) fail("k values must be positive");
  if (layers.empty()) fail("layers is empty");
  const int learnable = static_cast<int>(hidden.size()) + 1;
  for (int l : layers)
    if (l < 0 || l >= learnable)
      fail("layer index " + std::to_string(l) + " outside [0, " + std::to_string(learnable) + ")");
  if (threads < 1) fail("threads must be at least 1");
  if (hmc_subset < 1) fail("hmc.subset must be positive");
  if (lrp.eps < 0.0) fail("lrp.eps must be non-negative");
  try {
    attack.validate();
    prior.validate();
    if (dataset == DatasetKind::synthetic_manifold) manifold.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (has_model(ModelKind::vi) && vi_samples < max_sample_count())
    fail("vi.samples is smaller than the largest sample count");
}

NetworkSpec ExperimentConfig::network(Index input_width, int class_count) const {
  return NetworkSpec::mlp(input_width, hidden, class_count, bias);
}

bool ExperimentConfig::has_model(ModelKind kind) const {
  return std::find(models.begin(), models.end(), kind) != models.end();
}

std::size_t ExperimentConfig::max_sample_count() const {
  return *std::max_element(sample_counts.begin(), sample_counts.end());
}

std::vector<Index> balanced_sample(std::span<const int> labels, int class_count, Index count,
                                   std::uint64_t seed) {
  if (class_count < 1) throw ParameterError("class_count must be positive");
  if (count < 0 || count > static_cast<Index>(labels.size()))
    throw ParameterError("cannot draw " + std::to_string(count) + " of " +
                         std::to_string(labels.size()) + " points");
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(class_count));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= class_count) throw IndexError("label " + std::to_string(y) + " out of range");
    by_class[static_cast<std::size_t>(y)].push_back(static_cast<Index>(i));
  }
  Rng rng = make_stream(seed, "point-selection");
  for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);

  // Round-robin over classes in a shuffled order; short classes drop out.
  std::vector<std::size_t> order(static_cast<std::size_t>(class_count));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Index> picked;
  std::vector<std::size_t> taken(order.size(), 0);
  while (static_cast<Index>(picked.size()) < count) {
    for (std::size_t c : order) {
      if (static_cast<Index>(picked.size()) == count) break;
      if (taken[c] < by_class[c].size()) picked.push_back(by_class[c][taken[c]++]);
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace bslb
