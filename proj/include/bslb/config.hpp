#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bslb/attack.hpp"
#include "bslb/bayes.hpp"
#include "bslb/manifold.hpp"
#include "bslb/metrics.hpp"
#include "bslb/network.hpp"

namespace bslb {

enum class DatasetKind { mnist, fashion_mnist, synthetic_manifold };
enum class ModelKind { deterministic, vi, hmc };
enum class SeedClassRule { predicted, true_label };

namespace detail {

inline SgdOptions experiment_sgd_defaults() {
  SgdOptions o;
  o.learning_rate = 0.05;
  o.epochs = 20;
  o.batch_size = 64;
  o.momentum = 0.9;
  return o;
}

inline HmcOptions experiment_hmc_defaults() {
  HmcOptions o;
  o.step_size = 1e-3;
  o.leapfrog_steps = 50;
  o.draws = 150;
  return o;
}

inline ViOptions experiment_vi_defaults() {
  ViOptions o;
  o.steps = 2000;
  o.learning_rate = 1e-3;
  o.final_lr_fraction = 0.1;
  o.batch_size = 128;
  return o;
}

}  // namespace detail

const char* to_string(DatasetKind kind);
const char* to_string(ModelKind kind);

/// Everything one experiment run depends on. Text form: one `key = value`
/// per line, `#` starts a comment, lists are comma separated. See
/// `config_keys()` for the accepted keys.
struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::mnist;
  std::filesystem::path data_dir = "data/mnist";
  Index train_size = 5000;
  Index test_size = 500;

  std::vector<Index> hidden = {128, 128};
  bool bias = true;
  SgdOptions train = detail::experiment_sgd_defaults();

  AttackSpec attack;
  LrpSettings lrp;
  SeedClassRule seed_class = SeedClassRule::predicted;
  BayesRobustnessMode bayes_mode = BayesRobustnessMode::averaged_heatmap;

  std::vector<ModelKind> models = {ModelKind::deterministic, ModelKind::hmc};
  GaussianPrior prior{0.1};  // broader priors leave the ensemble too diffuse at 2000 images
  Index hmc_subset = 2000;     // first images of the training subset
  bool hmc_init_from_sgd = true;
  HmcOptions hmc = detail::experiment_hmc_defaults();
  ViOptions vi = detail::experiment_vi_defaults();
  std::size_t vi_samples = 100;

  std::vector<std::size_t> sample_counts = {10, 50, 100};
  std::vector<Index> kgrid = {10, 30, 100};
  std::vector<int> layers = {0, 1, 2};

  ManifoldSpec manifold;
  Index manifold_eval_points = 64;

  int threads = 1;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";

  /// Cross-field checks (layer indices, k range, sample counts, ...).
  void validate() const;
  NetworkSpec network(Index input_width, int class_count) const;
  bool has_model(ModelKind kind) const;
  std::size_t max_sample_count() const;
};

/// Parses the text form on top of the defaults. Unknown keys and malformed
/// values raise ConfigError naming the line.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies one `key=value` override.
void apply_override(ExperimentConfig& config, std::string_view assignment);

/// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const ExperimentConfig& config);

/// Accepted keys with one-line descriptions, in canonical order.
const std::vector<std::pair<std::string, std::string>>& config_keys();

/// Indices of `count` points drawn without replacement, as evenly as
/// possible across classes: each class gets floor(count / classes) or one
/// more, unless it runs short. Returned in ascending order.
std::vector<Index> balanced_sample(std::span<const int> labels, int class_count, Index count,
                                   std::uint64_t seed);

/// Printable number that parses back to the same double.
std::string format_number(double v);

}  // namespace bslb
