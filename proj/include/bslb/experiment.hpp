#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bslb/config.hpp"
#include "bslb/ensemble.hpp"
#include "bslb/network.hpp"

namespace bslb {

/// One evaluated (point, model, N, layer, k) cell.
struct RobustnessRecord {
  Index point_id = 0;  // column in the test file
  ModelKind model_kind = ModelKind::deterministic;
  std::size_t sample_count = 1;
  int layer = 0;
  Index k = 0;
  double klrp = 0.0;            // under config.bayes_mode
  double klrp_alternate = 0.0;  // under the other Bayesian mode; equals klrp for single networks
  double softmax_rob = 0.0;
  bool attack_succeeded = false;
  int clean_pred = 0;
  int adv_pred = 0;
  int true_label = 0;

  bool operator==(const RobustnessRecord&) const = default;
};

using RecordSink = std::function<void(const RobustnessRecord&)>;

struct ExperimentData {
  LabeledDataset train;
  LabeledDataset test;  // the whole test split
  std::vector<Index> test_points;
  int class_count = 0;
};

/// Training subset, test split and the class-balanced test points.
ExperimentData load_experiment_data(const ExperimentConfig& config);

struct TrainedModels {
  NetworkSpec spec;
  Weights deterministic;
  std::optional<PosteriorEnsemble> vi;
  std::optional<PosteriorEnsemble> hmc;

  const PosteriorEnsemble& ensemble(ModelKind kind) const;
};

Weights train_deterministic(const ExperimentConfig& config, const NetworkSpec& spec,
                            const LabeledDataset& train);

/// HMC on the first hmc.subset training images. Starts at `init` when given.
PosteriorEnsemble infer_hmc(const ExperimentConfig& config, const NetworkSpec& spec,
                            const LabeledDataset& train, const std::optional<Weights>& init);

/// VI fit followed by vi.samples draws; the fitted posterior goes to
/// `posterior` when non-null.
PosteriorEnsemble infer_vi(const ExperimentConfig& config, const NetworkSpec& spec,
                           const LabeledDataset& train, VariationalPosterior* posterior = nullptr);

/// Trains or samples every model named in config.models.
TrainedModels build_models(const ExperimentConfig& config, const ExperimentData& data);

struct GroupSummary {
  ModelKind model_kind = ModelKind::deterministic;
  std::size_t sample_count = 1;
  int layer = 0;
  Index k = 0;
  std::size_t count = 0;
  double mean_klrp = 0.0;
  double mean_softmax_rob = 0.0;
  double attack_success_rate = 0.0;
  std::optional<double> pearson_r;  // empty when either series is constant
};

/// Bayesian minus deterministic mean k-LRP robustness for one cell.
struct GapSummary {
  ModelKind model_kind = ModelKind::hmc;
  std::size_t sample_count = 1;
  int layer = 0;
  Index k = 0;
  double deterministic_mean = 0.0;
  double bayesian_mean = 0.0;
  double gap = 0.0;
  double welch_p = 1.0;  // one-sided, Bayesian above deterministic
};

struct ExperimentSummary {
  std::vector<GroupSummary> groups;
  std::vector<GapSummary> gaps;
};

/// Groups are ordered by (model, N, layer, k) as first seen in `records`.
ExperimentSummary summarize(std::span<const RobustnessRecord> records);

struct ExperimentResult {
  std::vector<RobustnessRecord> records;
  ExperimentSummary summary;
};

/// Attacks every selected test point against every model and scores the
/// explanations. Records arrive at `sink` point by point in test-point
/// order, so whatever reached the sink before an exception is a complete
/// prefix. Deterministic rows are repeated for each N so every (model, N)
/// group has one row per point.
ExperimentResult evaluate_robustness(const ExperimentConfig& config, const ExperimentData& data,
                                     const TrainedModels& models, const RecordSink& sink = {});

/// load_experiment_data + build_models + evaluate_robustness.
ExperimentResult run_experiment(const ExperimentConfig& config, const RecordSink& sink = {});

/// Zero-averaging ratio of the synthetic manifold task for each N.
struct GeometryRow {
  std::size_t sample_count = 1;
  double ratio = 0.0;
  std::size_t degenerate_points = 0;
};

struct GeometryResult {
  double train_accuracy = 0.0;  // deterministic network
  double ensemble_accuracy = 0.0;
  double acceptance_rate = 0.0;
  std::vector<GeometryRow> rows;
};

/// Trains on config.manifold (train_size points), samples the posterior with
/// HMC and evaluates the ratio on a manifold_eval_points grid, explaining
/// logit 1.
GeometryResult run_geometry(const ExperimentConfig& config);

}  // namespace bslb
