#include "bslb/experiment.hpp"

#include <algorithm>
#include <exception>
#include <limits>
#include <map>
#include <thread>
#include <tuple>

#include "bslb/attack.hpp"
#include "bslb/bayes.hpp"
#include "bslb/idx.hpp"
#include "bslb/lrp.hpp"
#include "bslb/manifold.hpp"
#include "bslb/metrics.hpp"
#include "bslb/rng.hpp"

namespace bslb {

namespace {

constexpr int kImageClasses = 10;

LabeledDataset head(const LabeledDataset& data, Index n) {
  std::vector<Index> idx(static_cast<std::size_t>(std::min(n, data.size())));
  std::iota(idx.begin(), idx.end(), Index{0});
  return data.subset(idx);
}

}  // namespace

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  config.validate();
  ExperimentData out;
  if (config.dataset == DatasetKind::synthetic_manifold) {
    out.train = make_manifold_dataset(config.manifold, config.train_size,
                                      derive_seed(config.seed, "manifold-train"));
    out.test = make_manifold_dataset(config.manifold, config.test_size,
                                     derive_seed(config.seed, "manifold-test"));
    out.class_count = 2;
  } else {
    const auto& dir = config.data_dir;
    const auto train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    if (train.size() < config.train_size)
      throw ConfigError("train_size " + std::to_string(config.train_size) + " exceeds the " +
                        std::to_string(train.size()) + " available training images");
    out.train = head(train, config.train_size);
    out.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    out.class_count = kImageClasses;
  }
  if (out.test.size() < config.test_size)
    throw ConfigError("test_size " + std::to_string(config.test_size) + " exceeds the " +
                      std::to_string(out.test.size()) + " available test points");
  for (Index k : config.kgrid)
    if (k > out.train.dim())
      throw ConfigError("k = " + std::to_string(k) + " exceeds the input dimension " +
                        std::to_string(out.train.dim()));
  out.test_points = balanced_sample(out.test.labels, out.class_count, config.test_size, config.seed);
  return out;
}

const PosteriorEnsemble& TrainedModels::ensemble(ModelKind kind) const {
  const auto& e = kind == ModelKind::vi ? vi : hmc;
  if (!e) throw ParameterError(std::string("no ") + to_string(kind) + " ensemble available");
  return *e;
}

Weights train_deterministic(const ExperimentConfig& config, const NetworkSpec& spec,
                            const LabeledDataset& train) {
  SgdOptions options = config.train;
  options.seed = config.seed;
  return train_sgd(spec, train, options);
}

PosteriorEnsemble infer_hmc(const ExperimentConfig& config, const NetworkSpec& spec,
                            const LabeledDataset& train, const std::optional<Weights>& init) {
  HmcOptions options = config.hmc;
  options.seed = config.seed;
  return hmc_sample(spec, head(train, config.hmc_subset), config.prior, options, init);
}

PosteriorEnsemble infer_vi(const ExperimentConfig& config, const NetworkSpec& spec,
                           const LabeledDataset& train, VariationalPosterior* posterior) {
  ViOptions options = config.vi;
  options.seed = config.seed;
  std::vector<double> trace;
  const auto fitted = vi_fit(spec, train, config.prior, options, &trace);
  auto ensemble = vi_sample(spec, fitted, config.vi_samples, config.seed);
  ensemble.meta.elbo_trace = std::move(trace);
  if (posterior) *posterior = fitted;
  return ensemble;
}

TrainedModels build_models(const ExperimentConfig& config, const ExperimentData& data) {
  TrainedModels models;
  models.spec = config.network(data.train.dim(), data.class_count);
  models.deterministic = train_deterministic(config, models.spec, data.train);
  if (config.has_model(ModelKind::hmc)) {
    models.hmc = infer_hmc(config, models.spec, data.train,
                           config.hmc_init_from_sgd ? std::optional<Weights>(models.deterministic)
                                                    : std::nullopt);
  }
  if (config.has_model(ModelKind::vi)) models.vi = infer_vi(config, models.spec, data.train);
  return models;
}

namespace {

RelevanceSeed seed_for(const NetworkSpec& spec, int layer, int class_index) {
  if (layer == spec.layer_count() - 1) return RelevanceSeed::class_logit(spec, class_index);
  return RelevanceSeed::all_units(layer);
}

struct PointContext {
  const ExperimentConfig& config;
  const TrainedModels& models;
  Index point_id;
  Eigen::VectorXd x;
  int true_label;
  AttackSpec attack;
};

int explained_class(const PointContext& ctx, int clean_pred) {
  return ctx.config.seed_class == SeedClassRule::predicted ? clean_pred : ctx.true_label;
}

void deterministic_records(const PointContext& ctx, std::vector<RobustnessRecord>& out) {
  const auto& spec = ctx.models.spec;
  const auto& w = ctx.models.deterministic;
  const auto& lrp = ctx.config.lrp;
  const auto clean = forward(spec, w, ctx.x);
  const int clean_pred = argmax(clean.logits());
  const Eigen::VectorXd x_adv = attack_input(spec, w, ctx.x, std::nullopt, ctx.attack);
  const auto adv = forward(spec, w, x_adv);
  const int adv_pred = argmax(adv.logits());
  const double soft = softmax_robustness(softmax(clean.logits()), softmax(adv.logits()));
  const int c = explained_class(ctx, clean_pred);

  for (int layer : ctx.config.layers) {
    const auto seed = seed_for(spec, layer, c);
    const auto h_clean = lrp_epsilon(spec, w, clean, seed, lrp.eps, lrp.stabilizer);
    const auto h_adv = lrp_epsilon(spec, w, adv, seed, lrp.eps, lrp.stabilizer);
    for (Index k : ctx.config.kgrid) {
      RobustnessRecord r;
      r.point_id = ctx.point_id;
      r.model_kind = ModelKind::deterministic;
      r.layer = layer;
      r.k = k;
      r.klrp = klrp_robustness(h_clean, h_adv, k, lrp.ranking);
      r.klrp_alternate = r.klrp;
      r.softmax_rob = soft;
      r.attack_succeeded = adv_pred != clean_pred;
      r.clean_pred = clean_pred;
      r.adv_pred = adv_pred;
      r.true_label = ctx.true_label;
      for (std::size_t n : ctx.config.sample_counts) {
        r.sample_count = n;
        out.push_back(r);
      }
    }
  }
}

void bayesian_records(const PointContext& ctx, ModelKind kind, std::vector<RobustnessRecord>& out) {
  const auto& spec = ctx.models.spec;
  const auto& full = ctx.models.ensemble(kind);
  const auto& lrp = ctx.config.lrp;
  const auto alternate = ctx.config.bayes_mode == BayesRobustnessMode::averaged_heatmap
                             ? BayesRobustnessMode::expected_robustness
                             : BayesRobustnessMode::averaged_heatmap;
  for (std::size_t n : ctx.config.sample_counts) {
    const auto ensemble = full.subset(n);
    const Eigen::VectorXd p_clean = posterior_predictive(spec, ensemble, ctx.x);
    const int clean_pred = argmax(p_clean);
    const Eigen::VectorXd x_adv = bayes_attack_input(spec, ensemble, ctx.x, clean_pred, ctx.attack);
    const Eigen::VectorXd p_adv = posterior_predictive(spec, ensemble, x_adv);
    const int adv_pred = argmax(p_adv);
    const double soft = softmax_robustness(p_clean, p_adv);
    const int c = explained_class(ctx, clean_pred);

    std::vector<ActivationTrace<double>> clean_traces, adv_traces;
    for (const auto& w : ensemble.samples) {
      clean_traces.push_back(forward(spec, w, ctx.x));
      adv_traces.push_back(forward(spec, w, x_adv));
    }
    for (int layer : ctx.config.layers) {
      const auto seed = seed_for(spec, layer, c);
      std::vector<Heatmap<double>> h_clean, h_adv;
      for (std::size_t s = 0; s < ensemble.size(); ++s) {
        h_clean.push_back(lrp_epsilon(spec, ensemble.samples[s], clean_traces[s], seed, lrp.eps,
                                      lrp.stabilizer));
        h_adv.push_back(
            lrp_epsilon(spec, ensemble.samples[s], adv_traces[s], seed, lrp.eps, lrp.stabilizer));
      }
      for (Index k : ctx.config.kgrid) {
        RobustnessRecord r;
        r.point_id = ctx.point_id;
        r.model_kind = kind;
        r.sample_count = n;
        r.layer = layer;
        r.k = k;
        r.klrp = bayes_klrp_robustness(h_clean, h_adv, k, ctx.config.bayes_mode, lrp.ranking);
        r.klrp_alternate = bayes_klrp_robustness(h_clean, h_adv, k, alternate, lrp.ranking);
        r.softmax_rob = soft;
        r.attack_succeeded = adv_pred != clean_pred;
        r.clean_pred = clean_pred;
        r.adv_pred = adv_pred;
        r.true_label = ctx.true_label;
        out.push_back(r);
      }
    }
  }
}

std::vector<RobustnessRecord> point_records(const ExperimentConfig& config, const ExperimentData& data,
                                            const TrainedModels& models, Index point_id) {
  PointContext ctx{config, models, point_id, data.test.inputs.col(point_id),
                   data.test.labels[static_cast<std::size_t>(point_id)], config.attack};
  ctx.attack.seed = derive_seed(config.seed, "point-" + std::to_string(point_id));
  std::vector<RobustnessRecord> out;
  for (ModelKind kind : config.models) {
    if (kind == ModelKind::deterministic)
      deterministic_records(ctx, out);
    else
      bayesian_records(ctx, kind, out);
  }
  return out;
}

}  // namespace

ExperimentResult evaluate_robustness(const ExperimentConfig& config, const ExperimentData& data,
                                     const TrainedModels& models, const RecordSink& sink) {
  config.validate();
  for (ModelKind kind : config.models) {
    if (kind == ModelKind::deterministic) continue;
    const auto& e = models.ensemble(kind);
    if (e.size() < config.max_sample_count())
      throw ConfigError(std::string(to_string(kind)) + " ensemble holds " + std::to_string(e.size()) +
                        " samples, fewer than the largest sample count " +
                        std::to_string(config.max_sample_count()));
  }

  ExperimentResult result;
  const auto& points = data.test_points;
  const std::size_t batch = static_cast<std::size_t>(config.threads);
  for (std::size_t start = 0; start < points.size(); start += batch) {
    const std::size_t end = std::min(points.size(), start + batch);
    std::vector<std::vector<RobustnessRecord>> slots(end - start);
    std::vector<std::exception_ptr> errors(end - start);
    auto work = [&](std::size_t i) {
      try {
        slots[i] = point_records(config, data, models, points[start + i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    };
    if (batch == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t i = 0; i < slots.size(); ++i) pool.emplace_back(work, i);
      for (auto& t : pool) t.join();
    }
    // Emit in point order up to the first failure.
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (errors[i]) std::rethrow_exception(errors[i]);
      for (const auto& r : slots[i]) {
        if (sink) sink(r);
        result.records.push_back(r);
      }
    }
  }
  result.summary = summarize(result.records);
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RecordSink& sink) {
  const auto data = load_experiment_data(config);
  const auto models = build_models(config, data);
  return evaluate_robustness(config, data, models, sink);
}

ExperimentSummary summarize(std::span<const RobustnessRecord> records) {
  using Key = std::tuple<ModelKind, std::size_t, int, Index>;
  std::map<Key, std::size_t> slot;
  std::vector<Key> order;
  std::vector<std::vector<const RobustnessRecord*>> members;
  for (const auto& r : records) {
    const Key key{r.model_kind, r.sample_count, r.layer, r.k};
    auto [it, inserted] = slot.try_emplace(key, order.size());
    if (inserted) {
      order.push_back(key);
      members.emplace_back();
    }
    members[it->second].push_back(&r);
  }

  ExperimentSummary summary;
  std::vector<std::vector<double>> klrp(order.size());
  for (std::size_t g = 0; g < order.size(); ++g) {
    const auto& rows = members[g];
    std::vector<double> soft;
    double successes = 0.0;
    for (const auto* r : rows) {
      klrp[g].push_back(r->klrp);
      soft.push_back(r->softmax_rob);
      successes += r->attack_succeeded ? 1.0 : 0.0;
    }
    GroupSummary s;
    std::tie(s.model_kind, s.sample_count, s.layer, s.k) = order[g];
    s.count = rows.size();
    s.mean_klrp = mean(klrp[g]);
    s.mean_softmax_rob = mean(soft);
    s.attack_success_rate = successes / static_cast<double>(rows.size());
    if (rows.size() >= 2) {
      try {
        s.pearson_r = pearson_correlation(klrp[g], soft);
      } catch (const DegenerateInputError&) {
      }
    }
    summary.groups.push_back(s);
  }

  for (std::size_t g = 0; g < order.size(); ++g) {
    const auto& [model, n, layer, k] = order[g];
    if (model == ModelKind::deterministic) continue;
    const auto det = slot.find(Key{ModelKind::deterministic, n, layer, k});
    if (det == slot.end()) continue;
    GapSummary gap;
    gap.model_kind = model;
    gap.sample_count = n;
    gap.layer = layer;
    gap.k = k;
    gap.deterministic_mean = summary.groups[det->second].mean_klrp;
    gap.bayesian_mean = summary.groups[g].mean_klrp;
    gap.gap = gap.bayesian_mean - gap.deterministic_mean;
    gap.welch_p = klrp[g].size() >= 2 && klrp[det->second].size() >= 2
                      ? welch_t_test(klrp[g], klrp[det->second]).p_value
                      : std::numeric_limits<double>::quiet_NaN();
    summary.gaps.push_back(gap);
  }
  return summary;
}

GeometryResult run_geometry(const ExperimentConfig& config) {
  config.validate();
  const auto& mspec = config.manifold;
  mspec.validate();
  const auto train =
      make_manifold_dataset(mspec, config.train_size, derive_seed(config.seed, "manifold-train"));
  const auto spec = config.network(mspec.ambient_dim, 2);
  const Weights det = train_deterministic(config, spec, train);
  const auto ensemble = infer_hmc(config, spec, train,
                                  config.hmc_init_from_sgd ? std::optional<Weights>(det) : std::nullopt);
  if (ensemble.size() < config.max_sample_count())
    throw ConfigError("HMC kept " + std::to_string(ensemble.size()) +
                      " samples, fewer than the largest sample count");

  GeometryResult out;
  out.train_accuracy = accuracy(spec, det, train);
  out.acceptance_rate = ensemble.meta.acceptance_rate;
  Index correct = 0;
  for (Index i = 0; i < train.size(); ++i)
    if (argmax(posterior_predictive(spec, ensemble, train.inputs.col(i))) ==
        train.labels[static_cast<std::size_t>(i)])
      ++correct;
  out.ensemble_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());

  const auto grid = make_manifold_grid(mspec, config.manifold_eval_points);
  for (std::size_t n : config.sample_counts) {
    const auto stat = zero_avg_statistic(spec, ensemble.subset(n), mspec, grid.inputs, 1);
    GeometryRow row;
    row.sample_count = n;
    row.ratio = stat.ratio;
    row.degenerate_points =
        static_cast<std::size_t>(std::count(stat.degenerate.begin(), stat.degenerate.end(), true));
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace bslb
