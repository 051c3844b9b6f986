// Command-line front end: each pipeline stage is a subcommand reading one
// config file plus --set overrides. Exit codes follow ErrorCategory.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bslb/attack.hpp"
#include "bslb/bayes.hpp"
#include "bslb/checkpoint.hpp"
#include "bslb/config.hpp"
#include "bslb/experiment.hpp"
#include "bslb/idx.hpp"
#include "bslb/lrp.hpp"
#include "bslb/report.hpp"

namespace fs = std::filesystem;
using namespace bslb;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

ExperimentConfig resolve(const CommonArgs& args) {
  ExperimentConfig config = args.config_path.empty() ? ExperimentConfig{} : load_config(args.config_path);
  for (const auto& o : args.overrides) apply_override(config, o);
  config.validate();
  return config;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "key = value config file");
  cmd->add_option("-s,--set", args.overrides, "override, key=value (repeatable)");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

fs::path det_path(const ExperimentConfig& c) { return c.output_dir / "deterministic.bslb"; }
fs::path hmc_path(const ExperimentConfig& c) { return c.output_dir / "hmc.bslb"; }
fs::path vi_path(const ExperimentConfig& c) { return c.output_dir / "vi.bslb"; }
fs::path vi_posterior_path(const ExperimentConfig& c) { return c.output_dir / "vi_posterior.bslb"; }

Weights load_weights(const fs::path& path, const NetworkSpec& spec) {
  auto ck = load_checkpoint(path);
  if (!ck.weights) throw FormatError(path.string() + " does not hold a single weight vector");
  if (!(ck.spec == spec)) throw ShapeError(path.string() + " was saved for a different architecture");
  return *ck.weights;
}

PosteriorEnsemble load_ensemble(const fs::path& path, const NetworkSpec& spec) {
  auto ck = load_checkpoint(path);
  if (!ck.ensemble) throw FormatError(path.string() + " does not hold an ensemble");
  if (!(ck.spec == spec)) throw ShapeError(path.string() + " was saved for a different architecture");
  return *ck.ensemble;
}

Weights deterministic_for(const ExperimentConfig& config, const ExperimentData& data,
                          const NetworkSpec& spec, bool reuse) {
  if (reuse && fs::exists(det_path(config))) return load_weights(det_path(config), spec);
  auto w = train_deterministic(config, spec, data.train);
  save_checkpoint(det_path(config), spec, w);
  return w;
}

int cmd_train(const ExperimentConfig& config) {
  ensure_dir(config.output_dir);
  const auto data = load_experiment_data(config);
  const auto spec = config.network(data.train.dim(), data.class_count);
  const auto w = deterministic_for(config, data, spec, false);
  std::printf("train accuracy %.4f\ntest accuracy %.4f\nsaved %s\n", accuracy(spec, w, data.train),
              accuracy(spec, w, data.test), det_path(config).c_str());
  return 0;
}

int cmd_infer_hmc(const ExperimentConfig& config) {
  ensure_dir(config.output_dir);
  const auto data = load_experiment_data(config);
  const auto spec = config.network(data.train.dim(), data.class_count);
  std::optional<Weights> init;
  if (config.hmc_init_from_sgd) init = deterministic_for(config, data, spec, true);
  const auto ensemble = infer_hmc(config, spec, data.train, init);
  save_checkpoint(hmc_path(config), spec, ensemble);
  std::printf("acceptance rate %.4f%s\nkept samples %zu (burn-in %d, thinning %d)\nsaved %s\n",
              ensemble.meta.acceptance_rate, ensemble.meta.poorly_tuned ? " (poorly tuned)" : "",
              ensemble.size(), ensemble.meta.burn_in, ensemble.meta.thinning, hmc_path(config).c_str());
  return 0;
}

int cmd_infer_vi(const ExperimentConfig& config) {
  ensure_dir(config.output_dir);
  const auto data = load_experiment_data(config);
  const auto spec = config.network(data.train.dim(), data.class_count);
  VariationalPosterior posterior;
  const auto ensemble = infer_vi(config, spec, data.train, &posterior);
  save_checkpoint(vi_posterior_path(config), spec, posterior);
  save_checkpoint(vi_path(config), spec, ensemble);
  const auto& trace = ensemble.meta.elbo_trace;
  std::printf("final ELBO %s\nsamples %zu\nsaved %s and %s\n",
              trace.empty() ? "n/a" : format_number(trace.back()).c_str(), ensemble.size(),
              vi_posterior_path(config).c_str(), vi_path(config).c_str());
  return 0;
}

/// Either a single network or an ensemble, as read from a checkpoint.
struct LoadedModel {
  NetworkSpec spec;
  std::optional<Weights> weights;
  std::optional<PosteriorEnsemble> ensemble;
};

LoadedModel load_model(const fs::path& path) {
  auto ck = load_checkpoint(path);
  LoadedModel m{ck.spec, ck.weights, ck.ensemble};
  if (!m.weights && !m.ensemble)
    throw FormatError(path.string() + " holds a variational posterior; sample it with infer-vi first");
  return m;
}

int cmd_attack(const ExperimentConfig& config, const fs::path& model_path) {
  ensure_dir(config.output_dir);
  const auto data = load_experiment_data(config);
  const auto model = load_model(model_path);
  LabeledDataset adversarial;
  adversarial.inputs.resize(data.test.dim(), static_cast<Index>(data.test_points.size()));
  const auto csv_path = config.output_dir / "attacks.csv";
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << "point_id,true_label,clean_pred,adv_pred,attack_succeeded,linf\n";
  Index col = 0;
  for (Index p : data.test_points) {
    const Eigen::VectorXd x = data.test.inputs.col(p);
    AttackSpec attack = config.attack;
    attack.seed = derive_seed(config.seed, "point-" + std::to_string(p));
    Eigen::VectorXd x_adv;
    int clean = 0, adv = 0;
    if (model.weights) {
      clean = predict_class(model.spec, *model.weights, x);
      x_adv = attack_input(model.spec, *model.weights, x, std::nullopt, attack);
      adv = predict_class(model.spec, *model.weights, x_adv);
    } else {
      clean = ensemble_predict_class(model.spec, *model.ensemble, x);
      x_adv = bayes_attack_input(model.spec, *model.ensemble, x, std::nullopt, attack);
      adv = ensemble_predict_class(model.spec, *model.ensemble, x_adv);
    }
    adversarial.inputs.col(col++) = x_adv;
    adversarial.labels.push_back(data.test.labels[static_cast<std::size_t>(p)]);
    csv << p << ',' << adversarial.labels.back() << ',' << clean << ',' << adv << ','
        << (clean != adv ? 1 : 0) << ',' << format_number((x_adv - x).cwiseAbs().maxCoeff()) << '\n';
  }
  if (!csv) throw IoError("failed writing " + csv_path.string());
  const bool image = data.test.dim() == 784;
  save_idx(config.output_dir / "adversarial-images-idx3-ubyte",
           config.output_dir / "adversarial-labels-idx1-ubyte", adversarial, image ? 28 : 1,
           image ? 28 : static_cast<std::uint32_t>(data.test.dim()));
  std::printf("attacked %zu points\nwrote %s and adversarial IDX files\n", data.test_points.size(),
              csv_path.c_str());
  return 0;
}

int cmd_lrp(const ExperimentConfig& config, const fs::path& model_path, Index point, int layer) {
  ensure_dir(config.output_dir);
  const auto data = load_experiment_data(config);
  const auto model = load_model(model_path);
  if (point < 0 || point >= data.test.size())
    throw IndexError("test point " + std::to_string(point) + " out of range");
  if (layer < 0) layer = model.spec.layer_count() - 1;
  const Eigen::VectorXd x = data.test.inputs.col(point);
  int c = data.test.labels[static_cast<std::size_t>(point)];
  if (config.seed_class == SeedClassRule::predicted)
    c = model.weights ? predict_class(model.spec, *model.weights, x)
                      : ensemble_predict_class(model.spec, *model.ensemble, x);
  RelevanceSeed seed = RelevanceSeed::all_units(layer);
  if (layer == model.spec.layer_count() - 1) seed = RelevanceSeed::class_logit(model.spec, c);
  const auto hm = model.weights
                      ? lrp_epsilon(model.spec, *model.weights, forward(model.spec, *model.weights, x),
                                    seed, config.lrp.eps, config.lrp.stabilizer)
                      : bayes_heatmap(model.spec, *model.ensemble, x, seed, config.lrp.eps,
                                      config.lrp.stabilizer);
  const auto path = config.output_dir / ("heatmap-" + std::to_string(point) + ".csv");
  std::ofstream out(path, std::ios::binary);
  out << "pixel,relevance\n";
  for (Index i = 0; i < hm.size(); ++i) out << i << ',' << format_number(hm.relevances(i)) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
  std::printf("explained class %d at layer %d\nwrote %s\n", c, layer, path.c_str());
  return 0;
}

int cmd_robustness(const ExperimentConfig& config, bool reuse) {
  ensure_dir(config.output_dir);
  write_text(config.output_dir / "config.resolved", format_config(config));
  const auto data = load_experiment_data(config);
  TrainedModels models;
  models.spec = config.network(data.train.dim(), data.class_count);
  models.deterministic = deterministic_for(config, data, models.spec, reuse);
  if (config.has_model(ModelKind::hmc)) {
    if (reuse && fs::exists(hmc_path(config))) {
      models.hmc = load_ensemble(hmc_path(config), models.spec);
    } else {
      models.hmc = infer_hmc(config, models.spec, data.train,
                             config.hmc_init_from_sgd ? std::optional<Weights>(models.deterministic)
                                                      : std::nullopt);
      save_checkpoint(hmc_path(config), models.spec, *models.hmc);
    }
  }
  if (config.has_model(ModelKind::vi)) {
    if (reuse && fs::exists(vi_path(config))) {
      models.vi = load_ensemble(vi_path(config), models.spec);
    } else {
      models.vi = infer_vi(config, models.spec, data.train);
      save_checkpoint(vi_path(config), models.spec, *models.vi);
    }
  }

  // Stream records so an abort leaves every finished point on disk.
  const auto records_path = config.output_dir / "records.csv";
  std::ofstream stream(records_path, std::ios::binary);
  if (!stream) throw IoError("cannot write " + records_path.string());
  stream << kRecordsHeader << '\n';
  const auto result = evaluate_robustness(config, data, models, [&](const RobustnessRecord& r) {
    stream << record_csv_line(r) << '\n';
    stream.flush();
  });
  stream.close();

  ReportOptions options;
  options.scatter_layer = models.spec.layer_count() - 1;
  emit_report(result.records, config.output_dir, options);
  for (const auto& g : result.summary.gaps)
    if (g.layer == options.scatter_layer)
      std::printf("%s N=%zu k=%ld: deterministic %.4f, bayesian %.4f, gap %+.4f (p=%.3g)\n",
                  to_string(g.model_kind), g.sample_count, static_cast<long>(g.k),
                  g.deterministic_mean, g.bayesian_mean, g.gap, g.welch_p);
  std::printf("wrote %zu records to %s\n", result.records.size(), config.output_dir.c_str());
  return 0;
}

int cmd_geometry(const ExperimentConfig& config) {
  ensure_dir(config.output_dir);
  const auto result = run_geometry(config);
  const auto path = config.output_dir / "geometry.csv";
  std::ofstream out(path, std::ios::binary);
  out << "sample_count,ratio,degenerate_points\n";
  for (const auto& row : result.rows) {
    out << row.sample_count << ',' << format_number(row.ratio) << ',' << row.degenerate_points << '\n';
    std::printf("N=%zu ratio %.4f\n", row.sample_count, row.ratio);
  }
  if (!out) throw IoError("failed writing " + path.string());
  std::printf("train accuracy %.4f (ensemble %.4f), acceptance %.3f\nwrote %s\n",
              result.train_accuracy, result.ensemble_accuracy, result.acceptance_rate, path.c_str());
  return 0;
}

int cmd_report(const ExperimentConfig& config, const std::string& records) {
  const fs::path input = records.empty() ? config.output_dir / "records.csv" : fs::path(records);
  auto rows = load_records_csv(input);
  const fs::path alt = input.parent_path() / "records_alternate.csv";
  if (fs::exists(alt)) merge_alternate(rows, load_records_csv(alt));
  ReportOptions options;
  options.scatter_layer = static_cast<int>(config.hidden.size());
  emit_report(rows, config.output_dir, options);
  std::printf("read %zu records, wrote tables to %s\n", rows.size(), config.output_dir.c_str());
  return 0;
}

int cmd_keys() {
  for (const auto& [key, help] : config_keys()) std::printf("%-22s %s\n", key.c_str(), help.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial robustness of LRP explanations for deterministic and Bayesian networks"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string model_path, records_path;
  Index point = 0;
  int layer = -1;
  bool reuse = false;

  auto* train = app.add_subcommand("train", "train the deterministic network");
  auto* infer_vi_cmd = app.add_subcommand("infer-vi", "fit a mean-field Gaussian posterior");
  auto* infer_hmc_cmd = app.add_subcommand("infer-hmc", "sample the posterior with HMC");
  auto* attack = app.add_subcommand("attack", "attack test points against a checkpoint");
  auto* lrp = app.add_subcommand("lrp", "write the LRP heatmap of one test point");
  auto* robustness = app.add_subcommand("robustness", "full attack and explanation pipeline");
  auto* geometry = app.add_subcommand("geometry", "zero-averaging ratio on the synthetic manifold");
  auto* report = app.add_subcommand("report", "rebuild tables from records.csv");
  auto* keys = app.add_subcommand("keys", "list config keys");
  for (auto* cmd : {train, infer_vi_cmd, infer_hmc_cmd, attack, lrp, robustness, geometry, report})
    add_common(cmd, common);
  attack->add_option("-m,--model", model_path, "checkpoint to attack")->required();
  lrp->add_option("-m,--model", model_path, "checkpoint to explain")->required();
  lrp->add_option("-p,--point", point, "test point index")->required();
  lrp->add_option("-l,--layer", layer, "seed layer (default: pre-softmax)");
  robustness->add_flag("--reuse", reuse, "load existing checkpoints from output_dir");
  report->add_option("-r,--records", records_path, "records CSV (default: output_dir/records.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorCategory::config);
  }

  try {
    if (keys->parsed()) return cmd_keys();
    const auto config = resolve(common);
    if (train->parsed()) return cmd_train(config);
    if (infer_vi_cmd->parsed()) return cmd_infer_vi(config);
    if (infer_hmc_cmd->parsed()) return cmd_infer_hmc(config);
    if (attack->parsed()) return cmd_attack(config, model_path);
    if (lrp->parsed()) return cmd_lrp(config, model_path, point, layer);
    if (robustness->parsed()) return cmd_robustness(config, reuse);
    if (geometry->parsed()) return cmd_geometry(config);
    if (report->parsed()) return cmd_report(config, records_path);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
