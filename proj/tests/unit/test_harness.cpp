#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "bslb/checkpoint.hpp"
#include "bslb/config.hpp"
#include "bslb/experiment.hpp"
#include "bslb/idx.hpp"
#include "bslb/report.hpp"
#include "support.hpp"

using namespace bslb;
using namespace bslb::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("bslb-unit-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
          static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

// Small synthetic-manifold run that finishes in well under a second.
ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.dataset = DatasetKind::synthetic_manifold;
  c.manifold.ambient_dim = 6;
  c.train_size = 120;
  c.test_size = 12;
  c.hidden = {8};
  c.train.epochs = 5;
  c.train.learning_rate = 0.1;
  c.hmc.step_size = 0.01;
  c.hmc.leapfrog_steps = 5;
  c.hmc.draws = 30;
  c.hmc_subset = 120;
  c.sample_counts = {1, 5};
  c.kgrid = {1, 3};
  c.layers = {0, 1};
  c.seed = 17;
  return c;
}

}  // namespace

TEST_CASE("idx: header and pixel normalization") {
  std::vector<std::uint8_t> images;
  for (std::uint32_t v : {0x00000803u, 2u, 2u, 2u}) {
    const auto b = be32(v);
    images.insert(images.end(), b.begin(), b.end());
  }
  for (std::uint8_t p : {0, 255, 51, 102, 255, 0, 0, 1}) images.push_back(p);
  std::vector<std::uint8_t> labels;
  for (std::uint32_t v : {0x00000801u, 2u}) {
    const auto b = be32(v);
    labels.insert(labels.end(), b.begin(), b.end());
  }
  labels.push_back(3);
  labels.push_back(7);
  const auto data = parse_idx(images, labels);
  REQUIRE(data.size() == 2);
  CHECK(data.dim() == 4);
  CHECK(data.inputs(0, 0) == 0.0);
  CHECK(data.inputs(1, 0) == 1.0);
  CHECK(data.inputs(2, 0) == doctest::Approx(0.2));
  CHECK(data.inputs(3, 1) == doctest::Approx(1.0 / 255.0));
  CHECK(data.labels == std::vector<int>{3, 7});

  auto bad_magic = images;
  bad_magic[3] = 0x01;
  CHECK_THROWS_AS(parse_idx(bad_magic, labels), FormatError);
  auto short_labels = labels;
  short_labels[7] = 1;  // one label
  short_labels.pop_back();
  CHECK_THROWS_AS(parse_idx(images, short_labels), ShapeError);
  auto truncated = images;
  truncated.pop_back();
  CHECK_THROWS_AS(parse_idx(truncated, labels), FormatError);
}

TEST_CASE("idx: save then load round-trips byte-valued pixels") {
  const auto dir = scratch_dir("idx");
  LabeledDataset data;
  data.inputs.resize(6, 3);
  for (Index i = 0; i < data.inputs.size(); ++i)
    data.inputs.data()[i] = static_cast<double>((i * 37) % 256) / 255.0;
  data.labels = {1, 0, 9};
  save_idx(dir / "img", dir / "lab", data, 2, 3);
  const auto back = load_idx(dir / "img", dir / "lab");
  CHECK(back.inputs == data.inputs);
  CHECK(back.labels == data.labels);
  CHECK_THROWS_AS(load_idx(dir / "missing", dir / "lab"), IoError);
}

TEST_CASE("checkpoint: weights round-trip bit-exactly") {
  const auto dir = scratch_dir("ckpt");
  Rng rng(1);
  const std::vector<Index> hidden{5, 4};
  const auto spec = NetworkSpec::mlp(3, hidden, 2);
  const auto w = random_weights(spec, rng);
  save_checkpoint(dir / "w.bslb", spec, w);
  const auto c = load_checkpoint(dir / "w.bslb");
  CHECK(c.kind == CheckpointKind::weights);
  CHECK(c.spec == spec);
  REQUIRE(c.weights);
  CHECK(c.weights->values() == w.values());
  CHECK(slurp(dir / "w.bslb").substr(0, 4) == "BSLB");
}

TEST_CASE("checkpoint: ensembles and variational posteriors round-trip") {
  const auto dir = scratch_dir("ckpt-ens");
  Rng rng(2);
  const std::vector<Index> hidden{3};
  const auto spec = NetworkSpec::mlp(2, hidden, 2, false);
  PosteriorEnsemble e;
  e.method = InferenceMethod::hmc;
  for (int i = 0; i < 100; ++i) e.samples.push_back(random_weights(spec, rng));
  save_checkpoint(dir / "e.bslb", spec, e);
  const auto c = load_checkpoint(dir / "e.bslb");
  CHECK(c.kind == CheckpointKind::hmc_ensemble);
  REQUIRE(c.ensemble);
  REQUIRE(c.ensemble->size() == 100);
  for (std::size_t i = 0; i < 100; ++i) CHECK(c.ensemble->samples[i].values() == e.samples[i].values());

  VariationalPosterior v;
  v.mu = normal_vector(rng, spec.parameter_count());
  v.rho = normal_vector(rng, spec.parameter_count());
  save_checkpoint(dir / "v.bslb", spec, v);
  const auto cv = load_checkpoint(dir / "v.bslb");
  REQUIRE(cv.variational);
  CHECK(cv.variational->mu == v.mu);
  CHECK(cv.variational->rho == v.rho);
}

TEST_CASE("checkpoint: corrupt files are rejected") {
  const auto dir = scratch_dir("ckpt-bad");
  const std::vector<Index> hidden{3};
  const auto spec = NetworkSpec::mlp(2, hidden, 2);
  save_checkpoint(dir / "w.bslb", spec, Weights::zeros(spec));
  std::string bytes = slurp(dir / "w.bslb");
  {
    std::ofstream out(dir / "magic.bslb", std::ios::binary);
    out << "XSLB" << bytes.substr(4);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.bslb"), FormatError);
  {
    std::ofstream out(dir / "short.bslb", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 8);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "short.bslb"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "nope.bslb"), IoError);
}

TEST_CASE("config: parse, format and override") {
  const auto c = parse_config(
      "# comment\n"
      "dataset = synthetic-manifold\n"
      "hidden = 16, 8   # trailing comment\n"
      "attack.delta = 0.1\n"
      "lrp.stabilizer = literal\n"
      "bayes_mode = expected-robustness\n"
      "models = deterministic, hmc, vi\n"
      "sample_counts = 1,10\n"
      "seed = 42\n");
  CHECK(c.dataset == DatasetKind::synthetic_manifold);
  CHECK(c.hidden == std::vector<Index>{16, 8});
  CHECK(c.attack.delta == 0.1);
  CHECK(c.lrp.stabilizer == Stabilizer::literal);
  CHECK(c.bayes_mode == BayesRobustnessMode::expected_robustness);
  CHECK(c.models.size() == 3);
  CHECK(c.sample_counts == std::vector<std::size_t>{1, 10});
  CHECK(c.seed == 42);

  const auto again = parse_config(format_config(c));
  CHECK(format_config(again) == format_config(c));

  auto o = c;
  apply_override(o, "prior.std=0.3");
  CHECK(o.prior.std == 0.3);
  CHECK_THROWS_AS(apply_override(o, "prior.std"), ConfigError);
}

TEST_CASE("config: errors name the offending line") {
  try {
    parse_config("seed = 1\nbogus_key = 3\n");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("train_size = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("just words\n"), ConfigError);
  auto c = ExperimentConfig{};
  c.layers = {7};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(config_keys().size() > 30);
}

TEST_CASE("config: shipped config files load and validate") {
  const fs::path dir = fs::path(BSLB_SOURCE_DIR) / "configs";
  const auto mnist = load_config(dir / "mnist.conf");
  CHECK_NOTHROW(mnist.validate());
  CHECK(mnist.prior.std == ExperimentConfig{}.prior.std);
  CHECK(mnist.hmc.step_size == ExperimentConfig{}.hmc.step_size);
  const auto circle = load_config(dir / "circle.conf");
  CHECK_NOTHROW(circle.validate());
  CHECK(circle.dataset == DatasetKind::synthetic_manifold);
  CHECK(circle.manifold.ambient_dim == 10);
}

TEST_CASE("balanced sampler gives floor or ceil per class") {
  std::vector<int> labels;
  Rng rng(3);
  std::uniform_int_distribution<int> cls(0, 9);
  for (int i = 0; i < 2000; ++i) labels.push_back(cls(rng));
  for (Index count : {10, 95, 500}) {
    const auto picked = balanced_sample(labels, 10, count, 5);
    REQUIRE(static_cast<Index>(picked.size()) == count);
    CHECK(std::is_sorted(picked.begin(), picked.end()));
    CHECK(std::adjacent_find(picked.begin(), picked.end()) == picked.end());
    std::map<int, Index> per_class;
    for (Index i : picked) ++per_class[labels[static_cast<std::size_t>(i)]];
    for (const auto& [c, n] : per_class) {
      CHECK(n >= count / 10);
      CHECK(n <= count / 10 + 1);
    }
    CHECK(balanced_sample(labels, 10, count, 5) == picked);
  }
  CHECK_THROWS_AS(balanced_sample(labels, 10, 5000, 1), ParameterError);
}

TEST_CASE("format_number round-trips doubles") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 0.0, 12345.678, -2.5})
    CHECK(std::stod(format_number(v)) == v);
}

TEST_CASE("report: empty records give header-only CSVs") {
  const auto dir = scratch_dir("report-empty");
  emit_report({}, dir);
  for (const char* name : {"records.csv", "histograms.csv", "scatter.csv", "summary.csv", "gaps.csv",
                           "records_alternate.csv", "summary_alternate.csv"}) {
    const auto text = slurp(dir / name);
    CHECK(!text.empty());
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
  }
}

TEST_CASE("report: CSV round trip, histograms and alternate merge") {
  std::vector<RobustnessRecord> records;
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Index p = 0; p < 30; ++p)
    for (ModelKind kind : {ModelKind::deterministic, ModelKind::hmc}) {
      RobustnessRecord r;
      r.point_id = p;
      r.model_kind = kind;
      r.sample_count = 10;
      r.layer = 2;
      r.k = 100;
      r.klrp = std::round(u(rng) * 100.0) / 100.0;
      r.klrp_alternate = kind == ModelKind::deterministic ? r.klrp : u(rng);
      r.softmax_rob = u(rng);
      r.attack_succeeded = r.softmax_rob < 0.5;
      r.clean_pred = static_cast<int>(p % 10);
      r.adv_pred = r.attack_succeeded ? 0 : r.clean_pred;
      r.true_label = r.clean_pred;
      records.push_back(r);
    }
  std::stringstream csv;
  write_records_csv(csv, records);
  CHECK(csv.str().find('"') == std::string::npos);
  auto back = read_records_csv(csv);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].klrp == records[i].klrp);
    CHECK(back[i].softmax_rob == records[i].softmax_rob);
    CHECK(back[i].point_id == records[i].point_id);
  }
  std::stringstream alt_csv;
  write_records_csv(alt_csv, alternate_mode(records));
  merge_alternate(back, read_records_csv(alt_csv));
  CHECK(back == records);

  const auto hist = klrp_histograms(records);
  std::map<int, std::size_t> sums;
  for (const auto& h : hist) sums[static_cast<int>(h.model_kind)] += h.count;
  CHECK(sums[static_cast<int>(ModelKind::deterministic)] == 30);
  CHECK(sums[static_cast<int>(ModelKind::hmc)] == 30);

  std::stringstream bad("point_id,oops\n1,2\n");
  CHECK_THROWS_AS(read_records_csv(bad), FormatError);
  std::vector<RobustnessRecord> shorter(records.begin(), records.begin() + 3);
  CHECK_THROWS_AS(merge_alternate(shorter, records), FormatError);
}

TEST_CASE("experiment: delta 0 makes every robustness value 1") {
  auto c = tiny_config();
  c.attack.delta = 0.0;
  // Circle points have negative coordinates; the pixel clip would move them.
  c.attack.clip_low = -10.0;
  c.attack.clip_high = 10.0;
  const auto result = run_experiment(c);
  CHECK(!result.records.empty());
  for (const auto& r : result.records) {
    CHECK(r.klrp == 1.0);
    CHECK(r.klrp_alternate == 1.0);
    CHECK(r.softmax_rob == 1.0);
    CHECK_FALSE(r.attack_succeeded);
  }
  for (const auto& g : result.summary.groups) CHECK_FALSE(g.pearson_r.has_value());
}

TEST_CASE("experiment: record count and reproducibility") {
  auto c = tiny_config();
  c.layers = {1};
  c.kgrid = {3};
  std::vector<RobustnessRecord> streamed;
  const auto a = run_experiment(c, [&](const RobustnessRecord& r) { streamed.push_back(r); });
  CHECK(a.records.size() == static_cast<std::size_t>(c.test_size) * 2 * c.sample_counts.size());
  CHECK(streamed == a.records);

  const auto full = run_experiment(tiny_config());
  CHECK(full.records.size() == static_cast<std::size_t>(c.test_size) * 2 * 2 * 2 * 2);

  auto threaded = tiny_config();
  threaded.threads = 3;
  CHECK(run_experiment(threaded).records == full.records);

  const auto d1 = scratch_dir("exp-a");
  const auto d2 = scratch_dir("exp-b");
  emit_report(full.records, d1);
  emit_report(run_experiment(tiny_config()).records, d2);
  for (const char* name : {"records.csv", "summary.csv", "gaps.csv", "histograms.csv"})
    CHECK(slurp(d1 / name) == slurp(d2 / name));
}

TEST_CASE("experiment: a one-sample ensemble of the deterministic weights matches it") {
  auto c = tiny_config();
  c.sample_counts = {1};
  const auto data = load_experiment_data(c);
  TrainedModels models;
  models.spec = c.network(data.train.dim(), data.class_count);
  models.deterministic = train_deterministic(c, models.spec, data.train);
  PosteriorEnsemble single;
  single.samples.push_back(models.deterministic);
  models.hmc = single;
  const auto result = evaluate_robustness(c, data, models);
  std::map<std::tuple<Index, int, Index>, const RobustnessRecord*> det;
  for (const auto& r : result.records)
    if (r.model_kind == ModelKind::deterministic) det[{r.point_id, r.layer, r.k}] = &r;
  for (const auto& r : result.records) {
    if (r.model_kind != ModelKind::hmc) continue;
    const auto* d = det.at({r.point_id, r.layer, r.k});
    CHECK(r.klrp == d->klrp);
    CHECK(r.softmax_rob == doctest::Approx(d->softmax_rob).epsilon(1e-12));
    CHECK(r.adv_pred == d->adv_pred);
  }
}
