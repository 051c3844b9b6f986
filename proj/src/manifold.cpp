#include "bslb/manifold.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "bslb/rng.hpp"

namespace bslb {

void ManifoldSpec::validate() const {
  const Index min_dim = kind == ManifoldKind::circle ? 2 : 3;
  if (ambient_dim < min_dim)
    throw ParameterError("ambient dimension " + std::to_string(ambient_dim) + " too small");
  if (!(radius > 0.0)) throw ParameterError("manifold radius must be positive");
  if (kind == ManifoldKind::torus && !(major_radius > radius))
    throw ParameterError("torus major radius must exceed the tube radius");
}

Eigen::VectorXd ManifoldSpec::embed(const Eigen::Ref<const Eigen::VectorXd>& coords) const {
  if (coords.size() != intrinsic_dim()) throw ShapeError("wrong number of chart coordinates");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(ambient_dim);
  const double theta = coords(0);
  if (kind == ManifoldKind::circle) {
    x(0) = radius * std::cos(theta);
    x(1) = radius * std::sin(theta);
  } else {
    const double phi = coords(1);
    const double ring = major_radius + radius * std::cos(phi);
    x(0) = ring * std::cos(theta);
    x(1) = ring * std::sin(theta);
    x(2) = radius * std::sin(phi);
  }
  return x;
}

Eigen::MatrixXd ManifoldSpec::tangent_basis(const Eigen::Ref<const Eigen::VectorXd>& coords) const {
  if (coords.size() != intrinsic_dim()) throw ShapeError("wrong number of chart coordinates");
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(ambient_dim, intrinsic_dim());
  const double theta = coords(0);
  basis(0, 0) = -std::sin(theta);
  basis(1, 0) = std::cos(theta);
  if (kind == ManifoldKind::torus) {
    // d/dtheta and d/dphi are orthogonal on the standard torus.
    const double phi = coords(1);
    basis(0, 1) = -std::sin(phi) * std::cos(theta);
    basis(1, 1) = -std::sin(phi) * std::sin(theta);
    basis(2, 1) = std::cos(phi);
  }
  return basis;
}

Eigen::VectorXd ManifoldSpec::chart_coordinates(const Eigen::Ref<const Eigen::VectorXd>& x,
                                                double tol) const {
  if (x.size() != ambient_dim)
    throw ShapeError("point has dimension " + std::to_string(x.size()) + ", manifold lives in R^" +
                     std::to_string(ambient_dim));
  const Index used = kind == ManifoldKind::circle ? 2 : 3;
  if (x.size() > used && x.tail(x.size() - used).cwiseAbs().maxCoeff() > tol)
    throw GeometryError("point has non-zero coordinates outside the embedding plane");
  const double planar = std::hypot(x(0), x(1));
  Eigen::VectorXd coords(intrinsic_dim());
  coords(0) = std::atan2(x(1), x(0));
  if (kind == ManifoldKind::circle) {
    if (std::abs(planar - radius) > tol) throw GeometryError("point is off the circle");
  } else {
    const double tube = std::hypot(planar - major_radius, x(2));
    if (std::abs(tube - radius) > tol) throw GeometryError("point is off the torus");
    coords(1) = std::atan2(x(2), planar - major_radius);
  }
  return coords;
}

double ManifoldSpec::label_function(const Eigen::Ref<const Eigen::VectorXd>& coords) const {
  const double g = std::sin(frequency * coords(0) + phase);
  return kind == ManifoldKind::circle ? g : g * std::cos(coords(1));
}

namespace {

LabeledDataset embed_all(const ManifoldSpec& mspec, const Eigen::MatrixXd& coords) {
  LabeledDataset data;
  data.inputs.resize(mspec.ambient_dim, coords.cols());
  data.labels.reserve(static_cast<std::size_t>(coords.cols()));
  for (Index i = 0; i < coords.cols(); ++i) {
    data.inputs.col(i) = mspec.embed(coords.col(i));
    data.labels.push_back(mspec.label(coords.col(i)));
  }
  return data;
}

}  // namespace

LabeledDataset make_manifold_dataset(const ManifoldSpec& mspec, Index n, std::uint64_t seed) {
  mspec.validate();
  if (n < 1) throw ParameterError("need at least one manifold point");
  Rng rng = make_stream(seed, "manifold");
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  Eigen::MatrixXd coords(mspec.intrinsic_dim(), n);
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < coords.rows(); ++c) coords(c, i) = angle(rng);
  return embed_all(mspec, coords);
}

LabeledDataset make_manifold_grid(const ManifoldSpec& mspec, Index n) {
  mspec.validate();
  if (n < 1) throw ParameterError("need at least one manifold point");
  const double two_pi = 2.0 * std::numbers::pi;
  Eigen::MatrixXd coords(mspec.intrinsic_dim(), n);
  if (mspec.kind == ManifoldKind::circle) {
    for (Index i = 0; i < n; ++i) coords(0, i) = two_pi * static_cast<double>(i) / static_cast<double>(n);
  } else {
    const Index side = std::max<Index>(1, static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(n)))));
    for (Index i = 0; i < n; ++i) {
      coords(0, i) = two_pi * static_cast<double>(i / side) / static_cast<double>(side);
      coords(1, i) = two_pi * static_cast<double>(i % side) / static_cast<double>(side);
    }
  }
  return embed_all(mspec, coords);
}

GradientDecomposition tangent_normal_decompose(const ManifoldSpec& mspec,
                                               const Eigen::Ref<const Eigen::VectorXd>& x,
                                               const Eigen::Ref<const Eigen::VectorXd>& grad) {
  mspec.validate();
  if (grad.size() != mspec.ambient_dim) throw ShapeError("gradient dimension mismatch");
  const Eigen::MatrixXd basis = mspec.tangent_basis(mspec.chart_coordinates(x));
  GradientDecomposition d;
  d.tangent = basis * (basis.transpose() * grad);
  d.normal = grad - d.tangent;
  return d;
}

ZeroAverageStatistic zero_avg_statistic(const std::vector<std::vector<Eigen::VectorXd>>& normals) {
  if (normals.empty()) throw ParameterError("no evaluation points");
  ZeroAverageStatistic out;
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& samples : normals) {
    if (samples.empty()) throw ParameterError("posterior ensemble is empty");
    Eigen::VectorXd mean_grad = Eigen::VectorXd::Zero(samples.front().size());
    double mean_norm = 0.0;
    for (const auto& g : samples) {
      mean_grad += g;
      mean_norm += g.norm();
    }
    const double n = static_cast<double>(samples.size());
    mean_grad /= n;
    mean_norm /= n;
    if (mean_norm == 0.0) {
      out.per_point.push_back(0.0);
      out.degenerate.push_back(true);
      continue;
    }
    const double r = std::min(1.0, mean_grad.norm() / mean_norm);
    out.per_point.push_back(r);
    out.degenerate.push_back(false);
    total += r;
    ++counted;
  }
  out.ratio = counted ? total / static_cast<double>(counted) : 0.0;
  return out;
}

ZeroAverageStatistic zero_avg_statistic(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                                        const ManifoldSpec& mspec,
                                        const Eigen::Ref<const Eigen::MatrixXd>& points,
                                        int class_index) {
  require_nonempty(ensemble);
  std::vector<std::vector<Eigen::VectorXd>> normals(static_cast<std::size_t>(points.cols()));
  for (Index i = 0; i < points.cols(); ++i) {
    auto& per_sample = normals[static_cast<std::size_t>(i)];
    per_sample.reserve(ensemble.size());
    for (const auto& w : ensemble.samples) {
      const Eigen::VectorXd g = grad_logit_input(spec, w, points.col(i), class_index);
      per_sample.push_back(tangent_normal_decompose(mspec, points.col(i), g).normal);
    }
  }
  return zero_avg_statistic(normals);
}

}  // namespace bslb
