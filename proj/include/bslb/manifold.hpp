#pragma once

#include <cstdint>
#include <vector>

#include "bslb/ensemble.hpp"
#include "bslb/network.hpp"

namespace bslb {

enum class ManifoldKind { circle, torus };

/// A closed curve or surface embedded in the first coordinates of R^d.
///
/// circle: theta -> (r cos theta, r sin theta, 0, ...)
/// torus:  (theta, phi) -> ((R + r cos phi) cos theta, (R + r cos phi) sin theta, r sin phi, 0, ...)
///
/// Labels threshold g = sin(frequency * theta + phase) (times cos(phi) on
/// the torus) at zero.
struct ManifoldSpec {
  ManifoldKind kind = ManifoldKind::circle;
  Index ambient_dim = 10;
  double radius = 1.0;        // circle radius, or the torus tube radius r
  double major_radius = 2.0;  // torus only
  int frequency = 2;
  double phase = 0.25;

  int intrinsic_dim() const { return kind == ManifoldKind::circle ? 1 : 2; }
  void validate() const;

  Eigen::VectorXd embed(const Eigen::Ref<const Eigen::VectorXd>& coords) const;
  /// Orthonormal tangent basis (ambient_dim x intrinsic_dim) at chart coordinates.
  Eigen::MatrixXd tangent_basis(const Eigen::Ref<const Eigen::VectorXd>& coords) const;
  /// Recovers chart coordinates; throws GeometryError if x is off the manifold.
  Eigen::VectorXd chart_coordinates(const Eigen::Ref<const Eigen::VectorXd>& x,
                                    double tol = 1e-9) const;
  double label_function(const Eigen::Ref<const Eigen::VectorXd>& coords) const;
  int label(const Eigen::Ref<const Eigen::VectorXd>& coords) const {
    return label_function(coords) > 0.0 ? 1 : 0;
  }
};

/// n points uniform in chart coordinates, embedded and labelled.
LabeledDataset make_manifold_dataset(const ManifoldSpec& mspec, Index n, std::uint64_t seed);

/// Deterministic grid: angles 2*pi*i/n (a sqrt(n) x sqrt(n) grid on the torus).
LabeledDataset make_manifold_grid(const ManifoldSpec& mspec, Index n);

struct GradientDecomposition {
  Eigen::VectorXd tangent;
  Eigen::VectorXd normal;
};

/// Orthogonal split of an ambient gradient into tangent and normal parts at x.
GradientDecomposition tangent_normal_decompose(const ManifoldSpec& mspec,
                                               const Eigen::Ref<const Eigen::VectorXd>& x,
                                               const Eigen::Ref<const Eigen::VectorXd>& grad);

struct ZeroAverageStatistic {
  double ratio = 0.0;                // mean of per_point over non-degenerate points
  std::vector<double> per_point;     // ||mean normal grad|| / mean ||normal grad||
  std::vector<bool> degenerate;      // every sample had a zero normal gradient
};

/// Ratio of the posterior-mean normal gradient norm to the mean normal
/// gradient norm of logit `class_index`, per evaluation point (columns of
/// `points`).
ZeroAverageStatistic zero_avg_statistic(const NetworkSpec& spec, const PosteriorEnsemble& ensemble,
                                        const ManifoldSpec& mspec,
                                        const Eigen::Ref<const Eigen::MatrixXd>& points,
                                        int class_index);

/// Same statistic from precomputed normal gradients: per point, one
/// gradient per sample.
ZeroAverageStatistic zero_avg_statistic(const std::vector<std::vector<Eigen::VectorXd>>& normals);

}  // namespace bslb
