#pragma once

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <string>

#include "fedcausal/core.hpp"

namespace fedcausal {

enum class Family { Logistic, Linear };

/// Distortion applied to the raw covariates before the basis expansion.
/// DropLast and Exponentiate exist to inject model misspecification.
enum class FeatureTransform { Identity, DropLast, Exponentiate };

enum class Basis { Linear, Quadratic };

const char* to_string(Family f);
const char* to_string(FeatureTransform t);
const char* to_string(Basis b);
Family parse_family(const std::string& s);
FeatureTransform parse_transform(const std::string& s);
Basis parse_basis(const std::string& s);

/// x -> (1, basis(transform(x))). Quadratic appends elementwise squares.
struct FeatureMap {
  FeatureTransform transform = FeatureTransform::Identity;
  Basis basis = Basis::Linear;

  /// Number of columns including the intercept.
  Eigen::Index dim(Eigen::Index p) const;
  Eigen::VectorXd row(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::MatrixXd design(const Eigen::MatrixXd& x) const;

  bool operator==(const FeatureMap&) const = default;
};

struct ClipBounds {
  double lo;
  double hi;
  double apply(double v) const { return v < lo ? lo : (v > hi ? hi : v); }
  bool operator==(const ClipBounds&) const = default;
};

/// Fitted generalized linear model, coefficients intercept first.
struct GlmModel {
  Family family = Family::Linear;
  Eigen::VectorXd coef;
  FeatureMap features;
  std::optional<ClipBounds> clip;
  bool converged_via_ridge = false;
  int iterations = 0;

  double linear_predictor(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// Response-scale prediction (probability for logistic), clipped if bounds are set.
  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd predict_all(const Eigen::MatrixXd& x) const;
};

struct LogisticOptions {
  int max_iter = 100;
  double tol = 1e-10;
  double ridge_fallback = 1e-4;
  // |eta| above this at the MLE is treated as (quasi-)separation.
  double separation_eta = 30.0;
};

/// Newton sufficient statistics of one block of rows at `beta`.
/// gradient and hessian are sums (not means) of the Bernoulli log-likelihood terms.
struct LogisticStats {
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;  // X' W X (positive semidefinite)
  double loglik = 0.0;
  double max_abs_eta = 0.0;
  Eigen::Index n = 0;
  Eigen::Index positives = 0;

  LogisticStats& operator+=(const LogisticStats& other);
};

LogisticStats logistic_stats(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                             const Eigen::VectorXd& beta);

/// Provides summed statistics of all blocks at a given beta.
using LogisticStatsFn = std::function<LogisticStats(const Eigen::VectorXd& beta)>;

struct LogisticFit {
  Eigen::VectorXd coef;
  bool converged_via_ridge = false;
  int iterations = 0;
};

/// Damped Newton on block statistics; retries with a ridge penalty on the
/// non-intercept coefficients when separation or non-convergence is detected.
LogisticFit fit_logistic_stats(const LogisticStatsFn& stats, Eigen::Index dim,
                               const LogisticOptions& options = {});

/// Logistic regression of labels on (1, features).
GlmModel fit_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                      const LogisticOptions& options = {});

/// Least squares of responses on (1, features) by Householder QR.
GlmModel fit_linear(const Eigen::MatrixXd& features, const Eigen::VectorXd& responses);

/// Least-squares coefficients for a full design (intercept already present).
Eigen::VectorXd least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y);

/// Normal-equation sums for least squares over row blocks.
struct LinearStats {
  Eigen::MatrixXd gram;   // Z'Z
  Eigen::VectorXd cross;  // Z'y
  Eigen::Index n = 0;

  LinearStats& operator+=(const LinearStats& other);
};

LinearStats linear_stats(const Eigen::MatrixXd& design, const Eigen::VectorXd& y);

/// Solves (Z'Z) b = Z'y by column-pivoted QR; RankDeficient if singular.
Eigen::VectorXd solve_normal_equations(const LinearStats& stats);

/// Fits a model of the given family with the feature map applied to raw covariates.
GlmModel fit_glm(Family family, const FeatureMap& features, const Eigen::MatrixXd& x,
                 const Eigen::VectorXd& y, const LogisticOptions& options = {});

}  // namespace fedcausal
