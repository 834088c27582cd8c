#include "fedcausal/glm.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace fedcausal {

const char* to_string(Family f) { return f == Family::Logistic ? "logistic" : "linear"; }

const char* to_string(FeatureTransform t) {
  switch (t) {
    case FeatureTransform::Identity: return "identity";
    case FeatureTransform::DropLast: return "drop_last";
    case FeatureTransform::Exponentiate: return "exponentiate";
  }
  return "?";
}

const char* to_string(Basis b) { return b == Basis::Linear ? "linear" : "quadratic"; }

Family parse_family(const std::string& s) {
  if (s == "logistic") return Family::Logistic;
  if (s == "linear") return Family::Linear;
  throw Error(ErrorCode::SchemaError, "unknown family '" + s + "'");
}

FeatureTransform parse_transform(const std::string& s) {
  if (s == "identity") return FeatureTransform::Identity;
  if (s == "drop_last") return FeatureTransform::DropLast;
  if (s == "exponentiate") return FeatureTransform::Exponentiate;
  throw Error(ErrorCode::SchemaError, "unknown feature transform '" + s + "'");
}

Basis parse_basis(const std::string& s) {
  if (s == "linear") return Basis::Linear;
  if (s == "quadratic") return Basis::Quadratic;
  throw Error(ErrorCode::SchemaError, "unknown basis '" + s + "'");
}

Eigen::Index FeatureMap::dim(Eigen::Index p) const {
  const Eigen::Index q = transform == FeatureTransform::DropLast ? p - 1 : p;
  return 1 + (basis == Basis::Quadratic ? 2 * q : q);
}

Eigen::VectorXd FeatureMap::row(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const Eigen::Index p = x.size();
  const Eigen::Index q = transform == FeatureTransform::DropLast ? p - 1 : p;
  Eigen::VectorXd out(dim(p));
  out[0] = 1.0;
  for (Eigen::Index j = 0; j < q; ++j) {
    const double v = transform == FeatureTransform::Exponentiate ? std::exp(x[j]) : x[j];
    out[1 + j] = v;
    if (basis == Basis::Quadratic) out[1 + q + j] = v * v;
  }
  return out;
}

Eigen::MatrixXd FeatureMap::design(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd out(x.rows(), dim(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = row(x.row(i).transpose()).transpose();
  return out;
}

double GlmModel::linear_predictor(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return features.row(x).dot(coef);
}

double GlmModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const double eta = linear_predictor(x);
  const double v = family == Family::Logistic ? 1.0 / (1.0 + std::exp(-eta)) : eta;
  return clip ? clip->apply(v) : v;
}

Eigen::VectorXd GlmModel::predict_all(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = predict(x.row(i).transpose());
  return out;
}

LogisticStats& LogisticStats::operator+=(const LogisticStats& other) {
  gradient += other.gradient;
  hessian += other.hessian;
  loglik += other.loglik;
  max_abs_eta = std::max(max_abs_eta, other.max_abs_eta);
  n += other.n;
  positives += other.positives;
  return *this;
}

LogisticStats logistic_stats(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                             const Eigen::VectorXd& beta) {
  const Eigen::Index d = design.cols();
  LogisticStats s;
  s.gradient = Eigen::VectorXd::Zero(d);
  s.hessian = Eigen::MatrixXd::Zero(d, d);
  s.n = design.rows();
  const Eigen::VectorXd eta = design * beta;
  Eigen::VectorXd w(design.rows());
  Eigen::VectorXd resid(design.rows());
  for (Eigen::Index i = 0; i < design.rows(); ++i) {
    const double e = eta[i];
    const double prob = 1.0 / (1.0 + std::exp(-e));
    const double y = labels[i];
    // log(1 + exp(e)) computed stably.
    const double log1pexp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    s.loglik += y * e - log1pexp;
    s.max_abs_eta = std::max(s.max_abs_eta, std::abs(e));
    w[i] = prob * (1.0 - prob);
    resid[i] = y - prob;
    if (y > 0.5) ++s.positives;
  }
  s.gradient = design.transpose() * resid;
  s.hessian = design.transpose() * w.asDiagonal() * design;
  return s;
}

namespace {

struct NewtonResult {
  Eigen::VectorXd beta;
  bool converged = false;
  double max_abs_eta = 0.0;
  int iterations = 0;
};

NewtonResult newton(const LogisticStatsFn& stats, Eigen::Index dim, const LogisticOptions& opt,
                    double ridge) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd penalty_mask = Eigen::VectorXd::Ones(dim);
  penalty_mask[0] = 0.0;

  auto objective = [&](const LogisticStats& s, const Eigen::VectorXd& b) {
    const double nn = static_cast<double>(s.n);
    return s.loglik / nn - 0.5 * ridge * (penalty_mask.array() * b.array().square()).sum();
  };

  LogisticStats s = stats(beta);
  if (s.positives == 0 || s.positives == s.n) {
    throw Error(ErrorCode::SingleClassLabels, "labels contain a single class");
  }
  double obj = objective(s, beta);
  NewtonResult out;
  for (int it = 1; it <= opt.max_iter; ++it) {
    const double nn = static_cast<double>(s.n);
    Eigen::VectorXd grad = s.gradient / nn - ridge * (penalty_mask.array() * beta.array()).matrix();
    if (grad.norm() < opt.tol) {
      out.converged = true;
      out.iterations = it - 1;
      break;
    }
    Eigen::MatrixXd hess = s.hessian / nn;
    hess.diagonal() += ridge * penalty_mask;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    Eigen::VectorXd step;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      step = ldlt.solve(grad);
    }
    if (step.size() == 0 || !step.allFinite()) {
      step = hess.completeOrthogonalDecomposition().solve(grad);
    }
    if (!step.allFinite()) break;

    // Step halving keeps the objective non-decreasing.
    double t = 1.0;
    Eigen::VectorXd next;
    LogisticStats ns;
    double nobj = -INFINITY;
    for (int h = 0; h < 40; ++h) {
      next = beta + t * step;
      ns = stats(next);
      nobj = objective(ns, next);
      if (std::isfinite(nobj) && nobj >= obj - 1e-14 * std::abs(obj)) break;
      t *= 0.5;
    }
    beta = next;
    s = ns;
    const bool stalled = std::abs(nobj - obj) <= 1e-16 * std::max(1.0, std::abs(obj));
    obj = nobj;
    out.iterations = it;
    if (stalled) {
      const Eigen::VectorXd g2 =
          s.gradient / static_cast<double>(s.n) - ridge * (penalty_mask.array() * beta.array()).matrix();
      out.converged = g2.norm() < std::sqrt(opt.tol);
      break;
    }
  }
  out.beta = beta;
  out.max_abs_eta = s.max_abs_eta;
  return out;
}

}  // namespace

LogisticFit fit_logistic_stats(const LogisticStatsFn& stats, Eigen::Index dim,
                               const LogisticOptions& options) {
  if (options.max_iter < 1) throw Error(ErrorCode::PreconditionViolation, "max_iter must be >= 1");
  NewtonResult plain = newton(stats, dim, options, 0.0);
  if (plain.converged && plain.max_abs_eta <= options.separation_eta && plain.beta.allFinite()) {
    return LogisticFit{plain.beta, false, plain.iterations};
  }
  NewtonResult ridge = newton(stats, dim, options, options.ridge_fallback);
  if (!ridge.converged || !ridge.beta.allFinite()) {
    throw Error(ErrorCode::NonConvergence, "logistic regression failed after ridge fallback");
  }
  return LogisticFit{ridge.beta, true, ridge.iterations};
}

namespace {
Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& features) {
  Eigen::MatrixXd d(features.rows(), features.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(features.cols()) = features;
  return d;
}
}  // namespace

GlmModel fit_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                      const LogisticOptions& options) {
  if (features.rows() != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "features and labels differ in length");
  }
  const Eigen::MatrixXd design = with_intercept(features);
  const LogisticFit fit = fit_logistic_stats(
      [&](const Eigen::VectorXd& b) { return logistic_stats(design, labels, b); }, design.cols(),
      options);
  GlmModel m;
  m.family = Family::Logistic;
  m.coef = fit.coef;
  m.converged_via_ridge = fit.converged_via_ridge;
  m.iterations = fit.iterations;
  return m;
}

Eigen::VectorXd least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y) {
  if (design.rows() != y.size()) {
    throw Error(ErrorCode::DimensionMismatch, "design and response differ in length");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < design.cols()) {
    throw Error(ErrorCode::RankDeficient, "design has rank " + std::to_string(qr.rank()) + " < " +
                                              std::to_string(design.cols()) + " columns");
  }
  return qr.solve(y);
}

GlmModel fit_linear(const Eigen::MatrixXd& features, const Eigen::VectorXd& responses) {
  GlmModel m;
  m.family = Family::Linear;
  m.coef = least_squares(with_intercept(features), responses);
  return m;
}

LinearStats& LinearStats::operator+=(const LinearStats& other) {
  gram += other.gram;
  cross += other.cross;
  n += other.n;
  return *this;
}

LinearStats linear_stats(const Eigen::MatrixXd& design, const Eigen::VectorXd& y) {
  LinearStats s;
  s.gram = design.transpose() * design;
  s.cross = design.transpose() * y;
  s.n = design.rows();
  return s;
}

Eigen::VectorXd solve_normal_equations(const LinearStats& stats) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(stats.gram);
  qr.setThreshold(1e-12);
  if (stats.gram.rows() == 0 || qr.rank() < stats.gram.cols()) {
    throw Error(ErrorCode::RankDeficient, "normal equations are singular");
  }
  return qr.solve(stats.cross);
}

GlmModel fit_glm(Family family, const FeatureMap& features, const Eigen::MatrixXd& x,
                 const Eigen::VectorXd& y, const LogisticOptions& options) {
  const Eigen::MatrixXd design = features.design(x);
  GlmModel m;
  m.family = family;
  m.features = features;
  if (family == Family::Linear) {
    m.coef = least_squares(design, y);
  } else {
    const LogisticFit fit = fit_logistic_stats(
        [&](const Eigen::VectorXd& b) { return logistic_stats(design, y, b); }, design.cols(),
        options);
    m.coef = fit.coef;
    m.converged_via_ridge = fit.converged_via_ridge;
    m.iterations = fit.iterations;
  }
  return m;
}

}  // namespace fedcausal
