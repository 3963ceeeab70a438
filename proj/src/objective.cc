// Copyright 2026 The TD-Conformer Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tdc/objective.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tdc/error.h"

namespace tdc {

namespace {

constexpr double kDbPerNeper = 10.0 / 2.302585092994045684;  // 10 / ln 10

void check_pair(std::span<const double> estimate,
                std::span<const double> reference) {
  if (estimate.size() != reference.size()) {
    throw DimensionError("sisdr: length mismatch (" +
                         std::to_string(estimate.size()) + " vs " +
                         std::to_string(reference.size()) + ")");
  }
  if (estimate.empty()) throw DimensionError("sisdr: empty signals");
}

struct Projection {
  std::vector<double> unit_est;
  std::vector<double> unit_ref;
  std::vector<double> error;  // unit_est - cos * unit_ref
  double est_norm = 0.0;
  double cos = 0.0;
  double target = 0.0;      // cos^2
  double distortion = 0.0;  // |error|^2
};

Projection project(std::span<const double> estimate,
                   std::span<const double> reference) {
  check_pair(estimate, reference);
  const double ref_norm = std::sqrt(squared_norm(reference));
  if (!(ref_norm > 0.0)) {
    throw DegenerateInputError("sisdr: reference has zero power");
  }
  Projection p;
  const std::size_t n = estimate.size();
  p.unit_ref.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.unit_ref[i] = reference[i] / ref_norm;
  p.est_norm = std::sqrt(squared_norm(estimate));
  p.unit_est.assign(n, 0.0);
  if (p.est_norm > 0.0) {
    for (std::size_t i = 0; i < n; ++i) p.unit_est[i] = estimate[i] / p.est_norm;
  }
  p.cos = dot(p.unit_est, p.unit_ref);
  p.target = p.cos * p.cos;
  p.error.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    p.error[i] = p.unit_est[i] - p.cos * p.unit_ref[i];
  }
  p.distortion = squared_norm(p.error);
  return p;
}

std::span<const double> row_of(const Tensor& t, std::size_t r) {
  return t.row(r);
}

}  // namespace

double sisdr(std::span<const double> estimate, std::span<const double> reference,
             double eps) {
  const Projection p = project(estimate, reference);
  return kDbPerNeper *
         (std::log(p.target + eps) - std::log(p.distortion + eps));
}

std::vector<double> sisdr_grad(std::span<const double> estimate,
                               std::span<const double> reference, double eps) {
  const Projection p = project(estimate, reference);
  const std::size_t n = estimate.size();
  std::vector<double> grad(n, 0.0);
  if (!(p.est_norm > 0.0)) return grad;
  // Gradient wrt the unit estimate u, then through u = s / |s|.
  const double ref_dot_err = dot(p.unit_ref, p.error);
  const double a = 2.0 * p.cos / (p.target + eps);
  const double b = 2.0 / (p.distortion + eps);
  std::vector<double> g_unit(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d_err = p.error[i] - p.unit_ref[i] * ref_dot_err;
    g_unit[i] = kDbPerNeper * (a * p.unit_ref[i] - b * d_err);
  }
  const double radial = dot(g_unit, p.unit_est);
  for (std::size_t i = 0; i < n; ++i) {
    grad[i] = (g_unit[i] - p.unit_est[i] * radial) / p.est_norm;
  }
  return grad;
}

PitResult best_permutation(const std::vector<std::vector<double>>& cost) {
  const std::size_t c = cost.size();
  if (c > kMaxPitSpeakers) {
    throw UnsupportedError("upit: " + std::to_string(c) +
                           " speakers exceeds the enumeration limit of " +
                           std::to_string(kMaxPitSpeakers));
  }
  std::vector<std::size_t> perm(c);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  PitResult best{std::numeric_limits<double>::infinity(), perm};
  do {
    double total = 0.0;
    for (std::size_t r = 0; r < c; ++r) total += cost[perm[r]][r];
    const double loss = total / static_cast<double>(c);
    if (loss < best.loss) best = {loss, perm};
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

PitResult upit_loss(const Tensor& estimates, const Tensor& references) {
  require_rank(estimates, 2, "upit_loss estimates");
  require_same_shape(estimates, references, "upit_loss");
  const std::size_t c = estimates.rows();
  if (c > kMaxPitSpeakers) {
    throw UnsupportedError("upit: " + std::to_string(c) +
                           " speakers exceeds the enumeration limit of " +
                           std::to_string(kMaxPitSpeakers));
  }
  std::vector<std::vector<double>> cost(c, std::vector<double>(c));
  for (std::size_t e = 0; e < c; ++e) {
    for (std::size_t r = 0; r < c; ++r) {
      cost[e][r] = -sisdr(row_of(estimates, e), row_of(references, r));
    }
  }
  return best_permutation(cost);
}

Tensor upit_loss_grad(const Tensor& estimates, const Tensor& references,
                      const PitResult& pit) {
  const std::size_t c = estimates.rows();
  Tensor grad(estimates.shape());
  for (std::size_t r = 0; r < c; ++r) {
    const std::size_t e = pit.permutation[r];
    const std::vector<double> g =
        sisdr_grad(row_of(estimates, e), row_of(references, r));
    auto out = grad.row(e);
    for (std::size_t i = 0; i < g.size(); ++i) {
      out[i] = -g[i] / static_cast<double>(c);
    }
  }
  return grad;
}

double delta_sisdr(const SeparationResult& result) {
  require_same_shape(result.estimates, result.references, "delta_sisdr");
  const std::size_t c = result.references.rows();
  if (c < 2) throw DimensionError("delta_sisdr: need at least two speakers");
  if (result.mixture.size() != result.references.cols()) {
    throw DimensionError("delta_sisdr: mixture length mismatch");
  }
  const PitResult pit = upit_loss(result.estimates, result.references);
  double total = 0.0;
  for (std::size_t r = 0; r < c; ++r) {
    const auto ref = row_of(result.references, r);
    total += sisdr(row_of(result.estimates, pit.permutation[r]), ref) -
             sisdr(result.mixture, ref);
  }
  return total / static_cast<double>(c);
}

}  // namespace tdc
