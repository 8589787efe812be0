#include "fargan/metrics.hpp"

#include <Eigen/Eigenvalues>

namespace fargan {

namespace {

constexpr double kNegativeEigenTolerance = 1e-6;

/// V diag(sqrt(max(lambda, 0))) V^T; rejects eigenvalues below -1e-6.
Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw NumericError(std::string("eigendecomposition failed for ") + what);
  Eigen::VectorXd values = eig.eigenvalues();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values[i] < -kNegativeEigenTolerance) {
      throw NumericError(std::string("negative eigenvalue ") + std::to_string(values[i]) + " in " + what);
    }
    values[i] = std::sqrt(std::max(values[i], 0.0));
  }
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(size));
  const double center = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    taps[i] = std::exp(-(i - center) * (i - center) / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int height, int width,
                  const SsimParams& params) {
  const int k = params.window;
  if (height < k || width < k) {
    throw DimensionError("ssim: image " + std::to_string(height) + "x" + std::to_string(width) +
                         " smaller than the " + std::to_string(k) + "x" + std::to_string(k) + " window");
  }
  const std::vector<double> taps = gaussian_taps(k, params.sigma);
  const int out_h = height - k + 1;
  const int out_w = width - k + 1;

  // Separable filtering of a, b, a^2, b^2, ab: horizontal pass then vertical.
  auto filter = [&](auto&& value) {
    std::vector<double> horiz(static_cast<std::size_t>(height) * out_w);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int j = 0; j < k; ++j) acc += taps[j] * value(y * width + x + j);
        horiz[static_cast<std::size_t>(y) * out_w + x] = acc;
      }
    }
    std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < k; ++i) acc += taps[i] * horiz[static_cast<std::size_t>(y + i) * out_w + x];
        out[static_cast<std::size_t>(y) * out_w + x] = acc;
      }
    }
    return out;
  };
  const auto mu_a = filter([&](int i) { return a[i]; });
  const auto mu_b = filter([&](int i) { return b[i]; });
  const auto e_aa = filter([&](int i) { return a[i] * a[i]; });
  const auto e_bb = filter([&](int i) { return b[i] * b[i]; });
  const auto e_ab = filter([&](int i) { return a[i] * b[i]; });

  const double c1 = params.c1(), c2 = params.c2();
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
    const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

FrechetStats frechet_stats_from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.size() < 2) throw ContractError("feature statistics need at least two samples");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto dim = static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != dim) throw DimensionError("feature rows differ in length");
    for (Eigen::Index j = 0; j < dim; ++j) x(i, j) = rows[i][j];
  }
  FrechetStats stats;
  stats.mu = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - stats.mu.transpose();
  stats.sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return stats;
}

double frechet_distance(const FrechetStats& s1, const FrechetStats& s2) {
  if (s1.mu.size() != s2.mu.size() || s1.sigma.rows() != s2.sigma.rows() || s1.sigma.rows() != s1.mu.size()) {
    throw DimensionError("frechet_distance: feature dimensions differ (" + std::to_string(s1.mu.size()) + " vs " +
                         std::to_string(s2.mu.size()) + ")");
  }
  const Eigen::MatrixXd root1 = symmetric_sqrt(s1.sigma, "first covariance");
  Eigen::MatrixXd inner = root1 * s2.sigma * root1;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed for the covariance product");
  double trace_root = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    const double lambda = eig.eigenvalues()[i];
    if (lambda < -kNegativeEigenTolerance) {
      throw NumericError("negative eigenvalue " + std::to_string(lambda) + " in covariance product");
    }
    trace_root += std::sqrt(std::max(lambda, 0.0));
  }
  const double mean_term = (s1.mu - s2.mu).squaredNorm();
  const double value = mean_term + s1.sigma.trace() + s2.sigma.trace() - 2.0 * trace_root;
  return std::max(value, 0.0);
}

}  // namespace fargan
