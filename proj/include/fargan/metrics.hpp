#pragma once

// Image-quality metrics: windowed SSIM and the Frechet distance between
// Gaussian fits of pooled feature vectors.

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "fargan/losses.hpp"

namespace fargan {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double dynamic_range = 1.0;

  double c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
  double c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }
};

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
std::vector<double> gaussian_taps(int size, double sigma);

/// Mean local SSIM over valid window positions of two grayscale planes.
double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int height, int width,
                  const SsimParams& params = {});

namespace detail {
/// [C,H,W] or [1,C,H,W] -> luma plane (0.299, 0.587, 0.114) or the single channel.
template <typename T>
std::vector<double> luma_plane(const Tensor<T>& img, int& height, int& width) {
  if (img.rank() != 3 && !(img.rank() == 4 && img.dim(0) == 1)) {
    throw DimensionError("ssim: expected [C,H,W] or [1,C,H,W], got " + shape_str(img.shape()));
  }
  const std::size_t off = img.rank() - 3;
  const Index channels = img.dim(off);
  height = static_cast<int>(img.dim(off + 1));
  width = static_cast<int>(img.dim(off + 2));
  const Index plane = static_cast<Index>(height) * width;
  std::vector<double> out(static_cast<std::size_t>(plane));
  if (channels == 1) {
    for (Index i = 0; i < plane; ++i) out[i] = img[i];
  } else if (channels == 3) {
    for (Index i = 0; i < plane; ++i) {
      out[i] = 0.299 * img[i] + 0.587 * img[plane + i] + 0.114 * img[2 * plane + i];
    }
  } else {
    throw DimensionError("ssim: channel axis must be 1 or 3");
  }
  return out;
}
}  // namespace detail

/// SSIM of two images with values in [0, params.dynamic_range].
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& params = {}) {
  detail::require_same_shape(a.shape(), b.shape(), "ssim");
  int h = 0, w = 0;
  const std::vector<double> pa = detail::luma_plane(a, h, w);
  const std::vector<double> pb = detail::luma_plane(b, h, w);
  return ssim_plane(pa, pb, h, w, params);
}

/// [-1, 1] -> [0, 1].
template <typename T>
Tensor<T> to_unit_range(const Tensor<T>& x) {
  NoGradGuard guard;
  return mul_scalar(add_scalar(x.detach(), T{1}), T(0.5));
}

struct FrechetStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
};

/// Sample mean and unbiased covariance of feature rows (>= 2 rows).
FrechetStats frechet_stats_from_rows(const std::vector<std::vector<double>>& rows);

/// Pooled features of every image in an NCHW batch.
template <typename T>
FrechetStats feature_stats(const Tensor<T>& images, const FeatureNet<T>& extractor) {
  if (images.rank() != 4 || images.dim(0) < 2) {
    throw ContractError("feature_stats: need at least two images, got " + shape_str(images.shape()));
  }
  return frechet_stats_from_rows(extractor.pooled(images));
}

/// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), the root taken via the
/// symmetric eigendecomposition of S1^{1/2} S2 S1^{1/2}.
double frechet_distance(const FrechetStats& s1, const FrechetStats& s2);

}  // namespace fargan
