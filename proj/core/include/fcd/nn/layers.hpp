/**
 * @file layers.hpp
 * @brief Minimal CPU layers with hand-written backward passes.
 *
 * Activations are column-major Eigen matrices. A batch of N feature maps
 * with C channels and P = H*W pixels is a C x (N*P) matrix whose column
 * n*P + (row*W + col) holds all channels of one pixel. Reinterpreting it
 * as a (C*P) x N matrix flattens every sample without copying.
 */
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

namespace fcd::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Rng = std::mt19937_64;

struct Param {
  Mat value;
  Mat grad;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value = Mat::Zero(rows, cols);
    grad = Mat::Zero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
};

/// 3x3 kernel, stride 2, padding 1.
struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int in_height = 0;
  int in_width = 0;
  int out_height = 0;
  int out_width = 0;

  static constexpr int kKernel = 3;
  static constexpr int kStride = 2;
  static constexpr int kPad = 1;

  static ConvGeometry make(int in_c, int out_c, int in_h, int in_w);
  [[nodiscard]] int in_pixels() const { return in_height * in_width; }
  [[nodiscard]] int out_pixels() const { return out_height * out_width; }
  [[nodiscard]] int patch_rows() const { return kKernel * kKernel * in_channels; }
};

/// (in_c, N*in_pixels) -> (9*in_c, N*out_pixels); row = (ky*3+kx)*in_c + ci.
Mat im2col(const ConvGeometry& g, const Mat& x, int batch);
/// Adjoint of im2col: scatters-adds columns back onto the input grid.
Mat col2im(const ConvGeometry& g, const Mat& cols, int batch);

/// Strided convolution. Weight is out_c x (9*in_c).
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const ConvGeometry& g, Rng& rng);

  /// When `cols` is non-null the im2col buffer is kept for backward.
  Mat forward(const Mat& x, int batch, Mat* cols) const;
  /// Accumulates parameter gradients; returns d(loss)/d(input) when wanted.
  Mat backward(const Mat& dy, const Mat& cols, int batch, bool want_input_grad);

  [[nodiscard]] const ConvGeometry& geometry() const { return geometry_; }
  Param weight;
  Param bias;

 private:
  ConvGeometry geometry_;
};

/// Transposed counterpart of a Conv2d with geometry `g`: maps
/// (g.out_channels, out pixels) back to (g.in_channels, in pixels).
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const ConvGeometry& g, Rng& rng, double gain);

  Mat forward(const Mat& x, int batch) const;
  Mat backward(const Mat& dy, const Mat& x, int batch, bool want_input_grad);

  [[nodiscard]] const ConvGeometry& geometry() const { return geometry_; }
  Param weight;  // g.out_channels x (9 * g.in_channels)
  Param bias;    // g.in_channels

 private:
  ConvGeometry geometry_;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, double gain);

  [[nodiscard]] Mat forward(const Mat& x) const;
  Mat backward(const Mat& dy, const Mat& x, bool want_input_grad);

  [[nodiscard]] int in_features() const { return static_cast<int>(weight.value.cols()); }
  [[nodiscard]] int out_features() const { return static_cast<int>(weight.value.rows()); }
  Param weight;
  Param bias;
};

inline void relu_inplace(Mat& x) { x = x.cwiseMax(0.0); }
/// dy masked by the post-activation values.
inline Mat relu_backward(const Mat& dy, const Mat& activated) {
  return (activated.array() > 0.0).select(dy, 0.0);
}

double sigmoid(double z);
/// Mean binary cross-entropy from logits against (possibly soft) targets.
/// Writes dloss/dlogit into `dlogits` when non-null.
double bce_with_logits(const Mat& logits, const Vec& targets, Mat* dlogits);

/// Seeded N(0, std^2) fill.
void fill_normal(Mat& m, Rng& rng, double stddev);

}  // namespace fcd::nn
