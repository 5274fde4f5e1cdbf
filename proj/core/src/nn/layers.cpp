#include "fcd/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace fcd::nn {

ConvGeometry ConvGeometry::make(int in_c, int out_c, int in_h, int in_w) {
  ConvGeometry g;
  g.in_channels = in_c;
  g.out_channels = out_c;
  g.in_height = in_h;
  g.in_width = in_w;
  g.out_height = (in_h + 2 * kPad - kKernel) / kStride + 1;
  g.out_width = (in_w + 2 * kPad - kKernel) / kStride + 1;
  if (in_c < 1 || out_c < 1 || g.out_height < 1 || g.out_width < 1) {
    throw std::invalid_argument("invalid convolution geometry");
  }
  return g;
}

Mat im2col(const ConvGeometry& g, const Mat& x, int batch) {
  const int c = g.in_channels;
  const int rows = g.patch_rows();
  Mat cols = Mat::Zero(rows, static_cast<Eigen::Index>(batch) * g.out_pixels());
  const double* src = x.data();
  double* dst_base = cols.data();
  for (int n = 0; n < batch; ++n) {
    for (int oy = 0; oy < g.out_height; ++oy) {
      for (int ox = 0; ox < g.out_width; ++ox) {
        const std::size_t col = static_cast<std::size_t>(n) * g.out_pixels() + oy * g.out_width + ox;
        double* dst = dst_base + col * rows;
        for (int ky = 0; ky < ConvGeometry::kKernel; ++ky) {
          const int iy = oy * ConvGeometry::kStride - ConvGeometry::kPad + ky;
          if (iy < 0 || iy >= g.in_height) continue;
          for (int kx = 0; kx < ConvGeometry::kKernel; ++kx) {
            const int ix = ox * ConvGeometry::kStride - ConvGeometry::kPad + kx;
            if (ix < 0 || ix >= g.in_width) continue;
            const double* s = src + (static_cast<std::size_t>(n) * g.in_pixels() + iy * g.in_width + ix) * c;
            double* d = dst + (ky * ConvGeometry::kKernel + kx) * c;
            for (int ci = 0; ci < c; ++ci) d[ci] = s[ci];
          }
        }
      }
    }
  }
  return cols;
}

Mat col2im(const ConvGeometry& g, const Mat& cols, int batch) {
  const int c = g.in_channels;
  const int rows = g.patch_rows();
  Mat x = Mat::Zero(c, static_cast<Eigen::Index>(batch) * g.in_pixels());
  double* dst = x.data();
  const double* src_base = cols.data();
  for (int n = 0; n < batch; ++n) {
    for (int oy = 0; oy < g.out_height; ++oy) {
      for (int ox = 0; ox < g.out_width; ++ox) {
        const std::size_t col = static_cast<std::size_t>(n) * g.out_pixels() + oy * g.out_width + ox;
        const double* src = src_base + col * rows;
        for (int ky = 0; ky < ConvGeometry::kKernel; ++ky) {
          const int iy = oy * ConvGeometry::kStride - ConvGeometry::kPad + ky;
          if (iy < 0 || iy >= g.in_height) continue;
          for (int kx = 0; kx < ConvGeometry::kKernel; ++kx) {
            const int ix = ox * ConvGeometry::kStride - ConvGeometry::kPad + kx;
            if (ix < 0 || ix >= g.in_width) continue;
            double* d = dst + (static_cast<std::size_t>(n) * g.in_pixels() + iy * g.in_width + ix) * c;
            const double* s = src + (ky * ConvGeometry::kKernel + kx) * c;
            for (int ci = 0; ci < c; ++ci) d[ci] += s[ci];
          }
        }
      }
    }
  }
  return x;
}

void fill_normal(Mat& m, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

Conv2d::Conv2d(const ConvGeometry& g, Rng& rng) : geometry_(g) {
  weight.resize(g.out_channels, g.patch_rows());
  bias.resize(g.out_channels, 1);
  fill_normal(weight.value, rng, std::sqrt(2.0 / g.patch_rows()));  // He
}

Mat Conv2d::forward(const Mat& x, int batch, Mat* cols) const {
  Mat local = im2col(geometry_, x, batch);
  Mat y(weight.value.rows(), local.cols());
  y.noalias() = weight.value * local;
  y.colwise() += bias.value.col(0);
  if (cols != nullptr) *cols = std::move(local);
  return y;
}

Mat Conv2d::backward(const Mat& dy, const Mat& cols, int batch, bool want_input_grad) {
  weight.grad.noalias() += dy * cols.transpose();
  bias.grad.col(0) += dy.rowwise().sum();
  if (!want_input_grad) return {};
  Mat dcols(cols.rows(), cols.cols());
  dcols.noalias() = weight.value.transpose() * dy;
  return col2im(geometry_, dcols, batch);
}

ConvTranspose2d::ConvTranspose2d(const ConvGeometry& g, Rng& rng, double gain) : geometry_(g) {
  weight.resize(g.out_channels, g.patch_rows());
  bias.resize(g.in_channels, 1);
  // each output pixel receives about 9/4 * out_channels contributions
  const double fan = std::max(1.0, 9.0 * g.out_channels / 4.0);
  fill_normal(weight.value, rng, std::sqrt(gain / fan));
}

Mat ConvTranspose2d::forward(const Mat& x, int batch) const {
  Mat cols(weight.value.cols(), x.cols());
  cols.noalias() = weight.value.transpose() * x;
  Mat y = col2im(geometry_, cols, batch);
  y.colwise() += bias.value.col(0);
  return y;
}

Mat ConvTranspose2d::backward(const Mat& dy, const Mat& x, int batch, bool want_input_grad) {
  const Mat dcols = im2col(geometry_, dy, batch);
  weight.grad.noalias() += x * dcols.transpose();
  bias.grad.col(0) += dy.rowwise().sum();
  if (!want_input_grad) return {};
  Mat dx(weight.value.rows(), dcols.cols());
  dx.noalias() = weight.value * dcols;
  return dx;
}

Linear::Linear(int in, int out, Rng& rng, double gain) {
  weight.resize(out, in);
  bias.resize(out, 1);
  fill_normal(weight.value, rng, std::sqrt(gain / in));
}

Mat Linear::forward(const Mat& x) const {
  Mat y(weight.value.rows(), x.cols());
  y.noalias() = weight.value * x;
  y.colwise() += bias.value.col(0);
  return y;
}

Mat Linear::backward(const Mat& dy, const Mat& x, bool want_input_grad) {
  weight.grad.noalias() += dy * x.transpose();
  bias.grad.col(0) += dy.rowwise().sum();
  if (!want_input_grad) return {};
  Mat dx(weight.value.cols(), dy.cols());
  dx.noalias() = weight.value.transpose() * dy;
  return dx;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_with_logits(const Mat& logits, const Vec& targets, Mat* dlogits) {
  const Eigen::Index n = logits.cols();
  if (logits.rows() != 1 || targets.size() != n) throw std::invalid_argument("bce: shape mismatch");
  double loss = 0.0;
  if (dlogits != nullptr) dlogits->resize(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = logits(0, i);
    const double y = targets(i);
    loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    if (dlogits != nullptr) (*dlogits)(0, i) = (sigmoid(z) - y) / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

}  // namespace fcd::nn
