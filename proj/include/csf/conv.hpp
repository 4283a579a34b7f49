#pragma once

#include "csf/tensor.hpp"

namespace csf {

/// Output extent of a convolution with kernel `k`, stride `s` and zero padding `p`.
constexpr int conv_output_size(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

/// Unfolds every k x k receptive field into a column.
///
/// Row `(ky * k + kx) * C + c` of the result holds channel c at kernel offset
/// (ky, kx); column order matches the output FeatureMap's pixel order.
template <typename Scalar>
Matrix<Scalar> im2col(const FeatureMap<Scalar>& x, int k, int stride, int pad) {
  const int C = x.channels();
  const int oh = conv_output_size(x.height, k, stride, pad);
  const int ow = conv_output_size(x.width, k, stride, pad);
  Matrix<Scalar> col(Eigen::Index(k) * k * C, Eigen::Index(x.batch) * oh * ow);
  Eigen::Index j = 0;
  for (int b = 0; b < x.batch; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++j)
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride + ky - pad;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride + kx - pad;
            auto dst = col.col(j).segment(Eigen::Index(ky * k + kx) * C, C);
            if (iy < 0 || iy >= x.height || ix < 0 || ix >= x.width)
              dst.setZero();
            else
              dst = x.data.col(x.column(b, iy, ix));
          }
        }
  return col;
}

/// Adjoint of im2col: scatters column gradients back onto the input grid.
template <typename Scalar>
FeatureMap<Scalar> col2im(const Matrix<Scalar>& col, int channels, int batch, int height, int width, int k,
                          int stride, int pad) {
  FeatureMap<Scalar> dx(channels, batch, height, width);
  const int oh = conv_output_size(height, k, stride, pad);
  const int ow = conv_output_size(width, k, stride, pad);
  Eigen::Index j = 0;
  for (int b = 0; b < batch; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++j)
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= width) continue;
            dx.data.col(dx.column(b, iy, ix)) += col.col(j).segment(Eigen::Index(ky * k + kx) * channels, channels);
          }
        }
  return dx;
}

template <typename Scalar>
FeatureMap<Scalar> relu(const FeatureMap<Scalar>& x) {
  FeatureMap<Scalar> y = x;
  y.data = x.data.cwiseMax(Scalar(0));
  return y;
}

}  // namespace csf
