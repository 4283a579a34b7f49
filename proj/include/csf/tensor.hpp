#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace csf {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// A batch of multi-channel images stored channel-major per pixel.
///
/// `data` has one row per channel and one column per pixel; the column for
/// pixel (y, x) of batch element b is `b * height * width + y * width + x`.
/// Column-major storage keeps every pixel's channel vector contiguous, so one
/// batch element occupies a contiguous block of `channels * height * width`
/// scalars. That block is the flattened layer representation used by the loss.
template <typename Scalar>
struct FeatureMap {
  Matrix<Scalar> data;
  int batch = 0;
  int height = 0;
  int width = 0;

  FeatureMap() = default;
  FeatureMap(int channels, int batch_, int height_, int width_)
      : data(Matrix<Scalar>::Zero(channels, Eigen::Index(batch_) * height_ * width_)),
        batch(batch_),
        height(height_),
        width(width_) {}

  [[nodiscard]] int channels() const { return static_cast<int>(data.rows()); }
  [[nodiscard]] Eigen::Index pixels() const { return Eigen::Index(height) * width; }
  [[nodiscard]] Eigen::Index column(int b, int y, int x) const {
    return Eigen::Index(b) * pixels() + Eigen::Index(y) * width + x;
  }
  Scalar& at(int c, int b, int y, int x) { return data(c, column(b, y, x)); }
  [[nodiscard]] Scalar at(int c, int b, int y, int x) const { return data(c, column(b, y, x)); }

  /// Element b as a [channels, height*width] block.
  auto element(int b) { return data.middleCols(Eigen::Index(b) * pixels(), pixels()); }
  auto element(int b) const { return data.middleCols(Eigen::Index(b) * pixels(), pixels()); }

  /// Flattened view [batch, channels*height*width], one row per batch element.
  auto flattened() const {
    return Eigen::Map<const Matrix<Scalar>>(data.data(), data.rows() * pixels(), batch).transpose();
  }

  template <typename Other>
  [[nodiscard]] FeatureMap<Other> cast() const {
    FeatureMap<Other> out;
    out.data = data.template cast<Other>();
    out.batch = batch;
    out.height = height;
    out.width = width;
    return out;
  }
};

/// Thrown on violated preconditions; the message names the failing contract.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace csf
