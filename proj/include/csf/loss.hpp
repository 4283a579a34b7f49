#pragma once

#include "csf/encoder.hpp"
#include "csf/tensor.hpp"

#include <cmath>
#include <map>
#include <vector>

namespace csf {

/// S(i, j) = z1.row(i) . z2.row(j); rows of S index view 1, the diagonal holds matched pairs.
template <typename D1, typename D2>
Matrix<typename D1::Scalar> similarity_matrix(const Eigen::MatrixBase<D1>& z1, const Eigen::MatrixBase<D2>& z2) {
  require(z1.rows() == z2.rows() && z1.cols() == z2.cols(), "similarity_matrix: Z1 and Z2 must have equal shapes");
  // Entry-wise dots: swapping the views then yields exactly the transpose.
  const Matrix<typename D1::Scalar> a = z1, b = z2;
  Matrix<typename D1::Scalar> s(a.rows(), a.rows());
  for (Eigen::Index j = 0; j < s.cols(); ++j)
    for (Eigen::Index i = 0; i < s.rows(); ++i) s(i, j) = a.row(i).dot(b.row(j));
  return s;
}

/// Row-wise log-softmax with max subtraction.
template <typename Derived>
Matrix<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& s) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Scalar m = s.row(i).maxCoeff();
    const Scalar lse = m + std::log((s.row(i).array() - m).exp().sum());
    out.row(i) = s.row(i).array() - lse;
  }
  return out;
}

template <typename Scalar>
struct InfoNceTerms {
  Scalar forward = 0;   // predict view 2 from view 1: rows of S
  Scalar backward = 0;  // predict view 1 from view 2: rows of S^T
  [[nodiscard]] Scalar total() const { return forward + backward; }
};

template <typename Scalar>
struct InfoNceGradient {
  InfoNceTerms<Scalar> terms;
  Matrix<Scalar> dz1;
  Matrix<Scalar> dz2;
};

/// Forward and backward InfoNCE terms with in-batch negatives:
/// forward = -mean_b log_softmax(S)_bb, backward the same on S^T.
template <typename D1, typename D2>
InfoNceTerms<typename D1::Scalar> layer_infonce_terms(const Eigen::MatrixBase<D1>& z1,
                                                      const Eigen::MatrixBase<D2>& z2) {
  using Scalar = typename D1::Scalar;
  require(z1.allFinite() && z2.allFinite(), "layer_infonce_loss: representations must be finite");
  const Matrix<Scalar> s = similarity_matrix(z1, z2);
  const Scalar inv_b = Scalar(1) / Scalar(s.rows());
  InfoNceTerms<Scalar> t;
  const Matrix<Scalar> st = s.transpose();
  t.forward = -log_softmax_rows(s).diagonal().sum() * inv_b;
  t.backward = -log_softmax_rows(st).diagonal().sum() * inv_b;
  return t;
}

template <typename D1, typename D2>
typename D1::Scalar layer_infonce_loss(const Eigen::MatrixBase<D1>& z1, const Eigen::MatrixBase<D2>& z2) {
  return layer_infonce_terms(z1, z2).total();
}

/// Loss plus analytic gradients. With P the row softmax and Q the column
/// softmax of S, dL/dS = (P + Q - 2I) / B.
template <typename D1, typename D2>
InfoNceGradient<typename D1::Scalar> layer_infonce_gradient(const Eigen::MatrixBase<D1>& z1,
                                                            const Eigen::MatrixBase<D2>& z2) {
  using Scalar = typename D1::Scalar;
  require(z1.allFinite() && z2.allFinite(), "layer_infonce_loss: representations must be finite");
  const Matrix<Scalar> s = similarity_matrix(z1, z2);
  const Eigen::Index b = s.rows();
  const Scalar inv_b = Scalar(1) / Scalar(b);
  const Matrix<Scalar> log_p = log_softmax_rows(s);
  const Matrix<Scalar> st = s.transpose();
  const Matrix<Scalar> log_q = log_softmax_rows(st).transpose();

  InfoNceGradient<Scalar> g;
  g.terms.forward = -log_p.diagonal().sum() * inv_b;
  g.terms.backward = -log_q.diagonal().sum() * inv_b;
  Matrix<Scalar> ds = log_p.array().exp() + log_q.array().exp();
  ds.diagonal().array() -= Scalar(2);
  ds *= inv_b;
  g.dz1.noalias() = ds * z2;
  g.dz2.noalias() = ds.transpose() * z1;
  return g;
}

/// Per-layer weights, keyed by stack index.
struct LossWeights {
  std::map<int, double> lambda_by_layer;

  /// Penultimate tapped layer 1.0, last tapped layer 2.0; earlier taps 0.
  static LossWeights defaults_for(const std::vector<int>& tapped_layers);
  void validate() const;
  [[nodiscard]] double sum() const;
};

template <typename Scalar>
struct TotalLoss {
  Scalar total = 0;
  std::vector<Scalar> per_layer;  // aligned with the representation's tapped layers; 0 when unweighted
  std::vector<Matrix<Scalar>> dz1, dz2;
};

namespace detail {
inline std::vector<double> layer_weights(const std::vector<int>& layers, const LossWeights& w) {
  w.validate();
  for (const auto& [layer, lambda] : w.lambda_by_layer) {
    bool tapped = false;
    for (int l : layers) tapped = tapped || l == layer;
    require(tapped || lambda == 0.0, "total_loss: weight given for un-tapped layer " + std::to_string(layer));
  }
  std::vector<double> out;
  for (int l : layers) {
    const auto it = w.lambda_by_layer.find(l);
    out.push_back(it == w.lambda_by_layer.end() ? 0.0 : it->second);
  }
  return out;
}
}  // namespace detail

/// sum_L lambda_L * L_L over layers with positive weight.
template <typename Scalar, bool WithGradient = false>
TotalLoss<Scalar> total_loss(const LayerRepresentation<Scalar>& r1, const LayerRepresentation<Scalar>& r2,
                             const LossWeights& w) {
  require(r1.layers == r2.layers && r1.z.size() == r1.layers.size() && r2.z.size() == r2.layers.size(),
          "total_loss: both views must be tapped at identical layers");
  const auto lambdas = detail::layer_weights(r1.layers, w);
  TotalLoss<Scalar> out;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    const Scalar lambda = static_cast<Scalar>(lambdas[i]);
    if (lambda <= 0) {
      out.per_layer.push_back(0);
      if constexpr (WithGradient) {
        out.dz1.push_back(Matrix<Scalar>::Zero(r1.z[i].rows(), r1.z[i].cols()));
        out.dz2.push_back(Matrix<Scalar>::Zero(r2.z[i].rows(), r2.z[i].cols()));
      }
      continue;
    }
    if constexpr (WithGradient) {
      auto g = layer_infonce_gradient(r1.z[i], r2.z[i]);
      out.per_layer.push_back(g.terms.total());
      out.total += lambda * g.terms.total();
      out.dz1.push_back(lambda * g.dz1);
      out.dz2.push_back(lambda * g.dz2);
    } else {
      const Scalar l = layer_infonce_loss(r1.z[i], r2.z[i]);
      out.per_layer.push_back(l);
      out.total += lambda * l;
    }
  }
  return out;
}

}  // namespace csf
