#pragma once

#include "csf/conv.hpp"
#include "csf/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace csf {

/// Shape of the residual encoder.
///
/// A 3x3 stem convolution (stride `stem_stride`) feeds `stack_widths.size()`
/// stacks of pre-activation residual blocks (GroupNorm, ReLU, conv, twice, plus
/// a shortcut that becomes a 1x1 projection when the shape changes). GroupNorm
/// statistics are per batch element, so elements never interact. The first block of every stack
/// after the first halves the spatial extent. `loss_layers` lists the stack
/// indices whose final block output is exposed to the contrastive loss.
struct EncoderConfig {
  int input_channels = 12;
  std::vector<int> stack_widths{16, 32, 64, 128};
  std::vector<int> blocks_per_stack{1, 1, 1, 1};
  std::vector<int> loss_layers{2, 3};
  int stem_stride = 2;
  int norm_groups = 8;     // GroupNorm groups per block norm; 0 disables normalization
  double init_gain = 0.01; // multiplies the He-normal init of convs that write into the residual stream
  std::uint64_t rng_seed = 0;

  void validate() const;
  /// Spatial extent (h, w) of stack `s` output for an (H, W) input.
  [[nodiscard]] std::pair<int, int> stack_extent(int s, int height, int width) const;
  /// Flattened size C_L * h_L * w_L of each tapped layer for an (H, W) input.
  [[nodiscard]] std::vector<Eigen::Index> tap_dims(int height, int width) const;
  /// Canonical one-line text form; equal configs give equal strings.
  [[nodiscard]] std::string to_string() const;
  bool operator==(const EncoderConfig&) const = default;
};

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
};

/// Flattened per-layer representations, one [B, D_L] matrix per tapped layer.
template <typename Scalar>
struct LayerRepresentation {
  std::vector<int> layers;
  std::vector<Matrix<Scalar>> z;
};

template <typename Scalar>
struct ConvCache {
  Matrix<Scalar> col;
  int in_channels = 0, batch = 0, in_h = 0, in_w = 0;
};

template <typename Scalar>
struct NormCache {
  Matrix<Scalar> normalized;  // x_hat, same shape as the input
  Matrix<Scalar> inv_std;     // [groups, batch]
};

template <typename Scalar>
struct BlockCache {
  FeatureMap<Scalar> pre_a;  // normalized block input, before the leading ReLU
  FeatureMap<Scalar> pre_b;  // normalized conv_a output, before the inner ReLU
  NormCache<Scalar> norm_a, norm_b;
  ConvCache<Scalar> a, b, proj;
};

/// Everything backward() needs from one forward pass.
template <typename Scalar>
struct ForwardPass {
  std::uint64_t parameter_version = 0;
  ConvCache<Scalar> stem;
  std::vector<std::vector<BlockCache<Scalar>>> blocks;  // [stack][block]
  std::vector<FeatureMap<Scalar>> stack_outputs;
};

/// Residual convolutional encoder shared by both views.
///
/// Every forward pass records the parameter version it used; the version
/// increments on each mutable access to the parameters, so two passes that
/// report the same version ran with identical weights.
template <typename Scalar>
class Encoder {
 public:
  explicit Encoder(const EncoderConfig& cfg);

  [[nodiscard]] const EncoderConfig& config() const { return cfg_; }
  [[nodiscard]] const std::vector<Parameter<Scalar>>& params() const { return params_; }
  std::vector<Parameter<Scalar>>& mutable_params() {
    ++version_;
    return params_;
  }
  [[nodiscard]] std::uint64_t parameter_version() const { return version_; }
  [[nodiscard]] Eigen::Index parameter_count() const;

  [[nodiscard]] ForwardPass<Scalar> forward(const FeatureMap<Scalar>& batch) const;

  /// Representations of the tapped stacks, flattened over channels and space.
  [[nodiscard]] LayerRepresentation<Scalar> taps(const ForwardPass<Scalar>& pass) const;

  /// Parameter gradients given dLoss/dZ_L for each tapped layer ([B, D_L] each).
  [[nodiscard]] std::vector<Matrix<Scalar>> backward(const ForwardPass<Scalar>& pass,
                                                     const std::vector<Matrix<Scalar>>& dz) const;

  [[nodiscard]] LayerRepresentation<Scalar> encode_multi_layer(const FeatureMap<Scalar>& batch) const {
    return taps(forward(batch));
  }

  /// Global spatial mean of the final stack's feature map: [B, stack_widths.back()].
  [[nodiscard]] Matrix<Scalar> pooled_representation(const FeatureMap<Scalar>& batch) const;

 private:
  struct Conv {
    int in = 0, out = 0, kernel = 3, stride = 1, pad = 1;
    std::size_t weight = 0, bias = 0;
  };
  struct Norm {
    int channels = 0, groups = 0;
    std::size_t scale = 0, shift = 0;
  };
  struct Block {
    Norm na, nb;
    Conv a, b;
    bool has_proj = false;
    Conv proj;
  };

  Conv add_conv(const std::string& name, int in, int out, int kernel, int stride, double gain, std::uint64_t seed);
  Norm add_norm(const std::string& name, int channels);
  FeatureMap<Scalar> norm_forward(const Norm& norm, const FeatureMap<Scalar>& x, NormCache<Scalar>& cache) const;
  FeatureMap<Scalar> norm_backward(const Norm& norm, const NormCache<Scalar>& cache, const FeatureMap<Scalar>& dy,
                                   std::vector<Matrix<Scalar>>& grads) const;
  FeatureMap<Scalar> conv_forward(const Conv& conv, const FeatureMap<Scalar>& x, ConvCache<Scalar>& cache) const;
  FeatureMap<Scalar> conv_backward(const Conv& conv, const ConvCache<Scalar>& cache, const FeatureMap<Scalar>& dy,
                                   std::vector<Matrix<Scalar>>& grads, bool need_input_grad) const;

  EncoderConfig cfg_;
  std::vector<Parameter<Scalar>> params_;
  Conv stem_;
  std::vector<std::vector<Block>> stacks_;
  std::uint64_t version_ = 0;
};

/// Mean over spatial positions per channel: [B, C].
template <typename Scalar>
Matrix<Scalar> global_average_pool(const FeatureMap<Scalar>& x) {
  Matrix<Scalar> out(x.batch, x.channels());
  for (int b = 0; b < x.batch; ++b) out.row(b) = x.element(b).rowwise().mean().transpose();
  return out;
}

extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace csf
