#include "csf/encoder.hpp"

#include <algorithm>
#include <numeric>
#include <cmath>
#include <random>
#include <sstream>

namespace csf {

void EncoderConfig::validate() const {
  require(input_channels >= 1, "EncoderConfig: input_channels must be >= 1");
  require(stack_widths.size() >= 2, "EncoderConfig: at least two stacks required");
  require(stack_widths.size() == blocks_per_stack.size(),
          "EncoderConfig: stack_widths and blocks_per_stack must have equal length");
  for (int w : stack_widths) require(w >= 1, "EncoderConfig: stack widths must be positive");
  for (int b : blocks_per_stack) require(b >= 1, "EncoderConfig: blocks_per_stack entries must be positive");
  require(!loss_layers.empty(), "EncoderConfig: loss_layers must name at least one stack");
  for (std::size_t i = 0; i < loss_layers.size(); ++i) {
    require(loss_layers[i] >= 0 && loss_layers[i] < int(stack_widths.size()),
            "EncoderConfig: loss layer " + std::to_string(loss_layers[i]) + " outside stack range [0, " +
                std::to_string(stack_widths.size()) + ")");
    require(i == 0 || loss_layers[i] > loss_layers[i - 1], "EncoderConfig: loss_layers must be strictly increasing");
  }
  require(stem_stride == 1 || stem_stride == 2, "EncoderConfig: stem_stride must be 1 or 2");
  require(norm_groups >= 0, "EncoderConfig: norm_groups must be >= 0");
  require(init_gain > 0, "EncoderConfig: init_gain must be positive");
}

std::pair<int, int> EncoderConfig::stack_extent(int s, int height, int width) const {
  int h = conv_output_size(height, 3, stem_stride, 1), w = conv_output_size(width, 3, stem_stride, 1);
  for (int i = 1; i <= s; ++i) h = conv_output_size(h, 3, 2, 1), w = conv_output_size(w, 3, 2, 1);
  return {h, w};
}

std::vector<Eigen::Index> EncoderConfig::tap_dims(int height, int width) const {
  std::vector<Eigen::Index> dims;
  for (int layer : loss_layers) {
    const auto [h, w] = stack_extent(layer, height, width);
    dims.push_back(Eigen::Index(stack_widths[std::size_t(layer)]) * h * w);
  }
  return dims;
}

std::string EncoderConfig::to_string() const {
  std::ostringstream o;
  auto list = [&](const std::vector<int>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) o << (i ? "," : "") << v[i];
  };
  o << "input_channels=" << input_channels << " stack_widths=";
  list(stack_widths);
  o << " blocks_per_stack=";
  list(blocks_per_stack);
  o << " loss_layers=";
  list(loss_layers);
  o << " stem_stride=" << stem_stride << " norm_groups=" << norm_groups << " init_gain=" << init_gain << " seed=" << rng_seed;
  return o.str();
}

template <typename Scalar>
typename Encoder<Scalar>::Conv Encoder<Scalar>::add_conv(const std::string& name, int in, int out, int kernel,
                                                         int stride, double gain, std::uint64_t seed) {
  Conv c;
  c.in = in, c.out = out, c.kernel = kernel, c.stride = stride, c.pad = kernel / 2;
  const int fan_in = kernel * kernel * in;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, gain * std::sqrt(2.0 / fan_in));
  Matrix<Scalar> w(out, fan_in);
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(normal(rng));
  c.weight = params_.size();
  params_.push_back({name + ".weight", std::move(w)});
  c.bias = params_.size();
  params_.push_back({name + ".bias", Matrix<Scalar>::Zero(out, 1)});
  return c;
}

template <typename Scalar>
typename Encoder<Scalar>::Norm Encoder<Scalar>::add_norm(const std::string& name, int channels) {
  Norm n;
  n.channels = channels;
  if (cfg_.norm_groups == 0) return n;
  n.groups = std::gcd(cfg_.norm_groups, channels);
  n.scale = params_.size();
  params_.push_back({name + ".scale", Matrix<Scalar>::Ones(channels, 1)});
  n.shift = params_.size();
  params_.push_back({name + ".shift", Matrix<Scalar>::Zero(channels, 1)});
  return n;
}

template <typename Scalar>
Encoder<Scalar>::Encoder(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::uint64_t conv_index = 0;
  auto seed = [&] { return mix_seed(cfg_.rng_seed, conv_index++); };
  const double gain = cfg_.init_gain;

  stem_ = add_conv("stem", cfg_.input_channels, cfg_.stack_widths[0], 3, cfg_.stem_stride, 1.0, seed());
  int in = cfg_.stack_widths[0];
  for (std::size_t s = 0; s < cfg_.stack_widths.size(); ++s) {
    const int out = cfg_.stack_widths[s];
    std::vector<Block> blocks;
    for (int j = 0; j < cfg_.blocks_per_stack[s]; ++j) {
      const std::string prefix = "stack" + std::to_string(s) + ".block" + std::to_string(j);
      const int stride = (j == 0 && s > 0) ? 2 : 1;
      Block blk;
      blk.na = add_norm(prefix + ".norm_a", in);
      blk.a = add_conv(prefix + ".conv_a", in, out, 3, stride, 1.0, seed());
      blk.nb = add_norm(prefix + ".norm_b", out);
      blk.b = add_conv(prefix + ".conv_b", out, out, 3, 1, gain, seed());
      blk.has_proj = stride != 1 || in != out;
      if (blk.has_proj) blk.proj = add_conv(prefix + ".proj", in, out, 1, stride, gain, seed());
      blocks.push_back(blk);
      in = out;
    }
    stacks_.push_back(std::move(blocks));
  }
}

template <typename Scalar>
Eigen::Index Encoder<Scalar>::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename Scalar>
FeatureMap<Scalar> Encoder<Scalar>::norm_forward(const Norm& norm, const FeatureMap<Scalar>& x,
                                                 NormCache<Scalar>& cache) const {
  if (norm.groups == 0) return x;
  constexpr Scalar kEps = Scalar(1e-5);
  const int per = norm.channels / norm.groups;
  const Eigen::Index hw = x.pixels();
  cache.normalized.resize(x.data.rows(), x.data.cols());
  cache.inv_std.resize(norm.groups, x.batch);
  for (int b = 0; b < x.batch; ++b)
    for (int g = 0; g < norm.groups; ++g) {
      const auto in = x.data.block(Eigen::Index(g) * per, b * hw, per, hw);
      const Scalar mean = in.mean();
      const Scalar var = (in.array() - mean).square().mean();
      const Scalar inv = Scalar(1) / std::sqrt(var + kEps);
      cache.inv_std(g, b) = inv;
      cache.normalized.block(Eigen::Index(g) * per, b * hw, per, hw) = (in.array() - mean) * inv;
    }
  FeatureMap<Scalar> y = x;
  y.data = (cache.normalized.array().colwise() * params_[norm.scale].value.col(0).array()).colwise() +
           params_[norm.shift].value.col(0).array();
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> Encoder<Scalar>::norm_backward(const Norm& norm, const NormCache<Scalar>& cache,
                                                  const FeatureMap<Scalar>& dy,
                                                  std::vector<Matrix<Scalar>>& grads) const {
  if (norm.groups == 0) return dy;
  grads[norm.scale] += dy.data.cwiseProduct(cache.normalized).rowwise().sum();
  grads[norm.shift] += dy.data.rowwise().sum();
  const int per = norm.channels / norm.groups;
  const Eigen::Index hw = dy.pixels();
  const Scalar n = Scalar(per * hw);
  FeatureMap<Scalar> dx = dy;
  dx.data = dy.data.array().colwise() * params_[norm.scale].value.col(0).array();  // dL/dx_hat
  for (int b = 0; b < dy.batch; ++b)
    for (int g = 0; g < norm.groups; ++g) {
      auto d = dx.data.block(Eigen::Index(g) * per, b * hw, per, hw);
      const auto xh = cache.normalized.block(Eigen::Index(g) * per, b * hw, per, hw);
      const Scalar sum_d = d.sum();
      const Scalar sum_dx = d.cwiseProduct(xh).sum();
      d = ((n * d.array() - sum_d - xh.array() * sum_dx) * (cache.inv_std(g, b) / n)).matrix();
    }
  return dx;
}

template <typename Scalar>
FeatureMap<Scalar> Encoder<Scalar>::conv_forward(const Conv& conv, const FeatureMap<Scalar>& x,
                                                 ConvCache<Scalar>& cache) const {
  require(x.channels() == conv.in, "conv: expected " + std::to_string(conv.in) + " input channels, got " +
                                       std::to_string(x.channels()));
  cache.in_channels = x.channels();
  cache.batch = x.batch;
  cache.in_h = x.height;
  cache.in_w = x.width;
  cache.col = im2col(x, conv.kernel, conv.stride, conv.pad);
  FeatureMap<Scalar> y;
  y.batch = x.batch;
  y.height = conv_output_size(x.height, conv.kernel, conv.stride, conv.pad);
  y.width = conv_output_size(x.width, conv.kernel, conv.stride, conv.pad);
  y.data.noalias() = params_[conv.weight].value * cache.col;
  y.data.colwise() += params_[conv.bias].value.col(0);
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> Encoder<Scalar>::conv_backward(const Conv& conv, const ConvCache<Scalar>& cache,
                                                  const FeatureMap<Scalar>& dy, std::vector<Matrix<Scalar>>& grads,
                                                  bool need_input_grad) const {
  grads[conv.weight].noalias() += dy.data * cache.col.transpose();
  grads[conv.bias] += dy.data.rowwise().sum();
  if (!need_input_grad) return {};
  const Matrix<Scalar> dcol = params_[conv.weight].value.transpose() * dy.data;
  return col2im(dcol, cache.in_channels, cache.batch, cache.in_h, cache.in_w, conv.kernel, conv.stride, conv.pad);
}

template <typename Scalar>
ForwardPass<Scalar> Encoder<Scalar>::forward(const FeatureMap<Scalar>& batch) const {
  require(batch.channels() == cfg_.input_channels,
          "encoder: input has " + std::to_string(batch.channels()) + " channels, encoder expects " +
              std::to_string(cfg_.input_channels));
  require(batch.batch >= 1, "encoder: empty batch");
  ForwardPass<Scalar> pass;
  pass.parameter_version = version_;
  FeatureMap<Scalar> x = conv_forward(stem_, batch, pass.stem);
  pass.blocks.resize(stacks_.size());
  for (std::size_t s = 0; s < stacks_.size(); ++s) {
    for (const Block& blk : stacks_[s]) {
      BlockCache<Scalar> cache;
      cache.pre_a = norm_forward(blk.na, x, cache.norm_a);
      const FeatureMap<Scalar> h1 = relu(cache.pre_a);
      cache.pre_b = norm_forward(blk.nb, conv_forward(blk.a, h1, cache.a), cache.norm_b);
      FeatureMap<Scalar> y = conv_forward(blk.b, relu(cache.pre_b), cache.b);
      if (blk.has_proj)
        y.data += conv_forward(blk.proj, h1, cache.proj).data;
      else
        y.data += x.data;
      pass.blocks[s].push_back(std::move(cache));
      x = std::move(y);
    }
    pass.stack_outputs.push_back(x);
  }
  return pass;
}

template <typename Scalar>
LayerRepresentation<Scalar> Encoder<Scalar>::taps(const ForwardPass<Scalar>& pass) const {
  LayerRepresentation<Scalar> rep;
  rep.layers = cfg_.loss_layers;
  for (int layer : cfg_.loss_layers) rep.z.push_back(pass.stack_outputs[std::size_t(layer)].flattened());
  return rep;
}

template <typename Scalar>
std::vector<Matrix<Scalar>> Encoder<Scalar>::backward(const ForwardPass<Scalar>& pass,
                                                      const std::vector<Matrix<Scalar>>& dz) const {
  require(dz.size() == cfg_.loss_layers.size(), "encoder backward: one gradient per tapped layer required");
  std::vector<Matrix<Scalar>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));

  const int deepest = cfg_.loss_layers.back();
  FeatureMap<Scalar> dx;
  for (int s = deepest; s >= 0; --s) {
    const FeatureMap<Scalar>& out = pass.stack_outputs[std::size_t(s)];
    if (s == deepest) dx = FeatureMap<Scalar>(out.channels(), out.batch, out.height, out.width);
    for (std::size_t i = 0; i < cfg_.loss_layers.size(); ++i) {
      if (cfg_.loss_layers[i] != s) continue;
      const auto& g = dz[i];
      require(g.rows() == out.batch && g.cols() == out.data.size() / out.batch,
              "encoder backward: gradient shape mismatch at layer " + std::to_string(s));
      dx.data += Eigen::Map<const Matrix<Scalar>>(Matrix<Scalar>(g.transpose()).data(), out.channels(),
                                                  out.data.cols());
    }
    for (int j = int(stacks_[std::size_t(s)].size()) - 1; j >= 0; --j) {
      const Block& blk = stacks_[std::size_t(s)][std::size_t(j)];
      const BlockCache<Scalar>& c = pass.blocks[std::size_t(s)][std::size_t(j)];
      FeatureMap<Scalar> d = conv_backward(blk.b, c.b, dx, grads, true);
      d.data = (c.pre_b.data.array() > Scalar(0)).select(d.data, Scalar(0));
      d = conv_backward(blk.a, c.a, norm_backward(blk.nb, c.norm_b, d, grads), grads, true);
      if (blk.has_proj) d.data += conv_backward(blk.proj, c.proj, dx, grads, true).data;
      d.data = (c.pre_a.data.array() > Scalar(0)).select(d.data, Scalar(0));
      d = norm_backward(blk.na, c.norm_a, d, grads);
      if (!blk.has_proj) d.data += dx.data;
      dx = std::move(d);
    }
  }
  conv_backward(stem_, pass.stem, dx, grads, false);
  return grads;
}

template <typename Scalar>
Matrix<Scalar> Encoder<Scalar>::pooled_representation(const FeatureMap<Scalar>& batch) const {
  return global_average_pool(forward(batch).stack_outputs.back());
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace csf
