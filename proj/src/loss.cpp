#include "csf/loss.hpp"

#include <algorithm>

namespace csf {

LossWeights LossWeights::defaults_for(const std::vector<int>& tapped_layers) {
  require(!tapped_layers.empty(), "LossWeights: no tapped layers");
  std::vector<int> sorted = tapped_layers;
  std::sort(sorted.begin(), sorted.end());
  LossWeights w;
  if (sorted.size() == 1) {
    w.lambda_by_layer[sorted[0]] = 1.0;
    return w;
  }
  for (int l : sorted) w.lambda_by_layer[l] = 0.0;
  w.lambda_by_layer[sorted[sorted.size() - 2]] = 1.0;
  w.lambda_by_layer[sorted.back()] = 2.0;
  return w;
}

void LossWeights::validate() const {
  bool positive = false;
  for (const auto& [layer, lambda] : lambda_by_layer) {
    require(lambda >= 0.0, "LossWeights: weight for layer " + std::to_string(layer) + " is negative");
    positive = positive || lambda > 0.0;
  }
  require(positive, "LossWeights: at least one weight must be positive");
}

double LossWeights::sum() const {
  double s = 0;
  for (const auto& [layer, lambda] : lambda_by_layer) s += lambda;
  return s;
}

}  // namespace csf
