#pragma once

#include "csf/eval.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace csf {

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 500;
  double learning_rate = 0.0;  // <= 0: N / early_exaggeration
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 100;
  std::uint64_t seed = 0;
};

/// Exact (O(N^2)) t-SNE of the rows of `x` into two dimensions.
Matrix<double> tsne_2d(const Matrix<double>& x, const TsneOptions& options = {});

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct LinePlot {
  std::string title, x_label, y_label;
  std::vector<std::string> x_ticks;  // one label per x position when non-empty
  std::vector<Series> series;
};

void write_line_plot_svg(const LinePlot& plot, const std::filesystem::path& path);

/// Class-colored scatter of 2-D points.
void write_scatter_svg(const Matrix<double>& points, const std::vector<int>& labels, const std::string& title,
                       const std::filesystem::path& path);

struct PlotFiles {
  std::filesystem::path embedding, channels, k_curve;
};

/// Writes embedding.svg (PCA then t-SNE), metric_vs_channels.svg and
/// metric_vs_k.svg under `out_dir`, creating it if needed. `k_curves` holds
/// one k-sweep per configuration, named by `k_curve_names`.
PlotFiles plot_artifacts(const EmbeddingTable& table, const SweepResult& sweep,
                         const std::vector<std::vector<KSweepRow>>& k_curves,
                         const std::vector<std::string>& k_curve_names, const std::filesystem::path& out_dir,
                         int pca_components = 200, std::uint64_t seed = 0);

}  // namespace csf
