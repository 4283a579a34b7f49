#pragma once

#include "csf/encoder.hpp"
#include "csf/scenes.hpp"

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace csf {

/// One representation per scene, with the scene's class label.
struct EmbeddingTable {
  Matrix<double> vectors;  // [N, D]
  std::vector<int> labels;
  std::vector<std::string> scene_ids;
  std::set<int> channel_subset;
  int num_classes = 0;

  [[nodiscard]] Eigen::Index size() const { return vectors.rows(); }
  void validate() const;
};

/// Pooled representations of `scenes` seen through `channel_subset` (other
/// channels zeroed, survivors scaled by 1/(1-train_p)).
EmbeddingTable embed_dataset(const Encoder<float>& encoder, const std::vector<Scene>& scenes, const SensorSuite& suite,
                             const std::set<int>& channel_subset, double train_p, int num_classes,
                             int batch_size = 64);

/// Principal axes of a data matrix.
///
/// Components are the columns of `components`, ordered by decreasing
/// explained variance. Each component's sign is chosen so that its
/// largest-magnitude loading is positive (the lower index wins a tie).
struct Pca {
  Vector<double> mean;
  Matrix<double> components;  // [D, n]
  Vector<double> explained_variance;

  [[nodiscard]] bool fitted() const { return components.size() > 0; }
  [[nodiscard]] Eigen::Index input_dim() const { return components.rows(); }
  [[nodiscard]] Eigen::Index output_dim() const { return components.cols(); }
  /// Projects the rows of `x` ([M, D]) onto the components: [M, n].
  [[nodiscard]] Matrix<double> transform(const Matrix<double>& x) const;
};

Pca fit_pca(const Matrix<double>& x, int n_components);

EmbeddingTable pca_reduce(const EmbeddingTable& table, int n_components, Pca* fitted = nullptr);

/// k nearest other points of every row (Euclidean), nearer first; equal
/// distances are ordered by index.
struct Neighbors {
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> index;  // [N, k]
  Matrix<double> distance;                                             // [N, k]
};

Neighbors nearest_neighbors(const Matrix<double>& x, int k);

double neighbor_fraction(const EmbeddingTable& table, int k);
double neighbor_fraction(const Neighbors& nn, const std::vector<int>& labels);

/// Leave-one-out k-NN accuracy. Majority vote among the k nearest other
/// points; tied classes go to the smallest summed distance, then the lowest
/// class index.
double knn_loocv_accuracy(const EmbeddingTable& table, int k);
double knn_loocv_accuracy(const Neighbors& nn, const std::vector<int>& labels);

struct SweepRow {
  std::string description;
  std::set<int> channels;
  double neighbor_fraction = 0;
  double knn_accuracy = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  void write_csv(const std::filesystem::path& path) const;
};

/// Channel ladder: growing band prefixes of the coarsest sensor, then whole
/// sensors added from coarsest to finest. For the default 3x4 suite this is
/// {0}, {0,1}, {0,1,2}, {0..3}, {0..7}, {0..11}.
std::vector<std::set<int>> default_subset_ladder(const SensorSuite& suite);

/// Per-sensor channel sets, in suite order.
std::vector<std::set<int>> single_sensor_subsets(const SensorSuite& suite);

std::string describe_subset(const std::set<int>& channels);

struct SweepOptions {
  int k = 10;
  int pca_components = 128;
  double train_p = 0.66;
  int batch_size = 64;
  int num_classes = 12;
};

/// One row per subset: embed, PCA-reduce, then both metrics. The reduced
/// tables are handed back through `reduced` when it is non-null.
SweepResult channel_sweep(const Encoder<float>& encoder, const std::vector<Scene>& scenes, const SensorSuite& suite,
                          const std::vector<std::set<int>>& subsets, const SweepOptions& options,
                          std::vector<EmbeddingTable>* reduced = nullptr);

struct KSweepRow {
  int k = 0;
  double neighbor_fraction = 0;
  double knn_accuracy = 0;
};

/// Both metrics for k = 1..max_k on one table.
std::vector<KSweepRow> k_sweep(const EmbeddingTable& table, int max_k);

/// Top `top_n` scene ids by projection onto principal component
/// `component_index`, one list per channel subset.
std::vector<std::vector<std::string>> maximal_activations(const Encoder<float>& encoder,
                                                          const std::vector<Scene>& scenes, const SensorSuite& suite,
                                                          const Pca& pca, int component_index,
                                                          const std::vector<std::set<int>>& subsets, int top_n,
                                                          double train_p, int batch_size = 64);

/// Ranking of `scores` (descending, ties by index) truncated to `top_n`.
std::vector<Eigen::Index> top_indices(const Vector<double>& scores, int top_n);

struct OverlapTest {
  double observed = 0;   // summed pairwise intersection size
  double null_mean = 0;  // mean of the same statistic under the null
  double p_value = 1;    // (1 + #null >= observed) / (1 + permutations)
};

/// Compares the pairwise overlap of ranked lists against lists drawn
/// uniformly at random without replacement from `population` items.
OverlapTest overlap_permutation_test(const std::vector<std::vector<std::string>>& lists, std::size_t population,
                                     int permutations, std::uint64_t seed);

}  // namespace csf
