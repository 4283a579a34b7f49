#include "csf/eval.hpp"

#include "csf/views.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace csf {

void EmbeddingTable::validate() const {
  require(vectors.rows() == Eigen::Index(labels.size()), "EmbeddingTable: one label per vector required");
  require(scene_ids.empty() || scene_ids.size() == labels.size(), "EmbeddingTable: one scene id per vector required");
  require(num_classes >= 1, "EmbeddingTable: num_classes must be >= 1");
  for (int l : labels) require(l >= 0 && l < num_classes, "EmbeddingTable: label out of range");
  require(vectors.allFinite(), "EmbeddingTable: vectors must be finite");
}

EmbeddingTable embed_dataset(const Encoder<float>& encoder, const std::vector<Scene>& scenes, const SensorSuite& suite,
                             const std::set<int>& channel_subset, double train_p, int num_classes, int batch_size) {
  require(!channel_subset.empty(), "embed_dataset: channel subset must be non-empty");
  require(batch_size >= 1, "embed_dataset: batch_size must be >= 1");
  EmbeddingTable t;
  t.channel_subset = channel_subset;
  t.num_classes = num_classes;
  const Eigen::Index width = encoder.config().stack_widths.back();
  t.vectors.resize(Eigen::Index(scenes.size()), width);

  for (std::size_t start = 0; start < scenes.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(scenes.size(), start + std::size_t(batch_size));
    std::vector<View> views;
    for (std::size_t i = start; i < end; ++i) {
      const Scene& s = scenes[i];
      views.push_back(inference_view(fuse_and_upsample(s, suite), channel_subset, train_p, s.scene_id));
      t.labels.push_back(s.class_label);
      t.scene_ids.push_back(s.scene_id);
    }
    FeatureMap<float> batch(views.front().data.channels(), int(views.size()), views.front().data.height,
                            views.front().data.width);
    for (std::size_t i = 0; i < views.size(); ++i) {
      require(views[i].data.height == batch.height && views[i].data.width == batch.width,
              "embed_dataset: scenes must share one size");
      batch.element(int(i)) = views[i].data.data;
    }
    t.vectors.middleRows(Eigen::Index(start), Eigen::Index(end - start)) =
        encoder.pooled_representation(batch).cast<double>();
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// PCA

Matrix<double> Pca::transform(const Matrix<double>& x) const {
  require(fitted(), "pca: not fitted");
  require(x.cols() == input_dim(), "pca: expected " + std::to_string(input_dim()) + " input dimensions, got " +
                                       std::to_string(x.cols()));
  return (x.rowwise() - mean.transpose()) * components;
}

Pca fit_pca(const Matrix<double>& x, int n_components) {
  const Eigen::Index n = x.rows(), d = x.cols();
  require(n >= 1 && d >= 1, "pca: empty data");
  require(n_components >= 1 && n_components <= std::min(n, d),
          "pca: n_components must be in [1, min(N, D)] = [1, " + std::to_string(std::min(n, d)) + "], got " +
              std::to_string(n_components));
  Pca p;
  p.mean = x.colwise().mean().transpose();
  const Matrix<double> centered = x.rowwise() - p.mean.transpose();
  Eigen::BDCSVD<Matrix<double>> svd(centered, Eigen::ComputeThinV);
  p.components = svd.matrixV().leftCols(n_components);
  const double denom = n > 1 ? double(n - 1) : 1.0;
  p.explained_variance = svd.singularValues().head(n_components).array().square() / denom;
  for (Eigen::Index c = 0; c < p.components.cols(); ++c) {
    Eigen::Index arg = 0;
    p.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (p.components(arg, c) < 0) p.components.col(c) *= -1.0;
  }
  return p;
}

EmbeddingTable pca_reduce(const EmbeddingTable& table, int n_components, Pca* fitted) {
  Pca p = fit_pca(table.vectors, n_components);
  EmbeddingTable out = table;
  out.vectors = p.transform(table.vectors);
  if (fitted) *fitted = std::move(p);
  return out;
}

// ---------------------------------------------------------------------------
// Neighbor metrics

Neighbors nearest_neighbors(const Matrix<double>& x, int k) {
  const Eigen::Index n = x.rows();
  require(k >= 1 && k < n, "k must be in [1, N), got k=" + std::to_string(k) + " with N=" + std::to_string(n));
  const Vector<double> sq = x.rowwise().squaredNorm();
  Matrix<double> d2 = -2.0 * x * x.transpose();
  d2.colwise() += sq;
  d2.rowwise() += sq.transpose();

  Neighbors nn;
  nn.index.resize(n, k);
  nn.distance.resize(n, k);
  std::vector<Eigen::Index> order(std::size_t(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) order[m++] = j;
    auto closer = [&](Eigen::Index a, Eigen::Index b) {
      const double da = std::max(0.0, d2(i, a)), db = std::max(0.0, d2(i, b));
      return da < db || (da == db && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + k, order.end(), closer);
    for (int r = 0; r < k; ++r) {
      nn.index(i, r) = order[std::size_t(r)];
      nn.distance(i, r) = std::sqrt(std::max(0.0, d2(i, order[std::size_t(r)])));
    }
  }
  return nn;
}

double neighbor_fraction(const Neighbors& nn, const std::vector<int>& labels) {
  require(nn.index.rows() == Eigen::Index(labels.size()), "neighbor_fraction: label count mismatch");
  double total = 0;
  for (Eigen::Index i = 0; i < nn.index.rows(); ++i) {
    int same = 0;
    for (Eigen::Index r = 0; r < nn.index.cols(); ++r) same += labels[std::size_t(nn.index(i, r))] == labels[std::size_t(i)];
    total += double(same) / double(nn.index.cols());
  }
  return total / double(nn.index.rows());
}

double knn_loocv_accuracy(const Neighbors& nn, const std::vector<int>& labels) {
  require(nn.index.rows() == Eigen::Index(labels.size()), "knn_loocv_accuracy: label count mismatch");
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < nn.index.rows(); ++i) {
    std::map<int, std::pair<int, double>> votes;  // class -> (count, summed distance)
    for (Eigen::Index r = 0; r < nn.index.cols(); ++r) {
      auto& v = votes[labels[std::size_t(nn.index(i, r))]];
      ++v.first;
      v.second += nn.distance(i, r);
    }
    int best = -1;
    std::pair<int, double> best_vote{0, 0.0};
    for (const auto& [cls, v] : votes) {  // ascending class index
      if (best < 0 || v.first > best_vote.first || (v.first == best_vote.first && v.second < best_vote.second)) {
        best = cls;
        best_vote = v;
      }
    }
    correct += best == labels[std::size_t(i)];
  }
  return double(correct) / double(nn.index.rows());
}

double neighbor_fraction(const EmbeddingTable& table, int k) {
  table.validate();
  return neighbor_fraction(nearest_neighbors(table.vectors, k), table.labels);
}

double knn_loocv_accuracy(const EmbeddingTable& table, int k) {
  table.validate();
  return knn_loocv_accuracy(nearest_neighbors(table.vectors, k), table.labels);
}

// ---------------------------------------------------------------------------
// Sweeps

void SweepResult::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  out << "channels,num_channels,neighbor_fraction,knn_accuracy\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%zu,%.6f,%.6f\n", r.channels.size(), r.neighbor_fraction, r.knn_accuracy);
    out << '"' << r.description << '"' << buf;
  }
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<std::set<int>> default_subset_ladder(const SensorSuite& suite) {
  std::vector<int> order(std::size_t(suite.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return suite.sensors()[std::size_t(a)].resolution_factor > suite.sensors()[std::size_t(b)].resolution_factor;
  });
  std::vector<std::set<int>> ladder;
  std::set<int> current;
  const auto [first, last] = suite.channel_range(order.front());
  for (int c = first; c < last; ++c) {
    current.insert(c);
    if (c - first < 3 || c + 1 == last) ladder.push_back(current);
  }
  for (std::size_t i = 1; i < order.size(); ++i) {
    const auto [lo, hi] = suite.channel_range(order[i]);
    for (int c = lo; c < hi; ++c) current.insert(c);
    ladder.push_back(current);
  }
  return ladder;
}

std::vector<std::set<int>> single_sensor_subsets(const SensorSuite& suite) {
  std::vector<std::set<int>> out;
  for (int i = 0; i < suite.size(); ++i) {
    const auto [lo, hi] = suite.channel_range(i);
    std::set<int> s;
    for (int c = lo; c < hi; ++c) s.insert(c);
    out.push_back(std::move(s));
  }
  return out;
}

std::string describe_subset(const std::set<int>& channels) {
  std::string s;
  for (int c : channels) s += (s.empty() ? "" : " ") + std::to_string(c);
  return s;
}

SweepResult channel_sweep(const Encoder<float>& encoder, const std::vector<Scene>& scenes, const SensorSuite& suite,
                          const std::vector<std::set<int>>& subsets, const SweepOptions& options,
                          std::vector<EmbeddingTable>* reduced_tables) {
  require(!subsets.empty(), "channel_sweep: no subsets");
  SweepResult result;
  for (const auto& subset : subsets) {
    const EmbeddingTable raw =
        embed_dataset(encoder, scenes, suite, subset, options.train_p, options.num_classes, options.batch_size);
    const int n = int(std::min<Eigen::Index>(options.pca_components, std::min(raw.size(), raw.vectors.cols())));
    const EmbeddingTable reduced = pca_reduce(raw, n);
    const Neighbors nn = nearest_neighbors(reduced.vectors, options.k);
    result.rows.push_back({describe_subset(subset), subset, neighbor_fraction(nn, reduced.labels),
                           knn_loocv_accuracy(nn, reduced.labels)});
    if (reduced_tables) reduced_tables->push_back(reduced);
  }
  return result;
}

std::vector<KSweepRow> k_sweep(const EmbeddingTable& table, int max_k) {
  table.validate();
  const Neighbors all = nearest_neighbors(table.vectors, max_k);
  std::vector<KSweepRow> rows;
  for (int k = 1; k <= max_k; ++k) {
    Neighbors nn;
    nn.index = all.index.leftCols(k);
    nn.distance = all.distance.leftCols(k);
    rows.push_back({k, neighbor_fraction(nn, table.labels), knn_loocv_accuracy(nn, table.labels)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Maximal activations

std::vector<Eigen::Index> top_indices(const Vector<double>& scores, int top_n) {
  require(top_n >= 1 && top_n <= scores.size(), "top_n must be in [1, N]");
  std::vector<Eigen::Index> order(std::size_t(scores.size()));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::partial_sort(order.begin(), order.begin() + top_n, order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return scores(a) > scores(b) || (scores(a) == scores(b) && a < b);
  });
  order.resize(std::size_t(top_n));
  return order;
}

std::vector<std::vector<std::string>> maximal_activations(const Encoder<float>& encoder,
                                                          const std::vector<Scene>& scenes, const SensorSuite& suite,
                                                          const Pca& pca, int component_index,
                                                          const std::vector<std::set<int>>& subsets, int top_n,
                                                          double train_p, int batch_size) {
  require(pca.fitted(), "maximal_activations: PCA is not fitted");
  require(component_index >= 0 && component_index < pca.output_dim(),
          "maximal_activations: component_index " + std::to_string(component_index) + " outside [0, " +
              std::to_string(pca.output_dim()) + ")");
  std::vector<std::vector<std::string>> lists;
  for (const auto& subset : subsets) {
    const EmbeddingTable t = embed_dataset(encoder, scenes, suite, subset, train_p, kMaxClasses, batch_size);
    const Vector<double> scores = pca.transform(t.vectors).col(component_index);
    std::vector<std::string> ids;
    for (Eigen::Index i : top_indices(scores, top_n)) ids.push_back(t.scene_ids[std::size_t(i)]);
    lists.push_back(std::move(ids));
  }
  return lists;
}

namespace {

std::size_t pairwise_overlap(const std::vector<std::vector<std::string>>& lists) {
  std::size_t total = 0;
  for (std::size_t a = 0; a < lists.size(); ++a)
    for (std::size_t b = a + 1; b < lists.size(); ++b) {
      std::set<std::string> sa(lists[a].begin(), lists[a].end());
      for (const auto& id : std::set<std::string>(lists[b].begin(), lists[b].end())) total += sa.count(id);
    }
  return total;
}

}  // namespace

OverlapTest overlap_permutation_test(const std::vector<std::vector<std::string>>& lists, std::size_t population,
                                     int permutations, std::uint64_t seed) {
  require(lists.size() >= 2, "overlap test: need at least two lists");
  require(permutations >= 1, "overlap test: permutations must be >= 1");
  for (const auto& l : lists) require(l.size() <= population, "overlap test: list longer than the population");
  OverlapTest t;
  t.observed = double(pairwise_overlap(lists));
  std::mt19937_64 rng(seed);
  std::vector<std::string> ids(population);
  for (std::size_t i = 0; i < population; ++i) ids[i] = std::to_string(i);
  int at_least = 0;
  double sum = 0;
  for (int r = 0; r < permutations; ++r) {
    std::vector<std::vector<std::string>> drawn;
    for (const auto& l : lists) {
      std::shuffle(ids.begin(), ids.end(), rng);
      drawn.emplace_back(ids.begin(), ids.begin() + std::ptrdiff_t(l.size()));
    }
    const double s = double(pairwise_overlap(drawn));
    sum += s;
    at_least += s >= t.observed;
  }
  t.null_mean = sum / permutations;
  t.p_value = double(1 + at_least) / double(1 + permutations);
  return t;
}

}  // namespace csf
