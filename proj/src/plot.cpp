#include "csf/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace csf {

namespace fs = std::filesystem;

namespace {

// Conditional affinities p_{j|i} with the bandwidth found by bisection on the entropy.
Matrix<double> input_affinities(const Matrix<double>& x, double perplexity) {
  const Eigen::Index n = x.rows();
  const Vector<double> sq = x.rowwise().squaredNorm();
  Matrix<double> d2 = -2.0 * x * x.transpose();
  d2.colwise() += sq;
  d2.rowwise() += sq.transpose();
  d2 = d2.cwiseMax(0.0);

  const double target = std::log(perplexity);
  Matrix<double> p = Matrix<double>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    Vector<double> row(n);
    for (int iter = 0; iter < 64; ++iter) {
      double dmin = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != i) dmin = std::min(dmin, d2(i, j));
      double sum = 0, weighted = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        row(j) = j == i ? 0.0 : std::exp(-beta * (d2(i, j) - dmin));
        sum += row(j);
        weighted += row(j) * (d2(i, j) - dmin);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      row /= sum;
      if (std::abs(entropy - target) < 1e-5) break;
      if (entropy > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
    }
    p.row(i) = row.transpose();
  }
  return p;
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                          "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#ad494a"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

constexpr double kW = 640, kH = 480, kLeft = 70, kRight = 160, kTop = 40, kBottom = 60;

}  // namespace

Matrix<double> tsne_2d(const Matrix<double>& x, const TsneOptions& o) {
  const Eigen::Index n = x.rows();
  require(n >= 2, "tsne: need at least two points");
  require(o.perplexity > 0 && o.perplexity < double(n), "tsne: perplexity must be in (0, N)");
  Matrix<double> p = input_affinities(x, o.perplexity);
  p = (p + p.transpose()).eval() / (2.0 * double(n));
  p = p.cwiseMax(1e-12);

  const double lr = o.learning_rate > 0 ? o.learning_rate : std::max(1.0, double(n) / std::max(1.0, o.early_exaggeration));

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  Matrix<double> y(n, 2), velocity = Matrix<double>::Zero(n, 2), gains = Matrix<double>::Ones(n, 2);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = normal(rng);

  for (int it = 0; it < o.iterations; ++it) {
    const double exaggeration = it < o.exaggeration_iterations ? o.early_exaggeration : 1.0;
    const double momentum = it < 250 ? 0.5 : 0.8;
    const Vector<double> sq = y.rowwise().squaredNorm();
    Matrix<double> num = -2.0 * y * y.transpose();
    num.colwise() += sq;
    num.rowwise() += sq.transpose();
    num = (1.0 + num.array()).inverse().matrix();
    num.diagonal().setZero();
    const Matrix<double> q = (num / num.sum()).cwiseMax(1e-12);
    const Matrix<double> w = ((exaggeration * p - q).array() * num.array()).matrix();
    // dC/dy_i = 4 * sum_j w_ij (y_i - y_j)
    const Matrix<double> grad = 4.0 * (w.rowwise().sum().asDiagonal() * y - w * y);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      double& g = gains.data()[i];
      const bool same_sign = (grad.data()[i] > 0) == (velocity.data()[i] > 0);
      g = std::max(0.01, same_sign ? g * 0.8 : g + 0.2);
      velocity.data()[i] = momentum * velocity.data()[i] - lr * g * grad.data()[i];
    }
    y += velocity;
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

void write_line_plot_svg(const LinePlot& plot, const fs::path& path) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : plot.series) {
    require(s.x.size() == s.y.size(), "line plot: series '" + s.name + "' has mismatched x and y");
    for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    for (double v : s.y) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  ymin = std::min(ymin, 0.0), ymax = std::max(ymax, 1.0);
  if (xmax == xmin) xmax = xmin + 1;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (v - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double v) { return kTop + (1 - (v - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(plot.title)
    << "</text>\n";
  o << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = ymin + (ymax - ymin) * t / 5.0;
    o << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << tick(v) << "</text>\n";
  }
  if (!plot.x_ticks.empty()) {
    for (std::size_t i = 0; i < plot.x_ticks.size(); ++i)
      o << "<text class=\"xtick\" x=\"" << px(double(i)) << "\" y=\"" << kTop + ph + 18
        << "\" text-anchor=\"middle\">" << escape(plot.x_ticks[i]) << "</text>\n";
  } else {
    for (int t = 0; t <= 5; ++t) {
      const double v = xmin + (xmax - xmin) * t / 5.0;
      o << "<text class=\"xtick\" x=\"" << px(v) << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">"
        << tick(v) << "</text>\n";
    }
  }
  o << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 15 << "\" text-anchor=\"middle\">"
    << escape(plot.x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(plot.y_label) << "</text>\n";
  for (std::size_t s = 0; s < plot.series.size(); ++s) {
    const auto& series = plot.series[s];
    const char* color = kPalette[s % std::size(kPalette)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series.x.size(); ++i) o << px(series.x[i]) << ',' << py(series.y[i]) << ' ';
    o << "\"/>\n";
    for (std::size_t i = 0; i < series.x.size(); ++i)
      o << "<circle cx=\"" << px(series.x[i]) << "\" cy=\"" << py(series.y[i]) << "\" r=\"3\" fill=\"" << color
        << "\"/>\n";
    const double ly = kTop + 10 + 18 * double(s);
    o << "<line x1=\"" << kW - kRight + 10 << "\" y1=\"" << ly << "\" x2=\"" << kW - kRight + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n<text x=\"" << kW - kRight + 35 << "\" y=\""
      << ly + 4 << "\">" << escape(series.name) << "</text>\n";
  }
  o << "</svg>\n";
  write_file(path, o.str());
}

void write_scatter_svg(const Matrix<double>& points, const std::vector<int>& labels, const std::string& title,
                       const fs::path& path) {
  require(points.cols() == 2 && points.rows() == Eigen::Index(labels.size()),
          "scatter: expected [N, 2] points with one label each");
  const double side = 560, margin = 30;
  const Eigen::RowVector2d lo = points.colwise().minCoeff(), hi = points.colwise().maxCoeff();
  const double span = std::max({hi(0) - lo(0), hi(1) - lo(1), 1e-12});
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << side + 2 * margin + 110 << "\" height=\""
    << side + 2 * margin << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"" << margin << "\" y=\"20\">"
    << escape(title) << "</text>\n";
  int max_label = 0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int l = labels[std::size_t(i)];
    max_label = std::max(max_label, l);
    o << "<circle cx=\"" << margin + (points(i, 0) - lo(0)) / span * side << "\" cy=\""
      << margin + (points(i, 1) - lo(1)) / span * side << "\" r=\"2.5\" fill=\""
      << kPalette[std::size_t(l) % std::size(kPalette)] << "\"/>\n";
  }
  for (int l = 0; l <= max_label; ++l)
    o << "<circle cx=\"" << side + 2 * margin + 10 << "\" cy=\"" << margin + 18 * l << "\" r=\"5\" fill=\""
      << kPalette[std::size_t(l) % std::size(kPalette)] << "\"/><text x=\"" << side + 2 * margin + 20 << "\" y=\""
      << margin + 18 * l + 4 << "\">class " << l << "</text>\n";
  o << "</svg>\n";
  write_file(path, o.str());
}

PlotFiles plot_artifacts(const EmbeddingTable& table, const SweepResult& sweep,
                         const std::vector<std::vector<KSweepRow>>& k_curves,
                         const std::vector<std::string>& k_curve_names, const fs::path& out_dir, int pca_components,
                         std::uint64_t seed) {
  require(k_curves.size() == k_curve_names.size(), "plot_artifacts: one name per k curve required");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  PlotFiles files{out_dir / "embedding.svg", out_dir / "metric_vs_channels.svg", out_dir / "metric_vs_k.svg"};

  const int n = int(std::min<Eigen::Index>(pca_components, std::min(table.size(), table.vectors.cols())));
  const EmbeddingTable reduced = pca_reduce(table, n);
  TsneOptions opt;
  opt.seed = seed;
  opt.perplexity = std::min(30.0, std::max(1.0, (double(table.size()) - 1) / 3.0));
  write_scatter_svg(tsne_2d(reduced.vectors, opt), table.labels, "PCA + t-SNE embedding", files.embedding);

  LinePlot channels{"Clustering quality vs. input channels", "channels", "score", {}, {}};
  Series nf{"neighbor fraction", {}, {}}, acc{"k-NN accuracy", {}, {}};
  for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
    channels.x_ticks.push_back(std::to_string(sweep.rows[i].channels.size()));
    nf.x.push_back(double(i)), nf.y.push_back(sweep.rows[i].neighbor_fraction);
    acc.x.push_back(double(i)), acc.y.push_back(sweep.rows[i].knn_accuracy);
  }
  channels.series = {nf, acc};
  write_line_plot_svg(channels, files.channels);

  LinePlot kplot{"Neighbor fraction vs. k", "k", "neighbor fraction", {}, {}};
  for (std::size_t c = 0; c < k_curves.size(); ++c) {
    Series s{k_curve_names[c], {}, {}};
    for (const auto& r : k_curves[c]) s.x.push_back(r.k), s.y.push_back(r.neighbor_fraction);
    kplot.series.push_back(std::move(s));
  }
  write_line_plot_svg(kplot, files.k_curve);
  return files;
}

}  // namespace csf
