#pragma once

// Diversity-driven frame selection: PCA embedding of 32x32 thumbnails and
// greedy farthest-point (k-center) selection over the embeddings.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "woundseg/core/error.hpp"
#include "woundseg/core/image.hpp"

namespace woundseg::select {

inline constexpr int kThumbSize = 32;
inline constexpr int kDefaultDims = 16;

// Box-average downsampling onto a size x size grid.
inline std::vector<double> thumbnail(const Frame& f, int size = kThumbSize) {
  std::vector<double> sum(static_cast<std::size_t>(size) * size, 0.0);
  std::vector<int> cnt(sum.size(), 0);
  for (int y = 0; y < f.height(); ++y) {
    const int ty = std::min(size - 1, y * size / f.height());
    for (int x = 0; x < f.width(); ++x) {
      const int tx = std::min(size - 1, x * size / f.width());
      sum[static_cast<std::size_t>(ty) * size + tx] += f.at(x, y);
      ++cnt[static_cast<std::size_t>(ty) * size + tx];
    }
  }
  // Frames smaller than the grid leave cells empty; fill from nearest row/col source.
  for (int ty = 0; ty < size; ++ty)
    for (int tx = 0; tx < size; ++tx) {
      const std::size_t i = static_cast<std::size_t>(ty) * size + tx;
      if (cnt[i]) {
        sum[i] /= cnt[i];
      } else {
        const int sx = std::min(f.width() - 1, tx * f.width() / size);
        const int sy = std::min(f.height() - 1, ty * f.height() / size);
        sum[i] = f.at(sx, sy);
      }
    }
  return sum;
}

struct PcaModel {
  Eigen::VectorXd mean;        // D
  Eigen::MatrixXd components;  // d x D, orthonormal rows (zero rows past the rank)
  Eigen::MatrixXd scores;      // n x d
  Eigen::VectorXd variances;   // d, eigenvalues of X^T X (descending)
};

// Top-d principal components of the rows of `data` (n x D) after
// mean-centering. Each component's sign is fixed so its largest-magnitude
// score is positive.
inline PcaModel fit_pca(const Eigen::MatrixXd& data, int dims) {
  const Eigen::Index n = data.rows(), D = data.cols();
  if (dims < 1) throw ValueError("fit_pca: dims must be >= 1");
  PcaModel m;
  m.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd x = data.rowwise() - m.mean.transpose();
  m.components = Eigen::MatrixXd::Zero(dims, D);
  m.scores = Eigen::MatrixXd::Zero(n, dims);
  m.variances = Eigen::VectorXd::Zero(dims);

  // Eigen-decompose the smaller of the Gram and scatter matrices.
  const bool gram = n <= D;
  const Eigen::MatrixXd s = gram ? Eigen::MatrixXd(x * x.transpose()) : Eigen::MatrixXd(x.transpose() * x);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.info() != Eigen::Success) throw Error("fit_pca: eigendecomposition failed");
  const Eigen::VectorXd& vals = eig.eigenvalues();  // ascending
  const double top = vals.size() ? std::max(0.0, vals(vals.size() - 1)) : 0.0;
  const double floor = std::max(1e-12, top * 1e-10);
  for (int k = 0; k < dims && k < vals.size(); ++k) {
    const Eigen::Index col = vals.size() - 1 - k;
    const double lambda = vals(col);
    if (lambda <= floor) break;
    Eigen::VectorXd dir = gram ? Eigen::VectorXd(x.transpose() * eig.eigenvectors().col(col) / std::sqrt(lambda))
                               : Eigen::VectorXd(eig.eigenvectors().col(col));
    dir.normalize();
    Eigen::VectorXd sc = x * dir;
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < sc.size(); ++i)
      if (std::abs(sc(i)) > std::abs(sc(arg)) + 1e-12) arg = i;
    if (sc(arg) < 0) {
      dir = -dir;
      sc = -sc;
    }
    m.components.row(k) = dir.transpose();
    m.scores.col(k) = sc;
    m.variances(k) = lambda;
  }
  return m;
}

struct FrameEmbedding {
  std::size_t frame_index = 0;
  std::vector<double> vector;
};

struct EmbeddingResult {
  std::vector<FrameEmbedding> embeddings;
  // All thumbnails identical: every embedding is zero.
  bool zero_variance = false;
};

inline Eigen::MatrixXd thumbnail_matrix(std::span<const Frame> frames) {
  Eigen::MatrixXd data(static_cast<Eigen::Index>(frames.size()), kThumbSize * kThumbSize);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto t = thumbnail(frames[i]);
    for (std::size_t j = 0; j < t.size(); ++j)
      data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t[j];
  }
  return data;
}

inline EmbeddingResult embed_frames(std::span<const Frame> frames, int dims = kDefaultDims) {
  if (frames.size() < 2) throw ValueError("embed_frames: need at least 2 frames");
  const PcaModel pca = fit_pca(thumbnail_matrix(frames), dims);
  EmbeddingResult r;
  r.zero_variance = pca.variances(0) == 0.0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    FrameEmbedding e{i, std::vector<double>(static_cast<std::size_t>(dims))};
    for (int k = 0; k < dims; ++k) e.vector[k] = pca.scores(static_cast<Eigen::Index>(i), k);
    r.embeddings.push_back(std::move(e));
  }
  return r;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Greedy farthest-point selection. Starts at the point farthest from the
// centroid, then repeatedly adds the point with the largest distance to its
// nearest selected point. Ties go to the lowest index. Returns indices in
// selection order.
inline std::vector<std::size_t> k_center_select(std::span<const std::vector<double>> points, std::size_t k) {
  const std::size_t n = points.size();
  if (k < 1) throw ValueError("k_center_select: k must be >= 1");
  if (k > n) throw ValueError("k_center_select: k exceeds the number of points");
  const std::size_t d = points[0].size();
  for (const auto& p : points)
    if (p.size() != d) throw ShapeError("k_center_select: embeddings differ in dimension");
  std::vector<double> centroid(d, 0.0);
  for (const auto& p : points)
    for (std::size_t j = 0; j < d; ++j) centroid[j] += p[j] / static_cast<double>(n);

  std::vector<std::size_t> chosen;
  std::vector<bool> taken(n, false);
  std::size_t first = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dist = squared_distance(points[i], centroid);
    if (dist > best) {
      best = dist;
      first = i;
    }
  }
  chosen.push_back(first);
  taken[first] = true;
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (chosen.size() < k) {
    const auto& last = points[chosen.back()];
    std::size_t arg = n;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      nearest[i] = std::min(nearest[i], squared_distance(points[i], last));
      if (nearest[i] > far) {
        far = nearest[i];
        arg = i;
      }
    }
    chosen.push_back(arg);
    taken[arg] = true;
  }
  return chosen;
}

inline std::vector<std::size_t> k_center_select(std::span<const FrameEmbedding> embeddings, std::size_t k) {
  std::vector<std::vector<double>> pts;
  pts.reserve(embeddings.size());
  for (const auto& e : embeddings) pts.push_back(e.vector);
  return k_center_select(std::span<const std::vector<double>>(pts), k);
}

}  // namespace woundseg::select
