#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "s2s/units.hpp"

namespace s2s {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Frame-level feature vectors for one utterance, n_frames x dim.
struct FeatureSequence {
  std::string id;
  RowMatrixF frames;

  std::size_t n_frames() const { return static_cast<std::size_t>(frames.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(frames.cols()); }
};

enum class Distance { l2, cosine };

Distance parse_distance(const std::string& s);
std::string to_string(Distance d);

struct Codebook {
  RowMatrixD centroids;  // k x dim
  Distance distance = Distance::l2;
  std::uint64_t seed = 0;

  std::size_t k() const { return static_cast<std::size_t>(centroids.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(centroids.cols()); }

  // Throws ValidationError on non-finite values or, for cosine, zero-norm rows.
  void validate() const;
};

struct KMeansOptions {
  std::size_t k = 50;
  Distance distance = Distance::l2;
  std::size_t max_iters = 50;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

struct KMeansResult {
  Codebook codebook;
  // Objective after the initial assignment and after every Lloyd update.
  std::vector<double> inertia;
  std::size_t iterations = 0;
};

// k-means++ seeding followed by Lloyd iterations. For cosine, frames are
// compared by 1 - cosine similarity and centroids are the mean of the
// unit-normalised member frames. Results are identical for every thread count.
KMeansResult kmeans_fit(std::span<const FeatureSequence> features, const KMeansOptions& opts);

// Indices of the k-means++ initial centres for the given frames (n x dim).
std::vector<std::size_t> kmeanspp_seed(const RowMatrixD& frames, std::size_t k, Distance distance,
                                       std::uint64_t seed);

// Nearest centroid for each frame; ties go to the lowest centroid index.
UnitSequence quantize(const FeatureSequence& seq, const Codebook& cb);

std::vector<FeatureSequence> read_feature_file(const std::filesystem::path& path);
void write_feature_file(std::span<const FeatureSequence> seqs, const std::filesystem::path& path);

Codebook read_codebook(const std::filesystem::path& path);
void write_codebook(const Codebook& cb, const std::filesystem::path& path);

}  // namespace s2s
