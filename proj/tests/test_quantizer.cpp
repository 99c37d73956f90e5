#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "s2s/error.hpp"
#include "s2s/quantizer.hpp"

using namespace s2s;

namespace {

FeatureSequence make_seq(const std::string& id, std::vector<std::vector<float>> rows) {
  FeatureSequence s;
  s.id = id;
  s.frames.resize(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) s.frames(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return s;
}

std::vector<FeatureSequence> random_dataset(std::mt19937_64& rng, std::size_t n_seq, std::size_t dim) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<FeatureSequence> out;
  for (std::size_t i = 0; i < n_seq; ++i) {
    FeatureSequence s;
    s.id = "u" + std::to_string(i);
    s.frames.resize(static_cast<Eigen::Index>(5 + rng() % 20), static_cast<Eigen::Index>(dim));
    for (Eigen::Index r = 0; r < s.frames.rows(); ++r)
      for (Eigen::Index c = 0; c < s.frames.cols(); ++c) s.frames(r, c) = nd(rng) + static_cast<float>(r % 3) * 2.0f;
    out.push_back(std::move(s));
  }
  return out;
}

// Exhaustive minimum of the l2 inertia over all 2-partitions.
double best_two_partition(const std::vector<std::vector<double>>& pts) {
  const std::size_t n = pts.size();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask + 1 < (1u << n); ++mask) {
    double total = 0.0;
    for (int side = 0; side < 2; ++side) {
      std::vector<double> mean(pts[0].size(), 0.0);
      int cnt = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (((mask >> i) & 1u) == static_cast<unsigned>(side)) {
          for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += pts[i][d];
          ++cnt;
        }
      for (auto& m : mean) m /= cnt;
      for (std::size_t i = 0; i < n; ++i)
        if (((mask >> i) & 1u) == static_cast<unsigned>(side))
          for (std::size_t d = 0; d < mean.size(); ++d) total += (pts[i][d] - mean[d]) * (pts[i][d] - mean[d]);
    }
    best = std::min(best, total);
  }
  return best;
}

}  // namespace

TEST_CASE("four points two clusters") {
  const std::vector<FeatureSequence> data{make_seq("a", {{0, 0}, {0, 0.1f}, {10, 10}, {10, 10.1f}})};
  const std::vector<std::vector<double>> pts{{0, 0}, {0, 0.1f}, {10, 10}, {10, 10.1f}};
  const double oracle = best_two_partition(pts);
  CHECK(oracle == doctest::Approx(0.01).epsilon(1e-6));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    KMeansOptions opts;
    opts.k = 2;
    opts.seed = seed;
    const auto res = kmeans_fit(data, opts);
    CHECK(res.inertia.back() == doctest::Approx(oracle).epsilon(1e-6));
    const auto u = quantize(data[0], res.codebook);
    CHECK(u[0] == u[1]);
    CHECK(u[2] == u[3]);
    CHECK(u[0] != u[2]);
  }
}

TEST_CASE("inertia trace is non-increasing") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const auto data = random_dataset(rng, 4, 3);
    KMeansOptions opts;
    opts.k = 2 + rng() % 6;
    opts.seed = rng();
    opts.distance = trial % 2 ? Distance::cosine : Distance::l2;
    const auto res = kmeans_fit(data, opts);
    REQUIRE(!res.inertia.empty());
    for (std::size_t i = 1; i < res.inertia.size(); ++i) CHECK(res.inertia[i] <= res.inertia[i - 1] + 1e-9);
  }
}

TEST_CASE("kmeans is identical across thread counts") {
  std::mt19937_64 rng(5);
  const auto data = random_dataset(rng, 30, 8);
  for (Distance d : {Distance::l2, Distance::cosine}) {
    KMeansOptions opts;
    opts.k = 12;
    opts.seed = 99;
    opts.distance = d;
    opts.threads = 1;
    const auto one = kmeans_fit(data, opts);
    opts.threads = 4;
    const auto four = kmeans_fit(data, opts);
    CHECK(one.codebook.centroids == four.codebook.centroids);
    CHECK(one.inertia == four.inertia);
    opts.threads = 1;
    CHECK(kmeans_fit(data, opts).codebook.centroids == one.codebook.centroids);
  }
}

TEST_CASE("kmeans rejects bad requests") {
  const std::vector<FeatureSequence> data{make_seq("a", {{0, 0}, {1, 1}})};
  KMeansOptions opts;
  opts.k = 3;
  CHECK_THROWS_AS(kmeans_fit(data, opts), ValidationError);
  opts.k = 0;
  CHECK_THROWS_AS(kmeans_fit(data, opts), ValidationError);
  CHECK_THROWS_AS(kmeans_fit({}, KMeansOptions{}), ValidationError);
}

TEST_CASE("kmeans handles duplicate frames") {
  const std::vector<FeatureSequence> data{make_seq("a", {{1, 1}, {1, 1}, {1, 1}, {2, 2}})};
  KMeansOptions opts;
  opts.k = 3;
  const auto res = kmeans_fit(data, opts);
  CHECK(res.inertia.back() == doctest::Approx(0.0));
  CHECK(res.codebook.centroids.allFinite());
}

TEST_CASE("quantize nearest centroid") {
  Codebook cb;
  cb.centroids.resize(2, 2);
  cb.centroids << 1, 0, 0, 1;
  cb.distance = Distance::cosine;
  CHECK(quantize(make_seq("x", {{2, 0.1f}}), cb)[0] == 0);
  CHECK(quantize(make_seq("x", {{0.1f, 3}}), cb)[0] == 1);
  // Tie goes to the lowest index.
  CHECK(quantize(make_seq("x", {{1, 1}}), cb)[0] == 0);
  try {
    quantize(make_seq("x", {{1, 1}, {0, 0}}), cb);
    FAIL("expected zero-norm error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("frame 1") != std::string::npos);
  }
  cb.distance = Distance::l2;
  CHECK(quantize(make_seq("x", {{0.5f, 0.5f}}), cb)[0] == 0);
  CHECK(quantize(make_seq("x", {{0, 0}, {0.2f, 0.9f}}), cb).units() == std::vector<UnitId>{0, 1});
  CHECK(quantize(make_seq("x", {{0, 0}}), cb).vocab_size() == 2);
  CHECK_THROWS_AS(quantize(make_seq("x", {{0, 0, 0}}), cb), ValidationError);
}

TEST_CASE("feature files round trip and report truncation") {
  const auto path = std::filesystem::temp_directory_path() / "s2s_test_features.bin";
  std::mt19937_64 rng(8);
  const auto data = random_dataset(rng, 6, 5);
  write_feature_file(data, path);
  const auto back = read_feature_file(path);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].id == data[i].id);
    CHECK(back[i].frames == data[i].frames);
  }
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  CHECK_THROWS_AS(read_feature_file(path), ParseError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "NOPE";
  }
  CHECK_THROWS_AS(read_feature_file(path), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("codebook files round trip") {
  const auto path = std::filesystem::temp_directory_path() / "s2s_test_codebook.json";
  Codebook cb;
  cb.centroids.resize(3, 2);
  cb.centroids << 0.1, 1.0 / 3.0, -2.5, 1e-17, 7, 8;
  cb.distance = Distance::cosine;
  cb.seed = 42;
  write_codebook(cb, path);
  const auto back = read_codebook(path);
  CHECK(back.centroids == cb.centroids);
  CHECK(back.distance == Distance::cosine);
  CHECK(back.seed == 42);
  std::filesystem::remove(path);
  CHECK(parse_distance("l2") == Distance::l2);
  CHECK_THROWS(parse_distance("manhattan"));
}
