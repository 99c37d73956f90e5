#include "s2s/quantizer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

#include <json.hpp>

#include "s2s/error.hpp"
#include "s2s/parallel.hpp"

namespace s2s {

namespace {

constexpr char kFeatureMagic[4] = {'S', 'S', 'F', '1'};

double sq_l2(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

double norm(const double* a, std::size_t dim) {
  double s = 0.0;
  for (std::size_t j = 0; j < dim; ++j) s += a[j] * a[j];
  return std::sqrt(s);
}

// 1 - cos(a, c) where `a` is already unit length and c has norm c_norm.
double cosine_dist_unit(const double* a, const double* c, double c_norm, std::size_t dim) {
  double dot = 0.0;
  for (std::size_t j = 0; j < dim; ++j) dot += a[j] * c[j];
  return 1.0 - dot / c_norm;
}

struct Assignment {
  std::size_t index = 0;
  double dist = 0.0;
};

// Frames are pre-normalised in cosine mode.
Assignment nearest(const double* x, const RowMatrixD& centroids, const std::vector<double>& c_norms,
                   Distance distance) {
  const std::size_t dim = static_cast<std::size_t>(centroids.cols());
  Assignment best{0, std::numeric_limits<double>::infinity()};
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double* cp = centroids.data() + c * centroids.cols();
    const double d = distance == Distance::l2 ? sq_l2(x, cp, dim)
                                              : cosine_dist_unit(x, cp, c_norms[c], dim);
    if (d < best.dist) best = {static_cast<std::size_t>(c), d};
  }
  return best;
}

std::vector<double> row_norms(const RowMatrixD& m) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out[r] = norm(m.data() + r * m.cols(), static_cast<std::size_t>(m.cols()));
  }
  return out;
}

double point_distance(const double* x, const double* c, std::size_t dim, Distance distance) {
  if (distance == Distance::l2) return sq_l2(x, c, dim);
  return cosine_dist_unit(x, c, norm(c, dim), dim);
}

}  // namespace

Distance parse_distance(const std::string& s) {
  if (s == "l2") return Distance::l2;
  if (s == "cosine") return Distance::cosine;
  throw ValidationError("unknown distance '" + s + "' (expected l2 or cosine)");
}

std::string to_string(Distance d) { return d == Distance::l2 ? "l2" : "cosine"; }

void Codebook::validate() const {
  if (k() == 0 || dim() == 0) throw ValidationError("codebook must have k > 0 and dim > 0");
  if (!centroids.allFinite()) throw ValidationError("codebook contains non-finite values");
  if (distance == Distance::cosine) {
    const auto norms = row_norms(centroids);
    for (std::size_t c = 0; c < norms.size(); ++c) {
      if (!(norms[c] > 0.0)) {
        throw ValidationError("cosine codebook centroid " + std::to_string(c) + " has zero norm");
      }
    }
  }
}

std::vector<std::size_t> kmeanspp_seed(const RowMatrixD& frames, std::size_t k, Distance distance,
                                       std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(frames.rows());
  const std::size_t dim = static_cast<std::size_t>(frames.cols());
  if (k == 0 || n < k) throw ValidationError("k-means++ needs at least k frames");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> centers;
  centers.reserve(k);
  centers.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (centers.size() < k) {
    const double* c = frames.data() + centers.back() * dim;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = std::max(0.0, point_distance(frames.data() + i * dim, c, dim, distance));
      if (d < best[i]) best[i] = d;
      total += best[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += best[i];
        if (acc > target && best[i] > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick == n) {
        // Rounding left the target past the final partial sum.
        for (std::size_t i = n; i-- > 0;) {
          if (best[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // Every remaining frame coincides with a centre; duplicates are unavoidable.
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    centers.push_back(pick);
  }
  return centers;
}

KMeansResult kmeans_fit(std::span<const FeatureSequence> features, const KMeansOptions& opts) {
  if (opts.k == 0) throw ValidationError("k must be at least 1");
  if (opts.max_iters == 0) throw ValidationError("max_iters must be at least 1");
  std::size_t dim = 0;
  std::size_t n = 0;
  for (const auto& f : features) {
    if (f.dim() == 0) throw ValidationError("feature sequence '" + f.id + "' has dim 0");
    if (dim == 0) dim = f.dim();
    if (f.dim() != dim) {
      throw ValidationError("feature sequence '" + f.id + "' has dim " + std::to_string(f.dim()) +
                            ", expected " + std::to_string(dim));
    }
    if (!f.frames.allFinite()) throw ValidationError("feature sequence '" + f.id + "' has non-finite values");
    n += f.n_frames();
  }
  if (n < opts.k) {
    throw ValidationError("k-means needs at least k=" + std::to_string(opts.k) + " frames, got " +
                          std::to_string(n));
  }

  RowMatrixD x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  {
    Eigen::Index row = 0;
    for (const auto& f : features) {
      if (f.n_frames() == 0) continue;
      x.middleRows(row, f.frames.rows()) = f.frames.cast<double>();
      row += f.frames.rows();
    }
  }
  if (opts.distance == Distance::cosine) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double nr = x.row(r).norm();
      if (!(nr > 0.0)) throw ValidationError("frame " + std::to_string(r) + " has zero norm (cosine)");
      x.row(r) /= nr;
    }
  }

  const std::size_t k = opts.k;
  const auto init = kmeanspp_seed(x, k, opts.distance, opts.seed);
  RowMatrixD centroids(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(dim));
  for (std::size_t c = 0; c < k; ++c) centroids.row(c) = x.row(init[c]);

  std::vector<Assignment> assign(n);
  std::vector<std::size_t> prev(n, k);
  auto run_assign = [&]() {
    const auto c_norms = row_norms(centroids);
    parallel_for(n, opts.threads, [&](std::size_t i) {
      assign[i] = nearest(x.data() + i * dim, centroids, c_norms, opts.distance);
    });
    double inertia = 0.0;
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      inertia += assign[i].dist;
      if (assign[i].index != prev[i]) changed = true;
      prev[i] = assign[i].index;
    }
    return std::pair{inertia, changed};
  };

  KMeansResult result;
  result.inertia.push_back(run_assign().first);
  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    // Update: sums accumulate in frame order so results are thread-independent.
    RowMatrixD sums = RowMatrixD::Zero(centroids.rows(), centroids.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(assign[i].index) += x.row(i);
      ++counts[assign[i].index];
    }
    std::vector<std::size_t> empty;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        empty.push_back(c);
        continue;
      }
      centroids.row(c) = sums.row(c) / static_cast<double>(counts[c]);
      if (opts.distance == Distance::cosine && !(centroids.row(c).norm() > 0.0)) empty.push_back(c);
    }
    if (!empty.empty()) {
      // Move each empty centroid onto the frame farthest from its own centroid.
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return assign[a].dist > assign[b].dist;
      });
      for (std::size_t e = 0; e < empty.size() && e < n; ++e) {
        centroids.row(empty[e]) = x.row(order[e]);
      }
    }
    ++result.iterations;
    const auto [inertia, changed] = run_assign();
    result.inertia.push_back(inertia);
    if (!changed) break;
  }

  result.codebook.centroids = std::move(centroids);
  result.codebook.distance = opts.distance;
  result.codebook.seed = opts.seed;
  return result;
}

UnitSequence quantize(const FeatureSequence& seq, const Codebook& cb) {
  if (seq.n_frames() > 0 && seq.dim() != cb.dim()) {
    throw ValidationError("feature sequence '" + seq.id + "' has dim " + std::to_string(seq.dim()) +
                          " but codebook dim is " + std::to_string(cb.dim()));
  }
  const std::size_t dim = cb.dim();
  const auto c_norms = row_norms(cb.centroids);
  std::vector<UnitId> units(seq.n_frames());
  std::vector<double> frame(dim);
  for (std::size_t i = 0; i < seq.n_frames(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) frame[j] = seq.frames(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    if (cb.distance == Distance::cosine) {
      const double nr = norm(frame.data(), dim);
      if (!(nr > 0.0)) {
        throw ValidationError("feature sequence '" + seq.id + "': frame " + std::to_string(i) +
                              " has zero norm under cosine distance");
      }
      for (double& v : frame) v /= nr;
    }
    units[i] = static_cast<UnitId>(nearest(frame.data(), cb.centroids, c_norms, cb.distance).index);
  }
  return UnitSequence(std::move(units), cb.k());
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

std::uint32_t get_u32(const std::string& buf, std::size_t& pos, const std::string& what) {
  if (pos + 4 > buf.size()) throw ParseError("feature file truncated while reading " + what);
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + b])) << (8 * b);
  pos += 4;
  return v;
}

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

}  // namespace

std::vector<FeatureSequence> read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open feature file " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), kFeatureMagic, 4) != 0) {
    throw ParseError(path.string() + ": missing SSF1 magic");
  }
  std::size_t pos = 4;
  const std::uint32_t dim = get_u32(buf, pos, "dim");
  if (dim == 0) throw ParseError(path.string() + ": dim must be positive");
  std::vector<FeatureSequence> out;
  while (pos < buf.size()) {
    const std::size_t record = out.size();
    const std::string ctx = path.string() + ": record " + std::to_string(record);
    try {
      const std::uint32_t id_len = get_u32(buf, pos, "id length");
      if (pos + id_len > buf.size()) throw ParseError("feature file truncated in id");
      FeatureSequence f;
      f.id = buf.substr(pos, id_len);
      pos += id_len;
      const std::uint32_t n_frames = get_u32(buf, pos, "frame count");
      const std::size_t n_values = static_cast<std::size_t>(n_frames) * dim;
      if (pos + n_values * 4 > buf.size()) throw ParseError("feature file truncated in frames");
      f.frames.resize(n_frames, dim);
      float* dst = f.frames.data();
      for (std::size_t v = 0; v < n_values; ++v) {
        const std::uint32_t bits = get_u32(buf, pos, "frame value");
        std::memcpy(dst + v, &bits, 4);
      }
      if (!f.frames.allFinite()) throw ParseError("non-finite feature value in '" + f.id + "'");
      out.push_back(std::move(f));
    } catch (const ParseError& e) {
      throw ParseError(ctx + ": " + e.what());
    }
  }
  return out;
}

void write_feature_file(std::span<const FeatureSequence> seqs, const std::filesystem::path& path) {
  std::size_t dim = 0;
  for (const auto& f : seqs) {
    if (f.n_frames() == 0) continue;
    if (dim == 0) dim = f.dim();
    if (f.dim() != dim) throw ValidationError("feature sequences disagree on dim");
  }
  if (dim == 0 && !seqs.empty()) dim = std::max<std::size_t>(1, seqs.front().dim());
  if (dim == 0) dim = 1;
  std::string out(kFeatureMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(dim));
  for (const auto& f : seqs) {
    put_u32(out, static_cast<std::uint32_t>(f.id.size()));
    out += f.id;
    put_u32(out, static_cast<std::uint32_t>(f.n_frames()));
    for (Eigen::Index r = 0; r < f.frames.rows(); ++r) {
      for (Eigen::Index c = 0; c < f.frames.cols(); ++c) put_f32(out, f.frames(r, c));
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << out;
  if (!os) throw Error("write failed for " + path.string());
}

Codebook read_codebook(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open codebook " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    Codebook cb;
    const auto k = j.at("k").get<std::size_t>();
    const auto dim = j.at("dim").get<std::size_t>();
    cb.distance = parse_distance(j.at("distance").get<std::string>());
    cb.seed = j.value("seed", std::uint64_t{0});
    const auto& rows = j.at("centroids");
    if (rows.size() != k) throw ParseError("centroid count does not match k");
    cb.centroids.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(dim));
    for (std::size_t r = 0; r < k; ++r) {
      if (rows[r].size() != dim) throw ParseError("centroid " + std::to_string(r) + " has wrong dim");
      for (std::size_t c = 0; c < dim; ++c) cb.centroids(r, c) = rows[r][c].get<double>();
    }
    cb.validate();
    return cb;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_codebook(const Codebook& cb, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["k"] = cb.k();
  j["dim"] = cb.dim();
  j["distance"] = to_string(cb.distance);
  j["seed"] = cb.seed;
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < cb.centroids.rows(); ++r) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < cb.centroids.cols(); ++c) row.push_back(cb.centroids(r, c));
    rows.push_back(std::move(row));
  }
  j["centroids"] = std::move(rows);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << j.dump() << '\n';
}

}  // namespace s2s
