#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "s2s/mining.hpp"

namespace s2s {

// Sample Pearson correlation. Throws ValidationError on length mismatch,
// fewer than two points, or a constant vector.
double pearson(std::span<const double> xs, std::span<const double> ys);

// Pearson correlation of fractional ranks (ties share the average rank).
double spearman(std::span<const double> xs, std::span<const double> ys);

// 1-based fractional ranks.
std::vector<double> average_ranks(std::span<const double> xs);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

// Equal-width bins over [0,1]; only the last bin includes its right edge.
std::vector<HistogramBin> histogram(std::span<const double> scores, std::size_t n_bins = 20);

// Sum over bins of |p_i - q_i| where p, q are the bin frequencies (0..2).
double histogram_l1(const std::vector<HistogramBin>& a, const std::vector<HistogramBin>& b);

struct PairScore {
  std::string pair_id;
  double predicted = 0.0;
  double target = 0.0;
};

struct EvalReport {
  std::size_t n = 0;
  double pearson = 0.0;
  double spearman = 0.0;
  std::vector<HistogramBin> predicted_histogram;
  std::vector<HistogramBin> target_histogram;
  std::vector<PairScore> per_pair;  // sorted by pair_id
};

// Joins predictions with pair targets by pair_id. Throws ValidationError
// listing every pair without a target or prediction.
EvalReport evaluate(const std::map<std::string, double>& predictions, std::span<const PairRecord> pairs,
                    std::size_t n_bins = 20);
EvalReport evaluate(const std::map<std::string, double>& predictions,
                    const std::map<std::string, double>& targets, std::size_t n_bins = 20);

std::string report_to_json(const EvalReport& r);
std::string histogram_to_tsv(const std::vector<HistogramBin>& bins);

// Score file: `pair_id\tscore` header, one row per pair, 6 decimals.
void write_score_file(const std::vector<std::pair<std::string, double>>& scores,
                      const std::filesystem::path& path);
std::map<std::string, double> read_score_file(const std::filesystem::path& path);

}  // namespace s2s
