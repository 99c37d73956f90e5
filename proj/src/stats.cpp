#include "s2s/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "s2s/error.hpp"

namespace s2s {

namespace {

// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

void check_inputs(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw ValidationError("correlation inputs differ in length (" + std::to_string(xs.size()) + " vs " +
                          std::to_string(ys.size()) + ")");
  }
  if (xs.size() < 2) throw ValidationError("correlation needs at least two points");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) {
      throw ValidationError("non-finite value at index " + std::to_string(i));
    }
  }
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double pearson(std::span<const double> xs, std::span<const double> ys) {
  check_inputs(xs, ys);
  const double n = static_cast<double>(xs.size());
  CompensatedSum sx, sy;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx.add(xs[i]);
    sy.add(ys[i]);
  }
  const double mx = sx.value() / n;
  const double my = sy.value() / n;
  CompensatedSum sxy, sxx, syy;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy.add(dx * dy);
    sxx.add(dx * dx);
    syy.add(dy * dy);
  }
  if (!(sxx.value() > 0.0) || !(syy.value() > 0.0)) {
    throw ValidationError("correlation is undefined for a constant input vector");
  }
  const double r = sxy.value() / std::sqrt(sxx.value() * syy.value());
  return std::clamp(r, -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && xs[order[j]] == xs[order[i]]) ++j;
    // Positions i..j-1 (0-based) share the mean of ranks i+1..j.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = rank;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  check_inputs(xs, ys);
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

std::vector<HistogramBin> histogram(std::span<const double> scores, std::size_t n_bins) {
  if (n_bins == 0) throw ValidationError("histogram needs at least one bin");
  std::vector<HistogramBin> bins(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lo = static_cast<double>(b) / static_cast<double>(n_bins);
    bins[b].hi = static_cast<double>(b + 1) / static_cast<double>(n_bins);
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    if (!(s >= 0.0 && s <= 1.0)) {
      throw ValidationError("score " + std::to_string(s) + " at index " + std::to_string(i) + " is outside [0,1]");
    }
    auto b = static_cast<std::size_t>(std::floor(s * static_cast<double>(n_bins)));
    ++bins[std::min(b, n_bins - 1)].count;
  }
  return bins;
}

double histogram_l1(const std::vector<HistogramBin>& a, const std::vector<HistogramBin>& b) {
  if (a.size() != b.size()) throw ValidationError("histograms have different bin counts");
  double na = 0.0, nb = 0.0;
  for (const auto& x : a) na += static_cast<double>(x.count);
  for (const auto& x : b) nb += static_cast<double>(x.count);
  if (na == 0.0 || nb == 0.0) throw ValidationError("cannot compare an empty histogram");
  double l1 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    l1 += std::abs(static_cast<double>(a[i].count) / na - static_cast<double>(b[i].count) / nb);
  }
  return l1;
}

EvalReport evaluate(const std::map<std::string, double>& predictions,
                    const std::map<std::string, double>& targets, std::size_t n_bins) {
  std::vector<std::string> missing;
  for (const auto& [id, v] : targets) {
    if (!predictions.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string msg = "missing predictions for pairs:";
    for (const auto& id : missing) msg += " " + id;
    throw ValidationError(msg);
  }
  EvalReport r;
  r.n = targets.size();
  std::vector<double> pred, gold;
  for (const auto& [id, t] : targets) {
    const double p = predictions.at(id);
    r.per_pair.push_back({id, p, t});
    pred.push_back(p);
    gold.push_back(t);
  }
  r.pearson = pearson(pred, gold);
  r.spearman = spearman(pred, gold);
  r.predicted_histogram = histogram(pred, n_bins);
  r.target_histogram = histogram(gold, n_bins);
  return r;
}

EvalReport evaluate(const std::map<std::string, double>& predictions, std::span<const PairRecord> pairs,
                    std::size_t n_bins) {
  std::map<std::string, double> targets;
  std::vector<std::string> missing;
  for (const auto& p : pairs) {
    if (!p.target) {
      missing.push_back(p.pair_id);
    } else {
      targets[p.pair_id] = *p.target;
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing targets for pairs:";
    for (const auto& id : missing) msg += " " + id;
    throw ValidationError(msg);
  }
  return evaluate(predictions, targets, n_bins);
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["pearson"] = r.pearson;
  j["spearman"] = r.spearman;
  j["histogram_l1"] = histogram_l1(r.predicted_histogram, r.target_histogram);
  auto bins = [](const std::vector<HistogramBin>& h) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& b : h) arr.push_back({{"bin_lo", b.lo}, {"bin_hi", b.hi}, {"count", b.count}});
    return arr;
  };
  j["predicted_histogram"] = bins(r.predicted_histogram);
  j["target_histogram"] = bins(r.target_histogram);
  auto rows = nlohmann::ordered_json::array();
  for (const auto& p : r.per_pair) {
    rows.push_back({{"pair_id", p.pair_id}, {"predicted", p.predicted}, {"target", p.target}});
  }
  j["per_pair"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string histogram_to_tsv(const std::vector<HistogramBin>& bins) {
  std::string out = "bin_lo\tbin_hi\tcount\n";
  for (const auto& b : bins) {
    out += fixed6(b.lo) + "\t" + fixed6(b.hi) + "\t" + std::to_string(b.count) + "\n";
  }
  return out;
}

void write_score_file(const std::vector<std::pair<std::string, double>>& scores,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "pair_id\tscore\n";
  for (const auto& [id, s] : scores) out << id << '\t' << fixed6(s) << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

std::map<std::string, double> read_score_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open score file " + path.string());
  std::map<std::string, double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto fail = [&](const std::string& what) {
      return ParseError(path.string() + ": line " + std::to_string(line_no) + ": " + what);
    };
    if (line_no == 1) {
      if (line != "pair_id\tscore") throw fail("expected header 'pair_id\\tscore'");
      continue;
    }
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw fail("missing tab separator");
    const std::string id = line.substr(0, tab);
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw fail("trailing characters after score");
    } catch (const std::logic_error&) {
      throw fail("invalid score '" + line.substr(tab + 1) + "'");
    }
    if (!out.emplace(id, v).second) throw fail("duplicate pair_id '" + id + "'");
  }
  if (line_no == 0) throw ParseError(path.string() + ": empty score file");
  return out;
}

}  // namespace s2s
