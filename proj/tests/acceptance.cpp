// Acceptance suite: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <array>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "oracles.hpp"
#include "s2s/model.hpp"
#include "s2s/quantizer.hpp"
#include "s2s/stats.hpp"
#include "s2s/textmetrics.hpp"

using namespace s2s;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Settings {
  std::string cli;
  std::string demo;
  std::string configs;
  std::string work;
  std::string only;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// ------------------------------------------------------------ criterion 1

Outcome metric_oracles() {
  std::mt19937_64 rng(1);
  double worst_bleu = 0.0, worst_chrf = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Token alphabet = 2 + static_cast<Token>(rng() % 8);
    TokenSeq h(rng() % 31), r(rng() % 31);
    for (auto& t : h) t = static_cast<Token>(rng() % alphabet);
    for (auto& t : r) t = static_cast<Token>(rng() % alphabet);
    worst_bleu = std::max(worst_bleu, std::abs(sentence_bleu(h, r).value - oracle::bleu(h, r)));
  }
  for (int i = 0; i < 100; ++i) {
    std::u32string h, r;
    for (std::size_t n = rng() % 31; n > 0; --n) h.push_back(U"abcde "[rng() % 6]);
    for (std::size_t n = rng() % 31; n > 0; --n) r.push_back(U"abcde "[rng() % 6]);
    std::string hs, rs;
    for (char32_t c : h) utf8_append(hs, c);
    for (char32_t c : r) utf8_append(rs, c);
    worst_chrf = std::max(worst_chrf, std::abs(sentence_chrf(hs, rs).value - oracle::chrf(h, r)));
  }
  const TokenSeq hyp{0, 1, 2, 3}, ref{0, 1, 2, 4};
  const double worked = sentence_bleu(hyp, ref).value;
  const double expected = oracle::bleu(hyp, ref);
  const bool ok = worst_bleu <= 1e-9 && worst_chrf <= 1e-9 && std::abs(worked - expected) < 5e-5 &&
                  std::abs(worked - 0.6580) < 5e-5;
  return {ok, "max |bleu - oracle| = " + sci(worst_bleu) + ", max |chrf - oracle| = " +
                  sci(worst_chrf) + ", worked example " + fmt(worked, 6)};
}

// ------------------------------------------------------------ criterion 2

Outcome correlation_oracles() {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  double worst_p = 0.0, worst_s = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng() % 9999;
    std::vector<double> x(n), y(n);
    const bool ties = i % 4 == 0;
    for (std::size_t j = 0; j < n; ++j) {
      x[j] = ties ? std::round(nd(rng) * 3) : nd(rng);
      y[j] = ties ? std::round(x[j] + nd(rng)) : 0.3 * x[j] + nd(rng);
    }
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
        std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; }))
      continue;
    worst_p = std::max(worst_p, std::abs(pearson(x, y) - oracle::pearson(x, y)));
    worst_s = std::max(worst_s, std::abs(spearman(x, y) - oracle::spearman(x, y)));
  }
  const std::vector<double> a{1, 2, 3}, b{1, 1, 2};
  const double tie = spearman(a, b);
  const double tie_expected = oracle::pearson(a, {1.5, 1.5, 3});
  const bool ok = worst_p <= 1e-12 && worst_s <= 1e-12 && std::abs(tie - tie_expected) < 1e-12 &&
                  std::abs(tie - 0.866) < 5e-4;
  return {ok, "max |pearson - oracle| = " + sci(worst_p) + ", max |spearman - oracle| = " +
                  sci(worst_s) + ", tie case " + fmt(tie, 6)};
}

// ------------------------------------------------------------ criterion 3

double exhaustive_two_means(const std::vector<std::array<double, 2>>& pts) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = pts.size();
  for (std::size_t mask = 1; mask + 1 < (1u << n); ++mask) {
    double total = 0.0;
    for (unsigned side = 0; side < 2; ++side) {
      double mx = 0, my = 0;
      int cnt = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (((mask >> i) & 1u) == side) {
          mx += pts[i][0];
          my += pts[i][1];
          ++cnt;
        }
      mx /= cnt;
      my /= cnt;
      for (std::size_t i = 0; i < n; ++i)
        if (((mask >> i) & 1u) == side)
          total += (pts[i][0] - mx) * (pts[i][0] - mx) + (pts[i][1] - my) * (pts[i][1] - my);
    }
    best = std::min(best, total);
  }
  return best;
}

Outcome kmeans_properties() {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> nd;
  int monotone = 0;
  for (int d = 0; d < 50; ++d) {
    std::vector<FeatureSequence> data(3);
    for (std::size_t s = 0; s < data.size(); ++s) {
      data[s].id = "s" + std::to_string(s);
      data[s].frames.resize(20 + static_cast<Eigen::Index>(rng() % 40), 4);
      for (Eigen::Index i = 0; i < data[s].frames.size(); ++i)
        data[s].frames.data()[i] = nd(rng) + static_cast<float>((i / 4) % 3);
    }
    KMeansOptions opts;
    opts.k = 2 + rng() % 8;
    opts.seed = rng();
    opts.distance = d % 2 ? Distance::cosine : Distance::l2;
    const auto res = kmeans_fit(data, opts);
    bool ok = true;
    for (std::size_t i = 1; i < res.inertia.size(); ++i) ok &= res.inertia[i] <= res.inertia[i - 1] + 1e-9;
    monotone += ok;
  }

  const std::vector<std::array<double, 2>> pts{{0, 0}, {0, 0.1}, {10, 10}, {10, 10.1}};
  FeatureSequence four;
  four.id = "four";
  four.frames.resize(4, 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    four.frames(static_cast<Eigen::Index>(i), 0) = static_cast<float>(pts[i][0]);
    four.frames(static_cast<Eigen::Index>(i), 1) = static_cast<float>(pts[i][1]);
  }
  KMeansOptions two;
  two.k = 2;
  const double fitted = kmeans_fit(std::vector<FeatureSequence>{four}, two).inertia.back();
  const double exhaustive = exhaustive_two_means(pts);

  std::vector<FeatureSequence> big(40);
  for (std::size_t s = 0; s < big.size(); ++s) {
    big[s].id = "b" + std::to_string(s);
    big[s].frames.resize(50, 8);
    for (Eigen::Index i = 0; i < big[s].frames.size(); ++i) big[s].frames.data()[i] = nd(rng);
  }
  KMeansOptions opts;
  opts.k = 16;
  opts.seed = 5;
  opts.threads = 1;
  const auto a = kmeans_fit(big, opts);
  opts.threads = 4;
  const auto b = kmeans_fit(big, opts);
  const bool same = a.codebook.centroids == b.codebook.centroids && a.inertia == b.inertia;

  const bool ok = monotone == 50 && std::abs(fitted - exhaustive) < 1e-6 && std::abs(exhaustive - 0.01) < 1e-6 && same;
  return {ok, std::to_string(monotone) + "/50 traces non-increasing, 4-point inertia " + fmt(fitted, 6) +
                  " (exhaustive " + fmt(exhaustive, 6) + "), threads 1 vs 4 " + (same ? "identical" : "differ")};
}

// ------------------------------------------------------------ criterion 4

PairRecord random_pair(std::mt19937_64& rng, std::size_t k) {
  auto seq = [&] {
    std::vector<UnitId> u;
    const std::size_t len = 2 + rng() % 10;
    while (u.size() < len) {
      const auto x = static_cast<UnitId>(rng() % k);
      if (u.empty() || u.back() != x) u.push_back(x);
    }
    return UnitSequence(u, k);
  };
  return PairRecord{"p", "h", "r", seq(), seq(), std::nullopt, std::nullopt, 0.5};
}

Outcome gradient_check() {
  std::mt19937_64 rng(4);
  double worst_embed = 0.0, worst_attn = 0.0;
  bool finite = true;
  for (auto mode : {EncoderMode::embed_mean, EncoderMode::attn}) {
    ModelConfig c;
    c.vocab_size = 20;
    c.encoder_mode = mode;
    c.embed_dim = mode == EncoderMode::attn ? 8 : 4;
    c.attn_layers = 1;
    c.attn_heads = 2;
    c.max_len = 32;
    c.seed = 11;
    const auto model = MetricModel::initialized(c);
    for (int t = 0; t < 5; ++t) {
      const auto res = grad_check(model, random_pair(rng, 20), 0.1 + 0.2 * t);
      finite &= res.all_finite;
      (mode == EncoderMode::attn ? worst_attn : worst_embed) =
          std::max(mode == EncoderMode::attn ? worst_attn : worst_embed, res.max_rel_error);
    }
  }
  return {finite && worst_embed < 1e-4 && worst_attn < 1e-4,
          "max relative error embed_mean(d=4) " + sci(worst_embed) + ", attn(d=8, 1 layer) " +
              sci(worst_attn)};
}

// ------------------------------------------------------------ criterion 5

Outcome freeze_schedule() {
  ModelConfig c;
  c.vocab_size = 20;
  c.embed_dim = 8;
  c.attn_layers = 1;
  c.attn_heads = 2;
  c.max_len = 32;
  c.batch_size = 4;
  c.epochs = 1;
  c.freeze_frac = 0.3;
  c.seed = 12;
  std::mt19937_64 rng(5);
  std::vector<PairRecord> pairs;
  for (int i = 0; i < 400; ++i) {
    auto p = random_pair(rng, 20);
    p.pair_id = "p" + std::to_string(i);
    p.target = i % 2 ? 0.95 : 0.02;
    pairs.push_back(std::move(p));
  }
  auto encoder_params = [](const MetricModel& m) {
    std::vector<double> out;
    for (const auto& p : m.layout())
      if (p.encoder) out.insert(out.end(), m.data().begin() + p.offset, m.data().begin() + p.offset + p.size());
    return out;
  };
  const auto initial = encoder_params(MetricModel::initialized(c));
  std::size_t last_identical = 0, first_changed = 0;
  TrainOptions opts;
  opts.on_step = [&](const StepRecord& r, const MetricModel& m) {
    if (encoder_params(m) == initial) {
      if (first_changed == 0) last_identical = r.step;
    } else if (first_changed == 0) {
      first_changed = r.step;
    }
  };
  const auto res = train(pairs, {}, c, opts);
  const bool ok = res.state.steps_per_epoch == 100 && last_identical == 30 && first_changed == 31;
  return {ok, std::to_string(res.state.steps_per_epoch) + " steps/epoch, encoder identical through step " +
                  std::to_string(last_identical) + ", first change at step " + std::to_string(first_changed)};
}

// ------------------------------------------------------------ criteria 6-9

struct DemoRun {
  bool ok = false;
  double naive_pearson = 0.0;
  double learned_pearson = 0.0;
  double learned_l1 = 0.0;
  double rendered_pearson = 0.0;
  double seconds = 0.0;
};

int run_demo(const Settings& s, const fs::path& out, const fs::path& synth, const fs::path& model,
             const std::string& seed) {
  fs::remove_all(out);
  fs::create_directories(out);
  const std::string cmd = "\"" + s.demo + "\" \"" + s.cli + "\" \"" + out.string() + "\" \"" + synth.string() +
                          "\" \"" + model.string() + "\" " + seed + " > \"" + (out / "demo.log").string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

DemoRun desk_scale(const Settings& s, const std::string& name, std::size_t k) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = fs::path(s.work) / name;
  fs::create_directories(s.work);
  auto synth = nlohmann::ordered_json::parse(slurp(fs::path(s.configs) / "synth_acceptance.json"));
  auto model = nlohmann::ordered_json::parse(slurp(fs::path(s.configs) / "model_acceptance.json"));
  synth["k"] = k;
  model["vocab_size"] = k;
  const fs::path synth_path = fs::path(s.work) / (name + "_synth.json");
  const fs::path model_path = fs::path(s.work) / (name + "_model.json");
  std::ofstream(synth_path) << synth.dump(2) << "\n";
  std::ofstream(model_path) << model.dump(2) << "\n";
  DemoRun r;
  if (run_demo(s, dir, synth_path, model_path, "7") != 0) {
    std::cerr << "demo failed; see " << (dir / "demo.log") << "\n";
    return r;
  }
  const auto naive = nlohmann::json::parse(slurp(dir / "naive_report.json"));
  const auto learned = nlohmann::json::parse(slurp(dir / "learned_report.json"));
  r.ok = true;
  r.naive_pearson = naive["pearson"];
  r.learned_pearson = learned["pearson"];
  r.learned_l1 = learned["histogram_l1"];
  r.rendered_pearson = nlohmann::json::parse(slurp(dir / "rendered_report.json"))["pearson"];
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Outcome pipeline_determinism(const Settings& s) {
  const fs::path a = fs::path(s.work) / "determinism_a";
  const fs::path b = fs::path(s.work) / "determinism_b";
  const fs::path synth = fs::path(s.configs) / "synth_demo.json";
  const fs::path model = fs::path(s.configs) / "model_demo.json";
  if (run_demo(s, a, synth, model, "3") != 0 || run_demo(s, b, synth, model, "3") != 0) {
    return {false, "demo run failed; see " + (a / "demo.log").string()};
  }
  std::size_t files = 0;
  std::vector<std::string> differing;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "demo.log") continue;
    const auto rel = fs::relative(e.path(), a);
    ++files;
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) differing.push_back(rel.string());
  }
  std::string detail = std::to_string(files) + " output files compared";
  for (const auto& d : differing) detail += ", differs: " + d;
  return {files > 0 && differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  Settings s;
  app.add_option("--cli", s.cli, "s2s binary")->required();
  app.add_option("--demo", s.demo, "demo script")->required();
  app.add_option("--configs", s.configs, "configs directory")->required();
  app.add_option("--work", s.work, "scratch directory")->required();
  app.add_option("--only", s.only, "comma-separated criterion numbers");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int n) {
    if (s.only.empty()) return true;
    std::stringstream ss(s.only);
    for (std::string t; std::getline(ss, t, ',');)
      if (std::stoi(t) == n) return true;
    return false;
  };

  int failures = 0;
  auto report = [&](int n, const std::string& title, const Outcome& o, double seconds, double budget) {
    const bool within = seconds <= budget;
    const bool pass = o.pass && within;
    failures += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << n << ": " << title << " | " << o.detail << " | "
              << fmt(seconds, 1) << " s (budget " << fmt(budget, 0) << " s)" << std::endl;
  };
  auto timed = [&](int n, const std::string& title, double budget, const std::function<Outcome()>& fn) {
    if (!wanted(n)) return;
    const auto t0 = std::chrono::steady_clock::now();
    const Outcome o = fn();
    report(n, title, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), budget);
  };

  timed(1, "BLEU/ChrF match brute-force counters", 10, metric_oracles);
  timed(2, "Pearson/Spearman match textbook oracles", 10, correlation_oracles);
  timed(3, "k-means trace, 4-point optimum, thread determinism", 30, kmeans_properties);
  timed(4, "gradient check against central differences", 60, gradient_check);
  timed(5, "encoder frozen for 30% of the first epoch", 30, freeze_schedule);

  if (wanted(6) || wanted(7) || wanted(8)) {
    const DemoRun k200 = desk_scale(s, "k200", 200);
    if (wanted(6)) {
      const bool ok = k200.ok && k200.naive_pearson < 0.55 && k200.learned_pearson >= 0.85 &&
                      k200.learned_pearson > k200.naive_pearson;
      report(6, "learned metric beats naive unit BLEU (K=200)",
             {ok, "naive pearson " + fmt(k200.naive_pearson) + " (< 0.55), learned pearson " +
                      fmt(k200.learned_pearson) + " (>= 0.85), unit BLEU on rendered units " +
                      fmt(k200.rendered_pearson)},
             k200.seconds, 1200);
    }
    if (wanted(7)) {
      const DemoRun k50 = desk_scale(s, "k50", 50);
      const bool ok = k200.ok && k50.ok && k200.learned_pearson >= k50.learned_pearson - 0.02;
      report(7, "more units help (K=200 vs K=50)",
             {ok, "learned pearson K=200 " + fmt(k200.learned_pearson) + ", K=50 " + fmt(k50.learned_pearson) +
                      " (naive K=50 " + fmt(k50.naive_pearson) + ")"},
             k200.seconds + k50.seconds, 2400);
    }
    if (wanted(8)) {
      report(8, "predicted vs target histogram L1 (20 bins)",
             {k200.ok && k200.learned_l1 < 0.25, "L1 " + fmt(k200.learned_l1) + " (< 0.25)"}, 0.0, 1);
    }
  }

  timed(9, "demo pipeline byte-identical across two runs", 600, [&] { return pipeline_determinism(s); });

  std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
