#include "s2s/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "s2s/error.hpp"
#include "s2s/mining.hpp"
#include "s2s/model.hpp"
#include "s2s/quantizer.hpp"
#include "s2s/stats.hpp"
#include "s2s/synth.hpp"
#include "s2s/textmetrics.hpp"
#include "s2s/units.hpp"

namespace s2s {

namespace {

namespace fs = std::filesystem;

void ensure_parent(const fs::path& p) {
  const fs::path parent = p.parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + p.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed for " + p.string());
}

// First non-blank character decides between a pair file and a unit file.
bool looks_like_pair_file(const fs::path& p) {
  std::ifstream in(p);
  char c = 0;
  while (in.get(c)) {
    if (!std::isspace(static_cast<unsigned char>(c))) return c == '{';
  }
  return false;
}

std::vector<PairRecord> select_pairs(const std::vector<PairRecord>& pairs, const std::vector<std::string>& ids) {
  std::map<std::string, const PairRecord*> by_id;
  for (const auto& p : pairs) by_id[p.pair_id] = &p;
  std::vector<PairRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(*by_id.at(id));
  return out;
}

struct Common {
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Textless speech-to-speech comparison over discrete acoustic units", "s2s"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common common;
  auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", common.threads, "Worker threads (0 = all cores)");
  };
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", common.seed, "Random seed")->required();
  };

  // synth
  std::string synth_config, synth_out, synth_features;
  std::size_t synth_k = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic paired-unit corpus");
  synth->add_option("--config", synth_config, "Synth config (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output pair file (JSONL)")->required();
  synth->add_option("--features", synth_features, "Also write frame features (SSF1)");
  synth->add_option("--k", synth_k, "Override the unit vocabulary size");
  add_seed(synth);
  add_threads(synth);

  // split
  std::string split_in, split_out;
  std::vector<double> split_fractions{0.8, 0.1, 0.1};
  auto* split = app.add_subcommand("split", "Split a pair file into train/dev/test");
  split->add_option("--in", split_in, "Pair file")->required()->check(CLI::ExistingFile);
  split->add_option("--out", split_out, "Output directory")->required();
  split->add_option("--fractions", split_fractions, "train dev test fractions")->expected(3)->delimiter(',');
  add_seed(split);

  // dedup
  std::string dedup_in, dedup_out;
  auto* dd = app.add_subcommand("dedup", "Collapse repeated adjacent units (unit or pair files)");
  dd->add_option("--in", dedup_in, "Unit file or pair file")->required()->check(CLI::ExistingFile);
  dd->add_option("--out", dedup_out, "Output file")->required();

  // kmeans
  std::string km_features, km_out, km_distance = "l2";
  std::size_t km_k = 0, km_iters = 50, km_max_frames = 0;
  auto* km = app.add_subcommand("kmeans", "Fit a k-means codebook on frame features");
  km->add_option("--features", km_features, "Feature file (SSF1)")->required()->check(CLI::ExistingFile);
  km->add_option("--k", km_k, "Number of centroids")->required()->check(CLI::PositiveNumber);
  km->add_option("--distance", km_distance, "l2 or cosine")->check(CLI::IsMember({"l2", "cosine"}));
  km->add_option("--max-iters", km_iters, "Lloyd iterations")->check(CLI::PositiveNumber);
  km->add_option("--max-frames", km_max_frames, "Seeded subsample of sequences up to this many frames (0 = all)");
  km->add_option("--out", km_out, "Codebook (JSON)")->required();
  add_seed(km);
  add_threads(km);

  // quantize
  std::string q_features, q_codebook, q_out, q_pairs;
  auto* qz = app.add_subcommand("quantize", "Map frames to their nearest centroid");
  qz->add_option("--features", q_features, "Feature file (SSF1)")->required()->check(CLI::ExistingFile);
  qz->add_option("--codebook", q_codebook, "Codebook (JSON)")->required()->check(CLI::ExistingFile);
  qz->add_option("--pairs", q_pairs, "Pair file whose units are replaced by the quantized units")
      ->check(CLI::ExistingFile);
  qz->add_option("--out", q_out, "Unit file, or pair file with --pairs")->required();
  add_threads(qz);

  // score
  std::string sc_pairs, sc_out, sc_metric = "bleu";
  bool sc_text = false, sc_raw = false;
  auto* sc = app.add_subcommand("score", "Naive BLEU/ChrF on unit sequences (or transcripts with --text)");
  sc->add_option("--pairs", sc_pairs, "Pair file")->required()->check(CLI::ExistingFile);
  sc->add_option("--metric", sc_metric, "bleu or chrf")->check(CLI::IsMember({"bleu", "chrf"}));
  sc->add_flag("--text", sc_text, "Score transcripts instead of units");
  sc->add_flag("--raw", sc_raw, "Keep case and punctuation when scoring text");
  sc->add_option("--out", sc_out, "Score file (TSV); stdout when omitted");

  // mine
  std::string mn_in, mn_transcripts, mn_out, mn_metric;
  int mn_ngram = 4;
  bool mn_raw = false;
  std::size_t mn_per_ngram = 50, mn_max = 1'000'000;
  auto* mn = app.add_subcommand("mine", "Mine pairs sharing a word n-gram");
  mn->add_option("--in", mn_in, "Unit file")->required()->check(CLI::ExistingFile);
  mn->add_option("--transcripts", mn_transcripts, "Transcript file: <id>\\t<text> per line")
      ->required()
      ->check(CLI::ExistingFile);
  mn->add_option("--ngram", mn_ngram, "Shared n-gram order")->check(CLI::PositiveNumber);
  mn->add_option("--max-per-ngram", mn_per_ngram, "Pair cap per n-gram")->check(CLI::PositiveNumber);
  mn->add_option("--max-pairs", mn_max, "Total pair cap")->check(CLI::PositiveNumber);
  mn->add_option("--metric", mn_metric, "Attach bleu or chrf targets")->check(CLI::IsMember({"bleu", "chrf"}));
  mn->add_flag("--raw", mn_raw, "Targets keep case and punctuation");
  mn->add_option("--out", mn_out, "Pair file (JSONL)")->required();
  add_seed(mn);
  add_threads(mn);

  // train
  std::string tr_pairs, tr_dev, tr_config, tr_out, tr_best, tr_log;
  auto* tr = app.add_subcommand("train", "Train the learned metric");
  tr->add_option("--pairs", tr_pairs, "Training pair file")->required()->check(CLI::ExistingFile);
  tr->add_option("--dev", tr_dev, "Dev pair file")->check(CLI::ExistingFile);
  tr->add_option("--config", tr_config, "Model config (JSON)")->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Final model (JSON)")->required();
  tr->add_option("--best", tr_best, "Best-dev checkpoint (JSON)");
  tr->add_option("--log", tr_log, "Training log (JSONL)");
  add_seed(tr);
  add_threads(tr);

  // predict
  std::string pr_model, pr_pairs, pr_out;
  auto* pr = app.add_subcommand("predict", "Score pairs with a trained model");
  pr->add_option("--model", pr_model, "Model (JSON)")->required()->check(CLI::ExistingFile);
  pr->add_option("--pairs", pr_pairs, "Pair file")->required()->check(CLI::ExistingFile);
  pr->add_option("--out", pr_out, "Score file (TSV); stdout when omitted");
  add_threads(pr);

  // correlate
  std::string co_gold, co_pred, co_out, co_hist;
  std::size_t co_bins = 20;
  auto* co = app.add_subcommand("correlate", "Pearson/Spearman and histograms of predictions vs targets");
  co->add_option("--gold", co_gold, "Pair file with targets, or score file")->required()->check(CLI::ExistingFile);
  co->add_option("--pred", co_pred, "Score file")->required()->check(CLI::ExistingFile);
  co->add_option("--bins", co_bins, "Histogram bins")->check(CLI::PositiveNumber);
  co->add_option("--out", co_out, "EvalReport (JSON); stdout when omitted");
  co->add_option("--hist", co_hist, "Histogram TSV of predictions");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << sub->help();
    } else {
      err << app.help();
    }
    return kExitUsage;
  }

  try {
    if (*synth) {
      SynthConfig cfg = read_synth_config(synth_config);
      if (synth_k) cfg.k = synth_k;
      if (!synth_features.empty()) cfg.emit_features = true;
      err << "synth: generating " << cfg.n_pairs << " pairs (k=" << cfg.k << ")\n";
      const SynthCorpus corpus = gen_corpus(cfg, common.seed, common.threads);
      ensure_parent(synth_out);
      write_pair_file(corpus.pairs, synth_out);
      if (!synth_features.empty()) {
        ensure_parent(synth_features);
        write_feature_file(corpus.features, synth_features);
      }
    } else if (*split) {
      const auto pairs = read_pair_file(split_in);
      const auto m = split_pairs(pairs, {split_fractions[0], split_fractions[1], split_fractions[2]}, common.seed);
      const fs::path dir(split_out);
      fs::create_directories(dir);
      write_split_manifest(m, dir / "manifest.json");
      write_pair_file(select_pairs(pairs, m.train), dir / "train.jsonl");
      write_pair_file(select_pairs(pairs, m.dev), dir / "dev.jsonl");
      write_pair_file(select_pairs(pairs, m.test), dir / "test.jsonl");
      err << "split: " << m.train.size() << " train / " << m.dev.size() << " dev / " << m.test.size() << " test\n";
    } else if (*dd) {
      ensure_parent(dedup_out);
      if (looks_like_pair_file(dedup_in)) {
        auto pairs = read_pair_file(dedup_in);
        for (auto& p : pairs) {
          p.h_units = dedup(p.h_units);
          p.r_units = dedup(p.r_units);
        }
        write_pair_file(pairs, dedup_out);
      } else {
        auto utts = read_units_file(dedup_in);
        for (auto& u : utts) u.units = dedup(u.units);
        write_units_file(utts, dedup_out);
      }
    } else if (*km) {
      auto feats = read_feature_file(km_features);
      if (km_max_frames > 0) {
        std::mt19937_64 rng(common.seed);
        std::shuffle(feats.begin(), feats.end(), rng);
        std::size_t frames = 0, keep = 0;
        while (keep < feats.size() && frames < km_max_frames) frames += feats[keep++].n_frames();
        feats.resize(keep);
      }
      KMeansOptions opts;
      opts.k = km_k;
      opts.distance = parse_distance(km_distance);
      opts.max_iters = km_iters;
      opts.seed = common.seed;
      opts.threads = common.threads;
      const auto res = kmeans_fit(feats, opts);
      err << "kmeans: " << res.iterations << " iterations, inertia " << res.inertia.back() << "\n";
      ensure_parent(km_out);
      write_codebook(res.codebook, km_out);
    } else if (*qz) {
      const auto feats = read_feature_file(q_features);
      const Codebook cb = read_codebook(q_codebook);
      std::vector<Utterance> utts(feats.size());
      for (std::size_t i = 0; i < feats.size(); ++i) utts[i] = Utterance{feats[i].id, quantize(feats[i], cb), std::nullopt};
      ensure_parent(q_out);
      if (q_pairs.empty()) {
        write_units_file(utts, q_out);
      } else {
        std::map<std::string, const UnitSequence*> by_id;
        for (const auto& u : utts) by_id[u.id] = &u.units;
        auto pairs = read_pair_file(q_pairs);
        for (auto& p : pairs) {
          auto h = by_id.find(p.h_id);
          auto r = by_id.find(p.r_id);
          if (h == by_id.end() || r == by_id.end()) {
            throw ValidationError("pair '" + p.pair_id + "': no features for '" +
                                  (h == by_id.end() ? p.h_id : p.r_id) + "'");
          }
          p.h_units = *h->second;
          p.r_units = *r->second;
        }
        write_pair_file(pairs, q_out);
      }
    } else if (*sc) {
      const auto pairs = read_pair_file(sc_pairs);
      const MetricKind metric = parse_metric(sc_metric);
      std::vector<std::pair<std::string, double>> scores;
      for (const auto& p : pairs) {
        double v;
        if (sc_text) {
          if (!p.h_transcript || !p.r_transcript) throw ValidationError("pair '" + p.pair_id + "' lacks transcripts");
          v = text_metric(*p.h_transcript, *p.r_transcript, metric, sc_raw ? TextMode::raw : TextMode::tokenized);
        } else {
          v = unit_metric(p.h_units, p.r_units, metric);
        }
        scores.emplace_back(p.pair_id, v);
      }
      std::sort(scores.begin(), scores.end());
      if (sc_out.empty()) {
        out << "pair_id\tscore\n";
        for (const auto& [id, v] : scores) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.6f", v);
          out << id << '\t' << buf << '\n';
        }
      } else {
        ensure_parent(sc_out);
        write_score_file(scores, sc_out);
      }
    } else if (*mn) {
      auto utts = read_units_file(mn_in);
      std::map<std::string, std::string> transcripts;
      {
        std::istringstream ts(read_text(mn_transcripts));
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(ts, line)) {
          ++line_no;
          if (line.empty()) continue;
          const auto tab = line.find('\t');
          if (tab == std::string::npos) {
            throw ParseError(mn_transcripts + ": line " + std::to_string(line_no) + ": missing tab separator");
          }
          transcripts[line.substr(0, tab)] = line.substr(tab + 1);
        }
      }
      for (auto& u : utts) {
        auto it = transcripts.find(u.id);
        if (it != transcripts.end()) u.transcript = it->second;
      }
      MiningOptions opts;
      opts.n = mn_ngram;
      opts.max_pairs_per_ngram = mn_per_ngram;
      opts.max_total = mn_max;
      opts.seed = common.seed;
      auto pairs = mine_pairs(utts, opts);
      if (!mn_metric.empty()) {
        attach_targets(pairs, parse_metric(mn_metric), mn_raw ? TextMode::raw : TextMode::tokenized, common.threads);
      }
      err << "mine: " << pairs.size() << " pairs\n";
      ensure_parent(mn_out);
      write_pair_file(pairs, mn_out);
    } else if (*tr) {
      ModelConfig cfg;
      bool has_vocab = false;
      if (!tr_config.empty()) {
        const std::string text = read_text(tr_config);
        cfg = model_config_from_json(text);
        has_vocab = nlohmann::json::parse(text).contains("vocab_size");
      }
      cfg.seed = common.seed;
      const auto train_pairs = read_pair_file(tr_pairs);
      const auto dev_pairs = tr_dev.empty() ? std::vector<PairRecord>{} : read_pair_file(tr_dev);
      if (!has_vocab) {
        std::size_t k = 1;
        for (const auto* set : {&train_pairs, &dev_pairs}) {
          for (const auto& p : *set) k = std::max({k, p.h_units.vocab_size(), p.r_units.vocab_size()});
        }
        cfg.vocab_size = k;
      }
      std::ofstream log;
      TrainOptions opts;
      opts.threads = common.threads;
      if (!tr_log.empty()) {
        ensure_parent(tr_log);
        log.open(tr_log, std::ios::trunc);
        if (!log) throw Error("cannot open " + tr_log + " for writing");
        opts.log = &log;
      }
      opts.on_epoch = [&](const EpochRecord& e) {
        err << "train: epoch " << e.epoch;
        if (e.dev_pearson) err << " dev pearson " << *e.dev_pearson << " spearman " << *e.dev_spearman;
        err << "\n";
      };
      const auto res = train(train_pairs, dev_pairs, cfg, opts);
      ensure_parent(tr_out);
      save_model(res.final_model, tr_out);
      if (!tr_best.empty()) {
        ensure_parent(tr_best);
        save_model(res.best_model, tr_best);
      }
    } else if (*pr) {
      const MetricModel model = load_model(pr_model);
      const auto pairs = read_pair_file(pr_pairs, model.config().vocab_size);
      for (const auto& p : pairs) {
        if (!p.h_units.is_deduplicated() || !p.r_units.is_deduplicated()) {
          err << "predict: warning: pair '" << p.pair_id << "' is not de-duplicated\n";
          break;
        }
      }
      const auto pred = predict_all(pairs, model, common.threads);
      std::vector<std::pair<std::string, double>> scores;
      for (std::size_t i = 0; i < pairs.size(); ++i) scores.emplace_back(pairs[i].pair_id, pred[i]);
      std::sort(scores.begin(), scores.end());
      if (pr_out.empty()) {
        out << "pair_id\tscore\n";
        for (const auto& [id, v] : scores) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.6f", v);
          out << id << '\t' << buf << '\n';
        }
      } else {
        ensure_parent(pr_out);
        write_score_file(scores, pr_out);
      }
    } else if (*co) {
      std::map<std::string, double> gold;
      if (looks_like_pair_file(co_gold)) {
        for (const auto& p : read_pair_file(co_gold)) {
          if (!p.target) throw ValidationError("gold pair '" + p.pair_id + "' has no target");
          gold[p.pair_id] = *p.target;
        }
      } else {
        gold = read_score_file(co_gold);
      }
      const auto pred = read_score_file(co_pred);
      const EvalReport report = evaluate(pred, gold, co_bins);
      const std::string json = report_to_json(report);
      if (co_out.empty()) {
        out << json;
      } else {
        write_text(co_out, json);
      }
      if (!co_hist.empty()) write_text(co_hist, histogram_to_tsv(report.predicted_histogram));
      err << "correlate: n=" << report.n << " pearson=" << report.pearson << " spearman=" << report.spearman << "\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitOk;
}

}  // namespace s2s
