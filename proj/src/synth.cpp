#include "s2s/synth.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "s2s/error.hpp"
#include "s2s/parallel.hpp"

namespace s2s {

namespace {

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kLatentStream = 0;
constexpr std::uint64_t kRenderStream = 1;
constexpr std::uint64_t kMapStream = 2;
constexpr std::uint64_t kCentroidStream = 3;

void check_rate(double r, const char* name) {
  if (!(r >= 0.0 && r < 1.0)) throw ValidationError(std::string(name) + " must be in [0,1)");
}

std::string transcript_of(const std::vector<Token>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out.push_back(' ');
    out += "w" + std::to_string(toks[i]);
  }
  return out;
}

}  // namespace

void NoiseModel::validate() const {
  check_rate(sub_rate, "sub_rate");
  check_rate(ins_rate, "ins_rate");
  check_rate(del_rate, "del_rate");
  if (!(frame_jitter >= 0.0)) throw ValidationError("frame_jitter must be >= 0");
  if (dup_min < 1 || dup_max < dup_min) throw ValidationError("need 1 <= dup_min <= dup_max");
}

void SynthConfig::validate() const {
  noise.validate();
  if (latent_vocab < 2) throw ValidationError("latent_vocab must be >= 2");
  if (k < 2) throw ValidationError("k must be >= 2");
  if (n_pairs == 0) throw ValidationError("n_pairs must be positive");
  if (len_min < 1 || len_max < len_min) throw ValidationError("need 1 <= len_min <= len_max");
  if (units_per_token_min < 1 || units_per_token_max < units_per_token_min) {
    throw ValidationError("need 1 <= units_per_token_min <= units_per_token_max");
  }
  if (feature_dim == 0) throw ValidationError("feature_dim must be positive");
  // Count adjacent-distinct unit strings available for the token map.
  double capacity = 0.0;
  for (int len = units_per_token_min; len <= units_per_token_max; ++len) {
    capacity += static_cast<double>(k) * std::pow(static_cast<double>(k - 1), len - 1);
  }
  if (capacity < 2.0 * static_cast<double>(latent_vocab)) {
    throw ValidationError("k and units_per_token range are too small for an injective token map");
  }
  for (const auto& m : mixture) {
    if (!(m.weight > 0.0)) throw ValidationError("mixture weights must be positive");
    check_rate(m.sub_rate, "mixture sub_rate");
    check_rate(m.ins_rate, "mixture ins_rate");
    check_rate(m.del_rate, "mixture del_rate");
  }
}

std::vector<std::vector<UnitId>> token_unit_map(const SynthConfig& config, std::uint64_t seed) {
  auto rng = substream(seed, kMapStream, config.k);
  std::uniform_int_distribution<int> len_dist(config.units_per_token_min, config.units_per_token_max);
  std::uniform_int_distribution<UnitId> unit_dist(0, static_cast<UnitId>(config.k - 1));
  std::set<std::vector<UnitId>> used;
  std::vector<std::vector<UnitId>> map(config.latent_vocab);
  for (auto& units : map) {
    do {
      units.assign(static_cast<std::size_t>(len_dist(rng)), 0);
      for (std::size_t i = 0; i < units.size(); ++i) {
        do {
          units[i] = unit_dist(rng);
        } while (i > 0 && units[i] == units[i - 1]);
      }
    } while (!used.insert(units).second);
  }
  return map;
}

SynthCorpus gen_corpus(const SynthConfig& config, std::uint64_t seed, unsigned threads) {
  config.validate();
  const auto unit_map = token_unit_map(config, seed);

  SynthCorpus corpus;
  {
    auto rng = substream(seed, kCentroidStream, config.k);
    std::normal_distribution<double> normal(0.0, 1.0);
    corpus.true_codebook.centroids.resize(static_cast<Eigen::Index>(config.k),
                                          static_cast<Eigen::Index>(config.feature_dim));
    for (Eigen::Index r = 0; r < corpus.true_codebook.centroids.rows(); ++r) {
      for (Eigen::Index c = 0; c < corpus.true_codebook.centroids.cols(); ++c) {
        corpus.true_codebook.centroids(r, c) = normal(rng);
      }
    }
    corpus.true_codebook.distance = Distance::l2;
    corpus.true_codebook.seed = seed;
  }

  std::vector<MixtureComponent> mixture = config.mixture;
  if (mixture.empty()) {
    mixture.push_back({1.0, config.noise.sub_rate, config.noise.ins_rate, config.noise.del_rate});
  }
  std::vector<double> weights;
  for (const auto& m : mixture) weights.push_back(m.weight);

  corpus.pairs.resize(config.n_pairs);
  if (config.emit_features) corpus.features.resize(2 * config.n_pairs);
  const std::string width_ref = std::to_string(config.n_pairs);

  parallel_for(config.n_pairs, threads, [&](std::size_t i) {
    auto lat = substream(seed, kLatentStream, i);
    std::discrete_distribution<std::size_t> pick_component(weights.begin(), weights.end());
    const MixtureComponent& comp = mixture[pick_component(lat)];
    std::uniform_int_distribution<int> len_dist(config.len_min, config.len_max);
    std::uniform_int_distribution<Token> tok_dist(0, static_cast<Token>(config.latent_vocab - 1));
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    std::vector<Token> ref(static_cast<std::size_t>(len_dist(lat)));
    for (auto& t : ref) t = tok_dist(lat);
    std::vector<Token> hyp;
    hyp.reserve(ref.size() * 2);
    for (Token t : ref) {
      if (u01(lat) < comp.del_rate) {
        // deleted
      } else if (u01(lat) < comp.sub_rate) {
        Token s;
        do {
          s = tok_dist(lat);
        } while (s == t);
        hyp.push_back(s);
      } else {
        hyp.push_back(t);
      }
      if (u01(lat) < comp.ins_rate) hyp.push_back(tok_dist(lat));
    }

    PairRecord& p = corpus.pairs[i];
    std::string digits = std::to_string(i);
    const std::size_t width = std::max<std::size_t>(6, width_ref.size());
    digits.insert(0, width - std::min(width, digits.size()), '0');
    p.pair_id = "s" + digits;
    p.h_id = p.pair_id + ".h";
    p.r_id = p.pair_id + ".r";
    p.h_transcript = transcript_of(hyp);
    p.r_transcript = transcript_of(ref);
    p.target = config.metric == MetricKind::bleu
                   ? sentence_bleu(hyp, ref).value
                   : text_metric(*p.h_transcript, *p.r_transcript, MetricKind::chrf, TextMode::raw);

    auto ren = substream(seed, kRenderStream, i);
    std::uniform_int_distribution<int> dup_dist(config.noise.dup_min, config.noise.dup_max);
    std::normal_distribution<double> jitter(0.0, 1.0);
    auto render = [&](const std::vector<Token>& toks, FeatureSequence* feats) {
      std::vector<UnitId> frames;
      for (Token t : toks) {
        for (UnitId u : unit_map[t]) {
          const int d = dup_dist(ren);
          for (int r = 0; r < d; ++r) frames.push_back(u);
        }
      }
      if (feats) {
        feats->frames.resize(static_cast<Eigen::Index>(frames.size()),
                             static_cast<Eigen::Index>(config.feature_dim));
        for (std::size_t f = 0; f < frames.size(); ++f) {
          for (std::size_t c = 0; c < config.feature_dim; ++c) {
            const double v = corpus.true_codebook.centroids(frames[f], c) +
                             config.noise.frame_jitter * jitter(ren);
            feats->frames(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(c)) = static_cast<float>(v);
          }
        }
      }
      return UnitSequence(std::move(frames), config.k);
    };
    FeatureSequence* hf = config.emit_features ? &corpus.features[2 * i] : nullptr;
    FeatureSequence* rf = config.emit_features ? &corpus.features[2 * i + 1] : nullptr;
    p.h_units = render(hyp, hf);
    p.r_units = render(ref, rf);
    if (hf) {
      hf->id = p.h_id;
      rf->id = p.r_id;
    }
  });
  return corpus;
}

SynthConfig synth_config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    static const std::set<std::string> known = {
        "n_pairs",     "latent_vocab",  "k",      "len_min", "len_max", "units_per_token_min",
        "units_per_token_max", "feature_dim", "emit_features", "metric", "noise", "mixture"};
    if (!j.is_object()) throw ParseError("synth config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (!known.count(key)) throw ParseError("unknown synth config key '" + key + "'");
    }
    SynthConfig c;
    c.n_pairs = j.value("n_pairs", c.n_pairs);
    c.latent_vocab = j.value("latent_vocab", c.latent_vocab);
    c.k = j.value("k", c.k);
    c.len_min = j.value("len_min", c.len_min);
    c.len_max = j.value("len_max", c.len_max);
    c.units_per_token_min = j.value("units_per_token_min", c.units_per_token_min);
    c.units_per_token_max = j.value("units_per_token_max", c.units_per_token_max);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.emit_features = j.value("emit_features", c.emit_features);
    c.metric = parse_metric(j.value("metric", std::string("bleu")));
    if (j.contains("noise")) {
      const auto& n = j["noise"];
      c.noise.sub_rate = n.value("sub_rate", 0.0);
      c.noise.ins_rate = n.value("ins_rate", 0.0);
      c.noise.del_rate = n.value("del_rate", 0.0);
      c.noise.frame_jitter = n.value("frame_jitter", 0.0);
      c.noise.dup_min = n.value("dup_min", 1);
      c.noise.dup_max = n.value("dup_max", 1);
    }
    if (j.contains("mixture")) {
      for (const auto& m : j["mixture"]) {
        c.mixture.push_back({m.value("weight", 1.0), m.value("sub_rate", 0.0), m.value("ins_rate", 0.0),
                             m.value("del_rate", 0.0)});
      }
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("synth config: ") + e.what());
  }
}

SynthConfig read_synth_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open synth config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return synth_config_from_json(ss.str());
  } catch (const Error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string synth_config_to_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["n_pairs"] = c.n_pairs;
  j["latent_vocab"] = c.latent_vocab;
  j["k"] = c.k;
  j["len_min"] = c.len_min;
  j["len_max"] = c.len_max;
  j["units_per_token_min"] = c.units_per_token_min;
  j["units_per_token_max"] = c.units_per_token_max;
  j["feature_dim"] = c.feature_dim;
  j["emit_features"] = c.emit_features;
  j["metric"] = to_string(c.metric);
  j["noise"] = {{"sub_rate", c.noise.sub_rate},         {"ins_rate", c.noise.ins_rate},
                {"del_rate", c.noise.del_rate},         {"frame_jitter", c.noise.frame_jitter},
                {"dup_min", c.noise.dup_min},           {"dup_max", c.noise.dup_max}};
  auto mix = nlohmann::ordered_json::array();
  for (const auto& m : c.mixture) {
    mix.push_back({{"weight", m.weight}, {"sub_rate", m.sub_rate}, {"ins_rate", m.ins_rate}, {"del_rate", m.del_rate}});
  }
  j["mixture"] = std::move(mix);
  return j.dump(2);
}

}  // namespace s2s
