#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>

#include "s2s/error.hpp"
#include "s2s/model.hpp"
#include "s2s/parallel.hpp"
#include "s2s/stats.hpp"

namespace s2s {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void validate_training_pairs(std::span<const PairRecord> pairs, const ModelConfig& cfg, const char* which) {
  for (const auto& p : pairs) {
    if (!p.target) throw ValidationError(std::string(which) + " pair '" + p.pair_id + "' has no target");
    if (!(*p.target >= 0.0 && *p.target <= 1.0)) {
      throw ValidationError(std::string(which) + " pair '" + p.pair_id + "' has target outside [0,1]");
    }
    for (const UnitSequence* s : {&p.h_units, &p.r_units}) {
      if (!s->is_deduplicated()) {
        throw ValidationError(std::string(which) + " pair '" + p.pair_id +
                              "' has repeated adjacent units; run dedup before training");
      }
      for (UnitId u : s->units()) {
        if (u >= cfg.vocab_size) {
          throw ValidationError(std::string(which) + " pair '" + p.pair_id + "' has unit " + std::to_string(u) +
                                " outside vocabulary of size " + std::to_string(cfg.vocab_size));
        }
      }
    }
  }
}

EpochRecord evaluate_dev(std::span<const PairRecord> dev, const MetricModel& model, std::size_t epoch,
                         unsigned threads) {
  EpochRecord rec;
  rec.epoch = epoch;
  if (dev.size() < 2) return rec;
  const auto pred = predict_all(dev, model, threads);
  std::vector<double> gold;
  gold.reserve(dev.size());
  for (const auto& p : dev) gold.push_back(*p.target);
  try {
    rec.dev_pearson = pearson(pred, gold);
    rec.dev_spearman = spearman(pred, gold);
  } catch (const ValidationError&) {
    // Constant predictions or targets: correlation undefined for this epoch.
  }
  return rec;
}

void log_step(std::ostream& os, const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["mse"] = r.mse;
  j["encoder_frozen"] = r.encoder_frozen;
  os << j.dump() << '\n';
}

void log_epoch(std::ostream& os, const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["dev_pearson"] = r.dev_pearson ? nlohmann::ordered_json(*r.dev_pearson) : nlohmann::ordered_json(nullptr);
  j["dev_spearman"] = r.dev_spearman ? nlohmann::ordered_json(*r.dev_spearman) : nlohmann::ordered_json(nullptr);
  os << j.dump() << '\n';
}

}  // namespace

TrainResult train(std::span<const PairRecord> train_pairs, std::span<const PairRecord> dev_pairs,
                  const ModelConfig& config, const TrainOptions& options) {
  const ModelConfig cfg = config.resolved();
  if (train_pairs.empty()) throw ValidationError("training set is empty");
  if (cfg.epochs == 0) throw ValidationError("epochs must be positive");
  validate_training_pairs(train_pairs, cfg, "train");
  validate_training_pairs(dev_pairs, cfg, "dev");

  MetricModel model = MetricModel::initialized(cfg);
  MetricModel best = model;
  std::optional<double> best_pearson;

  const std::size_t n = train_pairs.size();
  const std::size_t batch = std::min(cfg.batch_size, n);
  TrainState st;
  st.steps_per_epoch = (n + batch - 1) / batch;
  st.freeze_steps = static_cast<std::size_t>(std::floor(cfg.freeze_frac * static_cast<double>(st.steps_per_epoch)));
  st.adam_m.assign(model.num_params(), 0.0);
  st.adam_v.assign(model.num_params(), 0.0);

  const std::size_t n_params = model.num_params();
  std::vector<std::vector<double>> slots(batch, std::vector<double>(n_params, 0.0));
  std::vector<double> slot_loss(batch, 0.0);
  std::vector<double> grad(n_params, 0.0);
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    st.epoch = epoch + 1;
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x5EEDu};
    std::mt19937_64 shuffle_rng(seq);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t s = 0; s < st.steps_per_epoch; ++s) {
      const bool frozen = st.step < st.freeze_steps;
      st.encoder_frozen = frozen;
      const std::size_t lo = s * batch;
      const std::size_t hi = std::min(n, lo + batch);
      const std::size_t b = hi - lo;
      const double scale = 1.0 / static_cast<double>(b);

      parallel_for(b, options.threads, [&](std::size_t e) {
        std::fill(slots[e].begin(), slots[e].end(), 0.0);
        const PairRecord& p = train_pairs[order[lo + e]];
        slot_loss[e] = pair_loss_and_grad(p, *p.target, model, scale, slots[e], frozen);
      });
      // Fixed-order reduction keeps the result independent of thread count.
      double mse = 0.0;
      for (std::size_t e = 0; e < b; ++e) mse += slot_loss[e];
      mse *= scale;
      if (!std::isfinite(mse)) {
        throw Error("non-finite training loss at step " + std::to_string(st.step + 1));
      }
      const std::size_t chunks = 64;
      const std::size_t chunk = (n_params + chunks - 1) / chunks;
      parallel_for(chunks, options.threads, [&](std::size_t c) {
        const std::size_t a = c * chunk;
        const std::size_t z = std::min(n_params, a + chunk);
        for (std::size_t j = a; j < z; ++j) {
          double g = 0.0;
          for (std::size_t e = 0; e < b; ++e) g += slots[e][j];
          grad[j] = g;
        }
      });

      ++st.head_updates;
      if (!frozen) ++st.encoder_updates;
      const double head_c1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.head_updates));
      const double head_c2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.head_updates));
      const double enc_c1 = 1.0 - std::pow(kBeta1, static_cast<double>(std::max<std::size_t>(1, st.encoder_updates)));
      const double enc_c2 = 1.0 - std::pow(kBeta2, static_cast<double>(std::max<std::size_t>(1, st.encoder_updates)));
      auto params = model.data();
      for (const auto& p : model.layout()) {
        if (p.encoder && frozen) continue;
        const double c1 = p.encoder ? enc_c1 : head_c1;
        const double c2 = p.encoder ? enc_c2 : head_c2;
        for (std::size_t j = p.offset; j < p.offset + p.size(); ++j) {
          const double g = grad[j];
          st.adam_m[j] = kBeta1 * st.adam_m[j] + (1.0 - kBeta1) * g;
          st.adam_v[j] = kBeta2 * st.adam_v[j] + (1.0 - kBeta2) * g * g;
          const double m_hat = st.adam_m[j] / c1;
          const double v_hat = st.adam_v[j] / c2;
          params[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + kAdamEps);
        }
      }

      ++st.step;
      st.loss_history.push_back(mse);
      const StepRecord rec{st.step, st.epoch, mse, frozen};
      if (options.log) log_step(*options.log, rec);
      if (options.on_step) options.on_step(rec, model);
    }
    st.encoder_frozen = st.step < st.freeze_steps;

    EpochRecord er = evaluate_dev(dev_pairs, model, st.epoch, options.threads);
    st.dev_history.push_back(er);
    if (options.log) log_epoch(*options.log, er);
    if (options.on_epoch) options.on_epoch(er);
    if (er.dev_pearson && (!best_pearson || *er.dev_pearson > *best_pearson)) {
      best_pearson = er.dev_pearson;
      best = model;
    }
  }
  if (!best_pearson) best = model;
  return TrainResult{std::move(model), std::move(best), std::move(st)};
}

}  // namespace s2s
