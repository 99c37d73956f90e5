#include "s2s/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "s2s/error.hpp"
#include "s2s/parallel.hpp"

namespace s2s {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

std::string layer_prefix(std::size_t l) { return "layer" + std::to_string(l) + "."; }

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct LayerNormOut {
  RowMatrix hat;
  Eigen::VectorXd inv_std;
};

LayerNormOut layer_norm(const RowMatrix& x) {
  LayerNormOut out;
  const auto d = static_cast<double>(x.cols());
  const Eigen::VectorXd mean = x.rowwise().sum() / d;
  out.hat = x.colwise() - mean;
  const Eigen::VectorXd var = out.hat.rowwise().squaredNorm() / d;
  out.inv_std = (var.array() + kLayerNormEps).rsqrt();
  out.hat = out.inv_std.asDiagonal() * out.hat;
  return out;
}

// Gradient through hat = (x - mean) * inv_std, given d(hat).
RowMatrix layer_norm_backward(const RowMatrix& dhat, const LayerNormOut& ln) {
  const auto d = static_cast<double>(dhat.cols());
  const Eigen::VectorXd mean_d = dhat.rowwise().sum() / d;
  const Eigen::VectorXd mean_dh = (dhat.array() * ln.hat.array()).rowwise().sum() / d;
  RowMatrix dx = dhat;
  dx.colwise() -= mean_d;
  dx -= (ln.hat.array().colwise() * mean_dh.array()).matrix();
  return ln.inv_std.asDiagonal() * dx;
}

struct LayerCache {
  LayerNormOut ln1;
  RowMatrix attn_in;  // ln1 output + positions
  RowMatrix q, k, v;
  std::vector<RowMatrix> probs;
  RowMatrix concat;
  LayerNormOut ln2;
  RowMatrix ffn_in;
  RowMatrix pre_act;
  RowMatrix act;
};

struct EncodeCache {
  std::vector<std::size_t> tokens;
  std::vector<LayerCache> layers;
};

class GradView {
 public:
  GradView(const MetricModel& model, std::span<double> grad) : model_(model), grad_(grad) {}
  MetricModel::MatMap operator()(const std::string& name) const {
    const ParamInfo& p = model_.info(name);
    return {grad_.data() + p.offset, static_cast<Eigen::Index>(p.rows), static_cast<Eigen::Index>(p.cols)};
  }

 private:
  const MetricModel& model_;
  std::span<double> grad_;
};

RowVector encode_forward(const MetricModel& model, const UnitSequence& units, EncodeCache* cache) {
  const ModelConfig& cfg = model.config();
  std::vector<std::size_t> tokens = encoder_tokens(units, cfg);
  const auto len = static_cast<Eigen::Index>(tokens.size());
  const auto d = static_cast<Eigen::Index>(cfg.embed_dim);
  const auto emb = model.param("embedding");
  RowMatrix x(len, d);
  for (Eigen::Index i = 0; i < len; ++i) x.row(i) = emb.row(static_cast<Eigen::Index>(tokens[i]));

  if (cfg.encoder_mode == EncoderMode::attn) {
    const std::size_t heads = cfg.attn_heads;
    const auto dh = static_cast<Eigen::Index>(cfg.embed_dim / heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t l = 0; l < cfg.attn_layers; ++l) {
      const std::string pre = layer_prefix(l);
      LayerCache local;
      LayerCache& c = cache ? cache->layers.emplace_back() : local;

      c.ln1 = layer_norm(x);
      c.attn_in = (c.ln1.hat.array().rowwise() * model.param(pre + "ln1.gain").row(0).array()).matrix();
      c.attn_in.rowwise() += model.param(pre + "ln1.bias").row(0);
      c.attn_in += model.positions().topRows(len);
      c.q = c.attn_in * model.param(pre + "attn.wq");
      c.q.rowwise() += model.param(pre + "attn.bq").row(0);
      c.k = c.attn_in * model.param(pre + "attn.wk");
      c.k.rowwise() += model.param(pre + "attn.bk").row(0);
      c.v = c.attn_in * model.param(pre + "attn.wv");
      c.v.rowwise() += model.param(pre + "attn.bv").row(0);
      c.concat.resize(len, d);
      c.probs.resize(heads);
      for (std::size_t h = 0; h < heads; ++h) {
        const Eigen::Index col = static_cast<Eigen::Index>(h) * dh;
        RowMatrix s = (c.q.middleCols(col, dh) * c.k.middleCols(col, dh).transpose()) * scale;
        for (Eigen::Index i = 0; i < len; ++i) {
          const double m = s.row(i).maxCoeff();
          s.row(i) = (s.row(i).array() - m).exp().matrix();
          s.row(i) /= s.row(i).sum();
        }
        c.concat.middleCols(col, dh) = s * c.v.middleCols(col, dh);
        c.probs[h] = std::move(s);
      }
      RowMatrix y = c.concat * model.param(pre + "attn.wo");
      y.rowwise() += model.param(pre + "attn.bo").row(0);
      x += y;

      c.ln2 = layer_norm(x);
      c.ffn_in = (c.ln2.hat.array().rowwise() * model.param(pre + "ln2.gain").row(0).array()).matrix();
      c.ffn_in.rowwise() += model.param(pre + "ln2.bias").row(0);
      c.pre_act = c.ffn_in * model.param(pre + "ffn.w1");
      c.pre_act.rowwise() += model.param(pre + "ffn.b1").row(0);
      c.act = c.pre_act.unaryExpr([](double v) { return gelu(v); });
      RowMatrix z = c.act * model.param(pre + "ffn.w2");
      z.rowwise() += model.param(pre + "ffn.b2").row(0);
      x += z;
    }
  }
  if (cache) cache->tokens = std::move(tokens);
  return x.colwise().mean();
}

void encode_backward(const MetricModel& model, const EncodeCache& cache, const RowVector& d_out,
                     const GradView& grad) {
  const ModelConfig& cfg = model.config();
  const auto len = static_cast<Eigen::Index>(cache.tokens.size());
  RowMatrix dx = d_out.replicate(len, 1) / static_cast<double>(len);

  if (cfg.encoder_mode == EncoderMode::attn) {
    const std::size_t heads = cfg.attn_heads;
    const auto dh = static_cast<Eigen::Index>(cfg.embed_dim / heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t l = cfg.attn_layers; l-- > 0;) {
      const std::string pre = layer_prefix(l);
      const LayerCache& c = cache.layers[l];

      // Feed-forward sublayer: x_out = x_mid + ffn(ln2(x_mid)).
      grad(pre + "ffn.w2").noalias() += c.act.transpose() * dx;
      grad(pre + "ffn.b2") += dx.colwise().sum();
      RowMatrix d_act = dx * model.param(pre + "ffn.w2").transpose();
      RowMatrix d_pre = d_act.cwiseProduct(c.pre_act.unaryExpr([](double v) { return gelu_grad(v); }));
      grad(pre + "ffn.w1").noalias() += c.ffn_in.transpose() * d_pre;
      grad(pre + "ffn.b1") += d_pre.colwise().sum();
      RowMatrix d_ffn_in = d_pre * model.param(pre + "ffn.w1").transpose();
      grad(pre + "ln2.gain") += d_ffn_in.cwiseProduct(c.ln2.hat).colwise().sum();
      grad(pre + "ln2.bias") += d_ffn_in.colwise().sum();
      RowMatrix d_hat2 = (d_ffn_in.array().rowwise() * model.param(pre + "ln2.gain").row(0).array()).matrix();
      dx += layer_norm_backward(d_hat2, c.ln2);

      // Attention sublayer: x_mid = x_in + attn(ln1(x_in) + positions).
      grad(pre + "attn.wo").noalias() += c.concat.transpose() * dx;
      grad(pre + "attn.bo") += dx.colwise().sum();
      RowMatrix d_concat = dx * model.param(pre + "attn.wo").transpose();
      RowMatrix dq(len, d_concat.cols()), dk(len, d_concat.cols()), dv(len, d_concat.cols());
      for (std::size_t h = 0; h < heads; ++h) {
        const Eigen::Index col = static_cast<Eigen::Index>(h) * dh;
        const RowMatrix& p = c.probs[h];
        const auto d_o = d_concat.middleCols(col, dh);
        RowMatrix d_p = d_o * c.v.middleCols(col, dh).transpose();
        dv.middleCols(col, dh) = p.transpose() * d_o;
        const Eigen::VectorXd row_dot = (d_p.array() * p.array()).rowwise().sum();
        RowMatrix d_s = (p.array() * (d_p.colwise() - row_dot).array()).matrix() * scale;
        dq.middleCols(col, dh) = d_s * c.k.middleCols(col, dh);
        dk.middleCols(col, dh) = d_s.transpose() * c.q.middleCols(col, dh);
      }
      grad(pre + "attn.wq").noalias() += c.attn_in.transpose() * dq;
      grad(pre + "attn.bq") += dq.colwise().sum();
      grad(pre + "attn.wk").noalias() += c.attn_in.transpose() * dk;
      grad(pre + "attn.bk") += dk.colwise().sum();
      grad(pre + "attn.wv").noalias() += c.attn_in.transpose() * dv;
      grad(pre + "attn.bv") += dv.colwise().sum();
      RowMatrix d_attn_in = dq * model.param(pre + "attn.wq").transpose();
      d_attn_in.noalias() += dk * model.param(pre + "attn.wk").transpose();
      d_attn_in.noalias() += dv * model.param(pre + "attn.wv").transpose();
      grad(pre + "ln1.gain") += d_attn_in.cwiseProduct(c.ln1.hat).colwise().sum();
      grad(pre + "ln1.bias") += d_attn_in.colwise().sum();
      RowMatrix d_hat1 = (d_attn_in.array().rowwise() * model.param(pre + "ln1.gain").row(0).array()).matrix();
      dx += layer_norm_backward(d_hat1, c.ln1);
    }
  }

  auto d_emb = grad("embedding");
  for (Eigen::Index i = 0; i < len; ++i) d_emb.row(static_cast<Eigen::Index>(cache.tokens[i])) += dx.row(i);
}

struct HeadCache {
  RowVector pooled;
  RowVector hidden;  // tanh output
  double prob = 0.5;
};

double head_forward(const MetricModel& model, const RowVector& h, const RowVector& r, HeadCache* cache) {
  RowVector z = pool(h, r);
  RowVector hidden = z * model.param("head.w1");
  hidden += model.param("head.b1").row(0);
  hidden = hidden.array().tanh().matrix();
  const double logit = hidden.dot(model.param("head.w2").col(0).transpose()) + model.param("head.b2")(0, 0);
  const double p = sigmoid(logit);
  if (cache) {
    cache->pooled = std::move(z);
    cache->hidden = std::move(hidden);
    cache->prob = p;
  }
  return p;
}

}  // namespace

EncoderMode parse_encoder_mode(const std::string& s) {
  if (s == "embed_mean") return EncoderMode::embed_mean;
  if (s == "attn") return EncoderMode::attn;
  throw ValidationError("unknown encoder_mode '" + s + "' (expected embed_mean or attn)");
}

std::string to_string(EncoderMode m) { return m == EncoderMode::attn ? "attn" : "embed_mean"; }

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  if (c.ffn_dim == 0) c.ffn_dim = 4 * c.embed_dim;
  if (c.head_hidden == 0) c.head_hidden = c.embed_dim;
  c.validate();
  return c;
}

void ModelConfig::validate() const {
  if (vocab_size == 0 || embed_dim == 0 || batch_size == 0 || max_len < 2) {
    throw ValidationError("model dimensions must be positive and max_len >= 2");
  }
  if (encoder_mode == EncoderMode::attn) {
    if (attn_heads == 0 || embed_dim % attn_heads != 0) {
      throw ValidationError("embed_dim must be divisible by attn_heads");
    }
    if (attn_layers == 0) throw ValidationError("attn mode needs at least one layer");
  }
  if (!(freeze_frac >= 0.0 && freeze_frac <= 1.0)) throw ValidationError("freeze_frac must be in [0,1]");
  if (!(lr > 0.0)) throw ValidationError("lr must be positive");
}

MetricModel::MetricModel(const ModelConfig& config) : config_(config.resolved()) {
  const ModelConfig& c = config_;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols, bool vec, bool encoder) {
    layout_.push_back({std::move(name), rows, cols, offset, vec, encoder});
    offset += rows * cols;
  };
  const std::size_t d = c.embed_dim;
  add("embedding", c.vocab_size + 3, d, false, true);
  if (c.encoder_mode == EncoderMode::attn) {
    for (std::size_t l = 0; l < c.attn_layers; ++l) {
      const std::string p = layer_prefix(l);
      add(p + "ln1.gain", 1, d, true, true);
      add(p + "ln1.bias", 1, d, true, true);
      for (const char* w : {"q", "k", "v"}) {
        add(p + "attn.w" + w, d, d, false, true);
        add(p + "attn.b" + w, 1, d, true, true);
      }
      add(p + "attn.wo", d, d, false, true);
      add(p + "attn.bo", 1, d, true, true);
      add(p + "ln2.gain", 1, d, true, true);
      add(p + "ln2.bias", 1, d, true, true);
      add(p + "ffn.w1", d, c.ffn_dim, false, true);
      add(p + "ffn.b1", 1, c.ffn_dim, true, true);
      add(p + "ffn.w2", c.ffn_dim, d, false, true);
      add(p + "ffn.b2", 1, d, true, true);
    }
  }
  add("head.w1", 4 * d, c.head_hidden, false, false);
  add("head.b1", 1, c.head_hidden, true, false);
  add("head.w2", c.head_hidden, 1, false, false);
  add("head.b2", 1, 1, true, false);
  data_.assign(offset, 0.0);
  zero_parameters();

  positions_.resize(static_cast<Eigen::Index>(c.max_len), static_cast<Eigen::Index>(d));
  for (std::size_t pos = 0; pos < c.max_len; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * rate;
      positions_(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(i)) =
          (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
}

void MetricModel::zero_parameters() {
  std::fill(data_.begin(), data_.end(), 0.0);
  for (const auto& p : layout_) {
    if (p.name.ends_with(".gain")) std::fill_n(data_.begin() + static_cast<std::ptrdiff_t>(p.offset), p.size(), 1.0);
  }
}

MetricModel MetricModel::initialized(const ModelConfig& config) {
  MetricModel m(config);
  std::mt19937_64 rng(m.config().seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& p : m.layout_) {
    double stddev = 0.0;
    if (p.name == "embedding") {
      stddev = 1.0;
    } else if (!p.vector) {
      stddev = 1.0 / std::sqrt(static_cast<double>(p.rows));
      if (p.name.ends_with("attn.wo") || p.name.ends_with("ffn.w2")) stddev *= 0.5;
    }
    if (stddev == 0.0) continue;
    for (std::size_t i = 0; i < p.size(); ++i) m.data_[p.offset + i] = stddev * normal(rng);
  }
  return m;
}

const ParamInfo& MetricModel::info(const std::string& name) const {
  for (const auto& p : layout_) {
    if (p.name == name) return p;
  }
  throw ValidationError("model has no parameter '" + name + "'");
}

MetricModel::MatMap MetricModel::param(const std::string& name) {
  const ParamInfo& p = info(name);
  return {data_.data() + p.offset, static_cast<Eigen::Index>(p.rows), static_cast<Eigen::Index>(p.cols)};
}

MetricModel::ConstMatMap MetricModel::param(const std::string& name) const { return param(info(name)); }

MetricModel::ConstMatMap MetricModel::param(const ParamInfo& p) const {
  return {data_.data() + p.offset, static_cast<Eigen::Index>(p.rows), static_cast<Eigen::Index>(p.cols)};
}

std::vector<std::size_t> encoder_tokens(const UnitSequence& units, const ModelConfig& config) {
  const std::size_t keep = std::min(units.size(), config.max_len - 2);
  std::vector<std::size_t> tokens;
  tokens.reserve(keep + 2);
  tokens.push_back(config.bos_id());
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (units[i] >= config.vocab_size) {
      throw ValidationError("unit " + std::to_string(units[i]) + " is outside the model vocabulary of size " +
                            std::to_string(config.vocab_size));
    }
    if (i < keep) tokens.push_back(units[i]);
  }
  tokens.push_back(config.eos_id());
  return tokens;
}

RowVector encode(const UnitSequence& units, const MetricModel& model) {
  return encode_forward(model, units, nullptr);
}

RowVector pool(const RowVector& h, const RowVector& r) {
  if (h.size() != r.size()) throw ValidationError("pool: vectors differ in size");
  const Eigen::Index d = h.size();
  RowVector z(4 * d);
  z.segment(0, d) = h;
  z.segment(d, d) = r;
  z.segment(2 * d, d) = h.cwiseProduct(r);
  z.segment(3 * d, d) = (h - r).cwiseAbs();
  return z;
}

double predict(const PairRecord& pair, const MetricModel& model) {
  const RowVector h = encode(pair.h_units, model);
  const RowVector r = encode(pair.r_units, model);
  return head_forward(model, h, r, nullptr);
}

std::vector<double> predict_all(std::span<const PairRecord> pairs, const MetricModel& model, unsigned threads) {
  std::vector<double> out(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) { out[i] = predict(pairs[i], model); });
  return out;
}

double pair_loss(const PairRecord& pair, double target, const MetricModel& model) {
  const double e = predict(pair, model) - target;
  return e * e;
}

double pair_loss_and_grad(const PairRecord& pair, double target, const MetricModel& model, double scale,
                          std::span<double> grad, bool head_only) {
  if (grad.size() != model.num_params()) throw ValidationError("gradient buffer has the wrong size");
  EncodeCache hc, rc;
  const RowVector h = encode_forward(model, pair.h_units, head_only ? nullptr : &hc);
  const RowVector r = encode_forward(model, pair.r_units, head_only ? nullptr : &rc);
  HeadCache head;
  const double p = head_forward(model, h, r, &head);
  const double err = p - target;
  const GradView g(model, grad);

  const double d_logit = scale * 2.0 * err * p * (1.0 - p);
  g("head.b2")(0, 0) += d_logit;
  g("head.w2").col(0) += d_logit * head.hidden.transpose();
  const RowVector d_pre =
      (d_logit * model.param("head.w2").col(0).transpose()).cwiseProduct(
          (1.0 - head.hidden.array().square()).matrix());
  g("head.b1").row(0) += d_pre;
  g("head.w1").noalias() += head.pooled.transpose() * d_pre;
  if (head_only) return err * err;

  const RowVector dz = d_pre * model.param("head.w1").transpose();
  const Eigen::Index d = h.size();
  const RowVector sign = (h - r).unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); });
  const RowVector d_abs = dz.segment(3 * d, d).cwiseProduct(sign);
  const RowVector dh = dz.segment(0, d) + dz.segment(2 * d, d).cwiseProduct(r) + d_abs;
  const RowVector dr = dz.segment(d, d) + dz.segment(2 * d, d).cwiseProduct(h) - d_abs;
  encode_backward(model, hc, dh, g);
  encode_backward(model, rc, dr, g);
  return err * err;
}

GradCheckResult grad_check(const MetricModel& model, const PairRecord& pair, double target, double epsilon,
                           double rel_floor) {
  if (!(epsilon > 0.0)) throw ValidationError("grad_check epsilon must be positive");
  std::vector<double> analytic(model.num_params(), 0.0);
  pair_loss_and_grad(pair, target, model, 1.0, analytic);
  MetricModel probe = model;
  GradCheckResult res;
  for (const auto& p : model.layout()) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const std::size_t j = p.offset + i;
      const double orig = probe.data()[j];
      probe.data()[j] = orig + epsilon;
      const double up = pair_loss(pair, target, probe);
      probe.data()[j] = orig - epsilon;
      const double down = pair_loss(pair, target, probe);
      probe.data()[j] = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[j];
      if (!std::isfinite(numeric) || !std::isfinite(a)) res.all_finite = false;
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), rel_floor});
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p.name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace s2s
