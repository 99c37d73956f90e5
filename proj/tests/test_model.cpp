#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "s2s/error.hpp"
#include "s2s/model.hpp"

using namespace s2s;

namespace {

PairRecord random_pair(std::mt19937_64& rng, std::size_t k, std::size_t max_len = 12) {
  auto seq = [&] {
    std::vector<UnitId> u;
    const std::size_t len = 1 + rng() % max_len;
    while (u.size() < len) {
      const auto x = static_cast<UnitId>(rng() % k);
      if (u.empty() || u.back() != x) u.push_back(x);
    }
    return UnitSequence(u, k);
  };
  return PairRecord{"p", "h", "r", seq(), seq(), std::nullopt, std::nullopt, std::nullopt};
}

ModelConfig small(EncoderMode mode, std::size_t d, std::size_t layers) {
  ModelConfig c;
  c.vocab_size = 12;
  c.embed_dim = d;
  c.encoder_mode = mode;
  c.attn_layers = layers;
  c.attn_heads = 2;
  c.max_len = 32;
  c.seed = 17;
  return c;
}

}  // namespace

TEST_CASE("zero network predicts one half") {
  for (auto mode : {EncoderMode::embed_mean, EncoderMode::attn}) {
    const MetricModel m(small(mode, 8, 1));
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) CHECK(predict(random_pair(rng, 12), m) == 0.5);
  }
}

TEST_CASE("predictions lie strictly inside the unit interval") {
  std::mt19937_64 rng(2);
  for (auto mode : {EncoderMode::embed_mean, EncoderMode::attn}) {
    const auto m = MetricModel::initialized(small(mode, 16, 2));
    for (int i = 0; i < 50; ++i) {
      const double y = predict(random_pair(rng, 12), m);
      CHECK(y > 0.0);
      CHECK(y < 1.0);
    }
  }
}

TEST_CASE("pool layout") {
  RowVector h(2), r(2);
  h << 1.0, -2.0;
  r << 3.0, 0.5;
  const RowVector p = pool(h, r);
  REQUIRE(p.size() == 8);
  CHECK(p(0) == 1.0);
  CHECK(p(3) == 0.5);
  CHECK(p(4) == 3.0);
  CHECK(p(5) == -1.0);
  CHECK(p(6) == 2.0);
  CHECK(p(7) == 2.5);
}

TEST_CASE("encoder tokens wrap and truncate") {
  auto c = small(EncoderMode::attn, 8, 1);
  c.max_len = 5;
  const auto t = encoder_tokens(UnitSequence({3, 4, 5, 6, 7}, 12), c);
  CHECK(t == std::vector<std::size_t>{c.bos_id(), 3, 4, 5, c.eos_id()});
  CHECK(encoder_tokens(UnitSequence({}, 12), c) == std::vector<std::size_t>{c.bos_id(), c.eos_id()});
  CHECK_THROWS_AS(encoder_tokens(UnitSequence({20}, 30), c), ValidationError);
}

TEST_CASE("gradient check embed_mean d=4") {
  std::mt19937_64 rng(3);
  auto c = small(EncoderMode::embed_mean, 4, 1);
  const auto m = MetricModel::initialized(c);
  for (int trial = 0; trial < 3; ++trial) {
    const auto res = grad_check(m, random_pair(rng, 12), 0.3);
    CHECK(res.all_finite);
    INFO("worst ", res.worst_param, "[", res.worst_index, "]");
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradient check attn d=8 one layer") {
  std::mt19937_64 rng(4);
  const auto m = MetricModel::initialized(small(EncoderMode::attn, 8, 1));
  for (int trial = 0; trial < 3; ++trial) {
    const auto res = grad_check(m, random_pair(rng, 12), 0.8);
    CHECK(res.all_finite);
    INFO("worst ", res.worst_param, "[", res.worst_index, "]");
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("head-only gradients leave encoder slots untouched") {
  std::mt19937_64 rng(5);
  const auto m = MetricModel::initialized(small(EncoderMode::attn, 8, 1));
  std::vector<double> g(m.num_params(), 0.0);
  pair_loss_and_grad(random_pair(rng, 12), 0.1, m, 1.0, g, true);
  bool head_nonzero = false;
  for (const auto& p : m.layout()) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p.encoder) CHECK(g[p.offset + i] == 0.0);
      else head_nonzero |= g[p.offset + i] != 0.0;
    }
  }
  CHECK(head_nonzero);
}

TEST_CASE("model file round trip preserves predictions") {
  std::mt19937_64 rng(6);
  const auto m = MetricModel::initialized(small(EncoderMode::attn, 8, 2));
  const auto path = std::filesystem::temp_directory_path() / "s2s_test_model.json";
  save_model(m, path);
  const auto back = load_model(path);
  CHECK(std::equal(m.data().begin(), m.data().end(), back.data().begin(), back.data().end()));
  for (int i = 0; i < 100; ++i) {
    const auto p = random_pair(rng, 12);
    CHECK(predict(p, back) == predict(p, m));
  }
  CHECK(model_to_json(back) == model_to_json(m));
  std::filesystem::remove(path);
}

TEST_CASE("model file errors") {
  const auto m = MetricModel::initialized(small(EncoderMode::embed_mean, 4, 1));
  std::string text = model_to_json(m);
  auto bad_version = text;
  bad_version.replace(bad_version.find("\"format_version\":1"), 18, "\"format_version\":2");
  CHECK_THROWS_AS(model_from_json(bad_version), ParseError);
  auto bad_shape = text;
  bad_shape.replace(bad_shape.find("\"shape\":[15,4]"), 14, "\"shape\":[15,5]");
  CHECK_THROWS_AS(model_from_json(bad_shape), ParseError);
  CHECK_THROWS_AS(model_from_json("{"), ParseError);
}

TEST_CASE("config parsing and validation") {
  const auto c = model_config_from_json(R"({"vocab_size": 50, "embed_dim": 16, "encoder_mode": "embed_mean"})");
  CHECK(c.vocab_size == 50);
  CHECK(c.encoder_mode == EncoderMode::embed_mean);
  CHECK(c.resolved().ffn_dim == 64);
  CHECK(c.resolved().head_hidden == 16);
  CHECK_THROWS_AS(model_config_from_json(R"({"learning_rate": 1})"), ParseError);
  CHECK(model_config_from_json(model_config_to_json(c)).embed_dim == 16);
  ModelConfig bad;
  bad.embed_dim = 10;
  bad.attn_heads = 4;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = ModelConfig{};
  bad.freeze_frac = 1.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("predict_all is independent of thread count") {
  std::mt19937_64 rng(7);
  std::vector<PairRecord> ps;
  for (int i = 0; i < 40; ++i) ps.push_back(random_pair(rng, 12));
  const auto m = MetricModel::initialized(small(EncoderMode::attn, 8, 1));
  CHECK(predict_all(ps, m, 1) == predict_all(ps, m, 4));
}
