#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "s2s/error.hpp"
#include "s2s/model.hpp"

namespace s2s {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr int kFormatVersion = 1;

ordered_json config_json(const ModelConfig& c) {
  ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["embed_dim"] = c.embed_dim;
  j["encoder_mode"] = to_string(c.encoder_mode);
  j["attn_layers"] = c.attn_layers;
  j["attn_heads"] = c.attn_heads;
  j["ffn_dim"] = c.ffn_dim;
  j["max_len"] = c.max_len;
  j["head_hidden"] = c.head_hidden;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["freeze_frac"] = c.freeze_frac;
  j["seed"] = c.seed;
  return j;
}

ModelConfig config_from(const nlohmann::json& j) {
  static const std::set<std::string> known = {"vocab_size", "embed_dim",   "encoder_mode", "attn_layers",
                                              "attn_heads", "ffn_dim",     "max_len",      "head_hidden",
                                              "lr",         "batch_size",  "epochs",       "freeze_frac",
                                              "seed"};
  if (!j.is_object()) throw ParseError("model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ParseError("unknown model config key '" + key + "'");
  }
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.encoder_mode = parse_encoder_mode(j.value("encoder_mode", to_string(c.encoder_mode)));
  c.attn_layers = j.value("attn_layers", c.attn_layers);
  c.attn_heads = j.value("attn_heads", c.attn_heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.max_len = j.value("max_len", c.max_len);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.freeze_frac = j.value("freeze_frac", c.freeze_frac);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
}

std::string model_config_to_json(const ModelConfig& c) { return config_json(c).dump(2) + "\n"; }

std::string model_to_json(const MetricModel& model) {
  ordered_json j;
  j["format_version"] = kFormatVersion;
  j["config"] = config_json(model.config());
  ordered_json params = ordered_json::object();
  for (const auto& p : model.layout()) {
    ordered_json entry;
    entry["shape"] = p.vector ? ordered_json::array({p.cols}) : ordered_json::array({p.rows, p.cols});
    auto data = model.data().subspan(p.offset, p.size());
    entry["data"] = std::vector<double>(data.begin(), data.end());
    params[p.name] = std::move(entry);
  }
  j["parameters"] = std::move(params);
  return j.dump() + "\n";
}

MetricModel model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw ParseError("unsupported model format_version " + std::to_string(version));
    }
    MetricModel model(config_from(j.at("config")));
    const auto& params = j.at("parameters");
    if (params.size() != model.layout().size()) {
      throw ParseError("model file has " + std::to_string(params.size()) + " parameters, config implies " +
                       std::to_string(model.layout().size()));
    }
    for (const auto& p : model.layout()) {
      if (!params.contains(p.name)) throw ParseError("model file lacks parameter '" + p.name + "'");
      const auto& entry = params.at(p.name);
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const std::vector<std::size_t> expected =
          p.vector ? std::vector<std::size_t>{p.cols} : std::vector<std::size_t>{p.rows, p.cols};
      if (shape != expected) throw ParseError("shape mismatch for parameter '" + p.name + "'");
      const auto& data = entry.at("data");
      if (data.size() != p.size()) throw ParseError("data length mismatch for parameter '" + p.name + "'");
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double v = data[i].get<double>();
        if (!std::isfinite(v)) throw ParseError("non-finite value in parameter '" + p.name + "'");
        model.data()[p.offset + i] = v;
      }
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  } catch (const ValidationError& e) {
    throw ParseError(std::string("invalid model config: ") + e.what());
  }
}

void save_model(const MetricModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << model_to_json(model);
  if (!out) throw Error("write failed for " + path.string());
}

MetricModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return model_from_json(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace s2s
