#pragma once

// Flat `key = value` configuration with namespaced keys. One file drives the
// whole pipeline; the CLI layers `--set key=value` overrides on top. Unknown
// keys are usage errors so typos cannot silently fall back to defaults.

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "higen/corpus.hpp"
#include "higen/errors.hpp"
#include "higen/model.hpp"
#include "higen/objectives.hpp"

namespace higen {

class Config {
 public:
  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> kDefaults = {
        {"seed", "1"},
        // synthetic data
        {"data.dir", ""},
        {"data.branching", "4,3"},
        {"data.docs_per_leaf", "50"},
        {"data.zipf_s", "1.0"},
        {"data.topic_vocab", "20"},
        {"data.len_min", "12"},
        {"data.len_max", "24"},
        {"data.noise_rate", "0.2"},
        {"data.noise_vocab", "150"},
        {"data.split", "0.6,0.2,0.2"},
        {"data.pretrain_docs_per_leaf", "50"},
        {"data.pretrain_perturbation", "0.3"},
        {"data.min_count", "1"},
        // label masking
        {"mask.p_level", "0.3"},
        {"mask.p_span", "0.15"},
        {"mask.span_mean", "2.0"},
        // model
        {"model.d_model", "128"},
        {"model.n_layers", "2"},
        {"model.n_heads", "4"},
        {"model.d_ffn", "256"},
        {"model.proj_dim", "64"},
        {"model.max_len", "256"},
        {"model.dropout", "0.0"},
        // training
        {"train.batch_size", "8"},
        {"train.lr", "3e-4"},
        {"train.warmup_frac", "0.1"},
        {"train.pretrain_epochs", "10"},
        {"train.epochs", "30"},
        {"train.grad_clip", "1.0"},
        {"train.adam_beta1", "0.9"},
        {"train.adam_beta2", "0.999"},
        {"train.adam_eps", "1e-8"},
        {"train.no_pretrain", "false"},
        {"train.no_output_space", "false"},
        {"train.no_token_constraint", "false"},
        {"train.no_semantic", "false"},
        // losses
        {"loss.lambda1", "1e-3"},
        {"loss.lambda2", "1e-5"},
        {"loss.lambda3", "1.0"},
        {"loss.alphas", "0.05,0.1"},
        {"loss.restrict_edges_to_gold_path", "false"},
        // evaluation / decoding
        {"eval.constrained", "false"},
        {"eval.max_steps", "32"},
        // hyperparameter grid
        {"grid.lambda1", "1e-2,1e-3,1e-4,1e-5"},
        {"grid.lambda2", "1e-2,1e-3,1e-4,1e-5,1e-6"},
        // data-efficiency curve
        {"de.proportions", "0.1,0.3,0.5,0.7"},
        {"de.seeds", "3"},
        // gradient checking
        {"gradcheck.points", "50"},
        {"gradcheck.eps", "1e-4"},
        {"gradcheck.tol", "1e-4"},
    };
    return kDefaults;
  }

  Config() : values_(defaults()) {}

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = trim(line);
      if (s.empty() || s[0] == '#') continue;
      size_t eq = s.find('=');
      if (eq == std::string::npos)
        throw UsageError("config line " + std::to_string(lineno) + " is not key = value");
      cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) {
    if (!defaults().count(key)) throw UsageError("unknown config key: " + key);
    values_[key] = value;
  }
  // One `--set key=value` override.
  void set_kv(const std::string& kv) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw UsageError("override must be key=value, got: " + kv);
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key: " + key);
    return it->second;
  }
  long get_int(const std::string& key) const {
    try {
      size_t pos;
      long v = std::stol(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw UsageError("config key " + key + " is not an integer: " + get(key));
    }
  }
  double get_double(const std::string& key) const {
    try {
      size_t pos;
      double v = std::stod(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw UsageError("config key " + key + " is not a number: " + get(key));
    }
  }
  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("config key " + key + " is not a boolean: " + v);
  }
  std::vector<double> get_double_list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw UsageError("config key " + key + " has a bad list entry: " + item);
      }
    }
    return out;
  }
  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (double v : get_double_list(key)) out.push_back(static_cast<int>(v));
    return out;
  }

  uint64_t seed() const { return static_cast<uint64_t>(get_int("seed")); }

  SyntheticSpec synthetic_spec() const {
    SyntheticSpec s;
    s.branching = get_int_list("data.branching");
    s.docs_per_leaf = static_cast<int>(get_int("data.docs_per_leaf"));
    s.zipf_s = get_double("data.zipf_s");
    s.topic_vocab = static_cast<int>(get_int("data.topic_vocab"));
    s.len_min = static_cast<int>(get_int("data.len_min"));
    s.len_max = static_cast<int>(get_int("data.len_max"));
    s.noise_rate = get_double("data.noise_rate");
    s.noise_vocab = static_cast<int>(get_int("data.noise_vocab"));
    s.seed = seed();
    s.validate();
    return s;
  }
  SyntheticSpec pretrain_spec() const {
    SyntheticSpec s = synthetic_spec();
    s.docs_per_leaf = static_cast<int>(get_int("data.pretrain_docs_per_leaf"));
    s.pool_perturbation = get_double("data.pretrain_perturbation");
    s.seed = seed() ^ 0x9e3779b97f4a7c15ULL;  // distinct stream, same pools modulo perturbation
    s.validate();
    return s;
  }
  MaskSpec mask_spec() const {
    MaskSpec m;
    m.p_level = get_double("mask.p_level");
    m.p_span = get_double("mask.p_span");
    m.span_mean = get_double("mask.span_mean");
    m.seed = seed();
    m.validate();
    return m;
  }
  ModelConfig model_config(int vocab_size) const {
    ModelConfig m;
    m.vocab_size = vocab_size;
    m.d_model = static_cast<int>(get_int("model.d_model"));
    m.n_layers = static_cast<int>(get_int("model.n_layers"));
    m.n_heads = static_cast<int>(get_int("model.n_heads"));
    m.d_ffn = static_cast<int>(get_int("model.d_ffn"));
    m.proj_dim = static_cast<int>(get_int("model.proj_dim"));
    m.max_len = static_cast<int>(get_int("model.max_len"));
    m.dropout = get_double("model.dropout");
    m.validate();
    return m;
  }
  LossWeights loss_weights() const {
    LossWeights w;
    w.lambda1 = get_double("loss.lambda1");
    w.lambda2 = get_double("loss.lambda2");
    w.lambda3 = get_double("loss.lambda3");
    w.alphas = get_double_list("loss.alphas");
    w.validate();
    return w;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write config file: " + path);
    for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace higen
