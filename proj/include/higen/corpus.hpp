#pragma once

// Dataset model and seeded synthetic data generation.
//
// The generator builds a taxonomy of pseudo-word topics and emits documents as
// mixtures of leaf-level topic words, ancestor-level topic words, label-name
// words and shared noise. Leaf frequencies follow a Zipf(s) profile so the
// long-tail analyses have something to bite on. Everything is a pure function
// of the spec (including the seed): identical specs give byte-identical data.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "higen/errors.hpp"
#include "higen/rng.hpp"
#include "higen/taxonomy.hpp"
#include "higen/vocab.hpp"

namespace higen {

struct Example {
  std::string id;
  std::vector<std::string> doc;
  LabelSet labels;
};

struct MaskSpec {
  double p_level = 0.3;   // chance a whole level collapses to one <mask>
  double p_span = 0.15;   // chance a surviving level gets span infilling
  double span_mean = 2.0; // mean geometric span length
  uint64_t seed = 0;

  void validate() const {
    if (p_level < 0 || p_level > 1 || p_span < 0 || p_span > 1)
      throw Error("mask probabilities must lie in [0,1]");
    if (span_mean < 1.0) throw Error("mask.span_mean must be >= 1");
  }
};

struct SyntheticSpec {
  std::vector<int> branching{4, 3};  // nodes per level-1 parent chain
  int docs_per_leaf = 50;            // before Zipf skew
  double zipf_s = 1.0;
  int topic_vocab = 20;              // pool words per node
  int len_min = 12;
  int len_max = 24;
  double noise_rate = 0.2;
  int noise_vocab = 150;
  double pool_perturbation = 0.0;  // fraction of each pool swapped for variants
  uint64_t seed = 1;

  void validate() const {
    if (branching.empty()) throw Error("data.branching must be non-empty");
    for (int b : branching)
      if (b <= 0) throw Error("data.branching entries must be positive");
    if (docs_per_leaf <= 0) throw Error("data.docs_per_leaf must be positive");
    if (zipf_s < 0) throw Error("data.zipf_s must be >= 0");
    if (topic_vocab <= 0) throw Error("data.topic_vocab must be positive");
    if (len_min <= 0 || len_max < len_min) throw Error("bad document length range");
    if (noise_rate < 0 || noise_rate > 1) throw Error("data.noise_rate must lie in [0,1]");
    if (pool_perturbation < 0 || pool_perturbation > 1)
      throw Error("data.pool_perturbation must lie in [0,1]");
  }

  int num_leaves() const {
    int n = 1;
    for (int b : branching) n *= b;
    return n;
  }
};

struct PretrainExample {
  std::string id;
  std::vector<int> input_ids;   // encode(doc) ++ </s> ++ encode(masked label)
  std::vector<int> target_ids;  // encode(original label sequence)
  std::vector<std::string> masked;  // masked label tokens, for the cache file
};

// ---------------------------------------------------------------------------
// Pseudo-word factory: injective index -> word mapping used for topic pools,
// label names and noise. Distinct indices never collide.

inline std::string pseudo_word(uint64_t index) {
  static const char* kSyllables[] = {
      "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du",
      "fa", "fe", "fi", "fo", "fu", "ga", "ge", "gi", "go", "gu",
      "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu",
      "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu",
      "pa", "pe", "pi", "po", "pu", "ra", "re", "ri", "ro", "ru"};
  constexpr uint64_t kBase = 50;
  std::string w;
  uint64_t v = index;
  for (int i = 0; i < 3; ++i) {
    w += kSyllables[v % kBase];
    v /= kBase;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Synthetic generator internals.

namespace detail {

// Word-pool layout for a given spec shape. Independent of the seed so that a
// perturbed respin (pretraining corpus) shares the unperturbed fraction of
// every pool with the original corpus.
struct TopicPools {
  std::vector<std::string> noise;
  std::vector<std::vector<std::string>> name_words;  // per node, 2 words
  std::vector<std::vector<std::string>> pool;        // per node, topic_vocab words

  static TopicPools build(const SyntheticSpec& spec, int num_nodes) {
    TopicPools p;
    uint64_t next = 0;
    p.noise.reserve(spec.noise_vocab);
    for (int i = 0; i < spec.noise_vocab; ++i) p.noise.push_back(pseudo_word(next++));
    p.name_words.resize(num_nodes);
    p.pool.resize(num_nodes);
    for (int n = 0; n < num_nodes; ++n) {
      p.name_words[n] = {pseudo_word(next), pseudo_word(next + 1)};
      next += 2;
      for (int i = 0; i < spec.topic_vocab; ++i) p.pool[n].push_back(pseudo_word(next++));
    }
    if (spec.pool_perturbation > 0) {
      int swap = static_cast<int>(std::ceil(spec.pool_perturbation * spec.topic_vocab));
      swap = std::min(swap, spec.topic_vocab);
      for (int n = 0; n < num_nodes; ++n) {
        for (int i = 0; i < swap; ++i)
          p.pool[n][spec.topic_vocab - 1 - i] = pseudo_word(next + n * spec.topic_vocab + i);
      }
    }
    return p;
  }
};

// Largest-remainder apportionment of `total` documents over Zipf(s) ranks.
inline std::vector<int> zipf_counts(int ranks, double s, int total) {
  std::vector<double> weight(ranks);
  double norm = 0;
  for (int r = 1; r <= ranks; ++r) {
    weight[r - 1] = std::pow(static_cast<double>(r), -s);
    norm += weight[r - 1];
  }
  std::vector<int> count(ranks);
  std::vector<std::pair<double, int>> frac(ranks);
  int assigned = 0;
  for (int r = 0; r < ranks; ++r) {
    double exact = total * weight[r] / norm;
    count[r] = static_cast<int>(std::floor(exact));
    frac[r] = {exact - count[r], r};
    assigned += count[r];
  }
  std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (int i = 0; i < total - assigned; ++i) ++count[frac[i % ranks].second];
  return count;
}

}  // namespace detail

// Builds the complete taxonomy for a branching profile: node ids are
// "n<level>_<index>" and names are two unique pseudo-words.
inline Taxonomy synthetic_taxonomy(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<LabelNode> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
  std::vector<std::string> prev_level;
  int node_counter = 0;
  // Names reuse the same factory as the pools but from a reserved high range.
  for (size_t lvl = 0; lvl < spec.branching.size(); ++lvl) {
    std::vector<std::string> cur;
    if (lvl == 0) {
      for (int i = 0; i < spec.branching[0]; ++i) {
        std::string id = "n1_" + std::to_string(i);
        nodes.push_back(LabelNode{id, "", 0, {}});
        edges.emplace_back(kRootToken, id);
        cur.push_back(id);
        ++node_counter;
      }
    } else {
      int idx = 0;
      for (const auto& parent : prev_level) {
        for (int i = 0; i < spec.branching[lvl]; ++i) {
          std::string id = "n" + std::to_string(lvl + 1) + "_" + std::to_string(idx++);
          nodes.push_back(LabelNode{id, "", 0, {}});
          edges.emplace_back(parent, id);
          cur.push_back(id);
          ++node_counter;
        }
      }
    }
    prev_level = cur;
  }
  detail::TopicPools pools = detail::TopicPools::build(spec, node_counter);
  for (int i = 0; i < node_counter; ++i)
    nodes[i].name = pools.name_words[i][0] + " " + pools.name_words[i][1];
  return Taxonomy::build(nodes, edges);
}

// Generates the dataset. Leaf ranks follow declaration order; documents mix
// leaf topic words, ancestor topic words, label-name words and noise.
inline std::pair<Taxonomy, std::vector<Example>> generate_synthetic(
    const SyntheticSpec& spec) {
  spec.validate();
  Taxonomy t = synthetic_taxonomy(spec);
  detail::TopicPools pools = detail::TopicPools::build(spec, t.size());
  std::unordered_map<std::string, int> node_idx;
  for (int i = 0; i < t.size(); ++i) node_idx[t.nodes()[i].id] = i;

  std::vector<std::string> leaves;
  for (const auto& n : t.nodes())
    if (n.level == static_cast<int>(spec.branching.size())) leaves.push_back(n.id);

  const int total = spec.docs_per_leaf * static_cast<int>(leaves.size());
  std::vector<int> counts =
      detail::zipf_counts(static_cast<int>(leaves.size()), spec.zipf_s, total);

  Rng rng(spec.seed);
  std::vector<Example> data;
  data.reserve(total);
  for (size_t li = 0; li < leaves.size(); ++li) {
    // Root-to-leaf path, shallowest first.
    std::vector<int> path;
    std::string cur = leaves[li];
    while (true) {
      path.push_back(node_idx[cur]);
      const auto& parents = t.node(cur).parents;
      if (parents.empty()) break;
      cur = parents[0];
    }
    std::reverse(path.begin(), path.end());

    for (int d = 0; d < counts[li]; ++d) {
      Example ex;
      ex.id = "ex" + std::to_string(data.size());
      for (const auto& idp : path) ex.labels.insert(t.nodes()[idp].id);
      int len = static_cast<int>(rng.uniform_range(spec.len_min, spec.len_max));
      ex.doc.reserve(len);
      for (int w = 0; w < len; ++w) {
        double u = rng.uniform();
        if (u < spec.noise_rate) {
          ex.doc.push_back(pools.noise[rng.uniform_int(pools.noise.size())]);
          continue;
        }
        // 60% of topical words from the leaf, the rest spread over ancestors.
        int node;
        if (path.size() == 1 || rng.uniform() < 0.6) {
          node = path.back();
        } else {
          node = path[rng.uniform_int(path.size() - 1)];
        }
        if (rng.uniform() < 0.25) {
          const auto& nm = pools.name_words[node];
          ex.doc.push_back(nm[rng.uniform_int(nm.size())]);
        } else {
          ex.doc.push_back(pools.pool[node][rng.uniform_int(pools.pool[node].size())]);
        }
      }
      data.push_back(std::move(ex));
    }
  }
  rng.shuffle(data);
  for (size_t i = 0; i < data.size(); ++i) data[i].id = "ex" + std::to_string(i);
  return {std::move(t), std::move(data)};
}

// ---------------------------------------------------------------------------
// Masked-label construction (pretraining).

// Splits a label sequence into per-level runs of node tokens, keeping the
// structural skeleton implicit: out[k] holds level k+1's tokens.
inline std::vector<std::vector<std::string>> split_levels(const LabelSequence& seq) {
  std::vector<std::vector<std::string>> levels;
  std::vector<std::string> cur;
  bool saw_root = false;
  for (const auto& tok : seq) {
    if (tok == kRootToken) {
      saw_root = true;
      continue;
    }
    if (tok == kLevelSep) {
      levels.push_back(cur);
      cur.clear();
      continue;
    }
    cur.push_back(tok);
  }
  if (!saw_root) throw Error("label sequence does not start with <root>");
  levels.push_back(cur);
  return levels;
}

// Masks whole levels with probability p_level and spans inside surviving
// levels with probability p_span (one <mask> per span, BART-style infilling).
// Structural tokens are untouchable. At least one token always ends up masked:
// fruitless draws are resampled, and after 16 attempts one level is forced.
inline LabelSequence mask_label_sequence(const LabelSequence& seq,
                                         const MaskSpec& spec, Rng& rng) {
  spec.validate();
  const auto levels = split_levels(seq);

  auto assemble = [&](const std::vector<std::vector<std::string>>& lv) {
    LabelSequence out{kRootToken};
    for (size_t k = 0; k < lv.size(); ++k) {
      if (k > 0) out.push_back(kLevelSep);
      for (const auto& tok : lv[k]) out.push_back(tok);
    }
    return out;
  };

  for (int attempt = 0; attempt < 16; ++attempt) {
    auto masked = levels;
    int n_masked = 0;
    for (auto& lv : masked) {
      if (lv.empty()) continue;
      if (rng.bernoulli(spec.p_level)) {
        n_masked += static_cast<int>(lv.size());
        lv.assign(1, kMaskToken);
        continue;
      }
      if (rng.bernoulli(spec.p_span)) {
        int start = static_cast<int>(rng.uniform_int(lv.size()));
        int len = std::min<int>(rng.geometric(spec.span_mean),
                                static_cast<int>(lv.size()) - start);
        if (len > 0) {
          n_masked += len;
          lv.erase(lv.begin() + start, lv.begin() + start + len);
          lv.insert(lv.begin() + start, kMaskToken);
        }
      }
    }
    if (n_masked > 0) return assemble(masked);
  }
  auto masked = levels;
  std::vector<int> non_empty;
  for (size_t k = 0; k < masked.size(); ++k)
    if (!masked[k].empty()) non_empty.push_back(static_cast<int>(k));
  if (non_empty.empty()) throw Error("label sequence has no node tokens to mask");
  masked[non_empty[rng.uniform_int(non_empty.size())]].assign(1, kMaskToken);
  return assemble(masked);
}

inline PretrainExample build_pretrain_example(const Example& ex, const Taxonomy& t,
                                              const MaskSpec& spec, Rng& rng,
                                              const Vocabulary& v, int max_len) {
  LabelSequence seq = t.linearize(ex.labels);
  LabelSequence masked = mask_label_sequence(seq, spec, rng);

  PretrainExample out;
  out.id = ex.id;
  for (const auto& w : ex.doc) out.input_ids.push_back(v.id(w));
  out.input_ids.push_back(v.eos_id());
  for (int id : v.encode_label_sequence(masked)) out.input_ids.push_back(id);
  out.target_ids = v.encode_label_sequence(seq);
  out.masked = std::move(masked);

  if (static_cast<int>(out.input_ids.size()) > max_len ||
      static_cast<int>(out.target_ids.size()) + 2 > max_len)
    throw SequenceTooLong("pretraining example '" + ex.id + "' exceeds max_len");
  return out;
}

// ---------------------------------------------------------------------------
// Splits, subsampling, overlap.

// Stratum key: the sorted deepest-level labels of the example.
inline std::string stratum_key(const Taxonomy& t, const Example& ex) {
  int deepest = 0;
  for (const auto& id : ex.labels.ids) deepest = std::max(deepest, t.node(id).level);
  std::string key;
  for (const auto& id : ex.labels.ids)
    if (t.node(id).level == deepest) key += id + "|";
  return key;
}

struct SplitResult {
  std::vector<Example> train, val, test;
};

inline SplitResult stratified_split(const Taxonomy& t, std::vector<Example> data,
                                    const std::array<double, 3>& fractions,
                                    uint64_t seed) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions)
    if (f < 0) throw InvalidFractions("split fractions must be non-negative");
  if (std::abs(sum - 1.0) > 1e-9)
    throw InvalidFractions("split fractions must sum to 1");

  std::map<std::string, std::vector<Example>> strata;
  for (auto& ex : data) strata[stratum_key(t, ex)].push_back(std::move(ex));

  Rng rng(seed);
  SplitResult out;
  for (auto& [key, bucket] : strata) {
    rng.shuffle(bucket);
    const int n = static_cast<int>(bucket.size());
    int n_train = static_cast<int>(std::floor(fractions[0] * n + 0.5));
    int n_val = static_cast<int>(std::floor(fractions[1] * n + 0.5));
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);
    for (int i = 0; i < n; ++i) {
      if (i < n_train)
        out.train.push_back(std::move(bucket[i]));
      else if (i < n_train + n_val)
        out.val.push_back(std::move(bucket[i]));
      else
        out.test.push_back(std::move(bucket[i]));
    }
  }
  rng.shuffle(out.train);
  rng.shuffle(out.val);
  rng.shuffle(out.test);
  return out;
}

inline std::vector<Example> subsample(const Taxonomy& t,
                                      const std::vector<Example>& train,
                                      double proportion, uint64_t seed) {
  if (proportion <= 0.0 || proportion > 1.0)
    throw InvalidFractions("subsample proportion must lie in (0,1]");
  if (proportion == 1.0) return train;

  std::map<std::string, std::vector<int>> strata;
  for (size_t i = 0; i < train.size(); ++i)
    strata[stratum_key(t, train[i])].push_back(static_cast<int>(i));

  Rng rng(seed);
  std::vector<int> keep;
  for (auto& [key, idxs] : strata) {
    rng.shuffle(idxs);
    int take = std::max<int>(
        1, static_cast<int>(std::floor(proportion * idxs.size() + 0.5)));
    take = std::min<int>(take, static_cast<int>(idxs.size()));
    for (int i = 0; i < take; ++i) keep.push_back(idxs[i]);
  }
  std::sort(keep.begin(), keep.end());
  std::vector<Example> out;
  out.reserve(keep.size());
  for (int i : keep) out.push_back(train[i]);
  return out;
}

inline const std::set<std::string>& default_stop_words() {
  static const std::set<std::string> kStop = {
      "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has",
      "in", "is", "it", "its", "of", "on", "or", "that", "the", "this",
      "to", "was", "were", "will", "with"};
  return kStop;
}

// Stop-word-filtered word-set Jaccard similarity. When the two datasets share
// class keys the score is the per-class mean; otherwise one global comparison.
inline double jaccard_overlap(const std::vector<Example>& a,
                              const std::vector<Example>& b,
                              const std::set<std::string>& stop = default_stop_words()) {
  auto word_sets = [&](const std::vector<Example>& data) {
    std::map<std::string, std::set<std::string>> by_class;
    for (const auto& ex : data) {
      std::string key;
      for (const auto& id : ex.labels.ids) key += id + "|";
      auto& ws = by_class[key];
      for (const auto& w : ex.doc)
        if (!stop.count(w)) ws.insert(w);
    }
    return by_class;
  };
  auto jac = [](const std::set<std::string>& x, const std::set<std::string>& y) {
    if (x.empty() && y.empty()) return 1.0;
    size_t inter = 0;
    for (const auto& w : x) inter += y.count(w);
    size_t uni = x.size() + y.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
  };

  auto wa = word_sets(a), wb = word_sets(b);
  std::vector<std::string> common;
  for (const auto& [k, _] : wa)
    if (wb.count(k)) common.push_back(k);
  if (common.empty()) {
    std::set<std::string> ua, ub;
    for (const auto& [_, ws] : wa) ua.insert(ws.begin(), ws.end());
    for (const auto& [_, ws] : wb) ub.insert(ws.begin(), ws.end());
    return jac(ua, ub);
  }
  double total = 0;
  for (const auto& k : common) total += jac(wa[k], wb[k]);
  return total / static_cast<double>(common.size());
}

// ---------------------------------------------------------------------------
// JSONL dataset files: {"id", "doc": [tokens], "labels": [node ids]}, plus
// "masked" for the pretraining cache.

inline void save_dataset(const std::vector<Example>& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset file: " + path);
  for (const auto& ex : data) {
    nlohmann::json j;
    j["id"] = ex.id;
    j["doc"] = ex.doc;
    j["labels"] = std::vector<std::string>(ex.labels.ids.begin(), ex.labels.ids.end());
    out << j.dump() << '\n';
  }
}

inline std::vector<Example> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file: " + path);
  std::vector<Example> data;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Example ex;
    ex.id = j.at("id").get<std::string>();
    ex.doc = j.at("doc").get<std::vector<std::string>>();
    for (const auto& l : j.at("labels")) ex.labels.insert(l.get<std::string>());
    data.push_back(std::move(ex));
  }
  return data;
}

inline void save_pretrain_cache(const std::vector<Example>& data,
                                const std::vector<PretrainExample>& pre,
                                const std::string& path) {
  if (data.size() != pre.size()) throw Error("pretrain cache size mismatch");
  std::ofstream out(path);
  if (!out) throw Error("cannot write pretrain cache: " + path);
  for (size_t i = 0; i < data.size(); ++i) {
    nlohmann::json j;
    j["id"] = data[i].id;
    j["doc"] = data[i].doc;
    j["labels"] =
        std::vector<std::string>(data[i].labels.ids.begin(), data[i].labels.ids.end());
    j["masked"] = pre[i].masked;
    out << j.dump() << '\n';
  }
}

}  // namespace higen
