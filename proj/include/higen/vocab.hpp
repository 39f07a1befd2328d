#pragma once

// Shared vocabulary over document words, label-name words, label-node atomic
// tokens and special symbols. Label nodes get exactly one atomic id each so
// that a node's probability under the LM head is a single softmax entry.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "higen/errors.hpp"
#include "higen/taxonomy.hpp"

namespace higen {

// Lowercase whitespace word tokenization.
inline std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

class Vocabulary {
 public:
  enum class Kind { kSpecial, kNode, kWord };

  // Ids are dense from 0: the fixed specials first, then <unk>, then one
  // atomic token per taxonomy node in declaration order, then word tokens
  // ordered by (count desc, token asc). Words below min_count are dropped and
  // map to <unk> at encode time. Label-name words are always included so that
  // name encoding never degrades to <unk>.
  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus,
                          const Taxonomy& t, int min_count) {
    if (corpus.empty()) throw EmptyCorpus("cannot build a vocabulary from nothing");
    Vocabulary v;
    for (const char* s : {kBosToken, kEosToken, kPadToken, kMaskToken,
                          kRootToken, kLevelSep, kUnkToken}) {
      v.add(s, Kind::kSpecial);
    }
    for (const auto& n : t.nodes()) v.add(n.id, Kind::kNode);

    std::unordered_map<std::string, long> counts;
    for (const auto& doc : corpus)
      for (const auto& w : doc) ++counts[w];
    std::map<std::string, long> forced;  // label-name words, kept regardless
    for (const auto& n : t.nodes())
      for (const auto& w : tokenize_words(n.name)) forced.emplace(w, 0);

    std::vector<std::pair<std::string, long>> words(counts.begin(), counts.end());
    std::sort(words.begin(), words.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    for (const auto& [w, c] : words) {
      if (c >= min_count && !v.has(w)) v.add(w, Kind::kWord);
    }
    for (const auto& [w, c] : forced) {
      if (!v.has(w)) v.add(w, Kind::kWord);
    }
    return v;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  bool has(const std::string& tok) const { return ids_.count(tok) > 0; }
  int id(const std::string& tok) const {
    auto it = ids_.find(tok);
    return it == ids_.end() ? unk_id() : it->second;
  }
  const std::string& token(int id) const {
    if (id < 0 || id >= size())
      throw UnknownSpecial("token id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }
  Kind kind(int id) const { return kinds_.at(id); }

  int bos_id() const { return 0; }
  int eos_id() const { return 1; }
  int pad_id() const { return 2; }
  int mask_id() const { return 3; }
  int root_id() const { return 4; }
  int sep_id() const { return 5; }
  int unk_id() const { return 6; }

  std::vector<int> encode_text(const std::string& text) const {
    std::vector<int> out;
    for (const auto& w : tokenize_words(text)) out.push_back(id(w));
    return out;
  }
  std::vector<int> encode_tokens(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& tok : tokens) out.push_back(id(tok));
    return out;
  }
  // Label sequences only contain structural symbols and node tokens, all of
  // which are present by construction.
  std::vector<int> encode_label_sequence(const LabelSequence& seq) const {
    return encode_tokens(seq);
  }
  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(token(i));
    return out;
  }

  // Token-id form of V^H (plus </s>) and its complement V^H'.
  std::vector<int> allowed_token_ids(const Taxonomy& t) const {
    std::vector<int> out;
    for (const auto& tok : t.allowed_vocabulary()) out.push_back(id(tok));
    std::sort(out.begin(), out.end());
    return out;
  }
  std::vector<int> complement_token_ids(const Taxonomy& t) const {
    std::vector<char> in(size(), 0);
    for (int i : allowed_token_ids(t)) in[i] = 1;
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
      if (!in[i]) out.push_back(i);
    return out;
  }

  // File format: one `id<TAB>token<TAB>kind` per line.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write vocabulary file: " + path);
    for (int i = 0; i < size(); ++i) {
      const char* k = kinds_[i] == Kind::kSpecial ? "special"
                      : kinds_[i] == Kind::kNode  ? "node"
                                                  : "word";
      out << i << '\t' << tokens_[i] << '\t' << k << '\n';
    }
  }
  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      size_t t1 = line.find('\t');
      size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
      if (t1 == std::string::npos || t2 == std::string::npos)
        throw Error("malformed vocabulary line: " + line);
      int id = std::stoi(line.substr(0, t1));
      std::string tok = line.substr(t1 + 1, t2 - t1 - 1);
      std::string kind = line.substr(t2 + 1);
      if (id != v.size()) throw Error("vocabulary ids must be dense from 0");
      v.add(tok, kind == "special" ? Kind::kSpecial
                 : kind == "node"  ? Kind::kNode
                                   : Kind::kWord);
    }
    if (v.size() < 7) throw Error("vocabulary file is missing special tokens");
    return v;
  }

 private:
  void add(const std::string& tok, Kind kind) {
    if (!ids_.emplace(tok, static_cast<int>(tokens_.size())).second)
      throw Error("duplicate vocabulary token: " + tok);
    tokens_.push_back(tok);
    kinds_.push_back(kind);
  }

  std::vector<std::string> tokens_;
  std::vector<Kind> kinds_;
  std::unordered_map<std::string, int> ids_;
};

inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus,
                              const Taxonomy& t, int min_count) {
  return Vocabulary::build(corpus, t, min_count);
}

}  // namespace higen
