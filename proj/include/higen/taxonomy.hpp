#pragma once

// Label hierarchy support for hierarchical text classification.
//
// The hierarchy is a DAG H = (L, E) whose nodes are label classes arranged in
// levels: every parent of a level-k node sits at level k-1, and level-1 nodes
// hang off a virtual root. A document's label set is an ancestor-closed subset
// of L. Label sets are exchanged with the sequence model as flattened token
// strings: "<root> a b / a1 b2" lists the level-1 members, a "/" level
// separator, the level-2 members, and so on (breadth-first). This header owns
// building and validating the DAG, the flattening (linearize) and its inverse
// (parse), and the derived structures the training objectives need: the
// allowed token vocabulary V^H and the parent/child token pairs per edge.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "higen/errors.hpp"

namespace higen {

// Structural token strings shared across the toolkit.
inline constexpr const char* kRootToken = "<root>";
inline constexpr const char* kLevelSep = "/";
inline constexpr const char* kMaskToken = "<mask>";
inline constexpr const char* kBosToken = "<s>";
inline constexpr const char* kEosToken = "</s>";
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";

struct LabelNode {
  std::string id;    // opaque identifier; doubles as the node's atomic token
  std::string name;  // short natural-language name, e.g. "machine learning"
  int level = 0;     // 1-based; assigned by build()
  std::vector<std::string> parents;
};

// An ancestor-closed set of node ids.
struct LabelSet {
  std::set<std::string> ids;

  bool operator==(const LabelSet& o) const { return ids == o.ids; }
  bool empty() const { return ids.empty(); }
  bool contains(const std::string& id) const { return ids.count(id) > 0; }
  void insert(const std::string& id) { ids.insert(id); }
};

// A flattened multi-level label string; tokens are drawn from
// {<root>, /, node ids} plus <mask> in the masked variant.
using LabelSequence = std::vector<std::string>;

enum class RepairPolicy { kDropInvalid, kStrict };

// Counters describing how far a generated sequence deviated from the grammar.
struct ParseDiagnostics {
  int stray_tokens = 0;   // tokens outside the taxonomy vocabulary
  int wrong_level = 0;    // node tokens appearing under the wrong separator count
  int broken_edges = 0;   // node tokens with no retained parent
  int structural = 0;     // missing/duplicated <root>, separators past the max depth

  bool clean() const {
    return stray_tokens == 0 && wrong_level == 0 && broken_edges == 0 &&
           structural == 0;
  }
  int total() const {
    return stray_tokens + wrong_level + broken_edges + structural;
  }
};

class Taxonomy {
 public:
  // An empty taxonomy: no classes, depth 0, structural tokens only.
  Taxonomy() = default;

  // Validates and assembles the DAG. Node order fixes sibling order; edge
  // endpoints must exist and self-edges are rejected up front. Levels are
  // assigned topologically from the virtual root; all parents of a node must
  // share one level.
  static Taxonomy build(const std::vector<LabelNode>& nodes,
                        const std::vector<std::pair<std::string, std::string>>& edges);

  int size() const { return static_cast<int>(nodes_.size()); }
  int depth() const { return depth_; }
  int num_edges() const { return static_cast<int>(edge_pairs_.size()); }

  bool has_node(const std::string& id) const { return index_.count(id) > 0; }
  const LabelNode& node(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error("unknown node id: " + id);
    return nodes_[it->second];
  }
  const std::vector<LabelNode>& nodes() const { return nodes_; }

  // Children of a node in sibling (declaration) order.
  const std::vector<std::string>& children(const std::string& id) const {
    return children_.at(id);
  }
  const std::vector<std::string>& root_children() const { return root_children_; }

  bool is_ancestor_closed(const LabelSet& y) const;

  // Flattens an ancestor-closed label set breadth-first: level-1 members in
  // sibling order, "/", level-2 members, ... Children are grouped by the queue
  // order of their parents; a shared child is emitted once, at its first
  // reachable parent.
  LabelSequence linearize(const LabelSet& y) const;

  // Inverse of linearize over arbitrary (possibly malformed) token lists.
  // kDropInvalid keeps the largest label set consistent with the taxonomy and
  // counts every deviation; kStrict throws ParseError at the first violation.
  std::pair<LabelSet, ParseDiagnostics> parse(
      const std::vector<std::string>& tokens,
      RepairPolicy policy = RepairPolicy::kDropInvalid) const;

  // V^H as token strings: every node token plus <root>, "/" and the
  // end-of-sequence token.
  std::vector<std::string> allowed_vocabulary() const;

  // One (parent token, child token) pair per hierarchy edge, in edge
  // declaration order. Virtual-root edges are excluded: <root> is a structural
  // symbol, not a class.
  const std::vector<std::pair<std::string, std::string>>& edge_token_pairs() const {
    return edge_pairs_;
  }

  // All ancestor-closed non-empty label sets; exponential, intended for
  // small taxonomies in tests and exhaustive checks.
  std::vector<LabelSet> enumerate_label_sets() const;

  // Text format: one `child<TAB>parent<TAB>child name` record per line; root
  // edges use parent id <root>; '#' starts a comment line.
  static Taxonomy load(const std::string& path);
  void save(const std::string& path) const;
  static Taxonomy read(std::istream& in);
  void write(std::ostream& out) const;

 private:
  std::vector<LabelNode> nodes_;  // declaration order
  std::unordered_map<std::string, int> index_;
  std::map<std::string, std::vector<std::string>> children_;
  std::vector<std::string> root_children_;
  std::vector<std::pair<std::string, std::string>> edge_pairs_;  // non-root edges
  std::vector<std::pair<std::string, std::string>> edges_in_;    // as declared
  int depth_ = 0;
};

inline Taxonomy Taxonomy::build(
    const std::vector<LabelNode>& nodes,
    const std::vector<std::pair<std::string, std::string>>& edges) {
  Taxonomy t;
  t.nodes_ = nodes;
  t.edges_in_ = edges;
  for (size_t i = 0; i < t.nodes_.size(); ++i) {
    auto& n = t.nodes_[i];
    if (n.id.empty()) throw Error("node with empty id");
    if (n.name.empty()) throw Error("node '" + n.id + "' has empty name");
    if (n.id == kRootToken) throw Error("<root> is reserved for the virtual root");
    if (!t.index_.emplace(n.id, static_cast<int>(i)).second)
      throw Error("duplicate node id: " + n.id);
    n.level = 0;
    n.parents.clear();
    t.children_[n.id] = {};
  }

  std::set<std::pair<std::string, std::string>> edge_seen;
  for (const auto& [parent, child] : edges) {
    if (parent == child) throw CycleDetected("self-edge on " + child);
    if (!t.index_.count(child)) throw Error("edge to unknown node: " + child);
    if (!edge_seen.emplace(parent, child).second)
      throw Error("duplicate edge " + parent + " -> " + child);
    if (parent == kRootToken) {
      t.root_children_.push_back(child);
    } else {
      if (!t.index_.count(parent)) throw Error("edge from unknown node: " + parent);
      t.nodes_[t.index_[child]].parents.push_back(parent);
      t.edge_pairs_.emplace_back(parent, child);
    }
  }
  // Children in sibling (node declaration) order, independent of edge order.
  for (const auto& n : t.nodes_) {
    for (const auto& p : n.parents) t.children_[p].push_back(n.id);
  }
  {
    std::unordered_set<std::string> seen;
    std::vector<std::string> rc;
    for (const auto& n : t.nodes_) {
      for (const auto& c : t.root_children_) {
        if (c == n.id && seen.insert(c).second) rc.push_back(c);
      }
    }
    t.root_children_ = rc;
  }

  // Level assignment by Kahn's algorithm over non-root edges; a leftover node
  // means a cycle. Roots of the traversal are the virtual root's children.
  std::unordered_map<std::string, int> remaining;
  for (const auto& n : t.nodes_) remaining[n.id] = static_cast<int>(n.parents.size());
  std::vector<std::string> frontier;
  for (const auto& c : t.root_children_) {
    if (remaining[c] != 0)
      throw LevelInconsistency("node '" + c + "' has both root and non-root parents");
    frontier.push_back(c);
  }
  std::unordered_set<std::string> reached;
  int level = 1;
  while (!frontier.empty()) {
    std::vector<std::string> next;
    for (const auto& id : frontier) {
      LabelNode& n = t.nodes_[t.index_[id]];
      if (!reached.insert(id).second) continue;
      n.level = level;
      for (const auto& c : t.children_[id]) {
        if (--remaining[c] == 0) next.push_back(c);
      }
    }
    if (!next.empty()) ++level;
    frontier = std::move(next);
  }
  t.depth_ = reached.empty() ? 0 : level;

  for (const auto& n : t.nodes_) {
    if (!reached.count(n.id)) {
      // Distinguish a cycle (some parent count never drained) from a node
      // nobody points at.
      if (n.parents.empty())
        throw UnreachableNode("node '" + n.id + "' has no incoming edge");
      throw CycleDetected("cycle through node '" + n.id + "'");
    }
  }
  for (const auto& n : t.nodes_) {
    for (const auto& p : n.parents) {
      if (t.nodes_[t.index_.at(p)].level != n.level - 1)
        throw LevelInconsistency("parents of '" + n.id + "' span multiple levels");
    }
  }
  return t;
}

inline bool Taxonomy::is_ancestor_closed(const LabelSet& y) const {
  for (const auto& id : y.ids) {
    const LabelNode& n = node(id);
    if (n.parents.empty()) continue;  // level-1, parent is the virtual root
    bool ok = false;
    for (const auto& p : n.parents) ok = ok || y.contains(p);
    if (!ok) return false;
  }
  return true;
}

inline LabelSequence Taxonomy::linearize(const LabelSet& y) const {
  if (y.empty()) throw EmptyLabelSet("cannot linearize an empty label set");
  for (const auto& id : y.ids) node(id);  // validate membership
  if (!is_ancestor_closed(y))
    throw NotAncestorClosed("label set is not ancestor-closed");

  LabelSequence out{kRootToken};
  std::unordered_set<std::string> emitted;
  std::vector<std::string> frontier;
  for (const auto& c : root_children_) {
    if (y.contains(c) && emitted.insert(c).second) frontier.push_back(c);
  }
  while (!frontier.empty()) {
    for (const auto& id : frontier) out.push_back(id);
    std::vector<std::string> next;
    for (const auto& id : frontier) {
      for (const auto& c : children_.at(id)) {
        if (y.contains(c) && emitted.insert(c).second) next.push_back(c);
      }
    }
    if (!next.empty()) out.push_back(kLevelSep);
    frontier = std::move(next);
  }
  return out;
}

inline std::pair<LabelSet, ParseDiagnostics> Taxonomy::parse(
    const std::vector<std::string>& tokens, RepairPolicy policy) const {
  LabelSet result;
  ParseDiagnostics diag;
  const bool strict = policy == RepairPolicy::kStrict;
  auto violation = [&](int& counter, const std::string& what) {
    if (strict) throw ParseError(what);
    ++counter;
  };

  int level = 0;  // 0 until <root> is seen
  for (const auto& tok : tokens) {
    if (tok == kRootToken) {
      if (level != 0) violation(diag.structural, "duplicate <root>");
      if (level == 0) level = 1;
      continue;
    }
    if (tok == kLevelSep) {
      if (level == 0) {
        violation(diag.structural, "'/' before <root>");
        continue;
      }
      if (level >= depth_) {
        violation(diag.structural, "'/' past the deepest level");
        continue;
      }
      ++level;
      continue;
    }
    if (tok == kBosToken || tok == kEosToken || tok == kPadToken) continue;
    if (!has_node(tok)) {
      violation(diag.stray_tokens, "stray token '" + tok + "'");
      continue;
    }
    if (level == 0) {
      violation(diag.structural, "node token before <root>");
      continue;
    }
    const LabelNode& n = node(tok);
    if (n.level != level) {
      violation(diag.wrong_level, "token '" + tok + "' at wrong level");
      continue;
    }
    bool parent_ok = n.parents.empty();
    for (const auto& p : n.parents) parent_ok = parent_ok || result.contains(p);
    if (!parent_ok) {
      violation(diag.broken_edges, "token '" + tok + "' has no retained parent");
      continue;
    }
    result.insert(tok);
  }
  if (level == 0 && !tokens.empty())
    violation(diag.structural, "sequence has no <root>");
  return {result, diag};
}

inline std::vector<std::string> Taxonomy::allowed_vocabulary() const {
  std::vector<std::string> v;
  v.reserve(nodes_.size() + 3);
  for (const auto& n : nodes_) v.push_back(n.id);
  v.push_back(kLevelSep);
  v.push_back(kRootToken);
  v.push_back(kEosToken);
  return v;
}

inline std::vector<LabelSet> Taxonomy::enumerate_label_sets() const {
  // Depth-first over declaration order; a node may enter only if one of its
  // parents (or the root) is already in.
  std::vector<LabelSet> out;
  const int n = size();
  std::vector<char> in(n, 0);
  auto closed_ok = [&](int idx) {
    const LabelNode& nd = nodes_[idx];
    if (nd.parents.empty()) return true;
    for (const auto& p : nd.parents)
      if (in[index_.at(p)]) return true;
    return false;
  };
  for (uint64_t mask = 1; mask < (1ULL << n); ++mask) {
    for (int i = 0; i < n; ++i) in[i] = (mask >> i) & 1;
    bool ok = true;
    for (int i = 0; ok && i < n; ++i)
      if (in[i] && !closed_ok(i)) ok = false;
    if (!ok) continue;
    LabelSet y;
    for (int i = 0; i < n; ++i)
      if (in[i]) y.insert(nodes_[i].id);
    out.push_back(std::move(y));
  }
  return out;
}

inline Taxonomy Taxonomy::read(std::istream& in) {
  std::vector<LabelNode> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
  std::unordered_map<std::string, size_t> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::string child, parent, name;
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw Error("malformed taxonomy line: " + line);
    child = line.substr(0, t1);
    parent = line.substr(t1 + 1, t2 - t1 - 1);
    name = line.substr(t2 + 1);
    auto it = seen.find(child);
    if (it == seen.end()) {
      seen[child] = nodes.size();
      nodes.push_back(LabelNode{child, name, 0, {}});
    } else if (!name.empty() && nodes[it->second].name != name) {
      throw Error("conflicting names for node '" + child + "'");
    }
    edges.emplace_back(parent, child);
  }
  return build(nodes, edges);
}

inline void Taxonomy::write(std::ostream& out) const {
  for (const auto& [parent, child] : edges_in_) {
    out << child << '\t' << parent << '\t' << node(child).name << '\n';
  }
}

inline Taxonomy Taxonomy::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open taxonomy file: " + path);
  return read(in);
}

inline void Taxonomy::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write taxonomy file: " + path);
  write(out);
}

// Convenience free functions mirroring the operation names used throughout.
inline Taxonomy build_taxonomy(
    const std::vector<LabelNode>& nodes,
    const std::vector<std::pair<std::string, std::string>>& edges) {
  return Taxonomy::build(nodes, edges);
}

}  // namespace higen
