#include "naslab/search_space/genotype.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "naslab/core/error.hpp"

namespace naslab {

namespace {

constexpr std::array<std::string_view, kNumOps> kOpNames{
    "skip_connect", "max_pool_3x3", "avg_pool_3x3", "sep_conv_3x3", "sep_conv_5x5",
    "sep_conv_7x7", "dil_conv_3x3", "dil_conv_5x5", "conv_1x7_7x1", "none"};

}  // namespace

std::string_view op_name(OpKind op) {
  if (op == OpKind::zero) return "zero";
  return kOpNames[static_cast<std::size_t>(op_index(op))];
}

std::optional<OpKind> parse_op(std::string_view tag) {
  if (tag == "zero" || tag == "none") return OpKind::zero;
  for (int i = 0; i < kNumOps - 1; ++i)
    if (kOpNames[static_cast<std::size_t>(i)] == tag) return op_from_index(i);
  return std::nullopt;
}

void CellTemplate::validate() const {
  if (n_in < 1) throw ConfigError("cell template: n_in must be >= 1");
  if (n_mid < 1) throw ConfigError("cell template: n_mid must be >= 1");
  if (n_out != 1) throw ConfigError("cell template: n_out must be 1");
  if (m < 1 || m > n_in + n_mid - 1) throw ConfigError("cell template: m must lie in [1, n_in + n_mid - 1]");
  if (m > n_in) throw ConfigError("cell template: m must not exceed n_in (first node has only n_in predecessors)");
  if (node_width < 1) throw ConfigError("cell template: node_width must be >= 1");
}

int CellTemplate::edge_index(int src, int node) const {
  const int k = node - n_in;
  if (k < 0 || k >= n_mid || src < 0 || src >= node) throw InputError("edge index out of range");
  return k * n_in + k * (k - 1) / 2 + src;
}

void validate(const CellGenotype& cell, int n_in, int m) {
  if (cell.nodes.empty()) throw ConfigError("genotype cell has no intermediate nodes");
  for (std::size_t k = 0; k < cell.nodes.size(); ++k) {
    const int node = n_in + static_cast<int>(k);
    const auto& edges = cell.nodes[k];
    if (static_cast<int>(edges.size()) != m)
      throw ConfigError("node " + std::to_string(node) + " has " + std::to_string(edges.size()) + " edges, expected " +
                        std::to_string(m));
    std::set<int> seen;
    for (const GenotypeEdge& e : edges) {
      if (e.op == OpKind::zero) throw ConfigError("zero op in a discrete genotype");
      if (e.src < 0 || e.src >= node) throw ConfigError("edge source must precede node " + std::to_string(node));
      if (!seen.insert(e.src).second) throw ConfigError("duplicate predecessor at node " + std::to_string(node));
    }
  }
}

void validate(const Genotype& g, int m) {
  if (g.n_in < 1) throw ConfigError("genotype n_in must be >= 1");
  validate(g.normal, g.n_in, m);
  validate(g.reduce, g.n_in, m);
  if (g.normal.nodes.size() != g.reduce.nodes.size()) throw ConfigError("normal and reduce cells differ in node count");
}

namespace {

std::string cell_string(const CellGenotype& c) {
  std::string out = "[";
  bool first = true;
  for (const auto& node : c.nodes)
    for (const GenotypeEdge& e : node) {
      if (!first) out += ", ";
      first = false;
      out += "(" + std::string(op_name(e.op)) + ", " + std::to_string(e.src) + ")";
    }
  return out + "]";
}

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  void expect(char c) {
    skip_ws();
    if (pos_ >= s_.size() || s_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  bool peek(char c) {
    skip_ws();
    return pos_ < s_.size() && s_[pos_] == c;
  }
  std::string_view word() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    if (pos_ == start) fail("expected identifier");
    return s_.substr(start, pos_ - start);
  }
  int integer() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    if (pos_ == start) fail("expected non-negative integer");
    if (pos_ - start > 6) fail("integer too large");
    return std::stoi(std::string(s_.substr(start, pos_ - start)));
  }
  std::vector<GenotypeEdge> edge_list() {
    std::vector<GenotypeEdge> edges;
    expect('[');
    if (peek(']')) {
      ++pos_;
      return edges;
    }
    while (true) {
      expect('(');
      const std::size_t at = pos_;
      std::string_view tag = word();
      auto op = parse_op(tag);
      if (!op) {
        pos_ = at;
        skip_ws();
        fail("unknown operation tag '" + std::string(tag) + "'");
      }
      expect(',');
      const int src = integer();
      expect(')');
      edges.push_back({*op, src});
      if (peek(',')) {
        ++pos_;
        continue;
      }
      expect(']');
      return edges;
    }
  }
  void expect_word(std::string_view w) {
    skip_ws();
    const std::size_t at = pos_;
    if (word() != w) {
      pos_ = at;
      fail("expected '" + std::string(w) + "'");
    }
  }
  void finish() {
    skip_ws();
    if (pos_ != s_.size()) fail("trailing characters");
  }
  [[noreturn]] void fail(const std::string& why) const { throw ParseError("genotype: " + why, pos_); }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

CellGenotype group(const std::vector<GenotypeEdge>& flat, int m, std::size_t offset) {
  if (flat.empty() || flat.size() % static_cast<std::size_t>(m) != 0)
    throw ParseError("genotype: edge count is not a positive multiple of m", offset);
  CellGenotype cell;
  for (std::size_t i = 0; i < flat.size(); i += static_cast<std::size_t>(m))
    cell.nodes.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(i),
                            flat.begin() + static_cast<std::ptrdiff_t>(i + static_cast<std::size_t>(m)));
  return cell;
}

}  // namespace

std::string to_string(const Genotype& g) {
  return "normal: " + cell_string(g.normal) + " ; reduce: " + cell_string(g.reduce);
}

Genotype parse_genotype(std::string_view text, int n_in, int m) {
  if (m < 1) throw ConfigError("m must be >= 1");
  Parser p(text);
  p.expect_word("normal");
  p.expect(':');
  const std::size_t normal_at = p.pos();
  auto normal = p.edge_list();
  p.expect(';');
  p.expect_word("reduce");
  p.expect(':');
  const std::size_t reduce_at = p.pos();
  auto reduce = p.edge_list();
  p.finish();
  Genotype g{group(normal, m, normal_at), group(reduce, m, reduce_at), n_in};
  try {
    validate(g, m);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("genotype: ") + e.what(), 0);
  }
  return g;
}

TopologyMetrics topology_metrics(const CellGenotype& cell, int n_in) {
  TopologyMetrics out;
  std::vector<int> longest(cell.nodes.size(), 0);
  int deepest = 0;
  for (std::size_t k = 0; k < cell.nodes.size(); ++k) {
    bool touches_input = false;
    for (const GenotypeEdge& e : cell.nodes[k]) {
      if (e.op == OpKind::skip_connect) ++out.skip_count;
      if (e.src < n_in) {
        touches_input = true;
        longest[k] = std::max(longest[k], 1);
      } else {
        longest[k] = std::max(longest[k], longest[static_cast<std::size_t>(e.src - n_in)] + 1);
      }
    }
    if (touches_input) ++out.width_nodes;
    deepest = std::max(deepest, longest[k]);
  }
  out.depth = deepest + 1;
  return out;
}

TopologyMetrics topology_metrics(const Genotype& g) { return topology_metrics(g.normal, g.n_in); }

namespace {

CellGenotype substitute(const CellGenotype& c) {
  CellGenotype out = c;
  for (auto& node : out.nodes)
    for (GenotypeEdge& e : node)
      if (e.op == OpKind::skip_connect) e.op = OpKind::sep_conv_3x3;
  return out;
}

CellGenotype deepen(const CellGenotype& c, int n_in) {
  CellGenotype out = c;
  for (std::size_t k = 0; k < out.nodes.size(); ++k) {
    auto& edges = out.nodes[k];
    const int node = n_in + static_cast<int>(k);
    if (static_cast<int>(edges.size()) > node) throw ConfigError("deepen: node has more edges than predecessors");
    // Nearest predecessor takes the op of the originally latest source.
    std::stable_sort(edges.begin(), edges.end(), [](const auto& a, const auto& b) { return a.src > b.src; });
    for (std::size_t i = 0; i < edges.size(); ++i) edges[i].src = node - 1 - static_cast<int>(i);
  }
  return out;
}

}  // namespace

Genotype rewire(const Genotype& g, RewireStrategy strategy) {
  Genotype out = g;
  if (strategy == RewireStrategy::substitute_skips) {
    out.normal = substitute(g.normal);
    out.reduce = substitute(g.reduce);
  } else {
    out.normal = deepen(g.normal, g.n_in);
    out.reduce = deepen(g.reduce, g.n_in);
  }
  return out;
}

Genotype random_genotype(const CellTemplate& t, Rng& rng) {
  t.validate();
  auto cell = [&]() {
    CellGenotype c;
    for (int k = 0; k < t.n_mid; ++k) {
      const int node = t.n_in + k;
      std::vector<int> srcs = rng.sample_without_replacement(node, t.m);
      std::sort(srcs.begin(), srcs.end());
      std::vector<GenotypeEdge> edges;
      for (int s : srcs) edges.push_back({op_from_index(rng.index(kNumOps - 1)), s});
      c.nodes.push_back(std::move(edges));
    }
    return c;
  };
  Genotype g;
  g.n_in = t.n_in;
  g.normal = cell();
  g.reduce = cell();
  return g;
}

Genotype darts_v1_genotype() {
  return parse_genotype(
      "normal: [(sep_conv_3x3, 1), (sep_conv_3x3, 0), (skip_connect, 0), (sep_conv_3x3, 1), "
      "(skip_connect, 0), (sep_conv_3x3, 1), (sep_conv_3x3, 0), (skip_connect, 2)] ; "
      "reduce: [(max_pool_3x3, 0), (max_pool_3x3, 1), (skip_connect, 2), (max_pool_3x3, 0), "
      "(max_pool_3x3, 0), (skip_connect, 2), (skip_connect, 2), (avg_pool_3x3, 0)]");
}

Genotype wide_shallow_genotype() {
  return parse_genotype(
      "normal: [(sep_conv_3x3, 0), (sep_conv_3x3, 1), (sep_conv_3x3, 0), (skip_connect, 1), "
      "(skip_connect, 0), (sep_conv_3x3, 1), (skip_connect, 0), (dil_conv_3x3, 1)] ; "
      "reduce: [(max_pool_3x3, 0), (max_pool_3x3, 1), (max_pool_3x3, 0), (avg_pool_3x3, 1), "
      "(skip_connect, 0), (max_pool_3x3, 1), (avg_pool_3x3, 0), (skip_connect, 1)]");
}

}  // namespace naslab
