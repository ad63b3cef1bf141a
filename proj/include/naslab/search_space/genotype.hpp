#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "naslab/core/rng.hpp"
#include "naslab/search_space/op_kind.hpp"

namespace naslab {

struct CellTemplate {
  int n_in = 2;
  int n_mid = 4;
  int n_out = 1;
  int m = 2;
  int node_width = 16;

  /// Throws ConfigError. Besides the basic bounds, m ≤ n_in is required so the
  /// first intermediate node has m distinct predecessors.
  void validate() const;
  int num_nodes() const { return n_in + n_mid; }
  /// Edges (i, j) with i < j into intermediate nodes.
  int num_edges() const { return n_mid * n_in + n_mid * (n_mid - 1) / 2; }
  /// Row of edge (src -> intermediate node `node`), node counted from 0 over all nodes.
  int edge_index(int src, int node) const;
};

struct GenotypeEdge {
  OpKind op;
  int src;

  bool operator==(const GenotypeEdge&) const = default;
};

/// nodes[k] lists the retained incoming edges of intermediate node n_in + k.
struct CellGenotype {
  std::vector<std::vector<GenotypeEdge>> nodes;

  bool operator==(const CellGenotype&) const = default;
};

struct Genotype {
  CellGenotype normal;
  CellGenotype reduce;
  int n_in = 2;

  bool operator==(const Genotype&) const = default;
};

/// Throws ConfigError unless every node has exactly m distinct, earlier, non-zero edges.
void validate(const Genotype& g, int m);
void validate(const CellGenotype& cell, int n_in, int m);

/// `normal: [(op, src), ...] ; reduce: [(op, src), ...]`
std::string to_string(const Genotype& g);
/// Throws ParseError (with byte offset) on malformed text or unknown tags.
Genotype parse_genotype(std::string_view text, int n_in = 2, int m = 2);

struct TopologyMetrics {
  /// Connections on the longest input -> output path.
  int depth = 0;
  /// Intermediate nodes with at least one input-node predecessor; cell width is this times c.
  int width_nodes = 0;
  int skip_count = 0;
};

TopologyMetrics topology_metrics(const CellGenotype& cell, int n_in);
/// Metrics of the normal cell.
TopologyMetrics topology_metrics(const Genotype& g);

enum class RewireStrategy { substitute_skips, deepen };

Genotype rewire(const Genotype& g, RewireStrategy strategy);

/// Uniform op per edge (zero excluded) and a uniform m-subset of predecessors per node.
Genotype random_genotype(const CellTemplate& t, Rng& rng);

/// Published first-order DARTS cells.
Genotype darts_v1_genotype();
/// Four intermediate nodes each fed only by the two input nodes.
Genotype wide_shallow_genotype();

}  // namespace naslab
