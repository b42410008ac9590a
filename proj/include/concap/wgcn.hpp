#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "concap/corpus.hpp"
#include "concap/nn.hpp"
#include "concap/tensor.hpp"

namespace concap {

enum class Relation : uint8_t { Left, Right, Self };

const char* relation_name(Relation r);

// How the concept-graph adjacency is produced.
enum class GraphMode { Threshold, Random, OneForAll, Mlp };

GraphMode graph_mode_from_string(const std::string& s);
const char* graph_mode_name(GraphMode m);

struct ConceptGraph {
  std::vector<int> nodes;        // concept word ids
  std::vector<uint8_t> adj;      // k*k, 0/1, diagonal always 1
  std::vector<Relation> tags;    // k*k, valid where adj != 0

  int k() const { return static_cast<int>(nodes.size()); }
  uint8_t at(int i, int j) const { return adj[static_cast<size_t>(i) * nodes.size() + static_cast<size_t>(j)]; }
  Relation tag(int i, int j) const { return tags[static_cast<size_t>(i) * nodes.size() + static_cast<size_t>(j)]; }
};

// Support is symmetric: a lexicon entry in either direction connects both
// nodes. Tags stay directional: (g_i -> g_j) in the lexicon makes j a RIGHT
// neighbor of i and i a LEFT neighbor of j. When both directions exist the
// higher-PMI one decides; exact ties resolve to RIGHT for the lower index.
ConceptGraph build_adjacency(const std::vector<int>& concepts, const PmiLexicon& lexicon);

// Table-style ablation graphs. RANDOM draws off-diagonal entries i.i.d.
// Bernoulli(0.5); ONE_FOR_ALL and MLP return all-ones support (the MLP mode
// replaces the attention weights at forward time). Tags for these synthetic
// edges follow node order: j > i is RIGHT, j < i is LEFT.
ConceptGraph build_adjacency_ablation(const std::vector<int>& concepts, GraphMode mode,
                                      uint64_t seed);

struct WgcnLayer {
  nn::Linear agg;           // W^(l), b^(l)
  ad::Tensor w_left, w_right, w_self;  // bilinear position forms, [d, d]
  nn::LayerNorm ln;
  nn::Linear mlp1, mlp2;    // pairwise scorer, allocated in MLP mode only
  bool has_mlp = false;
};

struct WgcnParams {
  std::vector<WgcnLayer> layers;
  int d = 0;
};

WgcnParams make_wgcn(Rng& rng, int d, int n_layers, bool mlp_mode, int mlp_hidden);
void collect(WgcnParams& p, const std::string& prefix, nn::Params& out);

// Attention over the adjacency support: rows sum to 1 on each node's
// neighborhood, zero elsewhere. The exponent is the raw bilinear score
// h_i . W_pos(tag) . h_j, stabilized by row-max subtraction.
ad::Tensor wgcn_attention(const ad::Tensor& h, const ConceptGraph& graph,
                          const WgcnLayer& layer);

// Dense soft attention from a two-layer scorer on (h_i, h_j) pairs; used by
// the MLP graph-construction ablation (all-ones support).
ad::Tensor wgcn_mlp_attention(const ad::Tensor& h, const WgcnLayer& layer);

// h_i' = ReLU(LN(sum_j alpha_ij (W h_j + b)))
ad::Tensor wgcn_layer_forward(const ad::Tensor& h, const ad::Tensor& alpha,
                              const WgcnLayer& layer);

// Stacks the layers; the last output is the structured concept feature.
// When alphas_out is given it receives each layer's attention matrix.
ad::Tensor wgcn_forward(const ad::Tensor& concept_features, const ConceptGraph& graph,
                        const WgcnParams& params, bool mlp_adjacency = false,
                        std::vector<ad::Tensor>* alphas_out = nullptr);

// Debug dump: one row per support edge, `gi gj tag alpha_layer1`.
void write_graph_tsv(const std::string& path, const ConceptGraph& graph,
                     const ad::Tensor& alpha_layer1, const Vocabulary& vocab);

}  // namespace concap
