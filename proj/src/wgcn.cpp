#include "concap/wgcn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "concap/gradcheck.hpp"
#include "concap/io.hpp"
#include "concap/ops.hpp"

namespace concap {

using ad::Tensor;

const char* relation_name(Relation r) {
  switch (r) {
    case Relation::Left: return "left";
    case Relation::Right: return "right";
    case Relation::Self: return "self";
  }
  return "?";
}

GraphMode graph_mode_from_string(const std::string& s) {
  if (s == "threshold") return GraphMode::Threshold;
  if (s == "random") return GraphMode::Random;
  if (s == "one_for_all") return GraphMode::OneForAll;
  if (s == "mlp") return GraphMode::Mlp;
  throw std::invalid_argument("unknown graph mode: " + s);
}

const char* graph_mode_name(GraphMode m) {
  switch (m) {
    case GraphMode::Threshold: return "threshold";
    case GraphMode::Random: return "random";
    case GraphMode::OneForAll: return "one_for_all";
    case GraphMode::Mlp: return "mlp";
  }
  return "?";
}

namespace {

constexpr int kMaxNodes = 64;

ConceptGraph empty_graph(const std::vector<int>& concepts) {
  if (concepts.empty()) throw std::invalid_argument("concept graph: empty node list");
  if (static_cast<int>(concepts.size()) > kMaxNodes)
    throw std::invalid_argument("concept graph: more than 64 nodes");
  ConceptGraph g;
  g.nodes = concepts;
  const size_t k = concepts.size();
  g.adj.assign(k * k, 0);
  g.tags.assign(k * k, Relation::Self);
  for (size_t i = 0; i < k; ++i) {
    g.adj[i * k + i] = 1;
    g.tags[i * k + i] = Relation::Self;
  }
  return g;
}

void set_edge(ConceptGraph& g, int i, int j, Relation tag_ij, Relation tag_ji) {
  const size_t k = g.nodes.size();
  g.adj[static_cast<size_t>(i) * k + static_cast<size_t>(j)] = 1;
  g.adj[static_cast<size_t>(j) * k + static_cast<size_t>(i)] = 1;
  g.tags[static_cast<size_t>(i) * k + static_cast<size_t>(j)] = tag_ij;
  g.tags[static_cast<size_t>(j) * k + static_cast<size_t>(i)] = tag_ji;
}

}  // namespace

ConceptGraph build_adjacency(const std::vector<int>& concepts, const PmiLexicon& lexicon) {
  ConceptGraph g = empty_graph(concepts);
  const int k = g.k();
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      const double fwd = lexicon.score(concepts[static_cast<size_t>(i)],
                                       concepts[static_cast<size_t>(j)]);
      const double bwd = lexicon.score(concepts[static_cast<size_t>(j)],
                                       concepts[static_cast<size_t>(i)]);
      if (fwd == kNegInf && bwd == kNegInf) continue;
      if (fwd >= bwd) {
        // g_i precedes g_j: j sits to i's right
        set_edge(g, i, j, Relation::Right, Relation::Left);
      } else {
        set_edge(g, i, j, Relation::Left, Relation::Right);
      }
    }
  }
  return g;
}

ConceptGraph build_adjacency_ablation(const std::vector<int>& concepts, GraphMode mode,
                                      uint64_t seed) {
  ConceptGraph g = empty_graph(concepts);
  const int k = g.k();
  const size_t ks = static_cast<size_t>(k);
  switch (mode) {
    case GraphMode::Threshold:
      throw std::invalid_argument("threshold graphs come from build_adjacency");
    case GraphMode::Random: {
      Rng rng(seed);
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          if (i == j) continue;
          if (rng.bernoulli(0.5)) {
            g.adj[static_cast<size_t>(i) * ks + static_cast<size_t>(j)] = 1;
            g.tags[static_cast<size_t>(i) * ks + static_cast<size_t>(j)] =
                j > i ? Relation::Right : Relation::Left;
          }
        }
      break;
    }
    case GraphMode::OneForAll:
    case GraphMode::Mlp: {
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          if (i == j) continue;
          g.adj[static_cast<size_t>(i) * ks + static_cast<size_t>(j)] = 1;
          g.tags[static_cast<size_t>(i) * ks + static_cast<size_t>(j)] =
              j > i ? Relation::Right : Relation::Left;
        }
      break;
    }
  }
  return g;
}

WgcnParams make_wgcn(Rng& rng, int d, int n_layers, bool mlp_mode, int mlp_hidden) {
  if (n_layers < 1) throw std::invalid_argument("wgcn: needs at least one layer");
  WgcnParams p;
  p.d = d;
  for (int l = 0; l < n_layers; ++l) {
    WgcnLayer layer;
    layer.agg = nn::make_linear(rng, d, d);
    layer.w_left = nn::init_weight(rng, d, d, d);
    layer.w_right = nn::init_weight(rng, d, d, d);
    layer.w_self = nn::init_weight(rng, d, d, d);
    layer.ln = nn::make_layer_norm(d);
    if (mlp_mode) {
      layer.mlp1 = nn::make_linear(rng, 2 * d, mlp_hidden);
      layer.mlp2 = nn::make_linear(rng, mlp_hidden, 1);
      layer.has_mlp = true;
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

void collect(WgcnParams& p, const std::string& prefix, nn::Params& out) {
  for (size_t l = 0; l < p.layers.size(); ++l) {
    const std::string lp = prefix + "." + std::to_string(l);
    WgcnLayer& layer = p.layers[l];
    collect(layer.agg, lp + ".agg", out);
    out.add(lp + ".w_left", &layer.w_left);
    out.add(lp + ".w_right", &layer.w_right);
    out.add(lp + ".w_self", &layer.w_self);
    collect(layer.ln, lp + ".ln", out);
    if (layer.has_mlp) {
      collect(layer.mlp1, lp + ".mlp1", out);
      collect(layer.mlp2, lp + ".mlp2", out);
    }
  }
}

Tensor wgcn_attention(const Tensor& h, const ConceptGraph& graph, const WgcnLayer& layer) {
  const int k = graph.k();
  if (h.rank() != 2 || h.dim(0) != k)
    throw std::invalid_argument("wgcn_attention: features must be [k, d]");

  Tensor ht = ad::transpose2(h);
  Tensor s_left = ad::matmul(ad::matmul(h, layer.w_left), ht);
  Tensor s_right = ad::matmul(ad::matmul(h, layer.w_right), ht);
  Tensor s_self = ad::matmul(ad::matmul(h, layer.w_self), ht);

  // constant 0/1 masks select the position form per edge
  Tensor m_left = Tensor::zeros({k, k});
  Tensor m_right = Tensor::zeros({k, k});
  Tensor m_self = Tensor::zeros({k, k});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      if (!graph.at(i, j)) continue;
      const int64_t idx = static_cast<int64_t>(i) * k + j;
      switch (graph.tag(i, j)) {
        case Relation::Left: m_left[idx] = 1.0; break;
        case Relation::Right: m_right[idx] = 1.0; break;
        case Relation::Self: m_self[idx] = 1.0; break;
      }
    }

  Tensor scores = ad::add(ad::add(ad::mul(s_left, m_left), ad::mul(s_right, m_right)),
                          ad::mul(s_self, m_self));
  return ad::masked_softmax(scores, graph.adj);
}

Tensor wgcn_mlp_attention(const Tensor& h, const WgcnLayer& layer) {
  if (!layer.has_mlp) throw std::invalid_argument("wgcn: layer has no pairwise scorer");
  const int k = h.dim(0);
  std::vector<int> idx_i, idx_j;
  idx_i.reserve(static_cast<size_t>(k) * k);
  idx_j.reserve(static_cast<size_t>(k) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      idx_i.push_back(i);
      idx_j.push_back(j);
    }
  Tensor pairs = ad::concat_last({ad::gather_rows(h, idx_i), ad::gather_rows(h, idx_j)});
  Tensor s = nn::linear(ad::relu(nn::linear(pairs, layer.mlp1)), layer.mlp2);
  return ad::softmax(ad::reshape(s, {k, k}), -1);
}

Tensor wgcn_layer_forward(const Tensor& h, const Tensor& alpha, const WgcnLayer& layer) {
  Tensor transformed = nn::linear(h, layer.agg);
  Tensor agg = ad::matmul(alpha, transformed);
  return ad::relu(nn::layer_norm(agg, layer.ln));
}

Tensor wgcn_forward(const Tensor& concept_features, const ConceptGraph& graph,
                    const WgcnParams& params, bool mlp_adjacency,
                    std::vector<Tensor>* alphas_out) {
  Tensor h = concept_features;
  for (const auto& layer : params.layers) {
    Tensor alpha =
        mlp_adjacency ? wgcn_mlp_attention(h, layer) : wgcn_attention(h, graph, layer);
    if (alphas_out) alphas_out->push_back(alpha);
    h = wgcn_layer_forward(h, alpha, layer);
  }
  return h;
}

void write_graph_tsv(const std::string& path, const ConceptGraph& graph,
                     const Tensor& alpha_layer1, const Vocabulary& vocab) {
  const int k = graph.k();
  std::ostringstream ss;
  ss << "gi\tgj\ttag\talpha_layer1\n";
  ss.setf(std::ios::fixed);
  ss.precision(6);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      if (!graph.at(i, j)) continue;
      const double a = alpha_layer1.defined()
                           ? alpha_layer1[static_cast<int64_t>(i) * k + j]
                           : 0.0;
      ss << vocab.word(graph.nodes[static_cast<size_t>(i)]) << "\t"
         << vocab.word(graph.nodes[static_cast<size_t>(j)]) << "\t"
         << relation_name(graph.tag(i, j)) << "\t" << a << "\n";
    }
  io::atomic_write(path, ss.str());
}

}  // namespace concap

namespace concap::ad {

double wgcn_gradcheck_suite() {
  Rng rng(108);
  const int k = 5, d = 6;
  WgcnParams params = make_wgcn(rng, d, 2, false, 8);

  // synthetic graph: ring plus a chord, mixed tags
  std::vector<int> nodes = {4, 5, 6, 7, 8};
  ConceptGraph graph = build_adjacency_ablation(nodes, GraphMode::OneForAll, 0);
  ConceptGraph ring = graph;
  std::fill(ring.adj.begin(), ring.adj.end(), 0);
  for (int i = 0; i < k; ++i) ring.adj[static_cast<size_t>(i) * k + i] = 1;
  auto link = [&](int i, int j) {
    ring.adj[static_cast<size_t>(i) * k + j] = 1;
    ring.adj[static_cast<size_t>(j) * k + i] = 1;
    ring.tags[static_cast<size_t>(i) * k + j] = Relation::Right;
    ring.tags[static_cast<size_t>(j) * k + i] = Relation::Left;
  };
  link(0, 1);
  link(1, 2);
  link(2, 3);
  link(3, 4);
  link(0, 3);

  Tensor h = Tensor::zeros({k, d});
  for (int64_t i = 0; i < h.size(); ++i) h[i] = rng.uniform(-1.0, 1.0);
  Tensor proj = Tensor::zeros({k, d});
  for (int64_t i = 0; i < proj.size(); ++i) proj[i] = rng.uniform(-1.0, 1.0);

  auto loss = [&] { return sum_all(mul(wgcn_forward(h, ring, params), proj)); };

  double worst = finite_difference_check(loss, h);
  for (auto& layer : params.layers) {
    worst = std::max(worst, finite_difference_check(loss, layer.agg.w));
    worst = std::max(worst, finite_difference_check(loss, layer.agg.b));
    worst = std::max(worst, finite_difference_check(loss, layer.w_left));
    worst = std::max(worst, finite_difference_check(loss, layer.w_right));
    worst = std::max(worst, finite_difference_check(loss, layer.w_self));
    worst = std::max(worst, finite_difference_check(loss, layer.ln.gain));
    worst = std::max(worst, finite_difference_check(loss, layer.ln.bias));
  }

  // MLP-adjacency variant
  WgcnParams mlp_params = make_wgcn(rng, d, 1, true, 8);
  ConceptGraph ones = build_adjacency_ablation(nodes, GraphMode::Mlp, 0);
  auto mlp_loss = [&] { return sum_all(mul(wgcn_forward(h, ones, mlp_params, true), proj)); };
  worst = std::max(worst, finite_difference_check(mlp_loss, h));
  worst = std::max(worst, finite_difference_check(mlp_loss, mlp_params.layers[0].mlp1.w));
  worst = std::max(worst, finite_difference_check(mlp_loss, mlp_params.layers[0].mlp2.b));
  return worst;
}

}  // namespace concap::ad
