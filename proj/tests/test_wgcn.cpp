#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "concap/io.hpp"
#include "concap/ops.hpp"
#include "concap/rng.hpp"
#include "concap/wgcn.hpp"

using namespace concap;
using ad::Tensor;

namespace {

PmiLexicon lexicon_of(std::initializer_list<std::pair<std::pair<int, int>, double>> entries) {
  PmiLexicon lex;
  for (const auto& [key, v] : entries) lex.entries[key] = v;
  return lex;
}

Tensor rand_tensor(Rng& rng, const ad::Shape& s) {
  Tensor t = Tensor::zeros(s);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

// direct evaluation of the attention formula on raw arrays
std::vector<double> direct_alpha(const Tensor& h, const ConceptGraph& g,
                                 const WgcnLayer& layer) {
  const int k = g.k();
  const int d = h.dim(1);
  auto bilinear = [&](const Tensor& w, int i, int j) {
    double s = 0.0;
    for (int a = 0; a < d; ++a) {
      double wi = 0.0;
      for (int b = 0; b < d; ++b)
        wi += w[static_cast<int64_t>(a) * d + b] * h[static_cast<int64_t>(j) * d + b];
      s += h[static_cast<int64_t>(i) * d + a] * wi;
    }
    return s;
  };
  std::vector<double> alpha(static_cast<size_t>(k) * k, 0.0);
  for (int i = 0; i < k; ++i) {
    double denom = 0.0;
    std::vector<double> ex(static_cast<size_t>(k), 0.0);
    for (int j = 0; j < k; ++j) {
      if (!g.at(i, j)) continue;
      const Tensor& w = g.tag(i, j) == Relation::Left    ? layer.w_left
                        : g.tag(i, j) == Relation::Right ? layer.w_right
                                                         : layer.w_self;
      ex[static_cast<size_t>(j)] = std::exp(bilinear(w, i, j));
      denom += ex[static_cast<size_t>(j)];
    }
    for (int j = 0; j < k; ++j)
      alpha[static_cast<size_t>(i) * k + j] = ex[static_cast<size_t>(j)] / denom;
  }
  return alpha;
}

}  // namespace

TEST_CASE("single concept graph is a self loop") {
  PmiLexicon lex;
  ConceptGraph g = build_adjacency({7}, lex);
  CHECK(g.k() == 1);
  CHECK(g.at(0, 0) == 1);
  CHECK(g.tag(0, 0) == Relation::Self);
}

TEST_CASE("adjacency from a one-directional lexicon entry") {
  // girl=10, eating=11; lexicon has (girl -> eating) only
  auto lex = lexicon_of({{{10, 11}, 2.0}});
  ConceptGraph g = build_adjacency({10, 11}, lex);
  CHECK(g.at(0, 1) == 1);
  CHECK(g.at(1, 0) == 1);
  CHECK(g.tag(0, 1) == Relation::Right);
  CHECK(g.tag(1, 0) == Relation::Left);
  CHECK(g.tag(0, 0) == Relation::Self);
  CHECK(g.tag(1, 1) == Relation::Self);
}

TEST_CASE("direction tie-breaks: higher PMI wins, exact tie goes RIGHT") {
  auto lex_hi = lexicon_of({{{10, 11}, 1.0}, {{11, 10}, 3.0}});
  ConceptGraph g1 = build_adjacency({10, 11}, lex_hi);
  // (11 -> 10) is stronger: node 1 precedes node 0
  CHECK(g1.tag(1, 0) == Relation::Right);
  CHECK(g1.tag(0, 1) == Relation::Left);

  auto lex_tie = lexicon_of({{{10, 11}, 2.0}, {{11, 10}, 2.0}});
  ConceptGraph g2 = build_adjacency({10, 11}, lex_tie);
  CHECK(g2.tag(0, 1) == Relation::Right);
  CHECK(g2.tag(1, 0) == Relation::Left);
}

TEST_CASE("adjacency matches a brute-force membership oracle") {
  Rng rng(23);
  std::vector<int> concepts = {4, 9, 12, 17, 21, 30};
  PmiLexicon lex;
  for (int a : concepts)
    for (int b : concepts) {
      if (a == b) continue;
      if (rng.bernoulli(0.3)) lex.entries[{a, b}] = rng.uniform(0.5, 3.0);
    }
  ConceptGraph g = build_adjacency(concepts, lex);
  const int k = static_cast<int>(concepts.size());
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      bool expect = i == j || lex.contains(concepts[i], concepts[j]) ||
                    lex.contains(concepts[j], concepts[i]);
      CHECK(g.at(i, j) == (expect ? 1 : 0));
    }
  // tag consistency on off-diagonal edges
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      if (i == j || !g.at(i, j)) continue;
      CHECK(((g.tag(i, j) == Relation::Left && g.tag(j, i) == Relation::Right) ||
             (g.tag(i, j) == Relation::Right && g.tag(j, i) == Relation::Left)));
    }
  CHECK_THROWS(build_adjacency({}, lex));
}

TEST_CASE("ablation graphs") {
  std::vector<int> concepts = {5, 6, 7};
  ConceptGraph ones = build_adjacency_ablation(concepts, GraphMode::OneForAll, 0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(ones.at(i, j) == 1);

  ConceptGraph r1 = build_adjacency_ablation(concepts, GraphMode::Random, 42);
  ConceptGraph r2 = build_adjacency_ablation(concepts, GraphMode::Random, 42);
  CHECK(r1.adj == r2.adj);
  for (int i = 0; i < 3; ++i) CHECK(r1.at(i, i) == 1);

  // Monte Carlo density of the off-diagonal entries
  std::vector<int> big;
  for (int i = 0; i < 51; ++i) big.push_back(i + 4);
  int64_t onbits = 0, total = 0;
  for (uint64_t seed = 0; seed < 4; ++seed) {
    ConceptGraph g = build_adjacency_ablation(big, GraphMode::Random, seed);
    const int k = g.k();
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        if (i == j) continue;
        onbits += g.at(i, j);
        ++total;
      }
  }
  const double density = static_cast<double>(onbits) / static_cast<double>(total);
  CHECK(total >= 10000);
  CHECK(density == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("attention rows: self-loop only, uniform neighborhoods, formula match") {
  Rng rng(29);
  WgcnParams params = make_wgcn(rng, 6, 1, false, 8);
  const WgcnLayer& layer = params.layers[0];

  // isolated node: alpha_ii = 1
  ConceptGraph solo = build_adjacency({9}, PmiLexicon{});
  Tensor h1 = rand_tensor(rng, {1, 6});
  Tensor a1 = wgcn_attention(h1, solo, layer);
  CHECK(a1[0] == doctest::Approx(1.0).epsilon(1e-12));

  // equal exponents spread uniformly: zero features zero all scores
  WgcnParams zero = make_wgcn(rng, 6, 1, false, 8);
  ConceptGraph full = build_adjacency_ablation({3, 4, 5}, GraphMode::OneForAll, 0);
  Tensor hz = Tensor::zeros({3, 6});
  Tensor az = wgcn_attention(hz, full, zero.layers[0]);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(az[static_cast<int64_t>(i) * 3 + j] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // random case vs direct formula evaluation; support respected exactly
  std::vector<int> nodes = {11, 12, 13, 14, 15};
  auto lex = lexicon_of({{{11, 12}, 1.0}, {{12, 13}, 0.9}, {{13, 14}, 0.8}, {{11, 15}, 0.7}});
  ConceptGraph g = build_adjacency(nodes, lex);
  Tensor h = rand_tensor(rng, {5, 6});
  Tensor alpha = wgcn_attention(h, g, layer);
  auto direct = direct_alpha(h, g, layer);
  for (int i = 0; i < 5; ++i) {
    double row = 0.0;
    for (int j = 0; j < 5; ++j) {
      const double a = alpha[static_cast<int64_t>(i) * 5 + j];
      CHECK(a == doctest::Approx(direct[static_cast<size_t>(i) * 5 + j]).epsilon(1e-10));
      if (!g.at(i, j)) CHECK(a == 0.0);
      row += a;
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("wgcn_layer closed forms") {
  Rng rng(31);
  WgcnParams params = make_wgcn(rng, 6, 1, false, 8);
  WgcnLayer& layer = params.layers[0];

  // k=1 self loop: h' = ReLU(LN(W h + b))
  Tensor h = rand_tensor(rng, {1, 6});
  Tensor alpha = Tensor::full({1, 1}, 1.0);
  Tensor out = wgcn_layer_forward(h, alpha, layer);
  Tensor manual = ad::relu(ad::layer_norm(nn::linear(h, layer.agg), layer.ln.gain, layer.ln.bias));
  for (int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(manual[i]));

  // identity W, zero b, uniform alpha over two identical vectors: the
  // aggregation before LN equals the shared vector
  WgcnLayer ident = std::move(params.layers[0]);
  for (int64_t i = 0; i < ident.agg.w.size(); ++i) ident.agg.w[i] = 0.0;
  for (int i = 0; i < 6; ++i) ident.agg.w[static_cast<int64_t>(i) * 6 + i] = 1.0;
  for (int64_t i = 0; i < ident.agg.b.size(); ++i) ident.agg.b[i] = 0.0;
  Tensor row = rand_tensor(rng, {1, 6});
  Tensor two = Tensor::zeros({2, 6});
  for (int i = 0; i < 6; ++i) {
    two[i] = row[i];
    two[6 + i] = row[i];
  }
  Tensor uh = Tensor::full({2, 2}, 0.5);
  Tensor agg = ad::matmul(uh, nn::linear(two, ident.agg));
  for (int i = 0; i < 6; ++i) {
    CHECK(agg[i] == doctest::Approx(row[i]).epsilon(1e-12));
    CHECK(agg[6 + i] == doctest::Approx(row[i]).epsilon(1e-12));
  }
}

TEST_CASE("wgcn_forward shape contract and L=1 collapse") {
  Rng rng(37);
  for (int k : {1, 3, 17, 64}) {
    WgcnParams params = make_wgcn(rng, 8, 2, false, 8);
    std::vector<int> nodes;
    for (int i = 0; i < k; ++i) nodes.push_back(i + 4);
    ConceptGraph g = build_adjacency_ablation(nodes, GraphMode::OneForAll, 0);
    Tensor h = rand_tensor(rng, {k, 8});
    Tensor out = wgcn_forward(h, g, params);
    CHECK(out.shape == ad::Shape{k, 8});
  }
  CHECK_THROWS(make_wgcn(rng, 8, 0, false, 8));
}

TEST_CASE("permutation equivariance over random permutations") {
  Rng rng(41);
  const int k = 7, d = 8;
  WgcnParams params = make_wgcn(rng, d, 2, false, 8);
  std::vector<int> nodes = {10, 11, 12, 13, 14, 15, 16};
  auto lex = lexicon_of({{{10, 11}, 1.2},
                         {{11, 12}, 0.8},
                         {{12, 13}, 0.7},
                         {{14, 10}, 0.9},
                         {{15, 16}, 1.1},
                         {{16, 10}, 0.6}});
  ConceptGraph g = build_adjacency(nodes, lex);
  Tensor h = rand_tensor(rng, {k, d});
  Tensor base = wgcn_forward(h, g, params);

  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> perm(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) perm[static_cast<size_t>(i)] = i;
    rng.shuffle(perm);

    // permuted inputs: node p[i] of the new graph is node perm[p[i]] of the old
    std::vector<int> pnodes(static_cast<size_t>(k));
    Tensor ph = Tensor::zeros({k, d});
    ConceptGraph pg;
    pg.nodes.resize(static_cast<size_t>(k));
    pg.adj.assign(static_cast<size_t>(k) * k, 0);
    pg.tags.assign(static_cast<size_t>(k) * k, Relation::Self);
    for (int i = 0; i < k; ++i) {
      pg.nodes[static_cast<size_t>(i)] = nodes[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      for (int c = 0; c < d; ++c)
        ph[static_cast<int64_t>(i) * d + c] =
            h[static_cast<int64_t>(perm[static_cast<size_t>(i)]) * d + c];
      for (int j = 0; j < k; ++j) {
        pg.adj[static_cast<size_t>(i) * k + j] =
            g.at(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
        pg.tags[static_cast<size_t>(i) * k + j] =
            g.tag(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
      }
    }
    Tensor pout = wgcn_forward(ph, pg, params);
    for (int i = 0; i < k; ++i)
      for (int c = 0; c < d; ++c) {
        const double expect = base[static_cast<int64_t>(perm[static_cast<size_t>(i)]) * d + c];
        CHECK(pout[static_cast<int64_t>(i) * d + c] == doctest::Approx(expect).epsilon(1e-10));
      }
  }
}

TEST_CASE("graph dump tsv") {
  std::vector<std::vector<std::string>> corpus = {{"girl", "eating", "food"}};
  auto vocab = Vocabulary::build(corpus);
  auto lex = lexicon_of({{{vocab.id("girl"), vocab.id("eating")}, 1.0}});
  ConceptGraph g = build_adjacency({vocab.id("girl"), vocab.id("eating")}, lex);
  Rng rng(43);
  WgcnParams params = make_wgcn(rng, 6, 1, false, 8);
  Tensor h = rand_tensor(rng, {2, 6});
  Tensor alpha = wgcn_attention(h, g, params.layers[0]);
  write_graph_tsv("graph_tmp.tsv", g, alpha, vocab);
  auto lines = io::read_lines("graph_tmp.tsv");
  CHECK(lines[0] == "gi\tgj\ttag\talpha_layer1");
  CHECK(lines.size() == 5);  // header + 2 self loops + 2 directed tags
  std::remove("graph_tmp.tsv");
}
