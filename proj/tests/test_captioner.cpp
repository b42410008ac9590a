#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "concap/checkpoint.hpp"
#include "concap/model.hpp"
#include "concap/ops.hpp"
#include "concap/rng.hpp"
#include "concap/train.hpp"

using namespace concap;
using ad::Tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.n_enc = 1;
  cfg.n_concept = 1;
  cfg.n_dec = 1;
  cfg.query_count = 4;
  cfg.gcn_layers = 1;
  cfg.top_k = 3;
  cfg.ffn_dim = 16;
  cfg.d_feat = 5;
  cfg.max_caption_len = 10;
  cfg.vocab_size = 14;
  cfg.concept_vocab_size = 6;
  cfg.seed = 7;
  return cfg;
}

ConceptVocabulary tiny_concepts() {
  return ConceptVocabulary::from_ids({4, 5, 6, 7, 8, 9});
}

PmiLexicon tiny_lexicon() {
  PmiLexicon lex;
  lex.entries[{4, 5}] = 1.2;
  lex.entries[{5, 6}] = 0.9;
  lex.entries[{6, 7}] = 0.8;
  lex.entries[{8, 4}] = 0.7;
  return lex;
}

Tensor rand_features(Rng& rng, int s, int d_feat) {
  Tensor t = Tensor::zeros({s, d_feat});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

CaptionSample make_sample(Rng& rng, const ModelConfig& cfg, std::vector<int> caption) {
  CaptionSample s;
  s.features = rand_features(rng, 4, cfg.d_feat);
  s.caption = std::move(caption);
  s.concept_labels.assign(static_cast<size_t>(cfg.concept_vocab_size), 0.0);
  for (int id : s.caption) {
    if (id >= 4 && id < 4 + cfg.concept_vocab_size)
      s.concept_labels[static_cast<size_t>(id - 4)] = 1.0;
  }
  return s;
}

}  // namespace

TEST_CASE("visual_encode shape contract, S=1 included") {
  ModelConfig cfg = tiny_config();
  Captioner model(cfg);
  Rng rng(1);
  for (int s : {1, 2, 7, 49}) {
    Tensor v = model.visual_encode(rand_features(rng, s, cfg.d_feat));
    CHECK(v.shape == ad::Shape{s, cfg.d_model});
  }
  CHECK_THROWS(model.visual_encode(rand_features(rng, 3, cfg.d_feat + 1)));
}

TEST_CASE("predict_concepts: sigmoid range and duplicated query behavior") {
  ModelConfig cfg = tiny_config();
  Captioner model(cfg);
  Rng rng(2);
  Tensor v = model.visual_encode(rand_features(rng, 5, cfg.d_feat));
  auto cp = model.predict_concepts(v);
  CHECK(cp.probs.size() == cfg.concept_vocab_size);
  for (int64_t i = 0; i < cp.probs.size(); ++i) {
    CHECK(cp.probs[i] > 0.0);
    CHECK(cp.probs[i] < 1.0);
  }

  // duplicate query rows produce identical score rows; the first wins the
  // max and the pooled output is the same as if the copy were absent
  Tensor* queries = model.params().find("queries");
  REQUIRE(queries != nullptr);
  for (int c = 0; c < cfg.d_model; ++c)
    (*queries)[static_cast<int64_t>(1) * cfg.d_model + c] = (*queries)[c];
  auto cp2 = model.predict_concepts(v);
  for (int j = 0; j < cfg.concept_vocab_size; ++j) CHECK(cp2.argmax_query[static_cast<size_t>(j)] != 1);
  // pooling is idempotent over duplicates at the op level
  Tensor scores = Tensor::from({3, 2}, {0.3, 0.9, 0.3, 0.9, 0.1, 0.2});
  Tensor pooled = ad::max_axis0(scores);
  CHECK(pooled[0] == 0.3);
  CHECK(pooled[1] == 0.9);
}

TEST_CASE("select_concepts: argmax, ties, sort oracle") {
  auto cv = tiny_concepts();
  CHECK(Captioner::select_concepts({0.1, 0.9, 0.2, 0.3, 0.0, 0.5}, cv, 1) ==
        std::vector<int>{5});
  // exact tie: lower word id first
  CHECK(Captioner::select_concepts({0.5, 0.2, 0.5, 0.1, 0.1, 0.1}, cv, 2) ==
        std::vector<int>{4, 6});

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> probs(6);
    for (auto& p : probs) p = rng.uniform();
    auto got = Captioner::select_concepts(probs, cv, 5);
    // full-sort oracle
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < 6; ++i) order.push_back({-probs[static_cast<size_t>(i)], i});
    std::sort(order.begin(), order.end());
    std::vector<int> expect;
    for (int i = 0; i < 5; ++i) expect.push_back(cv.concept_ids[static_cast<size_t>(order[static_cast<size_t>(i)].second)]);
    CHECK(got == expect);
  }
}

TEST_CASE("decode causality and step/teacher-forcing consistency") {
  ModelConfig cfg = tiny_config();
  Captioner model(cfg);
  Rng rng(4);
  Tensor feats = rand_features(rng, 4, cfg.d_feat);
  auto ctx = model.build_context(feats, tiny_lexicon(), tiny_concepts(), nullptr);
  const Tensor* c = ctx.c_tilde.defined() ? &ctx.c_tilde : nullptr;

  std::vector<int> tokens1 = {Vocabulary::kBos, 5, 7, 6};
  std::vector<int> tokens2 = {Vocabulary::kBos, 5, 7, 9};  // change the last position
  Tensor l1 = model.decode_logits(tokens1, ctx.v_tilde, c);
  Tensor l2 = model.decode_logits(tokens2, ctx.v_tilde, c);
  CHECK(l1.shape == ad::Shape{4, cfg.vocab_size});
  for (int t = 0; t < 3; ++t)
    for (int vix = 0; vix < cfg.vocab_size; ++vix)
      CHECK(l1[static_cast<int64_t>(t) * cfg.vocab_size + vix] ==
            l2[static_cast<int64_t>(t) * cfg.vocab_size + vix]);  // bit-identical

  // decode_step equals the matching teacher-forced row
  std::vector<int> prefix = {Vocabulary::kBos, 5, 7};
  Tensor step = model.decode_step(prefix, ctx.v_tilde, c);
  CHECK(step.shape == ad::Shape{cfg.vocab_size});
  for (int vix = 0; vix < cfg.vocab_size; ++vix)
    CHECK(step[vix] == l1[static_cast<int64_t>(2) * cfg.vocab_size + vix]);

  CHECK_THROWS(model.decode_step({}, ctx.v_tilde, c));
  CHECK_THROWS(model.decode_step({5, 6}, ctx.v_tilde, c));  // missing BOS
}

TEST_CASE("total loss arithmetic and beta wiring") {
  ModelConfig cfg = tiny_config();
  Captioner model(cfg);
  Rng rng(5);
  CaptionSample s = make_sample(rng, cfg, {Vocabulary::kBos, 5, 7, 4, Vocabulary::kEos});

  auto losses = model.forward_train(s, tiny_lexicon(), tiny_concepts());
  CHECK(losses.total.value() ==
        doctest::Approx(losses.cap.value() + cfg.beta * losses.cpt.value()).epsilon(1e-12));

  ModelConfig cfg2 = cfg;
  cfg2.beta = 2.0;
  Captioner m2(cfg2);
  auto l2 = m2.forward_train(s, tiny_lexicon(), tiny_concepts());
  CHECK(l2.total.value() ==
        doctest::Approx(l2.cap.value() + 2.0 * l2.cpt.value()).epsilon(1e-12));
  // beta=2, cap=0.7, concept=0.3 -> 1.3 is the same arithmetic
  CHECK(0.7 + 2.0 * 0.3 == doctest::Approx(1.3));

  ModelConfig cfg0 = cfg;
  cfg0.beta = 0.0;
  Captioner m0(cfg0);
  auto l0 = m0.forward_train(s, tiny_lexicon(), tiny_concepts());
  CHECK(l0.total.value() == doctest::Approx(l0.cap.value()).epsilon(1e-12));
}

TEST_CASE("beta=0: concept head output layer gets zero gradient") {
  ModelConfig cfg = tiny_config();
  cfg.beta = 0.0;
  Captioner model(cfg);
  Rng rng(6);
  CaptionSample s = make_sample(rng, cfg, {Vocabulary::kBos, 5, 7, Vocabulary::kEos});

  model.params().zero_grad();
  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    auto losses = model.forward_train(s, tiny_lexicon(), tiny_concepts());
    tape.backward(losses.total);
  }
  // selection is discrete, so the only gradient path into the scorer's final
  // layer is the concept loss, which beta=0 scales away
  Tensor* w = model.params().find("head.fc2.w");
  Tensor* b = model.params().find("head.fc2.b");
  REQUIRE(w != nullptr);
  for (int64_t i = 0; i < w->size(); ++i) CHECK(w->grad_ptr()[i] == 0.0);
  for (int64_t i = 0; i < b->size(); ++i) CHECK(b->grad_ptr()[i] == 0.0);
  // while the decoder head does receive gradient
  Tensor* out_w = model.params().find("out.w");
  double norm = 0.0;
  for (int64_t i = 0; i < out_w->size(); ++i) norm += std::fabs(out_w->grad_ptr()[i]);
  CHECK(norm > 0.0);
}

TEST_CASE("forward_train determinism: same seed, same sample, identical bits") {
  ModelConfig cfg = tiny_config();
  Rng rng(8);
  CaptionSample s = make_sample(rng, cfg, {Vocabulary::kBos, 6, 8, 5, Vocabulary::kEos});
  Captioner a(cfg);
  Captioner b(cfg);
  auto la = a.forward_train(s, tiny_lexicon(), tiny_concepts());
  auto lb = b.forward_train(s, tiny_lexicon(), tiny_concepts());
  CHECK(la.total.value() == lb.total.value());
  CHECK(la.cap.value() == lb.cap.value());
  CHECK(la.cpt.value() == lb.cpt.value());
}

TEST_CASE("every parameter receives a finite gradient from total loss") {
  ModelConfig cfg = tiny_config();
  Captioner model(cfg);
  Rng rng(9);
  CaptionSample s = make_sample(rng, cfg, {Vocabulary::kBos, 4, 5, 6, Vocabulary::kEos});
  model.params().zero_grad();
  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    auto losses = model.forward_train(s, tiny_lexicon(), tiny_concepts());
    tape.backward(losses.total);
  }
  for (auto& [name, t] : model.params().items) {
    CAPTURE(name);
    REQUIRE(t->has_grad());
    for (int64_t i = 0; i < t->size(); ++i) CHECK(std::isfinite(t->grad_ptr()[i]));
  }
}

TEST_CASE("overfit smoke: loss decreases over 50 steps on one sample") {
  ModelConfig cfg = tiny_config();
  Captioner model(cfg);
  Rng rng(10);
  CaptionSample s = make_sample(rng, cfg, {Vocabulary::kBos, 5, 8, 7, Vocabulary::kEos});
  TrainConfig tc;
  tc.epochs = 50;
  tc.lr = 3e-3;
  tc.shuffle = false;
  auto log = train(model, {s}, tiny_lexicon(), tiny_concepts(), tc);
  CHECK(log.epochs.size() == 50);
  CHECK(log.epochs.back().total < 0.5 * log.epochs.front().total);
}

TEST_CASE("generate contract and beam=1 equivalence on 100 random inputs") {
  ModelConfig cfg = tiny_config();
  Captioner model(cfg);
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor feats = rand_features(rng, 4, cfg.d_feat);
    auto greedy = model.generate(feats, tiny_lexicon(), tiny_concepts(), DecodeMode::Greedy);
    auto beam1 = model.generate(feats, tiny_lexicon(), tiny_concepts(), DecodeMode::Beam, 1);
    CHECK(greedy == beam1);
    REQUIRE(!greedy.empty());
    // ends with EOS or hits the generation cap
    if (greedy.back() != Vocabulary::kEos)
      CHECK(static_cast<int>(greedy.size()) == cfg.max_caption_len - 1);
    for (int tok : greedy) {
      CHECK(tok != Vocabulary::kPad);
      CHECK(tok != Vocabulary::kBos);
    }
  }
}

TEST_CASE("beam monotonicity and score dominance over greedy") {
  ModelConfig cfg = tiny_config();
  cfg.beam_size = 3;
  Captioner model(cfg);
  Rng rng(12);
  auto lex = tiny_lexicon();
  auto cv = tiny_concepts();
  for (int trial = 0; trial < 20; ++trial) {
    Tensor feats = rand_features(rng, 4, cfg.d_feat);
    Captioner::Context ctx;
    auto greedy = model.generate(feats, lex, cv, DecodeMode::Greedy, 0, &ctx);
    auto beam = model.generate(feats, lex, cv, DecodeMode::Beam, 3);
    const Tensor* c = ctx.c_tilde.defined() ? &ctx.c_tilde : nullptr;

    auto score = [&](const std::vector<int>& tokens) {
      std::vector<int> prefix = {Vocabulary::kBos};
      double lp = 0.0;
      for (int tok : tokens) {
        Tensor logits = model.decode_step(prefix, ctx.v_tilde, c);
        double mx = logits[0];
        for (int64_t j = 1; j < logits.size(); ++j) mx = std::max(mx, logits[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < logits.size(); ++j) denom += std::exp(logits[j] - mx);
        lp += logits[tok] - (std::log(denom) + mx);
        prefix.push_back(tok);
      }
      return lp / static_cast<double>(tokens.size());
    };
    CHECK(score(beam) >= score(greedy) - 1e-12);
  }
}

TEST_CASE("beam with exhaustive width matches the enumeration oracle, 50 cases") {
  // branching factor 5 (EOS, UNK, three words), max generated length 4
  ModelConfig cfg = tiny_config();
  cfg.vocab_size = 7;
  cfg.max_caption_len = 5;
  cfg.use_concepts = false;
  cfg.use_wgcn = false;
  auto cv = tiny_concepts();
  auto lex = tiny_lexicon();

  int matches = 0, cases = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    ModelConfig c = cfg;
    c.seed = seed;
    Captioner model(c);
    Rng rng(100 + seed);
    for (int input = 0; input < 5; ++input) {
      Tensor feats = rand_features(rng, 3, cfg.d_feat);
      auto ctx = model.build_context(feats, lex, cv, nullptr);

      // exhaustive enumeration with memoized next-token log-probs
      std::vector<int> best_tokens;
      double best_score = -1e300;
      std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& tokens,
                                                                double lp) {
        const int max_gen = c.max_caption_len - 1;
        const bool finished = !tokens.empty() && tokens.back() == Vocabulary::kEos;
        if (finished || static_cast<int>(tokens.size()) == max_gen) {
          const double norm = lp / static_cast<double>(tokens.size());
          if (norm > best_score) {
            best_score = norm;
            best_tokens = tokens;
          }
          return;
        }
        std::vector<int> prefix = {Vocabulary::kBos};
        prefix.insert(prefix.end(), tokens.begin(), tokens.end());
        ad::Tensor logits = model.decode_step(prefix, ctx.v_tilde, nullptr);
        double mx = logits[0];
        for (int64_t j = 1; j < logits.size(); ++j) mx = std::max(mx, logits[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < logits.size(); ++j) denom += std::exp(logits[j] - mx);
        const double lse = std::log(denom) + mx;
        for (int tok = 0; tok < c.vocab_size; ++tok) {
          if (tok == Vocabulary::kPad || tok == Vocabulary::kBos) continue;
          tokens.push_back(tok);
          walk(tokens, lp + logits[tok] - lse);
          tokens.pop_back();
        }
      };
      std::vector<int> stack;
      walk(stack, 0.0);

      auto beam = model.generate(feats, lex, cv, DecodeMode::Beam, 100000);
      ++cases;
      if (beam == best_tokens) ++matches;
    }
  }
  CHECK(cases == 50);
  CHECK(matches == 50);
}

TEST_CASE("force_gt_concepts selects the labeled concepts") {
  ModelConfig cfg = tiny_config();
  cfg.force_gt_concepts = true;
  cfg.top_k = 2;
  Captioner model(cfg);
  Rng rng(13);
  CaptionSample s = make_sample(rng, cfg, {Vocabulary::kBos, 5, 8, Vocabulary::kEos});
  auto ctx = model.build_context(s.features, tiny_lexicon(), tiny_concepts(),
                                 &s.concept_labels);
  CHECK(ctx.concept_ids == std::vector<int>{5, 8});
}

TEST_CASE("checkpoint round trip and shape verification") {
  ModelConfig cfg = tiny_config();
  Captioner model(cfg);
  const std::string bytes = checkpoint_bytes(model.params());
  save_checkpoint("model_tmp.ckpt", model.params());

  // perturb, reload, compare bytes
  Captioner other(cfg);
  for (auto& [name, t] : other.params().items)
    for (int64_t i = 0; i < t->size(); ++i) (*t)[i] += 0.5;
  load_checkpoint("model_tmp.ckpt", other.params());
  CHECK(checkpoint_bytes(other.params()) == bytes);

  // a different architecture must refuse the file
  ModelConfig cfg2 = cfg;
  cfg2.d_model = 16;
  Captioner wrong(cfg2);
  CHECK_THROWS(load_checkpoint("model_tmp.ckpt", wrong.params()));
  std::remove("model_tmp.ckpt");
}

TEST_CASE("config kv round trip") {
  ModelConfig cfg = tiny_config();
  cfg.graph_mode = GraphMode::Random;
  cfg.beta = 0.25;
  cfg.use_wgcn = false;
  const std::string kv = cfg.to_kv();
  ModelConfig back = ModelConfig::from_kv(kv);
  CHECK(back.to_kv() == kv);
  CHECK(back.d_model == cfg.d_model);
  CHECK(back.graph_mode == GraphMode::Random);
  CHECK(back.use_wgcn == false);
  CHECK_THROWS(ModelConfig::from_kv("nonsense_key=1\n"));
}
