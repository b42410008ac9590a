#include "concap/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "concap/gradcheck.hpp"
#include "concap/ops.hpp"

namespace concap {

using ad::Tensor;

void ModelConfig::validate() const {
  if (d_model < 2 || heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("config: d_model must be >= 2 and divisible by heads");
  if (n_enc < 1 || n_concept < 1 || n_dec < 1 || gcn_layers < 1 || query_count < 1)
    throw std::invalid_argument("config: layer and query counts must be >= 1");
  if (beta < 0.0) throw std::invalid_argument("config: beta must be >= 0");
  if (top_k < 1 || top_k > 64)
    throw std::invalid_argument("config: top_k must be in 1..64");
  if (beam_size < 1) throw std::invalid_argument("config: beam_size must be >= 1");
  if (max_caption_len < 3)
    throw std::invalid_argument("config: max_caption_len must be >= 3");
  if (ffn_dim < 1 || d_feat < 1)
    throw std::invalid_argument("config: ffn_dim and d_feat must be >= 1");
  if (vocab_size > 0 && vocab_size < Vocabulary::kNumSpecial + 1)
    throw std::invalid_argument("config: vocab_size too small");
}

namespace {

std::string bool_str(bool b) { return b ? "1" : "0"; }

std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

std::string ModelConfig::to_kv() const {
  std::ostringstream ss;
  ss << "beam_size=" << beam_size << "\n";
  ss << "beta=" << format_double(beta) << "\n";
  ss << "clip_margin=" << format_double(clip_margin) << "\n";
  ss << "concept_vocab_size=" << concept_vocab_size << "\n";
  ss << "d_feat=" << d_feat << "\n";
  ss << "d_model=" << d_model << "\n";
  ss << "ffn_dim=" << ffn_dim << "\n";
  ss << "force_gt_concepts=" << bool_str(force_gt_concepts) << "\n";
  ss << "gamma_neg=" << format_double(gamma_neg) << "\n";
  ss << "gamma_pos=" << format_double(gamma_pos) << "\n";
  ss << "gcn_layers=" << gcn_layers << "\n";
  ss << "graph_mode=" << graph_mode_name(graph_mode) << "\n";
  ss << "heads=" << heads << "\n";
  ss << "max_caption_len=" << max_caption_len << "\n";
  ss << "n_concept=" << n_concept << "\n";
  ss << "n_dec=" << n_dec << "\n";
  ss << "n_enc=" << n_enc << "\n";
  ss << "pmi_threshold=" << format_double(pmi_threshold) << "\n";
  ss << "query_count=" << query_count << "\n";
  ss << "seed=" << seed << "\n";
  ss << "top_k=" << top_k << "\n";
  ss << "use_concepts=" << bool_str(use_concepts) << "\n";
  ss << "use_ffn=" << bool_str(use_ffn) << "\n";
  ss << "use_wgcn=" << bool_str(use_wgcn) << "\n";
  ss << "vocab_size=" << vocab_size << "\n";
  return ss.str();
}

void ModelConfig::set_field(const std::string& key, const std::string& value) {
  auto as_int = [&] { return std::stoi(value); };
  auto as_double = [&] { return std::stod(value); };
  auto as_bool = [&] { return value == "1" || value == "true"; };
  if (key == "beam_size") beam_size = as_int();
  else if (key == "beta") beta = as_double();
  else if (key == "clip_margin") clip_margin = as_double();
  else if (key == "concept_vocab_size") concept_vocab_size = as_int();
  else if (key == "d_feat") d_feat = as_int();
  else if (key == "d_model") d_model = as_int();
  else if (key == "ffn_dim") ffn_dim = as_int();
  else if (key == "force_gt_concepts") force_gt_concepts = as_bool();
  else if (key == "gamma_neg") gamma_neg = as_double();
  else if (key == "gamma_pos") gamma_pos = as_double();
  else if (key == "gcn_layers") gcn_layers = as_int();
  else if (key == "graph_mode") graph_mode = graph_mode_from_string(value);
  else if (key == "heads") heads = as_int();
  else if (key == "max_caption_len") max_caption_len = as_int();
  else if (key == "n_concept") n_concept = as_int();
  else if (key == "n_dec") n_dec = as_int();
  else if (key == "n_enc") n_enc = as_int();
  else if (key == "pmi_threshold") pmi_threshold = as_double();
  else if (key == "query_count") query_count = as_int();
  else if (key == "seed") seed = std::stoull(value);
  else if (key == "top_k") top_k = as_int();
  else if (key == "use_concepts") use_concepts = as_bool();
  else if (key == "use_ffn") use_ffn = as_bool();
  else if (key == "use_wgcn") use_wgcn = as_bool();
  else if (key == "vocab_size") vocab_size = as_int();
  else throw std::invalid_argument("unknown config key: " + key);
}

ModelConfig ModelConfig::from_kv(const std::string& text) {
  ModelConfig cfg;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("bad config line: " + line);
    cfg.set_field(line.substr(0, eq), line.substr(eq + 1));
  }
  return cfg;
}

Captioner::Captioner(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.vocab_size <= 0 || cfg_.d_feat <= 0)
    throw std::invalid_argument("config: vocab_size and d_feat must be bound before building");
  if (cfg_.use_concepts && cfg_.concept_vocab_size <= 0)
    throw std::invalid_argument("config: concept_vocab_size must be bound before building");

  Rng rng(cfg_.seed);
  const int d = cfg_.d_model;

  in_proj_ = nn::make_linear(rng, cfg_.d_feat, d);
  for (int l = 0; l < cfg_.n_enc; ++l) {
    EncoderLayer e;
    e.attn = nn::make_attention(rng, d, cfg_.heads);
    e.ln1 = nn::make_layer_norm(d);
    e.ffn = nn::make_ffn(rng, d, cfg_.ffn_dim);
    e.ln2 = nn::make_layer_norm(d);
    enc_.push_back(std::move(e));
  }

  if (cfg_.use_concepts) {
    queries_ = nn::init_embedding(rng, cfg_.query_count, d);
    for (int l = 0; l < cfg_.n_concept; ++l) {
      ConceptLayer c;
      c.cross = nn::make_attention(rng, d, cfg_.heads);
      c.ln1 = nn::make_layer_norm(d);
      c.ffn = nn::make_ffn(rng, d, cfg_.ffn_dim);
      c.ln2 = nn::make_layer_norm(d);
      cpt_.push_back(std::move(c));
    }
    head1_ = nn::make_linear(rng, d, cfg_.ffn_dim);
    head2_ = nn::make_linear(rng, cfg_.ffn_dim, cfg_.concept_vocab_size);
    if (cfg_.use_wgcn)
      wgcn_ = make_wgcn(rng, d, cfg_.gcn_layers, cfg_.graph_mode == GraphMode::Mlp,
                        cfg_.ffn_dim);
  }

  tok_emb_ = nn::init_embedding(rng, cfg_.vocab_size, d);
  pos_emb_ = nn::init_embedding(rng, cfg_.max_caption_len, d);
  for (int l = 0; l < cfg_.n_dec; ++l) {
    DecoderLayer dl;
    dl.self_attn = nn::make_attention(rng, d, cfg_.heads);
    dl.ln1 = nn::make_layer_norm(d);
    dl.cross_v = nn::make_attention(rng, d, cfg_.heads);
    if (cfg_.use_concepts) dl.cross_c = nn::make_attention(rng, d, cfg_.heads);
    dl.ln2 = nn::make_layer_norm(d);
    dl.ffn = nn::make_ffn(rng, d, cfg_.ffn_dim);
    dl.ln3 = nn::make_layer_norm(d);
    dec_.push_back(std::move(dl));
  }
  out_ = nn::make_linear(rng, d, cfg_.vocab_size);

  register_params();
}

void Captioner::register_params() {
  collect(in_proj_, "in_proj", params_);
  for (size_t l = 0; l < enc_.size(); ++l) {
    const std::string p = "enc." + std::to_string(l);
    collect(enc_[l].attn, p + ".attn", params_);
    collect(enc_[l].ln1, p + ".ln1", params_);
    if (cfg_.use_ffn) {
      collect(enc_[l].ffn, p + ".ffn", params_);
      collect(enc_[l].ln2, p + ".ln2", params_);
    }
  }
  if (cfg_.use_concepts) {
    params_.add("queries", &queries_);
    for (size_t l = 0; l < cpt_.size(); ++l) {
      const std::string p = "cpt." + std::to_string(l);
      collect(cpt_[l].cross, p + ".cross", params_);
      collect(cpt_[l].ln1, p + ".ln1", params_);
      if (cfg_.use_ffn) {
        collect(cpt_[l].ffn, p + ".ffn", params_);
        collect(cpt_[l].ln2, p + ".ln2", params_);
      }
    }
    collect(head1_, "head.fc1", params_);
    collect(head2_, "head.fc2", params_);
    if (cfg_.use_wgcn) collect(wgcn_, "wgcn", params_);
  }
  params_.add("tok_emb", &tok_emb_);
  params_.add("pos_emb", &pos_emb_);
  for (size_t l = 0; l < dec_.size(); ++l) {
    const std::string p = "dec." + std::to_string(l);
    collect(dec_[l].self_attn, p + ".self", params_);
    collect(dec_[l].ln1, p + ".ln1", params_);
    collect(dec_[l].cross_v, p + ".cross_v", params_);
    if (cfg_.use_concepts) collect(dec_[l].cross_c, p + ".cross_c", params_);
    collect(dec_[l].ln2, p + ".ln2", params_);
    if (cfg_.use_ffn) {
      collect(dec_[l].ffn, p + ".ffn", params_);
      collect(dec_[l].ln3, p + ".ln3", params_);
    }
  }
  collect(out_, "out", params_);
  params_.sort_by_name();
}

Tensor Captioner::visual_encode(const Tensor& features) {
  if (features.rank() != 2 || features.dim(1) != cfg_.d_feat)
    throw std::invalid_argument("visual_encode: features must be [S, " +
                                std::to_string(cfg_.d_feat) + "]");
  Tensor x = nn::linear(features, in_proj_);
  for (auto& layer : enc_) {
    x = nn::layer_norm(ad::add(nn::attention(x, x, x, layer.attn), x), layer.ln1);
    if (cfg_.use_ffn)
      x = nn::layer_norm(ad::add(nn::ffn(x, layer.ffn), x), layer.ln2);
  }
  return x;
}

Captioner::ConceptPrediction Captioner::predict_concepts(const Tensor& v_tilde) {
  if (!cfg_.use_concepts)
    throw std::logic_error("predict_concepts: concept branch is disabled");
  Tensor q = queries_;
  for (auto& layer : cpt_) {
    q = nn::layer_norm(ad::add(nn::attention(q, v_tilde, v_tilde, layer.cross), q),
                       layer.ln1);
    if (cfg_.use_ffn)
      q = nn::layer_norm(ad::add(nn::ffn(q, layer.ffn), q), layer.ln2);
  }
  ConceptPrediction cp;
  cp.query_features = q;
  Tensor scores = ad::sigmoid(nn::linear(ad::relu(nn::linear(q, head1_)), head2_));
  cp.probs = ad::max_axis0(scores, &cp.argmax_query);
  cp.selection_probs.assign(cp.probs.ptr(), cp.probs.ptr() + cp.probs.size());
  return cp;
}

std::vector<int> Captioner::select_concepts(const std::vector<double>& probs,
                                            const ConceptVocabulary& cv, int top_k) {
  if (top_k < 1) throw std::invalid_argument("select_concepts: top_k must be >= 1");
  if (static_cast<int>(probs.size()) != cv.size())
    throw std::invalid_argument("select_concepts: probs/vocabulary size mismatch");
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs[static_cast<size_t>(a)] != probs[static_cast<size_t>(b)])
      return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)];
    return a < b;  // concept index order == word id order
  });
  const int k = std::min<int>(top_k, static_cast<int>(order.size()));
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i)
    ids.push_back(cv.concept_ids[static_cast<size_t>(order[static_cast<size_t>(i)])]);
  return ids;
}

Tensor Captioner::concept_node_features(const std::vector<int>& word_ids,
                                        const ConceptPrediction& cp,
                                        const ConceptVocabulary& cv) {
  std::vector<int> query_rows;
  query_rows.reserve(word_ids.size());
  for (int id : word_ids) {
    const int idx = cv.index_of(id);
    if (idx < 0) throw std::invalid_argument("concept_node_features: not a concept id");
    query_rows.push_back(cp.argmax_query[static_cast<size_t>(idx)]);
  }
  Tensor emb = ad::gather_rows(tok_emb_, word_ids);
  Tensor pooled = ad::gather_rows(cp.query_features, query_rows);
  return ad::add(emb, pooled);
}

Tensor Captioner::decode_logits(const std::vector<int>& tokens, const Tensor& v_tilde,
                                const Tensor* c_tilde) {
  if (tokens.empty()) throw std::invalid_argument("decode: empty prefix");
  if (static_cast<int>(tokens.size()) > cfg_.max_caption_len)
    throw std::invalid_argument("decode: prefix longer than max_caption_len");
  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = ad::add(ad::gather_rows(tok_emb_, tokens), ad::gather_rows(pos_emb_, positions));
  for (auto& layer : dec_) {
    x = nn::layer_norm(ad::add(nn::attention(x, x, x, layer.self_attn, true), x),
                       layer.ln1);
    Tensor cross = nn::attention(x, v_tilde, v_tilde, layer.cross_v);
    if (c_tilde) {
      if (!cfg_.use_concepts)
        throw std::logic_error("decode: concept stream passed to a no-concept model");
      cross = ad::add(cross, nn::attention(x, *c_tilde, *c_tilde, layer.cross_c));
    }
    x = nn::layer_norm(ad::add(cross, x), layer.ln2);
    if (cfg_.use_ffn)
      x = nn::layer_norm(ad::add(nn::ffn(x, layer.ffn), x), layer.ln3);
  }
  return nn::linear(x, out_);
}

Tensor Captioner::decode_step(const std::vector<int>& prefix, const Tensor& v_tilde,
                              const Tensor* c_tilde) {
  if (prefix.empty()) throw std::invalid_argument("decode_step: empty prefix");
  if (prefix[0] != Vocabulary::kBos)
    throw std::invalid_argument("decode_step: prefix must start with BOS");
  Tensor logits = decode_logits(prefix, v_tilde, c_tilde);
  Tensor last = ad::gather_rows(logits, {static_cast<int>(prefix.size()) - 1});
  return ad::reshape(last, {cfg_.vocab_size});
}

Captioner::Context Captioner::build_context(const Tensor& features,
                                            const PmiLexicon& lexicon,
                                            const ConceptVocabulary& cv,
                                            const std::vector<double>* gt_labels) {
  Context ctx;
  ctx.v_tilde = visual_encode(features);
  if (!cfg_.use_concepts) return ctx;

  ctx.prediction = predict_concepts(ctx.v_tilde);
  if (cfg_.force_gt_concepts && gt_labels) {
    // diagnostic mode: selection (and reported probabilities) come from the
    // ground-truth labels; the concept loss still trains the real head
    ctx.prediction.selection_probs = *gt_labels;
  }
  ctx.concept_ids = select_concepts(ctx.prediction.selection_probs, cv, cfg_.top_k);
  Tensor nodes = concept_node_features(ctx.concept_ids, ctx.prediction, cv);

  if (!cfg_.use_wgcn) {
    ctx.c_tilde = nodes;  // unstructured concept features
    return ctx;
  }

  switch (cfg_.graph_mode) {
    case GraphMode::Threshold:
      ctx.graph = build_adjacency(ctx.concept_ids, lexicon);
      break;
    case GraphMode::Random: {
      // deterministic per concept set: hash the node ids into the seed
      uint64_t h = cfg_.seed * 1099511628211ull;
      for (int id : ctx.concept_ids) h = (h ^ static_cast<uint64_t>(id)) * 1099511628211ull;
      ctx.graph = build_adjacency_ablation(ctx.concept_ids, GraphMode::Random, h);
      break;
    }
    case GraphMode::OneForAll:
      ctx.graph = build_adjacency_ablation(ctx.concept_ids, GraphMode::OneForAll, 0);
      break;
    case GraphMode::Mlp:
      ctx.graph = build_adjacency_ablation(ctx.concept_ids, GraphMode::Mlp, 0);
      break;
  }
  ctx.c_tilde = wgcn_forward(nodes, ctx.graph, wgcn_, cfg_.graph_mode == GraphMode::Mlp,
                             &ctx.alphas);
  return ctx;
}

TrainLosses Captioner::forward_train(const CaptionSample& sample,
                                     const PmiLexicon& lexicon,
                                     const ConceptVocabulary& cv, Context* ctx_out) {
  if (static_cast<int>(sample.caption.size()) < 2)
    throw std::invalid_argument("forward_train: caption must have BOS and EOS");
  Context ctx = build_context(sample.features, lexicon, cv, &sample.concept_labels);

  std::vector<int> input(sample.caption.begin(), sample.caption.end() - 1);
  std::vector<int> targets(sample.caption.begin() + 1, sample.caption.end());
  Tensor logits = decode_logits(input, ctx.v_tilde, ctx.c_tilde.defined() ? &ctx.c_tilde : nullptr);

  TrainLosses out;
  out.cap = ad::cross_entropy(logits, targets, Vocabulary::kPad);

  // teacher-forced token accuracy
  int correct = 0, counted = 0;
  const int v = cfg_.vocab_size;
  for (size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == Vocabulary::kPad) continue;
    const double* row = logits.ptr() + static_cast<int64_t>(t) * v;
    int best = 0;
    for (int j = 1; j < v; ++j)
      if (row[j] > row[best]) best = j;
    correct += best == targets[t] ? 1 : 0;
    ++counted;
  }
  out.token_acc = counted ? static_cast<double>(correct) / counted : 0.0;

  if (cfg_.use_concepts) {
    Tensor labels = Tensor::from({cfg_.concept_vocab_size}, sample.concept_labels);
    out.cpt = ad::asymmetric_loss(ctx.prediction.probs, labels, cfg_.gamma_pos,
                                      cfg_.gamma_neg, cfg_.clip_margin);
    out.total = ad::add(out.cap, ad::scale(out.cpt, cfg_.beta));
  } else {
    out.cpt = Tensor::scalar(0.0);
    out.total = out.cap;
  }
  if (ctx_out) *ctx_out = std::move(ctx);
  return out;
}

namespace {

// Generation never emits PAD or BOS.
bool generable(int token) {
  return token != Vocabulary::kPad && token != Vocabulary::kBos;
}

std::vector<double> log_softmax_row(const Tensor& logits) {
  const int64_t n = logits.size();
  double mx = logits[0];
  for (int64_t j = 1; j < n; ++j) mx = std::max(mx, logits[j]);
  double denom = 0.0;
  for (int64_t j = 0; j < n; ++j) denom += std::exp(logits[j] - mx);
  const double lse = std::log(denom) + mx;
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j)] = logits[j] - lse;
  return out;
}

double normalized_score(const BeamHypothesis& h) {
  return h.log_prob / static_cast<double>(std::max<size_t>(h.tokens.size(), 1));
}

}  // namespace

std::vector<BeamHypothesis> Captioner::beam_search(const Tensor& v_tilde,
                                                   const Tensor* c_tilde, int beam_size) {
  const int max_gen = cfg_.max_caption_len - 1;
  std::vector<BeamHypothesis> active = {BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;

  for (int step = 0; step < max_gen && !active.empty(); ++step) {
    std::vector<BeamHypothesis> candidates;
    for (const auto& hyp : active) {
      std::vector<int> prefix;
      prefix.reserve(hyp.tokens.size() + 1);
      prefix.push_back(Vocabulary::kBos);
      prefix.insert(prefix.end(), hyp.tokens.begin(), hyp.tokens.end());
      Tensor logits = decode_step(prefix, v_tilde, c_tilde);
      std::vector<double> logp = log_softmax_row(logits);
      for (int tok = 0; tok < cfg_.vocab_size; ++tok) {
        if (!generable(tok)) continue;
        BeamHypothesis next = hyp;
        next.tokens.push_back(tok);
        next.log_prob += logp[static_cast<size_t>(tok)];
        next.finished = tok == Vocabulary::kEos;
        candidates.push_back(std::move(next));
      }
    }
    // stable sort keeps (parent, token-id) order on exact score ties
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const BeamHypothesis& a, const BeamHypothesis& b) {
                       return a.log_prob > b.log_prob;
                     });
    if (static_cast<int>(candidates.size()) > beam_size) candidates.resize(static_cast<size_t>(beam_size));
    active.clear();
    for (auto& c : candidates) {
      if (c.finished)
        finished.push_back(std::move(c));
      else
        active.push_back(std::move(c));
    }
  }
  // hypotheses cut off at max length still compete, length-normalized
  for (auto& h : active) finished.push_back(std::move(h));
  return finished;
}

std::vector<int> Captioner::generate(const Tensor& features, const PmiLexicon& lexicon,
                                     const ConceptVocabulary& cv, DecodeMode mode,
                                     int beam_size, Context* ctx_out) {
  Context ctx = build_context(features, lexicon, cv, nullptr);
  const Tensor* c_tilde = ctx.c_tilde.defined() ? &ctx.c_tilde : nullptr;
  if (ctx_out) *ctx_out = ctx;

  if (mode == DecodeMode::Greedy) {
    std::vector<int> prefix = {Vocabulary::kBos};
    std::vector<int> out;
    const int max_gen = cfg_.max_caption_len - 1;
    for (int step = 0; step < max_gen; ++step) {
      Tensor logits = decode_step(prefix, ctx.v_tilde, c_tilde);
      int best = -1;
      for (int tok = 0; tok < cfg_.vocab_size; ++tok) {
        if (!generable(tok)) continue;
        if (best < 0 || logits[tok] > logits[best]) best = tok;
      }
      prefix.push_back(best);
      out.push_back(best);
      if (best == Vocabulary::kEos) break;
    }
    return out;
  }

  const int width = beam_size > 0 ? beam_size : cfg_.beam_size;
  std::vector<BeamHypothesis> finished = beam_search(ctx.v_tilde, c_tilde, width);
  if (finished.empty()) return {};
  const BeamHypothesis* best = &finished[0];
  for (const auto& h : finished)
    if (normalized_score(h) > normalized_score(*best)) best = &h;
  return best->tokens;
}

}  // namespace concap

namespace concap::ad {

double end_to_end_gradcheck_suite() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.n_enc = 1;
  cfg.n_concept = 1;
  cfg.n_dec = 1;
  cfg.query_count = 3;
  cfg.gcn_layers = 1;
  cfg.top_k = 3;
  cfg.ffn_dim = 12;
  cfg.d_feat = 5;
  cfg.max_caption_len = 8;
  cfg.vocab_size = 12;
  cfg.concept_vocab_size = 6;
  cfg.seed = 313;
  Captioner model(cfg);

  // a small lexicon over the concept word ids 4..9
  PmiLexicon lex;
  lex.entries[{4, 5}] = 1.0;
  lex.entries[{5, 7}] = 0.8;
  lex.entries[{6, 4}] = 0.7;
  ConceptVocabulary cv = ConceptVocabulary::from_ids({4, 5, 6, 7, 8, 9});

  Rng rng(99);
  CaptionSample sample;
  sample.features = Tensor::zeros({4, cfg.d_feat});
  for (int64_t i = 0; i < sample.features.size(); ++i)
    sample.features[i] = rng.uniform(-1.0, 1.0);
  sample.caption = {Vocabulary::kBos, 5, 7, 4, Vocabulary::kEos};
  sample.concept_labels.assign(static_cast<size_t>(cfg.concept_vocab_size), 0.0);
  sample.concept_labels[1] = 1.0;
  sample.concept_labels[3] = 1.0;

  auto loss = [&] { return model.forward_train(sample, lex, cv).total; };

  // spot-check a 32-coordinate subsample spread across all parameters
  double worst = 0.0;
  auto& items = model.params().items;
  std::vector<std::pair<Tensor*, int64_t>> coords;
  for (int n = 0; n < 32; ++n) {
    auto& [name, t] = items[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(items.size()) - 1))];
    (void)name;
    coords.push_back({t, rng.uniform_int(0, static_cast<int>(t->size()) - 1)});
  }
  for (auto& [t, c] : coords)
    worst = std::max(worst, finite_difference_check_coords(loss, *t, {c}));
  return worst;
}

}  // namespace concap::ad
