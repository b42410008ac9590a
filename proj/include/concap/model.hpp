#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "concap/dataset.hpp"
#include "concap/nn.hpp"
#include "concap/wgcn.hpp"

namespace concap {

struct ModelConfig {
  int d_model = 64;
  int heads = 4;
  int n_enc = 3;        // visual encoder blocks
  int n_concept = 6;    // concept-query blocks
  int n_dec = 6;        // decoder blocks
  int query_count = 17;
  int gcn_layers = 2;
  int concept_vocab_size = 0;  // bound to data at training time
  int vocab_size = 0;
  int max_caption_len = 16;    // tokens including BOS/EOS
  int top_k = 17;              // concept-graph nodes
  int beam_size = 3;
  int ffn_dim = 128;
  int d_feat = 16;
  double beta = 1.0;           // weight of the concept loss
  double gamma_pos = 0.0;
  double gamma_neg = 4.0;
  double clip_margin = 0.05;
  double pmi_threshold = 0.5;
  bool use_ffn = true;
  bool use_concepts = true;    // concept branch on (off = plain encoder-decoder)
  bool use_wgcn = true;        // graph layers on (off = raw concept features)
  bool force_gt_concepts = false;  // diagnostic: select ground-truth concepts
  GraphMode graph_mode = GraphMode::Threshold;
  uint64_t seed = 1;

  void validate() const;
  std::string to_kv() const;
  static ModelConfig from_kv(const std::string& text);
  void set_field(const std::string& key, const std::string& value);
};

enum class DecodeMode { Greedy, Beam };

struct BeamHypothesis {
  std::vector<int> tokens;  // after BOS; EOS terminates
  double log_prob = 0.0;
  bool finished = false;
};

struct TrainLosses {
  ad::Tensor total, cap, cpt;
  double token_acc = 0.0;
};

class Captioner {
 public:
  explicit Captioner(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  nn::Params& params() { return params_; }

  // Input projection plus self-attention encoder blocks.
  ad::Tensor visual_encode(const ad::Tensor& features);

  struct ConceptPrediction {
    ad::Tensor probs;              // [K], sigmoid-max over queries
    ad::Tensor query_features;     // [Q, d]
    std::vector<int> argmax_query;  // winning query per concept
    std::vector<double> selection_probs;  // what selection ranks by (see force_gt)
  };
  ConceptPrediction predict_concepts(const ad::Tensor& v_tilde);

  // Top-k concept word ids by probability, ties to the lower word id.
  static std::vector<int> select_concepts(const std::vector<double>& probs,
                                          const ConceptVocabulary& cv, int top_k);

  // Node features: token embedding of the concept word plus the winning
  // query's feature vector.
  ad::Tensor concept_node_features(const std::vector<int>& word_ids,
                                   const ConceptPrediction& cp,
                                   const ConceptVocabulary& cv);

  // Teacher-forced logits for every input position, [T, vocab].
  ad::Tensor decode_logits(const std::vector<int>& tokens, const ad::Tensor& v_tilde,
                           const ad::Tensor* c_tilde);

  // Logits for the next token after the prefix (prefix must start with BOS).
  ad::Tensor decode_step(const std::vector<int>& prefix, const ad::Tensor& v_tilde,
                         const ad::Tensor* c_tilde);

  // Everything up to the decoder: encodes, predicts and selects concepts,
  // builds the graph, runs the graph layers.
  struct Context {
    ad::Tensor v_tilde;
    ad::Tensor c_tilde;            // defined iff concepts in use
    ConceptPrediction prediction;  // valid iff concepts in use
    std::vector<int> concept_ids;
    ConceptGraph graph;            // valid iff graph built
    std::vector<ad::Tensor> alphas;  // graph attention per layer
  };
  Context build_context(const ad::Tensor& features, const PmiLexicon& lexicon,
                        const ConceptVocabulary& cv,
                        const std::vector<double>* gt_labels);

  TrainLosses forward_train(const CaptionSample& sample, const PmiLexicon& lexicon,
                            const ConceptVocabulary& cv, Context* ctx_out = nullptr);

  std::vector<int> generate(const ad::Tensor& features, const PmiLexicon& lexicon,
                            const ConceptVocabulary& cv, DecodeMode mode,
                            int beam_size = 0, Context* ctx_out = nullptr);

 private:
  struct EncoderLayer {
    nn::Attention attn;
    nn::LayerNorm ln1;
    nn::Ffn ffn;
    nn::LayerNorm ln2;
  };
  struct ConceptLayer {
    nn::Attention cross;
    nn::LayerNorm ln1;
    nn::Ffn ffn;
    nn::LayerNorm ln2;
  };
  struct DecoderLayer {
    nn::Attention self_attn;
    nn::LayerNorm ln1;
    nn::Attention cross_v;
    nn::Attention cross_c;  // allocated iff use_concepts
    nn::LayerNorm ln2;
    nn::Ffn ffn;
    nn::LayerNorm ln3;
  };

  ModelConfig cfg_;
  nn::Linear in_proj_;
  std::vector<EncoderLayer> enc_;
  ad::Tensor queries_;  // [Q, d]
  std::vector<ConceptLayer> cpt_;
  nn::Linear head1_, head2_;  // concept scorer
  WgcnParams wgcn_;
  ad::Tensor tok_emb_;  // [V, d]
  ad::Tensor pos_emb_;  // [max_caption_len, d]
  std::vector<DecoderLayer> dec_;
  nn::Linear out_;
  nn::Params params_;

  void register_params();
  std::vector<BeamHypothesis> beam_search(const ad::Tensor& v_tilde,
                                          const ad::Tensor* c_tilde, int beam_size);
};

}  // namespace concap
