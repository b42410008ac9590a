#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "concap/dataset.hpp"
#include "concap/model.hpp"

namespace concap {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind optimizer_from_string(const std::string& s);

// Adam with bias correction (0.9 / 0.999 / 1e-8) or plain SGD; both apply a
// global gradient-norm clip first.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double clip_norm = 5.0);
  void step(nn::Params& params);
  double lr() const { return lr_; }

 private:
  OptimizerKind kind_;
  double lr_;
  double clip_norm_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
  int epochs = 50;
  double lr = 5e-4;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double clip_norm = 5.0;
  bool shuffle = true;
  uint64_t shuffle_seed = 1;
  bool quiet = true;
};

struct EpochStats {
  int epoch = 0;
  double total = 0.0, cap = 0.0, cpt = 0.0, token_acc = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  std::string to_csv() const;  // epoch,total_loss,cap_loss,concept_loss,token_acc
};

// Per-sample SGD/Adam steps; aborts with a diagnostic if the loss goes
// non-finite.
TrainLog train(Captioner& model, const std::vector<CaptionSample>& samples,
               const PmiLexicon& lexicon, const ConceptVocabulary& cv,
               const TrainConfig& tc);

struct EvalReport {
  double token_accuracy = 0.0;  // teacher-forced argmax
  double exact_match = 0.0;     // greedy decode, content tokens
  double bleu1 = 0.0;
  double concept_f1 = 0.0;      // micro-averaged at 0.5
  double mean_total = 0.0, mean_cap = 0.0, mean_concept = 0.0;
};

EvalReport evaluate(Captioner& model, const std::vector<CaptionSample>& samples,
                    const PmiLexicon& lexicon, const ConceptVocabulary& cv);

// Corpus-level clipped unigram precision times brevity penalty.
double bleu1(const std::vector<std::vector<int>>& candidates,
             const std::vector<std::vector<int>>& references);

struct ArmSpec {
  std::string name;
  bool use_concepts = true;
  bool use_wgcn = true;
  GraphMode graph_mode = GraphMode::Threshold;
  double threshold = 0.5;
};

// baseline | cp | cp_wgcn | random | one_for_all | mlp | threshold_<N>
ArmSpec arm_from_string(const std::string& name);

struct AblationRun {
  std::string arm;
  uint64_t seed = 0;
  EvalReport eval;
  double final_total = 0.0;
  uint64_t ckpt_hash = 0;
};

struct AblationReport {
  std::vector<AblationRun> runs;
  std::vector<std::string> arms;  // in request order
  double mean_exact_match(const std::string& arm) const;
  double stdev_exact_match(const std::string& arm) const;
  std::string to_tsv() const;  // one row per run plus one aggregate row per arm
};

// Trains every (arm, seed) pair on the same data; arms share seeds but no
// parameter state (checkpoint checksums are asserted distinct per seed).
// Threshold arms rebuild the lexicon from the table at their own threshold.
AblationReport run_ablation(const Dataset& train_data,
                            const std::vector<CaptionSample>& eval_samples,
                            const std::vector<ArmSpec>& arms,
                            const std::vector<uint64_t>& seeds,
                            const ModelConfig& base_cfg, const TrainConfig& tc,
                            int threads = 1);

}  // namespace concap
