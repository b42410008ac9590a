#include "concap/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "concap/checkpoint.hpp"
#include "concap/io.hpp"
#include "concap/rng.hpp"

namespace concap {

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer: " + s);
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double clip_norm)
    : kind_(kind), lr_(lr), clip_norm_(clip_norm) {
  if (lr < 0.0) throw std::invalid_argument("optimizer: lr must be >= 0");
}

void Optimizer::step(nn::Params& params) {
  if (m_.empty() && kind_ == OptimizerKind::Adam) {
    for (auto& [name, t] : params.items) {
      m_.emplace_back(static_cast<size_t>(t->size()), 0.0);
      v_.emplace_back(static_cast<size_t>(t->size()), 0.0);
    }
  }

  double norm_sq = 0.0;
  for (auto& [name, t] : params.items) {
    if (!t->has_grad()) continue;
    const double* g = t->grad_ptr();
    for (int64_t i = 0; i < t->size(); ++i) norm_sq += g[i] * g[i];
  }
  const double norm = std::sqrt(norm_sq);
  const double clip_scale = (clip_norm_ > 0.0 && norm > clip_norm_) ? clip_norm_ / norm : 1.0;

  ++t_;
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));

  for (size_t pi = 0; pi < params.items.size(); ++pi) {
    ad::Tensor* t = params.items[pi].second;
    if (!t->has_grad()) continue;
    double* x = t->ptr();
    const double* g = t->grad_ptr();
    if (kind_ == OptimizerKind::Sgd) {
      for (int64_t i = 0; i < t->size(); ++i) x[i] -= lr_ * clip_scale * g[i];
    } else {
      double* m = m_[pi].data();
      double* v = v_[pi].data();
      for (int64_t i = 0; i < t->size(); ++i) {
        const double gi = clip_scale * g[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        x[i] -= lr_ * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
}

std::string TrainLog::to_csv() const {
  std::string out = "epoch,total_loss,cap_loss,concept_loss,token_acc\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.total, e.cap,
                  e.cpt, e.token_acc);
    out += buf;
  }
  return out;
}

TrainLog train(Captioner& model, const std::vector<CaptionSample>& samples,
               const PmiLexicon& lexicon, const ConceptVocabulary& cv,
               const TrainConfig& tc) {
  if (samples.empty()) throw std::invalid_argument("train: no samples");
  Optimizer opt(tc.optimizer, tc.lr, tc.clip_norm);
  Rng shuffle_rng(tc.shuffle_seed);
  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainLog log;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    if (tc.shuffle) shuffle_rng.shuffle(order);
    EpochStats stats;
    stats.epoch = epoch;
    for (size_t idx : order) {
      model.params().zero_grad();
      ad::Tape tape;
      TrainLosses losses;
      {
        ad::TapeScope scope(tape);
        losses = model.forward_train(samples[idx], lexicon, cv);
        const double total = losses.total.value();
        if (!std::isfinite(total))
          throw std::runtime_error("train: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", sample " + std::to_string(idx));
        tape.backward(losses.total);
      }
      opt.step(model.params());
      stats.total += losses.total.value();
      stats.cap += losses.cap.value();
      stats.cpt += losses.cpt.value();
      stats.token_acc += losses.token_acc;
    }
    const double n = static_cast<double>(samples.size());
    stats.total /= n;
    stats.cap /= n;
    stats.cpt /= n;
    stats.token_acc /= n;
    log.epochs.push_back(stats);
    if (!tc.quiet)
      std::fprintf(stderr, "epoch %d total %.4f cap %.4f concept %.4f acc %.3f\n",
                   stats.epoch, stats.total, stats.cap, stats.cpt, stats.token_acc);
  }
  return log;
}

namespace {

std::vector<int> content_tokens(const std::vector<int>& ids) {
  std::vector<int> out;
  for (int id : ids)
    if (id >= Vocabulary::kNumSpecial) out.push_back(id);
  return out;
}

}  // namespace

double bleu1(const std::vector<std::vector<int>>& candidates,
             const std::vector<std::vector<int>>& references) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("bleu1: candidate/reference count mismatch");
  int64_t clipped = 0, cand_len = 0, ref_len = 0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    std::map<int, int64_t> ref_counts;
    for (int id : references[i]) ref_counts[id]++;
    std::map<int, int64_t> cand_counts;
    for (int id : candidates[i]) cand_counts[id]++;
    for (const auto& [id, c] : cand_counts) {
      auto it = ref_counts.find(id);
      clipped += std::min(c, it == ref_counts.end() ? 0 : it->second);
    }
    cand_len += static_cast<int64_t>(candidates[i].size());
    ref_len += static_cast<int64_t>(references[i].size());
  }
  if (cand_len == 0) return 0.0;
  const double precision = static_cast<double>(clipped) / static_cast<double>(cand_len);
  const double bp =
      cand_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / cand_len) : 1.0;
  return precision * bp;
}

EvalReport evaluate(Captioner& model, const std::vector<CaptionSample>& samples,
                    const PmiLexicon& lexicon, const ConceptVocabulary& cv) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  EvalReport rep;
  int64_t tok_correct = 0, tok_total = 0;
  int64_t exact = 0;
  int64_t tp = 0, fp = 0, fn = 0;
  std::vector<std::vector<int>> cands, refs;

  for (const auto& s : samples) {
    Captioner::Context ctx;
    TrainLosses losses = model.forward_train(s, lexicon, cv, &ctx);
    rep.mean_total += losses.total.value();
    rep.mean_cap += losses.cap.value();
    rep.mean_concept += losses.cpt.value();

    std::vector<int> targets(s.caption.begin() + 1, s.caption.end());
    int counted = 0;
    for (int t : targets)
      if (t != Vocabulary::kPad) ++counted;
    tok_total += counted;
    tok_correct += static_cast<int64_t>(std::llround(losses.token_acc * counted));

    std::vector<int> generated =
        model.generate(s.features, lexicon, cv, DecodeMode::Greedy);
    std::vector<int> cand = content_tokens(generated);
    std::vector<int> ref = content_tokens(s.caption);
    if (cand == ref) ++exact;
    cands.push_back(std::move(cand));
    refs.push_back(std::move(ref));

    if (model.config().use_concepts) {
      // teacher-forced path: force_gt_concepts substitutes the labels here
      const auto& probs = ctx.prediction.selection_probs;
      for (size_t k = 0; k < probs.size(); ++k) {
        const bool pred = probs[k] >= 0.5;
        const bool truth = s.concept_labels[k] > 0.5;
        if (pred && truth) ++tp;
        else if (pred) ++fp;
        else if (truth) ++fn;
      }
    }
  }

  const double n = static_cast<double>(samples.size());
  rep.mean_total /= n;
  rep.mean_cap /= n;
  rep.mean_concept /= n;
  rep.token_accuracy = tok_total ? static_cast<double>(tok_correct) / tok_total : 0.0;
  rep.exact_match = static_cast<double>(exact) / n;
  rep.bleu1 = bleu1(cands, refs);
  if (tp + fp + fn > 0) {
    const double prec = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double rec = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
    rep.concept_f1 = prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  }
  return rep;
}

ArmSpec arm_from_string(const std::string& name) {
  ArmSpec arm;
  arm.name = name;
  if (name == "baseline") {
    arm.use_concepts = false;
    arm.use_wgcn = false;
  } else if (name == "cp") {
    arm.use_concepts = true;
    arm.use_wgcn = false;
  } else if (name == "cp_wgcn") {
    arm.use_concepts = true;
    arm.use_wgcn = true;
    arm.graph_mode = GraphMode::Threshold;
  } else if (name == "random" || name == "one_for_all" || name == "mlp") {
    arm.use_concepts = true;
    arm.use_wgcn = true;
    arm.graph_mode = graph_mode_from_string(name);
  } else if (name.rfind("threshold_", 0) == 0) {
    arm.use_concepts = true;
    arm.use_wgcn = true;
    arm.graph_mode = GraphMode::Threshold;
    arm.threshold = std::stod(name.substr(10));
  } else {
    throw std::invalid_argument("unknown ablation arm: " + name);
  }
  return arm;
}

double AblationReport::mean_exact_match(const std::string& arm) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : runs)
    if (r.arm == arm) {
      sum += r.eval.exact_match;
      ++n;
    }
  return n ? sum / n : 0.0;
}

double AblationReport::stdev_exact_match(const std::string& arm) const {
  const double mean = mean_exact_match(arm);
  double sq = 0.0;
  int n = 0;
  for (const auto& r : runs)
    if (r.arm == arm) {
      sq += (r.eval.exact_match - mean) * (r.eval.exact_match - mean);
      ++n;
    }
  return n > 1 ? std::sqrt(sq / (n - 1)) : 0.0;
}

std::string AblationReport::to_tsv() const {
  std::ostringstream ss;
  ss << "arm\tseed\ttoken_acc\texact_match\tbleu1\tconcept_f1\tfinal_total\tckpt_hash\n";
  ss.setf(std::ios::fixed);
  ss.precision(6);
  for (const auto& r : runs) {
    ss << r.arm << "\t" << r.seed << "\t" << r.eval.token_accuracy << "\t"
       << r.eval.exact_match << "\t" << r.eval.bleu1 << "\t" << r.eval.concept_f1 << "\t"
       << r.final_total << "\t" << std::hex << r.ckpt_hash << std::dec << "\n";
  }
  for (const auto& arm : arms) {
    double mean_tok = 0.0, mean_bleu = 0.0, mean_f1 = 0.0;
    int n = 0;
    for (const auto& r : runs)
      if (r.arm == arm) {
        mean_tok += r.eval.token_accuracy;
        mean_bleu += r.eval.bleu1;
        mean_f1 += r.eval.concept_f1;
        ++n;
      }
    if (n) {
      mean_tok /= n;
      mean_bleu /= n;
      mean_f1 /= n;
    }
    ss << arm << "\taggregate\t" << mean_tok << "\t" << mean_exact_match(arm) << "±"
       << stdev_exact_match(arm) << "\t" << mean_bleu << "\t" << mean_f1 << "\t-\t-\n";
  }
  return ss.str();
}

AblationReport run_ablation(const Dataset& train_data,
                            const std::vector<CaptionSample>& eval_samples,
                            const std::vector<ArmSpec>& arms,
                            const std::vector<uint64_t>& seeds,
                            const ModelConfig& base_cfg, const TrainConfig& tc,
                            int threads) {
  if (arms.empty() || seeds.empty())
    throw std::invalid_argument("run_ablation: need at least one arm and seed");

  // lexicons per distinct threshold
  std::map<double, PmiLexicon> lexicons;
  for (const auto& arm : arms)
    if (!lexicons.count(arm.threshold))
      lexicons[arm.threshold] = build_lexicon(train_data.table, arm.threshold);

  struct Job {
    size_t arm_idx;
    uint64_t seed;
  };
  std::vector<Job> jobs;
  for (size_t a = 0; a < arms.size(); ++a)
    for (uint64_t s : seeds) jobs.push_back({a, s});

  AblationReport report;
  for (const auto& arm : arms) report.arms.push_back(arm.name);
  report.runs.resize(jobs.size());

  auto run_one = [&](size_t j) {
    const Job& job = jobs[j];
    const ArmSpec& arm = arms[job.arm_idx];
    ModelConfig cfg = base_cfg;
    cfg.seed = job.seed;
    cfg.use_concepts = arm.use_concepts;
    cfg.use_wgcn = arm.use_wgcn;
    cfg.graph_mode = arm.graph_mode;
    cfg.pmi_threshold = arm.threshold;
    const PmiLexicon& lexicon = lexicons.at(arm.threshold);

    Captioner model(cfg);
    TrainConfig run_tc = tc;
    run_tc.shuffle_seed = job.seed;
    run_tc.quiet = true;
    TrainLog log = train(model, train_data.samples, lexicon, train_data.concepts, run_tc);

    AblationRun run;
    run.arm = arm.name;
    run.seed = job.seed;
    run.eval = evaluate(model, eval_samples, lexicon, train_data.concepts);
    run.final_total = log.epochs.empty() ? 0.0 : log.epochs.back().total;
    run.ckpt_hash = io::fnv1a64(checkpoint_bytes(model.params()));
    report.runs[j] = std::move(run);
  };

  if (threads <= 1) {
    for (size_t j = 0; j < jobs.size(); ++j) run_one(j);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (;;) {
          const size_t j = next.fetch_add(1);
          if (j >= jobs.size()) return;
          run_one(j);
        }
      });
    for (auto& t : pool) t.join();
  }

  // arms share data and seeds but never parameter state
  for (uint64_t s : seeds)
    for (size_t a = 0; a < arms.size(); ++a)
      for (size_t b = a + 1; b < arms.size(); ++b) {
        uint64_t ha = 0, hb = 0;
        for (const auto& r : report.runs) {
          if (r.seed != s) continue;
          if (r.arm == arms[a].name) ha = r.ckpt_hash;
          if (r.arm == arms[b].name) hb = r.ckpt_hash;
        }
        if (ha && ha == hb)
          throw std::logic_error("ablation arms " + arms[a].name + " and " + arms[b].name +
                                 " produced identical checkpoints for seed " +
                                 std::to_string(s));
      }
  return report;
}

}  // namespace concap
