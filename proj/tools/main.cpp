#include <cstdio>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "concap/checkpoint.hpp"
#include "concap/dataset.hpp"
#include "concap/gradcheck.hpp"
#include "concap/io.hpp"
#include "concap/model.hpp"
#include "concap/synth.hpp"
#include "concap/train.hpp"

using namespace concap;

namespace {

bool g_quiet = false;

void log_info(const std::string& msg) {
  if (!g_quiet) std::fprintf(stderr, "%s\n", msg.c_str());
}

// Model flags mirror ModelConfig field names 1:1. Values staged here are
// copied over the config-file settings only when explicitly given.
struct ModelFlags {
  ModelConfig staged;
  std::string graph_mode_name = "threshold";
  std::vector<std::pair<std::string, std::function<void(ModelConfig&, const ModelFlags&)>>>
      copiers;

  void bind(CLI::App* cmd) {
    auto opt = [&](const std::string& name, auto& field, const char* help,
                   auto copier) {
      cmd->add_option(name, field, help);
      copiers.push_back({name, copier});
    };
    opt("--d_model", staged.d_model, "hidden size",
        [](ModelConfig& c, const ModelFlags& f) { c.d_model = f.staged.d_model; });
    opt("--heads", staged.heads, "attention heads",
        [](ModelConfig& c, const ModelFlags& f) { c.heads = f.staged.heads; });
    opt("--n_enc", staged.n_enc, "visual encoder blocks",
        [](ModelConfig& c, const ModelFlags& f) { c.n_enc = f.staged.n_enc; });
    opt("--n_concept", staged.n_concept, "concept blocks",
        [](ModelConfig& c, const ModelFlags& f) { c.n_concept = f.staged.n_concept; });
    opt("--n_dec", staged.n_dec, "decoder blocks",
        [](ModelConfig& c, const ModelFlags& f) { c.n_dec = f.staged.n_dec; });
    opt("--query_count", staged.query_count, "learnable concept queries",
        [](ModelConfig& c, const ModelFlags& f) { c.query_count = f.staged.query_count; });
    opt("--gcn_layers", staged.gcn_layers, "graph conv layers",
        [](ModelConfig& c, const ModelFlags& f) { c.gcn_layers = f.staged.gcn_layers; });
    opt("--max_caption_len", staged.max_caption_len, "caption length cap (with BOS/EOS)",
        [](ModelConfig& c, const ModelFlags& f) { c.max_caption_len = f.staged.max_caption_len; });
    opt("--top_k", staged.top_k, "concept nodes fed to the graph",
        [](ModelConfig& c, const ModelFlags& f) { c.top_k = f.staged.top_k; });
    opt("--beam_size", staged.beam_size, "beam width",
        [](ModelConfig& c, const ModelFlags& f) { c.beam_size = f.staged.beam_size; });
    opt("--ffn_dim", staged.ffn_dim, "feed-forward hidden size",
        [](ModelConfig& c, const ModelFlags& f) { c.ffn_dim = f.staged.ffn_dim; });
    opt("--beta", staged.beta, "concept-loss weight",
        [](ModelConfig& c, const ModelFlags& f) { c.beta = f.staged.beta; });
    opt("--gamma_pos", staged.gamma_pos, "asymmetric loss positive exponent",
        [](ModelConfig& c, const ModelFlags& f) { c.gamma_pos = f.staged.gamma_pos; });
    opt("--gamma_neg", staged.gamma_neg, "asymmetric loss negative exponent",
        [](ModelConfig& c, const ModelFlags& f) { c.gamma_neg = f.staged.gamma_neg; });
    opt("--clip_margin", staged.clip_margin, "asymmetric loss probability margin",
        [](ModelConfig& c, const ModelFlags& f) { c.clip_margin = f.staged.clip_margin; });
    opt("--pmi_threshold", staged.pmi_threshold, "lexicon PMI threshold",
        [](ModelConfig& c, const ModelFlags& f) { c.pmi_threshold = f.staged.pmi_threshold; });
    opt("--use_ffn", staged.use_ffn, "position-wise feed-forward sublayers",
        [](ModelConfig& c, const ModelFlags& f) { c.use_ffn = f.staged.use_ffn; });
    opt("--use_concepts", staged.use_concepts, "concept branch",
        [](ModelConfig& c, const ModelFlags& f) { c.use_concepts = f.staged.use_concepts; });
    opt("--use_wgcn", staged.use_wgcn, "graph layers over concepts",
        [](ModelConfig& c, const ModelFlags& f) { c.use_wgcn = f.staged.use_wgcn; });
    opt("--force_gt_concepts", staged.force_gt_concepts,
        "diagnostic: select ground-truth concepts",
        [](ModelConfig& c, const ModelFlags& f) { c.force_gt_concepts = f.staged.force_gt_concepts; });
    opt("--graph_mode", graph_mode_name, "threshold|random|one_for_all|mlp",
        [](ModelConfig& c, const ModelFlags& f) {
          c.graph_mode = graph_mode_from_string(f.graph_mode_name);
        });
    opt("--seed", staged.seed, "rng seed",
        [](ModelConfig& c, const ModelFlags& f) { c.seed = f.staged.seed; });
  }

  void apply(CLI::App* cmd, ModelConfig& cfg) const {
    for (const auto& [name, copier] : copiers)
      if (cmd->count(name)) copier(cfg, *this);
  }
};

struct LoadedModel {
  ModelConfig cfg;
  Vocabulary vocab;
  ConceptVocabulary concepts;
  PmiLexicon lexicon;
  std::unique_ptr<Captioner> model;
};

LoadedModel load_model_dir(const std::string& dir) {
  LoadedModel m;
  m.cfg = ModelConfig::from_kv(io::read_file(dir + "/config.txt"));
  m.vocab = Vocabulary::load(dir + "/vocab.txt");
  if (m.cfg.use_concepts)
    m.concepts = ConceptVocabulary::load(dir + "/concepts.txt", m.vocab);
  m.lexicon = PmiLexicon::load_tsv(dir + "/lexicon.tsv", m.vocab);
  m.model = std::make_unique<Captioner>(m.cfg);
  load_checkpoint(dir + "/model.ckpt", m.model->params());
  return m;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += " ";
    out += words[i];
  }
  return out;
}

int cmd_build_lexicon(const std::string& corpus_path, int window, double threshold,
                      int64_t min_freq, const std::string& out_path, int threads) {
  auto lines = io::read_lines(corpus_path);
  std::vector<std::vector<std::string>> tokenized;
  for (const auto& line : lines) {
    auto toks = tokenize(line);
    if (!toks.empty()) tokenized.push_back(std::move(toks));
  }
  if (tokenized.empty()) throw std::runtime_error("corpus has no tokens: " + corpus_path);
  Vocabulary vocab = Vocabulary::build(tokenized);
  std::vector<std::vector<int>> ids;
  for (const auto& t : tokenized) ids.push_back(vocab.encode(t, false));
  CooccurrenceTable table = count_cooccurrence_parallel(ids, vocab.size(), window, threads);
  PmiLexicon lex = build_lexicon(table, threshold);
  if (min_freq > 1) {
    // keep only pairs whose words both clear the frequency floor
    for (auto it = lex.entries.begin(); it != lex.entries.end();) {
      if (table.unigram_count(it->first.first) < min_freq ||
          table.unigram_count(it->first.second) < min_freq)
        it = lex.entries.erase(it);
      else
        ++it;
    }
  }
  lex.save_tsv(out_path, vocab);
  log_info("lexicon: " + std::to_string(lex.size()) + " pairs from " +
           std::to_string(lines.size()) + " captions");
  std::printf("pairs=%zu\n", lex.size());
  return 0;
}

int cmd_gen_data(const SyntheticSpec& spec, const std::string& out,
                 std::string corpus_out) {
  SyntheticData data = generate_dataset(spec);
  save_jsonl(out, data.samples);
  if (corpus_out.empty()) corpus_out = out + ".corpus.txt";
  std::string corpus;
  for (const auto& line : data.corpus_lines) corpus += line + "\n";
  io::atomic_write(corpus_out, corpus);
  log_info("wrote " + std::to_string(data.samples.size()) + " samples to " + out);
  std::printf("samples=%zu\n", data.samples.size());
  return 0;
}

void save_model_dir(const std::string& out_dir, Captioner& model, const Dataset& data,
                    const TrainLog& log) {
  io::make_dirs(out_dir);
  save_checkpoint(out_dir + "/model.ckpt", model.params());
  io::atomic_write(out_dir + "/config.txt", model.config().to_kv());
  data.vocab.save(out_dir + "/vocab.txt");
  if (model.config().use_concepts) data.concepts.save(out_dir + "/concepts.txt", data.vocab);
  data.lexicon.save_tsv(out_dir + "/lexicon.tsv", data.vocab);
  io::atomic_write(out_dir + "/train_log.csv", log.to_csv());
}

void apply_arm(ModelConfig& cfg, const std::string& arm_name) {
  ArmSpec arm = arm_from_string(arm_name);
  cfg.use_concepts = arm.use_concepts;
  cfg.use_wgcn = arm.use_wgcn;
  cfg.graph_mode = arm.graph_mode;
  cfg.pmi_threshold = arm.threshold;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structured-concept image captioning testbed"};
  app.require_subcommand(1);
  app.add_flag("--quiet", g_quiet, "suppress progress logs on stderr");

  // build-lexicon
  auto* lex_cmd = app.add_subcommand("build-lexicon", "count a corpus and write a PMI lexicon");
  std::string lex_corpus, lex_out;
  int lex_window = 3;
  double lex_threshold = 0.5;
  int64_t lex_min_freq = 1;
  int lex_threads = 1;
  lex_cmd->add_option("--corpus", lex_corpus, "caption file, one per line")->required();
  lex_cmd->add_option("--window", lex_window, "co-occurrence word distance");
  lex_cmd->add_option("--threshold", lex_threshold, "minimum PMI kept");
  lex_cmd->add_option("--min-freq", lex_min_freq, "unigram frequency floor for pairs");
  lex_cmd->add_option("--out", lex_out, "output TSV")->required();
  lex_cmd->add_option("--threads", lex_threads, "counting shards");

  // gen-data
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic caption dataset");
  SyntheticSpec spec;
  std::string gen_out, gen_corpus_out;
  bool sample_seed_set = false;
  gen_cmd->add_option("--n", spec.n_samples, "sample count");
  gen_cmd->add_option("--concepts", spec.n_concepts, "concept word count");
  gen_cmd->add_option("--templates", spec.n_templates, "caption templates used");
  gen_cmd->add_option("--feature-dim", spec.feature_dim, "feature vector size");
  gen_cmd->add_option("--grid", spec.grid, "grid cells per image");
  gen_cmd->add_option("--noise", spec.noise_std, "feature noise stddev");
  gen_cmd->add_option("--skew", spec.distractor_skew, "default-object probability per verb");
  gen_cmd->add_option("--seed", spec.seed, "prototype/pool seed");
  gen_cmd->add_option("--sample-seed", spec.sample_seed, "per-sample stream seed")
      ->each([&](const std::string&) { sample_seed_set = true; });
  gen_cmd->add_option("--out", gen_out, "output JSONL")->required();
  gen_cmd->add_option("--corpus-out", gen_corpus_out, "caption corpus text output");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model on a JSONL dataset");
  std::string train_data, train_out, train_config, train_arm, train_optimizer = "adam";
  int train_epochs = 50, train_window = 3;
  int64_t train_min_freq = 1;
  double train_lr = 5e-4, train_clip = 5.0;
  bool train_no_shuffle = false;
  ModelFlags train_flags;
  train_cmd->add_option("--data", train_data, "training JSONL")->required();
  train_cmd->add_option("--out", train_out, "output model directory")->required();
  train_cmd->add_option("--config", train_config, "key=value config file");
  train_cmd->add_option("--arm", train_arm,
                        "baseline|cp|cp_wgcn|random|one_for_all|mlp|threshold_<t>");
  train_cmd->add_option("--epochs", train_epochs, "training epochs");
  train_cmd->add_option("--lr", train_lr, "learning rate");
  train_cmd->add_option("--optimizer", train_optimizer, "sgd|adam");
  train_cmd->add_option("--clip_norm", train_clip, "global gradient norm clip");
  train_cmd->add_flag("--no-shuffle", train_no_shuffle, "keep sample order fixed");
  train_cmd->add_option("--window", train_window, "lexicon word distance");
  train_cmd->add_option("--min-freq", train_min_freq, "concept vocabulary frequency floor");
  train_flags.bind(train_cmd);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a trained model");
  std::string eval_model, eval_data;
  eval_cmd->add_option("--model", eval_model, "model directory")->required();
  eval_cmd->add_option("--data", eval_data, "JSONL dataset")->required();

  // generate
  auto* gen_cap_cmd = app.add_subcommand("generate", "decode captions for a dataset");
  std::string gcap_model, gcap_data, gcap_mode = "greedy", gcap_dump;
  int gcap_limit = 0, gcap_beam = 0;
  gen_cap_cmd->add_option("--model", gcap_model, "model directory")->required();
  gen_cap_cmd->add_option("--data", gcap_data, "JSONL dataset")->required();
  gen_cap_cmd->add_option("--mode", gcap_mode, "greedy|beam");
  gen_cap_cmd->add_option("--beam_size", gcap_beam, "beam width override");
  gen_cap_cmd->add_option("--limit", gcap_limit, "decode only the first N samples");
  gen_cap_cmd->add_option("--dump-graph", gcap_dump,
                          "write the first sample's concept graph TSV");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  std::string grad_op;
  bool grad_all = false;
  grad_cmd->add_flag("--all", grad_all, "run every suite (default)");
  grad_cmd->add_option("--op", grad_op, "run one suite by name");

  // ablate
  auto* abl_cmd = app.add_subcommand("ablate", "train and compare ablation arms");
  std::string abl_data, abl_eval_data, abl_arms = "baseline,cp,cp_wgcn", abl_out,
              abl_optimizer = "adam";
  int abl_seeds = 3, abl_epochs = 40, abl_threads = 1, abl_window = 3;
  int64_t abl_min_freq = 1;
  double abl_lr = 5e-4;
  ModelFlags abl_flags;
  abl_cmd->add_option("--data", abl_data, "training JSONL")->required();
  abl_cmd->add_option("--eval-data", abl_eval_data, "held-out JSONL (default: train set)");
  abl_cmd->add_option("--arms", abl_arms, "comma-separated arm names");
  abl_cmd->add_option("--seeds", abl_seeds, "number of seeds (1..N)");
  abl_cmd->add_option("--epochs", abl_epochs, "training epochs per run");
  abl_cmd->add_option("--lr", abl_lr, "learning rate");
  abl_cmd->add_option("--optimizer", abl_optimizer, "sgd|adam");
  abl_cmd->add_option("--threads", abl_threads, "parallel runs");
  abl_cmd->add_option("--window", abl_window, "lexicon word distance");
  abl_cmd->add_option("--min-freq", abl_min_freq, "concept vocabulary frequency floor");
  abl_cmd->add_option("--out", abl_out, "report TSV path")->required();
  abl_flags.bind(abl_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  try {
    if (lex_cmd->parsed())
      return cmd_build_lexicon(lex_corpus, lex_window, lex_threshold, lex_min_freq,
                               lex_out, lex_threads);

    if (gen_cmd->parsed()) {
      if (!sample_seed_set) spec.sample_seed = spec.seed;
      return cmd_gen_data(spec, gen_out, gen_corpus_out);
    }

    if (train_cmd->parsed()) {
      auto raw = load_jsonl(train_data);
      ModelConfig cfg;
      if (!train_config.empty()) cfg = ModelConfig::from_kv(io::read_file(train_config));
      if (!train_arm.empty()) apply_arm(cfg, train_arm);
      train_flags.apply(train_cmd, cfg);

      Dataset data = prepare_dataset(raw, train_window, cfg.pmi_threshold, train_min_freq,
                                     cfg.max_caption_len);
      cfg.vocab_size = data.vocab.size();
      cfg.concept_vocab_size = data.concepts.size();
      cfg.d_feat = data.feature_dim;
      log_info("vocab " + std::to_string(cfg.vocab_size) + ", concepts " +
               std::to_string(cfg.concept_vocab_size) + ", lexicon " +
               std::to_string(data.lexicon.size()) + " pairs");

      Captioner model(cfg);
      TrainConfig tc;
      tc.epochs = train_epochs;
      tc.lr = train_lr;
      tc.optimizer = optimizer_from_string(train_optimizer);
      tc.clip_norm = train_clip;
      tc.shuffle = !train_no_shuffle;
      tc.shuffle_seed = cfg.seed;
      tc.quiet = g_quiet;
      TrainLog log = train(model, data.samples, data.lexicon, data.concepts, tc);
      save_model_dir(train_out, model, data, log);
      if (!log.epochs.empty()) {
        const auto& last = log.epochs.back();
        std::printf(
            "final_total=%.6f\nfinal_cap=%.6f\nfinal_concept=%.6f\nfinal_token_acc=%.6f\n",
            last.total, last.cap, last.cpt, last.token_acc);
      }
      return 0;
    }

    if (eval_cmd->parsed()) {
      LoadedModel m = load_model_dir(eval_model);
      auto raw = load_jsonl(eval_data);
      auto samples = encode_samples(raw, m.vocab, m.concepts, m.cfg.max_caption_len);
      EvalReport rep = evaluate(*m.model, samples, m.lexicon, m.concepts);
      std::printf("token_accuracy=%.6f\nexact_match=%.6f\nbleu1=%.6f\nconcept_f1=%.6f\n",
                  rep.token_accuracy, rep.exact_match, rep.bleu1, rep.concept_f1);
      std::printf("mean_total=%.6f\nmean_cap=%.6f\nmean_concept=%.6f\n", rep.mean_total,
                  rep.mean_cap, rep.mean_concept);
      return 0;
    }

    if (gen_cap_cmd->parsed()) {
      LoadedModel m = load_model_dir(gcap_model);
      auto raw = load_jsonl(gcap_data);
      auto samples = encode_samples(raw, m.vocab, m.concepts, m.cfg.max_caption_len);
      const DecodeMode mode = gcap_mode == "beam" ? DecodeMode::Beam : DecodeMode::Greedy;
      const size_t limit =
          gcap_limit > 0 ? std::min<size_t>(samples.size(), static_cast<size_t>(gcap_limit))
                         : samples.size();
      for (size_t i = 0; i < limit; ++i) {
        Captioner::Context ctx;
        auto tokens = m.model->generate(samples[i].features, m.lexicon, m.concepts, mode,
                                        gcap_beam, &ctx);
        std::printf("%s\n", join_words(m.vocab.decode(tokens)).c_str());
        if (i == 0 && !gcap_dump.empty()) {
          if (ctx.alphas.empty())
            log_info("no graph to dump (model runs without graph layers)");
          else
            write_graph_tsv(gcap_dump, ctx.graph, ctx.alphas[0], m.vocab);
        }
      }
      return 0;
    }

    if (grad_cmd->parsed()) {
      bool ok = true;
      for (const auto& suite : ad::gradcheck_suites()) {
        if (!grad_op.empty() && suite.name != grad_op) continue;
        const double err = suite.run();
        const bool pass = err < suite.tol;
        ok = ok && pass;
        std::printf("%-16s max_rel_err=%.3e tol=%.0e %s\n", suite.name.c_str(), err,
                    suite.tol, pass ? "PASS" : "FAIL");
      }
      return ok ? 0 : 2;
    }

    if (abl_cmd->parsed()) {
      auto raw = load_jsonl(abl_data);
      ModelConfig cfg;
      abl_flags.apply(abl_cmd, cfg);
      Dataset data = prepare_dataset(raw, abl_window, cfg.pmi_threshold, abl_min_freq,
                                     cfg.max_caption_len);
      cfg.vocab_size = data.vocab.size();
      cfg.concept_vocab_size = data.concepts.size();
      cfg.d_feat = data.feature_dim;

      std::vector<CaptionSample> eval_samples;
      if (!abl_eval_data.empty()) {
        auto eval_raw = load_jsonl(abl_eval_data);
        eval_samples = encode_samples(eval_raw, data.vocab, data.concepts, cfg.max_caption_len);
      } else {
        eval_samples = data.samples;
      }

      std::vector<ArmSpec> arms;
      std::stringstream ss(abl_arms);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) arms.push_back(arm_from_string(item));

      std::vector<uint64_t> seeds;
      for (int s = 1; s <= abl_seeds; ++s) seeds.push_back(static_cast<uint64_t>(s));

      TrainConfig tc;
      tc.epochs = abl_epochs;
      tc.lr = abl_lr;
      tc.optimizer = optimizer_from_string(abl_optimizer);
      tc.quiet = true;

      AblationReport report =
          run_ablation(data, eval_samples, arms, seeds, cfg, tc, abl_threads);
      io::atomic_write(abl_out, report.to_tsv());
      for (const auto& arm : report.arms)
        std::printf("%s exact_match %.6f ± %.6f\n", arm.c_str(),
                    report.mean_exact_match(arm), report.stdev_exact_match(arm));
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
