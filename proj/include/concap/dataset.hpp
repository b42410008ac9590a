#pragma once

#include <string>
#include <vector>

#include "concap/corpus.hpp"
#include "concap/tensor.hpp"

namespace concap {

// One line of the JSONL dataset, before vocabulary binding.
struct RawSample {
  std::vector<std::vector<double>> features;  // [S][d_feat]
  std::string caption;
};

std::vector<RawSample> load_jsonl(const std::string& path);
void save_jsonl(const std::string& path, const std::vector<RawSample>& samples);

// A training example bound to a vocabulary: concept labels are derived at
// load time from the caption.
struct CaptionSample {
  ad::Tensor features;               // [S, d_feat]
  std::vector<int> caption;          // token ids, BOS ... EOS
  std::vector<double> concept_labels;  // multi-hot over the concept vocabulary
};

std::vector<CaptionSample> encode_samples(const std::vector<RawSample>& raw,
                                          const Vocabulary& vocab,
                                          const ConceptVocabulary& cv,
                                          int max_caption_len);

// Everything derived from one raw training set: vocabulary, concept
// vocabulary, co-occurrence counts, PMI lexicon, and the encoded samples.
struct Dataset {
  Vocabulary vocab;
  ConceptVocabulary concepts;
  CooccurrenceTable table;
  PmiLexicon lexicon;
  std::vector<CaptionSample> samples;
  int feature_dim = 0;
  int grid_size = 0;
};

Dataset prepare_dataset(const std::vector<RawSample>& raw, int window,
                        double pmi_threshold, int64_t min_freq, int max_caption_len);

}  // namespace concap
