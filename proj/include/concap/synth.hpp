#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "concap/dataset.hpp"

namespace concap {

// Synthetic caption data with planted concept structure: each concept word
// owns a prototype feature vector; a sample drops the prototypes of its
// caption's content words into random grid cells. Captions come from a
// closed template grammar so that word order carries signal, and each verb
// has a corpus-dominant object so that a decoder leaning on language
// statistics alone gets pulled toward the wrong continuation.
struct SyntheticSpec {
  int n_concepts = 16;    // content words, split across four categories
  int n_templates = 6;
  int n_samples = 200;
  int feature_dim = 16;
  int grid = 9;           // flattened cells
  double noise_std = 0.25;
  double distractor_skew = 0.5;  // probability a verb takes its default object
  uint64_t seed = 1;         // word pools + prototypes
  uint64_t sample_seed = 1;  // per-sample content

  void validate() const;
};

struct SyntheticData {
  std::vector<RawSample> samples;
  std::vector<std::string> corpus_lines;
  // ordered content-word pairs within window 3 in at least one caption
  std::set<std::pair<std::string, std::string>> adjacent_pairs;
};

SyntheticData generate_dataset(const SyntheticSpec& spec);

}  // namespace concap
