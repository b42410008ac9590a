#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace concap {

// Lowercases, drops punctuation, splits on whitespace. ASCII non-alphanumeric
// characters act as separators; multi-byte UTF-8 sequences are kept as word
// characters.
std::vector<std::string> tokenize(const std::string& text);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecial = 4;

  Vocabulary();

  // Specials first, then all distinct corpus tokens sorted lexicographically.
  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus);

  int id(const std::string& w) const;  // kUnk when absent
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(words_.size()); }
  bool contains(const std::string& w) const;
  const std::vector<std::string>& words() const { return words_; }

  std::vector<int> encode(const std::vector<std::string>& tokens,
                          bool add_bos_eos) const;
  std::vector<std::string> decode(const std::vector<int>& ids,
                                  bool drop_special = true) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  void add(const std::string& w);
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

bool is_stop_word(const std::string& w);

struct ConceptVocabulary {
  std::vector<int> concept_ids;  // ascending vocabulary ids
  int64_t min_freq = 1;

  static ConceptVocabulary from_ids(std::vector<int> ids, int64_t min_freq = 1);

  int size() const { return static_cast<int>(concept_ids.size()); }
  int index_of(int word_id) const;  // -1 when not a concept
  bool is_concept(int word_id) const { return index_of(word_id) >= 0; }

  void save(const std::string& path, const Vocabulary& vocab) const;
  static ConceptVocabulary load(const std::string& path, const Vocabulary& vocab);

 private:
  friend ConceptVocabulary build_concept_vocab(
      const std::vector<std::vector<int>>&, const Vocabulary&, int64_t);
  void rebuild_index();
  std::map<int, int> index_;
};

// Words with corpus frequency >= min_freq, excluding specials and stop words.
// Throws std::runtime_error when the result would be empty.
ConceptVocabulary build_concept_vocab(const std::vector<std::vector<int>>& corpus,
                                      const Vocabulary& vocab, int64_t min_freq);

struct CooccurrenceTable {
  std::vector<int64_t> unigram;               // indexed by word id
  std::map<std::pair<int, int>, int64_t> pair;  // directed (w1, w2)
  int64_t total_tokens = 0;
  int64_t total_pairs = 0;
  int window = 3;

  int64_t unigram_count(int w) const;
  int64_t pair_count(int w1, int w2) const;
  void merge(const CooccurrenceTable& other);
};

// For each sentence position i, counts (token[i], token[j]) for all
// j in (i, i + window] inside the sentence. Unigrams counted once per token.
CooccurrenceTable count_cooccurrence(const std::vector<std::vector<int>>& corpus,
                                     int vocab_size, int window);

// Shards sentences across threads and merges; identical result to the
// single-threaded count.
CooccurrenceTable count_cooccurrence_parallel(
    const std::vector<std::vector<int>>& corpus, int vocab_size, int window,
    int threads);

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log( p(w1w2) / (p(w1) p(w2)) ), natural log, with p(w1w2) normalized by
// total counted ordered pairs and p(w) by total tokens. Returns -inf when the
// pair was never seen; throws when either unigram count is zero.
double pmi(const CooccurrenceTable& table, int w1, int w2);

struct PmiLexicon {
  std::map<std::pair<int, int>, double> entries;  // sorted by (w1, w2) id
  double threshold = 0.5;
  int window = 3;

  size_t size() const { return entries.size(); }
  bool contains(int w1, int w2) const;
  double score(int w1, int w2) const;  // -inf when absent

  // TSV: header then `w1<TAB>w2<TAB>pmi` (words, pmi with 6 decimals),
  // sorted lexicographically by words.
  void save_tsv(const std::string& path, const Vocabulary& vocab) const;
  static PmiLexicon load_tsv(const std::string& path, const Vocabulary& vocab);
};

// Keeps exactly the ordered pairs with pmi >= threshold.
PmiLexicon build_lexicon(const CooccurrenceTable& table, double threshold);

// Multi-hot vector over the concept vocabulary for one caption.
std::vector<double> extract_concept_labels(const std::vector<int>& caption_ids,
                                           const ConceptVocabulary& cv);

}  // namespace concap
