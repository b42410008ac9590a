#include "concap/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_set>

#include "concap/io.hpp"

namespace concap {

namespace {

const char* kSpecials[] = {"<pad>", "<bos>", "<eos>", "<unk>"};

const std::unordered_set<std::string>& stop_word_set() {
  static const std::unordered_set<std::string> kStop = {
      "a",    "an",   "the",  "is",   "are",  "was",  "were", "be",   "been",
      "being", "of",  "in",   "on",   "at",   "to",   "from", "with", "by",
      "for",  "and",  "or",   "but",  "not",  "no",   "it",   "its",  "this",
      "that", "these", "those", "he",  "she",  "they", "them", "his",  "her",
      "their", "we",  "us",   "our",  "you",  "your", "i",    "my",   "me",
      "as",   "so",   "if",   "then", "than", "too",  "very", "do",   "does",
      "did",  "has",  "have", "had",  "will", "can"};
  return kStop;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    bool word_char;
    if (c >= 0x80) {
      word_char = true;  // keep multi-byte UTF-8 intact
    } else if (std::isalnum(c)) {
      word_char = true;
    } else {
      word_char = false;
    }
    if (word_char) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

bool is_stop_word(const std::string& w) { return stop_word_set().count(w) > 0; }

Vocabulary::Vocabulary() {
  for (const char* s : kSpecials) add(s);
}

void Vocabulary::add(const std::string& w) {
  if (index_.count(w)) return;
  index_[w] = static_cast<int>(words_.size());
  words_.push_back(w);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus) {
  Vocabulary v;
  std::set<std::string> distinct;
  for (const auto& sent : corpus)
    for (const auto& tok : sent) distinct.insert(tok);
  for (const auto& w : distinct) v.add(w);
  return v;
}

int Vocabulary::id(const std::string& w) const {
  auto it = index_.find(w);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("word id out of range");
  return words_[static_cast<size_t>(id)];
}

bool Vocabulary::contains(const std::string& w) const { return index_.count(w) > 0; }

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens,
                                    bool add_bos_eos) const {
  std::vector<int> ids;
  ids.reserve(tokens.size() + 2);
  if (add_bos_eos) ids.push_back(kBos);
  for (const auto& t : tokens) ids.push_back(id(t));
  if (add_bos_eos) ids.push_back(kEos);
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids,
                                            bool drop_special) const {
  std::vector<std::string> out;
  for (int i : ids) {
    if (drop_special && i < kNumSpecial) continue;
    out.push_back(word(i));
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ostringstream ss;
  for (const auto& w : words_) ss << w << "\n";
  io::atomic_write(path, ss.str());
}

Vocabulary Vocabulary::load(const std::string& path) {
  auto lines = io::read_lines(path);
  if (lines.size() < kNumSpecial) throw std::runtime_error("vocabulary file too short: " + path);
  for (int i = 0; i < kNumSpecial; ++i) {
    if (lines[static_cast<size_t>(i)] != kSpecials[i])
      throw std::runtime_error("vocabulary file missing special tokens: " + path);
  }
  Vocabulary v;
  for (size_t i = kNumSpecial; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    v.add(lines[i]);
  }
  return v;
}

ConceptVocabulary ConceptVocabulary::from_ids(std::vector<int> ids, int64_t min_freq) {
  ConceptVocabulary cv;
  cv.concept_ids = std::move(ids);
  std::sort(cv.concept_ids.begin(), cv.concept_ids.end());
  cv.min_freq = min_freq;
  cv.rebuild_index();
  return cv;
}

int ConceptVocabulary::index_of(int word_id) const {
  auto it = index_.find(word_id);
  return it == index_.end() ? -1 : it->second;
}

void ConceptVocabulary::rebuild_index() {
  index_.clear();
  for (size_t i = 0; i < concept_ids.size(); ++i)
    index_[concept_ids[i]] = static_cast<int>(i);
}

void ConceptVocabulary::save(const std::string& path, const Vocabulary& vocab) const {
  std::ostringstream ss;
  ss << "# min_freq " << min_freq << "\n";
  for (int id : concept_ids) ss << vocab.word(id) << "\n";
  io::atomic_write(path, ss.str());
}

ConceptVocabulary ConceptVocabulary::load(const std::string& path,
                                          const Vocabulary& vocab) {
  auto lines = io::read_lines(path);
  ConceptVocabulary cv;
  for (const auto& line : lines) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string key;
      ss >> key >> cv.min_freq;
      continue;
    }
    if (!vocab.contains(line))
      throw std::runtime_error("concept word not in vocabulary: " + line);
    cv.concept_ids.push_back(vocab.id(line));
  }
  std::sort(cv.concept_ids.begin(), cv.concept_ids.end());
  cv.rebuild_index();
  return cv;
}

ConceptVocabulary build_concept_vocab(const std::vector<std::vector<int>>& corpus,
                                      const Vocabulary& vocab, int64_t min_freq) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  if (min_freq < 1) throw std::invalid_argument("min_freq must be >= 1");
  std::vector<int64_t> freq(static_cast<size_t>(vocab.size()), 0);
  for (const auto& sent : corpus)
    for (int id : sent) freq[static_cast<size_t>(id)]++;
  ConceptVocabulary cv;
  cv.min_freq = min_freq;
  for (int id = Vocabulary::kNumSpecial; id < vocab.size(); ++id) {
    if (freq[static_cast<size_t>(id)] < min_freq) continue;
    if (is_stop_word(vocab.word(id))) continue;
    cv.concept_ids.push_back(id);
  }
  if (cv.concept_ids.empty())
    throw std::runtime_error("concept vocabulary is empty at min_freq=" +
                             std::to_string(min_freq));
  cv.rebuild_index();
  return cv;
}

int64_t CooccurrenceTable::unigram_count(int w) const {
  if (w < 0 || static_cast<size_t>(w) >= unigram.size()) return 0;
  return unigram[static_cast<size_t>(w)];
}

int64_t CooccurrenceTable::pair_count(int w1, int w2) const {
  auto it = pair.find({w1, w2});
  return it == pair.end() ? 0 : it->second;
}

void CooccurrenceTable::merge(const CooccurrenceTable& other) {
  if (other.window != window) throw std::invalid_argument("window mismatch in merge");
  if (other.unigram.size() > unigram.size()) unigram.resize(other.unigram.size(), 0);
  for (size_t i = 0; i < other.unigram.size(); ++i) unigram[i] += other.unigram[i];
  for (const auto& [key, count] : other.pair) pair[key] += count;
  total_tokens += other.total_tokens;
  total_pairs += other.total_pairs;
}

namespace {

CooccurrenceTable count_range(const std::vector<std::vector<int>>& corpus,
                              size_t begin, size_t end, int vocab_size, int window) {
  CooccurrenceTable t;
  t.window = window;
  t.unigram.assign(static_cast<size_t>(vocab_size), 0);
  for (size_t s = begin; s < end; ++s) {
    const auto& sent = corpus[s];
    const size_t n = sent.size();
    for (size_t i = 0; i < n; ++i) {
      t.unigram[static_cast<size_t>(sent[i])]++;
      t.total_tokens++;
      const size_t jmax = std::min(n, i + 1 + static_cast<size_t>(window));
      for (size_t j = i + 1; j < jmax; ++j) {
        t.pair[{sent[i], sent[j]}]++;
        t.total_pairs++;
      }
    }
  }
  return t;
}

}  // namespace

CooccurrenceTable count_cooccurrence(const std::vector<std::vector<int>>& corpus,
                                     int vocab_size, int window) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  return count_range(corpus, 0, corpus.size(), vocab_size, window);
}

CooccurrenceTable count_cooccurrence_parallel(
    const std::vector<std::vector<int>>& corpus, int vocab_size, int window,
    int threads) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  if (threads <= 1 || corpus.size() < 2)
    return count_cooccurrence(corpus, vocab_size, window);
  size_t n_shards = std::min(static_cast<size_t>(threads), corpus.size());
  std::vector<CooccurrenceTable> shards(n_shards);
  std::vector<std::thread> workers;
  size_t per = (corpus.size() + n_shards - 1) / n_shards;
  for (size_t k = 0; k < n_shards; ++k) {
    size_t b = k * per;
    size_t e = std::min(corpus.size(), b + per);
    workers.emplace_back([&, k, b, e] {
      shards[k] = count_range(corpus, b, e, vocab_size, window);
    });
  }
  for (auto& w : workers) w.join();
  CooccurrenceTable out = std::move(shards[0]);
  for (size_t k = 1; k < n_shards; ++k) out.merge(shards[k]);
  return out;
}

double pmi(const CooccurrenceTable& table, int w1, int w2) {
  int64_t c1 = table.unigram_count(w1);
  int64_t c2 = table.unigram_count(w2);
  if (c1 <= 0 || c2 <= 0)
    throw std::invalid_argument("pmi of word with zero unigram count");
  int64_t cp = table.pair_count(w1, w2);
  if (cp == 0) return kNegInf;
  double p_pair = static_cast<double>(cp) / static_cast<double>(table.total_pairs);
  double p1 = static_cast<double>(c1) / static_cast<double>(table.total_tokens);
  double p2 = static_cast<double>(c2) / static_cast<double>(table.total_tokens);
  return std::log(p_pair / (p1 * p2));
}

bool PmiLexicon::contains(int w1, int w2) const {
  return entries.count({w1, w2}) > 0;
}

double PmiLexicon::score(int w1, int w2) const {
  auto it = entries.find({w1, w2});
  return it == entries.end() ? kNegInf : it->second;
}

PmiLexicon build_lexicon(const CooccurrenceTable& table, double threshold) {
  if (!std::isfinite(threshold)) throw std::invalid_argument("threshold must be finite");
  PmiLexicon lex;
  lex.threshold = threshold;
  lex.window = table.window;
  for (const auto& [key, count] : table.pair) {
    if (count <= 0) continue;
    double score = pmi(table, key.first, key.second);
    if (score >= threshold) lex.entries[key] = score;
  }
  return lex;
}

void PmiLexicon::save_tsv(const std::string& path, const Vocabulary& vocab) const {
  std::vector<std::pair<std::pair<std::string, std::string>, double>> rows;
  rows.reserve(entries.size());
  for (const auto& [key, score] : entries)
    rows.push_back({{vocab.word(key.first), vocab.word(key.second)}, score});
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::ostringstream ss;
  ss << "w1\tw2\tpmi\n";
  ss.setf(std::ios::fixed);
  ss.precision(6);
  for (const auto& [words, score] : rows)
    ss << words.first << "\t" << words.second << "\t" << score << "\n";
  io::atomic_write(path, ss.str());
}

PmiLexicon PmiLexicon::load_tsv(const std::string& path, const Vocabulary& vocab) {
  auto lines = io::read_lines(path);
  if (lines.empty() || lines[0] != "w1\tw2\tpmi")
    throw std::runtime_error("bad lexicon header in " + path);
  PmiLexicon lex;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::istringstream ss(lines[i]);
    std::string w1, w2, score;
    if (!std::getline(ss, w1, '\t') || !std::getline(ss, w2, '\t') ||
        !std::getline(ss, score))
      throw std::runtime_error("bad lexicon row: " + lines[i]);
    lex.entries[{vocab.id(w1), vocab.id(w2)}] = std::stod(score);
  }
  return lex;
}

std::vector<double> extract_concept_labels(const std::vector<int>& caption_ids,
                                           const ConceptVocabulary& cv) {
  std::vector<double> labels(static_cast<size_t>(cv.size()), 0.0);
  for (int id : caption_ids) {
    int idx = cv.index_of(id);
    if (idx >= 0) labels[static_cast<size_t>(idx)] = 1.0;
  }
  return labels;
}

}  // namespace concap
