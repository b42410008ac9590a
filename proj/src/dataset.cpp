#include "concap/dataset.hpp"

#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "concap/io.hpp"

namespace concap {

using nlohmann::json;

std::vector<RawSample> load_jsonl(const std::string& path) {
  auto lines = io::read_lines(path);
  std::vector<RawSample> out;
  out.reserve(lines.size());
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    json j;
    try {
      j = json::parse(lines[i]);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": " + e.what());
    }
    RawSample s;
    s.caption = j.at("caption").get<std::string>();
    s.features = j.at("features").get<std::vector<std::vector<double>>>();
    if (s.features.empty() || s.features[0].empty())
      throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": empty feature grid");
    for (const auto& row : s.features)
      if (row.size() != s.features[0].size())
        throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": ragged feature grid");
    out.push_back(std::move(s));
  }
  return out;
}

void save_jsonl(const std::string& path, const std::vector<RawSample>& samples) {
  std::ostringstream ss;
  for (const auto& s : samples) {
    json j;
    j["caption"] = s.caption;
    j["features"] = s.features;
    ss << j.dump() << "\n";
  }
  io::atomic_write(path, ss.str());
}

std::vector<CaptionSample> encode_samples(const std::vector<RawSample>& raw,
                                          const Vocabulary& vocab,
                                          const ConceptVocabulary& cv,
                                          int max_caption_len) {
  std::vector<CaptionSample> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    CaptionSample s;
    const int grid = static_cast<int>(r.features.size());
    const int d_feat = static_cast<int>(r.features[0].size());
    s.features = ad::Tensor::zeros({grid, d_feat});
    for (int g = 0; g < grid; ++g)
      for (int f = 0; f < d_feat; ++f)
        s.features[static_cast<int64_t>(g) * d_feat + f] = r.features[static_cast<size_t>(g)][static_cast<size_t>(f)];
    s.caption = vocab.encode(tokenize(r.caption), true);
    if (static_cast<int>(s.caption.size()) > max_caption_len)
      throw std::runtime_error("caption longer than max_caption_len (" +
                               std::to_string(s.caption.size()) + " > " +
                               std::to_string(max_caption_len) + "): " + r.caption);
    s.concept_labels = extract_concept_labels(s.caption, cv);
    out.push_back(std::move(s));
  }
  return out;
}

Dataset prepare_dataset(const std::vector<RawSample>& raw, int window,
                        double pmi_threshold, int64_t min_freq, int max_caption_len) {
  if (raw.empty()) throw std::runtime_error("empty dataset");
  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(raw.size());
  for (const auto& r : raw) tokenized.push_back(tokenize(r.caption));

  Dataset d;
  d.vocab = Vocabulary::build(tokenized);
  std::vector<std::vector<int>> ids;
  ids.reserve(tokenized.size());
  for (const auto& t : tokenized) ids.push_back(d.vocab.encode(t, false));
  d.concepts = build_concept_vocab(ids, d.vocab, min_freq);
  d.table = count_cooccurrence(ids, d.vocab.size(), window);
  d.lexicon = build_lexicon(d.table, pmi_threshold);
  d.samples = encode_samples(raw, d.vocab, d.concepts, max_caption_len);
  d.grid_size = static_cast<int>(raw[0].features.size());
  d.feature_dim = static_cast<int>(raw[0].features[0].size());
  return d;
}

}  // namespace concap
