#include "concap/synth.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>

#include "concap/rng.hpp"

namespace concap {

namespace {

const std::vector<std::string> kAdjectives = {
    "little", "red", "happy", "fuzzy", "small", "big", "old", "young",
    "blue", "tiny", "wild", "sleepy"};
const std::vector<std::string> kNouns = {
    "baby", "girl", "boy", "dog", "cat", "bird", "horse", "monkey",
    "rabbit", "bear", "panda", "fox"};
const std::vector<std::string> kVerbs = {
    "drinks", "eats", "holds", "chases", "watches", "carries", "wants",
    "finds", "licks", "grabs", "drops", "shakes"};
const std::vector<std::string> kObjects = {
    "milk", "water", "food", "bone", "fish", "toy", "apple", "grass",
    "bread", "juice", "cheese", "corn"};

// Slot layout per template; A=adjective, N=noun, V=verb, O=object, other
// words are literals. Content words always run A N V O so the systematic
// in-window pairs carry high PMI; templates differ in determiners and in
// whether the adjective is present.
const std::vector<std::vector<std::string>> kTemplates = {
    {"the", "A", "N", "V", "the", "O"},
    {"a", "A", "N", "V", "a", "O"},
    {"the", "N", "V", "the", "O"},
    {"a", "N", "V", "the", "O"},
    {"the", "A", "N", "V", "a", "O"},
    {"a", "A", "N", "V", "the", "O"},
    {"the", "N", "V", "a", "O"},
    {"a", "N", "V", "a", "O"},
};

bool is_slot(const std::string& s) {
  return s == "A" || s == "N" || s == "V" || s == "O";
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_concepts < 4) throw std::invalid_argument("synthetic: need at least 4 concepts");
  if (n_concepts > 4 * static_cast<int>(kAdjectives.size()))
    throw std::invalid_argument("synthetic: concept pool exhausted");
  if (n_templates < 1 || n_templates > static_cast<int>(kTemplates.size()))
    throw std::invalid_argument("synthetic: n_templates out of range");
  if (n_samples < 1) throw std::invalid_argument("synthetic: n_samples must be >= 1");
  if (grid < 5) throw std::invalid_argument("synthetic: grid must hold 4 concepts + background");
  if (feature_dim < 2) throw std::invalid_argument("synthetic: feature_dim too small");
  if (noise_std < 0.0) throw std::invalid_argument("synthetic: noise_std must be >= 0");
  if (distractor_skew < 0.0 || distractor_skew > 1.0)
    throw std::invalid_argument("synthetic: distractor_skew must be in [0, 1]");
}

SyntheticData generate_dataset(const SyntheticSpec& spec) {
  spec.validate();

  // split the concept budget over the four categories, nouns/objects first
  const int base = spec.n_concepts / 4;
  int extra = spec.n_concepts % 4;
  int n_nouns = base + (extra-- > 0 ? 1 : 0);
  int n_objects = base + (extra-- > 0 ? 1 : 0);
  int n_verbs = base + (extra-- > 0 ? 1 : 0);
  int n_adjs = base;
  n_nouns = std::max(n_nouns, 1);
  n_objects = std::max(n_objects, 1);
  n_verbs = std::max(n_verbs, 1);
  n_adjs = std::max(n_adjs, 1);

  std::vector<std::string> adjs(kAdjectives.begin(), kAdjectives.begin() + n_adjs);
  std::vector<std::string> nouns(kNouns.begin(), kNouns.begin() + n_nouns);
  std::vector<std::string> verbs(kVerbs.begin(), kVerbs.begin() + n_verbs);
  std::vector<std::string> objects(kObjects.begin(), kObjects.begin() + n_objects);

  // prototypes from the pool seed so train/eval splits share them
  Rng proto_rng(spec.seed);
  std::map<std::string, std::vector<double>> prototypes;
  auto make_proto = [&](const std::string& w) {
    std::vector<double> v(static_cast<size_t>(spec.feature_dim));
    for (auto& x : v) x = proto_rng.normal();
    prototypes[w] = std::move(v);
  };
  for (const auto& w : adjs) make_proto(w);
  for (const auto& w : nouns) make_proto(w);
  for (const auto& w : verbs) make_proto(w);
  for (const auto& w : objects) make_proto(w);

  SyntheticData out;
  Rng rng(spec.sample_seed);
  for (int s = 0; s < spec.n_samples; ++s) {
    const auto& tpl = kTemplates[static_cast<size_t>(rng.uniform_int(0, spec.n_templates - 1))];
    const std::string& adj = adjs[static_cast<size_t>(rng.uniform_int(0, n_adjs - 1))];
    const std::string& noun = nouns[static_cast<size_t>(rng.uniform_int(0, n_nouns - 1))];
    const int verb_idx = rng.uniform_int(0, n_verbs - 1);
    const std::string& verb = verbs[static_cast<size_t>(verb_idx)];
    // the verb's default object is the linguistic-prior trap
    const int default_obj = verb_idx % n_objects;
    int obj_idx;
    if (rng.bernoulli(spec.distractor_skew) || n_objects == 1) {
      obj_idx = default_obj;
    } else {
      obj_idx = rng.uniform_int(0, n_objects - 2);
      if (obj_idx >= default_obj) ++obj_idx;
    }
    const std::string& obj = objects[static_cast<size_t>(obj_idx)];

    std::vector<std::string> tokens;
    std::vector<std::string> content;
    for (const auto& part : tpl) {
      if (!is_slot(part)) {
        tokens.push_back(part);
        continue;
      }
      const std::string& w = part == "A"   ? adj
                             : part == "N" ? noun
                             : part == "V" ? verb
                                           : obj;
      tokens.push_back(w);
      content.push_back(w);
    }

    RawSample raw;
    std::ostringstream caption;
    for (size_t i = 0; i < tokens.size(); ++i) caption << (i ? " " : "") << tokens[i];
    raw.caption = caption.str();

    raw.features.assign(static_cast<size_t>(spec.grid),
                        std::vector<double>(static_cast<size_t>(spec.feature_dim), 0.0));
    for (auto& cell : raw.features)
      for (auto& x : cell) x = spec.noise_std * rng.normal();
    // distinct random cells for the planted concepts
    std::vector<int> cells(static_cast<size_t>(spec.grid));
    for (int c = 0; c < spec.grid; ++c) cells[static_cast<size_t>(c)] = c;
    rng.shuffle(cells);
    for (size_t c = 0; c < content.size(); ++c) {
      const auto& proto = prototypes.at(content[c]);
      auto& cell = raw.features[static_cast<size_t>(cells[c])];
      for (int f = 0; f < spec.feature_dim; ++f)
        cell[static_cast<size_t>(f)] += proto[static_cast<size_t>(f)];
    }

    // consecutive content-word pairs; the lexicon should recover these
    for (size_t c = 0; c + 1 < content.size(); ++c)
      out.adjacent_pairs.insert({content[c], content[c + 1]});

    out.corpus_lines.push_back(raw.caption);
    out.samples.push_back(std::move(raw));
  }
  return out;
}

}  // namespace concap
