// SPDX-License-Identifier: Apache-2.0

#include "nam/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace nam::corpus {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- Vocab ----------------------------------------------------------------

Vocab::Vocab(std::string alphabet) : alphabet_(std::move(alphabet)), lookup_(256, -1) {
  if (alphabet_.empty()) throw std::invalid_argument("vocab: alphabet is empty");
  for (std::size_t i = 0; i < alphabet_.size(); ++i) {
    const auto c = static_cast<unsigned char>(alphabet_[i]);
    if (lookup_[c] != -1) {
      throw std::invalid_argument(std::string("vocab: duplicate alphabet symbol '") + alphabet_[i] +
                                  "'");
    }
    lookup_[c] = kFirstSymbol + static_cast<TokenId>(i);
  }
  space_ = lookup_[static_cast<unsigned char>(' ')];
  if (space_ < 0) throw std::invalid_argument("vocab: alphabet must contain the space character");
}

TokenId Vocab::id(char c) const {
  const TokenId t = lookup_[static_cast<unsigned char>(c)];
  if (t < 0) throw TokenizeError(std::string("character '") + c + "' is not in the alphabet", 0);
  return t;
}

char Vocab::symbol(TokenId id) const {
  if (id < kFirstSymbol || static_cast<std::size_t>(id) >= size()) {
    throw std::out_of_range("vocab: id " + std::to_string(id) + " has no text symbol");
  }
  return alphabet_[static_cast<std::size_t>(id - kFirstSymbol)];
}

std::vector<TokenId> Vocab::tokenize(std::string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const TokenId t = lookup_[static_cast<unsigned char>(text[i])];
    if (t < 0) {
      throw TokenizeError("character '" + std::string(1, text[i]) + "' at position " +
                              std::to_string(i) + " is not in the alphabet",
                          i);
    }
    out.push_back(t);
  }
  return out;
}

std::string Vocab::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  out.reserve(ids.size());
  for (TokenId t : ids) {
    if (t == kBiasMarker) {
      out += kMarkerText;
    } else {
      out += symbol(t);
    }
  }
  return out;
}

std::vector<TokenId> strip_markers(std::span<const TokenId> ids) {
  std::vector<TokenId> out;
  out.reserve(ids.size());
  for (TokenId t : ids) {
    if (t != Vocab::kBiasMarker) out.push_back(t);
  }
  return out;
}

// ---- acoustics ------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(base ^ splitmix64(a)) ^ splitmix64(b + 0x5bd1e995ULL));
}

std::vector<std::pair<char, char>> parse_pairs(const std::string& spec, const Vocab& vocab) {
  std::vector<std::pair<char, char>> pairs;
  std::istringstream is(spec);
  std::string group;
  std::set<char> seen;
  while (is >> group) {
    if (group.size() != 2) {
      throw std::invalid_argument("confusable pair '" + group + "' must have two letters");
    }
    for (char c : group) {
      (void)vocab.id(c);
      if (c == ' ' || !seen.insert(c).second) {
        throw std::invalid_argument(std::string("confusable letter '") + c + "' is invalid or repeated");
      }
    }
    pairs.emplace_back(group[0], group[1]);
  }
  return pairs;
}

}  // namespace

PrototypeTable::PrototypeTable(const Vocab& vocab, const AcousticConfig& config)
    : frame_dim_(config.frame_dim), prototypes_(vocab.size()) {
  if (config.min_frames < 1 || config.max_frames < config.min_frames) {
    throw std::invalid_argument("acoustic: invalid frame count range");
  }
  Rng rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> frames(config.min_frames, config.max_frames);
  auto draw = [&](int n) {
    Mat m(n, static_cast<Eigen::Index>(frame_dim_));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  const auto pairs = parse_pairs(config.confusable_pairs, vocab);
  std::map<char, char> partner;
  for (const auto& [a, b] : pairs) {
    partner[b] = a;
    pairs_.emplace_back(vocab.id(a), vocab.id(b));
  }
  for (char c : vocab.alphabet()) {
    if (partner.contains(c)) continue;
    prototypes_[static_cast<std::size_t>(vocab.id(c))] = draw(frames(rng));
  }
  for (const auto& [a, b] : pairs) {
    const Mat& base = prototypes_[static_cast<std::size_t>(vocab.id(a))];
    prototypes_[static_cast<std::size_t>(vocab.id(b))] =
        base + config.pair_distinction * draw(static_cast<int>(base.rows()));
  }
}

const Mat& PrototypeTable::prototype(TokenId id) const {
  if (id < Vocab::kFirstSymbol || static_cast<std::size_t>(id) >= prototypes_.size()) {
    throw std::out_of_range("prototype: token " + std::to_string(id) + " has no acoustics");
  }
  return prototypes_[static_cast<std::size_t>(id)];
}

Mat synth_frames(const PrototypeTable& table, std::span<const TokenId> ids, double noise_sigma,
                 std::uint64_t seed) {
  Eigen::Index total = 0;
  for (TokenId t : ids) total += table.prototype(t).rows();
  Mat out(total, static_cast<Eigen::Index>(table.frame_dim()));
  Eigen::Index at = 0;
  for (TokenId t : ids) {
    const Mat& p = table.prototype(t);
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  if (noise_sigma > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, noise_sigma);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += normal(rng);
  }
  return out;
}

// ---- phrases and context sets ---------------------------------------------

ContextSet::ContextSet(std::vector<Phrase> phrases) : phrases_(std::move(phrases)) {
  for (const Phrase& p : phrases_) {
    if (p.ids.empty()) throw std::invalid_argument("context set: empty phrase");
    for (TokenId t : p.ids) {
      if (t < Vocab::kFirstSymbol) {
        throw std::invalid_argument("context set: phrase '" + p.text + "' contains a reserved id");
      }
    }
    max_length_ = std::max(max_length_, p.ids.size());
  }
  ids_.assign(phrases_.size() * max_length_, Vocab::kPad);
  mask_.assign(phrases_.size() * max_length_, 0);
  for (std::size_t i = 0; i < phrases_.size(); ++i) {
    for (std::size_t u = 0; u < phrases_[i].ids.size(); ++u) {
      ids_[i * max_length_ + u] = phrases_[i].ids[u];
      mask_[i * max_length_ + u] = 1;
    }
  }
}

TokenId ContextSet::id(std::size_t phrase, std::size_t position) const {
  return ids_.at(phrase * max_length_ + position);
}

bool ContextSet::valid(std::size_t phrase, std::size_t position) const {
  return mask_.at(phrase * max_length_ + position) != 0;
}

std::size_t ContextSet::positives() const {
  return static_cast<std::size_t>(std::count_if(phrases_.begin(), phrases_.end(), [](const Phrase& p) {
    return p.role == PhraseRole::kPositive;
  }));
}

Phrase make_phrase(const Vocab& vocab, std::string_view text, PhraseRole role) {
  Phrase p{vocab.tokenize(text), std::string(text), role};
  if (p.ids.empty()) throw std::invalid_argument("phrase: empty text");
  return p;
}

ContextSet build_context_set(const std::optional<Phrase>& positive, std::span<const Phrase> pool,
                             std::size_t distractors, Rng& rng) {
  std::vector<const Phrase*> candidates;
  candidates.reserve(pool.size());
  for (const Phrase& p : pool) {
    if (positive && p.text == positive->text) continue;
    candidates.push_back(&p);
  }
  if (candidates.size() < distractors) {
    throw std::invalid_argument("context set: distractor pool has " +
                                std::to_string(candidates.size()) + " usable phrases, need " +
                                std::to_string(distractors));
  }
  // Partial Fisher-Yates: the first `distractors` entries become the sample.
  for (std::size_t i = 0; i < distractors; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  std::vector<Phrase> phrases;
  phrases.reserve(distractors + 1);
  if (positive) {
    phrases.push_back(*positive);
    phrases.back().role = PhraseRole::kPositive;
  }
  for (std::size_t i = 0; i < distractors; ++i) {
    phrases.push_back(*candidates[i]);
    phrases.back().role = PhraseRole::kDistractor;
  }
  std::shuffle(phrases.begin(), phrases.end(), rng);
  return ContextSet(std::move(phrases));
}

// ---- bias sampling --------------------------------------------------------

std::vector<TokenId> annotate(std::span<const TokenId> transcript, std::span<const TokenId> phrase,
                              TokenId space, MarkerPlacement placement) {
  std::vector<TokenId> out;
  out.reserve(transcript.size() + 4);
  const std::size_t n = transcript.size();
  const std::size_t m = phrase.size();
  std::size_t i = 0;
  while (i < n) {
    const bool word_start = i == 0 || transcript[i - 1] == space;
    if (m > 0 && word_start && i + m <= n && (i + m == n || transcript[i + m] == space) &&
        std::equal(phrase.begin(), phrase.end(), transcript.begin() + static_cast<std::ptrdiff_t>(i))) {
      if (placement == MarkerPlacement::kBefore) out.push_back(Vocab::kBiasMarker);
      out.insert(out.end(), phrase.begin(), phrase.end());
      if (placement == MarkerPlacement::kAfter) out.push_back(Vocab::kBiasMarker);
      i += m;
      continue;
    }
    out.push_back(transcript[i]);
    ++i;
  }
  return out;
}

BiasSample sample_bias(std::span<const TokenId> transcript, TokenId space, double p,
                       NgramRange range, Rng& rng, MarkerPlacement placement) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("sample_bias: p must lie in [0, 1]");
  BiasSample out;
  std::bernoulli_distribution insert(p);
  if (transcript.empty() || !insert(rng)) {
    out.annotated.assign(transcript.begin(), transcript.end());
    return out;
  }
  // Word spans [begin, end) over the transcript.
  std::vector<std::pair<std::size_t, std::size_t>> words;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= transcript.size(); ++i) {
    if (i == transcript.size() || transcript[i] == space) {
      if (i > start) words.emplace_back(start, i);
      start = i + 1;
    }
  }
  if (words.empty()) {
    out.annotated.assign(transcript.begin(), transcript.end());
    return out;
  }
  const int max_n = std::min<int>(range.max_words, static_cast<int>(words.size()));
  const int min_n = std::min(std::max(1, range.min_words), max_n);
  const int n = std::uniform_int_distribution<int>(min_n, max_n)(rng);
  const std::size_t first =
      std::uniform_int_distribution<std::size_t>(0, words.size() - static_cast<std::size_t>(n))(rng);
  const auto b = static_cast<std::ptrdiff_t>(words[first].first);
  const auto e = static_cast<std::ptrdiff_t>(words[first + static_cast<std::size_t>(n) - 1].second);
  out.phrase.emplace(transcript.begin() + b, transcript.begin() + e);
  out.annotated = annotate(transcript, *out.phrase, space, placement);
  return out;
}

// ---- benchmark generation -------------------------------------------------

namespace {

class TextGenerator {
 public:
  TextGenerator(const Vocab& vocab, const AcousticConfig& acoustic, const TextConfig& config)
      : config_(config) {
    const auto pairs = parse_pairs(acoustic.confusable_pairs, vocab);
    std::set<char> paired;
    for (const auto& [a, b] : pairs) {
      paired.insert(a);
      paired.insert(b);
    }
    for (char c : vocab.alphabet()) {
      if (c != ' ' && !paired.contains(c)) classes_.push_back({c, c});
    }
    for (const auto& pr : pairs) classes_.push_back(pr);
    if (classes_.empty()) throw std::invalid_argument("text: alphabet has no letters");
  }

  std::string word(int min_letters, int max_letters, double secondary, Rng& rng) const {
    const int n = std::uniform_int_distribution<int>(min_letters, max_letters)(rng);
    std::uniform_int_distribution<std::size_t> cls(0, classes_.size() - 1);
    std::bernoulli_distribution second(secondary);
    std::string w;
    for (int i = 0; i < n; ++i) {
      const auto& [a, b] = classes_[cls(rng)];
      w += (a != b && second(rng)) ? b : a;
    }
    return w;
  }

  const TextConfig& config() const { return config_; }

 private:
  TextConfig config_;
  std::vector<std::pair<char, char>> classes_;
};

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

Utterance make_utterance(const Benchmark& bench, std::string id, std::string text, std::string entity,
                         int speaker, std::uint64_t seed) {
  Utterance u;
  u.id = std::move(id);
  u.text = std::move(text);
  u.reference = bench.vocab.tokenize(u.text);
  u.frames = synth_frames(bench.prototypes, u.reference, bench.config.noise_sigma, seed);
  u.entity = std::move(entity);
  u.speaker = speaker;
  return u;
}

}  // namespace

std::vector<Phrase> Benchmark::all_entities() const {
  std::vector<Phrase> out;
  for (const SpeakerData& s : speakers) out.insert(out.end(), s.entities.begin(), s.entities.end());
  return out;
}

Benchmark make_benchmark(const BenchmarkConfig& config) {
  Vocab vocab(config.alphabet);
  Benchmark bench{config, vocab, PrototypeTable(vocab, config.acoustic), {}, {}, {}, {}};
  TextGenerator gen(vocab, config.acoustic, config.text);
  const TextConfig& tc = config.text;
  Rng rng(derive_seed(config.seed, 1));

  std::vector<std::string> common;
  std::set<std::string> common_set;
  for (int guard = 0; static_cast<int>(common.size()) < tc.common_words; ++guard) {
    if (guard > 100000) throw std::runtime_error("benchmark: cannot draw enough common words");
    std::string w = gen.word(tc.common_min_letters, tc.common_max_letters, 0.0, rng);
    if (common_set.insert(w).second) common.push_back(w);
  }

  // Entities: unique multi-letter names whose words never coincide with common words.
  const int n_entities = config.speakers * config.entities_per_speaker;
  std::set<std::string> entity_words;
  std::vector<std::string> entities;
  for (int guard = 0; static_cast<int>(entities.size()) < n_entities; ++guard) {
    if (guard > 100000) throw std::runtime_error("benchmark: cannot draw enough entities");
    const int nw = std::uniform_int_distribution<int>(tc.entity_min_words, tc.entity_max_words)(rng);
    std::vector<std::string> words;
    bool ok = true;
    for (int i = 0; i < nw && ok; ++i) {
      words.push_back(gen.word(tc.name_min_letters, tc.name_max_letters, tc.entity_secondary_prob, rng));
      ok = !common_set.contains(words.back()) && !entity_words.contains(words.back());
      for (int j = 0; j < i && ok; ++j) ok = words[static_cast<std::size_t>(j)] != words.back();
    }
    if (!ok) continue;
    for (const auto& w : words) entity_words.insert(w);
    entities.push_back(join(words));
  }
  const auto held_out = static_cast<std::size_t>(
      std::llround(std::clamp(config.holdout_fraction, 0.0, 1.0) * static_cast<double>(n_entities)));
  std::set<std::string> banned;
  for (std::size_t i = 0; i < held_out; ++i) {
    for (const auto& w : split_words(entities[i])) banned.insert(w);
  }

  auto sentence = [&](Rng& r, double rare_prob, double secondary_prob) {
    const int nw = std::uniform_int_distribution<int>(tc.min_sentence_words, tc.max_sentence_words)(r);
    std::bernoulli_distribution rare(rare_prob);
    std::uniform_int_distribution<std::size_t> pick(0, common.size() - 1);
    std::vector<std::string> words;
    for (int i = 0; i < nw; ++i) {
      if (rare(r)) {
        std::string w;
        do {
          w = gen.word(tc.name_min_letters, tc.name_max_letters, secondary_prob, r);
        } while (banned.contains(w) || common_set.contains(w));
        words.push_back(w);
      } else {
        words.push_back(common[pick(r)]);
      }
    }
    return words;
  };

  Rng text_rng(derive_seed(config.seed, 2));
  std::vector<std::string> pre_texts;
  for (int i = 0; i < config.pretrain_utterances + config.pretrain_dev_utterances; ++i) {
    pre_texts.push_back(join(sentence(text_rng, tc.rare_word_prob, tc.train_secondary_prob)));
  }
  // Entities outside the held-out fraction appear in a few pretraining sentences.
  for (std::size_t e = held_out; e < entities.size() && !pre_texts.empty(); ++e) {
    for (int k = 0; k < 3; ++k) {
      std::uniform_int_distribution<std::size_t> at(0, pre_texts.size() - 1);
      std::string& t = pre_texts[at(text_rng)];
      t += ' ' + entities[e];
    }
  }
  for (std::size_t i = 0; i < pre_texts.size(); ++i) {
    const bool dev = static_cast<int>(i) >= config.pretrain_utterances;
    char id[32];
    std::snprintf(id, sizeof id, dev ? "pdev-%05zu" : "pre-%05zu", i);
    auto& split = dev ? bench.pretrain_dev : bench.pretrain;
    split.push_back(make_utterance(bench, id, pre_texts[i], "", -1, derive_seed(config.seed, 3, i)));
  }

  // Speakers: each utterance mentions one of the speaker's entities among common filler words.
  Rng spk_rng(derive_seed(config.seed, 4));
  std::size_t next_entity = 0;
  for (int s = 0; s < config.speakers; ++s) {
    SpeakerData sd;
    sd.id = s;
    for (int e = 0; e < config.entities_per_speaker; ++e) {
      sd.entities.push_back(make_phrase(vocab, entities[next_entity++], PhraseRole::kPositive));
    }
    auto make_split = [&](const char* name, int count, std::vector<Utterance>& out) {
      for (int i = 0; i < count; ++i) {
        const std::string& entity =
            sd.entities[static_cast<std::size_t>(i % config.entities_per_speaker)].text;
        const int fillers = std::uniform_int_distribution<int>(
            std::max(1, tc.min_sentence_words - 1), std::max(1, tc.max_sentence_words - 1))(spk_rng);
        std::uniform_int_distribution<std::size_t> pick(0, common.size() - 1);
        std::vector<std::string> words;
        for (int k = 0; k < fillers; ++k) words.push_back(common[pick(spk_rng)]);
        const auto pos =
            std::uniform_int_distribution<std::size_t>(0, words.size())(spk_rng);
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos), entity);
        char id[48];
        std::snprintf(id, sizeof id, "s%02d-%s-%03d", s, name, i);
        const std::uint64_t seed = derive_seed(config.seed, 5, (static_cast<std::uint64_t>(s) << 32) ^
                                                                   (static_cast<std::uint64_t>(static_cast<unsigned char>(name[0])) << 16) ^
                                                                   static_cast<std::uint64_t>(i));
        out.push_back(make_utterance(bench, id, join(words), entity, s, seed));
      }
    };
    make_split("train", config.train_per_speaker, sd.train);
    make_split("dev", config.dev_per_speaker, sd.dev);
    make_split("test", config.test_per_speaker, sd.test);
    bench.speakers.push_back(std::move(sd));
  }

  // Drawn last so the splits above do not depend on its size.
  Rng bias_rng(derive_seed(config.seed, 6));
  for (int i = 0; i < config.bias_train_utterances; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "bias-%05d", i);
    bench.bias_train.push_back(make_utterance(bench, id, join(sentence(bias_rng, config.bias_rare_word_prob, config.bias_secondary_prob)), "", -1,
                                              derive_seed(config.seed, 7, static_cast<std::uint64_t>(i))));
  }
  return bench;
}

// ---- serialization --------------------------------------------------------

void write_frames(const std::string& path, const Mat& frames) {
  static_assert(std::endian::native == std::endian::little, "frame I/O assumes little-endian");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("frames: cannot write '" + path + "'");
  const std::uint64_t header[2] = {static_cast<std::uint64_t>(frames.rows()),
                                   static_cast<std::uint64_t>(frames.cols())};
  os.write(reinterpret_cast<const char*>(header), sizeof header);
  os.write(reinterpret_cast<const char*>(frames.data()),
           static_cast<std::streamsize>(frames.size() * sizeof(double)));
  if (!os) throw std::runtime_error("frames: write failed for '" + path + "'");
}

Mat read_frames(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("frames: cannot open '" + path + "'");
  std::uint64_t header[2];
  is.read(reinterpret_cast<char*>(header), sizeof header);
  if (!is) throw std::runtime_error("frames: truncated header in '" + path + "'");
  Mat m(static_cast<Eigen::Index>(header[0]), static_cast<Eigen::Index>(header[1]));
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!is) throw std::runtime_error("frames: truncated data in '" + path + "'");
  return m;
}

namespace {

void save_split(const std::vector<Utterance>& utts, const fs::path& dir, const std::string& name) {
  fs::create_directories(dir / "frames");
  std::ofstream os(dir / (name + ".jsonl"), std::ios::trunc);
  if (!os) throw std::runtime_error("benchmark: cannot write " + (dir / name).string());
  for (const Utterance& u : utts) {
    const std::string frame_file = "frames/" + u.id + ".f64";
    write_frames((dir / frame_file).string(), u.frames);
    json rec = {{"id", u.id},         {"text", u.text},       {"ids", u.reference},
                {"frames", frame_file}, {"entity", u.entity}, {"speaker", u.speaker}};
    os << rec.dump() << '\n';
  }
}

std::vector<Utterance> load_split(const fs::path& dir, const std::string& name) {
  std::ifstream is(dir / (name + ".jsonl"));
  if (!is) throw std::runtime_error("benchmark: missing split " + (dir / (name + ".jsonl")).string());
  std::vector<Utterance> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    Utterance u;
    u.id = rec.at("id").get<std::string>();
    u.text = rec.at("text").get<std::string>();
    u.reference = rec.at("ids").get<std::vector<TokenId>>();
    u.frames = read_frames((dir / rec.at("frames").get<std::string>()).string());
    u.entity = rec.at("entity").get<std::string>();
    u.speaker = rec.at("speaker").get<int>();
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace

void save_benchmark(const Benchmark& bench, const std::string& dir, const std::string& fingerprint) {
  const fs::path root(dir);
  fs::create_directories(root);
  save_split(bench.pretrain, root / "pretrain", "train");
  save_split(bench.pretrain_dev, root / "pretrain", "dev");
  save_split(bench.bias_train, root / "bias", "train");
  json speakers = json::array();
  for (const SpeakerData& s : bench.speakers) {
    char name[32];
    std::snprintf(name, sizeof name, "speaker_%02d", s.id);
    const fs::path sdir = root / name;
    save_split(s.train, sdir, "train");
    save_split(s.dev, sdir, "dev");
    save_split(s.test, sdir, "test");
    std::ofstream es(sdir / "entities.txt", std::ios::trunc);
    json ents = json::array();
    for (const Phrase& p : s.entities) {
      es << p.text << '\n';
      ents.push_back(p.text);
    }
    speakers.push_back({{"id", s.id}, {"dir", name}, {"entities", ents}});
  }
  json manifest = {{"fingerprint", fingerprint},
                   {"alphabet", bench.vocab.alphabet()},
                   {"pretrain_utterances", bench.pretrain.size()},
                   {"pretrain_dev_utterances", bench.pretrain_dev.size()},
                   {"bias_train_utterances", bench.bias_train.size()},
                   {"speakers", speakers}};
  std::ofstream ms(root / "manifest.json", std::ios::trunc);
  ms << manifest.dump(2) << '\n';
}

Benchmark load_benchmark(const std::string& dir, const BenchmarkConfig& config) {
  const fs::path root(dir);
  std::ifstream ms(root / "manifest.json");
  if (!ms) throw std::runtime_error("benchmark: no manifest.json under '" + dir + "'");
  const json manifest = json::parse(ms);
  if (manifest.at("alphabet").get<std::string>() != config.alphabet) {
    throw std::runtime_error("benchmark: alphabet in '" + dir + "' differs from the configuration");
  }
  Vocab vocab(config.alphabet);
  Benchmark bench{config, vocab, PrototypeTable(vocab, config.acoustic), {}, {}, {}, {}};
  bench.pretrain = load_split(root / "pretrain", "train");
  bench.pretrain_dev = load_split(root / "pretrain", "dev");
  bench.bias_train = load_split(root / "bias", "train");
  for (const json& s : manifest.at("speakers")) {
    SpeakerData sd;
    sd.id = s.at("id").get<int>();
    for (const json& e : s.at("entities")) {
      sd.entities.push_back(make_phrase(vocab, e.get<std::string>(), PhraseRole::kPositive));
    }
    const fs::path sdir = root / s.at("dir").get<std::string>();
    sd.train = load_split(sdir, "train");
    sd.dev = load_split(sdir, "dev");
    sd.test = load_split(sdir, "test");
    bench.speakers.push_back(std::move(sd));
  }
  return bench;
}

}  // namespace nam::corpus
