// SPDX-License-Identifier: Apache-2.0

#include "nam/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace nam::config {

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw std::invalid_argument("config: " + std::string(key) + " = '" + std::string(value) + "' (expected " +
                              std::string(expected) + ")");
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_value(key, text, "a number");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) bad_value(key, text, "a finite number");
  }
  return v;
}

std::string format_double(double v) {
  // Shortest text that round-trips, so serialize(parse(x)) is stable.
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  bad_value(key, text, "true or false");
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  std::string item;
  std::istringstream is{std::string(text)};
  while (std::getline(is, item, ',')) out.push_back(parse_number<T>(key, item));
  if (out.empty()) bad_value(key, text, "a comma-separated list");
  return out;
}

template <typename T>
std::string format_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view key, std::string_view)> set;
};

// Member-pointer helpers keep the table below one line per key.
template <typename T>
Field num(std::function<T&(RunConfig&)> ref) {
  return {[ref](const RunConfig& c) {
            T v = ref(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(v);
            } else {
              return std::to_string(v);
            }
          },
          [ref](RunConfig& c, std::string_view k, std::string_view v) { ref(c) = parse_number<T>(k, v); }};
}

Field flag(std::function<bool&(RunConfig&)> ref) {
  return {[ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [ref](RunConfig& c, std::string_view k, std::string_view v) { ref(c) = parse_bool(k, v); }};
}

Field text(std::function<std::string&(RunConfig&)> ref) {
  return {[ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
          [ref](RunConfig& c, std::string_view, std::string_view v) { ref(c) = std::string(v); }};
}

using Table = std::vector<std::pair<std::string, Field>>;

const Table& table() {
  static const Table t = [] {
    Table f;
    auto add = [&f](std::string key, Field field) { f.emplace_back(std::move(key), std::move(field)); };
    add("seed", num<std::uint64_t>([](RunConfig& c) -> auto& { return c.seed; }));
    add("variant", {[](const RunConfig& c) { return std::string(memory::to_string(c.model.variant)); },
                    [](RunConfig& c, std::string_view, std::string_view v) {
                      c.model.variant = memory::parse_variant(trim(v));
                    }});

    add("data.alphabet", text([](RunConfig& c) -> auto& { return c.data.alphabet; }));
    add("data.speakers", num<int>([](RunConfig& c) -> auto& { return c.data.speakers; }));
    add("data.entities_per_speaker", num<int>([](RunConfig& c) -> auto& { return c.data.entities_per_speaker; }));
    add("data.train_per_speaker", num<int>([](RunConfig& c) -> auto& { return c.data.train_per_speaker; }));
    add("data.dev_per_speaker", num<int>([](RunConfig& c) -> auto& { return c.data.dev_per_speaker; }));
    add("data.test_per_speaker", num<int>([](RunConfig& c) -> auto& { return c.data.test_per_speaker; }));
    add("data.pretrain_utterances", num<int>([](RunConfig& c) -> auto& { return c.data.pretrain_utterances; }));
    add("data.pretrain_dev_utterances",
        num<int>([](RunConfig& c) -> auto& { return c.data.pretrain_dev_utterances; }));
    add("data.bias_train_utterances", num<int>([](RunConfig& c) -> auto& { return c.data.bias_train_utterances; }));
    add("data.bias_rare_word_prob", num<double>([](RunConfig& c) -> auto& { return c.data.bias_rare_word_prob; }));
    add("data.bias_secondary_prob", num<double>([](RunConfig& c) -> auto& { return c.data.bias_secondary_prob; }));
    add("data.noise_sigma", num<double>([](RunConfig& c) -> auto& { return c.data.noise_sigma; }));
    add("data.holdout_fraction", num<double>([](RunConfig& c) -> auto& { return c.data.holdout_fraction; }));
    add("data.frame_dim", num<std::size_t>([](RunConfig& c) -> auto& { return c.data.acoustic.frame_dim; }));
    add("data.min_frames", num<int>([](RunConfig& c) -> auto& { return c.data.acoustic.min_frames; }));
    add("data.max_frames", num<int>([](RunConfig& c) -> auto& { return c.data.acoustic.max_frames; }));
    add("data.confusable_pairs", text([](RunConfig& c) -> auto& { return c.data.acoustic.confusable_pairs; }));
    add("data.pair_distinction", num<double>([](RunConfig& c) -> auto& { return c.data.acoustic.pair_distinction; }));

    add("text.common_words", num<int>([](RunConfig& c) -> auto& { return c.data.text.common_words; }));
    add("text.common_min_letters", num<int>([](RunConfig& c) -> auto& { return c.data.text.common_min_letters; }));
    add("text.common_max_letters", num<int>([](RunConfig& c) -> auto& { return c.data.text.common_max_letters; }));
    add("text.name_min_letters", num<int>([](RunConfig& c) -> auto& { return c.data.text.name_min_letters; }));
    add("text.name_max_letters", num<int>([](RunConfig& c) -> auto& { return c.data.text.name_max_letters; }));
    add("text.min_sentence_words", num<int>([](RunConfig& c) -> auto& { return c.data.text.min_sentence_words; }));
    add("text.max_sentence_words", num<int>([](RunConfig& c) -> auto& { return c.data.text.max_sentence_words; }));
    add("text.rare_word_prob", num<double>([](RunConfig& c) -> auto& { return c.data.text.rare_word_prob; }));
    add("text.train_secondary_prob",
        num<double>([](RunConfig& c) -> auto& { return c.data.text.train_secondary_prob; }));
    add("text.entity_secondary_prob",
        num<double>([](RunConfig& c) -> auto& { return c.data.text.entity_secondary_prob; }));
    add("text.entity_min_words", num<int>([](RunConfig& c) -> auto& { return c.data.text.entity_min_words; }));
    add("text.entity_max_words", num<int>([](RunConfig& c) -> auto& { return c.data.text.entity_max_words; }));

    add("model.enc_dim", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.asr.enc_dim; }));
    add("model.enc_layers", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.asr.enc_layers; }));
    add("model.enc_heads", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.asr.enc_heads; }));
    add("model.enc_ff", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.asr.enc_ff; }));
    add("model.splice", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.asr.splice; }));
    add("model.subsample", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.asr.subsample; }));
    add("model.pred_dim", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.asr.pred_dim; }));
    add("model.joint_dim", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.asr.joint_dim; }));
    add("model.ctx_dim", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.context.dim; }));
    add("model.ctx_layers", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.context.layers; }));
    add("model.ctx_heads", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.context.heads; }));
    add("model.ctx_ff", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.context.ff_dim; }));
    add("model.ctx_positions",
        {[](const RunConfig& c) {
           return std::string(c.model.context.positions == context::PositionalEncoding::kNone ? "none" : "sinusoidal");
         },
         [](RunConfig& c, std::string_view k, std::string_view v) {
           const std::string s = trim(v);
           if (s == "sinusoidal") {
             c.model.context.positions = context::PositionalEncoding::kSinusoidal;
           } else if (s == "none") {
             c.model.context.positions = context::PositionalEncoding::kNone;
           } else {
             bad_value(k, v, "sinusoidal or none");
           }
         }});
    add("model.mha_heads", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.mha.heads; }));
    add("model.mha_head_dim", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.mha.head_dim; }));
    add("model.clas_dim", num<std::size_t>([](RunConfig& c) -> auto& { return c.model.mha.clas_dim; }));
    add("model.temperature", num<double>([](RunConfig& c) -> auto& { return c.model.mha.temperature; }));

    add("pretrain.epochs", num<int>([](RunConfig& c) -> auto& { return c.pretrain.epochs; }));
    add("pretrain.batch", num<int>([](RunConfig& c) -> auto& { return c.pretrain.batch; }));
    add("pretrain.lr", num<double>([](RunConfig& c) -> auto& { return c.pretrain.learning_rate; }));
    add("pretrain.clip", num<double>([](RunConfig& c) -> auto& { return c.pretrain.clip_norm; }));
    add("pretrain.patience", num<int>([](RunConfig& c) -> auto& { return c.pretrain.patience; }));

    add("bias.epochs", num<int>([](RunConfig& c) -> auto& { return c.bias.train.epochs; }));
    add("bias.batch", num<int>([](RunConfig& c) -> auto& { return c.bias.train.batch; }));
    add("bias.lr", num<double>([](RunConfig& c) -> auto& { return c.bias.train.learning_rate; }));
    add("bias.clip", num<double>([](RunConfig& c) -> auto& { return c.bias.train.clip_norm; }));
    add("bias.patience", num<int>([](RunConfig& c) -> auto& { return c.bias.train.patience; }));
    add("bias.p", num<double>([](RunConfig& c) -> auto& { return c.bias.sample_prob; }));
    add("bias.k", num<std::size_t>([](RunConfig& c) -> auto& { return c.bias.distractors; }));
    add("bias.ngram_min", num<int>([](RunConfig& c) -> auto& { return c.bias.ngrams.min_words; }));
    add("bias.ngram_max", num<int>([](RunConfig& c) -> auto& { return c.bias.ngrams.max_words; }));
    add("bias.marker",
        {[](const RunConfig& c) {
           return std::string(c.bias.marker == corpus::MarkerPlacement::kBefore ? "before" : "after");
         },
         [](RunConfig& c, std::string_view k, std::string_view v) {
           const std::string s = trim(v);
           if (s == "after") {
             c.bias.marker = corpus::MarkerPlacement::kAfter;
           } else if (s == "before") {
             c.bias.marker = corpus::MarkerPlacement::kBefore;
           } else {
             bad_value(k, v, "after or before");
           }
         }});
    add("bias.pool_size", num<std::size_t>([](RunConfig& c) -> auto& { return c.bias.pool_size; }));
    add("bias.freeze_encoder", flag([](RunConfig& c) -> auto& { return c.bias.freeze_encoder; }));
    add("bias.freeze_prediction", flag([](RunConfig& c) -> auto& { return c.bias.freeze_prediction; }));

    add("eval.beam", num<std::size_t>([](RunConfig& c) -> auto& { return c.eval.decode.beam; }));
    add("eval.max_symbols", num<int>([](RunConfig& c) -> auto& { return c.eval.decode.max_symbols_per_frame; }));
    add("eval.match", {[](const RunConfig& c) {
                         return std::string(c.eval.match == eval::MatchRule::kWholeWord ? "word" : "substring");
                       },
                       [](RunConfig& c, std::string_view k, std::string_view v) {
                         const std::string s = trim(v);
                         if (s == "substring") {
                           c.eval.match = eval::MatchRule::kSubstring;
                         } else if (s == "word") {
                           c.eval.match = eval::MatchRule::kWholeWord;
                         } else {
                           bad_value(k, v, "substring or word");
                         }
                       }});
    add("eval.context", {[](const RunConfig& c) { return c.context; },
                         [](RunConfig& c, std::string_view, std::string_view v) {
                           c.context = eval::ContextPolicy::parse(trim(v)).name();
                         }});
    add("eval.lambda", {[](const RunConfig& c) { return c.eval.lambda ? format_double(*c.eval.lambda) : "none"; },
                        [](RunConfig& c, std::string_view k, std::string_view v) {
                          if (trim(v) == "none") {
                            c.eval.lambda.reset();
                          } else {
                            c.eval.lambda = parse_number<double>(k, v);
                          }
                        }});
    add("eval.lambda_grid", {[](const RunConfig& c) { return format_list(c.lambda_grid); },
                             [](RunConfig& c, std::string_view k, std::string_view v) {
                               c.lambda_grid = parse_list<double>(k, v);
                             }});
    add("eval.context_grid", {[](const RunConfig& c) { return format_list(c.context_grid); },
                              [](RunConfig& c, std::string_view k, std::string_view v) {
                                c.context_grid = parse_list<std::size_t>(k, v);
                              }});

    add("personalize.rounds", num<int>([](RunConfig& c) -> auto& { return c.personalize.rounds; }));
    add("personalize.epochs", num<int>([](RunConfig& c) -> auto& { return c.personalize.epochs; }));
    add("personalize.batch", num<int>([](RunConfig& c) -> auto& { return c.personalize.batch; }));
    add("personalize.lr", num<double>([](RunConfig& c) -> auto& { return c.personalize.learning_rate; }));
    add("personalize.clip", num<double>([](RunConfig& c) -> auto& { return c.personalize.clip_norm; }));
    add("personalize.divergence", num<double>([](RunConfig& c) -> auto& { return c.personalize.divergence_factor; }));
    add("personalize.lambda", num<double>([](RunConfig& c) -> auto& { return c.personalize_lambda; }));
    return f;
  }();
  return t;
}

const Field& field(std::string_view key) {
  for (const auto& [k, f] : table()) {
    if (k == key) return f;
  }
  throw std::invalid_argument("config: unknown key '" + std::string(key) + "'");
}

// Splits one line into key and value, handling quotes and trailing comments.
bool split_line(std::string_view line, std::size_t lineno, std::string& key, std::string& value) {
  const auto eq = line.find('=');
  const std::string head = trim(line.substr(0, std::min(eq, line.find('#'))));
  if (eq == std::string_view::npos || line.find('#') < eq) {
    if (head.empty()) return false;
    throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
  }
  key = head;
  if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
  std::string_view rest = line.substr(eq + 1);
  const auto b = rest.find_first_not_of(" \t");
  value.clear();
  if (b != std::string_view::npos && rest[b] == '"') {
    std::size_t i = b + 1;
    bool closed = false;
    for (; i < rest.size(); ++i) {
      if (rest[i] == '\\' && i + 1 < rest.size()) {
        value += rest[++i];
      } else if (rest[i] == '"') {
        closed = true;
        ++i;
        break;
      } else {
        value += rest[i];
      }
    }
    if (!closed) throw std::invalid_argument("config line " + std::to_string(lineno) + ": unterminated quote");
    const std::string tail = trim(rest.substr(i));
    if (!tail.empty() && tail[0] != '#') {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": text after closing quote");
    }
  } else {
    value = trim(rest.substr(0, rest.find('#')));
  }
  return true;
}

std::string quote(const std::string& v) {
  const bool plain = !v.empty() && v.find_first_of(" \t\"#\\") == std::string::npos;
  if (plain) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + '"';
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

bool in_stage(const std::string& key, Stage stage) {
  const bool data = key == "seed" || key.starts_with("data.") || key.starts_with("text.");
  const bool base = data || key.starts_with("model.") || key.starts_with("pretrain.");
  const bool bias = base || key == "variant" || key.starts_with("bias.");
  switch (stage) {
    case Stage::kData: return data;
    case Stage::kBase: return base;
    case Stage::kBias: return bias;
    case Stage::kRun: return true;
  }
  return true;
}

}  // namespace

RunConfig::RunConfig() { model.variant = model::BiasVariant::kNam; }

void set(RunConfig& cfg, std::string_view key, std::string_view value) { field(key).set(cfg, key, value); }

std::string get(const RunConfig& cfg, std::string_view key) { return field(key).get(cfg); }

const std::vector<std::string>& keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, _] : table()) out.push_back(name);
    return out;
  }();
  return k;
}

RunConfig parse(std::string_view text) {
  RunConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find('\n', start), text.size());
    ++lineno;
    std::string key;
    std::string value;
    if (split_line(text.substr(start, end - start), lineno, key, value)) {
      if (auto it = seen.find(key); it != seen.end()) {
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": '" + key +
                                    "' already set on line " + std::to_string(it->second));
      }
      seen.emplace(key, lineno);
      try {
        set(cfg, key, value);
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    start = end + 1;
  }
  if (!seen.contains("data.alphabet")) {
    throw std::invalid_argument("config: required field 'data.alphabet' is missing");
  }
  return cfg;
}

RunConfig load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string serialize(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : table()) out += k + " = " + quote(f.get(cfg)) + '\n';
  return out;
}

std::uint64_t stage_seed(const RunConfig& cfg, std::uint64_t stage) { return training::mix_seed(cfg.seed, 9000 + stage); }

void resolve(RunConfig& cfg) {
  cfg.data.seed = cfg.seed;
  cfg.data.acoustic.seed = stage_seed(cfg, 1);
  cfg.pretrain.seed = stage_seed(cfg, 2);
  cfg.bias.train.seed = stage_seed(cfg, 3);
  cfg.eval.seed = stage_seed(cfg, 4);
  cfg.personalize.seed = stage_seed(cfg, 5);
  cfg.model.asr.frame_dim = cfg.data.acoustic.frame_dim;
  const corpus::Vocab vocab(cfg.data.alphabet);
  cfg.model.finalize(vocab.size());
  (void)eval::ContextPolicy::parse(cfg.context);
  if (cfg.bias.sample_prob < 0.0 || cfg.bias.sample_prob > 1.0) {
    throw std::invalid_argument("config: bias.p must lie in [0, 1]");
  }
  if (cfg.data.speakers < 1) throw std::invalid_argument("config: data.speakers must be positive");
}

std::string fingerprint(const RunConfig& cfg, Stage stage) {
  std::string text;
  for (const auto& [k, f] : table()) {
    if (in_stage(k, stage)) text += k + '=' + f.get(cfg) + '\n';
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(text);
  return os.str();
}

}  // namespace nam::config
