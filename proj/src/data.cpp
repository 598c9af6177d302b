#include "punc/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "punc/error.hpp"

namespace punc {

std::string_view task_name(Task t) { return t == Task::kPun ? "PUN" : "POS"; }

const std::array<std::string_view, kNumPosTags> kPosTags = {
    "CC",  "CD",  "DT",  "EX",   "FW",  "IN",  "JJ",  "JJR", "JJS", "LS",  "MD",  "NN",
    "NNS", "NNP", "NNPS", "PDT", "POS", "PRP", "PRP$", "RB", "RBR", "RBS", "RP",  "SYM",
    "TO",  "UH",  "VB",  "VBD",  "VBG", "VBN", "VBP", "VBZ", "WDT", "WP",  "WP$", "WRB"};

std::optional<int> pos_tag_id(std::string_view tag) {
  for (std::size_t i = 0; i < kPosTags.size(); ++i) {
    if (kPosTags[i] == tag) return static_cast<int>(i);
  }
  return std::nullopt;
}

namespace {

// Latin-1 supplement (U+00C0..U+00FF) folded to ASCII; '\0' drops the char.
constexpr char kLatin1Fold[] =
    "aaaaaaaceeeeiiii"    // C0-CF
    "dnooooo\0ouuuuyts"  // D0-DF (D7 multiplication sign dropped)
    "aaaaaaaceeeeiiii"    // E0-EF
    "dnooooo\0ouuuuyty";  // F0-FF (F7 division sign dropped)
static_assert(sizeof(kLatin1Fold) == 65);

enum class CharClass { kWord, kSpace, kMark, kStrip };

bool is_alnum_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

CharClass classify(unsigned char c) {
  if (is_alnum_byte(c)) return CharClass::kWord;
  if (std::isspace(c)) return CharClass::kSpace;
  switch (c) {
    case ',': case ':': case '-': case '.': case '!': case ';': case '?':
      return CharClass::kMark;
    default:
      return CharClass::kStrip;
  }
}

Punct mark_class(char c) {
  switch (c) {
    case ',': case ':': case '-': return kComma;
    case '.': case '!': case ';': return kPeriod;
    case '?': return kQuestion;
    default: return kO;
  }
}

}  // namespace

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c < 0x80) {
      out.push_back(static_cast<char>(std::tolower(c)));
      continue;
    }
    // Two-byte Latin-1 letters: C3 80..C3 BF -> U+00C0..U+00FF.
    if (c == 0xC3 && i + 1 < text.size()) {
      const auto d = static_cast<unsigned char>(text[i + 1]);
      if (d >= 0x80 && d <= 0xBF) {
        const char folded = kLatin1Fold[d - 0x80];
        if (folded != '\0') out.push_back(folded);
        ++i;
        continue;
      }
    }
    // General punctuation block E2 80 xx.
    if (c == 0xE2 && i + 2 < text.size() && static_cast<unsigned char>(text[i + 1]) == 0x80) {
      const auto d = static_cast<unsigned char>(text[i + 2]);
      char mapped = 0;
      if (d == 0x93 || d == 0x94) mapped = '-';          // en/em dash
      else if (d == 0x98 || d == 0x99) mapped = '\'';    // single quotes
      else if (d == 0x9C || d == 0x9D) mapped = '"';     // double quotes
      else if (d == 0xA6) mapped = '.';                  // ellipsis
      if (mapped) {
        out.push_back(mapped);
        i += 2;
        continue;
      }
    }
    out.push_back(static_cast<char>(c));
  }
  return out;
}

LabeledSequence tokenize_and_label(std::string_view punctuated_text) {
  const std::string text = normalize_text(punctuated_text);
  LabeledSequence seq;
  seq.task = Task::kPun;
  std::string word;
  bool label_locked = true;  // no word yet: leading marks are dropped
  auto flush = [&] {
    if (word.empty()) return;
    seq.words.push_back(std::move(word));
    seq.labels.push_back(kO);
    word.clear();
    label_locked = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    CharClass cls = classify(c);
    const bool inner = i > 0 && i + 1 < text.size() &&
                       is_alnum_byte(static_cast<unsigned char>(text[i - 1])) &&
                       is_alnum_byte(static_cast<unsigned char>(text[i + 1]));
    if (inner && (c == ',' || c == '.' || c == ':' || c == '-' || c == '\'')) {
      cls = CharClass::kWord;
    }
    switch (cls) {
      case CharClass::kWord:
        word.push_back(static_cast<char>(c));
        break;
      case CharClass::kSpace:
        flush();
        break;
      case CharClass::kMark:
        flush();
        if (!label_locked) {
          seq.labels.back() = mark_class(static_cast<char>(c));
          label_locked = true;
        }
        break;
      case CharClass::kStrip:
        flush();
        break;
    }
  }
  flush();
  if (seq.words.empty()) throw DataError("text contains no words");
  return seq;
}

std::string detokenize(const LabeledSequence& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.words.size(); ++i) {
    if (i) out.push_back(' ');
    out += seq.words[i];
    switch (seq.labels[i]) {
      case kComma: out.push_back(','); break;
      case kPeriod: out.push_back('.'); break;
      case kQuestion: out.push_back('?'); break;
      default: break;
    }
  }
  return out;
}

std::vector<std::string> strip_punctuation(std::string_view text) {
  return tokenize_and_label(text).words;
}

std::vector<LabeledSequence> read_pun_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open punctuation corpus " + path);
  std::vector<LabeledSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    try {
      out.push_back(tokenize_and_label(line));
    } catch (const DataError&) {
      // A line of marks only carries no words; nothing to label.
      continue;
    }
  }
  return out;
}

void write_pun_corpus(const std::string& path, std::span<const LabeledSequence> seqs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& s : seqs) out << detokenize(s) << '\n';
}

std::vector<LabeledSequence> parse_pos_corpus(std::string_view text) {
  static const std::array<std::string_view, 10> kPunctTags = {
      ",", ".", ":", "``", "''", "-LRB-", "-RRB-", "#", "$", "-NONE-"};
  std::vector<LabeledSequence> out;
  LabeledSequence cur;
  cur.task = Task::kPos;
  auto finish = [&] {
    if (!cur.words.empty()) out.push_back(std::move(cur));
    cur = LabeledSequence{};
    cur.task = Task::kPos;
  };
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::istringstream fields{std::string(line)};
    std::vector<std::string> cols;
    for (std::string f; fields >> f;) cols.push_back(f);
    if (cols.empty()) {
      finish();
      if (end == text.size()) break;
      continue;
    }
    if (cols.size() != 2) {
      throw DataError("POS corpus line " + std::to_string(lineno) + ": expected 2 columns, got " +
                      std::to_string(cols.size()));
    }
    if (std::find(kPunctTags.begin(), kPunctTags.end(), cols[1]) != kPunctTags.end()) {
      if (end == text.size()) break;
      continue;
    }
    const auto tag = pos_tag_id(cols[1]);
    if (!tag) {
      throw DataError("POS corpus line " + std::to_string(lineno) + ": unknown POS tag '" +
                      cols[1] + "'");
    }
    cur.words.push_back(normalize_text(cols[0]));
    cur.labels.push_back(*tag);
    if (end == text.size()) break;
  }
  finish();
  return out;
}

std::vector<LabeledSequence> read_pos_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open POS corpus " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pos_corpus(ss.str());
}

void write_pos_corpus(const std::string& path, std::span<const LabeledSequence> seqs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& s : seqs) {
    for (std::size_t i = 0; i < s.words.size(); ++i) {
      out << s.words[i] << '\t' << kPosTags[static_cast<std::size_t>(s.labels[i])] << '\n';
    }
    out << '\n';
  }
}

Vocab::Vocab() {
  itos_ = {"<pad>", "<unk>", "<mask>"};
  for (std::size_t i = 0; i < itos_.size(); ++i) stoi_.emplace(itos_[i], i);
}

Vocab::Vocab(std::span<const std::string> tokens) : Vocab() {
  for (const auto& t : tokens) {
    if (stoi_.count(t)) throw DataError("duplicate vocabulary token '" + t + "'");
    stoi_.emplace(t, itos_.size());
    itos_.push_back(t);
  }
}

std::size_t Vocab::id(std::string_view token) const {
  auto it = stoi_.find(std::string(token));
  return it == stoi_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return stoi_.count(std::string(token)) > 0;
}

std::vector<std::size_t> Vocab::encode(std::span<const std::string> words) const {
  std::vector<std::size_t> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocab::regular_tokens() const {
  return {itos_.begin() + kNumSpecial, itos_.end()};
}

std::string Vocab::serialize() const {
  std::string out;
  for (std::size_t i = kNumSpecial; i < itos_.size(); ++i) {
    out += itos_[i];
    out.push_back('\n');
  }
  return out;
}

Vocab Vocab::deserialize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string tok(text.substr(pos, end - pos));
    if (!tok.empty() && tok.back() == '\r') tok.pop_back();
    if (!tok.empty()) tokens.push_back(std::move(tok));
    pos = end + 1;
  }
  return Vocab(tokens);
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary " + path);
  out << serialize();
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

Vocab build_vocab(std::span<const std::vector<std::string>> corpora, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& corpus : corpora) {
    for (const auto& w : corpus) ++counts[w];
  }
  const Vocab specials;
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, n] : counts) {
    if (n >= min_count && !specials.contains(w)) kept.emplace_back(w, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [w, n] : kept) tokens.push_back(w);
  return Vocab(tokens);
}

std::vector<LabeledSequence> split_long(std::span<const LabeledSequence> seqs,
                                        std::size_t max_len) {
  if (max_len == 0) throw ContractError("split_long: max_len must be positive");
  std::vector<LabeledSequence> out;
  for (const auto& s : seqs) {
    if (s.words.size() <= max_len) {
      out.push_back(s);
      continue;
    }
    for (std::size_t b = 0; b < s.words.size(); b += max_len) {
      const std::size_t e = std::min(s.words.size(), b + max_len);
      LabeledSequence chunk;
      chunk.task = s.task;
      chunk.words.assign(s.words.begin() + b, s.words.begin() + e);
      chunk.labels.assign(s.labels.begin() + b, s.labels.begin() + e);
      out.push_back(std::move(chunk));
    }
  }
  return out;
}

std::vector<Batch> make_batches(std::span<const LabeledSequence> seqs, const Vocab& vocab,
                                std::size_t batch_size, std::size_t max_len,
                                std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size == 0) throw ContractError("make_batches: batch_size must be >= 1");
  const std::vector<LabeledSequence> chunks = split_long(seqs, max_len);
  std::vector<std::size_t> order(chunks.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch b;
    b.batch_size = end - start;
    for (std::size_t i = start; i < end; ++i) {
      b.max_len = std::max(b.max_len, chunks[order[i]].words.size());
    }
    b.ids.assign(b.batch_size * b.max_len, Vocab::kPad);
    b.mask.assign(b.batch_size * b.max_len, false);
    b.labels.assign(b.batch_size * b.max_len, kPadLabel);
    for (std::size_t i = start; i < end; ++i) {
      const LabeledSequence& s = chunks[order[i]];
      const std::size_t row = i - start;
      b.task = s.task;
      b.lengths.push_back(s.words.size());
      for (std::size_t t = 0; t < s.words.size(); ++t) {
        b.ids[row * b.max_len + t] = vocab.id(s.words[t]);
        b.mask[row * b.max_len + t] = true;
        b.labels[row * b.max_len + t] = s.labels[t];
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace punc
