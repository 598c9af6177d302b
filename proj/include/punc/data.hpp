#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace punc {

enum class Task { kPun = 0, kPos = 1 };
std::string_view task_name(Task t);

// Punctuation classes. O means no mark follows the word.
enum Punct : int { kO = 0, kComma = 1, kPeriod = 2, kQuestion = 3 };
inline constexpr std::size_t kNumPunctLabels = 4;
inline constexpr std::array<std::string_view, kNumPunctLabels> kPunctNames = {
    "O", "COMMA", "PERIOD", "QUESTION"};

// The closed Penn Treebank tagset without punctuation tags.
inline constexpr std::size_t kNumPosTags = 36;
extern const std::array<std::string_view, kNumPosTags> kPosTags;
std::optional<int> pos_tag_id(std::string_view tag);

// Sentinel for padded label cells; never scored.
inline constexpr int kPadLabel = -1;

struct LabeledSequence {
  std::vector<std::string> words;
  std::vector<int> labels;
  Task task = Task::kPun;

  bool operator==(const LabeledSequence&) const = default;
};

// Lowercases, folds Latin-1 accents to ASCII and maps en/em dashes to '-'.
std::string normalize_text(std::string_view text);

// Splits punctuated text into words, attaching to each word the class of the
// first mark that follows it: {, : -} -> COMMA, {. ! ;} -> PERIOD, ? -> QUESTION.
// Quotes, brackets and marks before the first word are dropped. Marks between
// two alphanumeric characters ("3.5", "don't", "well-known") stay in the word.
LabeledSequence tokenize_and_label(std::string_view punctuated_text);

// Words joined by spaces with ",", "." or "?" appended to labeled words.
std::string detokenize(const LabeledSequence& seq);

// Removes every mark; returns the bare word stream.
std::vector<std::string> strip_punctuation(std::string_view text);

// One sentence per line; blank lines skipped.
std::vector<LabeledSequence> read_pun_corpus(const std::string& path);
void write_pun_corpus(const std::string& path, std::span<const LabeledSequence> seqs);

// Two whitespace-separated columns (word, tag); blank line between sentences.
// Lines tagged with treebank punctuation tags are skipped.
std::vector<LabeledSequence> read_pos_corpus(const std::string& path);
std::vector<LabeledSequence> parse_pos_corpus(std::string_view text);
void write_pos_corpus(const std::string& path, std::span<const LabeledSequence> seqs);

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kMask = 2;
  static constexpr std::size_t kNumSpecial = 3;

  Vocab();
  // Specials followed by `tokens` in order.
  explicit Vocab(std::span<const std::string> tokens);

  std::size_t size() const { return itos_.size(); }
  std::size_t id(std::string_view token) const;  // UNK when absent
  const std::string& token(std::size_t id) const { return itos_.at(id); }
  bool contains(std::string_view token) const;
  std::vector<std::size_t> encode(std::span<const std::string> words) const;

  // One token per line, specials omitted: line i holds id i + 3.
  std::string serialize() const;
  static Vocab deserialize(std::string_view text);
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  std::vector<std::string> regular_tokens() const;

 private:
  std::vector<std::string> itos_;
  std::unordered_map<std::string, std::size_t> stoi_;
};

// Tokens with frequency >= min_count, ordered by frequency (desc) then bytes.
Vocab build_vocab(std::span<const std::vector<std::string>> corpora, std::size_t min_count);

struct Batch {
  std::size_t batch_size = 0;
  std::size_t max_len = 0;
  std::vector<std::size_t> ids;   // [B x max_len], PAD past each length
  std::vector<bool> mask;         // [B x max_len]
  std::vector<int> labels;        // [B x max_len], kPadLabel past each length
  std::vector<std::size_t> lengths;
  Task task = Task::kPun;

  std::span<const std::size_t> row_ids(std::size_t b) const {
    return std::span(ids).subspan(b * max_len, lengths[b]);
  }
  std::span<const int> row_labels(std::size_t b) const {
    return std::span(labels).subspan(b * max_len, lengths[b]);
  }
};

// Splits sequences longer than max_len into consecutive chunks (no overlap).
std::vector<LabeledSequence> split_long(std::span<const LabeledSequence> seqs,
                                        std::size_t max_len);

// Chunks, optionally shuffles with the seed, and packs into padded batches.
std::vector<Batch> make_batches(std::span<const LabeledSequence> seqs, const Vocab& vocab,
                                std::size_t batch_size, std::size_t max_len,
                                std::optional<std::uint64_t> shuffle_seed);

// ---------------------------------------------------------------------------
// Synthetic paired corpus.

enum class SentenceKind {
  kDeclarative,
  kWhQuestion,
  kYesNoQuestion,
  kCompound,
  kExclamation,
};

struct SynthOptions {
  std::size_t pun_train = 2000;
  std::size_t pun_dev = 500;
  std::size_t pos_train = 2000;
  std::size_t unlabeled = 6000;
  // Share of each open word class that never occurs in pun_train.
  double held_out_fraction = 0.4;
  // Open-class sizes.
  std::size_t nouns = 120;
  std::size_t names = 60;
  std::size_t verbs = 90;
  std::size_t adjectives = 60;
  std::size_t intro_adverbs = 60;
  std::size_t interjections = 30;
  // Sentence-type mixture for the punctuation corpus (normalised).
  double p_declarative = 0.40;
  double p_wh_question = 0.15;
  double p_yes_no_question = 0.10;
  double p_compound = 0.25;
  double p_exclamation = 0.10;
  // Probability that a sentence opens with a comma-marked introducer.
  double p_intro = 0.35;
  // Probability that an object noun phrase is a coordination or a list.
  double p_coordination = 0.15;
  double p_list = 0.10;
  // Sentence-type mixture for the POS corpus.
  double pos_p_declarative = 0.40;
  double pos_p_wh_question = 0.15;
  double pos_p_yes_no_question = 0.10;
  double pos_p_compound = 0.25;
  double pos_p_exclamation = 0.10;
};

struct SentenceTruth {
  SentenceKind kind;
  bool has_intro;
  std::size_t commas;
  Punct final_mark;
};

struct SynthCorpus {
  std::vector<LabeledSequence> pun_train, pun_dev;
  std::vector<LabeledSequence> pos_train;
  std::vector<std::vector<std::string>> unlabeled;
  std::vector<SentenceTruth> pun_train_truth, pun_dev_truth;
  std::vector<std::string> held_out_words;
  SynthOptions options;
};

SynthCorpus synth_corpus(std::uint64_t seed, const SynthOptions& options = {});
inline SynthCorpus synth_corpus(std::uint64_t seed, std::size_t size) {
  SynthOptions o;
  o.pun_train = size;
  return synth_corpus(seed, o);
}

// Expected per-sentence probability of each mark class implied by options.
struct MarkRates {
  double intro;     // sentences whose first word carries COMMA
  double question;  // sentences ending in QUESTION
  double period;    // sentences ending in PERIOD
};
MarkRates expected_mark_rates(const SynthOptions& options);

}  // namespace punc
