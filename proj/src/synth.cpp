#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "punc/data.hpp"
#include "punc/error.hpp"

namespace punc {

namespace {

struct Tok {
  std::string word;
  std::string_view tag;
  Punct mark = kO;
};
using Sent = std::vector<Tok>;

const std::vector<std::string> kSeedNouns = {
    "library", "book",  "dog",    "cat",    "teacher", "morning", "city",   "river",
    "house",   "garden", "car",   "letter", "window",  "doctor",  "market", "school",
    "road",    "friend", "bridge", "story", "song",    "table",   "village", "station"};
const std::vector<std::string> kSeedNames = {"susan", "john",  "mary",  "peter", "anna",
                                             "david", "laura", "james", "emma",  "tom"};
const std::vector<std::string> kSeedVerbs = {"like", "want",  "visit", "open",  "help",
                                             "need", "call",  "paint", "clean", "cook",
                                             "love", "play",  "follow", "answer", "order"};
const std::vector<std::string> kSeedAdjectives = {"national", "beautiful", "old",   "new",
                                                  "small",    "big",       "quiet", "happy",
                                                  "green",    "strange",   "long",  "bright"};
const std::vector<std::string> kSeedIntroAdverbs = {
    "yesterday", "today",  "meanwhile", "however",  "honestly", "sadly",
    "luckily",   "finally", "besides",  "instead", "nowadays", "frankly"};
const std::vector<std::string> kSeedInterjections = {"oh", "well", "wow", "hey",
                                                     "ah", "alas", "hmm", "ouch"};

const std::vector<std::string> kDeterminers = {"the", "a", "this", "that", "every", "some"};
const std::vector<std::string> kPrepositions = {"in", "on", "at", "near", "with", "from", "under",
                                                "behind"};
const std::vector<std::string> kConjunctions = {"and", "but", "or", "yet"};
const std::vector<std::string> kModals = {"can", "will", "should", "could", "would", "must"};
const std::vector<std::string> kWhAdverbs = {"where", "when", "why", "how"};
const std::vector<std::string> kWhPronouns = {"who", "what"};
const std::vector<std::string> kEmbeddingVerbs = {"knows", "asks", "wonders", "forgets"};

struct Pronoun {
  std::string_view word;
  bool third_singular;
};
const std::vector<Pronoun> kSubjectPronouns = {{"i", false},   {"you", false}, {"he", true},
                                               {"she", true},  {"we", false},  {"they", false},
                                               {"it", true}};
const std::vector<std::string> kObjectPronouns = {"him", "her", "them", "us", "me"};

// An open word class split into words usable everywhere and words withheld
// from the punctuation training split.
struct WordClass {
  std::vector<std::string> seen;
  std::vector<std::string> held_out;
};

struct Lexicon {
  WordClass nouns, names, verbs, adjectives, intro_adverbs, interjections;
};

std::string pseudo_word(std::mt19937_64& rng) {
  static constexpr std::string_view kOnsets[] = {"b", "d",  "f",  "g",  "k",  "l",  "m",
                                                 "n", "p",  "r",  "s",  "t",  "v",  "z",
                                                 "br", "dr", "gl", "pl", "st", "tr", "sk"};
  static constexpr std::string_view kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  static constexpr std::string_view kCodas[] = {"", "", "n", "r", "l", "m", "k", "t"};
  std::uniform_int_distribution<int> syllables(2, 3);
  std::string w;
  const int n = syllables(rng);
  for (int i = 0; i < n; ++i) {
    w += kOnsets[rng() % std::size(kOnsets)];
    w += kVowels[rng() % std::size(kVowels)];
    if (i + 1 == n) w += kCodas[rng() % std::size(kCodas)];
  }
  return w;
}

std::string third_singular(const std::string& stem) {
  const char last = stem.back();
  if (last == 's' || last == 'z' || last == 'x') return stem + "es";
  return stem + "s";
}

std::string past_tense(const std::string& stem) {
  return stem.back() == 'e' ? stem + "d" : stem + "ed";
}

std::set<std::string> closed_class_words() {
  std::set<std::string> s;
  for (const auto* list : {&kDeterminers, &kPrepositions, &kConjunctions, &kModals,
                           &kWhAdverbs, &kWhPronouns, &kEmbeddingVerbs, &kObjectPronouns}) {
    s.insert(list->begin(), list->end());
  }
  for (const auto& p : kSubjectPronouns) s.emplace(p.word);
  for (const char* w : {"is", "does", "did", "what", "a"}) s.insert(w);
  return s;
}

WordClass make_class(const std::vector<std::string>& seeds, std::size_t size, bool verb,
                     double held_out_fraction, std::set<std::string>& taken,
                     std::mt19937_64& rng) {
  std::vector<std::string> words;
  auto try_add = [&](const std::string& w) {
    std::vector<std::string> forms = {w};
    if (verb) {
      forms.push_back(third_singular(w));
      forms.push_back(past_tense(w));
    }
    for (const auto& f : forms) {
      if (taken.count(f)) return;
    }
    taken.insert(forms.begin(), forms.end());
    words.push_back(w);
  };
  for (const auto& s : seeds) {
    if (words.size() >= size) break;
    try_add(s);
  }
  while (words.size() < size) try_add(pseudo_word(rng));
  std::shuffle(words.begin(), words.end(), rng);
  const auto n_held = static_cast<std::size_t>(held_out_fraction * static_cast<double>(size));
  WordClass c;
  c.held_out.assign(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(n_held));
  c.seen.assign(words.begin() + static_cast<std::ptrdiff_t>(n_held), words.end());
  if (c.seen.empty()) throw ContractError("synth_corpus: held_out_fraction leaves a class empty");
  return c;
}

Lexicon make_lexicon(const SynthOptions& o, std::mt19937_64& rng) {
  std::set<std::string> taken = closed_class_words();
  Lexicon lx;
  const double h = o.held_out_fraction;
  lx.nouns = make_class(kSeedNouns, o.nouns, false, h, taken, rng);
  lx.names = make_class(kSeedNames, o.names, false, h, taken, rng);
  lx.verbs = make_class(kSeedVerbs, o.verbs, true, h, taken, rng);
  lx.adjectives = make_class(kSeedAdjectives, o.adjectives, false, h, taken, rng);
  lx.intro_adverbs = make_class(kSeedIntroAdverbs, o.intro_adverbs, false, h, taken, rng);
  lx.interjections = make_class(kSeedInterjections, o.interjections, false, h, taken, rng);
  return lx;
}

struct Mixture {
  double decl, wh, yn, compound, excl;
};

class Generator {
 public:
  Generator(const Lexicon& lx, const SynthOptions& o, std::mt19937_64& rng)
      : lx_(lx), o_(o), rng_(rng) {}

  bool allow_held_out = false;

  std::pair<Sent, SentenceTruth> sentence(const Mixture& m) {
    Sent s;
    SentenceTruth truth{};
    truth.kind = pick_kind(m);
    truth.has_intro = coin(o_.p_intro);
    if (truth.has_intro) intro(s, truth.kind);
    switch (truth.kind) {
      case SentenceKind::kDeclarative: declarative(s); break;
      case SentenceKind::kWhQuestion: wh_question(s); break;
      case SentenceKind::kYesNoQuestion: yes_no_question(s); break;
      case SentenceKind::kCompound:
        clause(s);
        s.back().mark = kComma;
        s.push_back({pick(kConjunctions), "CC"});
        clause(s);
        break;
      case SentenceKind::kExclamation: exclamation(s); break;
    }
    const bool question =
        truth.kind == SentenceKind::kWhQuestion || truth.kind == SentenceKind::kYesNoQuestion;
    s.back().mark = question ? kQuestion : kPeriod;
    truth.final_mark = s.back().mark;
    truth.commas = static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](const Tok& t) { return t.mark == kComma; }));
    return {std::move(s), truth};
  }

 private:
  bool coin(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }

  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng_)];
  }

  const std::string& open(const WordClass& c) {
    if (!allow_held_out) return pick(c.seen);
    const std::size_t n = c.seen.size() + c.held_out.size();
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_);
    return i < c.seen.size() ? c.seen[i] : c.held_out[i - c.seen.size()];
  }

  SentenceKind pick_kind(const Mixture& m) {
    std::discrete_distribution<int> d({m.decl, m.wh, m.yn, m.compound, m.excl});
    return static_cast<SentenceKind>(d(rng_));
  }

  void intro(Sent& s, SentenceKind kind) {
    if (kind == SentenceKind::kExclamation) {
      s.push_back({open(lx_.interjections), "UH", kComma});
      return;
    }
    std::discrete_distribution<int> d({0.35, 0.40, 0.25});
    switch (d(rng_)) {
      case 0: s.push_back({open(lx_.interjections), "UH", kComma}); break;
      case 1: s.push_back({open(lx_.intro_adverbs), "RB", kComma}); break;
      default: s.push_back({open(lx_.names), "NNP", kComma}); break;
    }
  }

  void noun_phrase(Sent& s) {
    s.push_back({pick(kDeterminers), "DT"});
    if (coin(0.3)) s.push_back({open(lx_.adjectives), "JJ"});
    s.push_back({open(lx_.nouns), "NN"});
  }

  // Returns whether the subject is third person singular.
  bool subject(Sent& s) {
    std::discrete_distribution<int> d({0.45, 0.25, 0.30});
    switch (d(rng_)) {
      case 0: noun_phrase(s); return true;
      case 1: s.push_back({open(lx_.names), "NNP"}); return true;
      default: {
        const Pronoun& p = pick(kSubjectPronouns);
        s.push_back({std::string(p.word), "PRP"});
        return p.third_singular;
      }
    }
  }

  void simple_object(Sent& s) {
    std::discrete_distribution<int> d({0.5, 0.25, 0.25});
    switch (d(rng_)) {
      case 0: noun_phrase(s); break;
      case 1: s.push_back({open(lx_.names), "NNP"}); break;
      default: s.push_back({pick(kObjectPronouns), "PRP"}); break;
    }
  }

  void object(Sent& s) {
    const double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    if (r < o_.p_list) {
      s.push_back({pick(kDeterminers), "DT"});
      s.push_back({open(lx_.nouns), "NN", kComma});
      s.push_back({open(lx_.nouns), "NN"});
      s.push_back({"and", "CC"});
      s.push_back({open(lx_.nouns), "NN"});
    } else if (r < o_.p_list + o_.p_coordination) {
      simple_object(s);
      s.push_back({"and", "CC"});
      simple_object(s);
    } else {
      simple_object(s);
    }
  }

  void prepositional(Sent& s) {
    s.push_back({pick(kPrepositions), "IN"});
    noun_phrase(s);
  }

  void predicate(Sent& s, bool third_sg) {
    const std::string& stem = open(lx_.verbs);
    std::discrete_distribution<int> d({0.4, 0.35, 0.25});
    switch (d(rng_)) {
      case 0:
        if (third_sg) s.push_back({third_singular(stem), "VBZ"});
        else s.push_back({stem, "VBP"});
        break;
      case 1: s.push_back({past_tense(stem), "VBD"}); break;
      default:
        s.push_back({pick(kModals), "MD"});
        s.push_back({stem, "VB"});
        break;
    }
    object(s);
    if (coin(0.3)) prepositional(s);
  }

  void clause(Sent& s) { predicate(s, subject(s)); }

  void declarative(Sent& s) {
    const double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    if (r < 0.2) {
      // Imperative.
      s.push_back({open(lx_.verbs), "VB"});
      object(s);
      if (coin(0.3)) prepositional(s);
    } else if (r < 0.35) {
      // Embedded question, still a statement.
      const bool third_sg = subject(s);
      if (third_sg) s.push_back({pick(kEmbeddingVerbs), "VBZ"});
      else s.push_back({"asked", "VBD"});
      s.push_back({pick(kWhAdverbs), "WRB"});
      clause(s);
    } else {
      clause(s);
    }
  }

  void wh_question(Sent& s) {
    std::discrete_distribution<int> d({0.45, 0.25, 0.30});
    switch (d(rng_)) {
      case 0: {
        s.push_back({pick(kWhAdverbs), "WRB"});
        const bool past = coin(0.5);
        s.push_back(past ? Tok{"did", "VBD"} : Tok{"does", "VBZ"});
        subject(s);
        s.push_back({open(lx_.verbs), "VB"});
        object(s);
        break;
      }
      case 1:
        s.push_back({pick(kWhAdverbs), "WRB"});
        s.push_back({"is", "VBZ"});
        noun_phrase(s);
        break;
      default: {
        s.push_back({pick(kWhPronouns), "WP"});
        const std::string& stem = open(lx_.verbs);
        if (coin(0.5)) s.push_back({third_singular(stem), "VBZ"});
        else s.push_back({past_tense(stem), "VBD"});
        object(s);
        break;
      }
    }
  }

  void yes_no_question(Sent& s) {
    std::discrete_distribution<int> d({0.35, 0.30, 0.35});
    switch (d(rng_)) {
      case 0: s.push_back({"does", "VBZ"}); break;
      case 1: s.push_back({"did", "VBD"}); break;
      default: s.push_back({pick(kModals), "MD"}); break;
    }
    subject(s);
    s.push_back({open(lx_.verbs), "VB"});
    object(s);
    if (coin(0.3)) prepositional(s);
  }

  void exclamation(Sent& s) {
    if (coin(0.5)) {
      s.push_back({"what", "WDT"});
      s.push_back({"a", "DT"});
      s.push_back({open(lx_.adjectives), "JJ"});
      s.push_back({open(lx_.nouns), "NN"});
    } else {
      clause(s);
    }
  }

  const Lexicon& lx_;
  const SynthOptions& o_;
  std::mt19937_64& rng_;
};

LabeledSequence to_pun(const Sent& s) {
  LabeledSequence seq;
  seq.task = Task::kPun;
  for (const Tok& t : s) {
    seq.words.push_back(t.word);
    seq.labels.push_back(t.mark);
  }
  return seq;
}

LabeledSequence to_pos(const Sent& s) {
  LabeledSequence seq;
  seq.task = Task::kPos;
  for (const Tok& t : s) {
    seq.words.push_back(t.word);
    seq.labels.push_back(*pos_tag_id(t.tag));
  }
  return seq;
}

void append_words(std::vector<std::string>& out, const WordClass& c, bool verb) {
  for (const auto& w : c.held_out) {
    out.push_back(w);
    if (verb) {
      out.push_back(third_singular(w));
      out.push_back(past_tense(w));
    }
  }
}

}  // namespace

SynthCorpus synth_corpus(std::uint64_t seed, const SynthOptions& o) {
  if (o.pun_train == 0) throw ContractError("synth_corpus: size must be >= 1");
  if (!(o.held_out_fraction >= 0.0 && o.held_out_fraction < 1.0)) {
    throw ContractError("synth_corpus: held_out_fraction outside [0, 1)");
  }
  std::mt19937_64 lex_rng(seed ^ 0x6c657869636f6eULL);
  const Lexicon lx = make_lexicon(o, lex_rng);

  SynthCorpus c;
  c.options = o;
  append_words(c.held_out_words, lx.nouns, false);
  append_words(c.held_out_words, lx.names, false);
  append_words(c.held_out_words, lx.verbs, true);
  append_words(c.held_out_words, lx.adjectives, false);
  append_words(c.held_out_words, lx.intro_adverbs, false);
  append_words(c.held_out_words, lx.interjections, false);

  const Mixture pun_mix{o.p_declarative, o.p_wh_question, o.p_yes_no_question, o.p_compound,
                        o.p_exclamation};
  const Mixture pos_mix{o.pos_p_declarative, o.pos_p_wh_question, o.pos_p_yes_no_question,
                        o.pos_p_compound, o.pos_p_exclamation};

  std::mt19937_64 rng(seed);
  Generator g(lx, o, rng);
  for (std::size_t i = 0; i < o.pun_train; ++i) {
    auto [s, truth] = g.sentence(pun_mix);
    c.pun_train.push_back(to_pun(s));
    c.pun_train_truth.push_back(truth);
  }
  g.allow_held_out = true;
  for (std::size_t i = 0; i < o.pun_dev; ++i) {
    auto [s, truth] = g.sentence(pun_mix);
    c.pun_dev.push_back(to_pun(s));
    c.pun_dev_truth.push_back(truth);
  }
  for (std::size_t i = 0; i < o.pos_train; ++i) {
    c.pos_train.push_back(to_pos(g.sentence(pos_mix).first));
  }
  for (std::size_t i = 0; i < o.unlabeled; ++i) {
    c.unlabeled.push_back(to_pun(g.sentence(pun_mix).first).words);
  }
  return c;
}

MarkRates expected_mark_rates(const SynthOptions& o) {
  const double total =
      o.p_declarative + o.p_wh_question + o.p_yes_no_question + o.p_compound + o.p_exclamation;
  const double question = (o.p_wh_question + o.p_yes_no_question) / total;
  return MarkRates{o.p_intro, question, 1.0 - question};
}

}  // namespace punc
