#pragma once

// Porter (1980) suffix-stripping stemmer, original published rule set.
// Operates on lowercase ASCII; other bytes are treated as consonants.

#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vismetric {

namespace porter_detail {

inline bool is_vowel_letter(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

// y is a consonant at the start of a word or after a vowel.
inline std::vector<bool> consonant_flags(std::string_view w) {
  std::vector<bool> flags(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (is_vowel_letter(w[i]))
      flags[i] = false;
    else if (w[i] == 'y')
      flags[i] = (i == 0) ? true : !flags[i - 1];
    else
      flags[i] = true;
  }
  return flags;
}

inline bool is_consonant(std::string_view w, std::size_t i) { return consonant_flags(w.substr(0, i + 1))[i]; }

/// Number of VC sequences in [C](VC){m}[V].
inline int measure(std::string_view stem) {
  const auto flags = consonant_flags(stem);
  int m = 0;
  for (std::size_t i = 1; i < flags.size(); ++i)
    if (!flags[i - 1] && flags[i]) ++m;
  return m;
}

inline bool contains_vowel(std::string_view stem) {
  for (bool c : consonant_flags(stem))
    if (!c) return true;
  return false;
}

inline bool ends_double_consonant(std::string_view w) {
  return w.size() >= 2 && w[w.size() - 1] == w[w.size() - 2] && is_consonant(w, w.size() - 1);
}

// *o: stem ends consonant-vowel-consonant, last consonant not w, x or y.
inline bool ends_cvc(std::string_view w) {
  if (w.size() < 3) return false;
  const auto n = w.size();
  const char last = w[n - 1];
  return is_consonant(w, n - 3) && !is_consonant(w, n - 2) && is_consonant(w, n - 1) && last != 'w' &&
         last != 'x' && last != 'y';
}

inline bool ends_with(std::string_view w, std::string_view suffix) {
  return w.size() >= suffix.size() && w.substr(w.size() - suffix.size()) == suffix;
}

struct Rule {
  std::string_view suffix;
  std::string_view replacement;
  std::function<bool(std::string_view)> condition;  // empty = unconditional
};

// The first rule whose suffix matches decides; a failed condition leaves the word alone.
inline std::string apply_rules(const std::string& word, const std::vector<Rule>& rules) {
  for (const auto& r : rules) {
    if (ends_with(word, r.suffix)) {
      std::string_view stem(word.data(), word.size() - r.suffix.size());
      if (!r.condition || r.condition(stem)) return std::string(stem) + std::string(r.replacement);
      return word;
    }
  }
  return word;
}

inline bool m_gt0(std::string_view s) { return measure(s) > 0; }
inline bool m_gt1(std::string_view s) { return measure(s) > 1; }

inline std::string step1a(const std::string& w) {
  return apply_rules(w, {{"sses", "ss", {}}, {"ies", "i", {}}, {"ss", "ss", {}}, {"s", "", {}}});
}

inline std::string step1b(const std::string& w) {
  if (ends_with(w, "eed")) {
    std::string_view stem(w.data(), w.size() - 3);
    return measure(stem) > 0 ? std::string(stem) + "ee" : w;
  }
  std::string stem;
  bool removed = false;
  for (std::string_view suffix : {std::string_view("ed"), std::string_view("ing")}) {
    if (ends_with(w, suffix)) {
      std::string_view s(w.data(), w.size() - suffix.size());
      if (contains_vowel(s)) {
        stem = std::string(s);
        removed = true;
        break;
      }
    }
  }
  if (!removed) return w;
  if (ends_with(stem, "at") || ends_with(stem, "bl") || ends_with(stem, "iz")) return stem + "e";
  if (ends_double_consonant(stem)) {
    const char last = stem.back();
    if (last != 'l' && last != 's' && last != 'z') stem.pop_back();
    return stem;
  }
  if (measure(stem) == 1 && ends_cvc(stem)) return stem + "e";
  return stem;
}

inline std::string step1c(const std::string& w) { return apply_rules(w, {{"y", "i", contains_vowel}}); }

inline std::string step2(const std::string& w) {
  static const std::vector<Rule> rules = {
      {"ational", "ate", m_gt0}, {"tional", "tion", m_gt0}, {"enci", "ence", m_gt0},
      {"anci", "ance", m_gt0},   {"izer", "ize", m_gt0},    {"abli", "able", m_gt0},
      {"alli", "al", m_gt0},     {"entli", "ent", m_gt0},   {"eli", "e", m_gt0},
      {"ousli", "ous", m_gt0},   {"ization", "ize", m_gt0}, {"ation", "ate", m_gt0},
      {"ator", "ate", m_gt0},    {"alism", "al", m_gt0},    {"iveness", "ive", m_gt0},
      {"fulness", "ful", m_gt0}, {"ousness", "ous", m_gt0}, {"aliti", "al", m_gt0},
      {"iviti", "ive", m_gt0},   {"biliti", "ble", m_gt0},
  };
  return apply_rules(w, rules);
}

inline std::string step3(const std::string& w) {
  static const std::vector<Rule> rules = {
      {"icate", "ic", m_gt0}, {"ative", "", m_gt0}, {"alize", "al", m_gt0}, {"iciti", "ic", m_gt0},
      {"ical", "ic", m_gt0},  {"ful", "", m_gt0},   {"ness", "", m_gt0},
  };
  return apply_rules(w, rules);
}

inline std::string step4(const std::string& w) {
  static const std::vector<Rule> rules = {
      {"al", "", m_gt1},    {"ance", "", m_gt1}, {"ence", "", m_gt1}, {"er", "", m_gt1},
      {"ic", "", m_gt1},    {"able", "", m_gt1}, {"ible", "", m_gt1}, {"ant", "", m_gt1},
      {"ement", "", m_gt1}, {"ment", "", m_gt1}, {"ent", "", m_gt1},
      {"ion", "", [](std::string_view s) { return m_gt1(s) && !s.empty() && (s.back() == 's' || s.back() == 't'); }},
      {"ou", "", m_gt1},    {"ism", "", m_gt1},  {"ate", "", m_gt1},  {"iti", "", m_gt1},
      {"ous", "", m_gt1},   {"ive", "", m_gt1},  {"ize", "", m_gt1},
  };
  return apply_rules(w, rules);
}

inline std::string step5a(const std::string& w) {
  if (!ends_with(w, "e")) return w;
  std::string_view stem(w.data(), w.size() - 1);
  const int m = measure(stem);
  if (m > 1 || (m == 1 && !ends_cvc(stem))) return std::string(stem);
  return w;
}

inline std::string step5b(const std::string& w) {
  if (ends_with(w, "ll") && measure(std::string_view(w.data(), w.size() - 1)) > 1) return w.substr(0, w.size() - 1);
  return w;
}

}  // namespace porter_detail

inline std::string porter_stem(std::string_view word) {
  using namespace porter_detail;
  std::string w(word);
  w = step1a(w);
  w = step1b(w);
  w = step1c(w);
  w = step2(w);
  w = step3(w);
  w = step4(w);
  w = step5a(w);
  w = step5b(w);
  return w;
}

}  // namespace vismetric
