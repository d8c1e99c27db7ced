#pragma once

// Sentence-level BLEU-n, ROUGE-n, ROUGE-L, METEOR (exact + Porter stem stages)
// and base CIDEr over pre-tokenized text, all with multi-reference support.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "vismetric/error.hpp"
#include "vismetric/porter_stemmer.hpp"

namespace vismetric {

using Tokens = std::vector<std::string>;

struct MetricScore {
  std::string metric_id;
  double value = 0.0;
  std::map<std::string, double> components;
  std::vector<std::string> flags;  // e.g. "empty-hypothesis"

  bool has_flag(const std::string& f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }
};

/// Multiset of order-n n-grams of one token sequence.
struct NGramCounts {
  int order = 1;
  std::map<Tokens, int> counts;

  static NGramCounts extract(const Tokens& tokens, int n) {
    NGramCounts out;
    out.order = n;
    if (n < 1) throw ValidationError("n-gram order must be >= 1");
    if (tokens.size() < static_cast<std::size_t>(n)) return out;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
      ++out.counts[Tokens(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return out;
  }

  int total() const {
    int t = 0;
    for (const auto& [_, c] : counts) t += c;
    return t;
  }

  int count(const Tokens& gram) const {
    auto it = counts.find(gram);
    return it == counts.end() ? 0 : it->second;
  }

  /// Sum over grams of min(count here, count in other).
  int clipped_overlap(const NGramCounts& other) const {
    int o = 0;
    for (const auto& [g, c] : counts) o += std::min(c, other.count(g));
    return o;
  }
};

// ---------------------------------------------------------------------------
// BLEU

struct BleuOptions {
  bool add_one_smoothing = false;  // add-one on orders >= 2
};

inline MetricScore bleu_n(const Tokens& hyp, std::span<const Tokens> refs, int max_n, BleuOptions opts = {}) {
  if (max_n < 1 || max_n > 4) throw ValidationError("bleu max_n must be in [1,4]");
  if (refs.empty()) throw ValidationError("bleu: empty reference list");
  MetricScore s;
  s.metric_id = "bleu" + std::to_string(max_n);
  if (hyp.empty()) {
    s.flags.push_back("empty-hypothesis");
    return s;
  }

  const auto c = static_cast<double>(hyp.size());
  // Closest reference length; ties go to the shorter one.
  std::size_t best_len = refs[0].size();
  for (const auto& r : refs) {
    const auto d = std::abs(static_cast<long>(r.size()) - static_cast<long>(hyp.size()));
    const auto bd = std::abs(static_cast<long>(best_len) - static_cast<long>(hyp.size()));
    if (d < bd || (d == bd && r.size() < best_len)) best_len = r.size();
  }
  const auto r = static_cast<double>(best_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  s.components["bp"] = bp;
  s.components["hyp_len"] = c;
  s.components["ref_len"] = r;

  double product = 1.0;
  bool zero = false;
  for (int n = 1; n <= max_n; ++n) {
    const auto h = NGramCounts::extract(hyp, n);
    std::map<Tokens, int> max_ref;
    for (const auto& ref : refs)
      for (const auto& [g, cnt] : NGramCounts::extract(ref, n).counts) max_ref[g] = std::max(max_ref[g], cnt);
    int matched = 0;
    for (const auto& [g, cnt] : h.counts) {
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(cnt, it->second);
    }
    double num = matched, den = h.total();
    if (opts.add_one_smoothing && n >= 2) {
      num += 1.0;
      den += 1.0;
    }
    const double p = den > 0 ? num / den : 0.0;
    s.components["p" + std::to_string(n)] = p;
    if (p <= 0.0) zero = true;
    product *= p;
  }
  // pow(x, 1.0) is exact, so max_n = 1 reduces to bp * p1 bit-for-bit.
  s.value = zero ? 0.0 : bp * std::pow(product, 1.0 / max_n);
  return s;
}

// ---------------------------------------------------------------------------
// ROUGE

namespace detail {

inline double f1(double p, double r) { return (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0; }

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

/// ROUGE-n F1, max over references.
inline MetricScore rouge_n(const Tokens& hyp, std::span<const Tokens> refs, int n) {
  if (n < 1) throw ValidationError("rouge n must be >= 1");
  if (refs.empty()) throw ValidationError("rouge: empty reference list");
  MetricScore s;
  s.metric_id = "rouge" + std::to_string(n);
  const auto h = NGramCounts::extract(hyp, n);
  bool any_ref = false;
  double best_f = -1.0;
  for (const auto& ref : refs) {
    const auto rc = NGramCounts::extract(ref, n);
    if (rc.total() == 0) continue;
    any_ref = true;
    const double overlap = h.clipped_overlap(rc);
    const double recall = overlap / rc.total();
    const double precision = h.total() > 0 ? overlap / h.total() : 0.0;
    const double f = detail::f1(precision, recall);
    if (f > best_f) {
      best_f = f;
      s.components["precision"] = precision;
      s.components["recall"] = recall;
    }
  }
  if (!any_ref) {
    s.flags.push_back("reference-shorter-than-n");
    return s;
  }
  if (h.total() == 0) s.flags.push_back("hypothesis-shorter-than-n");
  s.value = best_f;
  return s;
}

/// ROUGE-L with beta = 1, max over references.
inline MetricScore rouge_l(const Tokens& hyp, std::span<const Tokens> refs) {
  if (refs.empty()) throw ValidationError("rouge-l: empty reference list");
  MetricScore s;
  s.metric_id = "rougeL";
  if (hyp.empty()) {
    s.flags.push_back("empty-hypothesis");
    return s;
  }
  double best_f = -1.0;
  for (const auto& ref : refs) {
    if (ref.empty()) continue;
    const double lcs = static_cast<double>(detail::lcs_length(hyp, ref));
    const double recall = lcs / static_cast<double>(ref.size());
    const double precision = lcs / static_cast<double>(hyp.size());
    const double f = detail::f1(precision, recall);
    if (f > best_f) {
      best_f = f;
      s.components["lcs"] = lcs;
      s.components["precision"] = precision;
      s.components["recall"] = recall;
    }
  }
  if (best_f < 0) {
    s.flags.push_back("empty-reference");
    return s;
  }
  s.value = best_f;
  return s;
}

// ---------------------------------------------------------------------------
// METEOR

struct MeteorParams {
  double alpha = 0.9;
  double beta = 3.0;
  double gamma = 0.5;
};

struct MeteorAlignment {
  int matches = 0;
  int exact_matches = 0;
  int chunks = 0;
  std::vector<int> hyp_to_ref;  // -1 when unaligned
  bool exhaustive = true;       // false if the search budget ran out
};

namespace detail {

// Exhaustive branch-and-bound search for the alignment that maximizes matches,
// then exact matches, then minimizes chunks. Candidate pairs share a Porter stem.
class MeteorAligner {
 public:
  MeteorAligner(const Tokens& hyp, const Tokens& ref) : hyp_(hyp), ref_(ref) {
    for (const auto& t : hyp) hyp_stem_.push_back(porter_stem(t));
    for (const auto& t : ref) ref_stem_.push_back(porter_stem(t));
    std::map<std::string, int> class_h, class_r, surf_h, surf_r;
    for (std::size_t i = 0; i < hyp.size(); ++i) ++class_h[hyp_stem_[i]], ++surf_h[hyp[i]];
    for (std::size_t j = 0; j < ref.size(); ++j) ++class_r[ref_stem_[j]], ++surf_r[ref[j]];
    // Every surface match is also a stem match, so a single matching can hit
    // both per-class and per-surface maxima.
    for (const auto& [k, v] : class_h) {
      const int t = std::min(v, class_r.count(k) ? class_r[k] : 0);
      class_target_[k] = t;
      target_matches_ += t;
    }
    for (const auto& [k, v] : surf_h) {
      const int t = std::min(v, surf_r.count(k) ? surf_r[k] : 0);
      surf_target_[k] = t;
      target_exact_ += t;
    }
    // Suffix counts of hyp tokens per class / surface, from position i onward.
    for (const auto& [k, v] : class_h) class_rem_h_[k] = v;
    for (const auto& [k, v] : surf_h) surf_rem_h_[k] = v;
    for (const auto& [k, v] : class_r) class_free_r_[k] = v;
    for (const auto& [k, v] : surf_r) surf_free_r_[k] = v;
    used_.assign(ref.size(), false);
    current_.assign(hyp.size(), -1);
  }

  MeteorAlignment run() {
    MeteorAlignment out;
    out.matches = target_matches_;
    out.exact_matches = target_exact_;
    if (target_matches_ == 0) {
      out.hyp_to_ref.assign(hyp_.size(), -1);
      return out;
    }
    search(0, 0, -2);
    out.chunks = best_chunks_;
    out.hyp_to_ref = best_;
    out.exhaustive = nodes_ <= kNodeBudget;
    return out;
  }

 private:
  static int get(const std::map<std::string, int>& m, const std::string& k) {
    auto it = m.find(k);
    return it == m.end() ? 0 : it->second;
  }

  static constexpr std::uint64_t kNodeBudget = 2'000'000;

  bool feasible(const std::string& cls, const std::string& surf) const {
    const int need_c = get(class_target_, cls) - class_done_[cls];
    if (need_c > std::min(get(class_rem_h_, cls), get(class_free_r_, cls))) return false;
    auto st = surf_target_.find(surf);
    if (st != surf_target_.end()) {
      const int need_s = st->second - surf_done_[surf];
      const int free_r = get(surf_free_r_, surf);
      if (need_s > std::min(get(surf_rem_h_, surf), free_r)) return false;
    }
    return true;
  }

  bool all_feasible_for_ref(std::size_t j) const {
    return feasible_class(ref_stem_[j]) && feasible_surface(ref_[j]);
  }
  bool feasible_class(const std::string& cls) const {
    auto it = class_rem_h_.find(cls);
    if (it == class_rem_h_.end()) return true;
    return get(class_target_, cls) - class_done_[cls] <= std::min(it->second, get(class_free_r_, cls));
  }
  bool feasible_surface(const std::string& surf) const {
    auto it = surf_rem_h_.find(surf);
    if (it == surf_rem_h_.end()) return true;
    const int free_r = get(surf_free_r_, surf);
    return get(surf_target_, surf) - surf_done_[surf] <= std::min(it->second, free_r);
  }

  void search(std::size_t i, int chunks, int prev_j) {
    if (++nodes_ > kNodeBudget && best_chunks_ != std::numeric_limits<int>::max()) return;
    if (chunks >= best_chunks_) return;
    if (i == hyp_.size()) {
      best_chunks_ = chunks;
      best_ = current_;
      return;
    }
    const auto& cls = hyp_stem_[i];
    const auto& surf = hyp_[i];
    --class_rem_h_[cls];
    --surf_rem_h_[surf];

    // Candidate refs: chunk continuation first, then exact, then stem-only.
    std::vector<std::size_t> order;
    if (prev_j >= 0 && prev_j + 1 < static_cast<int>(ref_.size()) && ref_stem_[prev_j + 1] == cls)
      order.push_back(static_cast<std::size_t>(prev_j + 1));
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t j = 0; j < ref_.size(); ++j)
        if (ref_stem_[j] == cls && (ref_[j] == surf) == (pass == 0) &&
            (order.empty() || order.front() != j))
          order.push_back(j);

    for (std::size_t j : order) {
      if (used_[j]) continue;
      const bool exact = ref_[j] == surf;
      used_[j] = true;
      --class_free_r_[cls];
      --surf_free_r_[ref_[j]];
      ++class_done_[cls];
      if (exact) ++surf_done_[surf];
      current_[i] = static_cast<int>(j);
      if (feasible(cls, surf) && all_feasible_for_ref(j)) {
        const bool continues = prev_j >= 0 && static_cast<int>(j) == prev_j + 1;
        search(i + 1, chunks + (continues ? 0 : 1), static_cast<int>(j));
      }
      current_[i] = -1;
      if (exact) --surf_done_[surf];
      --class_done_[cls];
      ++surf_free_r_[ref_[j]];
      ++class_free_r_[cls];
      used_[j] = false;
    }
    // Leave hyp token i unaligned.
    if (!class_target_.count(cls) || feasible(cls, surf)) search(i + 1, chunks, -2);

    ++class_rem_h_[cls];
    ++surf_rem_h_[surf];
  }

  const Tokens& hyp_;
  const Tokens& ref_;
  Tokens hyp_stem_, ref_stem_;
  std::map<std::string, int> class_target_, surf_target_;
  std::map<std::string, int> class_rem_h_, surf_rem_h_, class_free_r_, surf_free_r_;
  mutable std::map<std::string, int> class_done_, surf_done_;
  int target_matches_ = 0, target_exact_ = 0;
  std::vector<bool> used_;
  std::vector<int> current_, best_;
  int best_chunks_ = std::numeric_limits<int>::max();
  std::uint64_t nodes_ = 0;
};

}  // namespace detail

inline MeteorAlignment meteor_align(const Tokens& hyp, const Tokens& ref) {
  return detail::MeteorAligner(hyp, ref).run();
}

inline MetricScore meteor(const Tokens& hyp, std::span<const Tokens> refs, MeteorParams params = {}) {
  if (params.alpha <= 0 || params.beta <= 0 || params.gamma <= 0)
    throw ValidationError("meteor parameters must be positive");
  if (refs.empty()) throw ValidationError("meteor: empty reference list");
  MetricScore best;
  best.metric_id = "meteor";
  best.value = -1.0;
  for (const auto& ref : refs) {
    MetricScore s;
    s.metric_id = "meteor";
    const auto a = meteor_align(hyp, ref);
    s.components["matches"] = a.matches;
    s.components["chunks"] = a.chunks;
    if (!a.exhaustive) s.flags.push_back("alignment-search-truncated");
    if (a.matches > 0) {
      const double p = static_cast<double>(a.matches) / static_cast<double>(hyp.size());
      const double r = static_cast<double>(a.matches) / static_cast<double>(ref.size());
      const double fmean = p * r / (params.alpha * p + (1.0 - params.alpha) * r);
      const double penalty = params.gamma * std::pow(static_cast<double>(a.chunks) / a.matches, params.beta);
      s.components["precision"] = p;
      s.components["recall"] = r;
      s.components["fmean"] = fmean;
      s.components["penalty"] = penalty;
      s.value = fmean * (1.0 - penalty);
    }
    if (s.value > best.value) best = std::move(s);
  }
  return best;
}

// ---------------------------------------------------------------------------
// CIDEr

/// Document-frequency table over a corpus whose documents are per-example
/// reference sets. Immutable after construction.
class CiderIndex {
 public:
  static constexpr int kMaxOrder = 4;

  explicit CiderIndex(std::span<const std::vector<Tokens>> corpus) : documents_(corpus.size()) {
    if (corpus.size() < 2) throw ValidationError("IDF undefined: CIDEr corpus needs at least 2 documents");
    for (const auto& refs : corpus) {
      std::set<Tokens> seen;
      for (const auto& ref : refs)
        for (int n = 1; n <= kMaxOrder; ++n)
          for (const auto& [g, _] : NGramCounts::extract(ref, n).counts) seen.insert(g);
      for (const auto& g : seen) ++df_[g];
    }
  }

  std::size_t documents() const { return documents_; }

  int document_frequency(const Tokens& gram) const {
    auto it = df_.find(gram);
    return it == df_.end() ? 0 : it->second;
  }

  // ln(N / df), with df floored at 1 for n-grams unseen in the corpus.
  double idf(const Tokens& gram) const {
    return std::log(static_cast<double>(documents_) / std::max(1, document_frequency(gram)));
  }

  std::map<Tokens, double> tfidf(const Tokens& tokens, int n) const {
    const auto counts = NGramCounts::extract(tokens, n);
    std::map<Tokens, double> vec;
    const double total = counts.total();
    if (total == 0) return vec;
    for (const auto& [g, c] : counts.counts) vec[g] = (c / total) * idf(g);
    return vec;
  }

 private:
  std::size_t documents_;
  std::map<Tokens, int> df_;
};

namespace detail {

inline double sparse_cosine(const std::map<Tokens, double>& a, const std::map<Tokens, double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (const auto& [g, v] : a) {
    na += v * v;
    auto it = b.find(g);
    if (it != b.end()) dot += v * it->second;
  }
  for (const auto& [_, v] : b) nb += v * v;
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace detail

/// Base CIDEr: mean over n = 1..4 of the mean reference TF-IDF cosine.
inline MetricScore cider(const CiderIndex& index, const Tokens& hyp, std::span<const Tokens> refs) {
  if (refs.empty()) throw ValidationError("cider: empty reference list");
  MetricScore s;
  s.metric_id = "cider";
  double total = 0.0;
  for (int n = 1; n <= CiderIndex::kMaxOrder; ++n) {
    const auto hv = index.tfidf(hyp, n);
    double sum = 0.0;
    for (const auto& ref : refs) sum += detail::sparse_cosine(hv, index.tfidf(ref, n));
    const double per_n = sum / static_cast<double>(refs.size());
    s.components["cider" + std::to_string(n)] = per_n;
    total += per_n;
  }
  s.value = total / CiderIndex::kMaxOrder;
  if (hyp.empty()) s.flags.push_back("empty-hypothesis");
  return s;
}

}  // namespace vismetric
