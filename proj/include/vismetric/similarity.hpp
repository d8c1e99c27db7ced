#pragma once

// Cosine-similarity metrics over provider embeddings: text/image/combined
// imagination similarities, [CLS] similarity, BERTScore, and additive metric
// augmentation.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vismetric/error.hpp"
#include "vismetric/ngram_metrics.hpp"

namespace vismetric {

struct EmbeddingVector {
  std::string provider_id;
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  bool operator==(const EmbeddingVector&) const = default;
};

/// Row-major token embeddings, one row per token.
struct TokenEmbeddingMatrix {
  std::string provider_id;
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<std::string> tokens;

  std::size_t rows() const { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  bool operator==(const TokenEmbeddingMatrix&) const = default;
};

enum class SimilarityKind { kImagineText, kImagineImage, kImagineTextImage, kBertText, kBertScoreF };

inline std::string to_string(SimilarityKind k) {
  switch (k) {
    case SimilarityKind::kImagineText: return "IE_text";
    case SimilarityKind::kImagineImage: return "IE_image";
    case SimilarityKind::kImagineTextImage: return "IE_text&image";
    case SimilarityKind::kBertText: return "BERT_text";
    case SimilarityKind::kBertScoreF: return "BERTScore_F";
  }
  return "?";
}

struct SimilarityScore {
  SimilarityKind kind = SimilarityKind::kImagineText;
  double value = 0.0;
  std::vector<std::string> flags;
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

inline double span_cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ValidationError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  const double na = norm(a), nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw NumericError("cosine: zero-norm input");
  return clamp_unit(dot(a, b) / (na * nb));
}

}  // namespace detail

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  return detail::span_cosine(a.values, b.values);
}

namespace detail {

inline double mean_reference_cosine(const EmbeddingVector& hyp, std::span<const EmbeddingVector> refs) {
  if (refs.empty()) throw ValidationError("similarity needs at least one reference embedding");
  std::vector<double> cos;
  cos.reserve(refs.size());
  for (const auto& r : refs) cos.push_back(cosine(hyp, r));
  // Summing in sorted order makes the result independent of reference order.
  std::sort(cos.begin(), cos.end());
  double sum = 0.0;
  for (double c : cos) sum += c;
  return std::clamp(sum / static_cast<double>(cos.size()), cos.front(), cos.back());
}

}  // namespace detail

/// Mean text-embedding cosine between the hypothesis and each reference.
inline SimilarityScore imagine_text(const EmbeddingVector& t_hyp, std::span<const EmbeddingVector> t_refs) {
  return {SimilarityKind::kImagineText, detail::mean_reference_cosine(t_hyp, t_refs), {}};
}

/// Mean imagination-embedding cosine between the hypothesis and each reference.
inline SimilarityScore imagine_image(const EmbeddingVector& v_hyp, std::span<const EmbeddingVector> v_refs) {
  return {SimilarityKind::kImagineImage, detail::mean_reference_cosine(v_hyp, v_refs), {}};
}

inline SimilarityScore imagine_text_image(const SimilarityScore& s_text, const SimilarityScore& s_image) {
  if (s_text.kind != SimilarityKind::kImagineText || s_image.kind != SimilarityKind::kImagineImage)
    throw ValidationError("imagine_text_image expects (IE_text, IE_image), got (" + to_string(s_text.kind) + ", " +
                          to_string(s_image.kind) + ")");
  return {SimilarityKind::kImagineTextImage, (s_text.value + s_image.value) / 2.0, {}};
}

/// Mean cosine of sentence-encoder [CLS] embeddings.
inline SimilarityScore bert_text(const EmbeddingVector& cls_hyp, std::span<const EmbeddingVector> cls_refs) {
  return {SimilarityKind::kBertText, detail::mean_reference_cosine(cls_hyp, cls_refs), {}};
}

struct BertScoreParts {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

using IdfWeights = std::map<std::string, double>;

namespace detail {

inline double token_weight(const TokenEmbeddingMatrix& m, std::size_t i, const IdfWeights* idf) {
  if (!idf) return 1.0;
  if (i >= m.tokens.size()) throw ValidationError("IDF weighting needs token strings");
  auto it = idf->find(m.tokens[i]);
  return it == idf->end() ? 0.0 : it->second;
}

// Weighted mean over rows of `from` of the best cosine against any row of `to`.
inline double greedy_side(const TokenEmbeddingMatrix& from, const TokenEmbeddingMatrix& to, const IdfWeights* idf) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < from.rows(); ++i) {
    double best = -1.0;
    for (std::size_t j = 0; j < to.rows(); ++j) best = std::max(best, span_cosine(from.row(i), to.row(j)));
    const double w = token_weight(from, i, idf);
    num += w * best;
    den += w;
  }
  return den > 0 ? num / den : 0.0;
}

}  // namespace detail

inline BertScoreParts bertscore_parts(const TokenEmbeddingMatrix& hyp, const TokenEmbeddingMatrix& ref,
                                      const IdfWeights* idf = nullptr) {
  if (hyp.rows() == 0 || ref.rows() == 0) throw ValidationError("bertscore: empty token matrix");
  if (hyp.dim != ref.dim) throw ValidationError("bertscore: dimension mismatch");
  BertScoreParts out;
  out.precision = detail::greedy_side(hyp, ref, idf);
  out.recall = detail::greedy_side(ref, hyp, idf);
  const double sum = out.precision + out.recall;
  out.f = sum != 0.0 ? 2.0 * out.precision * out.recall / sum : 0.0;
  return out;
}

/// BERTScore F1 (no IDF unless given, no baseline rescaling), max over references.
inline SimilarityScore bertscore_f(const TokenEmbeddingMatrix& hyp, std::span<const TokenEmbeddingMatrix> refs,
                                   const IdfWeights* idf = nullptr) {
  if (refs.empty()) throw ValidationError("bertscore: empty reference list");
  SimilarityScore s{SimilarityKind::kBertScoreF, -1.0, {}};
  bool degenerate = false;
  for (const auto& ref : refs) {
    const auto parts = bertscore_parts(hyp, ref, idf);
    if (parts.precision + parts.recall == 0.0) degenerate = true;
    s.value = std::max(s.value, parts.f);
  }
  s.value = detail::clamp_unit(s.value);
  if (degenerate) s.flags.push_back("zero-precision-plus-recall");
  return s;
}

inline SimilarityScore bertscore_f(const TokenEmbeddingMatrix& hyp, const TokenEmbeddingMatrix& ref,
                                   const IdfWeights* idf = nullptr) {
  return bertscore_f(hyp, std::span<const TokenEmbeddingMatrix>(&ref, 1), idf);
}

/// metric + similarity, with the metric id suffixed by the similarity kind.
inline MetricScore augment(const MetricScore& metric, const SimilarityScore& sim) {
  MetricScore out = metric;
  out.metric_id = metric.metric_id + "+" + to_string(sim.kind);
  out.value = metric.value + sim.value;
  return out;
}

/// Rescale to [0, 1] by the series min/max; a constant series maps to 0.
inline std::vector<double> minmax_normalize(std::span<const double> values) {
  std::vector<double> out(values.begin(), values.end());
  if (out.empty()) return out;
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double a = *lo, range = *hi - *lo;
  for (auto& v : out) v = range > 0 ? (v - a) / range : 0.0;
  return out;
}

}  // namespace vismetric
