#pragma once

// Imagination synthesis: optimize a randomly initialized latent matrix so the
// decoded image's embedding aligns with the text embedding (loss = -cosine).
// Generic over any type satisfying DifferentiableBackend; ToyLinearBackend is
// a small seeded surrogate with an analytic gradient.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vismetric/corpus.hpp"
#include "vismetric/error.hpp"
#include "vismetric/similarity.hpp"

namespace vismetric {

struct LatentShape {
  std::size_t rows = 4;
  std::size_t cols = 4;
  std::size_t size() const { return rows * cols; }
  bool operator==(const LatentShape&) const = default;
};

struct LatentMatrix {
  LatentShape shape;
  std::vector<double> values;  // row-major
  std::uint64_t seed = 0;

  static LatentMatrix zeros(LatentShape shape) { return {shape, std::vector<double>(shape.size(), 0.0), 0}; }

  /// Standard-normal entries drawn from a seeded generator.
  static LatentMatrix standard_normal(LatentShape shape, std::uint64_t seed) {
    LatentMatrix h{shape, std::vector<double>(shape.size()), seed};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : h.values) v = normal(rng);
    return h;
  }
};

/// Real-valued pixel grid, row-major with interleaved channels, nominally in [0, 1].
struct GeneratedImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<double> pixels;

  bool operator==(const GeneratedImage&) const = default;
};

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // same layout as LatentMatrix::values
};

template <class B>
concept DifferentiableBackend = requires(const B& b, const LatentMatrix& h, const GeneratedImage& img,
                                         std::string_view text, const EmbeddingVector& t) {
  { b.backend_id() } -> std::convertible_to<std::string>;
  { b.latent_shape() } -> std::same_as<LatentShape>;
  { b.max_text_tokens() } -> std::convertible_to<int>;
  { b.decode(h) } -> std::same_as<GeneratedImage>;
  { b.embed_image(img) } -> std::same_as<EmbeddingVector>;
  { b.embed_text(text) } -> std::same_as<EmbeddingVector>;
  { b.loss_and_gradient(h, t) } -> std::same_as<LossAndGradient>;
};

enum class Optimizer { kGradientDescent, kAdaptiveMoments };

inline std::string to_string(Optimizer o) {
  return o == Optimizer::kGradientDescent ? "gradient-descent" : "adaptive-moments";
}

inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "gradient-descent" || s == "gd") return Optimizer::kGradientDescent;
  if (s == "adaptive-moments" || s == "adam") return Optimizer::kAdaptiveMoments;
  throw ValidationError("unknown optimizer '" + std::string(s) + "'");
}

struct GenerationConfig {
  int steps = 1000;
  double step_size = 0.05;
  Optimizer optimizer = Optimizer::kAdaptiveMoments;
  int restarts = 1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (steps < 1) throw ValidationError("generation steps must be >= 1");
    if (restarts < 1) throw ValidationError("generation restarts must be >= 1");
    if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ValidationError("step_size must be finite and >= 0");
  }
};

struct GenerationResult {
  GeneratedImage image;
  EmbeddingVector image_embedding;
  EmbeddingVector text_embedding;
  LatentMatrix latent;
  // Losses of the winning restart from the initial latent up to the returned
  // (best) iterate, so back() == final_loss.
  std::vector<double> loss_trace;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int best_restart = 0;
  int best_step = 0;
};

/// -cos(v, t); throws on zero norms or dimension mismatch.
inline double generation_loss(const EmbeddingVector& v, const EmbeddingVector& t) { return -cosine(v, t); }

inline constexpr double kNormGuard = 1e-12;

/// Splitmix64 step, used to derive per-restart seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Thrown when the backend fails mid-optimization; the message names the step.
class GenerationError : public Error {
 public:
  GenerationError(int restart, int step, const std::string& what)
      : Error("generation failed at restart " + std::to_string(restart) + ", step " + std::to_string(step) + ": " + what),
        step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

template <DifferentiableBackend Backend>
GenerationResult generate_imagination(const TextSnippet& text, const Backend& backend, const GenerationConfig& config) {
  config.validate();
  if (text.token_estimate + 2 > backend.max_text_tokens())
    throw LengthError("text needs " + std::to_string(text.token_estimate + 2) + " tokens including begin/end markers; " +
                      backend.backend_id() + " accepts at most " + std::to_string(backend.max_text_tokens()));

  const EmbeddingVector t = backend.embed_text(text.text);
  const LatentShape shape = backend.latent_shape();

  GenerationResult best;
  double best_loss = std::numeric_limits<double>::infinity();

  for (int r = 0; r < config.restarts; ++r) {
    const std::uint64_t seed = r == 0 ? config.seed : derive_seed(config.seed, static_cast<std::uint64_t>(r));
    LatentMatrix h = LatentMatrix::standard_normal(shape, seed);
    std::vector<double> m(h.values.size(), 0.0), v(h.values.size(), 0.0);
    std::vector<double> trace;
    trace.reserve(static_cast<std::size_t>(config.steps) + 1);
    LatentMatrix run_best = h;
    double run_best_loss = std::numeric_limits<double>::infinity();
    int run_best_step = 0;

    for (int step = 0; step <= config.steps; ++step) {
      LossAndGradient lg;
      try {
        lg = backend.loss_and_gradient(h, t);
      } catch (const std::exception& e) {
        throw GenerationError(r, step, e.what());
      }
      if (!std::isfinite(lg.loss))
        throw NumericError("non-finite generation loss at restart " + std::to_string(r) + ", step " + std::to_string(step));
      trace.push_back(lg.loss);
      if (lg.loss < run_best_loss) {
        run_best_loss = lg.loss;
        run_best = h;
        run_best_step = step;
      }
      if (step == config.steps) break;

      if (config.optimizer == Optimizer::kGradientDescent) {
        for (std::size_t i = 0; i < h.values.size(); ++i) h.values[i] -= config.step_size * lg.gradient[i];
      } else {
        const double k = step + 1;
        const double c1 = 1.0 - std::pow(config.beta1, k);
        const double c2 = 1.0 - std::pow(config.beta2, k);
        for (std::size_t i = 0; i < h.values.size(); ++i) {
          const double g = lg.gradient[i];
          m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
          v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
          h.values[i] -= config.step_size * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
        }
      }
    }

    if (run_best_loss < best_loss) {
      best_loss = run_best_loss;
      best.latent = run_best;
      best.best_restart = r;
      best.best_step = run_best_step;
      best.initial_loss = trace.front();
      trace.resize(static_cast<std::size_t>(run_best_step) + 1);
      best.loss_trace = std::move(trace);
    }
  }

  best.final_loss = best_loss;
  best.text_embedding = t;
  best.image = backend.decode(best.latent);
  best.image_embedding = backend.embed_image(best.image);
  return best;
}

/// Max relative error between the analytic gradient and central differences
/// over every latent entry; denominators are floored at 1e-8.
template <DifferentiableBackend Backend>
double gradient_check(const Backend& backend, const LatentMatrix& h, const EmbeddingVector& t, double epsilon) {
  if (!(epsilon > 0.0) || epsilon > 1e-2) throw ValidationError("gradient_check epsilon must be in (0, 1e-2]");
  const auto analytic = backend.loss_and_gradient(h, t).gradient;
  double worst = 0.0;
  LatentMatrix probe = h;
  for (std::size_t i = 0; i < h.values.size(); ++i) {
    probe.values[i] = h.values[i] + epsilon;
    const double up = backend.loss_and_gradient(probe, t).loss;
    probe.values[i] = h.values[i] - epsilon;
    const double down = backend.loss_and_gradient(probe, t).loss;
    probe.values[i] = h.values[i];
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Toy backend

struct ToyBackendOptions {
  LatentShape latent{4, 4};
  std::size_t image_height = 8;
  std::size_t image_width = 8;
  std::size_t embedding_dim = 16;
  int max_text_tokens = 77;
  std::uint64_t weight_seed = 20210825;
};

/// Deterministic surrogate: decode is a fixed seeded linear map latent -> pixels,
/// image embedding a fixed seeded linear map followed by L2 normalization, and
/// text embedding a seeded hashed bag of default-policy tokens.
class ToyLinearBackend {
 public:
  explicit ToyLinearBackend(ToyBackendOptions opts = {}) : opts_(opts) {
    const std::size_t m = opts_.latent.size();
    const std::size_t p = pixel_count();
    const std::size_t k = opts_.embedding_dim;
    if (m == 0 || p == 0 || k == 0) throw ValidationError("toy backend dimensions must be positive");
    std::mt19937_64 rng(opts_.weight_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    decoder_.resize(p * m);
    for (auto& w : decoder_) w = normal(rng) / std::sqrt(static_cast<double>(m));
    encoder_.resize(k * p);
    for (auto& w : encoder_) w = normal(rng) / std::sqrt(static_cast<double>(p));
    // Composite map latent -> pre-normalization image embedding.
    composite_.assign(k * m, 0.0);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < p; ++b)
        for (std::size_t c = 0; c < m; ++c) composite_[a * m + c] += encoder_[a * p + b] * decoder_[b * m + c];
  }

  std::string backend_id() const {
    return "toy-linear-" + std::to_string(opts_.latent.rows) + "x" + std::to_string(opts_.latent.cols) + "-d" +
           std::to_string(opts_.embedding_dim) + "-s" + std::to_string(opts_.weight_seed);
  }
  LatentShape latent_shape() const { return opts_.latent; }
  int max_text_tokens() const { return opts_.max_text_tokens; }
  std::size_t embedding_dim() const { return opts_.embedding_dim; }
  const ToyBackendOptions& options() const { return opts_; }

  GeneratedImage decode(const LatentMatrix& h) const {
    check_shape(h);
    GeneratedImage img{opts_.image_height, opts_.image_width, 3, std::vector<double>(pixel_count(), 0.0)};
    const std::size_t m = opts_.latent.size();
    for (std::size_t b = 0; b < img.pixels.size(); ++b)
      for (std::size_t c = 0; c < m; ++c) img.pixels[b] += decoder_[b * m + c] * h.values[c];
    return img;
  }

  EmbeddingVector embed_image(const GeneratedImage& img) const {
    if (img.pixels.size() != pixel_count()) throw ValidationError("toy backend: image size mismatch");
    const std::size_t p = pixel_count();
    EmbeddingVector v{backend_id(), std::vector<double>(opts_.embedding_dim, 0.0)};
    for (std::size_t a = 0; a < opts_.embedding_dim; ++a)
      for (std::size_t b = 0; b < p; ++b) v.values[a] += encoder_[a * p + b] * img.pixels[b];
    const double n = std::max(detail::norm(v.values), kNormGuard);
    for (auto& x : v.values) x /= n;
    return v;
  }

  EmbeddingVector embed_text(std::string_view text) const {
    EmbeddingVector t{backend_id(), std::vector<double>(opts_.embedding_dim, 0.0)};
    for (const auto& tok : normalize_tokens(text)) {
      std::mt19937_64 rng(fnv1a(tok) ^ opts_.weight_seed);
      std::normal_distribution<double> normal(0.0, 1.0);
      for (auto& x : t.values) x += normal(rng);
    }
    const double n = detail::norm(t.values);
    if (!(n > 0.0)) throw ValidationError("toy backend: text has no tokens to embed");
    for (auto& x : t.values) x /= n;
    return t;
  }

  /// Loss -cos(A h, t) with the norm of A h guarded below by 1e-12, and its gradient.
  LossAndGradient loss_and_gradient(const LatentMatrix& h, const EmbeddingVector& t) const {
    check_shape(h);
    if (t.dim() != opts_.embedding_dim) throw ValidationError("toy backend: text embedding dimension mismatch");
    const std::size_t m = opts_.latent.size(), k = opts_.embedding_dim;
    std::vector<double> u(k, 0.0);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t c = 0; c < m; ++c) u[a] += composite_[a * m + c] * h.values[c];
    const double tn = detail::norm(t.values);
    if (!(tn > 0.0)) throw NumericError("toy backend: zero-norm text embedding");
    std::vector<double> that(k);
    for (std::size_t a = 0; a < k; ++a) that[a] = t.values[a] / tn;

    const double un = detail::norm(u);
    const double guarded = std::max(un, kNormGuard);
    const double proj = detail::dot(u, that);
    LossAndGradient out;
    out.loss = -proj / guarded;
    // d loss / d u
    std::vector<double> gu(k);
    for (std::size_t a = 0; a < k; ++a)
      gu[a] = un > kNormGuard ? -(that[a] - proj * u[a] / (un * un)) / un : -that[a] / kNormGuard;
    out.gradient.assign(m, 0.0);
    for (std::size_t c = 0; c < m; ++c)
      for (std::size_t a = 0; a < k; ++a) out.gradient[c] += composite_[a * m + c] * gu[a];
    return out;
  }

  /// Largest singular value of the latent -> embedding map (power iteration).
  double spectral_norm() const {
    const std::size_t m = opts_.latent.size(), k = opts_.embedding_dim;
    std::vector<double> x(m, 1.0), y(k);
    double sigma = 0.0;
    for (int it = 0; it < 500; ++it) {
      std::fill(y.begin(), y.end(), 0.0);
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t c = 0; c < m; ++c) y[a] += composite_[a * m + c] * x[c];
      std::vector<double> z(m, 0.0);
      for (std::size_t c = 0; c < m; ++c)
        for (std::size_t a = 0; a < k; ++a) z[c] += composite_[a * m + c] * y[a];
      const double zn = detail::norm(z);
      if (zn == 0.0) return 0.0;
      sigma = std::sqrt(zn);
      for (std::size_t c = 0; c < m; ++c) x[c] = z[c] / zn;
    }
    return sigma;
  }

  /// Plain gradient-descent step bound at latent h: ||A h||^2 / (3 sigma_max(A)^2),
  /// the inverse of the local curvature bound of -cos(A h, t).
  double gd_stability_bound(const LatentMatrix& h) const {
    check_shape(h);
    const std::size_t m = opts_.latent.size(), k = opts_.embedding_dim;
    double un2 = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      double ua = 0.0;
      for (std::size_t c = 0; c < m; ++c) ua += composite_[a * m + c] * h.values[c];
      un2 += ua * ua;
    }
    const double s = spectral_norm();
    return un2 / (3.0 * s * s);
  }

 private:
  std::size_t pixel_count() const { return opts_.image_height * opts_.image_width * 3; }

  void check_shape(const LatentMatrix& h) const {
    if (!(h.shape == opts_.latent) || h.values.size() != opts_.latent.size())
      throw ValidationError("toy backend: latent shape mismatch");
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t hsh = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
      hsh ^= ch;
      hsh *= 0x100000001b3ULL;
    }
    return hsh;
  }

  ToyBackendOptions opts_;
  std::vector<double> decoder_;    // pixels x latent
  std::vector<double> encoder_;    // embedding x pixels
  std::vector<double> composite_;  // embedding x latent
};

static_assert(DifferentiableBackend<ToyLinearBackend>);

/// `step,loss` CSV of a loss trace.
inline void write_loss_trace_csv(std::span<const double> trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "step,loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << trace[i] << '\n';
}

}  // namespace vismetric
