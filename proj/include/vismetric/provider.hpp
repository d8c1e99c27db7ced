#pragma once

// Embedding/imagination providers and the cache-backed accessors built on them.
//
// Wire protocol (HTTP + JSON, versioned under /v1):
//   GET  /v1/manifest
//   POST /v1/embed/text   {"texts": [...], "tokens": bool}
//   POST /v1/embed/image  {"png_b64": str}
//   POST /v1/imagine      {"text": str, "steps": int, "seed": int}
// Status 400 = over-length text, 422 = malformed request, 503 = busy (retryable).

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "vismetric/cache.hpp"
#include "vismetric/codec.hpp"
#include "vismetric/corpus.hpp"
#include "vismetric/error.hpp"
#include "vismetric/imagination.hpp"
#include "vismetric/similarity.hpp"

namespace vismetric {

struct ProviderManifest {
  std::string provider_id;
  std::size_t embedding_dim = 0;
  int max_text_tokens = 77;
  std::set<std::string> supports;  // text-embed, token-embed, image-embed, imagine

  bool supports_kind(std::string_view k) const { return supports.count(std::string(k)) > 0; }

  void validate() const {
    if (provider_id.empty()) throw ProviderError("manifest: empty provider_id");
    if (embedding_dim == 0) throw ProviderError("manifest: embedding_dim must be > 0");
    if (max_text_tokens < 2) throw ProviderError("manifest: max_text_tokens must be >= 2");
    static const std::set<std::string> known = {"text-embed", "token-embed", "image-embed", "imagine"};
    for (const auto& s : supports)
      if (!known.count(s)) throw ProviderError("manifest: unknown capability '" + s + "'");
  }

  nlohmann::json to_json() const {
    return {{"provider_id", provider_id},
            {"embedding_dim", embedding_dim},
            {"max_text_tokens", max_text_tokens},
            {"supports", std::vector<std::string>(supports.begin(), supports.end())}};
  }

  static ProviderManifest from_json(const nlohmann::json& j) {
    try {
      ProviderManifest m;
      m.provider_id = j.at("provider_id").get<std::string>();
      m.embedding_dim = j.at("embedding_dim").get<std::size_t>();
      m.max_text_tokens = j.at("max_text_tokens").get<int>();
      for (const auto& s : j.at("supports")) m.supports.insert(s.get<std::string>());
      m.validate();
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("manifest: ") + e.what());
    }
  }
};

struct TokenRows {
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> vectors;
};

struct TextEmbedResponse {
  std::string provider_id;
  std::vector<std::vector<double>> embeddings;
  std::vector<TokenRows> token_embeddings;  // empty unless requested
};

struct ImagineResponse {
  codec::Bytes png;
  std::vector<double> image_embedding;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// A provider endpoint. Implementations count every service round trip.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual ProviderManifest manifest() = 0;
  virtual TextEmbedResponse embed_text(const std::vector<std::string>& texts, bool tokens) = 0;
  virtual std::vector<double> embed_image(std::span<const std::uint8_t> png) = 0;
  virtual ImagineResponse imagine(const std::string& text, int steps, std::uint64_t seed) = 0;

  std::size_t calls() const { return calls_.load(); }

 protected:
  void count_call() { ++calls_; }

 private:
  std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// JSON bodies shared by the client, the toy provider and the test fixtures.

namespace wire {

inline nlohmann::json embed_text_request(const std::vector<std::string>& texts, bool tokens) {
  return {{"texts", texts}, {"tokens", tokens}};
}

inline TextEmbedResponse parse_embed_text_response(const nlohmann::json& j, std::size_t expected) {
  try {
    TextEmbedResponse r;
    r.provider_id = j.at("provider_id").get<std::string>();
    r.embeddings = j.at("embeddings").get<std::vector<std::vector<double>>>();
    if (j.contains("token_embeddings") && !j["token_embeddings"].is_null()) {
      for (const auto& t : j["token_embeddings"]) {
        TokenRows rows;
        rows.tokens = t.at("tokens").get<std::vector<std::string>>();
        rows.vectors = t.at("vectors").get<std::vector<std::vector<double>>>();
        if (rows.tokens.size() != rows.vectors.size()) throw ProviderError("token_embeddings: tokens/vectors length mismatch");
        r.token_embeddings.push_back(std::move(rows));
      }
    }
    if (r.embeddings.size() != expected) throw ProviderError("embed/text: expected " + std::to_string(expected) + " embeddings");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("embed/text: malformed response: ") + e.what());
  }
}

inline nlohmann::json embed_text_response(const TextEmbedResponse& r, bool tokens) {
  nlohmann::json j{{"provider_id", r.provider_id}, {"embeddings", r.embeddings}};
  if (tokens) {
    j["token_embeddings"] = nlohmann::json::array();
    for (const auto& t : r.token_embeddings) j["token_embeddings"].push_back({{"tokens", t.tokens}, {"vectors", t.vectors}});
  }
  return j;
}

inline nlohmann::json imagine_request(const std::string& text, int steps, std::uint64_t seed) {
  return {{"text", text}, {"steps", steps}, {"seed", seed}};
}

inline ImagineResponse parse_imagine_response(const nlohmann::json& j) {
  try {
    ImagineResponse r;
    r.png = codec::base64_decode(j.at("png_b64").get<std::string>());
    r.image_embedding = j.at("image_embedding").get<std::vector<double>>();
    r.initial_loss = j.at("initial_loss").get<double>();
    r.final_loss = j.at("final_loss").get<double>();
    if (!codec::looks_like_png(r.png)) throw ProviderError("imagine: png_b64 is not a PNG");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("imagine: malformed response: ") + e.what());
  } catch (const ValidationError& e) {
    throw ProviderError(std::string("imagine: ") + e.what());
  }
}

inline nlohmann::json imagine_response(const ImagineResponse& r) {
  return {{"png_b64", codec::base64_encode(r.png)},
          {"image_embedding", r.image_embedding},
          {"initial_loss", r.initial_loss},
          {"final_loss", r.final_loss}};
}

}  // namespace wire

// ---------------------------------------------------------------------------
// HTTP client

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{250};
};

class HttpProvider final : public Provider {
 public:
  explicit HttpProvider(std::string base_url, RetryPolicy retry = {}) : base_url_(std::move(base_url)), retry_(retry) {}

  ProviderManifest manifest() override {
    if (!manifest_) manifest_ = ProviderManifest::from_json(request("GET", "/v1/manifest", nullptr));
    return *manifest_;
  }

  TextEmbedResponse embed_text(const std::vector<std::string>& texts, bool tokens) override {
    const auto body = wire::embed_text_request(texts, tokens);
    return wire::parse_embed_text_response(request("POST", "/v1/embed/text", &body), texts.size());
  }

  std::vector<double> embed_image(std::span<const std::uint8_t> png) override {
    const nlohmann::json body{{"png_b64", codec::base64_encode(png)}};
    const auto j = request("POST", "/v1/embed/image", &body);
    try {
      return j.at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("embed/image: malformed response: ") + e.what());
    }
  }

  ImagineResponse imagine(const std::string& text, int steps, std::uint64_t seed) override {
    const auto body = wire::imagine_request(text, steps, seed);
    return wire::parse_imagine_response(request("POST", "/v1/imagine", &body));
  }

 private:
  nlohmann::json request(const char* method, const std::string& path, const nlohmann::json* body) {
    std::string last_error;
    auto backoff = retry_.initial_backoff;
    for (int attempt = 1; attempt <= retry_.attempts; ++attempt) {
      httplib::Client client(base_url_);
      client.set_connection_timeout(5);
      client.set_read_timeout(600);
      count_call();
      auto res = std::string_view(method) == "GET" ? client.Get(path)
                                                   : client.Post(path, body->dump(), "application/json");
      if (!res) {
        last_error = "connection failed: " + httplib::to_string(res.error());
      } else if (res->status == 200) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
          throw ProviderError(path + ": response is not JSON: " + e.what());
        }
      } else if (res->status == 400) {
        throw LengthError(path + ": " + error_message(res->body));
      } else if (res->status == 422) {
        throw ProviderError(path + ": malformed request: " + error_message(res->body));
      } else if (res->status == 503) {
        last_error = "service busy (503)";
      } else {
        throw ProviderError(path + ": HTTP " + std::to_string(res->status) + ": " + error_message(res->body));
      }
      if (attempt < retry_.attempts) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
    }
    throw ProviderError(path + ": " + last_error + " after " + std::to_string(retry_.attempts) + " attempts", true);
  }

  static std::string error_message(const std::string& body) {
    try {
      const auto j = nlohmann::json::parse(body);
      if (j.contains("error")) return j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump();
    } catch (const nlohmann::json::exception&) {
    }
    return body;
  }

  std::string base_url_;
  RetryPolicy retry_;
  std::optional<ProviderManifest> manifest_;
};

// ---------------------------------------------------------------------------
// In-process toy provider

struct ToyProviderOptions {
  std::string provider_id = "toy-clip";
  ToyBackendOptions backend{};
  GenerationConfig generation{};  // steps and seed come from each request
  std::set<std::string> supports = {"text-embed", "token-embed", "image-embed", "imagine"};
};

/// Serves the protocol from ToyLinearBackend without a network hop.
class ToyProvider final : public Provider {
 public:
  explicit ToyProvider(ToyProviderOptions opts = {}) : opts_(std::move(opts)), backend_(opts_.backend) {}

  /// A [CLS]-style sentence encoder stand-in with its own weights.
  static ToyProviderOptions bert_options() {
    ToyProviderOptions o;
    o.provider_id = "toy-bert";
    o.backend.weight_seed = 1810;
    o.backend.max_text_tokens = 512;
    o.supports = {"text-embed", "token-embed"};
    return o;
  }

  const ToyLinearBackend& backend() const { return backend_; }

  // Local metadata, not a service round trip; not counted.
  ProviderManifest manifest() override {
    return {opts_.provider_id, backend_.embedding_dim(), backend_.max_text_tokens(), opts_.supports};
  }

  TextEmbedResponse embed_text(const std::vector<std::string>& texts, bool tokens) override {
    count_call();
    require("text-embed");
    if (tokens) require("token-embed");
    TextEmbedResponse r;
    r.provider_id = opts_.provider_id;
    for (const auto& t : texts) {
      check_length(t);
      r.embeddings.push_back(backend_.embed_text(t).values);
      if (tokens) {
        TokenRows rows;
        for (const auto& tok : normalize_tokens(t)) {
          rows.tokens.push_back(tok);
          rows.vectors.push_back(backend_.embed_text(tok).values);
        }
        r.token_embeddings.push_back(std::move(rows));
      }
    }
    return r;
  }

  std::vector<double> embed_image(std::span<const std::uint8_t> png) override {
    count_call();
    require("image-embed");
    GeneratedImage img;
    try {
      img = codec::decode_png(png);
    } catch (const ValidationError& e) {
      throw ProviderError(std::string("malformed request: ") + e.what());
    }
    if (img.height != backend_.options().image_height || img.width != backend_.options().image_width)
      throw ProviderError("malformed request: image must be " + std::to_string(backend_.options().image_width) + "x" +
                          std::to_string(backend_.options().image_height));
    return backend_.embed_image(img).values;
  }

  ImagineResponse imagine(const std::string& text, int steps, std::uint64_t seed) override {
    count_call();
    require("imagine");
    check_length(text);
    GenerationConfig cfg = opts_.generation;
    cfg.steps = steps;
    cfg.seed = seed;
    const auto result = generate_imagination(TextSnippet(text), backend_, cfg);
    return {codec::encode_png(result.image), result.image_embedding.values, result.initial_loss, result.final_loss};
  }

 private:
  void require(const char* capability) const {
    if (!opts_.supports.count(capability))
      throw ProviderError(opts_.provider_id + " does not support " + capability);
  }

  void check_length(const std::string& text) const {
    const int need = estimate_bpe_tokens(text) + 2;
    if (need > backend_.max_text_tokens())
      throw LengthError("text needs " + std::to_string(need) + " tokens; the text encoder accepts at most " +
                        std::to_string(backend_.max_text_tokens()) + " tokens including begin/end markers");
  }

  ToyProviderOptions opts_;
  ToyLinearBackend backend_;
};

/// "toy" / "toy-bert" select the in-process providers; anything else is a base URL.
inline std::unique_ptr<Provider> make_provider(const std::string& endpoint, const GenerationConfig& generation = {},
                                               RetryPolicy retry = {}) {
  if (endpoint == "toy") {
    ToyProviderOptions o;
    o.generation = generation;
    return std::make_unique<ToyProvider>(o);
  }
  if (endpoint == "toy-bert") return std::make_unique<ToyProvider>(ToyProvider::bert_options());
  return std::make_unique<HttpProvider>(endpoint, retry);
}

// ---------------------------------------------------------------------------
// Cache-backed accessors

struct EmbedOptions {
  bool truncate = false;
};

/// Longest whitespace-word prefix whose token estimate (plus begin/end markers) fits.
inline std::string truncate_to_token_limit(const std::string& text, int max_tokens) {
  std::vector<std::string> words;
  std::string cur;
  for (UChar32 c : text::codepoints(text)) {
    if (text::is_space(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      text::append_utf8(cur, c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  std::string out;
  for (const auto& w : words) {
    std::string candidate = out.empty() ? w : out + " " + w;
    if (estimate_bpe_tokens(candidate) + 2 > max_tokens) break;
    out = std::move(candidate);
  }
  return out;
}

namespace detail {

inline std::string prepare_text(const TextSnippet& text, const ProviderManifest& m, const EmbedOptions& opts) {
  if (text.token_estimate + 2 <= m.max_text_tokens) return text.text;
  if (!opts.truncate)
    throw LengthError("text of " + std::to_string(text.token_estimate) + " BPE tokens exceeds the " +
                      std::to_string(m.max_text_tokens) + "-token limit of " + m.provider_id +
                      " (begin/end markers included); pass --truncate to truncate");
  auto out = truncate_to_token_limit(text.text, m.max_text_tokens);
  if (out.empty()) throw LengthError("text cannot be truncated to fit " + std::to_string(m.max_text_tokens) + " tokens");
  return out;
}

inline void require_capability(const ProviderManifest& m, const char* capability) {
  if (!m.supports_kind(capability)) throw ProviderError(m.provider_id + " does not support " + capability);
}

inline std::vector<double> checked_vector(std::vector<double> v, const ProviderManifest& m, const char* what) {
  if (v.size() != m.embedding_dim)
    throw ProviderError(std::string(what) + ": provider returned dim " + std::to_string(v.size()) + ", manifest says " +
                        std::to_string(m.embedding_dim));
  for (double x : v)
    if (!std::isfinite(x)) throw ProviderError(std::string(what) + ": non-finite embedding value");
  return v;
}

}  // namespace detail

/// Text embeddings for a batch, fetching only cache misses (one request per batch of misses).
inline std::vector<EmbeddingVector> get_or_compute_embeddings(std::span<const TextSnippet> texts, Provider& provider,
                                                              EmbeddingCache& cache, const EmbedOptions& opts = {},
                                                              std::size_t batch_size = 64) {
  const auto m = provider.manifest();
  detail::require_capability(m, "text-embed");
  std::vector<EmbeddingVector> out(texts.size());
  std::vector<std::size_t> misses;
  std::vector<std::string> payloads(texts.size());
  std::vector<CacheKey> keys(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    payloads[i] = detail::prepare_text(texts[i], m, opts);
    keys[i] = CacheKey::make(m.provider_id, RequestKind::kTextEmbed, payloads[i]);
    if (auto hit = cache.read(keys[i]))
      out[i] = {m.provider_id, to_float64(hit->values)};
    else
      misses.push_back(i);
  }
  for (std::size_t b = 0; b < misses.size(); b += batch_size) {
    std::vector<std::string> batch;
    const std::size_t end = std::min(misses.size(), b + batch_size);
    for (std::size_t k = b; k < end; ++k) batch.push_back(payloads[misses[k]]);
    auto resp = provider.embed_text(batch, false);
    for (std::size_t k = b; k < end; ++k) {
      const auto i = misses[k];
      const auto f32 = to_float32(detail::checked_vector(std::move(resp.embeddings[k - b]), m, "embed/text"));
      cache.write(keys[i], EntryKind::kTextEmbedding, f32, {{"provider_id", m.provider_id}});
      out[i] = {m.provider_id, to_float64(f32)};
    }
  }
  return out;
}

inline EmbeddingVector get_or_compute_embedding(const TextSnippet& text, Provider& provider, EmbeddingCache& cache,
                                                const EmbedOptions& opts = {}) {
  return get_or_compute_embeddings(std::span<const TextSnippet>(&text, 1), provider, cache, opts).front();
}

inline TokenEmbeddingMatrix get_or_compute_token_embeddings(const TextSnippet& text, Provider& provider,
                                                            EmbeddingCache& cache, const EmbedOptions& opts = {}) {
  const auto m = provider.manifest();
  detail::require_capability(m, "token-embed");
  const auto payload = detail::prepare_text(text, m, opts);
  const auto key = CacheKey::make(m.provider_id, RequestKind::kTokenEmbed, payload);
  if (auto hit = cache.read(key)) {
    auto meta = cache.metadata(key);
    if (!meta || !meta->contains("tokens"))
      throw IntegrityError("token embedding entry " + key.hex() + " has no index metadata");
    TokenEmbeddingMatrix tm{m.provider_id, m.embedding_dim, to_float64(hit->values), (*meta)["tokens"].get<std::vector<std::string>>()};
    if (tm.rows() * tm.dim != tm.values.size() || tm.rows() != tm.tokens.size())
      throw IntegrityError("token embedding entry " + key.hex() + " does not match its metadata");
    return tm;
  }
  auto resp = provider.embed_text({payload}, true);
  if (resp.token_embeddings.size() != 1) throw ProviderError("embed/text: missing token_embeddings");
  auto& rows = resp.token_embeddings.front();
  if (rows.vectors.empty()) throw ProviderError("embed/text: empty token embedding matrix");
  std::vector<double> flat;
  for (auto& v : rows.vectors) {
    auto checked = detail::checked_vector(std::move(v), m, "embed/text tokens");
    flat.insert(flat.end(), checked.begin(), checked.end());
  }
  const auto f32 = to_float32(flat);
  cache.write(key, EntryKind::kTokenEmbeddings, f32,
              {{"provider_id", m.provider_id}, {"rows", rows.tokens.size()}, {"cols", m.embedding_dim}, {"tokens", rows.tokens}});
  return {m.provider_id, m.embedding_dim, to_float64(f32), rows.tokens};
}

struct ImagineRequest {
  int steps = 1000;
  std::uint64_t seed = 0;
};

struct ImaginationRecord {
  CacheKey key;
  codec::Bytes png;
  EmbeddingVector image_embedding;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool non_improving = false;
};

inline CacheKey imagination_key(const std::string& provider_id, const std::string& payload, const ImagineRequest& req) {
  const std::uint64_t ints[] = {req.seed, static_cast<std::uint64_t>(req.steps)};
  return CacheKey::make(provider_id, RequestKind::kImagine, payload, ints);
}

inline std::optional<ImaginationRecord> lookup_imagination(const TextSnippet& text, const ProviderManifest& m,
                                                           const EmbeddingCache& cache, const ImagineRequest& req,
                                                           const EmbedOptions& opts = {}) {
  const auto payload = detail::prepare_text(text, m, opts);
  const auto key = imagination_key(m.provider_id, payload, req);
  auto hit = cache.read(key);
  if (!hit) return std::nullopt;
  auto png = cache.read_image(key);
  auto meta = cache.metadata(key);
  if (!png || !meta) throw IntegrityError("imagination " + key.hex() + " is missing its image or index line");
  ImaginationRecord r{key, std::move(*png), {m.provider_id, to_float64(hit->values)},
                      meta->value("initial_loss", 0.0), meta->value("final_loss", 0.0), false};
  for (const auto& f : meta->value("flags", nlohmann::json::array()))
    if (f == "non-improving") r.non_improving = true;
  return r;
}

inline ImaginationRecord get_or_compute_imagination(const TextSnippet& text, Provider& provider, EmbeddingCache& cache,
                                                    const ImagineRequest& req, const EmbedOptions& opts = {}) {
  const auto m = provider.manifest();
  detail::require_capability(m, "imagine");
  if (auto hit = lookup_imagination(text, m, cache, req, opts)) return *hit;

  const auto payload = detail::prepare_text(text, m, opts);
  const auto key = imagination_key(m.provider_id, payload, req);
  auto resp = provider.imagine(payload, req.steps, req.seed);
  const auto f32 = to_float32(detail::checked_vector(std::move(resp.image_embedding), m, "imagine"));
  const bool non_improving = resp.final_loss > resp.initial_loss;
  nlohmann::json meta{{"provider_id", m.provider_id},
                      {"steps", req.steps},
                      {"seed", req.seed},
                      {"initial_loss", resp.initial_loss},
                      {"final_loss", resp.final_loss},
                      {"png", cache.image_path(key).filename().string()},
                      {"flags", non_improving ? nlohmann::json::array({"non-improving"}) : nlohmann::json::array()}};
  cache.write_image(key, resp.png);
  cache.write(key, EntryKind::kImageEmbedding, f32, meta);
  return {key, std::move(resp.png), {m.provider_id, to_float64(f32)}, resp.initial_loss, resp.final_loss, non_improving};
}

}  // namespace vismetric
