#pragma once

// Persistent content-addressed store for embeddings and imaginations.
//
// Layout under the cache root:
//   entries/<hex>.bin   binary vector entries (see encode_entry)
//   images/<hex>.png    imagination images
//   index.jsonl         one JSON line per published entry (metadata)
//   quarantine/         corrupted entries moved aside by reads or verify()
//
// Entries are write-once: publication goes through a temp file and link(2),
// which fails rather than replacing an existing entry.

#include <unistd.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vismetric/codec.hpp"
#include "vismetric/error.hpp"
#include "vismetric/text.hpp"

namespace vismetric {

enum class RequestKind { kTextEmbed, kTokenEmbed, kImageEmbed, kImagine };

inline std::string_view request_tag(RequestKind k) {
  switch (k) {
    case RequestKind::kTextEmbed: return "TEXT_EMBED";
    case RequestKind::kTokenEmbed: return "TOKEN_EMBED";
    case RequestKind::kImageEmbed: return "IMAGE_EMBED";
    case RequestKind::kImagine: return "IMAGINE";
  }
  return "?";
}

/// SHA-256 over provider id, request tag, canonical payload and optional integers.
/// Strings are NFC-normalized UTF-8 preceded by their byte length; all integers
/// are 8-byte big-endian.
struct CacheKey {
  codec::Digest digest{};

  std::string hex() const { return codec::to_hex(digest); }
  bool operator==(const CacheKey&) const = default;

  static codec::Bytes canonical_bytes(std::string_view provider_id, RequestKind kind, std::string_view payload,
                                      std::span<const std::uint64_t> integers = {}) {
    codec::Bytes b;
    auto put_string = [&b](std::string_view s) {
      codec::put_be64(b, s.size());
      b.insert(b.end(), s.begin(), s.end());
    };
    put_string(text::nfc(provider_id));
    put_string(request_tag(kind));
    put_string(text::nfc(payload));
    for (auto v : integers) codec::put_be64(b, v);
    return b;
  }

  static CacheKey make(std::string_view provider_id, RequestKind kind, std::string_view payload,
                       std::span<const std::uint64_t> integers = {}) {
    const auto bytes = canonical_bytes(provider_id, kind, payload, integers);
    return CacheKey{codec::sha256(bytes)};
  }
};

enum class EntryKind : std::uint8_t { kTextEmbedding = 1, kImageEmbedding = 2, kTokenEmbeddings = 3 };

inline std::string to_string(EntryKind k) {
  switch (k) {
    case EntryKind::kTextEmbedding: return "text-embedding";
    case EntryKind::kImageEmbedding: return "image-embedding";
    case EntryKind::kTokenEmbeddings: return "token-embeddings";
  }
  return "?";
}

inline constexpr std::uint16_t kEntryVersion = 1;
inline constexpr std::size_t kEntryHeaderSize = 4 + 2 + 1 + 4;

/// "IMGE" | version u16 LE | kind u8 | dim u32 LE | dim x f32 LE | CRC-32 (LE) of all preceding bytes.
inline codec::Bytes encode_entry(EntryKind kind, std::span<const float> values) {
  static_assert(std::endian::native == std::endian::little, "cache format assumes a little-endian host");
  codec::Bytes b = {'I', 'M', 'G', 'E'};
  codec::put_le16(b, kEntryVersion);
  b.push_back(static_cast<std::uint8_t>(kind));
  codec::put_le32(b, static_cast<std::uint32_t>(values.size()));
  const auto* raw = reinterpret_cast<const std::uint8_t*>(values.data());
  b.insert(b.end(), raw, raw + values.size() * sizeof(float));
  codec::put_le32(b, codec::crc32(b));
  return b;
}

struct DecodedEntry {
  EntryKind kind;
  std::vector<float> values;
};

inline DecodedEntry decode_entry(std::span<const std::uint8_t> b) {
  if (b.size() < kEntryHeaderSize + 4) throw IntegrityError("cache entry truncated");
  if (std::memcmp(b.data(), "IMGE", 4) != 0) throw IntegrityError("cache entry has bad magic");
  if (codec::get_le16(b.data() + 4) != kEntryVersion) throw IntegrityError("cache entry has unsupported version");
  const auto kind = b[6];
  if (kind < 1 || kind > 3) throw IntegrityError("cache entry has unknown kind");
  const std::uint32_t dim = codec::get_le32(b.data() + 7);
  if (b.size() != kEntryHeaderSize + std::size_t{dim} * 4 + 4) throw IntegrityError("cache entry dim does not match payload length");
  const std::uint32_t stored = codec::get_le32(b.data() + b.size() - 4);
  if (codec::crc32(b.first(b.size() - 4)) != stored) throw IntegrityError("cache entry CRC mismatch");
  DecodedEntry e{static_cast<EntryKind>(kind), std::vector<float>(dim)};
  std::memcpy(e.values.data(), b.data() + kEntryHeaderSize, std::size_t{dim} * 4);
  return e;
}

inline std::vector<float> to_float32(std::span<const double> v) { return {v.begin(), v.end()}; }
inline std::vector<double> to_float64(std::span<const float> v) { return {v.begin(), v.end()}; }

struct CacheStats {
  std::map<std::string, std::size_t> entries_by_kind;
  std::size_t images = 0;
  std::size_t quarantined = 0;
  std::size_t bytes = 0;
};

class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "entries");
    std::filesystem::create_directories(root_ / "images");
    std::filesystem::create_directories(root_ / "quarantine");
    load_index();
  }

  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path entry_path(const CacheKey& key) const { return root_ / "entries" / (key.hex() + ".bin"); }
  std::filesystem::path image_path(const CacheKey& key) const { return root_ / "images" / (key.hex() + ".png"); }

  bool contains(const CacheKey& key) const { return std::filesystem::exists(entry_path(key)); }

  /// Absent -> nullopt. Corrupted -> entry quarantined, IntegrityError thrown.
  std::optional<DecodedEntry> read(const CacheKey& key) const {
    const auto path = entry_path(key);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    codec::Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    try {
      return decode_entry(bytes);
    } catch (const IntegrityError& e) {
      quarantine(path);
      throw IntegrityError(path.filename().string() + ": " + e.what() + " (quarantined)");
    }
  }

  /// Publishes an entry unless one already exists; returns true if this call published it.
  bool write(const CacheKey& key, EntryKind kind, std::span<const float> values, const nlohmann::json& meta = {}) {
    const bool published = publish(entry_path(key), encode_entry(kind, values));
    if (published) {
      nlohmann::json line = meta.is_object() ? meta : nlohmann::json::object();
      line["key"] = key.hex();
      line["kind"] = to_string(kind);
      line["dim"] = values.size();
      append_index(line);
    }
    return published;
  }

  bool write_image(const CacheKey& key, std::span<const std::uint8_t> png) { return publish(image_path(key), {png.begin(), png.end()}); }

  std::optional<codec::Bytes> read_image(const CacheKey& key) const {
    std::ifstream in(image_path(key), std::ios::binary);
    if (!in) return std::nullopt;
    return codec::Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }

  /// Latest index metadata for a key, if any.
  std::optional<nlohmann::json> metadata(const CacheKey& key) const {
    std::lock_guard lock(mutex_);
    auto it = index_.find(key.hex());
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  CacheStats stats() const {
    CacheStats s;
    for (const auto& e : std::filesystem::directory_iterator(root_ / "entries")) {
      if (e.path().extension() != ".bin") continue;
      s.bytes += e.file_size();
      std::ifstream in(e.path(), std::ios::binary);
      codec::Bytes head(kEntryHeaderSize);
      in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
      const auto kind = in.gcount() == static_cast<std::streamsize>(kEntryHeaderSize) ? head[6] : 0;
      ++s.entries_by_kind[kind >= 1 && kind <= 3 ? to_string(static_cast<EntryKind>(kind)) : "unknown"];
    }
    for (const auto& e : std::filesystem::directory_iterator(root_ / "images")) {
      if (e.path().extension() != ".png") continue;
      ++s.images;
      s.bytes += e.file_size();
    }
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(root_ / "quarantine")) ++s.quarantined;
    return s;
  }

  /// Checks every entry; corrupted ones are quarantined. Returns their file names.
  std::vector<std::string> verify() const {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(root_ / "entries"))
      if (e.path().extension() == ".bin") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<std::string> bad;
    for (const auto& p : files) {
      std::ifstream in(p, std::ios::binary);
      codec::Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      in.close();
      try {
        decode_entry(bytes);
      } catch (const IntegrityError&) {
        bad.push_back(p.filename().string());
        quarantine(p);
      }
    }
    std::vector<std::filesystem::path> images;
    for (const auto& e : std::filesystem::directory_iterator(root_ / "images"))
      if (e.path().extension() == ".png") images.push_back(e.path());
    std::sort(images.begin(), images.end());
    for (const auto& p : images) {
      std::ifstream in(p, std::ios::binary);
      codec::Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      in.close();
      if (!codec::looks_like_png(bytes)) {
        bad.push_back(p.filename().string());
        quarantine(p);
      }
    }
    return bad;
  }

 private:
  bool publish(const std::filesystem::path& final_path, const codec::Bytes& bytes) const {
    if (std::filesystem::exists(final_path)) return false;
    const auto tmp = final_path.parent_path() / (final_path.filename().string() + ".tmp." + unique_suffix());
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw Error("cache: cannot write " + tmp.string());
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      out.flush();
      if (!out) throw Error("cache: short write to " + tmp.string());
    }
    const bool linked = ::link(tmp.c_str(), final_path.c_str()) == 0;
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    return linked;
  }

  void quarantine(const std::filesystem::path& p) const {
    std::error_code ec;
    std::filesystem::rename(p, root_ / "quarantine" / (p.filename().string() + "." + unique_suffix()), ec);
  }

  static std::string unique_suffix() {
    thread_local std::mt19937_64 rng(std::random_device{}());
    return std::to_string(::getpid()) + "-" + codec::to_hex(codec::sha256(std::to_string(rng()))).substr(0, 12);
  }

  void load_index() {
    std::ifstream in(root_ / "index.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        if (!j.contains("key")) continue;
        auto key = j["key"].get<std::string>();
        index_[key] = std::move(j);
      } catch (const nlohmann::json::exception&) {
        // A torn trailing line from an interrupted writer; the entry files stay authoritative.
      }
    }
  }

  void append_index(const nlohmann::json& line) {
    std::lock_guard lock(mutex_);
    std::ofstream out(root_ / "index.jsonl", std::ios::binary | std::ios::app);
    out << line.dump() << '\n';
    index_[line["key"].get<std::string>()] = line;
  }

  std::filesystem::path root_;
  mutable std::mutex mutex_;
  std::map<std::string, nlohmann::json> index_;
};

}  // namespace vismetric
