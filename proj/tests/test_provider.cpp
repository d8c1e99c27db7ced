#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "test_util.hpp"
#include "vismetric/provider.hpp"

using namespace vismetric;
using nlohmann::json;

namespace {

const std::filesystem::path kProtocol = std::filesystem::path(VISMETRIC_FIXTURES) / "protocol";

json load_fixture(const std::string& name) {
  std::ifstream in(kProtocol / (name + ".json"));
  if (!in) throw std::runtime_error("missing fixture " + name);
  return json::parse(in);
}

// Replays every recorded exchange: a request matching method, path and body gets
// the recorded status and body; anything else is answered with 422.
class ReplayServer {
 public:
  ReplayServer() {
    for (const auto& e : std::filesystem::directory_iterator(kProtocol))
      if (e.path().extension() == ".json") {
        std::ifstream in(e.path());
        fixtures_.push_back(json::parse(in));
      }
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      ++hits_;
      json body = nullptr;
      if (!req.body.empty()) body = json::parse(req.body, nullptr, false);
      for (const auto& f : fixtures_) {
        const auto& r = f["request"];
        if (r["method"] == req.method && r["path"] == req.path && r["body"] == body) {
          if (override_status_ && busy_left_ > 0) {
            --busy_left_;
            res.status = 503;
            res.set_content(R"({"error":"busy"})", "application/json");
            return;
          }
          res.status = f["response"]["status"].get<int>();
          res.set_content(f["response"]["body"].dump(), "application/json");
          return;
        }
      }
      res.status = 422;
      res.set_content(json{{"error", "no recorded exchange"}}.dump(), "application/json");
    };
    server_.Get(R"(/v1/.*)", handler);
    server_.Post(R"(/v1/.*)", handler);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~ReplayServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int hits() const { return hits_.load(); }
  void busy_for(int n) {
    override_status_ = true;
    busy_left_ = n;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::vector<json> fixtures_;
  std::atomic<int> hits_{0};
  std::atomic<bool> override_status_{false};
  std::atomic<int> busy_left_{0};
};

codec::Bytes bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

RetryPolicy fast_retry(int attempts = 3) { return {attempts, std::chrono::milliseconds(1)}; }

}  // namespace

TEST(Protocol, FixturesAreWellFormed) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(kProtocol)) {
    if (e.path().extension() != ".json") continue;
    ++n;
    std::ifstream in(e.path());
    const auto f = json::parse(in);
    EXPECT_EQ(f["name"], e.path().stem().string());
    EXPECT_TRUE(f["request"]["method"] == "GET" || f["request"]["method"] == "POST");
    EXPECT_TRUE(f["request"]["path"].get<std::string>().starts_with("/v1/"));
    EXPECT_TRUE(f["response"]["status"].is_number_integer());
  }
  EXPECT_GE(n, 9u);
}

TEST(Protocol, ClientRequestsMatchRecordings) {
  EXPECT_EQ(wire::embed_text_request({"a photo of a cat", "a dog"}, false), load_fixture("embed_text")["request"]["body"]);
  EXPECT_EQ(wire::embed_text_request({"a cat"}, true), load_fixture("embed_text_tokens")["request"]["body"]);
  EXPECT_EQ(wire::imagine_request("a red bird", 10, 7), load_fixture("imagine")["request"]["body"]);
}

TEST(Protocol, ResponsesRoundTrip) {
  const auto embed = load_fixture("embed_text_tokens")["response"]["body"];
  const auto parsed = wire::parse_embed_text_response(embed, 1);
  EXPECT_EQ(wire::embed_text_response(parsed, true), embed);
  const auto imagine = load_fixture("imagine")["response"]["body"];
  EXPECT_EQ(wire::imagine_response(wire::parse_imagine_response(imagine)), imagine);
  auto manifest = load_fixture("manifest")["response"]["body"];
  auto round = ProviderManifest::from_json(manifest).to_json();
  std::sort(manifest["supports"].begin(), manifest["supports"].end());
  EXPECT_EQ(round, manifest);
}

TEST(Protocol, MalformedResponsesAreProviderErrors) {
  EXPECT_THROW(wire::parse_embed_text_response(json{{"embeddings", json::array()}}, 0), ProviderError);
  EXPECT_THROW(wire::parse_embed_text_response(json{{"provider_id", "p"}, {"embeddings", {{1.0}}}}, 2), ProviderError);
  EXPECT_THROW(wire::parse_embed_text_response(
                   json{{"provider_id", "p"}, {"embeddings", {{1.0}}},
                        {"token_embeddings", {{{"tokens", {"a", "b"}}, {"vectors", {{1.0}}}}}}},
                   1),
               ProviderError);
  auto imagine = load_fixture("imagine")["response"]["body"];
  imagine["png_b64"] = codec::base64_encode(bytes_of("not a png"));
  EXPECT_THROW(wire::parse_imagine_response(imagine), ProviderError);
  imagine.erase("final_loss");
  EXPECT_THROW(wire::parse_imagine_response(imagine), ProviderError);
  EXPECT_THROW(ProviderManifest::from_json(json{{"provider_id", "p"}, {"embedding_dim", 0}, {"max_text_tokens", 77}, {"supports", json::array()}}),
               ProviderError);
  EXPECT_THROW(ProviderManifest::from_json(json{{"provider_id", "p"}, {"embedding_dim", 4}, {"max_text_tokens", 77}, {"supports", {"teleport"}}}),
               ProviderError);
}

TEST(Protocol, ToyProviderSpeaksTheSameShapes) {
  ToyProvider toy;
  const auto resp = toy.embed_text({"a cat"}, true);
  const auto j = wire::embed_text_response(resp, true);
  const auto recorded = load_fixture("embed_text_tokens")["response"]["body"];
  for (const auto& [k, v] : recorded.items()) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["token_embeddings"][0]["tokens"], recorded["token_embeddings"][0]["tokens"]);
  const auto im = wire::imagine_response(toy.imagine("a red bird", 5, 7));
  for (const auto& [k, v] : load_fixture("imagine")["response"]["body"].items()) EXPECT_TRUE(im.contains(k)) << k;
}

TEST(HttpClient, ReplaysRecordedExchanges) {
  ReplayServer server;
  HttpProvider p(server.url(), fast_retry());
  const auto m = p.manifest();
  EXPECT_EQ(m.provider_id, "fixture-clip");
  EXPECT_EQ(m.embedding_dim, 4u);
  EXPECT_EQ(m.max_text_tokens, 77);
  EXPECT_TRUE(m.supports_kind("imagine"));
  p.manifest();
  EXPECT_EQ(p.calls(), 1u);  // manifest is fetched once

  const auto e = p.embed_text({"a photo of a cat", "a dog"}, false);
  ASSERT_EQ(e.embeddings.size(), 2u);
  EXPECT_EQ(e.embeddings[1], (std::vector<double>{0.25, -0.5, 0.75, 0.125}));
  EXPECT_TRUE(e.token_embeddings.empty());

  const auto t = p.embed_text({"a cat"}, true);
  ASSERT_EQ(t.token_embeddings.size(), 1u);
  EXPECT_EQ(t.token_embeddings[0].tokens, (std::vector<std::string>{"a", "cat"}));

  const auto im = p.imagine("a red bird", 10, 7);
  EXPECT_TRUE(codec::looks_like_png(im.png));
  const auto img = codec::decode_png(im.png);
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 2u);
  EXPECT_EQ(im.final_loss, -0.875);

  const auto image_b64 = load_fixture("embed_image")["request"]["body"]["png_b64"].get<std::string>();
  const auto v = p.embed_image(codec::base64_decode(image_b64));
  EXPECT_EQ(v, (std::vector<double>{0.1, 0.2, 0.3, 0.4}));
}

TEST(HttpClient, StatusCodesMapToErrors) {
  ReplayServer server;
  HttpProvider p(server.url(), fast_retry());
  std::string long_text;
  for (int i = 0; i < 200; ++i) long_text += (i ? " " : "") + std::string("word");
  try {
    p.embed_text({long_text}, false);
    FAIL() << "no LengthError";
  } catch (const LengthError& e) {
    EXPECT_NE(std::string(e.what()).find("77"), std::string::npos);
  }
  EXPECT_EQ(server.hits(), 1);  // 400 is not retried

  try {
    p.imagine("nothing recorded", 10, 7);
    FAIL() << "no ProviderError";
  } catch (const ProviderError& e) {
    EXPECT_FALSE(e.retryable());
    EXPECT_EQ(e.exit_code(), 3);
  }
  EXPECT_EQ(server.hits(), 2);  // 422 is not retried
}

TEST(HttpClient, RetriesBusyThenSucceeds) {
  ReplayServer server;
  server.busy_for(2);
  HttpProvider p(server.url(), fast_retry(3));
  const auto im = p.imagine("a red bird", 10, 7);
  EXPECT_EQ(im.initial_loss, -0.125);
  EXPECT_EQ(server.hits(), 3);
  EXPECT_EQ(p.calls(), 3u);
}

TEST(HttpClient, PersistentBusyIsRetryableError) {
  ReplayServer server;
  HttpProvider p(server.url(), fast_retry(4));
  try {
    p.imagine("busy", 10, 7);
    FAIL() << "no ProviderError";
  } catch (const ProviderError& e) {
    EXPECT_TRUE(e.retryable());
    EXPECT_NE(std::string(e.what()).find("503"), std::string::npos);
  }
  EXPECT_EQ(server.hits(), 4);
}

TEST(HttpClient, UnreachableServiceIsRetryableError) {
  HttpProvider p("http://127.0.0.1:1", fast_retry(2));
  try {
    p.manifest();
    FAIL() << "no ProviderError";
  } catch (const ProviderError& e) {
    EXPECT_TRUE(e.retryable());
  }
}

TEST(HttpClient, CacheAccessorsWorkOverHttp) {
  ReplayServer server;
  testutil::TempDir dir("provider");
  EmbeddingCache cache(dir.path());
  HttpProvider p(server.url(), fast_retry());
  const auto r = get_or_compute_imagination(TextSnippet("a stubborn bird"), p, cache, {10, 7});
  EXPECT_TRUE(r.non_improving);
  const auto calls = p.calls();
  get_or_compute_imagination(TextSnippet("a stubborn bird"), p, cache, {10, 7});
  EXPECT_EQ(p.calls(), calls);
  EXPECT_EQ(cache.read_image(r.key), r.png);
}

TEST(Base64, KnownVectorsAndRoundTrip) {
  EXPECT_EQ(codec::base64_encode(bytes_of("")), "");
  EXPECT_EQ(codec::base64_encode(bytes_of("f")), "Zg==");
  EXPECT_EQ(codec::base64_encode(bytes_of("fo")), "Zm8=");
  EXPECT_EQ(codec::base64_encode(bytes_of("foobar")), "Zm9vYmFy");
  std::mt19937 rng(5);
  for (int n = 0; n < 64; ++n) {
    codec::Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    EXPECT_EQ(codec::base64_decode(codec::base64_encode(b)), b);
  }
  EXPECT_THROW(codec::base64_decode("Zm9v*mFy"), ValidationError);
}

TEST(ProviderFactory, SelectsImplementation) {
  EXPECT_EQ(make_provider("toy")->manifest().provider_id, "toy-clip");
  EXPECT_EQ(make_provider("toy-bert")->manifest().provider_id, "toy-bert");
  EXPECT_FALSE(make_provider("toy-bert")->manifest().supports_kind("imagine"));
  EXPECT_NE(dynamic_cast<HttpProvider*>(make_provider("http://127.0.0.1:1").get()), nullptr);
}
