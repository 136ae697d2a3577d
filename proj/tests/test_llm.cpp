#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <set>
#include <thread>

#include <httplib.h>

#include "refinery/error.hpp"
#include "refinery/llm/backends.hpp"
#include "refinery/llm/cassette.hpp"
#include "refinery/llm/gateway.hpp"

using namespace refinery;
using namespace refinery::llm;
namespace fs = std::filesystem;

namespace {

ChatRequest basic(std::string user = "hello") {
  ChatRequest r;
  r.model_id = "m";
  r.messages = {{Role::System, "sys"}, {Role::User, std::move(user)}};
  return r;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("refinery_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

class FlakyBackend : public Backend {
 public:
  explicit FlakyBackend(int failures, bool transient = true) : failures_(failures), transient_(transient) {}
  std::vector<Completion> complete(const ChatRequest& r) override {
    ++calls;
    if (failures_-- > 0) throw TransportError("boom", transient_, 503);
    return std::vector<Completion>(static_cast<std::size_t>(r.sample_count), Completion{"ok", r.model_id, {}, {}});
  }
  std::string_view name() const override { return "flaky"; }
  int calls = 0;

 private:
  int failures_;
  bool transient_;
};

}  // namespace

TEST_CASE("request validation") {
  CHECK_NOTHROW(basic().validate());
  ChatRequest r = basic();
  r.messages.clear();
  CHECK_THROWS_AS(r.validate(), Error);
  r = basic("");
  CHECK_THROWS_AS(r.validate(), Error);
  r = basic();
  r.messages.push_back({Role::System, "late"});
  CHECK_THROWS_AS(r.validate(), Error);
  r = basic();
  r.temperature = -0.1;
  CHECK_THROWS_AS(r.validate(), Error);
  r = basic();
  r.max_tokens = 0;
  CHECK_THROWS_AS(r.validate(), Error);
  r = basic();
  r.sample_count = 0;
  CHECK_THROWS_AS(r.validate(), Error);
  r = basic();
  r.messages.push_back({Role::Assistant, ""});
  r.messages.push_back({Role::User, "again"});
  CHECK_NOTHROW(r.validate());
}

TEST_CASE("cassette key is stable and sensitive") {
  auto a = cassette_key(basic());
  CHECK(a.size() == 64);
  CHECK(a == cassette_key(basic()));
  auto r = basic();
  r.sample_count = 20;
  CHECK(cassette_key(r) == a);
  r = basic();
  r.temperature = 1.0;
  CHECK(cassette_key(r) != a);
  r = basic();
  r.max_tokens = 7;
  CHECK(cassette_key(r) != a);
  r = basic();
  r.model_id = "other";
  CHECK(cassette_key(r) != a);
  CHECK(cassette_key(basic("hello ")) != a);
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("cassette keys do not collide over perturbed requests") {
  std::set<std::string> keys;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    ChatRequest r = basic("q" + std::to_string(i / 4));
    r.temperature = (i % 4 == 1) ? 0.5 : 0.0;
    if (i % 4 == 2) r.max_tokens = 512;
    if (i % 4 == 3) r.model_id = "m2";
    keys.insert(cassette_key(r));
  }
  CHECK(keys.size() == static_cast<std::size_t>(n));
}

TEST_CASE("cassette store round trip and replay") {
  auto dir = temp_dir("cassettes");
  CassetteStore store(dir);
  auto req = basic();
  CHECK_FALSE(store.load(cassette_key(req)));
  store.save(req, {Completion{"one", "m", std::chrono::milliseconds{3}, TokenCounts{5, 7}},
                   Completion{"two", "m", {}, {}}});
  auto c = store.load(cassette_key(req));
  REQUIRE(c);
  CHECK(c->completions.size() == 2);
  CHECK(c->completions[0].token_usage->completion == 7);
  CHECK(c->request.messages == req.messages);

  ReplayBackend replay(store);
  auto out = replay.complete(req);
  CHECK(out.size() == 1);
  CHECK(out[0].text == "one");
  req.sample_count = 2;
  CHECK(replay.complete(req).size() == 2);
  req.sample_count = 3;
  try {
    replay.complete(req);
    FAIL("expected a cache miss");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CacheMiss);
  }

  // Corrupt file surfaces as a cache error.
  {
    std::ofstream bad(store.path_for(cassette_key(basic("x"))));
    bad << "{not json";
  }
  CHECK_THROWS_AS(store.load(cassette_key(basic("x"))), Error);
  fs::remove_all(dir);
}

TEST_CASE("replay records misses from a fallback") {
  auto dir = temp_dir("record");
  auto scripted = std::make_shared<ScriptedBackend>(std::vector<ScriptedRule>{}, std::string("fresh"));
  ReplayBackend rec(CassetteStore(dir), scripted);
  CHECK(rec.complete(basic())[0].text == "fresh");
  CHECK(rec.recorded() == 1);
  ReplayBackend offline{CassetteStore(dir)};
  CHECK(offline.complete(basic())[0].text == "fresh");
  CHECK(offline.hits() == 1);
  fs::remove_all(dir);
}

TEST_CASE("scripted rules") {
  ScriptedRule sub{"apple", false, {"A1", "A2"}, {}};
  ScriptedRule rx{"height of (\\w+)", true, {"<response>$1 is tall</response>"}, {}};
  ScriptedBackend b({sub, rx}, std::string("default"));
  CHECK(b.complete(basic("an apple"))[0].text == "A1");
  CHECK(b.complete(basic("an apple"))[0].text == "A2");
  CHECK(b.complete(basic("an apple"))[0].text == "A1");
  CHECK(b.complete(basic("height of Lassen"))[0].text == "<response>Lassen is tall</response>");
  CHECK(b.complete(basic("nothing"))[0].text == "default");
  auto hits = b.hit_counts();
  CHECK(hits[0] == 3);
  CHECK(hits[1] == 1);
  CHECK(hits[-1] == 1);

  ScriptedBackend strict({sub});
  try {
    strict.complete(basic("pear"));
    FAIL("expected a scripted miss");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ScriptedMiss);
  }
  CHECK_THROWS_AS(ScriptedBackend({}), Error);

  auto from = ScriptedBackend::from_json(nlohmann::json::parse(
      R"({"rules":[{"match":"x","respond":["1","2"]}],"default":"d"})"));
  auto r = basic("x");
  r.sample_count = 3;
  auto samples = from->complete(r);
  CHECK(samples[0].text == "1");
  CHECK(samples[1].text == "2");
  CHECK(samples[2].text == "1");
}

TEST_CASE("gateway retries transient failures with backoff") {
  auto flaky = std::make_shared<FlakyBackend>(2);
  std::vector<long long> delays;
  Gateway gw(flaky, RetryPolicy{3, std::chrono::milliseconds{500}, 2.0}, 0.0,
             [&](std::chrono::milliseconds d) { delays.push_back(d.count()); });
  CHECK(gw.complete(basic()).text == "ok");
  CHECK(flaky->calls == 3);
  CHECK(delays == std::vector<long long>{500, 1000});
  CHECK(gw.invocation_count() == 1);
  CHECK(gw.ledger()[0].cassette_key == cassette_key(basic()));

  auto dead = std::make_shared<FlakyBackend>(5);
  Gateway gw2(dead, RetryPolicy{3, std::chrono::milliseconds{1}, 2.0}, 0.0, [](auto) {});
  CHECK_THROWS_AS(gw2.complete(basic()), TransportError);
  CHECK(dead->calls == 3);

  auto fatal = std::make_shared<FlakyBackend>(1, false);
  Gateway gw3(fatal, {}, 0.0, [](auto) {});
  CHECK_THROWS_AS(gw3.complete(basic()), TransportError);
  CHECK(fatal->calls == 1);
}

TEST_CASE("gateway rejects empty completions and returns samples") {
  auto empty = std::make_shared<ScriptedBackend>(std::vector<ScriptedRule>{}, std::string(""));
  Gateway gw(empty);
  try {
    gw.complete(basic());
    FAIL("expected empty completion");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyCompletion);
  }
  auto fine = std::make_shared<ScriptedBackend>(std::vector<ScriptedRule>{}, std::string("x"));
  Gateway gw2(fine);
  auto r = basic();
  r.sample_count = 4;
  CHECK(gw2.sample(r).size() == 4);
  CHECK(gw2.complete(r).text == "x");
  gw2.reset_ledger();
  CHECK(gw2.invocation_count() == 0);
}

TEST_CASE("transient status classes") {
  for (int s : {408, 425, 429, 500, 502, 503, 599}) CHECK(is_transient_status(s));
  for (int s : {400, 401, 403, 404, 422}) CHECK_FALSE(is_transient_status(s));
}

TEST_CASE("wire formats") {
  LiveBackend openai({WireFormat::OpenAIChat, "http://localhost:1/v1/chat/completions", "", 5});
  auto body = openai.build_body(basic());
  CHECK(body["messages"].size() == 2);
  CHECK(body["messages"][0]["role"] == "system");
  auto c = openai.parse_body(nlohmann::json::parse(
                                 R"({"model":"m","choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}})"),
                             "m");
  CHECK(c.text == "hi");
  CHECK(c.token_usage->prompt == 3);
  CHECK_THROWS_AS(openai.parse_body(nlohmann::json::parse(R"({"choices":[]})"), "m"), TransportError);

  LiveBackend anthropic({WireFormat::AnthropicMessages, "https://example.com/v1/messages", "", 5});
  auto ab = anthropic.build_body(basic());
  CHECK(ab["system"] == "sys");
  CHECK(ab["messages"].size() == 1);
  auto ac = anthropic.parse_body(
      nlohmann::json::parse(R"({"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]})"), "m");
  CHECK(ac.text == "ab");
  CHECK_THROWS_AS(LiveBackend({WireFormat::OpenAIChat, "not a url", "", 5}), Error);
}

TEST_CASE("live backend against a local fake provider") {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    int n = ++hits;
    if (n == 1) {
      res.status = 503;
      res.set_content("busy", "text/plain");
      return;
    }
    if (req.get_header_value("Authorization") != "Bearer k123") {
      res.status = 401;
      return;
    }
    auto body = nlohmann::json::parse(req.body);
    nlohmann::json out = {{"model", body["model"]},
                          {"choices", {{{"message", {{"content", "echo:" + body["messages"].back()["content"].get<std::string>()}}}}}}};
    res.set_content(out.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("REFINERY_TEST_KEY", "k123", 1);
  auto live = std::make_shared<LiveBackend>(LiveConfig{
      WireFormat::OpenAIChat, "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions",
      "REFINERY_TEST_KEY", 5});
  std::vector<long long> delays;
  Gateway gw(live, RetryPolicy{3, std::chrono::milliseconds{10}, 2.0}, 0.0,
             [&](std::chrono::milliseconds d) { delays.push_back(d.count()); });
  CHECK(gw.complete(basic("ping")).text == "echo:ping");
  CHECK(hits == 2);
  CHECK(delays.size() == 1);

  ::setenv("REFINERY_TEST_KEY", "wrong", 1);
  try {
    gw.complete(basic("ping"));
    FAIL("expected 401");
  } catch (const TransportError& e) {
    CHECK(e.status() == 401);
    CHECK_FALSE(e.transient());
  }
  server.stop();
  t.join();
}
