#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "baq/elicitation.hpp"
#include "baq/error.hpp"
#include "httplib.h"

using namespace baq;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

// Local chat-completion endpoint that answers every request with `reply`.
class MockServer {
 public:
  explicit MockServer(std::string reply) : reply_(std::move(reply)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++calls;
      {
        std::lock_guard lock(mutex_);
        last_auth = req.get_header_value("Authorization");
        last_body = nlohmann::json::parse(req.body);
      }
      const nlohmann::json body = {{"choices", {{{"message", {{"role", "assistant"}, {"content", reply_}}}}}}};
      res.set_content(body.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::atomic<int> calls{0};
  std::string last_auth;
  nlohmann::json last_body;

 private:
  std::string reply_;
  httplib::Server server_;
  std::mutex mutex_;
  int port_ = 0;
  std::thread thread_;
};

std::vector<PersonaProfile> personas(std::size_t n) {
  std::vector<PersonaProfile> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"p" + std::to_string(i), "Profile " + std::to_string(i)});
  return out;
}

std::vector<QuestionSpec> questions(std::size_t m, std::size_t K = 4) {
  std::vector<QuestionSpec> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back({"q" + std::to_string(i), "Question " + std::to_string(i), K, {}});
  return out;
}

ApiConfig fast_config(const std::string& url) {
  ApiConfig c;
  c.base_url = url;
  c.retries = 0;
  c.backoff_initial_ms = 0;
  c.timeout_seconds = 5;
  return c;
}

}  // namespace

TEST_CASE("four-category prompt reproduces the reference template") {
  const PersonaProfile persona{"p", "A retired teacher from Ohio."};
  const QuestionSpec question{"q", "How important is family in your life?", 4, {}};
  const auto p = build_prompt(persona, question);
  const std::string system =
      "You are an expert in simulating human survey responses. You will be given:\n"
      "- a detailed persona profile describing a human's values, beliefs, and background;\n"
      "- a survey question with ordinal response options numbered 1 to 4.\n"
      "Your task is to predict the persona's *response distribution* to the question.\n"
      "\n"
      "Important instructions:\n"
      "- Responses are **ordinal**: higher numbers indicate stronger agreement, endorsement, or intensity (as "
      "implied by the question).\n"
      "- Output a probability distribution over responses {1,2,3,4}.\n"
      "- The distribution should reflect realistic human uncertainty: do NOT assume the persona always responds "
      "deterministically.\n"
      "- If the persona strongly aligns with one side, assign higher probability there, but still allow nonzero "
      "probability for nearby options.\n"
      "- The probabilities must be non-negative and sum to exactly 1.\n"
      "- Avoid assigning probability 1.0 or 0.0 unless the persona makes all other responses essentially "
      "impossible.\n"
      "Output format:\n"
      "Return ONLY a JSON-style list of four numbers: [p1, p2, p3, p4]. Do not include any explanation or "
      "additional text.";
  const std::string user =
      "PERSONA PROFILE:\n"
      "A retired teacher from Ohio.\n"
      "\n"
      "SURVEY QUESTION:\n"
      "How important is family in your life?\n"
      "\n"
      "FORMAT INSTRUCTIONS: \n"
      "Return ONLY a JSON-style list of four numbers: [p1, p2, p3, p4]. Do not include any explanation or "
      "additional text.";
  CHECK(p.system == system);
  CHECK(p.user == user);
  CHECK(build_prompt(persona, question).system == p.system);
}

TEST_CASE("prompts for other category counts") {
  const PersonaProfile persona{"p", "Someone."};
  const QuestionSpec q5{"q", "Rate it.", 5, {"a", "b", "c", "d", "e"}};
  const auto p = build_prompt(persona, q5);
  CHECK(p.system.find("numbered 1 to 5.") != std::string::npos);
  CHECK(p.system.find("{1,2,3,4,5}") != std::string::npos);
  CHECK(p.system.find("list of five numbers: [p1, p2, p3, p4, p5]") != std::string::npos);
  CHECK(p.user.find("Rate it.\n1. a\n2. b\n3. c\n4. d\n5. e\n") != std::string::npos);
  CHECK(p.system.find("sum to exactly 1") != std::string::npos);
  const auto mode = build_mode_prompt(persona, q5);
  CHECK(mode.user.find("single integer from 1 to 5") != std::string::npos);
  CHECK_THROWS_AS(build_prompt(persona, QuestionSpec{"q", "x", 3, {"a"}}), Error);
}

TEST_CASE("distribution parsing") {
  const auto a = parse_distribution("[0.1, 0.2, 0.3, 0.4]", 4);
  CHECK(a == std::vector<double>{0.1, 0.2, 0.3, 0.4});
  const auto b = parse_distribution("Sure: [0.25, 0.25, 0.25, 0.26]", 4);
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(b[k] - 0.25 / 1.01) <= 1e-15);
  CHECK(std::abs(b[3] - 0.26 / 1.01) <= 1e-15);
  CHECK_THROWS_AS(parse_distribution("probabilities: [0.5, 0.5, 0.2, 0.1]", 4), Error);
  CHECK_THROWS_AS(parse_distribution("[0.5, 0.5]", 4), Error);
  CHECK_THROWS_AS(parse_distribution("[1.2, -0.2, 0.0, 0.0]", 4), Error);
  CHECK_THROWS_AS(parse_distribution("no list here", 4), Error);
  CHECK(parse_distribution("see [note] then [1e-1, 2e-1, 3e-1, 4e-1]", 4)[3] == 0.4);
}

TEST_CASE("mode parsing") {
  CHECK(parse_mode("3", 4) == 2);
  CHECK(parse_mode(" Answer: 1\n", 4) == 0);
  CHECK_THROWS_AS(parse_mode("5", 4), Error);
  CHECK_THROWS_AS(parse_mode("0", 4), Error);
  CHECK_THROWS_AS(parse_mode("2 or 3", 4), Error);
  CHECK_THROWS_AS(parse_mode("2.5", 4), Error);
  CHECK_THROWS_AS(parse_mode("none", 4), Error);
}

TEST_CASE("api config round-trip") {
  ApiConfig c;
  c.model = "m";
  c.sampling = {{"temperature", 0.7}};
  c.retries = 1;
  const auto back = api_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(api_config_from_json({{"shards", 0}}), Error);
}

TEST_CASE("elicitation against a local endpoint with a warm cache") {
  MockServer server("[0.7,0.1,0.1,0.1]");
  TempDir cache("baq_test_elicit_cache");
  setenv("BAQ_TEST_TOKEN", "secret", 1);
  auto config = fast_config(server.url());
  config.token_env = "BAQ_TEST_TOKEN";
  config.sampling = {{"temperature", 1.0}};

  const auto first = elicit_tensor(personas(3), questions(4), config, cache.str());
  CHECK(server.calls == 12);
  CHECK(first.stats.network_calls == 12);
  CHECK(first.stats.cache_hits == 0);
  CHECK(server.last_auth == "Bearer secret");
  CHECK(server.last_body["model"] == config.model);
  CHECK(server.last_body["temperature"] == 1.0);
  CHECK(server.last_body["messages"].size() == 2);
  const auto& t = first.bundle.tensor;
  CHECK(t.n_personas() == 3);
  CHECK(t.n_questions() == 4);
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t x = 0; x < 4; ++x) {
      CHECK(std::abs(t.prob(p, x, 0) - 0.7) <= 1e-15);
      CHECK(std::abs(t.prob(p, x, 3) - 0.1) <= 1e-15);
    }
  CHECK(first.bundle.persona_ids == std::vector<std::string>{"p0", "p1", "p2"});

  const auto second = elicit_tensor(personas(3), questions(4), config, cache.str());
  CHECK(server.calls == 12);
  CHECK(second.stats.network_calls == 0);
  CHECK(second.stats.cache_hits == 12);
  CHECK(second.bundle.tensor == t);

  // Changing the sampling settings invalidates the cache.
  config.sampling = {{"temperature", 0.5}};
  const auto third = elicit_tensor(personas(1), questions(1), config, cache.str());
  CHECK(third.stats.network_calls == 1);

  const auto manifest = nlohmann::json::parse(read_file((cache.path / "manifest.json").string()));
  CHECK(manifest["status"] == "complete");
}

TEST_CASE("a failing pair aborts after the rest complete") {
  TempDir cache("baq_test_elicit_fault");
  const auto ps = personas(3);
  const auto qs = questions(4);
  auto config = fast_config("http://unused");
  config.max_concurrency = 3;
  std::atomic<int> calls{0};
  const Transport transport = [&](const ApiConfig&, const Prompt& p) -> std::string {
    ++calls;
    if (p.user.find("Profile 1\n") != std::string::npos && p.user.find("Question 2\n") != std::string::npos)
      throw std::runtime_error("injected fault");
    return "[0.25, 0.25, 0.25, 0.25]";
  };
  CHECK_THROWS_AS(elicit_tensor(ps, qs, config, cache.str(), transport), Error);
  CHECK(calls == 12);
  const auto manifest = nlohmann::json::parse(read_file((cache.path / "manifest.json").string()));
  CHECK(manifest["status"] == "aborted");
  CHECK(manifest["completed"].size() == 11);
  REQUIRE(manifest["failed"].size() == 1);
  CHECK(manifest["failed"][0]["pair"] == nlohmann::json::array({"p1", "q2"}));

  // Resuming only asks for the missing pair.
  calls = 0;
  const Transport healthy = [&](const ApiConfig&, const Prompt&) -> std::string {
    ++calls;
    return "[0.4, 0.3, 0.2, 0.1]";
  };
  const auto done = elicit_tensor(ps, qs, config, cache.str(), healthy);
  CHECK(calls == 1);
  CHECK(std::abs(done.bundle.tensor.prob(1, 2, 0) - 0.4) <= 1e-15);
  CHECK(done.bundle.tensor.prob(0, 0, 0) == 0.25);
}

TEST_CASE("retries recover from bad replies and keep the rejects") {
  TempDir cache("baq_test_elicit_retry");
  auto config = fast_config("http://unused");
  config.retries = 2;
  std::atomic<int> calls{0};
  const Transport flaky = [&](const ApiConfig&, const Prompt&) -> std::string {
    return ++calls == 1 ? "I think [0.9, 0.9]" : "[0.5, 0.5, 0.0, 0.0]";
  };
  const auto out = elicit_tensor(personas(1), questions(1), config, cache.str(), flaky);
  CHECK(calls == 2);
  CHECK(out.records[0].attempts == 2);
  CHECK(read_file((cache.path / "rejects.jsonl").string()).find("[0.9, 0.9]") != std::string::npos);
  // Zeros are lifted to the floor.
  CHECK(out.bundle.tensor.prob(0, 0, 3) == kLikelihoodFloor);
}

TEST_CASE("mode elicitation") {
  MockServer server("3");
  TempDir cache("baq_test_elicit_modes");
  const auto config = fast_config(server.url());
  const auto modes = elicit_modes(personas(2), questions(3), config, cache.str());
  CHECK(modes.modes == std::vector<std::size_t>(6, 2));
  CHECK(server.calls == 6);
  const auto again = elicit_modes(personas(2), questions(3), config, cache.str());
  CHECK(again.stats.network_calls == 0);
  CHECK(server.calls == 6);
}

TEST_CASE("persona and question files") {
  TempDir dir("baq_test_elicit_files");
  fs::create_directories(dir.path);
  write_file((dir.path / "p.json").string(), R"({"personas":[{"id":"a","profile":"Alpha"}]})");
  write_file((dir.path / "q.json").string(),
             R"({"questions":[{"id":"x","text":"X?","n_categories":3,"labels":["lo","mid","hi"]}]})");
  const auto ps = load_personas((dir.path / "p.json").string());
  const auto qs = load_questions((dir.path / "q.json").string());
  REQUIRE(ps.size() == 1);
  CHECK(ps[0].profile_text == "Alpha");
  REQUIRE(qs.size() == 1);
  CHECK(qs[0].n_categories == 3);
  CHECK(qs[0].labels[2] == "hi");
}
