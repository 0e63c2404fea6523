#include "baq/elicitation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "baq/error.hpp"
#include "baq/hashing.hpp"
#include "httplib.h"

namespace baq {

using nlohmann::json;

namespace {

std::string number_word(std::size_t k) {
  static const char* words[] = {"zero", "one", "two", "three", "four", "five",
                                "six",  "seven", "eight", "nine", "ten"};
  return k <= 10 ? words[k] : std::to_string(k);
}

std::string category_set(std::size_t K) {
  std::string s = "{";
  for (std::size_t k = 1; k <= K; ++k) s += (k > 1 ? "," : "") + std::to_string(k);
  return s + "}";
}

std::string placeholder_list(std::size_t K) {
  std::string s = "[";
  for (std::size_t k = 1; k <= K; ++k) s += (k > 1 ? ", p" : "p") + std::to_string(k);
  return s + "]";
}

std::string question_block(const QuestionSpec& q) {
  std::string s = q.question_text;
  for (std::size_t i = 0; i < q.labels.size(); ++i)
    s += "\n" + std::to_string(i + 1) + ". " + q.labels[i];
  return s;
}

void check_inputs(const PersonaProfile& persona, const QuestionSpec& question) {
  require(!persona.profile_text.empty(), "persona '" + persona.persona_id + "' has an empty profile");
  require(question.n_categories >= 2, "question '" + question.question_id + "' needs K >= 2");
  require(question.labels.empty() || question.labels.size() == question.n_categories,
          "question '" + question.question_id + "' has the wrong number of labels");
}

std::string format_line(std::size_t K) {
  return "Return ONLY a JSON-style list of " + number_word(K) + " numbers: " + placeholder_list(K) +
         ". Do not include any explanation or additional text.";
}

std::string mode_format_line(std::size_t K) {
  return "Return ONLY a single integer from 1 to " + std::to_string(K) +
         ". Do not include any explanation or additional text.";
}

std::string user_text(const PersonaProfile& persona, const QuestionSpec& question,
                      const std::string& format) {
  return "PERSONA PROFILE:\n" + persona.profile_text + "\n\nSURVEY QUESTION:\n" +
         question_block(question) + "\n\nFORMAT INSTRUCTIONS: \n" + format;
}

}  // namespace

Prompt build_prompt(const PersonaProfile& persona, const QuestionSpec& question) {
  check_inputs(persona, question);
  const std::size_t K = question.n_categories;
  Prompt p;
  p.system =
      "You are an expert in simulating human survey responses. You will be given:\n"
      "- a detailed persona profile describing a human's values, beliefs, and background;\n"
      "- a survey question with ordinal response options numbered 1 to " + std::to_string(K) + ".\n"
      "Your task is to predict the persona's *response distribution* to the question.\n"
      "\n"
      "Important instructions:\n"
      "- Responses are **ordinal**: higher numbers indicate stronger agreement, endorsement, or "
      "intensity (as implied by the question).\n"
      "- Output a probability distribution over responses " + category_set(K) + ".\n"
      "- The distribution should reflect realistic human uncertainty: do NOT assume the persona "
      "always responds deterministically.\n"
      "- If the persona strongly aligns with one side, assign higher probability there, but still "
      "allow nonzero probability for nearby options.\n"
      "- The probabilities must be non-negative and sum to exactly 1.\n"
      "- Avoid assigning probability 1.0 or 0.0 unless the persona makes all other responses "
      "essentially impossible.\n"
      "Output format:\n" + format_line(K);
  p.user = user_text(persona, question, format_line(K));
  return p;
}

Prompt build_mode_prompt(const PersonaProfile& persona, const QuestionSpec& question) {
  check_inputs(persona, question);
  const std::size_t K = question.n_categories;
  Prompt p;
  p.system =
      "You are an expert in simulating human survey responses. You will be given:\n"
      "- a detailed persona profile describing a human's values, beliefs, and background;\n"
      "- a survey question with ordinal response options numbered 1 to " + std::to_string(K) + ".\n"
      "Your task is to predict the persona's *single most likely response* to the question.\n"
      "\n"
      "Important instructions:\n"
      "- Responses are **ordinal**: higher numbers indicate stronger agreement, endorsement, or "
      "intensity (as implied by the question).\n"
      "- Choose exactly one response from " + category_set(K) + ".\n"
      "Output format:\n" + mode_format_line(K);
  p.user = user_text(persona, question, mode_format_line(K));
  return p;
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

// Parses "[v, v, ...]" starting at text[open]; false if not a numeric list.
bool parse_list(std::string_view text, std::size_t open, std::vector<double>& out) {
  out.clear();
  std::size_t i = open + 1;
  auto skip = [&] {
    while (i < text.size() && is_space(text[i])) ++i;
  };
  skip();
  if (i < text.size() && text[i] == ']') return false;
  while (i < text.size()) {
    skip();
    const char* begin = text.data() + i;
    char* end = nullptr;
    const std::string token(begin, std::min<std::size_t>(64, text.size() - i));
    const double v = std::strtod(token.c_str(), &end);
    const std::size_t used = static_cast<std::size_t>(end - token.c_str());
    if (used == 0) return false;
    const char first = token[0];
    if (!(std::isdigit(static_cast<unsigned char>(first)) || first == '-' || first == '+' || first == '.'))
      return false;
    out.push_back(v);
    i += used;
    skip();
    if (i >= text.size()) return false;
    if (text[i] == ']') return true;
    if (text[i] != ',') return false;
    ++i;
  }
  return false;
}

}  // namespace

std::vector<double> parse_distribution(std::string_view raw, std::size_t K) {
  std::vector<double> values;
  for (std::size_t pos = raw.find('['); pos != std::string_view::npos; pos = raw.find('[', pos + 1)) {
    if (!parse_list(raw, pos, values)) continue;
    if (values.size() != K)
      fail(ErrorCode::ParseError, "expected " + std::to_string(K) + " probabilities, found " +
                                      std::to_string(values.size()));
    double sum = 0.0;
    for (double v : values) {
      if (!std::isfinite(v)) fail(ErrorCode::ParseError, "non-finite probability");
      if (v < 0.0) fail(ErrorCode::ParseError, "negative probability");
      sum += v;
    }
    if (!(std::abs(sum - 1.0) <= 0.05))
      fail(ErrorCode::ParseError, "probabilities sum to " + std::to_string(sum));
    if (sum != 1.0)
      for (double& v : values) v /= sum;
    return values;
  }
  fail(ErrorCode::ParseError, "no numeric list found");
}

std::size_t parse_mode(std::string_view raw, std::size_t K) {
  std::vector<long> ints;
  std::size_t i = 0;
  while (i < raw.size()) {
    if (std::isdigit(static_cast<unsigned char>(raw[i]))) {
      std::size_t j = i;
      while (j < raw.size() && std::isdigit(static_cast<unsigned char>(raw[j]))) ++j;
      if (j < raw.size() && raw[j] == '.' && j + 1 < raw.size() &&
          std::isdigit(static_cast<unsigned char>(raw[j + 1])))
        fail(ErrorCode::ParseError, "expected an integer answer");
      if (j - i > 9) fail(ErrorCode::ParseError, "answer out of range");
      ints.push_back(std::stol(std::string(raw.substr(i, j - i))));
      i = j;
    } else {
      ++i;
    }
  }
  if (ints.size() != 1) fail(ErrorCode::ParseError, "expected a single integer answer");
  if (ints[0] < 1 || static_cast<std::size_t>(ints[0]) > K)
    fail(ErrorCode::ParseError, "answer " + std::to_string(ints[0]) + " outside 1.." + std::to_string(K));
  return static_cast<std::size_t>(ints[0] - 1);
}

ApiConfig api_config_from_json(const json& j) {
  ApiConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.model = j.value("model", c.model);
  c.token_env = j.value("token_env", c.token_env);
  if (j.contains("sampling")) c.sampling = j["sampling"];
  c.max_concurrency = j.value("max_concurrency", c.max_concurrency);
  c.retries = j.value("retries", c.retries);
  c.backoff_initial_ms = j.value("backoff_initial_ms", c.backoff_initial_ms);
  c.backoff_max_ms = j.value("backoff_max_ms", c.backoff_max_ms);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.shards = j.value("shards", c.shards);
  require(c.max_concurrency >= 1, "max_concurrency must be at least 1");
  require(c.shards >= 1, "shards must be at least 1");
  require(c.sampling.is_object(), "sampling must be an object");
  return c;
}

json to_json(const ApiConfig& c) {
  return {{"base_url", c.base_url},
          {"model", c.model},
          {"token_env", c.token_env},
          {"sampling", c.sampling},
          {"max_concurrency", c.max_concurrency},
          {"retries", c.retries},
          {"backoff_initial_ms", c.backoff_initial_ms},
          {"backoff_max_ms", c.backoff_max_ms},
          {"timeout_seconds", c.timeout_seconds},
          {"shards", c.shards}};
}

std::string http_chat_completion(const ApiConfig& config, const Prompt& prompt) {
  httplib::Client client(config.base_url);
  const auto timeout = static_cast<time_t>(config.timeout_seconds);
  client.set_connection_timeout(timeout, 0);
  client.set_read_timeout(timeout, 0);
  client.set_write_timeout(timeout, 0);
  httplib::Headers headers;
  if (const char* token = std::getenv(config.token_env.c_str()); token != nullptr && *token != '\0')
    headers.emplace("Authorization", std::string("Bearer ") + token);

  json body = config.sampling;
  body["model"] = config.model;
  body["messages"] = json::array({{{"role", "system"}, {"content", prompt.system}},
                                  {{"role", "user"}, {"content", prompt.user}}});
  const auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
  if (!res) fail(ErrorCode::IoError, "request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) fail(ErrorCode::IoError, "HTTP status " + std::to_string(res->status));
  try {
    return json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, std::string("unexpected response body: ") + e.what());
  }
}

namespace {

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string prompt_hash(const Prompt& p, const json& sampling) {
  Sha256 h;
  h.update(p.system);
  h.update("\0", 1);
  h.update(p.user);
  h.update("\0", 1);
  h.update(sampling.dump());
  return h.digest();
}

std::string cache_key(const std::string& pid, const std::string& qid, const std::string& model,
                      const std::string& phash) {
  Sha256 h;
  for (const std::string* s : {&pid, &qid, &model, &phash}) {
    h.update(*s);
    h.update("\0", 1);
  }
  return h.digest();
}

json record_to_json(const ElicitationRecord& r, const std::string& key) {
  json j = {{"key", key},          {"persona_id", r.persona_id}, {"question_id", r.question_id},
            {"kind", r.kind},      {"model", r.model},           {"prompt_hash", r.prompt_hash},
            {"raw", r.raw},        {"timestamp", r.timestamp},   {"attempts", r.attempts}};
  if (r.kind == "mode")
    j["mode"] = r.mode;
  else
    j["probs"] = r.probs;
  return j;
}

ElicitationRecord record_from_json(const json& j) {
  ElicitationRecord r;
  r.persona_id = j.at("persona_id").get<std::string>();
  r.question_id = j.at("question_id").get<std::string>();
  r.kind = j.at("kind").get<std::string>();
  r.model = j.at("model").get<std::string>();
  r.prompt_hash = j.at("prompt_hash").get<std::string>();
  r.raw = j.at("raw").get<std::string>();
  r.timestamp = j.value("timestamp", "");
  r.attempts = j.value("attempts", std::size_t{0});
  if (r.kind == "mode")
    r.mode = j.at("mode").get<std::size_t>();
  else
    r.probs = j.at("probs").get<std::vector<double>>();
  return r;
}

std::string shard_path(const std::string& dir, std::size_t shard) {
  std::string name = std::to_string(shard);
  if (name.size() < 2) name.insert(0, "0");
  return (std::filesystem::path(dir) / ("shard-" + name + ".jsonl")).string();
}

std::size_t shard_of(const std::string& key, std::size_t shards) {
  return std::stoul(key.substr(0, 8), nullptr, 16) % shards;
}

// Every readable record in the cache directory. Truncated trailing lines
// from an interrupted writer are skipped.
std::unordered_map<std::string, ElicitationRecord> read_cache(const std::string& dir) {
  std::unordered_map<std::string, ElicitationRecord> out;
  if (!std::filesystem::exists(dir)) return out;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("shard-", 0) == 0 && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    std::string line;
    while (std::getline(in, line)) {
      try {
        const json j = json::parse(line);
        out.emplace(j.at("key").get<std::string>(), record_from_json(j));
      } catch (const std::exception&) {
      }
    }
  }
  return out;
}

enum class Mode { Distribution, SingleAnswer };

struct RunOutput {
  std::vector<ElicitationRecord> records;
  ElicitationStats stats;
};

RunOutput run_elicitation(const std::vector<PersonaProfile>& personas,
                          const std::vector<QuestionSpec>& questions, const ApiConfig& config,
                          const std::string& cache_dir, const Transport& transport_in, Mode mode) {
  require(!personas.empty() && !questions.empty(), "need at least one persona and one question");
  {
    std::unordered_map<std::string, int> seen;
    for (const auto& p : personas)
      require(seen.emplace(p.persona_id, 0).second, "duplicate persona id '" + p.persona_id + "'");
    seen.clear();
    for (const auto& q : questions)
      require(seen.emplace(q.question_id, 0).second, "duplicate question id '" + q.question_id + "'");
  }
  std::filesystem::create_directories(cache_dir);
  const Transport transport = transport_in ? transport_in : Transport(http_chat_completion);
  const std::string kind = mode == Mode::Distribution ? "distribution" : "mode";
  const std::size_t n = personas.size(), m = questions.size();

  struct Task {
    Prompt prompt;
    std::string phash, key;
  };
  std::vector<Task> tasks(n * m);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t x = 0; x < m; ++x) {
      Task& t = tasks[p * m + x];
      t.prompt = mode == Mode::Distribution ? build_prompt(personas[p], questions[x])
                                            : build_mode_prompt(personas[p], questions[x]);
      t.phash = prompt_hash(t.prompt, config.sampling);
      t.key = cache_key(personas[p].persona_id, questions[x].question_id, config.model, t.phash);
    }

  RunOutput out;
  out.records.resize(n * m);
  std::vector<std::uint8_t> done(n * m, 0);
  std::vector<std::size_t> pending;
  const auto cache = read_cache(cache_dir);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto it = cache.find(tasks[i].key);
    if (it != cache.end() && it->second.kind == kind) {
      out.records[i] = it->second;
      done[i] = 1;
      ++out.stats.cache_hits;
    } else {
      pending.push_back(i);
    }
  }

  std::vector<std::mutex> shard_mutex(config.shards);
  std::mutex reject_mutex;
  std::vector<std::string> errors(n * m);
  std::atomic<std::size_t> next{0}, calls{0};

  auto worker = [&] {
    for (std::size_t slot = next++; slot < pending.size(); slot = next++) {
      const std::size_t i = pending[slot];
      const std::size_t p = i / m, x = i % m;
      const Task& t = tasks[i];
      std::uint64_t delay = config.backoff_initial_ms;
      for (std::size_t attempt = 0; attempt <= config.retries; ++attempt) {
        if (attempt > 0 && delay > 0) {
          std::this_thread::sleep_for(std::chrono::milliseconds(delay));
          delay = std::min(delay * 2, config.backoff_max_ms);
        }
        std::string raw;
        try {
          ++calls;
          raw = transport(config, t.prompt);
        } catch (const std::exception& e) {
          errors[i] = e.what();
          continue;
        }
        ElicitationRecord r;
        r.persona_id = personas[p].persona_id;
        r.question_id = questions[x].question_id;
        r.kind = kind;
        r.raw = raw;
        r.model = config.model;
        r.prompt_hash = t.phash;
        r.attempts = attempt + 1;
        try {
          if (mode == Mode::Distribution)
            r.probs = parse_distribution(raw, questions[x].n_categories);
          else
            r.mode = parse_mode(raw, questions[x].n_categories);
        } catch (const Error& e) {
          errors[i] = e.what();
          const json rej = {{"persona_id", r.persona_id}, {"question_id", r.question_id},
                            {"kind", kind},               {"raw", raw},
                            {"error", e.what()},          {"timestamp", utc_timestamp()}};
          std::lock_guard lock(reject_mutex);
          std::ofstream(std::filesystem::path(cache_dir) / "rejects.jsonl", std::ios::app) << rej.dump() << '\n';
          continue;
        }
        r.timestamp = utc_timestamp();
        const std::size_t shard = shard_of(t.key, config.shards);
        {
          std::lock_guard lock(shard_mutex[shard]);
          std::ofstream f(shard_path(cache_dir, shard), std::ios::app);
          f << record_to_json(r, t.key).dump() << '\n';
          f.flush();
        }
        out.records[i] = std::move(r);
        done[i] = 1;
        errors[i].clear();
        break;
      }
    }
  };

  const std::size_t n_workers = std::min(config.max_concurrency, pending.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  out.stats.network_calls = calls.load();

  json completed = json::array(), failed = json::array();
  for (std::size_t i = 0; i < n * m; ++i) {
    const json pair = {personas[i / m].persona_id, questions[i % m].question_id};
    if (done[i])
      completed.push_back(pair);
    else
      failed.push_back({{"pair", pair}, {"error", errors[i]}});
  }
  const bool ok = failed.empty();
  const json manifest = {{"status", ok ? "complete" : "aborted"},
                         {"kind", kind},
                         {"model", config.model},
                         {"total", n * m},
                         {"completed", completed},
                         {"failed", failed}};
  write_file((std::filesystem::path(cache_dir) / "manifest.json").string(), manifest.dump(2) + '\n');
  if (!ok)
    fail(ErrorCode::ElicitationAborted,
         std::to_string(failed.size()) + " of " + std::to_string(n * m) +
             " pairs failed after retries; see " +
             (std::filesystem::path(cache_dir) / "manifest.json").string());
  return out;
}

}  // namespace

ElicitedTensor elicit_tensor(const std::vector<PersonaProfile>& personas,
                             const std::vector<QuestionSpec>& questions, const ApiConfig& config,
                             const std::string& cache_dir, const Transport& transport) {
  const std::size_t K = questions.empty() ? 0 : questions.front().n_categories;
  for (const auto& q : questions)
    require(q.n_categories == K, "all questions must share the same number of categories");
  RunOutput run = run_elicitation(personas, questions, config, cache_dir, transport, Mode::Distribution);
  std::vector<double> probs;
  probs.reserve(run.records.size() * K);
  for (const auto& r : run.records) probs.insert(probs.end(), r.probs.begin(), r.probs.end());
  ElicitedTensor out;
  out.bundle.tensor =
      LikelihoodTensor::from_probs(personas.size(), questions.size(), K, std::move(probs)).with_floor();
  for (const auto& p : personas) out.bundle.persona_ids.push_back(p.persona_id);
  for (const auto& q : questions) out.bundle.question_ids.push_back(q.question_id);
  out.records = std::move(run.records);
  out.stats = run.stats;
  return out;
}

ElicitedModes elicit_modes(const std::vector<PersonaProfile>& personas,
                           const std::vector<QuestionSpec>& questions, const ApiConfig& config,
                           const std::string& cache_dir, const Transport& transport) {
  RunOutput run = run_elicitation(personas, questions, config, cache_dir, transport, Mode::SingleAnswer);
  ElicitedModes out;
  for (const auto& r : run.records) out.modes.push_back(r.mode);
  out.records = std::move(run.records);
  out.stats = run.stats;
  return out;
}

std::vector<PersonaProfile> load_personas(const std::string& path) {
  try {
    const json j = json::parse(read_file(path));
    std::vector<PersonaProfile> out;
    for (const auto& p : j.at("personas"))
      out.push_back({p.at("id").get<std::string>(), p.at("profile").get<std::string>()});
    return out;
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, path + ": " + e.what());
  }
}

std::vector<QuestionSpec> load_questions(const std::string& path) {
  try {
    const json j = json::parse(read_file(path));
    std::vector<QuestionSpec> out;
    for (const auto& q : j.at("questions")) {
      QuestionSpec s;
      s.question_id = q.at("id").get<std::string>();
      s.question_text = q.at("text").get<std::string>();
      s.n_categories = q.value("n_categories", std::size_t{4});
      s.labels = q.value("labels", std::vector<std::string>{});
      out.push_back(std::move(s));
    }
    return out;
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, path + ": " + e.what());
  }
}

}  // namespace baq
