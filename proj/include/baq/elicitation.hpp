#pragma once

// Persona-conditioned response distributions from a chat-completion endpoint.
//
// Cache layout: <cache_dir>/shard-NN.jsonl, one record per line, append-only.
// A record's shard is fixed by its key, so each shard file has one writer.
// Unparseable replies are appended to <cache_dir>/rejects.jsonl. Every run
// writes <cache_dir>/manifest.json with the completed and failed pairs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "baq/dataset_io.hpp"
#include "json.hpp"

namespace baq {

struct PersonaProfile {
  std::string persona_id;
  std::string profile_text;
};

struct QuestionSpec {
  std::string question_id;
  std::string question_text;
  std::size_t n_categories = 4;
  /// Optional option labels in ordinal order; listed as "1. ..." under the question.
  std::vector<std::string> labels;
};

struct Prompt {
  std::string system;
  std::string user;
};

/// Distribution-eliciting prompt pair.
Prompt build_prompt(const PersonaProfile& persona, const QuestionSpec& question);
/// Single-answer prompt pair used for mode elicitation.
Prompt build_mode_prompt(const PersonaProfile& persona, const QuestionSpec& question);

/// First bracketed numeric list in `raw`; it must have K non-negative entries
/// whose sum is within 0.05 of 1 (then renormalized). Throws ParseError.
std::vector<double> parse_distribution(std::string_view raw, std::size_t n_categories);

/// The single integer 1..K in `raw`, returned 0-based. Throws ParseError.
std::size_t parse_mode(std::string_view raw, std::size_t n_categories);

struct ApiConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model = "gpt-5-mini";
  /// Name of the environment variable holding the bearer token.
  std::string token_env = "BAQ_API_TOKEN";
  /// Extra request fields (temperature, ...); part of the cache key.
  nlohmann::json sampling = nlohmann::json::object();
  std::size_t max_concurrency = 4;
  std::size_t retries = 3;
  std::uint64_t backoff_initial_ms = 500;
  std::uint64_t backoff_max_ms = 8000;
  std::uint64_t timeout_seconds = 120;
  std::size_t shards = 16;
};

ApiConfig api_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ApiConfig& config);

/// Sends one prompt and returns the assistant text; throws on any failure.
using Transport = std::function<std::string(const ApiConfig&, const Prompt&)>;

/// POST {base_url}/v1/chat/completions, reply from choices[0].message.content.
std::string http_chat_completion(const ApiConfig& config, const Prompt& prompt);

struct ElicitationRecord {
  std::string persona_id;
  std::string question_id;
  std::string kind;  // "distribution" or "mode"
  std::string raw;
  std::vector<double> probs;
  std::size_t mode = 0;
  std::string model;
  std::string prompt_hash;
  std::string timestamp;
  std::size_t attempts = 0;
};

struct ElicitationStats {
  std::size_t network_calls = 0;
  std::size_t cache_hits = 0;
};

struct ElicitedTensor {
  TensorBundle bundle;  // floored
  std::vector<ElicitationRecord> records;  // persona-major
  ElicitationStats stats;
};

struct ElicitedModes {
  std::vector<std::size_t> modes;  // persona-major, 0-based
  std::vector<ElicitationRecord> records;
  ElicitationStats stats;
};

/// One record per (persona, question), from cache or the endpoint. Throws
/// ElicitationAborted after writing the manifest when any pair exhausts its
/// retries.
ElicitedTensor elicit_tensor(const std::vector<PersonaProfile>& personas,
                             const std::vector<QuestionSpec>& questions, const ApiConfig& config,
                             const std::string& cache_dir, const Transport& transport = {});

ElicitedModes elicit_modes(const std::vector<PersonaProfile>& personas,
                           const std::vector<QuestionSpec>& questions, const ApiConfig& config,
                           const std::string& cache_dir, const Transport& transport = {});

/// {"personas":[{"id","profile"}...]} / {"questions":[{"id","text","n_categories","labels"}...]}
std::vector<PersonaProfile> load_personas(const std::string& path);
std::vector<QuestionSpec> load_questions(const std::string& path);

}  // namespace baq
