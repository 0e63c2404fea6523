#pragma once

// On-disk formats, response datasets, splits and synthetic data.
//
// Tensor file (JSON lines):
//   line 1   {"format":"baq-tensor","version":1,"n":..,"m":..,"K":..,"sha256":..,
//             "persona_ids":[..],"question_ids":[..]}
//   then one {"persona_id":..,"question_id":..,"probs":[..]} per pair, any order.
// The hash covers n, m, K (uint64 LE) followed by every probability
// (float64 LE) in persona-major order. `<path>.bin` holds the same values
// packed: "BAQTNSR1", n, m, K (uint64 LE), the 64-char hex hash, then data.
//
// Response file: wide CSV `user_id,<question ids...>` with 0-based category
// codes and empty cells for missing answers, plus `<path>.meta.json`
// {"question_ids","n_categories","n_users","sha256"} where the hash is over
// the CSV bytes.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "baq/answer_matrix.hpp"
#include "baq/persona_model.hpp"
#include "json.hpp"

namespace baq {

struct TensorBundle {
  LikelihoodTensor tensor;
  std::vector<std::string> persona_ids;
  std::vector<std::string> question_ids;
};

/// "p0", "p1", ... / "q0", "q1", ...
std::vector<std::string> default_ids(char prefix, std::size_t n);

std::string tensor_hash(const LikelihoodTensor& tensor);

/// Writes the JSONL file and its binary sidecar. Empty id lists get defaults.
void save_tensor(const TensorBundle& bundle, const std::string& path);
void save_tensor(const LikelihoodTensor& tensor, const std::string& path);

/// Parses the JSONL file, checks completeness, row sums and the header hash,
/// then applies the likelihood floor.
TensorBundle load_tensor(const std::string& path);

/// Uses the binary sidecar when its hash matches the JSONL header; falls back
/// to load_tensor otherwise.
TensorBundle load_tensor_fast(const std::string& path);

struct ResponseDataset {
  std::vector<std::string> user_ids;
  std::vector<std::string> question_ids;
  std::size_t n_categories = 0;
  AnswerMatrix answers;

  std::size_t n_users() const { return answers.n_users; }
  std::size_t n_questions() const { return answers.n_questions; }
  double missing_fraction(std::size_t user) const;
  /// Shape, id uniqueness and answer range; throws InvalidArgument.
  void validate() const;

  bool operator==(const ResponseDataset&) const = default;
};

void save_responses(const ResponseDataset& data, const std::string& path);
ResponseDataset load_responses(const std::string& path);

/// Wide survey CSV with 1-based codes (anything outside 1..K, non-numeric or
/// empty counts as missing once the question is kept). A question is kept
/// when all of its numeric codes lie in 1..K and its largest code is K; users
/// whose missing fraction over kept questions exceeds `max_missing` are
/// dropped.
ResponseDataset import_survey_csv(const std::string& path, std::size_t n_categories,
                                  double max_missing = 0.2);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle then prefix split with round(fraction * n) training users.
/// Both index lists come back in ascending order.
SplitIndices split_indices(std::size_t n_users, double train_fraction, std::uint64_t seed);

ResponseDataset subset_users(const ResponseDataset& data, const std::vector<std::size_t>& users);

std::pair<ResponseDataset, ResponseDataset> split_users(const ResponseDataset& data,
                                                        double train_fraction, std::uint64_t seed);

struct SyntheticUsers {
  ResponseDataset data;
  /// Generating persona of each user.
  std::vector<std::size_t> true_persona;
};

/// theta ~ prior, then every answer from mu[theta]; user j uses the stream
/// derive_seed(seed, j).
SyntheticUsers generate_synthetic_users(const PersonaPrior& prior, const LikelihoodTensor& tensor,
                                        std::size_t n_users, std::uint64_t seed,
                                        std::size_t threads = 1);

struct SyntheticDictionary {
  LikelihoodTensor tensor;
  PersonaPrior prior;
};

/// Rows from a symmetric Dirichlet(concentration), floored; uniform prior.
SyntheticDictionary generate_synthetic_dictionary(std::size_t n_personas, std::size_t n_questions,
                                                  std::size_t n_categories, double concentration,
                                                  std::uint64_t seed);

/// {"weights":[..],"metadata":{..}}
void save_prior(const PersonaPrior& prior, const std::string& path,
                const nlohmann::json& metadata = nlohmann::json::object());
PersonaPrior load_prior(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace baq
