#include "baq/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "baq/error.hpp"
#include "baq/hashing.hpp"
#include "baq/parallel.hpp"
#include "baq/rng.hpp"

namespace baq {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << contents;
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

std::vector<std::string> default_ids(char prefix, std::size_t n) {
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = prefix + std::to_string(i);
  return ids;
}

namespace {

std::string hash_values(std::uint64_t n, std::uint64_t m, std::uint64_t k,
                        std::span<const double> probs) {
  Sha256 h;
  h.update_u64(n);
  h.update_u64(m);
  h.update_u64(k);
  h.update_doubles(probs);
  return h.digest();
}

void check_unique(const std::vector<std::string>& ids, const std::string& what) {
  std::unordered_set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) fail(ErrorCode::InvalidArgument, "duplicate " + what + " '" + id + "'");
}

constexpr char kTensorMagic[8] = {'B', 'A', 'Q', 'T', 'N', 'S', 'R', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::string& s, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

json read_tensor_header(std::istream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::FormatError, path + ": empty tensor file");
  try {
    json header = json::parse(line);
    if (header.value("format", "") != "baq-tensor")
      fail(ErrorCode::FormatError, path + ": not a tensor file");
    return header;
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, path + ": bad header: " + e.what());
  }
}

}  // namespace

std::string tensor_hash(const LikelihoodTensor& tensor) {
  return hash_values(tensor.n_personas(), tensor.n_questions(), tensor.n_categories(), tensor.probs());
}

void save_tensor(const LikelihoodTensor& tensor, const std::string& path) {
  save_tensor(TensorBundle{tensor, {}, {}}, path);
}

void save_tensor(const TensorBundle& bundle, const std::string& path) {
  const LikelihoodTensor& t = bundle.tensor;
  const auto pids = bundle.persona_ids.empty() ? default_ids('p', t.n_personas()) : bundle.persona_ids;
  const auto qids = bundle.question_ids.empty() ? default_ids('q', t.n_questions()) : bundle.question_ids;
  require(pids.size() == t.n_personas(), "persona id count does not match the tensor");
  require(qids.size() == t.n_questions(), "question id count does not match the tensor");
  check_unique(pids, "persona id");
  check_unique(qids, "question id");
  const std::string hash = tensor_hash(t);

  std::string text;
  json header = {{"format", "baq-tensor"}, {"version", 1},        {"n", t.n_personas()},
                 {"m", t.n_questions()},   {"K", t.n_categories()}, {"sha256", hash},
                 {"persona_ids", pids},    {"question_ids", qids}};
  text += header.dump() + '\n';
  for (std::size_t p = 0; p < t.n_personas(); ++p)
    for (std::size_t x = 0; x < t.n_questions(); ++x) {
      const auto row = t.row(p, x);
      json rec = {{"persona_id", pids[p]},
                  {"question_id", qids[x]},
                  {"probs", std::vector<double>(row.begin(), row.end())}};
      text += rec.dump() + '\n';
    }
  write_file(path, text);

  std::string bin(kTensorMagic, sizeof kTensorMagic);
  put_u64(bin, t.n_personas());
  put_u64(bin, t.n_questions());
  put_u64(bin, t.n_categories());
  bin += hash;
  for (double v : t.probs()) put_u64(bin, std::bit_cast<std::uint64_t>(v));
  write_file(path + ".bin", bin);
}

TensorBundle load_tensor(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "tensor file not found: " + path);
  const json header = read_tensor_header(in, path);
  TensorBundle out;
  std::size_t n = 0, m = 0, K = 0;
  std::string expected_hash;
  try {
    n = header.at("n").get<std::size_t>();
    m = header.at("m").get<std::size_t>();
    K = header.at("K").get<std::size_t>();
    expected_hash = header.at("sha256").get<std::string>();
    out.persona_ids = header.at("persona_ids").get<std::vector<std::string>>();
    out.question_ids = header.at("question_ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, path + ": bad header: " + e.what());
  }
  if (out.persona_ids.size() != n || out.question_ids.size() != m)
    fail(ErrorCode::FormatError, path + ": id lists do not match n/m");
  if (n == 0 || m == 0 || K < 2) fail(ErrorCode::FormatError, path + ": degenerate dimensions");
  check_unique(out.persona_ids, "persona id");
  check_unique(out.question_ids, "question id");

  std::unordered_map<std::string, std::size_t> pidx, qidx;
  for (std::size_t i = 0; i < n; ++i) pidx.emplace(out.persona_ids[i], i);
  for (std::size_t i = 0; i < m; ++i) qidx.emplace(out.question_ids[i], i);

  std::vector<double> probs(n * m * K, 0.0);
  std::vector<std::uint8_t> seen(n * m, 0);
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorCode::FormatError, where + ": " + e.what());
    }
    std::string pid, qid;
    std::vector<double> row;
    try {
      pid = rec.at("persona_id").get<std::string>();
      qid = rec.at("question_id").get<std::string>();
      row = rec.at("probs").get<std::vector<double>>();
    } catch (const json::exception& e) {
      fail(ErrorCode::FormatError, where + ": " + e.what());
    }
    const auto pi = pidx.find(pid);
    const auto qi = qidx.find(qid);
    if (pi == pidx.end() || qi == qidx.end())
      fail(ErrorCode::FormatError, where + ": unknown pair (" + pid + ", " + qid + ")");
    if (row.size() != K)
      fail(ErrorCode::FormatError, where + ": expected " + std::to_string(K) + " probabilities");
    const std::size_t cell = pi->second * m + qi->second;
    if (seen[cell]) fail(ErrorCode::FormatError, where + ": duplicate pair (" + pid + ", " + qid + ")");
    seen[cell] = 1;
    double sum = 0.0;
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0))
        fail(ErrorCode::FormatError, where + ": probability out of [0,1] for (" + pid + ", " + qid + ")");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance)
      fail(ErrorCode::FormatError, where + ": row sum " + std::to_string(sum) + " != 1 for (" + pid +
                                       ", " + qid + ")");
    std::copy(row.begin(), row.end(), probs.begin() + static_cast<std::ptrdiff_t>(cell * K));
  }
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t x = 0; x < m; ++x)
      if (!seen[p * m + x])
        fail(ErrorCode::FormatError, path + ": missing pair (" + out.persona_ids[p] + ", " +
                                         out.question_ids[x] + ")");
  const std::string actual = hash_values(n, m, K, probs);
  if (actual != expected_hash)
    fail(ErrorCode::FormatError, path + ": hash mismatch (header " + expected_hash + ", data " + actual + ")");
  out.tensor = LikelihoodTensor::from_probs(n, m, K, std::move(probs)).with_floor();
  return out;
}

TensorBundle load_tensor_fast(const std::string& path) {
  const std::string bin_path = path + ".bin";
  if (!std::filesystem::exists(bin_path)) return load_tensor(path);
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "tensor file not found: " + path);
  const json header = read_tensor_header(in, path);
  const std::string bin = read_file(bin_path);
  constexpr std::size_t kHead = 8 + 24 + 64;
  if (bin.size() < kHead || std::memcmp(bin.data(), kTensorMagic, 8) != 0) return load_tensor(path);
  const std::uint64_t n = get_u64(bin, 8), m = get_u64(bin, 16), K = get_u64(bin, 24);
  const std::string hash = bin.substr(32, 64);
  if (hash != header.value("sha256", "") || bin.size() != kHead + 8 * n * m * K) return load_tensor(path);
  std::vector<double> probs(n * m * K);
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = std::bit_cast<double>(get_u64(bin, kHead + 8 * i));
  if (hash_values(n, m, K, probs) != hash) return load_tensor(path);
  TensorBundle out;
  try {
    out.persona_ids = header.at("persona_ids").get<std::vector<std::string>>();
    out.question_ids = header.at("question_ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, path + ": bad header: " + e.what());
  }
  out.tensor = LikelihoodTensor::from_probs(n, m, K, std::move(probs)).with_floor();
  return out;
}

// ---------------------------------------------------------------------------
// Responses

double ResponseDataset::missing_fraction(std::size_t user) const {
  if (answers.n_questions == 0) return 0.0;
  const auto row = answers.user(user);
  const auto missing = std::count(row.begin(), row.end(), kMissing);
  return static_cast<double>(missing) / static_cast<double>(answers.n_questions);
}

void ResponseDataset::validate() const {
  require(user_ids.size() == answers.n_users, "user id count does not match the answer matrix");
  require(question_ids.size() == answers.n_questions, "question id count does not match the answer matrix");
  require(answers.values.size() == answers.n_users * answers.n_questions, "answer matrix has the wrong size");
  require(n_categories >= 2, "n_categories must be at least 2");
  check_unique(question_ids, "question id");
  check_unique(user_ids, "user id");
  for (Answer a : answers.values)
    require(a == kMissing || (a >= 0 && static_cast<std::size_t>(a) < n_categories),
            "answer value out of range");
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(cell));
      cell.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !cell.empty()) {
        row.push_back(std::move(cell));
        rows.push_back(std::move(row));
      }
      row.clear();
      cell.clear();
      any = false;
    } else {
      cell += c;
      any = true;
    }
  }
  if (quoted) fail(ErrorCode::ParseError, path + ": unterminated quote");
  if (any || !cell.empty()) {
    row.push_back(std::move(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

bool parse_int(std::string_view s, long& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec == std::errc() && ptr == s.data() + s.size()) return true;
  // Accept integral floats such as "3.0".
  double d = 0.0;
  const auto [p2, e2] = std::from_chars(s.data(), s.data() + s.size(), d);
  if (e2 != std::errc() || p2 != s.data() + s.size() || d != std::floor(d)) return false;
  out = static_cast<long>(d);
  return true;
}

}  // namespace

void save_responses(const ResponseDataset& data, const std::string& path) {
  data.validate();
  std::string csv = "user_id";
  for (const auto& q : data.question_ids) csv += ',' + csv_escape(q);
  csv += '\n';
  for (std::size_t u = 0; u < data.n_users(); ++u) {
    csv += csv_escape(data.user_ids[u]);
    for (Answer a : data.answers.user(u)) {
      csv += ',';
      if (a != kMissing) csv += std::to_string(a);
    }
    csv += '\n';
  }
  write_file(path, csv);
  json meta = {{"question_ids", data.question_ids},
               {"n_categories", data.n_categories},
               {"n_users", data.n_users()},
               {"sha256", sha256_hex(csv)}};
  write_file(path + ".meta.json", meta.dump(2) + '\n');
}

ResponseDataset load_responses(const std::string& path) {
  const std::string csv = read_file(path);
  const std::string meta_path = path + ".meta.json";
  if (!std::filesystem::exists(meta_path))
    fail(ErrorCode::MissingArtifact, "response header not found: " + meta_path);
  json meta;
  try {
    meta = json::parse(read_file(meta_path));
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, meta_path + ": " + e.what());
  }
  ResponseDataset out;
  try {
    out.question_ids = meta.at("question_ids").get<std::vector<std::string>>();
    out.n_categories = meta.at("n_categories").get<std::size_t>();
    if (meta.contains("sha256") && meta["sha256"].get<std::string>() != sha256_hex(csv))
      fail(ErrorCode::FormatError, path + ": hash mismatch with " + meta_path);
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, meta_path + ": " + e.what());
  }
  const auto rows = parse_csv(csv, path);
  if (rows.empty()) fail(ErrorCode::FormatError, path + ": missing header row");
  const auto& head = rows[0];
  if (head.size() != out.question_ids.size() + 1 ||
      !std::equal(out.question_ids.begin(), out.question_ids.end(), head.begin() + 1))
    fail(ErrorCode::FormatError, path + ": CSV header does not match " + meta_path);
  const std::size_t m = out.question_ids.size();
  out.answers.n_questions = m;
  out.answers.n_users = rows.size() - 1;
  out.answers.values.assign(out.answers.n_users * m, kMissing);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != m + 1)
      fail(ErrorCode::FormatError, path + ": row " + std::to_string(r + 1) + " has " +
                                       std::to_string(row.size()) + " cells, expected " +
                                       std::to_string(m + 1));
    out.user_ids.push_back(row[0]);
    for (std::size_t x = 0; x < m; ++x) {
      if (row[x + 1].empty()) continue;
      long v = 0;
      if (!parse_int(row[x + 1], v) || v < 0 || static_cast<std::size_t>(v) >= out.n_categories)
        fail(ErrorCode::FormatError, path + ": row " + std::to_string(r + 1) + ", question " +
                                         out.question_ids[x] + ": invalid answer '" + row[x + 1] + "'");
      out.answers.values[(r - 1) * m + x] = static_cast<Answer>(v);
    }
  }
  if (meta.contains("n_users") && meta["n_users"].get<std::size_t>() != out.n_users())
    fail(ErrorCode::FormatError, path + ": user count does not match " + meta_path);
  out.validate();
  return out;
}

ResponseDataset import_survey_csv(const std::string& path, std::size_t n_categories,
                                  double max_missing) {
  require(n_categories >= 2, "n_categories must be at least 2");
  require(max_missing >= 0.0 && max_missing <= 1.0, "max_missing must lie in [0,1]");
  const auto rows = parse_csv(read_file(path), path);
  if (rows.empty()) fail(ErrorCode::FormatError, path + ": missing header row");
  const auto& head = rows[0];
  if (head.size() < 2) fail(ErrorCode::FormatError, path + ": no question columns");
  const std::size_t cols = head.size() - 1;
  for (std::size_t r = 1; r < rows.size(); ++r)
    if (rows[r].size() != head.size())
      fail(ErrorCode::FormatError, path + ": row " + std::to_string(r + 1) + " has the wrong width");

  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < cols; ++c) {
    long max_code = 0;
    bool ok = true;
    for (std::size_t r = 1; r < rows.size() && ok; ++r) {
      long v = 0;
      if (!parse_int(rows[r][c + 1], v) || v < 0) continue;  // missing codes
      if (v == 0 || static_cast<std::size_t>(v) > n_categories) ok = false;
      max_code = std::max(max_code, v);
    }
    if (ok && static_cast<std::size_t>(max_code) == n_categories) kept.push_back(c);
  }

  ResponseDataset out;
  out.n_categories = n_categories;
  for (std::size_t c : kept) out.question_ids.push_back(head[c + 1]);
  out.answers.n_questions = kept.size();
  for (std::size_t r = 1; r < rows.size(); ++r) {
    std::vector<Answer> row(kept.size(), kMissing);
    std::size_t missing = 0;
    for (std::size_t j = 0; j < kept.size(); ++j) {
      long v = 0;
      if (parse_int(rows[r][kept[j] + 1], v) && v >= 1 && static_cast<std::size_t>(v) <= n_categories)
        row[j] = static_cast<Answer>(v - 1);
      else
        ++missing;
    }
    const double frac = kept.empty() ? 0.0 : static_cast<double>(missing) / static_cast<double>(kept.size());
    if (frac > max_missing) continue;
    out.user_ids.push_back(rows[r][0]);
    out.answers.values.insert(out.answers.values.end(), row.begin(), row.end());
    ++out.answers.n_users;
  }
  out.validate();
  return out;
}

SplitIndices split_indices(std::size_t n_users, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, "train fraction must lie in (0,1)");
  std::vector<std::size_t> order(n_users);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n_users)));
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

ResponseDataset subset_users(const ResponseDataset& data, const std::vector<std::size_t>& users) {
  ResponseDataset out;
  out.question_ids = data.question_ids;
  out.n_categories = data.n_categories;
  out.answers.n_questions = data.n_questions();
  out.answers.n_users = users.size();
  out.answers.values.reserve(users.size() * data.n_questions());
  for (std::size_t u : users) {
    require(u < data.n_users(), "user index out of range");
    out.user_ids.push_back(data.user_ids[u]);
    const auto row = data.answers.user(u);
    out.answers.values.insert(out.answers.values.end(), row.begin(), row.end());
  }
  return out;
}

std::pair<ResponseDataset, ResponseDataset> split_users(const ResponseDataset& data,
                                                        double train_fraction, std::uint64_t seed) {
  const SplitIndices s = split_indices(data.n_users(), train_fraction, seed);
  return {subset_users(data, s.train), subset_users(data, s.test)};
}

SyntheticUsers generate_synthetic_users(const PersonaPrior& prior, const LikelihoodTensor& tensor,
                                        std::size_t n_users, std::uint64_t seed, std::size_t threads) {
  require(prior.size() == tensor.n_personas(), "prior size does not match the tensor");
  const std::size_t m = tensor.n_questions();
  SyntheticUsers out;
  out.data.question_ids = default_ids('q', m);
  out.data.user_ids = default_ids('u', n_users);
  out.data.n_categories = tensor.n_categories();
  out.data.answers.n_users = n_users;
  out.data.answers.n_questions = m;
  out.data.answers.values.assign(n_users * m, kMissing);
  out.true_persona.assign(n_users, 0);
  parallel_for(n_users, threads, [&](std::size_t j) {
    Rng rng(derive_seed(seed, j));
    const std::size_t theta = rng.categorical(prior.weights());
    out.true_persona[j] = theta;
    auto row = out.data.answers.user(j);
    for (std::size_t x = 0; x < m; ++x) row[x] = static_cast<Answer>(rng.categorical(tensor.row(theta, x)));
  });
  return out;
}

SyntheticDictionary generate_synthetic_dictionary(std::size_t n_personas, std::size_t n_questions,
                                                  std::size_t n_categories, double concentration,
                                                  std::uint64_t seed) {
  require(n_personas >= 1 && n_questions >= 1 && n_categories >= 2, "invalid dictionary shape");
  require(concentration > 0.0 && std::isfinite(concentration), "concentration must be positive");
  Rng rng(seed);
  std::vector<double> probs(n_personas * n_questions * n_categories);
  for (std::size_t r = 0; r < n_personas * n_questions; ++r) {
    double* row = probs.data() + r * n_categories;
    double s = 0.0;
    for (std::size_t k = 0; k < n_categories; ++k) s += row[k] = rng.gamma(concentration);
    if (s > 0.0) {
      for (std::size_t k = 0; k < n_categories; ++k) row[k] /= s;
    } else {
      std::fill(row, row + n_categories, 1.0 / static_cast<double>(n_categories));
    }
    // Exact unit sum on the last entry keeps the row within tolerance.
    double head = 0.0;
    for (std::size_t k = 0; k + 1 < n_categories; ++k) head += row[k];
    row[n_categories - 1] = std::max(0.0, 1.0 - head);
  }
  return {LikelihoodTensor::from_probs(n_personas, n_questions, n_categories, std::move(probs)).with_floor(),
          PersonaPrior::uniform(n_personas)};
}

void save_prior(const PersonaPrior& prior, const std::string& path, const json& metadata) {
  json j = {{"format", "baq-prior"},
            {"weights", std::vector<double>(prior.weights().begin(), prior.weights().end())},
            {"metadata", metadata}};
  write_file(path, j.dump(2) + '\n');
}

PersonaPrior load_prior(const std::string& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::MissingArtifact, "prior file not found: " + path);
  try {
    const json j = json::parse(read_file(path));
    return PersonaPrior(j.at("weights").get<std::vector<double>>());
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, path + ": " + e.what());
  }
}

}  // namespace baq
