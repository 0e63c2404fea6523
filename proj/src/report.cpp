#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "baq/error.hpp"
#include "baq/harness.hpp"

namespace baq {

using nlohmann::json;

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

json to_json(const ResultTable& table, bool include_timing) {
  json cells = json::array();
  for (const auto& c : table.cells)
    cells.push_back({{"policy", c.policy},
                     {"budget", c.budget},
                     {"metric", c.metric},
                     {"mean", number_or_null(c.mean)},
                     {"se", number_or_null(c.se)},
                     {"count", c.count},
                     {"users", c.users}});
  json j = {{"format", "baq-results"},
            {"version", 1},
            {"n_test_users", table.n_test_users},
            {"target_ids", table.target_ids},
            {"cells", cells},
            {"config", table.config}};
  if (!table.user_scores.empty()) {
    json scores = json::object();
    for (const auto& [key, values] : table.user_scores) {
      json arr = json::array();
      for (double v : values) arr.push_back(number_or_null(v));
      scores[key] = arr;
    }
    j["user_scores"] = scores;
  }
  if (include_timing) {
    json timing = json::object();
    for (const auto& [policy, t] : table.timing)
      timing[policy] = {{"fit_seconds", t.fit_seconds}, {"inference_seconds", t.inference_seconds}};
    j["timing"] = timing;
  }
  return j;
}

ResultTable result_table_from_json(const json& j) {
  try {
    ResultTable t;
    t.n_test_users = j.at("n_test_users").get<std::size_t>();
    t.target_ids = j.value("target_ids", std::vector<std::string>{});
    for (const auto& c : j.at("cells")) {
      ResultCell cell;
      cell.policy = c.at("policy").get<std::string>();
      cell.budget = c.at("budget").get<std::size_t>();
      cell.metric = c.at("metric").get<std::string>();
      cell.mean = number_from(c.at("mean"));
      cell.se = number_from(c.at("se"));
      cell.count = c.at("count").get<std::size_t>();
      cell.users = c.value("users", std::size_t{0});
      t.cells.push_back(std::move(cell));
    }
    if (j.contains("timing"))
      for (const auto& [policy, v] : j["timing"].items())
        t.timing[policy] = {v.value("fit_seconds", 0.0), v.value("inference_seconds", 0.0)};
    if (j.contains("user_scores"))
      for (const auto& [key, arr] : j["user_scores"].items()) {
        std::vector<double> values;
        for (const auto& v : arr) values.push_back(number_from(v));
        t.user_scores[key] = std::move(values);
      }
    t.config = j.value("config", json::object());
    return t;
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, std::string("result table: ") + e.what());
  }
}

std::string result_cells_csv(const ResultTable& table) {
  std::string out = "policy,budget,metric,mean,se,count\n";
  char buf[64];
  for (const auto& c : table.cells) {
    out += c.policy + ',' + std::to_string(c.budget) + ',' + c.metric + ',';
    std::snprintf(buf, sizeof buf, "%.17g", c.mean);
    out += std::string(std::isfinite(c.mean) ? buf : "") + ',';
    std::snprintf(buf, sizeof buf, "%.17g", c.se);
    out += std::string(std::isfinite(c.se) ? buf : "") + ',' + std::to_string(c.count) + '\n';
  }
  return out;
}

void save_results(const ResultTable& table, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_file((std::filesystem::path(dir) / "results.json").string(), to_json(table).dump(2) + '\n');
  write_file((std::filesystem::path(dir) / "results.csv").string(), result_cells_csv(table));
}

std::string render_report(const ResultTable& table) {
  std::vector<std::string> metrics, policies;
  std::vector<std::size_t> budgets;
  for (const auto& c : table.cells) {
    if (std::find(metrics.begin(), metrics.end(), c.metric) == metrics.end()) metrics.push_back(c.metric);
    if (std::find(policies.begin(), policies.end(), c.policy) == policies.end()) policies.push_back(c.policy);
    if (std::find(budgets.begin(), budgets.end(), c.budget) == budgets.end()) budgets.push_back(c.budget);
  }
  std::sort(budgets.begin(), budgets.end());

  std::string out;
  out += "test users: " + std::to_string(table.n_test_users) + "\n";
  if (!table.target_ids.empty()) {
    out += "targets:";
    for (const auto& t : table.target_ids) out += ' ' + t;
    out += '\n';
  }
  for (const auto& metric : metrics) {
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> head = {"policy"};
    for (std::size_t b : budgets) head.push_back("T=" + std::to_string(b));
    grid.push_back(head);
    for (const auto& policy : policies) {
      std::vector<std::string> row = {policy};
      for (std::size_t b : budgets) {
        const ResultCell* c = table.find(policy, b, metric);
        row.push_back(c == nullptr ? "-" : fixed(c->mean, 4) + " (" + fixed(c->se, 4) + ")");
      }
      grid.push_back(row);
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& row : grid)
      for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    out += "\n" + metric + "\n";
    for (std::size_t r = 0; r < grid.size(); ++r) {
      std::string line;
      for (std::size_t i = 0; i < grid[r].size(); ++i) {
        const std::string& cell = grid[r][i];
        const std::string pad(width[i] - cell.size(), ' ');
        line += i == 0 ? cell + pad : "  " + pad + cell;
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      out += line + '\n';
      if (r == 0) {
        std::size_t total = 0;
        for (std::size_t i = 0; i < width.size(); ++i) total += width[i] + (i == 0 ? 0 : 2);
        out += std::string(total, '-') + '\n';
      }
    }
  }
  if (!table.timing.empty()) {
    out += "\nwall-clock seconds (fit / inference)\n";
    for (const auto& policy : policies) {
      const auto it = table.timing.find(policy);
      if (it == table.timing.end()) continue;
      out += policy + ": " + fixed(it->second.fit_seconds, 3) + " / " + fixed(it->second.inference_seconds, 3) + '\n';
    }
  }
  return out;
}

}  // namespace baq
