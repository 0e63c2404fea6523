#include "baq/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include "baq/error.hpp"
#include "baq/parallel.hpp"
#include "baq/rng.hpp"

namespace baq {

using nlohmann::json;

namespace {

constexpr std::uint64_t kDictionaryStream = 1;
constexpr std::uint64_t kUsersStream = 2;
constexpr std::uint64_t kDesignStream = 3;
constexpr std::uint64_t kFixedOrderStream = 4;

// FNV-1a; stable per-policy stream ids independent of list position.
std::uint64_t name_stream(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("config field '") + key + "': " + e.what());
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::InvalidArgument, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) fail(ErrorCode::InvalidArgument, "unknown config key '" + where + "." + key + "'");
  }
}

GridConfig grid_from_json(const json& j) {
  check_keys(j, {"theta_max", "points", "dims"}, "cat.grid");
  GridConfig g;
  g.theta_max = get_or(j, "theta_max", g.theta_max);
  g.points = get_or(j, "points", g.points);
  g.dims = get_or(j, "dims", g.dims);
  return g;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

bool is_cat_policy(const std::string& name) { return name.rfind("cat_", 0) == 0; }

IrtModelKind cat_policy_model(const std::string& name) {
  if (!is_cat_policy(name)) fail(ErrorCode::InvalidArgument, "not a CAT policy: " + name);
  return parse_irt_kind(name.substr(4));
}

ExperimentConfig experiment_config_from_json(const json& j) {
  check_keys(j, {"data", "prior", "split", "targets", "policies", "budgets", "uncertainty", "metrics",
                 "seed", "mc_samples", "threads", "max_test_users", "cat", "output",
                 "record_user_scores"},
             "config");
  ExperimentConfig c;
  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d, {"tensor", "responses", "synthetic"}, "data");
    c.tensor_path = get_or<std::string>(d, "tensor", "");
    c.responses_path = get_or<std::string>(d, "responses", "");
    if (d.contains("synthetic") && !d["synthetic"].is_null()) {
      const json& s = d["synthetic"];
      check_keys(s, {"n_personas", "n_questions", "n_categories", "concentration", "n_users", "seed", "prior"},
                 "data.synthetic");
      SyntheticSpec spec;
      spec.n_personas = get_or(s, "n_personas", spec.n_personas);
      spec.n_questions = get_or(s, "n_questions", spec.n_questions);
      spec.n_categories = get_or(s, "n_categories", spec.n_categories);
      spec.concentration = get_or(s, "concentration", spec.concentration);
      spec.n_users = get_or(s, "n_users", spec.n_users);
      spec.seed = get_or(s, "seed", spec.seed);
      spec.prior = get_or(s, "prior", spec.prior);
      c.synthetic = spec;
    }
  }
  if (j.contains("prior")) {
    const json& p = j["prior"];
    check_keys(p, {"mode", "path", "em"}, "prior");
    c.prior_mode = get_or(p, "mode", c.prior_mode);
    c.prior_path = get_or(p, "path", c.prior_path);
    if (p.contains("em")) {
      check_keys(p["em"], {"max_iters", "tol", "weight_floor"}, "prior.em");
      c.em.max_iters = get_or(p["em"], "max_iters", c.em.max_iters);
      c.em.tol = get_or(p["em"], "tol", c.em.tol);
      c.em.weight_floor = get_or(p["em"], "weight_floor", c.em.weight_floor);
    }
  }
  if (j.contains("split")) {
    check_keys(j["split"], {"train_fraction", "seed"}, "split");
    c.train_fraction = get_or(j["split"], "train_fraction", c.train_fraction);
    c.split_seed = get_or(j["split"], "seed", c.split_seed);
  }
  if (j.contains("targets")) {
    check_keys(j["targets"], {"ids", "count", "seed"}, "targets");
    c.target_ids = get_or(j["targets"], "ids", c.target_ids);
    c.n_targets = get_or(j["targets"], "count", c.n_targets);
    c.target_seed = get_or(j["targets"], "seed", c.target_seed);
  }
  c.policies = get_or(j, "policies", c.policies);
  if (j.contains("budgets")) {
    c.budgets.clear();
    c.budget_all = false;
    for (const auto& b : j["budgets"]) {
      if (b.is_string() && b.get<std::string>() == "all")
        c.budget_all = true;
      else if (b.is_number_unsigned())
        c.budgets.push_back(b.get<std::size_t>());
      else
        fail(ErrorCode::InvalidArgument, "budgets must be non-negative integers or \"all\"");
    }
  }
  if (j.contains("uncertainty")) c.uncertainty = parse_uncertainty_kind(j["uncertainty"].get<std::string>());
  if (j.contains("metrics")) {
    c.metrics.clear();
    for (const auto& m : j["metrics"]) c.metrics.push_back(parse_metric(m.get<std::string>()));
  }
  c.seed = get_or(j, "seed", c.seed);
  c.mc_samples = get_or(j, "mc_samples", c.mc_samples);
  c.threads = get_or(j, "threads", c.threads);
  c.max_test_users = get_or(j, "max_test_users", c.max_test_users);
  c.output_dir = get_or<std::string>(j, "output", "");
  c.record_user_scores = get_or(j, "record_user_scores", c.record_user_scores);
  if (j.contains("cat")) {
    const json& cat = j["cat"];
    check_keys(cat, {"grid", "em", "criteria", "banks", "fit_inline"}, "cat");
    if (cat.contains("grid")) c.cat.grid = grid_from_json(cat["grid"]);
    if (cat.contains("em")) {
      check_keys(cat["em"], {"max_iters", "tol", "seed", "mstep_max_iters"}, "cat.em");
      c.cat.em.max_iters = get_or(cat["em"], "max_iters", c.cat.em.max_iters);
      c.cat.em.tol = get_or(cat["em"], "tol", c.cat.em.tol);
      c.cat.em.seed = get_or(cat["em"], "seed", c.cat.em.seed);
      c.cat.em.mstep_max_iters = get_or(cat["em"], "mstep_max_iters", c.cat.em.mstep_max_iters);
    }
    if (cat.contains("criteria"))
      for (const auto& [k, v] : cat["criteria"].items()) c.cat.criteria[k] = parse_cat_criterion(v.get<std::string>());
    if (cat.contains("banks"))
      for (const auto& [k, v] : cat["banks"].items()) c.cat.banks[k] = v.get<std::string>();
    c.cat.fit_inline = get_or(cat, "fit_inline", c.cat.fit_inline);
  }

  require(c.prior_mode == "uniform" || c.prior_mode == "em" || c.prior_mode == "file",
          "prior.mode must be uniform, em or file");
  require(c.prior_mode != "file" || !c.prior_path.empty(), "prior.mode file needs prior.path");
  require(c.synthetic || !c.tensor_path.empty(), "config needs data.tensor or data.synthetic");
  require(c.synthetic || !c.responses_path.empty(), "config needs data.responses or data.synthetic");
  require(!c.policies.empty(), "at least one policy is required");
  for (const auto& p : c.policies)
    if (is_cat_policy(p))
      cat_policy_model(p);
    else
      parse_policy_kind(p);
  require(!c.metrics.empty(), "at least one metric is required");
  require(c.budget_all || !c.budgets.empty(), "at least one budget is required");
  require(c.mc_samples >= 1, "mc_samples must be at least 1");
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["data"] = {{"tensor", c.tensor_path}, {"responses", c.responses_path}};
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    j["data"]["synthetic"] = {{"n_personas", s.n_personas}, {"n_questions", s.n_questions},
                              {"n_categories", s.n_categories}, {"concentration", s.concentration},
                              {"n_users", s.n_users},         {"seed", s.seed},
                              {"prior", s.prior}};
  }
  j["prior"] = {{"mode", c.prior_mode},
                {"path", c.prior_path},
                {"em", {{"max_iters", c.em.max_iters}, {"tol", c.em.tol}, {"weight_floor", c.em.weight_floor}}}};
  j["split"] = {{"train_fraction", c.train_fraction}, {"seed", c.split_seed}};
  j["targets"] = {{"ids", c.target_ids}, {"count", c.n_targets}, {"seed", c.target_seed}};
  j["policies"] = c.policies;
  json budgets = json::array();
  for (auto b : c.budgets) budgets.push_back(b);
  if (c.budget_all) budgets.push_back("all");
  j["budgets"] = budgets;
  j["uncertainty"] = std::string(to_string(c.uncertainty));
  json metrics = json::array();
  for (auto m : c.metrics) metrics.push_back(std::string(to_string(m)));
  j["metrics"] = metrics;
  j["seed"] = c.seed;
  j["mc_samples"] = c.mc_samples;
  j["threads"] = c.threads;
  j["max_test_users"] = c.max_test_users;
  json cat = {{"em",
               {{"max_iters", c.cat.em.max_iters},
                {"tol", c.cat.em.tol},
                {"seed", c.cat.em.seed},
                {"mstep_max_iters", c.cat.em.mstep_max_iters}}},
              {"fit_inline", c.cat.fit_inline},
              {"criteria", json::object()},
              {"banks", c.cat.banks}};
  if (c.cat.grid)
    cat["grid"] = {{"theta_max", c.cat.grid->theta_max}, {"points", c.cat.grid->points}, {"dims", c.cat.grid->dims}};
  for (const auto& [k, v] : c.cat.criteria) cat["criteria"][k] = std::string(to_string(v));
  j["cat"] = cat;
  j["output"] = c.output_dir;
  j["record_user_scores"] = c.record_user_scores;
  return j;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, path + ": " + e.what());
  }
  ExperimentConfig c = experiment_config_from_json(j);
  // Relative paths are resolved against the config file's directory.
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.tensor_path);
  resolve(c.responses_path);
  resolve(c.prior_path);
  resolve(c.output_dir);
  for (auto& [_, p] : c.cat.banks) resolve(p);
  return c;
}

std::vector<std::size_t> choose_targets(const ExperimentConfig& config,
                                        const std::vector<std::string>& question_ids) {
  const std::size_t m = question_ids.size();
  std::vector<std::size_t> targets;
  if (!config.target_ids.empty()) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t x = 0; x < m; ++x) index.emplace(question_ids[x], x);
    for (const auto& id : config.target_ids) {
      const auto it = index.find(id);
      if (it == index.end()) fail(ErrorCode::InvalidArgument, "unknown target question '" + id + "'");
      targets.push_back(it->second);
    }
  } else {
    require(config.n_targets >= 1 && config.n_targets < m, "target count must lie in [1, m)");
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(config.target_seed);
    rng.shuffle(order);
    targets.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(config.n_targets));
  }
  std::sort(targets.begin(), targets.end());
  if (std::adjacent_find(targets.begin(), targets.end()) != targets.end())
    fail(ErrorCode::InvalidArgument, "duplicate target question");
  require(targets.size() < m, "at least one question must remain feasible");
  return targets;
}

namespace {

// Reorders dataset columns to the tensor's question order; tensor questions
// the dataset lacks become all-missing columns.
ResponseDataset align_to_tensor(const ResponseDataset& data, const TensorBundle& tensor) {
  if (data.n_categories != tensor.tensor.n_categories())
    fail(ErrorCode::InvalidArgument, "response K (" + std::to_string(data.n_categories) +
                                         ") differs from tensor K (" +
                                         std::to_string(tensor.tensor.n_categories()) + ")");
  std::unordered_map<std::string, std::size_t> tensor_index;
  for (std::size_t x = 0; x < tensor.question_ids.size(); ++x) tensor_index.emplace(tensor.question_ids[x], x);
  std::vector<std::size_t> source(tensor.question_ids.size(), std::numeric_limits<std::size_t>::max());
  for (std::size_t c = 0; c < data.question_ids.size(); ++c) {
    const auto it = tensor_index.find(data.question_ids[c]);
    if (it == tensor_index.end())
      fail(ErrorCode::InvalidArgument, "response question '" + data.question_ids[c] + "' is not in the tensor");
    source[it->second] = c;
  }
  ResponseDataset out;
  out.user_ids = data.user_ids;
  out.question_ids = tensor.question_ids;
  out.n_categories = data.n_categories;
  out.answers.n_users = data.n_users();
  out.answers.n_questions = tensor.question_ids.size();
  out.answers.values.assign(out.answers.n_users * out.answers.n_questions, kMissing);
  for (std::size_t u = 0; u < data.n_users(); ++u)
    for (std::size_t x = 0; x < out.answers.n_questions; ++x)
      if (source[x] != std::numeric_limits<std::size_t>::max())
        out.answers.user(u)[x] = data.answers.at(u, source[x]);
  return out;
}

}  // namespace

PreparedExperiment prepare_experiment(const ExperimentConfig& config) {
  PreparedExperiment prep;
  ResponseDataset all;
  if (config.synthetic) {
    const SyntheticSpec& s = *config.synthetic;
    SyntheticDictionary dict = generate_synthetic_dictionary(
        s.n_personas, s.n_questions, s.n_categories, s.concentration, derive_seed(s.seed, kDictionaryStream));
    const PersonaPrior generating = s.prior.empty() ? dict.prior : PersonaPrior(s.prior);
    require(generating.size() == s.n_personas, "synthetic prior length must equal n_personas");
    all = generate_synthetic_users(generating, dict.tensor, s.n_users, derive_seed(s.seed, kUsersStream),
                                   config.threads)
              .data;
    prep.tensor.tensor = std::move(dict.tensor);
    prep.tensor.persona_ids = default_ids('p', s.n_personas);
    prep.tensor.question_ids = default_ids('q', s.n_questions);
  } else {
    prep.tensor = load_tensor_fast(config.tensor_path);
    all = align_to_tensor(load_responses(config.responses_path), prep.tensor);
  }
  const LikelihoodTensor& tensor = prep.tensor.tensor;

  std::tie(prep.train, prep.test) = split_users(all, config.train_fraction, config.split_seed);
  if (config.max_test_users > 0 && prep.test.n_users() > config.max_test_users) {
    std::vector<std::size_t> keep(config.max_test_users);
    std::iota(keep.begin(), keep.end(), std::size_t{0});
    prep.test = subset_users(prep.test, keep);
  }

  prep.targets = choose_targets(config, prep.tensor.question_ids);
  for (std::size_t x = 0; x < tensor.n_questions(); ++x)
    if (!std::binary_search(prep.targets.begin(), prep.targets.end(), x)) prep.feasible.push_back(x);

  std::set<std::size_t> budgets(config.budgets.begin(), config.budgets.end());
  if (config.budget_all) budgets.insert(prep.feasible.size());
  for (std::size_t b : budgets)
    if (b > prep.feasible.size())
      fail(ErrorCode::BudgetExceedsFeasible, "budget " + std::to_string(b) + " exceeds the " +
                                                 std::to_string(prep.feasible.size()) + " feasible questions");
  prep.budgets.assign(budgets.begin(), budgets.end());

  const auto t0 = std::chrono::steady_clock::now();
  if (config.prior_mode == "uniform") {
    prep.prior = PersonaPrior::uniform(tensor.n_personas());
  } else if (config.prior_mode == "file") {
    prep.prior = load_prior(config.prior_path);
    require(prep.prior.size() == tensor.n_personas(), "prior file size does not match the tensor");
  } else {
    EmConfig em = config.em;
    em.threads = config.threads;
    prep.prior_fit = fit_prior_em(prep.train.answers, tensor, em);
    prep.prior = prep.prior_fit->prior;
  }
  prep.fit_seconds = seconds_since(t0);
  return prep;
}

std::string user_score_key(const std::string& policy, std::size_t budget, const std::string& metric) {
  return policy + "/" + std::to_string(budget) + "/" + metric;
}

const ResultCell* ResultTable::find(const std::string& policy, std::size_t budget,
                                    const std::string& metric) const {
  for (const auto& c : cells)
    if (c.policy == policy && c.budget == budget && c.metric == metric) return &c;
  return nullptr;
}

namespace {

// Running count / mean / M2, merged in a fixed order.
struct Moments {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double v) {
    ++n;
    const double d = v - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (v - mean);
  }
  void merge(const Moments& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double total = static_cast<double>(n + o.n);
    const double d = o.mean - mean;
    mean += d * static_cast<double>(o.n) / total;
    m2 += o.m2 + d * d * static_cast<double>(n) * static_cast<double>(o.n) / total;
    n += o.n;
  }
};

struct UserResult {
  std::vector<Moments> cells;  // budget-major, then metric
};

struct ScoringContext {
  const std::vector<std::size_t>& budgets;
  const std::vector<Metric>& metrics;
  const std::vector<std::size_t>& targets;
};

template <typename Predict>
void score_checkpoint(const ScoringContext& ctx, std::span<const Answer> responses, std::size_t budget_index,
                      Predict&& predict, UserResult& out) {
  for (std::size_t t : ctx.targets) {
    if (responses[t] == kMissing) continue;
    const std::vector<double> p = predict(t);
    for (std::size_t mi = 0; mi < ctx.metrics.size(); ++mi)
      out.cells[budget_index * ctx.metrics.size() + mi].add(
          score(ctx.metrics[mi], p, static_cast<std::size_t>(responses[t])));
  }
}

std::vector<std::size_t> user_feasible(std::span<const Answer> responses, const std::vector<std::size_t>& feasible) {
  std::vector<std::size_t> out;
  for (std::size_t x : feasible)
    if (responses[x] != kMissing) out.push_back(x);
  return out;
}

UserResult run_persona_user(const PreparedExperiment& prep, const ScoringContext& ctx, const Policy& policy,
                            const TargetSpec& target, std::span<const Answer> responses, Rng& rng) {
  const LikelihoodTensor& tensor = prep.tensor.tensor;
  UserResult out;
  out.cells.resize(ctx.budgets.size() * ctx.metrics.size());
  std::size_t next = 0;
  auto snapshot = [&](const SessionState& s) {
    while (next < ctx.budgets.size() && ctx.budgets[next] <= s.size()) {
      score_checkpoint(ctx, responses, next, [&](std::size_t t) { return posterior_predictive(s, t, tensor); }, out);
      ++next;
    }
  };
  const SessionState final_state = run_session(responses, ctx.budgets.back(), policy, prep.feasible, target,
                                               prep.prior, tensor, rng, snapshot);
  // Sessions that ran out of answered questions score their final state at
  // the remaining checkpoints.
  while (next < ctx.budgets.size()) {
    score_checkpoint(ctx, responses, next,
                     [&](std::size_t t) { return posterior_predictive(final_state, t, tensor); }, out);
    ++next;
  }
  return out;
}

UserResult run_cat_user(const CatModel& model, CatCriterion criterion, const ScoringContext& ctx,
                        const std::vector<std::size_t>& feasible, std::span<const Answer> responses) {
  UserResult out;
  out.cells.resize(ctx.budgets.size() * ctx.metrics.size());
  const std::vector<std::size_t> remaining = user_feasible(responses, feasible);
  CatSession session(model);
  std::size_t next = 0;
  for (std::size_t step = 0;; ++step) {
    while (next < ctx.budgets.size() && (ctx.budgets[next] <= step || step == remaining.size())) {
      score_checkpoint(ctx, responses, next, [&](std::size_t t) { return cat_predict(session, t, model); }, out);
      ++next;
    }
    if (next == ctx.budgets.size() || step == remaining.size()) break;
    const std::size_t item = cat_select(session, remaining, model, criterion);
    session = cat_update(session, item, static_cast<std::size_t>(responses[item]), model);
  }
  return out;
}

}  // namespace

ResultTable run_experiment(const ExperimentConfig& config) {
  PreparedExperiment prep = prepare_experiment(config);
  const LikelihoodTensor& tensor = prep.tensor.tensor;
  const TargetSpec target{prep.targets, config.uncertainty};
  const ScoringContext ctx{prep.budgets, config.metrics, prep.targets};
  const std::size_t n_users = prep.test.n_users();
  const std::size_t max_budget = prep.budgets.back();

  ResultTable table;
  table.config = to_json(config);
  // Thread count does not affect results, so it stays out of the echo.
  table.config.erase("threads");
  table.n_test_users = n_users;
  for (std::size_t t : prep.targets) table.target_ids.push_back(prep.tensor.question_ids[t]);

  for (const std::string& name : config.policies) {
    std::vector<UserResult> results(n_users);
    PolicyTiming timing;
    const std::uint64_t policy_seed = derive_seed(config.seed, name_stream(name));

    if (is_cat_policy(name)) {
      const IrtModelKind kind = cat_policy_model(name);
      const auto t_fit = std::chrono::steady_clock::now();
      IrtFit fit;
      if (const auto it = config.cat.banks.find(name); it != config.cat.banks.end()) {
        if (!std::filesystem::exists(it->second))
          fail(ErrorCode::MissingArtifact, "IRT bank for " + name + " not found: " + it->second);
        fit = load_irt_fit(it->second);
        require(fit.bank.kind() == kind, "bank file for " + name + " holds a " +
                                             std::string(to_string(fit.bank.kind())) + " model");
        require(fit.bank.size() == tensor.n_questions(), "bank file for " + name + " has the wrong item count");
      } else if (config.cat.fit_inline) {
        const GridConfig grid = config.cat.grid.value_or(default_grid(kind));
        IrtEmConfig em = config.cat.em;
        em.threads = config.threads;
        fit = fit_irt_em(prep.train.answers, tensor.n_categories(), kind,
                         is_multidimensional(kind) ? grid : GridConfig{grid.theta_max, grid.points, 1}, em);
      } else {
        fail(ErrorCode::MissingArtifact, "no IRT bank configured for " + name + " (cat.banks." + name + ")");
      }
      const CatModel model(fit.bank, TraitGrid(fit.grid));
      timing.fit_seconds = seconds_since(t_fit);
      CatCriterion criterion = model.grid().dims() == 1 ? CatCriterion::MEPV : CatCriterion::A_OPT;
      if (const auto it = config.cat.criteria.find(name); it != config.cat.criteria.end()) criterion = it->second;
      const auto t_inf = std::chrono::steady_clock::now();
      parallel_for(n_users, config.threads, [&](std::size_t u) {
        results[u] = run_cat_user(model, criterion, ctx, prep.feasible, prep.test.answers.user(u));
      });
      timing.inference_seconds = seconds_since(t_inf);
    } else {
      const PolicyKind kind = parse_policy_kind(name);
      Policy policy{kind, {}};
      const auto t_fit = std::chrono::steady_clock::now();
      if (kind == PolicyKind::NonAdaptive) {
        Rng rng(derive_seed(config.seed, kDesignStream));
        policy.order = design_nonadaptive(max_budget, prep.feasible, target, prep.prior, tensor, config.mc_samples,
                                          rng, config.threads);
      } else if (kind == PolicyKind::RandomFixed) {
        policy.order = prep.feasible;
        Rng rng(derive_seed(config.seed, kFixedOrderStream));
        rng.shuffle(policy.order);
      }
      timing.fit_seconds = prep.fit_seconds + seconds_since(t_fit);
      const auto t_inf = std::chrono::steady_clock::now();
      parallel_for(n_users, config.threads, [&](std::size_t u) {
        Rng rng(derive_seed(policy_seed, u));
        results[u] = run_persona_user(prep, ctx, policy, target, prep.test.answers.user(u), rng);
      });
      timing.inference_seconds = seconds_since(t_inf);
    }
    table.timing[name] = timing;

    for (std::size_t bi = 0; bi < prep.budgets.size(); ++bi)
      for (std::size_t mi = 0; mi < config.metrics.size(); ++mi) {
        const std::size_t cell = bi * config.metrics.size() + mi;
        Moments total;
        std::size_t users = 0;
        std::vector<double> per_user;
        if (config.record_user_scores) per_user.resize(n_users);
        for (std::size_t u = 0; u < n_users; ++u) {
          const Moments& m = results[u].cells[cell];
          total.merge(m);
          users += m.n > 0 ? 1 : 0;
          if (config.record_user_scores)
            per_user[u] = m.n > 0 ? m.mean : std::numeric_limits<double>::quiet_NaN();
        }
        ResultCell c;
        c.policy = name;
        c.budget = prep.budgets[bi];
        c.metric = std::string(to_string(config.metrics[mi]));
        c.count = total.n;
        c.users = users;
        c.mean = total.n > 0 ? total.mean : std::numeric_limits<double>::quiet_NaN();
        c.se = total.n > 1 ? std::sqrt(total.m2 / static_cast<double>(total.n - 1)) /
                                 std::sqrt(static_cast<double>(total.n))
                           : 0.0;
        table.cells.push_back(c);
        if (config.record_user_scores) table.user_scores[user_score_key(name, c.budget, c.metric)] = std::move(per_user);
      }
  }
  if (!config.output_dir.empty()) save_results(table, config.output_dir);
  return table;
}

}  // namespace baq
