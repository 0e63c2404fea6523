// baq: command-line front end. Every subcommand takes a JSON config file;
// `--set a.b=value` overrides any field and `--print-config` echoes the
// effective configuration without running anything.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "baq/dataset_io.hpp"
#include "baq/elicitation.hpp"
#include "baq/error.hpp"
#include "baq/harness.hpp"
#include "baq/irt.hpp"
#include "baq/kernels.hpp"
#include "baq/policies.hpp"
#include "baq/prior_fit.hpp"
#include "baq/rng.hpp"
#include "baq/transforms.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  bool print_config = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string output;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  cmd->add_option("config", c.config_path, "JSON config file")->required(config_required);
  cmd->add_option("--set", c.sets, "override a config field, e.g. --set split.seed=3");
  cmd->add_flag("--print-config", c.print_config, "print the effective config and exit");
  cmd->add_option("--seed", c.seed, "root seed");
  cmd->add_option("--threads", c.threads, "worker threads (0 = all cores)");
  cmd->add_option("-o,--output", c.output, "output path");
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

json load_json(const std::string& path) {
  try {
    return json::parse(baq::read_file(path));
  } catch (const json::exception& e) {
    baq::fail(baq::ErrorCode::ParseError, path + ": " + e.what());
  }
}

// Raw config with --set overrides applied.
json raw_config(const Common& c) {
  json j = c.config_path.empty() ? json::object() : load_json(c.config_path);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      baq::fail(baq::ErrorCode::InvalidArgument, "--set expects key=value, got '" + s + "'");
    std::string key = s.substr(0, eq);
    std::string pointer = "/";
    for (char ch : key) pointer += ch == '.' ? '/' : ch;
    j[json::json_pointer(pointer)] = parse_value(s.substr(eq + 1));
  }
  return j;
}

fs::path config_dir(const Common& c) {
  return c.config_path.empty() ? fs::path(".") : fs::path(c.config_path).parent_path();
}

std::string resolve(const Common& c, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (config_dir(c) / p).lexically_normal().string();
}

baq::ExperimentConfig experiment_config(const Common& c) {
  json j = raw_config(c);
  if (c.seed) j["seed"] = *c.seed;
  if (c.threads) j["threads"] = *c.threads;
  baq::ExperimentConfig cfg = baq::experiment_config_from_json(j);
  cfg.tensor_path = resolve(c, cfg.tensor_path);
  cfg.responses_path = resolve(c, cfg.responses_path);
  cfg.prior_path = resolve(c, cfg.prior_path);
  cfg.output_dir = resolve(c, cfg.output_dir);
  for (auto& [_, p] : cfg.cat.banks) p = resolve(c, p);
  return cfg;
}

std::string required_string(const json& j, const char* key, const char* cmd) {
  if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty())
    baq::fail(baq::ErrorCode::InvalidArgument, std::string(cmd) + ": config field '" + key + "' is required");
  return j[key].get<std::string>();
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

// ---------------------------------------------------------------------------

int cmd_run(const Common& c) {
  baq::ExperimentConfig cfg = experiment_config(c);
  if (!c.output.empty()) cfg.output_dir = c.output;
  if (c.print_config) return print(baq::to_json(cfg)), 0;
  if (cfg.output_dir.empty()) cfg.output_dir = "results";
  const baq::ResultTable table = baq::run_experiment(cfg);
  std::cout << baq::render_report(table);
  std::cout << "\nresults written to " << cfg.output_dir << '\n';
  return 0;
}

int cmd_design(const Common& c) {
  const baq::ExperimentConfig cfg = experiment_config(c);
  if (c.print_config) return print(baq::to_json(cfg)), 0;
  const baq::PreparedExperiment prep = baq::prepare_experiment(cfg);
  const std::size_t budget = prep.budgets.back();
  baq::Rng rng(baq::derive_seed(cfg.seed, 3));
  const baq::TargetSpec target{prep.targets, cfg.uncertainty};
  const auto order = baq::design_nonadaptive(budget, prep.feasible, target, prep.prior, prep.tensor.tensor,
                                             cfg.mc_samples, rng, cfg.threads);
  baq::Rng eval_rng(baq::derive_seed(cfg.seed, 5));
  const auto est = baq::estimate_expected_uncertainty(order, target, prep.prior, prep.tensor.tensor,
                                                      cfg.mc_samples, eval_rng);
  json ids = json::array();
  for (std::size_t x : order) ids.push_back(prep.tensor.question_ids[x]);
  const json out = {{"budget", budget},
                    {"questions", ids},
                    {"indices", order},
                    {"expected_uncertainty", est.mean},
                    {"std_error", est.std_error}};
  if (!c.output.empty())
    baq::write_file(c.output, out.dump(2) + '\n');
  else
    print(out);
  return 0;
}

int cmd_fit_prior(const Common& c) {
  baq::ExperimentConfig cfg = experiment_config(c);
  cfg.prior_mode = "em";
  if (c.print_config) return print(baq::to_json(cfg)), 0;
  const auto t0 = std::chrono::steady_clock::now();
  const baq::PreparedExperiment prep = baq::prepare_experiment(cfg);
  const auto& trace = prep.prior_fit->trace;
  const json meta = {{"tensor_sha256", baq::tensor_hash(prep.tensor.tensor)},
                     {"train_users", prep.train.n_users()},
                     {"iterations", trace.iterations},
                     {"converged", trace.converged},
                     {"log_likelihood", trace.log_likelihood},
                     {"config", baq::to_json(cfg)}};
  const std::string path = c.output.empty() ? (fs::path(cfg.output_dir.empty() ? "." : cfg.output_dir) / "prior.json").string()
                                            : c.output;
  baq::save_prior(prep.prior, path, meta);
  std::cout << "prior fitted in " << trace.iterations << " iterations ("
            << (trace.converged ? "converged" : "iteration cap") << "), "
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s -> " << path
            << '\n';
  return 0;
}

int cmd_fit_cat(const Common& c, const std::string& model_name) {
  const baq::ExperimentConfig cfg = experiment_config(c);
  if (c.print_config) return print(baq::to_json(cfg)), 0;
  const baq::IrtModelKind kind = baq::parse_irt_kind(model_name);
  const baq::PreparedExperiment prep = baq::prepare_experiment(cfg);
  baq::GridConfig grid = cfg.cat.grid.value_or(baq::default_grid(kind));
  if (!baq::is_multidimensional(kind)) grid.dims = 1;
  baq::IrtEmConfig em = cfg.cat.em;
  em.threads = cfg.threads;
  const baq::IrtFit fit = baq::fit_irt_em(prep.train.answers, prep.tensor.tensor.n_categories(), kind, grid, em);
  std::string lower(baq::to_string(kind));
  for (char& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  const std::string path = c.output.empty()
                               ? (fs::path(cfg.output_dir.empty() ? "." : cfg.output_dir) / ("bank_" + lower + ".json")).string()
                               : c.output;
  baq::save_irt_fit(fit, path);
  std::cout << baq::to_string(kind) << " fitted in " << fit.iterations << " EM iterations, log-likelihood "
            << (fit.log_likelihood.empty() ? 0.0 : fit.log_likelihood.back()) << " -> " << path << '\n';
  return 0;
}

int cmd_gen_synthetic(const Common& c) {
  json j = raw_config(c);
  if (c.seed) j["seed"] = *c.seed;
  if (!c.output.empty()) j["output_dir"] = c.output;
  const std::size_t n = j.value("n_personas", std::size_t{50});
  const std::size_t m = j.value("n_questions", std::size_t{30});
  const std::size_t K = j.value("n_categories", std::size_t{4});
  const double conc = j.value("concentration", 0.5);
  const std::size_t users = j.value("n_users", std::size_t{2500});
  const std::uint64_t seed = j.value("seed", std::uint64_t{0});
  const std::string out_dir = resolve(c, j.value("output_dir", std::string("synthetic")));
  j["output_dir"] = out_dir;
  if (c.print_config) return print(j), 0;
  const auto dict = baq::generate_synthetic_dictionary(n, m, K, conc, baq::derive_seed(seed, 1));
  const baq::PersonaPrior prior =
      j.contains("prior") ? baq::PersonaPrior(j["prior"].get<std::vector<double>>()) : dict.prior;
  const auto synth = baq::generate_synthetic_users(prior, dict.tensor, users, baq::derive_seed(seed, 2),
                                                   c.threads.value_or(1));
  fs::create_directories(out_dir);
  baq::save_tensor(dict.tensor, (fs::path(out_dir) / "tensor.jsonl").string());
  baq::save_responses(synth.data, (fs::path(out_dir) / "responses.csv").string());
  baq::save_prior(prior, (fs::path(out_dir) / "prior.json").string(), {{"generator", j}});
  const json truth = {{"user_ids", synth.data.user_ids}, {"true_persona", synth.true_persona}};
  baq::write_file((fs::path(out_dir) / "truth.json").string(), truth.dump() + '\n');
  std::cout << "wrote " << n << " personas x " << m << " questions and " << users << " users to " << out_dir << '\n';
  return 0;
}

int cmd_elicit(const Common& c) {
  json j = raw_config(c);
  if (!c.output.empty()) j["output"] = c.output;
  if (c.threads) j["api"]["max_concurrency"] = *c.threads;
  const baq::ApiConfig api = baq::api_config_from_json(j.value("api", json::object()));
  const std::string mode = j.value("mode", std::string("distribution"));
  const std::string personas_path = resolve(c, required_string(j, "personas", "elicit"));
  const std::string questions_path = resolve(c, required_string(j, "questions", "elicit"));
  const std::string cache_dir = resolve(c, j.value("cache_dir", std::string("elicitation_cache")));
  const std::string output = resolve(c, required_string(j, "output", "elicit"));
  if (c.print_config) {
    json eff = j;
    eff["api"] = baq::to_json(api);
    eff["cache_dir"] = cache_dir;
    return print(eff), 0;
  }
  const auto personas = baq::load_personas(personas_path);
  const auto questions = baq::load_questions(questions_path);
  if (mode == "distribution") {
    const auto res = baq::elicit_tensor(personas, questions, api, cache_dir);
    baq::save_tensor(res.bundle, output);
    std::cout << "tensor written to " << output << " (" << res.stats.cache_hits << " cached, "
              << res.stats.network_calls << " requests)\n";
  } else if (mode == "mode") {
    const auto res = baq::elicit_modes(personas, questions, api, cache_dir);
    json ids_p = json::array(), ids_q = json::array();
    for (const auto& p : personas) ids_p.push_back(p.persona_id);
    for (const auto& q : questions) ids_q.push_back(q.question_id);
    const json out = {{"persona_ids", ids_p}, {"question_ids", ids_q}, {"modes", res.modes}};
    baq::write_file(output, out.dump() + '\n');
    std::cout << "modes written to " << output << " (" << res.stats.cache_hits << " cached, "
              << res.stats.network_calls << " requests)\n";
  } else {
    baq::fail(baq::ErrorCode::InvalidArgument, "elicit: mode must be 'distribution' or 'mode'");
  }
  return 0;
}

int cmd_cluster(const Common& c) {
  json j = raw_config(c);
  if (c.seed) j["seed"] = *c.seed;
  if (!c.output.empty()) j["output"] = c.output;
  if (c.print_config) return print(j), 0;
  const auto bundle = baq::load_tensor_fast(resolve(c, required_string(j, "tensor", "cluster")));
  const baq::PersonaPrior prior = j.contains("prior") ? baq::load_prior(resolve(c, j["prior"].get<std::string>()))
                                                      : baq::PersonaPrior::uniform(bundle.tensor.n_personas());
  baq::ClusterConfig cc;
  cc.n_clusters = j.value("n_clusters", cc.n_clusters);
  cc.prune_mass = j.value("prune_mass", cc.prune_mass);
  cc.max_kmeans_iters = j.value("max_kmeans_iters", cc.max_kmeans_iters);
  cc.seed = j.value("seed", cc.seed);
  cc.threads = c.threads.value_or(1);
  const auto res = baq::cluster_dictionary(bundle.tensor, prior, cc);
  const std::string output = resolve(c, required_string(j, "output", "cluster"));
  baq::TensorBundle out{res.tensor, baq::default_ids('c', res.tensor.n_personas()), bundle.question_ids};
  baq::save_tensor(out, output);
  json assignment = json::object();
  for (std::size_t i = 0; i < res.assignment.size(); ++i) assignment[bundle.persona_ids[i]] = res.assignment[i];
  baq::save_prior(res.prior, output + ".prior.json",
                  {{"source_tensor_sha256", baq::tensor_hash(bundle.tensor)},
                   {"assignment", assignment},
                   {"objective", res.objective}});
  std::cout << "clustered " << bundle.tensor.n_personas() << " personas into " << res.tensor.n_personas()
            << " prototypes -> " << output << '\n';
  return 0;
}

int cmd_transform(const Common& c) {
  json j = raw_config(c);
  if (!c.output.empty()) j["output"] = c.output;
  if (c.print_config) return print(j), 0;
  const auto bundle = baq::load_tensor_fast(resolve(c, required_string(j, "tensor", "transform")));
  const std::string kind = required_string(j, "kind", "transform");
  baq::TensorBundle out = bundle;
  if (kind == "temperature") {
    out.tensor = baq::temperature_scale(bundle.tensor, j.value("tau", 1.0));
  } else if (kind == "det-noise") {
    std::vector<std::size_t> modes;
    if (j.contains("modes")) {
      const json mj = load_json(resolve(c, j["modes"].get<std::string>()));
      modes = mj.at("modes").get<std::vector<std::size_t>>();
    } else {
      modes = baq::modes_from_tensor(bundle.tensor);
    }
    out.tensor = baq::deterministic_with_noise(modes, bundle.tensor.n_personas(), bundle.tensor.n_questions(),
                                               j.value("epsilon", 0.1), bundle.tensor.n_categories());
  } else {
    baq::fail(baq::ErrorCode::InvalidArgument, "transform: kind must be 'temperature' or 'det-noise'");
  }
  const std::string output = resolve(c, required_string(j, "output", "transform"));
  baq::save_tensor(out, output);
  std::cout << kind << " transform written to " << output << '\n';
  return 0;
}

int cmd_import(const Common& c) {
  json j = raw_config(c);
  if (!c.output.empty()) j["output"] = c.output;
  if (c.print_config) return print(j), 0;
  const auto data = baq::import_survey_csv(resolve(c, required_string(j, "input", "import")),
                                           j.value("n_categories", std::size_t{4}), j.value("max_missing", 0.2));
  const std::string output = resolve(c, required_string(j, "output", "import"));
  baq::save_responses(data, output);
  std::cout << "kept " << data.n_users() << " users and " << data.n_questions() << " questions -> " << output << '\n';
  return 0;
}

int cmd_interactive(const Common& c, const std::string& questions_path, const std::string& transcript_path,
                    std::size_t max_questions) {
  const baq::ExperimentConfig cfg = experiment_config(c);
  if (c.print_config) return print(baq::to_json(cfg)), 0;
  const baq::PreparedExperiment prep = baq::prepare_experiment(cfg);
  baq::InteractiveOptions o;
  o.tensor = prep.tensor;
  o.prior = prep.prior;
  o.targets = prep.targets;
  o.feasible = prep.feasible;
  o.uncertainty = cfg.uncertainty;
  o.max_questions = max_questions;
  if (!questions_path.empty())
    for (const auto& q : baq::load_questions(questions_path)) o.question_text[q.question_id] = q.question_text;
  const baq::Transcript t = baq::interactive_session(o, std::cin, std::cout);
  const std::string path = transcript_path.empty() ? "transcript.json" : transcript_path;
  baq::write_file(path, baq::to_json(t).dump(2) + '\n');
  std::cout << "transcript written to " << path << '\n';
  return 0;
}

int cmd_report(const Common& c) {
  if (c.print_config) return print(load_json(c.config_path)), 0;
  const baq::ResultTable table = baq::result_table_from_json(load_json(c.config_path));
  const std::string text = baq::render_report(table);
  if (!c.output.empty())
    baq::write_file(c.output, text);
  else
    std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian adaptive querying over persona mixtures"};
  app.require_subcommand(1);
  app.add_flag_callback("--scalar-kernels", [] { baq::kernels::set_active_backend(baq::kernels::Backend::Scalar); },
                        "disable SIMD kernels");

  Common common;
  std::string cat_model = "grm", questions_path, transcript_path;
  std::size_t max_questions = 0;

  auto* run = app.add_subcommand("run", "run an experiment and write results");
  add_common(run, common);
  auto* design = app.add_subcommand("design", "compute a non-adaptive question design");
  add_common(design, common);
  auto* fit_prior = app.add_subcommand("fit-prior", "fit the persona prior by EM on the training split");
  add_common(fit_prior, common);
  auto* fit_cat = app.add_subcommand("fit-cat", "calibrate an IRT item bank on the training split");
  add_common(fit_cat, common);
  fit_cat->add_option("--model", cat_model, "grm, gpcm, mgrm or mgpcm");
  auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic dictionary and users");
  add_common(gen, common, false);
  auto* elicit = app.add_subcommand("elicit", "elicit a likelihood tensor from a chat-completion endpoint");
  add_common(elicit, common);
  auto* cluster = app.add_subcommand("cluster", "compress a persona dictionary by clustering");
  add_common(cluster, common);
  auto* transform = app.add_subcommand("transform", "temperature scaling or deterministic-with-noise");
  add_common(transform, common);
  auto* import = app.add_subcommand("import", "import a wide survey CSV");
  add_common(import, common);
  auto* interactive = app.add_subcommand("interactive", "answer adaptively chosen questions in the terminal");
  add_common(interactive, common);
  interactive->add_option("--questions", questions_path, "question texts (JSON)");
  interactive->add_option("--transcript", transcript_path, "transcript output path");
  interactive->add_option("--max-questions", max_questions, "stop after this many answers");
  auto* report = app.add_subcommand("report", "render a results JSON as text tables");
  add_common(report, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "baq: " << e.what() << " (see --help)\n";
    return 2;
  }

  try {
    if (run->parsed()) return cmd_run(common);
    if (design->parsed()) return cmd_design(common);
    if (fit_prior->parsed()) return cmd_fit_prior(common);
    if (fit_cat->parsed()) return cmd_fit_cat(common, cat_model);
    if (gen->parsed()) return cmd_gen_synthetic(common);
    if (elicit->parsed()) return cmd_elicit(common);
    if (cluster->parsed()) return cmd_cluster(common);
    if (transform->parsed()) return cmd_transform(common);
    if (import->parsed()) return cmd_import(common);
    if (interactive->parsed()) return cmd_interactive(common, questions_path, transcript_path, max_questions);
    if (report->parsed()) return cmd_report(common);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "baq: " << msg << '\n';
    return 1;
  }
  return 2;
}
