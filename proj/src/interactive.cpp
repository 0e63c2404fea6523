#include <algorithm>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include "baq/dataset_io.hpp"
#include "baq/error.hpp"
#include "baq/harness.hpp"

namespace baq {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_probs(std::span<const double> p) {
  std::string out = "[";
  char buf[32];
  for (std::size_t k = 0; k < p.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.3f", p[k]);
    out += (k > 0 ? ", " : "") + std::string(buf);
  }
  return out + "]";
}

void print_state(const InteractiveOptions& o, const SessionState& state, std::ostream& out) {
  const LikelihoodTensor& t = o.tensor.tensor;
  out << "target predictions:\n";
  for (std::size_t x : o.targets)
    out << "  " << o.tensor.question_ids[x] << " " << format_probs(posterior_predictive(state, x, t)) << '\n';
  const auto w = state.posterior().weights();
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t top = std::min(o.top_personas, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    [&](std::size_t a, std::size_t b) { return w[a] > w[b] || (w[a] == w[b] && a < b); });
  out << "top personas:\n";
  char buf[32];
  for (std::size_t i = 0; i < top; ++i) {
    std::snprintf(buf, sizeof buf, "%.4f", w[order[i]]);
    out << "  " << o.tensor.persona_ids[order[i]] << " " << buf << '\n';
  }
}

}  // namespace

Transcript interactive_session(const InteractiveOptions& o, std::istream& in, std::ostream& out) {
  const LikelihoodTensor& tensor = o.tensor.tensor;
  require(o.prior.size() == tensor.n_personas(), "prior size does not match the tensor");
  require(!o.targets.empty(), "interactive session needs at least one target");
  const std::size_t K = tensor.n_categories();
  const TargetSpec target{o.targets, o.uncertainty};
  const std::size_t limit = o.max_questions == 0 ? o.feasible.size() : std::min(o.max_questions, o.feasible.size());

  Transcript tr;
  tr.tensor_sha256 = tensor_hash(tensor);
  tr.prior.assign(o.prior.weights().begin(), o.prior.weights().end());
  for (std::size_t x : o.targets) tr.target_ids.push_back(o.tensor.question_ids[x]);

  SessionState state(o.prior, tensor.n_questions());
  Rng unused(0);  // greedy selection draws nothing
  bool quit = false;
  while (!quit && state.size() < limit) {
    const std::size_t q = select_next(state, o.feasible, Policy::greedy(), target, tensor, unused);
    const std::string& qid = o.tensor.question_ids[q];
    const auto text = o.question_text.find(qid);
    out << "\nQ" << state.size() + 1 << " [" << qid << "]"
        << (text != o.question_text.end() ? ": " + text->second : std::string()) << '\n';
    std::size_t answer = 0;
    for (;;) {
      out << "answer 1-" << K << " or 'quit': " << std::flush;
      std::string line;
      if (!std::getline(in, line)) {
        quit = true;
        break;
      }
      line = trim(line);
      if (line == "quit" || line == "q") {
        quit = true;
        break;
      }
      try {
        std::size_t used = 0;
        const long v = std::stol(line, &used);
        if (used == line.size() && v >= 1 && static_cast<std::size_t>(v) <= K) {
          answer = static_cast<std::size_t>(v - 1);
          break;
        }
      } catch (const std::exception&) {
      }
      out << "please enter a number from 1 to " << K << '\n';
    }
    if (quit) break;
    state = posterior_update(state, q, answer, tensor);
    tr.steps.push_back({q, qid, answer});
    print_state(o, state, out);
  }

  out << "\nfinal prediction after " << state.size() << " answers\n";
  print_state(o, state, out);
  tr.final_weights.assign(state.posterior().weights().begin(), state.posterior().weights().end());
  for (std::size_t x : o.targets) tr.final_predictions.push_back(posterior_predictive(state, x, tensor));
  return tr;
}

SessionState replay_transcript(const Transcript& transcript, const LikelihoodTensor& tensor) {
  if (!transcript.tensor_sha256.empty() && transcript.tensor_sha256 != tensor_hash(tensor))
    fail(ErrorCode::InvalidArgument, "transcript was recorded against a different tensor");
  SessionState state(PersonaPrior(transcript.prior), tensor.n_questions());
  for (const auto& step : transcript.steps) state = posterior_update(state, step.question, step.answer, tensor);
  return state;
}

json to_json(const Transcript& t) {
  json steps = json::array();
  for (const auto& s : t.steps)
    steps.push_back({{"question", s.question}, {"question_id", s.question_id}, {"answer", s.answer + 1}});
  return {{"format", "baq-transcript"},
          {"tensor_sha256", t.tensor_sha256},
          {"prior", t.prior},
          {"target_ids", t.target_ids},
          {"steps", steps},
          {"final_weights", t.final_weights},
          {"final_predictions", t.final_predictions}};
}

Transcript transcript_from_json(const json& j) {
  try {
    Transcript t;
    t.tensor_sha256 = j.value("tensor_sha256", "");
    t.prior = j.at("prior").get<std::vector<double>>();
    t.target_ids = j.value("target_ids", std::vector<std::string>{});
    for (const auto& s : j.at("steps")) {
      const auto answer = s.at("answer").get<std::size_t>();
      require(answer >= 1, "transcript answers are 1-based");
      t.steps.push_back({s.at("question").get<std::size_t>(), s.value("question_id", ""), answer - 1});
    }
    t.final_weights = j.value("final_weights", std::vector<double>{});
    t.final_predictions = j.value("final_predictions", std::vector<std::vector<double>>{});
    return t;
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, std::string("transcript: ") + e.what());
  }
}

}  // namespace baq
