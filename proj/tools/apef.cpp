// apef: command line front end for the evaluation framework.
#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>

#include "apef/annotation.hpp"
#include "apef/dataset_io.hpp"
#include "apef/error.hpp"
#include "apef/io.hpp"
#include "apef/llm.hpp"
#include "apef/metrics.hpp"
#include "apef/optimizer.hpp"
#include "apef/policy.hpp"
#include "apef/stats.hpp"
#include "apef/trainer.hpp"

using namespace apef;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_vars(const std::string& s) { return task_variables(s); }

json breakdown_json(const ScoreBreakdown& b) {
  json segs = json::array();
  for (const auto& s : b.segments) {
    segs.push_back({{"name", s.name}, {"first", s.first}, {"length", s.length}, {"distance", s.distance}});
  }
  return {{"similarity", b.similarity}, {"s_total", b.s_total},     {"s_peak", b.s_peak},
          {"s_peak_x", b.s_peak_x},     {"s_peak_y", b.s_peak_y},   {"s_deriv", b.s_deriv},
          {"s_slope", b.s_slope},       {"s_curv", b.s_curv},       {"s_before", b.s_before},
          {"s_in", b.s_in},             {"s_after", b.s_after},     {"segmented", b.segmented},
          {"rise_start", b.rise_start}, {"fall_end", b.fall_end},   {"segments", segs}};
}

const TimeSeries& pick(const std::vector<TimeSeries>& all, const std::string& variable, const std::string& file) {
  for (const auto& s : all) {
    if (variable.empty() || s.variable == variable) return s;
  }
  throw Error(ErrorCode::kInvalidParams, file + " has no series for variable " + variable);
}

// Candidates from a directory of series files; the file stem is the id.
std::vector<Candidate> load_candidates(const fs::path& dir, const std::vector<TimeSeries>& obs) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".csv" || ext == ".json")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Candidate> out;
  for (const auto& f : files) {
    const auto all = io::load_series(f);
    Candidate c;
    c.id = f.stem().string();
    for (const auto& o : obs) c.series.push_back(pick(all, o.variable, f.string()));
    out.push_back(std::move(c));
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidParams, "no candidate files in " + dir.string());
  return out;
}

HttpAdapterConfig http_config(const json& j) {
  HttpAdapterConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.path = j.value("path", c.path);
  c.model = j.value("model", c.model);
  c.body_template = j.value("body_template", c.body_template);
  c.response_pointer = j.value("response_pointer", c.response_pointer);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.backoff_ms = j.value("backoff_ms", c.backoff_ms);
  c.timeout_s = j.value("timeout_s", c.timeout_s);
  return c;
}

TargetRanking expert_target(const fs::path& export_file) {
  const json ex = json::parse(io::read_text(export_file));
  std::vector<Annotation> a;
  for (const json& x : ex.at("annotations")) a.push_back(annotation_from_json(x));
  return majority_vote(a).ranking;
}

AnnotationServer* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive policy evaluation framework"};
  app.require_subcommand(1);

  // score
  auto* score = app.add_subcommand("score", "Base metric similarity of one prediction");
  std::string pred_file, obs_file, variable;
  MetricWeights w;
  bool normalize = false;
  score->add_option("--pred", pred_file, "prediction series (.csv/.json)")->required();
  score->add_option("--obs", obs_file, "observation series")->required();
  score->add_option("--variable", variable, "variable to score (default: first)");
  score->add_option("--w-peak", w.w_peak);
  score->add_option("--w-der", w.w_der);
  score->add_option("--w-amp", w.w_amp);
  score->add_option("--tolerance", w.tolerance);
  score->add_flag("--normalize", normalize, "min-max normalize by the observation range");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset directory");
  std::string scenario = "peak", out_dir;
  std::uint64_t seed = 1;
  std::size_t n = 20, length = 365;
  gen->add_option("--scenario", scenario, "peak | deriv | amp")->check(CLI::IsMember({"peak", "deriv", "amp"}));
  gen->add_option("--seed", seed);
  gen->add_option("--n", n, "number of candidates")->check(CLI::Range(4, 1000));
  gen->add_option("--length", length, "series length")->check(CLI::Range(30, 100000));
  gen->add_option("--out", out_dir)->required();

  // optimize
  auto* opt = app.add_subcommand("optimize", "Deterministic weight search on a dataset");
  std::string data_dir, vars_text = "GPP";
  int budget = 200;
  opt->add_option("--data", data_dir)->required();
  opt->add_option("--scenario", scenario, "preset_peak | preset_deriv | preset_amp | ilamb | expert");
  opt->add_option("--variables", vars_text, "GPP, CO2 or GPP+CO2");
  opt->add_option("--budget", budget);

  // policy apply / validate
  auto* policy = app.add_subcommand("policy", "Apply or validate an evaluation policy");
  policy->require_subcommand(1);
  auto* apply = policy->add_subcommand("apply", "Rank candidates under a policy");
  std::string policy_file, cand_dir;
  apply->add_option("--policy", policy_file)->required();
  apply->add_option("--candidates", cand_dir, "directory of candidate series files")->required();
  apply->add_option("--obs", obs_file)->required();
  auto* validate = policy->add_subcommand("validate", "Accept or reject a candidate policy on the validation split");
  std::string candidate_file, incumbent_file, val_dir;
  int runs = 5;
  validate->add_option("--candidate", candidate_file)->required();
  validate->add_option("--incumbent", incumbent_file);
  validate->add_option("--val", val_dir, "dataset directory")->required();
  validate->add_option("--scenario", scenario);
  validate->add_option("--variables", vars_text);
  validate->add_option("--runs", runs);

  // train
  auto* train = app.add_subcommand("train", "Run a full training");
  std::string config_file, record_file, annotations_file, script_file;
  train->add_option("--config", config_file)->required();
  train->add_option("--data", data_dir)->required();
  train->add_option("--out", out_dir)->required();
  train->add_option("--script", script_file, "scripted mode: script or transcript to replay");
  train->add_option("--record", record_file, "write a transcript of every model exchange");
  train->add_option("--annotations", annotations_file, "expert scenario: export from the annotation service");

  // serve
  auto* serve = app.add_subcommand("serve", "Annotation service");
  std::string journal, host = "127.0.0.1", token, static_dir;
  int port = 8080;
  serve->add_option("--data", data_dir)->required();
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->add_option("--journal", journal)->required();
  serve->add_option("--token", token, "shared token (or APEF_ANNOTATION_TOKEN)");
  serve->add_option("--static", static_dir, "directory served at / (browser client)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*score) {
      const auto preds = io::load_series(pred_file);
      const auto obs = io::load_series(obs_file);
      MetricOptions o;
      o.normalize = normalize;
      const auto b = base_metric(pick(preds, variable, pred_file), pick(obs, variable, obs_file), w, o);
      std::cout << breakdown_json(b).dump(2) << "\n";
    } else if (*gen) {
      const DatasetBundle b = synthetic_bundle(n, seed, "preset_" + scenario, length);
      save_dataset(out_dir, b);
      std::cout << "wrote " << b.data.candidates.size() << " candidates to " << out_dir << "\n";
    } else if (*opt) {
      const DatasetBundle b = load_dataset(data_dir);
      const auto vars = split_vars(vars_text);
      const Scenario sc = scenario_from_string(scenario);
      const TargetRanking t = scenario_target(b, sc, vars);
      OptimizerContext ctx;
      ctx.data = &b.data;
      ctx.variables = vars;
      ctx.train_target = t.restrict_to(b.data.split.train);
      const OptimizeResult r = deterministic_optimize(MetricWeights{}, ctx, budget);
      const TargetRanking val = t.restrict_to(b.data.split.validation);
      const double rho = spearman(bundle_scores(r.weights, b.data, val.ids, vars), val.scores);
      std::cout << json{{"weights", json::parse(serialize_weights(r.weights))},
                        {"moves", r.history.size()},
                        {"train_correlation", r.objective.primary},
                        {"validation_correlation", rho}}
                       .dump(2)
                << "\n";
    } else if (*apply) {
      const Policy p = parse_policy(io::read_text(policy_file));
      const auto obs = io::load_series(obs_file);
      const PolicyVerdict v = apply_policy(p, load_candidates(cand_dir, obs), obs);
      json cands = json::array();
      for (const auto& c : v.candidates) {
        cands.push_back({{"id", c.id}, {"raw", c.raw}, {"score", c.score ? json(*c.score) : json(nullptr)},
                         {"error", c.error}});
      }
      std::cout << json{{"ranking", v.ranking}, {"candidates", cands}}.dump(2) << "\n";
    } else if (*validate) {
      const DatasetBundle b = load_dataset(val_dir);
      const auto vars = split_vars(vars_text);
      const TargetRanking t =
          scenario_target(b, scenario_from_string(scenario == "peak" ? "preset_peak" : scenario), vars);
      const Policy cand = parse_policy(io::read_text(candidate_file));
      std::optional<Policy> inc;
      if (!incumbent_file.empty()) inc = parse_policy(io::read_text(incumbent_file));
      std::vector<Candidate> val;
      for (const auto& id : b.data.split.validation) val.push_back({id, b.data.predictions_for(id, vars), {}});
      InterpreterEvaluator ev;
      const ValidationDecision d = validate_policy(cand, inc ? &*inc : nullptr, val, b.data.observations_for(vars),
                                                   t.restrict_to(b.data.split.validation), runs, ev);
      std::cout << json{{"accepted", d.accepted},           {"wins", d.wins},
                        {"runs", d.runs},                   {"candidate_rho", d.candidate_rho},
                        {"incumbent_rho", d.incumbent_rho}, {"reason", d.reason}}
                       .dump(2)
                << "\n";
      return d.accepted ? 0 : 3;
    } else if (*train) {
      const json cj = json::parse(io::read_text(config_file));
      RunConfig c = config_from_json(cj);
      const DatasetBundle b = load_dataset(data_dir);
      const TargetRanking t = c.scenario == Scenario::kExpert && !annotations_file.empty()
                                  ? expert_target(annotations_file)
                                  : scenario_target(b, c.scenario, c.variables);
      fs::create_directories(out_dir);
      if (c.log_path.empty()) c.log_path = (fs::path(out_dir) / "iterations.jsonl").string();

      std::unique_ptr<LlmAdapter> base;
      if (c.mode == AdapterMode::kScripted) {
        fs::path script = script_file.empty() ? fs::path(c.script_path) : fs::path(script_file);
        if (script.empty()) throw Error(ErrorCode::kInvalidParams, "scripted mode needs --script or script_path");
        if (script.is_relative() && script_file.empty()) script = fs::path(config_file).parent_path() / script;
        base = std::make_unique<ScriptedAdapter>(ScriptedAdapter::from_file(script));
      } else if (c.mode == AdapterMode::kLlm) {
        base = std::make_unique<HttpAdapter>(http_config(cj.value("llm", json::object())));
      }
      std::unique_ptr<RecordingAdapter> recorder;
      const std::string record = record_file.empty() ? c.transcript_path : record_file;
      if (base && !record.empty()) {
        recorder = std::make_unique<RecordingAdapter>(*base, std::make_shared<TranscriptWriter>(record));
      }
      LlmAdapter* adapter = recorder ? static_cast<LlmAdapter*>(recorder.get()) : base.get();
      const RunReport r = run_training(c, b.data, t, adapter);
      io::write_text(fs::path(out_dir) / "report.json", serialize_report(r));
      if (r.final_policy) io::write_text(fs::path(out_dir) / "policy.json", serialize_policy(*r.final_policy) + "\n");
      std::cout << "validation (weights) " << r.validation_weights << ", test (weights) " << r.test.weights;
      if (r.test.policy) std::cout << ", test (policy) " << *r.test.policy;
      std::cout << "\nreport: " << (fs::path(out_dir) / "report.json").string() << "\n";
    } else if (*serve) {
      if (token.empty()) {
        if (const char* env = std::getenv("APEF_ANNOTATION_TOKEN")) token = env;
      }
      const DatasetBundle b = load_dataset(data_dir);
      AnnotationStore store({{fs::path(data_dir).filename().string().empty() ? "dataset"
                                                                             : fs::path(data_dir).filename().string(),
                              b.data}},
                            journal);
      AnnotationServer server(store, token);
      if (!static_dir.empty() && !server.mount_static(static_dir)) {
        throw Error(ErrorCode::kIoError, "cannot serve " + static_dir);
      }
      const int bound = server.bind(host, port);
      if (bound < 0) throw Error(ErrorCode::kIoError, "cannot bind " + host + ":" + std::to_string(port));
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << host << ":" << bound << " (" << store.vote_count()
                << " votes in journal)" << std::endl;
      server.listen_after_bind();
      g_server = nullptr;
    }
  } catch (const Error& e) {
    std::cerr << "apef: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "apef: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
