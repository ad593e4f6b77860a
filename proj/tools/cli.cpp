// Copyright 2026 The flowcast Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cli.hpp"

#include "flowcast/diagnostics/gradient_suite.hpp"
#include "flowcast/ensemble/ensemble.hpp"
#include "flowcast/error.hpp"
#include "flowcast/training/training.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace flowcast::cli
{
namespace
{

using nlohmann::json;

struct UsageError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

struct Globals
{
  std::uint64_t seed = 0;
  int threads = 1;
  std::string config;
};

struct GenerateArgs
{
  Index n = 64;
  std::string out;
  SyntheticConfig synthetic;
};

struct TrainArgs
{
  std::string data, out, history, steps;
  ModelConfig model;
  TrainConfig train;
  bool no_augment = false;
  bool hard_mining = false;
  HardMiningConfig mining;
  Index proxy_epochs = 2;
  std::string mined_out;
};

struct PredictArgs
{
  std::string checkpoint, data, out;
  Index agent_capacity = 0, map_capacity = 0;
};

struct EvaluateArgs
{
  std::string pred, data, out;
  std::string brier = "additive";
};

struct EnsembleArgs
{
  std::vector<std::string> inputs;
  Index k = 6;
  std::string out;
};

struct GradcheckArgs
{
  int points = 10;
  std::vector<std::string> cases;
  double tolerance = 1e-4;
  std::string out;
};

struct PlotArgs
{
  std::vector<std::string> pred;
  std::string data, scenario, out;
};

std::string read_file(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string & path, const std::string & text)
{
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write '" + path + "'");
}

std::string value_text(const json & v)
{
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number() || v.is_null()) return v.dump();
  throw UsageError("config values must be scalars or arrays of scalars");
}

CLI::Option * find_option(CLI::App * app, const std::string & key)
{
  for (CLI::App * a = app; a != nullptr; a = a->get_parent()) {
    if (auto * opt = a->get_option_no_throw("--" + key)) return opt;
  }
  return nullptr;
}

/// Keys of the JSON object are long flag names; their values replace whatever was given on the command line.
void apply_config(CLI::App * sub, const std::string & path)
{
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception & e) {
    throw SchemaError("config '" + path + "': " + e.what());
  }
  if (!doc.is_object()) throw SchemaError("config '" + path + "' must be a JSON object");
  for (const auto & [key, value] : doc.items()) {
    if (key == "config") throw UsageError("config files cannot nest --config");
    auto * opt = find_option(sub, key);
    if (opt == nullptr) throw UsageError("unknown config key '" + key + "'");
    opt->clear();
    if (value.is_array()) {
      for (const auto & item : value) opt->add_result(value_text(item));
    } else {
      opt->add_result(value_text(value));
    }
    opt->run_callback();
  }
}

json option_value(const CLI::Option * opt)
{
  const auto & r = opt->results();
  if (r.empty()) {
    if (opt->get_expected_max() == 0) return false;
    if (opt->get_expected_max() > 1) return json::array();
    return opt->get_default_str();
  }
  if (opt->get_expected_max() == 0) return r.back() != "false" && r.back() != "0";
  if (opt->get_expected_max() > 1) return r;
  return r.back();
}

json resolved_config(const CLI::App & app, const CLI::App & sub)
{
  json j;
  j["subcommand"] = sub.get_name();
  for (const CLI::App * a : {&app, &sub}) {
    for (const auto * opt : a->get_options()) {
      if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
      j[opt->get_lnames().front()] = option_value(opt);
    }
  }
  return j;
}

BrierConvention parse_brier(const std::string & name)
{
  if (name == "additive") return BrierConvention::kAdditive;
  if (name == "multiplicative") return BrierConvention::kMultiplicative;
  throw UsageError("--brier must be 'additive' or 'multiplicative'");
}

std::string metrics_line(const EvalResult & r)
{
  if (!r.mean) return "no scenarios";
  const auto & m = *r.mean;
  return fmt::format(
    "minADE {:.4f} minFDE {:.4f} miss_rate {:.4f} brier_minADE {:.4f} brier_minFDE {:.4f}", m.min_ade, m.min_fde, m.miss,
    m.brier_min_ade, m.brier_min_fde);
}

void run_generate(const Globals & g, const GenerateArgs & a, std::ostream & out)
{
  if (a.n < 0) throw UsageError("--n must be non-negative");
  save_jsonl(generate_synthetic(g.seed, a.n, a.synthetic), a.out);
  out << fmt::format("wrote {} scenarios to {}\n", a.n, a.out);
}

void run_train(const Globals & g, TrainArgs a, std::ostream & out, std::ostream & log)
{
  const auto corpus = load_jsonl(a.data);
  a.model.seed = g.seed;
  a.train.seed = g.seed;
  a.train.threads = g.threads;
  a.train.augment = !a.no_augment;
  std::vector<std::size_t> sampling(corpus.size());
  for (std::size_t i = 0; i < sampling.size(); ++i) sampling[i] = i;
  if (a.hard_mining) {
    TrainConfig proxy = a.train;
    proxy.epochs = a.proxy_epochs;
    const auto mined = hard_mine(corpus, a.model, proxy, a.mining);
    sampling = mined.sampling;
    log << fmt::format("hard mining: {} of {} scored scenarios oversampled x{}\n", mined.mined.size(),
                       mined.complement.size(), a.mining.r);
    if (!a.mined_out.empty()) {
      json j = json::array();
      for (auto i : mined.mined) j.push_back(corpus[i].scenario_id);
      write_file(a.mined_out, j.dump() + "\n");
    }
  }
  const auto result = train(corpus, sampling, a.model, a.train);
  save_checkpoint(result.checkpoint, a.out);
  write_file(a.history.empty() ? a.out + ".history.csv" : a.history, history_csv(result.epochs));
  if (!a.steps.empty()) write_file(a.steps, steps_csv(result.steps));
  for (const auto & e : result.epochs) {
    log << fmt::format("epoch {} lr {:.3g} loss {:.5g} val_brier_minFDE {:.4f}\n", e.epoch, e.lr, e.total,
                       e.val_brier_min_fde);
  }
  out << fmt::format("trained {} steps; checkpoint {}\n", result.steps.size(), a.out);
}

void run_predict(const Globals & g, const PredictArgs & a, std::ostream & out)
{
  const auto ckpt = load_checkpoint(a.checkpoint);
  ModelConfig cfg = ckpt.config;
  if (a.agent_capacity > 0) cfg.agent_capacity = a.agent_capacity;
  if (a.map_capacity > 0) cfg.map_capacity = a.map_capacity;
  check_compatible(ckpt.config, cfg);
  const auto corpus = load_jsonl(a.data);
  save_predictions(predict_corpus(ckpt.parameters, cfg, corpus, g.threads), a.out);
  out << fmt::format("wrote {} predictions to {}\n", corpus.size(), a.out);
}

void run_evaluate(const EvaluateArgs & a, std::ostream & out)
{
  const auto r = evaluate_corpus(load_predictions(a.pred), load_jsonl(a.data), parse_brier(a.brier));
  write_csv(r, a.out);
  out << metrics_line(r) << "\n";
}

void run_ensemble(const Globals & g, const EnsembleArgs & a, std::ostream & out)
{
  if (a.k < 1) throw UsageError("--k must be positive");
  mte_files(a.inputs, a.k, g.seed, a.out);
  out << fmt::format("fused {} prediction files into {}\n", a.inputs.size(), a.out);
}

bool run_gradcheck(const Globals & g, const GradcheckArgs & a, std::ostream & out)
{
  const auto results = gradient_suite(g.seed, a.points, a.cases);
  std::string csv = "case,points,max_relative_error,seconds,pass\n";
  bool ok = true;
  for (const auto & r : results) {
    const bool pass = r.max_relative_error <= a.tolerance;
    ok &= pass;
    csv += fmt::format("{},{},{:.6e},{:.3f},{}\n", r.name, r.points, r.max_relative_error, r.seconds, pass ? 1 : 0);
    out << fmt::format("{:<28} {} max_rel_err {:.3e} ({:.1f}s)\n", r.name, pass ? "PASS" : "FAIL", r.max_relative_error,
                       r.seconds);
  }
  if (!a.out.empty()) write_file(a.out, csv);
  return ok;
}

void run_plot(const PlotArgs & a, std::ostream & out)
{
  if (a.pred.empty() || a.pred.size() > 2) throw UsageError("--pred takes one or two prediction files");
  const auto corpus = load_jsonl(a.data);
  const Scenario * scene = nullptr;
  for (const auto & s : corpus) {
    if (s.scenario_id == a.scenario) scene = &s;
  }
  if (scene == nullptr) throw IoError("scenario '" + a.scenario + "' not found in " + a.data);
  std::vector<PredictionRecord> panels;
  std::vector<std::string> titles;
  for (const auto & path : a.pred) {
    bool found = false;
    for (auto & p : load_predictions(path)) {
      if (p.scenario_id != a.scenario) continue;
      panels.push_back(std::move(p));
      found = true;
      break;
    }
    if (!found) throw IoError("scenario '" + a.scenario + "' not found in " + path);
    titles.push_back(std::filesystem::path(path).filename().string());
  }
  write_file(a.out, render_svg(*scene, panels, titles));
  out << fmt::format("wrote {}\n", a.out);
}

int fail(std::ostream & log, int code, const std::string & category, std::string message)
{
  std::replace(message.begin(), message.end(), '\n', ' ');
  log << "error[" << category << "]: " << message << "\n";
  return code;
}

}  // namespace

int run(int argc, const char * const * argv, std::ostream & out, std::ostream & log)
{
  CLI::App app{"Multimodal trajectory forecasting toolkit", "flowcast"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random draw");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "JSON file whose keys override flags");

  GenerateArgs gen;
  auto * generate = app.add_subcommand("generate", "Write a synthetic scenario corpus");
  generate->add_option("--n", gen.n, "Number of scenarios");
  generate->add_option("--out", gen.out, "Output JSONL")->required();
  generate->add_option("--agents", gen.synthetic.n_agents, "Agents per scenario");
  generate->add_option("--lanes", gen.synthetic.n_lanes, "Lane polylines per scenario");

  TrainArgs tr;
  auto * train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", tr.data, "Training corpus (JSONL)")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--history", tr.history, "Per-epoch CSV (default <out>.history.csv)");
  train_cmd->add_option("--steps", tr.steps, "Per-step CSV");
  train_cmd->add_option("--width", tr.model.width);
  train_cmd->add_option("--modes", tr.model.modes);
  train_cmd->add_option("--agent-capacity", tr.model.agent_capacity);
  train_cmd->add_option("--map-capacity", tr.model.map_capacity);
  train_cmd->add_option("--encoder-depth", tr.model.encoder_depth);
  train_cmd->add_option("--decoder-depth", tr.model.decoder_depth);
  train_cmd->add_option("--lr", tr.train.lr);
  train_cmd->add_option("--epochs", tr.train.epochs);
  train_cmd->add_option("--batch-size", tr.train.batch_size);
  train_cmd->add_option("--max-steps", tr.train.max_steps);
  train_cmd->add_option("--grad-clip", tr.train.grad_clip);
  train_cmd->add_option("--val-fraction", tr.train.val_fraction);
  train_cmd->add_option("--beta1", tr.train.weights.beta_score, "Score loss weight");
  train_cmd->add_option("--beta2", tr.train.weights.beta_tf, "Temporal flow loss weight");
  train_cmd->add_flag("--no-augment", tr.no_augment);
  train_cmd->add_flag("--hard-mining", tr.hard_mining, "Oversample scenarios a proxy model finds hard");
  train_cmd->add_option("--subset-fraction", tr.mining.subset_fraction);
  train_cmd->add_option("--mining-q", tr.mining.q);
  train_cmd->add_option("--mining-r", tr.mining.r);
  train_cmd->add_option("--proxy-epochs", tr.proxy_epochs);
  train_cmd->add_option("--mined-out", tr.mined_out, "JSON list of mined scenario ids");

  PredictArgs pr;
  auto * predict_cmd = app.add_subcommand("predict", "Predict every scenario of a corpus");
  predict_cmd->add_option("--checkpoint", pr.checkpoint)->required();
  predict_cmd->add_option("--data", pr.data)->required();
  predict_cmd->add_option("--out", pr.out)->required();
  predict_cmd->add_option("--agent-capacity", pr.agent_capacity, "0 keeps the checkpoint's");
  predict_cmd->add_option("--map-capacity", pr.map_capacity, "0 keeps the checkpoint's");

  EvaluateArgs ev;
  auto * evaluate = app.add_subcommand("evaluate", "Score predictions against a corpus");
  evaluate->add_option("--pred", ev.pred)->required();
  evaluate->add_option("--data", ev.data)->required();
  evaluate->add_option("--out", ev.out, "Metrics CSV")->required();
  evaluate->add_option("--brier", ev.brier, "additive or multiplicative");

  EnsembleArgs en;
  auto * ensemble = app.add_subcommand("ensemble", "Fuse prediction files by endpoint clustering");
  ensemble->add_option("--inputs", en.inputs)->required()->expected(1, -1);
  ensemble->add_option("--k", en.k);
  ensemble->add_option("--out", en.out)->required();

  GradcheckArgs gc;
  auto * gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--points", gc.points);
  gradcheck->add_option("--case", gc.cases)->expected(0, -1);
  gradcheck->add_option("--tolerance", gc.tolerance);
  gradcheck->add_option("--out", gc.out, "Result CSV");

  PlotArgs pl;
  auto * plot = app.add_subcommand("plot", "Draw one scenario as SVG");
  plot->add_option("--pred", pl.pred, "One file, or two for a side-by-side comparison")->required()->expected(1, 2);
  plot->add_option("--data", pl.data)->required();
  plot->add_option("--scenario", pl.scenario)->required();
  plot->add_option("--out", pl.out)->required();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
      return app.exit(e, out, log);
    } catch (const CLI::CallForAllHelp & e) {
      return app.exit(e, out, log);
    } catch (const CLI::CallForVersion & e) {
      return app.exit(e, out, log);
    } catch (const CLI::ParseError & e) {
      return fail(log, kUsage, "usage", e.what());
    }
    CLI::App * sub = app.get_subcommands().front();
    if (!g.config.empty()) apply_config(sub, g.config);
    log << "config " << resolved_config(app, *sub).dump() << "\n";

    if (sub == generate) {
      run_generate(g, gen, out);
    } else if (sub == train_cmd) {
      run_train(g, tr, out, log);
    } else if (sub == predict_cmd) {
      run_predict(g, pr, out);
    } else if (sub == evaluate) {
      run_evaluate(ev, out);
    } else if (sub == ensemble) {
      run_ensemble(g, en, out);
    } else if (sub == gradcheck) {
      if (!run_gradcheck(g, gc, out)) return fail(log, kNumerical, "numerical", "gradient check above tolerance");
    } else {
      run_plot(pl, out);
    }
    return kOk;
  } catch (const CLI::ParseError & e) {
    return fail(log, kUsage, "usage", e.what());
  } catch (const UsageError & e) {
    return fail(log, kUsage, "usage", e.what());
  } catch (const ShapeError & e) {
    return fail(log, kUsage, "usage", e.what());
  } catch (const IoError & e) {
    return fail(log, kIo, "io", e.what());
  } catch (const SchemaError & e) {
    return fail(log, kIo, "schema", e.what());
  } catch (const NumericalError & e) {
    return fail(log, kNumerical, "numerical", e.what());
  } catch (const std::exception & e) {
    return fail(log, kInternal, "internal", e.what());
  }
}

}  // namespace flowcast::cli
