// Command-line front end: flow generation, training, evaluation, baselines,
// the SOTL grid search, and result comparison. Every run writes a manifest
// with the full configuration and a hash so strict-deterministic runs can be
// reproduced byte for byte.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <unistd.h>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "attendlight/baselines.hpp"
#include "attendlight/checkpoint.hpp"
#include "attendlight/flow.hpp"
#include "attendlight/metrics.hpp"
#include "attendlight/sim.hpp"
#include "attendlight/topology.hpp"
#include "attendlight/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace attendlight;

namespace {

// Exit codes shared by all subcommands.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitMissingFile = 2;
constexpr int kExitSchema = 3;
constexpr int kExitUnknownCase = 4;

class CliError : public std::runtime_error {
 public:
  CliError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError(kExitMissingFile, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Writes via a temp file and an atomic rename so concurrent runs never see
// torn result files.
void write_file(const std::string& path, const std::string& text) {
  if (fs::path(path).has_parent_path())
    fs::create_directories(fs::path(path).parent_path());
  std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CliError(kExitMissingFile, "cannot write '" + path + "'");
    out << text;
  }
  fs::rename(tmp, path);
}

std::string trace_csv(const std::vector<SimTraceRow>& rows) {
  std::ostringstream out;
  out << "tick,phase,in_yellow,pressure,arrivals,exits\n";
  for (const auto& r : rows)
    out << r.tick_s << ',' << r.phase << ',' << (r.in_yellow ? 1 : 0) << ',' << r.pressure
        << ',' << r.arrivals << ',' << r.exits << '\n';
  return out.str();
}

struct TopoSpec {
  std::string name;  // preset name or file stem
  Intersection intersection;
};

TopoSpec resolve_topology(const std::string& spec, int phases) {
  const auto& catalog = builtin_catalog();
  std::vector<std::string> candidates;
  if (phases > 0) candidates.push_back(spec + "-" + std::to_string(phases) + "p");
  candidates.push_back(spec);
  for (const auto& name : candidates)
    if (auto preset = catalog.lookup(name)) {
      if (phases > 0 && static_cast<int>(preset->num_phases()) != phases)
        throw CliError(kExitUsage, "preset '" + name + "' does not have " +
                                       std::to_string(phases) + " phases");
      return {name, *preset};
    }
  // Not a preset: treat as a file path.
  std::string text = read_file(spec);
  Intersection ix;
  try {
    ix = parse_topology(text);
  } catch (const TopologyError& e) {
    throw CliError(kExitSchema, std::string("bad topology file: ") + e.what());
  }
  if (phases > 0 && static_cast<int>(ix.num_phases()) != phases)
    throw CliError(kExitUsage, "topology does not have the requested phase count");
  return {fs::path(spec).stem().string(), ix};
}

struct FlowSpec {
  std::string name;  // synthetic preset name, "synthetic", or file stem
  std::optional<SyntheticParams> synthetic;
  std::optional<FlowTrace> fixed;
};

// --synthetic accepts "lambda=4,extra=0.3[,processes=2]" or a preset name
// like "s1".
SyntheticParams parse_synthetic(const std::string& text, std::string& name) {
  if (text.size() == 2 && text[0] == 's' && text[1] >= '1' && text[1] <= '6') {
    name = text;
    return synthetic_preset(text);
  }
  SyntheticParams params;
  name = "synthetic";
  std::istringstream in(text);
  std::string field;
  while (std::getline(in, field, ',')) {
    auto eq = field.find('=');
    if (eq == std::string::npos)
      throw CliError(kExitUsage, "bad --synthetic field '" + field + "'");
    std::string key = field.substr(0, eq);
    double value = std::stod(field.substr(eq + 1));
    if (key == "lambda") params.lambda_s = value;
    else if (key == "extra") params.extra_prob = value;
    else if (key == "processes") params.n_processes = static_cast<int>(value);
    else throw CliError(kExitUsage, "unknown --synthetic key '" + key + "'");
  }
  return params;
}

FlowSpec resolve_flow(const std::string& flow_path, const std::string& synthetic) {
  FlowSpec spec;
  if (!synthetic.empty()) {
    std::string name;
    spec.synthetic = parse_synthetic(synthetic, name);
    spec.name = name;
    return spec;
  }
  if (flow_path.empty())
    throw CliError(kExitUsage, "need --flow or --synthetic");
  std::string text = read_file(flow_path);
  try {
    spec.fixed = read_flow(text);
  } catch (const FlowError& e) {
    throw CliError(kExitSchema, std::string("bad flow file: ") + e.what());
  }
  spec.name = fs::path(flow_path).stem().string();
  return spec;
}

EnvInstance make_env(const TopoSpec& topo, const FlowSpec& flow, double horizon,
                     std::uint64_t flow_seed) {
  SimConfig cfg;
  cfg.horizon_s = horizon;
  std::string case_id =
      topo.name + "-" + flow.name + "-" + std::to_string(topo.intersection.num_phases());
  if (flow.synthetic)
    return EnvInstance::from_synthetic(case_id, topo.intersection, *flow.synthetic, flow_seed,
                                       cfg);
  EnvInstance env = EnvInstance::from_flow(case_id, topo.intersection, *flow.fixed, cfg);
  env.sim.horizon_s = env.flow.horizon_s;
  return env;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::istringstream in(text);
  std::string field;
  while (std::getline(in, field, ','))
    if (!field.empty()) seeds.push_back(std::stoull(field));
  if (seeds.empty()) throw CliError(kExitUsage, "no seeds given");
  return seeds;
}

void write_manifest(const std::string& out_path, const std::string& command, json config) {
  config["tool_version"] = 1;
  json manifest;
  manifest["command"] = command;
  manifest["config"] = config;
  std::string canonical = config.dump();
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical)));
  manifest["config_hash"] = std::string(hex);
  write_file(out_path, manifest.dump(2) + "\n");
}

void append_results(const std::string& path, const std::vector<ResultRow>& fresh) {
  std::vector<ResultRow> rows;
  if (fs::exists(path)) {
    try {
      rows = read_results_csv(read_file(path));
    } catch (const MetricsError& e) {
      throw CliError(kExitSchema, std::string(e.what()) + " in '" + path + "'");
    }
  }
  rows.insert(rows.end(), fresh.begin(), fresh.end());
  write_file(path, write_results_csv(rows));
}

// "--env topo=int1,flow=path.csv" or "--env topo=int1,synthetic=s1,seed=7"
EnvInstance parse_env_spec(const std::string& text, double horizon) {
  std::string topo, flow_path, synthetic;
  int phases = 0;
  std::uint64_t seed = 1;
  std::istringstream in(text);
  std::string field;
  while (std::getline(in, field, ',')) {
    auto eq = field.find('=');
    if (eq == std::string::npos) throw CliError(kExitUsage, "bad --env field '" + field + "'");
    std::string key = field.substr(0, eq), value = field.substr(eq + 1);
    if (key == "topo") topo = value;
    else if (key == "flow") flow_path = value;
    else if (key == "synthetic") synthetic = value;
    else if (key == "phases") phases = std::stoi(value);
    else if (key == "seed") seed = std::stoull(value);
    else throw CliError(kExitUsage, "unknown --env key '" + key + "'");
  }
  if (topo.empty()) throw CliError(kExitUsage, "--env needs topo=");
  TopoSpec t = resolve_topology(topo, phases);
  FlowSpec f = resolve_flow(flow_path, synthetic);
  return make_env(t, f, horizon, seed);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"AttendLight traffic-signal laboratory"};
  app.require_subcommand(1);

  // Shared option storage.
  std::string topology, flow_path, synthetic, checkpoint_path, out_path, variant = "attention";
  std::string seeds_text = "1";
  std::string regime_text = "single";
  std::string algo = "fixedtime";
  std::string model_results, baseline_results, case_override, trace_path;
  std::vector<std::string> env_specs;
  int phases = 0, n = 0, episodes = 1000, d = 0;
  double lr = 0, horizon = 600;
  std::uint64_t seed = 1;
  bool strict = false;
  double sotl_delta = 2;
  int sotl_max_red = 7, sotl_min_green = 7;

  auto add_topology_opts = [&](CLI::App* cmd) {
    cmd->add_option("--topology", topology, "catalog preset name or topology file");
    cmd->add_option("--phases", phases, "require/select this phase count");
    cmd->add_option("--flow", flow_path, "flow trace file");
    cmd->add_option("--synthetic", synthetic, "synthetic params: lambda=<s>,extra=<p> or s1..s6");
    cmd->add_option("--horizon", horizon, "episode horizon in seconds");
  };

  auto* gen = app.add_subcommand("gen-flow", "generate a synthetic flow trace");
  add_topology_opts(gen);
  gen->add_option("--seed", seed);
  gen->add_option("--out", out_path)->required();

  auto* train_cmd = app.add_subcommand("train", "train a policy");
  add_topology_opts(train_cmd);
  train_cmd->add_option("--regime", regime_text, "single | multi | stochastic");
  train_cmd->add_option("--n", n, "parallel instances per iteration");
  train_cmd->add_option("--episodes", episodes, "training iterations");
  train_cmd->add_option("--lr", lr);
  train_cmd->add_option("--d", d, "model dimension");
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--variant", variant, "attention | mean-state");
  train_cmd->add_option("--checkpoint", checkpoint_path, "warm-start checkpoint");
  train_cmd->add_option("--env", env_specs, "multi-env instance spec (repeatable)");
  train_cmd->add_flag("--strict-deterministic", strict);
  train_cmd->add_option("--out", out_path, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  add_topology_opts(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint_path)->required();
  eval_cmd->add_option("--seeds", seeds_text, "comma-separated evaluation seeds");
  eval_cmd->add_option("--case", case_override, "override the derived case id");
  eval_cmd->add_option("--trace", trace_path, "write the first episode's tick trace here");
  eval_cmd->add_option("--out", out_path, "result csv (appended)")->required();

  auto* baseline_cmd = app.add_subcommand("baseline", "run a classical controller");
  add_topology_opts(baseline_cmd);
  baseline_cmd->add_option("--algo", algo, "fixedtime | maxpressure | sotl");
  baseline_cmd->add_option("--seeds", seeds_text);
  baseline_cmd->add_option("--case", case_override);
  baseline_cmd->add_option("--sotl-delta", sotl_delta);
  baseline_cmd->add_option("--sotl-max-red", sotl_max_red);
  baseline_cmd->add_option("--sotl-min-green", sotl_min_green);
  baseline_cmd->add_option("--trace", trace_path, "write the first episode's tick trace here");
  baseline_cmd->add_option("--out", out_path)->required();

  auto* grid_cmd = app.add_subcommand("grid-sotl", "SOTL parameter grid search");
  add_topology_opts(grid_cmd);
  grid_cmd->add_option("--seed", seed);
  grid_cmd->add_option("--out", out_path)->required();

  auto* compare_cmd = app.add_subcommand("compare", "join result files, emit rho/ratio tables");
  compare_cmd->add_option("--model", model_results)->required();
  compare_cmd->add_option("--baseline", baseline_results)->required();
  compare_cmd->add_option("--out", out_path)->required();

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    TopoSpec topo = resolve_topology(topology, phases);
    FlowSpec flow = resolve_flow("", synthetic);
    auto trace = generate_synthetic(topo.intersection, *flow.synthetic, horizon, seed);
    write_file(out_path, write_flow(trace));
    write_manifest(out_path + ".manifest.json", "gen-flow",
                   json{{"topology", topology},
                        {"synthetic", synthetic},
                        {"horizon", horizon},
                        {"seed", seed},
                        {"out", out_path}});
    std::cout << "wrote " << trace.records.size() << " arrivals to " << out_path << "\n";
    return kExitOk;
  }

  if (train_cmd->parsed()) {
    RegimeConfig cfg;
    if (regime_text == "single") cfg.regime = Regime::single_env;
    else if (regime_text == "multi") cfg.regime = Regime::multi_env;
    else if (regime_text == "stochastic") cfg.regime = Regime::stochastic_multi_env;
    else throw CliError(kExitUsage, "unknown regime '" + regime_text + "'");
    if (variant == "attention") cfg.variant = PolicyVariant::attention;
    else if (variant == "mean-state") cfg.variant = PolicyVariant::mean_state;
    else throw CliError(kExitUsage, "unknown variant '" + variant + "'");

    std::vector<EnvInstance> envs;
    if (!env_specs.empty()) {
      for (const auto& spec : env_specs) envs.push_back(parse_env_spec(spec, horizon));
    } else {
      TopoSpec topo = resolve_topology(topology, phases);
      FlowSpec flow = resolve_flow(flow_path, synthetic);
      envs.push_back(make_env(topo, flow, horizon, seed));
    }

    cfg.episodes = episodes;
    cfg.seed = seed;
    cfg.strict_deterministic = strict;
    bool multi_like = cfg.regime != Regime::single_env;
    cfg.d = d > 0 ? d : (multi_like ? 256 : 128);
    // The stochastic mini-batch regime trains at the single-env rate.
    cfg.lr = lr > 0 ? lr : (cfg.regime == Regime::multi_env ? 0.0005 : 0.005);
    if (n > 0) cfg.n = n;
    else if (cfg.regime == Regime::single_env) cfg.n = 3;
    else if (cfg.regime == Regime::stochastic_multi_env)
      cfg.n = std::min<int>(5, static_cast<int>(envs.size()));

    TrainResult result;
    if (!checkpoint_path.empty()) {
      Checkpoint warm = load_checkpoint_file(checkpoint_path);
      if (cfg.regime != Regime::single_env || envs.size() != 1)
        throw CliError(kExitUsage, "--checkpoint warm start expects a single environment");
      result = finetune(warm, envs[0], episodes, cfg.lr, seed, strict, cfg.threads);
    } else {
      result = train(cfg, envs);
    }

    fs::create_directories(out_path);
    save_checkpoint_file((fs::path(out_path) / "checkpoint.bin").string(), result.checkpoint);
    write_file((fs::path(out_path) / "curve.csv").string(),
               write_curve_csv(result.report, strict));
    json env_list = json::array();
    for (const auto& env : envs) env_list.push_back(env.case_id);
    write_manifest((fs::path(out_path) / "manifest.json").string(), "train",
                   json{{"topology", topology},
                        {"flow", flow_path},
                        {"synthetic", synthetic},
                        {"envs", env_list},
                        {"regime", regime_text},
                        {"n", cfg.n},
                        {"episodes", cfg.episodes},
                        {"lr", cfg.lr},
                        {"d", cfg.d},
                        {"seed", cfg.seed},
                        {"variant", variant},
                        {"strict_deterministic", strict},
                        {"warm_start", checkpoint_path},
                        {"horizon", horizon},
                        {"select_best", true},
                        {"checkpoint_id", result.report.checkpoint_id}});
    std::cout << "checkpoint: " << (fs::path(out_path) / "checkpoint.bin").string() << "\n";
    return kExitOk;
  }

  if (eval_cmd->parsed()) {
    TopoSpec topo = resolve_topology(topology, phases);
    FlowSpec flow = resolve_flow(flow_path, synthetic);
    EnvInstance env = make_env(topo, flow, horizon, seed);
    if (!case_override.empty()) env.case_id = case_override;
    Checkpoint ckpt = load_checkpoint_file(checkpoint_path);
    auto seeds = parse_seeds(seeds_text);
    std::vector<SimTraceRow> trace_rows;
    auto result = evaluate(ckpt, env, seeds, trace_path.empty() ? nullptr : &trace_rows);
    if (!trace_path.empty()) write_file(trace_path, trace_csv(trace_rows));
    std::vector<ResultRow> rows;
    for (std::size_t i = 0; i < seeds.size(); ++i)
      rows.push_back({env.case_id, "attendlight", seeds[i], result.per_seed_att[i]});
    append_results(out_path, rows);
    write_manifest(out_path + ".manifest.json", "eval",
                   json{{"topology", topology},
                        {"flow", flow_path},
                        {"synthetic", synthetic},
                        {"checkpoint", checkpoint_path},
                        {"seeds", seeds},
                        {"case", env.case_id}});
    std::cout << env.case_id << " mean ATT " << result.mean_att << " over " << seeds.size()
              << " seeds\n";
    return kExitOk;
  }

  if (baseline_cmd->parsed()) {
    TopoSpec topo = resolve_topology(topology, phases);
    FlowSpec flow = resolve_flow(flow_path, synthetic);
    EnvInstance env = make_env(topo, flow, horizon, seed);
    if (!case_override.empty()) env.case_id = case_override;
    ControllerKind kind;
    if (algo == "fixedtime") kind = ControllerKind::fixed_time;
    else if (algo == "maxpressure") kind = ControllerKind::max_pressure;
    else if (algo == "sotl") kind = ControllerKind::sotl;
    else throw CliError(kExitUsage, "unknown baseline '" + algo + "'");
    SotlParams sotl{sotl_delta, sotl_max_red, sotl_min_green};

    auto seeds = parse_seeds(seeds_text);
    std::vector<ResultRow> rows;
    std::vector<SimTraceRow> trace_rows;
    for (std::uint64_t s : seeds) {
      FlowTrace trace = env.flow_for_seed(s);
      bool want_trace = !trace_path.empty() && rows.empty();
      double att = run_controller_episode(env.topology, trace, env.sim, s, kind, sotl,
                                          want_trace ? &trace_rows : nullptr);
      rows.push_back({env.case_id, algo, s, att});
    }
    if (!trace_path.empty()) write_file(trace_path, trace_csv(trace_rows));
    append_results(out_path, rows);
    write_manifest(out_path + ".manifest.json", "baseline",
                   json{{"topology", topology},
                        {"flow", flow_path},
                        {"synthetic", synthetic},
                        {"algo", algo},
                        {"seeds", seeds},
                        {"case", env.case_id}});
    double mean = 0;
    for (const auto& r : rows) mean += r.att_s;
    std::cout << env.case_id << " " << algo << " mean ATT " << mean / rows.size() << "\n";
    return kExitOk;
  }

  if (grid_cmd->parsed()) {
    TopoSpec topo = resolve_topology(topology, phases);
    FlowSpec flow = resolve_flow(flow_path, synthetic);
    EnvInstance env = make_env(topo, flow, horizon, seed);
    auto result = sotl_grid_search(env.topology, env.flow, env.sim, seed);
    std::ostringstream csv;
    csv << "delta,max_red,min_green,att\n";
    csv.setf(std::ios::fixed);
    csv.precision(4);
    for (const auto& row : result.rows)
      csv << row.params.delta_s << ',' << row.params.max_red_count << ','
          << row.params.min_green_count << ',' << row.att << '\n';
    write_file(out_path, csv.str());
    write_manifest(out_path + ".manifest.json", "grid-sotl",
                   json{{"topology", topology},
                        {"flow", flow_path},
                        {"synthetic", synthetic},
                        {"seed", seed}});
    std::cout << "best sotl: delta=" << result.best.delta_s
              << " max_red=" << result.best.max_red_count
              << " min_green=" << result.best.min_green_count << " att=" << result.best_att
              << "\n";
    return kExitOk;
  }

  if (compare_cmd->parsed()) {
    std::vector<ResultRow> model, baseline;
    try {
      model = read_results_csv(read_file(model_results));
      baseline = read_results_csv(read_file(baseline_results));
    } catch (const MetricsError& e) {
      throw CliError(kExitSchema, e.what());
    }
    CompareReport report;
    try {
      report = compare_results(model, baseline);
    } catch (const MetricsError& e) {
      std::string what = e.what();
      throw CliError(what.find("unknown case id") != std::string::npos ? kExitUnknownCase
                                                                        : kExitSchema,
                     what);
    }
    write_file(out_path, write_compare_csv(report));
    write_manifest(out_path + ".manifest.json", "compare",
                   json{{"model", model_results}, {"baseline", baseline_results}});
    std::cout << "rho mean " << report.rho_summary.mean << " (ci95 +/- "
              << report.rho_summary.ci95_half << "), att-ratio mean "
              << report.ratio_summary.mean << " over " << report.rho_summary.k << " cases\n";
    return kExitOk;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingFile;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
