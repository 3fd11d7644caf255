// Command-line harness: episode simulation, demonstration collection,
// policy training, protocol-grid evaluation, report emission, and trace
// replay. Exit codes: 0 success, 1 usage error, 2 runtime failure.
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tactsim/eval.hpp"

namespace fs = std::filesystem;
using namespace tactsim;

namespace {

struct GlobalArgs {
  std::string config_file;
  std::uint64_t seed{0};
  std::string out_dir{"out"};
  std::vector<std::string> sets;
};

Config loadConfig(const GlobalArgs& g) { return Config::load(g.config_file, g.sets); }

void writeFile(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataFormatError("cannot open output file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataFormatError("write failed: " + path.string());
}

void writeSummary(const GlobalArgs& g, const std::string& command, Json extra) {
  extra["command"] = command;
  extra["seed"] = g.seed;
  writeFile(fs::path(g.out_dir) / "summary.json", extra.dump(2) + "\n");
}

int runSimulate(const GlobalArgs& g, const std::string& object, double delta,
                const std::string& direction, const std::string& checkpoint) {
  const Config cfg = loadConfig(g);
  EpisodeProtocol proto;
  proto.object = object.empty() ? cfg.get<std::string>("eval.object") : object;
  proto.delta_mm = delta;
  proto.direction = parseEdgeDirection(direction);
  proto.seed = g.seed;
  proto.timeout_s = cfg.get<double>("controller.timeout_s");

  std::unique_ptr<PolicyNet> policy;
  if (!checkpoint.empty()) policy = std::make_unique<PolicyNet>(PolicyNet::load(checkpoint));
  const EpisodeTrace trace = runEpisode(cfg, proto, policy.get());

  Dataset ds;
  ds.config_hash = cfg.hash();
  ds.episodes.push_back(trace);
  fs::create_directories(g.out_dir);
  saveDataset(ds, (fs::path(g.out_dir) / "trace.tsds").string());
  writeFile(fs::path(g.out_dir) / "signals.csv", signalTraceCsv(trace));

  Json j;
  j["object"] = proto.object;
  j["delta_mm"] = proto.delta_mm;
  j["direction"] = toString(proto.direction);
  j["agent"] = trace.meta.agent;
  j["outcome"] = toString(trace.outcome);
  j["duration_s"] = trace.duration_s;
  j["ticks"] = trace.ticks.size();
  writeSummary(g, "simulate", j);
  std::printf("simulate: %s after %.2f s (%zu ticks)\n", toString(trace.outcome),
              trace.duration_s, trace.ticks.size());
  return 0;
}

int runCollectDemos(const GlobalArgs& g) {
  const Config cfg = loadConfig(g);
  const Dataset ds = collectDemos(cfg, g.seed);
  fs::create_directories(g.out_dir);
  saveDataset(ds, (fs::path(g.out_dir) / "demos.tsds").string());

  Json j;
  j["episodes"] = ds.episodes.size();
  j["object"] = cfg.get<std::string>("eval.object");
  j["per_edge"] = cfg.get<int>("demos.per_edge");
  writeSummary(g, "collect-demos", j);
  std::printf("collect-demos: %zu successful episodes stored\n", ds.episodes.size());
  return 0;
}

int runTrain(const GlobalArgs& g, const std::string& demos_path, const std::string& variant) {
  const Config cfg = loadConfig(g);
  const Dataset ds = loadDataset(demos_path);
  const PolicyConfig pol = PolicyConfig::fromConfig(cfg);
  const auto pairs = slicePairs(cfg, ds, pol);

  PolicyNet net(pol, parseVariant(variant), g.seed);
  const TrainResult res = trainPolicy(net, pairs, g.seed);

  fs::create_directories(g.out_dir);
  net.save((fs::path(g.out_dir) / "policy.tsck").string(), cfg.hash());
  std::string curve = "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < res.loss_curve.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i, res.loss_curve[i]);
    curve += buf;
  }
  writeFile(fs::path(g.out_dir) / "loss_curve.csv", curve);

  Json j;
  j["variant"] = variant;
  j["pairs"] = pairs.size();
  j["train_steps"] = res.loss_curve.size();
  j["epoch1_mean_loss"] = res.epoch1_mean;
  j["final_mean_loss"] = res.final_mean;
  writeSummary(g, "train", j);
  std::printf("train: %s over %zu pairs, epoch-1 loss %.3f -> final %.3f\n", variant.c_str(),
              pairs.size(), res.epoch1_mean, res.final_mean);
  return 0;
}

int runEval(const GlobalArgs& g, const std::string& checkpoint,
            std::vector<std::string> objects) {
  const Config cfg = loadConfig(g);
  if (objects.empty()) objects.push_back(cfg.get<std::string>("eval.object"));

  std::unique_ptr<PolicyNet> policy;
  if (!checkpoint.empty()) policy = std::make_unique<PolicyNet>(PolicyNet::load(checkpoint));
  const EvalReport report = evaluate(cfg, objects, policy.get(), g.seed);

  writeFile(fs::path(g.out_dir) / "eval.json", report.toJson().dump(2) + "\n");
  writeFile(fs::path(g.out_dir) / "report.csv", reportCsv({report}));

  int total_s = 0, total_r = 0;
  for (const auto& c : report.cells) {
    total_s += c.successes;
    total_r += c.rollouts;
  }
  Json j;
  j["policy_id"] = report.policy_id;
  j["successes"] = total_s;
  j["rollouts"] = total_r;
  writeSummary(g, "eval", j);
  std::printf("eval: %s %d/%d successful rollouts\n", report.policy_id.c_str(), total_s,
              total_r);
  return 0;
}

int runReport(const GlobalArgs& g, const std::vector<std::string>& inputs) {
  std::vector<EvalReport> reports;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw DataFormatError("cannot open eval report: " + path);
    Json j;
    in >> j;
    reports.push_back(EvalReport::fromJson(j));
  }
  const std::string csv = reportCsv(reports);
  writeFile(fs::path(g.out_dir) / "report.csv", csv);

  Json j;
  j["inputs"] = inputs;
  j["reports"] = Json::array();
  for (const auto& r : reports) j["reports"].push_back(r.toJson());
  writeSummary(g, "report", j);
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int runReplay(const GlobalArgs& g, const std::string& trace_path, int episode_index) {
  const Config cfg = loadConfig(g);
  const Dataset ds = loadDataset(trace_path);
  if (episode_index < 0 || episode_index >= static_cast<int>(ds.episodes.size()))
    throw DataFormatError("episode index out of range: " + std::to_string(episode_index));
  const EpisodeTrace& trace = ds.episodes[static_cast<std::size_t>(episode_index)];
  const auto ticks = replayTrace(cfg, trace);

  std::string csv = "t_s,mode,direction,events\n";
  char buf[64];
  for (const auto& t : ticks) {
    std::snprintf(buf, sizeof(buf), "%.9g,", t.t_s);
    csv += buf;
    csv += toString(t.stream.mode);
    csv += ",";
    csv += toString(t.stream.direction);
    csv += ",";
    for (std::size_t i = 0; i < t.stream.events.size(); ++i) {
      if (i) csv += ";";
      csv += toString(t.stream.events[i].kind);
    }
    csv += "\n";
  }
  writeFile(fs::path(g.out_dir) / "replay.csv", csv);
  writeFile(fs::path(g.out_dir) / "signals.csv", signalTraceCsv(trace));

  Json j;
  j["trace"] = trace_path;
  j["episode"] = episode_index;
  j["ticks"] = ticks.size();
  j["outcome"] = toString(trace.outcome);
  writeSummary(g, "replay", j);
  std::printf("replay: %zu ticks reclassified from %s\n", ticks.size(), trace_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tactsim: dynamic tactile sensing and insertion simulator"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs g;
  app.add_option("--config", g.config_file, "Config file (layered under env and --set)");
  app.add_option("--seed", g.seed, "Root random seed");
  app.add_option("--out", g.out_dir, "Output directory");
  app.add_option("--set", g.sets, "Config override key=value (repeatable)");

  auto* sim = app.add_subcommand("simulate", "Run a single episode and store its trace");
  std::string sim_object, sim_direction = "+x", sim_checkpoint;
  double sim_delta = 2.0;
  sim->add_option("--object", sim_object, "Catalog object (default from config)");
  sim->add_option("--delta", sim_delta, "Initial lateral offset in mm");
  sim->add_option("--direction", sim_direction, "Offset direction: +x, -x, +y, -y");
  sim->add_option("--checkpoint", sim_checkpoint, "Policy checkpoint (default: expert)");

  auto* demos = app.add_subcommand("collect-demos", "Collect scripted-expert demonstrations");

  auto* train = app.add_subcommand("train", "Train a diffusion policy on demonstrations");
  std::string train_demos, train_variant = "vision+tactile";
  train->add_option("--demos", train_demos, "Demonstration dataset file")->required();
  train->add_option("--variant", train_variant,
                    "Policy variant: vision-only, vision+force, vision+tactile, tactile-only");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a policy over the protocol grid");
  std::string eval_checkpoint;
  std::vector<std::string> eval_objects;
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "Policy checkpoint (default: expert)");
  eval_cmd->add_option("--objects", eval_objects, "Catalog objects (default from config)");

  auto* report = app.add_subcommand("report", "Aggregate eval outputs into a CSV table");
  std::vector<std::string> report_inputs;
  report->add_option("inputs", report_inputs, "eval.json files")->required();

  auto* replay = app.add_subcommand("replay", "Re-run the stream pipeline over a stored trace");
  std::string replay_trace;
  int replay_episode = 0;
  replay->add_option("--trace", replay_trace, "Trace dataset file")->required();
  replay->add_option("--episode", replay_episode, "Episode index within the dataset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) return runSimulate(g, sim_object, sim_delta, sim_direction, sim_checkpoint);
    if (demos->parsed()) return runCollectDemos(g);
    if (train->parsed()) return runTrain(g, train_demos, train_variant);
    if (eval_cmd->parsed()) return runEval(g, eval_checkpoint, eval_objects);
    if (report->parsed()) return runReport(g, report_inputs);
    if (replay->parsed()) return runReplay(g, replay_trace, replay_episode);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "tactsim: %s\n", e.what());
    return 2;
  }
  return 1;
}
