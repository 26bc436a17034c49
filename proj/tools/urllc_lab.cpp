#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "urllc/harness.hpp"

namespace {

int run_train_refiner(const nlohmann::json& cfg, const std::string& out) {
  const urllc::EnvConfig ecfg = urllc::env_config_from_json(cfg);
  const std::string trace =
      cfg.at("traffic").at("trace_path").get<std::string>();
  if (trace.empty())
    throw std::invalid_argument("train-refiner requires traffic.trace_path");
  std::filesystem::create_directories(out);
  urllc::write_text_file(out + "/config.json", cfg.dump(2) + "\n");

  for (std::uint64_t seed : urllc::seeds_from_json(cfg)) {
    urllc::Rng master(seed);
    urllc::Rng pos_rng(master.fork(1).seed());
    const std::vector<urllc::Point2D> positions =
        urllc::draw_positions(ecfg, pos_rng);
    const urllc::IngestResult ingest =
        urllc::ingest_trace(trace, ecfg.n_users, master.fork(4).seed());
    const urllc::Matrix raw = urllc::real_feature_matrix(
        ingest, ecfg, positions, master.fork(8).seed());
    const urllc::StandardizeStats stats = urllc::compute_stats(raw);
    const urllc::VirtualEnvSpec spec = urllc::virtual_env_spec_from_json(cfg);
    const urllc::RefinerResult rr = urllc::train_refiner(
        urllc::standardize_rows(raw, stats),
        urllc::synth_base_sampler(spec, stats),
        urllc::refiner_config_from_json(cfg), master.fork(5).seed());
    urllc::write_text_file(out + "/refiner_seed" + std::to_string(seed) +
                               ".json",
                           urllc::refiner_to_json(rr, stats) + "\n");
    std::cout << "seed " << seed
              << ": holdout_accuracy=" << rr.diag.holdout_accuracy
              << " mean_similarity=" << rr.diag.mean_similarity
              << " floor=" << rr.diag.final_floor
              << (rr.diag.aborted_mode_collapse ? " (mode collapse abort)" : "")
              << "\n";
  }
  std::cout << "refiner checkpoints in " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale lab for model-free URLLC resource management"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path, out_dir, scenario_id, run_dir;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  app.add_option("--config", config_path,
                 "JSON config file (problem file for `reduce`)");
  app.add_option("--seed", seed, "replace the seed list with this one seed");
  app.add_option("--out", out_dir, "output directory (overrides config)");
  app.add_option("--set", overrides,
                 "override one config leaf, dotted.path=value (repeatable)");

  CLI::App* sim = app.add_subcommand(
      "simulate", "run the baseline controller on the configured environment");
  CLI::App* trf = app.add_subcommand(
      "train-refiner", "adversarially train the traffic/channel refiner");
  CLI::App* pre = app.add_subcommand(
      "pretrain", "train an agent inside the refined virtual environment");
  CLI::App* dep = app.add_subcommand(
      "deploy", "train an agent on the real environment");
  CLI::App* sce = app.add_subcommand("scenario", "run a named scenario");
  sce->add_option("id", scenario_id,
                  "one of: pretrain, deploy, extreme_switch, sweep_bandwidth, "
                  "sweep_rate, sweep_packet_size, reducer_error, power_delay")
      ->required();
  CLI::App* emi = app.add_subcommand(
      "emit-plots", "aggregate a run directory into per-figure CSV tables");
  emi->add_option("run_dir", run_dir, "run directory (defaults to --out)");
  CLI::App* red = app.add_subcommand(
      "reduce", "one-shot solve of a channel/desired-rate problem file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (red->parsed()) {
      if (config_path.empty())
        throw std::invalid_argument("reduce requires --config <problem.json>");
      const nlohmann::json problem =
          nlohmann::json::parse(urllc::read_text_file(config_path));
      const nlohmann::json result = urllc::reduce_problem_json(problem);
      if (out_dir.empty()) {
        std::cout << result.dump(2) << "\n";
      } else {
        std::filesystem::create_directories(out_dir);
        urllc::write_text_file(out_dir + "/reduction.json",
                               result.dump(2) + "\n");
        std::cout << "wrote " << out_dir << "/reduction.json\n";
      }
      return 0;
    }

    nlohmann::json cfg = config_path.empty() ? urllc::default_config()
                                             : urllc::load_config(config_path);
    for (const std::string& s : overrides) urllc::apply_override(cfg, s);
    if (seed >= 0)
      cfg["seeds"] = nlohmann::json::array({static_cast<std::uint64_t>(seed)});
    if (!out_dir.empty()) cfg["out_dir"] = out_dir;
    const std::string out = cfg.at("out_dir").get<std::string>();

    if (emi->parsed()) {
      const std::string dir = run_dir.empty() ? out : run_dir;
      urllc::emit_plot_data(dir);
      std::cout << "wrote plot tables under " << dir << "/plots\n";
      return 0;
    }
    if (trf->parsed()) return run_train_refiner(cfg, out);

    const std::string id = sim->parsed()   ? "simulate"
                           : pre->parsed() ? "pretrain"
                           : dep->parsed() ? "deploy"
                                           : scenario_id;
    urllc::run_scenario(cfg, id, out);
    std::cout << "scenario " << id << " complete; artifacts in " << out << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
