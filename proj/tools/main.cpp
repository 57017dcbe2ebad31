// Command-line entry point for the agreement experiments.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "sva/cells.hpp"
#include "sva/experiment.hpp"

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

struct Flags {
  std::string config, out, seeds, arch, sampling, objective, preset;
  std::size_t jobs = 0;
  bool jobs_set = false;
};

sva::ExperimentConfig resolve(const Flags& f) {
  sva::ExperimentConfig cfg = f.config.empty() ? sva::ExperimentConfig{} : sva::ExperimentConfig::load(f.config);
  if (!f.out.empty()) cfg.out = f.out;
  if (!f.preset.empty()) cfg.preset = f.preset;
  if (!f.seeds.empty()) {
    cfg.seeds.clear();
    for (const std::string& s : split_list(f.seeds)) cfg.seeds.push_back(std::stoull(s));
  }
  if (!f.arch.empty()) {
    cfg.architectures.clear();
    for (const std::string& s : split_list(f.arch)) cfg.architectures.push_back(sva::parse_cell_kind(s));
  }
  if (!f.sampling.empty()) {
    cfg.sampling.clear();
    for (const std::string& s : split_list(f.sampling)) cfg.sampling.push_back(sva::parse_sampling(s));
  }
  if (!f.objective.empty()) {
    cfg.objectives.clear();
    for (const std::string& s : split_list(f.objective)) cfg.objectives.push_back(sva::parse_head(s));
  }
  if (f.jobs_set) cfg.jobs = f.jobs;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subject-verb agreement experiments with recurrent networks"};
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "Print the checkpoint format version");

  Flags flags;
  using Command = int (*)(const sva::ExperimentConfig&);
  const std::pair<const char*, std::pair<const char*, Command>> commands[] = {
      {"gen", {"Generate corpora, probe set, targeted items and fine-tuning sets", sva::cmd_gen}},
      {"train", {"Train every grid cell (completed cells are skipped)", sva::cmd_train}},
      {"eval", {"Agreement accuracy by attractor count", sva::cmd_eval}},
      {"tse", {"Targeted evaluation by construction and number case", sva::cmd_tse}},
      {"rsa", {"Representation similarity, MDS coordinates and seed spread", sva::cmd_rsa}},
      {"confidence", {"Prediction confidence on simple agreement", sva::cmd_confidence}},
      {"finetune", {"Fine-tune language models on one-attractor items", sva::cmd_finetune}},
      {"report", {"Print the aggregate tables", sva::cmd_report}},
  };
  std::vector<std::pair<CLI::App*, Command>> subs;
  for (const auto& [name, info] : commands) {
    CLI::App* sub = app.add_subcommand(name, info.first);
    sub->add_option("--config", flags.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--out", flags.out, "Output directory");
    sub->add_option("--seeds", flags.seeds, "Comma-separated seeds");
    sub->add_option("--arch", flags.arch, "Comma-separated architectures (lstm,gru,onlstm,drnn)");
    sub->add_option("--sampling", flags.sampling, "Comma-separated sampling regimes (natural,selective)");
    sub->add_option("--objective", flags.objective, "Comma-separated objectives (lm,classifier)");
    sub->add_option("--preset", flags.preset, "Hyperparameter preset")->check(CLI::IsMember({"desk", "paper"}));
    sub->add_option_function<std::size_t>(
        "--jobs",
        [&flags](std::size_t j) {
          flags.jobs = j;
          flags.jobs_set = true;
        },
        "Worker count (default: available parallelism)");
    subs.emplace_back(sub, info.second);
  }

  CLI11_PARSE(app, argc, argv);
  if (version) {
    std::cout << sva::kCheckpointFormatVersion << "\n";
    return 0;
  }
  for (const auto& [sub, fn] : subs) {
    if (!sub->parsed()) continue;
    try {
      return fn(resolve(flags));
    } catch (const std::exception& e) {
      std::cerr << "[sva] " << sub->get_name() << ": " << e.what() << "\n";
      return 1;
    }
  }
  std::cerr << app.help();
  return 2;
}
