#include <iostream>

#include "CLI11.hpp"
#include "hallu/cli/commands.hpp"
#include "hallu/errors.hpp"

namespace hallu::cli {

namespace {

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out;
  std::string checkpoint;
  std::string grid;
  std::size_t repetitions = 0;
  std::string mask_mode;
  std::string split_file;
};

void add_flags(CLI::App* cmd, Flags& f, bool eval_flags) {
  cmd->add_option("--config", f.config, "Config file (key = value with [sections])")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Seed for every random stream");
  cmd->add_option("--threads", f.threads, "Worker threads for preparation and evaluation")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint path (default <out>/checkpoint.bin)");
  cmd->add_option("--mask-mode", f.mask_mode, "none | frequency | time");
  cmd->add_option("--split-file", f.split_file, "Split file (default <out>/split.txt)");
  if (eval_flags) {
    cmd->add_option("--grid", f.grid, "Grid cells, e.g. 5x1,5x5,10x1,10x5");
    cmd->add_option("--repetitions", f.repetitions, "Support resamplings per query clip")->check(CLI::PositiveNumber);
  }
}

RunConfig resolve(const CLI::App* cmd, const Flags& f) {
  Overrides o;
  auto given = [&](const char* name) { return cmd->get_option(name)->count() > 0; };
  if (given("--seed")) o.seed = f.seed;
  if (given("--threads")) o.threads = f.threads;
  if (given("--out")) o.out = f.out;
  if (given("--checkpoint")) o.checkpoint = f.checkpoint;
  if (given("--mask-mode")) o.mask_mode = f.mask_mode;
  if (given("--split-file")) o.split_file = f.split_file;
  if (cmd->get_option_no_throw("--grid") && given("--grid")) o.grid = f.grid;
  if (cmd->get_option_no_throw("--repetitions") && given("--repetitions")) o.repetitions = f.repetitions;
  std::optional<fs::path> file;
  if (!f.config.empty()) file = f.config;
  return load_config(file, o);
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"HalluAudio few-shot audio classification"};
  app.require_subcommand(1);
  Flags flags;
  GradcheckOptions gc;

  CLI::App* prepare = app.add_subcommand("prepare", "Index the dataset, cache log-mel spectrograms, write the split");
  CLI::App* train = app.add_subcommand("train", "Episodic training; checkpoint every epoch");
  CLI::App* evaluate = app.add_subcommand("eval", "Query-centric test episodes over the grid");
  CLI::App* ablate = app.add_subcommand("ablate-time", "train + eval with time-half concepts");
  CLI::App* importance = app.add_subcommand("importance", "Per-class Q_high / Q_low frequency importance");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every layer and the loss");
  add_flags(prepare, flags, false);
  add_flags(train, flags, false);
  add_flags(evaluate, flags, true);
  add_flags(ablate, flags, true);
  add_flags(importance, flags, true);
  gradcheck->add_option("--seed", gc.seed, "Seed for the random test tensors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*gradcheck) return cmd_gradcheck(gc, std::cout);
    CLI::App* cmd = app.get_subcommands().front();
    const RunConfig config = resolve(cmd, flags);
    if (cmd == prepare) return cmd_prepare(config, std::cout);
    if (cmd == train) return cmd_train(config, std::cout);
    if (cmd == evaluate) return cmd_eval(config, std::cout);
    if (cmd == ablate) return cmd_ablate_time(config, std::cout);
    if (cmd == importance) return cmd_importance(config, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOperationalError;
  }
  return kOperationalError;
}

}  // namespace hallu::cli
