#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "fsi2p/runner.hpp"

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::optional<std::string> ordering;
  std::optional<int> fixed_depth;
  std::vector<std::string> settings;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "key = value config file");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory (dataset directory for gen-data)");
  cmd->add_option("--ordering", o.ordering, "token ordering: raster, reverse or column");
  cmd->add_option("--fixed-depth", o.fixed_depth, "use this depth at every level instead of the policy")
      ->check(CLI::Range(0, 3));
  cmd->add_option("--set", o.settings, "extra key=value overrides");
}

fsi2p::RunConfig resolve(const Options& o, bool out_is_dataset) {
  fsi2p::RunConfig c;
  if (!o.config_path.empty()) c = fsi2p::load_config(o.config_path);
  for (const std::string& s : o.settings) c = fsi2p::parse_config(s, c);
  if (o.seed) c.seed = *o.seed;
  if (o.out) (out_is_dataset ? c.dataset : c.out) = *o.out;
  if (o.ordering) c.ordering = fsi2p::parse_ordering(*o.ordering);
  if (o.fixed_depth) c.fixed_depth = *o.fixed_depth;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Focus-Sweep image-to-point-cloud registration on synthetic scenes"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, o);
  auto* train = app.add_subcommand("train", "train and write train.csv + checkpoint.bin");
  add_common(train, o);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint with greedy depth selection");
  add_common(eval, o);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate")->required();
  auto* bench = app.add_subcommand("bench", "sweep vs attention scaling and attention drift probe");
  add_common(bench, o);
  bench->add_option("--checkpoint", o.checkpoint, "trained parameters for the drift probe");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto c = resolve(o, true);
      fsi2p::run_gen_data(c);
      const auto split = fsi2p::split_counts(c.count);
      std::cout << "wrote " << c.count << " samples to " << c.dataset << " (train " << split.train
                << ", val " << split.val << ", test " << split.test << ")\n";
    } else if (train->parsed()) {
      const auto c = resolve(o, false);
      const auto r = fsi2p::run_train(c);
      if (!r.rows.empty()) {
        std::cout << "step " << r.rows.back().step << " loss_coarse " << r.rows.back().loss_coarse
                  << " loss_fine " << r.rows.back().loss_fine << "\n";
      }
      std::cout << "checkpoint: " << r.checkpoint.string() << "\nmetrics: " << r.csv.string() << "\n";
    } else if (eval->parsed()) {
      const auto c = resolve(o, false);
      std::cout << fsi2p::run_eval(c, *o.checkpoint).summary();
    } else if (bench->parsed()) {
      const auto c = resolve(o, false);
      std::optional<std::filesystem::path> ckpt;
      if (o.checkpoint) ckpt = *o.checkpoint;
      const auto r = fsi2p::run_bench(c, ckpt);
      std::cout << "sweep slope " << r.sweep_slope << "\nattention slope " << r.attention_slope
                << "\nmmd by attention depth:";
      for (double m : r.mmd_by_depth) std::cout << ' ' << m;
      std::cout << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
