// pami: dataset generation, training, evaluation, augmentation sweep and
// offline preference data.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pami/commands.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string sft;
  std::string prefs;
  std::string method;
  std::optional<std::uint64_t> seed;
};

pami::CommandOptions options(const Flags& f) {
  pami::CommandOptions o;
  o.config = f.config;
  o.out = f.out;
  o.data = f.data;
  o.checkpoint = f.checkpoint;
  o.sft = f.sft;
  o.prefs = f.prefs;
  o.seed = f.seed;
  if (!f.method.empty()) o.method = f.method;
  return o;
}

CLI::App* add(CLI::App& app, const std::string& name, const std::string& help, Flags& f, bool needs_config) {
  auto* sub = app.add_subcommand(name, help);
  auto* c = sub->add_option("--config", f.config, "experiment config (flat JSON)");
  if (needs_config) c->required();
  sub->add_option("--out", f.out, "output directory")->required();
  sub->add_option("--seed", f.seed, "override the config root seed");
  return sub;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-aware multi-instance video preference learning"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = add(app, "gen", "generate libraries, the training set and evaluation suites", f, true);
  auto* train = add(app, "train", "train sft, dpo, vdpo or pami (train.method)", f, true);
  train->add_option("--data", f.data, "directory written by gen")->required();
  train->add_option("--sft", f.sft, "SFT checkpoint (preference methods)");
  train->add_option("--prefs", f.prefs, "preference JSONL written by prefdata (dpo)");
  train->add_option("--method", f.method, "override train.method");
  auto* eval = add(app, "eval", "score a checkpoint on the evaluation suites", f, false);
  eval->add_option("--data", f.data, "directory written by gen")->required();
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint to evaluate")->required();
  auto* sweep = add(app, "sweep", "one VDPO run per augmentation type", f, true);
  sweep->add_option("--data", f.data, "reuse a gen directory instead of regenerating");
  sweep->add_option("--sft", f.sft, "reuse an SFT checkpoint instead of training one");
  auto* pref = add(app, "prefdata", "build offline preference data with the programmatic judge", f, true);
  pref->add_option("--data", f.data, "directory written by gen")->required();
  pref->add_option("--checkpoint", f.checkpoint, "post-SFT checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return pami::kExitUsage;
  }

  const pami::CommandOptions o = options(f);
  if (gen->parsed()) return pami::run_command(pami::cmd_gen, o);
  if (train->parsed()) return pami::run_command(pami::cmd_train, o);
  if (eval->parsed()) return pami::run_command(pami::cmd_eval, o);
  if (sweep->parsed()) return pami::run_command(pami::cmd_sweep, o);
  if (pref->parsed()) return pami::run_command(pami::cmd_prefdata, o);
  return pami::kExitUsage;
}
