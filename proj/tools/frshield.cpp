#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "frshield/experiment.hpp"

using namespace frshield;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> jobs;
  bool quiet = false;
};

config::ExperimentConfig resolve(const Globals& g) {
  config::ExperimentConfig c;
  if (!g.config.empty()) {
    c = config::load_config(g.config);
  } else if (!g.seed) {
    fail(ErrorKind::Config, "a seed is required: pass --seed or a --config file");
  }
  if (g.seed) c.seed = *g.seed;
  if (g.out) c.out = *g.out;
  if (g.jobs) c.jobs = *g.jobs;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial transferability experiments on traffic images"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed (overrides the configuration)");
  app.add_option("--out", g.out, "Output directory (overrides the configuration)");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", g.quiet, "Only errors on stderr");

  std::string csv, schema;
  auto* ingest = app.add_subcommand("ingest", "Load a traffic CSV, image-encode and split it");
  ingest->add_option("--csv", csv, "Traffic records")->check(CLI::ExistingFile);
  ingest->add_option("--schema", schema, "Schema file (name,kind,drop)")->check(CLI::ExistingFile);

  std::optional<std::size_t> count;
  std::optional<double> separation;
  auto* synth = app.add_subcommand("synth", "Generate and split the synthetic corpus");
  synth->add_option("--count", count, "Number of records");
  synth->add_option("--separation", separation, "Class separation");

  auto* train = app.add_subcommand("train", "Train the configured networks");
  auto* attack = app.add_subcommand("attack", "Attack the trained networks");
  auto* mpa = app.add_subcommand("mpa", "Fine-tune on the strongest attacks and re-attack");
  auto* fr_train = app.add_subcommand("fr-train", "Train the feature-randomization ensembles");
  std::string mode;
  auto* fr_eval = app.add_subcommand("fr-eval", "Score the ensembles on adversarial features");
  fr_eval->add_option("--mode", mode, "Index testing protocol")
      ->required()
      ->check(CLI::IsMember({"match", "mismatch"}));
  auto* report_cmd = app.add_subcommand("report", "Rebuild the report from stage results");
  auto* run = app.add_subcommand("run", "Run the whole configured experiment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return experiment::exit_code(ErrorKind::InvalidArgument);
  }
  if (g.quiet) set_warnings_enabled(false);

  try {
    auto c = resolve(g);
    if (*ingest) {
      c.data.source = config::DataConfig::Source::Csv;
      if (!csv.empty()) c.data.csv = csv;
      if (!schema.empty()) c.data.schema = schema;
    }
    if (*synth) {
      c.data.source = config::DataConfig::Source::Synthetic;
      if (count) c.data.count = *count;
      if (separation) c.data.separation = *separation;
    }
    c.validate();

    if (*ingest || *synth) experiment::run_stage(c, "data", [&] { experiment::run_data(c); });
    if (*train) experiment::run_stage(c, "train", [&] { experiment::run_train(c); });
    if (*attack) experiment::run_stage(c, "attack", [&] { experiment::run_attack(c); });
    if (*mpa) experiment::run_stage(c, "mpa", [&] { experiment::run_mpa(c); });
    if (*fr_train) experiment::run_stage(c, "fr-train", [&] { experiment::run_fr_train(c); });
    if (*fr_eval) {
      const auto p = fr::parse_protocol(mode);
      experiment::run_stage(c, "fr-eval-" + mode, [&] { experiment::run_fr_eval(c, p); });
    }
    if (*report_cmd) experiment::run_stage(c, "report", [&] { experiment::run_report(c); });
    if (*run) {
      const auto r = experiment::run_experiment(c);
      info("run: report written to " + experiment::Layout(c.out).report_dir().string() +
           (r.partial ? " (partial)" : ""));
    }
  } catch (const Error& e) {
    std::cerr << "error [" << error_kind_name(e.kind()) << "]: " << e.what() << "\n";
    return experiment::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << "\n";
    return experiment::kInternalErrorExitCode;
  }
  return 0;
}
