#include "frshield/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "frshield/attacks.hpp"
#include "frshield/dataio.hpp"
#include "frshield/defense_mpa.hpp"
#include "frshield/nn.hpp"
#include "frshield/rng.hpp"

namespace frshield::experiment {

using config::ExperimentConfig;
using report::Report;

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out.flush()) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ensure_parent(const std::filesystem::path& path) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + path.parent_path().string() + ": " + ec.message());
}

void save_fragment(const Layout& layout, const std::string& stage, const Report& fragment) {
  write_text(layout.result(stage), report::summary_json(fragment));
  write_text(layout.timings(stage), report::timings_json(fragment));
}

std::optional<Report> load_fragment(const Layout& layout, const std::string& stage) {
  if (!std::filesystem::exists(layout.result(stage))) return std::nullopt;
  auto r = report::parse_summary_json(read_text(layout.result(stage)));
  if (std::filesystem::exists(layout.timings(stage)))
    r.timings = report::parse_timings_json(read_text(layout.timings(stage)));
  return r;
}

std::vector<ImageSample> attack_pool(const DatasetSplit& split) {
  std::vector<ImageSample> pool = split.validation;
  pool.insert(pool.end(), split.test.begin(), split.test.end());
  return pool;
}

// Adversarial outputs that fooled the source network; all outputs if none did.
std::vector<ImageSample> successful_adversarials(const attacks::BatchAttackReport& rep,
                                                 const std::string& what) {
  std::vector<ImageSample> out;
  for (const auto& r : rep.results)
    if (r.success) out.push_back(r.adversarial);
  if (out.empty() && !rep.results.empty()) {
    warn(what + ": no successful adversarial samples; using all attack outputs");
    out = attacks::adversarial_samples(rep);
  }
  for (auto& s : out) s.label = Label::Manipulated;
  return out;
}

const attacks::AttackSpec& find_spec(const ExperimentConfig& c, const std::string& name) {
  for (const auto& s : c.attacks.specs)
    if (s.name == name) return s;
  fail(ErrorKind::Config, "attack " + name + " is not configured");
}

std::vector<std::string> mpa_attacks(const ExperimentConfig& c) {
  if (!c.mpa.attacks.empty()) return c.mpa.attacks;
  std::vector<std::string> out;
  for (const auto& s : c.attacks.specs) out.push_back(s.name);
  return out;
}

// Seeded draw of up to `count` samples, in original order.
std::vector<ImageSample> draw(const std::vector<ImageSample>& from, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(from.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(std::min(count, idx.size()));
  std::sort(idx.begin(), idx.end());
  std::vector<ImageSample> out;
  for (auto i : idx) out.push_back(from[i]);
  return out;
}

std::vector<Label> labels_of(std::span<const ImageSample> samples) {
  std::vector<Label> out;
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

// Configured sizes with 0 resolved to n, in configured order.
std::vector<std::size_t> resolve_sizes(const ExperimentConfig& c, std::size_t n) {
  std::vector<std::size_t> out;
  for (auto f : c.fr.sizes) {
    const std::size_t v = f == 0 ? n : f;
    if (v > n) fail(ErrorKind::Config, "fr size " + std::to_string(v) + " exceeds flatten width " + std::to_string(n));
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

std::string error_record(const std::string& stage, const std::string& kind, int code, const std::string& message) {
  nlohmann::json j{{"stage", stage}, {"kind", kind}, {"exit_code", code}, {"message", message}};
  return j.dump(2) + "\n";
}

}  // namespace

std::uint64_t stage_seed(std::uint64_t master, std::string_view stage) { return derive_seed(master, stage); }

int exit_code(ErrorKind kind) noexcept { return static_cast<int>(kind); }

// ---------------------------------------------------------------- data

void run_data(const ExperimentConfig& c) {
  const Layout layout(c.out);
  const auto seed = stage_seed(c.seed, "data");
  DatasetSplit split;
  if (c.data.source == config::DataConfig::Source::Synthetic) {
    info("data: synthesizing " + std::to_string(c.data.count) + " records");
    const auto samples = data::synth_generate(c.data.count, c.data.separation, derive_seed(seed, "generate"));
    split = data::split_dataset(samples, c.data.split, derive_seed(seed, "split"));
  } else {
    info("data: ingesting " + c.data.csv.string());
    const auto schema = data::load_schema(c.data.schema);
    const auto records = data::load_csv_records(c.data.csv, schema);
    std::vector<std::string> drop;
    for (const auto& name : data::kUnswDropColumns)
      if (std::any_of(schema.fields.begin(), schema.fields.end(), [&](const auto& f) { return f.name == name; }))
        drop.push_back(name);
    split = data::preprocess_split(records, schema, drop, c.data.split, derive_seed(seed, "split"));
  }
  require(!split.train.empty() && !split.validation.empty(), ErrorKind::Data,
          "data: the split left an empty training or validation set");
  ensure_parent(layout.split());
  data::save_split(layout.split(), split);
  info("data: " + std::to_string(split.train.size()) + " train / " + std::to_string(split.validation.size()) +
       " validation / " + std::to_string(split.test.size()) + " test");
}

// ---------------------------------------------------------------- train

void run_train(const ExperimentConfig& c) {
  const Layout layout(c.out);
  const auto seed = stage_seed(c.seed, "train");
  const auto split = data::load_split(layout.split());
  Report fragment;
  fragment.networks = c.network.presets;
  for (const auto& net : c.network.presets) {
    auto tc = c.network.train_config(net);
    tc.seed = derive_seed(seed, net);
    info("train: " + net + " for " + std::to_string(tc.epochs) + " epochs");
    Stopwatch sw;
    const auto model = nn::train(nn::preset(net), split, tc, net);
    fragment.timings.push_back({"train", net, sw.seconds()});
    ensure_parent(layout.model(net));
    nn::save_model(model, layout.model(net));
    report::CleanRow row;
    row.network = net;
    row.parameters = model.parameter_count();
    row.epochs = model.history.size();
    row.train_accuracy = nn::accuracy(model, split.train);
    row.validation_accuracy = nn::accuracy(model, split.validation);
    row.test_accuracy = split.test.empty() ? 0.0 : nn::accuracy(model, split.test);
    info("train: " + net + " validation accuracy " + std::to_string(row.validation_accuracy));
    fragment.clean.push_back(row);
  }
  save_fragment(layout, "train", fragment);
}

// ---------------------------------------------------------------- attack

void run_attack(const ExperimentConfig& c) {
  const Layout layout(c.out);
  const auto seed = stage_seed(c.seed, "attack");
  const auto split = data::load_split(layout.split());
  const auto pool = attack_pool(split);
  Report fragment;
  fragment.networks = c.network.presets;
  for (const auto& net : c.network.presets) {
    if (c.attacks.specs.empty()) break;
    const auto model = nn::load_model(layout.model(net));
    const auto selected = attacks::select_attack_samples(model, pool, c.attacks.samples, derive_seed(seed, net));
    require(!selected.empty(), ErrorKind::Data, "attack: " + net + " classifies no manipulated sample correctly");
    for (auto spec : c.attacks.specs) {
      spec.seed = derive_seed(seed, net + "/" + spec.name);
      info("attack: " + net + " / " + spec.name + " on " + std::to_string(selected.size()) + " samples");
      Stopwatch sw;
      const auto rep = attacks::attack_batch(model, selected, spec, c.jobs);
      fragment.timings.push_back({"attack", net + "/" + spec.name, sw.seconds()});
      ensure_parent(layout.attack(net, spec.name));
      attacks::save_report(rep, layout.attack(net, spec.name));
      fragment.attacks.push_back({net, spec.name, rep.results.size(), rep.psnr, rep.l1, rep.max_dist, rep.asr});
      info("attack: " + net + " / " + spec.name + " ASR " + std::to_string(rep.asr));
    }
  }
  save_fragment(layout, "attack", fragment);
}

// ---------------------------------------------------------------- mpa

void run_mpa(const ExperimentConfig& c) {
  const Layout layout(c.out);
  const auto seed = stage_seed(c.seed, "mpa");
  const auto split = data::load_split(layout.split());
  const auto pool = attack_pool(split);
  Report fragment;
  fragment.networks = c.network.presets;
  for (const auto& net : c.network.presets) {
    const auto base = nn::load_model(layout.model(net));
    const auto base_tc = c.network.train_config(net);

    std::vector<mpa::NamedSamples> sets;
    std::map<std::string, std::set<std::uint64_t>> used_ids;
    for (const auto& spec : c.attacks.specs) {
      const auto rep = attacks::load_report(layout.attack(net, spec.name));
      sets.push_back({spec.name, successful_adversarials(rep, net + "/" + spec.name)});
      used_ids[spec.name] = {rep.original_ids.begin(), rep.original_ids.end()};
    }

    std::vector<mpa::TunedModel> tuned;
    for (const auto& name : mpa_attacks(c)) {
      const auto it = std::find_if(sets.begin(), sets.end(), [&](const auto& s) { return s.attack == name; });
      mpa::FineTuneConfig ft;
      ft.epochs = c.mpa.epochs;
      ft.batch = base_tc.batch;
      ft.learning_rate = base_tc.learning_rate * c.mpa.lr_scale;
      ft.seed = derive_seed(seed, net + "/" + name);
      info("mpa: fine-tuning " + net + " on " + name);
      Stopwatch sw;
      tuned.push_back(mpa::fine_tune_with_attack(base, name, it->samples, split.train, split.validation, ft));
      fragment.timings.push_back({"mpa", net + "/" + name, sw.seconds()});
      ensure_parent(layout.tuned(net, name));
      nn::save_model(tuned.back().model, layout.tuned(net, name));
    }

    report::MpaResult result;
    result.network = net;
    result.matrix = mpa::cross_attack_score_matrix(tuned, sets, c.jobs);

    for (const auto& t : tuned) {
      std::vector<ImageSample> fresh;
      const auto& used = used_ids[t.attack];
      for (const auto& s : pool)
        if (s.label == Label::Manipulated && !used.count(s.source_id)) fresh.push_back(s);
      fresh = draw(fresh, c.mpa.reattack_samples, derive_seed(seed, net + "/" + t.attack + "/fresh"));
      std::size_t eligible = 0;
      for (auto l : nn::predict_labels(t.model, fresh)) eligible += l == Label::Manipulated;
      auto spec = find_spec(c, t.attack);
      spec.seed = derive_seed(seed, net + "/" + t.attack + "/reattack");
      info("mpa: re-attacking " + t.model.id + " on " + std::to_string(eligible) + " fresh samples");
      Stopwatch sw;
      const double asr = mpa::reattack_asr(t, spec, fresh, c.jobs);
      fragment.timings.push_back({"mpa", net + "/" + t.attack + "/reattack", sw.seconds()});
      result.reattack.push_back({t.attack, eligible, asr});
    }
    fragment.mpa.push_back(std::move(result));
  }
  save_fragment(layout, "mpa", fragment);
}

// ---------------------------------------------------------------- fr

void run_fr_train(const ExperimentConfig& c) {
  const Layout layout(c.out);
  const auto seed = stage_seed(c.seed, "fr-train");
  const auto split = data::load_split(layout.split());
  require(!split.test.empty(), ErrorKind::Data, "fr-train: the split has no test set");
  Report fragment;
  fragment.networks = c.network.presets;
  for (const auto& net : c.network.presets) {
    const auto model = nn::load_model(layout.model(net));
    const auto train = draw(split.train, c.fr.train_samples, derive_seed(seed, net + "/train"));
    const auto test = draw(split.test, c.fr.test_samples, derive_seed(seed, net + "/test"));
    auto xtr = nn::extract_flatten_features(model, train);
    auto xte = nn::extract_flatten_features(model, test);
    const std::size_t n = xtr.cols;
    const auto scaling = fr::fit_feature_scaling(xtr);
    scaling.apply(xtr);
    scaling.apply(xte);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto ytr = labels_of(train), yte = labels_of(test);
    ensure_parent(layout.features(net, "train"));
    fr::save_feature_file({xtr, ytr, all, n}, layout.features(net, "train"));
    fr::save_feature_file({xte, yte, all, n}, layout.features(net, "test"));
    for (const auto& spec : c.attacks.specs) {
      const auto adv = successful_adversarials(attacks::load_report(layout.attack(net, spec.name)),
                                               net + "/" + spec.name);
      auto xa = nn::extract_flatten_features(model, adv);
      scaling.apply(xa);
      fr::save_feature_file({xa, labels_of(adv), all, n}, layout.features(net, spec.name));
    }

    const auto sizes = resolve_sizes(c, n);
    report::FrResult result;
    result.network = net;
    result.flatten_width = n;
    result.clean = fr::ScoreTable(fr::Protocol::Clean, {"Clean"}, sizes);
    for (auto f : sizes) {
      const auto subsets = fr::draw_subsets(n, f, fr::kEnsembleSize,
                                            derive_seed(seed, net + "/defender/" + std::to_string(f)), net);
      fr::FrTrainOptions opts;
      opts.grid = c.fr.grid;
      opts.folds = c.fr.folds;
      opts.grid_per_model = c.fr.grid_per_model;
      opts.seed = derive_seed(seed, net + "/svm/" + std::to_string(f));
      opts.jobs = c.jobs;
      info("fr-train: " + net + " f=" + std::to_string(f));
      Stopwatch sw;
      const auto ensemble = fr::train_fr_ensemble(xtr, ytr, subsets, opts);
      fragment.timings.push_back({"fr-train", net + "/f=" + std::to_string(f), sw.seconds()});
      fr::save_ensemble(ensemble, layout.ensemble(net, f));
      result.clean->set("Clean", f, fr::eval_clean_accuracy(ensemble, xte, yte, c.jobs));
    }
    fragment.fr.push_back(std::move(result));
  }
  save_fragment(layout, "fr-train", fragment);
}

void run_fr_eval(const ExperimentConfig& c, fr::Protocol protocol) {
  require(protocol != fr::Protocol::Clean, ErrorKind::InvalidArgument, "fr-eval: mode must be match or mismatch");
  const Layout layout(c.out);
  const std::string stage = std::string("fr-eval-") + fr::protocol_name(protocol);
  const auto seed = stage_seed(c.seed, "fr-eval");
  Report fragment;
  fragment.networks = c.network.presets;
  for (const auto& net : c.network.presets) {
    const auto train = fr::load_feature_file(layout.features(net, "train"));
    const std::size_t n = train.source_width;
    const auto sizes = resolve_sizes(c, n);
    std::vector<std::string> names;
    std::vector<fr::FeatureFile> files;
    for (const auto& spec : c.attacks.specs) {
      names.push_back(spec.name);
      files.push_back(fr::load_feature_file(layout.features(net, spec.name)));
    }
    fr::ScoreTable table(protocol, names, sizes);
    for (auto f : sizes) {
      const auto ensemble = fr::load_ensemble(layout.ensemble(net, f));
      require(ensemble.n == n && ensemble.f == f, ErrorKind::Format,
              "fr-eval: ensemble for f=" + std::to_string(f) + " does not match the feature files");
      // Attacker index draws are independent of the defender's and shared by every attack.
      const auto attacker = fr::draw_subsets(n, f, fr::kEnsembleSize,
                                             derive_seed(seed, net + "/attacker/" + std::to_string(f)), net);
      for (std::size_t a = 0; a < files.size(); ++a) {
        if (files[a].features.rows == 0) {
          warn("fr-eval: " + net + "/" + names[a] + " has no adversarial samples; score 0");
          table.set(names[a], f, 0.0);
          continue;
        }
        Stopwatch sw;
        double score = 0.0;
        if (protocol == fr::Protocol::Match) {
          score = fr::match_index_test(ensemble, fr::slice_files(files[a].features, ensemble.subsets),
                                       files[a].labels, c.jobs);
        } else {
          score = fr::mismatch_index_test(ensemble, fr::slice_files(files[a].features, attacker),
                                          files[a].labels, c.jobs);
        }
        fragment.timings.push_back(
            {stage, net + "/f=" + std::to_string(f) + "/" + names[a], sw.seconds()});
        table.set(names[a], f, score);
      }
      info("fr-eval: " + net + " " + fr::protocol_name(protocol) + " f=" + std::to_string(f) + " done");
    }
    report::FrResult result;
    result.network = net;
    result.flatten_width = n;
    (protocol == fr::Protocol::Match ? result.match : result.mismatch) = std::move(table);
    fragment.fr.push_back(std::move(result));
  }
  save_fragment(layout, stage, fragment);
}

// ---------------------------------------------------------------- report

Report build_report(const ExperimentConfig& c) {
  const Layout layout(c.out);
  Report r;
  r.networks = c.network.presets;
  auto merge = [&](const std::string& stage, bool expected) -> std::optional<Report> {
    auto fragment = load_fragment(layout, stage);
    if (!fragment) {
      r.partial |= expected;
      return std::nullopt;
    }
    r.timings.insert(r.timings.end(), fragment->timings.begin(), fragment->timings.end());
    return fragment;
  };
  if (auto f = merge("train", true)) r.clean = f->clean;
  if (auto f = merge("attack", !c.attacks.specs.empty())) r.attacks = f->attacks;
  if (auto f = merge("mpa", c.mpa.enabled)) r.mpa = f->mpa;
  if (auto f = merge("fr-train", c.fr.enabled)) r.fr = f->fr;
  auto attach = [&](const std::string& stage, bool expected, bool match) {
    const auto f = merge(stage, expected);
    if (!f) return;
    for (const auto& part : f->fr) {
      auto it = std::find_if(r.fr.begin(), r.fr.end(), [&](const auto& x) { return x.network == part.network; });
      if (it == r.fr.end()) {
        r.fr.push_back({part.network, part.flatten_width, std::nullopt, std::nullopt, std::nullopt, {}});
        it = std::prev(r.fr.end());
      }
      (match ? it->match : it->mismatch) = match ? part.match : part.mismatch;
    }
  };
  attach("fr-eval-mismatch", c.fr.enabled && c.fr.mismatch, false);
  attach("fr-eval-match", c.fr.enabled && c.fr.match, true);
  for (auto& f : r.fr) {
    f.verdicts.clear();
    for (const auto* t : {&f.mismatch, &f.match})
      if (*t) {
        const auto v = report::best_verdicts(**t);
        f.verdicts.insert(f.verdicts.end(), v.begin(), v.end());
      }
  }
  return r;
}

Report run_report(const ExperimentConfig& c) {
  const Layout layout(c.out);
  auto r = build_report(c);
  report::emit_report(r, report::Format::CsvBundle, layout.report_dir());
  report::emit_report(r, report::Format::Summary, layout.report_dir());
  if (r.partial) warn("report: some configured stages have not produced results yet");
  return r;
}

void run_stage(const ExperimentConfig& c, const std::string& stage, const std::function<void()>& fn) {
  const Layout layout(c.out);
  try {
    fn();
  } catch (const Error& e) {
    try {
      write_text(layout.failure(), error_record(stage, error_kind_name(e.kind()), exit_code(e.kind()), e.what()));
    } catch (const Error&) {
    }
    throw;
  } catch (const std::exception& e) {
    try {
      write_text(layout.failure(), error_record(stage, "internal", kInternalErrorExitCode, e.what()));
    } catch (const Error&) {
    }
    throw;
  }
}

Report run_experiment(const ExperimentConfig& c) {
  c.validate();
  const Layout layout(c.out);
  std::error_code ec;
  std::filesystem::create_directories(layout.root(), ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory " + layout.root().string() + ": " + ec.message());
  std::filesystem::remove(layout.failure(), ec);
  write_text(layout.config(), config::to_text(c));
  // Results of stages this run does not execute must not leak into its report.
  for (const auto* stage : {"train", "attack", "mpa", "fr-train", "fr-eval-mismatch", "fr-eval-match"}) {
    std::filesystem::remove(layout.result(stage), ec);
    std::filesystem::remove(layout.timings(stage), ec);
  }

  run_stage(c, "data", [&] { run_data(c); });
  run_stage(c, "train", [&] { run_train(c); });
  if (!c.attacks.specs.empty()) run_stage(c, "attack", [&] { run_attack(c); });
  if (c.mpa.enabled) run_stage(c, "mpa", [&] { run_mpa(c); });
  if (c.fr.enabled) {
    run_stage(c, "fr-train", [&] { run_fr_train(c); });
    if (c.fr.mismatch) run_stage(c, "fr-eval-mismatch", [&] { run_fr_eval(c, fr::Protocol::Mismatch); });
    if (c.fr.match) run_stage(c, "fr-eval-match", [&] { run_fr_eval(c, fr::Protocol::Match); });
  }
  Report r;
  run_stage(c, "report", [&] { r = run_report(c); });
  return r;
}

}  // namespace frshield::experiment
