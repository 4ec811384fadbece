#include "frshield/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace frshield::config {

nn::TrainConfig NetworkConfig::train_config(const std::string& preset) const {
  auto c = nn::preset_train_config(preset);
  if (epochs) c.epochs = *epochs;
  if (batch) c.batch = *batch;
  if (learning_rate) c.learning_rate = *learning_rate;
  return c;
}

namespace {

[[noreturn]] void config_error(std::size_t line, const std::string& what) {
  fail(ErrorKind::Config, "config line " + std::to_string(line) + ": " + what);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Entry {
  std::string value;
  std::size_t line;
};

// Typed accessors; each consumes its key so leftovers can be reported.
class Section {
 public:
  Section(std::string name, std::size_t line) : name_(std::move(name)), line_(line) {}

  void add(const std::string& key, std::string value, std::size_t line) {
    if (entries_.count(key)) config_error(line, "duplicate key '" + key + "' in [" + name_ + "]");
    entries_[key] = {std::move(value), line};
  }

  std::optional<Entry> take(const std::string& key) {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    Entry e = it->second;
    entries_.erase(it);
    return e;
  }

  std::optional<double> real(const std::string& key) {
    const auto e = take(key);
    if (!e) return std::nullopt;
    double v = 0.0;
    const auto* end = e->value.data() + e->value.size();
    const auto [p, ec] = std::from_chars(e->value.data(), end, v);
    if (ec != std::errc() || p != end || !std::isfinite(v))
      config_error(e->line, "'" + key + "' expects a number, got '" + e->value + "'");
    return v;
  }

  std::optional<std::uint64_t> integer(const std::string& key) {
    const auto e = take(key);
    if (!e) return std::nullopt;
    return parse_integer(key, e->value, e->line);
  }

  std::optional<bool> boolean(const std::string& key) {
    const auto e = take(key);
    if (!e) return std::nullopt;
    if (e->value == "true" || e->value == "yes" || e->value == "on" || e->value == "1") return true;
    if (e->value == "false" || e->value == "no" || e->value == "off" || e->value == "0") return false;
    config_error(e->line, "'" + key + "' expects true or false, got '" + e->value + "'");
  }

  std::optional<std::string> text(const std::string& key) {
    const auto e = take(key);
    if (!e) return std::nullopt;
    return e->value;
  }

  std::optional<std::vector<double>> reals(const std::string& key) {
    const auto e = take(key);
    if (!e) return std::nullopt;
    std::vector<double> out;
    for (const auto& item : split_list(e->value)) {
      double v = 0.0;
      const auto* end = item.data() + item.size();
      const auto [p, ec] = std::from_chars(item.data(), end, v);
      if (ec != std::errc() || p != end || !std::isfinite(v))
        config_error(e->line, "'" + key + "' expects numbers, got '" + item + "'");
      out.push_back(v);
    }
    return out;
  }

  static std::uint64_t parse_integer(const std::string& key, const std::string& s, std::size_t line) {
    std::uint64_t v = 0;
    const auto* end = s.data() + s.size();
    const auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end)
      config_error(line, "'" + key + "' expects a non-negative integer, got '" + s + "'");
    return v;
  }

  void finish() const {
    if (!entries_.empty()) {
      const auto& [key, e] = *entries_.begin();
      config_error(e.line, "unknown key '" + key + "' in " + (name_.empty() ? "globals" : "[" + name_ + "]"));
    }
  }

  std::size_t line() const { return line_; }

 private:
  std::string name_;
  std::size_t line_;
  std::map<std::string, Entry> entries_;
};

void apply_attack_overrides(attacks::AttackSpec& s, Section& sec) {
  if (auto v = sec.real("alpha")) s.alpha = *v;
  if (auto v = sec.real("epsilon")) s.epsilon = *v;
  if (auto v = sec.real("theta")) s.theta = *v;
  if (auto v = sec.real("confidence")) s.confidence = *v;
  if (auto v = sec.integer("iterations")) s.iterations = static_cast<int>(*v);
  if (auto v = sec.real("step_size")) s.step_size = *v;
  if (auto v = sec.boolean("random_start")) s.random_start = *v;
  if (auto v = sec.real("overshoot")) s.overshoot = *v;
  if (auto v = sec.integer("search_steps")) s.search_steps = static_cast<int>(*v);
  if (auto v = sec.real("learning_rate")) s.learning_rate = *v;
  if (auto v = sec.real("initial_const")) s.initial_const = *v;
  if (auto v = sec.text("norm")) {
    if (*v == "L2") s.norm = attacks::CwNorm::L2;
    else if (*v == "L0") s.norm = attacks::CwNorm::L0;
    else if (*v == "Linf") s.norm = attacks::CwNorm::Linf;
    else config_error(sec.line(), "norm must be L2, L0 or Linf");
  }
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_reals(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_real(v[i]);
  return out;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  Section globals("", 0);
  std::map<std::string, Section> sections;
  std::vector<std::string> attack_sections;  // in file order
  Section* current = &globals;

  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') config_error(line_no, "unterminated section header");
      const std::string name = trim(line.substr(1, line.size() - 2));
      static const std::set<std::string> known{"data", "network", "attacks", "mpa", "fr"};
      const bool attack = name.rfind("attack.", 0) == 0 && name.size() > 7;
      if (!known.count(name) && !attack) config_error(line_no, "unknown section [" + name + "]");
      if (sections.count(name)) config_error(line_no, "duplicate section [" + name + "]");
      if (attack) attack_sections.push_back(name);
      current = &sections.emplace(name, Section(name, line_no)).first->second;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) config_error(line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) config_error(line_no, "empty key");
    current->add(key, trim(line.substr(eq + 1)), line_no);
  }

  ExperimentConfig c;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };

  const auto seed = globals.integer("seed");
  if (!seed) fail(ErrorKind::Config, "config: the global 'seed' is required");
  c.seed = *seed;
  if (auto v = globals.text("out")) c.out = resolve(*v);
  if (auto v = globals.integer("jobs")) c.jobs = static_cast<unsigned>(*v);
  globals.finish();

  auto section = [&](const std::string& name) -> Section* {
    const auto it = sections.find(name);
    return it == sections.end() ? nullptr : &it->second;
  };

  if (auto* s = section("data")) {
    if (auto v = s->text("source")) {
      if (*v == "synthetic") c.data.source = DataConfig::Source::Synthetic;
      else if (*v == "csv") c.data.source = DataConfig::Source::Csv;
      else config_error(s->line(), "data source must be 'synthetic' or 'csv'");
    }
    if (auto v = s->integer("count")) c.data.count = *v;
    if (auto v = s->real("separation")) c.data.separation = *v;
    if (auto v = s->text("csv")) c.data.csv = resolve(*v);
    if (auto v = s->text("schema")) c.data.schema = resolve(*v);
    if (auto v = s->reals("split")) {
      if (v->size() != 3) config_error(s->line(), "split expects three ratios");
      c.data.split = {(*v)[0], (*v)[1], (*v)[2]};
    }
    s->finish();
  }

  if (auto* s = section("network")) {
    if (auto v = s->text("presets")) c.network.presets = split_list(*v);
    if (auto v = s->integer("epochs")) c.network.epochs = *v;
    if (auto v = s->integer("batch")) c.network.batch = *v;
    if (auto v = s->real("learning_rate")) c.network.learning_rate = *v;
    s->finish();
  }

  if (auto* s = section("attacks")) {
    if (auto v = s->text("names")) {
      for (const auto& name : split_list(*v)) {
        try {
          c.attacks.specs.push_back(attacks::spec_from_name(name));
        } catch (const Error& e) {
          config_error(s->line(), e.what());
        }
      }
    }
    if (auto v = s->integer("samples")) c.attacks.samples = *v;
    s->finish();
  }
  for (const auto& name : attack_sections) {
    auto& sec = sections.at(name);
    attacks::AttackSpec probe;
    try {
      probe = attacks::spec_from_name(name.substr(7));
    } catch (const Error& e) {
      config_error(sec.line(), e.what());
    }
    const auto it = std::find_if(c.attacks.specs.begin(), c.attacks.specs.end(),
                                 [&](const auto& s) { return s.name == probe.name; });
    if (it == c.attacks.specs.end())
      config_error(sec.line(), "[" + name + "] overrides an attack missing from [attacks] names");
    apply_attack_overrides(*it, sec);
    sec.finish();
  }

  if (auto* s = section("mpa")) {
    if (auto v = s->boolean("enabled")) c.mpa.enabled = *v;
    if (auto v = s->text("attacks")) {
      for (const auto& name : split_list(*v)) {
        try {
          c.mpa.attacks.push_back(attacks::spec_from_name(name).name);
        } catch (const Error& e) {
          config_error(s->line(), e.what());
        }
      }
    }
    if (auto v = s->integer("epochs")) c.mpa.epochs = *v;
    if (auto v = s->real("lr_scale")) c.mpa.lr_scale = *v;
    if (auto v = s->integer("reattack_samples")) c.mpa.reattack_samples = *v;
    s->finish();
  }

  if (auto* s = section("fr")) {
    if (auto v = s->boolean("enabled")) c.fr.enabled = *v;
    if (auto v = s->boolean("allow_custom_sizes")) c.fr.allow_custom_sizes = *v;
    if (auto e = s->take("sizes")) {
      c.fr.sizes.clear();
      for (const auto& item : split_list(e->value))
        c.fr.sizes.push_back(item == "N" ? 0 : Section::parse_integer("sizes", item, e->line));
    }
    if (auto v = s->integer("train_samples")) c.fr.train_samples = *v;
    if (auto v = s->integer("test_samples")) c.fr.test_samples = *v;
    if (auto v = s->integer("folds")) c.fr.folds = *v;
    if (auto v = s->text("grid")) {
      if (*v == "per-model") c.fr.grid_per_model = true;
      else if (*v == "shared") c.fr.grid_per_model = false;
      else config_error(s->line(), "grid must be 'per-model' or 'shared'");
    }
    if (auto v = s->reals("C")) c.fr.grid.C = *v;
    if (auto v = s->reals("gamma")) c.fr.grid.gamma = *v;
    if (auto v = s->text("protocols")) {
      c.fr.match = c.fr.mismatch = false;
      for (const auto& p : split_list(*v)) {
        if (p == "match") c.fr.match = true;
        else if (p == "mismatch") c.fr.mismatch = true;
        else config_error(s->line(), "protocols are 'match' and 'mismatch'");
      }
    }
    s->finish();
  }

  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::Config, "config: " + what); };
  check(jobs >= 1, "jobs must be >= 1");
  check(!out.empty(), "out must not be empty");
  if (data.source == DataConfig::Source::Csv) {
    check(!data.csv.empty(), "csv source needs 'csv'");
    check(!data.schema.empty(), "csv source needs 'schema'");
  } else {
    check(data.count >= 10, "synthetic count must be >= 10");
    check(data.separation > 0.0, "separation must be > 0");
  }
  const double total = data.split.train + data.split.validation + data.split.test;
  check(data.split.train > 0 && data.split.validation > 0 && data.split.test >= 0 &&
            std::abs(total - 1.0) < 1e-9,
        "split ratios must be positive and sum to 1");

  check(!network.presets.empty(), "at least one network preset");
  std::set<std::string> nets;
  for (const auto& p : network.presets) {
    check(p == "N1" || p == "N2", "unknown network preset '" + p + "'");
    check(nets.insert(p).second, "duplicate network preset '" + p + "'");
  }
  if (network.epochs) check(*network.epochs >= 1, "epochs must be >= 1");
  if (network.batch) check(*network.batch >= 1, "batch must be >= 1");
  if (network.learning_rate) check(*network.learning_rate > 0.0, "learning_rate must be > 0");

  std::set<std::string> names;
  for (const auto& s : attacks.specs) {
    check(names.insert(s.name).second, "duplicate attack '" + s.name + "'");
    try {
      s.validate();
    } catch (const Error& e) {
      fail(ErrorKind::Config, "config: attack " + s.name + ": " + e.what());
    }
  }
  check(attacks.specs.empty() || attacks.samples >= 1, "attack samples must be >= 1");

  if (mpa.enabled) {
    check(!attacks.specs.empty(), "mpa needs at least one attack");
    for (const auto& a : mpa.attacks) check(names.count(a) == 1, "mpa attack " + a + " is not configured");
    check(mpa.lr_scale > 0.0, "mpa lr_scale must be > 0");
    check(mpa.reattack_samples >= 1, "mpa reattack_samples must be >= 1");
  }
  if (fr.enabled) {
    check(!fr.sizes.empty(), "fr sizes must not be empty");
    std::set<std::size_t> seen;
    for (auto f : fr.sizes) {
      check(seen.insert(f).second, "duplicate fr size");
      check(fr.allow_custom_sizes || f == 0 || f == 5 || f == 10 || f == 30 || f == 50 ||
                f == 200 || f == 400,
            "fr size " + std::to_string(f) + " not in {5, 10, 30, 50, 200, 400, N}");
    }
    check(fr.train_samples >= fr.folds && fr.folds >= 2, "fr needs folds >= 2 and train_samples >= folds");
    check(fr.test_samples >= 1, "fr test_samples must be >= 1");
    check(!fr.grid.C.empty() && !fr.grid.gamma.empty(), "fr grid must not be empty");
    for (double v : fr.grid.C) check(v > 0.0, "fr C values must be > 0");
    for (double v : fr.grid.gamma) check(v > 0.0, "fr gamma values must be > 0");
    check(fr.match || fr.mismatch, "fr needs at least one protocol");
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "seed = " << c.seed << "\nout = " << c.out.string() << "\njobs = " << c.jobs << "\n";
  o << "\n[data]\n";
  if (c.data.source == DataConfig::Source::Csv) {
    o << "source = csv\ncsv = " << c.data.csv.string() << "\nschema = " << c.data.schema.string() << "\n";
  } else {
    o << "source = synthetic\ncount = " << c.data.count << "\nseparation = " << format_real(c.data.separation)
      << "\n";
  }
  o << "split = " << join_reals({c.data.split.train, c.data.split.validation, c.data.split.test}) << "\n";

  o << "\n[network]\npresets = ";
  for (std::size_t i = 0; i < c.network.presets.size(); ++i) o << (i ? ", " : "") << c.network.presets[i];
  o << "\n";
  if (c.network.epochs) o << "epochs = " << *c.network.epochs << "\n";
  if (c.network.batch) o << "batch = " << *c.network.batch << "\n";
  if (c.network.learning_rate) o << "learning_rate = " << format_real(*c.network.learning_rate) << "\n";

  o << "\n[attacks]\nnames = ";
  for (std::size_t i = 0; i < c.attacks.specs.size(); ++i) o << (i ? ", " : "") << c.attacks.specs[i].name;
  o << "\nsamples = " << c.attacks.samples << "\n";
  for (const auto& s : c.attacks.specs) {
    o << "\n[attack." << s.name << "]\n"
      << "alpha = " << format_real(s.alpha) << "\nepsilon = " << format_real(s.epsilon)
      << "\ntheta = " << format_real(s.theta) << "\nconfidence = " << format_real(s.confidence)
      << "\niterations = " << s.iterations << "\nstep_size = " << format_real(s.step_size)
      << "\nnorm = " << attacks::cw_norm_name(s.norm)
      << "\nrandom_start = " << (s.random_start ? "true" : "false")
      << "\novershoot = " << format_real(s.overshoot) << "\nsearch_steps = " << s.search_steps
      << "\nlearning_rate = " << format_real(s.learning_rate)
      << "\ninitial_const = " << format_real(s.initial_const) << "\n";
  }

  o << "\n[mpa]\nenabled = " << (c.mpa.enabled ? "true" : "false") << "\n";
  if (!c.mpa.attacks.empty()) {
    o << "attacks = ";
    for (std::size_t i = 0; i < c.mpa.attacks.size(); ++i) o << (i ? ", " : "") << c.mpa.attacks[i];
    o << "\n";
  }
  o << "epochs = " << c.mpa.epochs << "\nlr_scale = " << format_real(c.mpa.lr_scale)
    << "\nreattack_samples = " << c.mpa.reattack_samples << "\n";

  o << "\n[fr]\nenabled = " << (c.fr.enabled ? "true" : "false") << "\nsizes = ";
  for (std::size_t i = 0; i < c.fr.sizes.size(); ++i)
    o << (i ? ", " : "") << (c.fr.sizes[i] == 0 ? std::string("N") : std::to_string(c.fr.sizes[i]));
  o << "\nallow_custom_sizes = " << (c.fr.allow_custom_sizes ? "true" : "false")
    << "\ntrain_samples = " << c.fr.train_samples << "\ntest_samples = " << c.fr.test_samples
    << "\nfolds = " << c.fr.folds << "\ngrid = " << (c.fr.grid_per_model ? "per-model" : "shared")
    << "\nC = " << join_reals(c.fr.grid.C) << "\ngamma = " << join_reals(c.fr.grid.gamma)
    << "\nprotocols = " << (c.fr.match ? "match" : "") << (c.fr.match && c.fr.mismatch ? ", " : "")
    << (c.fr.mismatch ? "mismatch" : "") << "\n";
  return o.str();
}

}  // namespace frshield::config
