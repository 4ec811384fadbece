#include "frshield/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include <json.hpp>

namespace frshield::report {

using nlohmann::json;

namespace {

std::string fmt(const char* pattern, double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

json real(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double real_or_inf(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

json table_json(const std::optional<fr::ScoreTable>& t) {
  if (!t) return nullptr;
  return {{"protocol", fr::protocol_name(t->protocol)},
          {"rows", t->rows},
          {"columns", t->columns},
          {"cells", t->cells}};
}

std::optional<fr::ScoreTable> table_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  fr::ScoreTable t;
  t.protocol = fr::parse_protocol(j.at("protocol").get<std::string>());
  t.rows = j.at("rows").get<std::vector<std::string>>();
  t.columns = j.at("columns").get<std::vector<std::size_t>>();
  t.cells = j.at("cells").get<std::vector<double>>();
  t.validate();
  return t;
}

}  // namespace

bool Report::canonical_equal(const Report& o) const {
  return partial == o.partial && networks == o.networks && clean == o.clean &&
         attacks == o.attacks && mpa == o.mpa && fr == o.fr;
}

std::vector<FrVerdictRow> best_verdicts(const fr::ScoreTable& table) {
  table.validate();
  std::vector<FrVerdictRow> out;
  if (table.columns.empty()) return out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < table.columns.size(); ++c)
      if (table.at(r, c) > table.at(r, best)) best = c;
    out.push_back({table.protocol, table.rows[r], table.columns[best], table.at(r, best),
                   fr::security_verdict(table.at(r, best))});
  }
  return out;
}

std::string clean_training_csv(const Report& report) {
  std::string out = "Network,Parameters,Epochs,Train Accuracy,Validation Accuracy,Test Accuracy\n";
  for (const auto& r : report.clean)
    out += r.network + "," + std::to_string(r.parameters) + "," + std::to_string(r.epochs) + "," +
           fmt("%.4f", r.train_accuracy) + "," + fmt("%.4f", r.validation_accuracy) + "," +
           fmt("%.4f", r.test_accuracy) + "\n";
  return out;
}

std::string attack_results_csv(const Report& report, const std::string& network) {
  std::string out = "Attack Type,PSNR,L1 dist,Max. dist,ASR\n";
  for (const auto& r : report.attacks) {
    if (r.network != network) continue;
    out += r.attack + "," + fmt("%.4f", r.psnr) + "," + fmt("%.4f", r.l1) + "," +
           fmt("%.4f", r.max_dist) + "," + fmt("%.2f", r.asr) + "\n";
  }
  return out;
}

std::string reattack_csv(const MpaResult& result) {
  std::string out = "Tuned Attack,Samples,Re-attack ASR\n";
  for (const auto& r : result.reattack)
    out += r.attack + "," + std::to_string(r.samples) + "," + fmt("%.2f", r.asr) + "\n";
  return out;
}

std::string verdicts_csv(const FrResult& result) {
  std::string out = "Protocol,Attack Type,Best f,Score,Verdict\n";
  for (const auto& v : result.verdicts)
    out += std::string(fr::protocol_name(v.protocol)) + "," + v.attack + "," + std::to_string(v.f) +
           "," + fmt("%.2f", 100.0 * v.score) + "," + fr::verdict_name(v.verdict) + "\n";
  return out;
}

std::string attack_cost_csv(const Report& report) {
  std::vector<std::string> attacks;
  std::map<std::pair<std::string, std::string>, double> seconds;
  for (const auto& t : report.timings) {
    if (t.stage != "attack") continue;
    const auto slash = t.item.find('/');
    if (slash == std::string::npos) continue;
    const auto net = t.item.substr(0, slash), attack = t.item.substr(slash + 1);
    if (std::find(attacks.begin(), attacks.end(), attack) == attacks.end()) attacks.push_back(attack);
    seconds[{attack, net}] += t.seconds;
  }
  std::string out = "Attack Type";
  for (const auto& n : report.networks) out += "," + n;
  out += "\n";
  for (const auto& a : attacks) {
    out += a;
    for (const auto& n : report.networks) {
      const auto it = seconds.find({a, n});
      out += "," + (it == seconds.end() ? std::string() : fmt("%.2f", it->second));
    }
    out += "\n";
  }
  return out;
}

std::string summary_json(const Report& report) {
  json j;
  j["format"] = "frshield-report";
  j["version"] = 1;
  j["partial"] = report.partial;
  j["networks"] = report.networks;
  j["clean"] = json::array();
  for (const auto& r : report.clean)
    j["clean"].push_back({{"network", r.network},
                          {"parameters", r.parameters},
                          {"epochs", r.epochs},
                          {"train_accuracy", r.train_accuracy},
                          {"validation_accuracy", r.validation_accuracy},
                          {"test_accuracy", r.test_accuracy}});
  j["attacks"] = json::array();
  for (const auto& r : report.attacks)
    j["attacks"].push_back({{"network", r.network},
                            {"attack", r.attack},
                            {"samples", r.samples},
                            {"psnr", real(r.psnr)},
                            {"l1", r.l1},
                            {"max_dist", r.max_dist},
                            {"asr", r.asr}});
  j["mpa"] = json::array();
  for (const auto& m : report.mpa) {
    json re = json::array();
    for (const auto& r : m.reattack) re.push_back({{"attack", r.attack}, {"samples", r.samples}, {"asr", r.asr}});
    j["mpa"].push_back({{"network", m.network},
                        {"tuned", m.matrix.tuned},
                        {"tested", m.matrix.tested},
                        {"cells", m.matrix.cells},
                        {"reattack", re}});
  }
  j["fr"] = json::array();
  for (const auto& f : report.fr) {
    json verdicts = json::array();
    for (const auto& v : f.verdicts)
      verdicts.push_back({{"protocol", fr::protocol_name(v.protocol)},
                          {"attack", v.attack},
                          {"f", v.f},
                          {"score", v.score},
                          {"verdict", fr::verdict_name(v.verdict)}});
    j["fr"].push_back({{"network", f.network},
                       {"flatten_width", f.flatten_width},
                       {"clean", table_json(f.clean)},
                       {"mismatch", table_json(f.mismatch)},
                       {"match", table_json(f.match)},
                       {"verdicts", verdicts}});
  }
  return j.dump(2) + "\n";
}

Report parse_summary_json(std::string_view text) {
  Report r;
  try {
    const json j = json::parse(text);
    if (j.at("format") != "frshield-report") fail(ErrorKind::Format, "not a frshield report summary");
    if (j.at("version") != 1) fail(ErrorKind::Format, "unsupported report summary version");
    r.partial = j.at("partial").get<bool>();
    r.networks = j.at("networks").get<std::vector<std::string>>();
    for (const auto& c : j.at("clean"))
      r.clean.push_back({c.at("network"), c.at("parameters"), c.at("epochs"), c.at("train_accuracy"),
                         c.at("validation_accuracy"), c.at("test_accuracy")});
    for (const auto& a : j.at("attacks"))
      r.attacks.push_back({a.at("network"), a.at("attack"), a.at("samples"), real_or_inf(a.at("psnr")),
                           a.at("l1"), a.at("max_dist"), a.at("asr")});
    for (const auto& m : j.at("mpa")) {
      MpaResult res;
      res.network = m.at("network");
      res.matrix.tuned = m.at("tuned").get<std::vector<std::string>>();
      res.matrix.tested = m.at("tested").get<std::vector<std::string>>();
      res.matrix.cells = m.at("cells").get<std::vector<double>>();
      if (res.matrix.cells.size() != res.matrix.tuned.size() * res.matrix.tested.size())
        fail(ErrorKind::Format, "report summary: MPA matrix shape mismatch");
      for (const auto& x : m.at("reattack")) res.reattack.push_back({x.at("attack"), x.at("samples"), x.at("asr")});
      r.mpa.push_back(std::move(res));
    }
    for (const auto& f : j.at("fr")) {
      FrResult res;
      res.network = f.at("network");
      res.flatten_width = f.at("flatten_width");
      res.clean = table_from(f.at("clean"));
      res.mismatch = table_from(f.at("mismatch"));
      res.match = table_from(f.at("match"));
      for (const auto& v : f.at("verdicts")) {
        const auto verdict = v.at("verdict").get<std::string>();
        if (verdict != "secure" && verdict != "insecure")
          fail(ErrorKind::Format, "report summary: bad verdict '" + verdict + "'");
        res.verdicts.push_back({fr::parse_protocol(v.at("protocol")), v.at("attack"), v.at("f"), v.at("score"),
                                verdict == "secure" ? fr::Verdict::Secure : fr::Verdict::Insecure});
      }
      r.fr.push_back(std::move(res));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("report summary: ") + e.what());
  }
  return r;
}

std::string timings_json(const Report& report) {
  json j = json::array();
  for (const auto& t : report.timings) j.push_back({{"stage", t.stage}, {"item", t.item}, {"seconds", t.seconds}});
  return j.dump(2) + "\n";
}

std::vector<Timing> parse_timings_json(std::string_view text) {
  std::vector<Timing> out;
  try {
    for (const auto& t : json::parse(text)) out.push_back({t.at("stage"), t.at("item"), t.at("seconds")});
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("timings: ") + e.what());
  }
  return out;
}

std::vector<std::filesystem::path> emit_report(const Report& report, Format format,
                                               const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> canonical;
  auto put = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    canonical.push_back(dir / name);
  };
  if (format == Format::Summary) {
    put("summary.json", summary_json(report));
    write_text(dir / "timings.json", timings_json(report));
    return canonical;
  }
  put("clean_training.csv", clean_training_csv(report));
  for (const auto& n : report.networks) put("attack_results_" + n + ".csv", attack_results_csv(report, n));
  for (const auto& m : report.mpa) {
    put("mpa_scores_" + m.network + ".csv", mpa::cross_attack_csv(m.matrix));
    put("mpa_reattack_" + m.network + ".csv", reattack_csv(m));
  }
  for (const auto& f : report.fr) {
    if (f.clean) put("fr_clean_" + f.network + ".csv", fr::score_table_csv(*f.clean));
    if (f.mismatch) put("fr_mismatch_" + f.network + ".csv", fr::score_table_csv(*f.mismatch));
    if (f.match) put("fr_match_" + f.network + ".csv", fr::score_table_csv(*f.match));
    put("fr_verdicts_" + f.network + ".csv", verdicts_csv(f));
  }
  write_text(dir / "attack_cost.csv", attack_cost_csv(report));
  return canonical;
}

}  // namespace frshield::report
