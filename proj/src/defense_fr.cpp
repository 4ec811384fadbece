#include "frshield/defense_fr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>

#include "frshield/binio.hpp"
#include "frshield/parallel.hpp"
#include "frshield/rng.hpp"
#include "frshield/tensor.hpp"

namespace frshield::fr {

void FeatureSubset::validate(std::size_t n) const {
  require(size >= 1 && size <= n, ErrorKind::InvalidArgument,
          "feature subset size " + std::to_string(size) + " outside [1, " + std::to_string(n) + "]");
  require(indices.size() == size, ErrorKind::InvalidArgument,
          "feature subset holds " + std::to_string(indices.size()) + " indices, expected " +
              std::to_string(size));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < n, ErrorKind::InvalidArgument, "feature index out of range");
    require(i == 0 || indices[i - 1] < indices[i], ErrorKind::InvalidArgument,
            "feature subset indices must be strictly increasing");
  }
}

std::vector<FeatureSubset> draw_subsets(std::size_t n, std::size_t f, std::size_t count,
                                        std::uint64_t seed, const std::string& source) {
  require(f >= 1, ErrorKind::InvalidArgument, "feature size must be >= 1");
  require(f <= n, ErrorKind::InvalidArgument,
          "feature size " + std::to_string(f) + " exceeds width " + std::to_string(n));
  std::vector<FeatureSubset> out;
  out.reserve(count);
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < count; ++i) {
    FeatureSubset s;
    s.size = f;
    s.seed = derive_seed(seed, i);
    s.source_model = source;
    if (f == n) {
      s.indices.resize(n);
      std::iota(s.indices.begin(), s.indices.end(), 0);
    } else {
      // partial Fisher-Yates
      std::iota(pool.begin(), pool.end(), 0);
      Rng rng(s.seed);
      for (std::size_t k = 0; k < f; ++k) {
        const auto j = k + static_cast<std::size_t>(rng.below(n - k));
        std::swap(pool[k], pool[j]);
      }
      s.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(f));
      std::sort(s.indices.begin(), s.indices.end());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::size_t> default_feature_sizes(std::size_t n) {
  require(n >= 1, ErrorKind::InvalidArgument, "feature width must be >= 1");
  std::vector<std::size_t> out;
  for (std::size_t f : {5, 10, 30, 50, 200, 400})
    if (f < n) out.push_back(f);
  out.push_back(n);
  return out;
}

FeatureScaling fit_feature_scaling(const FeatureMatrix& features) {
  require(features.rows > 0, ErrorKind::Data, "cannot fit feature scaling on an empty matrix");
  require_finite(features.data, "SVM features");
  FeatureScaling s;
  s.lo.assign(features.cols, 0.0f);
  s.hi.assign(features.cols, 0.0f);
  for (std::size_t c = 0; c < features.cols; ++c) s.lo[c] = s.hi[c] = features.row(0)[c];
  for (std::size_t r = 1; r < features.rows; ++r) {
    const auto row = features.row(r);
    for (std::size_t c = 0; c < features.cols; ++c) {
      s.lo[c] = std::min(s.lo[c], row[c]);
      s.hi[c] = std::max(s.hi[c], row[c]);
    }
  }
  return s;
}

void FeatureScaling::apply(FeatureMatrix& features) const {
  require(features.cols == lo.size(), ErrorKind::ShapeMismatch,
          "feature scaling fitted on width " + std::to_string(lo.size()) + ", applied to " +
              std::to_string(features.cols));
  for (std::size_t r = 0; r < features.rows; ++r) {
    auto row = features.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const float range = hi[c] - lo[c];
      row[c] = range > 0.0f ? (row[c] - lo[c]) / range : 0.0f;
    }
  }
}

FrEnsemble train_fr_ensemble(const FeatureMatrix& features, std::span<const Label> labels,
                             const std::vector<FeatureSubset>& subsets,
                             const FrTrainOptions& options) {
  require(!subsets.empty(), ErrorKind::InvalidArgument, "FR ensemble needs at least one subset");
  require(features.rows == labels.size(), ErrorKind::ShapeMismatch,
          "FR training: feature rows and labels differ in count");
  FrEnsemble e;
  e.f = subsets.front().size;
  e.n = features.cols;
  for (const auto& s : subsets) {
    s.validate(e.n);
    require(s.size == e.f, ErrorKind::InvalidArgument, "FR subsets differ in size");
  }
  e.subsets = subsets;
  e.models.resize(subsets.size());
  e.params.resize(subsets.size());

  // Folds and SMO tie-breaking use one seed for every member, so identical
  // subsets give identical models; those are trained once and copied.
  std::vector<std::size_t> first(subsets.size());
  std::vector<std::size_t> unique;
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    first[i] = i;
    for (std::size_t u : unique)
      if (subsets[u].indices == subsets[i].indices) {
        first[i] = u;
        break;
      }
    if (first[i] == i) unique.push_back(i);
  }

  auto search = [&](const FeatureMatrix& x, unsigned jobs) {
    return svm::grid_search_cv(x, labels, options.grid, options.folds, options.seed, jobs,
                               options.smo)
        .best;
  };
  auto guarded = [&](std::size_t i, auto&& fn) {
    try {
      fn();
    } catch (const Error& err) {
      fail(err.kind(), "FR model " + std::to_string(i) + " (f=" + std::to_string(e.f) +
                           "): " + err.what());
    }
  };

  std::optional<svm::RbfParams> shared;
  if (!options.grid_per_model)
    guarded(0, [&] { shared = search(features.select_columns(subsets[0].indices), options.jobs); });
  parallel_for(unique.size(), options.jobs, [&](std::size_t u) {
    const std::size_t i = unique[u];
    guarded(i, [&] {
      const auto x = features.select_columns(subsets[i].indices);
      e.params[i] = shared ? *shared : search(x, 1);
      auto smo = options.smo;
      smo.seed = options.seed;
      e.models[i] = svm::train_smo(x, labels, e.params[i], smo);
    });
  });
  for (std::size_t i = 0; i < subsets.size(); ++i)
    if (first[i] != i) {
      e.params[i] = e.params[first[i]];
      e.models[i] = e.models[first[i]];
    }
  return e;
}

double detection_accuracy(const svm::SvmModel& model, const FeatureMatrix& sliced,
                          std::span<const Label> labels) {
  require(sliced.rows == labels.size(), ErrorKind::ShapeMismatch,
          "detection: feature rows and labels differ in count");
  require(sliced.rows > 0, ErrorKind::Data, "detection accuracy of an empty feature file");
  require(sliced.cols == model.dim, ErrorKind::ShapeMismatch,
          "feature file width " + std::to_string(sliced.cols) + " != model width " +
              std::to_string(model.dim));
  std::size_t hit = 0;
  for (std::size_t r = 0; r < sliced.rows; ++r) hit += svm::predict_one(model, sliced.row(r)) == labels[r];
  return static_cast<double>(hit) / static_cast<double>(sliced.rows);
}

double eval_clean_accuracy(const FrEnsemble& ensemble, const FeatureMatrix& features,
                           std::span<const Label> labels, unsigned jobs) {
  require(features.cols == ensemble.n, ErrorKind::ShapeMismatch,
          "clean evaluation: width " + std::to_string(features.cols) + " != ensemble width " +
              std::to_string(ensemble.n));
  require(!ensemble.models.empty(), ErrorKind::InvalidArgument, "empty FR ensemble");
  std::vector<double> acc(ensemble.models.size());
  parallel_for(acc.size(), jobs, [&](std::size_t i) {
    acc[i] = detection_accuracy(ensemble.models[i],
                                features.select_columns(ensemble.subsets[i].indices), labels);
  });
  return match_score(acc);
}

std::vector<FeatureMatrix> slice_files(const FeatureMatrix& features,
                                       const std::vector<FeatureSubset>& subsets) {
  std::vector<FeatureMatrix> out;
  out.reserve(subsets.size());
  for (const auto& s : subsets) {
    s.validate(features.cols);
    out.push_back(features.select_columns(s.indices));
  }
  return out;
}

double mismatch_score(const std::vector<std::vector<double>>& accuracy) {
  require(!accuracy.empty(), ErrorKind::InvalidArgument, "empty mismatch grid");
  double total = 0.0;
  for (const auto& row : accuracy) {
    require(!row.empty() && row.size() == accuracy.front().size(), ErrorKind::ShapeMismatch,
            "mismatch grid rows differ in length");
    double iter = 0.0;
    for (double a : row) iter += a;
    total += iter / static_cast<double>(row.size());
  }
  return total / static_cast<double>(accuracy.size());
}

double match_score(std::span<const double> paired) {
  require(!paired.empty(), ErrorKind::InvalidArgument, "no paired accuracies");
  double s = 0.0;
  for (double a : paired) s += a;
  return s / static_cast<double>(paired.size());
}

std::vector<std::vector<double>> mismatch_grid(const FrEnsemble& ensemble,
                                               const std::vector<FeatureMatrix>& files,
                                               std::span<const Label> labels, unsigned jobs) {
  require(files.size() == ensemble.models.size(), ErrorKind::InvalidArgument,
          "mismatch test needs " + std::to_string(ensemble.models.size()) + " attack files, got " +
              std::to_string(files.size()));
  for (const auto& f : files)
    require(f.cols == ensemble.f, ErrorKind::ShapeMismatch,
            "attack file width " + std::to_string(f.cols) + " != feature size " +
                std::to_string(ensemble.f));
  const std::size_t m = ensemble.models.size();
  // identical models (same subset) and identical files share one evaluation
  auto canonical = [](std::size_t count, auto&& same) {
    std::vector<std::size_t> c(count);
    for (std::size_t i = 0; i < count; ++i) {
      c[i] = i;
      for (std::size_t k = 0; k < i; ++k)
        if (c[k] == k && same(k, i)) {
          c[i] = k;
          break;
        }
    }
    return c;
  };
  const auto cm = canonical(m, [&](std::size_t a, std::size_t b) {
    const auto &x = ensemble.models[a], &y = ensemble.models[b];
    return x.bias == y.bias && x.params == y.params && x.coef == y.coef && x.support == y.support;
  });
  const auto cf = canonical(m, [&](std::size_t a, std::size_t b) { return files[a] == files[b]; });
  std::vector<std::vector<double>> grid(m, std::vector<double>(m));
  parallel_for(m * m, jobs, [&](std::size_t k) {
    const std::size_t i = k / m, j = k % m;
    if (cm[i] == i && cf[j] == j) grid[i][j] = detection_accuracy(ensemble.models[i], files[j], labels);
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) grid[i][j] = grid[cm[i]][cf[j]];
  return grid;
}

double mismatch_index_test(const FrEnsemble& ensemble, const std::vector<FeatureMatrix>& files,
                           std::span<const Label> labels, unsigned jobs) {
  return mismatch_score(mismatch_grid(ensemble, files, labels, jobs));
}

double match_index_test(const FrEnsemble& ensemble, const std::vector<FeatureMatrix>& files,
                        std::span<const Label> labels, unsigned jobs) {
  require(files.size() == ensemble.models.size(), ErrorKind::InvalidArgument,
          "match test pairs " + std::to_string(files.size()) + " files with " +
              std::to_string(ensemble.models.size()) + " models");
  std::vector<double> acc(files.size());
  parallel_for(acc.size(), jobs, [&](std::size_t i) {
    require(files[i].cols == ensemble.f, ErrorKind::ShapeMismatch,
            "attack file width " + std::to_string(files[i].cols) + " != feature size " +
                std::to_string(ensemble.f));
    acc[i] = detection_accuracy(ensemble.models[i], files[i], labels);
  });
  return match_score(acc);
}

const char* verdict_name(Verdict v) noexcept { return v == Verdict::Secure ? "secure" : "insecure"; }

Verdict security_verdict(double score) {
  require(score >= 0.0 && score <= 1.0, ErrorKind::InvalidArgument,
          "score " + std::to_string(score) + " outside [0, 1]");
  return score > kSecurityThreshold ? Verdict::Secure : Verdict::Insecure;
}

const char* protocol_name(Protocol p) noexcept {
  switch (p) {
    case Protocol::Clean: return "clean";
    case Protocol::Mismatch: return "mismatch";
    case Protocol::Match: return "match";
  }
  return "?";
}

Protocol parse_protocol(const std::string& name) {
  if (name == "clean") return Protocol::Clean;
  if (name == "mismatch") return Protocol::Mismatch;
  if (name == "match") return Protocol::Match;
  fail(ErrorKind::InvalidArgument, "unknown protocol '" + name + "' (clean, mismatch, match)");
}

// ---------------------------------------------------------------- score tables

ScoreTable::ScoreTable(Protocol p, std::vector<std::string> row_labels, std::vector<std::size_t> sizes)
    : protocol(p), rows(std::move(row_labels)), columns(std::move(sizes)),
      cells(rows.size() * columns.size(), 0.0) {}

double& ScoreTable::at(std::size_t row, std::size_t col) {
  require(row < rows.size() && col < columns.size(), ErrorKind::InvalidArgument,
          "score table cell out of range");
  return cells[row * columns.size() + col];
}

double ScoreTable::at(std::size_t row, std::size_t col) const {
  return const_cast<ScoreTable*>(this)->at(row, col);
}

namespace {

std::size_t position(const std::vector<std::string>& v, const std::string& x) {
  const auto it = std::find(v.begin(), v.end(), x);
  require(it != v.end(), ErrorKind::InvalidArgument, "score table has no row '" + x + "'");
  return static_cast<std::size_t>(it - v.begin());
}

std::size_t position(const std::vector<std::size_t>& v, std::size_t x) {
  const auto it = std::find(v.begin(), v.end(), x);
  require(it != v.end(), ErrorKind::InvalidArgument,
          "score table has no column f=" + std::to_string(x));
  return static_cast<std::size_t>(it - v.begin());
}

}  // namespace

void ScoreTable::set(const std::string& row, std::size_t f, double score) {
  require(score >= 0.0 && score <= 1.0, ErrorKind::InvalidArgument,
          "score " + std::to_string(score) + " outside [0, 1]");
  at(position(rows, row), position(columns, f)) = score;
}

double ScoreTable::get(const std::string& row, std::size_t f) const {
  return at(position(rows, row), position(columns, f));
}

void ScoreTable::validate() const {
  require(cells.size() == rows.size() * columns.size(), ErrorKind::ShapeMismatch,
          "score table cell count does not match its labels");
  for (double c : cells)
    require(c >= 0.0 && c <= 1.0, ErrorKind::Data, "score table cell outside [0, 1]");
}

std::string score_table_csv(const ScoreTable& table) {
  table.validate();
  std::string out = "Attack Type";
  for (auto f : table.columns) out += "," + std::to_string(f);
  out += "\n";
  char buf[32];
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out += table.rows[r];
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      std::snprintf(buf, sizeof buf, ",%.2f", 100.0 * table.at(r, c));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

ScoreTable parse_score_table_csv(const std::string& text, Protocol protocol) {
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Format, "score table: empty input");
  const auto header = split(line);
  require(!header.empty() && header[0] == "Attack Type", ErrorKind::Format,
          "score table: header must start with 'Attack Type'");
  ScoreTable t;
  t.protocol = protocol;
  for (std::size_t i = 1; i < header.size(); ++i) {
    try {
      t.columns.push_back(std::stoull(header[i]));
    } catch (const std::exception&) {
      fail(ErrorKind::Format, "score table: bad feature size '" + header[i] + "'");
    }
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    require(cells.size() == header.size(), ErrorKind::Format,
            "score table: row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                " cells, expected " + std::to_string(header.size()));
    t.rows.push_back(cells[0]);
    for (std::size_t i = 1; i < cells.size(); ++i) {
      try {
        t.cells.push_back(std::stod(cells[i]) / 100.0);
      } catch (const std::exception&) {
        fail(ErrorKind::Format, "score table: bad cell '" + cells[i] + "' on row " +
                                    std::to_string(line_no));
      }
    }
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------- containers

namespace {

constexpr std::string_view kFmMagic = "FRSHIELD-FM";
constexpr std::string_view kEnsembleMagic = "FRSHIELD-FRE";
constexpr std::uint32_t kVersion = 1;

std::vector<std::uint64_t> to_u64(const std::vector<std::size_t>& v) {
  return {v.begin(), v.end()};
}

std::vector<std::size_t> to_size(const std::vector<std::uint64_t>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

void save_feature_file(const FeatureFile& file, const std::filesystem::path& path) {
  require(file.features.data.size() == file.features.rows * file.features.cols,
          ErrorKind::ShapeMismatch, "feature matrix buffer size mismatch");
  require(file.labels.empty() || file.labels.size() == file.features.rows,
          ErrorKind::ShapeMismatch, "feature file labels do not match rows");
  require(file.indices.empty() || file.indices.size() == file.features.cols,
          ErrorKind::ShapeMismatch, "feature file indices do not match width");
  binio::Writer w(kFmMagic, kVersion);
  w.u64(file.features.rows);
  w.u64(file.features.cols);
  w.u64(file.source_width);
  w.u64s(to_u64(file.indices));
  w.u64(file.labels.size());
  for (auto l : file.labels) w.u8(static_cast<std::uint8_t>(l));
  w.f32s(file.features.data);
  w.save(path);
}

FeatureFile load_feature_file(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path, kFmMagic, kVersion);
  FeatureFile f;
  const auto rows = r.u64();
  const auto cols = r.u64();
  f.source_width = r.u64();
  f.indices = to_size(r.u64s());
  const auto nl = r.u64();
  require(nl == 0 || nl == rows, ErrorKind::Format, "feature file: label count mismatch");
  for (std::uint64_t i = 0; i < nl; ++i) {
    const auto v = r.u8();
    require(v <= 1, ErrorKind::Format, "feature file: bad label");
    f.labels.push_back(static_cast<Label>(v));
  }
  f.features.rows = rows;
  f.features.cols = cols;
  f.features.data = r.f32s();
  r.expect_end();
  require(f.features.data.size() == rows * cols, ErrorKind::Format,
          "feature file: buffer size mismatch");
  require(f.indices.empty() || f.indices.size() == cols, ErrorKind::Format,
          "feature file: index count mismatch");
  return f;
}

void save_ensemble(const FrEnsemble& e, const std::filesystem::path& path) {
  require(e.subsets.size() == e.models.size() && e.params.size() == e.models.size(),
          ErrorKind::ShapeMismatch, "ensemble parts differ in length");
  binio::Writer w(kEnsembleMagic, kVersion);
  w.u64(e.f);
  w.u64(e.n);
  w.u64(e.models.size());
  for (std::size_t i = 0; i < e.models.size(); ++i) {
    w.u64(e.subsets[i].seed);
    w.str(e.subsets[i].source_model);
    w.u64s(to_u64(e.subsets[i].indices));
    w.f64(e.params[i].C);
    w.f64(e.params[i].gamma);
    svm::write_svm(w, e.models[i]);
  }
  w.save(path);
}

FrEnsemble load_ensemble(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path, kEnsembleMagic, kVersion);
  FrEnsemble e;
  e.f = r.u64();
  e.n = r.u64();
  const auto m = r.u64();
  for (std::uint64_t i = 0; i < m; ++i) {
    FeatureSubset s;
    s.size = e.f;
    s.seed = r.u64();
    s.source_model = r.str();
    s.indices = to_size(r.u64s());
    try {
      s.validate(e.n);
    } catch (const Error& err) {
      fail(ErrorKind::Format, std::string("ensemble file: ") + err.what());
    }
    e.subsets.push_back(std::move(s));
    svm::RbfParams p;
    p.C = r.f64();
    p.gamma = r.f64();
    e.params.push_back(p);
    e.models.push_back(svm::read_svm(r));
  }
  r.expect_end();
  return e;
}

}  // namespace frshield::fr
