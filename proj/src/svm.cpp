#include "frshield/svm.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <list>
#include <numeric>

#include "frshield/parallel.hpp"
#include "frshield/rng.hpp"

namespace frshield::svm {

void RbfParams::validate() const {
  require(std::isfinite(C) && C > 0.0, ErrorKind::InvalidArgument, "SVM C must be > 0");
  require(std::isfinite(gamma) && gamma > 0.0, ErrorKind::InvalidArgument,
          "SVM gamma must be > 0");
}

namespace {

double sq_distance(std::span<const float> x, std::span<const float> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    s += d * d;
  }
  return s;
}

}  // namespace

double rbf_kernel(std::span<const float> x, std::span<const float> y, double gamma) {
  require(x.size() == y.size(), ErrorKind::ShapeMismatch,
          "rbf_kernel: dimensions " + std::to_string(x.size()) + " and " +
              std::to_string(y.size()) + " differ");
  return std::exp(-gamma * sq_distance(x, y));
}

// ---------------------------------------------------------------- dual solver

namespace {

// Kernel rows computed on demand and kept in an LRU cache.
class KernelRows {
 public:
  using Fill = std::function<void(std::size_t, double*)>;

  KernelRows(std::size_t n, Fill fill, std::size_t budget_bytes)
      : n_(n), fill_(std::move(fill)), slot_(n, lru_.end()) {
    const std::size_t row_bytes = std::max<std::size_t>(1, n * sizeof(double));
    capacity_ = std::max<std::size_t>(2, budget_bytes / row_bytes);
  }

  const double* row(std::size_t i) {
    if (slot_[i] != lru_.end()) {
      lru_.splice(lru_.begin(), lru_, slot_[i]);
      return lru_.front().values.data();
    }
    if (lru_.size() >= capacity_) {
      auto& victim = lru_.back();
      slot_[victim.index] = lru_.end();
      std::vector<double> reuse = std::move(victim.values);
      lru_.pop_back();
      lru_.push_front({i, std::move(reuse)});
    } else {
      lru_.push_front({i, std::vector<double>(n_)});
    }
    slot_[i] = lru_.begin();
    fill_(i, lru_.front().values.data());
    return lru_.front().values.data();
  }

 private:
  struct Entry {
    std::size_t index;
    std::vector<double> values;
  };
  std::size_t n_;
  Fill fill_;
  std::list<Entry> lru_;
  std::vector<std::list<Entry>::iterator> slot_;
  std::size_t capacity_ = 2;
};

struct Dual {
  std::vector<double> alpha;
  double rho = 0.0;
  double objective = 0.0;
  double gap = 0.0;
  std::size_t iterations = 0;
};

// min 1/2 a'Qa - e'a  s.t. 0 <= a <= C, y'a = 0, Q_ij = y_i y_j K_ij, K_ii = 1.
Dual solve_dual(std::span<const int> y, double C, KernelRows& K, const SmoOptions& opt) {
  const std::size_t n = y.size();
  Dual d;
  d.alpha.assign(n, 0.0);
  std::vector<double> G(n, -1.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(opt.seed);
  rng.shuffle(order);
  const std::size_t max_iter =
      opt.max_iter ? opt.max_iter : std::max<std::size_t>(1000000, 100 * n);
  auto& a = d.alpha;
  constexpr double kTau = 1e-12;

  for (;;) {
    // maximal violating pair
    double gmax = -std::numeric_limits<double>::infinity();
    double gmin = std::numeric_limits<double>::infinity();
    std::size_t i = n, j = n;
    for (std::size_t t : order) {
      const double v = -y[t] * G[t];
      const bool up = (y[t] == 1 && a[t] < C) || (y[t] == -1 && a[t] > 0.0);
      const bool low = (y[t] == 1 && a[t] > 0.0) || (y[t] == -1 && a[t] < C);
      if (up && v > gmax) {
        gmax = v;
        i = t;
      }
      if (low && v < gmin) {
        gmin = v;
        j = t;
      }
    }
    d.gap = gmax - gmin;
    if (i == n || j == n || d.gap < opt.tol) break;
    if (d.iterations >= max_iter)
      fail(ErrorKind::Convergence, "SMO did not converge after " + std::to_string(max_iter) +
                                       " iterations (KKT gap " + std::to_string(d.gap) + ")");
    ++d.iterations;

    const double* Ki = K.row(i);
    const double* Kj = K.row(j);
    const double Qij = y[i] * y[j] * Ki[j];
    const double ai = a[i], aj = a[j];
    if (y[i] != y[j]) {
      double quad = 2.0 + 2.0 * Qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = a[i] - a[j];
      a[i] += delta;
      a[j] += delta;
      if (diff > 0.0) {
        if (a[j] < 0.0) {
          a[j] = 0.0;
          a[i] = diff;
        }
      } else if (a[i] < 0.0) {
        a[i] = 0.0;
        a[j] = -diff;
      }
      if (diff > 0.0) {
        if (a[i] > C) {
          a[i] = C;
          a[j] = C - diff;
        }
      } else if (a[j] > C) {
        a[j] = C;
        a[i] = C + diff;
      }
    } else {
      double quad = 2.0 - 2.0 * Qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = a[i] + a[j];
      a[i] -= delta;
      a[j] += delta;
      if (sum > C) {
        if (a[i] > C) {
          a[i] = C;
          a[j] = sum - C;
        }
        if (a[j] > C) {
          a[j] = C;
          a[i] = sum - C;
        }
      } else {
        if (a[j] < 0.0) {
          a[j] = 0.0;
          a[i] = sum;
        }
        if (a[i] < 0.0) {
          a[i] = 0.0;
          a[j] = sum;
        }
      }
    }
    const double dai = a[i] - ai, daj = a[j] - aj;
    for (std::size_t t = 0; t < n; ++t)
      G[t] += y[t] * (y[i] * Ki[t] * dai + y[j] * Kj[t] * daj);
  }

  double obj = 0.0;
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double free_sum = 0.0;
  std::size_t free_count = 0;
  for (std::size_t t = 0; t < n; ++t) {
    obj += a[t] * (G[t] - 1.0);
    const double yg = y[t] * G[t];
    if (a[t] >= C) {
      if (y[t] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (a[t] <= 0.0) {
      if (y[t] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++free_count;
      free_sum += yg;
    }
  }
  d.objective = 0.5 * obj;
  d.rho = free_count ? free_sum / static_cast<double>(free_count) : 0.5 * (ub + lb);
  return d;
}

std::vector<int> signs_of(std::span<const Label> labels) {
  std::vector<int> y(labels.size());
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    y[i] = label_sign(labels[i]);
    (y[i] > 0 ? pos : neg) = true;
  }
  require(pos && neg, ErrorKind::Data, "SVM training needs samples of both classes");
  return y;
}

}  // namespace

SvmModel train_smo(const FeatureMatrix& features, std::span<const Label> labels,
                   const RbfParams& params, const SmoOptions& options) {
  params.validate();
  require(options.tol > 0.0, ErrorKind::InvalidArgument, "SMO tolerance must be > 0");
  require(features.rows == labels.size(), ErrorKind::ShapeMismatch,
          "train_smo: feature rows and labels differ in count");
  require_finite(features.data, "SVM training features");
  const auto y = signs_of(labels);
  const std::size_t n = features.rows;

  KernelRows K(
      n,
      [&](std::size_t i, double* out) {
        for (std::size_t t = 0; t < n; ++t)
          out[t] = std::exp(-params.gamma * sq_distance(features.row(i), features.row(t)));
      },
      options.cache_mb << 20);
  const auto dual = solve_dual(y, params.C, K, options);

  SvmModel m;
  m.params = params;
  m.dim = features.cols;
  m.bias = -dual.rho;
  m.objective = dual.objective;
  m.iterations = dual.iterations;
  m.kkt_gap = dual.gap;
  std::vector<std::size_t> sv;
  for (std::size_t t = 0; t < n; ++t)
    if (dual.alpha[t] > 0.0) {
      sv.push_back(t);
      m.coef.push_back(dual.alpha[t] * y[t]);
    }
  m.support = features.select_rows(sv);
  return m;
}

double SvmModel::decision(std::span<const float> x) const {
  require(x.size() == dim, ErrorKind::ShapeMismatch,
          "SVM expects " + std::to_string(dim) + " features, got " + std::to_string(x.size()));
  double s = bias;
  for (std::size_t i = 0; i < coef.size(); ++i)
    s += coef[i] * std::exp(-params.gamma * sq_distance(support.row(i), x));
  return s;
}

std::vector<double> decision_values(const SvmModel& model, const FeatureMatrix& features) {
  require(features.cols == model.dim || features.rows == 0, ErrorKind::ShapeMismatch,
          "SVM expects " + std::to_string(model.dim) + " features, got " +
              std::to_string(features.cols));
  std::vector<double> out(features.rows);
  for (std::size_t r = 0; r < features.rows; ++r) out[r] = model.decision(features.row(r));
  return out;
}

Label predict_one(const SvmModel& model, std::span<const float> x) {
  return model.decision(x) >= 0.0 ? Label::Pristine : Label::Manipulated;
}

std::vector<Label> svm_predict(const SvmModel& model, const FeatureMatrix& features) {
  const auto d = decision_values(model, features);
  std::vector<Label> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    out[i] = d[i] >= 0.0 ? Label::Pristine : Label::Manipulated;
  return out;
}

// ---------------------------------------------------------------- grid search

Grid Grid::standard() {
  Grid g;
  for (int e : {-3, -1, 1, 3, 5, 7}) g.C.push_back(std::ldexp(1.0, e));
  for (int e : {-7, -5, -3, -1, 1}) g.gamma.push_back(std::ldexp(1.0, e));
  return g;
}

std::vector<std::size_t> stratified_folds(std::span<const Label> labels, std::size_t k,
                                          std::uint64_t seed) {
  require(k >= 2, ErrorKind::InvalidArgument, "cross-validation needs k >= 2");
  require(labels.size() >= k, ErrorKind::InvalidArgument,
          "fewer samples (" + std::to_string(labels.size()) + ") than folds (" +
              std::to_string(k) + ")");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[label_index(labels[i])].push_back(i);
  for (auto& c : by_class)
    require(c.size() >= k, ErrorKind::Data,
            "stratified " + std::to_string(k) + "-fold split needs at least " +
                std::to_string(k) + " samples per class");
  Rng rng(seed);
  std::vector<std::size_t> fold(labels.size());
  std::size_t next = 0;
  for (auto& c : by_class) {
    rng.shuffle(c);
    for (auto i : c) fold[i] = next++ % k;
  }
  return fold;
}

GridSearchResult grid_search_cv(const FeatureMatrix& features, std::span<const Label> labels,
                                const Grid& grid, std::size_t k, std::uint64_t seed,
                                unsigned jobs, const SmoOptions& options) {
  require(!grid.C.empty() && !grid.gamma.empty(), ErrorKind::InvalidArgument,
          "grid search needs a non-empty grid");
  for (double c : grid.C)
    for (double g : grid.gamma) RbfParams{c, g}.validate();
  require(features.rows == labels.size(), ErrorKind::ShapeMismatch,
          "grid_search_cv: feature rows and labels differ in count");
  require_finite(features.data, "SVM training features");
  const auto fold = stratified_folds(labels, k, seed);
  const auto y = signs_of(labels);
  const std::size_t n = features.rows;

  // Pairwise squared distances, shared by every cell.
  std::vector<double> D(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      D[i * n + j] = D[j * n + i] = sq_distance(features.row(i), features.row(j));

  std::vector<std::vector<std::size_t>> train_idx(k), test_idx(k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < k; ++f) (fold[i] == f ? test_idx[f] : train_idx[f]).push_back(i);

  const std::size_t cells = grid.C.size() * grid.gamma.size();
  GridSearchResult out;
  out.accuracy.assign(cells, 0.0);
  parallel_for(cells, jobs, [&](std::size_t cell) {
    const double C = grid.C[cell / grid.gamma.size()];
    const double gamma = grid.gamma[cell % grid.gamma.size()];
    double acc = 0.0;
    for (std::size_t f = 0; f < k; ++f) {
      const auto& tr = train_idx[f];
      const auto& te = test_idx[f];
      std::vector<int> ytr(tr.size());
      for (std::size_t a = 0; a < tr.size(); ++a) ytr[a] = y[tr[a]];
      KernelRows K(
          tr.size(),
          [&](std::size_t a, double* row) {
            const double* Da = &D[tr[a] * n];
            for (std::size_t b = 0; b < tr.size(); ++b) row[b] = std::exp(-gamma * Da[tr[b]]);
          },
          options.cache_mb << 20);
      auto opt = options;
      opt.seed = derive_seed(options.seed, static_cast<std::uint64_t>(f));
      const auto dual = solve_dual(ytr, C, K, opt);
      std::size_t correct = 0;
      for (auto t : te) {
        double s = -dual.rho;
        for (std::size_t a = 0; a < tr.size(); ++a)
          if (dual.alpha[a] > 0.0) s += dual.alpha[a] * ytr[a] * std::exp(-gamma * D[tr[a] * n + t]);
        correct += (s >= 0.0 ? 1 : -1) == y[t];
      }
      acc += static_cast<double>(correct) / static_cast<double>(te.size());
    }
    out.accuracy[cell] = acc / static_cast<double>(k);
  });

  double best = -1.0;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const RbfParams p{grid.C[cell / grid.gamma.size()], grid.gamma[cell % grid.gamma.size()]};
    const double acc = out.accuracy[cell];
    const bool better = acc > best ||
                        (acc == best && (p.C < out.best.C ||
                                         (p.C == out.best.C && p.gamma < out.best.gamma)));
    if (better) {
      best = acc;
      out.best = p;
    }
  }
  return out;
}

// ---------------------------------------------------------------- container

namespace {
constexpr std::string_view kSvmMagic = "FRSHIELD-SVM";
constexpr std::uint32_t kSvmVersion = 1;
}  // namespace

void write_svm(binio::Writer& w, const SvmModel& m) {
  w.f64(m.params.C);
  w.f64(m.params.gamma);
  w.u64(m.dim);
  w.f64(m.bias);
  w.f64(m.objective);
  w.u64(m.iterations);
  w.f64(m.kkt_gap);
  w.u64(m.support.rows);
  w.f32s(m.support.data);
  w.f64s(m.coef);
}

SvmModel read_svm(binio::Reader& r) {
  SvmModel m;
  m.params.C = r.f64();
  m.params.gamma = r.f64();
  m.dim = r.u64();
  m.bias = r.f64();
  m.objective = r.f64();
  m.iterations = r.u64();
  m.kkt_gap = r.f64();
  m.support.rows = r.u64();
  m.support.cols = m.dim;
  m.support.data = r.f32s();
  m.coef = r.f64s();
  require(m.support.data.size() == m.support.rows * m.dim && m.coef.size() == m.support.rows,
          ErrorKind::Format, "inconsistent SVM record");
  return m;
}

std::vector<std::uint8_t> serialize_svm(const SvmModel& model) {
  binio::Writer w(kSvmMagic, kSvmVersion);
  write_svm(w, model);
  return w.bytes();
}

SvmModel deserialize_svm(std::vector<std::uint8_t> bytes) {
  binio::Reader r(std::move(bytes), kSvmMagic, kSvmVersion);
  auto m = read_svm(r);
  r.expect_end();
  return m;
}

void save_svm(const SvmModel& model, const std::filesystem::path& path) {
  binio::write_file(path, serialize_svm(model));
}

SvmModel load_svm(const std::filesystem::path& path) {
  return deserialize_svm(binio::read_file(path));
}

}  // namespace frshield::svm
