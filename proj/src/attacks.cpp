#include "frshield/attacks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "frshield/binio.hpp"
#include "frshield/parallel.hpp"
#include "frshield/rng.hpp"

namespace frshield::attacks {

const char* attack_kind_name(AttackKind kind) noexcept {
  switch (kind) {
    case AttackKind::FGSM: return "FGSM";
    case AttackKind::IFGSM: return "IFGSM";
    case AttackKind::BIM: return "BIM";
    case AttackKind::PGD: return "PGD";
    case AttackKind::JSMA: return "JSMA";
    case AttackKind::LBFGS: return "LBFGS";
    case AttackKind::DEEPFOOL: return "DEEPFOOL";
    case AttackKind::CW: return "CW";
  }
  return "?";
}

namespace {

std::string normalize_name(std::string_view name) {
  std::string out;
  for (char c : name) {
    if (c == '-' || c == '&' || c == '_' || c == ' ') continue;
    out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return out;
}

}  // namespace

AttackKind parse_attack_kind(std::string_view name) {
  const auto n = normalize_name(name);
  for (auto k : {AttackKind::FGSM, AttackKind::IFGSM, AttackKind::BIM, AttackKind::PGD,
                 AttackKind::JSMA, AttackKind::LBFGS, AttackKind::DEEPFOOL, AttackKind::CW})
    if (n == attack_kind_name(k)) return k;
  fail(ErrorKind::InvalidArgument, "unknown attack kind: " + std::string(name));
}

const char* cw_norm_name(CwNorm norm) noexcept {
  switch (norm) {
    case CwNorm::L2: return "L2";
    case CwNorm::L0: return "L0";
    case CwNorm::Linf: return "Linf";
  }
  return "?";
}

void AttackSpec::validate() const {
  auto nonneg = [&](double v, const char* what) {
    require(std::isfinite(v) && v >= 0.0, ErrorKind::InvalidArgument,
            name + ": " + what + " must be a finite value >= 0");
  };
  nonneg(alpha, "alpha");
  nonneg(epsilon, "epsilon");
  nonneg(theta, "theta");
  nonneg(confidence, "confidence");
  nonneg(step_size, "step_size");
  nonneg(overshoot, "overshoot");
  nonneg(learning_rate, "learning_rate");
  nonneg(initial_const, "initial_const");
  switch (kind) {
    case AttackKind::FGSM: break;
    case AttackKind::JSMA:
      require(iterations >= 0, ErrorKind::InvalidArgument, name + ": budget must be >= 0");
      break;
    case AttackKind::PGD:
      require(step_size > 0.0, ErrorKind::InvalidArgument, name + ": step_size must be > 0");
      [[fallthrough]];
    default:
      require(iterations >= 1, ErrorKind::InvalidArgument, name + ": iterations must be >= 1");
  }
  if (kind == AttackKind::CW || kind == AttackKind::LBFGS) {
    require(search_steps >= 1, ErrorKind::InvalidArgument, name + ": search_steps must be >= 1");
    require(initial_const > 0.0, ErrorKind::InvalidArgument,
            name + ": initial_const must be > 0");
  }
  if (kind == AttackKind::CW)
    require(learning_rate > 0.0, ErrorKind::InvalidArgument, name + ": learning_rate must be > 0");
}

AttackSpec spec_from_name(std::string_view raw) {
  std::string n = normalize_name(raw);
  if (n == "FGSM10") n = "FGSM010";
  if (n == "IFGSM10") n = "IFGSM010";
  if (n == "JSMA") n = "JSMA001";
  if (n == "CW50") n = "CW0";

  AttackSpec s;
  s.name = n;
  if (n == "FGSM010") {
    s.kind = AttackKind::FGSM;
    s.alpha = 0.1;
    s.epsilon = 0.1;
    s.iterations = 1;
  } else if (n == "IFGSM010") {
    s.kind = AttackKind::IFGSM;
    s.epsilon = 0.1;
    s.alpha = 0.01;
    s.iterations = 10;
  } else if (n == "BIM100") {
    s.kind = AttackKind::BIM;
    s.epsilon = 0.01;
    s.alpha = 0.001;
    s.iterations = 100;
  } else if (n == "PGD005") {
    s.kind = AttackKind::PGD;
    s.epsilon = 0.05;
    s.step_size = 0.3;
    s.iterations = 40;
    s.random_start = true;
  } else if (n == "LBFGS") {
    s.kind = AttackKind::LBFGS;
    s.epsilon = 1e-5;
    s.iterations = 50;
    s.search_steps = 12;
    s.initial_const = 1.0;
  } else if (n == "JSMA001") {
    s.kind = AttackKind::JSMA;
    s.theta = 0.01;
    s.iterations = 2000;
  } else if (n == "DEEPFOOL") {
    s.kind = AttackKind::DEEPFOOL;
    s.iterations = 50;
    s.overshoot = 0.02;
  } else if (n == "CW0" || n == "CW100") {
    s.kind = AttackKind::CW;
    s.norm = CwNorm::L2;
    s.confidence = n == "CW0" ? 0.0 : 100.0;
    s.iterations = 1000;
    s.search_steps = 9;
    s.learning_rate = 1e-2;
    s.initial_const = 1.0;
  } else {
    fail(ErrorKind::InvalidArgument, "unknown attack name: " + std::string(raw));
  }
  return s;
}

std::vector<std::string> registered_attack_names() {
  return {"IFGSM010", "FGSM010", "BIM100", "PGD005", "LBFGS",
          "JSMA001",  "DEEPFOOL", "CW0",   "CW100"};
}

// ---------------------------------------------------------------- metrics

PixelNorms pixel_norms(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), ErrorKind::ShapeMismatch, "pixel_norms: size mismatch");
  PixelNorms n;
  if (a.empty()) return n;
  double l1 = 0.0, l2 = 0.0, li = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(b[i]) - a[i]);
    l1 += d;
    l2 += d * d;
    li = std::max(li, d);
  }
  n.l1_mean = l1 / static_cast<double>(a.size());
  n.l2 = std::sqrt(l2);
  n.linf = li;
  return n;
}

PerturbationMetrics perturbation_metrics(const Tensor& original, const Tensor& adversarial) {
  require(original.shape == adversarial.shape, ErrorKind::ShapeMismatch,
          "perturbation_metrics: shapes " + shape_string(original.shape) + " and " +
              shape_string(adversarial.shape) + " differ");
  PerturbationMetrics m;
  const std::size_t n = original.size();
  if (n == 0) return m;
  double sq = 0.0, l1 = 0.0, mx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = std::abs((static_cast<double>(adversarial[i]) - original[i]) * 255.0);
    sq += d * d;
    l1 += d;
    mx = std::max(mx, d);
  }
  const double mse = sq / static_cast<double>(n);
  m.psnr = mse == 0.0 ? kPsnrIdentical : 10.0 * std::log10(255.0 * 255.0 / mse);
  m.l1 = l1 / static_cast<double>(n);
  m.max_dist = mx;
  return m;
}

double attack_success_rate(const nn::TrainedModel& model, std::span<const AttackResult> results) {
  require(!results.empty(), ErrorKind::InvalidArgument, "attack_success_rate: empty result list");
  std::size_t fooled = 0;
  for (const auto& r : results)
    fooled += nn::predict_label(model, r.adversarial.pixels.data) != r.adversarial.label;
  return static_cast<double>(fooled) / static_cast<double>(results.size());
}

// ---------------------------------------------------------------- shared helpers

namespace {

using Pixels = std::vector<float>;

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// Logits at x and the gradient of (Z_target - Z_true).
struct Probe {
  std::vector<float> z;
  std::vector<float> g;
  double margin = 0.0;  // Z_target - Z_true
};

Probe probe(const nn::TrainedModel& model, std::span<const float> x, Label y) {
  std::vector<float> coeffs(2, 0.0f);
  coeffs[label_index(y)] = -1.0f;
  coeffs[label_index(other_label(y))] = 1.0f;
  auto [z, g] = nn::logit_combination_gradient(model, x, coeffs);
  require(z.size() == 2, ErrorKind::ShapeMismatch, "attacks need a two-class model");
  require_finite(g, "attack gradient");
  Probe p;
  p.margin = static_cast<double>(z[label_index(other_label(y))]) - z[label_index(y)];
  p.z = std::move(z);
  p.g = std::move(g);
  return p;
}

bool fooled(std::span<const float> z, Label y) { return nn::predict_from_logits(z) != y; }

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

AttackResult finish(const nn::TrainedModel& model, const ImageSample& sample, Pixels adv,
                    int iterations, std::optional<double> c = std::nullopt) {
  AttackResult r;
  r.adversarial.label = sample.label;
  r.adversarial.source_id = sample.source_id;
  r.adversarial.pixels = Tensor(sample.pixels.shape, std::move(adv));
  r.success = nn::predict_label(model, r.adversarial.pixels.data) != sample.label;
  r.iterations_used = iterations;
  r.norms = pixel_norms(sample.pixels.data, r.adversarial.pixels.data);
  r.constant_c = c;
  return r;
}

void check_input(const ImageSample& sample) {
  require_finite(sample.pixels.data, "attack input");
}

double sq_dist(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------- FGSM family

AttackResult fgsm(const nn::TrainedModel& model, const ImageSample& sample, const AttackSpec& spec) {
  spec.validate();
  check_input(sample);
  const auto& x = sample.pixels.data;
  const auto p = probe(model, x, sample.label);
  Pixels adv(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) adv[i] = clamp01(x[i] + spec.alpha * sign(p.g[i]));
  return finish(model, sample, std::move(adv), 1);
}

AttackResult iterative_fgsm(const nn::TrainedModel& model, const ImageSample& sample,
                            const AttackSpec& spec, bool clip_ball) {
  spec.validate();
  check_input(sample);
  const auto& x = sample.pixels.data;
  Pixels adv = x;
  int used = 0;
  for (; used < spec.iterations; ++used) {
    const auto p = probe(model, adv, sample.label);
    if (fooled(p.z, sample.label)) break;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = adv[i] + spec.alpha * sign(p.g[i]);
      if (clip_ball) v = std::clamp(v, static_cast<double>(x[i]) - spec.epsilon,
                                    static_cast<double>(x[i]) + spec.epsilon);
      adv[i] = clamp01(v);
    }
  }
  return finish(model, sample, std::move(adv), used);
}

AttackResult pgd(const nn::TrainedModel& model, const ImageSample& sample, const AttackSpec& spec) {
  spec.validate();
  check_input(sample);
  const auto& x = sample.pixels.data;
  const double eps = spec.epsilon;
  auto project = [&](std::size_t i, double v) {
    return clamp01(std::clamp(v, static_cast<double>(x[i]) - eps, static_cast<double>(x[i]) + eps));
  };
  Pixels adv = x;
  if (spec.random_start && eps > 0.0) {
    Rng rng(spec.seed);
    for (std::size_t i = 0; i < x.size(); ++i) adv[i] = project(i, x[i] + rng.uniform(-eps, eps));
  }
  double step = spec.step_size * eps;
  Pixels best = adv;
  std::vector<float> best_g;
  double best_loss = -std::numeric_limits<double>::infinity();
  int used = 0;
  for (; used < spec.iterations; ++used) {
    const auto p = probe(model, adv, sample.label);
    if (fooled(p.z, sample.label)) break;
    const double loss = nn::cross_entropy(p.z, sample.label);
    if (loss < best_loss) {
      // no improvement: step back and halve
      adv = best;
      step *= 0.5;
    } else {
      best = adv;
      best_g = p.g;
      best_loss = loss;
    }
    for (std::size_t i = 0; i < x.size(); ++i) adv[i] = project(i, best[i] + step * sign(best_g[i]));
  }
  return finish(model, sample, std::move(adv), used);
}

// ---------------------------------------------------------------- JSMA

AttackResult jsma(const nn::TrainedModel& model, const ImageSample& sample, const AttackSpec& spec) {
  spec.validate();
  check_input(sample);
  Pixels adv = sample.pixels.data;
  int used = 0;
  for (; used < spec.iterations; ++used) {
    // Binary task: dF_t/ds = p_t p_y d(Z_t - Z_y)/ds and the other-class term is
    // its negation, so the saliency is (dF_t/ds)^2 where dF_t/ds >= 0, else 0.
    const auto p = probe(model, adv, sample.label);
    if (fooled(p.z, sample.label)) break;
    std::size_t pick = adv.size();
    double best = 0.0;
    for (std::size_t i = 0; i < adv.size(); ++i) {
      if (adv[i] >= 1.0f || p.g[i] <= 0.0f) continue;
      const double u = static_cast<double>(p.g[i]) * p.g[i];
      if (u > best) {
        best = u;
        pick = i;
      }
    }
    if (pick == adv.size()) break;  // no pixel can still help
    adv[pick] = clamp01(adv[pick] + spec.theta);
  }
  return finish(model, sample, std::move(adv), used);
}

// ---------------------------------------------------------------- L-BFGS

namespace {

// J(a) = ||a - x||^2 + c * CE(a, target) and its gradient.
double lbfgs_objective(const nn::TrainedModel& model, std::span<const float> x,
                       std::span<const float> a, Label target, double c, std::vector<double>& grad,
                       bool& is_fooled) {
  const auto trace = nn::forward_trace(model, a);
  const auto z = trace.logits(model.spec);
  const auto p = nn::softmax(z);
  std::vector<float> dz(z.size());
  for (std::size_t k = 0; k < z.size(); ++k)
    dz[k] = static_cast<float>(c * (p[k] - (static_cast<int>(k) == label_index(target) ? 1.0 : 0.0)));
  std::vector<float> gin;
  nn::backward(model, trace, dz, nullptr, &gin);
  require_finite(gin, "L-BFGS gradient");
  grad.resize(a.size());
  double dist = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - x[i];
    dist += d * d;
    grad[i] = 2.0 * d + gin[i];
  }
  is_fooled = nn::predict_from_logits(z) != other_label(target);
  return dist + c * nn::cross_entropy(z, target);
}

struct LbfgsOutcome {
  Pixels adv;
  bool fooled = false;
  int iterations = 0;
};

// Box-projected limited-memory quasi-Newton descent started at x.
LbfgsOutcome lbfgs_minimize(const nn::TrainedModel& model, std::span<const float> x, Label target,
                            double c, int max_iter, double tol) {
  constexpr std::size_t kMemory = 8;
  const std::size_t n = x.size();
  Pixels a(x.begin(), x.end());
  std::vector<double> g;
  bool is_fooled = false;
  double f = lbfgs_objective(model, x, a, target, c, g, is_fooled);
  std::vector<std::vector<double>> S, Y;
  std::vector<double> rho;
  std::vector<double> d(n), gnew;
  Pixels trial(n);
  LbfgsOutcome out;
  int it = 0;
  for (; it < max_iter; ++it) {
    auto blocked = [&](std::size_t i) {
      return (a[i] <= 0.0f && g[i] > 0.0) || (a[i] >= 1.0f && g[i] < 0.0);
    };
    double pg = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!blocked(i)) pg = std::max(pg, std::abs(g[i]));
    if (pg < tol) break;

    // two-loop recursion on the free coordinates
    for (std::size_t i = 0; i < n; ++i) d[i] = blocked(i) ? 0.0 : -g[i];
    std::vector<double> alpha(S.size());
    for (std::size_t k = S.size(); k-- > 0;) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += S[k][i] * d[i];
      alpha[k] = rho[k] * s;
      for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[k] * Y[k][i];
    }
    if (!S.empty()) {
      double sy = 0.0, yy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sy += S.back()[i] * Y.back()[i];
        yy += Y.back()[i] * Y.back()[i];
      }
      const double gamma = sy / yy;
      for (auto& v : d) v *= gamma;
    }
    for (std::size_t k = 0; k < S.size(); ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += Y[k][i] * d[i];
      const double beta = rho[k] * s;
      for (std::size_t i = 0; i < n; ++i) d[i] += S[k][i] * (alpha[k] - beta);
    }
    double slope = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (blocked(i)) d[i] = 0.0;
      slope += d[i] * g[i];
    }
    if (slope >= 0.0) {
      S.clear();
      Y.clear();
      rho.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = blocked(i) ? 0.0 : -g[i];
    }

    // projected backtracking (Armijo)
    double step = 1.0;
    double fnew = 0.0;
    bool accepted = false;
    bool trial_fooled = false;
    for (int ls = 0; ls < 30; ++ls) {
      double decrease = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        trial[i] = clamp01(a[i] + step * d[i]);
        decrease += g[i] * (static_cast<double>(trial[i]) - a[i]);
      }
      fnew = lbfgs_objective(model, x, trial, target, c, gnew, trial_fooled);
      if (fnew <= f + 1e-4 * decrease) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    std::vector<double> s(n), y(n);
    double sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(trial[i]) - a[i];
      y[i] = gnew[i] - g[i];
      sy += s[i] * y[i];
    }
    if (sy > 1e-12) {
      if (S.size() == kMemory) {
        S.erase(S.begin());
        Y.erase(Y.begin());
        rho.erase(rho.begin());
      }
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
    }
    const bool stalled = std::abs(f - fnew) <= tol * std::max(1.0, std::abs(f));
    a = trial;
    g = gnew;
    f = fnew;
    is_fooled = trial_fooled;
    if (stalled) {
      ++it;
      break;
    }
  }
  out.adv = std::move(a);
  out.fooled = is_fooled;
  out.iterations = it;
  return out;
}

}  // namespace

AttackResult lbfgs_attack(const nn::TrainedModel& model, const ImageSample& sample,
                          const AttackSpec& spec) {
  spec.validate();
  check_input(sample);
  const auto& x = sample.pixels.data;
  const Label target = other_label(sample.label);
  if (nn::predict_label(model, x) != sample.label) return finish(model, sample, x, 0, 0.0);

  int probes = 0, total_iter = 0;
  std::optional<double> best_c;
  Pixels best_adv;
  auto run = [&](double c) {
    ++probes;
    auto out = lbfgs_minimize(model, x, target, c, spec.iterations, spec.epsilon);
    total_iter += out.iterations;
    if (out.fooled && (!best_c || c < *best_c)) {
      best_c = c;
      best_adv = std::move(out.adv);
    }
    return out.fooled;
  };

  // Bracket the smallest successful c by doubling or halving, then bisect.
  double c = spec.initial_const;
  double lo = 0.0, hi = 0.0;
  if (run(c)) {
    hi = c;
    while (probes < spec.search_steps) {
      c *= 0.5;
      if (!run(c)) {
        lo = c;
        break;
      }
      hi = c;
    }
  } else {
    lo = c;
    while (probes < spec.search_steps) {
      c *= 2.0;
      if (run(c)) {
        hi = c;
        break;
      }
      lo = c;
    }
  }
  while (best_c && lo > 0.0 && probes < spec.search_steps && (hi - lo) > 1e-3 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (run(mid)) hi = mid;
    else lo = mid;
  }
  if (!best_c) return finish(model, sample, x, total_iter);
  return finish(model, sample, std::move(best_adv), total_iter, best_c);
}

// ---------------------------------------------------------------- DeepFool

AttackResult deepfool(const nn::TrainedModel& model, const ImageSample& sample,
                      const AttackSpec& spec) {
  spec.validate();
  check_input(sample);
  const auto& x = sample.pixels.data;
  std::vector<double> r_total(x.size(), 0.0);
  Pixels adv = x;
  int used = 0;
  for (;;) {
    const auto p = probe(model, adv, sample.label);
    if (fooled(p.z, sample.label) || used == spec.iterations) break;
    double gg = 0.0;
    for (float v : p.g) gg += static_cast<double>(v) * v;
    if (gg == 0.0) break;  // flat boundary: reported as failure
    // f = Z_true - Z_target > 0; step to the linearized boundary along grad(Z_t - Z_y)
    const double f = -p.margin;
    const double k = std::abs(f) / gg;
    for (std::size_t i = 0; i < x.size(); ++i) r_total[i] += k * p.g[i];
    for (std::size_t i = 0; i < x.size(); ++i)
      adv[i] = clamp01(x[i] + (1.0 + spec.overshoot) * r_total[i]);
    ++used;
  }
  return finish(model, sample, std::move(adv), used);
}

// ---------------------------------------------------------------- Carlini & Wagner

namespace {

struct CwRun {
  bool found = false;
  Pixels adv;
  double objective_metric = std::numeric_limits<double>::infinity();  // L2^2 or Linf of best
  int iterations = 0;
};

double atanh_pixel(float v) {
  const double s = std::clamp(2.0 * v - 1.0, -1.0 + 1e-6, 1.0 - 1e-6);
  return std::atanh(s);
}

// Adam descent in tanh space on  dist(a) + c * max(Z_y - Z_t, -T)  where
// dist is ||a - x||^2 (tau <= 0) or sum max(|a_i - x_i| - tau, 0).
// Frozen pixels keep their original value.
CwRun cw_descend(const nn::TrainedModel& model, std::span<const float> x, Label y,
                 const AttackSpec& spec, double c, const std::vector<bool>* frozen, double tau) {
  const std::size_t n = x.size();
  std::vector<double> w(n), m(n, 0.0), v(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) w[i] = atanh_pixel(x[i]);
  Pixels a(n);
  CwRun run;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double T = spec.confidence;
  const int check_every = std::max(1, spec.iterations / 10);
  double last_check = std::numeric_limits<double>::infinity();
  for (int it = 0; it < spec.iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i)
      a[i] = (frozen && (*frozen)[i]) ? x[i] : static_cast<float>((std::tanh(w[i]) + 1.0) * 0.5);
    const auto p = probe(model, a, y);
    const double fval = std::max(-p.margin, -T);
    double dist = 0.0, linf = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(a[i]) - x[i];
      if (tau > 0.0) dist += std::max(std::abs(d) - tau, 0.0);
      else dist += d * d;
      linf = std::max(linf, std::abs(d));
    }
    const double obj = dist + c * fval;
    if (p.margin >= T && fooled(p.z, y)) {
      const double metric = tau > 0.0 ? linf : sq_dist(a, x);
      if (metric < run.objective_metric) {
        run.found = true;
        run.objective_metric = metric;
        run.adv = a;
      }
    }
    run.iterations = it + 1;
    if ((it + 1) % check_every == 0) {
      if (obj > 0.9999 * last_check) break;
      last_check = obj;
    }
    const bool active = -p.margin > -T;
    const double t = static_cast<double>(it + 1);
    for (std::size_t i = 0; i < n; ++i) {
      if (frozen && (*frozen)[i]) continue;
      const double d = static_cast<double>(a[i]) - x[i];
      double ga = tau > 0.0 ? (std::abs(d) > tau ? sign(d) : 0.0) : 2.0 * d;
      if (active) ga -= c * p.g[i];
      const double th = std::tanh(w[i]);
      const double gw = ga * (1.0 - th * th) * 0.5;
      m[i] = b1 * m[i] + (1.0 - b1) * gw;
      v[i] = b2 * v[i] + (1.0 - b2) * gw * gw;
      const double mh = m[i] / (1.0 - std::pow(b1, t));
      const double vh = v[i] / (1.0 - std::pow(b2, t));
      w[i] -= spec.learning_rate * mh / (std::sqrt(vh) + eps);
    }
  }
  return run;
}

// Binary search over c with `steps` probes; keeps the smallest-distance success.
CwRun cw_search(const nn::TrainedModel& model, std::span<const float> x, Label y,
                const AttackSpec& spec, int steps, const std::vector<bool>* frozen, double tau,
                double* c_out) {
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  double c = spec.initial_const;
  CwRun best;
  int total = 0;
  for (int s = 0; s < steps; ++s) {
    auto run = cw_descend(model, x, y, spec, c, frozen, tau);
    total += run.iterations;
    if (run.found) {
      if (run.objective_metric < best.objective_metric) {
        best = std::move(run);
        if (c_out) *c_out = c;
      }
      hi = std::min(hi, c);
      c = 0.5 * (lo + hi);
    } else {
      lo = std::max(lo, c);
      c = std::isinf(hi) ? c * 10.0 : 0.5 * (lo + hi);
    }
  }
  best.iterations = total;
  return best;
}

}  // namespace

AttackResult carlini_wagner(const nn::TrainedModel& model, const ImageSample& sample,
                            const AttackSpec& spec) {
  spec.validate();
  check_input(sample);
  const auto& x = sample.pixels.data;
  const Label y = sample.label;
  {
    const auto z = nn::logits(model, x);
    const double margin = static_cast<double>(z[label_index(other_label(y))]) - z[label_index(y)];
    if (margin >= spec.confidence && fooled(z, y)) return finish(model, sample, x, 0, 0.0);
  }

  double c = 0.0;
  if (spec.norm == CwNorm::L2) {
    auto run = cw_search(model, x, y, spec, spec.search_steps, nullptr, 0.0, &c);
    if (!run.found) return finish(model, sample, x, run.iterations);
    return finish(model, sample, std::move(run.adv), run.iterations, c);
  }

  const int inner_steps = std::min(spec.search_steps, 4);
  int total = 0;
  std::optional<Pixels> best;
  std::optional<double> best_c;

  if (spec.norm == CwNorm::L0) {
    // Repeatedly solve the L2 problem on the allowed pixels, then freeze the
    // half of the still-changed pixels contributing least (g_i * delta_i).
    std::vector<bool> frozen(x.size(), false);
    for (int round = 0; round < spec.search_steps; ++round) {
      auto run = cw_search(model, x, y, spec, inner_steps, &frozen, 0.0, &c);
      total += run.iterations;
      if (!run.found) break;
      best = run.adv;
      best_c = c;
      const auto p = probe(model, run.adv, y);
      std::vector<std::pair<double, std::size_t>> score;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (frozen[i]) continue;
        const double d = static_cast<double>(run.adv[i]) - x[i];
        if (std::abs(d) < 1e-6) frozen[i] = true;
        else score.emplace_back(std::abs(p.g[i] * d), i);
      }
      if (score.size() <= 1) break;
      std::sort(score.begin(), score.end());
      for (std::size_t k = 0; k < score.size() / 2; ++k) frozen[score[k].second] = true;
    }
  } else {
    // Linf: shrink the bound tau while a solution below it still exists.
    double tau = 1.0;
    for (int round = 0; round < spec.search_steps; ++round) {
      auto run = cw_search(model, x, y, spec, inner_steps, nullptr, tau, &c);
      total += run.iterations;
      if (!run.found) break;
      best = run.adv;
      best_c = c;
      tau = 0.9 * std::min(tau, run.objective_metric);
      if (tau < 1e-4) break;
    }
  }
  if (!best) return finish(model, sample, x, total);
  return finish(model, sample, std::move(*best), total, best_c);
}

AttackResult run_attack(const nn::TrainedModel& model, const ImageSample& sample,
                        const AttackSpec& spec) {
  switch (spec.kind) {
    case AttackKind::FGSM: return fgsm(model, sample, spec);
    case AttackKind::IFGSM: return iterative_fgsm(model, sample, spec, false);
    case AttackKind::BIM: return iterative_fgsm(model, sample, spec, true);
    case AttackKind::PGD: return pgd(model, sample, spec);
    case AttackKind::JSMA: return jsma(model, sample, spec);
    case AttackKind::LBFGS: return lbfgs_attack(model, sample, spec);
    case AttackKind::DEEPFOOL: return deepfool(model, sample, spec);
    case AttackKind::CW: return carlini_wagner(model, sample, spec);
  }
  fail(ErrorKind::InvalidArgument, "unknown attack kind");
}

// ---------------------------------------------------------------- batches

namespace {

void aggregate(BatchAttackReport& report, std::span<const ImageSample> originals) {
  double psnr = 0.0, l1 = 0.0, mx = 0.0;
  std::size_t changed = 0;
  for (std::size_t i = 0; i < report.results.size(); ++i) {
    const auto m = perturbation_metrics(originals[i].pixels, report.results[i].adversarial.pixels);
    if (std::isfinite(m.psnr)) {
      psnr += m.psnr;
      ++changed;
    }
    l1 += m.l1;
    mx += m.max_dist;
  }
  const double n = static_cast<double>(report.results.size());
  report.psnr = changed ? psnr / static_cast<double>(changed) : kPsnrIdentical;
  report.l1 = l1 / n;
  report.max_dist = mx / n;
}

}  // namespace

BatchAttackReport attack_batch(const nn::TrainedModel& model, std::span<const ImageSample> samples,
                               const AttackSpec& spec, unsigned jobs) {
  spec.validate();
  require(!samples.empty(), ErrorKind::InvalidArgument, "attack_batch: no samples");
  const auto start = std::chrono::steady_clock::now();
  BatchAttackReport report;
  report.spec = spec;
  report.results.resize(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    AttackSpec s = spec;
    s.seed = spec.seed + i;
    report.results[i] = run_attack(model, samples[i], s);
  });
  for (const auto& s : samples) {
    report.original_ids.push_back(s.source_id);
    report.true_labels.push_back(s.label);
  }
  aggregate(report, samples);
  report.asr = attack_success_rate(model, report.results);
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<ImageSample> select_attack_samples(const nn::TrainedModel& model,
                                               std::span<const ImageSample> pool,
                                               std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> eligible;
  const auto predicted = nn::predict_labels(model, pool);
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i].label == Label::Manipulated && predicted[i] == Label::Manipulated)
      eligible.push_back(i);
  if (eligible.size() < count)
    warn("only " + std::to_string(eligible.size()) +
         " correctly classified manipulated samples available for attacks; requested " +
         std::to_string(count));
  Rng rng(seed);
  rng.shuffle(eligible);
  eligible.resize(std::min(count, eligible.size()));
  std::sort(eligible.begin(), eligible.end());
  std::vector<ImageSample> out;
  for (auto i : eligible) out.push_back(pool[i]);
  return out;
}

std::vector<ImageSample> adversarial_samples(const BatchAttackReport& report) {
  std::vector<ImageSample> out;
  out.reserve(report.results.size());
  for (const auto& r : report.results) out.push_back(r.adversarial);
  return out;
}

// ---------------------------------------------------------------- archive

namespace {
constexpr std::string_view kAdvMagic = "FRSHIELD-ADV";
constexpr std::uint32_t kAdvVersion = 1;

void write_spec(binio::Writer& w, const AttackSpec& s) {
  w.str(s.name);
  w.u8(static_cast<std::uint8_t>(s.kind));
  w.f64(s.alpha);
  w.f64(s.epsilon);
  w.f64(s.theta);
  w.f64(s.confidence);
  w.i64(s.iterations);
  w.f64(s.step_size);
  w.u8(static_cast<std::uint8_t>(s.norm));
  w.u8(s.random_start ? 1 : 0);
  w.f64(s.overshoot);
  w.i64(s.search_steps);
  w.f64(s.learning_rate);
  w.f64(s.initial_const);
  w.u64(s.seed);
}

AttackSpec read_spec(binio::Reader& r) {
  AttackSpec s;
  s.name = r.str();
  const auto kind = r.u8();
  require(kind <= static_cast<std::uint8_t>(AttackKind::CW), ErrorKind::Format, "bad attack kind");
  s.kind = static_cast<AttackKind>(kind);
  s.alpha = r.f64();
  s.epsilon = r.f64();
  s.theta = r.f64();
  s.confidence = r.f64();
  s.iterations = static_cast<int>(r.i64());
  s.step_size = r.f64();
  const auto norm = r.u8();
  require(norm <= static_cast<std::uint8_t>(CwNorm::Linf), ErrorKind::Format, "bad C&W norm");
  s.norm = static_cast<CwNorm>(norm);
  s.random_start = r.u8() != 0;
  s.overshoot = r.f64();
  s.search_steps = static_cast<int>(r.i64());
  s.learning_rate = r.f64();
  s.initial_const = r.f64();
  s.seed = r.u64();
  return s;
}
}  // namespace

std::vector<std::uint8_t> serialize_report(const BatchAttackReport& report) {
  binio::Writer w(kAdvMagic, kAdvVersion);
  write_spec(w, report.spec);
  w.u64(report.results.size());
  for (std::size_t i = 0; i < report.results.size(); ++i) {
    const auto& r = report.results[i];
    w.u64(report.original_ids[i]);
    w.u8(static_cast<std::uint8_t>(report.true_labels[i]));
    w.u64s(std::vector<std::uint64_t>(r.adversarial.pixels.shape.begin(),
                                      r.adversarial.pixels.shape.end()));
    w.f32s(r.adversarial.pixels.data);
    w.u8(r.success ? 1 : 0);
    w.i64(r.iterations_used);
    w.f64(r.norms.l1_mean);
    w.f64(r.norms.l2);
    w.f64(r.norms.linf);
    w.u8(r.constant_c ? 1 : 0);
    w.f64(r.constant_c.value_or(0.0));
  }
  w.f64(report.psnr);
  w.f64(report.l1);
  w.f64(report.max_dist);
  w.f64(report.asr);
  w.f64(report.seconds);
  return w.bytes();
}

BatchAttackReport deserialize_report(std::vector<std::uint8_t> bytes) {
  binio::Reader r(std::move(bytes), kAdvMagic, kAdvVersion);
  BatchAttackReport report;
  report.spec = read_spec(r);
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    AttackResult res;
    report.original_ids.push_back(r.u64());
    const auto label = r.u8();
    require(label <= 1, ErrorKind::Format, "bad label in attack archive");
    report.true_labels.push_back(static_cast<Label>(label));
    const auto shape = r.u64s();
    res.adversarial.pixels = Tensor(Shape(shape.begin(), shape.end()), r.f32s());
    res.adversarial.label = report.true_labels.back();
    res.adversarial.source_id = report.original_ids.back();
    res.success = r.u8() != 0;
    res.iterations_used = static_cast<int>(r.i64());
    res.norms.l1_mean = r.f64();
    res.norms.l2 = r.f64();
    res.norms.linf = r.f64();
    const bool has_c = r.u8() != 0;
    const double c = r.f64();
    if (has_c) res.constant_c = c;
    report.results.push_back(std::move(res));
  }
  report.psnr = r.f64();
  report.l1 = r.f64();
  report.max_dist = r.f64();
  report.asr = r.f64();
  report.seconds = r.f64();
  r.expect_end();
  return report;
}

void save_report(const BatchAttackReport& report, const std::filesystem::path& path) {
  binio::write_file(path, serialize_report(report));
}

BatchAttackReport load_report(const std::filesystem::path& path) {
  return deserialize_report(binio::read_file(path));
}

}  // namespace frshield::attacks
