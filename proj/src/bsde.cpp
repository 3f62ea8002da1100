#include "mpp/bsde.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mpp/rng.hpp"

namespace mpp {

namespace {

double dot_phi(const std::vector<double>& zeta, const std::vector<double>& phi) {
  double s = 0.0;
  for (std::size_t i = 0; i < zeta.size(); ++i) s += zeta[i] * phi[i];
  return s;
}

}  // namespace

Generator zero_generator() {
  Generator g;
  g.fn = [](const GenContext&, double, int, double, const std::vector<double>&,
            const std::vector<double>&) { return 0.0; };
  g.lip_y = 0.0;
  g.lip_z = 0.0;
  g.name = "zero";
  return g;
}

Generator cond_exp_generator() {
  Generator g;
  g.fn = [](const GenContext&, double, int, double, const std::vector<double>& zeta,
            const std::vector<double>& phi) { return dot_phi(zeta, phi); };
  g.lip_y = 0.0;
  g.lip_z = 1.0;
  g.name = "cond_exp";
  return g;
}

Generator linear_generator(double a_y, double a_z, double c) {
  Generator g;
  g.fn = [a_y, a_z, c](const GenContext&, double, int, double y, const std::vector<double>& zeta,
                       const std::vector<double>& phi) {
    return a_y * y + a_z * dot_phi(zeta, phi) + c;
  };
  g.lip_y = std::abs(a_y);
  g.lip_z = std::abs(a_z);
  g.name = "linear";
  return g;
}

Terminal constant_terminal(double c) {
  Terminal t;
  t.fn = [c](const GenContext&) { return c; };
  t.name = "constant";
  return t;
}

Terminal count_terminal() {
  Terminal t;
  t.fn = [](const GenContext& ctx) { return static_cast<double>(ctx.level); };
  t.name = "count";
  return t;
}

Terminal count_below_terminal(int cap) {
  Terminal t;
  t.fn = [cap](const GenContext& ctx) {
    return ctx.level < cap ? static_cast<double>(ctx.level) : 0.0;
  };
  t.name = "count_below";
  return t;
}

Terminal last_mark_indicator_terminal(int mark) {
  Terminal t;
  t.fn = [mark](const GenContext& ctx) { return ctx.last_mark == mark ? 1.0 : 0.0; };
  t.name = "last_mark_indicator";
  return t;
}

Terminal depth_table_terminal(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("depth table must be non-empty");
  Terminal t;
  t.fn = [values = std::move(values)](const GenContext& ctx) {
    const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(ctx.level),
                                                values.size() - 1);
    return values[i];
  };
  t.name = "depth_table";
  return t;
}

double c_epsilon(double p, double eps) {
  if (!(p > 1.0)) throw std::invalid_argument("c_epsilon requires p > 1");
  if (!(eps > 0.0)) throw std::invalid_argument("c_epsilon requires eps > 0");
  const double inner = 1.0 - std::pow(1.0 / (1.0 + eps), 1.0 / (p - 1.0));
  return std::pow(inner, 1.0 - p);
}

double beta_threshold(double p, double eps, double L, double Lprime) {
  if (!(p > 1.0)) throw std::invalid_argument("beta_threshold requires p > 1");
  if (!(eps > 0.0)) throw std::invalid_argument("beta_threshold requires eps > 0");
  if (L < 0.0 || Lprime < 0.0) {
    throw std::invalid_argument("beta_threshold requires L, L' >= 0");
  }
  return 1.0 + c_epsilon(p, eps) / (1.0 + eps) + p * Lprime +
         (p - 1.0) * std::pow(std::pow(L + 1.0, p) * (1.0 + eps), 1.0 / (p - 1.0));
}

BsdeProblem::BsdeProblem(std::shared_ptr<const HazardModel> model, Generator gen, Terminal term,
                         double p, double beta, double eps, bool allow_subthreshold_beta)
    : model_(std::move(model)),
      gen_(std::move(gen)),
      term_(std::move(term)),
      p_(p),
      beta_(beta),
      eps_(eps) {
  if (!model_) throw std::invalid_argument("problem needs a model");
  if (!(p_ > 1.0)) throw std::invalid_argument("problem requires p > 1");
  if (!(eps_ > 0.0)) throw std::invalid_argument("problem requires eps > 0");
  if (!allow_subthreshold_beta && !(beta_ > threshold())) {
    std::ostringstream os;
    os << "beta=" << beta_ << " is not above the existence threshold " << threshold()
       << " (p=" << p_ << ", eps=" << eps_ << ", L=" << gen_.lip_z << ", L'=" << gen_.lip_y
       << ")";
    throw std::invalid_argument(os.str());
  }
}

namespace {

History sample_history(const HazardModel& model, SeedStream* rng) {
  return simulate_trajectory(model, rng->next_u64()).history;
}

}  // namespace

LipschitzAuditReport lipschitz_audit(const BsdeProblem& problem, int n_samples,
                                     std::uint64_t seed) {
  const HazardModel& model = problem.model();
  const int K = model.n_marks();
  SeedStream rng(mix_seed(seed, 0x6c697073ULL));
  LipschitzAuditReport rep;
  for (int i = 0; i < n_samples; ++i) {
    const History h = sample_history(model, &rng);
    const double t = rng.uniform(h.last_time(), model.horizon());
    if (!(t > h.last_time())) continue;
    GenContext ctx{h.jump_count(), h.last_time(), h.last_mark(), &h};
    const auto phi = model.kernel_state(ctx.level, ctx.last_mark, t);
    const int x = rng.pick(phi);
    const double y = rng.uniform(-3.0, 3.0);
    const double yp = rng.uniform(-3.0, 3.0);
    std::vector<double> zeta(static_cast<std::size_t>(K)), zetap(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
      zeta[static_cast<std::size_t>(k)] = rng.uniform(-3.0, 3.0);
      zetap[static_cast<std::size_t>(k)] = rng.uniform(-3.0, 3.0);
    }
    const auto f = [&](double yy, const std::vector<double>& zz, int xx) {
      return problem.generator().fn(ctx, t, xx, yy, zz, phi);
    };
    // y-inequality at fixed zeta
    if (std::abs(yp - y) > 1e-12) {
      const double ratio = std::abs(f(yp, zeta, x) - f(y, zeta, x)) / std::abs(yp - y);
      if (ratio > rep.max_ratio_y) {
        rep.max_ratio_y = ratio;
        std::ostringstream os;
        os << "t=" << t << " x=" << model.mark_space().name(x) << " y=" << y << " y'=" << yp
           << " ratio=" << ratio;
        rep.witness_y = os.str();
      }
    }
    // zeta-inequality integrated against phi vs the L^p(phi) distance
    double lhs = 0.0, dist_p = 0.0;
    for (int k = 0; k < K; ++k) {
      lhs += phi[static_cast<std::size_t>(k)] * std::abs(f(y, zeta, k) - f(y, zetap, k));
      dist_p += phi[static_cast<std::size_t>(k)] *
                std::pow(std::abs(zeta[static_cast<std::size_t>(k)] -
                                  zetap[static_cast<std::size_t>(k)]),
                         problem.p());
    }
    const double dist = std::pow(dist_p, 1.0 / problem.p());
    if (dist > 1e-12) {
      const double ratio = lhs / dist;
      if (ratio > rep.max_ratio_z) {
        rep.max_ratio_z = ratio;
        std::ostringstream os;
        os << "t=" << t << " |zeta-zeta'|_p=" << dist << " ratio=" << ratio;
        rep.witness_z = os.str();
      }
    }
  }
  rep.pass = rep.max_ratio_y <= problem.generator().lip_y + 1e-9 &&
             rep.max_ratio_z <= problem.generator().lip_z + 1e-9;
  return rep;
}

ContractionParams contraction_params(const BsdeProblem& problem) {
  const double p = problem.p();
  const double eps = problem.eps();
  const double beta = problem.beta();
  const double L = problem.generator().lip_z;
  const double Lp = problem.generator().lip_y;
  if (!(beta > problem.threshold())) {
    throw std::invalid_argument("contraction requires beta above the threshold");
  }
  const double base = 1.0 + c_epsilon(p, eps) / (1.0 + eps);
  // beta > base + (p-1)((L+1)^p (1+eps)/alpha)^{1/(p-1)} + p L' / alpha^{1/p}
  const auto required_beta = [&](double alpha) {
    return base + (p - 1.0) * std::pow(std::pow(L + 1.0, p) * (1.0 + eps) / alpha, 1.0 / (p - 1.0)) +
           p * Lp / std::pow(alpha, 1.0 / p);
  };
  // smallest feasible alpha by bisection (required_beta is decreasing)
  double lo = 1e-9, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (required_beta(mid) > beta) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double alpha_min = hi;
  ContractionParams out;
  out.alpha = alpha_min + 0.25 * (1.0 - alpha_min);
  if (Lp > 0.0) {
    out.y_weight = Lp / std::pow(out.alpha, 1.0 / p);
    out.z_weight = 1.0 / (1.0 + eps);
  } else {
    out.y_weight = beta - base -
                   (p - 1.0) * std::pow(std::pow(L + 1.0, p) * (1.0 + eps) / out.alpha,
                                        1.0 / (p - 1.0));
    out.z_weight = 1.0 / (1.0 + eps);
  }
  return out;
}

Generator adapt_form2(const HazardModel& model, FBarFn fbar, EtaFn eta, double L, double Lprime,
                      int n_samples, std::uint64_t seed) {
  const int K = model.n_marks();
  SeedStream rng(mix_seed(seed, 0x65746161ULL));
  for (int i = 0; i < n_samples; ++i) {
    const History h = sample_history(model, &rng);
    const double t = rng.uniform(h.last_time(), model.horizon());
    if (!(t > h.last_time())) continue;
    GenContext ctx{h.jump_count(), h.last_time(), h.last_mark(), &h};
    const auto phi = model.kernel_state(ctx.level, ctx.last_mark, t);
    std::vector<double> zeta(static_cast<std::size_t>(K)), zetap(static_cast<std::size_t>(K));
    double l1 = 0.0;
    for (int k = 0; k < K; ++k) {
      zeta[static_cast<std::size_t>(k)] = rng.uniform(-3.0, 3.0);
      zetap[static_cast<std::size_t>(k)] = rng.uniform(-3.0, 3.0);
      l1 += phi[static_cast<std::size_t>(k)] *
            std::abs(zeta[static_cast<std::size_t>(k)] - zetap[static_cast<std::size_t>(k)]);
    }
    const double gap = std::abs(eta(ctx, t, zeta, phi) - eta(ctx, t, zetap, phi));
    if (gap > l1 + 1e-9) {
      std::ostringstream os;
      os << "eta audit failed at t=" << t << ": |eta z - eta z'|=" << gap
         << " exceeds int |z - z'| dphi=" << l1;
      throw EtaAuditError(os.str());
    }
  }
  Generator g;
  g.fn = [fbar = std::move(fbar), eta = std::move(eta)](
             const GenContext& ctx, double t, int /*mark*/, double y,
             const std::vector<double>& zeta, const std::vector<double>& phi) {
    return fbar(ctx, t, y, eta(ctx, t, zeta, phi));
  };
  g.lip_y = Lprime;
  g.lip_z = L;
  g.name = "form2";
  return g;
}

}  // namespace mpp
