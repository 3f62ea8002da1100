#include "mpp/control.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mpp/rng.hpp"

namespace mpp {

void ControlProblem::validate() const {
  if (!model) throw std::invalid_argument("control problem needs a model");
  if (actions.empty()) throw std::invalid_argument("action set must be non-empty");
  if (!(C_r > 1.0)) throw std::invalid_argument("C_r must exceed 1");
  if (!(C_l > 0.0)) throw std::invalid_argument("C_l must be positive");
  if (!(p > 1.0)) throw std::invalid_argument("p must exceed 1");
}

HamiltonianResult hamiltonian(const std::vector<double>& z_row, const std::vector<double>& l_row,
                              const std::vector<std::vector<double>>& r_rows,
                              const std::vector<double>& phi) {
  const int n_actions = static_cast<int>(l_row.size());
  if (static_cast<int>(r_rows.size()) != n_actions || n_actions == 0) {
    throw std::invalid_argument("hamiltonian needs one l and one r row per action");
  }
  HamiltonianResult res;
  double best = kInf;
  double second = kInf;
  for (int u = 0; u < n_actions; ++u) {
    double v = l_row[static_cast<std::size_t>(u)];
    for (std::size_t x = 0; x < phi.size(); ++x) {
      v += z_row[x] * r_rows[static_cast<std::size_t>(u)][x] * phi[x];
    }
    if (v < best) {
      second = best;
      best = v;
      res.argmin = u;
    } else if (v < second) {
      second = v;
    }
  }
  res.value = best;
  res.margin = n_actions > 1 ? second - best : 0.0;
  res.ties = 0;
  for (int u = 0; u < n_actions; ++u) {
    double v = l_row[static_cast<std::size_t>(u)];
    for (std::size_t x = 0; x < phi.size(); ++x) {
      v += z_row[x] * r_rows[static_cast<std::size_t>(u)][x] * phi[x];
    }
    if (std::abs(v - best) <= 1e-12) ++res.ties;
  }
  return res;
}

namespace {

// Hamiltonian value at (state, t, zeta) for a control problem.
HamiltonianResult eval_hamiltonian(const ControlProblem& cp, const GenContext& ctx, double t,
                                   const std::vector<double>& zeta,
                                   const std::vector<double>& phi) {
  const int nu = cp.n_actions();
  const int K = static_cast<int>(phi.size());
  std::vector<double> l_row(static_cast<std::size_t>(nu));
  std::vector<std::vector<double>> r_rows(static_cast<std::size_t>(nu),
                                          std::vector<double>(static_cast<std::size_t>(K)));
  for (int u = 0; u < nu; ++u) {
    l_row[static_cast<std::size_t>(u)] = cp.l(ctx, t, u);
    for (int x = 0; x < K; ++x) {
      r_rows[static_cast<std::size_t>(u)][static_cast<std::size_t>(x)] = cp.r(ctx, t, x, u);
    }
  }
  return hamiltonian(zeta, l_row, r_rows, phi);
}

}  // namespace

BsdeProblem build_control_bsde(const ControlProblem& cp, double beta) {
  cp.validate();
  Generator gen;
  gen.fn = [cp](const GenContext& ctx, double t, int /*mark*/, double /*y*/,
                const std::vector<double>& zeta, const std::vector<double>& phi) {
    return eval_hamiltonian(cp, ctx, t, zeta, phi).value;
  };
  gen.lip_y = 0.0;
  gen.lip_z = cp.C_r;
  gen.name = "hamiltonian";
  Terminal term;
  term.fn = cp.g;
  term.name = "terminal_cost";
  return BsdeProblem(cp.model, std::move(gen), std::move(term), cp.p, beta, cp.eps);
}

FeasibilityReport feasibility_beta(const ControlProblem& cp, int n_samples, std::uint64_t seed) {
  cp.validate();
  FeasibilityReport rep;
  const double p = cp.p;
  rep.gamma = p / (p - 1.0);
  rep.q = rep.gamma;  // q is identified with gamma = p/(p-1); the identity
                      // (2p-1)/(p-1) = gamma + 1 and 1/(q-1) = p-1 makes the
                      // two exponent formulas agree
  rep.at_exponent = (2.0 * p - 1.0) / (p - 1.0) +
                    (p - 1.0) * std::pow(cp.C_r, std::pow(p / (p - 1.0), 2.0));
  rep.lemma_beta = rep.gamma + 1.0 + std::pow(cp.C_r, rep.q * rep.q) / (rep.q - 1.0);
  rep.threshold = beta_threshold(p, cp.eps, cp.C_r, 0.0);
  rep.beta = rep.threshold * 1.05;

  // Monte Carlo integrability probes at the proposed beta; two half-sample
  // means gauge stability (heavy tails show up as instability).
  double sum1 = 0.0, sum1b = 0.0, sum1sq = 0.0;
  double sum2 = 0.0, sum2b = 0.0, sum2sq = 0.0;
  const int half = n_samples / 2;
  for (int i = 0; i < n_samples; ++i) {
    const Trajectory traj = simulate_trajectory(*cp.model, mix_seed(seed, static_cast<std::uint64_t>(i)));
    const double a_T = cp.model->cumulative_hazard(traj.history, cp.model->horizon());
    const double e1 = std::exp(rep.beta * a_T);
    GenContext ctx{traj.jump_count(), traj.history.last_time(), traj.history.last_mark(),
                   &traj.history};
    const double e2 = std::pow(std::abs(cp.g(ctx)), p) * e1;
    sum1 += e1;
    sum2 += e2;
    sum1sq += e1 * e1;
    sum2sq += e2 * e2;
    if (i < half) {
      sum1b += e1;
      sum2b += e2;
    }
  }
  rep.e_beta_at = sum1 / n_samples;
  rep.g_moment = sum2 / n_samples;
  const double var1 = std::max(0.0, (sum1sq - sum1 * sum1 / n_samples) / (n_samples - 1));
  const double var2 = std::max(0.0, (sum2sq - sum2 * sum2 / n_samples) / (n_samples - 1));
  rep.e_beta_at_se = std::sqrt(var1 / n_samples);
  rep.g_moment_se = std::sqrt(var2 / n_samples);
  const double half1 = sum1b / half;
  const double half2 = sum2b / half;
  const bool stable1 = std::abs(half1 - rep.e_beta_at) <= 5.0 * rep.e_beta_at_se + 1e-12;
  const bool stable2 = std::abs(half2 - rep.g_moment) <= 5.0 * rep.g_moment_se + 1e-12;
  rep.stable = stable1 && stable2;
  rep.pass = std::isfinite(rep.e_beta_at) && std::isfinite(rep.g_moment) && rep.stable;
  if (!rep.pass) {
    rep.message = !rep.stable ? "integrability estimate unverifiable: unstable Monte Carlo mean"
                              : "integrability estimate diverged";
  }
  return rep;
}

int HashedPolicy::action(const GenContext& state, double cell_left) const {
  const int bucket = std::min(
      n_buckets_ - 1, static_cast<int>(std::floor(cell_left / horizon_ * n_buckets_)));
  const std::uint64_t key = mix_seed(
      seed_, (static_cast<std::uint64_t>(state.level) << 40) ^
                 (static_cast<std::uint64_t>(static_cast<std::int64_t>(state.last_mark) + 2)
                  << 20) ^
                 static_cast<std::uint64_t>(bucket));
  return static_cast<int>(key % static_cast<std::uint64_t>(n_actions_));
}

ControlField ControlField::extract(const ControlProblem& cp, const HistoryTree& tree,
                                   const SolutionField& field) {
  const int m = tree.truncation_level();
  const int N = tree.n_cells();
  const int K = tree.model().n_marks();
  ControlField out;
  out.offsets_.resize(static_cast<std::size_t>(m));
  out.actions_.resize(static_cast<std::size_t>(m));
  out.margins_.resize(static_cast<std::size_t>(m));
  out.ties_.resize(static_cast<std::size_t>(m));
  std::vector<double> zeta(static_cast<std::size_t>(K));
  for (int n = 0; n < m; ++n) {
    const auto& lvl = tree.level(n);
    out.offsets_[static_cast<std::size_t>(n)].resize(lvl.size());
    out.actions_[static_cast<std::size_t>(n)].resize(lvl.size());
    out.margins_[static_cast<std::size_t>(n)].resize(lvl.size());
    out.ties_[static_cast<std::size_t>(n)].resize(lvl.size());
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      const TreeNode& node = lvl[i];
      const int rows = N - node.time_idx + 1;
      out.offsets_[static_cast<std::size_t>(n)][i] = node.time_idx;
      auto& acts = out.actions_[static_cast<std::size_t>(n)][i];
      auto& margins = out.margins_[static_cast<std::size_t>(n)][i];
      auto& ties = out.ties_[static_cast<std::size_t>(n)][i];
      acts.assign(static_cast<std::size_t>(rows), 0);
      margins.assign(static_cast<std::size_t>(rows), 0.0);
      ties.assign(static_cast<std::size_t>(rows), 1);
      const GenContext ctx = tree.node_context(n, static_cast<int>(i));
      for (int j = node.time_idx; j <= N; ++j) {
        const double t = tree.grid_point(j);
        // the cell of t for kernel evaluation; clamp at the horizon
        const double mid = j < N ? 0.5 * (tree.grid_point(j) + tree.grid_point(j + 1))
                                 : tree.grid_point(N);
        const auto phi = tree.model().kernel_state(n, node.mark, mid);
        for (int x = 0; x < K; ++x) {
          zeta[static_cast<std::size_t>(x)] =
              j > node.time_idx ? field.z(n, static_cast<int>(i), j, x)
                                : field.y(n + 1, tree.child_index(n, static_cast<int>(i),
                                                                   std::min(j + 1, N), x),
                                          std::min(j + 1, N)) -
                                      field.y(n, static_cast<int>(i), j);
        }
        const HamiltonianResult h = eval_hamiltonian(cp, ctx, t, zeta, phi);
        acts[static_cast<std::size_t>(j - node.time_idx)] = h.argmin;
        margins[static_cast<std::size_t>(j - node.time_idx)] = h.margin;
        ties[static_cast<std::size_t>(j - node.time_idx)] = h.ties;
      }
    }
  }
  return out;
}

int ControlField::action(int level, int node, int j) const {
  return actions_[static_cast<std::size_t>(level)][static_cast<std::size_t>(node)]
                 [static_cast<std::size_t>(j - offsets_[static_cast<std::size_t>(level)]
                                                       [static_cast<std::size_t>(node)])];
}

double ControlField::margin(int level, int node, int j) const {
  return margins_[static_cast<std::size_t>(level)][static_cast<std::size_t>(node)]
                 [static_cast<std::size_t>(j - offsets_[static_cast<std::size_t>(level)]
                                                       [static_cast<std::size_t>(node)])];
}

int ControlField::ties(int level, int node, int j) const {
  return ties_[static_cast<std::size_t>(level)][static_cast<std::size_t>(node)]
              [static_cast<std::size_t>(j - offsets_[static_cast<std::size_t>(level)]
                                                    [static_cast<std::size_t>(node)])];
}

int FieldPolicy::action(const GenContext& state, double cell_left) const {
  const int m = tree_->truncation_level();
  if (state.level >= m) return 0;  // past the truncation the choice is idle
  const int N = tree_->n_cells();
  const double dt = tree_->model().horizon() / N;
  const int tj = std::min(N, static_cast<int>(std::lround(cell_left / dt)));
  const int node_tj = static_cast<int>(std::lround(state.last_time / dt));
  int node_idx;
  if (tree_->collapsed()) {
    node_idx = tree_->node_index(state.level, node_tj, state.last_mark);
  } else {
    // walk the path
    node_idx = 0;
    if (state.history == nullptr) {
      throw std::invalid_argument("field policy on a full tree needs the realized history");
    }
    int lvl = 0;
    for (const auto& e : state.history->entries()) {
      if (e.time <= 0.0) continue;
      const int j = static_cast<int>(std::lround(e.time / dt));
      node_idx = tree_->child_index(lvl, node_idx, j, e.mark);
      ++lvl;
    }
  }
  return field_->action(state.level, node_idx, std::max(tj, node_tj));
}

namespace {

struct PathCostTerms {
  double log_L = 0.0;   // log Girsanov weight at the horizon
  double run_cost = 0.0;  // int l dA along the path
  double terminal = 0.0;
  std::vector<std::pair<double, double>> l_path;  // (t, L_t) at grid points
};

// Shared walk for the Girsanov weight and the running cost; everything is
// evaluated with exact per-cell hazard increments and cell-constant actions.
PathCostTerms walk_path(const ControlProblem& cp, const Trajectory& snapped,
                        const Policy& policy, int grid_size, bool want_path) {
  const HazardModel& model = *cp.model;
  const int K = model.n_marks();
  const double T = model.horizon();
  const int N = grid_size - 1;
  const double dt = T / N;
  PathCostTerms out;
  if (want_path) {
    out.l_path.reserve(static_cast<std::size_t>(N + 1));
    out.l_path.emplace_back(0.0, 1.0);
  }
  const auto& entries = snapped.history.entries();
  const int n_jumps = snapped.jump_count();
  double log_L = 0.0;
  for (int seg = 0; seg <= n_jumps; ++seg) {
    const int start_idx =
        seg == 0 ? 0
                 : static_cast<int>(std::lround(entries[static_cast<std::size_t>(seg)].time / dt));
    const int end_idx =
        seg < n_jumps
            ? static_cast<int>(std::lround(entries[static_cast<std::size_t>(seg + 1)].time / dt))
            : N;
    History pre = snapped.history.prefix(seg);
    const NextJumpLaw law = model.law(pre);
    GenContext ctx{seg, pre.last_time(), pre.last_mark(), &pre};
    for (int j = start_idx; j < end_idx; ++j) {
      const double tl = j * dt;
      const double tr = (j + 1) * dt;
      const double da = law.log_survival(tl) - law.log_survival(tr);
      const int u = policy.action(ctx, tl);
      if (da > 0.0) {
        const double mid = 0.5 * (tl + tr);
        const auto phi = model.kernel_state(seg, pre.last_mark(), mid);
        double one_minus_r = 0.0;
        for (int x = 0; x < K; ++x) {
          one_minus_r += phi[static_cast<std::size_t>(x)] * (1.0 - cp.r(ctx, mid, x, u));
        }
        log_L += one_minus_r * da;
        out.run_cost += std::exp(log_L_placeholder(), 0.0) * 0.0;  // patched below
        out.run_cost += cp.l(ctx, mid, u) * da;
      }
      if (want_path) out.l_path.emplace_back(tr, std::exp(log_L));
    }
    if (seg < n_jumps) {
      const double jump_t = entries[static_cast<std::size_t>(seg + 1)].time;
      const int jump_mark = entries[static_cast<std::size_t>(seg + 1)].mark;
      const int u = policy.action(ctx, jump_t - dt);
      const double r_at_jump = cp.r(ctx, jump_t, jump_mark, u);
      log_L += std::log(std::max(r_at_jump, 1e-300));
      if (want_path && !out.l_path.empty()) {
        out.l_path.back().second = std::exp(log_L);
      }
    }
  }
  out.log_L = log_L;
  GenContext end_ctx{n_jumps, snapped.history.last_time(), snapped.history.last_mark(),
                     &snapped.history};
  out.terminal = cp.g(end_ctx);
  return out;
}

}  // namespace

std::vector<std::pair<double, double>> girsanov_weight(const ControlProblem& cp,
                                                       const Trajectory& snapped,
                                                       const Policy& policy, int grid_size) {
  return walk_path(cp, snapped, policy, grid_size, true).l_path;
}

CostEstimate cost(const ControlProblem& cp, const Policy& policy, int n_samples,
                  std::uint64_t seed, int grid_size) {
  cp.validate();
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const Trajectory raw = simulate_trajectory(*cp.model, mix_seed(seed, static_cast<std::uint64_t>(i)));
    const Trajectory snapped = snap_to_grid(raw, grid_size);
    const PathCostTerms terms = walk_path(cp, snapped, policy, grid_size, false);
    const double v = std::exp(terms.log_L) * (terms.run_cost + terms.terminal);
    sum += v;
    sum2 += v * v;
  }
  CostEstimate est;
  est.n_samples = n_samples;
  est.value = sum / n_samples;
  const double var = std::max(0.0, (sum2 - sum * sum / n_samples) / (n_samples - 1));
  est.standard_error = std::sqrt(var / n_samples);
  return est;
}

ControlSolution solve_control(const ControlProblem& cp, int m, int grid_size) {
  cp.validate();
  const FeasibilityReport feas = feasibility_beta(cp);
  if (!feas.pass) {
    throw std::runtime_error("control problem failed the feasibility check: " + feas.message);
  }
  BsdeProblem problem = build_control_bsde(cp, feas.beta);
  ControlSolution sol{0.0, build_tree(cp.model, m, grid_size), SolutionField(), ControlField(),
                      feas.beta};
  sol.field = solve_truncated(problem, sol.tree);
  sol.y0 = sol.field.y0();
  sol.ustar = ControlField::extract(cp, sol.tree, sol.field);
  return sol;
}

OptimalityReport verify_optimality(const ControlProblem& cp, const ControlSolution& sol,
                                   int n_random_controls, int n_samples, std::uint64_t seed,
                                   double discretization_allowance) {
  OptimalityReport rep;
  rep.y0 = sol.y0;
  const int grid_size = sol.tree.grid_size();
  {
    FieldPolicy pol(sol.tree, sol.ustar);
    const CostEstimate est = cost(cp, pol, n_samples, mix_seed(seed, 1), grid_size);
    rep.j_star = est.value;
    rep.j_star_se = est.standard_error;
    rep.equality_ok = std::abs(rep.y0 - rep.j_star) <=
                      3.0 * rep.j_star_se + discretization_allowance;
    OptimalityRow row{"u*", est.value, est.standard_error,
                      rep.y0 <= est.value + 3.0 * est.standard_error + 1e-12};
    rep.rows.push_back(row);
  }
  for (int u = 0; u < cp.n_actions(); ++u) {
    ConstantPolicy pol(u);
    const CostEstimate est = cost(cp, pol, n_samples, mix_seed(seed, 100 + static_cast<std::uint64_t>(u)),
                                  grid_size);
    OptimalityRow row{"constant:" + cp.actions[static_cast<std::size_t>(u)], est.value,
                      est.standard_error,
                      rep.y0 <= est.value + 3.0 * est.standard_error + 1e-12};
    rep.rows.push_back(row);
  }
  for (int c = 0; c < n_random_controls; ++c) {
    HashedPolicy pol(mix_seed(seed, 1000 + static_cast<std::uint64_t>(c)), cp.n_actions(), 10,
                     cp.model->horizon());
    const CostEstimate est = cost(cp, pol, n_samples,
                                  mix_seed(seed, 2000 + static_cast<std::uint64_t>(c)), grid_size);
    OptimalityRow row{"random:" + std::to_string(c), est.value, est.standard_error,
                      rep.y0 <= est.value + 3.0 * est.standard_error + 1e-12};
    rep.rows.push_back(row);
  }
  rep.all_hold = true;
  for (const auto& row : rep.rows) rep.all_hold = rep.all_hold && row.holds;
  return rep;
}

}  // namespace mpp
