#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mpp/rng.hpp"
#include "mpp/tree.hpp"

namespace mpp {

namespace {

constexpr double kStepTol = 1e-10;

double pow_abs(double x, double p) { return std::pow(std::abs(x), p); }

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Exact integral of e^{c a} da over one grid cell of a node's conditional
// law, where a(t) = -log(1 - F(t)); sl and sr are the survival values at the
// cell endpoints.
double exp_hazard_cell(double sl, double sr, double c) {
  if (c == 0.0) return std::log(sl / sr);
  return (std::pow(sr, -c) - std::pow(sl, -c)) / c;
}

struct CellWeights {
  double wl;
  double wr;
};

// Endpoint weights for cell quadrature; the first cell of a node has no
// left-endpoint field values (no child exists at the node's own time), so it
// degenerates to the right-endpoint rectangle rule.
CellWeights cell_weights(int j, int node_time_idx) {
  if (j == node_time_idx) return {0.0, 1.0};
  return {0.5, 0.5};
}

}  // namespace

SolutionField SolutionField::zeros(const HistoryTree& tree) {
  SolutionField f;
  f.n_marks_ = tree.model().n_marks();
  f.grid_size_ = tree.grid_size();
  const int m = tree.truncation_level();
  f.off_.resize(static_cast<std::size_t>(m + 1));
  f.y_.resize(static_cast<std::size_t>(m + 1));
  f.z_.resize(static_cast<std::size_t>(m + 1));
  f.u_.resize(static_cast<std::size_t>(m + 1));
  for (int n = 0; n <= m; ++n) {
    const auto& lvl = tree.level(n);
    f.off_[static_cast<std::size_t>(n)].resize(lvl.size());
    f.y_[static_cast<std::size_t>(n)].resize(lvl.size());
    f.z_[static_cast<std::size_t>(n)].resize(lvl.size());
    f.u_[static_cast<std::size_t>(n)].assign(lvl.size(), 0.0);
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      const int rows = f.grid_size_ - lvl[i].time_idx;
      f.off_[static_cast<std::size_t>(n)][i] = lvl[i].time_idx;
      f.y_[static_cast<std::size_t>(n)][i].assign(static_cast<std::size_t>(rows), 0.0);
      if (n < m) {
        f.z_[static_cast<std::size_t>(n)][i].assign(
            static_cast<std::size_t>(rows) * static_cast<std::size_t>(f.n_marks_), 0.0);
      }
    }
  }
  return f;
}

double SolutionField::y(int level, int node, int j) const {
  const auto& row = y_[static_cast<std::size_t>(level)][static_cast<std::size_t>(node)];
  return row[static_cast<std::size_t>(j - offset(level, node))];
}

double SolutionField::z(int level, int node, int j, int mark) const {
  const auto& row = z_[static_cast<std::size_t>(level)][static_cast<std::size_t>(node)];
  return row[static_cast<std::size_t>(j - offset(level, node)) * static_cast<std::size_t>(n_marks_) +
             static_cast<std::size_t>(mark)];
}

void SolutionField::set_y(int level, int node, int j, double v) {
  y_[static_cast<std::size_t>(level)][static_cast<std::size_t>(node)]
    [static_cast<std::size_t>(j - offset(level, node))] = v;
}

void SolutionField::set_z(int level, int node, int j, int mark, double v) {
  z_[static_cast<std::size_t>(level)][static_cast<std::size_t>(node)]
    [static_cast<std::size_t>(j - offset(level, node)) * static_cast<std::size_t>(n_marks_) +
     static_cast<std::size_t>(mark)] = v;
}

double SolutionField::max_abs_diff(const SolutionField& other) const {
  double worst = 0.0;
  for (std::size_t n = 0; n < y_.size(); ++n) {
    for (std::size_t i = 0; i < y_[n].size(); ++i) {
      for (std::size_t k = 0; k < y_[n][i].size(); ++k) {
        worst = std::max(worst, std::abs(y_[n][i][k] - other.y_[n][i][k]));
      }
      if (n < z_.size() && !z_[n].empty() && !z_[n][i].empty()) {
        for (std::size_t k = 0; k < z_[n][i].size(); ++k) {
          worst = std::max(worst, std::abs(z_[n][i][k] - other.z_[n][i][k]));
        }
      }
    }
  }
  return worst;
}

void SolutionField::scale(double c) {
  for (auto& lvl : y_)
    for (auto& row : lvl)
      for (auto& v : row) v *= c;
  for (auto& lvl : z_)
    for (auto& row : lvl)
      for (auto& v : row) v *= c;
  for (auto& lvl : u_)
    for (auto& v : lvl) v *= c;
}

void SolutionField::fill_random(std::uint64_t seed, double amplitude) {
  SeedStream rng(mix_seed(seed, 0x66696c6cULL));
  const int m = n_levels() - 1;
  for (int n = 0; n < m; ++n) {
    for (auto& row : y_[static_cast<std::size_t>(n)])
      for (auto& v : row) v = rng.uniform(-amplitude, amplitude);
    for (auto& row : z_[static_cast<std::size_t>(n)])
      for (auto& v : row) v = rng.uniform(-amplitude, amplitude);
  }
}

void SolutionField::subtract(const SolutionField& other) {
  for (std::size_t n = 0; n < y_.size(); ++n) {
    for (std::size_t i = 0; i < y_[n].size(); ++i) {
      for (std::size_t k = 0; k < y_[n][i].size(); ++k) y_[n][i][k] -= other.y_[n][i][k];
      if (!z_[n].empty() && !z_[n][i].empty()) {
        for (std::size_t k = 0; k < z_[n][i].size(); ++k) z_[n][i][k] -= other.z_[n][i][k];
      }
    }
    for (std::size_t i = 0; i < u_[n].size(); ++i) u_[n][i] -= other.u_[n][i];
  }
}

SolutionField field_difference(const SolutionField& a, const SolutionField& b) {
  SolutionField d = a;
  d.subtract(b);
  return d;
}

void terminal_eval(const BsdeProblem& problem, const HistoryTree& tree, SolutionField* field) {
  const int m = tree.truncation_level();
  for (int n = 0; n <= m; ++n) {
    const auto& lvl = tree.level(n);
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      if (n == m) {
        // truncated terminal: xi 1{T < S_m} vanishes on histories whose
        // m-th jump occurred before the horizon, which is every tree node
        field->set_u(n, static_cast<int>(i), 0.0);
      } else {
        const GenContext ctx = tree.node_context(n, static_cast<int>(i));
        field->set_u(n, static_cast<int>(i), problem.terminal().fn(ctx));
      }
    }
  }
}

namespace {

// Shared cell machinery for the backward passes. For node at grid index j0
// with conditional cdf F, each cell (t_j, t_{j+1}] carries mass
// dF = F(t_{j+1}) - F(t_j); the survival-weighted form of the recursion is
//   (1-F(t_j)) y(t_j) = (1-F(T)) u + sum_cells dF * avg(G)
// with G the generator integrand plus y itself.
struct NodePass {
  const HistoryTree& tree;
  const BsdeProblem& problem;
  const TreeNode& node;
  GenContext ctx;
  int level;
  int node_idx;
  int N;

  std::vector<double> phi_mid(int j) const {  // kernel for cell (t_j, t_{j+1}]
    const double mid = 0.5 * (tree.grid_point(j) + tree.grid_point(j + 1));
    return tree.model().kernel_state(level, node.mark, mid);
  }

  double yhat(const SolutionField& f, int j, int x) const {
    const int ci = tree.child_index(level, node_idx, j, x);
    return f.y(level + 1, ci, j);
  }
};

}  // namespace

SolutionField solve_truncated(const BsdeProblem& problem, const HistoryTree& tree) {
  const int m = tree.truncation_level();
  const int N = tree.n_cells();
  const int K = tree.model().n_marks();
  SolutionField field = SolutionField::zeros(tree);
  terminal_eval(problem, tree, &field);

  // level m: y constant equal to the terminal value
  {
    const auto& lvl = tree.level(m);
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      const double u = field.u(m, static_cast<int>(i));
      for (int j = lvl[i].time_idx; j <= N; ++j) field.set_y(m, static_cast<int>(i), j, u);
    }
  }

  std::vector<double> zeta(static_cast<std::size_t>(K));
  for (int n = m - 1; n >= 0; --n) {
    const auto& lvl = tree.level(n);
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      const TreeNode& node = lvl[i];
      NodePass pass{tree, problem, node, tree.node_context(n, static_cast<int>(i)), n,
                    static_cast<int>(i), N};
      const int j0 = node.time_idx;
      const double u = field.u(n, static_cast<int>(i));
      field.set_y(n, static_cast<int>(i), N, u);

      auto integrand = [&](int j, double yv, const std::vector<double>& phi) {
        double s = 0.0;
        for (int x = 0; x < K; ++x) {
          zeta[static_cast<std::size_t>(x)] = pass.yhat(field, j, x) - yv;
        }
        const double t = tree.grid_point(j);
        for (int x = 0; x < K; ++x) {
          s += phi[static_cast<std::size_t>(x)] *
               problem.generator().fn(pass.ctx, t, x, yv, zeta, phi);
        }
        return s + yv;
      };

      for (int j = N - 1; j >= j0; --j) {
        const double sl = 1.0 - node.cdf_at(j);
        const double sr = 1.0 - node.cdf_at(j + 1);
        const double dF = std::max(0.0, node.cdf_at(j + 1) - node.cdf_at(j));
        const double y_next = field.y(n, static_cast<int>(i), j + 1);
        const auto [wl, wr] = cell_weights(j, j0);
        const auto phi = pass.phi_mid(j);
        const double g_right = integrand(j + 1, y_next, phi);
        double y_cur;
        if (wl == 0.0) {
          y_cur = (sr * y_next + dF * g_right) / std::max(sl, 1e-300);
        } else {
          y_cur = y_next;
          double last = y_cur;
          for (int corr = 0; corr < 3; ++corr) {
            last = y_cur;
            const double g_left = integrand(j, y_cur, phi);
            y_cur = (sr * y_next + dF * (wl * g_left + wr * g_right)) / std::max(sl, 1e-300);
          }
          if (std::abs(y_cur - last) > kStepTol * std::max(1.0, std::abs(y_cur))) {
            std::ostringstream os;
            os << "backward step failed to settle at node " << node.id(tree.model().mark_space())
               << " cell " << j << " (residual " << std::abs(y_cur - last)
               << "); refine the grid";
            throw SolverStepError(os.str(), n, static_cast<int>(i));
          }
        }
        field.set_y(n, static_cast<int>(i), j, y_cur);
      }

      for (int j = j0 + 1; j <= N; ++j) {
        const double yv = field.y(n, static_cast<int>(i), j);
        for (int x = 0; x < K; ++x) {
          field.set_z(n, static_cast<int>(i), j, x, pass.yhat(field, j, x) - yv);
        }
      }
    }
  }
  return field;
}

SolutionField picard_map(const BsdeProblem& problem, const HistoryTree& tree,
                         const SolutionField& candidate) {
  const int m = tree.truncation_level();
  const int N = tree.n_cells();
  const int K = tree.model().n_marks();
  SolutionField out = SolutionField::zeros(tree);
  terminal_eval(problem, tree, &out);

  {
    const auto& lvl = tree.level(m);
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      const double u = out.u(m, static_cast<int>(i));
      for (int j = lvl[i].time_idx; j <= N; ++j) out.set_y(m, static_cast<int>(i), j, u);
    }
  }

  std::vector<double> v_row(static_cast<std::size_t>(K));
  for (int n = m - 1; n >= 0; --n) {
    const auto& lvl = tree.level(n);
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      const TreeNode& node = lvl[i];
      NodePass pass{tree, problem, node, tree.node_context(n, static_cast<int>(i)), n,
                    static_cast<int>(i), N};
      const int j0 = node.time_idx;
      const double u = out.u(n, static_cast<int>(i));
      const double survive_T = 1.0 - node.cdf_at(N);

      // frozen-candidate integrand: sum_x phi [f(t,x,U,V) - V(x) + yhat(x)]
      auto g_at = [&](int j, const std::vector<double>& phi) {
        const double t = tree.grid_point(j);
        const double uv = candidate.y(n, static_cast<int>(i), j);
        for (int x = 0; x < K; ++x) {
          v_row[static_cast<std::size_t>(x)] = candidate.z(n, static_cast<int>(i), j, x);
        }
        double s = 0.0;
        for (int x = 0; x < K; ++x) {
          s += phi[static_cast<std::size_t>(x)] *
               (problem.generator().fn(pass.ctx, t, x, uv, v_row, phi) -
                v_row[static_cast<std::size_t>(x)] + pass.yhat(out, j, x));
        }
        return s;
      };

      double acc = survive_T * u;
      out.set_y(n, static_cast<int>(i), N, u);
      for (int j = N - 1; j >= j0; --j) {
        const double sl = 1.0 - node.cdf_at(j);
        const double dF = std::max(0.0, node.cdf_at(j + 1) - node.cdf_at(j));
        const auto [wl, wr] = cell_weights(j, j0);
        const auto phi = pass.phi_mid(j);
        double g = wr * g_at(j + 1, phi);
        if (wl > 0.0) g += wl * g_at(j, phi);
        acc += dF * g;
        out.set_y(n, static_cast<int>(i), j, acc / std::max(sl, 1e-300));
      }
      for (int j = j0 + 1; j <= N; ++j) {
        const double yv = out.y(n, static_cast<int>(i), j);
        for (int x = 0; x < K; ++x) {
          out.set_z(n, static_cast<int>(i), j, x, pass.yhat(out, j, x) - yv);
        }
      }
    }
  }
  return out;
}

namespace {

// E[e^{beta A} 1{node reached}] per node, by forward recursion with exact
// per-cell hazard increments.
std::vector<std::vector<double>> beta_weights(const HistoryTree& tree, double beta) {
  const int m = tree.truncation_level();
  const int N = tree.n_cells();
  const int K = tree.model().n_marks();
  std::vector<std::vector<double>> W(static_cast<std::size_t>(m + 1));
  for (int n = 0; n <= m; ++n) W[static_cast<std::size_t>(n)].assign(tree.level(n).size(), 0.0);
  W[0][0] = 1.0;
  for (int n = 0; n < m; ++n) {
    const auto& lvl = tree.level(n);
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      const TreeNode& node = lvl[i];
      const double w = W[static_cast<std::size_t>(n)][i];
      if (w == 0.0) continue;
      for (int j = node.time_idx + 1; j <= N; ++j) {
        const double dF = node.cdf_at(j) - node.cdf_at(j - 1);
        if (dF <= 0.0) continue;
        // e^{beta * a(t_j)} with a = -log(1 - F(t_j))
        const double efac = std::pow(std::max(1.0 - node.cdf_at(j), 1e-300), -beta);
        const double mid = 0.5 * (tree.grid_point(j - 1) + tree.grid_point(j));
        const auto phi = tree.model().kernel_state(n, node.mark, mid);
        for (int x = 0; x < K; ++x) {
          const int ci = tree.child_index(n, static_cast<int>(i), j, x);
          W[static_cast<std::size_t>(n + 1)][static_cast<std::size_t>(ci)] +=
              w * dF * phi[static_cast<std::size_t>(x)] * efac;
        }
      }
    }
  }
  return W;
}

}  // namespace

NormReport lp_beta_norm_tree(const SolutionField& field, const BsdeProblem& problem,
                             const HistoryTree& tree) {
  const int m = tree.truncation_level();
  const int N = tree.n_cells();
  const int K = tree.model().n_marks();
  const double p = problem.p();
  const double beta = problem.beta();
  const auto W = beta_weights(tree, beta);
  NormReport rep;
  for (int n = 0; n <= m; ++n) {
    const auto& lvl = tree.level(n);
    const bool has_z = n < m;
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      const TreeNode& node = lvl[i];
      const double w = W[static_cast<std::size_t>(n)][i];
      if (w == 0.0) continue;
      for (int j = node.time_idx; j < N; ++j) {
        const double sl = 1.0 - node.cdf_at(j);
        const double sr = 1.0 - node.cdf_at(j + 1);
        if (sl <= 0.0) break;
        const double cell = exp_hazard_cell(sl, std::max(sr, 1e-300), beta - 1.0);
        const auto [wl, wr] = cell_weights(j, node.time_idx);
        const double mid = 0.5 * (tree.grid_point(j) + tree.grid_point(j + 1));
        const auto phi = tree.model().kernel_state(n, node.mark, mid);
        double hy = wr * pow_abs(field.y(n, static_cast<int>(i), j + 1), p);
        double hz = 0.0;
        if (has_z) {
          for (int x = 0; x < K; ++x) {
            hz += wr * phi[static_cast<std::size_t>(x)] *
                  pow_abs(field.z(n, static_cast<int>(i), j + 1, x), p);
          }
        }
        if (wl > 0.0) {
          hy += wl * pow_abs(field.y(n, static_cast<int>(i), j), p);
          if (has_z) {
            for (int x = 0; x < K; ++x) {
              hz += wl * phi[static_cast<std::size_t>(x)] *
                    pow_abs(field.z(n, static_cast<int>(i), j, x), p);
            }
          }
        }
        rep.y_part += w * cell * hy;
        rep.z_part += w * cell * hz;
      }
    }
  }
  rep.total = rep.y_part + rep.z_part;
  return rep;
}

double equivalent_norm(const SolutionField& field, const BsdeProblem& problem,
                       const HistoryTree& tree, const ContractionParams& params) {
  NormReport plain = lp_beta_norm_tree(field, problem, tree);
  return params.y_weight * plain.y_part + params.z_weight * plain.z_part;
}

namespace {

// Node index active on each segment of a snapped trajectory (segment k has
// k jumps behind it); -1 past the truncation level.
std::vector<int> resolve_path(const HistoryTree& tree, const Trajectory& snapped,
                              std::vector<int>* jump_idx) {
  const int m = tree.truncation_level();
  const int N = tree.n_cells();
  const double dt = tree.model().horizon() / N;
  std::vector<int> refs{0};
  jump_idx->clear();
  int level = 0;
  int cur = 0;
  for (const auto& e : snapped.history.entries()) {
    if (e.time <= 0.0) continue;
    const double fidx = e.time / dt;
    const int j = static_cast<int>(std::lround(fidx));
    if (std::abs(fidx - j) > 1e-9) {
      throw std::invalid_argument("trajectory jump times must lie on the tree grid");
    }
    jump_idx->push_back(j);
    if (level < m && cur >= 0) {
      cur = tree.child_index(level, cur, j, e.mark);
    } else {
      cur = -1;
    }
    ++level;
    refs.push_back(cur);
  }
  return refs;
}

}  // namespace

NormReport lp_beta_norm_mc(const SolutionField& field, const BsdeProblem& problem,
                           const HistoryTree& tree, int n_samples, std::uint64_t seed) {
  const int N = tree.n_cells();
  const int K = tree.model().n_marks();
  const int m = tree.truncation_level();
  const double p = problem.p();
  const double beta = problem.beta();
  double sum = 0.0, sum2 = 0.0, sum_y = 0.0, sum_z = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    const Trajectory raw = simulate_trajectory(tree.model(), mix_seed(seed, static_cast<std::uint64_t>(s)));
    const Trajectory snapped = snap_to_grid(raw, tree.grid_size());
    std::vector<int> jumps;
    const auto refs = resolve_path(tree, snapped, &jumps);
    double a_base = 0.0;
    double traj_y = 0.0, traj_z = 0.0;
    for (std::size_t seg = 0; seg < refs.size(); ++seg) {
      const int level = static_cast<int>(seg);
      const int start = seg == 0 ? 0 : jumps[seg - 1];
      const int end = seg < jumps.size() ? jumps[seg] : N;
      if (level > m || refs[seg] < 0) break;
      const TreeNode& node = tree.level(level)[static_cast<std::size_t>(refs[seg])];
      const bool has_z = level < m;
      const double ebase = std::exp(beta * a_base);
      for (int j = start; j < end; ++j) {
        const double sl = 1.0 - node.cdf_at(j);
        const double sr = 1.0 - node.cdf_at(j + 1);
        if (sl <= 0.0) break;
        // pathwise integral against dA: integrand e^{beta a} da in closed
        // form per cell (no survival factor here)
        const double cell = exp_hazard_cell(sl, std::max(sr, 1e-300), beta);
        const auto [wl, wr] = cell_weights(j, node.time_idx);
        const double mid = 0.5 * (tree.grid_point(j) + tree.grid_point(j + 1));
        const auto phi = tree.model().kernel_state(level, node.mark, mid);
        double hy = wr * pow_abs(field.y(level, refs[seg], j + 1), p);
        double hz = 0.0;
        if (has_z) {
          for (int x = 0; x < K; ++x) {
            hz += wr * phi[static_cast<std::size_t>(x)] *
                  pow_abs(field.z(level, refs[seg], j + 1, x), p);
          }
        }
        if (wl > 0.0) {
          hy += wl * pow_abs(field.y(level, refs[seg], j), p);
          if (has_z) {
            for (int x = 0; x < K; ++x) {
              hz += wl * phi[static_cast<std::size_t>(x)] *
                    pow_abs(field.z(level, refs[seg], j, x), p);
            }
          }
        }
        traj_y += ebase * cell * hy;
        traj_z += ebase * cell * hz;
      }
      if (seg < jumps.size()) {
        const double surv_at_jump = 1.0 - node.cdf_at(jumps[seg]);
        a_base += -std::log(std::max(surv_at_jump, 1e-300));
      }
    }
    const double total = traj_y + traj_z;
    sum += total;
    sum2 += total * total;
    sum_y += traj_y;
    sum_z += traj_z;
  }
  NormReport rep;
  rep.y_part = sum_y / n_samples;
  rep.z_part = sum_z / n_samples;
  rep.total = sum / n_samples;
  const double var = std::max(0.0, (sum2 - sum * sum / n_samples) / (n_samples - 1));
  rep.standard_error = std::sqrt(var / n_samples);
  return rep;
}

double ito_residual(const SolutionField& field, const HistoryTree& tree,
                    const BsdeProblem& problem, const Trajectory& snapped, double t,
                    double beta) {
  const int N = tree.n_cells();
  const int K = tree.model().n_marks();
  const int m = tree.truncation_level();
  const double p = problem.p();
  const double dt = tree.model().horizon() / N;
  const int t_idx = static_cast<int>(std::lround(t / dt));
  if (std::abs(t / dt - t_idx) > 1e-9) {
    throw std::invalid_argument("ito_residual requires t on the grid");
  }

  std::vector<int> jumps;
  const auto refs = resolve_path(tree, snapped, &jumps);
  const int n_jumps = static_cast<int>(jumps.size());

  // A at each jump and at the horizon, exact along the path
  std::vector<double> a_at_jump(static_cast<std::size_t>(n_jumps), 0.0);
  double a_base = 0.0;
  double a_T = 0.0;
  {
    int level = 0;
    for (int k = 0; k <= n_jumps; ++k) {
      const int start = k == 0 ? 0 : jumps[k - 1];
      const int end = k < n_jumps ? jumps[k] : N;
      NextJumpLaw law = tree.model().law_from_state(
          level, tree.grid_point(start), k == 0 ? kNoMark : snapped.history.entries()[static_cast<std::size_t>(k)].mark);
      if (k < n_jumps) {
        a_at_jump[static_cast<std::size_t>(k)] =
            a_base - law.log_survival(tree.grid_point(end));
        a_base = a_at_jump[static_cast<std::size_t>(k)];
      } else {
        a_T = a_base - law.log_survival(tree.grid_point(end));
      }
      ++level;
    }
  }

  auto level_at = [&](int j) {  // cadlag: jump at j counts
    int lvl = 0;
    for (int k = 0; k < n_jumps; ++k)
      if (jumps[k] <= j) lvl = k + 1;
    return lvl;
  };
  auto y_at = [&](int level, int j) {
    if (level > m || refs[static_cast<std::size_t>(level)] < 0) return 0.0;
    return field.y(level, refs[static_cast<std::size_t>(level)], j);
  };

  // |Y_t|^p e^{beta A_t}
  const int lvl_t = level_at(t_idx);
  double a_t = 0.0;
  {
    const int start = lvl_t == 0 ? 0 : jumps[lvl_t - 1];
    const double base = lvl_t == 0 ? 0.0 : a_at_jump[static_cast<std::size_t>(lvl_t - 1)];
    const int mark = lvl_t == 0 ? kNoMark
                                : snapped.history.entries()[static_cast<std::size_t>(lvl_t)].mark;
    NextJumpLaw law = tree.model().law_from_state(lvl_t, tree.grid_point(start), mark);
    a_t = base - law.log_survival(t);
  }
  double lhs = pow_abs(y_at(lvl_t, t_idx), p) * std::exp(beta * a_t);

  // jump terms over (t, T]
  for (int k = 0; k < n_jumps; ++k) {
    if (jumps[k] <= t_idx) continue;
    const int level_pre = k;
    const double y_pre = y_at(level_pre, jumps[k]);
    double zval = 0.0;
    if (level_pre < m && refs[static_cast<std::size_t>(level_pre)] >= 0) {
      zval = field.z(level_pre, refs[static_cast<std::size_t>(level_pre)], jumps[k],
                     snapped.history.entries()[static_cast<std::size_t>(k + 1)].mark);
    } else {
      zval = -y_pre;  // truncated fields vanish past the cut
    }
    lhs += (pow_abs(y_pre + zval, p) - pow_abs(y_pre, p)) *
           std::exp(beta * a_at_jump[static_cast<std::size_t>(k)]);
  }

  // rhs terminal term: the truncated terminal as seen by the field
  const int final_level = n_jumps;
  double xi = 0.0;
  if (final_level < m && refs[static_cast<std::size_t>(final_level)] >= 0) {
    xi = field.u(final_level, refs[static_cast<std::size_t>(final_level)]);
  }
  double rhs = pow_abs(xi, p) * std::exp(beta * a_T);

  // integral terms, segment by segment, cells in (t, T]
  std::vector<double> zeta(static_cast<std::size_t>(K));
  for (int seg = 0; seg <= n_jumps; ++seg) {
    const int start = seg == 0 ? 0 : jumps[seg - 1];
    const int end = seg < n_jumps ? jumps[seg] : N;
    if (end <= t_idx) continue;
    if (seg > m || refs[static_cast<std::size_t>(seg)] < 0) break;  // generator cut
    const TreeNode& node = tree.level(seg)[static_cast<std::size_t>(refs[static_cast<std::size_t>(seg)])];
    const double base = seg == 0 ? 0.0 : a_at_jump[static_cast<std::size_t>(seg - 1)];
    const GenContext ctx = tree.node_context(seg, refs[static_cast<std::size_t>(seg)]);
    const bool gen_active = seg < m;
    for (int j = std::max(start, t_idx); j < end; ++j) {
      const double sl = 1.0 - node.cdf_at(j);
      const double sr = 1.0 - node.cdf_at(j + 1);
      if (sl <= 0.0) break;
      const double cell = exp_hazard_cell(sl, std::max(sr, 1e-300), beta) * std::exp(beta * base);
      const auto [wl, wr] = cell_weights(j, node.time_idx);
      const double mid = 0.5 * (tree.grid_point(j) + tree.grid_point(j + 1));
      const auto phi = tree.model().kernel_state(seg, node.mark, mid);
      auto hy = [&](int jj) { return pow_abs(y_at(seg, jj), p); };
      lhs += beta * cell * (wl * hy(j) + wr * hy(j + 1));
      if (gen_active) {
        auto gj = [&](int jj) {
          const double yv = y_at(seg, jj);
          for (int x = 0; x < K; ++x) {
            zeta[static_cast<std::size_t>(x)] =
                field.z(seg, refs[static_cast<std::size_t>(seg)], jj, x);
          }
          double s = 0.0;
          for (int x = 0; x < K; ++x) {
            s += phi[static_cast<std::size_t>(x)] *
                 problem.generator().fn(ctx, tree.grid_point(jj), x, yv, zeta, phi);
          }
          return p * std::pow(std::abs(yv), p - 1.0) * sign_of(yv) * s;
        };
        rhs += cell * (wl * gj(j) + wr * gj(j + 1));
      }
    }
  }
  return lhs - rhs;
}

AprioriReport apriori_check(const BsdeProblem& problem, const HistoryTree& tree,
                            const SolutionField& field) {
  const int m = tree.truncation_level();
  const int N = tree.n_cells();
  const int K = tree.model().n_marks();
  const double p = problem.p();
  const double beta = problem.beta();
  const auto W = beta_weights(tree, beta);
  AprioriReport rep;

  // sup over grid times of E |Y_t|^p e^{beta A_t}
  std::vector<double> per_time(static_cast<std::size_t>(N + 1), 0.0);
  for (int n = 0; n <= m; ++n) {
    const auto& lvl = tree.level(n);
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      const TreeNode& node = lvl[i];
      const double w = W[static_cast<std::size_t>(n)][i];
      if (w == 0.0) continue;
      for (int j = node.time_idx; j <= N; ++j) {
        const double sl = 1.0 - node.cdf_at(j);
        if (sl <= 0.0) break;
        per_time[static_cast<std::size_t>(j)] +=
            w * std::pow(sl, 1.0 - beta) * pow_abs(field.y(n, static_cast<int>(i), j), p);
      }
    }
  }
  for (double v : per_time) rep.p3_lhs = std::max(rep.p3_lhs, v);

  rep.p4_lhs = lp_beta_norm_tree(field, problem, tree).total;

  // data functional: E |xi|^p e^{beta A_T} + E int |f(s,x,0,0)|^p e^{beta A} dnu
  double data = 0.0;
  const std::vector<double> zero_zeta(static_cast<std::size_t>(K), 0.0);
  for (int n = 0; n < m; ++n) {
    const auto& lvl = tree.level(n);
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      const TreeNode& node = lvl[i];
      const double w = W[static_cast<std::size_t>(n)][i];
      if (w == 0.0) continue;
      const double sT = 1.0 - node.cdf_at(N);
      if (sT > 0.0) {
        data += w * std::pow(sT, 1.0 - beta) * pow_abs(field.u(n, static_cast<int>(i)), p);
      }
      const GenContext ctx = tree.node_context(n, static_cast<int>(i));
      for (int j = node.time_idx; j < N; ++j) {
        const double sl = 1.0 - node.cdf_at(j);
        const double sr = 1.0 - node.cdf_at(j + 1);
        if (sl <= 0.0) break;
        const double cell = exp_hazard_cell(sl, std::max(sr, 1e-300), beta - 1.0);
        const auto [wl, wr] = cell_weights(j, node.time_idx);
        const double mid = 0.5 * (tree.grid_point(j) + tree.grid_point(j + 1));
        const auto phi = tree.model().kernel_state(n, node.mark, mid);
        auto f0 = [&](int jj) {
          double s = 0.0;
          for (int x = 0; x < K; ++x) {
            s += phi[static_cast<std::size_t>(x)] *
                 pow_abs(problem.generator().fn(ctx, tree.grid_point(jj), x, 0.0, zero_zeta, phi),
                         p);
          }
          return s;
        };
        data += w * cell * (wl * f0(j) + wr * f0(j + 1));
      }
    }
  }
  rep.data_functional = data;
  constexpr double kTiny = 1e-300;
  if (data < kTiny && rep.p3_lhs < kTiny && rep.p4_lhs < kTiny) {
    rep.zero_over_zero = true;
    rep.c1 = 0.0;
    rep.c2 = 0.0;
    rep.finite = true;
  } else {
    rep.c1 = rep.p3_lhs / data;
    rep.c2 = rep.p4_lhs / data;
    rep.finite = std::isfinite(rep.c1) && std::isfinite(rep.c2);
  }
  return rep;
}

std::vector<PathPoint> sample_solution(const SolutionField& field, const HistoryTree& tree,
                                       const Trajectory& snapped) {
  const int N = tree.n_cells();
  const int K = tree.model().n_marks();
  const int m = tree.truncation_level();
  std::vector<int> jumps;
  const auto refs = resolve_path(tree, snapped, &jumps);
  std::vector<PathPoint> path;
  path.reserve(static_cast<std::size_t>(N + 1));
  for (int j = 0; j <= N; ++j) {
    int lvl = 0;
    for (std::size_t k = 0; k < jumps.size(); ++k)
      if (jumps[k] <= j) lvl = static_cast<int>(k) + 1;
    int lvl_pre = 0;
    for (std::size_t k = 0; k < jumps.size(); ++k)
      if (jumps[k] < j) lvl_pre = static_cast<int>(k) + 1;
    PathPoint pt;
    pt.t = tree.grid_point(j);
    pt.level = lvl;
    pt.y = (lvl > m || refs[static_cast<std::size_t>(lvl)] < 0)
               ? 0.0
               : field.y(lvl, refs[static_cast<std::size_t>(lvl)], j);
    pt.y_left = (lvl_pre > m || refs[static_cast<std::size_t>(lvl_pre)] < 0)
                    ? 0.0
                    : field.y(lvl_pre, refs[static_cast<std::size_t>(lvl_pre)], j);
    if (j > 0 && lvl_pre < m && refs[static_cast<std::size_t>(lvl_pre)] >= 0) {
      pt.z.resize(static_cast<std::size_t>(K));
      for (int x = 0; x < K; ++x) {
        pt.z[static_cast<std::size_t>(x)] =
            field.z(lvl_pre, refs[static_cast<std::size_t>(lvl_pre)], j, x);
      }
    }
    path.push_back(std::move(pt));
  }
  return path;
}

double terminal_expectation(const BsdeProblem& problem, const HistoryTree& tree) {
  const int m = tree.truncation_level();
  const int N = tree.n_cells();
  double total = 0.0;
  for (int n = 0; n < m; ++n) {
    const auto& lvl = tree.level(n);
    for (std::size_t i = 0; i < lvl.size(); ++i) {
      const TreeNode& node = lvl[i];
      if (node.mass == 0.0) continue;
      const double sT = 1.0 - node.cdf_at(N);
      if (sT <= 0.0) continue;
      const GenContext ctx = tree.node_context(n, static_cast<int>(i));
      total += node.mass * sT * problem.terminal().fn(ctx);
    }
  }
  return total;
}

}  // namespace mpp
