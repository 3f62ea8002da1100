#ifndef MPP_TREE_HPP
#define MPP_TREE_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mpp/bsde.hpp"
#include "mpp/process.hpp"

namespace mpp {

// One discretized history class. Collapsed trees identify nodes by
// (level, time index, mark); fully enumerated trees carry the whole path.
struct TreeNode {
  int level = 0;
  int time_idx = 0;   // grid index of the last jump (0 at the root)
  int mark = kNoMark; // mark of the last jump
  double mass = 0.0;  // probability of reaching this node
  // Conditional cdf of the next jump at grid points time_idx..N.
  std::vector<double> cdf;
  // Full path (time_idx, mark) per jump; empty in collapsed mode.
  std::vector<std::pair<int, int>> path;
  int child_base = -1;  // first child index in the next level (full mode)

  double cdf_at(int grid_idx) const { return cdf[static_cast<std::size_t>(grid_idx - time_idx)]; }
  std::string id(const MarkSpace& ms) const;
};

// Finite tree of discretized histories with transition weights. Jump times
// live on a uniform grid; the mass of each cell sits at its right endpoint.
class HistoryTree {
 public:
  const HazardModel& model() const { return *model_; }
  std::shared_ptr<const HazardModel> model_ptr() const { return model_; }
  int truncation_level() const { return m_; }
  int grid_size() const { return static_cast<int>(grid_.size()); }
  int n_cells() const { return grid_size() - 1; }
  const std::vector<double>& grid() const { return grid_; }
  double grid_point(int j) const { return grid_[static_cast<std::size_t>(j)]; }
  bool collapsed() const { return collapsed_; }

  const std::vector<TreeNode>& level(int n) const { return levels_[static_cast<std::size_t>(n)]; }
  std::vector<TreeNode>& level_mut(int n) { return levels_[static_cast<std::size_t>(n)]; }
  int n_levels() const { return static_cast<int>(levels_.size()); }

  // Index of the node reached from `parent` (at level n) by a jump at grid
  // point j with the given mark; valid for n < truncation_level().
  int child_index(int parent_level, int parent_idx, int j, int mark) const;
  // Collapsed lookup at a level.
  int node_index(int level, int time_idx, int mark) const;

  std::size_t total_nodes() const;

  GenContext node_context(int level, int node_idx) const;

 private:
  friend HistoryTree build_tree(std::shared_ptr<const HazardModel>, int, int, std::size_t, bool);
  std::shared_ptr<const HazardModel> model_;
  int m_ = 0;
  bool collapsed_ = true;
  std::vector<double> grid_;
  std::vector<std::vector<TreeNode>> levels_;
  std::vector<std::unique_ptr<History>> rep_histories_;  // full mode, per node, level-major
  std::vector<std::size_t> rep_offsets_;
};

struct TreeBudgetError : std::runtime_error {
  explicit TreeBudgetError(const std::string& what) : std::runtime_error(what) {}
};

struct A2Error : std::runtime_error {
  explicit A2Error(const std::string& what) : std::runtime_error(what) {}
};

// Builds the tree for truncation level m on a uniform grid of `grid_size`
// points. Rejects models whose conditional survival hits zero strictly
// before the horizon, and trees whose node count exceeds the budget.
HistoryTree build_tree(std::shared_ptr<const HazardModel> model, int m, int grid_size,
                       std::size_t node_budget = 10000000, bool force_full = false);

// y^n_D on grid points >= node time, z^n_D(t, x) likewise (first grid point
// after the node time), and the terminal value u^n_D per node.
class SolutionField {
 public:
  static SolutionField zeros(const HistoryTree& tree);

  double y(int level, int node, int j) const;
  double z(int level, int node, int j, int mark) const;
  double u(int level, int node) const { return u_[static_cast<std::size_t>(level)][static_cast<std::size_t>(node)]; }

  void set_y(int level, int node, int j, double v);
  void set_z(int level, int node, int j, int mark, double v);
  void set_u(int level, int node, double v) { u_[static_cast<std::size_t>(level)][static_cast<std::size_t>(node)] = v; }

  int n_levels() const { return static_cast<int>(u_.size()); }
  double y0() const { return y_[0][0][0]; }

  // max |y - other.y| and |z - other.z| over all nodes and grid points
  double max_abs_diff(const SolutionField& other) const;

  void scale(double c);
  void subtract(const SolutionField& other);
  void fill_random(std::uint64_t seed, double amplitude);  // level-m y rows stay zero

 private:
  friend SolutionField make_field(const HistoryTree&);
  int offset(int level, int node) const { return off_[static_cast<std::size_t>(level)][static_cast<std::size_t>(node)]; }
  int n_marks_ = 0;
  int grid_size_ = 0;
  std::vector<std::vector<int>> off_;  // node time_idx per (level, node)
  std::vector<std::vector<std::vector<double>>> y_;
  std::vector<std::vector<std::vector<double>>> z_;
  std::vector<std::vector<double>> u_;
};

struct SolverStepError : std::runtime_error {
  SolverStepError(const std::string& what, int level, int node)
      : std::runtime_error(what), level(level), node(node) {}
  int level;
  int node;
};

// Fills the terminal values u^n_D: xi evaluated on the history extended by
// no further jumps for n < m, and zero at the truncation level (the
// truncated terminal vanishes once the m-th jump has occurred).
void terminal_eval(const BsdeProblem& problem, const HistoryTree& tree, SolutionField* field);

// Backward recursion over levels: level m is constant u^m, lower levels
// solve the scalar backward equation per node with the generator evaluated
// at zeta(x) = yhat^{n+1}(s,x) - y^n(s). Implicit single-step update in the
// conditional-cdf weighting with two fixed-point corrections per step.
SolutionField solve_truncated(const BsdeProblem& problem, const HistoryTree& tree);

// One application of the fixed-point map: freezes (U, V) = candidate inside
// the generator and solves the resulting linear backward recursion.
SolutionField picard_map(const BsdeProblem& problem, const HistoryTree& tree,
                         const SolutionField& candidate);

// L^p_beta norm, tree-exact: cell integrals of e^{(beta-1)a} da are taken in
// closed form, the field part by endpoint averaging.
NormReport lp_beta_norm_tree(const SolutionField& field, const BsdeProblem& problem,
                             const HistoryTree& tree);
// Same quantity by Monte Carlo over snapped trajectories.
NormReport lp_beta_norm_mc(const SolutionField& field, const BsdeProblem& problem,
                           const HistoryTree& tree, int n_samples, std::uint64_t seed);

// Weighted norm used by the contraction measurements.
double equivalent_norm(const SolutionField& field, const BsdeProblem& problem,
                       const HistoryTree& tree, const ContractionParams& params);

// Difference field a - b (node-wise); both must come from the same tree.
SolutionField field_difference(const SolutionField& a, const SolutionField& b);

// Evaluates both sides of the pathwise p-th power identity along a snapped
// trajectory from time t and returns left minus right. beta is the identity
// parameter (any real), independent of the problem's existence threshold.
double ito_residual(const SolutionField& field, const HistoryTree& tree,
                    const BsdeProblem& problem, const Trajectory& snapped, double t, double beta);

struct AprioriReport {
  double p3_lhs = 0.0;         // sup_t E |Y_t|^p e^{beta A_t}
  double p4_lhs = 0.0;         // full weighted norm of (Y, Z)
  double data_functional = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  bool zero_over_zero = false;
  bool finite = false;
};

// Tree-exact evaluation of the a priori inequalities: reports the empirical
// constants (ratios of left sides to the data functional).
AprioriReport apriori_check(const BsdeProblem& problem, const HistoryTree& tree,
                            const SolutionField& field);

struct PathPoint {
  double t = 0.0;
  int level = 0;   // jumps realized up to and including t
  double y = 0.0;  // cadlag value
  double y_left = 0.0;  // left limit (pre-jump node value at t)
  std::vector<double> z;  // pre-jump node's z row at t; empty at t = 0
};

// Piecewise path (t_j, Y_{t_j}, Z_{t_j}(.)) assembled from the field along a
// snapped trajectory. Jump times must lie on the tree grid.
std::vector<PathPoint> sample_solution(const SolutionField& field, const HistoryTree& tree,
                                       const Trajectory& snapped);

// Tree-exact expectation of the (truncated) terminal functional.
double terminal_expectation(const BsdeProblem& problem, const HistoryTree& tree);

}  // namespace mpp

#endif  // MPP_TREE_HPP
