#ifndef MPP_CONTROL_HPP
#define MPP_CONTROL_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mpp/tree.hpp"

namespace mpp {

// Optimal-control data: finite action set, controlled intensity factor r in
// (0, C_r], running cost l in [-C_l, C_l], terminal cost g.
struct ControlProblem {
  std::shared_ptr<const HazardModel> model;
  std::vector<std::string> actions;
  // r(state, t, future mark, action); enters both the Hamiltonian and the
  // controlled compensator r nu.
  std::function<double(const GenContext&, double t, int mark, int action)> r;
  // l(state, t, action); evaluated at the current mark of the state.
  std::function<double(const GenContext&, double t, int action)> l;
  // terminal cost g(X_T) as a functional of the terminal state.
  std::function<double(const GenContext&)> g;
  double C_r = 2.0;
  double C_l = 1.0;
  double p = 2.0;
  double eps = 1.0;

  int n_actions() const { return static_cast<int>(actions.size()); }
  void validate() const;
};

struct HamiltonianResult {
  double value = 0.0;
  int argmin = 0;
  double margin = 0.0;  // second-best value minus best (0 when |U| = 1)
  int ties = 0;         // actions within 1e-12 of the minimum
};

// Exhaustive minimization of l(u) + sum_x z(x) r(x,u) phi(x) over actions;
// first-in-order argmin on ties.
HamiltonianResult hamiltonian(const std::vector<double>& z_row, const std::vector<double>& l_row,
                              const std::vector<std::vector<double>>& r_rows,
                              const std::vector<double>& phi);

// BsdeProblem whose generator is the Hamiltonian (L = C_r, L' = 0) and whose
// terminal is g.
BsdeProblem build_control_bsde(const ControlProblem& cp, double beta);

struct FeasibilityReport {
  double at_exponent = 0.0;  // (2p-1)/(p-1) + (p-1) C_r^{(p/(p-1))^2}
  double gamma = 0.0;        // p/(p-1)
  double q = 0.0;            // identified with gamma
  double lemma_beta = 0.0;   // gamma + 1 + C_r^{q^2}/(q-1)
  double threshold = 0.0;    // existence threshold for the Hamiltonian BSDE
  double beta = 0.0;         // proposed beta (threshold * 1.05)
  double e_beta_at = 0.0;    // Monte Carlo E e^{beta A_T}
  double e_beta_at_se = 0.0;
  double g_moment = 0.0;  // Monte Carlo E |g|^p e^{beta A_T}
  double g_moment_se = 0.0;
  bool stable = false;  // the two integrability estimates look convergent
  bool pass = false;
  std::string message;
};

// Integrability arithmetic and Monte Carlo checks for the control layer.
FeasibilityReport feasibility_beta(const ControlProblem& cp, int n_samples = 20000,
                                   std::uint64_t seed = 11);

// Predictable action choice along a trajectory: the action on a cell may
// depend on the state entering it and on the cell's left endpoint.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual int action(const GenContext& state, double cell_left) const = 0;
};

class ConstantPolicy : public Policy {
 public:
  explicit ConstantPolicy(int action) : action_(action) {}
  int action(const GenContext&, double) const override { return action_; }

 private:
  int action_;
};

// Deterministic pseudo-random feedback table over (level, mark, time bucket).
class HashedPolicy : public Policy {
 public:
  HashedPolicy(std::uint64_t seed, int n_actions, int n_buckets, double horizon)
      : seed_(seed), n_actions_(n_actions), n_buckets_(n_buckets), horizon_(horizon) {}
  int action(const GenContext& state, double cell_left) const override;

 private:
  std::uint64_t seed_;
  int n_actions_;
  int n_buckets_;
  double horizon_;
};

// Feedback control extracted from a solved field: per node and grid time,
// the Hamiltonian argmin with tie and margin provenance.
class ControlField {
 public:
  static ControlField extract(const ControlProblem& cp, const HistoryTree& tree,
                              const SolutionField& field);

  int action(int level, int node, int j) const;
  double margin(int level, int node, int j) const;
  int ties(int level, int node, int j) const;
  int n_levels() const { return static_cast<int>(actions_.size()); }

 private:
  friend class FieldPolicy;
  std::vector<std::vector<int>> offsets_;
  std::vector<std::vector<std::vector<int>>> actions_;
  std::vector<std::vector<std::vector<double>>> margins_;
  std::vector<std::vector<std::vector<int>>> ties_;
};

// Policy backed by a ControlField; requires the tree for node resolution.
class FieldPolicy : public Policy {
 public:
  FieldPolicy(const HistoryTree& tree, const ControlField& field)
      : tree_(&tree), field_(&field) {}
  int action(const GenContext& state, double cell_left) const override;

 private:
  const HistoryTree* tree_;
  const ControlField* field_;
};

// Girsanov density path L_t at the grid points of a snapped trajectory:
// exp(int (1-r) dnu) times the product of r at realized jumps.
std::vector<std::pair<double, double>> girsanov_weight(const ControlProblem& cp,
                                                       const Trajectory& snapped,
                                                       const Policy& policy, int grid_size);

struct CostEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  int n_samples = 0;
};

// J(u) = E[ L_T ( int_0^T l(t, X_t, u_t) dA_t + g(X_T) ) ] by Monte Carlo
// under the reference measure, trajectories snapped to the grid.
CostEstimate cost(const ControlProblem& cp, const Policy& policy, int n_samples,
                  std::uint64_t seed, int grid_size);

struct ControlSolution {
  double y0 = 0.0;
  HistoryTree tree;
  SolutionField field;
  ControlField ustar;
  double beta = 0.0;
};

// Solves the Hamiltonian BSDE on the tree and extracts the argmin feedback.
ControlSolution solve_control(const ControlProblem& cp, int m, int grid_size);

struct OptimalityRow {
  std::string name;
  double j_value = 0.0;
  double j_se = 0.0;
  bool holds = false;  // Y0 <= J + 3 se
};

struct OptimalityReport {
  double y0 = 0.0;
  double j_star = 0.0;
  double j_star_se = 0.0;
  bool equality_ok = false;  // |Y0 - J(u*)| <= 3 se + allowance
  bool all_hold = false;
  std::vector<OptimalityRow> rows;
};

// Compares Y0 against J(u*), every constant control, and seeded random
// predictable controls.
OptimalityReport verify_optimality(const ControlProblem& cp, const ControlSolution& sol,
                                   int n_random_controls, int n_samples, std::uint64_t seed,
                                   double discretization_allowance = 2e-2);

}  // namespace mpp

#endif  // MPP_CONTROL_HPP
