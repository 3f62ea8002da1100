#ifndef MPP_TRUNCATION_HPP
#define MPP_TRUNCATION_HPP

#include <cstdint>
#include <vector>

#include "mpp/tree.hpp"

namespace mpp {

struct TruncationEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  int n_samples = 0;
};

// Monte Carlo estimate of
//   E[ |xi|^p e^{beta A_T} 1{S_m < T}
//      + int_{S_m ^ T}^T int_K |f(s,x,0,0)|^p e^{beta A_s} nu(ds,dx) ],
// the data functional controlling the truncation error.
TruncationEstimate truncation_bound(const BsdeProblem& problem, int m, int n_samples,
                                    std::uint64_t seed, int quad_grid = 201);

// L^p_beta distance (tree-exact, on the m_large tree) between the level
// m_small solution extended by zero and the level m_large solution.
double empirical_gap(const BsdeProblem& problem, int m_small, int m_large, int grid_size);

struct NonUniquenessReport {
  double zero_residual = 0.0;      // worst pathwise residual of the zero solution
  double spurious_residual = 0.0;  // worst residual of Y_t = w e^{A_t} 1{t<S}
  double zero_norm = 0.0;          // L^p_beta norm of the zero solution
  std::vector<double> partial_norms;  // spurious norm over [0, T(1 - 2^-k)], k = 1..k_max
};

// Single-jump model with a uniform atomless law on (0, T]. Both candidates
// solve the same equation pathwise, yet the spurious family has divergent
// weighted norm near the horizon; the growth table exhibits the divergence.
NonUniquenessReport nonuniqueness_demo(double w, int grid_size, int n_traj = 50,
                                       int k_max = 8, double p = 2.0, double beta = 4.0,
                                       std::uint64_t seed = 99);

}  // namespace mpp

#endif  // MPP_TRUNCATION_HPP
