#ifndef MPP_BSDE_HPP
#define MPP_BSDE_HPP

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mpp/process.hpp"

namespace mpp {

// State handed to generators and terminal functionals. `history` carries the
// full realized prefix where one exists (paths, fully enumerated trees);
// collapsed tree nodes supply only (level, last_time, last_mark).
struct GenContext {
  int level = 0;
  double last_time = 0.0;
  int last_mark = kNoMark;
  const History* history = nullptr;
};

// f(omega, t, x, y, zeta). zeta is a vector over marks; phi is the mark
// kernel at (state, t), passed so that integral forms of zeta are cheap.
using GeneratorFn = std::function<double(const GenContext&, double t, int mark, double y,
                                         const std::vector<double>& zeta,
                                         const std::vector<double>& phi)>;

struct Generator {
  GeneratorFn fn;
  double lip_y = 0.0;  // L'
  double lip_z = 0.0;  // L
  std::string name = "custom";
};

using TerminalFn = std::function<double(const GenContext&)>;

struct Terminal {
  TerminalFn fn;
  std::string name = "custom";
};

// Built-in generators.
Generator zero_generator();
// f(t,x,y,zeta) = integral of zeta against phi. The solution of the BSDE
// with this generator and terminal xi is Y_t = E[xi | F_t]; it is the
// zero-generator case of the equation written against the compensated
// measure mu - nu. L = 1, L' = 0.
Generator cond_exp_generator();
// f = a_y * y + a_z * (integral of zeta dphi) + c; L' = |a_y|, L = |a_z|.
Generator linear_generator(double a_y, double a_z, double c);

// Built-in terminal functionals.
Terminal constant_terminal(double c);
Terminal count_terminal();                       // xi = N_T
Terminal count_below_terminal(int cap);          // xi = N_T 1{N_T < cap}
Terminal last_mark_indicator_terminal(int mark); // xi = 1{X_T = mark}
Terminal depth_table_terminal(std::vector<double> values);  // xi = v[min(N_T, last)]

// C_eps = (1 - (1/(1+eps))^{1/(p-1)})^{1-p}
double c_epsilon(double p, double eps);
// 1 + C_eps/(1+eps) + p L' + (p-1)((L+1)^p (1+eps))^{1/(p-1)}
double beta_threshold(double p, double eps, double L, double Lprime);

class BsdeProblem {
 public:
  BsdeProblem(std::shared_ptr<const HazardModel> model, Generator gen, Terminal term, double p,
              double beta, double eps = 1.0, bool allow_subthreshold_beta = false);

  static double auto_beta(double p, double eps, const Generator& gen) {
    return beta_threshold(p, eps, gen.lip_z, gen.lip_y) * 1.05;
  }

  const HazardModel& model() const { return *model_; }
  std::shared_ptr<const HazardModel> model_ptr() const { return model_; }
  const Generator& generator() const { return gen_; }
  const Terminal& terminal() const { return term_; }
  double p() const { return p_; }
  double beta() const { return beta_; }
  double eps() const { return eps_; }
  double threshold() const { return beta_threshold(p_, eps_, gen_.lip_z, gen_.lip_y); }

  BsdeProblem with_beta(double beta, bool allow_subthreshold = false) const {
    return BsdeProblem(model_, gen_, term_, p_, beta, eps_, allow_subthreshold);
  }

 private:
  std::shared_ptr<const HazardModel> model_;
  Generator gen_;
  Terminal term_;
  double p_;
  double beta_;
  double eps_;
};

struct NormReport {
  double y_part = 0.0;
  double z_part = 0.0;
  double total = 0.0;
  double standard_error = 0.0;
};

struct LipschitzAuditReport {
  bool pass = false;
  double max_ratio_y = 0.0;
  double max_ratio_z = 0.0;
  std::string witness_y;
  std::string witness_z;
};

// Samples (history, t, x, y, y', zeta, zeta') tuples and reports the worst
// observed ratios for the two Lipschitz inequalities of the generator.
LipschitzAuditReport lipschitz_audit(const BsdeProblem& problem, int n_samples,
                                     std::uint64_t seed);

// Contraction constant and equivalent-norm weights from the fixed-point
// argument, derived from the gap between beta and the threshold.
struct ContractionParams {
  double alpha = 0.0;     // contraction factor of the Picard map
  double y_weight = 0.0;  // |Y|^p weight in the equivalent norm
  double z_weight = 0.0;  // |Z|^p weight
};
ContractionParams contraction_params(const BsdeProblem& problem);

// Form-2 data: fbar(omega, t, y, z) with a functional eta mapping zeta
// vectors to reals, 1-Lipschitz against the L^1(phi) distance.
using FBarFn = std::function<double(const GenContext&, double t, double y, double z)>;
using EtaFn = std::function<double(const GenContext&, double t, const std::vector<double>& zeta,
                                   const std::vector<double>& phi)>;

struct EtaAuditError : std::runtime_error {
  explicit EtaAuditError(const std::string& what) : std::runtime_error(what) {}
};

// Builds f(omega,s,x,y,zeta) = fbar(omega,s,y, eta zeta). The eta contract
// |eta z - eta z'| <= int |z - z'| dphi is audited by sampling; violations
// raise EtaAuditError with a witness.
Generator adapt_form2(const HazardModel& model, FBarFn fbar, EtaFn eta, double L, double Lprime,
                      int n_samples, std::uint64_t seed);

}  // namespace mpp

#endif  // MPP_BSDE_HPP
