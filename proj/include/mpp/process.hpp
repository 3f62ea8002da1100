#ifndef MPP_PROCESS_HPP
#define MPP_PROCESS_HPP

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace mpp {

inline constexpr int kNoMark = -1;  // the distinguished "no mark" symbol
inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Finite set of mark identifiers plus the sentinel used before the first
// jump and after the horizon.
struct MarkSpace {
  std::vector<std::string> marks;
  std::string sentinel = "*";

  void validate() const;
  int size() const { return static_cast<int>(marks.size()); }
  int index_of(std::string_view name) const;  // kNoMark for the sentinel
  const std::string& name(int idx) const;
};

struct HistoryEntry {
  double time;
  int mark;
};

// Realized prefix of jump times and marks. The origin entry (0, sentinel) is
// always present; appended times must be strictly increasing and positive.
class History {
 public:
  History() : entries_{{0.0, kNoMark}} {}

  void append(double time, int mark);
  int jump_count() const { return static_cast<int>(entries_.size()) - 1; }
  double last_time() const { return entries_.back().time; }  // D^max
  int last_mark() const { return entries_.back().mark; }
  const std::vector<HistoryEntry>& entries() const { return entries_; }
  History prefix(int n_jumps) const;

  bool operator==(const History& other) const { return same_entries(other); }

 private:
  bool same_entries(const History& other) const;
  std::vector<HistoryEntry> entries_;
};

struct Trajectory {
  History history;
  double horizon = 0.0;
  std::uint64_t seed = 0;

  int jump_count() const { return history.jump_count(); }
};

namespace detail {

// Tabulated cdf with linear interpolation between knots. Repeated abscissae
// (a vertical step) encode an atom and are rejected at model build time.
struct CdfTable {
  std::vector<double> times;
  std::vector<double> values;

  double eval(double t) const;
  double inverse(double u) const;  // smallest t with F(t) >= u
};

// Piecewise-linear hazard rate on a uniform grid; the cumulative hazard is
// piecewise quadratic and evaluated in closed form.
struct HazardCurve {
  std::vector<double> times;
  std::vector<double> rates;
  std::vector<double> cumulative;  // integral of the rate up to each knot

  void finalize();
  double integral(double a, double b) const;    // cumulative hazard over (a,b]
  double inverse_from(double a, double target) const;  // t with integral(a,t)=target
};

}  // namespace detail

// Conditional distribution of the next jump time given the current state.
// F is continuous with F(anchor) = 0; mass beyond F(horizon) means no
// further jump before the horizon.
class NextJumpLaw {
 public:
  static NextJumpLaw exponential(double rate, double anchor, double horizon);
  static NextJumpLaw none(double anchor, double horizon);
  static NextJumpLaw table(std::shared_ptr<const detail::CdfTable> cdf, double anchor,
                           double horizon);
  static NextJumpLaw hazard(std::shared_ptr<const detail::HazardCurve> curve, double anchor,
                            double horizon);

  double cdf(double t) const;           // F(t) for t >= anchor
  double log_survival(double t) const;  // log(1 - F(t)), -inf where F = 1
  // Smallest t with F(t) >= u, or +inf when the jump falls past the horizon.
  double quantile(double u) const;

  double anchor() const { return anchor_; }
  double horizon() const { return horizon_; }

 private:
  enum class Kind { kExponential, kNone, kTable, kHazard };
  Kind kind_ = Kind::kNone;
  double rate_ = 0.0;
  double anchor_ = 0.0;
  double horizon_ = 0.0;
  double cond_base_ = 0.0;  // F(anchor) of the unconditional table
  std::shared_ptr<const detail::CdfTable> cdf_;
  std::shared_ptr<const detail::HazardCurve> curve_;
};

// Marked point process model given through conditional jump-time
// distributions and mark kernels. Immutable after construction.
class HazardModel {
 public:
  enum class Kind { kPoisson, kSingleJump, kMarkovHazard };

  static HazardModel poisson(double horizon, MarkSpace ms, double lambda,
                             std::vector<double> mark_probs);
  static HazardModel single_jump(double horizon, MarkSpace ms, std::vector<double> cdf_times,
                                 std::vector<double> cdf_values, std::vector<double> mark_probs);
  // hazard rows: one per state (index 0 = pre-first-jump sentinel state,
  // then one per mark); transition rows likewise, each a probability vector
  // over marks.
  static HazardModel markov_hazard(double horizon, MarkSpace ms, std::vector<double> grid_times,
                                   std::vector<std::vector<double>> hazard_rows,
                                   std::vector<std::vector<double>> transition_rows);

  Kind kind() const { return kind_; }
  double horizon() const { return horizon_; }
  const MarkSpace& mark_space() const { return marks_; }
  int n_marks() const { return marks_.size(); }
  bool markov() const { return markov_; }

  // Conditional law of the next jump given a history, or given a collapsed
  // state (jump count, time and mark of the last entry).
  NextJumpLaw law(const History& h) const;
  NextJumpLaw law_from_state(int jumps_so_far, double last_time, int last_mark) const;

  // phi_{D,t}: probability vector over marks; requires t > D^max.
  std::vector<double> kernel(const History& h, double t) const;
  std::vector<double> kernel_state(int jumps_so_far, int last_mark, double t) const;

  // A_t along the history, via A_t = A_{S_n} - log(1 - F_{D_n}(t)).
  // Returns +inf when the conditional cdf reaches 1 at or before t.
  double cumulative_hazard(const History& h, double t) const;

 private:
  Kind kind_ = Kind::kPoisson;
  double horizon_ = 0.0;
  MarkSpace marks_;
  bool markov_ = true;
  double lambda_ = 0.0;
  std::vector<double> mark_probs_;
  std::shared_ptr<const detail::CdfTable> cdf_;
  std::shared_ptr<const detail::HazardCurve> init_curve_;
  std::vector<std::shared_ptr<const detail::HazardCurve>> mark_curves_;
  std::vector<std::vector<double>> transition_;
};

// Inverse-transform simulation; deterministic given the seed.
Trajectory simulate_trajectory(const HazardModel& model, std::uint64_t seed,
                               std::size_t max_jumps = 1000000);

// Snaps jump times to the right endpoint of their grid cell (grid of
// `grid_size` points on [0, horizon]). Colliding jumps are pushed to the
// next point; jumps pushed past the horizon are dropped.
Trajectory snap_to_grid(const Trajectory& t, int grid_size);

enum class A2Verdict { kPass, kBoundary, kFail };

struct A2LevelReport {
  int level = 0;
  A2Verdict verdict = A2Verdict::kPass;
  double min_survival = 0.0;  // min over checked states of 1 - F(T)
  std::string witness;
};

struct A2Report {
  std::vector<A2LevelReport> levels;
  bool all_pass = false;  // strict positivity at every level
  bool any_fail = false;  // survival hits zero strictly before the horizon
};

// Checks P(S_{n+1} > T | state) > 0 for n = 0..max_level-1. Exact over a
// state grid for Markov models, sampled histories otherwise. States where
// the conditional cdf reaches 1 only at the horizon itself are flagged as
// boundary-degenerate rather than failed.
A2Report check_a2(const HazardModel& model, int max_level, int sample_histories = 1000,
                  std::uint64_t seed = 7, int state_grid = 201);

struct DualityStats {
  double mu_side = 0.0;
  double nu_side = 0.0;
  double diff_mean = 0.0;
  double diff_stderr = 0.0;
  int n_samples = 0;
  bool pass = false;  // |diff_mean| <= 4 stderr
};

// Monte Carlo check of E int H dmu = E int H dnu for a bounded test
// integrand H(t, mark). The difference is paired per trajectory.
DualityStats mu_nu_duality_check(const HazardModel& model,
                                 const std::function<double(double, int)>& H, int n_samples,
                                 std::uint64_t seed, int grid_size = 200);

}  // namespace mpp

#endif  // MPP_PROCESS_HPP
