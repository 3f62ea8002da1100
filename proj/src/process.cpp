#include "mpp/process.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mpp/rng.hpp"

namespace mpp {

namespace {

constexpr double kKernelSumTol = 1e-12;
constexpr double kSurvivalEps = 1e-12;

void check_probability_vector(const std::vector<double>& probs, int expected,
                              const std::string& what) {
  if (static_cast<int>(probs.size()) != expected) {
    throw std::invalid_argument(what + ": expected " + std::to_string(expected) + " entries");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument(what + ": entries must be nonnegative");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kKernelSumTol) {
    throw std::invalid_argument(what + ": entries must sum to 1");
  }
}

}  // namespace

void MarkSpace::validate() const {
  if (marks.empty()) throw std::invalid_argument("mark space must be non-empty");
  std::set<std::string> seen;
  for (const auto& m : marks) {
    if (m.empty()) throw std::invalid_argument("mark identifiers must be non-empty");
    if (m == sentinel) throw std::invalid_argument("sentinel must not be a member mark");
    if (!seen.insert(m).second) throw std::invalid_argument("duplicate mark identifier: " + m);
  }
}

int MarkSpace::index_of(std::string_view name) const {
  if (name == sentinel) return kNoMark;
  for (std::size_t i = 0; i < marks.size(); ++i) {
    if (marks[i] == name) return static_cast<int>(i);
  }
  throw std::invalid_argument("unknown mark identifier: " + std::string(name));
}

const std::string& MarkSpace::name(int idx) const {
  if (idx == kNoMark) return sentinel;
  if (idx < 0 || idx >= size()) throw std::out_of_range("mark index out of range");
  return marks[static_cast<std::size_t>(idx)];
}

void History::append(double time, int mark) {
  if (!(time > last_time())) {
    throw std::invalid_argument("history times must be strictly increasing");
  }
  entries_.push_back({time, mark});
}

History History::prefix(int n_jumps) const {
  if (n_jumps < 0 || n_jumps > jump_count()) throw std::out_of_range("prefix length");
  History h;
  h.entries_.assign(entries_.begin(), entries_.begin() + n_jumps + 1);
  return h;
}

bool History::same_entries(const History& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].time != other.entries_[i].time || entries_[i].mark != other.entries_[i].mark)
      return false;
  }
  return true;
}

namespace detail {

double CdfTable::eval(double t) const {
  if (t <= times.front()) return values.front();
  if (t >= times.back()) return values.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - times.begin()) - 1;
  const double t0 = times[i], t1 = times[i + 1];
  const double v0 = values[i], v1 = values[i + 1];
  if (t1 == t0) return v1;
  return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
}

double CdfTable::inverse(double u) const {
  if (u <= values.front()) return times.front();
  if (u >= values.back()) return times.back();
  const auto it = std::upper_bound(values.begin(), values.end(), u);
  const std::size_t i = static_cast<std::size_t>(it - values.begin()) - 1;
  const double v0 = values[i], v1 = values[i + 1];
  const double t0 = times[i], t1 = times[i + 1];
  if (v1 == v0) return t1;
  return t0 + (t1 - t0) * (u - v0) / (v1 - v0);
}

void HazardCurve::finalize() {
  cumulative.assign(times.size(), 0.0);
  for (std::size_t i = 1; i < times.size(); ++i) {
    const double dt = times[i] - times[i - 1];
    cumulative[i] = cumulative[i - 1] + 0.5 * (rates[i] + rates[i - 1]) * dt;
  }
}

double HazardCurve::integral(double a, double b) const {
  if (b <= a) return 0.0;
  auto eval_cum = [this](double t) {
    if (t <= times.front()) return 0.0;
    if (t >= times.back()) return cumulative.back();
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times.begin()) - 1;
    const double dt = t - times[i];
    const double cell = times[i + 1] - times[i];
    const double slope = (rates[i + 1] - rates[i]) / cell;
    return cumulative[i] + rates[i] * dt + 0.5 * slope * dt * dt;
  };
  return eval_cum(b) - eval_cum(a);
}

double HazardCurve::inverse_from(double a, double target) const {
  if (target <= 0.0) return a;
  double lo = a;
  double hi = times.back();
  if (integral(a, hi) < target) return kInf;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (integral(a, mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-14 * std::max(1.0, times.back())) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

NextJumpLaw NextJumpLaw::exponential(double rate, double anchor, double horizon) {
  NextJumpLaw law;
  law.kind_ = rate > 0.0 ? Kind::kExponential : Kind::kNone;
  law.rate_ = rate;
  law.anchor_ = anchor;
  law.horizon_ = horizon;
  return law;
}

NextJumpLaw NextJumpLaw::none(double anchor, double horizon) {
  NextJumpLaw law;
  law.kind_ = Kind::kNone;
  law.anchor_ = anchor;
  law.horizon_ = horizon;
  return law;
}

NextJumpLaw NextJumpLaw::table(std::shared_ptr<const detail::CdfTable> cdf, double anchor,
                               double horizon) {
  NextJumpLaw law;
  law.kind_ = Kind::kTable;
  law.cdf_ = std::move(cdf);
  law.anchor_ = anchor;
  law.horizon_ = horizon;
  law.cond_base_ = law.cdf_->eval(anchor);
  return law;
}

NextJumpLaw NextJumpLaw::hazard(std::shared_ptr<const detail::HazardCurve> curve, double anchor,
                                double horizon) {
  NextJumpLaw law;
  law.kind_ = Kind::kHazard;
  law.curve_ = std::move(curve);
  law.anchor_ = anchor;
  law.horizon_ = horizon;
  return law;
}

double NextJumpLaw::cdf(double t) const {
  if (t <= anchor_) return 0.0;
  switch (kind_) {
    case Kind::kExponential:
      return -std::expm1(-rate_ * (t - anchor_));
    case Kind::kNone:
      return 0.0;
    case Kind::kTable: {
      const double denom = 1.0 - cond_base_;
      if (denom <= 0.0) return 1.0;
      return (cdf_->eval(t) - cond_base_) / denom;
    }
    case Kind::kHazard:
      return -std::expm1(-curve_->integral(anchor_, t));
  }
  return 0.0;
}

double NextJumpLaw::log_survival(double t) const {
  if (t <= anchor_) return 0.0;
  switch (kind_) {
    case Kind::kExponential:
      return -rate_ * (t - anchor_);
    case Kind::kNone:
      return 0.0;
    case Kind::kTable: {
      const double s = 1.0 - cdf(t);
      return s > 0.0 ? std::log(s) : -kInf;
    }
    case Kind::kHazard:
      return -curve_->integral(anchor_, t);
  }
  return 0.0;
}

double NextJumpLaw::quantile(double u) const {
  if (u <= 0.0) return anchor_;
  switch (kind_) {
    case Kind::kExponential:
      return anchor_ - std::log1p(-u) / rate_;
    case Kind::kNone:
      return kInf;
    case Kind::kTable: {
      const double denom = 1.0 - cond_base_;
      if (denom <= 0.0) return kInf;
      const double target = cond_base_ + u * denom;
      if (target >= cdf_->values.back()) return kInf;
      return cdf_->inverse(target);
    }
    case Kind::kHazard:
      return curve_->inverse_from(anchor_, -std::log1p(-u));
  }
  return kInf;
}

HazardModel HazardModel::poisson(double horizon, MarkSpace ms, double lambda,
                                 std::vector<double> mark_probs) {
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  ms.validate();
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("poisson intensity must be finite and nonnegative");
  }
  check_probability_vector(mark_probs, ms.size(), "mark probabilities");
  HazardModel m;
  m.kind_ = Kind::kPoisson;
  m.horizon_ = horizon;
  m.marks_ = std::move(ms);
  m.markov_ = true;
  m.lambda_ = lambda;
  m.mark_probs_ = std::move(mark_probs);
  return m;
}

HazardModel HazardModel::single_jump(double horizon, MarkSpace ms, std::vector<double> cdf_times,
                                     std::vector<double> cdf_values,
                                     std::vector<double> mark_probs) {
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  ms.validate();
  check_probability_vector(mark_probs, ms.size(), "mark probabilities");
  if (cdf_times.size() != cdf_values.size() || cdf_times.size() < 2) {
    throw std::invalid_argument("cdf table needs matching times/values with >= 2 knots");
  }
  if (cdf_times.front() != 0.0 || cdf_values.front() != 0.0) {
    throw std::invalid_argument("cdf table must start at (0, 0)");
  }
  for (std::size_t i = 1; i < cdf_times.size(); ++i) {
    if (cdf_times[i] < cdf_times[i - 1]) {
      throw std::invalid_argument("cdf times must be nondecreasing");
    }
    if (cdf_values[i] < cdf_values[i - 1]) {
      throw std::invalid_argument("cdf values must be nondecreasing");
    }
    if (cdf_times[i] == cdf_times[i - 1] && cdf_values[i] > cdf_values[i - 1]) {
      std::ostringstream os;
      os << "law has an atom at t=" << cdf_times[i] << " (mass "
         << cdf_values[i] - cdf_values[i - 1] << "); jump-time laws must be atomless";
      throw std::invalid_argument(os.str());
    }
  }
  if (cdf_values.back() > 1.0 + kKernelSumTol) {
    throw std::invalid_argument("cdf values must not exceed 1");
  }
  auto tbl = std::make_shared<detail::CdfTable>();
  tbl->times = std::move(cdf_times);
  tbl->values = std::move(cdf_values);
  HazardModel m;
  m.kind_ = Kind::kSingleJump;
  m.horizon_ = horizon;
  m.marks_ = std::move(ms);
  m.markov_ = false;
  m.cdf_ = std::move(tbl);
  m.mark_probs_ = std::move(mark_probs);
  return m;
}

HazardModel HazardModel::markov_hazard(double horizon, MarkSpace ms,
                                       std::vector<double> grid_times,
                                       std::vector<std::vector<double>> hazard_rows,
                                       std::vector<std::vector<double>> transition_rows) {
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  ms.validate();
  const int K = ms.size();
  if (static_cast<int>(hazard_rows.size()) != K + 1) {
    throw std::invalid_argument("need one hazard row per state (sentinel first, then marks)");
  }
  if (static_cast<int>(transition_rows.size()) != K + 1) {
    throw std::invalid_argument("need one transition row per state (sentinel first, then marks)");
  }
  if (grid_times.size() < 2 || grid_times.front() != 0.0) {
    throw std::invalid_argument("hazard grid must start at 0 with >= 2 knots");
  }
  for (std::size_t i = 1; i < grid_times.size(); ++i) {
    if (!(grid_times[i] > grid_times[i - 1])) {
      throw std::invalid_argument("hazard grid times must be strictly increasing");
    }
  }
  if (grid_times.back() < horizon) {
    throw std::invalid_argument("hazard grid must cover the horizon");
  }
  HazardModel m;
  m.kind_ = Kind::kMarkovHazard;
  m.horizon_ = horizon;
  m.markov_ = true;
  for (int s = 0; s <= K; ++s) {
    const auto& row = hazard_rows[static_cast<std::size_t>(s)];
    if (row.size() != grid_times.size()) {
      throw std::invalid_argument("hazard row size must match the grid");
    }
    for (double r : row) {
      if (!(r >= 0.0) || !std::isfinite(r)) {
        throw std::invalid_argument("hazard rates must be finite and nonnegative");
      }
    }
    auto curve = std::make_shared<detail::HazardCurve>();
    curve->times = grid_times;
    curve->rates = row;
    curve->finalize();
    if (s == 0) {
      m.init_curve_ = std::move(curve);
    } else {
      m.mark_curves_.push_back(std::move(curve));
    }
    check_probability_vector(transition_rows[static_cast<std::size_t>(s)], K,
                             "transition row " + std::to_string(s));
  }
  m.marks_ = std::move(ms);
  m.transition_ = std::move(transition_rows);
  return m;
}

NextJumpLaw HazardModel::law(const History& h) const {
  return law_from_state(h.jump_count(), h.last_time(), h.last_mark());
}

NextJumpLaw HazardModel::law_from_state(int jumps_so_far, double last_time, int last_mark) const {
  switch (kind_) {
    case Kind::kPoisson:
      return NextJumpLaw::exponential(lambda_, last_time, horizon_);
    case Kind::kSingleJump:
      if (jumps_so_far >= 1) return NextJumpLaw::none(last_time, horizon_);
      return NextJumpLaw::table(cdf_, last_time, horizon_);
    case Kind::kMarkovHazard: {
      const auto& curve = last_mark == kNoMark
                              ? init_curve_
                              : mark_curves_[static_cast<std::size_t>(last_mark)];
      return NextJumpLaw::hazard(curve, last_time, horizon_);
    }
  }
  throw std::logic_error("unreachable");
}

std::vector<double> HazardModel::kernel(const History& h, double t) const {
  if (!(t > h.last_time())) {
    throw std::invalid_argument("kernel is defined only for t past the last jump time");
  }
  return kernel_state(h.jump_count(), h.last_mark(), t);
}

std::vector<double> HazardModel::kernel_state(int /*jumps_so_far*/, int last_mark,
                                              double /*t*/) const {
  switch (kind_) {
    case Kind::kPoisson:
    case Kind::kSingleJump:
      return mark_probs_;
    case Kind::kMarkovHazard:
      return transition_[static_cast<std::size_t>(last_mark == kNoMark ? 0 : last_mark + 1)];
  }
  throw std::logic_error("unreachable");
}

double HazardModel::cumulative_hazard(const History& h, double t) const {
  if (t < 0.0 || t > horizon_ + 1e-12) {
    throw std::invalid_argument("cumulative hazard requires t in [0, horizon]");
  }
  double a = 0.0;
  const auto& entries = h.entries();
  for (std::size_t j = 0; j < entries.size(); ++j) {
    const double seg_start = entries[j].time;
    if (seg_start >= t) break;
    const double seg_end = (j + 1 < entries.size()) ? std::min(entries[j + 1].time, t) : t;
    const History pre = h.prefix(static_cast<int>(j));
    const double ls = law(pre).log_survival(seg_end);
    if (ls == -kInf) return kInf;
    a -= ls;
  }
  return a;
}

Trajectory simulate_trajectory(const HazardModel& model, std::uint64_t seed,
                               std::size_t max_jumps) {
  SeedStream rng(mix_seed(seed, 0x7261646aULL));
  Trajectory traj;
  traj.horizon = model.horizon();
  traj.seed = seed;
  int jumps = 0;
  double last_time = 0.0;
  int last_mark = kNoMark;
  while (true) {
    const NextJumpLaw law = model.law_from_state(jumps, last_time, last_mark);
    const double u = rng.uniform();
    const double next = law.quantile(u);
    if (!(next <= model.horizon())) break;
    const auto probs = model.kernel_state(jumps, last_mark, next);
    const int mark = rng.pick(probs);
    traj.history.append(next, mark);
    last_time = next;
    last_mark = mark;
    ++jumps;
    if (static_cast<std::size_t>(jumps) > max_jumps) {
      throw std::runtime_error("trajectory exploded: more than " + std::to_string(max_jumps) +
                               " jumps before the horizon");
    }
  }
  return traj;
}

Trajectory snap_to_grid(const Trajectory& t, int grid_size) {
  if (grid_size < 2) throw std::invalid_argument("grid_size must be >= 2");
  const int n_cells = grid_size - 1;
  const double dt = t.horizon / n_cells;
  Trajectory out;
  out.horizon = t.horizon;
  out.seed = t.seed;
  int prev_idx = 0;
  for (const auto& e : t.history.entries()) {
    if (e.time <= 0.0) continue;
    int idx = static_cast<int>(std::ceil(e.time / dt - 1e-12));
    if (idx <= prev_idx) idx = prev_idx + 1;
    if (idx > n_cells) break;  // pushed past the horizon
    out.history.append(idx * dt, e.mark);
    prev_idx = idx;
  }
  return out;
}

A2Report check_a2(const HazardModel& model, int max_level, int sample_histories,
                  std::uint64_t seed, int state_grid) {
  if (max_level < 1) throw std::invalid_argument("check_a2 needs max_level >= 1");
  const double T = model.horizon();

  auto classify = [&](const NextJumpLaw& law, const std::string& witness, A2LevelReport* rep) {
    const double survival = 1.0 - law.cdf(T);
    if (survival < rep->min_survival) {
      rep->min_survival = survival;
      rep->witness = witness;
    }
    if (survival > 0.0) return;
    // Distinguish mass exhausted strictly before T from a right-endpoint
    // degeneracy where F < 1 on all of [0, T).
    const int probes = 64;
    bool interior_hit = false;
    for (int i = 1; i < probes; ++i) {
      const double t = law.anchor() + (T - law.anchor()) * i / probes;
      if (law.cdf(t) >= 1.0 - kSurvivalEps) {
        interior_hit = true;
        break;
      }
    }
    rep->verdict = interior_hit ? A2Verdict::kFail
                                : (rep->verdict == A2Verdict::kFail ? A2Verdict::kFail
                                                                    : A2Verdict::kBoundary);
  };

  A2Report report;
  report.all_pass = true;
  std::vector<Trajectory> samples;
  if (!model.markov()) {
    samples.reserve(static_cast<std::size_t>(sample_histories));
    for (int i = 0; i < sample_histories; ++i) {
      samples.push_back(simulate_trajectory(model, mix_seed(seed, static_cast<std::uint64_t>(i))));
    }
  }

  for (int level = 0; level < max_level; ++level) {
    A2LevelReport rep;
    rep.level = level;
    rep.min_survival = kInf;
    if (level == 0) {
      classify(model.law_from_state(0, 0.0, kNoMark), "origin", &rep);
    } else if (model.markov()) {
      for (int j = 0; j < state_grid; ++j) {
        const double s = T * j / state_grid;  // states strictly before T
        for (int x = 0; x < model.n_marks(); ++x) {
          std::ostringstream os;
          os << "state (t=" << s << ", mark=" << model.mark_space().name(x) << ")";
          classify(model.law_from_state(level, s, x), os.str(), &rep);
        }
      }
    } else {
      bool reached = false;
      for (const auto& traj : samples) {
        if (traj.jump_count() < level) continue;
        reached = true;
        const History h = traj.history.prefix(level);
        std::ostringstream os;
        os << "sampled history ending at t=" << h.last_time();
        classify(model.law(h), os.str(), &rep);
      }
      if (!reached) rep.witness = "no sampled history reached this level";
      if (!std::isfinite(rep.min_survival)) rep.min_survival = 1.0;
    }
    if (rep.verdict != A2Verdict::kPass) report.all_pass = false;
    if (rep.verdict == A2Verdict::kFail) report.any_fail = true;
    report.levels.push_back(std::move(rep));
  }
  return report;
}

DualityStats mu_nu_duality_check(const HazardModel& model,
                                 const std::function<double(double, int)>& H, int n_samples,
                                 std::uint64_t seed, int grid_size) {
  const double T = model.horizon();
  const int n_cells = grid_size - 1;
  const double dt = T / n_cells;
  double sum_mu = 0.0, sum_nu = 0.0, sum_d = 0.0, sum_d2 = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const Trajectory traj = simulate_trajectory(model, mix_seed(seed, static_cast<std::uint64_t>(i)));
    double mu_side = 0.0;
    const auto& entries = traj.history.entries();
    for (std::size_t j = 1; j < entries.size(); ++j) {
      mu_side += H(entries[j].time, entries[j].mark);
    }
    // nu side: per inter-jump segment, per grid cell, exact A-increment
    // times the kernel-averaged integrand at the cell midpoint.
    double nu_side = 0.0;
    for (std::size_t j = 0; j < entries.size(); ++j) {
      const double seg_start = entries[j].time;
      const double seg_end = (j + 1 < entries.size()) ? entries[j + 1].time : T;
      if (seg_end <= seg_start) continue;
      const History pre = traj.history.prefix(static_cast<int>(j));
      const NextJumpLaw law = model.law(pre);
      const int c0 = static_cast<int>(std::floor(seg_start / dt));
      const int c1 = static_cast<int>(std::ceil(seg_end / dt - 1e-12));
      double prev_ls = law.log_survival(seg_start);
      for (int c = c0; c < c1; ++c) {
        const double a = std::max(seg_start, c * dt);
        const double b = std::min(seg_end, (c + 1) * dt);
        if (b <= a) continue;
        const double ls = law.log_survival(b);
        const double da = prev_ls - ls;
        prev_ls = ls;
        if (da <= 0.0) continue;
        const double mid = 0.5 * (a + b);
        const auto phi = model.kernel_state(pre.jump_count(), pre.last_mark(), mid);
        double hbar = 0.0;
        for (int x = 0; x < model.n_marks(); ++x) hbar += phi[static_cast<std::size_t>(x)] * H(mid, x);
        nu_side += hbar * da;
      }
    }
    sum_mu += mu_side;
    sum_nu += nu_side;
    const double d = mu_side - nu_side;
    sum_d += d;
    sum_d2 += d * d;
  }
  DualityStats st;
  st.n_samples = n_samples;
  st.mu_side = sum_mu / n_samples;
  st.nu_side = sum_nu / n_samples;
  st.diff_mean = sum_d / n_samples;
  const double var = std::max(0.0, (sum_d2 - sum_d * sum_d / n_samples) / (n_samples - 1));
  st.diff_stderr = std::sqrt(var / n_samples);
  st.pass = std::abs(st.diff_mean) <= 4.0 * st.diff_stderr + 1e-15;
  return st;
}

}  // namespace mpp
