#include "mpp/tree.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mpp {

std::string TreeNode::id(const MarkSpace& ms) const {
  std::ostringstream os;
  if (path.empty()) {
    os << "L" << level << "@" << time_idx << ":" << ms.name(mark);
  } else {
    os << "L" << level;
    for (const auto& [j, x] : path) os << "|" << j << ":" << ms.name(x);
  }
  return os.str();
}

int HistoryTree::node_index(int level, int time_idx, int mark) const {
  if (level == 0) return 0;
  const int K = model_->n_marks();
  return (time_idx - level) * K + mark;
}

int HistoryTree::child_index(int parent_level, int parent_idx, int j, int mark) const {
  if (collapsed_) return node_index(parent_level + 1, j, mark);
  const TreeNode& parent = levels_[static_cast<std::size_t>(parent_level)]
                                  [static_cast<std::size_t>(parent_idx)];
  const int K = model_->n_marks();
  return parent.child_base + (j - parent.time_idx - 1) * K + mark;
}

std::size_t HistoryTree::total_nodes() const {
  std::size_t n = 0;
  for (const auto& lvl : levels_) n += lvl.size();
  return n;
}

GenContext HistoryTree::node_context(int level, int node_idx) const {
  const TreeNode& node = levels_[static_cast<std::size_t>(level)][static_cast<std::size_t>(node_idx)];
  GenContext ctx;
  ctx.level = level;
  ctx.last_time = grid_[static_cast<std::size_t>(node.time_idx)];
  ctx.last_mark = node.mark;
  if (!collapsed_) {
    ctx.history = rep_histories_[rep_offsets_[static_cast<std::size_t>(level)] +
                                 static_cast<std::size_t>(node_idx)]
                      .get();
  }
  return ctx;
}

HistoryTree build_tree(std::shared_ptr<const HazardModel> model, int m, int grid_size,
                       std::size_t node_budget, bool force_full) {
  if (m < 1) throw std::invalid_argument("build_tree requires m >= 1");
  if (grid_size < 2) throw std::invalid_argument("build_tree requires grid_size >= 2");
  const A2Report a2 = check_a2(*model, m);
  if (a2.any_fail) {
    for (const auto& lvl : a2.levels) {
      if (lvl.verdict == A2Verdict::kFail) {
        std::ostringstream os;
        os << "conditional survival past the horizon vanishes at level " << lvl.level << " ("
           << lvl.witness << "); the backward recursion is not defined for this model";
        throw A2Error(os.str());
      }
    }
  }

  const bool collapse = model->markov() && !force_full;
  const int N = grid_size - 1;
  const int K = model->n_marks();
  const double T = model->horizon();

  // node budget: collapsed trees are linear per level, full trees enumerated
  // by a count over last-jump indices.
  if (collapse) {
    const std::size_t total = 1 + static_cast<std::size_t>(m) * static_cast<std::size_t>(N) *
                                      static_cast<std::size_t>(K);
    if (total > node_budget) {
      throw TreeBudgetError("tree would need " + std::to_string(total) +
                            " nodes, over the budget of " + std::to_string(node_budget));
    }
  } else {
    std::vector<double> count(static_cast<std::size_t>(N + 1), 0.0);
    count[0] = 1.0;
    double total = 1.0;
    for (int n = 1; n <= m; ++n) {
      std::vector<double> next(static_cast<std::size_t>(N + 1), 0.0);
      for (int j = 0; j <= N; ++j) {
        if (count[static_cast<std::size_t>(j)] == 0.0) continue;
        for (int jj = j + 1; jj <= N; ++jj) {
          next[static_cast<std::size_t>(jj)] += count[static_cast<std::size_t>(j)] * K;
        }
      }
      count.swap(next);
      for (int j = 0; j <= N; ++j) total += count[static_cast<std::size_t>(j)];
      if (total > static_cast<double>(node_budget)) {
        std::ostringstream os;
        os << "full history tree exceeds the node budget of " << node_budget << " at level " << n
           << "; use a Markov model (collapsed nodes) or reduce m/grid_size";
        throw TreeBudgetError(os.str());
      }
    }
  }

  HistoryTree tree;
  tree.model_ = model;
  tree.m_ = m;
  tree.collapsed_ = collapse;
  tree.grid_.resize(static_cast<std::size_t>(N + 1));
  for (int j = 0; j <= N; ++j) tree.grid_[static_cast<std::size_t>(j)] = T * j / N;

  auto tabulate_cdf = [&](int level, int time_idx, int mark) {
    const NextJumpLaw law =
        model->law_from_state(level, tree.grid_[static_cast<std::size_t>(time_idx)], mark);
    std::vector<double> cdf(static_cast<std::size_t>(N - time_idx + 1));
    for (int j = time_idx; j <= N; ++j) {
      cdf[static_cast<std::size_t>(j - time_idx)] = law.cdf(tree.grid_[static_cast<std::size_t>(j)]);
    }
    return cdf;
  };

  tree.levels_.resize(static_cast<std::size_t>(m + 1));
  TreeNode root;
  root.level = 0;
  root.time_idx = 0;
  root.mark = kNoMark;
  root.mass = 1.0;
  root.cdf = tabulate_cdf(0, 0, kNoMark);
  tree.levels_[0].push_back(std::move(root));

  if (collapse) {
    for (int n = 1; n <= m; ++n) {
      auto& lvl = tree.levels_[static_cast<std::size_t>(n)];
      lvl.reserve(static_cast<std::size_t>((N - n + 1) * K));
      for (int j = n; j <= N; ++j) {
        for (int x = 0; x < K; ++x) {
          TreeNode node;
          node.level = n;
          node.time_idx = j;
          node.mark = x;
          node.cdf = tabulate_cdf(n, j, x);
          lvl.push_back(std::move(node));
        }
      }
      // collapsed levels are dense in (time_idx, mark) but only indices
      // >= level are addressable; node_index accounts for the offset
    }
    // mass recursion
    for (int n = 0; n < m; ++n) {
      for (auto& parent : tree.levels_[static_cast<std::size_t>(n)]) {
        if (parent.mass == 0.0) continue;
        for (int j = parent.time_idx + 1; j <= N; ++j) {
          const double dF = parent.cdf_at(j) - parent.cdf_at(j - 1);
          if (dF <= 0.0) continue;
          const double mid = 0.5 * (tree.grid_[static_cast<std::size_t>(j - 1)] +
                                    tree.grid_[static_cast<std::size_t>(j)]);
          const auto phi = model->kernel_state(n, parent.mark, mid);
          for (int x = 0; x < K; ++x) {
            const int ci = tree.node_index(n + 1, j, x);
            tree.levels_[static_cast<std::size_t>(n + 1)][static_cast<std::size_t>(ci)].mass +=
                parent.mass * dF * phi[static_cast<std::size_t>(x)];
          }
        }
      }
    }
  } else {
    tree.rep_offsets_.assign(static_cast<std::size_t>(m + 2), 0);
    tree.rep_histories_.push_back(std::make_unique<History>());
    tree.rep_offsets_[1] = 1;
    for (int n = 0; n < m; ++n) {
      auto& lvl = tree.levels_[static_cast<std::size_t>(n)];
      auto& next = tree.levels_[static_cast<std::size_t>(n + 1)];
      for (std::size_t pi = 0; pi < lvl.size(); ++pi) {
        TreeNode& parent = lvl[pi];
        parent.child_base = static_cast<int>(next.size());
        const History& ph = *tree.rep_histories_[tree.rep_offsets_[static_cast<std::size_t>(n)] + pi];
        for (int j = parent.time_idx + 1; j <= N; ++j) {
          const double dF = parent.cdf_at(j) - parent.cdf_at(j - 1);
          const double mid = 0.5 * (tree.grid_[static_cast<std::size_t>(j - 1)] +
                                    tree.grid_[static_cast<std::size_t>(j)]);
          const auto phi = model->kernel_state(n, parent.mark, mid);
          for (int x = 0; x < K; ++x) {
            TreeNode node;
            node.level = n + 1;
            node.time_idx = j;
            node.mark = x;
            node.mass = parent.mass * std::max(0.0, dF) * phi[static_cast<std::size_t>(x)];
            node.cdf = tabulate_cdf(n + 1, j, x);
            node.path = parent.path;
            node.path.emplace_back(j, x);
            next.push_back(std::move(node));
            auto h = std::make_unique<History>(ph);
            h->append(tree.grid_[static_cast<std::size_t>(j)], x);
            tree.rep_histories_.push_back(std::move(h));
          }
        }
      }
      tree.rep_offsets_[static_cast<std::size_t>(n + 2)] =
          tree.rep_offsets_[static_cast<std::size_t>(n + 1)] + next.size();
    }
  }
  return tree;
}

}  // namespace mpp
