#include "sparsegroup/shuffle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "sparsegroup/assignment.hpp"

namespace sparsegroup {

namespace {

// Assignment cost for the P-subproblem: C[a][j] = sum_b R[a][b] * S[j][q[b]].
// Selecting column j for row a contributes exactly row p[a] = j of S' to the
// contraction, so the LP optimum over doubly-stochastic P is attained at a
// permutation with the same objective value.
Matrix p_step_cost(const ImportanceMatrix& s, const Matrix& r,
                   const Permutation& q) {
  const int n = r.rows;
  Matrix sq(s.rows, s.cols);  // S with columns permuted by q
  for (int j = 0; j < s.rows; ++j)
    for (int b = 0; b < s.cols; ++b) sq(j, b) = s(j, q[b]);
  Matrix c(n, n);
  matmul_nt(r.v.data(), sq.v.data(), c.v.data(), n, r.cols, n);
  return c;
}

// Q-subproblem: C[b][i] = sum_a R[a][b] * S[p[a]][i].
Matrix q_step_cost(const ImportanceMatrix& s, const Matrix& r,
                   const Permutation& p) {
  const int n = r.cols;
  Matrix ps(s.rows, s.cols);  // S with rows permuted by p
  for (int a = 0; a < s.rows; ++a)
    for (int i = 0; i < s.cols; ++i) ps(a, i) = s(p[a], i);
  Matrix c(n, n);
  matmul_tn(r.v.data(), ps.v.data(), c.v.data(), r.rows, n, s.cols);
  return c;
}

struct Pass {
  Permutation p, q;
  double objective;
  int iterations;
  std::vector<double> trajectory;
};

// Number of equal diagonal zero blocks of the cost (the arrangement slots).
// The alternation is blind to joint row/column moves between two slots, so
// the stall repair below enumerates exactly those moves.
int zero_block_count(const Matrix& cost) {
  // coarsest power-of-two partition whose diagonal blocks are all zero
  for (int b = 2; b <= std::min(cost.rows, cost.cols); b *= 2) {
    if (cost.rows % b != 0 || cost.cols % b != 0) break;
    const int bh = cost.rows / b, bw = cost.cols / b;
    bool zero = true;
    for (int n = 0; n < b && zero; ++n)
      for (int r = n * bh; r < (n + 1) * bh && zero; ++r)
        for (int c = n * bw; c < (n + 1) * bw; ++c)
          if (cost(r, c) != 0.0) { zero = false; break; }
    if (zero) return b;
  }
  return 1;
}

std::vector<std::vector<int>> subsets_of_size(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> pick;
  // n <= 4 in practice, plain recursion is fine
  struct Rec {
    int n, k;
    std::vector<std::vector<int>>& out;
    void go(int start, std::vector<int>& pick) {
      if (int(pick.size()) == k) {
        out.push_back(pick);
        return;
      }
      for (int i = start; i < n; ++i) {
        pick.push_back(i);
        go(i + 1, pick);
        pick.pop_back();
      }
    }
  } rec{n, k, out};
  rec.go(0, pick);
  return out;
}

double objective_of(const ImportanceMatrix& s, const RegMatrix& cost,
                    const Permutation& p, const Permutation& q) {
  return block_diagonality_score(permute_importance(s, p, q), cost);
}

// Joint repair of a stalled alternation: for every pair of slots, try every
// way of exchanging row and column subsets between them and keep the best
// strictly improving move. Each subproblem is tiny (slot sides <= 2), so the
// exchange is evaluated exactly; larger slots do not exhibit the stall.
bool repair_sweep(const ImportanceMatrix& s, const RegMatrix& cost,
                  Permutation& p, Permutation& q, double& obj,
                  std::vector<double>& trajectory) {
  const int blocks = zero_block_count(cost.m);
  if (blocks < 2) return false;
  const int mr = cost.m.rows / blocks, mc = cost.m.cols / blocks;
  if (mr > 2 || mc > 2) return false;

  const auto row_subsets = subsets_of_size(2 * mr, mr);
  const auto col_subsets = subsets_of_size(2 * mc, mc);
  bool improved_any = false;

  for (int u = 0; u < blocks; ++u) {
    for (int v = u + 1; v < blocks; ++v) {
      // positions (in permuted coordinates) owned by the two slots
      std::vector<int> rows, cols;
      for (int t = 0; t < mr; ++t) rows.push_back(u * mr + t);
      for (int t = 0; t < mr; ++t) rows.push_back(v * mr + t);
      for (int t = 0; t < mc; ++t) cols.push_back(u * mc + t);
      for (int t = 0; t < mc; ++t) cols.push_back(v * mc + t);

      double best_delta = 0.0;
      std::vector<int> best_pm, best_qm;
      const std::vector<int>& pm = p.map();
      const std::vector<int>& qm = q.map();

      auto local_cost = [&](const std::vector<int>& pmap,
                            const std::vector<int>& qmap) {
        // contribution of all cells in the affected rows/cols
        double acc = 0.0;
        for (int r : rows)
          for (int c = 0; c < cost.m.cols; ++c)
            acc += cost.m(r, c) * s(pmap[std::size_t(r)], qmap[std::size_t(c)]);
        for (int c : cols)
          for (int r = 0; r < cost.m.rows; ++r)
            acc += cost.m(r, c) * s(pmap[std::size_t(r)], qmap[std::size_t(c)]);
        for (int r : rows)
          for (int c : cols)
            acc -= cost.m(r, c) * s(pmap[std::size_t(r)], qmap[std::size_t(c)]);
        return acc;
      };

      std::vector<int> sources_r, sources_c;
      for (int r : rows) sources_r.push_back(pm[std::size_t(r)]);
      for (int c : cols) sources_c.push_back(qm[std::size_t(c)]);
      const double base = local_cost(pm, qm);

      for (const std::vector<int>& rs : row_subsets) {
        for (const std::vector<int>& cs : col_subsets) {
          std::vector<int> new_pm = pm, new_qm = qm;
          // rows listed in rs go to slot u (in order), the rest to slot v
          std::vector<char> in_u(sources_r.size(), 0);
          for (int i : rs) in_u[std::size_t(i)] = 1;
          int iu = 0, iv = mr;
          for (std::size_t i = 0; i < sources_r.size(); ++i)
            new_pm[std::size_t(rows[std::size_t(in_u[i] ? iu++ : iv++)])] =
                sources_r[i];
          std::vector<char> cin_u(sources_c.size(), 0);
          for (int i : cs) cin_u[std::size_t(i)] = 1;
          int ju = 0, jv = mc;
          for (std::size_t i = 0; i < sources_c.size(); ++i)
            new_qm[std::size_t(cols[std::size_t(cin_u[i] ? ju++ : jv++)])] =
                sources_c[i];
          const double delta = local_cost(new_pm, new_qm) - base;
          if (delta < best_delta) {
            best_delta = delta;
            best_pm = std::move(new_pm);
            best_qm = std::move(new_qm);
          }
        }
      }

      if (best_delta < 0.0) {
        Permutation new_p(best_pm), new_q(best_qm);
        const double new_obj = objective_of(s, cost, new_p, new_q);
        if (new_obj < obj) {
          p = std::move(new_p);
          q = std::move(new_q);
          obj = new_obj;
          trajectory.push_back(obj);
          improved_any = true;
        }
      }
    }
  }

  return improved_any;
}

Pass run_pass(const ImportanceMatrix& s, const RegMatrix& cost, Permutation p,
              Permutation q, int max_iters) {
  Pass pass{std::move(p), std::move(q), 0.0, 0, {}};
  double obj = objective_of(s, cost, pass.p, pass.q);
  pass.trajectory.push_back(obj);
  for (int it = 0; it < max_iters; ++it) {
    const double before = obj;

    Permutation cand_p = solve(CostMatrix(p_step_cost(s, cost.m, pass.q))).perm;
    double cand_obj = objective_of(s, cost, cand_p, pass.q);
    if (cand_obj <= obj) {
      pass.p = std::move(cand_p);
      obj = cand_obj;
    }
    pass.trajectory.push_back(obj);

    Permutation cand_q = solve(CostMatrix(q_step_cost(s, cost.m, pass.p))).perm;
    cand_obj = objective_of(s, cost, pass.p, cand_q);
    if (cand_obj <= obj) {
      pass.q = std::move(cand_q);
      obj = cand_obj;
    }
    pass.trajectory.push_back(obj);

    ++pass.iterations;
    if (!(obj < before)) {
      if (obj == 0.0 ||
          !repair_sweep(s, cost, pass.p, pass.q, obj, pass.trajectory))
        break;
    }
  }
  pass.objective = obj;
  return pass;
}

}  // namespace

ShuffleResult optimize_permutations(const ImportanceMatrix& s,
                                    const RegMatrix& cost,
                                    const ShuffleOptions& opts) {
  if (cost.m.rows != s.rows || cost.m.cols != s.cols)
    throw std::invalid_argument("cost shape does not match importance matrix");

  const int capacity = max_group_level(s.rows, s.cols);
  if (capacity == 1) {
    ShuffleResult r;
    r.p_out = Permutation::identity(s.rows);
    r.q_in = Permutation::identity(s.cols);
    r.objective = block_diagonality_score(s, cost);
    r.trajectory = {r.objective};
    return r;
  }

  Permutation p0 = opts.init_p.empty() ? Permutation::identity(s.rows)
                                       : Permutation(opts.init_p);
  Permutation q0 = opts.init_q.empty() ? Permutation::identity(s.cols)
                                       : Permutation(opts.init_q);

  Pass best = run_pass(s, cost, p0, q0, opts.max_iters);
  int restarts_used = 0;
  std::mt19937_64 rng(opts.seed);
  for (int r = 0; r < opts.restarts && best.objective > 0.0; ++r) {
    std::vector<int> qm(static_cast<std::size_t>(s.cols));
    std::iota(qm.begin(), qm.end(), 0);
    std::shuffle(qm.begin(), qm.end(), rng);
    Pass trial = run_pass(s, cost, Permutation::identity(s.rows),
                          Permutation(std::move(qm)), opts.max_iters);
    ++restarts_used;
    if (trial.objective < best.objective) best = std::move(trial);
  }

  ShuffleResult result;
  result.p_out = std::move(best.p);
  result.q_in = std::move(best.q);
  result.objective = best.objective;
  result.iterations = best.iterations;
  result.restarts_used = restarts_used;
  result.trajectory = std::move(best.trajectory);
  return result;
}

bool is_groupable(const ImportanceMatrix& s, int g, const Permutation& p_out,
                  const Permutation& q_in, double tol) {
  if (g < 1 || g > max_group_level(s.rows, s.cols))
    throw std::invalid_argument("group level outside capacity");
  const ImportanceMatrix sp = permute_importance(s, p_out, q_in);
  const int blocks = 1 << (g - 1);
  const int bh = sp.rows / blocks, bw = sp.cols / blocks;
  for (int r = 0; r < sp.rows; ++r) {
    for (int c = 0; c < sp.cols; ++c) {
      if (r / bh == c / bw) continue;
      if (std::abs(sp(r, c)) > tol) return false;
    }
  }
  return true;
}

}  // namespace sparsegroup
