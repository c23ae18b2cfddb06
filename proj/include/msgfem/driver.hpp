#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "gfem.hpp"
#include "grid.hpp"
#include "local_solver.hpp"
#include "oracle.hpp"

namespace msgfem {

struct RunConfig {
  int nx = 64, ny = 64;
  int m = 2;
  int overlap = 2;
  int ell = 4;
  int n_loc = 10;        // fixed local dimension; ignored when tol_loc > 0
  double tol_loc = 0.0;  // > 0 switches to adaptive selection
  int adaptive_max = 30;

  std::string coeff = "constant";  // constant | channels | inclusions | file:<path>
  CoefficientParams coeff_params;
  std::string problem = "benchmark";

  double eig_tol = 1e-9;
  double eig_residual_tol = 1e-8;
  int eig_max_iter = 200;
  int eig_guard = 3;
  int dense_threshold = 600;
  std::string pou_product = "nodal";  // nodal | exact
  std::string fine_solver = "ldlt";   // ldlt | cg

  int threads = 0;  // 0: MSGFEM_THREADS env, then hardware count
  bool strict = false;
  std::string timings = "wall";  // wall | zero

  bool adaptive() const { return tol_loc > 0.0; }

  void validate() const {
    if (nx < 1 || ny < 1) throw std::invalid_argument("config: nx, ny must be >= 1");
    if (m < 1) throw std::invalid_argument("config: m must be >= 1");
    if (overlap < 1) throw std::invalid_argument("config: overlap must be >= 1");
    if (ell < 1) throw std::invalid_argument("config: ell must be >= 1");
    if (!adaptive() && n_loc < 0) throw std::invalid_argument("config: n_loc must be >= 0");
    if (adaptive() && adaptive_max < 1)
      throw std::invalid_argument("config: adaptive_max must be >= 1");
    if (pou_product != "nodal" && pou_product != "exact")
      throw std::invalid_argument("config: pou_product must be nodal or exact");
    if (fine_solver != "ldlt" && fine_solver != "cg")
      throw std::invalid_argument("config: fine_solver must be ldlt or cg");
    if (timings != "wall" && timings != "zero")
      throw std::invalid_argument("config: timings must be wall or zero");
  }
};

inline int resolve_threads(const RunConfig& cfg) {
  if (cfg.threads > 0) return cfg.threads;
  if (const char* env = std::getenv("MSGFEM_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) return t;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

/// Runs fn(0..n-1) on a worker pool. Task results must be independent;
/// exceptions are collected and the lowest-index one is rethrown.
template <class F>
inline void parallel_for(int n, int threads, F&& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct ProblemSetup {
  Mesh mesh;
  BoundaryTags tags;
  CoefficientField coeff;
  ProblemData data;
};

inline ProblemSetup make_problem(const RunConfig& cfg) {
  ProblemSetup p;
  p.mesh = build_mesh(cfg.nx, cfg.ny);
  if (cfg.problem == "benchmark") {
    p.tags = classify_boundary(p.mesh, BoundarySpec::left_right_dirichlet());
    p.data = ProblemData::benchmark();
  } else {
    throw std::invalid_argument("config: unknown problem preset \"" + cfg.problem + "\"");
  }
  if (cfg.coeff.rfind("file:", 0) == 0)
    p.coeff = load_coefficient(cfg.coeff.substr(5), p.mesh);
  else
    p.coeff = builtin_coefficient(cfg.coeff, cfg.coeff_params, p.mesh);
  return p;
}

inline LocalEigenOptions eigen_options(const RunConfig& cfg) {
  LocalEigenOptions opt;
  opt.n_loc = cfg.adaptive() ? cfg.adaptive_max : cfg.n_loc;
  opt.tol = cfg.eig_tol;
  opt.residual_tol = std::max(cfg.eig_residual_tol, cfg.eig_tol);
  opt.max_iterations = cfg.eig_max_iter;
  opt.guard_vectors = cfg.eig_guard;
  opt.dense_threshold = cfg.dense_threshold;
  return opt;
}

/// All subdomain solves, executed concurrently over the worker pool; results
/// are merged by subdomain id, so the output order does not depend on the
/// schedule.
inline std::vector<LocalSolveResult> solve_all_locals(const ProblemSetup& p,
                                                      const Decomposition& decomp,
                                                      const LocalEigenOptions& opt,
                                                      PouProduct pou_mode, int threads) {
  std::vector<LocalSolveResult> out(decomp.size());
  parallel_for(decomp.size(), threads, [&](int i) {
    const auto t0 = std::chrono::steady_clock::now();
    LocalSystem sys = build_local_system(p.mesh, p.tags, p.coeff, p.data, decomp, i, pou_mode);
    LocalSpectralBasis basis = solve_subdomain(sys, opt);
    out[i] = make_result(sys, std::move(basis));
    out[i].seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });
  return out;
}

inline std::vector<int> member_counts(const RunConfig& cfg,
                                      const std::vector<LocalSolveResult>& locals) {
  std::vector<int> counts(locals.size());
  for (std::size_t i = 0; i < locals.size(); ++i) {
    if (cfg.adaptive())
      counts[i] = adaptive_select(locals[i].basis, cfg.tol_loc).n;
    else
      counts[i] = locals[i].basis.n_members();
  }
  return counts;
}

inline double h_ratio(const Mesh& mesh, const Decomposition& decomp) {
  double sum = 0.0;
  int n = 0;
  for (const auto& s : decomp.subdomains)
    if (s.is_interior(mesh)) {
      sum += s.H / s.H_star;
      ++n;
    }
  if (n == 0) {
    for (const auto& s : decomp.subdomains) sum += s.H / s.H_star;
    n = decomp.size();
  }
  return sum / n;
}

namespace detail {
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace detail

inline std::string config_run_id(const RunConfig& cfg) {
  std::string s = std::to_string(cfg.nx) + "|" + std::to_string(cfg.ny) + "|" +
                  std::to_string(cfg.m) + "|" + std::to_string(cfg.overlap) + "|" +
                  std::to_string(cfg.ell) + "|" + std::to_string(cfg.n_loc) + "|" +
                  g17(cfg.tol_loc) + "|" + std::to_string(cfg.adaptive_max) + "|" + cfg.coeff +
                  "|" + g17(cfg.coeff_params.value) + "|" + g17(cfg.coeff_params.contrast) + "|" +
                  std::to_string(cfg.coeff_params.period) + "|" +
                  std::to_string(cfg.coeff_params.vertical) + "|" +
                  std::to_string(cfg.coeff_params.seed) + "|" + g17(cfg.coeff_params.fraction) +
                  "|" + cfg.problem + "|" + g17(cfg.eig_tol) + "|" + cfg.pou_product + "|" +
                  cfg.fine_solver;
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(detail::fnv1a64(s)));
  return buf;
}

struct RunResult {
  ProblemSetup problem;
  GlobalSystem sys;
  Decomposition decomp;
  Vec u_e;
  std::vector<LocalSolveResult> locals;
  std::vector<int> counts;
  CoarseSpace coarse;
  GfemSolution sol;
  ErrorReport error;
  BoundReport bound;
  double h_ratio_mean = 0.0;
  double t_fine = 0.0, t_local = 0.0, t_coarse = 0.0;
  std::string run_id;
};

inline const char* kCsvHeader =
    "run_id,nx,ny,m,overlap,ell,n_loc,H_ratio,err_h1_rel,err_energy_rel,bound_rhs,kappa,"
    "kappa_star,t_fine_s,t_local_s,t_coarse_s";

inline std::string csv_row(const RunConfig& cfg, const RunResult& r) {
  const bool zero_t = cfg.timings == "zero";
  std::string row = r.run_id;
  row += "," + std::to_string(cfg.nx) + "," + std::to_string(cfg.ny) + "," + std::to_string(cfg.m);
  row += "," + std::to_string(cfg.overlap) + "," + std::to_string(cfg.ell);
  row += "," + std::to_string(cfg.adaptive() ? -1 : cfg.n_loc);
  row += "," + g17(r.h_ratio_mean);
  row += "," + g17(r.error.h1_rel) + "," + g17(r.error.energy_rel) + "," + g17(r.bound.rhs);
  row += "," + std::to_string(r.decomp.kappa) + "," + std::to_string(r.decomp.kappa_star);
  row += "," + g17(zero_t ? 0.0 : r.t_fine) + "," + g17(zero_t ? 0.0 : r.t_local) + "," +
         g17(zero_t ? 0.0 : r.t_coarse);
  return row;
}

/// Full pipeline: fine reference solve, decomposition, concurrent local
/// solves, coarse Galerkin solve, error metrics and the bound check.
inline RunResult run_experiment(const RunConfig& cfg) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };

  RunResult r;
  r.run_id = config_run_id(cfg);
  r.problem = make_problem(cfg);
  r.sys = assemble_global_system(r.problem.mesh, r.problem.tags, r.problem.coeff, r.problem.data);

  auto t0 = clock::now();
  r.u_e = fine_solve(r.problem.mesh, r.problem.tags, r.sys, r.problem.data,
                     cfg.fine_solver == "cg" ? FineSolverKind::Cg : FineSolverKind::Ldlt);
  r.t_fine = seconds_since(t0);

  r.decomp = decompose(r.problem.mesh, r.problem.tags, cfg.m, cfg.overlap, cfg.ell);
  r.h_ratio_mean = h_ratio(r.problem.mesh, r.decomp);

  t0 = clock::now();
  r.locals = solve_all_locals(r.problem, r.decomp, eigen_options(cfg),
                              parse_pou_product(cfg.pou_product), resolve_threads(cfg));
  r.t_local = seconds_since(t0);

  r.counts = member_counts(cfg, r.locals);

  t0 = clock::now();
  r.coarse = build_coarse_space(r.problem.mesh, r.locals, r.counts);
  r.sol = coarse_solve(r.coarse, r.sys.K, r.sys.F);
  r.t_coarse = seconds_since(t0);

  r.error = error_report(r.u_e, r.sol.u, r.sys);
  r.bound = verify_global_bound(r.u_e, r.sol, r.sys.K, r.decomp, r.locals, r.counts);
  return r;
}

enum class SweepAxis { NLoc, Ell, M };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "n_loc") return SweepAxis::NLoc;
  if (s == "ell") return SweepAxis::Ell;
  if (s == "m") return SweepAxis::M;
  throw std::invalid_argument("sweep axis must be n_loc, ell, or m, got \"" + s + "\"");
}

/// One CSV row per axis value. Along the n_loc axis the local eigenbases are
/// solved once at the largest value and truncated for the smaller ones.
inline std::vector<RunResult> sweep(const RunConfig& base, SweepAxis axis,
                                    const std::vector<int>& values, std::ostream& csv,
                                    bool header = true) {
  if (values.empty()) throw std::invalid_argument("sweep: empty value list");
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] <= values[i - 1])
      throw std::invalid_argument("sweep: values must be strictly ascending");
  if (header) csv << kCsvHeader << '\n';

  std::vector<RunResult> out;
  if (axis == SweepAxis::NLoc) {
    if (base.adaptive()) throw std::invalid_argument("sweep over n_loc requires fixed n_loc mode");
    RunConfig cfg = base;
    cfg.n_loc = values.back();
    RunResult full = run_experiment(cfg);
    for (int v : values) {
      RunConfig cv = base;
      cv.n_loc = v;
      RunResult r;
      r.run_id = config_run_id(cv);
      r.problem = full.problem;
      r.sys = full.sys;
      r.decomp = full.decomp;
      r.u_e = full.u_e;
      r.locals = full.locals;
      r.h_ratio_mean = full.h_ratio_mean;
      r.t_fine = full.t_fine;
      r.t_local = full.t_local;
      r.counts.resize(r.locals.size());
      for (std::size_t i = 0; i < r.locals.size(); ++i) {
        const int extra = r.locals[i].basis.includes_constant ? 1 : 0;
        r.counts[i] = std::min(v + extra, r.locals[i].basis.n_members());
      }
      const auto t0 = std::chrono::steady_clock::now();
      r.coarse = build_coarse_space(r.problem.mesh, r.locals, r.counts);
      r.sol = coarse_solve(r.coarse, r.sys.K, r.sys.F);
      r.t_coarse =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      r.error = error_report(r.u_e, r.sol.u, r.sys);
      r.bound = verify_global_bound(r.u_e, r.sol, r.sys.K, r.decomp, r.locals, r.counts);
      csv << csv_row(cv, r) << '\n';
      out.push_back(std::move(r));
    }
    return out;
  }

  for (int v : values) {
    RunConfig cv = base;
    if (axis == SweepAxis::Ell)
      cv.ell = v;
    else
      cv.m = v;
    RunResult r = run_experiment(cv);
    csv << csv_row(cv, r) << '\n';
    out.push_back(std::move(r));
  }
  return out;
}

/// Local spectra for the requested subdomain ids (all when empty), written as
/// the eigenvalue CSV table.
inline std::vector<LocalSpectralBasis> eig_dump(const RunConfig& cfg, std::vector<int> ids,
                                                std::ostream& out) {
  cfg.validate();
  ProblemSetup p = make_problem(cfg);
  Decomposition decomp = decompose(p.mesh, p.tags, cfg.m, cfg.overlap, cfg.ell);
  if (ids.empty())
    for (int i = 0; i < decomp.size(); ++i) ids.push_back(i);
  for (int id : ids)
    if (id < 0 || id >= decomp.size())
      throw std::invalid_argument("eig_dump: unknown subdomain id " + std::to_string(id));
  const LocalEigenOptions opt = eigen_options(cfg);
  const PouProduct mode = parse_pou_product(cfg.pou_product);
  std::vector<LocalSpectralBasis> bases(ids.size());
  parallel_for(static_cast<int>(ids.size()), resolve_threads(cfg), [&](int k) {
    LocalSystem sys = build_local_system(p.mesh, p.tags, p.coeff, p.data, decomp, ids[k], mode);
    bases[k] = solve_subdomain(sys, opt);
  });
  write_eigenvalue_csv(out, bases);
  return bases;
}

}  // namespace msgfem
