// Experiment driver for the MS-GFEM library: single runs, parameter sweeps,
// eigenvalue dumps, and the desk-scale validation bundle.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "msgfem/msgfem.hpp"

namespace {

struct CommonOpts {
  msgfem::RunConfig cfg;
  std::string csv_path;       // empty: stdout
  std::string dump_solution;  // optional nodal field dump
  std::string dump_decomp;    // optional decomposition dump
};

void add_config_flags(CLI::App* app, CommonOpts& o, bool with_tol_loc = true) {
  // config-file values are injected as leading flags; the last occurrence
  // (the explicit command-line one) wins
  app->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app->add_option("--nx", o.cfg.nx, "Elements along x");
  app->add_option("--ny", o.cfg.ny, "Elements along y");
  app->add_option("--m", o.cfg.m, "Subdomain grid count per axis (M = m^2)");
  app->add_option("--overlap", o.cfg.overlap, "Overlap layers of the subdomain cover");
  app->add_option("--ell", o.cfg.ell, "Oversampling layers beyond the overlap");
  auto* nloc = app->add_option("--n_loc", o.cfg.n_loc, "Eigenvectors per subdomain");
  if (with_tol_loc) {
    auto* tol = app->add_option("--tol_loc", o.cfg.tol_loc,
                                "Adaptive local tolerance (excludes --n_loc)");
    tol->excludes(nloc);
    nloc->excludes(tol);
    app->add_option("--adaptive_max", o.cfg.adaptive_max,
                    "Eigenpair cap for adaptive selection");
  }
  app->add_option("--coeff", o.cfg.coeff,
                  "Coefficient: constant | channels | inclusions | file:<path>");
  app->add_option("--coeff_value", o.cfg.coeff_params.value, "Value of the constant generator");
  app->add_option("--contrast", o.cfg.coeff_params.contrast, "Contrast of the two-phase generators");
  app->add_option("--period", o.cfg.coeff_params.period, "Stripe/cell width in elements");
  app->add_flag("--vertical", o.cfg.coeff_params.vertical, "Vertical channel stripes");
  app->add_option("--seed", o.cfg.coeff_params.seed, "Seed of the inclusions generator");
  app->add_option("--fraction", o.cfg.coeff_params.fraction, "Inclusion fill fraction");
  app->add_option("--problem", o.cfg.problem, "Problem preset (benchmark)");
  app->add_option("--eig_tol", o.cfg.eig_tol, "Eigenvalue relative-change tolerance");
  app->add_option("--eig_residual_tol", o.cfg.eig_residual_tol, "Eigenpair residual tolerance");
  app->add_option("--eig_max_iter", o.cfg.eig_max_iter, "Subspace iteration cap");
  app->add_option("--eig_guard", o.cfg.eig_guard, "Guard vectors in the iteration block");
  app->add_option("--dense_threshold", o.cfg.dense_threshold,
                  "Interior-DOF count at or below which the dense route is used");
  app->add_option("--pou_product", o.cfg.pou_product, "PoU product mode: nodal | exact");
  app->add_option("--fine_solver", o.cfg.fine_solver, "Fine-scale solver: ldlt | cg");
  app->add_option("--threads", o.cfg.threads, "Worker count (0: MSGFEM_THREADS env, then cores)");
  app->add_option("--timings", o.cfg.timings, "CSV timing columns: wall | zero");
  app->add_option("--csv", o.csv_path, "Append CSV output here (default stdout)");
  app->add_option("--config", "Flat key=value config file; flags override file values")
      ->type_name("FILE");
}

// Expands "--config FILE" into plain flags inserted at its position, ahead
// of the explicit ones, so command-line flags override the file. The file is
// flat "key = value" lines with '#' comments.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    std::size_t span = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      span = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      span = 1;
    } else {
      continue;
    }
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::vector<std::string> expanded;
    std::string line;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string t) {
        const auto a = t.find_first_not_of(" \t\r");
        const auto b = t.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : t.substr(a, b - a + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw std::runtime_error("config file: malformed line [" + line + "]");
      expanded.push_back("--" + key + "=" + value);
    }
    args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i + span));
    args.insert(args.begin() + static_cast<long>(i), expanded.begin(), expanded.end());
    i += expanded.empty() ? 0 : expanded.size() - 1;
  }
  return args;
}

std::ofstream open_append(const std::string& path, bool& fresh) {
  std::ifstream probe(path);
  fresh = !probe.good() || probe.peek() == std::ifstream::traits_type::eof();
  probe.close();
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  return out;
}

void emit_row(const CommonOpts& o, const msgfem::RunResult& r) {
  if (o.csv_path.empty()) {
    std::cout << msgfem::kCsvHeader << '\n' << msgfem::csv_row(o.cfg, r) << '\n';
  } else {
    bool fresh = false;
    auto out = open_append(o.csv_path, fresh);
    if (fresh) out << msgfem::kCsvHeader << '\n';
    out << msgfem::csv_row(o.cfg, r) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args;
  try {
    args = expand_config(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  std::vector<const char*> argp = {argc > 0 ? argv[0] : "msgfem"};
  for (const auto& a : args) argp.push_back(a.c_str());
  argc = static_cast<int>(argp.size());
  argv = const_cast<char**>(argp.data());

  CLI::App app{"MS-GFEM experiment driver"};
  app.require_subcommand(1);

  CommonOpts run_o;
  auto* run_cmd = app.add_subcommand("run", "One full solve; appends a CSV row");
  add_config_flags(run_cmd, run_o);
  bool strict = false;
  run_cmd->add_flag("--strict", strict, "Exit nonzero when the error bound is violated");
  run_cmd->add_option("--dump-solution", run_o.dump_solution, "Write the nodal field here");
  run_cmd->add_option("--dump-decomp", run_o.dump_decomp, "Write the decomposition layout here");

  CommonOpts sweep_o;
  std::string axis = "n_loc";
  std::vector<int> values;
  auto* sweep_cmd = app.add_subcommand("sweep", "One CSV row per value of the chosen axis");
  add_config_flags(sweep_cmd, sweep_o, /*with_tol_loc=*/false);
  sweep_cmd->add_option("--axis", axis, "Sweep axis: n_loc | ell | m")->required();
  sweep_cmd->add_option("--values", values, "Ascending axis values")->required()->expected(-1);

  CommonOpts eig_o;
  std::vector<int> ids;
  auto* eig_cmd = app.add_subcommand("eig-dump", "Per-subdomain eigenvalue table (CSV)");
  add_config_flags(eig_cmd, eig_o);
  eig_cmd->add_option("--ids", ids, "Subdomain ids (default: all)");

  CommonOpts val_o;
  val_o.cfg.nx = val_o.cfg.ny = 32;
  val_o.cfg.m = 2;
  val_o.cfg.ell = 4;
  val_o.cfg.n_loc = 6;
  val_o.cfg.coeff = "channels";
  val_o.cfg.coeff_params.contrast = 1e3;
  val_o.cfg.coeff_params.period = 4;
  auto* val_cmd = app.add_subcommand(
      "validate", "Desk-scale verification bundle; exit code reflects the outcome");
  add_config_flags(val_cmd, val_o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      run_o.cfg.strict = strict;
      msgfem::RunResult r = msgfem::run_experiment(run_o.cfg);
      emit_row(run_o, r);
      if (!run_o.dump_solution.empty()) {
        std::ofstream out(run_o.dump_solution);
        msgfem::write_solution(out, r.problem.mesh, r.sol.u);
      }
      if (!run_o.dump_decomp.empty()) {
        std::ofstream out(run_o.dump_decomp);
        msgfem::dump_decomposition(out, r.problem.mesh, r.decomp);
      }
      std::cerr << "err_h1_rel=" << msgfem::g17(r.error.h1_rel)
                << " err_energy_rel=" << msgfem::g17(r.error.energy_rel)
                << " bound=" << (r.bound.holds ? "holds" : "VIOLATED") << '\n';
      if (strict && !r.bound.holds) return 2;
      return 0;
    }
    if (sweep_cmd->parsed()) {
      const auto ax = msgfem::parse_axis(axis);
      if (sweep_o.csv_path.empty()) {
        msgfem::sweep(sweep_o.cfg, ax, values, std::cout, true);
      } else {
        bool fresh = false;
        auto out = open_append(sweep_o.csv_path, fresh);
        msgfem::sweep(sweep_o.cfg, ax, values, out, fresh);
      }
      return 0;
    }
    if (eig_cmd->parsed()) {
      if (eig_o.csv_path.empty()) {
        msgfem::eig_dump(eig_o.cfg, ids, std::cout);
      } else {
        std::ofstream out(eig_o.csv_path);
        if (!out) throw std::runtime_error("cannot open " + eig_o.csv_path);
        msgfem::eig_dump(eig_o.cfg, ids, out);
      }
      return 0;
    }
    if (val_cmd->parsed()) {
      msgfem::ValidationReport rep = msgfem::validate_run(val_o.cfg);
      rep.print(std::cout);
      return rep.all_pass() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
