// Command-line harness: gradient-accuracy sweeps, delta-consistency sweeps,
// scalability benchmarks, single-instance reports, and instance generation.
//
// Every CSV starts with the schema line "# dxpp-csv v1" and is accompanied
// by a JSON manifest (<csv>.manifest.json) recording the resolved config,
// seeds, library version, and host description; re-running with
// `--config <manifest>` reproduces all non-timing columns exactly.
//
// Exit codes: 0 success, 1 numerical failure, 2 usage/parse error.

#include "diffqp/diffqp.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <sys/utsname.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace dq = diffqp;
using dq::Index;
using dq::Matrix;
using dq::Vector;

namespace {

// ---------------------------------------------------------------------------
// Shared configuration

struct RunConfig {
  std::string sizes;
  int seeds = 50;
  std::uint64_t seed_base = 1;
  double delta = 1e-6;
  double zeta = 10.0;
  double eps_active = 1e-5;
  double eps_abs = 1e-6;
  std::string solver_choice = "builtin-ipm";
  bool prune = true;
  int repetitions = 5;
  std::string family = "random_qp";
  double timeout_s = 300.0;
  bool all_blocks = false;
  std::string out_dir = ".";
  double risk_aversion = 10.0;
  double turnover = 0.5;
};

int thread_count() {
  if (const char* env = std::getenv("DIFFQP_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_ms(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct SizeSpec {
  Index a = 0;  // n / points / horizon
  Index b = 0;  // m / dim / assets (0 when absent)
};

std::vector<SizeSpec> parse_sizes(const std::string& text) {
  std::vector<SizeSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    SizeSpec spec;
    const auto xpos = item.find('x');
    try {
      if (xpos == std::string::npos) {
        spec.a = static_cast<Index>(std::stoll(item));
      } else {
        spec.a = static_cast<Index>(std::stoll(item.substr(0, xpos)));
        spec.b = static_cast<Index>(std::stoll(item.substr(xpos + 1)));
      }
    } catch (const std::exception&) {
      throw CLI::ValidationError("sizes", "cannot parse size entry '" + item + "'");
    }
    if (spec.a < 1 || spec.b < 0) {
      throw CLI::ValidationError("sizes", "bad size entry '" + item + "'");
    }
    out.push_back(spec);
  }
  if (out.empty()) throw CLI::ValidationError("sizes", "empty size list");
  return out;
}

// ---------------------------------------------------------------------------
// Manifest / config plumbing

nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["sizes"] = cfg.sizes;
  j["seeds"] = cfg.seeds;
  j["seed_base"] = cfg.seed_base;
  j["delta"] = cfg.delta;
  j["zeta"] = cfg.zeta;
  j["eps_active"] = cfg.eps_active;
  j["eps_abs"] = cfg.eps_abs;
  j["solver_choice"] = cfg.solver_choice;
  j["prune"] = cfg.prune;
  j["repetitions"] = cfg.repetitions;
  j["family"] = cfg.family;
  j["timeout_s"] = cfg.timeout_s;
  j["all_blocks"] = cfg.all_blocks;
  j["risk_aversion"] = cfg.risk_aversion;
  j["turnover"] = cfg.turnover;
  return j;
}

void apply_config_file(const std::string& path, CLI::App* cmd, RunConfig& cfg) {
  nlohmann::json j = dq::detail::parse_json_file(path);
  if (j.contains("config")) j = j.at("config");  // accept a manifest directly
  auto absent = [&](const char* flag) {
    return cmd->get_option_no_throw(flag) == nullptr || cmd->count(flag) == 0;
  };
  auto take = [&](const char* key, const char* flag, auto& field) {
    if (j.contains(key) && absent(flag)) {
      field = j.at(key).get<std::decay_t<decltype(field)>>();
    }
  };
  take("sizes", "--sizes", cfg.sizes);
  take("seeds", "--seeds", cfg.seeds);
  take("seed_base", "--seed-base", cfg.seed_base);
  take("delta", "--delta", cfg.delta);
  take("zeta", "--zeta", cfg.zeta);
  take("eps_active", "--eps-active", cfg.eps_active);
  take("eps_abs", "--eps-abs", cfg.eps_abs);
  take("solver_choice", "--solver", cfg.solver_choice);
  take("prune", "--prune", cfg.prune);
  take("repetitions", "--reps", cfg.repetitions);
  take("family", "--family", cfg.family);
  take("timeout_s", "--timeout", cfg.timeout_s);
  take("all_blocks", "--all-blocks", cfg.all_blocks);
  take("risk_aversion", "--risk-aversion", cfg.risk_aversion);
  take("turnover", "--turnover", cfg.turnover);
}

void write_manifest(const std::string& csv_path, const std::string& command,
                    const RunConfig& cfg, const std::vector<std::string>& notes) {
  nlohmann::json j;
  j["command"] = command;
  j["version"] = DIFFQP_VERSION_STRING;
  j["csv"] = std::filesystem::path(csv_path).filename().string();
  utsname u{};
  if (::uname(&u) == 0) {
    j["host"] = {{"sysname", u.sysname},
                 {"release", u.release},
                 {"machine", u.machine},
                 {"threads", thread_count()}};
  }
  j["config"] = config_to_json(cfg);
  j["notes"] = notes;
  std::ofstream f(csv_path + ".manifest.json");
  f << j.dump(2) << "\n";
}

std::string csv_path_for(const RunConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.out_dir);
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

void require_known_solver(const std::string& choice) {
  if (dq::solver_registry().find(choice) == dq::solver_registry().end()) {
    throw CLI::ValidationError("solver", "unknown solver choice '" + choice + "'");
  }
}

// ---------------------------------------------------------------------------
// Instance plumbing shared by commands

dq::SolverSettings settings_from(const RunConfig& cfg) {
  dq::SolverSettings st;
  st.eps_abs = cfg.eps_abs;
  st.solver_choice = cfg.solver_choice;
  return st;
}

dq::PenaltyConfig penalty_config_from(const RunConfig& cfg, const dq::QpSolution& sol) {
  dq::PenaltyConfig pc;
  pc.delta = cfg.delta;
  pc.zeta = cfg.zeta;
  pc.prune = cfg.prune;
  return dq::set_penalty_weights(sol, cfg.zeta, pc);
}

const std::vector<dq::ParamBlock>& all_param_blocks() {
  static const std::vector<dq::ParamBlock> blocks = {
      dq::ParamBlock::P, dq::ParamBlock::q, dq::ParamBlock::A,
      dq::ParamBlock::b, dq::ParamBlock::C, dq::ParamBlock::d};
  return blocks;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradRow {
  Index n = 0;
  Index m = 0;
  std::uint64_t seed = 0;
  double eps_rel = std::numeric_limits<double>::quiet_NaN();
  double forward_ms = 0.0;
  double backward_ms = 0.0;
  bool ok = false;
  std::string error;
};

GradRow gradcheck_instance(Index n, Index m, std::uint64_t seed, const RunConfig& cfg) {
  GradRow row;
  row.n = n;
  row.m = m;
  row.seed = seed;
  try {
    const dq::BenchInstance inst = dq::gen_random_qp(n, m, seed);
    const double t0 = now_ms();
    const dq::QpSolution sol = dq::solve(inst.problem, settings_from(cfg));
    row.forward_ms = now_ms() - t0;
    if (sol.status != dq::SolveStatus::optimal) {
      row.error = std::string("forward solve: ") + dq::to_string(sol.status);
      return row;
    }
    const dq::ActiveSet active = dq::classify_active_set(inst.problem, sol, cfg.eps_active);
    const dq::PenaltyConfig pc = penalty_config_from(cfg, sol);

    const std::vector<dq::ParamBlock> blocks =
        cfg.all_blocks ? all_param_blocks() : std::vector<dq::ParamBlock>{dq::ParamBlock::q};

    double t_backward = 0.0;
    double tb = now_ms();
    const dq::PenaltyHessian hess = dq::assemble_hessian(inst.problem, sol, active, pc);
    t_backward += now_ms() - tb;

    double num2 = 0.0;
    double den2 = 0.0;
    for (dq::ParamBlock block : blocks) {
      tb = now_ms();
      const dq::RhsAssembly rhs = dq::assemble_rhs(inst.problem, sol, active, pc, block);
      const dq::SensitivityResult sens = dq::solve_jacobian(hess, rhs);
      t_backward += now_ms() - tb;
      const dq::KktJacobian oracle = dq::kkt_jacobian_reduced(inst.problem, sol, active, block);
      num2 += (sens.jacobian - oracle.dz).squaredNorm();
      den2 += oracle.dz.squaredNorm();
    }
    row.backward_ms = t_backward;
    if (den2 == 0.0) {
      row.error = "zero reference gradient";
      return row;
    }
    row.eps_rel = std::sqrt(num2 / den2);
    row.ok = true;
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

int cmd_gradcheck(const RunConfig& cfg) {
  require_known_solver(cfg.solver_choice);
  const std::vector<SizeSpec> sizes = parse_sizes(cfg.sizes);
  struct Job {
    Index n, m;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const SizeSpec& s : sizes) {
    for (int k = 0; k < cfg.seeds; ++k) {
      jobs.push_back({s.a, s.b, cfg.seed_base + static_cast<std::uint64_t>(k)});
    }
  }

  std::vector<GradRow> rows(jobs.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) break;
      rows[i] = gradcheck_instance(jobs[i].n, jobs[i].m, jobs[i].seed, cfg);
    }
  };
  const int nthreads = std::min<int>(thread_count(), static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  const std::string path = csv_path_for(cfg, "gradcheck.csv");
  std::ofstream csv(path);
  csv << "# dxpp-csv v1\n";
  csv << "n,m,seed,eps_rel,forward_ms,backward_ms\n";
  for (const GradRow& r : rows) {
    csv << r.n << ',' << r.m << ',' << r.seed << ',' << fmt_g(r.eps_rel) << ','
        << fmt_ms(r.forward_ms) << ',' << fmt_ms(r.backward_ms) << "\n";
  }
  csv.close();

  bool any_failure = false;
  std::vector<std::string> notes;
  size_t idx = 0;
  for (const SizeSpec& s : sizes) {
    double sum = 0.0, sum2 = 0.0;
    int ok = 0, failed = 0;
    for (int k = 0; k < cfg.seeds; ++k, ++idx) {
      const GradRow& r = rows[idx];
      if (r.ok) {
        sum += r.eps_rel;
        sum2 += r.eps_rel * r.eps_rel;
        ++ok;
      } else {
        ++failed;
        any_failure = true;
        std::cerr << "error: size " << s.a << "x" << s.b << " seed " << r.seed << ": " << r.error
                  << "\n";
      }
    }
    const double mean = ok > 0 ? sum / ok : std::numeric_limits<double>::quiet_NaN();
    const double var = ok > 1 ? std::max(0.0, sum2 / ok - mean * mean) : 0.0;
    std::cout << "size " << s.a << "x" << s.b << ": mean eps_rel = " << fmt_short(mean)
              << ", std = " << fmt_short(std::sqrt(var)) << " (" << ok << " ok, " << failed
              << " failed)\n";
    if (failed > 0) {
      notes.push_back("size " + std::to_string(s.a) + "x" + std::to_string(s.b) + ": " +
                      std::to_string(failed) + " instance(s) failed");
    }
  }
  write_manifest(path, "gradcheck", cfg, notes);
  std::cout << "wrote " << path << "\n";
  return any_failure ? 1 : 0;
}

// ---------------------------------------------------------------------------
// bench

dq::BenchInstance make_bench_instance(const std::string& family, const SizeSpec& size,
                                      std::uint64_t seed, const RunConfig& cfg) {
  if (family == "simplex") return dq::gen_simplex_projection(size.a, seed);
  if (family == "chain") {
    return dq::gen_chain_projection(size.a, size.b > 0 ? size.b : 1, seed);
  }
  if (family == "random_qp") return dq::gen_random_qp(size.a, size.b, seed);
  if (family == "portfolio") {
    return dq::gen_portfolio_qp(size.a, size.b, cfg.risk_aversion, cfg.turnover, seed);
  }
  throw CLI::ValidationError("family", "unknown family '" + family + "'");
}

std::string size_label(const dq::BenchInstance& inst) {
  std::string s;
  for (size_t i = 0; i < inst.size_desc.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(inst.size_desc[i]);
  }
  return s;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

int cmd_bench(const RunConfig& cfg) {
  require_known_solver(cfg.solver_choice);
  if (cfg.family != "simplex" && cfg.family != "chain") {
    throw CLI::ValidationError("family", "bench supports families 'simplex' and 'chain'");
  }
  const std::vector<SizeSpec> sizes = parse_sizes(cfg.sizes);
  const std::string path = csv_path_for(cfg, "bench.csv");
  std::ofstream csv(path);
  csv << "# dxpp-csv v1\n";
  csv << "family,size,rep,forward_ms,backward_ms,total_ms\n";

  std::vector<std::string> notes;
  bool any_failure = false;
  for (const SizeSpec& size : sizes) {
    std::vector<double> fwd, bwd, tot;
    const double size_start = now_ms();
    std::string label;
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
      const std::uint64_t seed = cfg.seed_base + static_cast<std::uint64_t>(rep);
      const dq::BenchInstance inst = make_bench_instance(cfg.family, size, seed, cfg);
      if (label.empty()) label = size_label(inst);
      try {
        const double t0 = now_ms();
        const dq::QpSolution sol = dq::solve(inst.problem, settings_from(cfg));
        const double forward = now_ms() - t0;
        if (sol.status != dq::SolveStatus::optimal) {
          throw std::runtime_error(std::string("forward solve: ") + dq::to_string(sol.status));
        }
        const double t1 = now_ms();
        const dq::ActiveSet active = dq::classify_active_set(inst.problem, sol, cfg.eps_active);
        const dq::PenaltyConfig pc = penalty_config_from(cfg, sol);
        const dq::PenaltyHessian hess = dq::assemble_hessian(inst.problem, sol, active, pc);
        dq::NormalSampler rng(seed ^ 0x9e3779b97f4a7c15ull);
        Vector r(inst.problem.n);
        rng.fill_normal(r);
        dq::BlockMask mask = dq::BlockMask::none();
        mask.q = mask.b = mask.d = true;  // vector-data gradients (layer use case)
        const dq::SensitivityResult sens =
            dq::vjp(hess, inst.problem, sol, active, pc, r, mask);
        (void)sens;
        const double backward = now_ms() - t1;
        fwd.push_back(forward);
        bwd.push_back(backward);
        tot.push_back(forward + backward);
        csv << cfg.family << ',' << label << ',' << rep << ',' << fmt_ms(forward) << ','
            << fmt_ms(backward) << ',' << fmt_ms(forward + backward) << "\n";
        csv.flush();
      } catch (const std::exception& e) {
        any_failure = true;
        std::cerr << "error: family " << cfg.family << " size " << label << " rep " << rep << ": "
                  << e.what() << "\n";
        notes.push_back("failure at size " + label + " rep " + std::to_string(rep) + ": " +
                        e.what());
      }
      if ((now_ms() - size_start) / 1000.0 > cfg.timeout_s) {
        const std::string note = "timeout at size " + label + " after " +
                                 std::to_string(rep + 1) + " repetition(s)";
        std::cerr << "warning: " << note << "\n";
        notes.push_back(note);
        break;
      }
    }
    std::cout << cfg.family << " " << label << ": forward median " << fmt_short(median_of(fwd))
              << " ms (mean " << fmt_short(mean_of(fwd)) << "), backward median "
              << fmt_short(median_of(bwd)) << " ms (mean " << fmt_short(mean_of(bwd))
              << "), total median " << fmt_short(median_of(tot)) << " ms (mean "
              << fmt_short(mean_of(tot)) << ")\n";
  }
  csv.close();
  write_manifest(path, "bench", cfg, notes);
  std::cout << "wrote " << path << "\n";
  return any_failure ? 1 : 0;
}

// ---------------------------------------------------------------------------
// delta-sweep

int cmd_delta_sweep(const RunConfig& cfg) {
  require_known_solver(cfg.solver_choice);
  const std::vector<SizeSpec> sizes = parse_sizes(cfg.sizes);
  const SizeSpec size = sizes.front();

  // Pick a nondegenerate instance: healthy margin and strictly positive
  // multipliers on every active row.
  dq::SolverSettings tight = settings_from(cfg);
  tight.eps_abs = std::min(tight.eps_abs, 1e-10);
  std::optional<dq::BenchInstance> chosen;
  dq::QpSolution sol;
  dq::ActiveSet active;
  std::uint64_t chosen_seed = 0;
  for (std::uint64_t seed = cfg.seed_base; seed < cfg.seed_base + 100; ++seed) {
    const dq::BenchInstance inst = dq::gen_random_qp(size.a, size.b, seed);
    dq::QpSolution s = dq::solve(inst.problem, tight);
    if (s.status != dq::SolveStatus::optimal) continue;
    dq::ActiveSet a = dq::classify_active_set(inst.problem, s, cfg.eps_active);
    if (a.margin < 0.1) continue;
    bool strict = true;
    for (Index i : a.active) strict = strict && s.mu_star[i] > 1e-3;
    if (!strict) continue;
    chosen = inst;
    sol = std::move(s);
    active = std::move(a);
    chosen_seed = seed;
    break;
  }
  if (!chosen) {
    std::cerr << "error: no nondegenerate instance found in 100 seeds\n";
    return 1;
  }
  std::cout << "instance: random_qp " << size.a << "x" << size.b << " seed " << chosen_seed
            << " (margin " << fmt_short(active.margin) << ")\n";

  const dq::KktJacobian oracle =
      dq::kkt_jacobian_reduced(chosen->problem, sol, active, dq::ParamBlock::q);

  const std::string path = csv_path_for(cfg, "delta_sweep.csv");
  std::ofstream csv(path);
  csv << "# dxpp-csv v1\n";
  csv << "delta,eps_rel,eps_rel_unpruned\n";
  for (int k = 1; k <= 7; ++k) {
    const double delta = std::pow(10.0, -k);
    dq::PenaltyConfig pc;
    pc.delta = delta;
    pc.zeta = cfg.zeta;
    pc.prune = true;
    pc = dq::set_penalty_weights(sol, cfg.zeta, pc);
    const dq::PenaltyHessian h_p = dq::assemble_hessian(chosen->problem, sol, active, pc);
    const dq::RhsAssembly rhs_p = dq::assemble_rhs(chosen->problem, sol, active, pc,
                                                   dq::ParamBlock::q);
    const Matrix z_p = dq::solve_jacobian(h_p, rhs_p).jacobian;

    pc.prune = false;
    const dq::PenaltyHessian h_u = dq::assemble_hessian(chosen->problem, sol, active, pc);
    const dq::RhsAssembly rhs_u = dq::assemble_rhs(chosen->problem, sol, active, pc,
                                                   dq::ParamBlock::q);
    const Matrix z_u = dq::solve_jacobian(h_u, rhs_u).jacobian;

    const double eps_p = dq::relative_discrepancy(z_p, oracle.dz);
    const double eps_u = dq::relative_discrepancy(z_u, oracle.dz);
    csv << fmt_g(delta) << ',' << fmt_g(eps_p) << ',' << fmt_g(eps_u) << "\n";
    std::cout << "delta " << fmt_short(delta) << ": eps_rel " << fmt_short(eps_p)
              << " (unpruned " << fmt_short(eps_u) << ")\n";
  }
  csv.close();
  write_manifest(path, "delta-sweep", cfg, {});
  std::cout << "wrote " << path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// single

void print_vector(const std::string& label, const Vector& v, Index limit = 20) {
  std::cout << label << " = [";
  const Index shown = std::min<Index>(v.size(), limit);
  for (Index i = 0; i < shown; ++i) {
    if (i) std::cout << ", ";
    std::cout << fmt_short(v[i]);
  }
  if (shown < v.size()) std::cout << ", ... (" << v.size() << " entries)";
  std::cout << "]\n";
}

void print_matrix(const std::string& label, const Matrix& m) {
  std::cout << label << " =\n";
  for (Index r = 0; r < m.rows(); ++r) {
    std::cout << "  [";
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) std::cout << ", ";
      std::cout << fmt_short(m(r, c));
    }
    std::cout << "]\n";
  }
}

int cmd_single(const RunConfig& cfg, const std::string& problem_file, const std::string& r_file) {
  require_known_solver(cfg.solver_choice);
  dq::QpProblem problem = dq::read_problem(problem_file);
  const std::optional<dq::InstanceMetadata> meta = dq::read_metadata(problem_file);
  const bool projection_family =
      meta && (meta->family == "simplex" || meta->family == "chain");

  const dq::QpSolution sol = dq::solve(problem, settings_from(cfg));
  std::cout << "status: " << dq::to_string(sol.status) << " (" << sol.iterations
            << " iterations, " << fmt_short(sol.solve_time_ms) << " ms)\n";
  std::cout << "residuals: primal " << fmt_short(sol.primal_residual) << ", dual "
            << fmt_short(sol.dual_residual) << ", complementarity "
            << fmt_short(sol.complementarity_residual) << "\n";
  if (sol.status != dq::SolveStatus::optimal) return 1;

  print_vector("z*", sol.z_star);
  if (problem.p > 0) print_vector("nu*", sol.nu_star);
  if (problem.m > 0) print_vector("mu*", sol.mu_star);

  const dq::ActiveSet active = dq::classify_active_set(problem, sol, cfg.eps_active);
  std::cout << "active set: " << active.active.size() << " of " << problem.m << " rows";
  if (!active.active.empty()) {
    std::cout << " {";
    const size_t shown = std::min<size_t>(active.active.size(), 20);
    for (size_t i = 0; i < shown; ++i) {
      if (i) std::cout << ", ";
      std::cout << active.active[i];
    }
    if (shown < active.active.size()) std::cout << ", ...";
    std::cout << "}";
  }
  std::cout << "\nmargin: " << fmt_short(active.margin) << "\n";

  for (Index i : active.active) {
    if (std::abs(sol.mu_star[i]) <= 10.0 * cfg.eps_abs) {
      std::cout << "warning: row " << i
                << " is weakly active (zero slack, near-zero multiplier); the full"
                   " optimality-system Jacobian is singular here\n";
    }
  }

  const dq::PenaltyConfig pc = penalty_config_from(cfg, sol);
  const dq::PenaltyHessian hess = dq::assemble_hessian(problem, sol, active, pc);
  if (hess.margin_warning) {
    std::cout << "warning: inactive margin " << fmt_short(active.margin)
              << " is below 10*delta*log(1/delta); smoothing terms may not be negligible"
                 " (consider --no-prune)\n";
  }
  if (problem.n <= 200) {
    const dq::KktJacobian probe = dq::kkt_jacobian_reduced(problem, sol, active,
                                                           dq::ParamBlock::q);
    if (probe.degenerate()) {
      std::cout << "warning: active constraint gradients are linearly dependent; the"
                   " reduced optimality system required a damped least-squares solve\n";
    }
  }

  if (!r_file.empty()) {
    const Vector r = dq::read_vector_text(r_file);
    if (r.size() != problem.n) {
      throw dq::InvalidProblem("upstream gradient length " + std::to_string(r.size()) +
                               " does not match n = " + std::to_string(problem.n));
    }
    const dq::SensitivityResult sens = dq::vjp(hess, problem, sol, active, pc, r);
    print_vector("vjp dq", sens.vjp_gradient.dq);
    if (projection_family) {
      print_vector("vjp dx (projection input; q = -2x)",
                   Vector(-2.0 * sens.vjp_gradient.dq));
    }
    if (problem.p > 0) print_vector("vjp db", sens.vjp_gradient.db);
    if (problem.m > 0) print_vector("vjp dd", sens.vjp_gradient.dd);
    if (problem.n <= 20) {
      print_matrix("vjp dP", sens.vjp_gradient.dP);
      if (problem.p > 0) print_matrix("vjp dA", sens.vjp_gradient.dA);
      if (problem.m > 0) print_matrix("vjp dC", sens.vjp_gradient.dC);
    } else {
      std::cout << "matrix-block gradients: |dP| = " << fmt_short(sens.vjp_gradient.dP.norm())
                << ", |dA| = "
                << fmt_short(problem.p > 0 ? sens.vjp_gradient.dA.norm() : 0.0)
                << ", |dC| = "
                << fmt_short(problem.m > 0 ? sens.vjp_gradient.dC.norm() : 0.0) << "\n";
    }
  } else if (problem.n <= 20) {
    const dq::RhsAssembly rhs = dq::assemble_rhs(problem, sol, active, pc, dq::ParamBlock::q);
    const Matrix z = dq::solve_jacobian(hess, rhs).jacobian;
    print_matrix("dz*/dq", z);
    if (projection_family) print_matrix("dz*/dx (projection input; q = -2x)", Matrix(-2.0 * z));
  } else {
    std::cout << "n > 20: pass an upstream gradient file to get a VJP report\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gen

int cmd_gen(const RunConfig& cfg, const std::string& out_file, std::uint64_t seed) {
  const std::vector<SizeSpec> sizes = parse_sizes(cfg.sizes);
  const dq::BenchInstance inst = make_bench_instance(cfg.family, sizes.front(), seed, cfg);
  dq::write_instance(out_file, inst);
  std::cout << "wrote " << out_file << " and " << dq::sidecar_path(out_file) << " (family "
            << inst.family << ", size " << size_label(inst) << ", seed " << seed << ", n = "
            << inst.problem.n << ", p = " << inst.problem.p << ", m = " << inst.problem.m
            << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentiable strictly convex QP toolkit"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;
  std::string problem_file;
  std::string r_file;
  std::string gen_out;
  std::uint64_t gen_seed = 1;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "JSON config or manifest file");
    c->add_option("--out", cfg.out_dir, "output directory");
    c->add_option("--solver", cfg.solver_choice, "forward solver choice");
    c->add_option("--eps-abs", cfg.eps_abs, "forward solver tolerance");
    c->add_option("--eps-active", cfg.eps_active, "active-set threshold");
    c->add_option("--delta", cfg.delta, "smoothing strength");
    c->add_option("--zeta", cfg.zeta, "penalty scale");
    c->add_flag("--prune,!--no-prune", cfg.prune, "prune inactive smoothing terms");
    c->add_option("--seed-base", cfg.seed_base, "first seed");
  };

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "penalty-vs-oracle gradient accuracy");
  add_common(gradcheck);
  gradcheck->add_option("--sizes", cfg.sizes, "comma-separated n x m list");
  gradcheck->add_option("--seeds", cfg.seeds, "seeds per size");
  gradcheck->add_flag("--all-blocks", cfg.all_blocks, "differentiate all data blocks, not just q");

  CLI::App* bench = app.add_subcommand("bench", "forward/backward wall-clock benchmark");
  add_common(bench);
  bench->add_option("--family", cfg.family, "simplex or chain")->required();
  bench->add_option("--sizes", cfg.sizes, "sizes (simplex: n; chain: points x dim)")->required();
  bench->add_option("--reps", cfg.repetitions, "repetitions per size");
  bench->add_option("--timeout", cfg.timeout_s, "per-size timeout in seconds");

  CLI::App* sweep = app.add_subcommand("delta-sweep", "consistency of the smoothed gradient");
  add_common(sweep);
  sweep->add_option("--sizes", cfg.sizes, "instance size n x m");
  sweep->add_option("--seeds", cfg.seeds, "unused; kept for config compatibility");

  CLI::App* single = app.add_subcommand("single", "solve one problem file and report gradients");
  add_common(single);
  single->add_option("problem", problem_file, "problem file path")->required();
  single->add_option("--r", r_file, "upstream gradient file (whitespace-separated numbers)");

  CLI::App* gen = app.add_subcommand("gen", "generate a benchmark instance file");
  add_common(gen);
  gen->add_option("--family", cfg.family, "random_qp | simplex | chain | portfolio")->required();
  gen->add_option("--size", cfg.sizes, "family size (e.g. 50x10, 100, 8x5)")->required();
  gen->add_option("--seed", gen_seed, "instance seed");
  gen->add_option("--risk-aversion", cfg.risk_aversion, "portfolio risk aversion");
  gen->add_option("--turnover", cfg.turnover, "portfolio turnover cap");
  gen->add_option("output", gen_out, "output problem file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
        e.get_name() == "CallForVersion") {
      return app.exit(e);
    }
    app.exit(e);
    return 2;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    if (!config_path.empty()) apply_config_file(config_path, cmd, cfg);

    if (cmd == gradcheck) {
      if (cfg.sizes.empty()) cfg.sizes = "10x5,50x10,100x20";
      return cmd_gradcheck(cfg);
    }
    if (cmd == bench) return cmd_bench(cfg);
    if (cmd == sweep) {
      if (cfg.sizes.empty()) cfg.sizes = "20x5";
      return cmd_delta_sweep(cfg);
    }
    if (cmd == single) return cmd_single(cfg, problem_file, r_file);
    if (cmd == gen) return cmd_gen(cfg, gen_out, gen_seed);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const dq::InvalidProblem& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
