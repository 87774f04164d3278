// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Lines starting with "  " are measurements behind a verdict;
// "example" lines report desk-scale behaviors without gating.

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pvrnn/grad_engine.hpp"
#include "pvrnn/io.hpp"
#include "pvrnn/runs.hpp"
#include "support.hpp"

using namespace pvrnn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("criterion %d %s: %s  %s\n", id, name.c_str(), pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void note(const char* fmt, auto... args) {
  std::printf("  ");
  std::printf(fmt, args...);
  std::printf("\n");
  std::fflush(stdout);
}

void example(const std::string& name, bool ok, const std::string& detail) {
  std::printf("example %s: %s  %s\n", name.c_str(), ok ? "ok" : "miss", detail.c_str());
  std::fflush(stdout);
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

template <class A, class B>
bool same_bits(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double x = a(i, j), y = b(i, j);
      if (std::memcmp(&x, &y, sizeof(double)) != 0) return false;
    }
  return true;
}

bool same_bits(const AdaptivePosterior& a, const AdaptivePosterior& b) {
  if (a.first_step != b.first_step) return false;
  for (int m = 0; m < kNumModules; ++m)
    if (!same_bits(a.mu[m], b.mu[m]) || !same_bits(a.sigma[m], b.sigma[m])) return false;
  return true;
}

long peak_rss_kib() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("VmHWM:", 0) == 0) return std::stol(line.substr(6));
  return -1;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

void gradient_correctness() {
  const auto t0 = Clock::now();
  bool pass = true;
  double worst = 0.0;
  for (CheckObjective obj : {CheckObjective::Sequence, CheckObjective::Window}) {
    GradientCheckOptions opt;
    opt.length = 5;
    opt.tolerance = 1e-4;
    opt.objective = obj;
    const GradientReport r = check_gradients(NetworkTopology::tiny(3), 17, opt);
    const char* name = obj == CheckObjective::Sequence ? "sequence" : "window";
    note("%s objective: %zu groups, max relative error %.3e", name, r.groups.size(), r.max_rel_error());
    for (const auto& g : r.failed_groups()) note("failed group %s", g.c_str());
    pass = pass && r.pass && r.max_rel_error() < 1e-4;
    worst = std::max(worst, r.max_rel_error());
  }
  const double dt = seconds_since(t0);
  verdict(1, "gradient-correctness", pass && dt < 60.0, "max rel " + fmt_g(worst) + ", " + fmt_g(dt) + " s");
}

// ---------------------------------------------------------------------------
// 2. Free-energy oracles

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

double kl_quadrature(double mq, double sq, double mp, double sp) {
  auto log_normal = [](double z, double m, double s) {
    const double u = (z - m) / s;
    return -0.5 * u * u - std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi);
  };
  auto f = [&](double z) {
    const double lq = log_normal(z, mq, sq);
    return std::exp(lq) * (lq - log_normal(z, mp, sp));
  };
  using boost::math::quadrature::gauss_kronrod;
  return gauss_kronrod<double, 61>::integrate(f, mq - 20.0 * sq, mq + 20.0 * sq, 15, 1e-14);
}

void free_energy_oracles() {
  Rng rng(8);
  double zero_err = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd mu = test::uniform_matrix(7, 1, -1.0, 1.0, rng);
    const Eigen::VectorXd sigma = test::uniform_matrix(7, 1, 0.01, 5.0, rng);
    zero_err = std::max(zero_err, std::abs(complexity_term(mu, sigma, mu, sigma)));
  }
  const double half_err = std::abs(complexity_term(vec({1.0}), vec({1.0}), vec({0.0}), vec({1.0})) - 0.5);

  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> mu(-1.0, 1.0), sigma(0.2, 3.0);
  double quad_err = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double mq = mu(gen), sq = sigma(gen), mp = mu(gen), sp = sigma(gen);
    quad_err = std::max(quad_err, std::abs(complexity_term(vec({mq}), vec({sq}), vec({mp}), vec({sp})) -
                                           kl_quadrature(mq, sq, mp, sp)));
  }

  // Dyadic values keep every partial sum exact, so equality is bitwise.
  std::uniform_int_distribution<int> k(-57, 57);
  int dup_mismatch = 0;
  for (int i = 0; i < 100; ++i) {
    const int n = 1 + i % 40;
    Eigen::VectorXd x(n), y(n);
    for (int j = 0; j < n; ++j) {
      x[j] = k(gen) / 64.0;
      y[j] = k(gen) / 64.0;
    }
    Eigen::VectorXd x2(2 * n), y2(2 * n);
    x2 << x, x;
    y2 << y, y;
    if (accuracy_term(x, y, Eigen::ArrayXd::Ones(n)) != accuracy_term(x2, y2, Eigen::ArrayXd::Ones(2 * n))) ++dup_mismatch;
  }
  note("KLD identical moments max |value| %.3e; unit shift error %.3e", zero_err, half_err);
  note("quadrature vs analytic max difference %.3e over 50 pairs", quad_err);
  note("duplication mismatches %d of 100", dup_mismatch);
  const bool pass = zero_err <= 1e-12 && half_err <= 1e-12 && quad_err < 1e-6 && dup_mismatch == 0;
  verdict(2, "free-energy-oracles", pass,
          "zero " + fmt_g(zero_err) + ", half " + fmt_g(half_err) + ", quadrature " + fmt_g(quad_err));
}

// ---------------------------------------------------------------------------
// 3. Dynamics oracles

LatentSample random_sample(const NetworkTopology& topo, Rng& rng) {
  LatentSample s;
  for (int m = 0; m < kNumModules; ++m) {
    s.z[m] = test::uniform_matrix(topo.module(m).z_size, 1, -2.0, 2.0, rng);
    s.eps[m] = s.z[m];
  }
  return s;
}

void dynamics_oracles() {
  NetworkTopology unit = NetworkTopology::tiny(5);
  for (auto& m : unit.modules) m.tau_fast = m.tau_slow = 1.0;
  Rng rng(11);
  int tau_mismatch = 0;
  for (int c = 0; c < 100; ++c) {
    const Parameters p = init_parameters(unit, static_cast<std::uint64_t>(c + 1));
    const RecurrentState prev = test::random_state(unit, rng, 3.0);
    const LatentSample z = random_sample(unit, rng);
    const RecurrentState got = leaky_step(prev, z, p, unit);
    std::array<Eigen::VectorXd, kNumModules> h, d;
    for (int m : kTopDown) {
      const ModuleWeights& w = p.modules[m];
      Eigen::VectorXd pre = w.recurrent * prev.d[m];
      pre.noalias() += w.latent * z.z[m];
      if (kParent[m] >= 0) pre.noalias() += w.top_down * d[kParent[m]];
      pre += w.bias;
      h[m] = pre;
      d[m] = (1.0 - 2.0 / ((2.0 * pre.array()).exp() + 1.0)).matrix();
    }
    for (int m = 0; m < kNumModules; ++m)
      if (!same_bits(got.h[m], h[m]) || !same_bits(got.d[m], d[m])) {
        ++tau_mismatch;
        break;
      }
  }

  // |h_t| <= max(|h_0|, M + |b|) with M the largest synaptic input.
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> tau(1.0, 20.0);
  int leak_violations = 0, sweeps = 0;
  for (int sweep = 0; sweep < 40; ++sweep) {
    NetworkTopology t = NetworkTopology::tiny(6);
    const double base = tau(gen);
    for (int m = 0; m < kNumModules; ++m) {
      t.modules[static_cast<std::size_t>(m)].tau_fast = base * kLevel[m];
      t.modules[static_cast<std::size_t>(m)].tau_slow = base * kLevel[m] * 2.0;
    }
    const Parameters p = init_parameters(t, static_cast<std::uint64_t>(sweep + 100));
    const RecurrentState h0 = test::random_state(t, gen, 5.0);
    const int T = 25;
    const NoiseBlock noise = draw_noise(t, T, gen);
    ForwardOptions fo;
    fo.mode = LatentMode::Prior;
    const Trajectory tr = forward_sequence(p, t, nullptr, T, noise, fo, h0);
    for (int m = 0; m < kNumModules; ++m) {
      const ModuleWeights& w = p.modules[m];
      double M = 0.0;
      for (int k = 0; k < T; ++k) {
        Eigen::VectorXd syn = w.recurrent * tr.d_prev(m, k) + w.latent * tr.modules[m].z.col(k);
        if (kParent[m] >= 0) syn += w.top_down * tr.modules[kParent[m]].d.col(k);
        M = std::max(M, syn.cwiseAbs().maxCoeff());
      }
      const double bound = std::max(h0.h[m].cwiseAbs().maxCoeff(), M + w.bias.cwiseAbs().maxCoeff());
      if (tr.modules[m].h.cwiseAbs().maxCoeff() > bound * (1.0 + 1e-12)) ++leak_violations;
    }
    ++sweeps;
  }

  const NetworkTopology desk = NetworkTopology::desk();
  const Parameters p = init_parameters(desk, 1);
  Rng nrng(3);
  AdaptivePosterior a = test::random_adaptive(desk, 2, nrng);
  const Trajectory tr = forward_sequence(p, desk, &a, 2, draw_noise(desk, 2, nrng));
  bool initial = true;
  for (int m = 0; m < kNumModules; ++m) {
    initial = initial && tr.boundary.h[m].isZero(0.0) && tr.boundary.d[m].isZero(0.0);
    initial = initial && tr.modules[m].mu_p.col(0).isZero(0.0) && (tr.modules[m].sigma_p.col(0).array() == 1.0).all();
  }
  note("tau=1 mismatches %d of 100; leak-bound violations %d over %d sweeps", tau_mismatch, leak_violations, sweeps);
  note("t=0 state zero and t=1 prior (0,1): %s", initial ? "exact" : "not exact");
  verdict(3, "dynamics-oracles", tau_mismatch == 0 && leak_violations == 0 && initial,
          std::to_string(tau_mismatch) + " tau mismatches, " + std::to_string(leak_violations) + " leak violations");
}

// ---------------------------------------------------------------------------
// 4. Learning at desk scale

void learning(RunWorkspace& ws) {
  const auto& e = ws.config().experiments;
  const auto data = ws.full_training_set();
  bool pass = data.size() == 18;
  note("training set: %zu sequences, %d iterations", data.size(), ws.config().train.iterations);
  for (auto seed : experiment_seeds(e)) {
    const auto t0 = Clock::now();
    const auto ck = ws.full_model(seed);
    const double dt = seconds_since(t0);
    const double err = max_reconstruction_error(*ck, data);
    const auto* hist = ws.cache().history({e.train_per_task, e.train_per_task, seed});
    bool finite = hist != nullptr && !hist->empty();
    if (hist)
      for (const auto& r : *hist) finite = finite && std::isfinite(r.terms.total);
    note("seed %llu: worst reconstruction %.5f, history %s, %.1f s", static_cast<unsigned long long>(seed), err,
         finite ? "finite" : "NOT finite", dt);
    pass = pass && err < 0.01 && finite && dt <= 20.0 * 60.0;
  }
  verdict(4, "learning", pass, "reconstruction < 0.01, finite history, <= 20 min for every seed");
}

// ---------------------------------------------------------------------------
// 5. Experiment 1

void experiment1(RunWorkspace& ws, Exp1Result& r) {
  r = run_exp1(ws);
  int wins = 0;
  for (const auto& s : r.seeds) {
    const double w = s.stats.variability(Task::Wipe), rr = s.stats.variability(Task::Reposition);
    note("seed %llu: variability W %.5f, R %.5f", static_cast<unsigned long long>(s.seed), w, rr);
    if (w > rr) ++wins;
  }
  const auto& t = r.variability_test;
  if (t.test)
    note("paired t-test W vs R: t %.3f, df %d, p %.4f", t.test->t, t.test->df, t.test->p);
  else
    note("paired t-test W vs R: %s", t.note.c_str());
  verdict(5, "experiment1-variability", wins >= 4, std::to_string(wins) + "/" + std::to_string(r.seeds.size()) +
                                                        " seeds with W > R");
}

// ---------------------------------------------------------------------------
// 6. Experiment 2

void experiment2(RunWorkspace& ws, Exp2Result& r) {
  r = run_exp2(ws);
  const NetworkTopology topo = ws.config().topology();
  const int G = static_cast<int>(topo.vision.resolutions.size());
  auto condition = [&](int keep, bool proprio) {
    for (const auto& c : r.conditions)
      if (static_cast<int>(c.vision_groups.size()) == keep && c.proprio == proprio) return c;
    throw ConfigError("missing robustness condition");
  };
  const MaskPolicy low_with = condition(1, true), low_without = condition(1, false);
  int wins = 0;
  for (auto seed : r.seeds) {
    const double a = r.error(low_with, topo, seed), b = r.error(low_without, topo, seed);
    note("seed %llu: lowest-only error with proprio %.5f, without %.5f", static_cast<unsigned long long>(seed), a, b);
    if (a < b) ++wins;
  }
  for (const auto& t : r.tests)
    if (t.test) note("%s: t %.3f, df %d, p %.4f", t.comparison.c_str(), t.test->t, t.test->df, t.test->p);

  bool monotone = true;
  for (bool proprio : {true, false}) {
    std::string line;
    double prev = -1.0;
    for (int keep = G; keep >= 1; --keep) {
      const ErrorRow* row = r.table.find("robustness", condition(keep, proprio).label(topo), "all");
      const double v = row ? row->mean : NAN;
      line += condition(keep, proprio).label(topo) + " " + fmt_g(v) + "  ";
      if (!(v >= prev)) monotone = false;
      prev = v;
    }
    note("seed-mean errors: %s", line.c_str());
  }
  verdict(6, "experiment2-robustness", wins >= 4 && monotone,
          std::to_string(wins) + "/" + std::to_string(r.seeds.size()) + " seeds with proprio lower, monotone " +
              (monotone ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// 7. Experiment 3

void experiment3(RunWorkspace& ws) {
  const Exp3Result r = run_exp3(ws);
  const auto& e = ws.config().experiments;
  const auto seeds = experiment_seeds(e);
  std::set<std::string> tables;
  for (const auto& row : r.table.rows) tables.insert(row.table);
  const bool both = tables.count(interference_table_name(Task::Reposition)) && tables.count(interference_table_name(Task::Wipe));
  bool tests_ok = !r.tests.empty();
  for (const auto& t : r.tests) {
    if (t.test)
      note("%s: t %.3f, df %d, p %.4f", t.comparison.c_str(), t.test->t, t.test->df, t.test->p);
    else
      note("%s: %s", t.comparison.c_str(), t.note.c_str());
  }

  bool unseen_ok = true;
  std::string robust;
  bool robust_ok = true;
  const int last = e.varied_counts.back();
  for (Task fixed : {Task::Reposition, Task::Wipe}) {
    int within = 0;
    double ratio_sum = 0.0;
    for (auto seed : seeds) {
      const auto* c0 = r.cell(fixed, 0, seed);
      const auto* cn = r.cell(fixed, last, seed);
      if (!c0 || !cn) {
        unseen_ok = robust_ok = false;
        continue;
      }
      const double unseen_ratio = c0->unseen_error / c0->fixed_error;
      const double drift = cn->fixed_error / c0->fixed_error;
      note("%s seed %llu: seen %.5f unseen %.5f (%.1fx); varied %d %.5f (%.2fx)",
           interference_table_name(fixed).c_str(), static_cast<unsigned long long>(seed), c0->fixed_error,
           c0->unseen_error, unseen_ratio, last, cn->fixed_error, drift);
      if (!(unseen_ratio >= 5.0)) unseen_ok = false;
      if (drift <= 2.0) ++within;
      ratio_sum += drift;
    }
    if (within < 4) robust_ok = false;
    robust += interference_table_name(fixed) + " " + std::to_string(within) + "/" + std::to_string(seeds.size()) + " ";
    note("asymmetry: %s mean drift %.3fx", interference_table_name(fixed).c_str(), ratio_sum / static_cast<double>(seeds.size()));
  }
  ws.save_manifest("acceptance");
  verdict(7, "experiment3-interference", both && tests_ok && unseen_ok && robust_ok,
          std::string("tables ") + (both ? "yes" : "no") + ", unseen >= 5x " + (unseen_ok ? "yes" : "no") +
              ", within 2x " + robust);
}

// ---------------------------------------------------------------------------
// Desk-scale examples, reported after the experiments reuse their models.

void desk_examples(RunWorkspace& ws, const Exp1Result* r1, const Exp2Result* r2) {
  const auto& cfg = ws.config();
  const auto seed = experiment_seeds(cfg.experiments).front();
  const auto ck = ws.full_model(seed);
  const auto& split = ws.split();

  if (r1 && !r1->seeds.empty()) {
    std::string line;
    bool ok = true;
    for (Task task : {Task::Reposition, Task::Wipe})
      for (int m = 0; m < kNumModules; ++m) {
        const double en = r1->mean_map(task, m).energy();
        line += task_name(task) + "/" + std::string(kModuleNames[m]) + " " + fmt_g(en) + " ";
        if (m != 3 && !(en > 0.0)) ok = false;
      }
    example("ablation-energy", ok, line);
  }

  if (r2) {
    const NetworkTopology topo = cfg.topology();
    std::string best;
    double lo = INFINITY;
    for (const auto& c : r2->conditions) {
      const ErrorRow* row = r2->table.find("robustness", c.label(topo), "all");
      if (row && row->mean < lo) {
        lo = row->mean;
        best = c.label(topo);
      }
    }
    example("minimum-error-condition", best == r2->conditions.front().label(topo), best + " " + fmt_g(lo));
  }

  {
    InferConfig ic = cfg.infer;
    double worst = 0.0;
    for (std::size_t i = 0; i < split.train.size(); i += 3) {
      const Sequence& q = split.train[i];
      const TrialLog log = run_trial(ck, q, ic, 0);
      const double replay = reconstruction_error(ck->params, ck->topology, log.posterior, q).combined();
      const double rec = reconstruction_error(ck->params, ck->topology, *ck->adaptive_for(q.id), q).combined();
      worst = std::max(worst, replay / rec);
    }
    example("feedback-replay", worst <= 2.0, "worst replay/training ratio " + fmt_g(worst));
  }

  {
    InferConfig ic = cfg.infer;
    ic.fixed_eps = true;
    ic.record_rounds = true;
    const Sequence& q = split.test.front();
    InferenceSession s(ck, ic, 5);
    int steps = 0, down = 0;
    for (int t = 0; t < q.length(); ++t) {
      const StepResult res = s.step(q.vision.col(t), q.proprio.col(t));
      for (std::size_t k = 1; k < res.rounds.size(); ++k, ++steps)
        if (res.rounds[k] <= res.rounds[k - 1]) ++down;
    }
    const double frac = steps ? static_cast<double>(down) / steps : 0.0;
    example("descent", frac >= 0.9, "non-increasing rounds " + fmt_g(100.0 * frac) + "%");
  }

  {
    InferConfig ic = cfg.infer;
    ic.deterministic_rollout = true;
    double worst = 0.0;
    const int observed = 37, horizon = 20;
    for (const auto* pool : {&split.train, &split.test})
      for (const auto& q : *pool) {
        if (q.task != Task::Wipe || q.length() < observed + horizon) continue;
        InferenceSession s(ck, ic, 7);
        for (int t = 0; t < observed; ++t) s.step(q.vision.col(t), q.proprio.col(t));
        const Observations roll = s.rollout(horizon);
        for (Eigen::Index k = 0; k < q.proprio.rows(); ++k) {
          const Eigen::VectorXd truth = q.proprio.row(k).segment(observed, horizon).transpose();
          const Eigen::VectorXd pred = roll.proprio.row(k).transpose();
          const double at = truth.maxCoeff() - truth.minCoeff(), ap = pred.maxCoeff() - pred.minCoeff();
          if (at > 0.0) worst = std::max(worst, std::abs(ap - at) / at);
        }
      }
    example("rollout-amplitude", worst <= 0.2, "worst relative amplitude error " + fmt_g(worst));
  }
}

// ---------------------------------------------------------------------------
// 8. Determinism and persistence

void determinism(const fs::path& dir) {
  fs::create_directories(dir);
  RunConfig cfg;
  const auto split = make_split(cfg.world, 9, 3, cfg.experiments.data_seed);
  TrainConfig tc = cfg.train;
  tc.iterations = 20;
  tc.seed = 3;
  FitOptions one, three;
  three.threads = 3;
  const FitResult a = fit(split.train, cfg.topology(), tc, one);
  const FitResult b = fit(split.train, cfg.topology(), tc, three);
  const bool ck_same = serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint);
  const bool loss_same = loss_history_csv(a.history) == loss_history_csv(b.history);

  auto ck = std::make_shared<const Checkpoint>(a.checkpoint);
  InferConfig ic = cfg.infer;
  ic.iterations = 5;
  ic.trials = 2;
  const std::vector<Sequence> test(split.test.begin(), split.test.begin() + 3);
  const TrialSet t1 = run_trials(ck, test, ic, 1), t3 = run_trials(ck, test, ic, 3);
  bool trials_same = t1.size() == t3.size();
  for (std::size_t i = 0; trials_same && i < t1.size(); ++i)
    trials_same = trial_errors_csv(t1.trials[i], ck->topology) == trial_errors_csv(t3.trials[i], ck->topology) &&
                  trial_latents_csv(t1.trials[i]) == trial_latents_csv(t3.trials[i]);

  const fs::path path = dir / "checkpoint.bin";
  save_checkpoint(a.checkpoint, path);
  const Checkpoint back = load_checkpoint(path);
  bool round_trip = back.params.bitwise_equal(a.checkpoint.params) &&
                    serialize_checkpoint(back) == serialize_checkpoint(a.checkpoint);
  for (const auto& post : a.checkpoint.adaptive) {
    const AdaptivePosterior* p = back.adaptive_for(post.sequence_id);
    round_trip = round_trip && p && same_bits(*p, post);
  }

  auto rejected = [&](std::vector<char> bytes, const std::string& name) {
    const fs::path p = dir / name;
    detail::write_file(p, bytes.data(), bytes.size());
    try {
      load_checkpoint(p);
    } catch (const Error&) {
      return true;
    }
    return false;
  };
  const auto bytes = detail::read_file(path);
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  const bool corrupt = rejected(flipped, "flipped.bin") && rejected(truncated, "truncated.bin");

  note("checkpoint 1 vs 3 threads %s; loss CSV %s; trial CSVs %s", ck_same ? "identical" : "DIFFER",
       loss_same ? "identical" : "DIFFER", trials_same ? "identical" : "DIFFER");
  note("round trip %s; corrupted files %s", round_trip ? "bitwise" : "NOT bitwise", corrupt ? "rejected" : "ACCEPTED");
  verdict(8, "determinism-persistence", ck_same && loss_same && trials_same && round_trip && corrupt,
          "threads 1 vs 3, round trip, corruption");
}

// ---------------------------------------------------------------------------
// 9. Sliding-window semantics

void windowing() {
  // Window length equals t before the window fills.
  const auto ck = test::untrained_checkpoint(test::small_topology(), 4);
  InferConfig ic;
  ic.H = 30;
  ic.iterations = 2;
  const Sequence seq = generate(test::small_world(40), TaskCounts::uniform(1, 0), 2).sequences[0];
  InferenceSession s(ck, ic, 1);
  bool lengths = true, frozen_fixed = true;
  std::vector<AdaptivePosterior> snaps;
  for (int t = 1; t <= seq.length(); ++t) {
    const StepResult r = s.step(seq.vision.col(t - 1), seq.proprio.col(t - 1));
    const int len = r.window.last - r.window.first + 1;
    if (len != std::min(t, 30) || r.window.last != t) lengths = false;
    snaps.push_back(s.frozen());
  }
  const AdaptivePosterior& last = snaps.back();
  for (const auto& snap : snaps)
    for (int m = 0; m < kNumModules; ++m)
      if (!same_bits(snap.mu[m], last.mu[m].leftCols(snap.length())) ||
          !same_bits(snap.sigma[m], last.sigma[m].leftCols(snap.length())))
        frozen_fixed = false;

  // Window covering the whole sequence against the sequence objective.
  const NetworkTopology topo = NetworkTopology::tiny(3);
  const Parameters params = init_parameters(topo, 5);
  const int T = 8;
  Rng rng(23);
  const AdaptivePosterior adaptive = test::random_adaptive(topo, T, rng);
  const NoiseBlock noise = draw_noise(topo, T, rng);
  const Observations x = test::random_observations(topo, T, rng);
  const ObservationMask mask = ObservationMask::all(topo, T);
  const Trajectory tr = forward_sequence(params, topo, &adaptive, T, noise);
  const GradientSet full = backward(params, topo, adaptive, tr, x, mask, kDefaultMetaPrior);

  auto window_pass = [&](const AdaptivePosterior& src, int first, double* objective) {
    RecurrentState boundary = RecurrentState::zero(topo);
    if (first > 1) boundary = forward_sequence(params, topo, &src, first - 1, noise).state_at(first - 2);
    const int L = T - first + 1;
    AdaptivePosterior a = AdaptivePosterior::zeros(topo, L, first);
    NoiseBlock nb;
    for (int m = 0; m < kNumModules; ++m) {
      a.mu[m] = src.mu[m].rightCols(L);
      a.sigma[m] = src.sigma[m].rightCols(L);
      nb.eps[m] = noise.eps[m].rightCols(L);
    }
    const Trajectory wt = forward_sequence(params, topo, &a, L, nb, {}, boundary);
    if (objective) *objective = sequence_free_energy(trajectory_free_energy(wt, x.slice(first - 1, L), mask.slice(first - 1, L), kDefaultMetaPrior));
    return backward(params, topo, a, wt, x.slice(first - 1, L), mask.slice(first - 1, L), kDefaultMetaPrior);
  };
  const GradientSet win = window_pass(adaptive, 1, nullptr);
  const bool full_equal = full.weights.bitwise_equal(win.weights) && same_bits(full.adaptive, win.adaptive) &&
                          full.objective == win.objective;

  // With the entering state cached, values left of the window do not
  // reach the window objective or its gradients.
  const int first = 4;
  const Trajectory prefix = forward_sequence(params, topo, &adaptive, first - 1, noise);
  const RecurrentState cached = prefix.state_at(first - 2);
  auto cached_pass = [&](const AdaptivePosterior& src) {
    const int L = T - first + 1;
    AdaptivePosterior a = AdaptivePosterior::zeros(topo, L, first);
    NoiseBlock nb;
    for (int m = 0; m < kNumModules; ++m) {
      a.mu[m] = src.mu[m].rightCols(L);
      a.sigma[m] = src.sigma[m].rightCols(L);
      nb.eps[m] = noise.eps[m].rightCols(L);
    }
    const Trajectory wt = forward_sequence(params, topo, &a, L, nb, {}, cached);
    return backward(params, topo, a, wt, x.slice(first - 1, L), mask.slice(first - 1, L), kDefaultMetaPrior);
  };
  AdaptivePosterior moved = adaptive;
  for (int m = 0; m < kNumModules; ++m) {
    moved.mu[m].leftCols(first - 1).array() += 0.3;
    moved.sigma[m].leftCols(first - 1).array() -= 0.2;
  }
  const GradientSet g0 = cached_pass(adaptive), g1 = cached_pass(moved);
  const bool untouched = g0.objective == g1.objective && g0.weights.bitwise_equal(g1.weights) &&
                         same_bits(g0.adaptive, g1.adaptive) && g0.adaptive.first_step == first &&
                         g0.adaptive.length() == T - first + 1;

  note("window length min(t, 30) for t = 1..%d: %s", seq.length(), lengths ? "yes" : "no");
  note("H = T window gradients bitwise equal to sequence gradients: %s", full_equal ? "yes" : "no");
  note("out-of-window values: gradients %s, frozen steps %s", untouched ? "untouched" : "TOUCHED",
       frozen_fixed ? "never change" : "CHANGED");
  verdict(9, "sliding-window", lengths && full_equal && untouched && frozen_fixed, "construction, H = T, isolation");
}

// ---------------------------------------------------------------------------
// 10. Paper-scale shape smoke test

void paper_scale() {
  const auto t0 = Clock::now();
  const NetworkTopology topo = NetworkTopology::paper();
  topo.validate();
  const Parameters params = init_parameters(topo, 1);
  const int T = 2;
  Rng rng(4);
  AdaptivePosterior a = init_adaptive(topo, T);
  const NoiseBlock noise = draw_noise(topo, T, rng);
  const Observations x = test::random_observations(topo, T, rng);
  const double build = seconds_since(t0);
  const auto t1 = Clock::now();
  const Trajectory tr = forward_sequence(params, topo, &a, T, noise);
  const GradientSet g = backward(params, topo, a, tr, x, ObservationMask::all(topo, T), kDefaultMetaPrior);
  const double pass_time = seconds_since(t1);
  bool finite = std::isfinite(g.objective);
  g.weights.for_each_trainable([&](const std::string&, const auto& t) { finite = finite && t.allFinite(); });
  const bool shapes = topo.extero_dims() == 32256 && topo.proprio_dims == 28 && tr.extero.output.rows() == 32256 &&
                      tr.proprio.output.rows() == 28 && tr.extero.output.cols() == T;
  const long kib = peak_rss_kib();
  note("vision %d dims, proprio %d dims, %zu trainable values", topo.extero_dims(), topo.proprio_dims,
       params.trainable_count());
  note("construct %.2f s, forward+backward over %d steps %.2f s, peak resident %.1f MiB", build, T, pass_time,
       kib / 1024.0);
  verdict(10, "paper-scale-shapes", shapes && finite,
          "peak " + fmt_g(kib / 1024.0) + " MiB, " + fmt_g(pass_time) + " s forward+backward");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pvrnn acceptance run"};
  std::string out = "acceptance_run";
  std::vector<int> only;
  std::string config;
  int threads = 1;
  app.add_option("--out", out, "Run directory (replaced)");
  app.add_option("--config", config, "Run configuration for criteria 4-7 (default: built-in defaults)")
      ->check(CLI::ExistingFile);
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--threads", threads, "Worker threads for the experiments")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  const fs::path dir = fs::absolute(out);
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  try {
    if (wanted(1)) gradient_correctness();
    if (wanted(2)) free_energy_oracles();
    if (wanted(3)) dynamics_oracles();
    if (wanted(8)) determinism(dir / "determinism");
    if (wanted(9)) windowing();
    if (wanted(10)) paper_scale();

    RunConfig cfg;
    if (!config.empty()) {
      const auto buf = detail::read_file(config);
      cfg = parse_run_config(std::string(buf.begin(), buf.end()));
    }
    RunWorkspace ws(cfg, threads, dir / "run");
    Exp1Result r1;
    Exp2Result r2;
    if (wanted(4)) learning(ws);
    if (wanted(5)) experiment1(ws, r1);
    if (wanted(6)) experiment2(ws, r2);
    if (wanted(7)) experiment3(ws);
    if (wanted(4) || wanted(5) || wanted(6) || wanted(7))
      desk_examples(ws, wanted(5) ? &r1 : nullptr, wanted(6) ? &r2 : nullptr);
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("acceptance: %d failed, %.0f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
