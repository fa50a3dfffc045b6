// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails.

#include "support/grad_suite.hpp"
#include "support/oracles.hpp"
#include "support/small_profile.hpp"

#include "diffkd/diffusion.hpp"
#include "diffkd/fusion.hpp"
#include "diffkd/losses.hpp"
#include "diffkd/metrics.hpp"
#include "diffkd/pipeline.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

namespace fs = std::filesystem;
using namespace diffkd;
using namespace diffkd::testing;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// 1. mRCE of the published Diff-KD rows.
void metric_exactness(Outcome& o) {
  const auto opv2v = compute_rce_mrce({92.03, 87.81}, {{87.86, 82.27},
                                                       {86.17, 70.57},
                                                       {71.04, 64.57},
                                                       {87.71, 81.27},
                                                       {81.94, 75.91},
                                                       {90.01, 85.24},
                                                       {91.72, 87.67}});
  const auto dair = compute_rce_mrce({78.27, 63.92}, {{48.15, 33.05},
                                                      {70.21, 49.02},
                                                      {48.53, 38.28},
                                                      {71.70, 53.75},
                                                      {43.00, 31.96},
                                                      {70.48, 54.51},
                                                      {77.11, 62.90}});
  o.require(std::abs(100.0 * opv2v.mrce - 9.17) <= 0.005, "OPV2V mRCE");
  o.require(std::abs(100.0 * dair.mrce - 24.69) <= 0.005, "DAIR-V2X mRCE");
  o.detail << std::fixed << std::setprecision(4) << "mRCE " << 100.0 * opv2v.mrce << "% / " << 100.0 * dair.mrce
           << "%";
}

// 2. Loss composition over random parts.
void loss_identities(Outcome& o) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  int trials = 0;
  for (; trials < 1000; ++trials) {
    const double d = u(rng), f = u(rng), c = u(rng), r = u(rng), lc = u(rng), lr = u(rng);
    const LossBundle b = compose_losses(d, f, c, r, lc, lr);
    o.require(b.l_kd_post == f + c + r, "post-fusion KD sum");
    o.require(b.l_pkd == d + b.l_kd_post, "PKD sum");
    o.require(b.l_final == b.l_pkd + lc + lr, "final sum");
    o.require(b.l_diff_sum == d && b.l_cls == lc && b.l_reg == lr, "parts carried through");
  }
  o.detail << trials << " trials";
}

// 3. DDIM with the exact noise inverts forward noising; boundary identities.
void diffusion_inversion(Outcome& o) {
  const NoiseSchedule s = build_schedule(100, 1e-3, 0.07);
  std::mt19937_64 rng(33);
  std::uniform_int_distribution<int> pick_t(1, s.T);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor f = Tensor::randn({4, 8, 8}, rng), e = Tensor::randn({4, 8, 8}, rng);
    const int t = pick_t(rng);
    const Tensor x = forward_noise(f, t, e, s);
    const NoisePredictor oracle = [&](const Tensor&, int) { return e; };
    for (int steps : {std::min(10, t), t}) {
      worst = std::max(worst, (ddim_sample(x, t, steps, s, oracle).values() - f.values()).cwiseAbs().maxCoeff());
    }
  }
  o.require(worst < 1e-9, "inversion error " + std::to_string(worst));
  const Tensor f = Tensor::randn({3, 4, 4}, rng), e = Tensor::randn({3, 4, 4}, rng);
  o.require(noise_with_alpha_bar(f, 1.0, e).values() == f.values(), "alpha_bar = 1 gives F_T");
  o.require(noise_with_alpha_bar(f, 0.0, e).values() == e.values(), "alpha_bar = 0 gives eps");
  o.require(s.alpha_bar[0] == 1.0 && s.alpha_bar[s.T] > 0.0 && s.alpha_bar[s.T] < 0.05, "schedule endpoints");
  o.detail << std::scientific << std::setprecision(2) << "20 cases, worst |error| " << worst;
}

// 4. Finite-difference gradient suite.
void gradient_suite(Outcome& o) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  const auto cases = gradient_cases();
  for (const auto& c : cases) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const double err = c.run(seed).max_rel_error;
      o.require(err < 1e-4, c.name + " seed " + std::to_string(seed));
      if (err > worst) {
        worst = err;
        worst_name = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  o.require(secs < 120.0, "runtime");
  o.detail << cases.size() << " cases x 5 instances, worst rel. error " << std::scientific << std::setprecision(2)
           << worst << " (" << worst_name << "), " << std::fixed << std::setprecision(1) << secs << " s";
}

// 5. AGF invariants.
void agf_invariants(Outcome& o) {
  const FusionConfig cfg = tiny_fusion();
  std::mt19937_64 rng(55);
  std::vector<Tensor> f;
  for (int i = 0; i < 5; ++i) f.push_back(Tensor::randn({cfg.channels, 7, 6}, rng));

  ParamSet init;
  init_agf_params(init, cfg, rng);
  o.require(agf_fuse(f, init, cfg).values() == f[0].values(), "identity at init");

  ParamSet p = init.clone();
  randomize(p, rng, 0.3);
  const Tensor w = agent_softmax(importance_maps(f, p, "agf.importance"));
  const auto hw = 7 * 6;
  double worst = 0.0;
  for (std::int64_t px = 0; px < hw; ++px) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) s += w[static_cast<std::int64_t>(i) * hw + px];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  o.require(worst <= 1e-9, "weights sum to one");
  o.require(agf_fuse({f[0]}, p, cfg).values() == lgm(f[0], f[0], p, cfg, "agf.lgm").values(), "N=1 reduction");
  const Tensor base = agf_fuse(f, p, cfg);
  for (const auto& perm : std::vector<std::vector<int>>{{0, 2, 1, 3, 4}, {0, 4, 3, 2, 1}, {0, 3, 4, 1, 2}}) {
    std::vector<Tensor> g;
    for (int i : perm) g.push_back(f[static_cast<std::size_t>(i)]);
    o.require(agf_fuse(g, p, cfg).values() == base.values(), "permutation invariance");
  }
  o.detail << std::scientific << std::setprecision(1) << "max |sum w - 1| " << worst
           << ", N=1, 3 permutations bit-exact, identity at init";
}

// 6. IoU closed forms and Monte-Carlo; AP against the brute-force oracle.
void geometry_oracles(Outcome& o) {
  const BoxBEV a{0.0, 0.0, 1.0, 1.0, 0.0, 1.0};
  o.require(rotated_iou(a, BoxBEV{5.0, 0.0, 1.0, 1.0, 0.0, 1.0}) == 0.0, "disjoint boxes");
  o.require(std::abs(rotated_iou(a, a) - 1.0) < 1e-12, "identical boxes");
  o.require(std::abs(rotated_iou(a, BoxBEV{0.5, 0.0, 1.0, 1.0, 0.0, 1.0}) - 1.0 / 3.0) < 1e-12, "half shift");
  o.require(std::abs(rotated_iou(BoxBEV{0, 0, 2, 4, 0, 1}, BoxBEV{0, 0, 1, 2, 0, 1}) - 0.25) < 1e-12, "nested");
  o.require(std::abs(rotated_iou(a, BoxBEV{0, 0, 1, 1, std::numbers::pi / 2, 1}) - 1.0) < 1e-12, "quarter turn");

  std::mt19937_64 rng(66);
  double worst_mc = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto [p, q] = random_overlapping_pair(rng);
    worst_mc = std::max(worst_mc, std::abs(rotated_iou(p, q) - monte_carlo_iou(p, q, 1'000'000, 1000 + i)));
  }
  o.require(worst_mc < 1e-3, "Monte-Carlo IoU");

  double worst_ap = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto scenes = random_detection_scenes(rng, 6);
    for (double thr : {0.5, 0.7}) {
      worst_ap = std::max(worst_ap, std::abs(average_precision(scenes, thr) - brute_force_ap(scenes, thr)));
    }
  }
  o.require(worst_ap < 1e-12, "AP oracle");
  o.detail << std::scientific << std::setprecision(2) << "MC IoU worst " << worst_mc << " (100 pairs, 1e6 samples), "
           << "AP oracle worst " << worst_ap << " (600 instances)";
}

// 7. Directional reproduction on the default synthetic profile.
RunConfig directional_profile(std::uint64_t seed, unsigned threads) {
  RunConfig rc;
  rc.grid.C = 16;
  rc.train_sample_steps = 1;
  rc.seed = seed;
  rc.data_seed = seed;
  rc.threads = threads;
  rc.pose_sigmas = {{0.0, 0.0}, {0.4, 0.4}};
  rc.finalize();
  return rc;
}

struct SeedResult {
  double student50 = 0, no_collab50 = 0;
  double pkd_on70 = 0, pkd_off70 = 0;
  double agf_on50 = 0, agf_off50 = 0;
  double lgm_on70 = 0, lgm_off70 = 0;
  double student_pose0 = 0, student_pose4 = 0, mean_pose0 = 0, mean_pose4 = 0;
};

double pose_ap70(const EvalReport& r, double sigma) {
  for (const auto& p : r.pose_sweep) {
    if (p.sigma_loc == sigma) return p.ap70;
  }
  throw std::runtime_error("pose level missing from report");
}

SeedResult run_directional_seed(std::uint64_t seed, unsigned threads, const fs::path& work) {
  const RunConfig rc = directional_profile(seed, threads);
  const Dataset train = make_train_set(rc), eval = make_eval_set(rc);
  auto log = [&](const std::string& what, Clock::time_point t0) {
    std::cerr << "  seed " << seed << ": " << what << " (" << std::fixed << std::setprecision(0) << seconds_since(t0)
              << " s)\n";
  };
  auto t0 = Clock::now();
  const ParamSet teacher = train_teacher(train, rc).params;
  log("teacher", t0);
  RunConfig no_lgm = rc;
  no_lgm.use_lgm_teacher = false;
  t0 = Clock::now();
  const ParamSet teacher_plain = train_teacher(train, no_lgm).params;
  log("teacher without LGM", t0);
  t0 = Clock::now();
  const ParamSet ego = train_teacher(train, rc, true).params;
  log("ego detector", t0);
  t0 = Clock::now();
  const ParamSet student = train_student(train, teacher, rc).params;
  log("student", t0);
  RunConfig no_pkd = rc;
  no_pkd.use_pkd = false;
  t0 = Clock::now();
  const ParamSet student_plain = train_student(train, teacher, no_pkd).params;
  log("student without PKD", t0);
  RunConfig no_agf = rc;
  no_agf.use_agf = false;
  t0 = Clock::now();
  const ParamSet student_mean = train_student(train, teacher, no_agf).params;
  log("student with mean fusion", t0);

  t0 = Clock::now();
  const EvalOptions clean_only{false, false};
  const EvalReport r_teacher = evaluate({ModelKind::teacher, teacher}, eval, rc, clean_only);
  const EvalReport r_plain = evaluate({ModelKind::teacher, teacher_plain}, eval, no_lgm, clean_only);
  const EvalReport r_ego = evaluate({ModelKind::no_collab, ego}, eval, rc, clean_only);
  const EvalReport r_student = evaluate({ModelKind::student, student}, eval, rc, {true, true});
  const EvalReport r_no_pkd = evaluate({ModelKind::student, student_plain}, eval, no_pkd, {true, false});
  const EvalReport r_mean = evaluate({ModelKind::student, student_mean}, eval, no_agf, {false, true});
  log("evaluation", t0);

  std::vector<EvalReport> reports{r_teacher, r_plain, r_ego, r_student, r_no_pkd, r_mean};
  const char* labels[] = {"teacher", "teacher_no_lgm", "no_collab", "student", "student_no_pkd", "student_mean_fusion"};
  for (std::size_t i = 0; i < reports.size(); ++i) reports[i].model = labels[i];
  {
    std::ofstream os(work / ("summary_seed" + std::to_string(seed) + ".csv"));
    write_summary_csv(os, reports);
  }
  {
    std::ofstream os(work / ("pose_seed" + std::to_string(seed) + ".csv"));
    write_pose_csv(os, reports);
  }

  SeedResult s;
  s.student50 = r_student.clean().ap50;
  s.no_collab50 = r_ego.clean().ap50;
  s.pkd_on70 = r_student.mean_corrupted_ap70();
  s.pkd_off70 = r_no_pkd.mean_corrupted_ap70();
  s.agf_on50 = r_student.clean().ap50;
  s.agf_off50 = r_mean.clean().ap50;
  s.lgm_on70 = r_teacher.clean().ap70;
  s.lgm_off70 = r_plain.clean().ap70;
  s.student_pose0 = pose_ap70(r_student, 0.0);
  s.student_pose4 = pose_ap70(r_student, 0.4);
  s.mean_pose0 = pose_ap70(r_mean, 0.0);
  s.mean_pose4 = pose_ap70(r_mean, 0.4);
  return s;
}

void directional(Outcome& o, int seeds, unsigned threads, const fs::path& work) {
  const auto t0 = Clock::now();
  SeedResult m;
  for (int k = 1; k <= seeds; ++k) {
    const SeedResult s = run_directional_seed(static_cast<std::uint64_t>(k), threads, work);
    auto acc = [&](double SeedResult::*f) { m.*f += s.*f / seeds; };
    for (auto f : {&SeedResult::student50, &SeedResult::no_collab50, &SeedResult::pkd_on70, &SeedResult::pkd_off70,
                   &SeedResult::agf_on50, &SeedResult::agf_off50, &SeedResult::lgm_on70, &SeedResult::lgm_off70,
                   &SeedResult::student_pose0, &SeedResult::student_pose4, &SeedResult::mean_pose0,
                   &SeedResult::mean_pose4}) {
      acc(f);
    }
  }
  const double minutes = seconds_since(t0) / 60.0;
  auto pct = [](double v) { return 100.0 * v; };
  auto drop = [](double before, double after) { return before > 0 ? (before - after) / before : 0.0; };
  const bool a = pct(m.student50) >= pct(m.no_collab50) + 5.0;
  const bool b = m.pkd_on70 > m.pkd_off70;
  const bool c = m.agf_on50 > m.agf_off50;
  const bool d = m.lgm_on70 >= m.lgm_off70;
  const bool e = m.student_pose4 < m.student_pose0 && m.mean_pose4 < m.mean_pose0 &&
                 drop(m.student_pose0, m.student_pose4) < drop(m.mean_pose0, m.mean_pose4);
  const bool timely = minutes < 45.0;
  o.require(a, "7a");
  o.require(b, "7b");
  o.require(c, "7c");
  o.require(d, "7d");
  o.require(e, "7e");
  o.require(timely, "runtime");
  o.detail << std::fixed << std::setprecision(2) << "a[" << (a ? "ok" : "no") << "] student " << pct(m.student50)
           << " vs no_collab " << pct(m.no_collab50) << " AP@0.5; b[" << (b ? "ok" : "no") << "] corrupted AP@0.7 "
           << pct(m.pkd_on70) << " vs " << pct(m.pkd_off70) << "; c[" << (c ? "ok" : "no") << "] clean AP@0.5 "
           << pct(m.agf_on50) << " vs " << pct(m.agf_off50) << "; d[" << (d ? "ok" : "no") << "] teacher AP@0.7 "
           << pct(m.lgm_on70) << " vs " << pct(m.lgm_off70) << "; e[" << (e ? "ok" : "no") << "] AP@0.7 drop "
           << pct(drop(m.student_pose0, m.student_pose4)) << "% vs " << pct(drop(m.mean_pose0, m.mean_pose4))
           << "%; " << seeds << " seeds in " << std::setprecision(1) << minutes << " min";
}

// 8. Two runs with identical configuration produce identical bytes.
std::vector<fs::path> determinism_run(const fs::path& dir, const RunConfig& rc) {
  fs::create_directories(dir);
  const Dataset train = make_train_set(rc), eval = make_eval_set(rc);
  save_dataset(dir / "train.dkds", train);
  save_dataset(dir / "eval.dkds", eval);
  const ParamSet teacher = train_teacher(train, rc).params;
  save_params(dir / "teacher.dkdp", teacher);
  const TrainResult student = train_student(train, teacher, rc);
  save_params(dir / "student.dkdp", student.params);
  {
    std::ofstream os(dir / "student.loss.csv");
    write_loss_csv(os, student.curve);
  }
  const EvalReport report = evaluate({ModelKind::student, student.params}, eval, rc);
  {
    std::ofstream os(dir / "report.json");
    write_report_json(os, report);
  }
  {
    std::ofstream os(dir / "summary.csv");
    write_summary_csv(os, {report});
  }
  return {"train.dkds", "eval.dkds", "teacher.dkdp", "student.dkdp", "student.loss.csv", "report.json",
          "summary.csv"};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void determinism(Outcome& o, const fs::path& work) {
  RunConfig rc = small_run_config();
  rc.train_scenes = 8;
  rc.eval_scenes = 4;
  rc.epochs = 2;
  rc.finalize();
  const auto files = determinism_run(work / "run_a", rc);
  determinism_run(work / "run_b", rc);
  std::size_t bytes = 0;
  for (const auto& f : files) {
    const std::string a = slurp(work / "run_a" / f), b = slurp(work / "run_b" / f);
    o.require(!a.empty() && a == b, f.string() + " differs");
    bytes += a.size();
  }
  o.detail << files.size() << " files, " << bytes << " bytes compared";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-8"};
  std::vector<int> only;
  int seeds = 3;
  unsigned threads = 0;
  std::string work = "acceptance_work";
  app.add_option("--criteria", only, "run only these criteria (default: all)")->delimiter(',');
  app.add_option("--seeds", seeds, "seeds for the directional criterion")->check(CLI::Range(1, 10));
  app.add_option("--threads", threads, "worker threads (0: DKD_THREADS or all cores)");
  app.add_option("--work", work, "scratch directory for reports and run artifacts");
  CLI11_PARSE(app, argc, argv);

  const fs::path work_dir(work);
  fs::create_directories(work_dir);
  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria = {
      {"metric exactness (mRCE)", metric_exactness},
      {"loss composition identities", loss_identities},
      {"diffusion inversion oracle", diffusion_inversion},
      {"gradient suite", gradient_suite},
      {"AGF invariants", agf_invariants},
      {"geometry and AP oracles", geometry_oracles},
      {"directional reproduction", [&](Outcome& o) { directional(o, seeds, threads, work_dir / "directional"); }},
      {"determinism", [&](Outcome& o) { determinism(o, work_dir / "determinism"); }},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    if (id == 7) fs::create_directories(work_dir / "directional");
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    all = all && o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << o.detail.str() << std::endl;
  }
  return all ? 0 : 1;
}
