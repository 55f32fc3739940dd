//! Acceptance suite: ten criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary so the lines are printed whether or not a
//! criterion fails. The experiment criteria run the default configuration
//! from scratch in a temporary directory; expect the whole suite to take
//! most of an hour on one core.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rirl_harness::runner::{run_study, Cell, Context};
use rirl_harness::stats::{ile_by_seed, is_nondecreasing, mean, paired_ile, paired_t_greater, summarize};
use rirl_harness::{ExperimentConfig, Method, ResultRow, Study};
use robust_irl::baselines::mlt_irl;
use robust_irl::em::{exact_estep, gibbs_estep, posterior, robust_irl, EmOptions, GibbsOptions, HiddenMdp};
use robust_irl::fixtures::{tiny_delta, tiny_hidden, tiny_observations, tiny_uniform, TINY_THETA};
use robust_irl::maxent::{
    self, dual_gradient, empirical_feature_expectation, FeatureExpectation, SolveOptions, Trajectory,
};
use robust_irl::mdp::{boltzmann_policy, reward_table, Policy, RewardWeights};
use robust_irl::obs::{
    fit_epoch, intensity_at, predicted_coeffs, IntensitySample, MotionSegment, ObservationKind, Point,
};
use robust_irl::world::{simulate_expert, TrialOutcome, WorldConfig};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// Brute-force oracles on the two-state chain
// ---------------------------------------------------------------------------

/// Every `(s, a)` sequence of length `L + 1`.
fn all_sequences(n_s: usize, n_a: usize, len: usize) -> Vec<Vec<(usize, usize)>> {
    let n_p = n_s * n_a;
    (0..n_p.pow(len as u32))
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let p = code % n_p;
                    code /= n_p;
                    (p / n_a, p % n_a)
                })
                .collect()
        })
        .collect()
}

fn dynamics(hm: &HiddenMdp, steps: &[(usize, usize)]) -> f64 {
    let mut p = hm.mdp.start()[steps[0].0];
    for w in steps.windows(2) {
        p *= hm.mdp.transition_prob(w[0].0, w[0].1, w[1].0);
    }
    p
}

/// Log partition over dynamics-feasible trajectories by enumeration.
fn brute_log_z(hm: &HiddenMdp, theta: &[f64]) -> f64 {
    let len = hm.mdp.horizon() + 1;
    all_sequences(hm.mdp.n_states(), hm.mdp.n_actions(), len)
        .iter()
        .filter(|t| dynamics(hm, t) > 0.0)
        .map(|t| {
            let f: f64 = t
                .iter()
                .map(|&(s, a)| {
                    let x = hm.feats.pair_features(s * hm.mdp.n_actions() + a);
                    x.iter().zip(theta).map(|(x, th)| x * th).sum::<f64>()
                })
                .sum();
            f.exp()
        })
        .sum::<f64>()
        .ln()
}

fn expert(hm: &HiddenMdp) -> Policy {
    let theta = RewardWeights::new(TINY_THETA.to_vec()).unwrap();
    boltzmann_policy(&hm.mdp, &reward_table(&theta, &hm.feats).unwrap(), 5.0).unwrap()
}

fn tiny_demos(
    hm: &HiddenMdp,
    n: usize,
    noise: f64,
    seed: u64,
) -> (Vec<Trajectory>, Vec<robust_irl::obs::ObservationSequence>) {
    let pi = expert(hm);
    let trajs: Vec<Trajectory> = (0..n)
        .map(|i| simulate_expert(&hm.mdp, &pi, hm.mdp.horizon(), seed * 1000 + i as u64))
        .collect();
    let omegas = trajs
        .iter()
        .enumerate()
        .map(|(i, t)| tiny_observations(hm, t, noise, seed * 1000 + i as u64))
        .collect();
    (trajs, omegas)
}

// ---------------------------------------------------------------------------
// Criteria 1 to 5: components against oracles
// ---------------------------------------------------------------------------

fn c1_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let listener = Point::new(0.0, 0.0);
    let mut worst = 0.0f64;
    let mut count = 0;
    while count < 1000 {
        let seg = MotionSegment {
            p0: Point::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)),
            v: Point::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
            t0: rng.random_range(0.0..1.0),
            duration: 1.0,
        };
        if seg.min_dist2(listener) < 0.25 {
            continue;
        }
        let k = rng.random_range(0.5..200.0);
        let n = rng.random_range(3..40);
        let samples: Vec<IntensitySample> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                IntensitySample {
                    t,
                    intensity: intensity_at(&seg, listener, k, t).unwrap(),
                }
            })
            .collect();
        let want = predicted_coeffs(&seg, listener, k).map_err(|e| e.to_string())?;
        let got = fit_epoch(&samples, 1.0).coeffs;
        let norm = want.iter().map(|x| x * x).sum::<f64>().sqrt();
        let err = want.iter().zip(got).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm;
        worst = worst.max(err);
        count += 1;
    }
    check(
        worst <= 1e-8,
        format!("1000 segments, worst relative error {worst:.2e} (tolerance 1e-8)"),
    )
}

fn c2_gradient() -> Verdict {
    let hm = tiny_hidden(ObservationKind::SoundOnly, 0.3);
    let zero = FeatureExpectation(vec![0.0; 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let theta = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        // With a zero target the dual gradient is the model expectation,
        // the gradient of log Z.
        let g = dual_gradient(&hm.mdp, &hm.feats, &RewardWeights::new(theta.to_vec()).unwrap(), &zero)
            .map_err(|e| e.to_string())?;
        let h = 1e-5;
        for k in 0..2 {
            let (mut up, mut down) = (theta, theta);
            up[k] += h;
            down[k] -= h;
            let fd = (brute_log_z(&hm, &up) - brute_log_z(&hm, &down)) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs() / fd.abs().max(1e-12));
        }
    }
    check(
        worst <= 1e-4,
        format!("20 random θ, worst relative error {worst:.2e} (tolerance 1e-4)"),
    )
}

fn c3_posterior() -> Verdict {
    let hm = tiny_hidden(ObservationKind::Fused, 0.3);
    let (_, omegas) = tiny_demos(&hm, 4, 0.05, 3);
    let pi = Policy::new(2, 2, vec![0.7, 0.3, 0.2, 0.8]).unwrap();
    let n_a = hm.mdp.n_actions();
    let (mut worst, mut worst_sum) = (0.0f64, 0.0f64);
    for omega in &omegas {
        let lik = hm.likelihoods(omega).map_err(|e| e.to_string())?;
        let seqs = all_sequences(2, 2, hm.mdp.horizon() + 1);
        let joint = |t: &[(usize, usize)]| {
            dynamics(&hm, t)
                * t.iter()
                    .enumerate()
                    .map(|(i, &(s, a))| pi.prob(s, a) * lik[i][s * n_a + a])
                    .product::<f64>()
        };
        let evidence: f64 = seqs.iter().map(|t| joint(t)).sum();
        let mut total = 0.0;
        for t in &seqs {
            let got = posterior(&Trajectory::new(t.clone()), omega, &hm, &pi).map_err(|e| e.to_string())?;
            worst = worst.max((got - joint(t) / evidence).abs());
            total += got;
        }
        worst_sum = worst_sum.max((total - 1.0).abs());
    }
    check(
        worst <= 1e-9 && worst_sum <= 1e-9,
        format!("worst gap to Bayes {worst:.1e}, worst |Σ - 1| {worst_sum:.1e} (tolerance 1e-9)"),
    )
}

fn c4_gibbs() -> Verdict {
    let clock = Instant::now();
    let base = tiny_hidden(ObservationKind::SoundOnly, 0.3);
    let fixtures = [
        base.clone(),
        tiny_hidden(ObservationKind::SoundOnly, 3.0),
        tiny_hidden(ObservationKind::Fused, 0.3),
        tiny_hidden(ObservationKind::VisionOnly, 0.3),
        tiny_delta(&base),
        tiny_uniform(&base),
    ];
    let mut worst = 0.0f64;
    for hm in &fixtures {
        let (_, omegas) = tiny_demos(hm, 5, 0.05, 7);
        let pi = expert(hm);
        let exact = exact_estep(&omegas, hm, &pi).map_err(|e| e.to_string())?;
        for seed in 0..3 {
            let g = gibbs_estep(
                &omegas,
                hm,
                &pi,
                &GibbsOptions {
                    seed,
                    ..Default::default()
                },
            )
            .map_err(|e| e.to_string())?;
            worst = worst.max(g.phi.max_abs_diff(&exact.phi));
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    check(
        worst < 0.05 && secs < 60.0,
        format!(
            "{} fixtures x 3 seeds, worst sup gap {worst:.4} (tolerance 0.05), {secs:.1} s (limit 60 s)",
            fixtures.len()
        ),
    )
}

fn c5_reduction() -> Verdict {
    let delta = tiny_delta(&tiny_hidden(ObservationKind::SoundOnly, 0.3));
    let (truth, omegas) = tiny_demos(&delta, 8, 0.0, 9);
    let phi_hat = empirical_feature_expectation(&truth, &delta.feats).map_err(|e| e.to_string())?;
    let plain =
        maxent::solve(&phi_hat, &delta.mdp, &delta.feats, &SolveOptions::default()).map_err(|e| e.to_string())?;
    let robust = robust_irl(&omegas, &delta, &EmOptions::default()).map_err(|e| e.to_string())?;
    let mlt = mlt_irl(&omegas, &delta, &SolveOptions::default()).map_err(|e| e.to_string())?;
    let gap = robust.solution.expectation.max_abs_diff(&plain.expectation);
    let mlt_exact = mlt.trajectories == truth && mlt.solution.theta == plain.theta;
    check(
        gap < 1e-3 && mlt_exact,
        format!("RobustIRL vs MaxEnt sup gap {gap:.1e} (tolerance 1e-3), MLT decodes the truth and matches exactly: {mlt_exact}"),
    )
}

// ---------------------------------------------------------------------------
// Criteria 6 to 10: experiments
// ---------------------------------------------------------------------------

fn run(cfg: &ExperimentConfig, study: Study, dir: &Path) -> Result<(Vec<ResultRow>, f64), String> {
    let mut cfg = cfg.clone();
    cfg.output = dir.to_path_buf();
    let clock = Instant::now();
    let rows = run_study(&Context::new(&cfg).map_err(|e| e.to_string())?, study).map_err(|e| e.to_string())?;
    if let Some(bad) = rows.iter().find(|r| !r.is_ok()) {
        return Err(format!(
            "{} σ={} seed {}: {}",
            bad.method, bad.sigma, bad.seed, bad.status
        ));
    }
    Ok((rows, clock.elapsed().as_secs_f64()))
}

fn patrol() -> ExperimentConfig {
    ExperimentConfig {
        world: WorldConfig::patrol(),
        ..ExperimentConfig::default()
    }
}

fn mean_ile(rows: &[ResultRow], method: Method, x: f64) -> f64 {
    mean(&ile_by_seed(rows, method, x).into_values().collect::<Vec<_>>())
}

/// Sweep checks for one domain; returns the detail and whether it passed.
fn sweep_ordering(name: &str, rows: &[ResultRow], cfg: &ExperimentConfig) -> (bool, String) {
    let (mlt, robust) = paired_ile(rows, Method::MLT, Method::RobustIRL, 0.2);
    let p = paired_t_greater(&mlt, &robust).unwrap_or(1.0);
    let curve = |m| {
        cfg.noise_levels
            .iter()
            .map(|&s| mean_ile(rows, m, s))
            .collect::<Vec<f64>>()
    };
    let (c_mlt, c_rob) = (curve(Method::MLT), curve(Method::RobustIRL));
    let fmt = |c: &[f64]| c.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/");
    let ok = mlt.len() >= 10
        && mean(&robust) < mean(&mlt)
        && p < 0.05
        && is_nondecreasing(&c_mlt)
        && is_nondecreasing(&c_rob);
    (
        ok,
        format!(
            "{name}: n={} p={p:.4}, MLT {} RobustIRL {}",
            mlt.len(),
            fmt(&c_mlt),
            fmt(&c_rob)
        ),
    )
}

struct Experiments {
    drone_sweep: Vec<ResultRow>,
    patrol_sweep: Vec<ResultRow>,
}

fn c6_sweeps(dir: &Path) -> (Verdict, Option<Experiments>) {
    let result = (|| {
        let drone = ExperimentConfig::default();
        let (d_rows, d_secs) = run(&drone, Study::Sweep, &dir.join("drone"))?;
        let (p_rows, p_secs) = run(&patrol(), Study::Sweep, &dir.join("patrol"))?;
        Ok::<_, String>((d_rows, p_rows, d_secs + p_secs))
    })();
    let (d_rows, p_rows, secs) = match result {
        Ok(r) => r,
        Err(e) => return (Err(e), None),
    };
    let (d_ok, d_text) = sweep_ordering("drone", &d_rows, &ExperimentConfig::default());
    let (p_ok, p_text) = sweep_ordering("patrol", &p_rows, &patrol());
    let verdict = check(
        d_ok && p_ok && secs < 900.0,
        format!("{d_text}; {p_text}; σ=0.2 one-sided paired p<0.05, means nondecreasing; {secs:.0} s (limit 900 s)"),
    );
    (
        verdict,
        Some(Experiments {
            drone_sweep: d_rows,
            patrol_sweep: p_rows,
        }),
    )
}

fn c7_convergence(dir: &Path) -> Verdict {
    let cfg = patrol();
    let (rows, _) = run(&cfg, Study::Convergence, &dir.join("convergence"))?;
    let (loose, tight) = (0.2, 0.01);
    let mut ok = true;
    let mut parts = Vec::new();
    for method in [Method::RobustIRLSoundOnly, Method::RobustIRL] {
        let groups: Vec<_> = summarize(&rows).into_iter().filter(|g| g.method == method).collect();
        let at = |x: f64| groups.iter().find(|g| g.x == x).expect("threshold present");
        let (l, t) = (at(loose), at(tight));
        let (li, ti) = (l.mean_ile.unwrap_or(f64::NAN), t.mean_ile.unwrap_or(f64::NAN));
        ok &= l.n >= 10 && ti <= li && t.mean_wall_time >= l.mean_wall_time;
        parts.push(format!(
            "{method}: ILE {li:.3} -> {ti:.3}, wall {:.2} s -> {:.2} s",
            l.mean_wall_time, t.mean_wall_time
        ));
    }
    check(
        ok,
        format!(
            "patrol σ={}, threshold 0.2 -> 0.01; {}",
            cfg.convergence_noise,
            parts.join("; ")
        ),
    )
}

fn c8_attack(dir: &Path) -> Result<(Verdict, Vec<ResultRow>), String> {
    let cfg = ExperimentConfig {
        methods: vec![Method::RandomAttack, Method::MLT, Method::RobustIRL],
        ..patrol()
    };
    let (rows, _) = run(&cfg, Study::Attack, &dir.join("attack"))?;
    let rate = |m: Method| {
        let rs: Vec<&ResultRow> = rows.iter().filter(|r| r.method == m).collect();
        let wins = rs.iter().filter(|r| r.outcome == Some(TrialOutcome::Success)).count();
        (wins as f64 / rs.len() as f64, rs.len())
    };
    let ((random, n), (mlt, _), (robust, _)) = (rate(Method::RandomAttack), rate(Method::MLT), rate(Method::RobustIRL));
    let ok = n >= 100 && mlt - random >= 0.05 && robust - mlt >= 0.05;
    Ok((
        check(
            ok,
            format!(
                "patrol σ={}, {n} seeds: RandomAttack {:.0}% < MLT {:.0}% < RobustIRL {:.0}% (gaps ≥ 5 pp)",
                cfg.attack_noise,
                100.0 * random,
                100.0 * mlt,
                100.0 * robust
            ),
        ),
        rows,
    ))
}

fn c9_fused(dir: &Path, fused: &[ResultRow]) -> Verdict {
    let cfg = ExperimentConfig {
        methods: vec![Method::RobustIRLVisionOnly],
        ..patrol()
    };
    let (vision, _) = run(&cfg, Study::Sweep, &dir.join("vision"))?;
    let mut ok = true;
    let mut parts = Vec::new();
    for &s in &cfg.noise_levels {
        let (f, v) = (
            mean_ile(fused, Method::RobustIRL, s),
            mean_ile(&vision, Method::RobustIRLVisionOnly, s),
        );
        let n = ile_by_seed(&vision, Method::RobustIRLVisionOnly, s).len();
        ok &= n >= 10 && f <= v;
        parts.push(format!("σ={s}: {f:.2} vs {v:.2}"));
    }
    check(
        ok,
        format!("patrol, fused vs vision-only mean ILE: {}", parts.join(", ")),
    )
}

fn c10_determinism(samples: &[(ExperimentConfig, &ResultRow)]) -> Verdict {
    let mut mismatched = Vec::new();
    for (cfg, row) in samples {
        let ctx = Context::new(cfg).map_err(|e| e.to_string())?;
        let again = ctx.run_cell(&Cell {
            study: row.study,
            method: row.method,
            sigma: row.sigma,
            seed: row.seed,
            threshold: row.threshold,
        });
        if again.without_timing() != row.without_timing() {
            mismatched.push(format!(
                "{} {} σ={} seed {}",
                row.study, row.method, row.sigma, row.seed
            ));
        }
    }
    check(
        mismatched.is_empty(),
        format!(
            "{} rows rerun with one worker, mismatches: {:?}",
            samples.len(),
            mismatched
        ),
    )
}

// ---------------------------------------------------------------------------

fn report(n: usize, title: &str, verdict: &Verdict, secs: f64) -> bool {
    let (tag, detail) = match verdict {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("[{tag}] {n:>2} {title}: {detail} [{secs:.1} s]");
    verdict.is_ok()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let clock = Instant::now();
    let out = f();
    (out, clock.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters pass arguments; only a bare run or
    // an `acceptance` filter runs the suite.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }

    let dir = tempfile::tempdir().expect("temporary directory");
    let mut all = true;
    let (v, s) = timed(c1_round_trip);
    all &= report(1, "MotionSegment round trip", &v, s);
    let (v, s) = timed(c2_gradient);
    all &= report(2, "MaxEnt gradient vs finite differences", &v, s);
    let (v, s) = timed(c3_posterior);
    all &= report(3, "exact posterior vs brute-force Bayes", &v, s);
    let (v, s) = timed(c4_gibbs);
    all &= report(4, "Gibbs E-step vs exact", &v, s);
    let (v, s) = timed(c5_reduction);
    all &= report(5, "delta observation reduction", &v, s);

    let ((v, experiments), s) = timed(|| c6_sweeps(dir.path()));
    all &= report(6, "RobustIRL beats MLT, ILE grows with noise", &v, s);
    let (v, s) = timed(|| c7_convergence(dir.path()));
    all &= report(7, "tighter E-step threshold", &v, s);
    let (attack, s) = timed(|| c8_attack(dir.path()));
    let attack = match attack {
        Ok((v, rows)) => {
            all &= report(8, "penetration success ordering", &v, s);
            rows
        }
        Err(e) => {
            all &= report(8, "penetration success ordering", &Err(e), s);
            Vec::new()
        }
    };
    let (v, s) = match &experiments {
        Some(e) => timed(|| c9_fused(dir.path(), &e.patrol_sweep)),
        None => (Err("noise sweeps did not run".into()), 0.0),
    };
    all &= report(9, "fused sensor vs vision only", &v, s);

    let mut samples: Vec<(ExperimentConfig, &ResultRow)> = Vec::new();
    if let Some(e) = &experiments {
        for r in e.drone_sweep.iter().filter(|r| r.sigma == 0.2 && r.seed == 3) {
            samples.push((ExperimentConfig::default(), r));
        }
        for r in e.patrol_sweep.iter().filter(|r| r.sigma == 0.1 && r.seed == 5) {
            samples.push((patrol(), r));
        }
    }
    let attack_cfg = ExperimentConfig {
        methods: vec![Method::RandomAttack, Method::MLT, Method::RobustIRL],
        ..patrol()
    };
    for r in attack.iter().filter(|r| r.seed == 42) {
        samples.push((attack_cfg.clone(), r));
    }
    let (v, s) = if samples.is_empty() {
        (Err("no rows to rerun".into()), 0.0)
    } else {
        timed(|| c10_determinism(&samples))
    };
    all &= report(10, "bit-identical rerun", &v, s);

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
