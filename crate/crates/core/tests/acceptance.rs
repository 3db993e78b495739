//! Acceptance battery. Prints one line per criterion and exits nonzero if
//! any criterion fails other than the two known-false bounds, which are
//! reported with a counterexample instead.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use polfuse_core::experiment::{run_experiment, ExperimentConfig, ExperimentOutcome, ModeResults, Pipeline};
use polfuse_core::feedback::Mode;
use polfuse_core::harness::SweepRow;
use polfuse_core::intent::{redistribute, LstmParams};
use polfuse_core::theory::{
    bound_violations, gradient_instance, verify_bound, verify_gradients, verify_product_non_invariance,
    verify_sqrt_invariance, Bound, BoundSample, GRADIENT_TOLERANCE,
};
use polfuse_core::{EnvConfig, Metrics};

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
    /// The criterion cannot hold; its failure is reported but tolerated.
    known_false: bool,
}

fn outcome(id: u32, name: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome { id, name, passed, detail, known_false: false }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed())
}

fn sqrt_invariance() -> Outcome {
    let (r, took) = timed(|| verify_sqrt_invariance(10_000, 1).unwrap());
    let ok = r.passed() && took < Duration::from_secs(5);
    outcome(1, "geometric fusion of a policy with itself", ok, format!("{} in {:.2?}", r.summary(), took))
}

/// Straight-line KL and geometric/product fusion, independent of the crate.
fn oracle_lhs(sample: &BoundSample, sqrt: bool) -> f64 {
    let soft = |q: &[f64], t: f64| {
        let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = q.iter().map(|v| ((v - m) / t).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect::<Vec<_>>()
    };
    let p = soft(&sample.q_task, sample.t_phi);
    let r = soft(&sample.q_intent, sample.t_psi);
    let f: Vec<f64> = p.iter().zip(&r).map(|(a, b)| if sqrt { (a * b).sqrt() } else { a * b }).collect();
    let z: f64 = f.iter().sum();
    p.iter().zip(&f).map(|(a, b)| a * (a / (b / z)).ln()).sum()
}

fn stated_bound(id: u32, name: &'static str, bound: Bound, corrected: Bound) -> Outcome {
    let ((r, fixed), took) = timed(|| (verify_bound(bound, 10_000, 2).unwrap(), verify_bound(corrected, 10_000, 2).unwrap()));
    let sqrt = bound == Bound::SqrtFusion;
    let worst = bound_violations(bound, 10_000, 2).into_iter().min_by(|a, b| a.2.total_cmp(&b.2));
    let cross_check = worst.as_ref().map_or(true, |(_, s, _)| (oracle_lhs(s, sqrt) - bound.lhs(s)).abs() < 1e-9);
    let example = match &worst {
        Some((i, s, m)) => format!(
            "; sample {i}: |A|={} T_phi={:.3} T_psi={:.3} KL={:.4} exceeds bound by {:.4}",
            s.actions(),
            s.t_phi,
            s.t_psi,
            bound.lhs(s),
            -m
        ),
        None => String::new(),
    };
    let detail = format!(
        "{}{example}; oracle KL agrees: {cross_check}; corrected form: {} in {:.2?}",
        r.summary(),
        fixed.summary(),
        took
    );
    Outcome { id, name, passed: r.passed() && took < Duration::from_secs(10), detail, known_false: true }
}

fn product_non_invariance() -> Outcome {
    let r = verify_product_non_invariance(1_000, 1e-3, 4).unwrap();
    outcome(4, "product fusion preserves the task policy only for a uniform intent", r.passed(), r.summary())
}

fn telescoping() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let (model, item) = gradient_instance(5, i).unwrap();
        let q = model.forward(&item.trajectory).unwrap().q_tilde;
        let total: f64 = redistribute(&q).iter().sum();
        worst = worst.max((total - q[q.len() - 1]).abs());
    }
    outcome(5, "redistributed rewards sum to the final prediction", worst < 1e-9, format!("max |sum r - q_H| = {worst:.2e}"))
}

fn gradients() -> Outcome {
    let r = verify_gradients(20, 6, false).unwrap();
    let err = GRADIENT_TOLERANCE - r.min_margin;
    outcome(6, "LSTM backpropagation matches finite differences", r.passed(), format!("max relative error {err:.2e} over {} instances", r.samples))
}

/// Main, continuous and lookahead losses written out directly.
fn oracle_losses(q: &[f64], beta: &[f64], label: f64, delta: usize) -> (f64, f64, f64) {
    let h = q.len();
    let l_m = (label - q[h - 1]) * (label - q[h - 1]);
    let mut l_c = 0.0;
    for t in 0..h {
        l_c += (label - q[t]) * (label - q[t]);
    }
    l_c /= h as f64;
    let mut l_e = 0.0;
    let mut n = 0;
    let mut t = 0;
    while t + delta < h {
        l_e += (q[t + delta] - beta[t]) * (q[t + delta] - beta[t]);
        n += 1;
        t += 1;
    }
    if n > 0 {
        l_e /= n as f64;
    }
    (l_m, l_c, l_e)
}

fn loss_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let (model, item) = gradient_instance(7, i).unwrap();
        let xs = model.encoding.encode_trajectory(&item.trajectory).unwrap();
        let label = item.score as f64;
        let mut grad = LstmParams::zeros(model.lstm.input, model.lstm.hidden);
        let got = model.loss_and_grad(&xs, label, &mut grad);
        let out = model.forward(&item.trajectory).unwrap();
        let (l_m, l_c, l_e) = oracle_losses(&out.q_tilde, &out.beta, label, model.lookahead);
        let total = l_m + (l_c + l_e) / 10.0;
        for (a, b) in [(got.l_m, l_m), (got.l_c, l_c), (got.l_e, l_e), (got.total, total)] {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(7, "training losses match the written-out formulas", worst < 1e-12, format!("max abs difference {worst:.2e}"))
}

fn fmt(m: &Metrics) -> String {
    format!("desired {:.2} undesired {:.2} score {:.2}", m.desired_visits.mean, m.undesired_visits.mean, m.score.mean)
}

fn mode<'a>(o: &'a ExperimentOutcome, m: Mode) -> &'a ModeResults {
    o.mode(m).expect("mode evaluated")
}

fn end_to_end(o: &ExperimentOutcome, took: Duration) -> Outcome {
    let p = mode(o, Mode::Preference);
    let a = mode(o, Mode::Avoidance);
    let x = mode(o, Mode::Mixed);
    let d = |m: &Metrics| m.desired_visits.mean;
    let u = |m: &Metrics| m.undesired_visits.mean;
    let s = |m: &Metrics| m.score.mean;
    let checks = [
        ("pref dynamic score >= 0.95", s(&p.dynamic) >= 0.95),
        ("pref dynamic desired >= 3x dqn", d(&p.dynamic) >= 3.0 * d(&p.dqn)),
        ("pref rudder score <= 0.3", s(&p.rudder) <= 0.3),
        ("pref rudder desired > dynamic", d(&p.rudder) > d(&p.dynamic)),
        ("avoid dynamic undesired <= 0.1", u(&a.dynamic) <= 0.1),
        ("avoid dynamic score >= 0.95", s(&a.dynamic) >= 0.95),
        ("mixed dynamic undesired <= 0.1", u(&x.dynamic) <= 0.1),
        ("mixed dynamic desired > dqn", d(&x.dynamic) > d(&x.dqn)),
        ("mixed dynamic score >= 0.95", s(&x.dynamic) >= 0.95),
        ("runtime <= 10 min", took <= Duration::from_secs(600)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = format!(
        "{:.0?}; pref dqn [{}] rudder [{}] dynamic [{}]; avoid dynamic [{}]; mixed dqn [{}] dynamic [{}]{}",
        took,
        fmt(&p.dqn),
        fmt(&p.rudder),
        fmt(&p.dynamic),
        fmt(&a.dynamic),
        fmt(&x.dqn),
        fmt(&x.dynamic),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    outcome(8, "grid navigation end to end", failed.is_empty(), detail)
}

fn static_pitfall(o: &ExperimentOutcome) -> Outcome {
    let p = mode(o, Mode::Preference);
    let a = mode(o, Mode::Avoidance);
    let ok = p.static_min.score.mean <= 0.5 * p.dynamic.score.mean
        && p.static_min.desired_visits.mean > p.dynamic.desired_visits.mean
        && (a.static_min.score.mean - a.dynamic.score.mean).abs() <= 0.1;
    let detail = format!(
        "pref static [{}] vs dynamic [{}]; avoid static score {:.2} vs dynamic {:.2}",
        fmt(&p.static_min),
        fmt(&p.dynamic),
        a.static_min.score.mean,
        a.dynamic.score.mean
    );
    outcome(9, "static fusion at the minimum temperature", ok, detail)
}

fn row(rows: &[SweepRow], value: f64) -> &Metrics {
    &rows.iter().find(|r| r.value == value).expect("sweep value present").metrics
}

fn eta_direction(o: &ExperimentOutcome) -> Outcome {
    let (lo, hi) = (row(&o.eta_sweep, 0.0), row(&o.eta_sweep, 2.0));
    let ok = hi.desired_visits.mean >= lo.desired_visits.mean && hi.undesired_visits.mean <= lo.undesired_visits.mean;
    outcome(10, "raising eta favours the intent", ok, format!("eta=0 [{}] eta=2 [{}]", fmt(lo), fmt(hi)))
}

fn tmax_direction(o: &ExperimentOutcome) -> Outcome {
    let (lo, hi) = (row(&o.tmax_sweep, 10.0), row(&o.tmax_sweep, 25.0));
    let ok = hi.desired_visits.mean < lo.desired_visits.mean && hi.undesired_visits.mean > lo.undesired_visits.mean;
    outcome(11, "raising T_max weakens the intent", ok, format!("t_max=10 [{}] t_max=25 [{}]", fmt(lo), fmt(hi)))
}

fn human_weight_direction(o: &ExperimentOutcome) -> Outcome {
    let (lo, hi) = (row(&o.human_weight_sweep, 0.3), row(&o.human_weight_sweep, 0.7));
    let ok = hi.desired_visits.mean > lo.desired_visits.mean;
    outcome(12, "scalarised baseline follows the human weight", ok, format!("w=0.3 [{}] w=0.7 [{}]", fmt(lo), fmt(hi)))
}

fn determinism() -> Outcome {
    let mut config = ExperimentConfig::default();
    if let EnvConfig::GridNav(g) = &mut config.env {
        g.max_steps = 15;
    }
    config.learner.episodes = 300;
    config.corpus_size = 200;
    config.intent.max_epochs = 3;
    config.intent.hidden = 16;
    config.eval.n_seeds = 3;
    config.eval.episodes_per_seed = 5;
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let (_, files) = run_experiment(&config, dir.path()).unwrap();
        files.iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>()
    };
    let (a, b) = (run(), run());
    let ok = !a.is_empty() && a == b;
    outcome(13, "reruns produce byte-identical reports", ok, format!("{} report files compared", a.len()))
}

fn main() -> ExitCode {
    let mut results = vec![
        sqrt_invariance(),
        stated_bound(2, "geometric fusion KL bound as stated", Bound::SqrtFusion, Bound::SqrtFusionAbs),
        stated_bound(3, "product fusion KL bound as stated", Bound::ProductFusion, Bound::ProductFusionEntropy),
        product_non_invariance(),
        telescoping(),
        gradients(),
        loss_oracle(),
    ];
    for r in &results {
        report(r);
    }

    let config = ExperimentConfig::default();
    let (outcome, took) = timed(|| Pipeline::train(&config).and_then(|p| p.run()).expect("default experiment runs"));
    let later = vec![
        end_to_end(&outcome, took),
        static_pitfall(&outcome),
        eta_direction(&outcome),
        tmax_direction(&outcome),
        human_weight_direction(&outcome),
        determinism(),
    ];
    for r in &later {
        report(r);
    }
    results.extend(later);

    let unexpected: Vec<u32> = results.iter().filter(|r| !r.passed && !r.known_false).map(|r| r.id).collect();
    let passed = results.iter().filter(|r| r.passed).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected failures {unexpected:?}");
        ExitCode::FAILURE
    }
}

fn report(r: &Outcome) {
    let status = match (r.passed, r.known_false) {
        (true, _) => "PASS",
        (false, true) => "FAIL (known counterexamples)",
        (false, false) => "FAIL",
    };
    println!("criterion {:>2} {status}: {} | {}", r.id, r.name, r.detail);
}
