//! Acceptance criteria for the whole pipeline, one line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 1 5 10`.

use std::collections::BTreeSet;
use std::time::Instant;

use millreduce::encoding::Dataset;
use millreduce::mlp::{nguyen_widrow_init, MlpParams, ParamKind};
use millreduce::pruner::{prune_and_retrain, PruneConfig};
use millreduce::reduction::{synchronization_stations, Routing};
use millreduce::sim::{category_min_path_time, simulate_full, SimRun, Station, PRODUCTS_PER_LOG};
use millreduce::stats::{f_test_two_sample, t_test_two_sample};
use millreduce::study::{run_study, Execution, StudyRun};
use millreduce::trainer::{residuals, rmse, train, TrainConfig};
use millreduce::{EncodingScheme, SimConfig, StudyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn uniform_rows(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn noisy_targets(net: &MlpParams, rows: &[Vec<f64>], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, sigma).unwrap();
    rows.iter().map(|x| net.predict(x) + noise.sample(rng)).collect()
}

/// Central difference `(f(θ + h) - f(θ - h)) / 2h` for parameter `k`,
/// evaluated with an independent forward pass. Differences of `tanh` use
/// `sinh(a - b) / (cosh a cosh b)` so no digits cancel.
fn central_difference(net: &MlpParams, x: &[f64], k: usize, h: f64) -> f64 {
    let z = |n: usize| {
        net.param(net.hidden_bias_index(n)) + (0..net.n_inputs()).map(|i| net.param(net.hidden_weight_index(n, i)) * x[i]).sum::<f64>()
    };
    let tanh_gap = |z: f64, d: f64| (2.0 * d).sinh() / ((z + d).cosh() * (z - d).cosh());
    let diff = match net.kind(k) {
        ParamKind::HiddenWeight { neuron, input } => net.output_weights()[neuron] * tanh_gap(z(neuron), h * x[input]),
        ParamKind::HiddenBias { neuron } => net.output_weights()[neuron] * tanh_gap(z(neuron), h),
        ParamKind::OutputWeight { neuron } => 2.0 * h * z(neuron).tanh(),
        ParamKind::OutputBias => 2.0 * h,
    };
    diff / (2.0 * h)
}

fn criterion_1() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut net = nguyen_widrow_init(12, 10, seed).unwrap();
        net.set_param(net.output_bias_index(), rng.random_range(-1.0..1.0));
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = net.output_jacobian(&x).unwrap();
        for (k, a) in analytic.iter().enumerate() {
            let fd = central_difference(&net, &x, k, 1e-6);
            let scale = a.abs().max(fd.abs());
            if scale > 0.0 {
                worst = worst.max((a - fd).abs() / scale);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(worst <= 1e-6 && secs < 5.0, format!("max relative error {worst:.3e}, {secs:.2} s"))
}

fn criterion_2() -> Verdict {
    let t0 = Instant::now();
    let mut ok = 0;
    let mut rmses = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let generator = nguyen_widrow_init(3, 4, 1000 + seed).unwrap();
        let rows = uniform_rows(&mut rng, 300, 3);
        let targets = noisy_targets(&generator, &rows, 0.01, &mut rng);
        let data = Dataset::from_rows(&rows, &targets).unwrap();
        let config = TrainConfig { max_iterations: 200, ..TrainConfig::default() };
        let out = train(&nguyen_widrow_init(3, 4, 2000 + seed).unwrap(), &data, &config).unwrap();
        let r = rmse(&residuals(&out.params, &data).unwrap());
        ok += usize::from(r <= 0.02);
        rmses.push(format!("{r:.4}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(ok >= 9 && secs < 30.0, format!("{ok}/10 runs at RMSE <= 0.02 [{}], {secs:.2} s", rmses.join(" ")))
}

fn criterion_3() -> Verdict {
    let mut ok = 0;
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let generator = nguyen_widrow_init(3, 4, 1300 + seed).unwrap();
        let rows = uniform_rows(&mut rng, 300, 3);
        let clean = noisy_targets(&generator, &rows, 0.01, &mut rng);
        let mut dirty = clean.clone();
        let n_out = rows.len() / 20;
        let mut outliers = BTreeSet::new();
        while outliers.len() < n_out {
            outliers.insert(rng.random_range(0..rows.len()));
        }
        for &i in &outliers {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            dirty[i] += sign * rng.random_range(2.0..5.0);
        }
        let keep: Vec<usize> = (0..rows.len()).filter(|i| !outliers.contains(i)).collect();
        let clean_set = Dataset::from_rows(&rows, &clean).unwrap().subset(&keep);
        let init = nguyen_widrow_init(3, 4, 2300 + seed).unwrap();
        let fit = |targets: &[f64], robust: bool| {
            let data = Dataset::from_rows(&rows, targets).unwrap();
            let config = TrainConfig { robust, ..TrainConfig::default() };
            let out = train(&init, &data, &config).unwrap();
            rmse(&residuals(&out.params, &clean_set).unwrap())
        };
        let reference = fit(&clean, false);
        let robust = fit(&dirty, true);
        let plain = fit(&dirty, false);
        let pass = robust <= 2.0 * reference && robust < plain;
        ok += usize::from(pass);
        notes.push(format!("{robust:.4}/{reference:.4}/{plain:.3}"));
    }
    verdict(ok >= 8, format!("{ok}/10 seeds pass (robust/clean/plain RMSE: {})", notes.join(" ")))
}

fn input_active(net: &MlpParams, input: usize) -> bool {
    (0..net.n_hidden()).any(|h| {
        net.is_active(net.hidden_weight_index(h, input)) && net.is_active(net.output_weight_index(h))
    })
}

fn criterion_4() -> Verdict {
    let mut eliminated = 0;
    let mut guard_ok = true;
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let generator = nguyen_widrow_init(3, 4, 1400 + seed).unwrap();
        let rows = uniform_rows(&mut rng, 900, 4);
        let relevant: Vec<Vec<f64>> = rows.iter().map(|r| r[..3].to_vec()).collect();
        let targets = noisy_targets(&generator, &relevant, 0.01, &mut rng);
        let data = Dataset::from_rows(&rows, &targets).unwrap();
        let learn = data.subset(&(0..600).collect::<Vec<_>>());
        let val = data.subset(&(600..900).collect::<Vec<_>>());
        let tc = TrainConfig::default();
        let trained = train(&nguyen_widrow_init(4, 6, 2400 + seed).unwrap(), &learn, &tc).unwrap();
        let out = prune_and_retrain(&trained.params, &learn, &val, &tc, &PruneConfig::default()).unwrap();
        let gone = !input_active(&out.params, 3);
        eliminated += usize::from(gone);
        guard_ok &= out.final_val_rmse <= 1.02 * out.best_val_rmse;
        notes.push(format!("{}{:.4}", if gone { "+" } else { "-" }, out.final_val_rmse / out.best_val_rmse));
    }
    verdict(
        eliminated >= 8 && guard_ok,
        format!("noise input removed in {eliminated}/10, final/best val RMSE always <= 1.02: {guard_ok} [{}]", notes.join(" ")),
    )
}

fn welch_oracle(a: &[f64], b: &[f64]) -> (f64, f64) {
    let m = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let v = |x: &[f64]| {
        let mx = m(x);
        x.iter().map(|y| (y - mx).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    };
    let (qa, qb) = (v(a) / a.len() as f64, v(b) / b.len() as f64);
    let t = (m(a) - m(b)) / (qa + qb).sqrt();
    let df = (qa + qb).powi(2) / (qa * qa / (a.len() - 1) as f64 + qb * qb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    let p_beta = 2.0 * dist.sf(t.abs());
    let p_quad = 1.0 - 2.0 * simpson(&|x| student_density(x, df), 0.0, t.abs(), 1e-12);
    assert!((p_beta - p_quad).abs() < 1e-8, "oracles disagree: {p_beta} vs {p_quad}");
    (t, p_beta)
}

fn f_oracle(a: &[f64], b: &[f64]) -> (f64, f64) {
    let v = |x: &[f64]| {
        let mx = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|y| (y - mx).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    };
    let (top, bottom) = if v(a) >= v(b) { (a, b) } else { (b, a) };
    let f = v(top) / v(bottom);
    let (d1, d2) = ((top.len() - 1) as f64, (bottom.len() - 1) as f64);
    let p_beta = FisherSnedecor::new(d1, d2).unwrap().sf(f);
    let p_quad = 1.0 - simpson(&|x| fisher_density(x, d1, d2), 0.0, f, 1e-12);
    assert!((p_beta - p_quad).abs() < 1e-8, "oracles disagree: {p_beta} vs {p_quad}");
    (f, p_beta)
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

fn student_density(x: f64, df: f64) -> f64 {
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

fn fisher_density(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return if d1 > 2.0 { 0.0 } else if d1 == 2.0 { 1.0 } else { f64::INFINITY };
    }
    let ln_b = ln_gamma(d1 / 2.0) + ln_gamma(d2 / 2.0) - ln_gamma((d1 + d2) / 2.0);
    let ln = 0.5 * d1 * (d1 / d2).ln() + (0.5 * d1 - 1.0) * x.ln() - 0.5 * (d1 + d2) * (1.0 + d1 * x / d2).ln() - ln_b;
    ln.exp()
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut invariant = true;
    for k in 0..20 {
        let na = 3 + k % 7 * 4;
        let nb = 4 + (k * 5) % 11 * 3;
        let shift = 0.3 * (k % 4) as f64;
        let spread = 1.0 + 0.5 * (k % 3) as f64;
        // Dyadic samples keep the shift and scale maps below exact.
        let mut draw = |centre: f64, width: f64| ((centre + width * rng.random_range(-1.0..1.0)) * 1048576.0).round() / 1048576.0;
        let a: Vec<f64> = (0..na).map(|_| draw(0.0, 1.0)).collect();
        let b: Vec<f64> = (0..nb).map(|_| draw(shift, spread)).collect();
        let t = t_test_two_sample(&a, &b, 0.99).unwrap();
        let f = f_test_two_sample(&a, &b, 0.99).unwrap();
        let (_, tp) = welch_oracle(&a, &b);
        let (_, fp) = f_oracle(&a, &b);
        worst = worst.max((t.p_value - tp).abs()).max((f.p_value - fp).abs());

        let t_swap = t_test_two_sample(&b, &a, 0.99).unwrap();
        let f_swap = f_test_two_sample(&b, &a, 0.99).unwrap();
        invariant &= t_swap.statistic == -t.statistic && t_swap.p_value == t.p_value;
        invariant &= f_swap.statistic == f.statistic && f_swap.p_value == f.p_value;
        // Dyadic shift and power-of-two scale are exact in floating point.
        let map = |x: &[f64]| x.iter().map(|v| 4.0 * v + 256.0).collect::<Vec<f64>>();
        let t_map = t_test_two_sample(&map(&a), &map(&b), 0.99).unwrap();
        let f_map = f_test_two_sample(&map(&a), &map(&b), 0.99).unwrap();
        invariant &= t_map.statistic == t.statistic && t_map.p_value == t.p_value;
        invariant &= f_map.statistic == f.statistic && f_map.p_value == f.p_value;
    }
    verdict(worst <= 1e-6 && invariant, format!("max p-value error {worst:.3e}, invariances exact: {invariant}"))
}

fn sim_invariants(run: &SimRun, config: &SimConfig) -> Result<(), String> {
    if run.traces.len() != PRODUCTS_PER_LOG * config.n_logs {
        return Err(format!("{} traces for {} logs", run.traces.len(), config.n_logs));
    }
    let mut per_log = vec![0usize; config.n_logs];
    for tr in &run.traces {
        per_log[tr.features.log_id] += 1;
        let f = &tr.features;
        if f.q_rqm != f.q_rqm4 + f.q_rqm5 + f.q_rqm7 {
            return Err(format!("q_rqm additivity fails for log {}", f.log_id));
        }
        let floor = category_min_path_time(config, f.t_piece);
        if tr.delta_t < floor {
            return Err(format!("delta_t {} below {} minimum {floor}", tr.delta_t, f.t_piece));
        }
    }
    if per_log.iter().any(|&c| c != PRODUCTS_PER_LOG) {
        return Err("a log does not yield 7 traces".into());
    }
    for (queue, exits) in &run.queue_log.exits {
        let entries = &run.queue_log.entries[queue];
        if entries[..exits.len()] != exits[..] {
            return Err(format!("queue {queue} is not FIFO"));
        }
    }
    let arrivals: Vec<f64> = run.traces.iter().map(|t| run.arrival_time(t)).collect();
    if arrivals.windows(2).any(|w| w[1] < w[0]) {
        return Err("traces out of trimmer-entry order".into());
    }
    Ok(())
}

fn criterion_6() -> Verdict {
    let mut checked = 0;
    for n_logs in [50, 1825] {
        for seed in 0..10 {
            let config = SimConfig { n_logs, seed, ..SimConfig::default() };
            let run = simulate_full(&config).unwrap();
            if let Err(e) = sim_invariants(&run, &config) {
                return verdict(false, format!("n_logs {n_logs} seed {seed}: {e}"));
            }
            let again = simulate_full(&config).unwrap();
            if again.traces != run.traces || again.busy != run.busy {
                return verdict(false, format!("n_logs {n_logs} seed {seed}: runs differ"));
            }
            checked += 1;
        }
    }
    let default_traces = simulate_full(&SimConfig::default()).unwrap().traces.len();
    verdict(default_traces == 12775, format!("{checked} runs hold all invariants; default run gives {default_traces} traces"))
}

fn criterion_7() -> Verdict {
    let run = simulate_full(&SimConfig::default()).unwrap();
    let util = run.station_utilizations(run.end_time).unwrap();
    let (top, u_top) = util.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let unique = util.iter().filter(|(_, u)| *u == u_top).count() == 1;
    let listing: Vec<String> = util.iter().map(|(s, u)| format!("{} {u:.3}", s.name())).collect();
    verdict(top == Station::Trimmer && unique, format!("utilizations: {}", listing.join(", ")))
}

fn criterion_8(run: &StudyRun, secs: f64) -> Verdict {
    let stats: Vec<_> = EncodingScheme::ALL.iter().map(|s| run.report.scheme(*s).unwrap().stats).collect();
    let m: Vec<f64> = stats.iter().map(|s| s.mean_abs_val_mean).collect();
    let below: Vec<f64> = stats.iter().map(|s| s.frac_mean_below).collect();
    let kept: Vec<f64> = stats.iter().map(|s| s.frac_t_not_rejected).collect();
    let a = m[0] > m[1] && m[1] > m[2];
    let b = below[0] <= below[1] && below[1] <= below[2];
    let c = kept[0] <= kept[1] && kept[1] <= kept[2];
    let fast = secs <= 1800.0;
    verdict(
        a && b && c && fast,
        format!(
            "(a) mean |val mean| {:.3} > {:.3} > {:.3}: {a}; (b) below 30 s {:.3} <= {:.3} <= {:.3}: {b}; \
             (c) t kept {:.3} <= {:.3} <= {:.3}: {c}; runtime {secs:.0} s",
            m[0], m[1], m[2], below[0], below[1], below[2], kept[0], kept[1], kept[2]
        ),
    )
}

fn criterion_9(run: &StudyRun) -> Verdict {
    let Some(r) = &run.report.reduced else { return verdict(false, "no reduced-model comparison") };
    let c = &r.comparison;
    let limit = 1.1 * r.val_rmse;
    let pass = r.scheme == EncodingScheme::A3BinaryPlusComplement && c.arrival_mae <= limit && c.time_ratio() < 0.5;
    verdict(
        pass,
        format!(
            "trial {}: MAE {:.3} s vs limit {limit:.3} s; wall time ratio {:.3} over {} products",
            r.trial,
            c.arrival_mae,
            c.time_ratio(),
            c.n_products
        ),
    )
}

/// Smallest number of candidates reaching the maximal coverage, and that
/// coverage, by enumerating every candidate subset.
fn brute_force_cover(routings: &[Routing], bottlenecks: &BTreeSet<String>) -> (BTreeSet<usize>, usize) {
    let using: Vec<&Routing> =
        routings.iter().filter(|r| r.stations.iter().any(|s| bottlenecks.contains(s))).collect();
    let others: Vec<(usize, &Routing)> = routings
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.stations.iter().any(|s| bottlenecks.contains(s)))
        .collect();
    let candidates: Vec<&String> = using
        .iter()
        .flat_map(|r| &r.stations)
        .filter(|s| !bottlenecks.contains(*s))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut best_cover = BTreeSet::new();
    let mut best_size = usize::MAX;
    for mask in 0u32..(1 << candidates.len()) {
        let chosen: Vec<&String> = (0..candidates.len()).filter(|i| mask >> i & 1 == 1).map(|i| candidates[i]).collect();
        let cover: BTreeSet<usize> =
            others.iter().filter(|(_, r)| chosen.iter().any(|c| r.stations.contains(c))).map(|(i, _)| *i).collect();
        if cover.len() > best_cover.len() || (cover.len() == best_cover.len() && chosen.len() < best_size) {
            best_cover = cover;
            best_size = chosen.len();
        }
    }
    (best_cover, best_size)
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let names: Vec<String> = (0..8).map(|i| format!("S{i}")).collect();
    let mut optimal_size = 0;
    for instance in 0..1000 {
        let n_stations = rng.random_range(2..=8);
        let n_mo = rng.random_range(1..=10);
        let routings: Vec<Routing> = (0..n_mo)
            .map(|m| {
                let len = rng.random_range(1..=n_stations.min(4));
                let mut stations: Vec<String> = Vec::new();
                while stations.len() < len {
                    let s = names[rng.random_range(0..n_stations)].clone();
                    if !stations.contains(&s) {
                        stations.push(s);
                    }
                }
                Routing::new(format!("mo{m}"), stations).unwrap()
            })
            .collect();
        let n_bottlenecks = rng.random_range(1..=2);
        let bottlenecks: BTreeSet<String> =
            (0..n_bottlenecks).map(|_| names[rng.random_range(0..n_stations)].clone()).collect();
        let chosen = synchronization_stations(&routings, &bottlenecks);
        let covered: BTreeSet<usize> = routings
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.stations.iter().any(|s| bottlenecks.contains(s)))
            .filter(|(_, r)| r.stations.iter().any(|s| chosen.contains(s)))
            .map(|(i, _)| i)
            .collect();
        let (best_cover, best_size) = brute_force_cover(&routings, &bottlenecks);
        if !chosen.is_disjoint(&bottlenecks) {
            return verdict(false, format!("instance {instance}: result overlaps the bottlenecks"));
        }
        if covered != best_cover {
            return verdict(false, format!("instance {instance}: covers {covered:?}, enumeration reaches {best_cover:?}"));
        }
        optimal_size += usize::from(chosen.len() == best_size);
    }
    verdict(true, format!("1000 instances reach maximal coverage; greedy size optimal in {optimal_size}"))
}

fn main() {
    let wanted: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let mut record = |k: usize, v: Verdict| {
        println!("criterion {k:>2}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((k, v));
    };
    let simple: [(usize, fn() -> Verdict); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (10, criterion_10),
    ];
    for (k, f) in simple {
        if run(k) {
            record(k, f());
        }
    }
    if run(8) || run(9) {
        let t0 = Instant::now();
        let study = run_study(&StudyConfig::default(), Execution::Parallel).expect("study runs");
        let secs = t0.elapsed().as_secs_f64();
        if run(8) {
            record(8, criterion_8(&study, secs));
        }
        if run(9) {
            record(9, criterion_9(&study));
        }
    }
    let failed: Vec<usize> = results.iter().filter(|(_, v)| !v.pass).map(|(k, _)| *k).collect();
    println!("acceptance: {} passed, {} failed {:?}", results.len() - failed.len(), failed.len(), failed);
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
