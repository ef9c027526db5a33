//! End-to-end acceptance checks, one PASS/FAIL line each.
//!
//! Set `OCNASH_CRITERIA=1,4,9` to run a subset.

use std::path::Path;
use std::time::Instant;

use ocnash::config::ExperimentConfig;
use ocnash::evaluation::{metrics, simulate_paths, terminal_pnls, AgentMetrics, GenerationMode, PathEnsemble};
use ocnash::market::{partial_penalty, penalty_cost, Market};
use ocnash::nets::{advantage, grad_check, NashModel, NetConfig};
use ocnash::oracle::{exploitability, single_agent_dp, DiscreteGame};
use ocnash::trainer::{apply_exploration, total_loss, Batch, Trainer};
use ocnash::{presets, stats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PATHS: usize = 10_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn train_preset(cfg: &ExperimentConfig) -> NashModel {
    let market = cfg.market().expect("preset market");
    let mut trainer = Trainer::new(market, cfg.net.clone(), cfg.train.clone()).expect("trainer");
    trainer.run(|_| {}).expect("training");
    trainer.online().clone()
}

fn evaluate(model: &NashModel, seed: u64) -> (PathEnsemble, Vec<AgentMetrics>) {
    let market = model.market().clone();
    let ens = simulate_paths(&market, model, PATHS, seed, GenerationMode::Stochastic).expect("simulation");
    let m = metrics(&ens, &market).expect("metrics");
    (ens, m)
}

fn pinning() -> Outcome {
    let cfg = presets::four_agent();
    let market = cfg.market().unwrap();
    let model = NashModel::new(market.clone(), cfg.net.clone()).unwrap();
    let ens = simulate_paths(&market, &model, PATHS, 1, GenerationMode::Stochastic).unwrap();
    let dates: Vec<usize> = (1..=market.num_steps())
        .filter(|&k| market.grid().is_compliance_date(k))
        .collect();
    let mut worst = 0.0f64;
    for path in 0..PATHS {
        for &k in &dates {
            worst = worst.max((ens.price(path, k) - market.config().penalty).abs());
        }
    }
    outcome(
        worst <= 1e-9 && dates.len() == 2,
        format!("max |S - p| at {} compliance dates over {PATHS} paths = {worst:.3e}", dates.len()),
    )
}

fn telescoping() -> Outcome {
    let market = presets::four_agent().market().unwrap();
    let cfg = market.config();
    let class = &market.classes()[0];
    let (r, p) = (class.requirement, cfg.penalty);
    let num_periods = cfg.num_periods() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..PATHS {
        let mut x = rng.random_range(-10.0..40.0);
        let mut lhs = num_periods * penalty_cost(x, r, p);
        let mut rhs = 0.0;
        for k in 0..market.num_steps() {
            let next = x + rng.random_range(-3.0..3.0);
            lhs += market.compliance_multiplier(k).unwrap() * partial_penalty(x, next, r, p);
            x = next;
            if market.grid().is_compliance_date(k + 1) {
                rhs += penalty_cost(x, r, p);
            }
        }
        worst = worst.max((lhs - rhs).abs());
    }
    outcome(worst <= 1e-9, format!("max identity residual over {PATHS} paths = {worst:.3e}"))
}

fn advantage_structure() -> Outcome {
    let mut worst_adv = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for cfg in [presets::four_agent(), presets::eight_agent()] {
        let market = cfg.market().unwrap();
        let model = NashModel::new(market.clone(), cfg.net.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let states = market.sample_states(PATHS, &mut rng);
        for (state, heads) in states.iter().zip(model.heads_batch(&states)) {
            let nash = ocnash::nets::nash_action_of(&heads);
            for (i, h) in heads.iter().enumerate() {
                worst_adv = worst_adv.max(advantage(&heads, &nash, i).abs());
                let p = h.p11();
                let tr = p[0][0] + p[1][1];
                let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
                let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
                min_eig = min_eig.min(tr / 2.0 - disc);
            }
            assert!(state.time_index < market.num_steps());
        }
    }
    outcome(
        worst_adv < 1e-9 && min_eig > 0.0,
        format!("max |A(mu)| = {worst_adv:.3e}, smallest eigenvalue of P11 = {min_eig:.3e}"),
    )
}

fn gradient_oracle() -> Outcome {
    let small = NetConfig {
        hidden_layers: 2,
        nodes_per_layer: 16,
        seed: 4,
        ..presets::four_agent().net
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for cfg in [presets::four_agent(), presets::eight_agent()] {
        let market = cfg.market().unwrap();
        let online = NashModel::new(market.clone(), small.clone()).unwrap();
        let target = NashModel::new(market.clone(), NetConfig { seed: 5, ..small.clone() }).unwrap();
        let batch = random_batch(&market, &online, 32);
        let varphi = cfg.train.initial_clearing_weight;
        let out = total_loss(&online, &target, &batch, 1.0, varphi);
        let analytic = out.grads.concat();
        let params = online.flat_params();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let indices: Vec<usize> = (0..500).map(|_| rng.random_range(0..params.len())).collect();
        let mut probe = online.clone();
        let report = grad_check(&params, &analytic, &indices, 1e-5, |p| {
            probe.set_flat_params(p).unwrap();
            total_loss(&probe, &target, &batch, 1.0, varphi).total
        });
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    outcome(
        worst < 1e-4 && checked >= 1000,
        format!("{checked} parameters, max relative error {worst:.3e}"),
    )
}

fn random_batch(market: &Market, model: &NashModel, size: usize) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let states = market.sample_states(size, &mut rng);
    let bound = market.config().trade_bound;
    let mut batch = Batch {
        states: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        next_states: Vec::new(),
    };
    for (s, nash) in states.iter().zip(model.nash_actions(&states)) {
        let a = apply_exploration(&nash, 0.5, bound / 2.0, 0.5, bound, &mut rng);
        let out = market.step_with_rng(s, &a, &mut rng).unwrap();
        batch.states.push(s.clone());
        batch.actions.push(a);
        batch.rewards.push(out.rewards);
        batch.next_states.push(out.next_state);
    }
    batch
}

fn single_agent_equivalence() -> Outcome {
    let cfg = presets::single_agent();
    let market = cfg.market().unwrap();
    let setup = DiscreteGame::from_config(market.clone(), &cfg.oracle).unwrap();
    let state = market.initial_state();
    let dp = match single_agent_dp(&setup, &state, cfg.oracle.refinement_tolerance) {
        Ok(dp) => dp,
        Err(e) => return outcome(false, format!("oracle failed: {e}")),
    };
    let offset = market.benchmark(0, 0.0);
    let dp_objective = dp.value + offset;

    let model = train_preset(&cfg);
    let learned = model.values(std::slice::from_ref(&state))[0][0] + offset;
    let rel = (learned - dp_objective).abs() / dp_objective.abs();
    let report = exploitability(&model, &setup, &state).unwrap();
    let exploit = report.exploitability[0];
    let bench = -offset;
    outcome(
        rel < 0.05 && exploit < 0.05 * bench,
        format!(
            "learned V {learned:.2}, DP {dp_objective:.2} (refined {:.2}), rel {:.2}%; exploitability {exploit:.2} (limit {:.2})",
            dp.refined_value + offset,
            100.0 * rel,
            0.05 * bench
        ),
    )
}

fn small_game() -> Outcome {
    let cfg = presets::duopoly();
    let market = cfg.market().unwrap();
    let setup = DiscreteGame::from_config(market.clone(), &cfg.oracle).unwrap();
    let model = train_preset(&cfg);
    let report = exploitability(&model, &setup, &market.initial_state()).unwrap();
    let limits: Vec<f64> = (0..market.num_agents()).map(|i| 0.05 * -market.benchmark(i, 0.0)).collect();
    let pass = report.exploitability.iter().zip(&limits).all(|(e, l)| e < l);
    outcome(
        pass,
        format!("exploitability {:?}, limits {:?}", rounded(&report.exploitability), rounded(&limits)),
    )
}

fn rounded(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}

fn four_agent_reproduction() -> Outcome {
    let table = [-2091.73, -2131.59, -2023.26, -1932.48];
    let cfg = presets::four_agent();
    let model = train_preset(&cfg);
    let (_, m) = evaluate(&model, cfg.eval.seed);
    let beats = m.iter().all(|a| a.mean_pnl > -2500.0);
    let within = m.iter().zip(table).all(|(a, t)| (a.mean_pnl - t).abs() <= 0.15 * t.abs());
    let tail = m.iter().all(|a| a.tail_expectation <= a.mean_pnl);
    let traded: f64 = m.iter().map(|a| a.mean_traded).sum();
    let generated: f64 = m.iter().map(|a| a.mean_generated).sum();
    let clears = traded.abs() < 0.05 * generated;
    let pnl: Vec<f64> = m.iter().map(|a| a.mean_pnl).collect();
    let te: Vec<f64> = m.iter().map(|a| a.tail_expectation).collect();
    outcome(
        beats && within && tail && clears,
        format!(
            "(a) {beats} (b) {within} (c) {tail} (d) {clears}: mean P&L {:?}, TE {:?}, net traded {traded:.3}, generated {generated:.2}",
            rounded(&pnl),
            rounded(&te)
        ),
    )
}

/// Paired difference of per-path statistics between two agents, in standard errors.
fn paired_z(a: &[f64], b: &[f64]) -> f64 {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = stats::mean(&diffs);
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    if var == 0.0 {
        return if mean == 0.0 { 0.0 } else { f64::INFINITY };
    }
    mean.abs() / (var / diffs.len() as f64).sqrt()
}

fn per_path_generated(ens: &PathEnsemble, market: &Market, agent: usize) -> Vec<f64> {
    let xi = market.agent_class(agent).gen_size;
    (0..ens.num_paths)
        .map(|p| (0..ens.num_steps).filter(|&k| ens.generated(p, k, agent)).count() as f64 * xi)
        .collect()
}

fn eight_agent_reduced() -> Outcome {
    let cfg = presets::eight_agent();
    let market = cfg.market().unwrap();
    let model = train_preset(&cfg);
    let (ens, m) = evaluate(&model, cfg.eval.seed);
    let mut worst_z = 0.0f64;
    for (a, b) in [(0, 1), (4, 5), (6, 7)] {
        worst_z = worst_z.max(paired_z(&terminal_pnls(&ens, &market, a), &terminal_pnls(&ens, &market, b)));
        worst_z = worst_z.max(paired_z(
            &per_path_generated(&ens, &market, a),
            &per_path_generated(&ens, &market, b),
        ));
    }
    let symmetric = worst_z < 4.0;
    let columns = [-4000.0, -4000.0, -3000.0, -3000.0, -2000.0, -2000.0, -1000.0, -1000.0];
    let beats = m.iter().zip(columns).all(|(a, c)| a.mean_pnl > c);
    let traded: f64 = m.iter().map(|a| a.mean_traded).sum();
    let generated: f64 = m.iter().map(|a| a.mean_generated).sum();
    let ratio = generated >= 20.0 * traded.abs();
    let pnl: Vec<f64> = m.iter().map(|a| a.mean_pnl).collect();
    outcome(
        symmetric && beats && ratio,
        format!(
            "symmetry {symmetric} (max paired z {worst_z:.2}), benchmarks {beats}, ratio {ratio}: mean P&L {:?}, net traded {traded:.3}, generated {generated:.2}",
            rounded(&pnl)
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let mut sink = Vec::new();
    let argv = std::iter::once("ocnash").chain(args.iter().copied()).map(String::from);
    ocnash::cli::run_with(argv, &mut sink).map_err(|e| e.to_string())
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for rep in 0..2 {
        let base = root.path().join(format!("run{rep}"));
        let train = base.join("train");
        let ckpt = train.join("checkpoint.bin");
        let sim = base.join("simulate");
        let paths = sim.join("paths.bin");
        let commands: Vec<Vec<String>> = vec![
            vec!["train".into(), "--preset".into(), "duopoly".into(), "--train.epochs=300".into()],
            vec!["simulate".into(), "--checkpoint".into(), s(&ckpt), "--eval.num_paths=2000".into()],
            vec!["metrics".into(), "--paths".into(), s(&paths)],
            vec!["oracle-check".into(), "--checkpoint".into(), s(&ckpt)],
        ];
        let outs = ["train", "simulate", "metrics", "oracle"];
        for (cmd, out) in commands.iter().zip(outs) {
            let mut args: Vec<&str> = cmd.iter().map(String::as_str).collect();
            let out_dir = s(&base.join(out));
            args.extend(["--seed", "7", "--out", &out_dir]);
            if let Err(e) = run_cli(&args) {
                return outcome(false, format!("{} failed: {e}", cmd[0]));
            }
        }
        runs.push(outs.iter().map(|o| dir_bytes(&base.join(o))).collect::<Vec<_>>());
    }
    let files: usize = runs[0].iter().map(Vec::len).sum();
    let has_csv = runs[0].iter().flatten().any(|(n, _)| n.ends_with(".csv"));
    outcome(
        runs[0] == runs[1] && has_csv,
        format!("{files} artifacts across train, simulate, metrics and oracle-check compared byte for byte"),
    )
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("OCNASH_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "price pinning", pinning),
        (2, "telescoping identity", telescoping),
        (3, "advantage vanishing and concavity", advantage_structure),
        (4, "loss gradient oracle", gradient_oracle),
        (5, "single-agent DP equivalence", single_agent_equivalence),
        (6, "small-game exploitability", small_game),
        (7, "four-agent reproduction", four_agent_reproduction),
        (8, "eight-agent reduced check", eight_agent_reduced),
        (9, "determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} [{name}] {verdict} ({:.1}s): {}",
            start.elapsed().as_secs_f64(),
            result.detail
        );
        if !result.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
