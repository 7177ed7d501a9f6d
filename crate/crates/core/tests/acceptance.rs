//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Training-backed checks dominate the runtime.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use megi::dppo::{gae_with_dones, loss, net_gradient, train, DynamicPolicy, LossCoefficients, Sample, TrainLogRow};
use megi::moe::{softmax, top_k_route};
use megi::report::{compare, SummaryRow};
use megi::task::sample_task;
use megi::{crc32, PolicyNet, QualityModel, RngStream, SchemeId, StreamLabel, SystemConfig, TaskRequest, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn mean_row<'a>(rows: &'a [SummaryRow], scheme: SchemeId) -> &'a SummaryRow {
    rows.iter().find(|r| r.scheme == scheme && r.seed == "mean").expect("mean row")
}

fn a1(cfg: &SystemConfig, policy: &DynamicPolicy) -> Outcome {
    let started = Instant::now();
    let rows = compare(cfg, &SchemeId::ALL, &[1, 2, 3], 4, Some(policy), None).expect("compare");
    let dense = mean_row(&rows, SchemeId::DenseNocot);
    let nocot = mean_row(&rows, SchemeId::MoeNocot);
    let fixed = mean_row(&rows, SchemeId::MoeFixedCot);
    let dynamic = mean_row(&rows, SchemeId::MoeDynamic);
    let energy_order = dense.total_energy_j > fixed.total_energy_j && fixed.total_energy_j > dynamic.total_energy_j;
    let beats_nocot = dynamic.acc_sat_rate > nocot.acc_sat_rate;
    let close_to_fixed = dynamic.acc_sat_rate >= fixed.acc_sat_rate - 0.05;
    outcome(
        energy_order && beats_nocot && close_to_fixed,
        format!(
            "energy dense={:.0} fixed={:.0} dynamic={:.0} [{}]; acc nocot={:.4} dynamic={:.4} fixed={:.4} \
             [> nocot: {}, >= fixed-0.05: {}]; {:.1}s",
            dense.total_energy_j,
            fixed.total_energy_j,
            dynamic.total_energy_j,
            energy_order,
            nocot.acc_sat_rate,
            dynamic.acc_sat_rate,
            fixed.acc_sat_rate,
            beats_nocot,
            close_to_fixed,
            started.elapsed().as_secs_f64()
        ),
    )
}

fn a2(cfg: &SystemConfig, policy: &DynamicPolicy, held_out: &[u64]) -> Outcome {
    let rows = compare(cfg, &[SchemeId::MoeDynamic], held_out, 4, Some(policy), None).expect("compare");
    let per_seed: Vec<&SummaryRow> = rows.iter().filter(|r| r.seed.parse::<u64>().is_ok()).collect();
    let pass = per_seed.len() == held_out.len() && per_seed.iter().all(|r| r.lat_sat_rate >= 0.90);
    let shown: Vec<String> = per_seed.iter().map(|r| format!("seed {}: {:.4}", r.seed, r.lat_sat_rate)).collect();
    outcome(pass, format!("lat_sat_rate {} (need >= 0.90 each)", shown.join(", ")))
}

fn a3() -> Outcome {
    let started = Instant::now();
    let cfg = SystemConfig::default();
    let heads = megi::dppo::trainer::head_widths(&cfg);
    let width = megi::Observation::width(cfg.n_devices);
    let mut rng = RngStream::new(2024, StreamLabel::PolicyInit);
    let mut net = PolicyNet::random(width, 64, heads, &mut rng);
    // larger head weights than the default init, so the policy terms carry weight
    for layer in net.layers_mut().into_iter().skip(2) {
        for w in layer.w.iter_mut() {
            *w = rng.normal() * 0.3;
        }
    }
    let widths = heads.as_array();
    let batch: Vec<Sample<f64>> = (0..10)
        .map(|_| {
            let obs: Vec<f64> = (0..width).map(|_| rng.uniform()).collect();
            let actions: [usize; 3] = std::array::from_fn(|h| rng.below(widths[h]));
            let f = net.forward(&obs);
            let logp: f64 = (0..3).map(|h| megi::dppo::net::log_prob(&f.logits[h], actions[h])).sum();
            // ratios in [0.9, 1.1]: well inside the clip range, away from its kinks
            let ratio = 0.9 + 0.2 * rng.uniform();
            Sample {
                obs,
                actions,
                old_logp: logp - ratio.ln(),
                advantage: rng.normal(),
                ret: rng.normal(),
            }
        })
        .collect();
    let coef = LossCoefficients { clip_eps: 0.2, value_coef: 0.5, entropy_coef: 0.01 };
    let (grad, _) = net_gradient(&net, &batch, &coef).expect("gradient");
    let analytic: Vec<f64> = grad.params().copied().collect();

    let h = 1e-5;
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        let original = *net.params().nth(i).unwrap();
        *net.params_mut().nth(i).unwrap() = original + h;
        let up = loss(&net, &batch, &coef).total;
        *net.params_mut().nth(i).unwrap() = original - h;
        let down = loss(&net, &batch, &coef).total;
        *net.params_mut().nth(i).unwrap() = original;
        numeric.push((up - down) / (2.0 * h));
    }
    let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    let rel = diff / scale;
    let secs = started.elapsed().as_secs_f64();
    outcome(
        rel <= 1e-4 && secs < 10.0,
        format!("relative error {rel:.2e} over {} parameters (need <= 1e-4), {secs:.2}s (need < 10s)", analytic.len()),
    )
}

fn brute_force_gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let value_after = |t: usize| if t + 1 < n { values[t + 1] } else { bootstrap };
    let delta: Vec<f64> = (0..n)
        .map(|t| rewards[t] + if dones[t] { 0.0 } else { gamma * value_after(t) } - values[t])
        .collect();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for l in t..n {
                total += weight * delta[l];
                if dones[l] {
                    break;
                }
                weight *= gamma * lambda;
            }
            total
        })
        .collect()
}

fn a4() -> Outcome {
    let mut rng = RngStream::new(77, StreamLabel::Rollout);
    let mut worst: f64 = 0.0;
    for trajectory in 0..100 {
        let rewards: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let values: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        // half the trajectories also carry episode boundaries
        let dones: Vec<bool> = (0..20).map(|_| trajectory % 2 == 1 && rng.uniform() < 0.15).collect();
        let bootstrap = rng.normal();
        let gamma = 0.5 + 0.5 * rng.uniform();
        let lambda = rng.uniform();
        let (adv, _) = gae_with_dones(&rewards, &values, &dones, bootstrap, gamma, lambda);
        let expected = brute_force_gae(&rewards, &values, &dones, bootstrap, gamma, lambda);
        for (a, e) in adv.iter().zip(&expected) {
            worst = worst.max((a - e).abs());
        }
    }
    outcome(worst <= 1e-9, format!("max |recursive - brute force| = {worst:.2e} over 100 x 20 steps (need <= 1e-9)"))
}

fn a5() -> Outcome {
    let check = crc32(b"123456789");
    let empty = crc32(b"");
    let mut rng = RngStream::new(5, StreamLabel::Fading);
    let mut detected = 0;
    let trials = 10_000;
    for _ in 0..trials {
        let len = 1 + rng.below(256);
        let mut payload: Vec<u8> = (0..len).map(|_| rng.next_u64() as u8).collect();
        let before = crc32(&payload);
        let bit = rng.below(len * 8);
        payload[bit / 8] ^= 1 << (bit % 8);
        if crc32(&payload) != before {
            detected += 1;
        }
    }
    outcome(
        check == 0xCBF4_3926 && empty == 0 && detected == trials,
        format!("check=0x{check:08X} empty=0x{empty:08X} single-bit flips detected {detected}/{trials}"),
    )
}

fn a6() -> Outcome {
    let mut rng = RngStream::new(6, StreamLabel::Gating);
    let mut bad_split = 0;
    let mut worst_weight: f64 = 0.0;
    for id in 0..100_000u64 {
        let n = 1 + rng.below(20);
        let logits: Vec<f64> = (0..n).map(|_| rng.normal() * 3.0).collect();
        let weights = softmax(&logits);
        let k = 1 + rng.below(n);
        let task = TaskRequest {
            id,
            length: 1 + rng.below(1024) as u32,
            complexity: rng.uniform(),
            arrival_slot: 0,
            deadline: 1.0,
        };
        let a = top_k_route(&weights, k, &task).expect("route");
        if a.token_split.iter().map(|&t| t as u64).sum::<u64>() != task.length as u64 {
            bad_split += 1;
        }
        worst_weight = worst_weight.max((a.weights.iter().sum::<f64>() - 1.0).abs());
    }
    outcome(
        bad_split == 0 && worst_weight <= 1e-9,
        format!("10^5 routings: {bad_split} splits off the task length, max |sum w - 1| = {worst_weight:.2e}"),
    )
}

fn megi_run(out: &Path, scheme: &str, seed: u64) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_megi"))
        .args(["run", "--scheme", scheme, "--seed", &seed.to_string(), "--out"])
        .arg(out)
        .status()
        .expect("spawn megi");
    assert!(status.success(), "megi run failed: {status}");
    std::fs::read(out.join(format!("{scheme}_seed{seed}.csv"))).expect("run csv")
}

fn a7() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut details = Vec::new();
    let mut pass = true;
    for scheme in ["moe_fixed_cot", "moe_nocot"] {
        let first = megi_run(&dir.path().join("first"), scheme, 11);
        let second = megi_run(&dir.path().join("second"), scheme, 11);
        let same = first == second;
        pass &= same;
        details.push(format!("{scheme}: {} bytes, identical={same}", first.len()));
    }
    outcome(pass, details.join("; "))
}

fn a8() -> Outcome {
    let cfg = SystemConfig::default();
    let model = QualityModel::from_config(&cfg);
    let bands = megi::config::COMPLEXITY_BANDS;
    let mut cells = 0;
    let mut mismatches = 0;
    for band in 0..bands {
        for &k in &cfg.k_choices {
            // 51 complexities across the band, edges included
            for step in 0..=50 {
                let c = (band as f64 + step as f64 / 50.0) / bands as f64;
                let brute = (0..=1000u32).find(|&d| model.verdict(model.score(c, k, d)).satisfied);
                if brute != model.min_depth(c, k) {
                    mismatches += 1;
                }
                cells += 1;
            }
        }
    }
    let corner = model.min_depth(1.0, 1);
    outcome(
        mismatches == 0 && corner == Some(4),
        format!("{mismatches} mismatches over {cells} (band, k, complexity) points; min depth at c=1, k=1: {corner:?} (need 4)"),
    )
}

fn a9(logs: &[(u64, Vec<TrainLogRow>, f64)]) -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for (seed, log, secs) in logs {
        let window = 50.min(log.len() / 2);
        let mean = |rows: &[TrainLogRow]| rows.iter().map(|r| r.mean_reward).sum::<f64>() / rows.len() as f64;
        let first = mean(&log[..window]);
        let last = mean(&log[log.len() - window..]);
        let ok = last > first && *secs < 1800.0;
        pass &= ok;
        details.push(format!("seed {seed}: first50={first:.4} last50={last:.4} ({secs:.0}s)"));
    }
    outcome(pass, details.join("; "))
}

fn a10() -> Outcome {
    let cfg = SystemConfig::default();
    let mut rng = RngStream::new(10, StreamLabel::Arrivals);
    let n = 10_000;
    let lengths: Vec<u32> = (0..n).map(|i| sample_task(&mut rng, &cfg, 0, i as u64).length).collect();
    let mean = lengths.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
    let tol = 3.0 * (cfg.mean_len / n as f64).sqrt();
    let outside = lengths.iter().filter(|&&l| l < 1 || l > cfg.token_cap).count();
    outcome(
        (mean - cfg.mean_len).abs() <= tol && outside == 0,
        format!("mean {mean:.3} (need {} +/- {tol:.3}), {outside} outside [1, {}]", cfg.mean_len, cfg.token_cap),
    )
}

fn main() -> ExitCode {
    let cfg = SystemConfig::default();
    let hp = TrainConfig::default();
    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();
    let mut report = |id: &'static str, name: &'static str, o: Outcome| {
        println!("{id} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    report("A3", "gradient oracle", a3());
    report("A4", "GAE oracle", a4());
    report("A5", "CRC fixtures", a5());
    report("A6", "conservation", a6());
    report("A7", "determinism", a7());
    report("A8", "quality oracle", a8());
    report("A10", "Poisson lengths", a10());

    let mut logs = Vec::new();
    let mut policy = None;
    for seed in [1u64, 2, 3] {
        let started = Instant::now();
        let hp = TrainConfig { seed: Some(seed), ..hp.clone() };
        let trained = train(&cfg, &hp, None, |_| {}).expect("training");
        logs.push((seed, trained.log, started.elapsed().as_secs_f64()));
        if policy.is_none() {
            policy = Some(DynamicPolicy { net: trained.net });
        }
    }
    let policy = policy.expect("trained policy");
    report("A1", "scheme ordering", a1(&cfg, &policy));
    report("A2", "latency satisfaction", a2(&cfg, &policy, &hp.eval_seeds));
    report("A9", "learning sanity", a9(&logs));

    let failed: Vec<&str> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
