//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p cliffsynth --test acceptance`; the learning criteria train
//! in-process and take about half an hour on one core.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use cliffsynth::env::{action_index, num_actions};
use cliffsynth::io::parse_imported_circuit;
use cliffsynth::oracle::{
    enumerate_group, group_order, odd_identity_check, pack, parity_classes, unpack, DistanceTable, Metric,
    Parity,
};
use cliffsynth::policy::{
    aggregate, backward, cz_logit, edge_projections, forward, forward_batch, forward_train, message_round,
    Inputs, PolicyWeights,
};
use cliffsynth::rng;
use cliffsynth::search::{
    cz_equivalent_cost, decode, greedy_decode, verify_circuit, DecodeConfig, PolicyCache, Schedule,
};
use cliffsynth::tableau::generator_matrix;
use cliffsynth::targets::{random_walk_target, uniform_target};
use cliffsynth::train::{Trainer, TrainConfig};
use cliffsynth::{BitMatrix, Difficulty, Gate, Tableau};
use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn slow_apply(t: &Tableau, g: Gate) -> Tableau {
    let m = t.matrix().matmul(generator_matrix(g, t.n()).unwrap().matrix()).unwrap();
    Tableau::from_matrix(m).unwrap()
}

fn algebraic_core() -> Check {
    let start = Instant::now();
    let mut r = rng::from_seed(1);
    for k in 0..10_000 {
        let n = 1 + k % 8;
        let t = uniform_target(n, &mut r);
        let gates = Gate::all(n);
        let g = gates[r.random_range(0..gates.len())];
        let once = t.applied(g).unwrap();
        ensure(once.is_symplectic(), || format!("{g} broke the symplectic condition at n={n}"))?;
        ensure(once.applied(g).unwrap() == t, || format!("{g} is not an involution at n={n}"))?;
    }
    let mut checked = 0;
    for key in enumerate_group(2).unwrap() {
        let t = unpack(key, 2).unwrap();
        for g in Gate::all(2) {
            ensure(t.applied(g).unwrap() == slow_apply(&t, g), || format!("fast path differs for {g}"))?;
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("10000 random pairs, {checked} exhaustive n=2 products, {secs:.2}s"))
}

fn matrix(rows: &[&[u8]]) -> BitMatrix {
    BitMatrix::from_rows(rows).unwrap()
}

fn goldens() -> Check {
    let cases = [
        (Gate::H(0), 1, matrix(&[&[0, 1], &[1, 0]])),
        (Gate::S(0), 1, matrix(&[&[1, 1], &[0, 1]])),
        (
            Gate::Cz(0, 1),
            2,
            matrix(&[&[1, 0, 0, 1], &[0, 1, 1, 0], &[0, 0, 1, 0], &[0, 0, 0, 1]]),
        ),
    ];
    for (g, n, want) in cases {
        ensure(generator_matrix(g, n).unwrap().matrix() == &want, || format!("{g} differs"))?;
    }
    Ok("H, S (n=1) and CZ (n=2) match bit for bit".into())
}

fn word(n: usize, gates: &[Gate]) -> Tableau {
    let mut t = Tableau::identity(n);
    for &g in gates {
        t.apply_gate(g).unwrap();
    }
    t
}

fn group_artifacts() -> Check {
    let mut sizes = Vec::new();
    let mut n3_secs = 0.0;
    for n in 1..=3 {
        let start = Instant::now();
        let len = enumerate_group(n).unwrap().len();
        if n == 3 {
            n3_secs = start.elapsed().as_secs_f64();
        }
        ensure(len as u128 == group_order(n as u32), || format!("n={n}: {len}"))?;
        sizes.push(len);
    }
    ensure(sizes == [6, 720, 1_451_520], || format!("{sizes:?}"))?;
    ensure(n3_secs < 300.0, || format!("n=3 enumeration took {n3_secs:.1}s"))?;

    let Parity::Bipartite { even, odd } = parity_classes(1).unwrap() else {
        return Err("n=1 graph is not bipartite".into());
    };
    ensure(even.len() == 3 && odd.len() == 3, || format!("n=1 classes {} / {}", even.len(), odd.len()))?;
    let listed = [
        Tableau::identity(1),
        word(1, &[Gate::H(0), Gate::S(0)]),
        word(1, &[Gate::S(0), Gate::H(0)]),
    ];
    ensure(listed.iter().all(|t| even.contains(t)), || "n=1 even class differs from {I, HS, SH}".into())?;

    let Parity::Bipartite { even, odd } = parity_classes(2).unwrap() else {
        return Err("n=2 graph is not bipartite".into());
    };
    ensure(even.len() == 360 && odd.len() == 360, || format!("n=2 classes {} / {}", even.len(), odd.len()))?;

    for n in 3..=8 {
        ensure(odd_identity_check(n).unwrap(), || format!("odd word is not the identity at n={n}"))?;
    }
    Ok(format!(
        "orders {sizes:?} (n=3 in {n3_secs:.2}s), parity (3,3) with {{I,HS,SH}} and (360,360), odd word n=3..8"
    ))
}

fn equivariance() -> Check {
    let w = PolicyWeights::<f32>::init(32, 2, &mut rng::from_seed(2));
    let mut r = rng::from_seed(3);
    let mut worst = 0f32;
    for n in [2, 3, 6] {
        let gates = Gate::all(n);
        for _ in 0..100 {
            let t = uniform_target(n, &mut r);
            let mut sigma: Vec<usize> = (0..n).collect();
            sigma.shuffle(&mut r);
            let a = forward(&w, &t).unwrap();
            let b = forward(&w, &t.permute(&sigma).unwrap()).unwrap();
            worst = worst.max((a.value - b.value).abs());
            for &g in &gates {
                let (i, j) = (action_index(g, n).unwrap(), action_index(g.permuted(&sigma), n).unwrap());
                worst = worst.max((a.logits[i] - b.logits[j]).abs());
            }
        }
    }
    ensure(worst <= 1e-5, || format!("max deviation {worst:e}"))?;

    // CZ head on real node, edge and graph features
    let h = 32;
    for n in [2, 3, 6] {
        let t = uniform_target(n, &mut r);
        let x = Inputs::from_tableaus(&w, &[&t]).unwrap();
        let (q0, _) = aggregate(&w, &x);
        let (pa, pb) = edge_projections(&w, &x);
        let q = message_round(&w, 0, &x, &q0, &pa, &pb).0;
        let g: Vec<f32> = (0..h).map(|_| r.random_range(-1.0..1.0)).collect();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (qi, qj) = (&q[i * h..(i + 1) * h], &q[j * h..(j + 1) * h]);
                let (eij, eji) = (&x.e[(i * n + j) * h..(i * n + j + 1) * h], &x.e[(j * n + i) * h..(j * n + i + 1) * h]);
                let a = cz_logit(&w, qi, qj, eij, eji, &g);
                let b = cz_logit(&w, qj, qi, eji, eij, &g);
                ensure(a.to_bits() == b.to_bits(), || format!("CZ({i},{j}) asymmetric: {a} vs {b}"))?;
            }
        }
    }
    Ok(format!("300 relabelings, max deviation {worst:.2e}; CZ logits symmetric bit for bit"))
}

fn gradients() -> Check {
    let mut r = rng::from_seed(4);
    let mut w: PolicyWeights<f64> = PolicyWeights::<f32>::init(8, 1, &mut r).cast();
    // jitter so max pooling has no ties at the sample point
    for v in w.params_mut() {
        *v += r.random_range(-1e-3..1e-3);
    }
    let ts: Vec<Tableau> = (0..3)
        .map(|_| loop {
            let t = uniform_target(2, &mut r);
            if !t.is_identity() {
                break t;
            }
        })
        .collect();
    let refs: Vec<&Tableau> = ts.iter().collect();
    let a = num_actions(2);
    let cl: Vec<f64> = (0..refs.len() * a).map(|_| r.random_range(-1.0..1.0)).collect();
    let cv: Vec<f64> = (0..refs.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let loss = |w: &PolicyWeights<f64>| {
        let out = forward_batch(w, &refs).unwrap();
        out.logits.iter().zip(&cl).map(|(x, y)| x * y).sum::<f64>()
            + out.values.iter().zip(&cv).map(|(x, y)| x * y).sum::<f64>()
    };
    let (_, cache) = forward_train(&w, &refs).unwrap();
    let mut grad = vec![0.0; w.num_params()];
    backward(&w, &cache, &cl, &cv, &mut grad);

    let eps = 1e-6;
    let layout = w.layout().clone();
    let mut worst = (0.0, String::new());
    for spec in &layout.tensors {
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for k in spec.range() {
            let orig = w.params()[k];
            w.params_mut()[k] = orig + eps;
            let up = loss(&w);
            w.params_mut()[k] = orig - eps;
            let down = loss(&w);
            w.params_mut()[k] = orig;
            let num = (up - down) / (2.0 * eps);
            diff += (num - grad[k]).powi(2);
            scale += num * num;
        }
        let (diff, scale) = (diff.sqrt(), scale.sqrt());
        // tensors the batch never touches have zero gradient on both sides
        let rel = if scale < 1e-9 { diff } else { diff / scale };
        ensure(rel < 1e-3, || format!("{}: relative error {rel:e}", spec.name))?;
        if rel > worst.0 {
            worst = (rel, spec.name.clone());
        }
    }
    Ok(format!(
        "{} tensors, worst relative error {:.2e} ({})",
        layout.tensors.len(),
        worst.0,
        worst.1
    ))
}

fn chi_square_p(n: usize, per_cell: usize, seed: u64) -> f64 {
    let group = enumerate_group(n).unwrap();
    let mut counts: HashMap<u64, usize> = group.iter().map(|&k| (k, 0)).collect();
    let mut r = rng::from_seed(seed);
    for _ in 0..group.len() * per_cell {
        *counts.get_mut(&pack(&uniform_target(n, &mut r)).unwrap()).unwrap() += 1;
    }
    let e = per_cell as f64;
    let stat: f64 = counts.values().map(|&c| (c as f64 - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((group.len() - 1) as f64).unwrap().cdf(stat)
}

fn curriculum_statistics() -> Check {
    let trials = 100_000;
    let mut parts = Vec::new();
    for d in [0.5, 2.5, 7.0] {
        let diff = Difficulty::new(d).unwrap();
        let mut r = rng::from_seed(d.to_bits());
        let mean = (0..trials).map(|_| diff.sample_length(&mut r)).sum::<usize>() as f64 / trials as f64;
        let frac = d - d.floor();
        let sigma = (frac * (1.0 - frac) / trials as f64).sqrt();
        ensure((mean - d).abs() <= 3.0 * sigma + 1e-12, || format!("d={d}: mean {mean}"))?;
        parts.push(format!("d={d} mean {mean:.4}"));
    }
    let p1 = chi_square_p(1, 2000, 5);
    let p2 = chi_square_p(2, 50, 6);
    ensure(p1 > 0.001 && p2 > 0.001, || format!("chi-square p = {p1:.4}, {p2:.4}"))?;
    Ok(format!("{}; chi-square p = {p1:.3} (n=1), {p2:.3} (n=2)", parts.join(", ")))
}

fn sampler(samples: usize) -> DecodeConfig {
    DecodeConfig {
        step_budget: 512,
        num_samples: samples,
        schedules: vec![Schedule::Fixed(4.0)],
        greedy: false,
        no_loop: false,
        inverse_trick: true,
    }
}

/// (solved, optimal) over 100 uniform targets.
fn rollout_vs_oracle(w: &PolicyWeights<f32>, n: usize, seed: u64) -> (usize, usize) {
    let table = DistanceTable::build(n, Metric::CzCount).unwrap();
    let mut cache = PolicyCache::new(w);
    let mut r = rng::from_seed(seed);
    let (mut solved, mut optimal) = (0, 0);
    for _ in 0..100 {
        let t = uniform_target(n, &mut r);
        let res = decode(&mut cache, &t, &sampler(1000), &mut r).unwrap();
        if res.solved {
            solved += 1;
            optimal += (res.cz_count == table.distance(&t).unwrap()) as usize;
        }
    }
    (solved, optimal)
}

struct Trained {
    n2: PolicyWeights<f32>,
    n3: PolicyWeights<f32>,
}

fn train_stage(trainer: &mut Trainer, steps: u64, label: &str) -> Duration {
    let start = Instant::now();
    let target = trainer.steps() + steps;
    let mut last = Instant::now();
    while trainer.steps() < target {
        let s = trainer.update().unwrap();
        if last.elapsed() > Duration::from_secs(60) {
            last = Instant::now();
            eprintln!("  [{label}] steps {} d {:.2} success {:.3}", s.steps, s.d, s.success_rate);
        }
    }
    start.elapsed()
}

fn learning(trained: &mut Option<Trained>) -> Check {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        seed: 7,
        out_dir: dir.path().to_path_buf(),
        ..TrainConfig::desk()
    };
    let stages = cfg.stages.clone();
    let mut trainer = Trainer::new(cfg).unwrap();

    let t2 = train_stage(&mut trainer, stages[0].steps, "n=2");
    let n2 = trainer.weights().clone();
    let mut r = rng::from_seed(8);
    let mut greedy = 0;
    for _ in 0..100 {
        let (t, _) = random_walk_target(2, Difficulty::new(10.0).unwrap(), &mut r);
        greedy += greedy_decode(&n2, &t, &DecodeConfig::greedy(512)).unwrap().solved as usize;
    }
    let (s2, o2) = rollout_vs_oracle(&n2, 2, 9);

    trainer.next_stage();
    let t3 = train_stage(&mut trainer, stages[1].steps, "n=3");
    let n3 = trainer.weights().clone();
    let (s3, o3) = rollout_vs_oracle(&n3, 3, 10);
    *trained = Some(Trained { n2, n3 });

    let summary = format!(
        "n=2 after {:.0}s: greedy {greedy}/100 at d=10, rollout optimal {o2}/100; \
         n=3 after {:.0}s more: solved {s3}/100, optimal {o3}/100",
        t2.as_secs_f64(),
        t3.as_secs_f64()
    );
    ensure(
        t2 <= Duration::from_secs(30 * 60)
            && t3 <= Duration::from_secs(4 * 3600)
            && greedy >= 95
            && s2 == 100
            && o2 >= 95
            && s3 == 100
            && o3 >= 80,
        || summary.clone(),
    )?;
    Ok(summary)
}

fn reversal(trained: &Option<Trained>) -> Check {
    let w = &trained.as_ref().ok_or("needs the trained weights")?.n3;
    let mut cache = PolicyCache::new(w);
    let mut r = rng::from_seed(11);
    let (mut solved, mut attempts) = (0, 0);
    let direct_cfg = DecodeConfig { inverse_trick: false, ..sampler(32) };
    while solved < 1000 && attempts < 2000 {
        attempts += 1;
        let t = match attempts % 4 {
            0 => uniform_target(2, &mut r),
            1 => uniform_target(3, &mut r),
            2 => random_walk_target(3, Difficulty::new(12.0).unwrap(), &mut r).0,
            _ => random_walk_target(4, Difficulty::new(6.0).unwrap(), &mut r).0,
        };
        let seed: u64 = r.random();
        let both = decode(&mut cache, &t, &sampler(32), &mut rng::from_seed(seed)).unwrap();
        let direct = decode(&mut cache, &t, &direct_cfg, &mut rng::from_seed(seed)).unwrap();
        if !both.solved {
            ensure(!direct.solved, || "direct solved where inverse-enabled did not".into())?;
            continue;
        }
        solved += 1;
        let mut m = Tableau::identity(t.n());
        m.apply_circuit(&both.circuit).unwrap();
        ensure(m == t, || format!("instance {attempts}: circuit does not reproduce target"))?;
        ensure(verify_circuit(&both.circuit, &t).unwrap(), || "verify disagrees".into())?;
        if direct.solved {
            ensure(both.cz_count <= direct.cz_count, || {
                format!("instance {attempts}: inverse {} > direct {}", both.cz_count, direct.cz_count)
            })?;
        }
    }
    ensure(solved >= 1000, || format!("only {solved} solved in {attempts} attempts"))?;
    Ok(format!("{solved} solved instances verified, inverse-enabled CZ <= direct on all"))
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[1]
}

fn size_agnostic(trained: &Option<Trained>) -> Check {
    let w = &trained.as_ref().ok_or("needs the trained weights")?.n2;
    let ds = [2.0, 8.0, 32.0, 128.0];
    let per_batch = 20;
    let mut rows = Vec::new();
    for n in 2..=10 {
        let mut medians = Vec::new();
        for &d in &ds {
            let mut rates = [0.0; 3];
            for (s, rate) in rates.iter_mut().enumerate() {
                let mut r = rng::stream(12, (n as u64) << 32 | (d as u64) << 8 | s as u64);
                let cfg = DecodeConfig::sweep(n);
                let mut cache = PolicyCache::new(w);
                let mut solved = 0;
                for _ in 0..per_batch {
                    let (t, _) = random_walk_target(n, Difficulty::new(d).unwrap(), &mut r);
                    let out = forward(w, &t).map_err(|e| e.to_string())?;
                    ensure(out.logits.len() == num_actions(n), || format!("n={n}: wrong logit count"))?;
                    let res = decode(&mut cache, &t, &cfg, &mut r).map_err(|e| e.to_string())?;
                    solved += res.solved as usize;
                }
                *rate = solved as f64 / per_batch as f64;
            }
            medians.push(median3(rates));
        }
        let monotone = medians.windows(2).all(|p| p[1] <= p[0]);
        let shown: Vec<String> = medians.iter().map(|m| format!("{m:.2}")).collect();
        ensure(monotone, || format!("n={n}: solve rates {shown:?} rise with d"))?;
        rows.push(format!("n={n} [{}]", shown.join(" ")));
    }
    Ok(format!("d in {ds:?}: {}", rows.join(", ")))
}

fn cost_accounting() -> Check {
    let (_, gates) = parse_imported_circuit("CIRCUIT n=2\ncz 0 1\ncx 0 1\nswap 0 1\nh 0\n").map_err(|e| e.to_string())?;
    let cost = cz_equivalent_cost(&gates);
    ensure(cost == 5, || format!("scored {cost}"))?;
    Ok("[CZ, CX, SWAP, H] scores 5".into())
}

fn run(k: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("criterion {k:>2} {tag} {name} ({secs:.1}s): {detail}");
    ok
}

fn main() {
    let mut trained = None;
    let results = [
        run(1, "algebraic core", algebraic_core),
        run(2, "generator goldens", goldens),
        run(3, "group artifacts", group_artifacts),
        run(4, "equivariance", equivariance),
        run(5, "gradient check", gradients),
        run(6, "curriculum statistics", curriculum_statistics),
        run(7, "desk-scale learning", || learning(&mut trained)),
        run(8, "reversal and verification", || reversal(&trained)),
        run(9, "size agnosticism", || size_agnostic(&trained)),
        run(10, "cost accounting", cost_accounting),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
