//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use lsk3d::conv::{partition_groups, subm_conv_backward, subm_conv_forward, subm_conv_forward_taped, GroupPartition, GroupedSparseKernel};
use lsk3d::cws::{select_channels, sort_channels};
use lsk3d::harness::{generate_scene, prepare_scene, RunConfig, SyntheticSceneSpec};
use lsk3d::metrics::{compute_erf, count_flops, kernel_flops};
use lsk3d::network::{weighted_ce_loss, LskNetwork, NetworkConfig, NormMode};
use lsk3d::sds::{er_init_mask, er_scale, sds_update};
use lsk3d::voxel::{build_index, gather_neighbors, kernel_offsets, Coord3, NeighborMap, SparseTensor};
use lsk3d::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn random_divisions(k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut parts = Vec::new();
    let mut left = k;
    while left > 0 {
        let p = rng.gen_range(1..=left);
        parts.push(p);
        left -= p;
    }
    parts
}

fn random_partition(k: usize, rng: &mut ChaCha8Rng) -> GroupPartition {
    let d = [random_divisions(k, rng), random_divisions(k, rng), random_divisions(k, rng)];
    partition_groups([k; 3], d).unwrap()
}

fn random_coords(extent: i32, n: usize, rng: &mut ChaCha8Rng) -> Vec<Coord3> {
    let mut set = std::collections::BTreeSet::new();
    while set.len() < n {
        set.insert(Coord3::new(rng.gen_range(0..extent), rng.gen_range(0..extent), rng.gen_range(0..extent)));
    }
    set.into_iter().collect()
}

fn random_kernel<T: Scalar>(k: usize, d_out: usize, d_in: usize, rng: &mut ChaCha8Rng) -> GroupedSparseKernel<T> {
    let partition = random_partition(k, rng);
    let n = k * k * k * d_out * d_in;
    let w = (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-1.0..1.0))).collect();
    let mask = (0..n).map(|_| rng.gen_bool(0.6)).collect();
    GroupedSparseKernel::with_mask(partition, d_out, d_in, w, mask).unwrap()
}

/// Dense convolution over a zero-padded grid, read out at the active sites.
/// Terms are summed slot by slot, inputs in order.
fn dense_oracle<T: Scalar>(x: &SparseTensor<T>, kernel: &GroupedSparseKernel<T>, k: usize, extent: i32) -> Vec<T> {
    let r = (k / 2) as i32;
    let side = extent + 2 * r;
    let d_in = kernel.d_in();
    let cell = |c: Coord3| (((c.x + r) * side + (c.y + r)) * side + (c.z + r)) as usize;
    let mut grid = vec![T::zero(); (side * side * side) as usize * d_in];
    for (row, &c) in x.coords().iter().enumerate() {
        grid[cell(c) * d_in..(cell(c) + 1) * d_in].copy_from_slice(x.row(row));
    }
    let mut out = Vec::with_capacity(x.len() * kernel.d_out());
    for &c in x.coords() {
        let mut acc = vec![T::zero(); kernel.d_out()];
        let mut slot = 0;
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    let g = cell(c + Coord3::new(dx, dy, dz));
                    for i in 0..d_in {
                        let xv = grid[g * d_in + i];
                        for (o, a) in acc.iter_mut().enumerate() {
                            *a = *a + kernel.weight(slot, o, i) * xv;
                        }
                    }
                    slot += 1;
                }
            }
        }
        out.extend(acc);
    }
    out
}

fn nmap_for<T: Copy>(x: &SparseTensor<T>, k: usize) -> NeighborMap {
    gather_neighbors(&build_index(x).unwrap(), x.coords(), &kernel_offsets(k, k, k).unwrap())
}

fn conv_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let (mut err32, mut err64) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let extent = rng.gen_range(2..=8);
        let n = rng.gen_range(1..=((extent * extent * extent) as usize).min(200));
        let coords = random_coords(extent, n, &mut rng);
        let (d_in, d_out) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let feats: Vec<f64> = (0..n * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k64 = random_kernel::<f64>(k, d_out, d_in, &mut rng);
        let x64 = SparseTensor::new(coords, feats, d_in).unwrap();
        let nmap = nmap_for(&x64, k);
        let y = subm_conv_forward(&x64, &k64, &nmap).unwrap();
        let want = dense_oracle(&x64, &k64, k, extent);
        err64 = y.feats().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(err64, f64::max);
        let (k32, x32) = (k64.cast::<f32>(), x64.cast::<f32>());
        let y = subm_conv_forward(&x32, &k32, &nmap).unwrap();
        let want = dense_oracle(&x32, &k32, k, extent);
        err32 = y.feats().iter().zip(&want).map(|(a, b)| (a - b).abs() as f64).fold(err32, f64::max);
    }
    let detail = format!("200 instances, max-abs error f32 {err32:.3e} (tol 1e-6), f64 {err64:.3e} (tol 1e-12)");
    if err32 <= 1e-6 && err64 <= 1e-12 { Ok(detail) } else { Err(detail) }
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale == 0.0 { diff } else { diff / scale }
}

fn gradient_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let h = 1e-6;
    let (mut worst_conv, mut worst_ce, mut masked_leak) = (0.0f64, 0.0f64, false);
    for _ in 0..50 {
        // conv: objective <g, conv(x)>
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let extent = rng.gen_range(2..=5);
        let n = rng.gen_range(1..=((extent * extent * extent) as usize).min(40));
        let coords = random_coords(extent, n, &mut rng);
        let (d_in, d_out) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let feats: Vec<f64> = (0..n * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut kernel = random_kernel::<f64>(k, d_out, d_in, &mut rng);
        let x = Arc::new(SparseTensor::new(coords, feats, d_in).unwrap());
        let nmap = Arc::new(nmap_for(&x, k));
        let g: Vec<f64> = (0..n * d_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, tape) = subm_conv_forward_taped(x.clone(), &kernel, nmap.clone()).unwrap();
        let (gx, gw) = subm_conv_backward(&g, &tape, &kernel).unwrap();
        let obj = |x: &SparseTensor<f64>, kern: &GroupedSparseKernel<f64>| -> f64 {
            subm_conv_forward(x, kern, &nmap).unwrap().feats().iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let mut num_x = Vec::with_capacity(gx.len());
        for i in 0..gx.len() {
            let (mut xp, mut xm) = ((*x).clone(), (*x).clone());
            xp.feats_mut()[i] += h;
            xm.feats_mut()[i] -= h;
            num_x.push((obj(&xp, &kernel) - obj(&xm, &kernel)) / (2.0 * h));
        }
        let mask = kernel.mask().to_vec();
        let (mut an_w, mut num_w) = (Vec::new(), Vec::new());
        for idx in 0..gw.len() {
            if !mask[idx] {
                masked_leak |= gw[idx] != 0.0;
                continue;
            }
            let orig = kernel.weights()[idx];
            kernel.weights_mut().0[idx] = orig + h;
            let fp = obj(&x, &kernel);
            kernel.weights_mut().0[idx] = orig - h;
            let fm = obj(&x, &kernel);
            kernel.weights_mut().0[idx] = orig;
            an_w.push(gw[idx]);
            num_w.push((fp - fm) / (2.0 * h));
        }
        worst_conv = worst_conv.max(rel_err(&gx, &num_x)).max(rel_err(&an_w, &num_w));

        // weighted cross-entropy
        let (rows, classes) = (rng.gen_range(1..=20), rng.gen_range(2..=6));
        let logits: Vec<f64> = (0..rows * classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let labels: Vec<u16> = (0..rows).map(|_| rng.gen_range(0..classes as u16)).collect();
        let weights: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.2..3.0)).collect();
        let (_, grad) = weighted_ce_loss(&logits, &labels, &weights).unwrap();
        let num: Vec<f64> = (0..logits.len())
            .map(|i| {
                let (mut lp, mut lm) = (logits.clone(), logits.clone());
                lp[i] += h;
                lm[i] -= h;
                let f = |l: &[f64]| weighted_ce_loss(l, &labels, &weights).unwrap().0;
                (f(&lp) - f(&lm)) / (2.0 * h)
            })
            .collect();
        worst_ce = worst_ce.max(rel_err(&grad, &num));
    }
    let detail = format!(
        "50 instances, worst relative error conv {worst_conv:.2e}, weighted CE {worst_ce:.2e} (tol 1e-4); masked weight gradients zero: {}",
        !masked_leak
    );
    if worst_conv <= 1e-4 && worst_ce <= 1e-4 && !masked_leak { Ok(detail) } else { Err(detail) }
}

fn lsk_layer(d: usize, s: f64, seed: u64) -> GroupedSparseKernel<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let partition = partition_groups([9; 3], [vec![3, 3, 3], vec![3, 3, 3], vec![3, 3, 3]]).unwrap();
    let (mask, _) = er_init_mask(d, d, &partition, s, &mut rng);
    let w = (0..729 * d * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    GroupedSparseKernel::with_mask(partition, d, d, w, mask).unwrap()
}

fn sparsity_conservation() -> Check {
    let mut kernel = lsk_layer(32, 0.4, 300);
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let budget = kernel.group_active().to_vec();
    let recount = |k: &GroupedSparseKernel<f32>| -> Vec<usize> {
        (0..k.partition().num_groups()).map(|g| k.group_indices(g).filter(|&i| k.mask()[i]).count()).collect()
    };
    for call in 1..=1000 {
        let delta = sds_update(&mut kernel, 0.3, &mut rng);
        // emulate training touching regrown weights so later prunes see real magnitudes
        {
            let (w, _) = kernel.weights_mut();
            for e in &delta.grown {
                w[e.index] = rng.gen_range(-1.0..1.0);
            }
        }
        if recount(&kernel) != budget {
            return Err(format!("per-group counts changed at call {call}"));
        }
        if !kernel.is_consistent() {
            return Err(format!("mask/weight inconsistency at call {call}"));
        }
    }
    Ok(format!("1000 updates on K=9, D=32 ({} groups): counts constant, masks consistent", budget.len()))
}

fn er_calibration() -> Check {
    let kernel = lsk_layer(64, 0.4, 400);
    let total = kernel.len() as f64;
    let zeros = kernel.mask().iter().filter(|&&m| !m).count() as f64;
    let target = 0.4 * er_scale(64, 64, [3, 3, 3]) * total;
    let detail = format!("zeros {zeros} vs s*scale*total {target:.2} (scale {:.6})", er_scale(64, 64, [3, 3, 3]));
    if (zeros - target).abs() <= 1.0 { Ok(detail) } else { Err(detail) }
}

fn cws_preservation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for trial in 0..20 {
        let k = [3, 5][rng.gen_range(0..2)];
        let base = rng.gen_range(2..=6);
        let cfg = NetworkConfig {
            voxel_size: 0.05,
            in_feats: rng.gen_range(1..=3),
            hidden_width: base,
            width_factor: rng.gen_range(1.3..2.0),
            kernel_size: k,
            group_divisions: random_divisions(k, &mut rng),
            num_blocks: rng.gen_range(1..=3),
            num_classes: rng.gen_range(2..=4),
            class_weights: vec![1.0; 4],
            scales: vec![1],
        };
        let cfg = NetworkConfig { class_weights: vec![1.0; cfg.num_classes], ..cfg };
        let (mut net, _) = LskNetwork::build(&cfg, cfg.expanded_width(), rng.gen_range(0.0..0.6), &mut rng).unwrap();
        let n = rng.gen_range(5..80);
        let x = SparseTensor::new(
            random_coords(6, n, &mut rng),
            (0..n * cfg.in_feats).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            cfg.in_feats,
        )
        .unwrap();
        let nmap = Arc::new(gather_neighbors(&build_index(&x).unwrap(), x.coords(), net.offsets()));
        let modes = [NormMode::Train, NormMode::Eval];
        let before: Vec<Vec<f32>> = modes.iter().map(|&m| net.forward(&x, &nmap, m).unwrap().logits).collect();
        sort_channels(&mut net).unwrap();
        let after: Vec<Vec<f32>> = modes.iter().map(|&m| net.forward(&x, &nmap, m).unwrap().logits).collect();
        let same_bits = before.iter().zip(&after).all(|(a, b)| a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()));
        if !same_bits {
            return Err(format!("network {trial}: output changed after sorting"));
        }
        let selected = select_channels(&net, base).unwrap();
        let (native, _) = LskNetwork::build(&cfg, base, 0.4, &mut rng).unwrap();
        let dims = |n: &LskNetwork| -> Vec<(usize, usize, usize)> {
            n.lsk_layers().map(|l| (l.kernel.num_slots(), l.kernel.d_out(), l.kernel.d_in())).collect()
        };
        if dims(&selected) != dims(&native) || selected.stream_width() != native.stream_width() {
            return Err(format!("network {trial}: selected dims differ from the native base-width network"));
        }
    }
    Ok("20 networks: outputs bit-identical after sorting; selected layer dims equal native base width".into())
}

fn size_reduction() -> Check {
    let (d, s) = (64, 0.4);
    let sparse = lsk_layer(d, s, 600);
    let dense = GroupedSparseKernel::dense(sparse.partition().clone(), d, d, vec![1.0f32; sparse.len()]).unwrap();
    let ratio = sparse.active_count() as f64 / dense.len() as f64;
    let want = 1.0 - s * er_scale(d, d, [3, 3, 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let x = SparseTensor::new(random_coords(16, 1500, &mut rng), vec![1.0f32; 1500], 1).unwrap();
    let nmap = nmap_for(&x, 9);
    let flop_ratio = kernel_flops(&sparse, &nmap) as f64 / kernel_flops(&dense, &nmap) as f64;

    // whole network: selected sparse base width vs dense at training width
    let cfg = RunConfig::desk_default().network;
    let scene = prepare_scene(&generate_scene(&SyntheticSceneSpec { seed: 602, ..Default::default() }, 0).unwrap(), &cfg).unwrap();
    let wide = cfg.expanded_width();
    let (expanded_dense, _) = LskNetwork::build(&cfg, wide, 0.0, &mut ChaCha8Rng::seed_from_u64(603)).unwrap();
    let (mut trained, _) = LskNetwork::build(&cfg, wide, s, &mut ChaCha8Rng::seed_from_u64(603)).unwrap();
    sort_channels(&mut trained).unwrap();
    let selected = select_channels(&trained, cfg.hidden_width).unwrap();
    let net_ratio = count_flops(&selected, &scene.sample.nmap).flops() as f64
        / count_flops(&expanded_dense, &scene.sample.nmap).flops() as f64;

    let detail = format!(
        "K=9 D=64 nonzero/dense {ratio:.6} (1-s*scale {want:.6}); FLOPs ratio {flop_ratio:.4} ({:+.2}% of nonzero ratio); selected/expanded-dense FLOPs {net_ratio:.4} (< 0.4)",
        100.0 * (flop_ratio / ratio - 1.0)
    );
    let ok = (ratio - want).abs() * dense.len() as f64 <= 1.0 && (flop_ratio / ratio - 1.0).abs() <= 0.02 && net_ratio < 0.4;
    if ok { Ok(detail) } else { Err(detail) }
}

fn erf_support() -> Check {
    let n = 32;
    let coords: Vec<Coord3> = (0..n * n * n).map(|i| Coord3::new(i / (n * n), (i / n) % n, i % n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let feats = (0..coords.len() * 2).map(|_| rng.gen_range(0.0..1.0)).collect();
    let x = SparseTensor::new(coords, feats, 2).unwrap();
    let center = Coord3::new(n / 2, n / 2, n / 2);
    let support = |k: usize| {
        let cfg = NetworkConfig {
            voxel_size: 0.05,
            in_feats: 2,
            hidden_width: 4,
            width_factor: 1.0,
            kernel_size: k,
            group_divisions: vec![],
            num_blocks: 2,
            num_classes: 2,
            class_weights: vec![1.0; 2],
            scales: vec![1],
        };
        let (net, _) = LskNetwork::build(&cfg, 4, 0.4, &mut ChaCha8Rng::seed_from_u64(701)).unwrap();
        let nmap = Arc::new(gather_neighbors(&build_index(&x).unwrap(), x.coords(), net.offsets()));
        compute_erf(&net, &x, &nmap, center).unwrap().support()
    };
    let small = support(3);
    let large = support(9);
    let contained = small.iter().all(|c| large.binary_search(c).is_ok());
    let detail = format!("support K=3: {} voxels, K=9: {} voxels, contained: {contained}", small.len(), large.len());
    if contained && large.len() > small.len() { Ok(detail) } else { Err(detail) }
}

fn cli(args: &[&str], threads: &str) -> std::result::Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lsk3d"))
        .args(args)
        .env("LSK_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("lsk3d {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn miou_of(eval_stdout: &str) -> f64 {
    eval_stdout.lines().find_map(|l| l.strip_prefix("mIoU ")).and_then(|v| v.trim().parse().ok()).unwrap_or(0.0)
}

/// Runs the smoke pipeline twice (different thread counts) and returns the
/// smoke verdict and the determinism verdict.
fn end_to_end(dir: &Path) -> (Check, Check) {
    let run = || -> std::result::Result<(String, String, String, f64, f64, String, String), String> {
        let p = |x: &Path| x.to_str().unwrap().to_string();
        let train_dir = dir.join("data/train");
        let held_dir = dir.join("data/held");
        cli(&["gen-data", "--out", &p(&train_dir), "--count", "20", "--classes", "3", "--extent", "24", "--seed", "1"], "1")?;
        cli(&["gen-data", "--out", &p(&held_dir), "--count", "5", "--classes", "3", "--extent", "24", "--seed", "1", "--first", "1000"], "1")?;
        let shipped = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml")).map_err(|e| e.to_string())?;
        let mut cfg = RunConfig::parse(&shipped).map_err(|e| e.to_string())?;
        cfg.train_data = train_dir.join("manifest.toml");
        cfg.output_dir = dir.join("run");
        let cfg_path = dir.join("run.toml");
        std::fs::write(&cfg_path, cfg.to_toml().unwrap()).map_err(|e| e.to_string())?;

        let a = cli(&["train", "--config", &p(&cfg_path), "--out", &p(&dir.join("run_a"))], "1")?;
        let b = cli(&["train", "--config", &p(&cfg_path), "--out", &p(&dir.join("run_b"))], "2")?;
        let ckpt = p(&dir.join("run_a/checkpoint.lskc"));
        let train_miou = miou_of(&cli(&["eval", "--checkpoint", &ckpt, "--data", &p(&train_dir.join("manifest.toml"))], "1")?);
        let held_miou = miou_of(&cli(&["eval", "--checkpoint", &ckpt, "--data", &p(&held_dir.join("manifest.toml"))], "1")?);
        let csv_a = std::fs::read_to_string(dir.join("run_a/metrics.csv")).map_err(|e| e.to_string())?;
        let csv_b = std::fs::read_to_string(dir.join("run_b/metrics.csv")).map_err(|e| e.to_string())?;
        Ok((a, b, csv_a, train_miou, held_miou, csv_b, ckpt))
    };
    match run() {
        Err(e) => (Err(e.clone()), Err(e)),
        Ok((a, b, csv_a, train_miou, held_miou, csv_b, _)) => {
            let rows: Vec<&str> = csv_a.lines().skip(1).collect();
            let flag = |r: &&str, from_end: usize| r.split(',').rev().nth(from_end) == Some("1");
            let sds = rows.iter().filter(|r| flag(r, 1)).count();
            let sorts = rows.iter().filter(|r| flag(r, 0)).count();
            let smoke = format!(
                "{} iterations, {sds} sds events, {sorts} sort events; mIoU train {train_miou:.4} (>= 0.95), held-out {held_miou:.4} (>= 0.85)",
                rows.len()
            );
            let smoke = if rows.len() == 2000 && sds >= 20 && sorts >= 2 && train_miou >= 0.95 && held_miou >= 0.85 {
                Ok(smoke)
            } else {
                Err(smoke)
            };
            let hash = |s: &str| s.split_whitespace().last().unwrap_or_default().to_string();
            let same = csv_a == csv_b && hash(&a) == hash(&b) && !hash(&a).is_empty();
            let det = format!("LSK_THREADS=1 vs 2: metrics CSV identical {}, checkpoint sha256 {} vs {}", csv_a == csv_b, hash(&a), hash(&b));
            (smoke, if same { Ok(det) } else { Err(det) })
        }
    }
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, limit: Option<Duration>, start: Instant, result: Check| {
        let elapsed = start.elapsed();
        let in_time = limit.map_or(true, |l| elapsed <= l);
        let (pass, detail) = match result {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        let limit = limit.map_or(String::new(), |l| format!(", limit {}s", l.as_secs()));
        println!("{} {name}: {detail} [{:.1}s{limit}]", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
        failures += (!pass) as usize;
    };
    let timed: [(&str, Option<u64>, fn() -> Check); 7] = [
        ("conv-oracle", Some(30), conv_oracle),
        ("gradient-checks", Some(60), gradient_checks),
        ("sparsity-conservation", Some(60), sparsity_conservation),
        ("er-calibration", None, er_calibration),
        ("cws-preservation", None, cws_preservation),
        ("size-reduction", None, size_reduction),
        ("erf-support", Some(120), erf_support),
    ];
    for (name, limit, check) in timed {
        let start = Instant::now();
        report(name, limit.map(Duration::from_secs), start, check());
    }
    let dir = tempfile::tempdir().expect("temp dir");
    let start = Instant::now();
    let (smoke, det) = end_to_end(dir.path());
    report("end-to-end-smoke", Some(Duration::from_secs(30 * 60)), start, smoke);
    report("determinism", None, start, det);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
