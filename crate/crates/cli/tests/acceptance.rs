//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use labeldist::elo::{log_sequence, read_choice_log, replay, EloRatings};
use labeldist::io::{encode_pgm, save_array, Format};
use labeldist::perturb::{morph, MorphOp, MorphSpec, NoiseKind};
use labeldist::raster::Raster;
use labeldist::search::{evolve, SearchConfig};
use labeldist::stats::{ols_fit, t_tail};
use labeldist::study::{box_mask, run_sweep, SweepKind, SweepSpec};
use labeldist::{compare_all, region_mapping, Label, LabeledArray, MetricName};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random_array(rng: &mut ChaCha8Rng, rows: usize, cols: usize, labels: Label) -> LabeledArray {
    let data = (0..rows * cols).map(|_| rng.random_range(0..labels)).collect();
    LabeledArray::new(rows, cols, data).unwrap()
}

fn within(elapsed: Duration, limit: f64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit {
        Ok(())
    } else {
        Err(format!("took {:.2}s, limit {limit}s", elapsed.as_secs_f64()))
    }
}

fn identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut with_bsm = 0;
    for _ in 0..50 {
        let (r, c) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let labels = rng.random_range(1..=8);
        let x = random_array(&mut rng, r, c, labels);
        let cmp = compare_all(&x, &x).map_err(|e| e.to_string())?;
        for res in cmp.results.values() {
            ensure!(res.value == 0.0 && !res.degenerate, "{} = {} on {r}x{c}", res.metric, res.value);
        }
        let binary = x.distinct_labels().len() <= 2;
        ensure!(cmp.results.contains_key(&MetricName::Bsm) == binary, "bsm applicability");
        with_bsm += binary as usize;
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("50 arrays, bsm checked on {with_bsm} binary ones"))
}

fn label_invariance() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (r, c) = (rng.random_range(1..=48), rng.random_range(1..=48));
        let g_labels = rng.random_range(1..=6);
        let g = random_array(&mut rng, r, c, g_labels);
        let labels = rng.random_range(1..=8);
        let i = random_array(&mut rng, r, c, labels);
        let mut targets: Vec<Label> = (0..labels).map(|k| k * 101 + 7).collect();
        targets.shuffle(&mut rng);
        let relabeled = i.map_labels(|l| targets[l as usize]);
        let a = compare_all(&g, &i).map_err(|e| e.to_string())?;
        let b = compare_all(&g, &relabeled).map_err(|e| e.to_string())?;
        for m in [MetricName::Rm, MetricName::Lad, MetricName::Madlad] {
            let (va, vb) = (a.value(m).unwrap(), b.value(m).unwrap());
            ensure!(va.to_bits() == vb.to_bits(), "{m}: {va} vs {vb}");
        }
    }
    within(start.elapsed(), 10.0)?;
    Ok("200 relabelings bit-exact".into())
}

fn edge_cases() -> Outcome {
    let (rows, cols) = (100, 100);
    let mn = (rows * cols) as f64;
    let g = box_mask(rows, cols, 20, 20, 1, 0).unwrap();
    let all_fg = LabeledArray::filled(rows, cols, 1).unwrap();
    let all_bg = LabeledArray::filled(rows, cols, 0).unwrap();
    let unique = LabeledArray::new(rows, cols, (0..(rows * cols) as Label).collect()).unwrap();
    let fg = compare_all(&g, &all_fg).unwrap();
    let bg = compare_all(&g, &all_bg).unwrap();
    let un = compare_all(&g, &unique).unwrap();
    let v = |c: &labeldist::Comparison, m| c.value(m).unwrap();

    let nhd_sum = v(&fg, MetricName::Nhd) + v(&bg, MetricName::Nhd);
    ensure!(nhd_sum == 1.0, "NHD(all-fg) + NHD(all-bg) = {nhd_sum}");
    for (name, c) in [("all-fg", &fg), ("all-bg", &bg)] {
        let rm = v(c, MetricName::Rm);
        ensure!((rm - 0.04).abs() <= 0.005, "RM({name}) = {rm}");
    }
    ensure!(v(&un, MetricName::Rm) == 0.0, "RM(unique) = {}", v(&un, MetricName::Rm));
    let lad = v(&un, MetricName::Lad);
    ensure!(lad == (mn - 2.0) / mn && lad >= 0.99, "LAD(unique) = {lad}");
    let madlad = v(&un, MetricName::Madlad);
    ensure!(madlad >= 0.99, "MADLAD(unique) = {madlad}");
    Ok(format!(
        "RM(bg) {:.4}, LAD(unique) {lad:.4}, MADLAD(unique) {madlad:.4}, MADLAD(bg) {:.4}",
        v(&bg, MetricName::Rm),
        v(&bg, MetricName::Madlad)
    ))
}

/// Every candidate label takes the gt label with the largest overlap, smallest id on ties.
fn argmax_oracle(g: &[Label], i: &[Label]) -> (BTreeMap<Label, Label>, usize) {
    let mut overlap = [[0usize; 3]; 3];
    for (&a, &b) in g.iter().zip(i) {
        overlap[b as usize][a as usize] += 1;
    }
    let mut assignment = BTreeMap::new();
    let mut explained = 0;
    for (v, row) in overlap.iter().enumerate() {
        if row.iter().sum::<usize>() == 0 {
            continue;
        }
        let mut best = 0;
        for gl in 1..3 {
            if row[gl] > row[best] {
                best = gl;
            }
        }
        assignment.insert(v as Label, best as Label);
        explained += row[best];
    }
    (assignment, g.len() - explained)
}

fn mapping_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    for _ in 0..100_000 {
        let g = random_array(&mut rng, 3, 3, 3);
        let i = random_array(&mut rng, 3, 3, 3);
        let m = region_mapping(&g, &i).unwrap();
        let (assignment, p) = argmax_oracle(g.labels(), i.labels());
        ensure!(m.mismatched_pixels == p, "P {} vs {p} for {:?} / {:?}", m.mismatched_pixels, g, i);
        ensure!(m.assignment == assignment, "assignment {:?} vs {assignment:?}", m.assignment);
        checked += 1;
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!("{checked} pairs, 0 mismatches"))
}

/// 100x100 with a 25x40 foreground box of label 0 on label 1.
fn ten_percent_mask() -> LabeledArray {
    box_mask(100, 100, 25, 40, 0, 1).unwrap()
}

fn sweep(kind: SweepKind) -> labeldist::study::SweepResult {
    run_sweep(&ten_percent_mask(), &SweepSpec::new(kind, 10, 0)).unwrap()
}

fn salt_and_pepper_endpoint() -> Outcome {
    let result = sweep(SweepKind::Noise(NoiseKind::SaltAndPepper));
    let last = result.rows.last().unwrap();
    ensure!(last.nhd == 1.0, "NHD at level 1 = {}", last.nhd);
    ensure!(last.bsm == Some(0.0), "BSM at level 1 = {:?}", last.bsm);
    let inner = &result.rows[1..result.rows.len() - 1];
    let hit: Vec<usize> = inner.iter().filter(|r| r.madlad_degenerate).map(|r| r.step).collect();
    ensure!(!hit.is_empty(), "no degenerate mid-level step");
    Ok(format!("degenerate at steps {hit:?}"))
}

fn single_noise_endpoints() -> Outcome {
    let pepper = sweep(SweepKind::Noise(NoiseKind::Pepper)).rows.last().unwrap().nhd;
    let salt = sweep(SweepKind::Noise(NoiseKind::Salt)).rows.last().unwrap().nhd;
    ensure!((pepper - 0.90).abs() <= 0.02, "pepper NHD = {pepper}");
    ensure!((salt - 0.10).abs() <= 0.02, "salt NHD = {salt}");
    Ok(format!("pepper {pepper:.3}, salt {salt:.3}"))
}

fn bsm_nhd_relation() -> Outcome {
    let kinds = [
        SweepKind::Noise(NoiseKind::Salt),
        SweepKind::Noise(NoiseKind::Pepper),
        SweepKind::Noise(NoiseKind::SaltAndPepper),
        SweepKind::Morph(MorphOp::Open),
        SweepKind::Morph(MorphOp::Close),
        SweepKind::Morph(MorphOp::Erode),
        SweepKind::Morph(MorphOp::Dilate),
    ];
    let mut rows = 0;
    for kind in kinds {
        for r in sweep(kind).rows.iter().filter(|r| r.nhd <= 0.5) {
            let bsm = r.bsm.ok_or("bsm missing on a binary sweep")?;
            ensure!((bsm - 2.0 * r.nhd).abs() <= 1e-12, "{kind:?} step {}: {bsm} vs {}", r.step, r.nhd);
            rows += 1;
        }
    }
    Ok(format!("{rows} rows with NHD <= 0.5"))
}

fn foreground(a: &LabeledArray) -> Vec<bool> {
    a.labels().iter().map(|&l| l == 0).collect()
}

fn morphology_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 0..100 {
        let density = rng.random_range(0.2..0.8);
        let data = (0..32 * 32).map(|_| u32::from(!rng.random_bool(density))).collect();
        let x = LabeledArray::new(32, 32, data).unwrap();
        let fx = foreground(&x);
        for side in [3, 5] {
            let open = |a: &LabeledArray| morph(a, &MorphSpec::new(MorphOp::Open, side)).unwrap();
            let close = |a: &LabeledArray| morph(a, &MorphSpec::new(MorphOp::Close, side)).unwrap();
            let (o, c) = (open(&x), close(&x));
            ensure!(open(&o) == o, "open not idempotent, array {n} side {side}");
            ensure!(close(&c) == c, "close not idempotent, array {n} side {side}");
            let (fo, fc) = (foreground(&o), foreground(&c));
            ensure!(
                fx.iter().zip(&fo).all(|(&in_x, &in_o)| !in_o || in_x),
                "open not anti-extensive, array {n} side {side}"
            );
            ensure!(
                fx.iter().zip(&fc).all(|(&in_x, &in_c)| !in_x || in_c),
                "close not extensive, array {n} side {side}"
            );
        }
    }
    Ok("100 arrays, sides 3 and 5".into())
}

fn elo_properties() -> Outcome {
    let ids: Vec<String> = (0..8).map(|k| format!("p{k}")).collect();
    let mut ratings = EloRatings::new(ids.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let w = rng.random_range(0..8);
        let l = (w + rng.random_range(1..8)) % 8;
        ratings.apply_result(&ids[w], &ids[l]).unwrap();
        worst = worst.max(ratings.total().abs());
    }
    ensure!(worst <= 1e-9, "rating sum drifted to {worst}");

    let mut pair = EloRatings::new(vec!["a".into(), "b".into()]);
    pair.apply_result("a", "b").unwrap();
    ensure!(
        pair.rating("a") == Some(16.0) && pair.rating("b") == Some(-16.0),
        "first update {:?}",
        pair.ratings
    );

    let mut order: Vec<usize> = (0..6).collect();
    order.shuffle(&mut rng);
    let mut games = Vec::new();
    for (rank, &w) in order.iter().enumerate() {
        for &l in &order[rank + 1..] {
            games.push((w, l));
        }
    }
    games.shuffle(&mut rng);
    let mut league = EloRatings::new(ids[..6].to_vec());
    for (w, l) in games {
        league.apply_result(&ids[w], &ids[l]).unwrap();
    }
    let expected: Vec<String> = order.iter().map(|&k| ids[k].clone()).collect();
    ensure!(league.ranking() == expected, "ranking {:?} vs {expected:?}", league.ranking());
    Ok(format!("max |sum| {worst:.1e} over 10^4 updates"))
}

/// Two-sided tail of Student's t with two degrees of freedom, in closed form.
fn t2_tail(t: f64) -> f64 {
    1.0 - t.abs() / (2.0 + t * t).sqrt()
}

fn regression() -> Outcome {
    let x: Vec<f64> = (0..20).map(f64::from).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
    let line = ols_fit(&x, &y).unwrap();
    ensure!((line.r_squared - 1.0).abs() <= 1e-12, "perfect line R2 = {}", line.r_squared);
    ensure!(line.p_value < 1e-9, "perfect line p = {}", line.p_value);

    let (x, y) = ([1.0, 2.0, 3.0, 4.0], [2.0, 1.0, 4.0, 3.0]);
    let mx = x.iter().sum::<f64>() / 4.0;
    let my = y.iter().sum::<f64>() / 4.0;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = sxy * sxy / (sxx * syy);
    let t = r2.sqrt() * 2f64.sqrt() / (1.0 - r2).sqrt();
    let p = t2_tail(t);
    let fit = ols_fit(&x, &y).unwrap();
    ensure!((fit.slope - slope).abs() <= 1e-9, "slope {} vs oracle {slope}", fit.slope);
    ensure!((fit.r_squared - r2).abs() <= 1e-9, "R2 {} vs oracle {r2}", fit.r_squared);
    ensure!((fit.p_value - p).abs() <= 1e-3, "p {} vs oracle {p}", fit.p_value);

    let half = t_tail(1.0, 1).unwrap();
    ensure!((half - 0.5).abs() <= 1e-8, "t_tail(1, 1) = {half}");
    Ok(format!(
        "n=4 fit slope {:.3}, R2 {:.3}, p {:.3} matches oracle",
        fit.slope, fit.r_squared, fit.p_value
    ))
}

fn complexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let sides = [100usize, 200, 400, 800, 1600];
    let inputs: Vec<_> = sides
        .iter()
        .map(|&s| (random_array(&mut rng, s, s, 4), random_array(&mut rng, s, s, 6)))
        .collect();
    let mut times = vec![f64::INFINITY; sides.len()];
    for _ in 0..5 {
        for (k, (g, i)) in inputs.iter().enumerate() {
            let reps = (1_280_000 / g.len()).max(1);
            let start = Instant::now();
            for _ in 0..reps {
                std::hint::black_box(compare_all(g, i).unwrap());
            }
            times[k] = times[k].min(start.elapsed().as_secs_f64() / reps as f64);
        }
    }
    let ratios: Vec<f64> = times.windows(2).map(|w| w[1] / w[0]).collect();
    let detail = ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ");
    ensure!(ratios.iter().all(|&r| r < 5.0), "growth per 4x pixels: {detail}");
    Ok(format!("growth per 4x pixels: {detail}; {:.1} ms at 2.56e6", times[4] * 1e3))
}

fn genetic_search() -> Outcome {
    let start = Instant::now();
    let (n, lo, hi) = (64, 20, 44);
    let inside = |k: usize| (lo..hi).contains(&(k / n)) && (lo..hi).contains(&(k % n));
    let pixels = (0..n * n).map(|k| if inside(k) { 255 } else { 0 }).collect();
    let image = Raster::gray(n, n, pixels).unwrap();
    let gt = LabeledArray::new(n, n, (0..n * n).map(|k| u32::from(inside(k))).collect()).unwrap();
    let report = evolve(&SearchConfig::default(), &image, &gt).unwrap();
    within(start.elapsed(), 30.0)?;
    ensure!(report.best_fitness <= 0.01, "best fitness {}", report.best_fitness);
    Ok(format!(
        "fitness {} after {} generations",
        report.best_fitness,
        report.history.len() - 1
    ))
}

fn server_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scene = dir.path().join("garden");
    fs::create_dir_all(scene.join("original")).unwrap();
    fs::create_dir_all(scene.join("segmentations")).unwrap();
    let photo = LabeledArray::new(8, 8, (0..64).map(|k| k * 3).collect()).unwrap();
    fs::write(scene.join("original/photo.pgm"), encode_pgm(&photo, 255).unwrap()).unwrap();
    let base = box_mask(8, 8, 4, 4, 1, 0).unwrap();
    for (k, side) in [1usize, 3, 5, 7].into_iter().enumerate() {
        let seg = morph(&base, &MorphSpec::new(MorphOp::Dilate, side).with_labels(1, 0)).unwrap();
        save_array(&seg, scene.join(format!("segmentations/cand{k}.pgm")), Format::Pgm).unwrap();
    }

    let runtime = tokio::runtime::Runtime::new().unwrap();
    runtime.block_on(async {
        let config = labeldist_server::ServerConfig::new(dir.path());
        let app = labeldist_server::AppState::load(&config).map_err(|e| e.to_string())?;
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(labeldist_server::serve_on(listener, app));
        let client = reqwest::Client::new();
        let get = |path: String| {
            let client = client.clone();
            let url = format!("{base}{path}");
            async move { client.get(url).send().await.unwrap() }
        };

        let created: Value = client
            .post(format!("{base}/api/sessions"))
            .json(&json!({"scene_id": "garden", "seed": 7}))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        let sid = created["session_id"].as_str().ok_or("no session id")?.to_string();
        ensure!(created["total"] == 6, "session total {}", created["total"]);

        let mut answered = 0;
        loop {
            let next: Value = get(format!("/api/sessions/{sid}/next")).await.json().await.unwrap();
            if next["done"] == true {
                break;
            }
            let side = if answered % 3 == 0 { "right" } else { "left" };
            let status = client
                .post(format!("{base}/api/sessions/{sid}/choice"))
                .json(&json!({"pair_id": next["pair_id"], "winner_id": next[side]["id"]}))
                .send()
                .await
                .unwrap()
                .status();
            ensure!(status.is_success(), "choice rejected with {status}");
            answered += 1;
        }
        ensure!(answered == 6, "answered {answered} pairs");

        let results: Value = get("/api/scenes/garden/results".into()).await.json().await.unwrap();
        let csv = get("/api/scenes/garden/choices.csv".into()).await.text().await.unwrap();
        let records = read_choice_log(&csv).map_err(|e| e.to_string())?;
        ensure!(records.len() == 6, "export holds {} choices", records.len());
        let ids: Vec<String> = (0..4).map(|k| format!("cand{k}")).collect();
        let offline = replay(ids.clone(), &log_sequence(&records, "garden")).unwrap();
        for id in &ids {
            let served = results["ratings"][id].as_f64();
            ensure!(served == offline.rating(id), "{id}: served {served:?}, replay {:?}", offline.rating(id));
        }
        Ok(format!("6 pairs answered, ranking {}", results["ranking"]))
    })
}

fn main() {
    let criteria: [Criterion; 13] = [
        ("identity", identity),
        ("label invariance", label_invariance),
        ("edge-case relations", edge_cases),
        ("mapping oracle", mapping_oracle),
        ("salt-and-pepper endpoint", salt_and_pepper_endpoint),
        ("salt / pepper endpoints", single_noise_endpoints),
        ("bsm = 2 nhd", bsm_nhd_relation),
        ("morphology identities", morphology_identities),
        ("elo", elo_properties),
        ("regression", regression),
        ("complexity", complexity),
        ("genetic search", genetic_search),
        ("server end to end", server_end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<26} {detail} ({secs:.2}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<26} {detail} ({secs:.2}s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
