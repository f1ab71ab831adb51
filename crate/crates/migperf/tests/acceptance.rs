//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::Request as HttpRequest;
use http_body_util::BodyExt;
use migperf::catalog::resolve_catalog;
use migperf::command::{Command, Output};
use migperf::engine::{BenchMode, Engine};
use migperf::export::{read_summaries_csv, summaries_csv};
use migperf_core::controller::Controller;
use migperf_core::device::{DeviceCatalogEntry, DeviceState};
use migperf_core::report::{Cell, FigureDataset};
use migperf_core::telemetry::{energy_mj, percentile, RunId};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tower::ServiceExt;

type Outcome = Result<String, String>;
type Sample = (String, Vec<(String, String)>, f64);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    workspace().join("configs").join(name)
}

fn catalog() -> Vec<DeviceCatalogEntry> {
    resolve_catalog(Some(&Path::new(env!("CARGO_MANIFEST_DIR")).join("catalog/default.json"))).unwrap()
}

fn device(name: &str) -> DeviceCatalogEntry {
    catalog().into_iter().find(|d| d.model_name == name).unwrap()
}

// ---------------------------------------------------------------------------
// 1. partition-rule fidelity

/// Exhaustive placement search, independent of the library's search.
fn brute_force_feasible(entry: &DeviceCatalogEntry, counts: &[u32]) -> bool {
    for (i, p) in entry.profiles.iter().enumerate() {
        if counts[i] > p.max_count.unwrap_or(u32::MAX) {
            return false;
        }
        for (j, q) in entry.profiles.iter().enumerate() {
            if counts[i] > 0 && counts[j] > 0 && (p.excludes.contains(&q.name) || q.excludes.contains(&p.name)) {
                return false;
            }
        }
    }
    let items: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, c as usize))
        .collect();
    fn place(entry: &DeviceCatalogEntry, items: &[usize], k: usize, used: &mut Vec<(u32, u32, usize)>) -> bool {
        if k == items.len() {
            return true;
        }
        let p = &entry.profiles[items[k]];
        for &s in &p.allowed_starts {
            let e = s + p.compute_slices;
            if e > entry.total_compute_slices {
                continue;
            }
            // identical profiles take increasing starts
            if used.last().is_some_and(|&(ps, _, pi)| pi == items[k] && ps >= s) {
                continue;
            }
            if used.iter().any(|&(a, b, _)| s < b && a < e) {
                continue;
            }
            used.push((s, e, items[k]));
            if place(entry, items, k + 1, used) {
                return true;
            }
            used.pop();
        }
        false
    }
    place(entry, &items, 0, &mut Vec::new())
}

fn multisets(n_profiles: usize, max_total: u32) -> Vec<Vec<u32>> {
    fn rec(i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for c in 0..=left {
            cur[i] = c;
            rec(i + 1, left - c, cur, out);
        }
        cur[i] = 0;
    }
    let mut out = Vec::new();
    rec(0, max_total, &mut vec![0; n_profiles], &mut out);
    out
}

fn names(entry: &DeviceCatalogEntry, counts: &[u32]) -> Vec<String> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(entry.profiles[i].name.clone(), c as usize))
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let a100 = device("A100-80GB");
    let four_three = a100.validate_config(&["4g.40gb", "3g.40gb"]).map_err(|e| e.to_string())?;
    check(!four_three.feasible, "{4g.40gb, 3g.40gb} reported feasible on A100")?;
    let seven = a100.validate_config(&["1g.10gb"; 7]).map_err(|e| e.to_string())?;
    check(seven.feasible, "7 x 1g.10gb reported infeasible on A100")?;

    let mut checked = 0;
    for model in ["A100-80GB", "A30"] {
        let entry = device(model);
        let mut expected = BTreeSet::new();
        for counts in multisets(entry.profiles.len(), 7) {
            let req = names(&entry, &counts);
            let oracle = brute_force_feasible(&entry, &counts);
            let lib = entry.validate_config(&req).map_err(|e| e.to_string())?.feasible;
            check(oracle == lib, format!("{model} {req:?}: brute force {oracle}, library {lib}"))?;
            if oracle {
                expected.insert(req);
            }
            checked += 1;
        }
        let enumerated: BTreeSet<Vec<String>> = entry.enumerate_valid_configs().into_iter().collect();
        check(
            enumerated == expected,
            format!("{model}: enumeration has {} configs, brute force {}", enumerated.len(), expected.len()),
        )?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("{checked} multisets agree, {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------
// 2. state-machine soundness

fn overlap_free(d: &DeviceState) -> Result<(), String> {
    let total = d.entry().total_compute_slices;
    for (i, a) in d.instances.iter().enumerate() {
        let (s, e) = (a.start_slice, a.start_slice + a.profile.compute_slices);
        if e > total || !a.profile.allowed_starts.contains(&s) {
            return Err(format!("gi {} at {s}..{e} is out of bounds", a.gi_id));
        }
        for b in &d.instances[i + 1..] {
            let (s2, e2) = (b.start_slice, b.start_slice + b.profile.compute_slices);
            if s < e2 && s2 < e {
                return Err(format!("gi {} and gi {} overlap", a.gi_id, b.gi_id));
            }
        }
    }
    Ok(())
}

fn criterion_2() -> Outcome {
    const SEQUENCES: usize = 100_000;
    const OPS: usize = 12;
    let cat = catalog();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut refused = 0u64;
    let mut run_seq = 0u64;
    for seq in 0..SEQUENCES {
        let mut c = Controller::from_catalog(&cat);
        let mut bound: BTreeMap<(u32, u32), RunId> = BTreeMap::new();
        for _ in 0..OPS {
            let dev = rng.random_range(0..cat.len() as u32);
            let state = c.device(dev).unwrap().clone();
            let gi_ids: Vec<u32> = state.instances.iter().map(|g| g.gi_id).collect();
            let pick_gi = |rng: &mut StdRng| {
                if gi_ids.is_empty() || rng.random_bool(0.1) {
                    rng.random_range(0..20)
                } else {
                    gi_ids[rng.random_range(0..gi_ids.len())]
                }
            };
            match rng.random_range(0..10) {
                0 => {
                    let _ = c.enable_mig(dev);
                }
                1 => {
                    let _ = c.disable_mig(dev);
                }
                2..=4 => {
                    let profiles = &cat[dev as usize].profiles;
                    let p = &profiles[rng.random_range(0..profiles.len())];
                    let start = if rng.random_bool(0.5) {
                        None
                    } else {
                        Some(rng.random_range(0..8))
                    };
                    let _ = c.create_gi(dev, &p.name, start);
                }
                5..=6 => {
                    let gi = pick_gi(&mut rng);
                    let result = c.destroy_gi(dev, gi);
                    if bound.contains_key(&(dev, gi)) {
                        check(result.is_err(), format!("sequence {seq}: destroyed bound gi {gi}"))?;
                        refused += 1;
                    }
                }
                7..=8 => {
                    let gi = pick_gi(&mut rng);
                    run_seq += 1;
                    let run = RunId::from_seq(run_seq);
                    let was_bound = bound.contains_key(&(dev, gi));
                    match c.bind_workload(dev, gi, &run) {
                        Ok(()) => {
                            check(!was_bound, format!("sequence {seq}: gi {gi} bound twice"))?;
                            bound.insert((dev, gi), run);
                        }
                        Err(_) => check(
                            was_bound || state.instance(gi).is_none(),
                            format!("sequence {seq}: bind to free gi {gi} refused"),
                        )?,
                    }
                }
                _ => {
                    let gi = pick_gi(&mut rng);
                    if c.unbind_workload(dev, gi).is_ok() {
                        bound.remove(&(dev, gi));
                    }
                }
            }
            for d in 0..cat.len() as u32 {
                let st = c.device(d).unwrap();
                overlap_free(st).map_err(|e| format!("sequence {seq}: {e}"))?;
                st.check_invariants().map_err(|e| format!("sequence {seq}: {e}"))?;
            }
            for ((d, gi), run) in &bound {
                check(
                    c.device(*d).unwrap().instance(*gi).is_some(),
                    format!("sequence {seq}: bound gi {gi} on device {d} vanished"),
                )?;
                check(
                    c.bound_workload(*d, *gi) == Some(run),
                    format!("sequence {seq}: binding of gi {gi} lost"),
                )?;
            }
        }
    }
    Ok(format!("{SEQUENCES} sequences x {OPS} ops, {refused} bound destroys refused"))
}

// ---------------------------------------------------------------------------
// 3. metric oracles

fn criterion_3() -> Outcome {
    let xs: Vec<f64> = (1..=100).map(f64::from).collect();
    let p99 = percentile(&xs, 0.99).map_err(|e| e.to_string())?;
    check(p99 == 99.0, format!("p99(1..100) = {p99}"))?;

    let constant: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64 * 100.0, 100.0)).collect();
    let e = energy_mj(&constant, None).map_err(|e| e.to_string())?;
    check(e == 1_000_000.0, format!("100 W for 10 s = {e} mJ"))?;

    // 0 -> 200 W over 10 s: 1000 J
    let ramp: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64 * 100.0, i as f64 * 2.0)).collect();
    let e = energy_mj(&ramp, None).map_err(|e| e.to_string())?;
    let rel = (e - 1_000_000.0).abs() / 1_000_000.0;
    check(rel <= 1e-12, format!("ramp energy {e} mJ, relative error {rel:e}"))?;

    let mut rng = StdRng::seed_from_u64(3);
    let noisy: Vec<(f64, f64)> = (0..500)
        .map(|i| (i as f64 * 100.0 + rng.random_range(0.0..50.0), rng.random_range(50.0..400.0)))
        .collect();
    for cut in [1, 17, 250, 498] {
        let (a, b, c) = (noisy[0].0, noisy[cut].0, noisy[499].0);
        let whole = energy_mj(&noisy, Some((a, c))).unwrap();
        let split = energy_mj(&noisy, Some((a, b))).unwrap() + energy_mj(&noisy, Some((b, c))).unwrap();
        check(whole == split, format!("windows split at sample {cut}: {split} != {whole}"))?;
    }
    Ok("p99=99, constant=1000000 mJ, ramp exact, additivity exact".into())
}

// ---------------------------------------------------------------------------
// 4. fig2 trends

fn engine_with(configs: &[(BenchMode, &str)]) -> Result<Engine, String> {
    let engine = Engine::in_memory(&catalog());
    for (mode, name) in configs {
        let text = std::fs::read_to_string(config(name)).map_err(|e| e.to_string())?;
        let config = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        Command::BenchSubmit { mode: Some(*mode), config }
            .execute(&engine)
            .map_err(|e| format!("{name}: {e}"))?;
    }
    engine.wait_idle();
    Ok(engine)
}

fn dataset(engine: &Engine, figure: &str) -> Result<FigureDataset, String> {
    match (Command::Report { figure: figure.into(), runs: vec![] }).execute(engine) {
        Ok(Output::Json(v)) => serde_json::from_value(v).map_err(|e| e.to_string()),
        Ok(other) => Err(format!("unexpected {other:?}")),
        Err(e) => Err(format!("{figure}: {e}")),
    }
}

fn num(c: &Cell) -> f64 {
    match c {
        Cell::Num(v) => *v,
        Cell::Int(v) => *v as f64,
        Cell::Text(t) => panic!("not numeric: {t}"),
    }
}

fn text(c: &Cell) -> &str {
    match c {
        Cell::Text(t) => t,
        other => panic!("not text: {other:?}"),
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let engine = engine_with(&[(BenchMode::Sweep, "fig2.json")])?;
    let ds = dataset(&engine, "fig2_training_batch_sweep")?;
    let elapsed = start.elapsed();
    check(ds.rows.len() == 20, format!("{} rows", ds.rows.len()))?;
    let col = |n: &str| ds.column(n).unwrap();
    let (cp, cb, ct, cf, ce) = (
        col("profile"),
        col("batch_size"),
        col("throughput_batch_per_s"),
        col("fb_mib"),
        col("energy_mj"),
    );
    let mut grid: BTreeMap<(u32, String), (f64, f64, f64)> = BTreeMap::new();
    for r in &ds.rows {
        let p = text(&r[cp]).to_string();
        let slices: u32 = p[..p.find('g').unwrap()].parse().unwrap();
        grid.insert((num(&r[cb]) as u32, format!("{slices}:{p}")), (num(&r[ct]), num(&r[cf]), num(&r[ce])));
    }
    let samples = |b: u32| grid.iter().find(|((bb, p), _)| *bb == b && p.starts_with("1:")).unwrap().1 .0 * b as f64;
    let gain = samples(64) / samples(32) - 1.0;
    check(gain < 0.05, format!("1g gain from batch 32 to 64 is {:.2}%", gain * 100.0))?;
    for b in [8, 16, 32, 64] {
        let at_b: Vec<(&String, &(f64, f64, f64))> =
            grid.iter().filter(|((bb, _), _)| *bb == b).map(|((_, p), v)| (p, v)).collect();
        check(at_b.len() == 5, format!("batch {b}: {} profiles", at_b.len()))?;
        let fb0 = at_b[0].1 .1;
        check(
            at_b.iter().all(|(_, v)| v.1 == fb0),
            format!("batch {b}: fb_mib differs across profiles"),
        )?;
        for w in at_b.windows(2) {
            check(
                w[1].1 .2 < w[0].1 .2,
                format!("batch {b}: energy {} ({}) !< {} ({})", w[1].1 .2, w[1].0, w[0].1 .2, w[0].0),
            )?;
        }
    }
    check(elapsed < Duration::from_secs(60), format!("sweep took {elapsed:?}"))?;
    Ok(format!("1g gain 32->64 {:.2}%, sweep {elapsed:.2?}", gain * 100.0))
}

// ---------------------------------------------------------------------------
// 5. sharing trends

fn criterion_5() -> Outcome {
    let engine = engine_with(&[(BenchMode::Compare, "fig4.json"), (BenchMode::Compare, "fig5.json")])?;
    let issued: BTreeMap<(u32, String), u64> = engine.with_store(|s| {
        let mut m = BTreeMap::new();
        for meta in s.runs() {
            *m.entry((meta.spec.batch_size, meta.arm.to_string())).or_default() += meta.issued;
        }
        m
    });
    for (k, n) in &issued {
        check(*n == 10_000, format!("batch {} arm {}: {n} requests", k.0, k.1))?;
    }
    check(issued.len() == 4, format!("{} (batch, arm) groups", issued.len()))?;

    let avg = dataset(&engine, "fig4_avg_latency_sharing")?;
    let tail = dataset(&engine, "fig5_tail_latency_sharing")?;
    let lookup = |ds: &FigureDataset, b: u32, arm: &str, col: &str| -> f64 {
        let (cb, ca, cc) = (ds.column("batch_size").unwrap(), ds.column("arm").unwrap(), ds.column(col).unwrap());
        let row = ds
            .rows
            .iter()
            .find(|r| num(&r[cb]) as u32 == b && text(&r[ca]) == arm)
            .unwrap();
        num(&row[cc])
    };
    let (mig1, mps1) = (lookup(&avg, 1, "mig", "avg_ms"), lookup(&avg, 1, "mps", "avg_ms"));
    let rel = (mps1 - mig1).abs() / mig1;
    check(rel < 0.02, format!("b=1 mean mig {mig1:.4} mps {mps1:.4}, relative gap {rel:.4}"))?;
    let (p99_mig, p99_mps) = (lookup(&tail, 8, "mig", "p99_ms"), lookup(&tail, 8, "mps", "p99_ms"));
    check(p99_mig < p99_mps, format!("b=8 p99 mig {p99_mig} >= mps {p99_mps}"))?;
    let (sd_mig, sd_mps) = (lookup(&tail, 8, "mig", "stddev_ms"), lookup(&tail, 8, "mps", "stddev_ms"));
    check(sd_mig < sd_mps, format!("b=8 stddev mig {sd_mig} >= mps {sd_mps}"))?;
    Ok(format!(
        "b=1 gap {:.3}%, b=8 p99 {p99_mig:.3} < {p99_mps:.3}, stddev {sd_mig:.3} < {sd_mps:.3}",
        rel * 100.0
    ))
}

// ---------------------------------------------------------------------------
// 6. export conformance

/// Parses the text exposition format; returns (name, labels, value) per
/// sample line.
fn parse_exposition(body: &str) -> Result<Vec<Sample>, String> {
    fn ident(s: &str, first_colon: bool) -> Option<(&str, &str)> {
        let end = s
            .char_indices()
            .find(|&(i, c)| {
                !(c.is_ascii_alphabetic() || c == '_' || (first_colon && c == ':') || (i > 0 && c.is_ascii_digit()))
            })
            .map(|(i, _)| i)
            .unwrap_or(s.len());
        (end > 0).then(|| s.split_at(end))
    }
    let mut out = Vec::new();
    let mut typed = BTreeSet::new();
    for (n, line) in body.lines().enumerate() {
        let err = |m: &str| format!("line {}: {m}: {line:?}", n + 1);
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.first() == Some(&"TYPE") {
                if parts.len() != 3 || !["gauge", "counter", "untyped", "summary", "histogram"].contains(&parts[2]) {
                    return Err(err("bad TYPE line"));
                }
                if !typed.insert(parts[1].to_string()) {
                    return Err(err("second TYPE line for family"));
                }
            }
            continue;
        }
        let (name, mut rest) = ident(line, true).ok_or_else(|| err("bad metric name"))?;
        if !typed.contains(name) {
            return Err(err("sample before its TYPE line"));
        }
        let mut labels = Vec::new();
        if let Some(r) = rest.strip_prefix('{') {
            rest = r;
            loop {
                if let Some(r) = rest.strip_prefix('}') {
                    rest = r;
                    break;
                }
                let (lname, r) = ident(rest, false).ok_or_else(|| err("bad label name"))?;
                let r = r.strip_prefix("=\"").ok_or_else(|| err("expected =\""))?;
                let mut value = String::new();
                let mut chars = r.char_indices();
                let close = loop {
                    match chars.next() {
                        None => return Err(err("unterminated label value")),
                        Some((i, '"')) => break i,
                        Some((_, '\\')) => match chars.next() {
                            Some((_, '\\')) => value.push('\\'),
                            Some((_, '"')) => value.push('"'),
                            Some((_, 'n')) => value.push('\n'),
                            _ => return Err(err("bad escape")),
                        },
                        Some((_, c)) => value.push(c),
                    }
                };
                labels.push((lname.to_string(), value));
                rest = &r[close + 1..];
                if let Some(r) = rest.strip_prefix(',') {
                    rest = r;
                }
            }
        }
        let fields: Vec<&str> = rest.strip_prefix(' ').ok_or_else(|| err("expected space"))?.split(' ').collect();
        if fields.is_empty() || fields.len() > 2 {
            return Err(err("expected value [timestamp]"));
        }
        let value = match fields[0] {
            "NaN" => f64::NAN,
            "+Inf" => f64::INFINITY,
            "-Inf" => f64::NEG_INFINITY,
            v => v.parse().map_err(|_| err("bad value"))?,
        };
        if let Some(ts) = fields.get(1) {
            ts.parse::<i64>().map_err(|_| err("bad timestamp"))?;
        }
        out.push((name.to_string(), labels, value));
    }
    Ok(out)
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_migperf"))
        .args(args)
        .env_remove("MIGPERF_CATALOG")
        .env_remove("MIGPERF_STATE_DIR")
        .output()
        .expect("run migperf")
}

fn criterion_6() -> Outcome {
    let engine = Arc::new(engine_with(&[(BenchMode::Sweep, "fig2.json"), (BenchMode::Compare, "fig5.json")])?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let (status, body) = rt.block_on(async {
        let resp = migperf::http::router(engine.clone())
            .oneshot(HttpRequest::get("/metrics").body(Body::empty()).unwrap())
            .await
            .unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    });
    check(status == 200, format!("/metrics returned {status}"))?;
    let samples = parse_exposition(&body)?;
    let mut seen = BTreeSet::new();
    for (name, labels, _) in &samples {
        check(seen.insert((name.clone(), labels.clone())), format!("duplicate {name} {labels:?}"))?;
    }
    let runs = engine.with_store(|s| s.runs().count());
    check(samples.len() == runs * 7, format!("{} samples for {runs} runs", samples.len()))?;

    let (csv_text, summaries) = engine.with_store(|s| {
        let ids: Vec<RunId> = s.runs().map(|m| m.run_id.clone()).collect();
        let sums: Vec<_> = ids.iter().map(|r| s.summarize(r).unwrap()).collect();
        (summaries_csv(s, &ids).unwrap(), sums)
    });
    let rows = read_summaries_csv(&csv_text).map_err(|e| e.to_string())?;
    check(rows.len() == summaries.len(), "summary row count")?;
    for (row, s) in rows.iter().zip(&summaries) {
        let back = row.summary();
        let bits = |m: &migperf_core::telemetry::MetricSummary| {
            [
                m.avg_latency_ms,
                m.p99_latency_ms,
                m.latency_stddev_ms,
                m.throughput_batch_per_s,
                m.throughput_samples_per_s,
                m.mean_gract_frac,
                m.peak_fb_mib,
                m.energy_mj,
            ]
            .map(f64::to_bits)
        };
        check(bits(&back) == bits(s) && back.requests == s.requests, format!("{} does not round-trip", s.run_id))?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).unwrap();
    }
    let rewritten = String::from_utf8(w.into_inner().unwrap()).unwrap();
    check(rewritten == csv_text, "re-serialized summary CSV differs")?;
    let crlf = read_summaries_csv(&csv_text.replace('\n', "\r\n")).map_err(|e| e.to_string())?;
    check(crlf == rows, "CRLF import differs")?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let state = dir.path().join("state");
    let state = state.to_str().unwrap();
    let fig2 = config("fig2.json");
    let sweep = run_cli(&["--state-dir", state, "bench", "sweep", "--config", fig2.to_str().unwrap()]);
    check(sweep.status.success(), String::from_utf8_lossy(&sweep.stderr).into_owned())?;
    let out = dir.path().join("fig2.csv");
    let report = run_cli(&[
        "--state-dir",
        state,
        "report",
        "--figure",
        "fig2_training_batch_sweep",
        "--out",
        out.to_str().unwrap(),
    ]);
    check(report.status.success(), String::from_utf8_lossy(&report.stderr).into_owned())?;
    let fig = std::fs::read_to_string(&out).map_err(|e| e.to_string())?;
    let mut lines = fig.lines();
    let header = lines.next().unwrap_or_default();
    check(
        header == "profile,batch_size,throughput_batch_per_s,gract_pct,fb_mib,energy_mj",
        format!("fig2 header {header:?}"),
    )?;
    let data = lines.count();
    check(data == 20, format!("fig2 dataset has {data} rows"))?;
    Ok(format!(
        "{} exposition samples, {} summary rows round-trip, fig2 20 rows",
        samples.len(),
        rows.len()
    ))
}

// ---------------------------------------------------------------------------
// 7. determinism

fn result_files(state: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(state.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let n = p.file_name().unwrap().to_str().unwrap();
            n.ends_with(".jsonl") || n.ends_with(".summary.json")
        })
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_string(), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fig2 = config("fig2.json");
    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        let state = dir.path().join(name);
        let s = state.to_str().unwrap();
        let run = run_cli(&["--state-dir", s, "bench", "sweep", "--config", fig2.to_str().unwrap()]);
        check(run.status.success(), String::from_utf8_lossy(&run.stderr).into_owned())?;
        let summaries = run_cli(&["--state-dir", s, "export", "csv"]);
        let raw = run_cli(&["--state-dir", s, "export", "csv", "--kind", "raw"]);
        outputs.push((result_files(&state), summaries.stdout, raw.stdout));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    check(a.0.len() == 40, format!("{} result files", a.0.len()))?;
    check(a.0 == b.0, "raw series or summary files differ between runs")?;
    check(a.1 == b.1, "summary CSV differs between runs")?;
    check(a.2 == b.2, "raw CSV differs between runs")?;
    let bytes: usize = a.0.values().map(Vec::len).sum();
    Ok(format!("{} files ({bytes} bytes) identical", a.0.len()))
}

fn main() {
    #[allow(clippy::type_complexity)]
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("partition-rule fidelity", criterion_1),
        ("state-machine soundness", criterion_2),
        ("metric oracles", criterion_3),
        ("fig2 trends", criterion_4),
        ("sharing trends", criterion_5),
        ("export conformance", criterion_6),
        ("determinism", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
