//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//! Criterion 5 runs the full curriculum and only executes with
//! `NSGEN_FULL_SCALE=1`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use ndarray::Array2;
use nsgen_core::checkpoint::{self, CheckpointMeta};
use nsgen_core::data::{build_input, gen_bc_only_dataset, gen_coarse_dataset, gen_prerun_dataset, DataSpec, StageId};
use nsgen_core::eval::{benchmark_latency, evaluate_stage, table1_case, TruthCache, TABLE1};
use nsgen_core::grid::{rmse, sample_field, BoundarySpec, FlowField, GridSpec, Shape};
use nsgen_core::io::{Dtype, Nsf1};
use nsgen_core::loss::{
    composite_loss, continuity_residual, momentum_residuals, LossOptions, LossWeights, PhysicsLoss,
};
use nsgen_core::nn::{expand_channels, expand_depth, ModelConfig, UNet};
use nsgen_core::solver::{max_divergence, solve_steady, SolverParams};
use nsgen_core::stencil::{central_diffs, laplacian_conv};
use nsgen_core::train::{
    gradient_check, run_curriculum, train_stage, verify_channel_expansion, verify_depth_expansion,
    CurriculumStage, GradCheckConfig, StageSpec,
};
use nsgen_service::{router, ModelInfo, Registry, RegistryConfig, RegistryItem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

const STENCIL_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-4;
const DIVERGENCE_TOL: f64 = 1e-5;
const COMPOSITE_TOL: f64 = 1e-3;
const GRID_AGREEMENT: f64 = 0.05;
const SMOKE_SAMPLES: usize = 256;
const SMOKE_EPOCHS: usize = 300;
const SMOKE_LOSS_RATIO: f64 = 0.2;
const SMOKE_RMSE_U: f64 = 0.10;
const SMOKE_BUDGET_S: f64 = 1800.0;
const FULL_SCALE_FACTOR: f64 = 3.0;
const FULL_SCALE_SAMPLES: usize = 2048;
const LATENCY_MEDIAN_MS: f64 = 50.0;
const LATENCY_RUNS: usize = 100;
const PRERUN_SAMPLE_S: f64 = 0.5;
const COARSE_SAMPLE_S: f64 = 2.5;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= STENCIL_TOL * (1.0 + b.abs())
}

fn random_field(n: usize, rng: &mut ChaCha8Rng) -> FlowField {
    let mut f = FlowField::zeros(GridSpec::square(n).unwrap());
    for a in [&mut f.u, &mut f.v, &mut f.p] {
        a.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    f
}

/// Boundary loss terms of the lid-driven cavity, written as plain loops.
fn naive_cavity_boundary(raw: &FlowField, u0: f64) -> (f64, f64) {
    let n = raw.grid.nx;
    let ring = |i: usize, j: usize| i == 0 || j == 0 || i == n - 1 || j == n - 1;
    let mut p = raw.p.clone();
    p[[1, 0]] = 0.0;
    let (mut lb, mut nb, mut ln, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for j in 0..n {
        for i in 0..n {
            if !ring(i, j) {
                continue;
            }
            let u_want = if j == n - 1 { u0 } else { 0.0 };
            lb += (raw.u[[j, i]] - u_want).powi(2) + raw.v[[j, i]].powi(2);
            nb += 1;
            if (i, j) == (0, 1) {
                lb += raw.p[[j, i]].powi(2);
                continue;
            }
            let (fi, fj) = if j == 0 {
                (i, 1)
            } else if j == n - 1 {
                (i, n - 2)
            } else if i == 0 {
                (1, j)
            } else {
                (n - 2, j)
            };
            ln += (p[[j, i]] - p[[fj, fi]]).powi(2);
            nn += 1;
        }
    }
    (ln / nn as f64, lb / nb as f64)
}

fn stencils() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut fields = 0;
    for n in [16, 32, 64] {
        for _ in 0..100 {
            let f = random_field(n, &mut rng);
            let h = f.grid.h;
            let lap = laplacian_conv(&f.p).unwrap();
            let d = central_diffs(&f).unwrap();
            let (rx, ry) = momentum_residuals(&f, 0.05).unwrap();
            let rc = continuity_residual(&f, 0.25).unwrap();
            let mut check = |a: f64, b: f64| {
                if !close(a, b) {
                    worst = worst.max((a - b).abs());
                }
            };
            for j in 1..n - 1 {
                for i in 1..n - 1 {
                    let (a, b) = (j - 1, i - 1);
                    let l = |x: &Array2<f64>| {
                        x[[j, i - 1]] + x[[j, i + 1]] + x[[j - 1, i]] + x[[j + 1, i]] - 4.0 * x[[j, i]]
                    };
                    let dx = |x: &Array2<f64>| (x[[j, i + 1]] - x[[j, i - 1]]) / 2.0;
                    let dy = |x: &Array2<f64>| (x[[j + 1, i]] - x[[j - 1, i]]) / 2.0;
                    let (u, v) = (f.u[[j, i]], f.v[[j, i]]);
                    check(lap[[a, b]], l(&f.p));
                    check(d.u_x[[a, b]], dx(&f.u));
                    check(d.v_y[[a, b]], dy(&f.v));
                    check(d.p_x[[a, b]], dx(&f.p));
                    check(d.p_y[[a, b]], dy(&f.p));
                    check(rx[[a, b]], 0.05 * l(&f.u) / (h * h) - (u * dx(&f.u) + v * dy(&f.u)) / h - dx(&f.p) / h);
                    check(ry[[a, b]], 0.05 * l(&f.v) / (h * h) - (u * dx(&f.v) + v * dy(&f.v)) / h - dy(&f.p) / h);
                    check(
                        rc[[a, b]],
                        0.25 * l(&f.p) + dx(&f.u).powi(2) + 2.0 * dy(&f.u) * dx(&f.v) + dy(&f.v).powi(2),
                    );
                }
            }
            let u0 = rng.random_range(0.0..0.5);
            let loss = PhysicsLoss::new(&BoundarySpec::cavity(u0), None, &f.grid, LossOptions::default()).unwrap();
            let got = loss.evaluate(&f, &LossWeights::default()).unwrap();
            let (ln, lb) = naive_cavity_boundary(&f, u0);
            check(got.loss_neumann, ln);
            check(got.loss_boundary, lb);
            fields += 1;
        }
    }
    Outcome::new(worst == 0.0, format!("{fields} fields, largest mismatch {worst:.2e} (tol {STENCIL_TOL:.0e} relative)"))
}

fn gradients() -> Outcome {
    let cfg = GradCheckConfig::default();
    match gradient_check(&cfg) {
        Ok(r) => Outcome::new(
            r.max_rel_error <= GRAD_TOL,
            format!("{} entries, max relative error {:.2e} (tol {GRAD_TOL:.0e})", r.checked, r.max_rel_error),
        ),
        Err(e) => Outcome::new(false, e.to_string()),
    }
}

fn oracle() -> Outcome {
    let bc = BoundarySpec::cavity(0.5);
    let solve = |n: usize| {
        let g = GridSpec::square(n).unwrap();
        solve_steady(&bc, None, &g, &SolverParams::for_problem(&bc, &g)).unwrap()
    };
    let (c, f) = (solve(32), solve(64));
    let div = max_divergence(&c.field, None);
    let comp = composite_loss(&c.field, &bc, None, &LossWeights::default(), LossOptions::default())
        .unwrap()
        .total;
    let on_coarse = sample_field(&f.field, &c.field.grid).unwrap();
    let se: f64 = c.field.u.iter().zip(on_coarse.u.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let ss: f64 = on_coarse.u.iter().map(|b| b * b).sum();
    let rel = (se / ss).sqrt();
    Outcome::new(
        c.converged && f.converged && div <= DIVERGENCE_TOL && comp <= COMPOSITE_TOL && rel <= GRID_AGREEMENT,
        format!(
            "converged {}/{}, divergence {div:.2e}, composite residual {comp:.2e}, 32 vs 64 u difference {:.2}%",
            c.converged,
            f.converged,
            100.0 * rel
        ),
    )
}

fn smoke(dir: &Path) -> Outcome {
    let t = Instant::now();
    let (manifest, inputs) = gen_prerun_dataset(SMOKE_SAMPLES, 7, None).unwrap();
    let mut spec = StageSpec::for_stage(StageId::A0);
    spec.epochs = SMOKE_EPOCHS;
    spec.out_dir = Some(dir.to_path_buf());
    spec.checkpoint_every = SMOKE_EPOCHS;
    let outcome = match train_stage(&spec, &manifest, &inputs) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let totals = outcome.report.totals();
    let ratio = totals[totals.len() - 1] / totals[0];
    let case = table1_case(StageId::A0).unwrap();
    let x = build_input(&DataSpec::for_stage(StageId::A0), &case.bc, &case.shapes).unwrap();
    let pred = outcome.model.predict(&x).unwrap();
    let g = GridSpec::square(32).unwrap();
    let truth = solve_steady(&case.bc, None, &g, &SolverParams::for_problem(&case.bc, &g)).unwrap();
    let r = rmse(&pred, &truth.field, None).unwrap();
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        ratio <= SMOKE_LOSS_RATIO && r.u <= SMOKE_RMSE_U && secs <= SMOKE_BUDGET_S,
        format!(
            "loss {:.3e} -> {:.3e} (ratio {ratio:.4}, max {SMOKE_LOSS_RATIO}), RMSE u {:.4} v {:.4} p {:.4} (u max {SMOKE_RMSE_U}), {secs:.0}s",
            totals[0],
            totals[totals.len() - 1],
            r.u,
            r.v,
            r.p
        ),
    )
}

fn full_scale(root: &Path) -> Outcome {
    let order = [StageId::A0, StageId::A, StageId::B0, StageId::B1, StageId::B2, StageId::B3];
    let data: Vec<_> = order
        .iter()
        .enumerate()
        .map(|(k, &stage)| {
            let seed = 100 + k as u64;
            match stage {
                StageId::A | StageId::B3 => gen_bc_only_dataset(stage, FULL_SCALE_SAMPLES, seed, None),
                _ => nsgen_core::data::generate(&DataSpec::for_stage(stage), FULL_SCALE_SAMPLES, seed, None),
            }
            .unwrap()
        })
        .collect();
    let stages: Vec<CurriculumStage> = order
        .iter()
        .zip(&data)
        .map(|(&stage, (dataset, inputs))| {
            let mut spec = StageSpec::for_stage(stage);
            spec.out_dir = Some(root.join(stage.to_string()));
            CurriculumStage { spec, dataset, inputs }
        })
        .collect();
    let outcomes = match run_curriculum(&stages) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for (stage, reference) in TABLE1 {
        let o = outcomes.iter().find(|o| o.report.stage == stage).unwrap();
        let meta = CheckpointMeta {
            stage: Some(stage),
            recipe: Some(stage.recipe()),
            ranges: Some(stage.ranges()),
            ..Default::default()
        };
        let case = table1_case(stage).unwrap();
        let m = match evaluate_stage(&o.model, &meta, &[case], &mut TruthCache::new()) {
            Ok(r) => match r.mean {
                Some(m) => m,
                None => return Outcome::new(false, format!("{stage}: oracle did not converge")),
            },
            Err(e) => return Outcome::new(false, format!("{stage}: {e}")),
        };
        pass &= m.u <= FULL_SCALE_FACTOR * reference[0]
            && m.v <= FULL_SCALE_FACTOR * reference[1]
            && m.p <= FULL_SCALE_FACTOR * reference[2];
        parts.push(format!("{stage} u {:.4} v {:.4} p {:.4}", m.u, m.v, m.p));
    }
    Outcome::new(pass, parts.join("; "))
}

fn surgeries() -> Outcome {
    let src = UNet::<f32>::new(ModelConfig::new(32, 3).with_seed(21)).unwrap();
    let wide = expand_channels(&src, 4).unwrap();
    let channels = verify_channel_expansion(&src, &wide);
    let src4 = UNet::<f32>::new(ModelConfig::new(32, 4).with_seed(22)).unwrap();
    let (deep, map) = expand_depth(&src4, 64, None).unwrap();
    let depth = verify_depth_expansion(&src4, &deep, &map);
    let copied = map.encoder.iter().chain(&map.decoder).filter(|o| **o != nsgen_core::nn::BlockOrigin::Fresh).count();
    Outcome::new(
        channels.is_ok() && depth.is_ok() && copied > 0,
        format!(
            "channel expansion {}, depth expansion {} ({copied} blocks copied)",
            channels.map_or_else(|e| e.to_string(), |_| "bit-exact".into()),
            depth.map_or_else(|e| e.to_string(), |_| "bit-exact".into())
        ),
    )
}

fn latency() -> Outcome {
    let model = UNet::<f32>::new(ModelConfig::new(64, 4)).unwrap();
    match benchmark_latency(&model, LATENCY_RUNS) {
        Ok(s) => Outcome::new(
            s.median_ms <= LATENCY_MEDIAN_MS,
            format!(
                "64x64 median {:.2} ms, p95 {:.2} ms over {} runs on {} thread(s) (max {LATENCY_MEDIAN_MS} ms)",
                s.median_ms, s.p95_ms, s.runs, s.threads
            ),
        ),
        Err(e) => Outcome::new(false, e.to_string()),
    }
}

fn slowest<F: FnMut()>(mut f: F) -> f64 {
    (0..3)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(0.0, f64::max)
}

fn warmup_cost() -> Outcome {
    let prerun_spec = DataSpec::for_stage(StageId::A0);
    let cavity = BoundarySpec::cavity(0.5);
    let prerun = slowest(|| {
        build_input(&prerun_spec, &cavity, &[]).unwrap();
    });
    let coarse_spec = DataSpec::for_stage(StageId::B2);
    let inlet = BoundarySpec::internal(0.05, 0.5);
    let g = GridSpec::square(64).unwrap();
    let square = [Shape::centered_square(&g, 8)];
    let coarse = slowest(|| {
        build_input(&coarse_spec, &inlet, &square).unwrap();
    });
    Outcome::new(
        prerun <= PRERUN_SAMPLE_S && coarse <= COARSE_SAMPLE_S,
        format!(
            "pre-run sample {prerun:.3}s (max {PRERUN_SAMPLE_S}s), coarse 64x64 sample {coarse:.3}s (max {COARSE_SAMPLE_S}s)"
        ),
    )
}

fn same_files(a: &Path, b: &Path) -> bool {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    !names.is_empty() && names.iter().all(|n| fs::read(a.join(n)).ok() == fs::read(b.join(n)).ok())
}

fn serialization(root: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let f = random_field(32, &mut rng);
    let nsf64 = Nsf1::decode(&Nsf1::from_field(&f, Dtype::F64).encode().unwrap()).unwrap();
    let nsf_ok = nsf64.into_field(f.grid).unwrap() == f;
    let mut f32_field = f.clone();
    for a in [&mut f32_field.u, &mut f32_field.v, &mut f32_field.p] {
        a.mapv_inplace(|x| x as f32 as f64);
    }
    let nsf32 = Nsf1::decode(&Nsf1::from_field(&f32_field, Dtype::F32).encode().unwrap()).unwrap();
    let nsf_ok = nsf_ok && nsf32.into_field(f.grid).unwrap() == f32_field;

    let model = UNet::<f32>::new(ModelConfig::new(32, 4).with_base_width(8).with_seed(5)).unwrap();
    let meta = CheckpointMeta {
        stage: Some(StageId::B1),
        recipe: Some(StageId::B1.recipe()),
        ranges: Some(StageId::B1.ranges()),
        ..Default::default()
    };
    let ck = root.join("ck");
    checkpoint::save(&ck, &model, &meta).unwrap();
    let (back, back_meta) = checkpoint::load(&ck).unwrap();
    let ck_ok = back_meta == meta
        && back.params().len() == model.params().len()
        && back.params().iter().zip(model.params()).all(|(a, b)| {
            a.name == b.name
                && a.shape == b.shape
                && a.data.iter().map(|x| x.to_bits()).eq(b.data.iter().map(|x| x.to_bits()))
        });

    let (d1, d2) = (root.join("d1"), root.join("d2"));
    fs::create_dir_all(&d1).unwrap();
    fs::create_dir_all(&d2).unwrap();
    gen_coarse_dataset(8, 32, 17, Some(&d1)).unwrap();
    gen_coarse_dataset(8, 32, 17, Some(&d2)).unwrap();
    let data_ok = same_files(&d1, &d2);
    Outcome::new(
        nsf_ok && ck_ok && data_ok,
        format!("NSF1 round trip {nsf_ok}, checkpoint round trip {ck_ok}, dataset regeneration identical {data_ok}"),
    )
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn service(root: &Path, trained: &Path) -> Outcome {
    let internal = root.join("b0");
    let model = UNet::<f32>::new(ModelConfig::new(32, 3).with_base_width(8).with_seed(4)).unwrap();
    let meta = CheckpointMeta {
        stage: Some(StageId::B0),
        recipe: Some(StageId::B0.recipe()),
        ranges: Some(StageId::B0.ranges()),
        ..Default::default()
    };
    checkpoint::save(&internal, &model, &meta).unwrap();
    let config = RegistryConfig {
        models: vec![
            RegistryItem { id: "A0".into(), checkpoint: trained.to_path_buf() },
            RegistryItem { id: "B0".into(), checkpoint: internal.clone() },
        ],
    };
    let app = match Registry::from_config(&config, root) {
        Ok(r) => router(r),
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap().block_on(async {
        let mut notes = Vec::new();
        let (s, body) = call(&app, "POST", "/solve", Some(json!({"model_id": "B0", "inlet": {"u0": 0.9, "v0": 0.1}}))).await;
        let inlet_ok = s == StatusCode::BAD_REQUEST
            && body["violation"]["parameter"] == "inlet.u0"
            && body["error"].as_str().is_some_and(|e| e.contains("0.5"));
        notes.push(format!("inlet u0 0.9 -> {s} ({})", body["error"].as_str().unwrap_or("")));
        let (s, body) = call(&app, "POST", "/solve", Some(json!({"model_id": "A0", "lid": {"u0": 0.9}}))).await;
        let lid_ok = s == StatusCode::BAD_REQUEST && body["violation"]["parameter"] == "lid.u0";
        notes.push(format!("lid u0 0.9 -> {s}"));

        let req = json!({"model_id": "A0", "lid": {"u0": 0.5}});
        let (s1, a) = call(&app, "POST", "/solve", Some(req.clone())).await;
        let (s2, b) = call(&app, "POST", "/solve", Some(req)).await;
        let same = s1 == StatusCode::OK && s2 == StatusCode::OK && a["fields"] == b["fields"] && !a["fields"].is_null();
        notes.push(format!("repeated solve identical {same}"));

        let (s, body) = call(&app, "GET", "/models", None).await;
        let models: Vec<ModelInfo> = serde_json::from_value(body).unwrap_or_default();
        let ranges_ok = s == StatusCode::OK
            && models.len() == 2
            && models.iter().all(|m| {
                let (_, meta) = checkpoint::load(&m.checkpoint).unwrap();
                meta.ranges.as_ref() == Some(&m.ranges)
            });
        notes.push(format!("/models ranges match checkpoints {ranges_ok}"));
        Outcome::new(inlet_ok && lid_ok && same && ranges_ok, notes.join(", "))
    })
}

fn report(id: &str, name: &str, o: &Outcome, secs: f64) -> bool {
    println!(
        "{} criterion {id}: {name}: {} [{secs:.1}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    o.pass
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let trained: PathBuf = root.join("a0");
    let mut all = true;
    let mut run = |id: &str, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        all &= report(id, name, &o, t.elapsed().as_secs_f64());
    };
    run("1", "stencil oracle equivalence", &mut stencils);
    run("2", "gradient check", &mut gradients);
    run("3", "finite-difference oracle validity", &mut oracle);
    run("4", "warm-up training smoke test", &mut || smoke(&trained));
    if std::env::var("NSGEN_FULL_SCALE").as_deref() == Ok("1") {
        run("5", "full-scale curriculum accuracy", &mut || full_scale(&root.join("full")));
    } else {
        println!("SKIP criterion 5: full-scale curriculum accuracy: set NSGEN_FULL_SCALE=1 to run");
    }
    run("6", "transfer surgeries", &mut surgeries);
    run("7", "inference latency", &mut latency);
    run("8", "warm-up data cost", &mut warmup_cost);
    run("9", "serialization determinism", &mut || serialization(root));
    run("10", "service contract", &mut || service(root, &trained.join("final")));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
