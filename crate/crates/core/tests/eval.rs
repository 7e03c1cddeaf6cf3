use nsgen_core::checkpoint::CheckpointMeta;
use nsgen_core::data::{Recipe, StageId};
use nsgen_core::eval::{
    b3_circles, benchmark_latency, evaluate_stage, export_profiles, mean_rmse, profile, profile_csv, quantile, table1_case,
    EvalCase, ProfileLine, TruthCache,
};
use nsgen_core::grid::{rasterize_obstacles, rmse, BoundarySpec, FlowField, GridSpec};
use nsgen_core::io::read_field;
use nsgen_core::nn::{ModelConfig, UNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn a0_model() -> (UNet<f32>, CheckpointMeta) {
    let model = UNet::new(ModelConfig::new(32, 3).with_base_width(4).with_seed(2)).unwrap();
    let meta = CheckpointMeta {
        stage: Some(StageId::A0),
        recipe: Some(Recipe::Prerun20),
        ranges: Some(StageId::A0.ranges()),
        ..Default::default()
    };
    (model, meta)
}

fn random_field(n: usize, seed: u64) -> FlowField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = FlowField::zeros(GridSpec::square(n).unwrap());
    for a in [&mut f.u, &mut f.v, &mut f.p] {
        a.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    }
    f
}

#[test]
fn identical_fields_have_zero_rmse() {
    let f = random_field(16, 1);
    let r = rmse(&f, &f, None).unwrap();
    assert_eq!((r.u, r.v, r.p), (0.0, 0.0, 0.0));
}

#[test]
fn report_mean_is_the_mean_of_cases() {
    let (model, meta) = a0_model();
    let cases: Vec<EvalCase> = [0.1, 0.3, 0.5]
        .iter()
        .map(|&u| EvalCase {
            name: format!("lid {u}"),
            bc: BoundarySpec::cavity(u),
            shapes: vec![],
        })
        .collect();
    let mut cache = TruthCache::new();
    let r = evaluate_stage(&model, &meta, &cases, &mut cache).unwrap();
    assert_eq!(cache.len(), 3);
    assert_eq!(r.cases_used, 3);
    let per: Vec<_> = r.cases.iter().map(|c| c.rmse.unwrap()).collect();
    let mean = r.mean.unwrap();
    assert_eq!(mean, mean_rmse(&per).unwrap());
    assert!((mean.u - per.iter().map(|x| x.u).sum::<f64>() / 3.0).abs() < 1e-15);
    assert!(r.cases.iter().all(|c| c.oracle_converged && c.input_s > 0.0));

    let again = evaluate_stage(&model, &meta, &cases[..1], &mut cache).unwrap();
    assert_eq!(cache.len(), 3);
    assert_eq!(again.cases[0].rmse, r.cases[0].rmse);

    let outside = [EvalCase {
        name: "fast".into(),
        bc: BoundarySpec::cavity(0.9),
        shapes: vec![],
    }];
    let err = evaluate_stage(&model, &meta, &outside, &mut cache).err().unwrap();
    assert!(err.to_string().contains("lid.u0"));
}

#[test]
fn fixed_cases_lie_in_their_stage_ranges() {
    for stage in [StageId::A0, StageId::A, StageId::B2, StageId::B3] {
        let case = table1_case(stage).unwrap();
        let grid = GridSpec::square(stage.grid_size()).unwrap();
        stage.ranges().check(&case.bc, &case.shapes, &grid).unwrap();
        rasterize_obstacles(&case.shapes, &grid).unwrap();
    }
    assert_eq!(b3_circles(), b3_circles());
    assert_eq!(b3_circles().len(), 3);
    assert!(table1_case(StageId::B0).is_none());
}

#[test]
fn symmetric_field_gives_symmetric_centerline() {
    let mut f = random_field(32, 3);
    let n = 32;
    for a in [&mut f.u, &mut f.v] {
        for j in 0..n / 2 {
            for i in 0..n {
                a[[n - 1 - j, i]] = a[[j, i]];
            }
        }
    }
    let prof = profile(&f, ProfileLine::Centerline).unwrap();
    assert_eq!(prof.len(), 32);
    for k in 0..n {
        assert!((prof[k].1 - prof[n - 1 - k].1).abs() <= 1e-12);
        assert!((prof[k].2 - prof[n - 1 - k].2).abs() <= 1e-12);
    }
}

#[test]
fn profiles_have_one_row_per_node() {
    let f = random_field(64, 4);
    let csv = profile_csv(&f, ProfileLine::Row { j: 40 }).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "coordinate,u,v");
    assert_eq!(lines.len(), 65);
    assert!(lines[1].starts_with("0,"));
    assert!(profile(&f, ProfileLine::Row { j: 64 }).is_err());
    let outlet = profile(&f, ProfileLine::Outlet).unwrap();
    assert_eq!(outlet[7].1, f.u[[7, 63]]);

    let dir = tempfile::tempdir().unwrap();
    let lines = [ProfileLine::Centerline, ProfileLine::Row { j: 40 }, ProfileLine::Outlet];
    let written = export_profiles(&f, &lines, dir.path()).unwrap();
    assert_eq!(written.len(), 4);
    let (back, _) = read_field(&written[3]).unwrap();
    assert_eq!(back.u, f.u);
    assert!(export_profiles(&f, &[ProfileLine::Row { j: 99 }], dir.path()).is_err());
}

#[test]
fn latency_needs_thirty_runs_and_orders_its_statistics() {
    let (model, _) = a0_model();
    assert!(benchmark_latency(&model, 29).is_err());
    let s = benchmark_latency(&model, 30).unwrap();
    assert_eq!((s.runs, s.warmup, s.input_size), (30, 5, 32));
    assert!(s.min_ms <= s.median_ms && s.median_ms <= s.p95_ms && s.p95_ms <= s.max_ms);
    assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
}
