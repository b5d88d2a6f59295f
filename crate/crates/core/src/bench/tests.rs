use super::*;
use crate::darf::OracleSurface;
use crate::fade::FadeConfig;
use proptest::prelude::*;
use std::path::Path;

#[test]
fn ast_examples() {
    assert_eq!(ast(0.5, 0.8, 600.0).unwrap(), 600.0);
    assert!((ast(1.2, 5.0, 1800.0).unwrap() - 10800.0).abs() < 1e-9);
    assert_eq!(ast(1.0, 1.0, 1.0).unwrap(), 1.0);
    assert_eq!(ast(2.0, -3.0, 10.0).unwrap(), 60.0);
    assert!(ast(1.0, 1.0, -1.0).is_err());
    assert!(ast(-1.0, 1.0, 1.0).is_err());
    assert_eq!(AstRecord::new(0.5, 0.8, 600.0).unwrap().ast, 600.0);
}

#[test]
fn compare_examples() {
    let r = [-8.0, -6.5, -4.0, -1.0];
    let same = compare(&r, &r).unwrap();
    assert_eq!((same.rmse, same.bias, same.n), (0.0, 0.0, 4));
    assert!((same.r2.unwrap() - 1.0).abs() < 1e-12);

    let shifted: Vec<f64> = r.iter().map(|x| x + 2.0).collect();
    let s = compare(&shifted, &r).unwrap();
    assert!((s.rmse - 2.0).abs() < 1e-12 && (s.bias - 2.0).abs() < 1e-12);
    assert!((s.r2.unwrap() - 1.0).abs() < 1e-12);

    // hand computed: d = (1, -1, 2, 0), x = (1, 2, 3, 4), y = (2, 1, 5, 4)
    let h = compare(&[2.0, 1.0, 5.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((h.bias - 0.5).abs() < 1e-9);
    assert!((h.rmse - 1.5f64.sqrt()).abs() < 1e-9);
    // sxy 5, sxx 5, syy 10
    assert!((h.r2.unwrap() - 0.5).abs() < 1e-9);

    let anti = compare(&[3.0, 2.0, 1.5, 0.0], &[0.0, 1.0, 2.0, 3.0]).unwrap();
    let (x, y) = ([3.0, 2.0, 1.5, 0.0], [0.0, 1.0, 2.0, 3.0]);
    let (mx, my) = (mean(&x), mean(&y));
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let rho = sxy / (sxx * syy).sqrt();
    assert!(rho < 0.0);
    assert!((anti.r2.unwrap() - rho * rho).abs() < 1e-12);

    assert!(compare(&[1.0, 2.0], &[3.0, 3.0]).unwrap().r2.is_none());
    assert!(matches!(compare(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    assert!(compare(&[1.0], &[1.0]).is_err());
}

#[test]
fn propagate_examples() {
    assert_eq!(propagate_sd(0.0, 0.0), 0.0);
    assert_eq!(propagate_sd(3.0, 4.0), 5.0);
    assert!((propagate_sd(1.2, 0.5) - 1.3).abs() < 1e-12);
}

#[test]
fn benefit_examples() {
    let unaided = ScenarioConfig {
        id: "u".into(),
        ..ScenarioConfig::default()
    };
    let aided = ScenarioConfig {
        id: "a".into(),
        device: "gain:20".into(),
        fitting: "half-gain".into(),
        ..ScenarioConfig::default()
    };
    assert_eq!(benefit((&unaided, -2.0), (&aided, -8.0)).unwrap(), 6.0);
    assert_eq!(benefit((&unaided, -4.0), (&aided, -4.0)).unwrap(), 0.0);
    let other = ScenarioConfig {
        masker: "babble".into(),
        ..aided.clone()
    };
    assert!(matches!(benefit((&unaided, -2.0), (&other, -8.0)), Err(Error::ScenarioMismatch(_))));
    // 8 unaided repetitions against one aided run
    let u = [-2.0, -2.5, -1.5, -2.0, -2.2, -1.8, -2.4, -1.6];
    let a = [-8.0, -8.4];
    let s = propagate_sd(sd(&u), sd(&a));
    assert!((s - sd(&u).hypot(sd(&a))).abs() < 1e-12 && s > sd(&u));
}

#[test]
fn scenario_round_trip() {
    let text = r#"
id = "fluc-n3"
masker = "fluctuating"
masker_level_db = 65.0
layout = "S0N90"
profile = "N3"
device = "gain:20"
fitting = "half-gain"
repetitions = 4

[darf]
n_train = 240
"#;
    let s = ScenarioConfig::parse(text).unwrap();
    assert_eq!(s.darf.n_train, 240);
    assert_eq!(s.darf.n_test, 20);
    let back = ScenarioConfig::parse(&s.to_toml()).unwrap();
    assert_eq!(back, s);
    let with_oracle = ScenarioConfig {
        oracle: Some(OracleSurface::worked_example()),
        reference_srt_db: Some(-7.5),
        ..s.clone()
    };
    assert_eq!(ScenarioConfig::parse(&with_oracle.to_toml()).unwrap(), with_oracle);

    assert!(ScenarioConfig::parse("masker = \"pink\"").is_err());
    assert!(ScenarioConfig::parse("layout = \"S45\"").is_err());
    assert!(ScenarioConfig::parse("fitting = \"nal\"").is_err());
    assert!(ScenarioConfig::parse("nonsense = = 1").is_err());

    // half-gain fitting replaces the device gains
    let p = s.audiogram(Path::new(".")).unwrap().unwrap();
    let d = s.device_descriptor(Some(&p)).unwrap();
    let crate::device::DeviceKind::Gain(g) = d.kind else { panic!() };
    assert_eq!(g.gains_db, half_gain(&p, &[750.0, 2500.0]));
    assert!(g.gains_db.windows(2).all(|w| w[0] <= w[1]));
    assert!(ScenarioConfig::default().audiogram(Path::new(".")).unwrap().is_none());
}

#[test]
fn results_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let rec = ResultRecord {
        scenario_id: "stat".into(),
        seed: 3,
        srt_db: -7.25,
        srt_pre_multicondition_db: -8.5,
        budget_s: 1650.0,
        iterations: 4,
        wall_s: 1650.0,
    };
    append_result(&path, &rec).unwrap();
    append_result(&path, &rec).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), RESULTS_HEADER);
    assert_eq!(text.lines().filter(|l| l.starts_with(RESULTS_HEADER)).count(), 1);
    assert_eq!(read_results(&text).unwrap(), vec![rec.clone(), rec]);
    assert!(ResultRecord::parse_row("a,1,2").is_err());
}

fn oracle_runner() -> Runner {
    let s = ScenarioConfig {
        oracle: Some(OracleSurface::worked_example()),
        oracle_initial_estimate_db: -5.0,
        ..ScenarioConfig::default()
    };
    Runner::new(&s, Path::new(".")).unwrap()
}

#[test]
fn oracle_runner_matches_worked_example() {
    let r = oracle_runner();
    let (map, srt) = r.fade(&FadeConfig::default(), 1).unwrap();
    assert!(map.evaluated_cells() >= 121);
    let dense = OracleSurface::worked_example().crossing(0.0, 0.5).unwrap();
    assert!((srt - dense).abs() < 1.5, "{srt} vs {dense}");
    let a = r.darf(&DarfConfig::default(), 4).unwrap();
    let b = r.darf(&DarfConfig::default(), 4).unwrap();
    assert_eq!(a.srt, b.srt);
    let m = manifest(&ScenarioConfig::default(), &r.hash(), 4, &a);
    assert!(m.contains("multicondition_s = 0") && m.contains("phase done") && m.contains("[darf]"));
}

#[test]
fn sweep_shape_and_report() {
    let r = oracle_runner();
    let t = sweep_runner(&r, &DarfConfig::default(), &[120, 240], &[20, 40], 2, Some(-9.0), 10).unwrap();
    assert_eq!(t.cells.len(), 4);
    assert!(t.cells.iter().all(|c| c.srts.len() == 2 && c.low_confidence));
    let c = &t.cells[1];
    assert_eq!((c.n_train, c.n_test), (120, 40));
    assert!((c.sd_srt - sd(&c.srts)).abs() < 1e-12);
    assert!((c.ast - ast(c.sd_srt, c.delta_srt, c.mean_duration_s).unwrap()).abs() < 1e-9);
    // more test sentences cost more audio
    assert!(t.cells[1].mean_duration_s > t.cells[0].mean_duration_s);
    assert!(c.mean_approx_s > 0.0 && c.mean_approx_s < c.mean_duration_s);

    let csv = t.to_csv();
    let back = SweepTable::from_csv(&csv).unwrap();
    assert_eq!(back.to_csv(), csv);
    assert_eq!(back.best().map(|b| (b.n_train, b.n_test)), t.best().map(|b| (b.n_train, b.n_test)));
    let svg = t.to_svg();
    assert_eq!(svg.matches("stroke=\"#888\"").count(), 12);
    let rep = report(&t).unwrap();
    let best = t.best().unwrap();
    assert!(rep.contains(&format!("at {} train / {} test", best.n_train, best.n_test)));

    let again = sweep_runner(&r, &DarfConfig::default(), &[120, 240], &[20, 40], 2, Some(-9.0), 10).unwrap();
    assert_eq!(again.to_csv(), csv);
    assert!(sweep_runner(&r, &DarfConfig::default(), &[120], &[20], 2, None, 10).is_err());
    assert!(sweep_runner(&r, &DarfConfig::default(), &[120], &[20], 1, Some(0.0), 10).is_err());
}

#[test]
fn report_picks_minimum() {
    let cell = |a, b, ast| SweepCell {
        n_train: a,
        n_test: b,
        reps: 8,
        srts: vec![],
        mean_srt: 0.0,
        sd_srt: 0.0,
        delta_srt: 0.0,
        mean_duration_s: 0.0,
        mean_approx_s: 0.0,
        ast,
        low_confidence: false,
    };
    let t = SweepTable {
        reference_srt: -9.0,
        cells: vec![cell(120, 20, 5.0), cell(240, 20, 2.0), cell(120, 40, 3.0)],
    };
    assert!(report(&t).unwrap().contains("at 240 train / 20 test"));
}

proptest! {
    #[test]
    fn ast_scale_monotone(s in 1.0f64..10.0, b in 1.0f64..10.0, t in 1.0f64..1e4, k in 1.01f64..3.0) {
        let base = ast(s, b, t).unwrap();
        prop_assert!(ast(s * k, b, t).unwrap() > base);
        prop_assert!(ast(s, -b * k, t).unwrap() > base);
        prop_assert!(ast(s, b, t * k).unwrap() > base);
    }

    #[test]
    fn rmse_decomposition(pairs in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 2..30)) {
        let (p, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let st = compare(&p, &r).unwrap();
        let d: Vec<f64> = p.iter().zip(&r).map(|(a, b)| a - b).collect();
        let var = d.iter().map(|x| (x - st.bias).powi(2)).sum::<f64>() / d.len() as f64;
        prop_assert!((st.rmse.powi(2) - (st.bias.powi(2) + var)).abs() < 1e-9);
        prop_assert!(st.rmse + 1e-12 >= st.bias.abs());
        if let Some(r2) = st.r2 {
            prop_assert!((0.0..=1.0).contains(&r2));
        }
    }
}
