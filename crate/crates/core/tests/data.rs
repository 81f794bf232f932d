use std::collections::BTreeMap;
use std::path::Path;

use approx::assert_abs_diff_eq;
use infopriv::data::*;
use infopriv::oracle::CellObservations;
use infopriv::risk::PrivateAlphabet;
use infopriv::Error;

/// Pooled train and test draws of a large spec.
fn pooled(spec: &SyntheticSpec) -> (Vec<(Vec<usize>, i8, i32)>, Dataset) {
    let d = generate(spec).unwrap();
    let mut all = vec![];
    for ts in [&d.train, &d.test] {
        for i in 0..ts.len() {
            all.push((ts.xs[i].clone(), ts.hs[i], ts.gs[i]));
        }
    }
    (all, d)
}

fn within_3_se(count: usize, n: usize, p: f64) -> bool {
    let se = (p * (1.0 - p) / n as f64).sqrt();
    (count as f64 / n as f64 - p).abs() <= 3.0 * se + 1e-12
}

#[test]
fn uniform_uncorrelated_cells() {
    for (_, p) in tilted_joint(0.0, 0.5, 0.5).unwrap() {
        assert_eq!(p, 0.25);
    }
    assert!(matches!(tilted_joint(0.23, 0.5, 0.95), Err(Error::InfeasibleCorrelation { .. })));
    assert!(matches!(
        generate(&SyntheticSpec { rho: 0.23, p_g: 0.95, ..Default::default() }),
        Err(Error::InfeasibleCorrelation { .. })
    ));
}

#[test]
fn binary_frequencies_match_the_model() {
    for (rho, p_h, p_g) in [(0.0, 0.5, 0.5), (0.6, 0.5, 0.5), (0.23, 0.55, 0.95)] {
        let spec = SyntheticSpec {
            rho,
            p_h,
            p_g,
            n_train: 50_000,
            n_test: 50_000,
            seed: 5,
            ..Default::default()
        };
        let (all, d) = pooled(&spec);
        let n = all.len();
        for cell in &d.joint.cells {
            let count = all.iter().filter(|(_, h, g)| *h == cell.h && *g == cell.g).count();
            assert!(within_3_se(count, n, cell.prob), "rho={rho} cell ({}, {})", cell.h, cell.g);
        }
        // first-sensor marginal
        for x in 0..8 {
            let p: f64 = d.joint.cells.iter().map(|c| {
                let CellObservations::Independent(per) = &c.obs else { panic!() };
                c.prob * per[0][x]
            }).sum();
            let count = all.iter().filter(|(xs, _, _)| xs[0] == x).count();
            assert!(within_3_se(count, n, p), "rho={rho} x={x}");
        }
    }
}

#[test]
fn binary_generator_rows() {
    let d = gen_binary(&SyntheticSpec::default()).unwrap();
    let cell = |h, g| d.joint.cells.iter().find(|c| c.h == h && c.g == g).unwrap();
    let CellObservations::Independent(per) = &cell(-1, -1).obs else { panic!() };
    for row in per {
        assert_eq!(row[..3], [1.0 / 3.0; 3]);
        assert!(row[3..].iter().all(|&p| p == 0.0));
    }
    let CellObservations::Independent(per) = &cell(1, 1).obs else { panic!() };
    assert_abs_diff_eq!(per[0][6], 1.0 / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(per[0][7], 2.0 / 3.0, epsilon = 1e-15);
    // the generated training points of that cell stay in {1, 2, 3}
    let ts = &d.train;
    assert!((0..ts.len()).filter(|&i| ts.hs[i] == -1 && ts.gs[i] == -1).all(|i| ts.xs[i].iter().all(|&x| x < 3)));
}

#[test]
fn joint_tables_sum_to_one() {
    for spec in [
        SyntheticSpec { rho: 0.4, ..Default::default() },
        SyntheticSpec { kind: SyntheticKind::MarySec4a3, m: 4, ..Default::default() },
    ] {
        let d = generate(&spec).unwrap();
        let total: f64 = d.joint.cells.iter().map(|c| c.prob).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        for c in &d.joint.cells {
            let CellObservations::Independent(per) = &c.obs else { panic!() };
            for row in per {
                assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn mary_generator_shape_and_strata() {
    for m in [3usize, 4, 5] {
        let d = gen_mary(&SyntheticSpec { kind: SyntheticKind::MarySec4a3, m, ..Default::default() }).unwrap();
        assert_eq!(d.meta.sensors, 4 + m);
        assert_eq!(d.train.sensors(), 4 + m);
        assert_eq!(d.train.private, PrivateAlphabet::Mary(m));
        let zero = (d.meta.offset - 1) as usize;
        for c in &d.joint.cells {
            assert_abs_diff_eq!(c.prob, 1.0 / (2 * m) as f64, epsilon = 1e-15);
            let CellObservations::Independent(per) = &c.obs else { panic!() };
            let active: Vec<usize> = (4..4 + m).filter(|&t| per[t][zero] != 1.0).collect();
            assert_eq!(active.len(), 1, "m={m} cell ({}, {})", c.h, c.g);
        }
    }
    assert!(gen_mary(&SyntheticSpec { kind: SyntheticKind::MarySec4a3, m: 2, ..Default::default() }).is_err());
}

#[test]
fn mary_frequencies_match_the_model() {
    let spec = SyntheticSpec {
        kind: SyntheticKind::MarySec4a3,
        m: 3,
        n_train: 50_000,
        n_test: 50_000,
        seed: 6,
        ..Default::default()
    };
    let (all, d) = pooled(&spec);
    let n = all.len();
    for c in &d.joint.cells {
        let count = all.iter().filter(|(_, h, g)| *h == c.h && *g == c.g).count();
        assert!(within_3_se(count, n, c.prob));
    }
    for t in [0, 5] {
        for x in 0..d.meta.x_card {
            let p: f64 = d.joint.cells.iter().map(|c| {
                let CellObservations::Independent(per) = &c.obs else { panic!() };
                c.prob * per[t][x]
            }).sum();
            let count = all.iter().filter(|(xs, _, _)| xs[t] == x).count();
            assert!(within_3_se(count, n, p), "sensor {t} symbol {x}");
        }
    }
}

#[test]
fn seeded_splits() {
    let s = SyntheticSpec { seed: 3, ..Default::default() };
    let (a, b) = (generate(&s).unwrap(), generate(&s).unwrap());
    assert_eq!(a, b);
    assert_eq!((a.train.len(), a.test.len()), (80, 1000));
    let c = generate(&SyntheticSpec { seed: 4, ..Default::default() }).unwrap();
    assert_ne!(a.train, c.train);
    for g in [-1, 1] {
        assert!(a.train.gs.contains(&g));
    }
}

#[test]
fn tiny_training_split_still_has_every_class() {
    let d = generate(&SyntheticSpec { n_train: 2, n_test: 10, seed: 1, ..Default::default() }).unwrap();
    let mut g = d.train.gs.clone();
    g.sort();
    assert_eq!(g, vec![-1, 1]);
    assert!(matches!(
        generate(&SyntheticSpec { n_train: 1, ..Default::default() }),
        Err(Error::InvalidTrainingSet(_))
    ));
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn schema(features: &[&str], categorical: &[&str], classes: &[(&str, i32)], levels: usize) -> CsvSchema {
    CsvSchema {
        features: features.iter().map(|s| s.to_string()).collect(),
        categorical: categorical.iter().map(|s| s.to_string()).collect(),
        h_column: "income".into(),
        h_positive: ">50K".into(),
        g_column: "group".into(),
        g_classes: classes.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
        levels,
        strategy: Discretization::EqualWidth,
    }
}

#[test]
fn equal_width_bins() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("v,flat,income,group\n");
    for i in 0..100 {
        body.push_str(&format!("{i},7,{},{}\n", if i % 2 == 0 { ">50K" } else { "<=50K" }, if i % 3 == 0 { "a" } else { "b" }));
    }
    let p = write(dir.path(), "d.csv", &body);
    let got = ingest_csv(&p, &schema(&["v", "flat"], &[], &[("a", -1), ("b", 1)], 10), None).unwrap();
    assert_eq!(got.data.xs[57][0] + 1, 6);
    assert_eq!(got.data.xs[0][0] + 1, 1);
    assert_eq!(got.data.xs[99][0] + 1, 10);
    assert!(got.data.xs.iter().all(|x| x[1] == 0));
    assert_eq!(got.data.hs[0], 1);
    assert_eq!(got.data.hs[1], -1);
    assert_eq!(got.data.x_card, 10);

    // persisted edges quantize a second split identically
    let bins_path = dir.path().join("bins.json");
    got.bins.save(&bins_path).unwrap();
    let reloaded = BinEdges::load(&bins_path).unwrap();
    assert_eq!(reloaded, got.bins);
    let test = write(dir.path(), "t.csv", "v,flat,income,group\n57,7,>50K,a\n1000,7,>50K,b\n");
    let t = ingest_csv(&test, &schema(&["v", "flat"], &[], &[("a", -1), ("b", 1)], 10), Some(&reloaded)).unwrap();
    assert_eq!(t.data.xs[0][0] + 1, 6);
    assert_eq!(t.data.xs[1][0] + 1, 10);
}

#[test]
fn equal_frequency_bins_balance_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("v,income,group\n");
    for i in 0..100 {
        // heavily skewed values
        body.push_str(&format!("{},>50K,{}\n", (i as f64).powi(3), if i % 2 == 0 { "a" } else { "b" }));
    }
    let p = write(dir.path(), "d.csv", &body);
    let mut s = schema(&["v"], &[], &[("a", -1), ("b", 1)], 4);
    s.strategy = Discretization::EqualFrequency;
    let got = ingest_csv(&p, &s, None).unwrap();
    let mut counts = [0usize; 4];
    for x in &got.data.xs {
        counts[x[0]] += 1;
    }
    assert!(counts.iter().all(|&c| c == 25), "{counts:?}");
}

#[test]
fn census_style_marital_groups() {
    let dir = tempfile::tempdir().unwrap();
    let body = "age,workclass,marital-status,income\n\
        39,State-gov,Never-married,<=50K\n\
        50,Self-emp,Married-civ-spouse,>50K\n\
        38,Private,Divorced,<=50K\n\
        53,Private,Married-civ-spouse,>50K\n\
        28,?,Married-civ-spouse,<=50K\n\
        37,Private,Widowed,<=50K\n\
        49,Private,Separated,>50K\n\
        31,Private,Never-married,>50K\n\
        42,Private,Married-AF-spouse,>50K\n";
    let p = write(dir.path(), "adult.csv", body);
    let classes = [
        ("Married-civ-spouse", 0),
        ("Married-AF-spouse", 0),
        ("Married-spouse-absent", 0),
        ("Divorced", 1),
        ("Separated", 1),
        ("Widowed", 1),
        ("Never-married", 2),
    ];
    let mut s = schema(&["age", "workclass"], &["workclass"], &classes, 10);
    s.g_column = "marital-status".into();
    let got = ingest_csv(&p, &s, None).unwrap();
    assert_eq!(got.data.private, PrivateAlphabet::Mary(3));
    assert_eq!(got.rows_read, 9);
    assert_eq!(got.rows_dropped, 1);
    let mut labels = got.data.gs.clone();
    labels.sort();
    labels.dedup();
    assert_eq!(labels, vec![0, 1, 2]);
    // categories in dictionary order
    let ColumnBins::Categorical { categories, .. } = &got.bins.columns[1] else { panic!() };
    assert_eq!(categories, &["Private", "Self-emp", "State-gov"]);
    assert_eq!(got.data.xs[0][1], 2);
}

#[test]
fn schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", "v,income,group\n1,>50K,a\n2,<=50K,b\n");
    let ok = &[("a", -1), ("b", 1)];
    assert!(matches!(ingest_csv(&p, &schema(&["w"], &[], ok, 4), None), Err(Error::Schema(_))));
    assert!(matches!(ingest_csv(&p, &schema(&[], &[], ok, 4), None), Err(Error::Schema(_))));
    assert!(matches!(ingest_csv(&p, &schema(&["v"], &["q"], ok, 4), None), Err(Error::Schema(_))));
    assert!(matches!(ingest_csv(&p, &schema(&["v"], &[], &[("a", 0), ("b", 5)], 4), None), Err(Error::Schema(_))));
    let text = write(dir.path(), "t.csv", "v,income,group\nhigh,>50K,a\nlow,<=50K,b\n");
    assert!(matches!(ingest_csv(&text, &schema(&["v"], &[], ok, 4), None), Err(Error::Schema(_))));
    let empty = write(dir.path(), "e.csv", "v,income,group\n?,>50K,a\nNA,<=50K,b\n");
    assert!(matches!(ingest_csv(&empty, &schema(&["v"], &[], ok, 4), None), Err(Error::EmptyAfterFiltering)));
}
