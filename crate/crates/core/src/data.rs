//! Synthetic fixtures with exact ground truth, and CSV ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{CellObservations, JointCell, JointModel};
use crate::risk::{PrivateAlphabet, TrainingSet};

/// Attempts at drawing a training split that contains every class.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Four sensors over `{1, …, 8}`, binary `G`, correlated with `H`.
    BinaryTable3,
    /// `4 + m` sensors, `m`-ary `G` uncorrelated with `H`.
    MarySec4a3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_train: usize,
    pub n_test: usize,
    /// Correlation coefficient of `(H, G)`; binary kind only.
    pub rho: f64,
    /// `P(H = 1)`; binary kind only.
    pub p_h: f64,
    /// `P(G = 1)`; binary kind only.
    pub p_g: f64,
    /// Private alphabet size; m-ary kind only.
    pub m: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: SyntheticKind::BinaryTable3,
            n_train: 80,
            n_test: 1000,
            rho: 0.0,
            p_h: 0.5,
            p_g: 0.5,
            m: 3,
            seed: 0,
        }
    }
}

/// How observation values map to the dense 0-based alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub sensors: usize,
    pub x_card: usize,
    /// Raw value `v` is stored as `v + offset - 1`, i.e. 1-based symbol `v + offset`.
    pub offset: i64,
    /// Training splits discarded for missing a class.
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: TrainingSet,
    pub test: TrainingSet,
    pub joint: JointModel,
    pub meta: DataMeta,
}

/// `p(h, g) = p_H(h) p_G(g) + h g ρ √(p_H(1) p_H(-1) p_G(1) p_G(-1))`,
/// in the order `(-1,-1), (-1,1), (1,-1), (1,1)`.
pub fn tilted_joint(rho: f64, p_h: f64, p_g: f64) -> Result<[((i8, i32), f64); 4]> {
    for p in [p_h, p_g] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("prior {p} must lie in (0, 1)")));
        }
    }
    if !rho.is_finite() {
        return Err(Error::Config("correlation must be finite".into()));
    }
    let ph = |h: i8| if h == 1 { p_h } else { 1.0 - p_h };
    let pg = |g: i32| if g == 1 { p_g } else { 1.0 - p_g };
    let s = (p_h * (1.0 - p_h) * p_g * (1.0 - p_g)).sqrt();
    let cells = [(-1i8, -1i32), (-1, 1), (1, -1), (1, 1)];
    // largest |ρ| keeping the cells that shrink nonnegative
    let max = cells
        .iter()
        .filter(|(h, g)| (*h as f64) * (*g as f64) * rho < 0.0)
        .map(|&(h, g)| ph(h) * pg(g) / s)
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    if rho.abs() > max {
        return Err(Error::InfeasibleCorrelation { rho, max });
    }
    Ok(cells.map(|(h, g)| ((h, g), (ph(h) * pg(g) + (h as f64) * (g as f64) * rho * s).max(0.0))))
}

fn uniform_noise(center: usize, card: usize) -> Vec<f64> {
    let mut row = vec![0.0; card];
    for v in [center - 1, center, center + 1] {
        row[v.min(card - 1)] += 1.0 / 3.0;
    }
    row
}

/// Binary fixture. Observation `x = 2, 4, 6, 8` plus noise on `{-1, 0, 1}`
/// for `(h, g) = (-1,-1), (-1,1), (1,-1), (1,1)`; the value 9 is folded into 8.
pub fn gen_binary(spec: &SyntheticSpec) -> Result<Dataset> {
    const SENSORS: usize = 4;
    const X_CARD: usize = 8;
    let joint = tilted_joint(spec.rho, spec.p_h, spec.p_g)?;
    let cells = joint
        .iter()
        .map(|&((h, g), prob)| {
            let center = (5 + 2 * h as i32 + g) as usize - 1;
            JointCell {
                h,
                g,
                prob,
                obs: CellObservations::Independent(vec![uniform_noise(center, X_CARD); SENSORS]),
            }
        })
        .collect();
    let jm = JointModel::new(X_CARD, SENSORS, PrivateAlphabet::Binary, cells)?;
    let meta = DataMeta {
        sensors: SENSORS,
        x_card: X_CARD,
        offset: 0,
        redraws: 0,
    };
    draw_splits(spec, jm, meta)
}

/// m-ary fixture: `X^t = m(H+1) + 2(G+1) + N^t` for `t = 1..4`; sensor
/// `4 + j + 1` reads `H + N` when `G - (H+1)/2 ≡ j (mod m)` and 0 otherwise.
/// Raw values in `[-2, 4m+1]` are shifted by 3 to a dense 1-based alphabet.
pub fn gen_mary(spec: &SyntheticSpec) -> Result<Dataset> {
    let m = spec.m;
    if m < 3 {
        return Err(Error::Config(format!("m-ary fixture needs m ≥ 3, got {m}")));
    }
    let sensors = 4 + m;
    let x_card = 4 * m + 4;
    let offset: i64 = 3;
    let idx = |raw: i64| (raw + offset - 1) as usize;
    let prob = 1.0 / (2 * m) as f64;
    let mut cells = Vec::with_capacity(2 * m);
    for h in [-1i8, 1] {
        for g in 0..m as i32 {
            let mut per = Vec::with_capacity(sensors);
            let base = m as i64 * (h as i64 + 1) + 2 * (g as i64 + 1);
            for _ in 0..4 {
                per.push(uniform_noise(idx(base), x_card));
            }
            let stratum = (g as i64 - (h as i64 + 1) / 2).rem_euclid(m as i64);
            for j in 0..m as i64 {
                if j == stratum {
                    per.push(uniform_noise(idx(h as i64), x_card));
                } else {
                    let mut row = vec![0.0; x_card];
                    row[idx(0)] = 1.0;
                    per.push(row);
                }
            }
            cells.push(JointCell {
                h,
                g,
                prob,
                obs: CellObservations::Independent(per),
            });
        }
    }
    let jm = JointModel::new(x_card, sensors, PrivateAlphabet::Mary(m), cells)?;
    let meta = DataMeta {
        sensors,
        x_card,
        offset,
        redraws: 0,
    };
    draw_splits(spec, jm, meta)
}

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    match spec.kind {
        SyntheticKind::BinaryTable3 => gen_binary(spec),
        SyntheticKind::MarySec4a3 => gen_mary(spec),
    }
}

fn has_all_classes(ts: &TrainingSet) -> bool {
    ts.hs.contains(&-1) && ts.hs.contains(&1) && ts.private.labels().iter().all(|g| ts.gs.contains(g))
}

fn to_set(samples: &[(Vec<usize>, i8, i32)], jm: &JointModel) -> Result<TrainingSet> {
    TrainingSet::new(
        samples.iter().map(|s| s.0.clone()).collect(),
        samples.iter().map(|s| s.1).collect(),
        samples.iter().map(|s| s.2).collect(),
        jm.private,
        jm.x_card,
    )
}

fn draw_splits(spec: &SyntheticSpec, jm: JointModel, mut meta: DataMeta) -> Result<Dataset> {
    if spec.n_train == 0 || spec.n_test == 0 {
        return Err(Error::Config("train and test sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for attempt in 0..MAX_REDRAWS {
        let samples = jm.sample(spec.n_train + spec.n_test, &mut rng);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let pick = |ix: &[usize]| ix.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
        let train = to_set(&pick(&order[..spec.n_train]), &jm)?;
        if !has_all_classes(&train) {
            continue;
        }
        let test = to_set(&pick(&order[spec.n_train..]), &jm)?;
        meta.redraws = attempt;
        return Ok(Dataset {
            train,
            test,
            joint: jm,
            meta,
        });
    }
    Err(Error::InvalidTrainingSet(format!(
        "no training split with every class after {MAX_REDRAWS} draws"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    #[default]
    EqualWidth,
    EqualFrequency,
}

/// Column layout of an input CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Sensor columns, in sensor order.
    pub features: Vec<String>,
    /// Subset of `features` read as categories rather than numbers.
    #[serde(default)]
    pub categorical: Vec<String>,
    pub h_column: String,
    /// Value of `h_column` mapped to `H = 1`; every other value is `H = -1`.
    pub h_positive: String,
    pub g_column: String,
    /// Raw `g_column` value to label; labels are `{-1, 1}` or `{0, …, m-1}`.
    pub g_classes: BTreeMap<String, i32>,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub strategy: Discretization,
}

fn default_levels() -> usize {
    10
}

/// Quantization of one feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ColumnBins {
    /// Bin index is the number of edges not above the value.
    Numeric { name: String, edges: Vec<f64> },
    /// Symbol is the position in this sorted list.
    Categorical { name: String, categories: Vec<String> },
}

impl ColumnBins {
    fn symbol(&self, raw: &str) -> Option<usize> {
        match self {
            ColumnBins::Numeric { edges, .. } => {
                let v: f64 = raw.trim().parse().ok()?;
                Some(edges.partition_point(|&e| e <= v))
            }
            ColumnBins::Categorical { categories, .. } => categories.binary_search(&raw.to_string()).ok(),
        }
    }
}

/// Persisted quantization, reusable on another split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    pub levels: usize,
    pub strategy: Discretization,
    pub x_card: usize,
    pub columns: Vec<ColumnBins>,
}

impl BinEdges {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub data: TrainingSet,
    pub bins: BinEdges,
    pub rows_read: usize,
    /// Rows with a missing value, an unmapped private class or an unseen category.
    pub rows_dropped: usize,
}

fn is_missing(v: &str) -> bool {
    matches!(v.trim(), "" | "?" | "NA" | "NaN" | "nan" | "null")
}

fn alphabet_of(classes: &BTreeMap<String, i32>) -> Result<PrivateAlphabet> {
    let labels: BTreeSet<i32> = classes.values().cloned().collect();
    if labels == BTreeSet::from([-1, 1]) {
        return Ok(PrivateAlphabet::Binary);
    }
    let m = labels.len();
    if m >= 3 && labels == (0..m as i32).collect() {
        return Ok(PrivateAlphabet::Mary(m));
    }
    Err(Error::Schema(format!(
        "private labels must be {{-1, 1}} or {{0, …, m-1}} with m ≥ 3, got {labels:?}"
    )))
}

fn numeric_edges(values: &mut [f64], levels: usize, strategy: Discretization) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let (lo, hi) = (values[0], values[values.len() - 1]);
    if hi <= lo {
        return vec![];
    }
    let mut edges: Vec<f64> = match strategy {
        Discretization::EqualWidth => (1..levels)
            .map(|k| lo + (hi - lo) * k as f64 / levels as f64)
            .collect(),
        Discretization::EqualFrequency => (1..levels)
            .map(|k| values[k * values.len() / levels])
            .filter(|&e| e > lo)
            .collect(),
    };
    edges.dedup();
    edges
}

/// Reads `path`, drops incomplete rows, quantizes features and maps labels.
/// Bins are fitted on this file unless `bins` is given.
pub fn ingest_csv(path: &Path, schema: &CsvSchema, bins: Option<&BinEdges>) -> Result<Ingested> {
    if schema.features.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }
    if schema.levels == 0 {
        return Err(Error::Schema("levels must be positive".into()));
    }
    if let Some(c) = schema.categorical.iter().find(|c| !schema.features.contains(c)) {
        return Err(Error::Schema(format!("categorical column {c} is not a feature")));
    }
    let private = alphabet_of(&schema.g_classes)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name}")))
    };
    let feat_ix = schema.features.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;
    let (h_ix, g_ix) = (col(&schema.h_column)?, col(&schema.g_column)?);

    let mut rows: Vec<(Vec<String>, i8, i32)> = Vec::new();
    let mut rows_read = 0;
    let mut dropped = 0;
    for rec in reader.records() {
        let rec = rec?;
        rows_read += 1;
        let fields: Vec<&str> = feat_ix.iter().chain([&h_ix, &g_ix]).map(|&i| rec.get(i).unwrap_or("")).collect();
        if fields.iter().any(|v| is_missing(v)) {
            dropped += 1;
            continue;
        }
        let Some(&g) = schema.g_classes.get(fields[feat_ix.len() + 1]) else {
            dropped += 1;
            continue;
        };
        let h = if fields[feat_ix.len()] == schema.h_positive { 1 } else { -1 };
        rows.push((fields[..feat_ix.len()].iter().map(|s| s.to_string()).collect(), h, g));
    }
    if rows.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }

    let bins = match bins {
        Some(b) => {
            if b.columns.len() != schema.features.len() {
                return Err(Error::Schema("bin file does not match the feature list".into()));
            }
            b.clone()
        }
        None => {
            let mut columns = Vec::new();
            for (j, name) in schema.features.iter().enumerate() {
                if schema.categorical.contains(name) {
                    let categories: BTreeSet<String> = rows.iter().map(|r| r.0[j].clone()).collect();
                    columns.push(ColumnBins::Categorical {
                        name: name.clone(),
                        categories: categories.into_iter().collect(),
                    });
                } else {
                    let mut values = rows
                        .iter()
                        .map(|r| {
                            r.0[j]
                                .parse::<f64>()
                                .ok()
                                .filter(|v| v.is_finite())
                                .ok_or_else(|| Error::Schema(format!("non-numeric value {:?} in {name}", r.0[j])))
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    columns.push(ColumnBins::Numeric {
                        name: name.clone(),
                        edges: numeric_edges(&mut values, schema.levels, schema.strategy),
                    });
                }
            }
            let x_card = columns
                .iter()
                .map(|c| match c {
                    ColumnBins::Numeric { .. } => schema.levels,
                    ColumnBins::Categorical { categories, .. } => categories.len(),
                })
                .max()
                .unwrap_or(1)
                .max(schema.levels);
            BinEdges {
                levels: schema.levels,
                strategy: schema.strategy,
                x_card,
                columns,
            }
        }
    };

    let (mut xs, mut hs, mut gs) = (Vec::new(), Vec::new(), Vec::new());
    for (vals, h, g) in rows {
        let x: Option<Vec<usize>> = vals.iter().zip(&bins.columns).map(|(v, c)| c.symbol(v)).collect();
        match x {
            Some(x) if x.iter().all(|&s| s < bins.x_card) => {
                xs.push(x);
                hs.push(h);
                gs.push(g);
            }
            _ => dropped += 1,
        }
    }
    if xs.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }
    let data = TrainingSet::new(xs, hs, gs, private, bins.x_card)?;
    Ok(Ingested {
        data,
        bins,
        rows_read,
        rows_dropped: dropped,
    })
}
