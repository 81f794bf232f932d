use std::path::{Path, PathBuf};

use anyhow::Context;
use infopriv::data::{generate, ingest_csv, BinEdges};
use infopriv::experiment::{certify, sweep_point, CertifyOptions, CertifyReport, SweepRow};
use infopriv::oracle::JointModel;
use infopriv::risk::TrainingSet;
use infopriv::solver::{metric_by_name, predict_h_batch, train, PredictMode, SolveResult};
use infopriv::Error;
use serde::Serialize;

use crate::config::{DataSource, EvalMode, RunConfig};
use crate::report::{fmt_f64, fmt_opt, write_csv, write_json, Manifest};

/// Environment variable capping sweep worker threads.
pub const THREADS_ENV: &str = "INFOPRIV_THREADS";

pub struct RunContext {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub mode: EvalMode,
}

impl RunContext {
    fn seed(&self) -> u64 {
        self.cfg.solver.seed
    }

    fn predict_mode(&self) -> PredictMode {
        match self.mode {
            EvalMode::Expected => PredictMode::Expected,
            EvalMode::Sampled => PredictMode::Sampled(self.seed()),
        }
    }

    fn manifest(&self, command: &str) -> Manifest {
        let config = serde_json::to_value(&self.cfg).expect("config serializes");
        Manifest::new(command, self.seed(), self.cfg.digest(), config)
    }

    fn ensure_out(&self) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))
    }
}

struct Loaded {
    train: TrainingSet,
    test: Option<TrainingSet>,
    joint: Option<JointModel>,
    bins: Option<BinEdges>,
    meta: serde_json::Value,
}

fn load_data(cfg: &RunConfig) -> Result<Loaded, Error> {
    match &cfg.data {
        DataSource::Synthetic(spec) => {
            let d = generate(spec)?;
            Ok(Loaded {
                train: d.train,
                test: Some(d.test),
                joint: Some(d.joint),
                bins: None,
                meta: serde_json::to_value(&d.meta).expect("metadata serializes"),
            })
        }
        DataSource::Csv(src) => {
            let tr = ingest_csv(&src.train, &src.schema, None)?;
            let test = match &src.test {
                Some(p) => Some(ingest_csv(p, &src.schema, Some(&tr.bins))?),
                None => None,
            };
            let meta = serde_json::json!({
                "rows_read": tr.rows_read,
                "rows_dropped": tr.rows_dropped,
                "test_rows_read": test.as_ref().map(|t| t.rows_read),
                "test_rows_dropped": test.as_ref().map(|t| t.rows_dropped),
                "x_card": tr.bins.x_card,
            });
            Ok(Loaded {
                train: tr.data,
                test: test.map(|t| t.data),
                joint: None,
                bins: Some(tr.bins),
                meta,
            })
        }
    }
}

fn test_error(result: &SolveResult, ts: &TrainingSet, mode: PredictMode) -> f64 {
    let pred = predict_h_batch(result, &ts.xs, mode);
    pred.iter().zip(&ts.hs).filter(|(a, b)| a != b).count() as f64 / ts.len() as f64
}

pub fn cmd_train(ctx: &RunContext) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let data = load_data(cfg)?;
    let rcfg = cfg.risk.build(data.train.len())?;
    let metric = metric_by_name(&cfg.metric)?;
    let result = train(&data.train, metric.as_ref(), &rcfg, &cfg.solver)?;
    ctx.ensure_out()?;
    let out = &ctx.out;
    let digest = cfg.digest();
    let seed = ctx.seed().to_string();
    let mut manifest = ctx.manifest("train");

    write_json(&out.join("model.json"), &result)?;
    manifest.add_file(out, "model.json")?;
    let rows: Vec<Vec<String>> = result
        .trace
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                fmt_f64(r.objective),
                fmt_opt(r.slack),
                seed.clone(),
                digest.clone(),
            ]
        })
        .collect();
    write_csv(&out.join("trace.csv"), &["iteration", "objective", "slack", "seed", "config_digest"], &rows)?;
    manifest.add_file(out, "trace.csv")?;
    let rows: Vec<Vec<String>> = result
        .threshold_traces
        .iter()
        .enumerate()
        .flat_map(|(k, tr)| {
            let (seed, digest) = (&seed, &digest);
            tr.iter()
                .enumerate()
                .map(move |(i, v)| vec![k.to_string(), i.to_string(), fmt_f64(*v), seed.clone(), digest.clone()])
        })
        .collect();
    write_csv(
        &out.join("threshold_trace.csv"),
        &["constraint", "iteration", "dual_value", "seed", "config_digest"],
        &rows,
    )?;
    manifest.add_file(out, "threshold_trace.csv")?;
    if let Some(j) = &data.joint {
        write_json(&out.join("joint.json"), j)?;
        manifest.add_file(out, "joint.json")?;
    }
    if let Some(t) = &data.test {
        write_json(&out.join("samples.json"), t)?;
        manifest.add_file(out, "samples.json")?;
    }
    if let Some(b) = &data.bins {
        b.save(&out.join("bins.json"))?;
        manifest.add_file(out, "bins.json")?;
    }

    manifest.note("metric", &result.metric);
    manifest.note("theta_star", result.theta_star);
    manifest.note("theta_stars", &result.theta_stars);
    manifest.note("theta", result.theta);
    manifest.note("p_ratio", cfg.solver.p_ratio);
    manifest.note("converged", result.converged);
    manifest.note("iterations", result.trace.len().saturating_sub(1));
    manifest.note("n_train", data.train.len());
    manifest.note("sensors", data.train.sensors());
    manifest.note("x_card", data.train.x_card);
    manifest.note("z_card", result.q.z_card());
    manifest.note("lambda", rcfg.lambda);
    manifest.note("lambda_n", rcfg.lambda_n);
    manifest.note("data", &data.meta);
    if let Some(t) = &data.test {
        manifest.note("test_error_h", test_error(&result, t, ctx.predict_mode()));
    }
    manifest.write(out, "manifest.json")?;

    println!(
        "trained {} sensors, theta* = {}, theta = {}, {} iterations, converged = {}",
        data.train.sensors(),
        fmt_opt(result.theta_star),
        fmt_opt(result.theta),
        result.trace.len().saturating_sub(1),
        result.converged
    );
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn existing(explicit: &Option<PathBuf>, fallback: PathBuf) -> Result<Option<PathBuf>, Error> {
    match explicit {
        Some(p) if p.exists() => Ok(Some(p.clone())),
        Some(p) => Err(Error::Config(format!("missing file {}", p.display()))),
        None => Ok(fallback.exists().then_some(fallback)),
    }
}

#[derive(Serialize)]
struct CertifyOutput<'a> {
    seed: u64,
    config_digest: String,
    #[serde(flatten)]
    report: &'a CertifyReport,
}

pub const CERTIFY_COLUMNS: [&str; 17] = [
    "seed",
    "config_digest",
    "metric",
    "theta_star",
    "theta",
    "bayes_error_h",
    "bayes_error_g",
    "rule_error_h",
    "test_error_h",
    "min_risk_r",
    "c",
    "certified_epsilon",
    "posterior_epsilon",
    "epsilon_hat",
    "mary",
    "support_overflow",
    "model_digest",
];

pub fn cmd_certify(ctx: &RunContext) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let sec = &cfg.certify;
    let model_path = existing(&sec.model, ctx.out.join("model.json"))?
        .ok_or_else(|| Error::Config(format!("no model artifact in {}", ctx.out.display())))?;
    let joint_path = existing(&sec.joint, ctx.out.join("joint.json"))?;
    let samples_path = existing(&sec.samples, ctx.out.join("samples.json"))?;
    if joint_path.is_none() && samples_path.is_none() {
        return Err(Error::Config("certification needs a joint model or a sample file".into()).into());
    }
    let result: SolveResult = read_json(&model_path)?;
    result.q.check_stochastic(1e-9)?;
    let joint: Option<JointModel> = match &joint_path {
        Some(p) => {
            let j: JointModel = read_json(p)?;
            Some(JointModel::new(j.x_card, j.sensors, j.private, j.cells)?)
        }
        None => None,
    };
    let samples: Option<TrainingSet> = match &samples_path {
        Some(p) => {
            let t: TrainingSet = read_json(p)?;
            Some(TrainingSet::new(t.xs, t.hs, t.gs, t.private, t.x_card)?)
        }
        None => None,
    };
    let loss = infopriv::losses::loss_by_name(&cfg.risk.loss)?;
    let opts = CertifyOptions {
        deltas: cfg.deltas(),
        mode: ctx.predict_mode(),
        seed: ctx.seed(),
    };
    let report = certify(&result, joint.as_ref(), samples.as_ref(), loss.as_ref(), &opts)?;
    if report.support_overflow && samples.is_none() {
        let size = (result.q.z_card() as u128).saturating_pow(result.q.sensors() as u32);
        return Err(Error::SupportTooLarge {
            size,
            limit: infopriv::oracle::INDUCED_SUPPORT_LIMIT,
        }
        .into());
    }

    ctx.ensure_out()?;
    let out = &ctx.out;
    let digest = cfg.digest();
    let seed = ctx.seed();
    let mut manifest = ctx.manifest("certify");
    manifest.note("model_digest", crate::report::file_digest(&model_path)?);
    write_json(
        &out.join("certify.json"),
        &CertifyOutput {
            seed,
            config_digest: digest.clone(),
            report: &report,
        },
    )?;
    manifest.add_file(out, "certify.json")?;
    let row = vec![
        seed.to_string(),
        digest.clone(),
        report.metric.clone(),
        fmt_opt(result.theta_star),
        fmt_opt(report.theta),
        fmt_opt(report.bayes_error_h),
        fmt_opt(report.bayes_error_g),
        fmt_opt(report.rule_error_h),
        fmt_opt(report.test_error_h),
        fmt_opt(report.min_risk_r),
        fmt_opt(report.c),
        fmt_opt(report.certified_epsilon),
        fmt_opt(report.posterior_epsilon),
        fmt_opt(report.epsilon_hat),
        report.mary.to_string(),
        report.support_overflow.to_string(),
        crate::report::file_digest(&model_path)?,
    ];
    write_csv(&out.join("certify.csv"), &CERTIFY_COLUMNS, &[row])?;
    manifest.add_file(out, "certify.csv")?;
    let weak: Vec<Vec<String>> = report
        .weak
        .iter()
        .map(|w| {
            let delta = match w.kind {
                infopriv::oracle::CertificateKind::WeakThm1 { delta }
                | infopriv::oracle::CertificateKind::MaryWeakThm3 { delta } => delta,
                _ => f64::NAN,
            };
            vec![
                fmt_f64(delta),
                fmt_f64(w.theta),
                fmt_f64(w.c),
                fmt_f64(w.epsilon),
                seed.to_string(),
                digest.clone(),
            ]
        })
        .collect();
    write_csv(
        &out.join("certify_weak.csv"),
        &["delta", "theta", "c", "epsilon", "seed", "config_digest"],
        &weak,
    )?;
    manifest.add_file(out, "certify_weak.csv")?;
    let pairs: Vec<Vec<String>> = report
        .theta_stars
        .iter()
        .enumerate()
        .map(|(k, t)| vec![k.to_string(), fmt_f64(*t), seed.to_string(), digest.clone()])
        .collect();
    write_csv(
        &out.join("certify_thresholds.csv"),
        &["constraint", "theta_star", "seed", "config_digest"],
        &pairs,
    )?;
    manifest.add_file(out, "certify_thresholds.csv")?;
    manifest.write(out, "certify-manifest.json")?;

    println!(
        "bayes error H = {}, G = {}, certified epsilon = {}, epsilon_hat = {}",
        fmt_opt(report.bayes_error_h),
        fmt_opt(report.bayes_error_g),
        fmt_opt(report.certified_epsilon),
        fmt_opt(report.epsilon_hat)
    );
    Ok(())
}

fn thread_cap() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub const SWEEP_COLUMNS: [&str; 9] = [
    "axis",
    "value",
    "error_h",
    "error_g",
    "epsilon",
    "theta_star",
    "error",
    "seed",
    "config_digest",
];

pub fn cmd_sweep(ctx: &RunContext) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let axis = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep needs a [sweep] section".into()))?;
    let DataSource::Synthetic(base) = &cfg.data else {
        return Err(Error::Config("sweeps run on synthetic data only".into()).into());
    };
    let metric = metric_by_name(&cfg.metric)?;
    let rcfg = cfg.risk.build(base.n_train)?;
    let values = axis.values();
    let workers = thread_cap().min(values.len()).max(1);
    let mut rows: Vec<Option<SweepRow>> = vec![None; values.len()];
    std::thread::scope(|s| {
        let chunks: Vec<_> = rows.chunks_mut(values.len().div_ceil(workers)).collect();
        let mut start = 0;
        for chunk in chunks {
            let (lo, len) = (start, chunk.len());
            start += len;
            let (values, metric, rcfg) = (&values, metric.as_ref(), &rcfg);
            s.spawn(move || {
                for (slot, v) in chunk.iter_mut().zip(&values[lo..lo + len]) {
                    *slot = Some(sweep_point(base, axis, *v, metric, rcfg, &cfg.solver));
                }
            });
        }
    });
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.expect("every point ran")).collect();

    ctx.ensure_out()?;
    let out = &ctx.out;
    let digest = cfg.digest();
    let seed = ctx.seed().to_string();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                axis.name().to_string(),
                fmt_f64(r.value),
                fmt_opt(r.error_h),
                fmt_opt(r.error_g),
                fmt_opt(r.epsilon),
                fmt_opt(r.theta_star),
                r.error.clone().unwrap_or_default(),
                seed.clone(),
                digest.clone(),
            ]
        })
        .collect();
    write_csv(&out.join("sweep.csv"), &SWEEP_COLUMNS, &table)?;
    let mut manifest = ctx.manifest("sweep");
    manifest.add_file(out, "sweep.csv")?;
    manifest.note("points", rows.len());
    manifest.note("failed", rows.iter().filter(|r| r.error.is_some()).count());
    manifest.write(out, "sweep-manifest.json")?;
    for r in &rows {
        match &r.error {
            None => println!(
                "{} = {}: error_h = {}, error_g = {}, epsilon = {}",
                axis.name(),
                r.value,
                fmt_opt(r.error_h),
                fmt_opt(r.error_g),
                fmt_opt(r.epsilon)
            ),
            Some(e) => println!("{} = {}: failed: {e}", axis.name(), r.value),
        }
    }
    Ok(())
}

fn sample_rows(ts: &TrainingSet) -> Vec<Vec<String>> {
    (0..ts.len())
        .map(|i| {
            let mut r = vec![ts.hs[i].to_string(), ts.gs[i].to_string()];
            r.extend(ts.xs[i].iter().map(|x| (x + 1).to_string()));
            r
        })
        .collect()
}

pub fn cmd_gen_data(ctx: &RunContext) -> anyhow::Result<()> {
    let DataSource::Synthetic(spec) = &ctx.cfg.data else {
        return Err(Error::Config("gen-data needs a synthetic data source".into()).into());
    };
    let d = generate(spec)?;
    ctx.ensure_out()?;
    let out = &ctx.out;
    let mut header = vec!["h".to_string(), "g".to_string()];
    header.extend((1..=d.meta.sensors).map(|t| format!("x{t}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut manifest = ctx.manifest("gen-data");
    write_csv(&out.join("train.csv"), &header, &sample_rows(&d.train))?;
    write_csv(&out.join("test.csv"), &header, &sample_rows(&d.test))?;
    write_json(&out.join("joint.json"), &d.joint)?;
    write_json(&out.join("samples.json"), &d.test)?;
    write_json(&out.join("data_meta.json"), &d.meta)?;
    for f in ["train.csv", "test.csv", "joint.json", "samples.json", "data_meta.json"] {
        manifest.add_file(out, f)?;
    }
    manifest.note("n_train", d.train.len());
    manifest.note("n_test", d.test.len());
    manifest.note("redraws", d.meta.redraws);
    manifest.write(out, "gen-data-manifest.json")?;
    println!(
        "wrote {} training and {} test samples over {} sensors to {}",
        d.train.len(),
        d.test.len(),
        d.meta.sensors,
        out.display()
    );
    Ok(())
}
