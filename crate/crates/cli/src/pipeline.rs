//! End-to-end run: source, epochs, fits, interval fits, studies, manifest.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use mvdist_core::fitting::{average_epoch_params, fit_epoch, fit_interval, EpochAverage};
use mvdist_core::models::{synthesize_drifting, synthesize_panel};
use mvdist_core::studies::{
    epoch_length_study, epoch_vs_interval_overlay, interval_length_comparison, overnight_study, shrinkage_study,
    LengthComparison, OverlayReport,
};
use mvdist_core::{io, EmpiricalDensity, Error, Family, FitResult, ReturnPanel, Scale};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, Source};
use crate::error::{CliResult, Stage, StageError};
use crate::ops::{self, num};
use crate::tables::{self, IntervalFits};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub versions: BTreeMap<String, String>,
    pub config_sha256: String,
    pub seed: Option<u64>,
    /// SHA-256 of every artifact, keyed by path relative to the output root.
    pub files: BTreeMap<String, String>,
}

/// Files written by this run. Only these enter the manifest.
struct Artifacts {
    root: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn path(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.root.join(rel)
    }

    fn json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        let p = self.path(rel);
        ops::write_json(&p, value).stage("write")
    }

    fn density(&mut self, rel: &str, d: &EmpiricalDensity) -> CliResult<()> {
        let p = self.path(rel);
        ops::write_density(&p, d).stage("write")
    }

    fn csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let p = self.path(rel);
        ops::ensure_parent(&p).stage("write")?;
        let mut w = csv::Writer::from_path(&p).stage("write")?;
        w.write_record(header).stage("write")?;
        for r in rows {
            w.write_record(r).stage("write")?;
        }
        w.flush().stage("write")
    }
}

/// File-name-safe form of a density label such as `aggr,T=10`.
fn file_label(label: &str) -> String {
    label
        .chars()
        .filter_map(|c| match c {
            'a'..='z' | 'A'..='Z' | '0'..='9' | '-' => Some(c),
            ',' | ' ' | '.' => Some('_'),
            _ => None,
        })
        .collect()
}

pub struct Loaded {
    pub panel: ReturnPanel,
    /// One label per native epoch.
    pub labels: Vec<String>,
    pub ingest: Option<ops::IngestSummary>,
}

pub fn load_source(cfg: &RunConfig) -> mvdist_core::Result<Loaded> {
    match &cfg.source {
        Source::Synthetic(s) => {
            let seed = cfg
                .seed
                .ok_or_else(|| Error::Config("a synthetic source needs `seed`".into()))?;
            let spec = s.spec(seed)?;
            let (start, end) = s.correlation.endpoints(s.k)?;
            let panel = if start == end {
                synthesize_panel(&start, &spec)?
            } else {
                synthesize_drifting(&start, &end, &spec)?
            };
            Ok(Loaded {
                labels: ops::epoch_labels(panel.epochs.len()),
                panel,
                ingest: None,
            })
        }
        Source::Quotes(q) => {
            let (grid, summary) = ops::ingest_quotes(&q.files, &q.schema, q.date, &q.calendar, q.dt)?;
            let (panel, labels) = ops::returns_with_labels(&grid, q.include_overnight)?;
            Ok(Loaded {
                panel,
                labels,
                ingest: Some(summary),
            })
        }
        Source::Daily(d) => {
            let (grid, summary) = ops::ingest_daily(&d.file)?;
            let (panel, labels) = ops::returns_with_labels(&grid, false)?;
            Ok(Loaded {
                panel,
                labels,
                ingest: Some(summary),
            })
        }
    }
}

/// Epoch column ranges and their labels.
pub fn epoch_layout(cfg: &RunConfig, loaded: &Loaded) -> mvdist_core::Result<(Vec<Range<usize>>, Vec<String>)> {
    let t = loaded.panel.t();
    let (epochs, labels) = match cfg.epochs.length {
        Some(len) => {
            let e = ops::fixed_epochs(0..t, len);
            let n = e.len();
            (e, ops::epoch_labels(n))
        }
        None => (loaded.panel.epochs.clone(), loaded.labels.clone()),
    };
    if epochs.is_empty() {
        return Err(Error::Insufficient(format!("{t} columns hold no whole epoch")));
    }
    Ok((epochs, labels))
}

fn fit_epochs(
    cfg: &RunConfig,
    panel: &ReturnPanel,
    epochs: &[Range<usize>],
    labels: &[String],
) -> CliResult<Vec<(EmpiricalDensity, Vec<FitResult>)>> {
    epochs
        .par_iter()
        .zip(labels)
        .map(|(r, label)| {
            let stage = format!("epoch-fit [{label}]");
            let pool = ops::epoch_pool(panel, r.clone()).stage(&stage)?;
            let d = ops::density(&pool, &cfg.binning, label).stage(&stage)?;
            let fits = cfg
                .fit
                .scales
                .iter()
                .map(|&s| {
                    let mut f = fit_epoch(&d, s, &cfg.fit.bounds)?;
                    f.horizon = Some(panel.horizon);
                    Ok(f)
                })
                .collect::<mvdist_core::Result<Vec<_>>>()
                .stage(&stage)?;
            Ok((d, fits))
        })
        .collect()
}

struct IntervalJob {
    length: usize,
    number: usize,
    /// Index of the first epoch.
    first: usize,
}

pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> CliResult<Manifest> {
    cfg.validate().stage("config")?;
    fs::create_dir_all(out).stage("output")?;
    let mut art = Artifacts {
        root: out.to_path_buf(),
        files: Vec::new(),
    };
    let canonical = cfg.canonical();
    fs::write(art.path("config.toml"), &canonical).stage("write")?;

    let loaded = load_source(cfg).stage("source")?;
    let panel = &loaded.panel;
    io::write_panel(&art.path("panel"), panel).stage("write")?;
    art.files.pop();
    art.files.extend(["panel.bin".to_string(), "panel.json".to_string()]);
    if let Some(s) = &loaded.ingest {
        art.json("reports/ingest.json", s)?;
    }

    let (epochs, labels) = epoch_layout(cfg, &loaded).stage("epochs")?;
    let epoch_out = fit_epochs(cfg, panel, &epochs, &labels)?;
    let mut epoch_rows: Vec<(String, FitResult)> = Vec::new();
    for (e, (d, fits)) in epoch_out.iter().enumerate() {
        art.density(&format!("densities/epoch_{:04}.csv", e + 1), d)?;
        epoch_rows.extend(fits.iter().map(|f| (labels[e].clone(), f.clone())));
    }
    let averages: Vec<EpochAverage> = cfg
        .fit
        .scales
        .iter()
        .map(|&s| {
            let fits: Vec<FitResult> = epoch_out.iter().flat_map(|(_, f)| f.iter().filter(|f| f.scale == s).cloned()).collect();
            average_epoch_params(&fits)
        })
        .collect::<mvdist_core::Result<_>>()
        .stage("epoch-average")?;
    let l_for = |s: Scale| averages.iter().find(|a| a.scale == s).map(|a| a.l_mean);

    let lengths = if cfg.epochs.intervals.is_empty() {
        vec![epochs.len()]
    } else {
        cfg.epochs.intervals.clone()
    };
    let mut jobs = Vec::new();
    for &len in &lengths {
        let n = epochs.len() / len;
        if n == 0 {
            return Err(StageError::new(
                "intervals",
                Error::Insufficient(format!("{} epochs cannot hold a {len}-epoch interval", epochs.len())),
            ));
        }
        jobs.extend((0..n).map(|i| IntervalJob {
            length: len,
            number: i + 1,
            first: i * len,
        }));
    }
    let densities: Vec<EmpiricalDensity> = jobs
        .par_iter()
        .map(|j| {
            let stage = format!("interval [{} epochs, interval {}]", j.length, j.number);
            let pool = ops::interval_pool(panel, &epochs[j.first..j.first + j.length]).stage(&stage)?;
            ops::density(&pool, &cfg.binning, &format!("interval {}", j.number)).stage(&stage)
        })
        .collect::<CliResult<_>>()?;
    let fit_jobs: Vec<(usize, Scale, Family)> = (0..jobs.len())
        .flat_map(|j| {
            cfg.fit
                .scales
                .iter()
                .flat_map(move |&s| cfg.fit.families.iter().map(move |&f| (j, s, f)))
        })
        .collect();
    let fits: Vec<FitResult> = fit_jobs
        .par_iter()
        .map(|&(j, s, fam)| {
            let stage = format!("interval-fit [{} epochs, interval {}, {fam}, {s}]", jobs[j].length, jobs[j].number);
            let mut f = fit_interval(&densities[j], fam, l_for(s), s, &cfg.fit.bounds).stage(&stage)?;
            f.horizon = Some(panel.horizon);
            Ok(f)
        })
        .collect::<CliResult<_>>()?;
    let mut intervals: Vec<IntervalFits> = jobs
        .iter()
        .map(|j| IntervalFits {
            length: j.length,
            number: j.number,
            fits: Vec::new(),
        })
        .collect();
    for (&(j, _, _), f) in fit_jobs.iter().zip(fits) {
        intervals[j].fits.push(f);
    }
    for (j, d) in jobs.iter().zip(&densities) {
        art.density(&format!("densities/interval_{}_{:03}.csv", j.length, j.number), d)?;
    }

    let scales = &cfg.fit.scales;
    tables::epoch_fits(&art.path("tables/epoch_fits.csv"), &epoch_rows).stage("write")?;
    tables::epoch_averages(&art.path("tables/epoch_averages.csv"), &averages).stage("write")?;
    tables::interval_params(&art.path("tables/interval_params.csv"), &intervals, scales).stage("write")?;
    tables::interval_chi2(&art.path("tables/interval_chi2.csv"), &intervals, scales).stage("write")?;
    tables::interval_averages(&art.path("tables/interval_averages.csv"), &intervals, scales).stage("write")?;
    for &len in &lengths {
        for &s in scales {
            let p = art.path(&format!("tables/interval_sweep_{len}_{s}.csv"));
            tables::interval_sweep(&p, &intervals, len, s).stage("write")?;
        }
    }
    tables::all_fits(&art.path("tables/fits.csv"), &epoch_rows, &intervals).stage("write")?;
    let epoch_records: Vec<serde_json::Value> = epoch_rows
        .iter()
        .map(|(label, f)| serde_json::json!({ "slice": label, "fit": f }))
        .collect();
    art.json("fits/epoch_fits.json", &epoch_records)?;
    let interval_records: Vec<serde_json::Value> = intervals
        .iter()
        .flat_map(|iv| {
            iv.fits
                .iter()
                .map(move |f| serde_json::json!({ "slice": iv.label(), "length": iv.length, "fit": f }))
        })
        .collect();
    art.json("fits/interval_fits.json", &interval_records)?;

    if cfg.studies.overlay && cfg.fit.families.contains(&cfg.studies.overlay_family) {
        overlay_studies(cfg, &mut art, &jobs, &epoch_out, &intervals)?;
    }
    if lengths.len() >= 2 {
        length_comparisons(cfg, &mut art, &lengths, &intervals)?;
    }
    panel_studies(cfg, &mut art, panel, &epochs)?;

    let manifest = build_manifest(cfg, &art)?;
    ops::write_json(&out.join(MANIFEST), &manifest).stage("write")?;
    Ok(manifest)
}

fn overlay_studies(
    cfg: &RunConfig,
    art: &mut Artifacts,
    jobs: &[IntervalJob],
    epoch_out: &[(EmpiricalDensity, Vec<FitResult>)],
    intervals: &[IntervalFits],
) -> CliResult<()> {
    let fam = cfg.studies.overlay_family;
    let tasks: Vec<(usize, Scale)> = (0..jobs.len())
        .flat_map(|j| cfg.fit.scales.iter().map(move |&s| (j, s)))
        .collect();
    let reports: Vec<OverlayReport> = tasks
        .par_iter()
        .map(|&(j, s)| {
            let job = &jobs[j];
            let epoch_fits: Vec<FitResult> = epoch_out[job.first..job.first + job.length]
                .iter()
                .flat_map(|(_, f)| f.iter().filter(|f| f.scale == s).cloned())
                .collect();
            let interval = intervals[j]
                .get(fam, s)
                .ok_or_else(|| Error::Parameter(format!("no {fam} fit on the {s} scale")))
                .stage("study-overlay")?;
            epoch_vs_interval_overlay(&epoch_fits, interval, &cfg.studies.overlay_grid).stage("study-overlay")
        })
        .collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    for (&(j, s), rep) in tasks.iter().zip(&reports) {
        let job = &jobs[j];
        art.json(&format!("reports/overlay/{}_{:03}_{s}.json", job.length, job.number), rep)?;
        for p in &rep.points {
            rows.push(vec![
                job.length.to_string(),
                job.number.to_string(),
                s.to_string(),
                fam.to_string(),
                num(p.x),
                num(p.interval_density),
                num(p.epoch_exceeds),
                num(p.interval_exceeds),
            ]);
        }
    }
    art.csv(
        "reports/overlay.csv",
        &["length", "interval", "fit", "family", "x", "interval_density", "epoch_exceeds", "interval_exceeds"],
        &rows,
    )
}

fn length_comparisons(cfg: &RunConfig, art: &mut Artifacts, lengths: &[usize], intervals: &[IntervalFits]) -> CliResult<()> {
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut rows = Vec::new();
    let mut reports: Vec<(usize, usize, Family, Scale, LengthComparison)> = Vec::new();
    for w in sorted.windows(2) {
        for &s in &cfg.fit.scales {
            for &fam in &cfg.fit.families {
                let pick = |len: usize| -> Vec<FitResult> {
                    intervals
                        .iter()
                        .filter(|i| i.length == len)
                        .filter_map(|i| i.get(fam, s).cloned())
                        .collect()
                };
                let cmp = interval_length_comparison(&pick(w[0]), &pick(w[1])).stage("study-length")?;
                rows.push(vec![
                    fam.to_string(),
                    s.to_string(),
                    w[0].to_string(),
                    w[1].to_string(),
                    num(cmp.mean_n_short),
                    num(cmp.mean_n_long),
                    ops::opt_num(cmp.mean_big_l_short),
                    ops::opt_num(cmp.mean_big_l_long),
                    num(cmp.tail_ratio),
                ]);
                reports.push((w[0], w[1], fam, s, cmp));
            }
        }
    }
    let json: Vec<serde_json::Value> = reports
        .iter()
        .map(|(a, b, fam, s, c)| serde_json::json!({ "short": a, "long": b, "family": fam, "fit": s, "comparison": c }))
        .collect();
    art.json("reports/length_comparison.json", &json)?;
    art.csv(
        "reports/length_comparison.csv",
        &["family", "fit", "short", "long", "mean_N_short", "mean_N_long", "mean_L_short", "mean_L_long", "tail_ratio"],
        &rows,
    )
}

fn panel_studies(cfg: &RunConfig, art: &mut Artifacts, panel: &ReturnPanel, epochs: &[Range<usize>]) -> CliResult<()> {
    let st = &cfg.studies;
    if !st.epoch_length.is_empty() {
        let rep = epoch_length_study(panel, &st.epoch_length, &cfg.binning, &cfg.pair_sampling()).stage("study-epoch-length")?;
        art.json("reports/epoch_length.json", &rep)?;
        let rows: Vec<Vec<String>> = rep
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.epoch_length.to_string(),
                    r.epochs.to_string(),
                    r.samples.to_string(),
                    num(r.excess_kurtosis),
                    num(r.ks_normal),
                    r.aggregation.clone(),
                    num(r.aggregated_excess_kurtosis),
                    num(r.aggregated_ks_normal),
                ]
            })
            .collect();
        art.csv(
            "reports/epoch_length.csv",
            &["T", "epochs", "samples", "excess_kurtosis", "ks_normal", "aggregation", "aggr_excess_kurtosis", "aggr_ks_normal"],
            &rows,
        )?;
        for d in &rep.densities {
            art.density(&format!("densities/epoch_length/{}.csv", file_label(&d.label)), d)?;
        }
    }
    if st.shrinkage {
        let len = epochs[0].len();
        if epochs.iter().any(|r| r.len() != len) {
            return Err(StageError::config("study-shrinkage", "the shrinkage study needs epochs of equal length"));
        }
        let rep = shrinkage_study(panel, len, st.shrinkage_intensity).stage("study-shrinkage")?;
        art.json("reports/shrinkage.json", &rep)?;
    }
    if st.overnight {
        let rep = overnight_study(panel, &cfg.binning).stage("study-overnight")?;
        art.json("reports/overnight.json", &rep)?;
        for d in &rep.densities {
            art.density(&format!("densities/overnight/{}.csv", file_label(&d.label)), d)?;
        }
    }
    Ok(())
}

fn build_manifest(cfg: &RunConfig, art: &Artifacts) -> CliResult<Manifest> {
    let mut files = BTreeMap::new();
    for rel in &art.files {
        let bytes = fs::read(art.root.join(rel)).stage("manifest")?;
        files.insert(rel.clone(), hex::encode(Sha256::digest(&bytes)));
    }
    let versions = BTreeMap::from([
        ("mvdist-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("mvdist-core".to_string(), mvdist_core::VERSION.to_string()),
    ]);
    Ok(Manifest {
        tool: "mvdist".into(),
        versions,
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        files,
    })
}
