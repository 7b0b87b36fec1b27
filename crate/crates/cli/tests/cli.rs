use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mvdist_cli::{main_with_args, run_pipeline, Manifest, RunConfig};

const SMALL: &str = r#"
seed = 99
[source]
kind = "synthetic"
k = 8
epochs = 6
epoch_len = 60
kernel = "algebraic"
l = 3.5
ensemble = "gaussian"
N = 12
[source.correlation]
structure = "one-factor"
rho = 0.2
[epochs]
intervals = [3, 6]
[fit]
scales = ["log", "lin"]
families = ["GG", "AG"]
[studies]
epoch_length = [10, 30]
shrinkage = true
"#;

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["mvdist"];
    full.extend_from_slice(args);
    main_with_args(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap().install(f)
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ma = in_pool(1, || run_pipeline(&cfg, &a)).unwrap();
    let mb = in_pool(4, || run_pipeline(&cfg, &b)).unwrap();
    assert_eq!(ma, mb);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{} differs", k.display());
    }
    // the manifest covers every artifact but itself
    assert_eq!(ma.files.len() + 1, ta.len());
    let m: Manifest = serde_json::from_slice(&ta[Path::new("manifest.json")]).unwrap();
    assert_eq!(m.config_sha256, cfg.hash());
}

#[test]
fn appendix_tables_have_expected_shape() {
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, dir.path()).unwrap();
    let read = |p: &str| fs::read_to_string(dir.path().join(p)).unwrap();
    let b2 = read("tables/epoch_fits.csv");
    assert!(b2.starts_with("date,fit,dt,l_rot,chi2_ln,chi2_lin\nepoch 1,log,1 step,"));
    assert_eq!(b2.lines().count(), 1 + 6 * 2);
    let b3 = read("tables/epoch_averages.csv");
    assert_eq!(b3.lines().count(), 3);
    let b4 = read("tables/interval_params.csv");
    assert_eq!(b4.lines().next().unwrap(), "interval,fit,dt,length,GG_N,GA_L,GA_N,AG_N,AA_L,AA_N");
    // two 3-epoch intervals and one 6-epoch interval, two scales each
    assert_eq!(b4.lines().count(), 1 + 3 * 2);
    let b6 = read("tables/interval_averages.csv");
    assert_eq!(b6.lines().count(), 1 + 2 * 2);
    let d = read("tables/interval_sweep_3_log.csv");
    assert_eq!(d.lines().count(), 3);
    let overlay = read("reports/overlay.csv");
    assert!(overlay.contains(",8.0,"));
}

#[test]
fn stagewise_execution_matches_the_pipeline() {
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_pipeline(&cfg, &out).unwrap();
    let p = dir.path();
    let panel = p.join("panel");
    assert_eq!(
        run(&[
            "synth", "--k", "8", "--epochs", "6", "--epoch-len", "60", "--seed", "99", "--kernel", "algebraic", "--l", "3.5",
            "--ensemble", "gaussian", "--N", "12", "--rho", "0.2", "--out", s(&panel),
        ]),
        0
    );
    assert_eq!(fs::read(p.join("panel.bin")).unwrap(), fs::read(out.join("panel.bin")).unwrap());

    let epoch_density = p.join("e1.csv");
    assert_eq!(run(&["aggregate", "--panel", s(&panel), "--columns", "0:60", "--density", s(&epoch_density)]), 0);
    assert_eq!(fs::read(&epoch_density).unwrap(), fs::read(out.join("densities/epoch_0001.csv")).unwrap());

    let interval_density = p.join("i2.csv");
    assert_eq!(
        run(&["aggregate", "--panel", s(&panel), "--columns", "180:360", "--epoch-len", "60", "--density", s(&interval_density)]),
        0
    );
    assert_eq!(fs::read(&interval_density).unwrap(), fs::read(out.join("densities/interval_3_002.csv")).unwrap());

    let records: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(out.join("fits/epoch_fits.json")).unwrap()).unwrap();
    let fit_out = p.join("fit.json");
    assert_eq!(run(&["fit-epoch", "--density", s(&epoch_density), "--scale", "log", "--out", s(&fit_out)]), 0);
    let stagewise: serde_json::Value = serde_json::from_str(&fs::read_to_string(&fit_out).unwrap()).unwrap();
    let composed = &records[0]["fit"];
    assert_eq!(composed["scale"], "log");
    for key in ["l", "chi2_ln", "chi2_lin", "bins_used"] {
        assert_eq!(stagewise[key], composed[key], "{key}");
    }

    let averages = fs::read_to_string(out.join("tables/epoch_averages.csv")).unwrap();
    let l_mean = averages.lines().nth(1).unwrap().split(',').nth(2).unwrap().to_string();
    let interval_fit = p.join("ag.json");
    assert_eq!(
        run(&[
            "fit-interval", "--density", s(&interval_density), "--family", "AG", "--scale", "log", "--l", &l_mean, "--out",
            s(&interval_fit),
        ]),
        0
    );
    let stagewise: serde_json::Value = serde_json::from_str(&fs::read_to_string(&interval_fit).unwrap()).unwrap();
    let records: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(out.join("fits/interval_fits.json")).unwrap()).unwrap();
    let composed = records
        .iter()
        .find(|r| r["length"] == 3 && r["slice"] == "interval 2" && r["fit"]["kind"] == "AG" && r["fit"]["scale"] == "log")
        .unwrap();
    assert_eq!(stagewise["N"], composed["fit"]["N"]);
    assert_eq!(stagewise["chi2_ln"], composed["fit"]["chi2_ln"]);

    let overlay = p.join("overlay.json");
    let epoch_fits = p.join("epoch_fits_log.json");
    let all_epochs: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(out.join("fits/epoch_fits.json")).unwrap()).unwrap();
    let first_three: Vec<&serde_json::Value> = all_epochs.iter().filter(|r| r["fit"]["scale"] == "log").take(3).collect();
    fs::write(&epoch_fits, serde_json::to_string(&first_three).unwrap()).unwrap();
    let gg = records
        .iter()
        .find(|r| r["length"] == 3 && r["slice"] == "interval 1" && r["fit"]["kind"] == "GG" && r["fit"]["scale"] == "log")
        .unwrap();
    let gg_path = p.join("gg.json");
    fs::write(&gg_path, gg.to_string()).unwrap();
    assert_eq!(
        run(&["study-overlay", "--epoch-fits", s(&epoch_fits), "--interval-fit", s(&gg_path), "--grid", "0,5,8", "--out", s(&overlay)]),
        0
    );
    let points: serde_json::Value = serde_json::from_str(&fs::read_to_string(&overlay).unwrap()).unwrap();
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("reports/overlay/3_001_log.json")).unwrap()).unwrap();
    assert_eq!(points, report["points"]);
}

#[test]
fn synth_twice_gives_identical_panels() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let stem = dir.path().join(name);
        assert_eq!(run(&["synth", "--k", "4", "--epochs", "3", "--epoch-len", "20", "--seed", "7", "--out", s(&stem)]), 0);
    }
    assert_eq!(fs::read(dir.path().join("a.bin")).unwrap(), fs::read(dir.path().join("b.bin")).unwrap());
}

#[test]
fn exit_codes_by_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL.replace("seed = 99", "")).unwrap();
    // config error before any output is created
    let out = dir.path().join("never");
    assert_eq!(run(&["run", "--config", s(&cfg), "--out", s(&out)]), 2);
    assert!(!out.exists());
    assert_eq!(run(&["fit-epoch", "--density", s(&dir.path().join("missing.csv"))]), 3);
    // more tickers than columns: the correlation matrix is singular
    let stem = dir.path().join("wide");
    assert_eq!(run(&["synth", "--k", "6", "--epochs", "1", "--epoch-len", "4", "--seed", "1", "--out", s(&stem)]), 0);
    assert_eq!(run(&["rotate", "--panel", s(&stem), "--out", s(&dir.path().join("r"))]), 4);
    assert_eq!(run(&["no-such-command"]), 2);
}

struct XorShift(u64);

impl XorShift {
    fn next(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }
}

#[test]
fn tails_and_correlate_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = XorShift(0x9e3779b97f4a7c15);
    // symmetric Pareto with tail index 3: pdf ~ |x|^-4
    let samples: Vec<String> = (0..200_000)
        .map(|i| {
            let u = rng.next() + 0.5;
            let v = (1.0 - u).max(1e-300).powf(-1.0 / 3.0);
            format!("{:?}", if i % 2 == 0 { v } else { -v })
        })
        .collect();
    let sp = dir.path().join("s.txt");
    fs::write(&sp, samples.join("\n")).unwrap();
    let out = dir.path().join("t.json");
    assert_eq!(run(&["tails", "--samples", s(&sp), "--quantiles", "0.9,0.999", "--out", s(&out)]), 0);
    let fit: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    for side in ["positive", "negative"] {
        let slope = fit[side]["slope"].as_f64().unwrap();
        assert!((slope + 4.0).abs() < 0.3, "{side} slope {slope}");
    }

    let stem = dir.path().join("p");
    assert_eq!(run(&["synth", "--k", "5", "--epochs", "2", "--epoch-len", "50", "--seed", "3", "--out", s(&stem)]), 0);
    for kind in ["time", "position", "covariance", "shrunk"] {
        let m = dir.path().join(format!("m-{kind}"));
        assert_eq!(run(&["correlate", "--panel", s(&stem), "--kind", kind, "--out", s(&m)]), 0, "{kind}");
        let spectrum = fs::read_to_string(dir.path().join(format!("m-{kind}-eigenvalues.csv"))).unwrap();
        let expect = if kind == "position" { 100 } else { 5 };
        assert_eq!(spectrum.lines().count(), 1 + expect);
    }
    let r = dir.path().join("r");
    assert_eq!(run(&["rotate", "--panel", s(&stem), "--columns", "0:50", "--out", s(&r)]), 0);
    assert!(dir.path().join("r-rescaled.bin").exists());
}

fn write_quotes(dir: &Path) -> (Vec<PathBuf>, PathBuf) {
    let mut rng = XorShift(42);
    let days = ["2014-03-03", "2014-03-04"];
    let mut files = Vec::new();
    for (d, day) in days.iter().enumerate() {
        let mut text = String::from("timestamp,ticker,bid,ask\n");
        for (t, ticker) in ["AAA", "BBB", "CCC"].iter().enumerate() {
            let mut mid = 50.0 + 10.0 * t as f64 + d as f64;
            // quotes every 3 s from 09:39:58 to 09:50:01
            for sec in (0..606).step_by(3) {
                mid *= 1.0 + 0.001 * rng.next();
                let total = 9 * 3600 + 39 * 60 + 58 + sec;
                let stamp = format!("{day}T{:02}:{:02}:{:02}", total / 3600, total / 60 % 60, total % 60);
                writeln!(text, "{stamp},{ticker},{:.4},{:.4}", mid - 0.01, mid + 0.01).unwrap();
            }
        }
        // one malformed row and one crossed quote
        text.push_str("garbage,AAA,x,y\n2014-03-03T09:45:00,AAA,10,9\n");
        let p = dir.join(format!("q{d}.csv"));
        fs::write(&p, text).unwrap();
        files.push(p);
    }
    let cal = dir.join("cal.toml");
    fs::write(
        &cal,
        "trading_days = [\"2014-03-03\", \"2014-03-04\"]\n[session]\nopen = \"09:40:00\"\nclose = \"09:50:00\"\n",
    )
    .unwrap();
    (files, cal)
}

#[test]
fn quotes_to_returns_via_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let (files, cal) = write_quotes(dir.path());
    let grid = dir.path().join("grid");
    let mut args = vec!["ingest", "--calendar", s(&cal), "--dt", "10", "--out", s(&grid), "--quotes"];
    args.extend(files.iter().map(|f| s(f)));
    assert_eq!(run(&args), 0);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("grid.json")).unwrap()).unwrap();
    assert_eq!(meta["rows"], 3);
    assert_eq!(meta["cols"], 120);
    for (flag, cols, boundary) in [(None, 118, 0), (Some("--overnight"), 119, 1)] {
        let panel = dir.path().join("panel");
        let mut a = vec!["returns", "--grid", s(&grid), "--out", s(&panel)];
        a.extend(flag);
        assert_eq!(run(&a), 0);
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("panel.json")).unwrap()).unwrap();
        assert_eq!(meta["cols"], cols);
        assert_eq!(meta["boundary"].as_array().unwrap().len(), boundary);
    }
}

#[test]
fn quote_source_pipeline_labels_epochs_by_date() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _) = write_quotes(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        r#"
[source]
kind = "quotes"
files = ["q0.csv", "q1.csv"]
calendar = "cal.toml"
dt = 5
[binning]
rule = "uniform"
lo = -6.0
hi = 6.0
bins = 41
[fit]
scales = ["lin"]
families = ["GG"]
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["run", "--config", s(&cfg), "--out", s(&out)]), 0);
    let b2 = fs::read_to_string(out.join("tables/epoch_fits.csv")).unwrap();
    let dates: Vec<&str> = b2.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(dates, ["2014-03-03", "2014-03-04"]);
    assert!(b2.contains(",lin,5 s,"));
    let ingest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("reports/ingest.json")).unwrap()).unwrap();
    // one malformed row and one crossed quote per file
    assert_eq!(ingest["malformed"], 2);
    assert_eq!(ingest["rejected"], 2);
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        format!("output = \"nested\"\n{SMALL}")
            .replace("intervals = [3, 6]", "intervals = [6]")
            .replace("epoch_length = [10, 30]\nshrinkage = true", "overlay = false"),
    )
    .unwrap();
    let root = dir.path().join("root");
    // only this test touches the variable
    std::env::set_var("MVDIST_OUT", &root);
    let code = run(&["run", "--config", s(&cfg)]);
    std::env::remove_var("MVDIST_OUT");
    assert_eq!(code, 0);
    assert!(root.join("nested/manifest.json").is_file());
}

/// Synthetic stand-in with the geometry of the daily-data normalization
/// study: 308 tickers and 5221 closes.
#[test]
fn daily_source_epoch_length_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = XorShift(7);
    let mut text = String::from("date,ticker,adj_close\n");
    let start = chrono::NaiveDate::from_ymd_opt(1994, 1, 3).unwrap();
    let mut price = vec![100.0; 308];
    for d in 0..5221 {
        let date = start + chrono::Duration::days(d);
        let market = 0.01 * rng.next();
        for (i, p) in price.iter_mut().enumerate() {
            *p *= 1.0 + market + 0.02 * rng.next();
            writeln!(text, "{date},T{i:03},{p:.6}").unwrap();
        }
    }
    fs::write(dir.path().join("daily.csv"), text).unwrap();
    let cfg = dir.path().join("daily.toml");
    fs::write(
        &cfg,
        r#"
seed = 5
[source]
kind = "daily"
file = "daily.csv"
[epochs]
length = 522
[fit]
scales = ["log"]
families = ["GG"]
[studies]
overlay = false
epoch_length = [10, 25, 55]
[studies.pairs]
full_up_to = 100
sampled_pairs = 500
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["run", "--config", s(&cfg), "--out", s(&out)]), 0);
    let table = fs::read_to_string(out.join("reports/epoch_length.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["10", "25", "55"]);
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), ["522", "208", "94"]);
    assert!(rows.iter().all(|r| r[5] == "pairwise"));
    let ek10: f64 = rows[0][3].parse().unwrap();
    assert!(ek10 < -0.2, "T=10 excess kurtosis {ek10}");
}
