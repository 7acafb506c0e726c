use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lpca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpca"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// 10 × 10 noiseless rank-one panel.
fn write_rank_one(path: &Path) -> Vec<Vec<f64>> {
    let rows: Vec<Vec<f64>> = (0..10)
        .map(|l| (0..10).map(|i| (0.5 + 0.1 * l as f64) * (0.2 + 0.07 * i as f64)).collect())
        .collect();
    let text: String = rows
        .iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(path, text).unwrap();
    rows
}

fn read_fitted(path: &Path) -> Vec<(usize, Vec<f64>)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|line| {
            let mut cells = line.split(',');
            let feature: usize = cells.next().unwrap().parse().unwrap();
            (feature, cells.map(|c| c.parse().unwrap()).collect())
        })
        .collect()
}

fn estimate_args<'a>(input: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "estimate", "--input", input, "--out", out, "--k", "5", "--rule", "fixed:1",
        "--distance", "euclidean",
    ]
}

#[test]
fn rank_one_panel_is_reproduced() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    let truth = write_rank_one(&input);
    let out = dir.path().join("run");
    let res = lpca(&estimate_args(input.to_str().unwrap(), out.to_str().unwrap()));
    assert!(res.status.success(), "{}", stderr(&res));

    let fitted = read_fitted(&out.join("fitted.csv"));
    assert_eq!(fitted.len(), 5);
    for (feature, row) in fitted {
        assert!((6..=10).contains(&feature));
        for (a, b) in row.iter().zip(&truth[feature - 1]) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
    let neighbors = fs::read_to_string(out.join("neighbors.csv")).unwrap();
    assert_eq!(neighbors.lines().count(), 1 + 10 * 5);
    let spectra = fs::read_to_string(out.join("spectra.csv")).unwrap();
    assert!(spectra.lines().skip(1).all(|l| l.split(',').nth(1) == Some("1")));
    assert!(out.join("split.txt").exists());
    assert!(out.join("manifest.txt").exists());
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let out = dir.path().join("run");
    let res = lpca(&estimate_args(missing.to_str().unwrap(), out.to_str().unwrap()));
    assert_eq!(res.status.code(), Some(2));
    let err = stderr(&res);
    assert!(err.contains("absent.csv"), "{err}");
    let record = err.lines().find(|l| l.starts_with('{')).expect("json record");
    let json: serde_json::Value = serde_json::from_str(record).unwrap();
    assert_eq!(json["error"]["class"], "data");
    assert_eq!(json["error"]["exit_code"], 2);
}

#[test]
fn bad_settings_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    write_rank_one(&input);
    let out = dir.path().join("run");
    let (i, o) = (input.to_str().unwrap(), out.to_str().unwrap());
    let mut args = estimate_args(i, o);
    args[6] = "11";
    assert_eq!(lpca(&args).status.code(), Some(1));
    let res = lpca(&["estimate", "--input", i, "--out", o, "--distance", "chebyshev"]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(lpca(&["estimate", "--bogus"]).status.code(), Some(1));
    let sim = dir.path().join("sim");
    let res = lpca(&["simulate", "--n", "60", "--p", "50", "--out", sim.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1), "{}", stderr(&res));
    assert!(stderr(&res).contains("explicit threshold"));
}

#[test]
fn covadjust_recovers_slope() {
    let dir = tempfile::tempdir().unwrap();
    let (p, n) = (30, 24);
    let cell = |l: usize, i: usize, salt: usize| (((l * 31 + i * 17 + salt * 7) % 13) as f64) / 13.0 - 0.5;
    let factor = |l: usize, i: usize| (1.0 + 0.03 * l as f64) * (0.4 + 0.05 * i as f64);
    let w: Vec<Vec<f64>> = (0..p).map(|l| (0..n).map(|i| factor(l, i) * 0.5 + cell(l, i, 1)).collect()).collect();
    let y: Vec<Vec<f64>> = (0..p).map(|l| (0..n).map(|i| 2.0 * w[l][i]).collect()).collect();
    let dump = |m: &Vec<Vec<f64>>| -> String {
        m.iter().map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n").collect()
    };
    fs::write(dir.path().join("y.csv"), dump(&y)).unwrap();
    fs::write(dir.path().join("w.csv"), dump(&w)).unwrap();
    let out = dir.path().join("run");
    let res = lpca(&[
        "covadjust", "--input", dir.path().join("y.csv").to_str().unwrap(), "--covariates",
        dir.path().join("w.csv").to_str().unwrap(), "--out", out.to_str().unwrap(), "--k", "6",
        "--rule", "fixed:1",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let theta = fs::read_to_string(out.join("theta.csv")).unwrap();
    let est: f64 = theta.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((est - 2.0).abs() < 1e-6, "{theta}");
    assert_eq!(fs::read_to_string(out.join("fitted.csv")).unwrap().lines().count(), 1 + 10);
}

#[test]
fn runs_are_byte_identical_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    write_rank_one(&input);
    let config = dir.path().join("run.conf");
    fs::write(
        &config,
        "# rank-one check\ninput = x.csv\nk = 4\nrule = fixed:1\nsplit = 0.4,0.6\nsplit_mode = random\nseed = 9\n",
    )
    .unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        let res = lpca(&["estimate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(res.status.success(), "{}", stderr(&res));
    }
    let replay = lpca(&[
        "--threads",
        "1",
        "replay",
        a.join("manifest.txt").to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert!(replay.status.success(), "{}", stderr(&replay));
    for name in ["fitted.csv", "neighbors.csv", "spectra.csv", "split.txt", "summary.txt", "manifest.txt"] {
        let first = fs::read(a.join(name)).unwrap();
        assert_eq!(first, fs::read(b.join(name)).unwrap(), "{name} differs between runs");
        assert_eq!(first, fs::read(c.join(name)).unwrap(), "{name} differs on replay");
    }
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command=estimate"));
    assert!(manifest.contains("seed=9"));
    assert!(manifest.contains(&format!("version={}", env!("CARGO_PKG_VERSION"))));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    write_rank_one(&input);
    let config = dir.path().join("run.conf");
    fs::write(&config, "input = x.csv\nk = 4\nrule = fixed:1\n").unwrap();
    let out = dir.path().join("run");
    let res = lpca(&[
        "estimate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--k", "6",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert!(fs::read_to_string(out.join("manifest.txt")).unwrap().contains("\nk=6\n"));
    assert!(String::from_utf8_lossy(&res.stdout).contains("k=6"));
}

#[test]
fn synth_reports_effects_and_levels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("y.csv");
    let (p, n) = (40, 20);
    let mut text = (1..=n).map(|i| format!("u{i}")).collect::<Vec<_>>().join(",") + "\n";
    for l in 0..p {
        let row: Vec<String> = (0..n)
            .map(|i| {
                let lift = if i == 2 && l >= 36 { 1.0 } else { 0.0 };
                ((1.0 + 0.02 * l as f64) * (0.5 + 0.05 * i as f64) + lift).to_string()
            })
            .collect();
        text.push_str(&(row.join(",") + "\n"));
    }
    fs::write(&input, text).unwrap();
    let out = dir.path().join("run");
    let res = lpca(&[
        "synth", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--header",
        "true", "--treated", "u3", "--p0", "36", "--k", "8", "--rule", "fixed:1",
        "--initial-level", "100",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let effects = fs::read_to_string(out.join("effects.csv")).unwrap();
    let rows: Vec<&str> = effects.lines().collect();
    assert_eq!(rows[0], "period,observed,counterfactual,effect");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("37,"));
    let levels = fs::read_to_string(out.join("levels.csv")).unwrap();
    assert_eq!(levels.lines().count(), 5);
    let summary = String::from_utf8_lossy(&res.stdout).into_owned();
    let avg: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("avg_effect="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(avg > 0.5, "{summary}");
}

#[test]
fn simulate_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let res = lpca(&[
        "simulate", "--model", "2", "--n", "60", "--p", "50", "--reps", "3", "--seed", "4", "--rule", "ratio:2:1.2", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let reps = fs::read_to_string(out.join("reps.csv")).unwrap();
    assert_eq!(reps.lines().count(), 4);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,mae,err_q10,err_q50,err_q90\nlpca,"));
    assert!(summary.contains("\ngpca,"));

    let again = dir.path().join("sim2");
    let replay = lpca(&["replay", out.join("manifest.txt").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(replay.status.success(), "{}", stderr(&replay));
    assert_eq!(reps, fs::read_to_string(again.join("reps.csv")).unwrap());
}
