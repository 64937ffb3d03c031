use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "round,eta,loss_mean,loss_std,consensus_error_mean,consensus_error_std,grad_norm_sq_mean,grad_norm_sq_std,loss_local_avg_mean";
const SMALL: [&str; 10] = ["--clients", "4", "--dim", "5", "--samples", "60", "--repeats", "2", "--seed", "3"];

fn dflsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dflsim")).args(args).output().expect("binary runs")
}

fn with_out<'a>(mut args: Vec<&'a str>, out: &'a Path) -> Vec<&'a str> {
    args.extend(SMALL);
    args.extend(["--out", out.to_str().unwrap()]);
    args
}

fn only_csv(dir: &Path) -> String {
    let path = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv") && !p.ends_with("manifest.csv"))
        .expect("a cell CSV");
    fs::read_to_string(path).unwrap()
}

#[test]
fn run_writes_cell_csv_with_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let out = dflsim(&with_out(vec!["run", "--rounds", "12", "--noise-var", "0.01"], dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = only_csv(dir.path());
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 13);
    assert!(rows[0].starts_with("-1,"));
    let eta = rows[1].split(',').nth(1).unwrap();
    assert_eq!(eta, "2.0000000000000001e-1");
    for field in rows[5].split(',').skip(1) {
        let mantissa = field.split('e').next().unwrap().trim_start_matches('-');
        assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17, "{field}");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, "# small experiment\nrounds = 30\nlr-gamma = 0.5\nlr_interval = 1\n").unwrap();
    let out_dir = dir.path().join("out");
    let args = with_out(vec!["run", "--config", cfg.to_str().unwrap(), "--rounds", "4"], &out_dir);
    assert!(dflsim(&args).status.success());
    let csv = only_csv(&out_dir);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    // File values that no flag overrides still apply: eta halves every round.
    let eta = |r: &str| r.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert_eq!(eta(rows[2]), eta(rows[1]) / 2.0);
}

#[test]
fn sweep_manifest_and_check() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_out(
        vec!["sweep", "--rounds", "8", "--algorithms", "fedndl1,fednmut", "--noise-vars", "0,0.01", "--mus", "0.02"],
        dir.path(),
    );
    let out = dflsim(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(lines.next(), Some("cell_id,algorithm,topology,noise_var,mu,seed_list,csv_path"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        assert_eq!(row.len(), 7);
        assert!(dir.path().join(row[6]).exists());
    }

    let dir_arg = dir.path().to_str().unwrap();
    let check = dflsim(&["sweep", "--check", dir_arg]);
    assert!(check.status.success());
    assert_eq!(String::from_utf8_lossy(&check.stdout).matches("identical").count(), 4);

    let victim = dir.path().join(rows[0][6]);
    let mut text = fs::read_to_string(&victim).unwrap();
    text.push('\n');
    fs::write(&victim, text).unwrap();
    let check = dflsim(&["sweep", "--check", dir_arg]);
    assert!(!check.status.success());
    assert!(String::from_utf8_lossy(&check.stdout).contains("DIFFERS"));
}

#[test]
fn rate_reads_cell_csv() {
    let dir = tempfile::tempdir().unwrap();
    assert!(dflsim(&with_out(vec!["run", "--rounds", "200", "--topology", "full"], dir.path())).status.success());
    let csv = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| !p.ends_with("manifest.csv") && p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let out = dflsim(&["rate", "--input", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("slope ") || text.starts_with("exact convergence"), "{text}");
}

#[test]
fn verify_reports_and_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_out(vec!["verify", "--bound-rounds", "200", "--trials", "500"], dir.path());
    let out = dflsim(&args);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 8, "{text}");
    assert!(dir.path().join("verify_report.txt").exists());
    assert!(dir.path().join("verify_summary.csv").exists());

    let bad = dflsim(&["verify", "--clients", "0"]);
    assert!(!bad.status.success());
}
