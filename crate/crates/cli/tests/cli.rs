use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

const BASELINE: &str = "\
coeffs.preset = baseline
workload.mu_P = 100
workload.mu_D = 500
workload.N = 10000
bundle.B = 256
bundle.r = 8
";

fn afd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afd")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

/// Value of a `name = value` line in optimize output.
fn field(text: &str, name: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{name} = ")))
        .unwrap_or_else(|| panic!("no `{name}` in {text}"))
        .to_string()
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn optimize_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "base.cfg", BASELINE);
    let out = afd(&["optimize", "--config", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let r_star: f64 = field(&text, "r*").parse().unwrap();
    assert!((r_star - 9.3).abs() <= 0.02 * 9.3, "{r_star}");
    assert_eq!(field(&text, "regime"), "AttentionBottleneck");
}

#[test]
fn optimize_short_decode_is_ffn_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "base.cfg", BASELINE);
    let out = afd(&["optimize", "--config", &cfg, "--workload.mu_D", "100"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(field(&text, "regime"), "FfnBottleneck");
    let r_star: f64 = field(&text, "r*").parse().unwrap();
    assert!((r_star - 2.17).abs() <= 0.02 * 2.17);
}

#[test]
fn optimize_writes_throughput_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "base.cfg", BASELINE);
    let csv = dir.path().join("grid.csv");
    let out = afd(&["optimize", "--config", &cfg, "--out", csv.to_str().unwrap(), "--optimize.r_max=32"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (header, rows) = csv_rows(&std::fs::read_to_string(&csv).unwrap());
    assert_eq!(header, ["r", "theory_throughput"]);
    assert_eq!(rows.len(), 128);
    let best = rows
        .iter()
        .max_by(|a, b| a[1].parse::<f64>().unwrap().total_cmp(&b[1].parse().unwrap()))
        .unwrap();
    assert_eq!(best[0], "9.25");
}

#[test]
fn missing_coefficient_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASELINE.replace("coeffs.preset = baseline\n", "")
        + "coeffs.alpha_A = 0.00165\ncoeffs.beta_A = 50\ncoeffs.alpha_F = 0.083\ncoeffs.beta_F = 100\ncoeffs.alpha_C = 0.022\n";
    let cfg = write(dir.path(), "partial.cfg", &text);
    let out = afd(&["optimize", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("coeffs.beta_C"), "{}", stderr(&out));

    let out = afd(&["optimize", "--config", &cfg, "--workload.bogus", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("workload.bogus"));
}

#[test]
fn coefficients_file_is_resolved_next_to_config() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "coeffs.txt",
        "coeffs.alpha_A = 0.00165\ncoeffs.beta_A = 50\ncoeffs.alpha_F = 0.083\ncoeffs.beta_F = 100\ncoeffs.alpha_C = 0.022\ncoeffs.beta_C = 20\n",
    );
    let cfg = write(dir.path(), "base.cfg", &BASELINE.replace("coeffs.preset = baseline", "coeffs.file = coeffs.txt"));
    let out = afd(&["optimize", "--config", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(field(&stdout(&out), "r*"), "9.320090361445782");

    let missing = write(dir.path(), "missing.cfg", &BASELINE.replace("coeffs.preset = baseline", "coeffs.file = nope.txt"));
    let out = afd(&["optimize", "--config", &missing]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("coeffs.file"));
}

#[test]
fn simulate_is_deterministic_and_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", "coeffs.preset = baseline\nworkload.mu_P = 20\nworkload.mu_D = 15\nworkload.N = 200\nbundle.B = 8\nbundle.r = 3\n");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let trace = dir.path().join("trace.csv");
    let out = afd(&["simulate", "--config", &cfg, "--seed", "5", "--out", a.to_str().unwrap(), "--trace", trace.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = afd(&["simulate", "--config", &cfg, "--seed", "5", "--out", b.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let (header, rows) = csv_rows(&text);
    assert_eq!(
        header,
        ["r", "B", "mu_P", "mu_D", "N", "seed", "throughput_80", "tpot", "eta_A", "eta_F", "T_80", "completions_counted", "theory_throughput"]
    );
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][5], "5");
    assert_eq!(rows[0][11], "480");
    let trace = std::fs::read_to_string(&trace).unwrap();
    assert!(trace.starts_with("time,kind,wave,instance\n0,attention_start,0,0\n"));
}

#[test]
fn simulate_matches_the_sweep_row_for_the_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", "coeffs.preset = baseline\nworkload.mu_P = 20\nworkload.mu_D = 15\nworkload.N = 200\nbundle.B = 8\nsweep.r = 2,3\nseeds = 4,5\n");
    let sim = afd(&["simulate", "--config", &cfg, "--bundle.r", "3", "--seed", "5"]);
    let sweep = afd(&["sweep", "--config", &cfg]);
    assert!(sim.status.success() && sweep.status.success(), "{}{}", stderr(&sim), stderr(&sweep));
    let (_, sim_rows) = csv_rows(&stdout(&sim));
    let (_, sweep_rows) = csv_rows(&stdout(&sweep));
    let row = sweep_rows.iter().find(|r| r[0] == "3" && r[4] == "5").unwrap();
    // throughput_80, tpot, eta_A, eta_F
    assert_eq!(sim_rows[0][6..10], row[5..9]);
}

#[test]
fn sweep_rows_are_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", "coeffs.preset = baseline\nworkload.mu_P = 20\nworkload.N = 120\nsweep.r = 1,2,3\nsweep.B = 4,8\nsweep.mu_D = 5,10\nseeds = 1,2\n");
    let one = afd(&["sweep", "--config", &cfg, "--jobs", "1"]);
    let many = afd(&["sweep", "--config", &cfg, "--jobs", "4"]);
    assert!(one.status.success(), "{}", stderr(&one));
    assert_eq!(one.stdout, many.stdout);
    let (header, rows) = csv_rows(&stdout(&one));
    assert_eq!(
        header,
        ["r", "B", "mu_P", "mu_D", "seed", "throughput_80", "tpot", "eta_A", "eta_F", "theory_throughput", "r_star", "error"]
    );
    assert_eq!(rows.len(), 3 * 2 * 2 * 2);
    assert!(rows.iter().all(|r| r[11].is_empty()));
}

#[test]
fn sweep_empty_seed_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "base.cfg", BASELINE);
    let out = afd(&["sweep", "--config", &cfg, "--seeds="]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("seeds"));
}

#[test]
fn sweep_batch_axis_carries_reference_optima_and_row_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "base.cfg", BASELINE);
    // Stopping after one completion cannot fill the metrics window, so every
    // row records an error while the analytic columns are still filled in.
    let out = afd(&["sweep", "--config", &cfg, "--sweep.B", "128,256,512", "--sweep.r", "1", "--stop", "completions:1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (_, rows) = csv_rows(&stdout(&out));
    let reference = [7.08, 9.34, 10.31];
    for (row, want) in rows.iter().zip(reference) {
        let r_star: f64 = row[10].parse().unwrap();
        assert!((r_star - want).abs() <= 0.02 * want, "B={} r*={r_star}", row[1]);
        assert!(row[5].is_empty());
        assert!(row[11].contains("completions"), "{}", row[11]);
    }
}

#[test]
fn calibrate_fits_traces() {
    let dir = tempfile::tempdir().unwrap();
    let ffn = write(dir.path(), "ffn.csv", "load,latency_cycles\n0,100\n1000,183\n");
    let attn = write(dir.path(), "attn.csv", "load,latency_cycles\n0,50\n10000,66.5\n100000,215\n");
    let coeffs = dir.path().join("fitted.txt");
    let out = afd(&["calibrate", "--ffn", &ffn, "--attention", &attn, "--out", coeffs.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("R^2 = 1"));
    let text = std::fs::read_to_string(&coeffs).unwrap();
    let value = |key: &str| -> f64 { field(&text, key).parse().unwrap() };
    assert!((value("coeffs.alpha_F") - 0.083).abs() < 1e-12);
    assert!((value("coeffs.beta_F") - 100.0).abs() < 1e-9);
    assert!((value("coeffs.alpha_A") - 0.00165).abs() < 1e-12);
    assert!((value("coeffs.beta_A") - 50.0).abs() < 1e-9);

    let bad = write(dir.path(), "bad.csv", "load,latency_cycles\n0,100\n5,oops\n");
    let out = afd(&["calibrate", "--ffn", &bad]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let out = afd(&["calibrate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn calibrate_derives_slopes_from_hardware() {
    let dir = tempfile::tempdir().unwrap();
    let hw = write(
        dir.path(),
        "hw.txt",
        "hw.pi_peak = 530604722.8915662\nhw.beta_HBM = 698181.8181818182\nhw.beta_net = 488727.27272727276\n\
         hw.N_expert = 256\nhw.N_expert_per_card = 8\nhw.k_route = 8\nhw.mtp_depth = 1\nhw.H = 7168\n\
         hw.d_expert = 2048\nhw.d_kv = 576\n",
    );
    let out = afd(&["calibrate", "--hardware", &hw]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for (key, want) in [("coeffs.alpha_A", 0.00165), ("coeffs.alpha_F", 0.083), ("coeffs.alpha_C", 0.022)] {
        let got: f64 = field(&text, key).parse().unwrap();
        assert!((got - want).abs() < 1e-9 * want, "{key} = {got}");
    }
}

#[test]
fn report_rejects_missing_columns_and_handles_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.csv", "r,B,mu_P\n1,2,3\n");
    let out = afd(&["report", &bad]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("mu_D"));

    let one = write(
        dir.path(),
        "one.csv",
        "r,B,mu_P,mu_D,seed,throughput_80,tpot,eta_A,eta_F,theory_throughput,r_star,error\n32,256,100,500,0,0.27,1,0.6,0,0.318,9.32,\n",
    );
    let out = afd(&["report", &one]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("1 configurations"));
}

struct BaselineReport {
    text: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl BaselineReport {
    fn col(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).unwrap()
    }
}

/// The baseline r sweep at N = 10^4 with three seeds, run once and shared.
fn baseline_report() -> &'static BaselineReport {
    static REPORT: OnceLock<BaselineReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), "base.cfg", &(BASELINE.to_string() + "sweep.r = 1,2,4,8,16,24,32\nseeds = 0,1,2\n"));
        let sweep_csv = dir.path().join("sweep.csv");
        let report_csv = dir.path().join("report.csv");
        let out = afd(&["sweep", "--config", &cfg, "--out", sweep_csv.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        let out = afd(&["report", sweep_csv.to_str().unwrap(), "--out", report_csv.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        let (header, rows) = csv_rows(&std::fs::read_to_string(&report_csv).unwrap());
        BaselineReport { text: stdout(&out), header, rows }
    })
}

#[test]
fn baseline_sweep_optimum_in_bracket() {
    let rep = baseline_report();
    let best: u32 = rep.rows[0][rep.col("r_sim_best")].parse().unwrap();
    assert!((8..=10).contains(&best), "simulated optimum r={best}\n{}", rep.text);
}

#[test]
fn baseline_report_straggler_gap_at_r32() {
    let rep = baseline_report();
    let r32 = rep.rows.iter().find(|r| r[rep.col("r")] == "32").unwrap();
    let gap: f64 = r32[rep.col("throughput_gap")].parse().unwrap();
    assert!((0.05..=0.25).contains(&gap), "r=32 gap {gap}");
}

#[test]
fn baseline_report_ratio_gap_within_ten_percent() {
    let rep = baseline_report();
    let ratio_gap: f64 = rep.rows[0][rep.col("ratio_gap")].parse().unwrap();
    assert!(ratio_gap <= 0.10, "report:\n{}", rep.text);
}
