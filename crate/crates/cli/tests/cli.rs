use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rs-tensor"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("RS_TENSOR_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = run(args, out);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    let dir = TempDir::new().unwrap();
    run(args, dir.path()).status.code().expect("exit code")
}

/// Integer or float field of a flat JSON object written by the CLI.
fn field(json: &str, key: &str) -> f64 {
    let pat = format!("\"{key}\": ");
    let start = json.find(&pat).unwrap_or_else(|| panic!("{key} missing in {json}")) + pat.len();
    let end = json[start..].find([',', '\n']).unwrap() + start;
    json[start..end].trim().parse().unwrap()
}

#[test]
fn kernel_split_counts() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&["kernel", "--n", "1024", "--b", "20", "--M", "19", "--sigma", "0.9", "--delta", "1e-4"], dir.path());
    assert!(stdout.contains("R=20, R_l=12, R_s=8"), "{stdout}");
    let json = fs::read_to_string(dir.path().join("kernel.json")).unwrap();
    assert_eq!(field(&json, "R"), 20.0);
    assert_eq!(field(&json, "R_l"), 12.0);
    assert_eq!(field(&json, "R_s"), 8.0);
    let vectors = fs::read_to_string(dir.path().join("kernel_vectors.csv")).unwrap();
    assert_eq!(vectors.lines().count(), 1 + 20 * 1024);
    assert!(dir.path().join("reference.rst").exists());
}

#[test]
fn kernel_degenerate_order() {
    let dir = TempDir::new().unwrap();
    ok(&["kernel", "--n", "64", "--M", "1"], dir.path());
    let json = fs::read_to_string(dir.path().join("kernel.json")).unwrap();
    assert_eq!(field(&json, "R"), 2.0);
    for f in ["reference.rst", "kernel_vectors.csv", "expansion_error.csv", "run.jsonl"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn error_table_at_order_25() {
    let dir = TempDir::new().unwrap();
    ok(&["kernel", "--n", "256", "--M", "25", "--r_min", "0.1", "--r_max", "20"], dir.path());
    let table = fs::read_to_string(dir.path().join("expansion_error.csv")).unwrap();
    let worst = table
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn outputs_are_byte_identical() {
    let args = ["assemble", "--N", "12", "--b", "4", "--n", "64", "--seed", "5", "--overlap", "soft:64"];
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    ok(&args, a.path());
    let mut single = args.to_vec();
    single.extend(["--threads", "1"]);
    ok(&single, b.path());
    for f in ["assemble.json", "probes.csv", "rs.rst"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_then_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small grid\nn = 128\nb = 20\nM = 19\nsigma = 0.9\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    ok(&["kernel", "--config", cfg], dir.path());
    let json = fs::read_to_string(dir.path().join("kernel.json")).unwrap();
    assert_eq!(field(&json, "n"), 128.0);
    assert_eq!(field(&json, "M"), 19.0);
    ok(&["kernel", "--config", cfg, "--M", "12"], dir.path());
    let json = fs::read_to_string(dir.path().join("kernel.json")).unwrap();
    assert_eq!(field(&json, "n"), 128.0);
    assert_eq!(field(&json, "M"), 12.0);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["kernel", "--n", "64", "--M", "many"]), 2);
    assert_eq!(code(&["kernel", "--n", "0"]), 2);
    assert_eq!(code(&["energy", "--n", "64"]), 2);
    assert_eq!(code(&["energy", "--particles", "/nonexistent/particles.txt"]), 2);
    // spacing 0.5 leaves no room for the short windows under the default cap
    assert_eq!(code(&["energy", "--lattice", "3", "--spacing", "0.5", "--b", "4", "--n", "128"]), 3);
    assert_eq!(code(&["interp", "--n", "8", "--gamma", "100"]), 4);

    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "colour = blue\n").unwrap();
    let o = run(&["kernel", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn energy_of_small_lattice() {
    let dir = TempDir::new().unwrap();
    ok(&["energy", "--lattice", "3", "--spacing", "2", "--b", "4", "--n", "256", "--overlap", "soft:64"], dir.path());
    let json = fs::read_to_string(dir.path().join("energy.json")).unwrap();
    assert!(field(&json, "rel_err") <= 5e-3, "{json}");
    assert_eq!(field(&json, "N"), 27.0);
}

#[test]
fn forces_single_pair() {
    let dir = TempDir::new().unwrap();
    let particles = dir.path().join("pair.txt");
    fs::write(&particles, "# rs-particles v1 b=4\n-1 0 0 1\n1 0 0 1\n").unwrap();
    ok(&["forces", "--particles", particles.to_str().unwrap(), "--n", "128"], dir.path());
    let csv = fs::read_to_string(dir.path().join("forces.csv")).unwrap();
    let first: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    // like charges repel: the left particle is pushed to -x
    assert!(first[1] < 0.0 && first[4] < 0.0, "{csv}");
    assert!((first[1] - first[4]).abs() <= 5e-2 * first[4].abs(), "{csv}");
    assert!(first[2].abs() <= 5e-2 * first[4].abs(), "{csv}");
}

#[test]
fn gen_round_trips_into_energy() {
    let dir = TempDir::new().unwrap();
    ok(&["gen", "--N", "15", "--b", "4", "--seed", "3"], dir.path());
    let text = fs::read_to_string(dir.path().join("particles.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).count(), 15);
    let p = dir.path().join("particles.txt");
    ok(&["energy", "--particles", p.to_str().unwrap(), "--n", "128", "--overlap", "soft:64"], dir.path());
    assert!(dir.path().join("energy.json").exists());
}

#[test]
fn svals_small_sweep() {
    let dir = TempDir::new().unwrap();
    ok(&["svals", "--N", "20,40", "--b", "5", "--n", "128"], dir.path());
    let json = fs::read_to_string(dir.path().join("svals.json")).unwrap();
    assert!(json.contains("max_pairwise_rel_diff_normalized"));
    for n in [20, 40] {
        let csv = fs::read_to_string(dir.path().join(format!("svals_N{n}.csv"))).unwrap();
        assert!(csv.starts_with("mode,k,sigma\n1,1,"));
    }
}

#[test]
fn interp_gaussian_converges() {
    let dir = TempDir::new().unwrap();
    ok(&["interp", "--n", "8", "--b", "4"], dir.path());
    let json = fs::read_to_string(dir.path().join("interp.json")).unwrap();
    assert!(json.contains("\"converged\": true"));
    assert!(field(&json, "rel_residual") <= 1e-8);
    assert_eq!(field(&json, "unknowns"), 512.0);
}
