use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_leader");

fn leader(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("LEADER_WEIGHTS").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_pgm(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize) -> u8) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            bytes.push(f(y, x));
        }
    }
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn extract_on_a_blank_image_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("blank.pgm");
    write_pgm(&img, 40, 36, |_, _| 255);
    let out = dir.path().join("m.txt");
    let maps = dir.path().join("maps");
    let o = leader(&["extract", "--random-weights", "1", "--image", s(&img), "--out", s(&out), "--maps", s(&maps)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().any(|l| l == "40\t36"), "{text}");
    for f in ["p_hat.png", "p_tilde.png", "d_hat.png", "t_hat.png", "maps.leadw"] {
        assert!(maps.join(f).is_file(), "{f}");
    }

    // The maps feed straight into the loss command.
    let gt = dir.path().join("gt.txt");
    std::fs::write(&gt, "40\t36\n10\t12\t0.5\tE\t1.0\n").unwrap();
    let gt_dir = dir.path().join("gt");
    let o = leader(&["encode-gt", "--minutiae", s(&gt), "--out-dir", s(&gt_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = leader(&["loss", "--pred", s(&maps.join("maps.leadw")), "--gt", s(&gt_dir.join("gt.leadw"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for k in ["position", "direction", "kind", "total"] {
        assert!(rec[k].as_f64().unwrap().is_finite(), "{k}");
    }
}

#[test]
fn evaluate_identical_files_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.txt");
    std::fs::write(&m, "# x\n120\t100\n10\t10\t0.1\tE\t0.9\n60\t50\t-2.0\tB\t0.8\n100\t90\t3.0\tE\t0.7\n").unwrap();
    let out = dir.path().join("r.csv");
    let o = leader(&["evaluate", "--extracted", s(&m), "--gt", s(&m), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("level,rho_t,theta_t,regime,tp,fp,fn,precision,recall,f1"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(&f[4..7], ["3", "0", "0"]);
        assert_eq!(f[9].parse::<f64>().unwrap(), 1.0);
    }

    let curve = dir.path().join("c.csv");
    let svg = dir.path().join("c.svg");
    let o = leader(&["pr-curve", "--extracted", s(&m), "--gt", s(&m), "--out", s(&curve), "--svg", s(&svg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&curve).unwrap().lines().count(), 4);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    let o = leader(&["pr-curve", "--extracted", s(&m), "--gt", s(&m), "--out", s(&curve), "--level", "all"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rank_puts_a_dominant_method_first() {
    let dir = tempfile::tempdir().unwrap();
    let tables = dir.path().join("t");
    std::fs::create_dir(&tables).unwrap();
    std::fs::write(tables.join("a.csv"), "sample,f1\ns1,0.9\ns2,0.8\ns3,0.95\n").unwrap();
    std::fs::write(tables.join("b.csv"), "sample,f1\ns1,0.5\ns2,0.7\ns3,0.1\n").unwrap();
    std::fs::write(tables.join("c.csv"), "sample,f1\ns1,0.6\ns2,0.2\ns3,0.3\n").unwrap();
    let out = dir.path().join("out");
    let o = leader(&["rank", "--dir", s(&tables), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("ranking.csv")).unwrap();
    let a = text.lines().find(|l| l.starts_with("a,")).unwrap();
    let f: Vec<&str> = a.split(',').collect();
    assert_eq!(f[1].parse::<f64>().unwrap(), 1.0);
    assert_eq!(f[3].parse::<f64>().unwrap(), 100.0);
    let wins = std::fs::read_to_string(out.join("direct_win.csv")).unwrap();
    assert!(wins.lines().any(|l| l == "a,,100,100"), "{wins}");
}

#[test]
fn inspect_writes_one_image_per_tap() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("ridge.pgm");
    write_pgm(&img, 48, 40, |y, x| (127.0 + 100.0 * ((x as f64) * 0.6 + (y as f64) * 0.2).sin()) as u8);
    let out = dir.path().join("viz");
    let o = leader(&[
        "inspect", "--random-weights", "3", "--image", s(&img), "--taps", "stem,gate.out", "--out-dir", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("ridge_stem.png").is_file());
    assert!(out.join("ridge_gate_out.png").is_file());
    let o = leader(&["inspect", "--random-weights", "3", "--image", s(&img), "--taps", "nope", "--out-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown tap"));
}

#[test]
fn errors_use_one_line_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let o = leader(&["evaluate", "--extracted", s(&missing), "--gt", s(&missing)]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=io msg="), "{err}");
    assert!(err.contains("missing.txt"));

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "10\t10\n1\t2\t0.0\tQ\t0.5\n").unwrap();
    let o = leader(&["evaluate", "--extracted", s(&bad), "--gt", s(&bad)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error kind=parse"), "{}", stderr(&o));

    let w = dir.path().join("w.leadw");
    std::fs::write(&w, b"LEADW1garbagegarbage").unwrap();
    let img = dir.path().join("i.pgm");
    write_pgm(&img, 8, 8, |_, _| 0);
    let o = leader(&["extract", "--weights", s(&w), "--image", s(&img), "--out", s(&bad)]);
    assert_eq!(o.status.code(), Some(4));

    let o = leader(&["extract", "--image", s(&img), "--out", s(&bad)]);
    assert_eq!(o.status.code(), Some(2), "no weights given");
    let o = leader(&["extract", "--random-weights", "1", "--image", s(&img), "--out", s(&bad), "--tau", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error kind=invalid_parameter"));
    assert_eq!(leader(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(leader(&["--help"]).status.code(), Some(0));
    assert_eq!(leader(&["--version"]).status.code(), Some(0));
}
