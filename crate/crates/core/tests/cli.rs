use std::path::Path;
use std::process::{Command, Output};

use bevkernel::bench::{json_twin, BenchReport, RobustnessReport};
use bevkernel::{FeaturePyramid, Lut};

fn bevkernel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bevkernel"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_small(dir: &Path) {
    let out = bevkernel(&[
        "gen-synthetic",
        "--views",
        "2",
        "--scales",
        "2",
        "--rows",
        "6",
        "--cols",
        "5",
        "--channels",
        "8",
        "--kernel",
        "cross-3x3",
        "--out-dir",
        s(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&bevkernel(&["--help"])), 0);
    assert_eq!(code(&bevkernel(&["transform", "--help"])), 0);
    assert_eq!(code(&bevkernel(&["frobnicate"])), 2);
    assert_eq!(code(&bevkernel(&["build-lut", "--kernel", "4x4"])), 2);
    assert_eq!(code(&bevkernel(&[])), 2);
}

#[test]
fn missing_and_malformed_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.gktf");
    let out = bevkernel(&[
        "transform",
        "--features",
        s(&missing),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.gktf"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "scale_strides = [8]\n[[views]]\nname = 1\n").unwrap();
    let out = bevkernel(&[
        "build-lut",
        "--rig",
        s(&bad),
        "--kernel",
        "3x3",
        "--out",
        s(&dir.path().join("x.gktl")),
    ]);
    assert_eq!(code(&out), 3);

    let junk = dir.path().join("junk.gktl");
    std::fs::write(&junk, b"GKTL\x01\x00short").unwrap();
    assert_eq!(code(&bevkernel(&["inspect", s(&junk)])), 3);
}

#[test]
fn unwritable_output_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path());
    let out = bevkernel(&[
        "build-lut",
        "--rig",
        s(&dir.path().join("rig.toml")),
        "--grid",
        s(&dir.path().join("grid.toml")),
        "--out",
        s(&dir.path().join("no/such/dir/t.gktl")),
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn pipeline_with_every_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_small(d);
    let (rig, grid, lut) = (d.join("rig.toml"), d.join("grid.toml"), d.join("t.gktl"));
    assert_eq!(
        code(&bevkernel(&[
            "build-lut",
            "--rig",
            s(&rig),
            "--grid",
            s(&grid),
            "--out",
            s(&lut)
        ])),
        0
    );
    let table = Lut::read(&lut).unwrap();
    assert_eq!(table.grid_shape(), (6, 5));
    assert_eq!(table.positions_per_kernel(), 5);

    let mut outputs = Vec::new();
    for strategy in ["lut", "sample", "im2col"] {
        let out_path = d.join(format!("bev-{strategy}.gktf"));
        let out = bevkernel(&[
            "transform",
            "--features",
            s(&d.join("features.gktf")),
            "--lut",
            s(&lut),
            "--rig",
            s(&rig),
            "--grid",
            s(&grid),
            "--strategy",
            strategy,
            "--d-model",
            "16",
            "--out",
            s(&out_path),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read(&out_path).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let bev = FeaturePyramid::read(d.join("bev-lut.gktf")).unwrap();
    assert_eq!(
        (bev.map(0, 0).height, bev.map(0, 0).width, bev.channels()),
        (6, 5, 16)
    );

    let heat = d.join("q.pgm");
    let out = bevkernel(&[
        "transform",
        "--features",
        s(&d.join("features.gktf")),
        "--lut",
        s(&lut),
        "--out",
        s(&d.join("b.gktf")),
        "--heatmap",
        s(&heat),
        "--heatmap-query",
        "7",
    ]);
    assert_eq!(code(&out), 0);
    assert!(std::fs::read(&heat)
        .unwrap()
        .starts_with(b"P5\n40 32\n255\n"));

    let out = bevkernel(&["inspect", s(&lut)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("grid 6x5"));
}

#[test]
fn lut_from_another_scene_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_small(d);
    let (rig, grid, lut) = (d.join("rig.toml"), d.join("grid.toml"), d.join("t.gktl"));
    let out = bevkernel(&[
        "build-lut",
        "--rig",
        s(&rig),
        "--grid",
        s(&grid),
        "--kernel",
        "5x5",
        "--out",
        s(&lut),
    ]);
    assert_eq!(code(&out), 0);
    let out = bevkernel(&[
        "transform",
        "--features",
        s(&d.join("features.gktf")),
        "--lut",
        s(&lut),
        "--rig",
        s(&rig),
        "--grid",
        s(&grid),
        "--out",
        s(&d.join("b.gktf")),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn bench_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("bench.csv");
    let out = bevkernel(&[
        "bench",
        "--views",
        "2",
        "--scales",
        "1",
        "--rows",
        "5",
        "--cols",
        "5",
        "--channels",
        "8",
        "--warmup",
        "1",
        "--iters",
        "3",
        "--reps",
        "3",
        "--out",
        s(&csv_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        BenchReport::CSV_HEADER.join(",")
    );
    let rows = BenchReport::rows_from_csv(&text).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.strategy.as_str()).collect::<Vec<_>>(),
        ["im2col", "sample", "lut"]
    );
    let json: BenchReport =
        serde_json::from_str(&std::fs::read_to_string(json_twin(&csv_path)).unwrap()).unwrap();
    assert!(json.equivalent);
    assert_eq!(json.rows, rows);
}

#[test]
fn robustness_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_small(d);
    let csv_path = d.join("rob.csv");
    let out = bevkernel(&[
        "robustness",
        "--rig",
        s(&d.join("rig.toml")),
        "--grid",
        s(&d.join("grid.toml")),
        "--kernels",
        "3x3,5x5",
        "--sigma-t",
        "0.1,0.5",
        "--sigma-r",
        "0.01",
        "--draws",
        "100",
        "--heights",
        "0,1",
        "--out",
        s(&csv_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        RobustnessReport::CSV_HEADER.join(",")
    );
    let parsed = RobustnessReport::from_csv(&text).unwrap();
    assert_eq!(parsed.deviation.len(), 3 * 2);
    assert_eq!(parsed.height.len(), 2 * 2);
    assert!(parsed
        .height
        .iter()
        .filter(|h| h.z == 0.0)
        .all(|h| h.overlap_fraction == 1.0));
    let json: RobustnessReport =
        serde_json::from_str(&std::fs::read_to_string(json_twin(&csv_path)).unwrap()).unwrap();
    assert_eq!(json, parsed);

    let out = bevkernel(&["robustness", "--draws", "10"]);
    assert_eq!(code(&out), 3);
}
