use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

use triple_s::formats::{save_pfm, MANIFEST_FILE};
use triple_s::types::{threshold_prediction, AnnotationSet, PixelCoord, ProbabilityMap};
use triple_s::watershed::selective_watershed;

fn tss(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tss"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn gen_small(dir: &Path, name: &str, seed: &str) {
    let out = tss(&["gen", "--out", name, "--n", "20", "--size", "32x32", "--berries", "2:4", "--radius", "2.5:4", "--seed", seed], dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_splits_and_rejects_bad_ranges() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path(), "ds", "1");
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("ds").join(MANIFEST_FILE)).unwrap()).unwrap();
    let splits: Vec<&str> = manifest["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["split"].as_str().unwrap())
        .collect();
    assert_eq!(splits.iter().filter(|s| **s == "train").count(), 18);
    assert_eq!(splits.iter().filter(|s| **s == "val").count(), 1);
    assert_eq!(splits.iter().filter(|s| **s == "test").count(), 1);

    let bad = tss(&["gen", "--out", "x", "--berries", "5:3"], tmp.path());
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("invalid range"));
    assert_eq!(code(&tss(&["gen", "--out", "x", "--split", "90:5:4"], tmp.path())), 2);
    assert_eq!(code(&tss(&["gen", "--out", "x", "--size", "64"], tmp.path())), 2);
}

#[test]
fn train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path(), "ds", "2");

    let zero = tss(&["train", "--data", "ds", "--weights", "1,0,0,0", "--shape", "none", "--iters", "0", "--out", "zero.ckpt"], tmp.path());
    assert_eq!(code(&zero), 0, "{}", String::from_utf8_lossy(&zero.stderr));
    let params = triple_s::formats::load_checkpoint(&tmp.path().join("zero.ckpt")).unwrap();
    assert_eq!(params, triple_s::trainer::network::NetworkParams::init(0).quantized());

    let run = tss(
        &["train", "--data", "ds", "--weights", "1,0.0001,1,0", "--shape", "convex", "--iters", "40", "--lr", "0.01", "--checkpoint-every", "10", "--out", "m.ckpt"],
        tmp.path(),
    );
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let report: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(report["n_images"], 1);
    let log = std::fs::read_to_string(tmp.path().join("m.ckpt.log.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 40);
    assert!(records.iter().any(|r| r["shape"].as_f64().unwrap() > 0.0));

    let eval = tss(&["eval", "--ckpt", "m.ckpt", "--data", "ds", "--split", "train", "--report", "r.json"], tmp.path());
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("r.json")).unwrap()).unwrap();
    let (miou, mae) = (r["miou_percent"].as_f64().unwrap(), r["mae"].as_f64().unwrap());
    if mae > 0.0 {
        assert!((r["qcs"].as_f64().unwrap() - miou / mae).abs() < 1e-9);
    } else {
        assert!(r["qcs"].is_null() && r["qcs_infinite"] == true);
    }
    let csv = std::fs::read_to_string(tmp.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 19);
    assert_eq!(csv.lines().next().unwrap(), "image,truth,predicted,iou");
}

#[test]
fn eval_bypass_and_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path(), "ds", "3");
    let gt = tss(&["eval", "--data", "ds", "--gt-as-pred", "--split", "train", "--report", "gt.json"], tmp.path());
    assert_eq!(code(&gt), 0);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("gt.json")).unwrap()).unwrap();
    assert_eq!(r["miou_percent"], 100.0);
    assert_eq!(r["mae"], 0.0);
    assert!(r["qcs"].is_null());
    assert_eq!(r["qcs_infinite"], true);

    assert_eq!(code(&tss(&["train", "--data", "ds", "--iters", "0", "--out", "m.ckpt"], tmp.path())), 0);
    let bytes = std::fs::read(tmp.path().join("m.ckpt")).unwrap();
    std::fs::write(tmp.path().join("cut.ckpt"), &bytes[..bytes.len() / 2]).unwrap();
    let cut = tss(&["eval", "--ckpt", "cut.ckpt", "--data", "ds", "--report", "x.json"], tmp.path());
    assert_eq!(code(&cut), 5);
    let mut flipped = bytes.clone();
    flipped[40] ^= 0x10;
    std::fs::write(tmp.path().join("flip.ckpt"), &flipped).unwrap();
    assert_eq!(code(&tss(&["eval", "--ckpt", "flip.ckpt", "--data", "ds", "--report", "x.json"], tmp.path())), 5);
    assert_eq!(code(&tss(&["eval", "--ckpt", "missing.ckpt", "--data", "ds", "--report", "x.json"], tmp.path())), 3);
}

fn read_png(path: &Path) -> Vec<[u8; 3]> {
    image::open(path).unwrap().to_rgb8().pixels().map(|p| p.0).collect()
}

#[test]
fn watershed_dump_matches_library_regions() {
    let tmp = tempfile::tempdir().unwrap();
    let (h, w) = (12, 16);
    let fg: Vec<f64> = (0..h * w).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
    let prob = ProbabilityMap::from_foreground(h, w, fg).unwrap();
    save_pfm(&prob, &tmp.path().join("p.pfm")).unwrap();
    let ann = AnnotationSet::new(vec![PixelCoord::new(3, 3), PixelCoord::new(8, 12)], vec![PixelCoord::new(0, 15)]);
    std::fs::write(
        tmp.path().join("pts.json"),
        r#"{"image":"x.png","positives":[[3,3],[8,12]],"negatives":[[0,15]]}"#,
    )
    .unwrap();
    let out = tss(&["watershed", "--prob", "p.pfm", "--points", "pts.json", "--out", "ws.png"], tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // Same partition as the in-memory region set, up to colour naming.
    let pixels = read_png(&tmp.path().join("ws.png"));
    let regions = selective_watershed(&threshold_prediction(&prob), &prob, &ann).unwrap();
    let labels = regions.labels().labels();
    let markers: Vec<usize> = ann.positives.iter().chain(&ann.negatives).map(|p| p.index(w)).collect();
    let mut colour_of: HashMap<u32, [u8; 3]> = HashMap::new();
    let mut label_of: HashMap<[u8; 3], u32> = HashMap::new();
    for (i, (&l, &c)) in labels.iter().zip(&pixels).enumerate() {
        if markers.contains(&i) {
            continue;
        }
        assert_eq!(*colour_of.entry(l).or_insert(c), c);
        assert_eq!(*label_of.entry(c).or_insert(l), l);
    }
    assert_eq!(pixels[ann.positives[0].index(w)], [255, 255, 255]);
    assert_eq!(pixels[ann.negatives[0].index(w)], [0, 0, 0]);

    // A single positive floods everything.
    std::fs::write(tmp.path().join("one.json"), r#"{"positives":[[5,5]],"negatives":[]}"#).unwrap();
    assert_eq!(code(&tss(&["watershed", "--prob", "p.pfm", "--points", "one.json", "--out", "one.png"], tmp.path())), 0);
    let one = read_png(&tmp.path().join("one.png"));
    let distinct: std::collections::HashSet<[u8; 3]> =
        one.iter().enumerate().filter(|(i, _)| *i != 5 * w + 5).map(|(_, c)| *c).collect();
    assert_eq!(distinct.len(), 1);

    std::fs::write(tmp.path().join("bad.json"), "{\"positives\": [[1,").unwrap();
    assert_eq!(code(&tss(&["watershed", "--prob", "p.pfm", "--points", "bad.json", "--out", "b.png"], tmp.path())), 2);
    std::fs::write(tmp.path().join("far.json"), r#"{"positives":[[50,50]]}"#).unwrap();
    assert_eq!(code(&tss(&["watershed", "--prob", "p.pfm", "--points", "far.json", "--out", "b.png"], tmp.path())), 2);
    assert_eq!(code(&tss(&["watershed", "--prob", "nope.pfm", "--points", "one.json", "--out", "b.png"], tmp.path())), 3);
}

#[test]
fn ablate_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    gen_small(tmp.path(), "ds", "4");
    std::fs::write(
        tmp.path().join("cfg.json"),
        r#"[{"name":"Seg","weights":[1,0,0,0],"shape":"none","lr":0.01},
            {"name":"Seg+Split+Convex","weights":[1,0.0001,1,0],"shape":"convex","lr":0.01}]"#,
    )
    .unwrap();
    let args = ["ablate", "--data", "ds", "--configs", "cfg.json", "--out", "ab", "--iters", "20", "--split", "train"];
    let first = tss(&args, tmp.path());
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let table = std::fs::read_to_string(tmp.path().join("ab/ablation.md")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().nth(2).unwrap().starts_with("| Seg |"));

    let rows: Vec<serde_json::Value> =
        serde_json::from_slice(&std::fs::read(tmp.path().join("ab/ablation.json")).unwrap()).unwrap();
    for row in &rows {
        let r = &row["report"];
        let (miou, mae) = (r["miou_percent"].as_f64().unwrap(), r["mae"].as_f64().unwrap());
        if mae > 0.0 {
            assert!((r["qcs"].as_f64().unwrap() - miou / mae).abs() < 1e-6);
        }
    }

    let again = tss(&["ablate", "--data", "ds", "--configs", "cfg.json", "--out", "ab2", "--iters", "20", "--split", "train"], tmp.path());
    assert_eq!(code(&again), 0);
    assert_eq!(table, std::fs::read_to_string(tmp.path().join("ab2/ablation.md")).unwrap());

    std::fs::write(tmp.path().join("bad.json"), r#"[{"name":"x","weights":[1,0]}]"#).unwrap();
    assert_eq!(code(&tss(&["ablate", "--data", "ds", "--configs", "bad.json", "--out", "ab3"], tmp.path())), 2);
}
