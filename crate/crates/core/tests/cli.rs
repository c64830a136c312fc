use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ego_interact::sync::formats::{write_imu_csv, write_wav, Audio};
use ego_interact::sync::{QuatSample, NUM_SENSORS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TINY: &str = r#"
[world]
image_size = 16
seq_len = 3
num_sequences = 12

[train]
epochs = 1
batch_size = 4
bank_size = 16

[train.model]
reduced_channels = 2
hidden = 6
encoder_layers = 1
decoder_layers = 1
proj_dim = 8
gaze_embed = 4
ae_channels = 4

[train.model.backbone]
channels = [4, 6]
strides = [2, 2]

[transfer]
epochs = 2
batch_size = 8

[transfer.heads]
reduce_channels = 3
hidden = 6
action_hidden = 5
mask_channels = 4
fusion_channels = 4
pyramid_channels = 4
"#;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ego-interact")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_code(o: &Output) -> i64 {
    let line = stderr(o).lines().last().unwrap_or_default().to_string();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap_or_else(|_| panic!("not a JSON error line: {line}"));
    v["error"]["code"].as_i64().unwrap()
}

#[test]
fn help_enumerates_commands_and_exit_codes() {
    let o = bin(&["--help"]);
    assert!(o.status.success());
    let h = stdout(&o);
    for cmd in ["gen-data", "train", "eval", "ablate", "sync", "movement-from-gaze", "self-test"] {
        assert!(h.contains(cmd), "{cmd}");
    }
    for code in ["0  success", "2  usage", "3  io/format", "4  numeric", "5  acceptance"] {
        assert!(h.contains(code), "{code}");
    }
}

#[test]
fn gen_data_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = bin(&["gen-data", "--out", p(d), "--seqs", "2", "--seed", "7", "--image-size", "16"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 4);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn config_layering_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[world]\nnoise = 0.25\nnum_sequences = 3\nimage_size = 16\n").unwrap();
    let out = dir.path().join("d");
    let o = bin(&["--config", p(&cfg), "gen-data", "--out", p(&out), "--seqs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("sequences=2"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("generation.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["world"]["noise"], 0.25);
    assert_eq!(report["config"]["world"]["num_sequences"], 2);
}

#[test]
fn train_then_eval_gives_labelled_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    let ck = dir.path().join("ck");
    let csv = dir.path().join("eval.csv");
    let c = p(&cfg);
    assert!(bin(&["--config", c, "gen-data", "--out", p(&data), "--seed", "3"]).status.success());
    let o = bin(&["--config", c, "train", "--data", p(&data), "--mode", "vis", "--visual", "infonce", "--out", p(&ck)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(ck.join("report.csv")).unwrap();
    assert!(report.starts_with("# config: "));
    assert!(report.contains("epoch,L_total,L_attn,L_move,L_vis"));

    let o = bin(&["--config", c, "eval", "--ckpt", p(&ck), "--tasks", "all", "--out", p(&csv), "--data", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# config: "));
    let cfg_json: serde_json::Value = serde_json::from_str(lines[0].trim_start_matches("# config: ")).unwrap();
    assert_eq!(cfg_json["train"]["mode"], "vis");
    assert_eq!(lines[1], "mode,scene,action,dynamics,walkable,depth");
    let cells: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(cells[0], "vis");
    assert_eq!(cells.len(), 6);
    for c in &cells[1..] {
        assert!(c.parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn train_rejects_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(bin(&["gen-data", "--out", p(&data), "--seqs", "2", "--image-size", "16"]).status.success());
    let ck = dir.path().join("ck");
    let o = bin(&["train", "--data", p(&data), "--mode", "bogus", "--out", p(&ck)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), 2);
    let o = bin(&["train", "--data", p(&data), "--mask-parts", "tail", "--out", p(&ck)]);
    assert_eq!(o.status.code(), Some(2));
    // An included term with zero weight is a configuration error.
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[train.weights]\nbeta = 0.0\n").unwrap();
    let o = bin(&["--config", p(&cfg), "train", "--data", p(&data), "--mode", "vis-move", "--out", p(&ck)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("nowhere");
    for args in [
        vec!["train", "--data", p(&nowhere), "--out", p(&nowhere)],
        vec!["eval", "--ckpt", p(&nowhere), "--out", p(&nowhere)],
        vec!["sync", "homography", p(&nowhere)],
    ] {
        let o = bin(&args);
        assert_eq!(o.status.code(), Some(3), "{args:?}: {}", stderr(&o));
        assert_eq!(error_code(&o), 3);
    }
}

#[test]
fn unreadable_config_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[train]\nepoch = 3\n").unwrap();
    let o = bin(&["--config", p(&cfg), "gen-data", "--out", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn audio_offset_recovers_constructed_shift() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let src: Vec<f64> = (0..25_000).map(|_| rng.random_range(-0.5..0.5)).collect();
    // b[n] = a[n − 1000]
    let a = Audio { rate: 8000, samples: src[1000..25_000].to_vec() };
    let b = Audio { rate: 8000, samples: src[..24_000].to_vec() };
    let (pa, pb) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
    write_wav(&pa, &a).unwrap();
    write_wav(&pb, &b).unwrap();
    let o = bin(&["sync", "audio-offset", p(&pa), p(&pb)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let samples: f64 =
        text.split_whitespace().find_map(|kv| kv.strip_prefix("offset_samples=")).unwrap().parse().unwrap();
    assert!((samples - 1000.0).abs() < 0.5, "{text}");

    let c = Audio { rate: 16000, samples: src[..24_000].to_vec() };
    let pc = dir.path().join("c.wav");
    write_wav(&pc, &c).unwrap();
    assert_eq!(bin(&["sync", "audio-offset", p(&pa), p(&pc)]).status.code(), Some(2));
}

#[test]
fn homography_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corr.csv");
    let mut text = String::from("x1,y1,x2,y2\n");
    for i in 0..12 {
        let (x, y) = ((i % 4) as f64 * 50.0 + 3.0, (i / 4) as f64 * 40.0 + 7.0);
        text.push_str(&format!("{x},{y},{},{}\n", 2.0 * x + 5.0, 2.0 * y - 3.0));
    }
    fs::write(&path, text).unwrap();
    let o = bin(&["sync", "homography", p(&path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<Vec<f64>> = out.lines().take(3).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let expected = [[2.0, 0.0, 5.0], [0.0, 2.0, -3.0], [0.0, 0.0, 1.0]];
    for (r, e) in rows.iter().zip(expected) {
        for (a, b) in r.iter().zip(e) {
            assert!((a - b).abs() < 1e-8, "{out}");
        }
    }
    assert!(out.contains("inliers=12/12"));

    fs::write(&path, "x1,y1,x2,y2\n1,2,3,4\n").unwrap();
    let o = bin(&["sync", "homography", p(&path)]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn label_moves_writes_per_frame_labels() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let streams: Vec<Vec<QuatSample>> = (0..NUM_SENSORS)
        .map(|_| {
            let mut angle: f64 = 0.0;
            (0..120)
                .map(|i| {
                    angle += rng.random_range(0.0..0.3);
                    let (s, c) = (angle / 2.0).sin_cos();
                    QuatSample { time: i as f64 / 30.0, q: [c, 0.0, s, 0.0] }
                })
                .collect()
        })
        .collect();
    let imu = dir.path().join("imu.csv");
    write_imu_csv(fs::File::create(&imu).unwrap(), &streams).unwrap();
    let out = dir.path().join("labels.csv");
    let o = bin(&["sync", "label-moves", p(&imu), "--fps", "6", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("step,time,torso,torso_mask"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() >= 20, "{} rows", rows.len());
    assert_eq!(rows[0].split(',').count(), header.split(',').count());

    let o = bin(&["sync", "label-moves", p(&imu), "--fps", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn movement_from_gaze_reports_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    assert!(bin(&["--config", p(&cfg), "gen-data", "--out", p(&data)]).status.success());
    let o = bin(&["--config", p(&cfg), "movement-from-gaze", "--data", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# config: "));
    assert!(lines[1].starts_with("model,avg_accuracy,torso"));
    assert!(lines[2].starts_with("visual,"));
    assert!(lines[3].starts_with("visual+gaze,"));
    for l in &lines[2..4] {
        let avg: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=100.0).contains(&avg));
    }
}

#[test]
fn ablate_grid_writes_one_report_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("grid");
    assert!(bin(&["--config", p(&cfg), "gen-data", "--out", p(&data)]).status.success());
    let o = bin(&[
        "--config",
        p(&cfg),
        "ablate",
        "--data",
        p(&data),
        "--grid",
        "vis,vis-move x none,legs",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let labels: Vec<&str> = results.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["random-init", "vis", "vis/mask-legs", "vis-move", "vis-move/mask-legs"]);
    for cell in ["vis", "vis_mask-legs", "vis-move", "vis-move_mask-legs"] {
        assert!(out.join(cell).join("report.csv").exists(), "{cell}");
    }
    let o = bin(&["ablate", "--data", p(&data), "--grid", "vis x tail", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}
