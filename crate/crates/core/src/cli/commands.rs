use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::config::AppConfig;
use super::selftest::{ordering_experiment, run_quick, OrderingConfig, ORDERING_SECONDS};
use super::{
    AblateArgs, Cli, CliError, Command, EvalArgs, ExitKind, GenDataArgs, MovementFromGazeArgs, Result, SelfTestArgs,
    SyncCommand, TrainArgs,
};
use crate::data::{generate_synthetic_world, read_dataset, write_dataset, Dataset};
use crate::encoder::PARTS;
use crate::nn::checkpoint::Checkpoint;
use crate::objectives::VisualMode;
use crate::sync::formats::{
    frame_times, label_histogram, read_correspondences, read_imu_csv, read_wav, write_labels_csv,
};
use crate::sync::{audio_offset, estimate_homography, label_movements, movement_magnitudes};
use crate::trainer::{load_model, movement_accuracy, parse_parts, ObjectiveMode, TrainConfig, Trainer};
use crate::transfer::{evaluate_tasks, split_indices, FrozenBackbone, ResultsTable, TaskKind};

pub(super) fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = AppConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => gen_data(cfg, a, out),
        Command::Train(a) => train(cfg, a, out),
        Command::Eval(a) => eval(cfg, a, out),
        Command::Ablate(a) => ablate(cfg, a, out),
        Command::Sync(s) => sync(cfg, s, out),
        Command::MovementFromGaze(a) => movement_from_gaze(cfg, a, out),
        Command::SelfTest(a) => self_test(a, out),
    }
}

fn load_data(dir: &Path) -> Result<Dataset> {
    read_dataset(dir).map_err(|e| CliError::new(ExitKind::Io, format!("dataset {}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::new(ExitKind::Io, format!("{}: {e}", path.display())))
}

fn parse_mode(s: &str) -> Result<ObjectiveMode> {
    ObjectiveMode::parse(s).ok_or_else(|| {
        CliError::usage(format!("unknown mode `{s}`; expected vis, vis-attn, vis-move or vis-move-attn"))
    })
}

fn parse_visual(s: &str) -> Result<VisualMode> {
    VisualMode::parse(s)
        .ok_or_else(|| CliError::usage(format!("unknown visual mode `{s}`; expected infonce, ae or none")))
}

fn parse_tasks(s: &str) -> Result<Vec<TaskKind>> {
    TaskKind::parse_list(s).ok_or_else(|| {
        CliError::usage(format!("unknown task list `{s}`; expected all or scene,action,dynamics,walkable,depth"))
    })
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(String::from).collect()
}

/// Fits the model geometry to the dataset it trains on.
fn fit_to(train: &mut TrainConfig, ds: &Dataset) {
    train.model.backbone.input_size = ds.image_size;
    train.model.seq_len = ds.seq_len;
}

fn gen_data(mut cfg: AppConfig, a: GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let w = &mut cfg.world;
    if let Some(n) = a.seqs {
        w.num_sequences = n;
    }
    if let Some(n) = a.noise {
        w.noise = n;
    }
    if let Some(n) = a.image_size {
        w.image_size = n;
    }
    if let Some(n) = a.seq_len {
        w.seq_len = n;
    }
    let ds = generate_synthetic_world(&cfg.world, a.seed)?;
    write_dataset(&ds, &a.out)?;
    let report = serde_json::json!({"command": "gen-data", "seed": a.seed, "config": cfg.to_json()});
    let mut f = create(&a.out.join("generation.json"))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&report).expect("json"))?;
    f.flush()?;
    writeln!(
        out,
        "sequences={} image_size={} seq_len={} out={}",
        ds.len(),
        ds.image_size,
        ds.seq_len,
        a.out.display()
    )?;
    Ok(())
}

fn apply_train_flags(cfg: &mut AppConfig, a: &TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(m) = &a.mode {
        t.mode = parse_mode(m)?;
    }
    if let Some(v) = &a.visual {
        t.visual = parse_visual(v)?;
    }
    if let Some(p) = &a.mask_parts {
        t.mask_parts = split_list(p);
        parse_parts(&t.mask_parts).map_err(|e| CliError::usage(e.to_string()))?;
    }
    if let Some(n) = a.epochs {
        t.epochs = n;
    }
    if let Some(n) = a.seed {
        t.seed = n;
    }
    if let Some(n) = a.batch_size {
        t.batch_size = n;
    }
    if let Some(n) = a.lr {
        t.lr = Some(n);
    }
    Ok(())
}

fn train(mut cfg: AppConfig, a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_data(&a.data)?;
    apply_train_flags(&mut cfg, &a)?;
    fit_to(&mut cfg.train, &ds);
    let mut trainer = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p).map_err(|e| CliError::new(ExitKind::Io, format!("{}: {e}", p.display())))?;
            Trainer::resume_with(&ck, &ds, cfg.train.clone())?
        }
        None => Trainer::new(cfg.train.clone(), &ds)?,
    };
    let label = trainer.config().mode.name();
    let mut report = trainer.run(&ds, |e| {
        eprintln!(
            "{label} epoch {} L_total={:.6} L_attn={:.6} L_move={:.6} L_vis={:.6}",
            e.epoch, e.total, e.attention, e.movement, e.visual
        )
    })?;
    trainer.checkpoint().save(&a.out)?;
    report.checkpoint = Some(a.out.clone());
    let mut f = create(&a.out.join("report.csv"))?;
    report.write_csv(&mut f)?;
    f.flush()?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    writeln!(
        out,
        "mode={} visual={} steps={} final_loss={:.6} checkpoint={}",
        report.config.mode.name(),
        report.config.visual.name(),
        report.steps,
        report.epochs.last().map_or(f64::NAN, |e| e.total),
        a.out.display()
    )?;
    Ok(())
}

fn row_label(train: &TrainConfig) -> String {
    let mut label = train.mode.name().to_string();
    if train.visual != VisualMode::Infonce {
        label = format!("{label}/{}", train.visual.name());
    }
    if !train.mask_parts.is_empty() {
        label = format!("{label}/mask-{}", train.mask_parts.join("+"));
    }
    label
}

fn eval(mut cfg: AppConfig, a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let tasks = parse_tasks(&a.tasks)?;
    if let Some(n) = a.epochs {
        cfg.transfer.epochs = n;
    }
    let ck =
        Checkpoint::load(&a.ckpt).map_err(|e| CliError::new(ExitKind::Io, format!("{}: {e}", a.ckpt.display())))?;
    let (model, store, train) = load_model(&ck)?;
    let (ds, source) = match &a.data {
        Some(dir) => (load_data(dir)?, serde_json::json!({"data": dir})),
        None => {
            cfg.world.image_size = model.config.backbone.input_size;
            cfg.world.seq_len = model.config.seq_len;
            let ds = generate_synthetic_world(&cfg.world, a.seed)?;
            (ds, serde_json::json!({"world": cfg.world, "world_seed": a.seed}))
        }
    };
    let bb = FrozenBackbone::from_model(&model, &store)?;
    let mut table = ResultsTable {
        config: serde_json::json!({"command": "eval", "checkpoint": a.ckpt, "train": train, "transfer": cfg.transfer, "eval_data": source}),
        ..Default::default()
    };
    let label = a.label.clone().unwrap_or_else(|| row_label(&train));
    table.push(label, evaluate_tasks(&bb, &tasks, &ds, &cfg.transfer)?);
    if a.random_baseline {
        let random = FrozenBackbone::random(model.config.backbone.clone(), train.seed)?;
        table.push("random-init", evaluate_tasks(&random, &tasks, &ds, &cfg.transfer)?);
    }
    let mut f = create(&a.out)?;
    table.write_csv(&mut f)?;
    f.flush()?;
    table.write_csv(&mut *out)?;
    Ok(())
}

struct GridCell {
    mode: ObjectiveMode,
    mask: Vec<String>,
}

fn parse_grid(s: &str) -> Result<Vec<GridCell>> {
    let s = s.replace('×', "x");
    let mut halves = s.splitn(2, " x ").map(str::trim);
    let modes = halves.next().unwrap_or("all");
    let masks = halves.next().unwrap_or("none");
    let modes: Vec<ObjectiveMode> = if modes == "all" {
        ObjectiveMode::ALL.to_vec()
    } else {
        split_list(modes).iter().map(|m| parse_mode(m)).collect::<Result<_>>()?
    };
    let mut cells = Vec::new();
    for mode in modes {
        for mask in split_list(masks) {
            let parts: Vec<String> =
                if mask == "none" { Vec::new() } else { mask.split('+').map(String::from).collect() };
            parse_parts(&parts).map_err(|e| CliError::usage(format!("grid mask `{mask}`: {e}")))?;
            cells.push(GridCell { mode, mask: parts });
        }
    }
    if cells.is_empty() {
        return Err(CliError::usage(format!("grid `{s}` has no cells")));
    }
    Ok(cells)
}

fn ablate(mut cfg: AppConfig, a: AblateArgs, out: &mut dyn Write) -> Result<()> {
    let cells = parse_grid(&a.grid)?;
    let tasks = parse_tasks(&a.tasks)?;
    let ds = load_data(&a.data)?;
    if let Some(v) = &a.visual {
        cfg.train.visual = parse_visual(v)?;
    }
    if let Some(n) = a.epochs {
        cfg.train.epochs = n;
    }
    fit_to(&mut cfg.train, &ds);
    let mut table = ResultsTable {
        config: serde_json::json!({"command": "ablate", "grid": a.grid, "data": a.data, "config": cfg.to_json()}),
        ..Default::default()
    };
    let random = FrozenBackbone::random(cfg.train.model.backbone.clone(), cfg.train.seed)?;
    table.push("random-init", evaluate_tasks(&random, &tasks, &ds, &cfg.transfer)?);
    for cell in cells {
        let train = TrainConfig { mode: cell.mode, mask_parts: cell.mask, ..cfg.train.clone() };
        let label = row_label(&train);
        let dir = a.out.join(label.replace('/', "_"));
        let mut trainer = Trainer::new(train, &ds)?;
        let mut report = trainer.run(&ds, |e| eprintln!("{label} epoch {} L_total={:.6}", e.epoch, e.total))?;
        trainer.checkpoint().save(&dir)?;
        report.checkpoint = Some(dir.clone());
        let mut f = create(&dir.join("report.csv"))?;
        report.write_csv(&mut f)?;
        f.flush()?;
        let bb = FrozenBackbone::from_model(trainer.model(), trainer.params())?;
        let results = evaluate_tasks(&bb, &tasks, &ds, &cfg.transfer)?;
        eprintln!(
            "{label}: {}",
            results.iter().map(|r| format!("{}={:.4}", r.task.name(), r.value)).collect::<Vec<_>>().join(" ")
        );
        table.push(label, results);
    }
    let mut f = create(&a.out.join("results.csv"))?;
    table.write_csv(&mut f)?;
    f.flush()?;
    table.write_csv(&mut *out)?;
    Ok(())
}

fn sync(cfg: AppConfig, cmd: SyncCommand, out: &mut dyn Write) -> Result<()> {
    let s = cfg.sync;
    match cmd {
        SyncCommand::AudioOffset { a, b, min_overlap } => {
            let (wa, wb) = (read_wav(&a)?, read_wav(&b)?);
            if wa.rate != wb.rate {
                return Err(crate::sync::SyncError::RateMismatch(wa.rate, wb.rate).into());
            }
            let mut audio = s.audio;
            if let Some(m) = min_overlap {
                audio.min_overlap_seconds = m;
            }
            let rate = f64::from(wa.rate);
            let secs = audio_offset(&wa.samples, &wb.samples, rate, &audio)?;
            writeln!(out, "offset_seconds={secs:.9} offset_samples={:.4} rate={}", secs * rate, wa.rate)?;
        }
        SyncCommand::Homography { correspondences, threshold, seed } => {
            let f = File::open(&correspondences)
                .map_err(|e| CliError::new(ExitKind::Io, format!("{}: {e}", correspondences.display())))?;
            let pairs = read_correspondences(f)?;
            let mut r = s.ransac;
            if let Some(t) = threshold {
                r.threshold = t;
            }
            if let Some(v) = seed {
                r.seed = v;
            }
            let h = estimate_homography(&pairs, &r)?;
            for i in 0..3 {
                let row: Vec<String> = (0..3).map(|j| format!("{:.12e}", h.matrix[(i, j)])).collect();
                writeln!(out, "{}", row.join(","))?;
            }
            let rms = {
                let errs: Vec<f64> =
                    pairs.iter().map(|c| h.reprojection_error(c)).filter(|&e| e <= r.threshold).collect();
                (errs.iter().map(|e| e * e).sum::<f64>() / errs.len().max(1) as f64).sqrt()
            };
            writeln!(out, "inliers={}/{} inlier_rms_error={rms:.6e}", h.inliers, pairs.len())?;
        }
        SyncCommand::LabelMoves { imu, fps, out: dest } => {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(CliError::usage(format!("--fps must be positive, got {fps}")));
            }
            let f = File::open(&imu).map_err(|e| CliError::new(ExitKind::Io, format!("{}: {e}", imu.display())))?;
            let streams = read_imu_csv(f)?;
            let times = frame_times(&streams, fps)?;
            let mags: Vec<Vec<Option<f64>>> =
                streams.iter().map(|st| movement_magnitudes(st, &times, s.max_gap_intervals)).collect();
            let labels = label_movements(&mags)?;
            for w in &labels.warnings {
                eprintln!("warning: {w}");
            }
            for (part, counts) in label_histogram(&labels) {
                eprintln!("{part}: still={} moving={} gray={} missing={}", counts[0], counts[1], counts[2], counts[3]);
            }
            match dest {
                Some(p) => {
                    let mut f = create(&p)?;
                    write_labels_csv(&mut f, &labels, &times)?;
                    f.flush()?;
                    writeln!(out, "frames={} out={}", times.len().saturating_sub(1), p.display())?;
                }
                None => write_labels_csv(&mut *out, &labels, &times)?,
            }
        }
    }
    Ok(())
}

fn movement_from_gaze(mut cfg: AppConfig, a: MovementFromGazeArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_data(&a.data)?;
    if let Some(n) = a.epochs {
        cfg.train.epochs = n;
    }
    if let Some(n) = a.seed {
        cfg.train.seed = n;
    }
    let (tr, te) = split_indices(ds.len(), cfg.transfer.train_fraction, cfg.transfer.seed);
    if tr.is_empty() || te.is_empty() {
        return Err(CliError::usage(format!("{} sequences do not split into train and test", ds.len())));
    }
    let (train_ds, test_ds) = (ds.subset(&tr), ds.subset(&te));
    let mut base = TrainConfig {
        mode: ObjectiveMode::VisMove,
        visual: VisualMode::None,
        mask_parts: Vec::new(),
        ..cfg.train.clone()
    };
    fit_to(&mut base, &ds);
    let all: Vec<usize> = (0..test_ds.len()).collect();
    let mut rows = Vec::new();
    for (label, gaze) in [("visual", false), ("visual+gaze", true)] {
        let mut c = base.clone();
        c.model.gaze_conditioned = gaze;
        let mut trainer = Trainer::new(c, &train_ds)?;
        trainer.run(&train_ds, |e| eprintln!("{label} epoch {} L_move={:.6}", e.epoch, e.movement))?;
        let acc = movement_accuracy(trainer.model(), trainer.params(), &test_ds, &all, 64)?;
        rows.push((label, acc));
    }
    let mut text = Vec::new();
    let config = serde_json::json!({"command": "movement-from-gaze", "data": a.data, "train": base, "split": cfg.transfer.train_fraction, "split_seed": cfg.transfer.seed});
    writeln!(text, "# config: {config}")?;
    writeln!(text, "model,avg_accuracy,{}", PARTS.join(","))?;
    for (label, acc) in &rows {
        let parts: Vec<String> =
            acc.per_part.iter().map(|p| p.map(|v| format!("{v:.4}")).unwrap_or_default()).collect();
        writeln!(text, "{label},{:.4},{}", acc.average, parts.join(","))?;
    }
    if let Some(p) = &a.out {
        let mut f = create(p)?;
        f.write_all(&text)?;
        f.flush()?;
    }
    out.write_all(&text)?;
    Ok(())
}

fn self_test(a: SelfTestArgs, out: &mut dyn Write) -> Result<()> {
    let mut checks = run_quick();
    if a.full {
        let cfg = OrderingConfig::default();
        let outcome =
            ordering_experiment(&cfg, &mut |l| eprintln!("{l}")).map_err(|e| CliError::new(ExitKind::Numeric, e))?;
        checks.push(outcome.to_check(&cfg, ORDERING_SECONDS));
        checks.sort_by_key(|c| c.id);
    }
    for c in &checks {
        writeln!(out, "{c}")?;
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.id.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(ExitKind::Acceptance, format!("criteria {} failed", failed.join(","))))
    }
}
