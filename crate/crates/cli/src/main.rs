//! `scvrl`: dataset generation, pretraining and evaluation from the shell.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 numerical
//! failure during a run.

mod run;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scvrl_core::config::{HeadsMode, Objective, PoolingMode};
use scvrl_core::eval::{
    checkpoint_id, lowshot_eval, motion_class_report, pct, relative_delta_pct, retrieve_topk, shuffle_eval,
    visual_embeddings, linear_probe, video_motion_scores, ProbeConfig, Report,
};
use scvrl_core::motion::{default_top_k, profile};
use scvrl_core::synthdata::{generate, Dataset, DatasetSpec};
use scvrl_core::trainer::{checkpoint_name, TrainState};
use scvrl_core::{Config, Error, Result};

use run::RunDir;

#[derive(Parser)]
#[command(name = "scvrl", version, about = "Shuffled contrastive video representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset described by a TOML spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-supervised pretraining; writes metrics and checkpoints.
    Pretrain(PretrainArgs),
    /// Linear probe on the frozen backbone of a checkpoint.
    Probe(EvalArgs),
    /// Probe accuracy on clean versus group-shuffled clips.
    EvalShuffle(EvalArgs),
    /// Nearest neighbours of one video in visual-head space.
    Retrieve {
        #[command(flatten)]
        eval: EvalArgs,
        /// Video id used as the query.
        #[arg(long)]
        query: u64,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Probe accuracy as a function of the labeled fraction.
    Lowshot {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.01, 0.05, 0.1, 0.25, 0.5, 1.0])]
        fractions: Vec<f64>,
        /// Second checkpoint for the relative-delta row.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Per-window motion amplitudes and sampling probabilities.
    MotionProfile {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one video id.
        #[arg(long)]
        video: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Edge pixels per frame; 0 scales with resolution.
        #[arg(long, default_value_t = 0)]
        top_k: usize,
    },
    /// Per-class accuracy difference of two checkpoints against class motion.
    MotionReport {
        #[arg(long)]
        checkpoint_a: PathBuf,
        #[arg(long)]
        checkpoint_b: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Side-by-side shuffle-sensitivity table of evaluated runs.
    Report {
        /// Directories containing `shuffle.tsv`, one per method.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct PretrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    objective: Option<Objective>,
    #[arg(long)]
    heads: Option<HeadsMode>,
    #[arg(long)]
    pooling: Option<PoolingMode>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    temporal_kernel: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after this many steps instead of the configured total.
    #[arg(long)]
    steps: Option<u64>,
    /// Continue from a checkpoint; its stored configuration is used.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { spec, out } => gen_data(&spec, &out),
        Command::Pretrain(a) => pretrain(a),
        Command::Probe(a) => probe(&a),
        Command::EvalShuffle(a) => eval_shuffle(&a),
        Command::Retrieve { eval, query, k } => retrieve(&eval, query, k),
        Command::Lowshot {
            eval,
            fractions,
            baseline,
        } => lowshot(&eval, &fractions, baseline.as_deref()),
        Command::MotionProfile {
            data,
            out,
            video,
            beta,
            top_k,
        } => motion_profile(&data, &out, video, beta, top_k),
        Command::MotionReport {
            checkpoint_a,
            checkpoint_b,
            data,
            out,
        } => motion_report(&checkpoint_a, &checkpoint_b, &data, &out),
        Command::Report { runs, out } => report(&runs, &out),
    }
}

fn gen_data(spec_path: &Path, out: &Path) -> Result<()> {
    let spec = DatasetSpec::load(spec_path)?;
    spec.validate()?;
    let data = generate(&spec)?;
    let mut run = RunDir::open(out, "gen-data")?;
    data.save(out)?;
    run.record("manifest.json");
    for s in &data.samples {
        run.record(&format!("video_{:05}.bin", s.id));
    }
    run.finish()?;
    println!("wrote {} videos to {}", data.len(), out.display());
    Ok(())
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let mut state = match &a.resume {
        Some(path) => TrainState::<f32>::load(path)?,
        None => {
            let mut cfg = match &a.config {
                Some(p) => Config::load(p)?,
                None => Config::default(),
            };
            if let Some(o) = a.objective {
                cfg.objective = o;
            }
            if let Some(h) = a.heads {
                cfg.heads_mode = h;
            }
            if let Some(p) = a.pooling {
                cfg.pooling_mode = p;
            }
            if let Some(b) = a.beta {
                cfg.beta = b;
            }
            if let Some(k) = a.temporal_kernel {
                cfg.temporal_kernel = k;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            cfg.ensure_valid()?;
            TrainState::<f32>::initialize(&cfg, &data)?
        }
    };
    let mut run = RunDir::open(&a.out, "pretrain")?;
    run.set_config(state.cfg.hash(), state.cfg.seed);
    run.write("config.toml", &state.cfg.to_toml())?;
    let until = a.steps.unwrap_or(state.cfg.total_steps);
    let ckpt_dir = run.file("checkpoints");
    if a.resume.is_none() {
        state.save(&ckpt_dir.join(checkpoint_name(0)))?;
    }
    let metrics_path = run.file("metrics.jsonl");
    let mut metrics = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut write_err = None;
    let outcome = state.run(&data, until, Some(&ckpt_dir), &mut |m| {
        if let Err(e) = writeln!(metrics, "{}", m.to_json_line()) {
            write_err.get_or_insert(e);
        }
    });
    run.record("metrics.jsonl");
    if let Some(e) = write_err {
        return Err(Error::io(&metrics_path, e));
    }
    if let Ok(entries) = fs::read_dir(&ckpt_dir) {
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| format!("checkpoints/{}", e.file_name().to_string_lossy()))
            .collect();
        names.sort();
        for n in names {
            run.record(&n);
        }
    }
    run.finish()?;
    let last = outcome?;
    if let Some(p) = last {
        println!("{}", p.display());
    }
    Ok(())
}

struct Loaded {
    state: TrainState<f32>,
    id: String,
    data: Dataset,
}

fn load_eval(a: &EvalArgs) -> Result<Loaded> {
    let bytes = fs::read(&a.checkpoint).map_err(|e| Error::io(&a.checkpoint, e))?;
    let state = TrainState::<f32>::from_bytes(&bytes)?;
    let data = Dataset::load(&a.data)?;
    Ok(Loaded {
        state,
        id: checkpoint_id(&bytes),
        data,
    })
}

fn emit(run: &mut RunDir, stem: &str, report: &Report) -> Result<()> {
    run.write(&format!("{stem}.tsv"), &report.to_tsv())?;
    let text = report.to_text();
    run.write(&format!("{stem}.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn probe(a: &EvalArgs) -> Result<()> {
    let l = load_eval(a)?;
    let cfg = &l.state.cfg;
    let mut run = RunDir::open(&a.out, "probe")?;
    run.set_config(cfg.hash(), cfg.seed);
    let r = linear_probe(&l.state.online, &l.data, cfg, &ProbeConfig::from_config(cfg))?;
    let mut rep = Report::new("linear probe", &cfg.hash(), &l.id, &["class", "accuracy", "n"]);
    for (c, name) in l.data.spec.class_names().iter().enumerate() {
        rep.push(vec![
            name.clone(),
            r.result.per_class[c].map(pct).unwrap_or_else(|| "-".into()),
            r.result.per_class_count[c].to_string(),
        ]);
    }
    rep.push(vec!["top1".into(), pct(r.result.top1), r.result.n_eval.to_string()]);
    emit(&mut run, "probe", &rep)?;
    run.finish()
}

fn eval_shuffle(a: &EvalArgs) -> Result<()> {
    let l = load_eval(a)?;
    let cfg = &l.state.cfg;
    let mut run = RunDir::open(&a.out, "eval-shuffle")?;
    run.set_config(cfg.hash(), cfg.seed);
    let p = linear_probe(&l.state.online, &l.data, cfg, &ProbeConfig::from_config(cfg))?;
    let s = shuffle_eval(&l.state.online, &p.probe, &l.data, &p.split.test, cfg, cfg.seed)?;
    let mut rep = Report::new(
        &format!("shuffle sensitivity ({})", cfg.objective.as_str()),
        &cfg.hash(),
        &l.id,
        &["normal", "shuffled", "drop"],
    );
    rep.push(vec![pct(s.acc_normal), pct(s.acc_shuffled), pct(s.drop)]);
    emit(&mut run, "shuffle", &rep)?;
    run.finish()
}

fn retrieve(a: &EvalArgs, query: u64, k: usize) -> Result<()> {
    let l = load_eval(a)?;
    let cfg = &l.state.cfg;
    let q = l
        .data
        .samples
        .iter()
        .position(|s| s.id == query)
        .ok_or_else(|| Error::InvalidArgument(format!("no video with id {query}")))?;
    let mut run = RunDir::open(&a.out, "retrieve")?;
    run.set_config(cfg.hash(), cfg.seed);
    let gallery = visual_embeddings(&l.state.online, &l.data, cfg)?;
    let hits = retrieve_topk(&gallery[q], &gallery, k)?;
    let names = l.data.spec.class_names();
    let mut rep = Report::new(
        &format!("retrieval for video {query}"),
        &cfg.hash(),
        &l.id,
        &["rank", "video", "class", "similarity"],
    );
    for (rank, (i, sim)) in hits.iter().enumerate() {
        let s = &l.data.samples[*i];
        rep.push(vec![
            (rank + 1).to_string(),
            s.id.to_string(),
            names[s.label].clone(),
            format!("{sim:.6}"),
        ]);
    }
    emit(&mut run, "retrieval", &rep)?;
    run.finish()
}

fn lowshot(a: &EvalArgs, fractions: &[f64], baseline: Option<&Path>) -> Result<()> {
    let l = load_eval(a)?;
    let cfg = &l.state.cfg;
    let pc = ProbeConfig::from_config(cfg);
    let labels = l.data.labels();
    let n = l.data.spec.n_classes();
    let feats = scvrl_core::eval::extract_features(&l.state.online, &l.data, cfg)?;
    let rows = lowshot_eval(&feats, &labels, n, fractions, &pc)?;
    let base_rows = match baseline {
        Some(p) => {
            let b = TrainState::<f32>::load(p)?;
            let bf = scvrl_core::eval::extract_features(&b.online, &l.data, &b.cfg)?;
            Some(lowshot_eval(&bf, &labels, n, fractions, &pc)?)
        }
        None => None,
    };
    let mut run = RunDir::open(&a.out, "lowshot")?;
    run.set_config(cfg.hash(), cfg.seed);
    let mut cols = vec!["fraction", "n_train", "accuracy"];
    if base_rows.is_some() {
        cols.extend(["baseline", "rel. Δ%"]);
    }
    let mut rep = Report::new("low-shot probe", &cfg.hash(), &l.id, &cols);
    for (i, r) in rows.iter().enumerate() {
        let mut row = vec![format!("{}%", 100.0 * r.fraction), r.n_train.to_string(), pct(r.accuracy)];
        if let Some(b) = &base_rows {
            row.push(pct(b[i].accuracy));
            row.push(format!("{:+.1}", relative_delta_pct(r.accuracy, b[i].accuracy)));
        }
        rep.push(row);
    }
    emit(&mut run, "lowshot", &rep)?;
    run.finish()
}

fn motion_profile(data_dir: &Path, out: &Path, video: Option<u64>, beta: f64, top_k: usize) -> Result<()> {
    let data = Dataset::load(data_dir)?;
    let mut run = RunDir::open(out, "motion-profile")?;
    let mut rep = Report::new("motion profile", "-", "-", &["video_id", "window", "m_i", "p_i"]);
    let mut found = false;
    for s in &data.samples {
        if video.is_some_and(|v| v != s.id) {
            continue;
        }
        found = true;
        let k = if top_k == 0 {
            default_top_k(s.video.height(), s.video.width())
        } else {
            top_k
        };
        let p = profile(&s.video, k, beta)?;
        for w in &p.warnings {
            eprintln!("warning: video {}: {w}", s.id);
        }
        for (i, (m, pi)) in p.amplitudes.iter().zip(&p.probabilities).enumerate() {
            rep.push(vec![s.id.to_string(), i.to_string(), format!("{m:.6}"), format!("{pi:.6}")]);
        }
    }
    if !found {
        return Err(Error::InvalidArgument(format!("no video with id {}", video.unwrap_or(0))));
    }
    run.write("motion_profile.tsv", &rep.to_tsv())?;
    run.finish()?;
    print!("{}", rep.to_tsv());
    Ok(())
}

fn motion_report(a: &Path, b: &Path, data_dir: &Path, out: &Path) -> Result<()> {
    let bytes_a = fs::read(a).map_err(|e| Error::io(a, e))?;
    let bytes_b = fs::read(b).map_err(|e| Error::io(b, e))?;
    let sa = TrainState::<f32>::from_bytes(&bytes_a)?;
    let sb = TrainState::<f32>::from_bytes(&bytes_b)?;
    let data = Dataset::load(data_dir)?;
    let ra = linear_probe(&sa.online, &data, &sa.cfg, &ProbeConfig::from_config(&sa.cfg))?;
    let rb = linear_probe(&sb.online, &data, &sb.cfg, &ProbeConfig::from_config(&sb.cfg))?;
    let scores = video_motion_scores(&data, &sa.cfg)?;
    let rows = motion_class_report(&ra.result, &rb.result, &data.spec.class_names(), &data.labels(), &scores);
    let mut run = RunDir::open(out, "motion-report")?;
    run.set_config(sa.cfg.hash(), sa.cfg.seed);
    let id = format!("{} vs {}", checkpoint_id(&bytes_a), checkpoint_id(&bytes_b));
    let mut rep = Report::new("per-class gain against motion", &sa.cfg.hash(), &id, &["Category", "Motion", "Δ Acc."]);
    for r in rows {
        rep.push(vec![r.category, format!("{:.4}", r.motion), format!("{:+.1}", 100.0 * r.delta_accuracy)]);
    }
    rep.notes
        .push("Motion is the raw median edge amplitude of frame differences (not normalized to [0, 1]).".into());
    emit(&mut run, "motion_report", &rep)?;
    run.finish()
}

/// Reads the single data row of a `shuffle.tsv`.
fn read_shuffle(dir: &Path) -> Result<(String, [String; 3])> {
    let p = dir.join("shuffle.tsv");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let mut title = dir.display().to_string();
    let mut data = None;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# shuffle sensitivity (") {
            title = rest.trim_end_matches(')').to_string();
        } else if !line.starts_with('#') && !line.starts_with("normal") {
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() == 3 {
                data = Some([cells[0].into(), cells[1].into(), cells[2].into()]);
            }
        }
    }
    let row = data.ok_or_else(|| Error::Parse {
        path: p.display().to_string(),
        line: 0,
        message: "no data row".into(),
    })?;
    Ok((title, row))
}

fn report(runs: &[PathBuf], out: &Path) -> Result<()> {
    let rows = runs.iter().map(|d| read_shuffle(d)).collect::<Result<Vec<_>>>()?;
    let mut run = RunDir::open(out, "report")?;
    let mut rep = Report::new("normal vs shuffled inference", "-", "-", &["Method", "Normal", "Shuffled", "Drop"]);
    for (name, [n, s, d]) in rows {
        rep.push(vec![name, n, s, format!("({d})")]);
    }
    emit(&mut run, "report", &rep)?;
    run.finish()
}
