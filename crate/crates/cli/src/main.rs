use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use lpnet::body::TemplateConfig;
use lpnet::harness::{evaluate, run_gradcheck, train, write_transfer_grid, Checkpoint, TrainConfig, Trainer, SUITES};
use lpnet::render::{render_coordinate_map, RasterGeometry};
use lpnet::synth::image::{write_png, write_png_bytes};
use lpnet::synth::{eval_pairs, Dataset, Pair, PairMode, Split, SynthConfig};

#[derive(Parser)]
#[command(name = "lpnet", version, about = "Pose transfer with a lifted body mesh")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with dataset settings; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the 72-vertex template.
        #[arg(long)]
        tiny: bool,
    },
    /// Train a model. Without --config the desk-scale settings are used.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Print a progress line every this many steps (0: silent).
        #[arg(long, default_value_t = 50)]
        every: usize,
    },
    /// Re-pose the figure of one frame into the pose of another.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Frame that supplies appearance and body shape.
        #[arg(long)]
        source: usize,
        /// Frame that supplies pose and camera.
        #[arg(long)]
        target: usize,
        /// Output PNG: source | target body | result | ground truth.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients in double precision.
    Gradcheck {
        /// Suite name prefix, or `all`.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long)]
        json: bool,
    },
    /// Score a checkpoint on fixed self-transfer pairs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        /// Also write a grid of the first eight pairs.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Dump coverage, face id and body coordinates of one frame as PNGs.
    Render {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_trainer(checkpoint: &Path, dataset: &Path) -> Result<Trainer> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let ds = Arc::new(Dataset::load(dataset)?);
    Ok(Trainer::from_checkpoint(&ckpt, ds)?)
}

fn gen_data(out: &Path, config: Option<&Path>, resolution: Option<usize>, seed: Option<u64>, tiny: bool) -> Result<()> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            toml::from_str(&text).with_context(|| p.display().to_string())?
        }
        None => SynthConfig::default(),
    };
    if let Some(r) = resolution {
        cfg.resolution = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if tiny {
        cfg.template = TemplateConfig::tiny();
    }
    let ds = Dataset::generate(&cfg)?;
    ds.write(out)?;
    println!(
        "wrote {} frames ({} train, {} test) to {}",
        ds.len(),
        ds.indices(Split::Train).len(),
        ds.indices(Split::Test).len(),
        out.display()
    );
    Ok(())
}

fn run_train(
    config: Option<&Path>,
    dataset: Option<PathBuf>,
    output: Option<PathBuf>,
    steps: Option<usize>,
    resume: bool,
    every: usize,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::desk(),
    };
    if let Some(d) = dataset {
        cfg.dataset = d;
    }
    if let Some(o) = output {
        cfg.output = o;
    }
    if steps.is_some() {
        cfg.steps = steps;
    }
    cfg.apply_seed_env()?;
    cfg.validate()?;
    let s = train(cfg, resume, |r| {
        if every > 0 && (r.step + 1) % every == 0 {
            eprintln!(
                "step {:>6}  G {:.4}  D {:.4}  rec {:.4}  perc {:.4}  mask {:.4}  lr {:.2e}",
                r.step + 1,
                r.loss_g,
                r.loss_d,
                r.rec,
                r.perc,
                r.mask,
                r.lr_g
            );
        }
    })?;
    println!(
        "trained {} steps; checkpoint {}; log {}",
        s.steps,
        s.checkpoint.display(),
        s.log.display()
    );
    Ok(())
}

fn transfer(checkpoint: &Path, dataset: &Path, source: usize, target: usize, out: &Path) -> Result<()> {
    let t = load_trainer(checkpoint, dataset)?;
    let ds = &t.dataset;
    if source >= ds.len() || target >= ds.len() {
        bail!("frame index out of range (dataset has {} frames)", ds.len());
    }
    let same_sequence = ds.records[source].sequence == ds.records[target].sequence
        && ds.records[source].split == ds.records[target].split;
    let mode = if same_sequence {
        PairMode::SelfTransfer
    } else {
        PairMode::Cross
    };
    write_transfer_grid(out, &t.net, ds, &[Pair::new(ds, source, target, mode)])?;
    println!("wrote {}", out.display());
    Ok(())
}

fn gradcheck(scope: &str, json: bool) -> Result<bool> {
    if scope != "all" && !SUITES.iter().any(|s| s.starts_with(scope)) {
        bail!("no gradient suite matches `{scope}`; known: {}", SUITES.join(", "));
    }
    let results = run_gradcheck(scope)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&results)?);
    } else {
        for r in &results {
            println!(
                "{:<4} {:<26} max rel err {:.3e}  checked {:>5}  excluded {:>3}",
                if r.passed { "ok" } else { "FAIL" },
                r.name,
                r.max_rel_err,
                r.checked,
                r.excluded
            );
        }
    }
    Ok(results.iter().all(|r| r.passed))
}

fn eval(checkpoint: &Path, dataset: &Path, split: Split, batch: usize, grid: Option<&Path>) -> Result<()> {
    let t = load_trainer(checkpoint, dataset)?;
    let report = evaluate(&t.net, &t.dataset, split, batch)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(g) = grid {
        let pairs = eval_pairs(&t.dataset, split);
        write_transfer_grid(g, &t.net, &t.dataset, &pairs[..pairs.len().min(8)])?;
    }
    Ok(())
}

/// Distinct, stable colour per face.
fn face_color(id: i32) -> [u8; 3] {
    if id < 0 {
        return [0, 0, 0];
    }
    let h = (id as u32).wrapping_mul(2_654_435_761);
    [(h >> 24) as u8 | 0x40, (h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40]
}

fn render(dataset: &Path, index: usize, out: &Path) -> Result<()> {
    let ds = Dataset::load(dataset)?;
    if index >= ds.len() {
        bail!("frame index out of range (dataset has {} frames)", ds.len());
    }
    let r = ds.config.resolution;
    let mesh = ds.mesh(index)?;
    let camera = ds.records[index].camera;
    let g = RasterGeometry::new(&mesh, &camera, r, r)?;
    std::fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    let cov: Vec<u8> = g.coverage().iter().map(|&c| (c * 255.0).round() as u8).collect();
    write_png_bytes(&out.join("coverage.png"), 1, r, r, &cov)?;
    let mut faces = vec![0u8; 3 * r * r];
    for (p, &f) in g.face_id.iter().enumerate() {
        let c = face_color(f);
        for k in 0..3 {
            faces[k * r * r + p] = c[k];
        }
    }
    write_png_bytes(&out.join("faces.png"), 3, r, r, &faces)?;
    let coords = render_coordinate_map(&mesh, &camera, r, r)?.map(|v| v.clamp(-1.0, 1.0));
    write_png(&out.join("coords.png"), &coords)?;
    println!(
        "{} of {} pixels covered; wrote {}",
        g.covered_pixels(),
        r * r,
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            out,
            config,
            resolution,
            seed,
            tiny,
        } => gen_data(&out, config.as_deref(), resolution, seed, tiny).map(|_| true),
        Command::Train {
            config,
            dataset,
            output,
            steps,
            resume,
            every,
        } => run_train(config.as_deref(), dataset, output, steps, resume, every).map(|_| true),
        Command::Transfer {
            checkpoint,
            dataset,
            source,
            target,
            out,
        } => transfer(&checkpoint, &dataset, source, target, &out).map(|_| true),
        Command::Gradcheck { scope, json } => gradcheck(&scope, json),
        Command::Eval {
            checkpoint,
            dataset,
            split,
            batch,
            grid,
        } => eval(&checkpoint, &dataset, split, batch, grid.as_deref()).map(|_| true),
        Command::Render { dataset, index, out } => render(&dataset, index, &out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
