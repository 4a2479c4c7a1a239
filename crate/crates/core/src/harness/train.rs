use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::checkpoint::{adam_config, restore_store, Checkpoint};
use super::config::TrainConfig;
use super::model::{stack, Batch, LpNet, PreparedPair, Which};
use crate::error::{Error, Result};
use crate::losses::{lsgan_d_loss, lsgan_g_loss, mask_loss, rec_loss, GeneratorLosses, PerceptualExtractor};
use crate::synth::{stream_rng, Dataset, Pair, PairMode, PairSampler, Split};
use crate::tensor::{AdamState, Gradients, Tape, Tensor, Var};

pub const LOG_FILE: &str = "loss.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub step: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub rec: f64,
    pub perc: f64,
    pub adv: f64,
    pub mask: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?);
    }
    Ok(out)
}

/// Training state. Each step draws its pairs from a stream keyed by the
/// step number, so a resumed run sees the same data as an uninterrupted
/// one.
pub struct Trainer {
    pub config: TrainConfig,
    pub dataset: Arc<Dataset>,
    pub net: LpNet,
    pub adam_gen: AdamState<f32>,
    pub adam_disc: AdamState<f32>,
    pub step: usize,
    perc: PerceptualExtractor<f32>,
}

fn param_grads(grads: &Gradients<f32>, vars: &[Var<f32>]) -> Vec<Tensor<f32>> {
    vars.iter().map(|v| grads.get(v)).collect()
}

fn scalar(v: &Var<f32>) -> f64 {
    v.data()[0] as f64
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: Arc<Dataset>) -> Result<Self> {
        config.validate()?;
        if dataset.config.resolution != config.resolution {
            return Err(Error::Config(format!(
                "dataset resolution {} differs from training resolution {}",
                dataset.config.resolution, config.resolution
            )));
        }
        if dataset.indices(Split::Train).is_empty() {
            return Err(Error::Config("dataset has no training frames".into()));
        }
        let net = LpNet::new(
            dataset.template.clone(),
            &config.model,
            config.disc_width,
            config.seeds.init,
        )?;
        let adam = adam_config(&config);
        Ok(Self {
            adam_gen: AdamState::new(adam, net.gen.values()),
            adam_disc: AdamState::new(adam, net.disc_params.values()),
            net,
            dataset,
            step: 0,
            perc: PerceptualExtractor::new(),
            config,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dataset: Arc<Dataset>) -> Result<Self> {
        let mut t = Self::new(ckpt.config.clone(), dataset)?;
        restore_store(&mut t.net.gen, &ckpt.gen)?;
        restore_store(&mut t.net.disc_params, &ckpt.disc)?;
        t.adam_gen = ckpt.adam_gen.clone();
        t.adam_disc = ckpt.adam_disc.clone();
        t.step = ckpt.step as usize;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step as u64,
            gen: self.net.gen.clone(),
            disc: self.net.disc_params.clone(),
            adam_gen: self.adam_gen.clone(),
            adam_disc: self.adam_disc.clone(),
        }
    }

    pub fn total_steps(&self) -> usize {
        self.config.total_steps(self.dataset.indices(Split::Train).len())
    }

    pub fn lr_g(&self) -> f64 {
        self.config.lr_g_at(self.step, self.dataset.indices(Split::Train).len())
    }

    /// Pairs of the current step.
    pub fn step_pairs(&self) -> Result<Vec<Pair>> {
        let rng = stream_rng(self.config.seeds.data, "pairs", self.step as u64);
        let mut sampler = PairSampler::from_rng(PairMode::SelfTransfer, rng);
        (0..self.config.batch_size)
            .map(|_| sampler.next(&self.dataset, Split::Train))
            .collect()
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self) -> Result<LogRecord> {
        let step = self.step;
        let nonfinite = |what: &str| Error::NonFinite(format!("{what} at step {step}"));
        let pairs = self.step_pairs()?;
        let prepared = prepare_pairs(&self.dataset, &pairs)?;
        let batch = Batch::<f32>::new(prepared.iter().collect())?;
        let targets: Vec<Tensor<f64>> = pairs.iter().map(|p| self.dataset.samples[p.target].image()).collect();
        let target_images = Var::constant(stack::<f32>(&targets.iter().collect::<Vec<_>>())?);
        let source_images = batch.source_image.clone();

        let tape = Tape::new();
        let pg = self.net.gen.bind(Some(&tape));
        let out = self.net.generate(&pg, &batch, Which::Both)?;

        // Discriminator on real targets and detached fakes.
        let lr_d = self.config.lr_d;
        let d_tape = Tape::new();
        let pd = self.net.disc_params.bind(Some(&d_tape));
        let fake = Var::constant(out.target.value().clone());
        let loss_d = lsgan_d_loss(
            &self.net.disc.forward(&pd, &target_images, &batch.tgt_coords)?,
            &self.net.disc.forward(&pd, &fake, &batch.tgt_coords)?,
        )?;
        if !loss_d.value().all_finite() {
            return Err(nonfinite("discriminator loss"));
        }
        let gd = param_grads(&loss_d.backward()?, pd.vars());
        let names = self.net.disc_params.names().to_vec();
        self.adam_disc
            .step(self.net.disc_params.values_mut(), &names, &gd, lr_d)?;

        // Generator against the updated discriminator.
        let pdc = self.net.disc_params.bind(None);
        let source = out.source.as_ref().expect("source reconstruction");
        let parts = GeneratorLosses {
            rec: rec_loss(source, &source_images)?,
            perc: self.perc.loss(&out.target, &target_images)?,
            adv: lsgan_g_loss(&self.net.disc.forward(&pdc, &out.target, &batch.tgt_coords)?),
            mask: mask_loss(&out.target_mask, &batch.tgt_silhouette)?,
            face: None,
        };
        let total = parts.total(&self.config.weights)?;
        if !total.value().all_finite() {
            return Err(nonfinite("generator loss"));
        }
        let lr_g = self.lr_g();
        let gg = param_grads(&total.backward()?, pg.vars());
        let names = self.net.gen.names().to_vec();
        self.adam_gen.step(self.net.gen.values_mut(), &names, &gg, lr_g)?;
        self.step += 1;
        Ok(LogRecord {
            step,
            loss_d: scalar(&loss_d),
            loss_g: scalar(&total),
            rec: scalar(&parts.rec),
            perc: scalar(&parts.perc),
            adv: scalar(&parts.adv),
            mask: scalar(&parts.mask),
            lr_g,
            lr_d,
        })
    }

    /// Runs until `until` steps have been taken, handing each record to
    /// `sink`.
    pub fn run_until(&mut self, until: usize, mut sink: impl FnMut(&LogRecord) -> Result<()>) -> Result<()> {
        while self.step < until {
            let rec = self.train_step()?;
            sink(&rec)?;
        }
        Ok(())
    }
}

/// Network inputs for dataset pairs.
pub fn prepare_pairs(ds: &Dataset, pairs: &[Pair]) -> Result<Vec<PreparedPair>> {
    pairs
        .iter()
        .map(|p| {
            let s = &ds.samples[p.source];
            PreparedPair::new(
                &ds.template,
                &s.image(),
                &s.mask,
                &ds.records[p.source].params(),
                &p.target_params,
            )
        })
        .collect()
}

/// Outcome of [`train`].
pub struct TrainSummary {
    pub steps: usize,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub last: Option<LogRecord>,
}

/// Trains from `config`, writing the loss log and checkpoints under
/// `config.output`. With `resume`, continues from the checkpoint there.
pub fn train(config: TrainConfig, resume: bool, mut progress: impl FnMut(&LogRecord)) -> Result<TrainSummary> {
    let dataset = Arc::new(Dataset::load(&config.dataset)?);
    let out = config.output.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(LOG_FILE);
    let mut trainer = if resume {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        if ckpt.config.hash() != config.hash() {
            return Err(Error::Config(format!(
                "{} was written with a different configuration",
                ckpt_path.display()
            )));
        }
        let mut t = Trainer::from_checkpoint(&ckpt, dataset)?;
        t.config = config;
        t
    } else {
        Trainer::new(config, dataset)?
    };
    // Drop log lines past the checkpoint so the log matches the state.
    let mut kept = Vec::new();
    if resume && log_path.exists() {
        kept = read_log(&log_path)?;
        kept.retain(|r| r.step < trainer.step);
    }
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    for r in &kept {
        writeln!(log, "{}", r.to_line()).map_err(|e| Error::io(&log_path, e))?;
    }
    let total = trainer.total_steps();
    let every = trainer.config.checkpoint_every;
    let mut last = kept.last().cloned();
    while trainer.step < total {
        let rec = trainer.train_step()?;
        writeln!(log, "{}", rec.to_line()).map_err(|e| Error::io(&log_path, e))?;
        progress(&rec);
        last = Some(rec);
        if every > 0 && trainer.step % every == 0 && trainer.step < total {
            trainer.checkpoint().save(&ckpt_path)?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    trainer.checkpoint().save(&ckpt_path)?;
    Ok(TrainSummary {
        steps: trainer.step,
        checkpoint: ckpt_path,
        log: log_path,
        last,
    })
}
