use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    image, make_background, render_sample, sample_camera, sample_pose, stream_rng, Figure, PoseLimits, SceneSample,
    SynthConfig,
};
use crate::body::{lbs, make_template, BodyMesh, BodyParams, BodyTemplate, Camera};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CONFIG_FILE: &str = "dataset.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split `{s}` (train or test)"))),
        }
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub split: Split,
    /// Position within the split.
    pub index: usize,
    /// Frames of one sequence share figure and background.
    pub sequence: usize,
    pub image: String,
    pub mask: String,
    pub figure_id: usize,
    pub background_id: usize,
    pub theta: Vec<[f64; 3]>,
    pub beta: Vec<f64>,
    pub camera: Camera,
}

impl SampleRecord {
    pub fn params(&self) -> BodyParams {
        BodyParams {
            theta: self.theta.clone(),
            beta: self.beta.clone(),
            camera: self.camera,
        }
    }
}

/// Frames plus the generator state needed to re-render them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: SynthConfig,
    pub template: Arc<BodyTemplate>,
    pub figures: Vec<Figure>,
    pub records: Vec<SampleRecord>,
    pub samples: Vec<SceneSample>,
}

fn plan(config: &SynthConfig) -> Vec<(Split, usize, usize, usize)> {
    // (split, sequence, figure, background) per frame.
    let mut out = Vec::new();
    for f in 0..config.num_figures {
        for b in 0..config.num_backgrounds {
            let seq = f * config.num_backgrounds + b;
            out.extend((0..config.train_poses).map(|_| (Split::Train, seq, f, b)));
        }
    }
    for f in 0..config.num_figures {
        out.extend((0..config.test_poses).map(|_| (Split::Test, f, f, f % config.num_backgrounds)));
    }
    out
}

impl Dataset {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let template = Arc::new(make_template(config.template)?);
        let figures: Vec<Figure> = (0..config.num_figures)
            .map(|id| Figure::generate(&template, config.seed, id))
            .collect();
        let r = config.resolution;
        let backgrounds: Vec<Tensor<f64>> = (0..config.num_backgrounds)
            .map(|id| make_background(config.seed, id, r, r))
            .collect();
        let limits = PoseLimits::standard().scaled(config.pose_scale);
        let mut records = Vec::new();
        let mut samples = Vec::new();
        let mut counts = [0usize; 2];
        for (split, sequence, fig, bg) in plan(config) {
            let slot = split as usize;
            let index = counts[slot];
            counts[slot] += 1;
            let mut rng = stream_rng(config.seed, &format!("pose.{}", split.name()), index as u64);
            let theta = sample_pose(&mut rng, &limits);
            let camera = sample_camera(&mut rng);
            let params = BodyParams {
                theta,
                beta: figures[fig].beta.clone(),
                camera,
            };
            samples.push(render_sample(&template, &figures[fig], &params, &backgrounds[bg], bg)?);
            let stem = format!("{}_{index:05}", split.name());
            records.push(SampleRecord {
                split,
                index,
                sequence,
                image: format!("frames/{stem}.png"),
                mask: format!("masks/{stem}.png"),
                figure_id: fig,
                background_id: bg,
                theta: params.theta,
                beta: params.beta,
                camera,
            });
        }
        Ok(Self {
            config: config.clone(),
            template,
            figures,
            records,
            samples,
        })
    }

    /// Writes the config, the manifest and one image and mask PNG per frame.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in ["frames", "masks"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let cfg_path = dir.join(CONFIG_FILE);
        let cfg = serde_json::to_string_pretty(&self.config).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&cfg_path, cfg + "\n").map_err(|e| Error::io(&cfg_path, e))?;
        let man_path = dir.join(MANIFEST_FILE);
        let file = fs::File::create(&man_path).map_err(|e| Error::io(&man_path, e))?;
        let mut out = BufWriter::new(file);
        for (rec, s) in self.records.iter().zip(&self.samples) {
            let line = serde_json::to_string(rec).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| Error::io(&man_path, e))?;
            image::write_png_bytes(&dir.join(&rec.image), 3, s.height, s.width, &s.rgb)?;
            let mask: Vec<u8> = s.mask.iter().map(|&m| m * 255).collect();
            image::write_png_bytes(&dir.join(&rec.mask), 1, s.height, s.width, &mask)?;
        }
        out.flush().map_err(|e| Error::io(&man_path, e))
    }

    /// Reads a dataset written by [`Dataset::write`].
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config: SynthConfig =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", cfg_path.display())))?;
        config.validate()?;
        let template = Arc::new(make_template(config.template)?);
        let figures: Vec<Figure> = (0..config.num_figures)
            .map(|id| Figure::generate(&template, config.seed, id))
            .collect();
        let man_path = dir.join(MANIFEST_FILE);
        let file = fs::File::open(&man_path).map_err(|e| Error::io(&man_path, e))?;
        let mut records = Vec::new();
        let mut samples = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&man_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", man_path.display(), n + 1)))?;
            if rec.figure_id >= config.num_figures || rec.background_id >= config.num_backgrounds {
                return Err(Error::Format(format!(
                    "{}:{}: ids out of range",
                    man_path.display(),
                    n + 1
                )));
            }
            rec.params().validate()?;
            let (c, h, w, rgb) = image::read_png_bytes(&dir.join(&rec.image))?;
            let (mc, mh, mw, mask) = image::read_png_bytes(&dir.join(&rec.mask))?;
            let r = config.resolution;
            if (c, h, w) != (3, r, r) || (mc, mh, mw) != (1, r, r) {
                return Err(Error::Format(format!("{}: expected {r}x{r} RGB and mask", rec.image)));
            }
            samples.push(SceneSample {
                height: h,
                width: w,
                rgb,
                mask: mask.iter().map(|&m| (m >= 128) as u8).collect(),
                params: rec.params(),
                figure_id: rec.figure_id,
                background_id: rec.background_id,
            });
            records.push(rec);
        }
        let expected = plan(&config).len();
        if records.len() != expected {
            return Err(Error::Format(format!(
                "{}: {} records, configuration implies {expected}",
                man_path.display(),
                records.len()
            )));
        }
        Ok(Self {
            config,
            template,
            figures,
            records,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.records[i].split == split).collect()
    }

    /// Frame indices grouped by sequence, in sequence order.
    pub fn sequences(&self, split: Split) -> Vec<Vec<usize>> {
        let mut seqs: Vec<Vec<usize>> = Vec::new();
        for i in self.indices(split) {
            let s = self.records[i].sequence;
            if seqs.len() <= s {
                seqs.resize(s + 1, Vec::new());
            }
            seqs[s].push(i);
        }
        seqs.retain(|s| !s.is_empty());
        seqs
    }

    pub fn mesh(&self, i: usize) -> Result<BodyMesh> {
        lbs(&self.template, &self.records[i].params())
    }

    /// Re-renders frame `i` from its record.
    pub fn rerender(&self, i: usize) -> Result<SceneSample> {
        let rec = &self.records[i];
        let r = self.config.resolution;
        let bg = make_background(self.config.seed, rec.background_id, r, r);
        render_sample(
            &self.template,
            &self.figures[rec.figure_id],
            &rec.params(),
            &bg,
            rec.background_id,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Source and target from the same sequence.
    #[serde(rename = "self")]
    SelfTransfer,
    /// Target pose and camera from another figure; shape from the source.
    Cross,
}

impl std::str::FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(PairMode::SelfTransfer),
            "cross" => Ok(PairMode::Cross),
            _ => Err(Error::InvalidArgument(format!(
                "unknown pair mode `{s}` (self or cross)"
            ))),
        }
    }
}

/// A transfer task. In self mode `target` is also the ground truth; in
/// cross mode it only donates pose and camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub source: usize,
    pub target: usize,
    pub target_params: BodyParams,
    pub mode: PairMode,
}

impl Pair {
    /// Pose and camera from `target`, shape from `source`.
    pub fn new(ds: &Dataset, source: usize, target: usize, mode: PairMode) -> Self {
        make_pair(ds, source, target, mode)
    }

    pub fn has_ground_truth(&self) -> bool {
        self.mode == PairMode::SelfTransfer
    }
}

fn make_pair(ds: &Dataset, source: usize, target: usize, mode: PairMode) -> Pair {
    let t = &ds.records[target];
    Pair {
        source,
        target,
        target_params: BodyParams {
            theta: t.theta.clone(),
            beta: ds.records[source].beta.clone(),
            camera: t.camera,
        },
        mode,
    }
}

/// Seeded random pair stream.
#[derive(Clone, Debug)]
pub struct PairSampler {
    pub mode: PairMode,
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(mode: PairMode, seed: u64) -> Self {
        Self {
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_rng(mode: PairMode, rng: ChaCha8Rng) -> Self {
        Self { mode, rng }
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn next(&mut self, ds: &Dataset, split: Split) -> Result<Pair> {
        let seqs = ds.sequences(split);
        if seqs.is_empty() {
            return Err(Error::InvalidArgument(format!("no {} frames", split.name())));
        }
        match self.mode {
            PairMode::SelfTransfer => {
                let seq = &seqs[self.rng.random_range(0..seqs.len())];
                let a = self.rng.random_range(0..seq.len());
                let mut b = self.rng.random_range(0..seq.len() - 1);
                if b >= a {
                    b += 1;
                }
                Ok(make_pair(ds, seq[a], seq[b], self.mode))
            }
            PairMode::Cross => {
                let all = ds.indices(split);
                let s = all[self.rng.random_range(0..all.len())];
                let fig = ds.records[s].figure_id;
                let donors: Vec<usize> = all.into_iter().filter(|&i| ds.records[i].figure_id != fig).collect();
                if donors.is_empty() {
                    return Err(Error::InvalidArgument("cross pairs need two figures".into()));
                }
                let t = donors[self.rng.random_range(0..donors.len())];
                Ok(make_pair(ds, s, t, self.mode))
            }
        }
    }
}

/// Fixed self-transfer evaluation pairs: within each sequence, frame `k`
/// is generated from the frame half a sequence away.
pub fn eval_pairs(ds: &Dataset, split: Split) -> Vec<Pair> {
    let mut out = Vec::new();
    for seq in ds.sequences(split) {
        let n = seq.len();
        for k in 0..n {
            out.push(make_pair(ds, seq[(k + n / 2) % n], seq[k], PairMode::SelfTransfer));
        }
    }
    out
}
