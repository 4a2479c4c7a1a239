use std::path::Path;

use super::config::TrainConfig;
use crate::binfile::{Section, SectionFile};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{AdamConfig, AdamState, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"LPNCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete training state: both networks, both optimizers, the step
/// counter and the configuration that produced them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub gen: ParamStore<f32>,
    pub disc: ParamStore<f32>,
    pub adam_gen: AdamState<f32>,
    pub adam_disc: AdamState<f32>,
}

fn u64_section(name: &str, v: u64) -> Section {
    Section::from_u8(name, &[8], &v.to_le_bytes())
}

fn read_u64(f: &SectionFile, name: &str) -> Result<u64> {
    let b = f.require(name)?.to_u8()?;
    let arr: [u8; 8] = b
        .as_slice()
        .try_into()
        .map_err(|_| Error::Format(format!("section `{name}` is not 8 bytes")))?;
    Ok(u64::from_le_bytes(arr))
}

fn push_store(f: &mut SectionFile, prefix: &str, store: &ParamStore<f32>) {
    for (name, v) in store.names().iter().zip(store.values()) {
        f.push(Section::from_f32(&format!("{prefix}/{name}"), v.shape(), v.data()));
    }
}

fn push_adam(f: &mut SectionFile, prefix: &str, store: &ParamStore<f32>, adam: &AdamState<f32>) {
    f.push(u64_section(&format!("{prefix}.step"), adam.step));
    for (i, name) in store.names().iter().enumerate() {
        f.push(Section::from_f32(
            &format!("{prefix}.m/{name}"),
            &[adam.m[i].len()],
            &adam.m[i],
        ));
        f.push(Section::from_f32(
            &format!("{prefix}.v/{name}"),
            &[adam.v[i].len()],
            &adam.v[i],
        ));
    }
}

fn read_store(f: &SectionFile, prefix: &str) -> Result<ParamStore<f32>> {
    let mut store = ParamStore::new();
    let lead = format!("{prefix}/");
    for s in &f.sections {
        if let Some(name) = s.name.strip_prefix(&lead) {
            if store.id(name).is_some() {
                return Err(Error::Format(format!("duplicate tensor `{}`", s.name)));
            }
            store.insert(name, Tensor::new(&s.shape, s.to_f32()?)?);
        }
    }
    Ok(store)
}

fn read_adam(f: &SectionFile, prefix: &str, store: &ParamStore<f32>, config: AdamConfig) -> Result<AdamState<f32>> {
    let mut adam = AdamState::new(config, store.values());
    adam.step = read_u64(f, &format!("{prefix}.step"))?;
    for (i, name) in store.names().iter().enumerate() {
        for (buf, kind) in [(&mut adam.m[i], "m"), (&mut adam.v[i], "v")] {
            let key = format!("{prefix}.{kind}/{name}");
            let data = f.require(&key)?.to_f32()?;
            if data.len() != buf.len() {
                return Err(Error::Format(format!(
                    "section `{key}` has {} values, expected {}",
                    data.len(),
                    buf.len()
                )));
            }
            *buf = data;
        }
    }
    Ok(adam)
}

impl Checkpoint {
    pub fn to_file(&self) -> SectionFile {
        let mut f = SectionFile::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        let json = serde_json::to_string(&self.config).expect("config serializes");
        f.push(Section::from_u8("meta.config", &[json.len()], json.as_bytes()));
        f.push(Section::from_u8("meta.config_hash", &[32], &self.config.hash()));
        f.push(u64_section("meta.step", self.step));
        push_store(&mut f, "gen", &self.gen);
        push_store(&mut f, "disc", &self.disc);
        push_adam(&mut f, "adam.gen", &self.gen, &self.adam_gen);
        push_adam(&mut f, "adam.disc", &self.disc, &self.adam_disc);
        f
    }

    pub fn from_file(f: &SectionFile) -> Result<Self> {
        let json = f.require("meta.config")?.to_u8()?;
        let config: TrainConfig =
            serde_json::from_slice(&json).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        config.validate()?;
        if f.require("meta.config_hash")?.to_u8()? != config.hash() {
            return Err(Error::Format("checkpoint config hash does not match its config".into()));
        }
        let gen = read_store(f, "gen")?;
        let disc = read_store(f, "disc")?;
        let adam_cfg = adam_config(&config);
        Ok(Self {
            step: read_u64(f, "meta.step")?,
            adam_gen: read_adam(f, "adam.gen", &gen, adam_cfg)?,
            adam_disc: read_adam(f, "adam.disc", &disc, adam_cfg)?,
            gen,
            disc,
            config,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_file().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_file(&SectionFile::from_bytes(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&SectionFile::load(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?)
    }
}

pub fn adam_config(config: &TrainConfig) -> AdamConfig {
    AdamConfig {
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        eps: 1e-8,
    }
}

/// Copies `from` into `into`, requiring identical names and shapes.
pub fn restore_store(into: &mut ParamStore<f32>, from: &ParamStore<f32>) -> Result<()> {
    if into.names() != from.names() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors that do not match the {} of this model",
            from.len(),
            into.len()
        )));
    }
    for (i, v) in from.values().iter().enumerate() {
        into.set(crate::nn::ParamId(i), v.clone())?;
    }
    Ok(())
}
