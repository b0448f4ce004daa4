//! Experiment configuration: flat `key = value` files with sections.
//!
//! Every setting has a fixed `section.key` name and a default. A config
//! file overrides defaults and command-line flags override the file. The
//! resolved settings are written back in the same format next to the
//! outputs, so a run can be repeated with `--config <out>/config.ini`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bon_core::corpus::SyntheticTaskSpec;
use bon_core::eval::{Pooling, DEFAULT_LOSSES};
use bon_core::model::AdamConfig;
use bon_core::{Error, JointConfig, LossSpec, ModelDims, Result, Schedule, TaskKind, TrainConfig};
use ini::Ini;

/// `(section, key, default)`. Order here is the order of the snapshot.
const SETTINGS: &[(&str, &str, &str)] = &[
    ("run", "seed", "0"),
    ("run", "out", "out"),
    ("run", "threads", "0"),
    ("data", "dir", ""),
    ("data", "split", "train"),
    ("task", "kind", "copy"),
    ("task", "vocab_size", "20"),
    ("task", "min_len", "2"),
    ("task", "max_len", "12"),
    ("task", "samples", "2000"),
    ("task", "noise", "0"),
    ("task", "seed", ""),
    ("task", "mapping_seed", "0"),
    ("model", "d_model", "32"),
    ("model", "hidden", "64"),
    ("model", "max_len", "32"),
    ("model", "max_len_diff", "8"),
    ("train", "schedule", "ce"),
    ("train", "steps", "3000"),
    ("train", "finetune_steps", "500"),
    ("train", "batch_size", "32"),
    ("train", "lr", "0.001"),
    ("train", "alpha", "0.1"),
    ("train", "n", "2"),
    ("train", "init", ""),
    ("eval", "checkpoint", ""),
    ("eval", "buckets", ""),
    ("eval", "bucket_scale", "1"),
    ("eval", "subsets", "100"),
    ("eval", "subset_size", "30"),
    ("eval", "pooling", "token-weighted"),
    ("eval", "losses", ""),
];

/// Bucket edges used when `eval.buckets` is empty, before scaling.
pub const DEFAULT_BUCKET_EDGES: [usize; 5] = [10, 20, 30, 40, 50];

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<(String, String), String>,
}

fn known(section: &str, key: &str) -> bool {
    SETTINGS.iter().any(|(s, k, _)| *s == section && *k == key)
}

impl Default for Settings {
    fn default() -> Self {
        let values = SETTINGS
            .iter()
            .map(|(s, k, v)| ((s.to_string(), k.to_string()), v.to_string()))
            .collect();
        Settings { values }
    }
}

impl Settings {
    /// Defaults overlaid with `path`, if given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut settings = Settings::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            settings.merge_text(&text)?;
        }
        Ok(settings)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        let ini =
            Ini::load_from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("run");
            for (key, value) in props.iter() {
                self.set(section, key, value)?;
            }
        }
        Ok(())
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) -> Result<()> {
        if !known(section, key) {
            return Err(Error::Config(format!("unknown setting {section}.{key}")));
        }
        self.values
            .insert((section.into(), key.into()), value.into());
        Ok(())
    }

    /// Applies `value` when present.
    pub fn set_opt<T: ToString>(
        &mut self,
        section: &str,
        key: &str,
        value: &Option<T>,
    ) -> Result<()> {
        match value {
            Some(v) => self.set(section, key, v.to_string()),
            None => Ok(()),
        }
    }

    pub fn raw(&self, section: &str, key: &str) -> &str {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
            .unwrap_or_else(|| panic!("setting {section}.{key} is not registered"))
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(section, key);
        raw.trim()
            .parse()
            .map_err(|e| Error::Config(format!("{section}.{key} = '{raw}': {e}")))
    }

    /// `None` for an empty value.
    pub fn get_opt<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(section, key).trim().is_empty() {
            Ok(None)
        } else {
            self.get(section, key).map(Some)
        }
    }

    pub fn path(&self, section: &str, key: &str) -> Option<PathBuf> {
        let raw = self.raw(section, key).trim();
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    /// Snapshot in the config-file format, in registry order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, _) in SETTINGS {
            if *section != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{section}]\n"));
                current = section;
            }
            out.push_str(&format!("{key} = {}\n", self.raw(section, key)));
        }
        out
    }

    /// Nested map for JSON sidecars.
    pub fn to_map(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        let mut map: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for ((section, key), value) in &self.values {
            map.entry(section.clone())
                .or_default()
                .insert(key.clone(), value.clone());
        }
        map
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("run", "seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("run", "out"))
    }

    pub fn threads(&self) -> Result<usize> {
        self.get("run", "threads")
    }

    pub fn task(&self) -> Result<TaskSettings> {
        let seed = match self.get_opt("task", "seed")? {
            Some(s) => s,
            None => self.seed()?,
        };
        let spec = SyntheticTaskSpec {
            kind: self.get::<TaskKind>("task", "kind")?,
            vocab_size: self.get("task", "vocab_size")?,
            min_len: self.get("task", "min_len")?,
            max_len: self.get("task", "max_len")?,
            samples: self.get("task", "samples")?,
            seed,
            mapping_seed: self.get("task", "mapping_seed")?,
        };
        spec.validate()?;
        let noise: f64 = self.get("task", "noise")?;
        if !(0.0..=1.0).contains(&noise) {
            return Err(Error::Config(format!(
                "task.noise = {noise} is outside [0, 1]"
            )));
        }
        Ok(TaskSettings { spec, noise })
    }

    pub fn dims(&self, vocab: usize) -> Result<ModelDims> {
        let dims = ModelDims {
            vocab,
            d_model: self.get("model", "d_model")?,
            hidden: self.get("model", "hidden")?,
            max_len: self.get("model", "max_len")?,
            max_len_diff: self.get("model", "max_len_diff")?,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            schedule: self.get::<Schedule>("train", "schedule")?,
            joint: JointConfig::new(self.get("train", "alpha")?, self.get("train", "n")?)
                .map_err(|e| Error::Config(e.to_string()))?,
            adam: AdamConfig {
                lr: self.get("train", "lr")?,
                ..AdamConfig::default()
            },
            steps: self.get("train", "steps")?,
            finetune_steps: self.get("train", "finetune_steps")?,
            batch_size: self.get("train", "batch_size")?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Explicit edges, or the defaults multiplied by `eval.bucket_scale`.
    pub fn bucket_edges(&self) -> Result<Vec<usize>> {
        let raw = self.raw("eval", "buckets").trim();
        if !raw.is_empty() {
            return raw
                .split(',')
                .map(|e| {
                    e.trim().parse().map_err(|_| {
                        Error::Config(format!("bad bucket edge '{e}' in eval.buckets"))
                    })
                })
                .collect();
        }
        let scale: f64 = self.get("eval", "bucket_scale")?;
        if scale.is_nan() || scale <= 0.0 {
            return Err(Error::Config("eval.bucket_scale must be positive".into()));
        }
        let mut edges: Vec<usize> = DEFAULT_BUCKET_EDGES
            .iter()
            .map(|&e| ((e as f64 * scale).round() as usize).max(1))
            .collect();
        edges.dedup();
        Ok(edges)
    }

    pub fn losses(&self) -> Result<Vec<LossSpec>> {
        let raw = self.raw("eval", "losses").trim();
        if raw.is_empty() {
            return Ok(DEFAULT_LOSSES.to_vec());
        }
        raw.split(',').map(|s| s.trim().parse()).collect()
    }

    pub fn pooling(&self) -> Result<Pooling> {
        self.get("eval", "pooling")
    }
}

#[derive(Debug, Clone)]
pub struct TaskSettings {
    pub spec: SyntheticTaskSpec,
    pub noise: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut s = Settings::default();
        s.merge_text("seed = 4\n[train]\nsteps = 10\nschedule = bon-joint\n")
            .unwrap();
        assert_eq!(s.seed().unwrap(), 4);
        s.set_opt("train", "steps", &Some(20)).unwrap();
        s.set_opt::<usize>("train", "batch_size", &None).unwrap();
        let cfg = s.train_config().unwrap();
        assert_eq!(
            (cfg.steps, cfg.batch_size, cfg.schedule),
            (20, 32, Schedule::BonJoint)
        );
    }

    #[test]
    fn snapshot_round_trips() {
        let mut s = Settings::default();
        s.set("eval", "buckets", "4,8,12").unwrap();
        s.set("task", "kind", "dict").unwrap();
        let mut back = Settings::default();
        back.merge_text(&s.render()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut s = Settings::default();
        assert!(s.merge_text("[train]\nstepz = 3\n").is_err());
        s.set("train", "steps", "many").unwrap();
        assert!(s.train_config().is_err());
    }

    #[test]
    fn scaled_default_buckets() {
        let mut s = Settings::default();
        s.set("eval", "bucket_scale", "0.2").unwrap();
        assert_eq!(s.bucket_edges().unwrap(), vec![2, 4, 6, 8, 10]);
        s.set("eval", "buckets", "4, 8,12").unwrap();
        assert_eq!(s.bucket_edges().unwrap(), vec![4, 8, 12]);
    }
}
