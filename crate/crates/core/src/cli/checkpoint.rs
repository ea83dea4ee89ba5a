//! Versioned checkpoint: a text manifest followed by raw little-endian f64s.
//!
//! ```text
//! # duse config=<hash> seed=<seed>
//! duse-checkpoint 1
//! config <bytes>
//! <canonical run config text>
//! tensors <count>
//! <name> <d0>x<d1>x... <trainable 0|1>
//! ...
//! data
//! <payload: every tensor in manifest order>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::training::DuseModel;

use super::config::RunConfig;

const MAGIC: &str = "duse-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub config_text: String,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn from_model(model: &DuseModel, config: &RunConfig) -> Self {
        let tensors = model
            .named()
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name,
                shape: t.shape().to_vec(),
                trainable: t.requires_grad(),
                data: t.to_vec(),
            })
            .collect();
        Checkpoint { header: config.header(), config_text: config.to_text(), tensors }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Stored configuration with `overrides` applied on top.
    pub fn run_config(&self, overrides: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&self.config_text)?;
        for o in overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }

    /// Rebuilds the model described by the stored configuration and loads
    /// every tensor into it.
    pub fn restore(&self, config: &RunConfig) -> Result<DuseModel> {
        let mut model = DuseModel::new(config.model_config())?;
        let entries: Vec<_> = self
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.shape.clone(), t.data.clone()))
            .collect();
        model.load_tensors(&entries)?;
        Ok(model)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", self.header)?;
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "config {}", self.config_text.len())?;
        w.write_all(self.config_text.as_bytes())?;
        writeln!(w, "tensors {}", self.tensors.len())?;
        for t in &self.tensors {
            let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            writeln!(w, "{} {} {}", t.name, shape.join("x"), u8::from(t.trainable))?;
        }
        writeln!(w, "data")?;
        for t in &self.tensors {
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let mut next_line = |r: &mut BufReader<_>| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("unexpected end of manifest".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        let header = next_line(&mut r)?;
        if !header.starts_with("# duse ") {
            return Err(Error::Checkpoint("missing header line".into()));
        }
        if next_line(&mut r)? != MAGIC {
            return Err(Error::Checkpoint("not a version 1 checkpoint".into()));
        }
        let config_len = counted(&next_line(&mut r)?, "config")?;
        let mut config = vec![0u8; config_len];
        r.read_exact(&mut config)?;
        let config_text = String::from_utf8(config).map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
        let count = counted(&next_line(&mut r)?, "tensors")?;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let entry = next_line(&mut r)?;
            let parts: Vec<&str> = entry.split(' ').collect();
            let [name, shape, trainable] = parts.as_slice() else {
                return Err(Error::Checkpoint(format!("bad manifest entry `{entry}`")));
            };
            let shape = shape
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Checkpoint(format!("bad shape in `{entry}`")))?;
            manifest.push((name.to_string(), shape, *trainable == "1"));
        }
        if next_line(&mut r)? != "data" {
            return Err(Error::Checkpoint("missing data marker".into()));
        }
        let mut tensors = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for (name, shape, trainable) in manifest {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Checkpoint(format!("payload truncated in {name}")))?;
                data.push(f64::from_le_bytes(buf));
            }
            tensors.push(TensorEntry { name, shape, trainable, data });
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after payload".into()));
        }
        Ok(Checkpoint { header, config_text, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
        Checkpoint::read_from(file)
    }
}

fn counted(line: &str, key: &str) -> Result<usize> {
    line.strip_prefix(key)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key} <n>`, got `{line}`")))
}
