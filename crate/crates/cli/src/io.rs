use std::path::Path;

use anyhow::{Context, Result};
use intradp_core::kernels::Tensor1D;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// On-disk tensor: `width` floats per unit, units in order.
#[derive(Debug, Serialize, Deserialize)]
pub struct TensorDoc {
    pub width: usize,
    pub values: Vec<f32>,
}

impl TensorDoc {
    pub fn from_tensor(t: &Tensor1D) -> Self {
        TensorDoc { width: t.width, values: t.values.clone() }
    }

    pub fn into_tensor(self) -> Result<Tensor1D> {
        Ok(Tensor1D::new(self.values, self.width)?)
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("malformed JSON in {}", path.display()))
}

/// Writes to `path`, or to stdout when it is `None`.
pub fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}
