use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;

use super::tensor::Mat;
use crate::rng::Rng;
use crate::{Error, Result};

pub type ParamId = usize;

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut Rng,
    ) -> ParamId {
        let s = 1.0 / (fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-s..s)).collect();
        self.add(name, Mat::from_vec(rows, cols, data).expect("sized"))
    }

    pub fn add_filled(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        x: f64,
    ) -> ParamId {
        self.add(
            name,
            Mat::from_vec(rows, cols, vec![x; rows * cols]).expect("sized"),
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Overwrite values from `other`, which must hold the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let j = other
                .id(name)
                .ok_or_else(|| Error::Parse(format!("checkpoint lacks tensor {name}")))?;
            if other.values[j].shape() != self.values[i].shape() {
                return Err(Error::Shape(format!(
                    "tensor {name}: checkpoint {:?}, model {:?}",
                    other.values[j].shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = other.values[j].clone();
        }
        Ok(())
    }
}

pub const CHECKPOINT_MAGIC: &str = "blockdiff-checkpoint 1";

/// Flat-text checkpoint: a magic line, `meta` key-value lines, then one
/// `tensor <name> <rows> <cols>` header per tensor followed by its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse(format!("checkpoint meta lacks {key}")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Parse(format!("checkpoint meta {key}={raw}")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
        for (k, v) in &self.meta {
            writeln!(out, "meta {k} {v}").unwrap();
        }
        for (name, m) in self.params.iter() {
            writeln!(out, "tensor {name} {} {}", m.rows(), m.cols()).unwrap();
            for i in 0..m.rows() {
                let row: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
                writeln!(out, "{}", row.join(" ")).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == CHECKPOINT_MAGIC => {}
            _ => return Err(Error::Parse("not a checkpoint (bad magic line)".into())),
        }
        let mut meta = Vec::new();
        let mut params = ParamStore::new();
        while let Some((n, line)) = lines.next() {
            let bad = |what: &str| Error::Parse(format!("checkpoint line {}: {what}", n + 1));
            let mut words = line.split_whitespace();
            match words.next() {
                None => continue,
                Some("meta") => {
                    let k = words.next().ok_or_else(|| bad("meta without key"))?;
                    meta.push((k.to_string(), words.collect::<Vec<_>>().join(" ")));
                }
                Some("tensor") => {
                    let name = words.next().ok_or_else(|| bad("tensor without name"))?;
                    let mut dim = || -> Result<usize> {
                        words
                            .next()
                            .and_then(|w| w.parse().ok())
                            .ok_or_else(|| bad("bad tensor shape"))
                    };
                    let (rows, cols) = (dim()?, dim()?);
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (_, row) = lines.next().ok_or_else(|| bad("truncated tensor"))?;
                        for w in row.split_whitespace() {
                            data.push(w.parse::<f64>().map_err(|e| bad(&e.to_string()))?);
                        }
                    }
                    params.add(
                        name,
                        Mat::from_vec(rows, cols, data).map_err(|e| bad(&e.to_string()))?,
                    );
                }
                Some(other) => return Err(bad(&format!("unexpected record {other}"))),
            }
        }
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
