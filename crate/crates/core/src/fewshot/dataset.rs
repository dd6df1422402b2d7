use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// One labelled item with a visual and a textual feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultimodalSample {
    pub id: String,
    pub label: usize,
    pub visual: Vec<f64>,
    pub text: Vec<f64>,
}

/// Immutable collection of samples with uniform widths and unique ids.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<MultimodalSample>,
    by_class: BTreeMap<usize, Vec<usize>>,
}

impl Dataset {
    pub fn new(samples: Vec<MultimodalSample>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(samples.len());
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let widths = samples.first().map(|s| (s.visual.len(), s.text.len()));
        for (i, s) in samples.iter().enumerate() {
            check_sample(s, widths).map_err(|msg| Error::InvalidArgument(format!("sample {i}: {msg}")))?;
            if !ids.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate sample id {:?}", s.id)));
            }
            by_class.entry(s.label).or_default().push(i);
        }
        Ok(Self { samples, by_class })
    }

    pub fn samples(&self) -> &[MultimodalSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn visual_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.visual.len())
    }

    pub fn text_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.text.len())
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<usize> {
        self.by_class.keys().copied().collect()
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    /// Positions of the samples carrying `label`, in file order.
    pub fn class_indices(&self, label: usize) -> &[usize] {
        self.by_class.get(&label).map_or(&[], Vec::as_slice)
    }

    /// Visual features of the selected samples as rows.
    pub fn visual_matrix(&self, idx: &[usize]) -> Matrix {
        gather(idx.iter().map(|&i| &self.samples[i].visual), idx.len(), self.visual_dim())
    }

    pub fn text_matrix(&self, idx: &[usize]) -> Matrix {
        gather(idx.iter().map(|&i| &self.samples[i].text), idx.len(), self.text_dim())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Reads JSON-lines, one sample per line. Blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut samples = Vec::new();
        let mut widths = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 1;
            let s: MultimodalSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            check_sample(&s, widths).map_err(|msg| Error::Parse { line: lineno, msg })?;
            widths.get_or_insert((s.visual.len(), s.text.len()));
            samples.push(s);
        }
        Self::new(samples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_sample(s: &MultimodalSample, widths: Option<(usize, usize)>) -> std::result::Result<(), String> {
    if let Some((v, t)) = widths {
        if s.visual.len() != v {
            return Err(format!("visual width {} differs from {v}", s.visual.len()));
        }
        if s.text.len() != t {
            return Err(format!("text width {} differs from {t}", s.text.len()));
        }
    }
    if !s.visual.iter().chain(&s.text).all(|x| x.is_finite()) {
        return Err(format!("sample {:?} has non-finite features", s.id));
    }
    Ok(())
}

fn gather<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, n: usize, width: usize) -> Matrix {
    let mut data = Vec::with_capacity(n * width);
    for r in rows {
        data.extend_from_slice(r);
    }
    Matrix::new(n, width, data).expect("widths validated at construction")
}
