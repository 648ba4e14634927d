//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use pointdream::classifier::Model;
use pointdream::PointCloud32;

/// Plain-loop f64 re-implementation of the classifier forward pass.
pub struct RefNet {
    /// `(weights[in][out] row-major, bias, in, out)`.
    layers: Vec<(Vec<f64>, Vec<f64>, usize, usize)>,
    point_layers: usize,
}

/// Which ReLUs were active and which point won each pooled feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub masks: Vec<Vec<bool>>,
    pub argmax: Vec<usize>,
}

impl RefNet {
    pub fn from_model(model: &Model<f32>) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| {
                let shape = l.weight.shape();
                (
                    l.weight.data().iter().map(|&v| v as f64).collect(),
                    l.bias.data().iter().map(|&v| v as f64).collect(),
                    shape[0],
                    shape[1],
                )
            })
            .collect();
        Self {
            layers,
            point_layers: model.config().point_widths.len() - 1,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.0.len() + l.1.len()).sum()
    }

    /// Flat parameter `k`, ordered layer by layer, weight then bias.
    pub fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for l in &mut self.layers {
            if k < l.0.len() {
                return &mut l.0[k];
            }
            k -= l.0.len();
            if k < l.1.len() {
                return &mut l.1[k];
            }
            k -= l.1.len();
        }
        panic!("parameter index out of range")
    }

    fn dense(&self, l: usize, x: &[f64], relu: bool, masks: &mut Vec<Vec<bool>>) -> Vec<f64> {
        let (w, b, n_in, n_out) = &self.layers[l];
        let mut y = b.clone();
        for i in 0..*n_in {
            for o in 0..*n_out {
                y[o] += x[i] * w[i * n_out + o];
            }
        }
        if relu {
            let mask: Vec<bool> = y.iter().map(|&v| v > 0.0).collect();
            for (v, &m) in y.iter_mut().zip(&mask) {
                if !m {
                    *v = 0.0;
                }
            }
            masks.push(mask);
        }
        y
    }

    pub fn forward(&self, points: &[[f64; 3]]) -> (Vec<f64>, Pattern) {
        let mut masks = Vec::new();
        let feats: Vec<Vec<f64>> = points
            .iter()
            .map(|p| {
                let mut h = p.to_vec();
                for l in 0..self.point_layers {
                    h = self.dense(l, &h, true, &mut masks);
                }
                h
            })
            .collect();
        let width = feats[0].len();
        let mut pooled = vec![f64::NEG_INFINITY; width];
        let mut argmax = vec![0; width];
        for (i, f) in feats.iter().enumerate() {
            for c in 0..width {
                if f[c] > pooled[c] {
                    pooled[c] = f[c];
                    argmax[c] = i;
                }
            }
        }
        let mut h = pooled;
        let last = self.layers.len() - 1;
        for l in self.point_layers..self.layers.len() {
            h = self.dense(l, &h, l != last, &mut masks);
        }
        (h, Pattern { masks, argmax })
    }
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub fn to_f64(pc: &PointCloud32) -> Vec<[f64; 3]> {
    pc.points().iter().map(|p| p.map(f64::from)).collect()
}

/// O(n²) nearest neighbour: `(index, squared distance)`, lower index on ties.
pub fn brute_nearest(
    points: &[[f32; 3]],
    q: [f64; 3],
    exclude: Option<usize>,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        let d: f64 = (0..3).map(|k| (f64::from(p[k]) - q[k]).powi(2)).sum();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pointdream")
}

pub fn run_cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn pointdream")
}

pub fn sha256_file(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hashes every file under `dir`, keyed by relative path.
pub fn hash_tree(dir: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, sha256_file(&p)));
            }
        }
    }
    out.sort();
    out
}
