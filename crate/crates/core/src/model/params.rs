//! Model parameters, initialisation and checkpoint files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::Matrix;
use crate::error::{Error, Result};
use crate::seed::stream_rng;

pub const CHECKPOINT_FORMAT: &str = "visdep-ckpt";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const UPDATE_GATE_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub cond_dim: usize,
    pub d_emb: usize,
    pub d_hid: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, cond_dim: usize) -> Self {
        ModelConfig {
            vocab_size,
            cond_dim,
            d_emb: 32,
            d_hid: 64,
        }
    }
}

/// All trainable weights. The same shape doubles as a gradient buffer.
///
/// The condition `c` sets the initial state `h0 = tanh(cond c + cond_bias)`
/// and is also added to every input as `cond_in c`. Each step runs a GRU cell
/// on `embed[y] + cond_in c` and reads out
/// `softmax(out h + cond_out c + out_bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embed: Matrix,
    pub cond: Matrix,
    pub cond_bias: Matrix,
    pub cond_in: Matrix,
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_n: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_n: Matrix,
    pub b_z: Matrix,
    pub b_r: Matrix,
    pub b_n: Matrix,
    pub out: Matrix,
    pub cond_out: Matrix,
    pub out_bias: Matrix,
}

pub const BLOCK_NAMES: [&str; 16] = [
    "embed", "cond", "cond_bias", "cond_in", "w_z", "w_r", "w_n", "u_z", "u_r", "u_n", "b_z", "b_r", "b_n",
    "out", "cond_out", "out_bias",
];

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        let ModelConfig {
            vocab_size: v,
            cond_dim: c,
            d_emb: e,
            d_hid: h,
        } = config;
        ModelParams {
            config,
            embed: Matrix::zeros(v, e),
            cond: Matrix::zeros(h, c),
            cond_bias: Matrix::zeros(h, 1),
            cond_in: Matrix::zeros(e, c),
            w_z: Matrix::zeros(h, e),
            w_r: Matrix::zeros(h, e),
            w_n: Matrix::zeros(h, e),
            u_z: Matrix::zeros(h, h),
            u_r: Matrix::zeros(h, h),
            u_n: Matrix::zeros(h, h),
            b_z: Matrix::zeros(h, 1),
            b_r: Matrix::zeros(h, 1),
            b_n: Matrix::zeros(h, 1),
            out: Matrix::zeros(v, h),
            cond_out: Matrix::zeros(v, c),
            out_bias: Matrix::zeros(v, 1),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights and zero biases, except the update
    /// gate bias, which starts at [`UPDATE_GATE_BIAS`] so the state is
    /// mostly carried over early in training.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, &[b"init"]);
        let mut p = ModelParams::zeros(config);
        let ModelConfig {
            cond_dim: c,
            d_emb: e,
            d_hid: h,
            ..
        } = config;
        let fan_ins = [1, c, 0, c, e, e, e, h, h, h, 0, 0, 0, h, c, 0];
        for (block, fan_in) in p.blocks_mut().into_iter().zip(fan_ins) {
            if fan_in == 0 {
                continue;
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in block.data.iter_mut() {
                *x = rng.random_range(-bound..bound);
            }
        }
        p.b_z.data.fill(UPDATE_GATE_BIAS);
        p
    }

    pub fn blocks(&self) -> [&Matrix; 16] {
        [
            &self.embed,
            &self.cond,
            &self.cond_bias,
            &self.cond_in,
            &self.w_z,
            &self.w_r,
            &self.w_n,
            &self.u_z,
            &self.u_r,
            &self.u_n,
            &self.b_z,
            &self.b_r,
            &self.b_n,
            &self.out,
            &self.cond_out,
            &self.out_bias,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Matrix; 16] {
        [
            &mut self.embed,
            &mut self.cond,
            &mut self.cond_bias,
            &mut self.cond_in,
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_n,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_n,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_n,
            &mut self.out,
            &mut self.cond_out,
            &mut self.out_bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }

    /// `self += alpha * other`, block by block.
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            super::linalg::axpy(alpha, &b.data, &mut a.data);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for b in self.blocks_mut() {
            b.data.iter_mut().for_each(|x| *x *= alpha);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.data.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.data.iter().all(|x| x.is_finite()))
    }

    pub fn check_condition(&self, condition: &[f64]) -> Result<()> {
        if condition.len() != self.config.cond_dim {
            return Err(Error::Shape(format!(
                "condition has length {}, model expects {}",
                condition.len(),
                self.config.cond_dim
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &Checkpoint::from(self)).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        ckpt.into_params()
    }
}

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl From<&ModelParams> for Checkpoint {
    fn from(p: &ModelParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: p.config,
            tensors: BLOCK_NAMES
                .iter()
                .zip(p.blocks())
                .map(|(name, m)| Tensor {
                    name: name.to_string(),
                    shape: [m.rows, m.cols],
                    data: m.data.clone(),
                })
                .collect(),
        }
    }
}

impl Checkpoint {
    fn into_params(self) -> Result<ModelParams> {
        let bad = |msg: String| Error::invariant("checkpoint", "tensors", msg);
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        let mut p = ModelParams::zeros(self.config);
        if self.tensors.len() != BLOCK_NAMES.len() {
            return Err(bad(format!("expected {} tensors, found {}", BLOCK_NAMES.len(), self.tensors.len())));
        }
        for ((block, name), t) in p.blocks_mut().into_iter().zip(BLOCK_NAMES).zip(self.tensors) {
            if t.name != name || t.shape != [block.rows, block.cols] || t.data.len() != block.data.len() {
                return Err(bad(format!("tensor '{}' does not match expected '{name}' {}x{}", t.name, block.rows, block.cols)));
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(bad(format!("tensor '{name}' has non-finite entries")));
            }
            block.data = t.data;
        }
        Ok(p)
    }
}
