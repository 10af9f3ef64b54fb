//! Versioned binary checkpoint: model config, every weight tensor with a
//! shape header, and the standardizer the model was trained with.
//! Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::*;
use crate::data::Standardizer;
use crate::error::{CourageError, Result};
use crate::model::{ModelConfig, ModelParams, Pooling};
use crate::numerics::Matrix;

const MAGIC: &[u8; 4] = b"CRGM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model label used in forecasts and reports: "County", "Mixup",
    /// "State", or a custom name.
    pub label: String,
    pub config: ModelConfig,
    pub params: ModelParams,
    pub standardizer: Standardizer,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let label = path.display().to_string();
        let file = wrap_io(&label, File::create(path))?;
        let mut w = BufWriter::new(file);
        wrap_io(&label, self.write_to(&mut w))?;
        wrap_io(&label, w.flush())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let label = path.display().to_string();
        if !path.exists() {
            return Err(CourageError::MissingInput(label));
        }
        let file = wrap_io(&label, File::open(path))?;
        let mut r = BufReader::new(file);
        wrap_io(&label, Self::read_from(&mut r))
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        write_str(w, &self.label)?;

        let c = &self.config;
        for dim in [
            c.feature_dim,
            c.window_len,
            c.model_dim,
            c.heads,
            c.key_dim,
            c.value_dim,
            c.ff_dim,
            c.layers,
        ] {
            write_u32(w, dim as u32)?;
        }
        write_u8(w, matches!(c.pooling, Pooling::Mean) as u8)?;
        write_u8(w, c.residual_layernorm as u8)?;

        let s = &self.standardizer;
        write_u32(w, s.feature_mean.len() as u32)?;
        write_f64_slice(w, &s.feature_mean)?;
        write_f64_slice(w, &s.feature_std)?;
        write_f64_slice(w, &s.target_mean)?;
        write_f64_slice(w, &s.target_std)?;

        write_u32(w, self.params.tensor_count() as u32)?;
        let mut result = Ok(());
        self.params.for_each_tensor(|name, tensor| {
            if result.is_err() {
                return;
            }
            result = (|| {
                write_str(w, name)?;
                write_u32(w, tensor.rows() as u32)?;
                write_u32(w, tensor.cols() as u32)?;
                write_f64_slice(w, tensor.data())
            })();
        });
        result
    }

    fn read_from(r: &mut impl Read) -> std::io::Result<Checkpoint> {
        let invalid = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);

        expect_magic(r, MAGIC, "checkpoint")?;
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(invalid(format!("unsupported checkpoint version {version}")));
        }
        let label = read_str(r)?;

        let mut dims = [0usize; 8];
        for d in &mut dims {
            *d = read_u32(r)? as usize;
        }
        let pooling = if read_u8(r)? == 1 {
            Pooling::Mean
        } else {
            Pooling::LastRow
        };
        let residual_layernorm = read_u8(r)? == 1;
        let config = ModelConfig {
            feature_dim: dims[0],
            window_len: dims[1],
            model_dim: dims[2],
            heads: dims[3],
            key_dim: dims[4],
            value_dim: dims[5],
            ff_dim: dims[6],
            layers: dims[7],
            pooling,
            residual_layernorm,
        };

        let k = read_u32(r)? as usize;
        let feature_mean = read_f64_vec(r, k)?;
        let feature_std = read_f64_vec(r, k)?;
        let tm = read_f64_vec(r, 2)?;
        let ts = read_f64_vec(r, 2)?;
        let standardizer = Standardizer {
            feature_mean,
            feature_std,
            target_mean: [tm[0], tm[1]],
            target_std: [ts[0], ts[1]],
        };

        let n_tensors = read_u32(r)? as usize;
        let mut params = ModelParams::zeros(&config);
        if params.tensor_count() != n_tensors {
            return Err(invalid(format!(
                "checkpoint has {n_tensors} tensors, config implies {}",
                params.tensor_count()
            )));
        }
        let mut stored: Vec<(String, Matrix)> = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name = read_str(r)?;
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            let data = read_f64_vec(r, rows * cols)?;
            let tensor = Matrix::from_vec(rows, cols, data)
                .map_err(|e| invalid(e.to_string()))?;
            stored.push((name, tensor));
        }
        let mut i = 0;
        let mut mismatch = None;
        params.for_each_tensor_mut(|name, tensor| {
            let (stored_name, stored_tensor) = &stored[i];
            if mismatch.is_none() {
                if stored_name != name || !stored_tensor.same_shape(tensor) {
                    mismatch = Some(format!(
                        "tensor {i}: expected {name} {:?}, found {stored_name} {:?}",
                        tensor.shape(),
                        stored_tensor.shape()
                    ));
                } else {
                    *tensor = stored_tensor.clone();
                }
            }
            i += 1;
        });
        if let Some(msg) = mismatch {
            return Err(invalid(msg));
        }

        Ok(Checkpoint {
            label,
            config,
            params,
            standardizer,
        })
    }
}
