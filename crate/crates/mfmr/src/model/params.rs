//! Model configuration, the full parameter set with a flat tensor registry
//! (used by the optimizer, the gradient checker and checkpoint IO), and the
//! versioned binary checkpoint format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"MFMR";
const FORMAT_VERSION: u32 = 1;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub segment_count: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// Desk-scale defaults; the paper-scale 12/768/256 values stay reachable
    /// through the fields.
    pub fn desk(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn_mult: 4,
            vocab_size,
            max_len: 128,
            segment_count: 3,
            dropout_rate: 0.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.hidden * self.ffn_mult
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hidden == 0
            || self.heads == 0
            || self.layers == 0
            || self.ffn_mult == 0
            || self.vocab_size == 0
            || self.max_len == 0
        {
            return Err("all dimensions must be at least 1".into());
        }
        if self.hidden % self.heads != 0 {
            return Err(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            ));
        }
        if self.segment_count < 3 {
            return Err("need at least three segment embeddings".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err("dropout rate must lie in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Every learnable tensor. Gradients and optimizer moments reuse the same
/// layout through [`ParameterSet::zeros_like`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub tok_emb: Array2<f64>,
    pub seg_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub mlm_w: Array2<f64>,
    pub mlm_b: Array1<f64>,
    pub ccp_w: Array1<f64>,
    pub ccp_b: Array1<f64>,
    pub msp_a_w: Array2<f64>,
    pub msp_a_b: Array1<f64>,
    pub msp_b_w: Array2<f64>,
    pub msp_b_b: Array1<f64>,
    pub cls: Option<ClassifierParams>,
}

pub type GradientSet = ParameterSet;

impl ParameterSet {
    /// Random init: weights and embeddings from N(0, 0.02), biases zero,
    /// layer-norm gain one. A classification head starts at exactly zero so
    /// its first loss is ln(n_classes).
    pub fn init<R: Rng>(cfg: &ModelConfig, n_classes: Option<usize>, rng: &mut R) -> ParameterSet {
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        ParameterSet::shaped(cfg, n_classes, |r, c| {
            Array2::from_shape_fn((r, c), |_| normal.sample(rng))
        })
    }

    /// All-zero weights in the right shapes (layer-norm gain still one).
    pub fn zeros(cfg: &ModelConfig, n_classes: Option<usize>) -> ParameterSet {
        ParameterSet::shaped(cfg, n_classes, |r, c| Array2::zeros((r, c)))
    }

    fn shaped<F: FnMut(usize, usize) -> Array2<f64>>(
        cfg: &ModelConfig,
        n_classes: Option<usize>,
        mut w: F,
    ) -> ParameterSet {
        let h = cfg.hidden;
        let f = cfg.ffn_dim();
        let tok_emb = w(cfg.vocab_size, h);
        let seg_emb = w(cfg.segment_count, h);
        let pos_emb = w(cfg.max_len, h);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                wq: w(h, h),
                bq: Array1::zeros(h),
                wk: w(h, h),
                bk: Array1::zeros(h),
                wv: w(h, h),
                bv: Array1::zeros(h),
                wo: w(h, h),
                bo: Array1::zeros(h),
                ln1_g: Array1::ones(h),
                ln1_b: Array1::zeros(h),
                w1: w(h, f),
                b1: Array1::zeros(f),
                w2: w(f, h),
                b2: Array1::zeros(h),
                ln2_g: Array1::ones(h),
                ln2_b: Array1::zeros(h),
            })
            .collect();
        ParameterSet {
            tok_emb,
            seg_emb,
            pos_emb,
            layers,
            mlm_w: w(h, cfg.vocab_size),
            mlm_b: Array1::zeros(cfg.vocab_size),
            ccp_w: Array1::zeros(h),
            ccp_b: Array1::zeros(1),
            msp_a_w: w(h, h),
            msp_a_b: Array1::zeros(h),
            msp_b_w: w(h, h),
            msp_b_b: Array1::zeros(h),
            cls: n_classes.map(|n| ClassifierParams {
                w: Array2::zeros((h, n)),
                b: Array1::zeros(n),
            }),
        }
    }

    pub fn zeros_like(&self) -> ParameterSet {
        let mut out = self.clone();
        for (_, mut t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.cls.as_ref().map(|c| c.w.ncols())
    }

    /// Views of every tensor in fixed declaration order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        out.push(("tok_emb".into(), self.tok_emb.view().into_dyn()));
        out.push(("seg_emb".into(), self.seg_emb.view().into_dyn()));
        out.push(("pos_emb".into(), self.pos_emb.view().into_dyn()));
        for (i, l) in self.layers.iter().enumerate() {
            let pairs: [(&str, ArrayViewD<'_, f64>); 16] = [
                ("wq", l.wq.view().into_dyn()),
                ("bq", l.bq.view().into_dyn()),
                ("wk", l.wk.view().into_dyn()),
                ("bk", l.bk.view().into_dyn()),
                ("wv", l.wv.view().into_dyn()),
                ("bv", l.bv.view().into_dyn()),
                ("wo", l.wo.view().into_dyn()),
                ("bo", l.bo.view().into_dyn()),
                ("ln1_g", l.ln1_g.view().into_dyn()),
                ("ln1_b", l.ln1_b.view().into_dyn()),
                ("w1", l.w1.view().into_dyn()),
                ("b1", l.b1.view().into_dyn()),
                ("w2", l.w2.view().into_dyn()),
                ("b2", l.b2.view().into_dyn()),
                ("ln2_g", l.ln2_g.view().into_dyn()),
                ("ln2_b", l.ln2_b.view().into_dyn()),
            ];
            for (name, view) in pairs {
                out.push((format!("layer{i}.{name}"), view));
            }
        }
        out.push(("mlm_w".into(), self.mlm_w.view().into_dyn()));
        out.push(("mlm_b".into(), self.mlm_b.view().into_dyn()));
        out.push(("ccp_w".into(), self.ccp_w.view().into_dyn()));
        out.push(("ccp_b".into(), self.ccp_b.view().into_dyn()));
        out.push(("msp_a_w".into(), self.msp_a_w.view().into_dyn()));
        out.push(("msp_a_b".into(), self.msp_a_b.view().into_dyn()));
        out.push(("msp_b_w".into(), self.msp_b_w.view().into_dyn()));
        out.push(("msp_b_b".into(), self.msp_b_b.view().into_dyn()));
        if let Some(c) = &self.cls {
            out.push(("cls_w".into(), c.w.view().into_dyn()));
            out.push(("cls_b".into(), c.b.view().into_dyn()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        out.push(("tok_emb".into(), self.tok_emb.view_mut().into_dyn()));
        out.push(("seg_emb".into(), self.seg_emb.view_mut().into_dyn()));
        out.push(("pos_emb".into(), self.pos_emb.view_mut().into_dyn()));
        for (i, l) in self.layers.iter_mut().enumerate() {
            let LayerParams {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln1_g,
                ln1_b,
                w1,
                b1,
                w2,
                b2,
                ln2_g,
                ln2_b,
            } = l;
            let pairs: [(&str, ArrayViewMutD<'_, f64>); 16] = [
                ("wq", wq.view_mut().into_dyn()),
                ("bq", bq.view_mut().into_dyn()),
                ("wk", wk.view_mut().into_dyn()),
                ("bk", bk.view_mut().into_dyn()),
                ("wv", wv.view_mut().into_dyn()),
                ("bv", bv.view_mut().into_dyn()),
                ("wo", wo.view_mut().into_dyn()),
                ("bo", bo.view_mut().into_dyn()),
                ("ln1_g", ln1_g.view_mut().into_dyn()),
                ("ln1_b", ln1_b.view_mut().into_dyn()),
                ("w1", w1.view_mut().into_dyn()),
                ("b1", b1.view_mut().into_dyn()),
                ("w2", w2.view_mut().into_dyn()),
                ("b2", b2.view_mut().into_dyn()),
                ("ln2_g", ln2_g.view_mut().into_dyn()),
                ("ln2_b", ln2_b.view_mut().into_dyn()),
            ];
            for (name, view) in pairs {
                out.push((format!("layer{i}.{name}"), view));
            }
        }
        out.push(("mlm_w".into(), self.mlm_w.view_mut().into_dyn()));
        out.push(("mlm_b".into(), self.mlm_b.view_mut().into_dyn()));
        out.push(("ccp_w".into(), self.ccp_w.view_mut().into_dyn()));
        out.push(("ccp_b".into(), self.ccp_b.view_mut().into_dyn()));
        out.push(("msp_a_w".into(), self.msp_a_w.view_mut().into_dyn()));
        out.push(("msp_a_b".into(), self.msp_a_b.view_mut().into_dyn()));
        out.push(("msp_b_w".into(), self.msp_b_w.view_mut().into_dyn()));
        out.push(("msp_b_b".into(), self.msp_b_b.view_mut().into_dyn()));
        if let Some(c) = &mut self.cls {
            out.push(("cls_w".into(), c.w.view_mut().into_dyn()));
            out.push(("cls_b".into(), c.b.view_mut().into_dyn()));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Err with the first offending tensor name when any value is NaN/Inf.
    pub fn assert_finite(&self) -> Result<(), String> {
        for (name, t) in self.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(name);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("bad model config in checkpoint: {0}")]
    BadConfig(String),
    #[error("tensor {name}: stored shape {got:?} does not match expected {want:?}")]
    Shape {
        name: String,
        want: Vec<usize>,
        got: Vec<usize>,
    },
}

/// Binary layout: magic, format version, config, class count (0 = no
/// classifier head), then each tensor in declaration order as a shape record
/// plus little-endian f64 data.
pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    params: &ParameterSet,
) -> Result<(), CheckpointError> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    for v in [
        cfg.layers,
        cfg.hidden,
        cfg.heads,
        cfg.ffn_mult,
        cfg.vocab_size,
        cfg.max_len,
        cfg.segment_count,
    ] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    w.write_f64::<LittleEndian>(cfg.dropout_rate)?;
    w.write_u32::<LittleEndian>(params.n_classes().unwrap_or(0) as u32)?;
    let tensors = params.tensors();
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (_, t) in tensors {
        w.write_u32::<LittleEndian>(t.ndim() as u32)?;
        for d in t.shape() {
            w.write_u32::<LittleEndian>(*d as u32)?;
        }
        for v in t.iter() {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParameterSet), CheckpointError> {
    let mut r = std::io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut dims = [0usize; 7];
    for d in dims.iter_mut() {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    let cfg = ModelConfig {
        layers: dims[0],
        hidden: dims[1],
        heads: dims[2],
        ffn_mult: dims[3],
        vocab_size: dims[4],
        max_len: dims[5],
        segment_count: dims[6],
        dropout_rate: r.read_f64::<LittleEndian>()?,
    };
    cfg.validate().map_err(CheckpointError::BadConfig)?;
    let n_classes = r.read_u32::<LittleEndian>()? as usize;
    let n_classes = (n_classes > 0).then_some(n_classes);

    let mut params = ParameterSet::zeros(&cfg, n_classes);
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut views = params.tensors_mut();
    if count != views.len() {
        return Err(CheckpointError::BadConfig(format!(
            "checkpoint holds {count} tensors, model needs {}",
            views.len()
        )));
    }
    for (name, t) in views.iter_mut() {
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let mut got = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            got.push(r.read_u32::<LittleEndian>()? as usize);
        }
        if got != t.shape() {
            return Err(CheckpointError::Shape {
                name: name.clone(),
                want: t.shape().to_vec(),
                got,
            });
        }
        for v in t.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
    }
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            layers: 2,
            hidden: 16,
            heads: 4,
            ffn_mult: 2,
            vocab_size: 50,
            max_len: 32,
            segment_count: 3,
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn config_validation() {
        assert!(tiny_cfg().validate().is_ok());
        let mut bad = tiny_cfg();
        bad.hidden = 10;
        assert!(bad.validate().is_err());
        let mut bad = tiny_cfg();
        bad.layers = 0;
        assert!(bad.validate().is_err());
        let mut bad = tiny_cfg();
        bad.dropout_rate = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = tiny_cfg();
        let a = ParameterSet::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(3));
        let b = ParameterSet::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(3));
        let c = ParameterSet::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn classifier_head_starts_at_zero() {
        let cfg = tiny_cfg();
        let p = ParameterSet::init(&cfg, Some(5), &mut ChaCha8Rng::seed_from_u64(1));
        let cls = p.cls.as_ref().unwrap();
        assert!(cls.w.iter().all(|&v| v == 0.0));
        assert!(cls.b.iter().all(|&v| v == 0.0));
        assert_eq!(p.n_classes(), Some(5));
    }

    #[test]
    fn registry_covers_every_tensor_in_order() {
        let cfg = tiny_cfg();
        let p = ParameterSet::init(&cfg, Some(3), &mut ChaCha8Rng::seed_from_u64(1));
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "tok_emb");
        assert_eq!(names[3], "layer0.wq");
        assert_eq!(names[names.len() - 1], "cls_b");
        assert_eq!(names.len(), 3 + 2 * 16 + 8 + 2);
        let mut p2 = p.clone();
        let mut_names: Vec<String> = p2.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn zeros_like_matches_shapes() {
        let cfg = tiny_cfg();
        let p = ParameterSet::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(1));
        let z = p.zeros_like();
        for ((_, a), (_, b)) in p.tensors().iter().zip(z.tensors().iter()) {
            assert_eq!(a.shape(), b.shape());
            assert!(b.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn finite_check_reports_tensor_name() {
        let cfg = tiny_cfg();
        let mut p = ParameterSet::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(p.assert_finite().is_ok());
        p.layers[1].w1[[0, 0]] = f64::NAN;
        assert_eq!(p.assert_finite().unwrap_err(), "layer1.w1");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = tiny_cfg();
        let p = ParameterSet::init(&cfg, Some(4), &mut ChaCha8Rng::seed_from_u64(9));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &p).unwrap();
        let (cfg2, p2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(p, p2);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn checkpoint_rejects_future_version() {
        let cfg = tiny_cfg();
        let p = ParameterSet::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(9));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &p).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 99;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadVersion(99))
        ));
    }
}
