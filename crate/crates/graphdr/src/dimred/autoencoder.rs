//! Single-hidden-layer autoencoder for a priori feature compression.
//!
//! Encoder d -> bottleneck with ReLU, decoder bottleneck -> d linear, trained
//! with SGD on the mean squared reconstruction error over all nodes. The
//! validation rows of the split drive early stopping and bottleneck
//! selection.

use std::sync::Arc;

use crate::data::SplitMask;
use crate::error::{GraphDrError, Result};
use crate::matrix::DenseMatrix;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub encoder_w: DenseMatrix,
    pub encoder_b: DenseMatrix,
    pub decoder_w: DenseMatrix,
    pub decoder_b: DenseMatrix,
}

impl AeModel {
    pub fn bottleneck(&self) -> usize {
        self.encoder_w.cols()
    }

    pub fn d(&self) -> usize {
        self.encoder_w.rows()
    }

    /// Identity-shaped model (bottleneck = d, unit weights, zero biases).
    /// Reconstructs any non-negative input exactly.
    pub fn identity(d: usize) -> Self {
        AeModel {
            encoder_w: DenseMatrix::identity(d),
            encoder_b: DenseMatrix::zeros(1, d),
            decoder_w: DenseMatrix::identity(d),
            decoder_b: DenseMatrix::zeros(1, d),
        }
    }

    /// He-style init for the ReLU encoder, Glorot for the linear decoder.
    fn he(rng: &mut Rng, rows: usize, cols: usize) -> DenseMatrix {
        let std = (2.0 / rows as f64).sqrt();
        DenseMatrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.normal() * std).collect(),
        )
        .expect("sized buffer")
    }

    fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> DenseMatrix {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        DenseMatrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.uniform_in(-limit, limit)).collect(),
        )
        .expect("sized buffer")
    }

    /// Encoder biases start at +0.5 so every ReLU unit begins in its active
    /// region; training then behaves like a linear autoencoder until the
    /// nonlinearity is actually needed. Starting at zero instead leaves a
    /// fraction of units dead and strands the fit on a visibly worse plateau.
    pub fn init(d: usize, bottleneck: usize, rng: &mut Rng) -> Self {
        let mut encoder_b = DenseMatrix::zeros(1, bottleneck);
        encoder_b.data_mut().fill(0.5);
        AeModel {
            encoder_w: Self::he(rng, d, bottleneck),
            encoder_b,
            decoder_w: Self::glorot(rng, bottleneck, d),
            decoder_b: DenseMatrix::zeros(1, d),
        }
    }
}

/// Deterministic encoder application: relu(x We + be).
pub fn ae_encode(model: &AeModel, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != model.d() {
        return Err(GraphDrError::ShapeMismatch {
            op: "ae_encode",
            left: format!("{}x{}", x.rows(), x.cols()),
            right: format!("model d={}", model.d()),
        });
    }
    let z = x.matmul(&model.encoder_w)?;
    let mut z = z;
    for i in 0..z.rows() {
        for (v, &b) in z.row_mut(i).iter_mut().zip(model.encoder_b.row(0)) {
            *v = (*v + b).max(0.0);
        }
    }
    Ok(z)
}

fn decode(model: &AeModel, z: &DenseMatrix) -> Result<DenseMatrix> {
    let mut xhat = z.matmul(&model.decoder_w)?;
    for i in 0..xhat.rows() {
        for (v, &b) in xhat.row_mut(i).iter_mut().zip(model.decoder_b.row(0)) {
            *v += b;
        }
    }
    Ok(xhat)
}

/// Mean squared reconstruction error of the model on the given rows.
pub fn reconstruction_mse(model: &AeModel, x: &DenseMatrix) -> Result<f64> {
    let z = ae_encode(model, x)?;
    let xhat = decode(model, &z)?;
    let numel = (x.rows() * x.cols()) as f64;
    Ok(xhat
        .data()
        .iter()
        .zip(x.data())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / numel)
}

/// Train an autoencoder on all rows of x; early stopping follows validation
/// MSE over split.val, restoring the best epoch. Returns the model plus its
/// best validation MSE.
pub fn ae_train_with_val(
    x: &DenseMatrix,
    bottleneck: usize,
    split: &SplitMask,
    cfg: &TrainConfig,
) -> Result<(AeModel, f64)> {
    cfg.validate()?;
    let (_, d) = x.shape();
    if bottleneck == 0 || bottleneck > d {
        return Err(GraphDrError::InvalidArgument {
            context: "ae_train",
            message: format!("bottleneck {bottleneck} outside [1, {d}]"),
        });
    }
    if split.n() != x.rows() {
        return Err(GraphDrError::ShapeMismatch {
            op: "ae_train",
            left: format!("{} rows", x.rows()),
            right: format!("{} mask entries", split.n()),
        });
    }

    let root = Rng::new(cfg.seed);
    let mut init_rng = root.split(0);
    let mut model = AeModel::init(d, bottleneck, &mut init_rng);
    let mut velocity: Vec<DenseMatrix> = [
        &model.encoder_w,
        &model.encoder_b,
        &model.decoder_w,
        &model.decoder_b,
    ]
    .iter()
    .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
    .collect();

    let val_rows = SplitMask::indices(&split.val);
    let x_val = if val_rows.is_empty() {
        x.clone()
    } else {
        x.select_rows(&val_rows)
    };
    let target = Arc::new(x.clone());

    let mut best_model = model.clone();
    let mut best_val = f64::INFINITY;
    let mut bad = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let we = tape.param(model.encoder_w.clone());
        let be = tape.param(model.encoder_b.clone());
        let wd = tape.param(model.decoder_w.clone());
        let bd = tape.param(model.decoder_b.clone());

        let z = tape.matmul(xv, we)?;
        let z = tape.add_bias(z, be)?;
        let z = tape.relu(z)?;
        let xhat = tape.matmul(z, wd)?;
        let xhat = tape.add_bias(xhat, bd)?;
        let loss = tape.mse(xhat, target.clone())?;
        let loss_val = tape.scalar(loss);
        if !loss_val.is_finite() {
            return Err(GraphDrError::Diverged {
                epoch: epoch + 1,
                message: format!("reconstruction loss {loss_val}"),
            });
        }

        let grads = tape.backward(loss)?;
        let grad_mats: Vec<DenseMatrix> = [we, be, wd, bd]
            .iter()
            .map(|&v| grads.get(v).expect("tracked").clone())
            .collect();

        // same update rule as the classifier trainer
        let mats = [
            &mut model.encoder_w,
            &mut model.encoder_b,
            &mut model.decoder_w,
            &mut model.decoder_b,
        ];
        for ((p, g), v) in mats.into_iter().zip(&grad_mats).zip(velocity.iter_mut()) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let g_eff = gv + cfg.weight_decay * *pv;
                *vv = cfg.momentum * *vv + g_eff;
                *pv -= cfg.learning_rate * *vv;
            }
        }

        let val_mse = reconstruction_mse(&model, &x_val)?;
        if val_mse < best_val {
            best_val = val_mse;
            best_model = model.clone();
            bad = 0;
        } else {
            bad += 1;
            if bad == cfg.patience {
                break;
            }
        }
    }
    Ok((best_model, best_val))
}

/// Train an autoencoder; see [`ae_train_with_val`].
pub fn ae_train(
    x: &DenseMatrix,
    bottleneck: usize,
    split: &SplitMask,
    cfg: &TrainConfig,
) -> Result<AeModel> {
    ae_train_with_val(x, bottleneck, split, cfg).map(|(model, _)| model)
}

/// Train one autoencoder per size with a shared seed; returns (size, best
/// validation MSE) pairs in input order.
pub fn bottleneck_sweep(
    x: &DenseMatrix,
    split: &SplitMask,
    sizes: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<(usize, f64)>> {
    if sizes.is_empty() {
        return Err(GraphDrError::InvalidArgument {
            context: "bottleneck_sweep",
            message: "no sizes given".into(),
        });
    }
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let (_, val_mse) = ae_train_with_val(x, size, split, cfg)?;
        out.push((size, val_mse));
    }
    Ok(out)
}

/// Knee size of a sweep curve: the interior size where the decline flattens
/// fastest, i.e. the largest mse[i-1] - 2 mse[i] + mse[i+1]. Returns None for
/// curves with fewer than three points.
pub fn knee_by_second_difference(sweep: &[(usize, f64)]) -> Option<usize> {
    if sweep.len() < 3 {
        return None;
    }
    let mut best = None;
    for i in 1..sweep.len() - 1 {
        let d2 = sweep[i - 1].1 - 2.0 * sweep[i].1 + sweep[i + 1].1;
        match best {
            None => best = Some((sweep[i].0, d2)),
            Some((_, cur)) if d2 > cur => best = Some((sweep[i].0, d2)),
            _ => {}
        }
    }
    best.map(|(size, _)| size)
}
