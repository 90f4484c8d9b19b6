//! Node-classification and link-prediction heads with their losses.
//!
//! The NC head scores a node against each candidate label-text embedding
//! with a shared MLP, so the number of classes is only known at call time
//! and unseen label sets work without retraining.

use ndarray::Array2;

use crate::autodiff::{lit, ParamId, ParamStore, Real, Tape, Var};
use crate::cgt_layer::glorot;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One-hidden-layer scoring MLP `w2 · σ(w1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub d_in: usize,
}

impl Mlp {
    fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, d_in: usize, hidden: usize, rng: &mut Rng) -> Self {
        Mlp {
            w1: store.add(format!("{prefix}.w1"), glorot(hidden, d_in, rng)),
            b1: store.add(format!("{prefix}.b1"), Array2::zeros((1, hidden))),
            w2: store.add(format!("{prefix}.w2"), glorot(1, hidden, rng)),
            b2: store.add(format!("{prefix}.b2"), Array2::zeros((1, 1))),
            d_in,
        }
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// Applies the output layer to hidden pre-activations (`rows x hidden`).
    fn finish<T: Real>(&self, tape: &mut Tape<'_, T>, pre: Var, slope: f64) -> Result<Var> {
        let b1 = tape.param(self.b1);
        let w2 = tape.param(self.w2);
        let b2 = tape.param(self.b2);
        let z = tape.add_row(pre, b1)?;
        let z = tape.leaky_relu(z, lit(slope))?;
        let z = tape.matmul_t(z, w2)?;
        tape.add_row(z, b2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NcHead {
    pub mlp: Mlp,
    pub d_node: usize,
    pub d_label: usize,
}

impl NcHead {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_node: usize,
        d_label: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        NcHead {
            mlp: Mlp::register(store, prefix, d_node + d_label, hidden, rng),
            d_node,
            d_label,
        }
    }

    /// Logits `b x C` where entry `(t, c)` is `MLP([h_t ‖ y_c])`.
    ///
    /// The first layer is split into its node and label halves so each half
    /// is projected once, not once per (node, label) pair.
    pub fn logits<T: Real>(&self, tape: &mut Tape<'_, T>, h: Var, labels: Var, slope: f64) -> Result<Var> {
        let [b, dn] = tape.shape(h);
        let [c, dl] = tape.shape(labels);
        if c == 0 {
            return Err(Error::Validation("label table is empty".into()));
        }
        if dn != self.d_node || dl != self.d_label {
            return Err(Error::DimensionMismatch {
                expected: if dn != self.d_node { self.d_node } else { self.d_label },
                found: if dn != self.d_node { dn } else { dl },
            });
        }
        let w1 = tape.param(self.mlp.w1);
        let w_node = tape.slice_cols(w1, 0, dn)?;
        let w_label = tape.slice_cols(w1, dn, dn + dl)?;
        let a = tape.matmul_t(h, w_node)?;
        let l = tape.matmul_t(labels, w_label)?;
        let rows: Vec<usize> = (0..b).flat_map(|t| std::iter::repeat_n(t, c)).collect();
        let cols: Vec<usize> = (0..b).flat_map(|_| 0..c).collect();
        let a = tape.gather_rows(a, &rows)?;
        let l = tape.gather_rows(l, &cols)?;
        let pre = tape.add(a, l)?;
        let z = self.mlp.finish(tape, pre, slope)?;
        tape.reshape(z, b, c)
    }

    /// Class probabilities (`b x C`).
    pub fn scores<T: Real>(&self, tape: &mut Tape<'_, T>, h: Var, labels: Var, slope: f64) -> Result<Var> {
        let z = self.logits(tape, h, labels, slope)?;
        tape.softmax(z)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpHead {
    pub mlp: Mlp,
    pub d_node: usize,
}

impl LpHead {
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, d_node: usize, hidden: usize, rng: &mut Rng) -> Self {
        LpHead {
            mlp: Mlp::register(store, prefix, 3 * d_node, hidden, rng),
            d_node,
        }
    }

    /// Logits `b x 1` of `MLP([h_u ‖ h_v ‖ h_u ⊙ h_v])`.
    pub fn logits<T: Real>(&self, tape: &mut Tape<'_, T>, hu: Var, hv: Var, slope: f64) -> Result<Var> {
        let (su, sv) = (tape.shape(hu), tape.shape(hv));
        if su[1] != self.d_node || sv[1] != self.d_node {
            return Err(Error::DimensionMismatch {
                expected: self.d_node,
                found: if su[1] != self.d_node { su[1] } else { sv[1] },
            });
        }
        if su[0] != sv[0] {
            return Err(Error::shape("lp_head", "endpoint batches differ in length"));
        }
        let prod = tape.mul(hu, hv)?;
        let x = tape.concat(&[hu, hv, prod], 1)?;
        let w1 = tape.param(self.mlp.w1);
        let pre = tape.matmul_t(x, w1)?;
        self.mlp.finish(tape, pre, slope)
    }

    pub fn scores<T: Real>(&self, tape: &mut Tape<'_, T>, hu: Var, hv: Var, slope: f64) -> Result<Var> {
        let z = self.logits(tape, hu, hv, slope)?;
        tape.sigmoid(z)
    }
}

/// Mean cross-entropy `-log p(y)` over the batch.
pub fn nc_loss<T: Real>(tape: &mut Tape<'_, T>, logits: Var, targets: &[usize]) -> Result<Var> {
    let [b, c] = tape.shape(logits);
    if b == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    if targets.len() != b || targets.iter().any(|&y| y >= c) {
        return Err(Error::shape("nc_loss", "targets do not match logits"));
    }
    let lp = tape.log_softmax(logits)?;
    let at: Vec<(usize, usize)> = targets.iter().copied().enumerate().collect();
    let picked = tape.pick(lp, &at)?;
    let m = tape.mean(picked)?;
    tape.scale(m, -T::one())
}

/// Mean binary cross-entropy on logits, written as `softplus(z) - y z`.
pub fn lp_loss<T: Real>(tape: &mut Tape<'_, T>, logits: Var, labels: &[bool]) -> Result<Var> {
    let [b, c] = tape.shape(logits);
    if b == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    if c != 1 || labels.len() != b {
        return Err(Error::shape("lp_loss", "labels do not match logits"));
    }
    let y = Array2::from_shape_fn((b, 1), |(i, _)| if labels[i] { T::one() } else { T::zero() });
    let sp = tape.softplus(logits)?;
    let yz = tape.mul_const(logits, y)?;
    let per = tape.sub(sp, yz)?;
    tape.mean(per)
}
