//! Training objectives.
//!
//! Every expectation is a mean over batch and spatial elements, so magnitudes
//! do not depend on resolution.

use crate::error::{config_err, usage_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;

/// Coefficients of the full objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Cycle-consistency weight.
    pub alpha: f64,
    /// Content distillation weight.
    pub w_dis: f64,
    /// Mutual-information surrogate weight.
    pub w_mi: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 10.0, w_dis: 1.0, w_mi: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("w_dis", self.w_dis), ("w_mi", self.w_mi)] {
            if !v.is_finite() || v < 0.0 {
                return Err(config_err!("loss weight {name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

fn non_empty<T: Scalar>(g: &Graph<T>, v: Var, what: &str) -> Result<()> {
    if g.value(v).numel() == 0 {
        return Err(usage_err!("{what}: empty tensor"));
    }
    Ok(())
}

fn same_shape<T: Scalar>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(usage_err!(
            "{what}: shape {:?} vs {:?}",
            g.value(a).shape(),
            g.value(b).shape()
        ));
    }
    Ok(())
}

fn mean_sq_from<T: Scalar>(g: &mut Graph<T>, scores: Var, target: f64) -> Result<Var> {
    let d = if target == 0.0 { scores } else { g.shift(scores, T::lit(-target))? };
    let sq = g.square(d)?;
    g.mean(sq)
}

/// Mean absolute difference.
pub fn l1<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, a, b, "l1")?;
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    g.mean(d)
}

/// Least-squares discriminator objective: `mean((real-1)²) + mean(fake²)`.
pub fn adv_loss_discriminator<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    non_empty(g, real, "adv_loss_discriminator")?;
    non_empty(g, fake, "adv_loss_discriminator")?;
    let r = mean_sq_from(g, real, 1.0)?;
    let f = mean_sq_from(g, fake, 0.0)?;
    g.add(r, f)
}

/// Least-squares generator objective: `mean((fake-1)²)`.
pub fn adv_loss_generator<T: Scalar>(g: &mut Graph<T>, fake: Var) -> Result<Var> {
    non_empty(g, fake, "adv_loss_generator")?;
    mean_sq_from(g, fake, 1.0)
}

/// `L1(recon_a, x_a) + L1(recon_b, x_b)`.
pub fn cycle_loss<T: Scalar>(g: &mut Graph<T>, x_a: Var, recon_a: Var, x_b: Var, recon_b: Var) -> Result<Var> {
    same_shape(g, x_a, recon_a, "cycle_loss")?;
    same_shape(g, x_b, recon_b, "cycle_loss")?;
    let la = l1(g, recon_a, x_a)?;
    let lb = l1(g, recon_b, x_b)?;
    g.add(la, lb)
}

/// Content distillation: `L1(translated, decoded cross-domain) + L1(source, reconstruction)`.
pub fn dis_loss<T: Scalar>(
    g: &mut Graph<T>,
    translated: Var,
    cross_decoded: Var,
    source: Var,
    reconstructed: Var,
) -> Result<Var> {
    same_shape(g, translated, cross_decoded, "dis_loss")?;
    same_shape(g, source, reconstructed, "dis_loss")?;
    let a = l1(g, translated, cross_decoded)?;
    let b = l1(g, source, reconstructed)?;
    g.add(a, b)
}

/// Mutual-information surrogate: L1 alignment of the source content code with
/// the code recovered from the translated image.
pub fn mi_loss<T: Scalar>(g: &mut Graph<T>, z_src: Var, z_trans: Var) -> Result<Var> {
    if g.value(z_src).shape() != g.value(z_trans).shape() {
        return Err(config_err!(
            "mi_loss: latent shapes {:?} and {:?} differ; encoder descriptors must match",
            g.value(z_src).shape(),
            g.value(z_trans).shape()
        ));
    }
    l1(g, z_src, z_trans)
}

/// Scalar values of the terms of the full objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub adv_a: f64,
    pub adv_b: f64,
    pub cyc: f64,
    pub dis_ab: f64,
    pub dis_ba: f64,
    pub mi_ab: f64,
    pub mi_ba: f64,
}

/// Per-term values and their weighted total at one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub adv_a: f64,
    pub adv_b: f64,
    pub cyc: f64,
    pub dis_ab: f64,
    pub dis_ba: f64,
    pub mi_ab: f64,
    pub mi_ba: f64,
    pub total: f64,
}

impl LossReport {
    /// Field names in log order.
    pub const FIELDS: [&'static str; 8] = ["adv_A", "adv_B", "cyc", "dis_AB", "dis_BA", "mi_AB", "mi_BA", "total"];

    pub fn values(&self) -> [f64; 8] {
        [self.adv_a, self.adv_b, self.cyc, self.dis_ab, self.dis_ba, self.mi_ab, self.mi_ba, self.total]
    }

    pub fn components(&self) -> LossComponents {
        LossComponents {
            adv_a: self.adv_a,
            adv_b: self.adv_b,
            cyc: self.cyc,
            dis_ab: self.dis_ab,
            dis_ba: self.dis_ba,
            mi_ab: self.mi_ab,
            mi_ba: self.mi_ba,
        }
    }
}

/// `adv_A + adv_B + α·cyc + w_dis·(dis_AB + dis_BA) + w_mi·(mi_AB + mi_BA)`.
pub fn total_objective(c: &LossComponents, w: &LossWeights) -> Result<LossReport> {
    let terms = [
        ("adv_A", c.adv_a),
        ("adv_B", c.adv_b),
        ("cyc", c.cyc),
        ("dis_AB", c.dis_ab),
        ("dis_BA", c.dis_ba),
        ("mi_AB", c.mi_ab),
        ("mi_BA", c.mi_ba),
    ];
    for (term, v) in terms {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term, step: 0 });
        }
    }
    let total = c.adv_a + c.adv_b + w.alpha * c.cyc + w.w_dis * (c.dis_ab + c.dis_ba) + w.w_mi * (c.mi_ab + c.mi_ba);
    Ok(LossReport {
        adv_a: c.adv_a,
        adv_b: c.adv_b,
        cyc: c.cyc,
        dis_ab: c.dis_ab,
        dis_ba: c.dis_ba,
        mi_ab: c.mi_ab,
        mi_ba: c.mi_ba,
        total,
    })
}
