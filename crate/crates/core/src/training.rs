//! Two-phase alternating optimization.
//!
//! Phase 1 updates the generators with every other network frozen. Phase 2
//! freezes the generators and updates the discriminators on the least-squares
//! objective and the encoders/decoders on the distillation and
//! mutual-information terms, all from the phase-1 translations (detached).

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{self, LossComponents, LossReport, LossWeights};
use crate::networks::{self, BoundNet, ModelArch, Networks, Role};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Networks updated in phase 1.
pub const GENERATOR_GROUP: [Role; 2] = [Role::GenAB, Role::GenBA];
/// Networks updated in phase 2.
pub const CRITIC_GROUP: [Role; 6] = [Role::DiscA, Role::DiscB, Role::EncA, Role::EncB, Role::DecA, Role::DecB];

/// Per-step optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepConfig {
    pub adam: AdamConfig,
    pub weights: LossWeights,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub nets: Networks,
    pub opt_generators: AdamState,
    pub opt_critics: AdamState,
    /// Completed train steps.
    pub step: u64,
    /// Epoch the next step belongs to.
    pub epoch: u64,
    /// Augmentation stream; also seeds the per-epoch data order.
    pub rng: ChaCha8Rng,
}

fn group_tensors<'a>(nets: &'a Networks, group: &'a [Role]) -> impl Iterator<Item = &'a Tensor> + 'a {
    nets.iter().filter(move |n| group.contains(&n.role())).flat_map(|n| n.entries().iter().map(|(_, t)| t))
}

impl TrainState {
    pub fn new(arch: ModelArch, seed: u64) -> Result<Self> {
        let nets = Networks::init(arch, seed)?;
        Ok(Self::from_networks(nets, seed))
    }

    /// Fresh optimizer state around existing parameters.
    pub fn from_networks(nets: Networks, seed: u64) -> Self {
        let opt_generators = AdamState::new(group_tensors(&nets, &GENERATOR_GROUP));
        let opt_critics = AdamState::new(group_tensors(&nets, &CRITIC_GROUP));
        Self { nets, opt_generators, opt_critics, step: 0, epoch: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Bit-exact comparison of parameters, moments, counters and PRNG.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.step == other.step
            && self.epoch == other.epoch
            && self.rng == other.rng
            && self.nets.arch() == other.nets.arch()
            && self.nets.iter().zip(other.nets.iter()).all(|(a, b)| a.bit_eq(b))
            && self.opt_generators.bit_eq(&other.opt_generators)
            && self.opt_critics.bit_eq(&other.opt_critics)
    }

    /// Shuffled sample order for one epoch, derived from the PRNG seed and the
    /// epoch index only, so a run resumed mid-epoch sees the same order.
    pub fn epoch_plan(&self, epoch: u64, len_a: usize, len_b: usize, batch: usize) -> Result<EpochPlan> {
        EpochPlan::new(self.rng.get_seed(), epoch, len_a, len_b, batch)
    }
}

/// Sample order of one epoch. An epoch is one pass over the smaller domain;
/// the larger one is drawn without replacement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochPlan {
    pub order_a: Vec<usize>,
    pub order_b: Vec<usize>,
    pub batch: usize,
    pub steps: usize,
}

impl EpochPlan {
    pub fn new(seed: [u8; 32], epoch: u64, len_a: usize, len_b: usize, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(config_err!("batch size must be >= 1"));
        }
        let steps = len_a.min(len_b) / batch;
        if steps == 0 {
            return Err(config_err!(
                "need at least one full batch per domain: {len_a} A and {len_b} B images for batch {batch}"
            ));
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        // stream 0 is the augmentation stream
        rng.set_stream(epoch + 1);
        let mut order_a: Vec<usize> = (0..len_a).collect();
        let mut order_b: Vec<usize> = (0..len_b).collect();
        order_a.shuffle(&mut rng);
        order_b.shuffle(&mut rng);
        Ok(Self { order_a, order_b, batch, steps })
    }

    /// Sample indices of step `k` within the epoch.
    pub fn batch_indices(&self, k: usize) -> (&[usize], &[usize]) {
        let r = k * self.batch..(k + 1) * self.batch;
        (&self.order_a[r.clone()], &self.order_b[r])
    }
}

/// Translations produced in phase 1, reused detached by phase 2.
#[derive(Debug, Clone)]
pub struct Translations {
    /// `G_BA(x_B)`.
    pub fake_a: Tensor,
    /// `G_AB(x_A)`.
    pub fake_b: Tensor,
}

struct Bound {
    nets: Vec<BoundNet>,
}

impl Bound {
    fn new(g: &mut Graph, nets: &Networks, trainable: &[Role]) -> Self {
        Self { nets: nets.iter().map(|n| n.bind(g, trainable.contains(&n.role()))).collect() }
    }

    fn net(&self, role: Role) -> &BoundNet {
        &self.nets[role.index()]
    }

    fn grads<'g>(&self, g: &'g Graph, group: &[Role]) -> Vec<Option<&'g [Real]>> {
        self.nets
            .iter()
            .filter(|n| group.contains(&n.role()))
            .flat_map(|n| n.vars().iter().map(|&v| g.grad(v)))
            .collect()
    }
}

fn scalar(g: &Graph, v: Var) -> f64 {
    g.value(v).item().map_or(f64::NAN, f64::from)
}

/// Maps kernel-level numeric failures onto the loss term being computed.
fn term<T>(name: &'static str, step: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { term: name, step },
        other => other,
    })
}

fn weighted_sum(g: &mut Graph, parts: &[(Var, f64)]) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for &(v, w) in parts {
        if w == 0.0 {
            continue;
        }
        let v = if w == 1.0 { v } else { g.scale(v, w as Real)? };
        total = Some(match total {
            None => v,
            Some(t) => g.add(t, v)?,
        });
    }
    Ok(total)
}

fn apply_update(state_nets: &mut Networks, group: &[Role], grads: &[Option<&[Real]>], opt: &mut AdamState, adam: &AdamConfig) -> Result<()> {
    let mut params: Vec<&mut Tensor> = state_nets.tensors_mut_in(group).collect();
    adam_step(&mut params, grads, opt, adam)
}

fn check_batches(a: &Tensor, b: &Tensor) -> Result<()> {
    let (_, ca, ha, wa) = a.dims4()?;
    let (_, cb, hb, wb) = b.dims4()?;
    if (ca, ha, wa) != (cb, hb, wb) {
        return Err(config_err!("domain batches differ in shape: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// Phase 1: generator update with discriminators, encoders and decoders frozen.
///
/// Terms whose weight is zero are skipped and reported as zero.
pub fn generator_phase(
    state: &mut TrainState,
    batch_a: &Tensor,
    batch_b: &Tensor,
    cfg: &StepConfig,
) -> Result<(LossReport, Translations)> {
    check_batches(batch_a, batch_b)?;
    let step = state.step;
    let w = cfg.weights;
    let mut g = Graph::new();
    let nets = Bound::new(&mut g, &state.nets, &GENERATOR_GROUP);
    let xa = g.constant(batch_a.clone());
    let xb = g.constant(batch_b.clone());

    let fake_b = term("G_AB", step, networks::generator_forward(&mut g, nets.net(Role::GenAB), xa))?;
    let fake_a = term("G_BA", step, networks::generator_forward(&mut g, nets.net(Role::GenBA), xb))?;

    let adv_a = term("adv_A", step, (|| {
        let s = networks::discriminator_forward(&mut g, nets.net(Role::DiscA), fake_a)?;
        losses::adv_loss_generator(&mut g, s)
    })())?;
    let adv_b = term("adv_B", step, (|| {
        let s = networks::discriminator_forward(&mut g, nets.net(Role::DiscB), fake_b)?;
        losses::adv_loss_generator(&mut g, s)
    })())?;
    let cyc = term("cyc", step, (|| {
        let rec_a = networks::generator_forward(&mut g, nets.net(Role::GenBA), fake_b)?;
        let rec_b = networks::generator_forward(&mut g, nets.net(Role::GenAB), fake_a)?;
        losses::cycle_loss(&mut g, xa, rec_a, xb, rec_b)
    })())?;

    // content codes of the real images; constant here since encoders are frozen
    let needs_codes = w.w_dis != 0.0 || w.w_mi != 0.0;
    let (mut z_a, mut z_b) = (None, None);
    if needs_codes {
        z_a = Some(term("dis_AB", step, networks::encoder_forward(&mut g, nets.net(Role::EncA), xa))?);
        z_b = Some(term("dis_BA", step, networks::encoder_forward(&mut g, nets.net(Role::EncB), xb))?);
    }

    let mut dis = [None, None];
    if w.w_dis != 0.0 {
        let (za, zb) = (z_a.unwrap(), z_b.unwrap());
        dis[0] = Some(term("dis_AB", step, distillation(&mut g, &nets, Role::DecB, Role::DecA, fake_b, xa, za))?);
        dis[1] = Some(term("dis_BA", step, distillation(&mut g, &nets, Role::DecA, Role::DecB, fake_a, xb, zb))?);
    }
    let mut mi = [None, None];
    if w.w_mi != 0.0 {
        let (za, zb) = (z_a.unwrap(), z_b.unwrap());
        mi[0] = Some(term("mi_AB", step, (|| {
            let z_ab = networks::encoder_forward(&mut g, nets.net(Role::EncB), fake_b)?;
            losses::mi_loss(&mut g, za, z_ab)
        })())?);
        mi[1] = Some(term("mi_BA", step, (|| {
            let z_ba = networks::encoder_forward(&mut g, nets.net(Role::EncA), fake_a)?;
            losses::mi_loss(&mut g, zb, z_ba)
        })())?);
    }

    let mut parts = alloc::vec![(adv_a, 1.0), (adv_b, 1.0), (cyc, w.alpha)];
    parts.extend(dis.iter().flatten().map(|&v| (v, w.w_dis)));
    parts.extend(mi.iter().flatten().map(|&v| (v, w.w_mi)));
    let total = weighted_sum(&mut g, &parts)?.expect("adversarial terms always present");

    let value = |v: Option<Var>| v.map_or(0.0, |v| scalar(&g, v));
    let components = LossComponents {
        adv_a: scalar(&g, adv_a),
        adv_b: scalar(&g, adv_b),
        cyc: scalar(&g, cyc),
        dis_ab: value(dis[0]),
        dis_ba: value(dis[1]),
        mi_ab: value(mi[0]),
        mi_ba: value(mi[1]),
    };
    let report = losses::total_objective(&components, &w).map_err(|e| match e {
        Error::NonFiniteLoss { term, .. } => Error::NonFiniteLoss { term, step },
        other => other,
    })?;

    term("total", step, g.backward(total))?;
    let grads = nets.grads(&g, &GENERATOR_GROUP);
    let translations = Translations { fake_a: g.value(fake_a).clone(), fake_b: g.value(fake_b).clone() };
    apply_update(&mut state.nets, &GENERATOR_GROUP, &grads, &mut state.opt_generators, &cfg.adam)?;
    Ok((report, translations))
}

/// `L1(translated, Dec_cross(z)) + L1(source, Dec_same(z))`.
#[allow(clippy::too_many_arguments)]
fn distillation(
    g: &mut Graph,
    nets: &Bound,
    cross: Role,
    same: Role,
    translated: Var,
    source: Var,
    z: Var,
) -> Result<Var> {
    let cross_img = networks::decoder_forward(g, nets.net(cross), z)?;
    let recon = networks::decoder_forward(g, nets.net(same), z)?;
    losses::dis_loss(g, translated, cross_img, source, recon)
}

/// Phase 2: discriminator and encoder/decoder update with the generators frozen.
pub fn critic_phase(
    state: &mut TrainState,
    batch_a: &Tensor,
    batch_b: &Tensor,
    fakes: &Translations,
    cfg: &StepConfig,
) -> Result<()> {
    check_batches(batch_a, batch_b)?;
    let step = state.step;
    let w = cfg.weights;
    let mut g = Graph::new();
    let nets = Bound::new(&mut g, &state.nets, &CRITIC_GROUP);
    let xa = g.constant(batch_a.clone());
    let xb = g.constant(batch_b.clone());
    let fake_a = g.constant(fakes.fake_a.clone());
    let fake_b = g.constant(fakes.fake_b.clone());

    // discriminators first
    let d_a = term("adv_A", step, (|| {
        let real = networks::discriminator_forward(&mut g, nets.net(Role::DiscA), xa)?;
        let fake = networks::discriminator_forward(&mut g, nets.net(Role::DiscA), fake_a)?;
        losses::adv_loss_discriminator(&mut g, real, fake)
    })())?;
    let d_b = term("adv_B", step, (|| {
        let real = networks::discriminator_forward(&mut g, nets.net(Role::DiscB), xb)?;
        let fake = networks::discriminator_forward(&mut g, nets.net(Role::DiscB), fake_b)?;
        losses::adv_loss_discriminator(&mut g, real, fake)
    })())?;
    let mut parts = alloc::vec![(d_a, 1.0), (d_b, 1.0)];

    // then encoders and decoders
    if w.w_dis != 0.0 || w.w_mi != 0.0 {
        let z_a = term("dis_AB", step, networks::encoder_forward(&mut g, nets.net(Role::EncA), xa))?;
        let z_b = term("dis_BA", step, networks::encoder_forward(&mut g, nets.net(Role::EncB), xb))?;
        if w.w_dis != 0.0 {
            let ab = term("dis_AB", step, distillation(&mut g, &nets, Role::DecB, Role::DecA, fake_b, xa, z_a))?;
            let ba = term("dis_BA", step, distillation(&mut g, &nets, Role::DecA, Role::DecB, fake_a, xb, z_b))?;
            parts.extend([(ab, w.w_dis), (ba, w.w_dis)]);
        }
        if w.w_mi != 0.0 {
            let ab = term("mi_AB", step, (|| {
                let z_ab = networks::encoder_forward(&mut g, nets.net(Role::EncB), fake_b)?;
                losses::mi_loss(&mut g, z_a, z_ab)
            })())?;
            let ba = term("mi_BA", step, (|| {
                let z_ba = networks::encoder_forward(&mut g, nets.net(Role::EncA), fake_a)?;
                losses::mi_loss(&mut g, z_b, z_ba)
            })())?;
            parts.extend([(ab, w.w_mi), (ba, w.w_mi)]);
        }
    }
    let total = weighted_sum(&mut g, &parts)?.expect("discriminator terms always present");
    term("critic_total", step, g.backward(total))?;
    let grads = nets.grads(&g, &CRITIC_GROUP);
    apply_update(&mut state.nets, &CRITIC_GROUP, &grads, &mut state.opt_critics, &cfg.adam)
}

/// One full alternating step. On error the state is left as it was.
pub fn train_step(state: &mut TrainState, batch_a: &Tensor, batch_b: &Tensor, cfg: &StepConfig) -> Result<LossReport> {
    let backup = state.clone();
    let result = generator_phase(state, batch_a, batch_b, cfg)
        .and_then(|(report, fakes)| critic_phase(state, batch_a, batch_b, &fakes, cfg).map(|_| report));
    match result {
        Ok(report) => {
            state.step += 1;
            Ok(report)
        }
        Err(e) => {
            *state = backup;
            Err(e)
        }
    }
}
