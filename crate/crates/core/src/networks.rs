//! The eight networks: two generators, two patch discriminators, two content
//! encoders and two domain decoders.
//!
//! Every convolution is 3×3 with unit padding. Downsampling uses stride 2,
//! upsampling is nearest 2× followed by a stride-1 convolution.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

const KERNEL: usize = 3;
const IMAGE_CHANNELS: usize = 3;

/// Which of the eight networks a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    GenAB,
    GenBA,
    DiscA,
    DiscB,
    EncA,
    EncB,
    DecA,
    DecB,
}

/// Architecture family of a [`Role`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Generator,
    Discriminator,
    Encoder,
    Decoder,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::GenAB,
        Role::GenBA,
        Role::DiscA,
        Role::DiscB,
        Role::EncA,
        Role::EncB,
        Role::DecA,
        Role::DecB,
    ];

    pub fn kind(self) -> Kind {
        match self {
            Role::GenAB | Role::GenBA => Kind::Generator,
            Role::DiscA | Role::DiscB => Kind::Discriminator,
            Role::EncA | Role::EncB => Kind::Encoder,
            Role::DecA | Role::DecB => Kind::Decoder,
        }
    }

    /// Name prefix used in checkpoints.
    pub fn prefix(self) -> &'static str {
        match self {
            Role::GenAB => "g_ab",
            Role::GenBA => "g_ba",
            Role::DiscA => "d_a",
            Role::DiscB => "d_b",
            Role::EncA => "enc_a",
            Role::EncB => "enc_b",
            Role::DecA => "dec_a",
            Role::DecB => "dec_b",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Width, depth and residual count of one network.
///
/// `stages` counts stride-2 convolutions (and, for generators and decoders,
/// the matching upsampling stages). `latent_channels` is only read by
/// encoders and decoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchDescriptor {
    pub base_channels: usize,
    pub stages: usize,
    pub res_blocks: usize,
    pub latent_channels: usize,
}

impl ArchDescriptor {
    pub const fn new(base_channels: usize, stages: usize, res_blocks: usize, latent_channels: usize) -> Self {
        Self { base_channels, stages, res_blocks, latent_channels }
    }

    /// Spatial dims must be divisible by this factor.
    pub fn spatial_factor(&self) -> usize {
        1 << self.stages
    }
}

/// Descriptors for the whole model. Decoders mirror the encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelArch {
    pub generator: ArchDescriptor,
    pub discriminator: ArchDescriptor,
    pub encoder_a: ArchDescriptor,
    pub encoder_b: ArchDescriptor,
}

impl Default for ModelArch {
    fn default() -> Self {
        Self {
            generator: ArchDescriptor::new(16, 2, 2, 0),
            discriminator: ArchDescriptor::new(16, 3, 0, 0),
            encoder_a: ArchDescriptor::new(16, 2, 0, 32),
            encoder_b: ArchDescriptor::new(16, 2, 0, 32),
        }
    }
}

impl ModelArch {
    /// Rejects descriptors that cannot produce a working model.
    pub fn validate(&self) -> Result<()> {
        if self.encoder_a != self.encoder_b {
            return Err(config_err!(
                "Enc_A and Enc_B descriptors differ ({:?} vs {:?}); latents must have identical shapes",
                self.encoder_a,
                self.encoder_b
            ));
        }
        for (what, d) in [("generator", self.generator), ("discriminator", self.discriminator), ("encoder", self.encoder_a)] {
            if d.base_channels == 0 || d.stages == 0 {
                return Err(config_err!("{what} needs base_channels >= 1 and stages >= 1, got {d:?}"));
            }
        }
        if self.encoder_a.latent_channels == 0 {
            return Err(config_err!("encoder latent_channels must be >= 1"));
        }
        Ok(())
    }

    pub fn descriptor(&self, role: Role) -> ArchDescriptor {
        match role {
            Role::GenAB | Role::GenBA => self.generator,
            Role::DiscA | Role::DiscB => self.discriminator,
            Role::EncA | Role::DecA => self.encoder_a,
            Role::EncB | Role::DecB => self.encoder_b,
        }
    }

    /// Image side lengths must be divisible by this.
    pub fn spatial_factor(&self) -> usize {
        self.generator.spatial_factor().max(self.encoder_a.spatial_factor())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Act {
    Identity,
    Relu,
    Leaky,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Conv { cin: usize, cout: usize, stride: usize, upsample: bool, norm: bool, act: Act },
    Residual { channels: usize },
}

fn conv(cin: usize, cout: usize, stride: usize, norm: bool, act: Act) -> Layer {
    Layer::Conv { cin, cout, stride, upsample: false, norm, act }
}

fn up_conv(cin: usize, cout: usize) -> Layer {
    Layer::Conv { cin, cout, stride: 1, upsample: true, norm: true, act: Act::Relu }
}

fn layers(kind: Kind, d: &ArchDescriptor) -> Vec<(String, Layer)> {
    let c = d.base_channels;
    let s = d.stages;
    let mut out = Vec::new();
    match kind {
        Kind::Generator => {
            out.push(("c0".into(), conv(IMAGE_CHANNELS, c, 1, true, Act::Relu)));
            for i in 0..s {
                out.push((format!("down{i}"), conv(c << i, c << (i + 1), 2, true, Act::Relu)));
            }
            for i in 0..d.res_blocks {
                out.push((format!("res{i}"), Layer::Residual { channels: c << s }));
            }
            for i in 0..s {
                out.push((format!("up{i}"), up_conv(c << (s - i), c << (s - i - 1))));
            }
            out.push(("out".into(), conv(c, IMAGE_CHANNELS, 1, false, Act::Tanh)));
        }
        Kind::Discriminator => {
            let mut cin = IMAGE_CHANNELS;
            for i in 0..s {
                // no normalization on the first layer
                out.push((format!("d{i}"), conv(cin, c << i, 2, i > 0, Act::Leaky)));
                cin = c << i;
            }
            out.push(("out".into(), conv(cin, 1, 1, false, Act::Identity)));
        }
        Kind::Encoder => {
            let mut cin = IMAGE_CHANNELS;
            for i in 0..s {
                let last = i + 1 == s;
                let cout = if last { d.latent_channels } else { c << i };
                // the latent is normalized but not rectified
                let act = if last { Act::Identity } else { Act::Relu };
                out.push((format!("e{i}"), conv(cin, cout, 2, true, act)));
                cin = cout;
            }
        }
        Kind::Decoder => {
            let mut cin = d.latent_channels;
            for i in 0..s {
                let cout = if i + 1 < s { c << (s - 2 - i) } else { c };
                out.push((format!("up{i}"), up_conv(cin, cout)));
                cin = cout;
            }
            out.push(("out".into(), conv(cin, IMAGE_CHANNELS, 1, false, Act::Tanh)));
        }
    }
    out
}

/// `(name, shape)` of every parameter in declaration order.
fn param_layout(kind: Kind, d: &ArchDescriptor) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut push_conv = |prefix: &str, cin: usize, cout: usize| {
        out.push((format!("{prefix}.w"), alloc::vec![cout, cin, KERNEL, KERNEL]));
        out.push((format!("{prefix}.b"), alloc::vec![cout]));
    };
    for (name, layer) in layers(kind, d) {
        match layer {
            Layer::Conv { cin, cout, .. } => push_conv(&name, cin, cout),
            Layer::Residual { channels } => {
                push_conv(&format!("{name}.c1"), channels, channels);
                push_conv(&format!("{name}.c2"), channels, channels);
            }
        }
    }
    out
}

/// Number of scalar parameters of a network, from its descriptor alone.
pub fn param_count(kind: Kind, d: &ArchDescriptor) -> usize {
    param_layout(kind, d).iter().map(|(_, s)| s.iter().product::<usize>()).sum()
}

/// Named parameter tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    role: Role,
    arch: ArchDescriptor,
    entries: Vec<(String, Tensor)>,
}

impl NetworkParams {
    /// Gaussian(0, 0.02) weights and zero biases.
    pub fn init(role: Role, arch: ArchDescriptor, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(role.index() as u64 + 1);
        let normal = Normal::new(0.0, INIT_STD as Real).expect("valid std");
        let entries = param_layout(role.kind(), &arch)
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".b") {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::from_fn(&shape, |_| normal.sample(&mut rng))
                };
                (name, t)
            })
            .collect();
        Self { role, arch, entries }
    }

    /// All parameters zero.
    pub fn zeros(role: Role, arch: ArchDescriptor) -> Self {
        let entries = param_layout(role.kind(), &arch)
            .into_iter()
            .map(|(name, shape)| {
                let t = Tensor::zeros(&shape);
                (name, t)
            })
            .collect();
        Self { role, arch, entries }
    }

    /// Rebuilds a parameter set, checking names and shapes against the descriptor.
    pub fn from_entries(role: Role, arch: ArchDescriptor, entries: Vec<(String, Tensor)>) -> Result<Self> {
        let layout = param_layout(role.kind(), &arch);
        if layout.len() != entries.len() {
            return Err(config_err!(
                "{}: expected {} parameter tensors, got {}",
                role.prefix(),
                layout.len(),
                entries.len()
            ));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&entries) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(config_err!(
                    "{}: expected `{name}` {shape:?}, got `{got_name}` {:?}",
                    role.prefix(),
                    t.shape()
                ));
            }
        }
        Ok(Self { role, arch, entries })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn arch(&self) -> ArchDescriptor {
        self.arch
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Places the parameters on a graph. Frozen networks still pass gradients
    /// through to their inputs.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundNet {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| if trainable { g.parameter(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        BoundNet { role: self.role, arch: self.arch, vars }
    }

    /// Bit-exact equality of every parameter.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.role == other.role
            && self.arch == other.arch
            && self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((n1, t1), (n2, t2))| n1 == n2 && t1.bit_eq(t2))
    }
}

/// A network whose parameters live on a [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundNet {
    role: Role,
    arch: ArchDescriptor,
    vars: Vec<Var>,
}

impl BoundNet {
    pub fn role(&self) -> Role {
        self.role
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn conv_block(&self, g: &mut Graph, x: Var, next: &mut usize, layer: &Layer) -> Result<Var> {
        let Layer::Conv { stride, upsample, norm, act, .. } = *layer else {
            unreachable!("conv_block on residual")
        };
        let (w, b) = (self.vars[*next], self.vars[*next + 1]);
        *next += 2;
        let x = if upsample { g.upsample2x(x)? } else { x };
        let mut y = g.conv2d(x, w, b, stride, KERNEL / 2)?;
        if norm {
            y = g.instance_norm(y)?;
        }
        match act {
            Act::Identity => Ok(y),
            Act::Relu => g.relu(y),
            Act::Leaky => g.leaky_relu(y),
            Act::Tanh => g.tanh(y),
        }
    }

    fn run(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut next = 0;
        let mut h = x;
        for (_, layer) in layers(self.role.kind(), &self.arch) {
            h = match layer {
                Layer::Conv { .. } => self.conv_block(g, h, &mut next, &layer)?,
                Layer::Residual { channels } => {
                    let inner = conv(channels, channels, 1, true, Act::Relu);
                    let r = self.conv_block(g, h, &mut next, &inner)?;
                    let last = conv(channels, channels, 1, true, Act::Identity);
                    let r = self.conv_block(g, r, &mut next, &last)?;
                    g.add(h, r)?
                }
            };
        }
        debug_assert_eq!(next, self.vars.len());
        Ok(h)
    }

    fn expect_kind(&self, kind: Kind) -> Result<()> {
        if self.role.kind() == kind {
            Ok(())
        } else {
            Err(config_err!("{} is not a {kind:?}", self.role.prefix()))
        }
    }
}

fn check_image(g: &Graph, x: Var, factor: usize, who: &str) -> Result<()> {
    let (_, c, h, w) = g.value(x).dims4()?;
    if c != IMAGE_CHANNELS {
        return Err(config_err!("{who}: expected 3 input channels, got {c}"));
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(config_err!("{who}: image {h}x{w} not divisible by {factor}"));
    }
    Ok(())
}

/// Image-to-image translation; output has the input's shape and lies in (-1, 1).
pub fn generator_forward(g: &mut Graph, net: &BoundNet, image: Var) -> Result<Var> {
    net.expect_kind(Kind::Generator)?;
    check_image(g, image, net.arch.spatial_factor(), net.role.prefix())?;
    net.run(g, image)
}

/// Single-channel map of unbounded patch realism scores.
pub fn discriminator_forward(g: &mut Graph, net: &BoundNet, image: Var) -> Result<Var> {
    net.expect_kind(Kind::Discriminator)?;
    check_image(g, image, 1, net.role.prefix())?;
    net.run(g, image)
}

/// Spatial content code of shape `N × Cz × H/2^S × W/2^S`.
pub fn encoder_forward(g: &mut Graph, net: &BoundNet, image: Var) -> Result<Var> {
    net.expect_kind(Kind::Encoder)?;
    check_image(g, image, net.arch.spatial_factor(), net.role.prefix())?;
    net.run(g, image)
}

/// Maps a content code back to an image in (-1, 1).
pub fn decoder_forward(g: &mut Graph, net: &BoundNet, z: Var) -> Result<Var> {
    net.expect_kind(Kind::Decoder)?;
    let (_, c, _, _) = g.value(z).dims4()?;
    if c != net.arch.latent_channels {
        return Err(config_err!(
            "{}: latent has {c} channels, descriptor expects {}",
            net.role.prefix(),
            net.arch.latent_channels
        ));
    }
    net.run(g, z)
}

/// Where a content code is active: channel mean of `|z|`, bilinearly resized
/// to `target` and min-max normalized per sample into `[0, 1]`.
///
/// A sample whose channel-mean map is constant yields all zeros.
pub fn attention_map(z: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let (n, c, h, w) = z.dims4()?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(config_err!("attention_map: empty target size"));
    }
    let mut out = Vec::with_capacity(n * th * tw);
    for s in 0..n {
        let sample = &z.data()[s * c * h * w..][..c * h * w];
        let mut energy = alloc::vec![0.0 as Real; h * w];
        for plane in sample.chunks_exact(h * w) {
            for (e, v) in energy.iter_mut().zip(plane) {
                *e += v.abs();
            }
        }
        for e in energy.iter_mut() {
            *e /= c as Real;
        }
        let lo = energy.iter().copied().fold(Real::INFINITY, Real::min);
        let hi = energy.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        if lo == hi {
            out.extend(core::iter::repeat_n(0.0, th * tw));
            continue;
        }
        let resized = resize_bilinear(&energy, (h, w), target);
        let lo = resized.iter().copied().fold(Real::INFINITY, Real::min);
        let hi = resized.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let span = hi - lo;
        out.extend(resized.iter().map(|v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 }));
    }
    Tensor::new(&[n, 1, th, tw], out)
}

/// Half-pixel-centre bilinear resampling of one plane.
pub fn resize_bilinear(src: &[Real], (h, w): (usize, usize), (th, tw): (usize, usize)) -> Vec<Real> {
    let coord = |d: usize, from: usize, to: usize| -> (usize, usize, Real) {
        let pos = ((d as Real + 0.5) * from as Real / to as Real - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(from - 1);
        let i1 = (i0 + 1).min(from - 1);
        (i0, i1, pos - i0 as Real)
    };
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let (y0, y1, fy) = coord(y, h, th);
        for x in 0..tw {
            let (x0, x1, fx) = coord(x, w, tw);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// All eight parameter sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    arch: ModelArch,
    nets: Vec<NetworkParams>,
}

impl Networks {
    /// Seeded initialization of every network.
    pub fn init(arch: ModelArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let nets = Role::ALL.iter().map(|&r| NetworkParams::init(r, arch.descriptor(r), seed)).collect();
        Ok(Self { arch, nets })
    }

    pub fn from_parts(arch: ModelArch, nets: Vec<NetworkParams>) -> Result<Self> {
        arch.validate()?;
        if nets.len() != Role::ALL.len() || nets.iter().zip(Role::ALL).any(|(n, r)| n.role != r) {
            return Err(config_err!("expected the eight networks in canonical order"));
        }
        for n in &nets {
            if n.arch != arch.descriptor(n.role) {
                return Err(config_err!("{}: descriptor does not match the model", n.role.prefix()));
            }
        }
        Ok(Self { arch, nets })
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn get(&self, role: Role) -> &NetworkParams {
        &self.nets[role.index()]
    }

    pub fn get_mut(&mut self, role: Role) -> &mut NetworkParams {
        &mut self.nets[role.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &NetworkParams> {
        self.nets.iter()
    }

    /// Mutable parameter tensors of the networks in `group`, in canonical order.
    pub fn tensors_mut_in<'a>(&'a mut self, group: &'a [Role]) -> impl Iterator<Item = &'a mut Tensor> + 'a {
        self.nets.iter_mut().filter(move |n| group.contains(&n.role)).flat_map(|n| n.tensors_mut())
    }

    pub fn param_count(&self) -> usize {
        self.nets.iter().map(NetworkParams::param_count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = rand_distr::Uniform::new(-1.0, 1.0).unwrap();
        Tensor::from_fn(shape, |_| u.sample(&mut rng))
    }

    fn arch() -> ModelArch {
        ModelArch::default()
    }

    #[test]
    fn generator_preserves_shape_and_range() {
        let net = NetworkParams::init(Role::GenAB, arch().generator, 1);
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x = g.constant(input(&[1, 3, 32, 32], 2));
        let y = generator_forward(&mut g, &b, x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 32, 32]);
        assert!(g.value(y).data().iter().all(|v| *v > -1.0 && *v < 1.0));
    }

    #[test]
    fn generator_is_deterministic() {
        let net = NetworkParams::init(Role::GenBA, arch().generator, 5);
        let run = || {
            let mut g = Graph::new();
            let b = net.bind(&mut g, false);
            let x = g.constant(input(&[2, 3, 16, 16], 3));
            let y = generator_forward(&mut g, &b, x).unwrap();
            g.value(y).clone()
        };
        assert!(run().bit_eq(&run()));
    }

    #[test]
    fn generator_rejects_indivisible_size() {
        let net = NetworkParams::init(Role::GenAB, arch().generator, 1);
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x = g.constant(input(&[1, 3, 30, 32], 2));
        assert!(matches!(generator_forward(&mut g, &b, x), Err(crate::Error::Config(_))));
    }

    #[test]
    fn discriminator_patch_map_shape() {
        let net = NetworkParams::init(Role::DiscA, arch().discriminator, 1);
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x = g.constant(input(&[1, 3, 32, 32], 2));
        let y = discriminator_forward(&mut g, &b, x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 4, 4]);
    }

    #[test]
    fn zero_discriminator_scores_zero() {
        let net = NetworkParams::zeros(Role::DiscB, arch().discriminator);
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[1, 3, 32, 32]));
        let y = discriminator_forward(&mut g, &b, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_latent_shape_and_sensitivity() {
        let net = NetworkParams::init(Role::EncA, arch().encoder_a, 9);
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x1 = g.constant(input(&[1, 3, 32, 32], 1));
        let x2 = g.constant(input(&[1, 3, 32, 32], 2));
        let z1 = encoder_forward(&mut g, &b, x1).unwrap();
        let z1b = encoder_forward(&mut g, &b, x1).unwrap();
        let z2 = encoder_forward(&mut g, &b, x2).unwrap();
        assert_eq!(g.value(z1).shape(), &[1, 32, 8, 8]);
        assert!(g.value(z1).bit_eq(g.value(z1b)));
        assert!(g.value(z1).max_abs_diff(g.value(z2)).unwrap() > 1e-3);
    }

    #[test]
    fn both_encoders_emit_identical_latent_shapes() {
        let a = arch();
        let mut g = Graph::new();
        let ea = NetworkParams::init(Role::EncA, a.encoder_a, 1).bind(&mut g, false);
        let eb = NetworkParams::init(Role::EncB, a.encoder_b, 1).bind(&mut g, false);
        for hw in [8, 16, 24, 32] {
            let x = g.constant(input(&[2, 3, hw, hw], hw as u64));
            let za = encoder_forward(&mut g, &ea, x).unwrap();
            let zb = encoder_forward(&mut g, &eb, x).unwrap();
            assert_eq!(g.value(za).shape(), g.value(zb).shape());
        }
    }

    #[test]
    fn mismatched_encoders_are_rejected() {
        let mut a = arch();
        a.encoder_b.latent_channels = 16;
        assert!(matches!(a.validate(), Err(crate::Error::Config(_))));
        assert!(Networks::init(a, 0).is_err());
    }

    #[test]
    fn decoder_inverts_encoder_shape() {
        let a = arch();
        let mut g = Graph::new();
        let enc = NetworkParams::init(Role::EncB, a.encoder_b, 4).bind(&mut g, false);
        let dec = NetworkParams::init(Role::DecA, a.encoder_a, 4).bind(&mut g, false);
        let x = g.constant(input(&[1, 3, 32, 32], 8));
        let z = encoder_forward(&mut g, &enc, x).unwrap();
        let y = decoder_forward(&mut g, &dec, z).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 32, 32]);
        assert!(g.value(y).data().iter().all(|v| *v > -1.0 && *v < 1.0));
    }

    #[test]
    fn zero_decoder_outputs_zero() {
        let dec = NetworkParams::zeros(Role::DecB, arch().encoder_b);
        let mut g = Graph::new();
        let b = dec.bind(&mut g, false);
        let z = g.constant(Tensor::zeros(&[1, 32, 8, 8]));
        let y = decoder_forward(&mut g, &b, z).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 32, 32]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decoder_rejects_wrong_latent_channels() {
        let dec = NetworkParams::zeros(Role::DecB, arch().encoder_b);
        let mut g = Graph::new();
        let b = dec.bind(&mut g, false);
        let z = g.constant(Tensor::zeros(&[1, 16, 8, 8]));
        assert!(decoder_forward(&mut g, &b, z).is_err());
    }

    #[test]
    fn wrong_role_is_rejected() {
        let net = NetworkParams::init(Role::DiscA, arch().discriminator, 1);
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[1, 3, 32, 32]));
        assert!(generator_forward(&mut g, &b, x).is_err());
    }

    #[test]
    fn golden_parameter_counts() {
        // hand-tallied: 3x3 convs, weights cout*cin*9 plus cout biases
        let a = arch();
        // c0 448, down 4640 + 18496, 2 res blocks of 2*36928, up 18464 + 4624, out 435
        assert_eq!(param_count(Kind::Generator, &a.generator), 194_819);
        // 448 + 4640 + 18496 + out 577
        assert_eq!(param_count(Kind::Discriminator, &a.discriminator), 24_161);
        // 448 + 4640
        assert_eq!(param_count(Kind::Encoder, &a.encoder_a), 5_088);
        // up 32->16: 4624, up 16->16: 2320, out 435
        assert_eq!(param_count(Kind::Decoder, &a.encoder_a), 7_379);
        let nets = Networks::init(a, 0).unwrap();
        assert_eq!(nets.param_count(), 2 * (194_819 + 24_161 + 5_088 + 7_379));
    }

    #[test]
    fn init_is_seeded_and_biases_are_zero() {
        let a = NetworkParams::init(Role::GenAB, arch().generator, 3);
        let b = NetworkParams::init(Role::GenAB, arch().generator, 3);
        let c = NetworkParams::init(Role::GenBA, arch().generator, 3);
        assert!(a.bit_eq(&b));
        assert_ne!(a.get("c0.w"), c.get("c0.w"));
        assert!(a.get("c0.b").unwrap().data().iter().all(|&v| v == 0.0));
        let w = a.get("res0.c1.w").unwrap().data();
        let mean = w.iter().sum::<f32>() / w.len() as f32;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / w.len() as f32).sqrt();
        assert!(mean.abs() < 2e-3 && (std - 0.02).abs() < 2e-3, "{mean} {std}");
    }

    #[test]
    fn from_entries_checks_layout() {
        let net = NetworkParams::init(Role::EncA, arch().encoder_a, 3);
        let ok = NetworkParams::from_entries(Role::EncA, net.arch(), net.entries().to_vec());
        assert!(ok.is_ok());
        let mut bad = net.entries().to_vec();
        bad[0].1 = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(NetworkParams::from_entries(Role::EncA, net.arch(), bad).is_err());
    }

    #[test]
    fn attention_peaks_at_hot_cell() {
        let mut z = Tensor::zeros(&[1, 4, 8, 8]);
        z.data_mut()[2 * 64 + 3 * 8 + 5] = -2.0;
        let m = attention_map(&z, (32, 32)).unwrap();
        let data = m.data();
        let (arg, max) = data.iter().enumerate().fold((0, -1.0), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        assert_eq!(max, 1.0);
        let (y, x) = (arg / 32, arg % 32);
        assert_eq!((y / 4, x / 4), (3, 5));
    }

    #[test]
    fn attention_of_constant_latent_is_zero() {
        let z = Tensor::full(&[2, 4, 8, 8], 0.7);
        let m = attention_map(&z, (16, 16)).unwrap();
        assert_eq!(m.shape(), &[2, 1, 16, 16]);
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_values_in_unit_interval() {
        let z = input(&[3, 8, 8, 8], 77);
        let m = attention_map(&z, (32, 32)).unwrap();
        assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
