//! Adaptive phase tokenization.
//!
//! A volume is split into its polyphase components under a patch size, a
//! steerable selection network scores every component, and one component
//! is picked either by Gumbel sampling (training) or by argmax
//! (inference). All convolutions are circular.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft3;
use crate::geometry::octahedral_rotations;
use crate::rng::substream;
use crate::volume::DensityVolume;

/// `(s_D, s_H, s_W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSize(pub [usize; 3]);

impl Default for PatchSize {
    fn default() -> Self {
        PatchSize([4, 4, 4])
    }
}

impl PatchSize {
    pub fn count(&self) -> usize {
        self.0.iter().product()
    }

    /// Flat index of phase `(p, q, r)`; flat order is lexicographic.
    pub fn index(&self, phase: [usize; 3]) -> usize {
        (phase[0] * self.0[1] + phase[1]) * self.0[2] + phase[2]
    }

    pub fn phase(&self, index: usize) -> [usize; 3] {
        let r = index % self.0[2];
        let q = (index / self.0[2]) % self.0[1];
        let p = index / (self.0[1] * self.0[2]);
        [p, q, r]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyphaseSet {
    pub patch: PatchSize,
    pub components: Vec<DensityVolume>,
}

/// Component `(p, q, r)` holds `X[i·s_D + p, j·s_H + q, k·s_W + r]`.
pub fn polyphase_decompose(vol: &DensityVolume, s: PatchSize) -> Result<PolyphaseSet> {
    let dims = vol.dims();
    if (0..3).any(|a| s.0[a] == 0 || dims[a] % s.0[a] != 0) {
        return Err(Error::Shape(format!("patch {:?} does not divide volume {:?}", s.0, dims)));
    }
    let cd = [dims[0] / s.0[0], dims[1] / s.0[1], dims[2] / s.0[2]];
    let components = (0..s.count())
        .map(|k| {
            let [p, q, r] = s.phase(k);
            DensityVolume::from_fn(cd, vol.voxel_size, |i, j, l| vol.get(i * s.0[0] + p, j * s.0[1] + q, l * s.0[2] + r))
        })
        .collect();
    Ok(PolyphaseSet { patch: s, components })
}

/// Inverse of [`polyphase_decompose`].
pub fn interleave(ps: &PolyphaseSet) -> DensityVolume {
    let s = ps.patch.0;
    let cd = ps.components[0].dims();
    let dims = [cd[0] * s[0], cd[1] * s[1], cd[2] * s[2]];
    let mut out = DensityVolume::zeros(dims, ps.components[0].voxel_size);
    for (k, comp) in ps.components.iter().enumerate() {
        let [p, q, r] = ps.patch.phase(k);
        for i in 0..cd[0] {
            for j in 0..cd[1] {
                for l in 0..cd[2] {
                    out.set(i * s[0] + p, j * s[1] + q, l * s[2] + r, comp.get(i, j, l));
                }
            }
        }
    }
    out
}

/// Angular part of the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngularBasis {
    /// Real spherical harmonics.
    Harmonic,
    /// Harmonics rescaled per order `m`; no longer a rotation multiplet.
    /// Test fixture for the equivariance harness.
    Broken,
}

/// Steerable scoring network.
///
/// Degree-`J` kernels are `K_J^m(x) = Σ_b w_{J,b} R_b(|x|) Y_J^m(x/|x|)`
/// with Gaussian radial profiles `R_b`. The scalar feature map is
/// `u_0 + Σ_{J≥1} ‖u_J‖`, where `u_J` stacks the `2J+1` responses of degree
/// `J`, and the logit is its spatial mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerableSelectionNet {
    pub j_max_cap: usize,
    pub radial_centers: Vec<f64>,
    pub radial_width: f64,
    /// Stencil edge in voxels (odd).
    pub kernel_extent: usize,
    pub grid_spacing: f64,
    /// `w_{J,b}` at `J·radial_centers.len() + b`.
    pub weights: Vec<f64>,
    pub angular: AngularBasis,
}

impl Default for SteerableSelectionNet {
    fn default() -> Self {
        let mut net = Self {
            j_max_cap: 2,
            radial_centers: vec![1.0, 2.0, 3.0],
            radial_width: 0.75,
            kernel_extent: 7,
            grid_spacing: 1.0,
            weights: Vec::new(),
            angular: AngularBasis::Harmonic,
        };
        net.weights = vec![1.0; net.weight_count()];
        net
    }
}

/// Real spherical harmonic `Y_J^m` of a unit vector, `J ≤ 2`; `Y_0^0 = 1`.
pub fn real_sph_harm(j: usize, m: i64, u: [f64; 3]) -> f64 {
    let [x, y, z] = u;
    const C1: f64 = 0.488_602_511_902_919_9;
    const C2: f64 = 1.092_548_430_592_079_2;
    const C20: f64 = 0.315_391_565_252_520_05;
    const C22: f64 = 0.546_274_215_296_039_6;
    match (j, m) {
        (0, 0) => 1.0,
        (1, -1) => C1 * y,
        (1, 0) => C1 * z,
        (1, 1) => C1 * x,
        (2, -2) => C2 * x * y,
        (2, -1) => C2 * y * z,
        (2, 0) => C20 * (3.0 * z * z - 1.0),
        (2, 1) => C2 * x * z,
        (2, 2) => C22 * (x * x - y * y),
        _ => panic!("degree {j} order {m} not supported"),
    }
}

impl SteerableSelectionNet {
    pub fn weight_count(&self) -> usize {
        (self.j_max_cap + 1) * self.radial_centers.len()
    }

    /// Default geometry with `N(0, 1)` weights from `seed`.
    pub fn random(seed: u64) -> Self {
        let mut net = Self::default();
        let mut rng = substream(seed, 0x5e1);
        net.weights = (0..net.weight_count()).map(|_| rng.sample(StandardNormal)).collect();
        net
    }

    pub fn with_angular(mut self, angular: AngularBasis) -> Self {
        self.angular = angular;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.j_max_cap > 2 {
            return Err(Error::Config("degrees above 2 are not implemented".into()));
        }
        if self.kernel_extent % 2 == 0 {
            return Err(Error::Config("kernel_extent must be odd".into()));
        }
        if self.weights.len() != self.weight_count() {
            return Err(Error::Config(format!(
                "expected {} weights, got {}",
                self.weight_count(),
                self.weights.len()
            )));
        }
        if !(self.radial_width > 0.0) || !(self.grid_spacing > 0.0) {
            return Err(Error::Config("radial width and grid spacing must be > 0".into()));
        }
        Ok(())
    }

    /// `min(⌊π r / Δx⌋, cap)`; the stencil center carries degree 0 only.
    pub fn j_max(&self, r: f64) -> usize {
        if r == 0.0 {
            return 0;
        }
        ((std::f64::consts::PI * r / self.grid_spacing).floor() as usize).min(self.j_max_cap)
    }

    fn radial(&self, b: usize, r: f64) -> f64 {
        let e = r - self.radial_centers[b];
        (-e * e / (2.0 * self.radial_width * self.radial_width)).exp()
    }

    fn angular_value(&self, j: usize, m: i64, u: [f64; 3]) -> f64 {
        let y = real_sph_harm(j, m, u);
        match self.angular {
            AngularBasis::Harmonic => y,
            AngularBasis::Broken => y * (1.0 + 0.5 * (m + j as i64) as f64),
        }
    }

    /// `(J, m)` for every output channel.
    pub fn channels(&self) -> Vec<(usize, i64)> {
        (0..=self.j_max_cap)
            .flat_map(|j| (-(j as i64)..=j as i64).map(move |m| (j, m)))
            .collect()
    }

    /// Kernel value of channel `(J, m)` at stencil offset `(x, y, z)`.
    pub fn kernel_value(&self, j: usize, m: i64, off: [i64; 3]) -> f64 {
        let r = ((off[0] * off[0] + off[1] * off[1] + off[2] * off[2]) as f64).sqrt();
        if j > self.j_max(r) {
            return 0.0;
        }
        let u = if r == 0.0 { [0.0; 3] } else { off.map(|v| v as f64 / r) };
        let ang = self.angular_value(j, m, u);
        let nb = self.radial_centers.len();
        (0..nb).map(|b| self.weights[j * nb + b] * self.radial(b, r)).sum::<f64>() * ang
    }
}

/// Kernel spectra for one component shape.
struct KernelBank {
    fft: Fft3,
    degrees: Vec<usize>,
    spectra: Vec<Vec<Complex64>>,
}

impl KernelBank {
    fn new(net: &SteerableSelectionNet, dims: [usize; 3]) -> Self {
        let fft = Fft3::new(dims);
        let half = (net.kernel_extent / 2) as i64;
        let len = dims.iter().product();
        let channels = net.channels();
        let spectra = channels
            .iter()
            .map(|&(j, m)| {
                let mut k = vec![Complex64::new(0.0, 0.0); len];
                for dz in -half..=half {
                    for dy in -half..=half {
                        for dx in -half..=half {
                            let v = net.kernel_value(j, m, [dx, dy, dz]);
                            if v == 0.0 {
                                continue;
                            }
                            let d = dz.rem_euclid(dims[0] as i64) as usize;
                            let h = dy.rem_euclid(dims[1] as i64) as usize;
                            let w = dx.rem_euclid(dims[2] as i64) as usize;
                            k[(d * dims[1] + h) * dims[2] + w].re += v;
                        }
                    }
                }
                fft.forward(&mut k);
                k
            })
            .collect();
        Self {
            fft,
            degrees: channels.iter().map(|c| c.0).collect(),
            spectra,
        }
    }

    fn logit(&self, comp: &DensityVolume) -> f64 {
        let len = comp.len();
        let mut x: Vec<Complex64> = comp.data().iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
        self.fft.forward(&mut x);
        // two real channels per inverse transform: a + i·b
        let mut responses: Vec<Vec<f64>> = Vec::with_capacity(self.spectra.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for pair in self.spectra.chunks(2) {
            for (i, b) in buf.iter_mut().enumerate() {
                let a = x[i] * pair[0][i];
                *b = match pair.get(1) {
                    Some(s) => a + Complex64::new(0.0, 1.0) * (x[i] * s[i]),
                    None => a,
                };
            }
            self.fft.inverse(&mut buf);
            responses.push(buf.iter().map(|c| c.re).collect());
            if pair.len() == 2 {
                responses.push(buf.iter().map(|c| c.im).collect());
            }
        }
        let max_j = *self.degrees.iter().max().unwrap_or(&0);
        let mut total = 0.0;
        for v in 0..len {
            let mut h = 0.0;
            let mut sq = vec![0.0f64; max_j + 1];
            for (c, &j) in self.degrees.iter().enumerate() {
                let r = responses[c][v];
                if j == 0 {
                    h += r;
                } else {
                    sq[j] += r * r;
                }
            }
            h += sq[1..].iter().map(|s| s.sqrt()).sum::<f64>();
            total += h;
        }
        total / len as f64
    }
}

/// Pooled scalar logit of one component.
pub fn steerable_features(component: &DensityVolume, net: &SteerableSelectionNet) -> f64 {
    KernelBank::new(net, component.dims()).logit(component)
}

/// Logits of every component, in flat phase order.
pub fn component_logits(ps: &PolyphaseSet, net: &SteerableSelectionNet) -> Vec<f64> {
    let bank = KernelBank::new(net, ps.components[0].dims());
    ps.components.par_iter().map(|c| bank.logit(c)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectionMode {
    Training { temperature: f64 },
    Inference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionProbabilities {
    pub patch: PatchSize,
    pub logits: Vec<f64>,
    /// Flat phase order, summing to one.
    pub probs: Vec<f64>,
    pub mode: SelectionMode,
}

impl SelectionProbabilities {
    pub fn prob(&self, phase: [usize; 3]) -> f64 {
        self.probs[self.patch.index(phase)]
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn selection_probs(ps: &PolyphaseSet, net: &SteerableSelectionNet, mode: SelectionMode) -> SelectionProbabilities {
    let logits = component_logits(ps, net);
    SelectionProbabilities {
        patch: ps.patch,
        probs: softmax(&logits),
        logits,
        mode,
    }
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Picks a phase. Training: argmax of `(log p + g)/t` with Gumbel `g`.
/// Inference: argmax of `p`, lexicographically smallest phase on ties.
pub fn gumbel_select<R: Rng + ?Sized>(probs: &SelectionProbabilities, rng: &mut R) -> Result<[usize; 3]> {
    let k = match probs.mode {
        SelectionMode::Inference => argmax(&probs.probs),
        SelectionMode::Training { temperature } => {
            if !(temperature > 0.0) {
                return Err(Error::Precondition("training mode needs temperature > 0".into()));
            }
            let scores: Vec<f64> = probs
                .probs
                .iter()
                .map(|&p| {
                    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                    let g = -(-u.ln()).ln();
                    (p.ln() + g) / temperature
                })
                .collect();
            argmax(&softmax(&scores))
        }
    };
    Ok(probs.patch.phase(k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AptOutput {
    pub component: DensityVolume,
    pub phase: [usize; 3],
    pub probs: SelectionProbabilities,
}

/// Decompose, score, select, extract.
pub fn apt_forward<R: Rng + ?Sized>(
    vol: &DensityVolume,
    s: PatchSize,
    net: &SteerableSelectionNet,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<AptOutput> {
    net.validate()?;
    let ps = polyphase_decompose(vol, s)?;
    let probs = selection_probs(&ps, net, mode);
    let phase = gumbel_select(&probs, rng)?;
    let component = ps.components[s.index(phase)].clone();
    Ok(AptOutput { component, phase, probs })
}

/// Where the selection of `X` lands after `X` is circularly shifted by `g`
/// `(d, h, w)`: the new phase and the internal shift of that component.
pub fn shifted_phase(phase: [usize; 3], g: [i64; 3], s: PatchSize) -> ([usize; 3], [i64; 3]) {
    let mut np = [0usize; 3];
    let mut inner = [0i64; 3];
    for a in 0..3 {
        let sa = s.0[a] as i64;
        let k = (phase[a] as i64 + g[a]).rem_euclid(sa);
        np[a] = k as usize;
        // component k of the shifted volume is component (k − g) mod s of
        // the original, read at i + floor((k − g) / s)
        inner[a] = -(k - g[a]).div_euclid(sa);
    }
    (np, inner)
}

/// Source phase whose probability phase `k` of the shifted input inherits.
pub fn unshifted_phase(k: [usize; 3], g: [i64; 3], s: PatchSize) -> [usize; 3] {
    [0, 1, 2].map(|a| (k[a] as i64 - g[a]).rem_euclid(s.0[a] as i64) as usize)
}

/// Signed axis permutation acting on `(x, y, z)`: `(R v)[i] = sign[i]·v[perm[i]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridRotation {
    pub perm: [usize; 3],
    pub sign: [i64; 3],
}

impl GridRotation {
    /// The 24 proper rotations of the cube.
    pub fn octahedral() -> Vec<GridRotation> {
        octahedral_rotations()
            .iter()
            .map(|r| {
                let m = r.matrix();
                let mut perm = [0; 3];
                let mut sign = [0; 3];
                for row in 0..3 {
                    for col in 0..3 {
                        if m[(row, col)] != 0.0 {
                            perm[row] = col;
                            sign[row] = m[(row, col)].signum() as i64;
                        }
                    }
                }
                GridRotation { perm, sign }
            })
            .collect()
    }

    pub fn apply(&self, v: [i64; 3]) -> [i64; 3] {
        [0, 1, 2].map(|i| self.sign[i] * v[self.perm[i]])
    }

    pub fn apply_inverse(&self, v: [i64; 3]) -> [i64; 3] {
        let mut out = [0; 3];
        for i in 0..3 {
            out[self.perm[i]] = self.sign[i] * v[i];
        }
        out
    }

    /// Exact rotation of a cubic volume about its center:
    /// `out(p) = in(R⁻¹(p − c) + c)`.
    pub fn rotate_volume(&self, vol: &DensityVolume) -> Result<DensityVolume> {
        let dims = vol.dims();
        if dims[0] != dims[1] || dims[1] != dims[2] {
            return Err(Error::Shape(format!("grid rotation needs a cubic volume, got {dims:?}")));
        }
        let n = dims[0] as i64;
        let mut out = vol.clone();
        for d in 0..dims[0] {
            for h in 0..dims[1] {
                for w in 0..dims[2] {
                    // doubled coordinates relative to the center
                    let p = [2 * w as i64 - (n - 1), 2 * h as i64 - (n - 1), 2 * d as i64 - (n - 1)];
                    let q = self.apply_inverse(p).map(|v| ((v + n - 1) / 2) as usize);
                    out.set(d, h, w, vol.get(q[2], q[1], q[0]));
                }
            }
        }
        Ok(out)
    }

    /// Phase of the rotated input that inherits phase `k` (`(p, q, r)` is
    /// `(z, y, x)` ordered) under a cubic patch of edge `s`.
    pub fn rotate_phase(&self, k: [usize; 3], s: usize) -> [usize; 3] {
        let sm1 = s as i64 - 1;
        let v = [2 * k[2] as i64 - sm1, 2 * k[1] as i64 - sm1, 2 * k[0] as i64 - sm1];
        let r = self.apply(v).map(|x| ((x + sm1) / 2) as usize);
        [r[2], r[1], r[0]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub mismatches: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivarianceReport {
    pub trials: usize,
    pub seed: u64,
    pub volume_edge: usize,
    pub patch: PatchSize,
    pub properties: Vec<PropertyResult>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub trials: usize,
    pub seed: u64,
    pub volume_edge: usize,
    /// Cubic patch edge.
    pub patch: usize,
    /// Random shifts per trial; `None` checks every shift in `{0..s−1}³`.
    pub shifts_per_trial: Option<usize>,
    /// Draw fresh random weights for every trial.
    pub randomize_weights: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            seed: 0,
            volume_edge: 32,
            patch: 4,
            shifts_per_trial: Some(8),
            randomize_weights: true,
        }
    }
}

#[derive(Default)]
struct Tally {
    max: f64,
    mismatches: usize,
}

impl Tally {
    fn add(&mut self, dev: f64, mismatch: bool) {
        self.max = self.max.max(dev);
        self.mismatches += mismatch as usize;
    }

    fn result(self, name: &str, tolerance: f64) -> PropertyResult {
        let passed = self.mismatches == 0 && self.max <= tolerance;
        PropertyResult {
            name: name.into(),
            max_deviation: self.max,
            tolerance,
            mismatches: self.mismatches,
            passed,
        }
    }
}

fn max_abs_diff(a: &DensityVolume, b: &DensityVolume) -> f64 {
    if a.dims() != b.dims() {
        return f64::MAX;
    }
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

/// Random periodic volume with entries in `[0, 1)`.
pub fn random_volume(edge: usize, seed: u64, stream: u64) -> DensityVolume {
    let mut rng = substream(seed, stream);
    DensityVolume::from_fn([edge; 3], 1.0, |_, _, _| rng.random::<f32>())
}

/// Runs the translation and rotation property suites on random inputs.
///
/// `net` supplies the kernel geometry and angular basis; with
/// `randomize_weights` every trial draws fresh weights.
pub fn verify_equivariance(net: &SteerableSelectionNet, cfg: &VerifyConfig) -> Result<EquivarianceReport> {
    if cfg.trials == 0 {
        return Err(Error::Precondition("trials must be >= 1".into()));
    }
    net.validate()?;
    if cfg.patch == 0 || cfg.volume_edge % cfg.patch != 0 {
        return Err(Error::Config(format!(
            "patch {} does not divide volume edge {}",
            cfg.patch, cfg.volume_edge
        )));
    }
    let s = PatchSize([cfg.patch; 3]);
    let rotations = GridRotation::octahedral();
    let mut shift_prob = Tally::default();
    let mut shift_extract = Tally::default();
    let mut rot_logit = Tally::default();
    let mut rot_prob = Tally::default();
    let mut rot_extract = Tally::default();
    let mut rng = substream(cfg.seed, 0xa97);
    let mut unused = substream(cfg.seed, 0);
    for trial in 0..cfg.trials {
        let mut tnet = net.clone();
        if cfg.randomize_weights {
            tnet.weights = (0..net.weight_count()).map(|_| rng.sample(StandardNormal)).collect();
        }
        let x = random_volume(cfg.volume_edge, cfg.seed, 1 + trial as u64);
        let base = apt_forward(&x, s, &tnet, SelectionMode::Inference, &mut unused)?;

        let shifts: Vec<[i64; 3]> = match cfg.shifts_per_trial {
            None => (0..s.count()).map(|k| s.phase(k).map(|v| v as i64)).collect(),
            Some(n) => (0..n)
                .map(|_| [0; 3].map(|_: i64| rng.random_range(0..cfg.volume_edge as i64)))
                .collect(),
        };
        for g in shifts {
            let y = x.circshift(g);
            let out = apt_forward(&y, s, &tnet, SelectionMode::Inference, &mut unused)?;
            let mut dev = 0.0f64;
            for k in 0..s.count() {
                let src = unshifted_phase(s.phase(k), g, s);
                dev = dev.max((out.probs.probs[k] - base.probs.prob(src)).abs());
            }
            shift_prob.add(dev, false);
            let (phase, inner) = shifted_phase(base.phase, g, s);
            let expected = base.component.circshift(inner);
            shift_extract.add(max_abs_diff(&out.component, &expected), out.phase != phase);
        }

        for rot in &rotations {
            let rx = rot.rotate_volume(&x)?;
            let out = apt_forward(&rx, s, &tnet, SelectionMode::Inference, &mut unused)?;
            let (mut dl, mut dp) = (0.0f64, 0.0f64);
            for k in 0..s.count() {
                let k2 = s.index(rot.rotate_phase(s.phase(k), cfg.patch));
                dl = dl.max((out.probs.logits[k2] - base.probs.logits[k]).abs());
                dp = dp.max((out.probs.probs[k2] - base.probs.probs[k]).abs());
            }
            rot_logit.add(dl, false);
            rot_prob.add(dp, false);
            let expected = rot.rotate_volume(&base.component)?;
            let phase = rot.rotate_phase(base.phase, cfg.patch);
            rot_extract.add(max_abs_diff(&out.component, &expected), out.phase != phase);
        }
    }
    let properties = vec![
        shift_prob.result("shift_probability_permutation", 1e-5),
        shift_extract.result("translation_extraction", 0.0),
        rot_logit.result("rotation_logit_invariance", 1e-6),
        rot_prob.result("rotation_probability_invariance", 1e-5),
        rot_extract.result("rotation_extraction", 0.0),
    ];
    let passed = properties.iter().all(|p| p.passed);
    Ok(EquivarianceReport {
        trials: cfg.trials,
        seed: cfg.seed,
        volume_edge: cfg.volume_edge,
        patch: s,
        properties,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decompose_and_interleave() {
        let v = DensityVolume::from_fn([4, 4, 4], 1.0, |d, h, w| (d * 16 + h * 4 + w) as f32);
        let ps = polyphase_decompose(&v, PatchSize([2, 2, 2])).unwrap();
        assert_eq!(ps.components.len(), 8);
        assert_eq!(ps.components[0].dims(), [2, 2, 2]);
        assert_eq!(ps.components[PatchSize([2, 2, 2]).index([1, 0, 1])].get(1, 1, 0), v.get(3, 2, 1));
        assert_eq!(interleave(&ps), v);
        assert!(polyphase_decompose(&v, PatchSize([3, 2, 2])).is_err());
    }

    #[test]
    fn constant_component_logit_is_scaled_radial_sum() {
        let mut net = SteerableSelectionNet::default();
        net.weights.iter_mut().for_each(|w| *w = 0.0);
        net.weights[0] = 1.0;
        let c = DensityVolume::from_fn([8, 8, 8], 1.0, |_, _, _| 2.5);
        let mut radial_sum = 0.0;
        for dz in -3i64..=3 {
            for dy in -3i64..=3 {
                for dx in -3i64..=3 {
                    let r = ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
                    radial_sum += (-(r - 1.0).powi(2) / (2.0 * 0.75 * 0.75)).exp();
                }
            }
        }
        assert!((steerable_features(&c, &net) - 2.5 * radial_sum).abs() < 1e-9);
        net.weights[0] = 0.0;
        assert_eq!(steerable_features(&c, &net), 0.0);
    }

    #[test]
    fn j_max_cap() {
        let net = SteerableSelectionNet::default();
        assert_eq!(net.j_max(0.0), 0);
        assert_eq!(net.j_max(1.0), 2);
        let net = SteerableSelectionNet { j_max_cap: 5, ..Default::default() };
        assert_eq!(net.j_max(1.0), 3);
    }

    #[test]
    fn inference_picks_first_maximum() {
        let probs = SelectionProbabilities {
            patch: PatchSize([3, 1, 1]),
            logits: vec![0.0; 3],
            probs: vec![0.7, 0.2, 0.1],
            mode: SelectionMode::Inference,
        };
        let mut rng = substream(0, 0);
        assert_eq!(gumbel_select(&probs, &mut rng).unwrap(), [0, 0, 0]);
        let tie = SelectionProbabilities { probs: vec![0.4, 0.4, 0.2], ..probs };
        assert_eq!(gumbel_select(&tie, &mut rng).unwrap(), [0, 0, 0]);
    }

    #[test]
    fn constant_volume_selects_origin_phase() {
        let v = DensityVolume::from_fn([8, 8, 8], 1.0, |_, _, _| 3.0);
        let mut rng = substream(0, 0);
        let out = apt_forward(&v, PatchSize([2, 2, 2]), &SteerableSelectionNet::random(1), SelectionMode::Inference, &mut rng).unwrap();
        assert_eq!(out.phase, [0, 0, 0]);
        assert!(out.component.data().iter().all(|&x| x == 3.0));
        for p in &out.probs.probs {
            assert!((p - 0.125).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_rotations_are_exact_permutations() {
        let v = random_volume(6, 3, 0);
        for rot in GridRotation::octahedral() {
            let r = rot.rotate_volume(&v).unwrap();
            let mut a: Vec<f32> = v.data().to_vec();
            let mut b: Vec<f32> = r.data().to_vec();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_trials_is_a_precondition_error() {
        let cfg = VerifyConfig { trials: 0, ..Default::default() };
        assert!(matches!(verify_equivariance(&SteerableSelectionNet::default(), &cfg), Err(Error::Precondition(_))));
    }
}
