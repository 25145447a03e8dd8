//! Learned per-channel non-parametric density for the hyper-latent.
//!
//! Each channel owns a small monotone network mapping a scalar to the
//! logit of its cumulative distribution. Monotonicity comes from
//! softplus-transformed matrices and `x + tanh(a) * tanh(x)` nonlinearities
//! with `|tanh(a)| < 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Graph, Var};
use crate::tensor::Tensor;

use super::P_MIN;

/// Hidden widths of the cumulative network.
const FILTERS: [usize; 4] = [3, 3, 3, 3];
const INIT_SCALE: f64 = 10.0;

fn widths() -> [usize; 6] {
    [1, FILTERS[0], FILTERS[1], FILTERS[2], FILTERS[3], 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizedPrior {
    pub channels: usize,
    /// `[channels, out, in]` pre-softplus matrices, one per layer.
    pub matrices: Vec<Tensor>,
    /// `[channels, out]`.
    pub biases: Vec<Tensor>,
    /// `[channels, out]`, hidden layers only.
    pub factors: Vec<Tensor>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-channel weights with the monotone reparametrizations applied.
struct ChannelNet {
    /// softplus(matrix) per layer, row-major `[out][in]`.
    mats: Vec<Vec<f64>>,
    /// sigmoid(matrix) per layer (derivative of softplus).
    dmats: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    tfactors: Vec<Vec<f64>>,
}

/// Activations recorded for one scalar evaluation.
struct Trace {
    acts: Vec<Vec<f64>>,
    tpre: Vec<Vec<f64>>,
    logit: f64,
}

#[derive(Default, Clone)]
struct ChannelGrad {
    mats: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    factors: Vec<Vec<f64>>,
}

impl ChannelGrad {
    fn zeros() -> Self {
        let w = widths();
        Self {
            mats: (0..5).map(|i| vec![0.0; w[i] * w[i + 1]]).collect(),
            biases: (0..5).map(|i| vec![0.0; w[i + 1]]).collect(),
            factors: (0..4).map(|i| vec![0.0; w[i + 1]]).collect(),
        }
    }
}

impl ChannelNet {
    fn forward(&self, x: f64) -> Trace {
        let w = widths();
        let mut acts = vec![vec![x]];
        let mut tpre = Vec::with_capacity(4);
        let mut logit = 0.0;
        for i in 0..5 {
            let a = &acts[i];
            let mut pre = self.biases[i].clone();
            for (o, p) in pre.iter_mut().enumerate() {
                for (j, av) in a.iter().enumerate() {
                    *p += self.mats[i][o * w[i] + j] * av;
                }
            }
            if i < 4 {
                let t: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
                let next = pre
                    .iter()
                    .zip(&t)
                    .zip(&self.tfactors[i])
                    .map(|((p, t), f)| p + f * t)
                    .collect();
                tpre.push(t);
                acts.push(next);
            } else {
                logit = pre[0];
            }
        }
        Trace { acts, tpre, logit }
    }

    /// Accumulates parameter gradients scaled by `g = dL/dlogit` and
    /// returns `dL/dx`.
    fn backward(&self, tr: &Trace, g: f64, factors_raw: &[Vec<f64>], acc: &mut ChannelGrad) -> f64 {
        let w = widths();
        let mut dpre = vec![g];
        let mut da = Vec::new();
        for i in (0..5).rev() {
            if i < 4 {
                // a_{i+1} = pre + tanh(f) * tanh(pre)
                let t = &tr.tpre[i];
                let tf = &self.tfactors[i];
                dpre = da
                    .iter()
                    .enumerate()
                    .map(|(o, d): (usize, &f64)| d * (1.0 + tf[o] * (1.0 - t[o] * t[o])))
                    .collect();
                for (o, d) in da.iter().enumerate() {
                    let tfo = factors_raw[i][o].tanh();
                    acc.factors[i][o] += d * t[o] * (1.0 - tfo * tfo);
                }
            }
            let a = &tr.acts[i];
            let mut next_da = vec![0.0; w[i]];
            for (o, dp) in dpre.iter().enumerate() {
                acc.biases[i][o] += dp;
                for (j, av) in a.iter().enumerate() {
                    let idx = o * w[i] + j;
                    acc.mats[i][idx] += dp * av * self.dmats[i][idx];
                    next_da[j] += self.mats[i][idx] * dp;
                }
            }
            da = next_da;
        }
        da[0]
    }
}

/// `(likelihood, d lik / d upper-logit, d lik / d lower-logit)`.
fn likelihood_from_logits(lower: f64, upper: f64) -> (f64, f64, f64) {
    // Evaluate on the side of the distribution where sigmoids do not saturate.
    let s = if lower + upper > 0.0 { -1.0 } else { 1.0 };
    let su = sigmoid(s * upper);
    let sl = sigmoid(s * lower);
    let q = su - sl;
    let sq = if q >= 0.0 { 1.0 } else { -1.0 };
    (q.abs(), sq * s * su * (1.0 - su), -sq * s * sl * (1.0 - sl))
}

impl FactorizedPrior {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        let w = widths();
        let scale = INIT_SCALE.powf(1.0 / (FILTERS.len() as f64 + 1.0));
        let mut matrices = Vec::new();
        let mut biases = Vec::new();
        let mut factors = Vec::new();
        for i in 0..5 {
            let init = (1.0 / scale / w[i + 1] as f64).exp_m1().ln();
            matrices.push(Tensor::full(&[channels, w[i + 1], w[i]], init));
            let b = (0..channels * w[i + 1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            biases.push(Tensor::from_vec(&[channels, w[i + 1]], b));
            if i < 4 {
                factors.push(Tensor::zeros(&[channels, w[i + 1]]));
            }
        }
        Self {
            channels,
            matrices,
            biases,
            factors,
        }
    }

    pub fn parameter_count_for(channels: usize) -> usize {
        let w = widths();
        let per: usize = (0..5).map(|i| w[i] * w[i + 1] + w[i + 1]).sum::<usize>()
            + (0..4).map(|i| w[i + 1]).sum::<usize>();
        per * channels
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.matrices
            .iter()
            .chain(&self.biases)
            .chain(&self.factors)
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.matrices
            .iter_mut()
            .chain(self.biases.iter_mut())
            .chain(self.factors.iter_mut())
            .collect()
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let m = (0..5).map(|i| format!("prior.matrix{i}"));
        let b = (0..5).map(|i| format!("prior.bias{i}"));
        let f = (0..4).map(|i| format!("prior.factor{i}"));
        m.chain(b).chain(f).collect()
    }

    /// Rebuild from tensors ordered as [`Self::tensors`].
    pub fn from_tensors(channels: usize, mut ts: Vec<Tensor>) -> crate::Result<Self> {
        if ts.len() != 14 {
            return Err(crate::Error::CorruptCheckpoint(format!(
                "factorized prior needs 14 tensors, got {}",
                ts.len()
            )));
        }
        let factors = ts.split_off(10);
        let biases = ts.split_off(5);
        let prior = Self {
            channels,
            matrices: ts,
            biases,
            factors,
        };
        let w = widths();
        for i in 0..5 {
            let ok = prior.matrices[i].shape() == [channels, w[i + 1], w[i]]
                && prior.biases[i].shape() == [channels, w[i + 1]]
                && (i == 4 || prior.factors[i].shape() == [channels, w[i + 1]]);
            if !ok {
                return Err(crate::Error::CorruptCheckpoint(format!(
                    "factorized prior layer {i} has wrong shape"
                )));
            }
        }
        Ok(prior)
    }

    fn channel_net_from(channel: usize, ts: &[&Tensor]) -> ChannelNet {
        let w = widths();
        let slice = |t: &Tensor, len: usize| t.data()[channel * len..(channel + 1) * len].to_vec();
        let raw: Vec<Vec<f64>> = (0..5).map(|i| slice(ts[i], w[i] * w[i + 1])).collect();
        ChannelNet {
            mats: raw.iter().map(|m| m.iter().map(|&v| softplus(v)).collect()).collect(),
            dmats: raw.iter().map(|m| m.iter().map(|&v| sigmoid(v)).collect()).collect(),
            biases: (0..5).map(|i| slice(ts[5 + i], w[i + 1])).collect(),
            tfactors: (0..4)
                .map(|i| slice(ts[10 + i], w[i + 1]).iter().map(|v| v.tanh()).collect())
                .collect(),
        }
    }

    fn channel_net(&self, channel: usize) -> ChannelNet {
        Self::channel_net_from(channel, &self.tensors())
    }

    /// Cumulative distribution of channel `channel` at `x`.
    pub fn cdf(&self, channel: usize, x: f64) -> f64 {
        sigmoid(self.channel_net(channel).forward(x).logit)
    }

    /// Mass of the unit bin centred on `x` (unfloored).
    pub fn bin_mass(&self, channel: usize, x: f64) -> f64 {
        let net = self.channel_net(channel);
        let lower = net.forward(x - 0.5).logit;
        let upper = net.forward(x + 0.5).logit;
        likelihood_from_logits(lower, upper).0
    }

    /// Bin masses for integer symbols `lo..=hi` plus the mass below
    /// `lo - 1/2` and above `hi + 1/2`.
    pub fn integer_pmf(&self, channel: usize, lo: i32, hi: i32) -> (Vec<f64>, f64, f64) {
        let net = self.channel_net(channel);
        let logits: Vec<f64> = (lo..=hi + 1)
            .map(|k| net.forward(k as f64 - 0.5).logit)
            .collect();
        let pmf = logits
            .windows(2)
            .map(|w| likelihood_from_logits(w[0], w[1]).0)
            .collect();
        let below = sigmoid(logits[0]);
        let above = sigmoid(-logits[logits.len() - 1]);
        (pmf, below, above)
    }

    /// Total bits of `z` (`[n, channels, h, w]`) under the prior.
    pub fn bits(&self, z: &Tensor) -> f64 {
        let (n, c, h, w) = z.dims4();
        assert_eq!(c, self.channels);
        let mut total = 0.0;
        for ch in 0..c {
            let net = self.channel_net(ch);
            for i in 0..n {
                let base = (i * c + ch) * h * w;
                for &x in &z.data()[base..base + h * w] {
                    let lower = net.forward(x - 0.5).logit;
                    let upper = net.forward(x + 0.5).logit;
                    total -= likelihood_from_logits(lower, upper).0.max(P_MIN).log2();
                }
            }
        }
        total
    }

    /// Bind parameters into `g`; returns the variables in [`Self::tensors`] order.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect()
    }

    /// Differentiable total bits of `z` given bound parameter variables.
    pub fn bits_var(&self, g: &mut Graph, z: Var, params: &[Var]) -> Var {
        let bits = self.bits(g.value(z));
        let mut inputs = vec![z];
        inputs.extend_from_slice(params);
        g.custom(&inputs, Tensor::scalar(bits), Box::new(FactorizedBitsOp { channels: self.channels }))
    }
}

struct FactorizedBitsOp {
    channels: usize,
}

impl CustomOp for FactorizedBitsOp {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let z = inputs[0];
        let params = &inputs[1..];
        let g = grad.item();
        let (n, c, h, w) = z.dims4();
        let ln2 = std::f64::consts::LN_2;
        let mut dz = vec![0.0; z.len()];
        let mut grads: Vec<ChannelGrad> = Vec::with_capacity(c);
        for ch in 0..self.channels {
            let net = FactorizedPrior::channel_net_from(ch, params);
            let wd = widths();
            let factors_raw: Vec<Vec<f64>> = (0..4)
                .map(|i| params[10 + i].data()[ch * wd[i + 1]..(ch + 1) * wd[i + 1]].to_vec())
                .collect();
            let mut acc = ChannelGrad::zeros();
            for i in 0..n {
                let base = (i * c + ch) * h * w;
                for (k, &x) in z.data()[base..base + h * w].iter().enumerate() {
                    let lo = net.forward(x - 0.5);
                    let up = net.forward(x + 0.5);
                    let (lik, dl_du, dl_dl) = likelihood_from_logits(lo.logit, up.logit);
                    // bits = -log2(max(lik, P_MIN)); gradient passes through the floor.
                    let slope = -1.0 / (lik.max(P_MIN) * ln2) * g;
                    let dx_u = net.backward(&up, slope * dl_du, &factors_raw, &mut acc);
                    let dx_l = net.backward(&lo, slope * dl_dl, &factors_raw, &mut acc);
                    dz[base + k] = dx_u + dx_l;
                }
            }
            grads.push(acc);
        }
        let wd = widths();
        let mut out = vec![needs[0].then(|| Tensor::from_vec(z.shape(), dz))];
        for i in 0..5 {
            out.push(needs[1 + i].then(|| {
                let data = grads.iter().flat_map(|g| g.mats[i].iter().copied()).collect();
                Tensor::from_vec(&[c, wd[i + 1], wd[i]], data)
            }));
        }
        for i in 0..5 {
            out.push(needs[6 + i].then(|| {
                let data = grads.iter().flat_map(|g| g.biases[i].iter().copied()).collect();
                Tensor::from_vec(&[c, wd[i + 1]], data)
            }));
        }
        for i in 0..4 {
            out.push(needs[11 + i].then(|| {
                let data = grads.iter().flat_map(|g| g.factors[i].iter().copied()).collect();
                Tensor::from_vec(&[c, wd[i + 1]], data)
            }));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn perturbed_prior(seed: u64) -> FactorizedPrior {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = FactorizedPrior::new(2, &mut rng);
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        p
    }

    #[test]
    fn cdf_is_monotone_with_unit_limits() {
        let p = perturbed_prior(7);
        for ch in 0..2 {
            let mut prev = 0.0;
            for k in -400..=400 {
                let c = p.cdf(ch, k as f64 * 0.25);
                assert!(c >= prev - 1e-15);
                prev = c;
            }
            assert!(p.cdf(ch, -1e4) < 1e-9);
            assert!(p.cdf(ch, 1e4) > 1.0 - 1e-9);
        }
    }

    #[test]
    fn integer_pmf_sums_to_one() {
        let p = perturbed_prior(8);
        let (pmf, below, above) = p.integer_pmf(0, -60, 60);
        let total: f64 = pmf.iter().sum::<f64>() + below + above;
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn parameter_count_matches_tensors() {
        let p = perturbed_prior(9);
        let n: usize = p.tensors().iter().map(|t| t.len()).sum();
        assert_eq!(n, FactorizedPrior::parameter_count_for(2));
    }

    #[test]
    fn bits_gradient_matches_finite_differences() {
        let prior = perturbed_prior(10);
        let z = Tensor::from_vec(&[1, 2, 2, 1], vec![0.3, -1.4, 2.2, 0.05]);
        let run = |prior: &FactorizedPrior, z: &Tensor| {
            let mut g = Graph::new();
            let zv = g.leaf(z.clone(), true);
            let ps = prior.bind(&mut g, true);
            let bits = prior.bits_var(&mut g, zv, &ps);
            let grads = g.backward(bits);
            let mut all = vec![grads.get(zv).unwrap().clone()];
            all.extend(ps.iter().map(|&p| grads.get(p).unwrap().clone()));
            (g.value(bits).item(), all)
        };
        let (_, analytic) = run(&prior, &z);
        let eps = 1e-6;
        let check = |a: f64, n: f64| assert!((a - n).abs() <= 1e-3 * n.abs().max(1e-5), "{a} vs {n}");
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp.data_mut()[i] += eps;
            let mut zm = z.clone();
            zm.data_mut()[i] -= eps;
            check(analytic[0].data()[i], (run(&prior, &zp).0 - run(&prior, &zm).0) / (2.0 * eps));
        }
        for t in 0..14 {
            for i in 0..prior.tensors()[t].len() {
                let mut pp = prior.clone();
                pp.tensors_mut()[t].data_mut()[i] += eps;
                let mut pm = prior.clone();
                pm.tensors_mut()[t].data_mut()[i] -= eps;
                let num = (run(&pp, &z).0 - run(&pm, &z).0) / (2.0 * eps);
                check(analytic[1 + t].data()[i], num);
            }
        }
    }
}
