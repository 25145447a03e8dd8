//! Discretized Laplace likelihood for the mean/scale conditional model.

use crate::autodiff::{CustomOp, Graph, Var};
use crate::tensor::Tensor;

use super::P_MIN;

/// Probability mass of the unit-width bin centred on `v_hat` under a
/// Laplace distribution with location `mu` and scale `sigma`, floored at
/// [`P_MIN`].
pub fn laplace_bin_probability(v_hat: f64, mu: f64, sigma: f64) -> f64 {
    bin_mass(v_hat - mu, sigma).max(P_MIN)
}

/// Unfloored mass of the unit-width bin centred on `v_hat`.
pub fn laplace_bin_mass(v_hat: f64, mu: f64, sigma: f64) -> f64 {
    bin_mass(v_hat - mu, sigma)
}

/// Unfloored mass of `[t - 1/2, t + 1/2]` under a zero-mean Laplace.
pub(crate) fn bin_mass(t: f64, sigma: f64) -> f64 {
    let a = t.abs();
    if a >= 0.5 {
        // Both edges on one side of the mode: 0.5 e^{-(a-1/2)/s} (1 - e^{-1/s}).
        -0.5 * (-(a - 0.5) / sigma).exp() * (-1.0 / sigma).exp_m1()
    } else {
        1.0 - 0.5 * (-(0.5 - a) / sigma).exp() - 0.5 * (-(0.5 + a) / sigma).exp()
    }
}

/// Laplace density at `t` (zero mean).
fn density(t: f64, sigma: f64) -> f64 {
    (-t.abs() / sigma).exp() / (2.0 * sigma)
}

/// Partial derivatives of the unfloored bin mass w.r.t. `(t, sigma)`.
pub(crate) fn bin_mass_grad(t: f64, sigma: f64) -> (f64, f64) {
    let (u, l) = (t + 0.5, t - 0.5);
    let (fu, fl) = (density(u, sigma), density(l, sigma));
    let dt = fu - fl;
    let ds = -(u * fu - l * fl) / sigma;
    (dt, ds)
}

/// Information content in bits of one element, with the gradient factor
/// `d bits / d p` (passed through below the probability floor).
fn bits_and_slope(p: f64) -> (f64, f64) {
    let ln2 = std::f64::consts::LN_2;
    let q = p.max(P_MIN);
    (-q.log2(), -1.0 / (q * ln2))
}

/// Total bits `-sum log2 p(v | mu, sigma)` over all elements.
pub fn laplace_bits(values: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    values
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&v, &m), &s)| -laplace_bin_probability(v, m, s).log2())
        .sum()
}

struct LaplaceBitsOp;

impl CustomOp for LaplaceBitsOp {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (v, mu, sigma) = (inputs[0], inputs[1], inputs[2]);
        let g = grad.item();
        let n = v.len();
        let mut dt = vec![0.0; n];
        let mut ds = vec![0.0; n];
        for i in 0..n {
            let t = v.data()[i] - mu.data()[i];
            let s = sigma.data()[i];
            let (_, slope) = bits_and_slope(bin_mass(t, s));
            let (pt, ps) = bin_mass_grad(t, s);
            dt[i] = g * slope * pt;
            ds[i] = g * slope * ps;
        }
        let shape = v.shape();
        vec![
            needs[0].then(|| Tensor::from_vec(shape, dt.clone())),
            needs[1].then(|| Tensor::from_vec(shape, dt.iter().map(|d| -d).collect())),
            needs[2].then(|| Tensor::from_vec(shape, ds)),
        ]
    }
}

/// Differentiable total bits of `v` under the conditional Laplace model.
pub fn laplace_bits_var(g: &mut Graph, v: Var, mu: Var, sigma: Var) -> Var {
    let (vt, mt, st) = (g.value(v), g.value(mu), g.value(sigma));
    assert_eq!(vt.shape(), mt.shape());
    assert_eq!(vt.shape(), st.shape());
    let bits = laplace_bits(vt.data(), mt.data(), st.data());
    g.custom(&[v, mu, sigma], Tensor::scalar(bits), Box::new(LaplaceBitsOp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cdf(x: f64, s: f64) -> f64 {
        if x < 0.0 {
            0.5 * (x / s).exp()
        } else {
            1.0 - 0.5 * (-x / s).exp()
        }
    }

    #[test]
    fn closed_form_mode_bin() {
        let p = laplace_bin_probability(0.0, 0.0, 1.0);
        assert!((p - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!((p - 0.39347).abs() < 1e-5);
    }

    #[test]
    fn matches_cdf_difference() {
        for &(t, s) in &[(0.3, 0.7), (-2.2, 1.5), (4.0, 0.2), (0.5, 3.0), (-0.5, 0.11)] {
            let want = cdf(t + 0.5, s) - cdf(t - 0.5, s);
            assert!((bin_mass(t, s) - want).abs() < 1e-14, "t={t} s={s}");
        }
    }

    #[test]
    fn mode_bin_is_maximal() {
        for &s in &[0.11, 0.5, 1.0, 7.0] {
            let at_mode = laplace_bin_probability(2.0, 2.0, s);
            for k in -20..=20 {
                let v = 2.0 + k as f64 * 0.25;
                assert!(laplace_bin_probability(v, 2.0, s) <= at_mode);
            }
        }
    }

    #[test]
    fn floor_applies_in_far_tail() {
        assert_eq!(laplace_bin_probability(100.0, 0.0, 0.11), P_MIN);
    }

    #[test]
    fn rate_at_mode_is_non_increasing_as_scale_shrinks() {
        let mut prev = f64::INFINITY;
        for i in (0..50).rev() {
            let s = 0.11 + i as f64 * 0.2;
            let bits = -laplace_bin_probability(0.0, 0.0, s).log2();
            assert!(bits <= prev);
            prev = bits;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let eps = 1e-6;
        for &(t, s) in &[(0.2, 0.8), (-1.7, 1.3), (3.1, 2.0), (0.0, 0.4), (-0.45, 0.3)] {
            let (dt, ds) = bin_mass_grad(t, s);
            let nt = (bin_mass(t + eps, s) - bin_mass(t - eps, s)) / (2.0 * eps);
            let ns = (bin_mass(t, s + eps) - bin_mass(t, s - eps)) / (2.0 * eps);
            assert!((dt - nt).abs() <= 1e-3 * nt.abs().max(1e-8), "dt {dt} vs {nt}");
            assert!((ds - ns).abs() <= 1e-3 * ns.abs().max(1e-8), "ds {ds} vs {ns}");
        }
    }

    #[test]
    fn graph_op_gradient() {
        let v = Tensor::from_vec(&[4], vec![0.3, -1.2, 2.6, 0.0]);
        let m = Tensor::from_vec(&[4], vec![0.1, -0.4, 1.0, 0.2]);
        let s = Tensor::from_vec(&[4], vec![0.5, 1.1, 0.9, 2.0]);
        let run = |v: &Tensor, m: &Tensor, s: &Tensor| {
            let mut g = Graph::new();
            let (a, b, c) = (g.leaf(v.clone(), true), g.leaf(m.clone(), true), g.leaf(s.clone(), true));
            let bits = laplace_bits_var(&mut g, a, b, c);
            let grads = g.backward(bits);
            (
                g.value(bits).item(),
                [a, b, c].map(|x| grads.get(x).unwrap().clone()),
            )
        };
        let (_, gr) = run(&v, &m, &s);
        let eps = 1e-6;
        for which in 0..3 {
            for i in 0..4 {
                let mut args = [v.clone(), m.clone(), s.clone()];
                args[which].data_mut()[i] += eps;
                let plus = run(&args[0], &args[1], &args[2]).0;
                args[which].data_mut()[i] -= 2.0 * eps;
                let minus = run(&args[0], &args[1], &args[2]).0;
                let num = (plus - minus) / (2.0 * eps);
                let ana = gr[which].data()[i];
                assert!((ana - num).abs() <= 1e-3 * num.abs().max(1e-6), "{which}/{i}: {ana} vs {num}");
            }
        }
    }
}
