use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// One tanh hidden layer, scalar pre-activation output. Parameters live in a
/// single flat vector: `w1` (hidden × input, row-major), `b1`, `w2`, `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub input: usize,
    pub hidden: usize,
    pub params: Vec<T>,
}

/// Activations kept from the forward pass for backpropagation.
pub struct Forward<T> {
    pub hidden: Vec<T>,
    pub z: T,
}

impl<T: Scalar> Mlp<T> {
    pub fn param_count(input: usize, hidden: usize) -> usize {
        hidden * input + 2 * hidden + 1
    }

    /// Glorot-uniform first layer, zero output layer, output bias `b2`.
    pub fn init(input: usize, hidden: usize, b2: T, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (input + hidden) as f64).sqrt();
        let mut params = Vec::with_capacity(Self::param_count(input, hidden));
        params.extend((0..hidden * input).map(|_| T::lit(rng.random_range(-a..a))));
        params.extend(std::iter::repeat_n(T::zero(), 2 * hidden));
        params.push(b2);
        Self {
            input,
            hidden,
            params,
        }
    }

    fn split(&self) -> (&[T], &[T], &[T], T) {
        let (w1, rest) = self.params.split_at(self.hidden * self.input);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, rest) = rest.split_at(self.hidden);
        (w1, b1, w2, rest[0])
    }

    pub fn forward(&self, x: &[T]) -> Forward<T> {
        debug_assert_eq!(x.len(), self.input);
        let (w1, b1, w2, b2) = self.split();
        let mut z = b2;
        let hidden = (0..self.hidden)
            .map(|j| {
                let row = &w1[j * self.input..(j + 1) * self.input];
                let a = row.iter().zip(x).fold(b1[j], |acc, (&w, &xi)| acc + w * xi);
                let h = a.tanh();
                z = z + w2[j] * h;
                h
            })
            .collect();
        Forward { hidden, z }
    }

    /// Accumulate `dz · ∂z/∂params` into `grad`.
    pub fn backward(&self, x: &[T], fwd: &Forward<T>, dz: T, grad: &mut [T]) {
        let (_, _, w2, _) = self.split();
        let (n_w1, h) = (self.hidden * self.input, self.hidden);
        for j in 0..h {
            let hj = fwd.hidden[j];
            grad[n_w1 + h + j] = grad[n_w1 + h + j] + dz * hj;
            let da = dz * w2[j] * (T::one() - hj * hj);
            grad[n_w1 + j] = grad[n_w1 + j] + da;
            let row = &mut grad[j * self.input..(j + 1) * self.input];
            for (g, &xi) in row.iter_mut().zip(x) {
                *g = *g + da * xi;
            }
        }
        grad[n_w1 + 2 * h] = grad[n_w1 + 2 * h] + dz;
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv<T: Scalar>(y: T) -> T {
    y + (-(-y).exp_m1()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::<f64>::init(5, 7, 0.3, &mut rng);
        // Non-zero output layer so every path carries gradient.
        for p in net.params.iter_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut grad = vec![0.0; net.params.len()];
        net.backward(&x, &net.forward(&x), 1.0, &mut grad);
        for i in 0..net.params.len() {
            let mut hi = net.clone();
            hi.params[i] += 1e-6;
            let mut lo = net.clone();
            lo.params[i] -= 1e-6;
            let fd = (hi.forward(&x).z - lo.forward(&x).z) / 2e-6;
            assert!(
                (fd - grad[i]).abs() < 1e-7,
                "param {i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn zero_output_layer_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::<f32>::init(3, 4, 0.7, &mut rng);
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).z, 0.7);
        assert_eq!(net.forward(&[-5.0, 0.0, 9.0]).z, 0.7);
    }

    #[test]
    fn softplus_helpers() {
        for &x in &[-40.0, -3.0, 0.0, 0.5, 3.0, 40.0] {
            let y: f64 = softplus(x);
            assert!(y > 0.0 && y.is_finite());
            if y > 1e-12 {
                assert!((softplus_inv(y) - x).abs() < 1e-9 * (1.0 + x.abs()));
            }
        }
        assert_eq!(softplus(1000.0_f64), 1000.0);
        assert!((sigmoid(0.0_f64) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0_f64) >= 0.0 && sigmoid(800.0_f64) <= 1.0);
    }
}
