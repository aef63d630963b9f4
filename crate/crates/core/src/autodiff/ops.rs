//! Generic primitives. Shapes are checked in `forward`; `vjp` trusts them.

use std::sync::Arc;

use super::tape::Primitive;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparse::Csr;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

type Grads<T> = Result<Vec<Option<Tensor<T>>>>;

fn rank2<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::Invalid(format!("{what}: expected a matrix, got shape {s:?}"))),
    }
}

/// `A (m×k) · B (k×n)`.
pub struct MatMul;

impl<T: Real> Primitive<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (m, k) = rank2(x[0], "matmul lhs")?;
        let (k2, n) = rank2(x[1], "matmul rhs")?;
        if k != k2 {
            return Err(Error::dim("matmul inner", k, k2));
        }
        Tensor::from_vec(&[m, n], matmul(x[0].data(), x[1].data(), m, k, n))
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let (m, k) = x[0].dims2();
        let n = x[1].shape()[1];
        let ga = needs[0]
            .then(|| Tensor::from_vec(&[m, k], matmul_nt(g.data(), x[1].data(), m, n, k)))
            .transpose()?;
        let gb = needs[1]
            .then(|| Tensor::from_vec(&[k, n], matmul_tn(x[0].data(), g.data(), m, k, n)))
            .transpose()?;
        Ok(vec![ga, gb])
    }
}

/// Adds a length-`n` bias to every row of an `m × n` matrix (or to a vector).
pub struct AddBias;

impl<T: Real> Primitive<T> for AddBias {
    fn name(&self) -> &'static str {
        "add_bias"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let n = x[1].len();
        if *x[0].shape().last().unwrap_or(&0) != n {
            return Err(Error::dim("bias width", n, *x[0].shape().last().unwrap_or(&0)));
        }
        let mut out = x[0].clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            row.iter_mut().zip(x[1].data()).for_each(|(a, b)| *a += *b);
        }
        Ok(out)
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let n = x[1].len();
        let gb = needs[1].then(|| {
            let mut acc = vec![T::zero(); n];
            for row in g.data().chunks_exact(n) {
                acc.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
            }
            Tensor::from_vec(&[n], acc).unwrap()
        });
        Ok(vec![needs[0].then(|| g.clone()), gb])
    }
}

pub struct Relu;

impl<T: Real> Primitive<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let data = x[0].data().iter().map(|&v| v.max(T::zero())).collect();
        Tensor::from_vec(x[0].shape(), data)
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let data = x[0]
            .data()
            .iter()
            .zip(g.data())
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect();
        Ok(vec![Some(Tensor::from_vec(x[0].shape(), data)?)])
    }
}

pub struct Reshape(pub Vec<usize>);

impl<T: Real> Primitive<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Tensor::from_vec(&self.0, x[0].data().to_vec())
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        Ok(vec![Some(Tensor::from_vec(x[0].shape(), g.data().to_vec())?)])
    }
}

/// Column means of an `m × n` matrix, as a length-`n` vector.
pub struct MeanRows;

impl<T: Real> Primitive<T> for MeanRows {
    fn name(&self) -> &'static str {
        "mean_rows"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (m, n) = rank2(x[0], "mean_rows")?;
        let mut acc = vec![T::zero(); n];
        for row in x[0].data().chunks_exact(n) {
            acc.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
        }
        let inv = T::one() / T::c(m as f64);
        Tensor::from_vec(&[n], acc.into_iter().map(|a| a * inv).collect())
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let (m, _) = x[0].dims2();
        let inv = T::one() / T::c(m as f64);
        let row: Vec<T> = g.data().iter().map(|&v| v * inv).collect();
        Ok(vec![Some(Tensor::from_vec(x[0].shape(), row.repeat(m))?)])
    }
}

/// `S · X` for a fixed sparse `S`.
pub struct SparseMatMul<T>(pub Arc<Csr<T>>);

impl<T: Real> Primitive<T> for SparseMatMul<T> {
    fn name(&self) -> &'static str {
        "sparse_matmul"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (n, w) = rank2(x[0], "sparse_matmul")?;
        if n != self.0.ncols() {
            return Err(Error::dim("sparse_matmul rows", self.0.ncols(), n));
        }
        Tensor::from_vec(&[self.0.nrows(), w], self.0.mul_dense(x[0].data(), w))
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let w = x[0].shape()[1];
        Ok(vec![Some(Tensor::from_vec(x[0].shape(), self.0.tmul_dense(g.data(), w))?)])
    }
}

/// `X − 1 (rᵀ X)`: subtracts the `r`-weighted mean row (the regressed root).
pub struct RootCenter<T>(pub Arc<Vec<T>>);

impl<T: Real> Primitive<T> for RootCenter<T> {
    fn name(&self) -> &'static str {
        "root_center"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (n, w) = rank2(x[0], "root_center")?;
        if n != self.0.len() {
            return Err(Error::dim("root_center rows", self.0.len(), n));
        }
        let mut root = vec![T::zero(); w];
        for (row, &r) in x[0].data().chunks_exact(w).zip(self.0.iter()) {
            root.iter_mut().zip(row).for_each(|(a, b)| *a += r * *b);
        }
        let mut out = x[0].clone();
        for row in out.data_mut().chunks_exact_mut(w) {
            row.iter_mut().zip(&root).for_each(|(a, b)| *a -= *b);
        }
        Ok(out)
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let w = x[0].shape()[1];
        let mut total = vec![T::zero(); w];
        for row in g.data().chunks_exact(w) {
            total.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
        }
        let mut out = g.clone();
        for (row, &r) in out.data_mut().chunks_exact_mut(w).zip(self.0.iter()) {
            row.iter_mut().zip(&total).for_each(|(a, b)| *a -= r * *b);
        }
        Ok(vec![Some(out)])
    }
}

/// `(a, b, c) ↦ (exp a, b, c)`: keeps the camera scale positive.
pub struct ExpFirst;

impl<T: Real> Primitive<T> for ExpFirst {
    fn name(&self) -> &'static str {
        "exp_first"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let mut out = x[0].clone();
        let d = out.data_mut();
        if d.is_empty() {
            return Err(Error::dim("exp_first", 1, 0));
        }
        d[0] = d[0].exp();
        Ok(out)
    }

    fn vjp(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let mut out = g.clone();
        out.data_mut()[0] *= y.data()[0];
        Ok(vec![Some(out)])
    }
}

/// `Σ_i w_i · x_i` over scalar inputs.
pub struct WeightedSum<T>(pub Vec<T>);

impl<T: Real> Primitive<T> for WeightedSum<T> {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        if x.len() != self.0.len() || x.iter().any(|t| t.len() != 1) {
            return Err(Error::dim("weighted_sum terms", self.0.len(), x.len()));
        }
        Ok(Tensor::scalar(x.iter().zip(&self.0).map(|(t, &w)| t.item() * w).sum()))
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        Ok(x.iter()
            .zip(&self.0)
            .map(|(t, &w)| Some(Tensor::from_vec(t.shape(), vec![g.item() * w]).unwrap()))
            .collect())
    }
}

/// `(1/rows) Σ |x − target|` where `rows` is the leading dimension; the
/// subgradient at zero residual is 0.
pub struct L1Mean<T> {
    pub target: Vec<T>,
}

impl<T: Real> Primitive<T> for L1Mean<T> {
    fn name(&self) -> &'static str {
        "l1_mean"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        if x[0].len() != self.target.len() {
            return Err(Error::dim("l1 target", self.target.len(), x[0].len()));
        }
        let rows = T::c(x[0].shape()[0] as f64);
        let s: T = x[0].data().iter().zip(&self.target).map(|(a, b)| (*a - *b).abs()).sum();
        Ok(Tensor::scalar(s / rows))
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let k = g.item() / T::c(x[0].shape()[0] as f64);
        let data = x[0]
            .data()
            .iter()
            .zip(&self.target)
            .map(|(a, b)| {
                let r = *a - *b;
                if r > T::zero() {
                    k
                } else if r < T::zero() {
                    -k
                } else {
                    T::zero()
                }
            })
            .collect();
        Ok(vec![Some(Tensor::from_vec(x[0].shape(), data)?)])
    }
}

/// Mean of squared differences over every element.
pub struct Mse<T> {
    pub target: Vec<T>,
}

impl<T: Real> Primitive<T> for Mse<T> {
    fn name(&self) -> &'static str {
        "mse"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        if x[0].len() != self.target.len() {
            return Err(Error::dim("mse target", self.target.len(), x[0].len()));
        }
        let s: T = x[0].data().iter().zip(&self.target).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
        Ok(Tensor::scalar(s / T::c(self.target.len() as f64)))
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let k = T::c(2.0) * g.item() / T::c(self.target.len() as f64);
        let data = x[0].data().iter().zip(&self.target).map(|(a, b)| k * (*a - *b)).collect();
        Ok(vec![Some(Tensor::from_vec(x[0].shape(), data)?)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    /// Checks every input's gradient of `⟨r, op(inputs)⟩` for a fixed random `r`.
    fn check<P, F>(make: F, inputs: Vec<Tensor<f64>>, seed: u64)
    where
        P: Primitive<f64> + Send + 'static,
        F: Fn() -> P,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eval = |xs: &[Tensor<f64>], r: Option<&Tensor<f64>>| {
            let mut tape = Tape::new();
            let vars: Vec<_> = xs.iter().enumerate().map(|(i, x)| tape.param(i, x)).collect();
            let y = tape.apply(make(), &vars).unwrap();
            (tape.value(y).clone(), r.map(|r| tape.backward(y, r).unwrap()))
        };
        let (y, _) = eval(&inputs, None);
        let r = rand_tensor(y.shape(), &mut rng);
        let (_, grads) = eval(&inputs, Some(&r));
        let grads = grads.unwrap();
        for (slot, x) in inputs.iter().enumerate() {
            let g = grads.get(slot).unwrap().data().to_vec();
            let worst = finite_diff_check(
                |p| {
                    let mut xs = inputs.clone();
                    xs[slot] = Tensor::from_vec(x.shape(), p.to_vec()).unwrap();
                    Ok(eval(&xs, None).0.dot(&r))
                },
                x.data(),
                &g,
                50,
                1e-6,
                seed,
            )
            .unwrap();
            assert!(worst.rel_error <= 1e-6, "input {slot}: {worst:?}");
        }
    }

    #[test]
    fn matmul_and_bias_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        check(|| MatMul, vec![rand_tensor(&[4, 3], &mut rng), rand_tensor(&[3, 5], &mut rng)], 1);
        check(|| AddBias, vec![rand_tensor(&[4, 3], &mut rng), rand_tensor(&[3], &mut rng)], 2);
    }

    #[test]
    fn elementwise_and_reduction_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(|| Relu, vec![rand_tensor(&[6, 2], &mut rng)], 3);
        check(|| MeanRows, vec![rand_tensor(&[6, 2], &mut rng)], 4);
        check(|| ExpFirst, vec![rand_tensor(&[3], &mut rng)], 5);
        check(|| Reshape(vec![3, 4]), vec![rand_tensor(&[2, 6], &mut rng)], 6);
        check(
            || WeightedSum(vec![0.5, -2.0]),
            vec![rand_tensor(&[1], &mut rng), rand_tensor(&[1], &mut rng)],
            7,
        );
    }

    #[test]
    fn sparse_and_centering_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Csr::from_rows(4, vec![vec![(0, 0.5), (3, 0.5)], vec![(1, 1.0)], vec![(2, -1.0), (0, 0.25)]]).unwrap();
        let s = Arc::new(s);
        check(move || SparseMatMul(s.clone()), vec![rand_tensor(&[4, 3], &mut rng)], 8);
        let r = Arc::new(vec![0.25, 0.25, 0.5, 0.0]);
        check(move || RootCenter(r.clone()), vec![rand_tensor(&[4, 3], &mut rng)], 9);
    }

    #[test]
    fn loss_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let target: Vec<f64> = (0..12).map(|_| rng.random()).collect();
        let t = target.clone();
        check(move || L1Mean { target: t.clone() }, vec![rand_tensor(&[4, 3], &mut rng)], 10);
        check(move || Mse { target: target.clone() }, vec![rand_tensor(&[2, 2, 3], &mut rng)], 11);
    }

    #[test]
    fn root_center_zeroes_the_weighted_mean() {
        let r = Arc::new(vec![0.5, 0.5, 0.0]);
        let x = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 10.0, 10.0]).unwrap();
        let y = RootCenter(r).forward(&[&x]).unwrap();
        assert_eq!(y.data(), &[-1.0, -1.0, 1.0, 1.0, 8.0, 7.0]);
    }

    #[test]
    fn l1_subgradient_at_zero_is_zero() {
        let mut op = L1Mean { target: vec![1.0, 2.0] };
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        let y = op.forward(&[&x]).unwrap();
        assert_eq!(y.item(), 0.5);
        let g = op.vjp(&[&x], &y, &Tensor::scalar(1.0), &[true]).unwrap();
        assert_eq!(g[0].as_ref().unwrap().data(), &[0.0, 0.5]);
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        assert!(MatMul.forward(&[&a, &b]).is_err());
        assert!(AddBias.forward(&[&a, &Tensor::zeros(&[2])]).is_err());
    }
}
