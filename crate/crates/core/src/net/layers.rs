//! Network layers, as plain functions and as tape primitives.

use std::sync::Arc;

use crate::autodiff::Primitive;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparse::Csr;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

type Grads<T> = Result<Vec<Option<Tensor<T>>>>;

/// Row `i` is `[v_i, e]`: every vertex carries the same embedding.
pub fn attach_features<T: Real>(embedding: &[T], template_vertices: &[[T; 3]]) -> Tensor<T> {
    let w = 3 + embedding.len();
    let mut data = Vec::with_capacity(template_vertices.len() * w);
    for v in template_vertices {
        data.extend_from_slice(v);
        data.extend_from_slice(embedding);
    }
    Tensor::from_vec(&[template_vertices.len(), w], data).unwrap()
}

/// `σ(Ā X W)` with `σ` = ReLU when `activate`, identity otherwise.
pub fn graph_conv_layer<T: Real>(x: &Tensor<T>, abar: &Csr<T>, w: &Tensor<T>, activate: bool) -> Result<Tensor<T>> {
    let mut op = GraphConv {
        abar: Arc::new(abar.clone()),
        activate,
        ax: Vec::new(),
    };
    op.forward(&[x, w])
}

fn check_weight<T: Real>(w: &Tensor<T>, rows: usize) -> Result<usize> {
    match w.shape() {
        [r, c] if *r == rows => Ok(*c),
        [r, _] => Err(Error::dim("graph conv weight rows", rows, *r)),
        s => Err(Error::Invalid(format!("graph conv weight must be a matrix, got {s:?}"))),
    }
}

fn relu_in_place<T: Real>(v: &mut [T]) {
    v.iter_mut().for_each(|x| *x = x.max(T::zero()));
}

/// Zeroes `g` wherever the (post-ReLU) output is not positive.
fn relu_mask<T: Real>(g: &Tensor<T>, out: &Tensor<T>) -> Vec<T> {
    g.data()
        .iter()
        .zip(out.data())
        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
        .collect()
}

/// One graph convolution; inputs `(X: N×d_in, W: d_in×d_out)`.
pub struct GraphConv<T> {
    pub abar: Arc<Csr<T>>,
    pub activate: bool,
    ax: Vec<T>,
}

impl<T: Real> GraphConv<T> {
    pub fn new(abar: Arc<Csr<T>>, activate: bool) -> Self {
        Self {
            abar,
            activate,
            ax: Vec::new(),
        }
    }
}

impl<T: Real> Primitive<T> for GraphConv<T> {
    fn name(&self) -> &'static str {
        "graph_conv"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let [n, din] = *x[0].shape() else {
            return Err(Error::Invalid("graph conv input must be N × d".into()));
        };
        if n != self.abar.nrows() {
            return Err(Error::dim("graph conv vertices", self.abar.nrows(), n));
        }
        let dout = check_weight(x[1], din)?;
        self.ax = self.abar.mul_dense(x[0].data(), din);
        let mut y = matmul(&self.ax, x[1].data(), n, din, dout);
        if self.activate {
            relu_in_place(&mut y);
        }
        Tensor::from_vec(&[n, dout], y)
    }

    fn vjp(&self, x: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let (n, din) = x[0].dims2();
        let dout = x[1].shape()[1];
        let g = if self.activate { relu_mask(g, y) } else { g.data().to_vec() };
        let gw = needs[1]
            .then(|| Tensor::from_vec(&[din, dout], matmul_tn(&self.ax, &g, n, din, dout)))
            .transpose()?;
        let gx = needs[0]
            .then(|| {
                let gax = matmul_nt(&g, x[1].data(), n, dout, din);
                Tensor::from_vec(&[n, din], self.abar.tmul_dense(&gax, din))
            })
            .transpose()?;
        Ok(vec![gx, gw])
    }
}

/// First graph convolution fused with feature attachment; inputs `(e: d, W: (3+d)×d_out)`.
///
/// Since Ā is row-stochastic, `Ā [V, 1eᵀ] W = (ĀV) W_v + 1 (eᵀ W_e)`, which
/// avoids materialising the `N × (3+d)` feature matrix.
pub struct AttachedGraphConv<T> {
    /// `Ā V` for the template vertices, `N × 3`.
    pub abar_v: Arc<Vec<T>>,
    pub activate: bool,
}

impl<T: Real> Primitive<T> for AttachedGraphConv<T> {
    fn name(&self) -> &'static str {
        "graph_conv"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let d = x[0].len();
        let dout = check_weight(x[1], 3 + d)?;
        let n = self.abar_v.len() / 3;
        let w = x[1].data();
        let shared = matmul(x[0].data(), &w[3 * dout..], 1, d, dout);
        let mut y = matmul(&self.abar_v, &w[..3 * dout], n, 3, dout);
        for row in y.chunks_exact_mut(dout) {
            row.iter_mut().zip(&shared).for_each(|(a, b)| *a += *b);
        }
        if self.activate {
            relu_in_place(&mut y);
        }
        Tensor::from_vec(&[n, dout], y)
    }

    fn vjp(&self, x: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let d = x[0].len();
        let (n, dout) = y.dims2();
        let g = if self.activate { relu_mask(g, y) } else { g.data().to_vec() };
        let mut colsum = vec![T::zero(); dout];
        for row in g.chunks_exact(dout) {
            colsum.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
        }
        let ge = needs[0]
            .then(|| Tensor::from_vec(&[d], matmul_nt(&colsum, &x[1].data()[3 * dout..], 1, dout, d)))
            .transpose()?;
        let gw = needs[1]
            .then(|| {
                let mut gw = matmul_tn(&self.abar_v, &g, n, 3, dout);
                gw.extend(matmul(x[0].data(), &colsum, d, 1, dout));
                Tensor::from_vec(&[3 + d, dout], gw)
            })
            .transpose()?;
        Ok(vec![ge, gw])
    }
}

/// Strided 2-D convolution(+ReLU) over `H × W × C` tensors; inputs `(x, W, b)`
/// with `W: (k·k·C_in) × C_out`, rows ordered `(dy, dx, c_in)`.
pub struct Conv2d<T> {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub activate: bool,
    cols: Vec<T>,
    out_hw: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    pub fn new(kernel: usize, stride: usize, pad: usize, activate: bool) -> Self {
        Self {
            kernel,
            stride,
            pad,
            activate,
            cols: Vec::new(),
            out_hw: (0, 0),
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let o = |s: usize| (s + 2 * self.pad - self.kernel) / self.stride + 1;
        (o(h), o(w))
    }

    /// Visits `(col_row, col_index, input_index)` for every in-bounds tap.
    fn for_taps(&self, h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo) = self.output_size(h, w);
        let k = self.kernel;
        for oy in 0..ho {
            for ox in 0..wo {
                let row = oy * wo + ox;
                for dy in 0..k {
                    let iy = (oy * self.stride + dy) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for dx in 0..k {
                        let ix = (ox * self.stride + dx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let base = (iy as usize * w + ix as usize) * c;
                        f(row, (dy * k + dx) * c, base);
                    }
                }
            }
        }
    }
}

impl<T: Real> Primitive<T> for Conv2d<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let [h, w, c] = *x[0].shape() else {
            return Err(Error::Invalid("conv2d input must be H × W × C".into()));
        };
        let kk = self.kernel * self.kernel * c;
        let cout = match x[1].shape() {
            [r, co] if *r == kk => *co,
            _ => return Err(Error::dim("conv2d weight rows", kk, x[1].shape()[0])),
        };
        if x[2].len() != cout {
            return Err(Error::dim("conv2d bias", cout, x[2].len()));
        }
        if h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            return Err(Error::Invalid("conv2d input smaller than kernel".into()));
        }
        let (ho, wo) = self.output_size(h, w);
        let mut cols = vec![T::zero(); ho * wo * kk];
        let input = x[0].data();
        self.for_taps(h, w, c, |row, col, base| {
            cols[row * kk + col..row * kk + col + c].copy_from_slice(&input[base..base + c]);
        });
        let mut y = matmul(&cols, x[1].data(), ho * wo, kk, cout);
        for row in y.chunks_exact_mut(cout) {
            row.iter_mut().zip(x[2].data()).for_each(|(a, b)| *a += *b);
        }
        if self.activate {
            relu_in_place(&mut y);
        }
        self.cols = cols;
        self.out_hw = (ho, wo);
        Tensor::from_vec(&[ho, wo, cout], y)
    }

    fn vjp(&self, x: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let [h, w, c] = *x[0].shape() else { unreachable!() };
        let kk = self.kernel * self.kernel * c;
        let cout = x[1].shape()[1];
        let rows = self.out_hw.0 * self.out_hw.1;
        let g = if self.activate { relu_mask(g, y) } else { g.data().to_vec() };
        let gw = needs[1]
            .then(|| Tensor::from_vec(&[kk, cout], matmul_tn(&self.cols, &g, rows, kk, cout)))
            .transpose()?;
        let gb = needs[2].then(|| {
            let mut acc = vec![T::zero(); cout];
            for row in g.chunks_exact(cout) {
                acc.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
            }
            Tensor::from_vec(&[cout], acc).unwrap()
        });
        let gx = needs[0]
            .then(|| {
                let gcols = matmul_nt(&g, x[1].data(), rows, cout, kk);
                let mut gx = vec![T::zero(); h * w * c];
                self.for_taps(h, w, c, |row, col, base| {
                    for i in 0..c {
                        gx[base + i] += gcols[row * kk + col + i];
                    }
                });
                Tensor::from_vec(&[h, w, c], gx)
            })
            .transpose()?;
        Ok(vec![gx, gw, gb])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, Tape};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    /// Random connected graph on `n` vertices (a ring plus chords), row-normalised with self loops.
    fn random_abar(n: usize, rng: &mut ChaCha8Rng) -> Csr<f64> {
        let mut adj = vec![vec![false; n]; n];
        for i in 0..n {
            adj[i][(i + 1) % n] = true;
            adj[(i + 1) % n][i] = true;
            let j = rng.random_range(0..n);
            if j != i {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
        let rows = (0..n)
            .map(|i| {
                let nb: Vec<usize> = (0..n).filter(|&j| j == i || adj[i][j]).collect();
                let w = 1.0 / nb.len() as f64;
                nb.into_iter().map(|j| (j, w)).collect()
            })
            .collect();
        Csr::from_rows(n, rows).unwrap()
    }

    #[test]
    fn identity_graph_and_weights_pass_nonnegative_input() {
        let n = 4;
        let eye = Csr::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect()).unwrap();
        let x = Tensor::from_vec(&[4, 2], vec![0.0, 1.0, 2.0, 3.0, 0.5, 0.25, 7.0, 0.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(graph_conv_layer(&x, &eye, &w, true).unwrap().data(), x.data());
        let zero = Tensor::zeros(&[2, 3]);
        assert!(graph_conv_layer(&x, &eye, &zero, true).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_a_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (n, din, dout) = (5, 3, 4);
        let abar = random_abar(n, &mut rng);
        let dense = abar.to_dense();
        let x = rand_tensor(&[n, din], &mut rng);
        let w = rand_tensor(&[din, dout], &mut rng);
        for activate in [false, true] {
            let y = graph_conv_layer(&x, &abar, &w, activate).unwrap();
            for i in 0..n {
                for l in 0..dout {
                    let mut s = 0.0;
                    for j in 0..n {
                        for k in 0..din {
                            s += dense[i * n + j] * x.data()[j * din + k] * w.data()[k * dout + l];
                        }
                    }
                    if activate {
                        s = s.max(0.0);
                    }
                    assert!((y.data()[i * dout + l] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn attached_layer_equals_generic_layer_on_attached_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 7;
        let abar = random_abar(n, &mut rng);
        let verts: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let e: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
        let w = rand_tensor(&[8, 6], &mut rng);
        let x = attach_features(&e, &verts);
        let generic = graph_conv_layer(&x, &abar, &w, true).unwrap();
        let flat: Vec<f64> = verts.iter().flatten().copied().collect();
        let mut fused = AttachedGraphConv {
            abar_v: Arc::new(abar.mul_dense(&flat, 3)),
            activate: true,
        };
        let et = Tensor::from_vec(&[5], e).unwrap();
        let y = fused.forward(&[&et, &w]).unwrap();
        for (a, b) in y.data().iter().zip(generic.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attach_features_layout() {
        let v = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let x = attach_features(&[9.0, 8.0], &v);
        assert_eq!(x.shape(), &[2, 5]);
        assert_eq!(&x.data()[3..5], &x.data()[8..10]);
        assert_ne!(&x.data()[..3], &x.data()[5..8]);
        assert_eq!(attach_features::<f64>(&[], &v).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    fn check_op<P: Primitive<f64> + Send + 'static>(make: impl Fn() -> P, inputs: Vec<Tensor<f64>>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eval = |xs: &[Tensor<f64>], r: Option<&Tensor<f64>>| {
            let mut tape = Tape::new();
            let vars: Vec<_> = xs.iter().enumerate().map(|(i, x)| tape.param(i, x)).collect();
            let y = tape.apply(make(), &vars).unwrap();
            (tape.value(y).clone(), r.map(|r| tape.backward(y, r).unwrap()))
        };
        let (y, _) = eval(&inputs, None);
        let r = rand_tensor(y.shape(), &mut rng);
        let grads = eval(&inputs, Some(&r)).1.unwrap();
        for (slot, x) in inputs.iter().enumerate() {
            let worst = finite_diff_check(
                |p| {
                    let mut xs = inputs.clone();
                    xs[slot] = Tensor::from_vec(x.shape(), p.to_vec()).unwrap();
                    Ok(eval(&xs, None).0.dot(&r))
                },
                x.data(),
                grads.get(slot).unwrap().data(),
                60,
                1e-6,
                seed,
            )
            .unwrap();
            assert!(worst.rel_error <= 1e-6, "input {slot}: {worst:?}");
        }
    }

    #[test]
    fn graph_conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let abar = Arc::new(random_abar(6, &mut rng));
        let a2 = abar.clone();
        check_op(
            move || GraphConv::new(a2.clone(), true),
            vec![rand_tensor(&[6, 4], &mut rng), rand_tensor(&[4, 3], &mut rng)],
            3,
        );
        let flat: Vec<f64> = (0..18).map(|_| rng.random()).collect();
        let abar_v = Arc::new(abar.mul_dense(&flat, 3));
        check_op(
            move || AttachedGraphConv {
                abar_v: abar_v.clone(),
                activate: false,
            },
            vec![rand_tensor(&[4], &mut rng), rand_tensor(&[7, 5], &mut rng)],
            4,
        );
    }

    #[test]
    fn conv2d_gradients_and_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::<f64>::new(3, 2, 1, false);
        assert_eq!(conv.output_size(64, 64), (32, 32));
        assert_eq!(conv.output_size(7, 5), (4, 3));
        let x = rand_tensor(&[7, 5, 2], &mut rng);
        let w = rand_tensor(&[18, 3], &mut rng);
        let b = rand_tensor(&[3], &mut rng);
        assert_eq!(conv.forward(&[&x, &w, &b]).unwrap().shape(), &[4, 3, 3]);
        check_op(|| Conv2d::new(3, 2, 1, true), vec![x, w, b], 6);
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (h, w, c, co) = (6, 5, 2, 3);
        let x = rand_tensor(&[h, w, c], &mut rng);
        let wt = rand_tensor(&[9 * c, co], &mut rng);
        let b = rand_tensor(&[co], &mut rng);
        let y = Conv2d::new(3, 2, 1, false).forward(&[&x, &wt, &b]).unwrap();
        let [ho, wo, _] = *y.shape() else { panic!() };
        for oy in 0..ho {
            for ox in 0..wo {
                for o in 0..co {
                    let mut s = b.data()[o];
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (iy, ix) = ((oy * 2 + dy) as isize - 1, (ox * 2 + dx) as isize - 1);
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..c {
                                s += x.data()[(iy as usize * w + ix as usize) * c + ci]
                                    * wt.data()[((dy * 3 + dx) * c + ci) * co + o];
                            }
                        }
                    }
                    assert!((y.data()[(oy * wo + ox) * co + o] - s).abs() < 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn layer_is_permutation_equivariant(seed in 0u64..1000, n in 3usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let abar = random_abar(n, &mut rng);
            let x = rand_tensor(&[n, 3], &mut rng);
            let w = rand_tensor(&[3, 2], &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            // (P X)_i = X_{perm[i]};  (P Ā Pᵀ)_{ij} = Ā_{perm[i], perm[j]}.
            let mut inv = vec![0; n];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            let px = Tensor::from_vec(&[n, 3], perm.iter().flat_map(|&p| x.data()[p * 3..p * 3 + 3].to_vec()).collect()).unwrap();
            let pa = Csr::from_rows(n, perm.iter().map(|&p| abar.row(p).map(|(j, v)| (inv[j], v)).collect()).collect()).unwrap();
            let lhs = graph_conv_layer(&px, &pa, &w, true).unwrap();
            let y = graph_conv_layer(&x, &abar, &w, true).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                for l in 0..2 {
                    prop_assert!((lhs.data()[i * 2 + l] - y.data()[p * 2 + l]).abs() < 1e-12);
                }
            }
        }
    }
}
