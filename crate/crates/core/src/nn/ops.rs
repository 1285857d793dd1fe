//! Forward and backward kernels for the supported layer kinds.
//!
//! Tensors use HWC layout; convolution kernels are `[kh, kw, cin, cout]` and
//! dense weights `[inputs, outputs]`.

use serde::{Deserialize, Serialize};

use super::{NnError, Real, Tensor};

/// Probability clamp applied before the logarithms in [`bce_loss`].
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

fn dims3<T: Real>(t: &Tensor<T>, what: &str) -> Result<[usize; 3], NnError> {
    match *t.shape() {
        [a, b, c] => Ok([a, b, c]),
        ref s => Err(NnError::ShapeMismatch(format!("{what}: expected rank 3, got {s:?}"))),
    }
}

/// Valid (unpadded) stride-1 convolution.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let [h, w, cin] = dims3(input, "conv input")?;
    let (kh, kw, cout) = match *kernels.shape() {
        [kh, kw, kc, co] if kc == cin => (kh, kw, co),
        ref s => {
            return Err(NnError::ShapeMismatch(format!(
                "kernels {s:?} incompatible with {cin} input channels"
            )))
        }
    };
    if bias.shape() != [cout] {
        return Err(NnError::ShapeMismatch(format!(
            "bias {:?} for {cout} filters",
            bias.shape()
        )));
    }
    if kh == 0 || kw == 0 || h < kh || w < kw {
        return Err(NnError::ShapeMismatch(format!(
            "{h}x{w} input smaller than {kh}x{kw} kernel"
        )));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let inp = input.data();
    let k = kernels.data();
    let span = kw * cin;
    let mut out = vec![T::zero(); oh * ow * cout];
    for y in 0..oh {
        for x in 0..ow {
            let o = &mut out[(y * ow + x) * cout..][..cout];
            o.copy_from_slice(bias.data());
            for dy in 0..kh {
                let row = &inp[((y + dy) * w + x) * cin..][..span];
                let krows = &k[dy * span * cout..][..span * cout];
                for (&a, kr) in row.iter().zip(krows.chunks_exact(cout)) {
                    for (acc, &kv) in o.iter_mut().zip(kr) {
                        *acc = *acc + a * kv;
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, cout], out)
}

/// Gradients of a convolution: `(d_input, d_kernels, d_bias)`. The input
/// gradient is skipped when `need_input_grad` is false.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    d_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>), NnError> {
    let [h, w, cin] = dims3(input, "conv input")?;
    let (kh, kw, cout) = match *kernels.shape() {
        [kh, kw, kc, co] if kc == cin => (kh, kw, co),
        ref s => return Err(NnError::ShapeMismatch(format!("kernels {s:?}"))),
    };
    let (oh, ow) = (h + 1 - kh, w + 1 - kw);
    if d_out.shape() != [oh, ow, cout] {
        return Err(NnError::ShapeMismatch(format!(
            "conv upstream gradient {:?}, expected {:?}",
            d_out.shape(),
            [oh, ow, cout]
        )));
    }
    let inp = input.data();
    let k = kernels.data();
    let g_all = d_out.data();
    let span = kw * cin;
    let mut dk = vec![T::zero(); k.len()];
    let mut db = vec![T::zero(); cout];
    let mut dx = if need_input_grad {
        Some(vec![T::zero(); inp.len()])
    } else {
        None
    };
    for y in 0..oh {
        for x in 0..ow {
            let g = &g_all[(y * ow + x) * cout..][..cout];
            if g.iter().all(|v| v.is_zero()) {
                continue;
            }
            for (b, &gv) in db.iter_mut().zip(g) {
                *b = *b + gv;
            }
            for dy in 0..kh {
                let base = ((y + dy) * w + x) * cin;
                let kbase = dy * span * cout;
                for j in 0..span {
                    let a = inp[base + j];
                    let off = kbase + j * cout;
                    let dkr = &mut dk[off..off + cout];
                    for (d, &gv) in dkr.iter_mut().zip(g) {
                        *d = *d + a * gv;
                    }
                    if let Some(dx) = dx.as_mut() {
                        let kr = &k[off..off + cout];
                        let mut s = T::zero();
                        for (&kv, &gv) in kr.iter().zip(g) {
                            s = s + kv * gv;
                        }
                        dx[base + j] = dx[base + j] + s;
                    }
                }
            }
        }
    }
    Ok((
        dx.map(|d| Tensor::new(vec![h, w, cin], d)).transpose()?,
        Tensor::new(kernels.shape().to_vec(), dk)?,
        Tensor::new(vec![cout], db)?,
    ))
}

/// `size`×`size` max pooling with stride `size`; trailing rows/columns that do
/// not fill a window are dropped. Returns the pooled tensor and, per output
/// element, the flat input index that won (first in row-major window order).
pub fn maxpool2d_forward<T: Real>(
    input: &Tensor<T>,
    size: usize,
) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    let [h, w, c] = dims3(input, "pool input")?;
    if size == 0 || h < size || w < size {
        return Err(NnError::ShapeMismatch(format!(
            "{h}x{w} input too small for {size}x{size} pooling"
        )));
    }
    let (oh, ow) = (h / size, w / size);
    let inp = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut arg = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_i = ((oy * size) * w + ox * size) * c + ch;
                let mut best = inp[best_i];
                for dy in 0..size {
                    for dx in 0..size {
                        let i = ((oy * size + dy) * w + ox * size + dx) * c + ch;
                        if inp[i] > best {
                            best = inp[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    Ok((Tensor::new(vec![oh, ow, c], out)?, arg))
}

pub fn maxpool2d_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    d_out: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if argmax.len() != d_out.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} argmax entries for {} gradients",
            argmax.len(),
            d_out.len()
        )));
    }
    let mut d_in = Tensor::zeros(input_shape);
    let buf = d_in.data_mut();
    for (&i, &g) in argmax.iter().zip(d_out.data()) {
        let slot = buf
            .get_mut(i)
            .ok_or_else(|| NnError::ShapeMismatch(format!("argmax index {i} out of range")))?;
        *slot = *slot + g;
    }
    Ok(d_in)
}

/// `out[j] = bias[j] + Σ_i input[i] · weights[i, j]`.
pub fn dense_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let n = input.len();
    let m = match *weights.shape() {
        [wn, wm] if wn == n => wm,
        ref s => {
            return Err(NnError::ShapeMismatch(format!(
                "dense weights {s:?} for {n} inputs"
            )))
        }
    };
    if bias.shape() != [m] {
        return Err(NnError::ShapeMismatch(format!(
            "dense bias {:?} for {m} outputs",
            bias.shape()
        )));
    }
    let mut out = bias.data().to_vec();
    for (&a, row) in input.data().iter().zip(weights.data().chunks_exact(m)) {
        for (o, &wv) in out.iter_mut().zip(row) {
            *o = *o + a * wv;
        }
    }
    Tensor::new(vec![m], out)
}

/// Gradients of a dense layer: `(d_input, d_weights, d_bias)`.
#[allow(clippy::type_complexity)]
pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    d_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let n = input.len();
    let m = d_out.len();
    if weights.shape() != [n, m] {
        return Err(NnError::ShapeMismatch(format!(
            "dense weights {:?}, expected {:?}",
            weights.shape(),
            [n, m]
        )));
    }
    let g = d_out.data();
    let mut dw = Vec::with_capacity(n * m);
    let mut dx = Vec::with_capacity(n);
    for (&a, row) in input.data().iter().zip(weights.data().chunks_exact(m)) {
        dw.extend(g.iter().map(|&gv| a * gv));
        let mut s = T::zero();
        for (&wv, &gv) in row.iter().zip(g) {
            s = s + wv * gv;
        }
        dx.push(s);
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(vec![n, m], dw)?,
        Tensor::new(vec![m], g.to_vec())?,
    ))
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn activate<T: Real>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => input.map(|v| v.max(T::zero())),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

/// Backward pass of an activation given its forward input and output.
pub fn activate_backward<T: Real>(
    kind: Activation,
    input: &Tensor<T>,
    output: &Tensor<T>,
    d_out: &Tensor<T>,
) -> Tensor<T> {
    let data = match kind {
        Activation::Relu => input
            .data()
            .iter()
            .zip(d_out.data())
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect(),
        Activation::Sigmoid => output
            .data()
            .iter()
            .zip(d_out.data())
            .map(|(&y, &g)| g * y * (T::one() - y))
            .collect(),
    };
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

/// Binary cross-entropy on a single probability, clamped into
/// `[BCE_CLAMP, 1 - BCE_CLAMP]`. Returns `(loss, d loss / d pred)` evaluated at
/// the clamped prediction.
pub fn bce_loss<T: Real>(pred: T, target: T) -> (T, T) {
    let eps = T::lit(BCE_CLAMP);
    let p = pred.max(eps).min(T::one() - eps);
    let one = T::one();
    let loss = -(target * p.ln() + (one - target) * (one - p).ln());
    let grad = -(target / p) + (one - target) / (one - p);
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        t(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    // Independent six-loop convolution, accumulating bias first then
    // (dy, dx, ci) in order.
    fn conv_oracle(i: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (h, w, cin) = (i.shape()[0], i.shape()[1], i.shape()[2]);
        let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
        let mut out = vec![];
        for y in 0..=h - kh {
            for x in 0..=w - kw {
                for co in 0..cout {
                    let mut acc = b.data()[co];
                    for dy in 0..kh {
                        for dx in 0..kw {
                            for ci in 0..cin {
                                acc += i.data()[((y + dy) * w + x + dx) * cin + ci]
                                    * k.data()[((dy * kw + dx) * cin + ci) * cout + co];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn conv_all_ones() {
        let i = t(&[3, 3, 1], vec![1.0; 9]);
        let k = t(&[3, 3, 1, 1], vec![1.0; 9]);
        let out = conv2d_forward(&i, &k, &t(&[1], vec![0.0])).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv_delta_kernel_crops_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let i = random(&[5, 6, 1], &mut rng);
        let mut kd = vec![0.0; 9];
        kd[4] = 1.0;
        let out = conv2d_forward(&i, &t(&[3, 3, 1, 1], kd), &t(&[1], vec![0.0])).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(out.data()[y * 4 + x], i.data()[(y + 1) * 6 + x + 1]);
            }
        }
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let i = random(&[5, 5, 2], &mut rng);
        let k = random(&[3, 3, 2, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let out = conv2d_forward(&i, &k, &b).unwrap();
        assert_eq!(out.data(), conv_oracle(&i, &k, &b).as_slice());
    }

    #[test]
    fn conv_shape_errors() {
        let i = Tensor::<f64>::zeros(&[2, 2, 1]);
        let k = Tensor::<f64>::zeros(&[3, 3, 1, 1]);
        let b = Tensor::<f64>::zeros(&[1]);
        assert!(matches!(conv2d_forward(&i, &k, &b), Err(NnError::ShapeMismatch(_))));
        let k2 = Tensor::<f64>::zeros(&[1, 1, 2, 1]);
        assert!(matches!(conv2d_forward(&i, &k2, &b), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn pool_basics() {
        let (out, arg) = maxpool2d_forward(&t(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let (out, arg) = maxpool2d_forward(&t(&[3, 5, 1], vec![7.0; 15]), 2).unwrap();
        assert_eq!(out.shape(), &[1, 2, 1]);
        assert_eq!(out.data(), &[7.0, 7.0]);
        // Ties resolve to the first index in row-major window order.
        assert_eq!(arg, vec![0, 2]);
        assert!(maxpool2d_forward(&t(&[1, 4, 1], vec![0.0; 4]), 2).is_err());
    }

    #[test]
    fn pool_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let i = random(&[6, 6, 4], &mut rng);
        let (out, _) = maxpool2d_forward(&i, 2).unwrap();
        for oy in 0..3 {
            for ox in 0..3 {
                for c in 0..4 {
                    let want = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dy, dx)| i.data()[((2 * oy + dy) * 6 + 2 * ox + dx) * 4 + c])
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(out.data()[(oy * 3 + ox) * 4 + c], want);
                }
            }
        }
    }

    #[test]
    fn dense_identity_and_bias() {
        let x = t(&[3], vec![1.0, -2.0, 0.5]);
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let out = dense_forward(&x, &t(&[3, 3], eye), &Tensor::zeros(&[3])).unwrap();
        assert_eq!(out.data(), x.data());
        let b = t(&[2], vec![0.25, -4.0]);
        let out = dense_forward(&x, &Tensor::zeros(&[3, 2]), &b).unwrap();
        assert_eq!(out.data(), b.data());
    }

    #[test]
    fn dense_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&[8], &mut rng);
        let w = random(&[8, 4], &mut rng);
        let b = random(&[4], &mut rng);
        let out = dense_forward(&x, &w, &b).unwrap();
        for j in 0..4 {
            let mut acc = b.data()[j];
            for i in 0..8 {
                acc += x.data()[i] * w.data()[i * 4 + j];
            }
            assert_eq!(out.data()[j], acc);
        }
    }

    #[test]
    fn dense_gradient_is_outer_product() {
        let x = t(&[3], vec![1.0, 2.0, -1.0]);
        let w = t(&[3, 2], vec![0.5, -0.5, 1.0, 2.0, 0.0, 3.0]);
        let g = t(&[2], vec![2.0, -1.0]);
        let (dx, dw, db) = dense_backward(&x, &w, &g).unwrap();
        assert_eq!(dw.data(), &[2.0, -1.0, 4.0, -2.0, -2.0, 1.0]);
        assert_eq!(db.data(), g.data());
        // dx_i = Σ_j w_ij g_j
        assert_eq!(dx.data(), &[1.5, 0.0, -3.0]);
    }

    #[test]
    fn activation_values() {
        let r = activate(&t(&[2], vec![-1.0, 2.0]), Activation::Relu);
        assert_eq!(r.data(), &[0.0, 2.0]);
        assert_eq!(sigmoid(0.0f64), 0.5);
        let (lo, hi) = (sigmoid(-10.0f64), sigmoid(10.0f64));
        assert!(0.0 < lo && lo < 0.5 && 0.5 < hi && hi < 1.0);
        let mut prev = 0.0;
        for i in -40..=40 {
            let s = sigmoid(i as f64 * 0.5);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn bce_reference_values() {
        let (l, _) = bce_loss(0.5f64, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = bce_loss(0.9f64, 0.0);
        assert!((l - std::f64::consts::LN_10).abs() < 1e-12);
        let (l, g) = bce_loss(1.0f64, 1.0);
        assert!(l > 0.0 && (l - 1e-7).abs() < 1e-12);
        assert!(g.is_finite());
        let (l, g) = bce_loss(0.0f64, 0.0);
        assert!(l > 0.0 && l < 1e-6 && g.is_finite());
    }

    #[test]
    fn bce_nonnegative_and_minimized_at_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p: f64 = rng.gen();
            let target = if rng.gen::<bool>() { 1.0 } else { 0.0 };
            let (l, _) = bce_loss(p, target);
            assert!(l >= 0.0);
            assert!(l >= bce_loss(target, target).0);
        }
    }
}
