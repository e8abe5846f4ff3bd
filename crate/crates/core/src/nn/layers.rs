use rand::{Rng, RngCore};

use super::{NnError, NnResult, ParamId, ParamSet, Tensor2};

/// A batch of multichannel sequences, stored time-major.
///
/// Row `b * len + t` holds the channel vector of sample `b` at position `t`,
/// so a window of `k` consecutive positions is one contiguous slice and
/// flattening a sample is a free reshape.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    batch: usize,
    len: usize,
    data: Tensor2,
}

impl Signal {
    pub fn new(batch: usize, len: usize, data: Tensor2) -> NnResult<Self> {
        if data.rows() != batch * len {
            return Err(NnError::shape(
                "signal",
                format!("{} rows for batch {batch} x length {len}", data.rows()),
            ));
        }
        Ok(Self { batch, len, data })
    }

    /// Treats each row of a `B × D` matrix as a one-channel sequence of length `D`.
    pub fn from_rows_single_channel(rows: &Tensor2) -> Self {
        let (batch, len) = rows.shape();
        let data = Tensor2::from_vec(batch * len, 1, rows.as_slice().to_vec())
            .expect("same element count");
        Self { batch, len, data }
    }

    /// `channels × length` matrix as a batch of one.
    pub fn from_channels_by_length(input: &Tensor2) -> Self {
        let len = input.cols();
        Self {
            batch: 1,
            len,
            data: input.transpose(),
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.data.cols()
    }

    pub fn data(&self) -> &Tensor2 {
        &self.data
    }

    pub fn into_data(self) -> Tensor2 {
        self.data
    }

    /// One row per sample, `len * channels` columns in (position, channel) order.
    pub fn flatten(self) -> Tensor2 {
        let cols = self.len * self.channels();
        self.data
            .reshape(self.batch, cols)
            .expect("same element count")
    }

    pub fn unflatten(flat: Tensor2, len: usize, channels: usize) -> NnResult<Self> {
        let batch = flat.rows();
        if flat.cols() != len * channels {
            return Err(NnError::shape(
                "unflatten",
                format!("{} columns for {len} x {channels}", flat.cols()),
            ));
        }
        Self::new(batch, len, flat.reshape(batch * len, channels)?)
    }

    /// The single sample of a batch-one signal as `channels × length`.
    pub fn to_channels_by_length(&self) -> Tensor2 {
        self.data.transpose()
    }
}

/// 1-D convolution with valid padding and unit stride.
///
/// The kernel is stored as a `(kernel_size * in_channels) × out_channels`
/// matrix, row index `tap * in_channels + channel`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Unfolded input windows kept for the backward pass.
#[derive(Debug)]
pub struct ConvCache {
    windows: Tensor2,
    batch: usize,
    in_len: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel_size >= 1, "kernel_size must be at least 1");
        let weight = params.add_glorot(
            format!("{name}.weight"),
            kernel_size * in_channels,
            out_channels,
            kernel_size * in_channels,
            kernel_size * out_channels,
            rng,
        );
        let bias = params.add_zeros(format!("{name}.bias"), 1, out_channels);
        Self {
            in_channels,
            out_channels,
            kernel_size,
            weight,
            bias,
        }
    }

    pub fn output_len(&self, len: usize) -> NnResult<usize> {
        if len < self.kernel_size {
            return Err(NnError::shape(
                "conv1d",
                format!("length {len} shorter than kernel {}", self.kernel_size),
            ));
        }
        Ok(len - self.kernel_size + 1)
    }

    pub fn param_count(&self) -> usize {
        self.kernel_size * self.in_channels * self.out_channels + self.out_channels
    }

    /// Kernel weight connecting input `channel` at offset `tap` to output `out`.
    pub fn kernel(&self, params: &ParamSet, out: usize, channel: usize, tap: usize) -> f64 {
        params
            .value(self.weight)
            .get(tap * self.in_channels + channel, out)
    }

    pub fn set_kernel(&self, params: &mut ParamSet, out: usize, channel: usize, tap: usize, v: f64) {
        params
            .value_mut(self.weight)
            .set(tap * self.in_channels + channel, out, v);
    }

    pub fn forward(&self, params: &ParamSet, x: &Signal) -> NnResult<(Signal, ConvCache)> {
        if x.channels() != self.in_channels {
            return Err(NnError::shape(
                "conv1d",
                format!("{} input channels, layer expects {}", x.channels(), self.in_channels),
            ));
        }
        let out_len = self.output_len(x.len)?;
        let width = self.kernel_size * self.in_channels;
        let src = x.data.as_slice();
        let mut windows = Tensor2::zeros(x.batch * out_len, width);
        for b in 0..x.batch {
            for t in 0..out_len {
                let start = (b * x.len + t) * self.in_channels;
                windows
                    .row_mut(b * out_len + t)
                    .copy_from_slice(&src[start..start + width]);
            }
        }
        let mut out = windows.matmul(params.value(self.weight))?;
        let bias = params.value(self.bias).as_slice();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
                *o += b;
            }
        }
        out.ensure_finite("conv1d")?;
        let cache = ConvCache {
            windows,
            batch: x.batch,
            in_len: x.len,
        };
        Ok((Signal::new(x.batch, out_len, out)?, cache))
    }

    /// Accumulates kernel/bias gradients; returns the input gradient when asked.
    pub fn backward(
        &self,
        params: &mut ParamSet,
        cache: &ConvCache,
        grad_out: &Signal,
        want_input_grad: bool,
    ) -> NnResult<Option<Signal>> {
        let g = &grad_out.data;
        let dw = cache.windows.matmul_tn(g)?;
        params.accumulate(self.weight, dw.as_slice());
        params.accumulate(self.bias, &g.col_sums());
        if !want_input_grad {
            return Ok(None);
        }
        let dwindows = g.matmul_nt(params.value(self.weight))?;
        let width = self.kernel_size * self.in_channels;
        let out_len = grad_out.len;
        let mut dx = Tensor2::zeros(cache.batch * cache.in_len, self.in_channels);
        let dst = dx.as_mut_slice();
        for b in 0..cache.batch {
            for t in 0..out_len {
                let start = (b * cache.in_len + t) * self.in_channels;
                for (d, v) in dst[start..start + width]
                    .iter_mut()
                    .zip(dwindows.row(b * out_len + t))
                {
                    *d += v;
                }
            }
        }
        Ok(Some(Signal::new(cache.batch, cache.in_len, dx)?))
    }

    /// Single-sample convolution of a `channels × length` input.
    pub fn apply(&self, params: &ParamSet, input: &Tensor2) -> NnResult<Tensor2> {
        let (out, _) = self.forward(params, &Signal::from_channels_by_length(input))?;
        Ok(out.to_channels_by_length())
    }
}

/// Non-overlapping max pooling along the sequence axis.
///
/// Trailing positions that do not fill a window are dropped; ties go to the
/// first position in the window.
#[derive(Clone, Copy, Debug)]
pub struct MaxPool1d {
    pub window: usize,
}

impl Default for MaxPool1d {
    fn default() -> Self {
        Self { window: 2 }
    }
}

#[derive(Debug)]
pub struct PoolCache {
    argmax: Vec<usize>,
    batch: usize,
    in_len: usize,
    channels: usize,
}

impl PoolCache {
    /// Flat input indices (into the time-major buffer) that won each window.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

impl MaxPool1d {
    pub fn output_len(&self, len: usize) -> NnResult<usize> {
        if len < self.window {
            return Err(NnError::shape(
                "maxpool1d",
                format!("length {len} shorter than window {}", self.window),
            ));
        }
        Ok(len / self.window)
    }

    pub fn forward(&self, x: &Signal) -> NnResult<(Signal, PoolCache)> {
        let out_len = self.output_len(x.len)?;
        let c = x.channels();
        let src = x.data.as_slice();
        let mut out = Tensor2::zeros(x.batch * out_len, c);
        let mut argmax = vec![0usize; x.batch * out_len * c];
        let dst = out.as_mut_slice();
        for b in 0..x.batch {
            for t in 0..out_len {
                let o = (b * out_len + t) * c;
                let first = (b * x.len + t * self.window) * c;
                dst[o..o + c].copy_from_slice(&src[first..first + c]);
                for ch in 0..c {
                    argmax[o + ch] = first + ch;
                }
                for w in 1..self.window {
                    let row = first + w * c;
                    for ch in 0..c {
                        if src[row + ch] > dst[o + ch] {
                            dst[o + ch] = src[row + ch];
                            argmax[o + ch] = row + ch;
                        }
                    }
                }
            }
        }
        let cache = PoolCache {
            argmax,
            batch: x.batch,
            in_len: x.len,
            channels: c,
        };
        Ok((Signal::new(x.batch, out_len, out)?, cache))
    }

    pub fn backward(&self, cache: &PoolCache, grad_out: &Signal) -> NnResult<Signal> {
        let mut dx = Tensor2::zeros(cache.batch * cache.in_len, cache.channels);
        let dst = dx.as_mut_slice();
        for (&idx, g) in cache.argmax.iter().zip(grad_out.data.as_slice()) {
            dst[idx] += g;
        }
        Signal::new(cache.batch, cache.in_len, dx)
    }

    /// Pools a `channels × length` input; returns the output and, per output
    /// element, the winning position along the sequence.
    pub fn apply(&self, input: &Tensor2) -> NnResult<(Tensor2, Vec<usize>)> {
        let (out, cache) = self.forward(&Signal::from_channels_by_length(input))?;
        let c = input.rows();
        let out_cl = out.to_channels_by_length();
        let out_len = out_cl.cols();
        let mut positions = vec![0; c * out_len];
        for t in 0..out_len {
            for ch in 0..c {
                positions[ch * out_len + t] = cache.argmax[t * c + ch] / c;
            }
        }
        Ok((out_cl, positions))
    }
}

/// Fully connected layer, `out = x·W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = params.add_glorot(format!("{name}.weight"), in_dim, out_dim, in_dim, out_dim, rng);
        let bias = params.add_zeros(format!("{name}.bias"), 1, out_dim);
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor2) -> NnResult<Tensor2> {
        dense_forward(x, params.value(self.weight), params.value(self.bias))
    }

    /// `x` is the input seen by the matching forward call.
    pub fn backward(
        &self,
        params: &mut ParamSet,
        x: &Tensor2,
        grad_out: &Tensor2,
        want_input_grad: bool,
    ) -> NnResult<Option<Tensor2>> {
        let dw = x.matmul_tn(grad_out)?;
        params.accumulate(self.weight, dw.as_slice());
        params.accumulate(self.bias, &grad_out.col_sums());
        if want_input_grad {
            Ok(Some(grad_out.matmul_nt(params.value(self.weight))?))
        } else {
            Ok(None)
        }
    }
}

/// `input · weight + bias`, bias broadcast over rows.
pub fn dense_forward(input: &Tensor2, weight: &Tensor2, bias: &Tensor2) -> NnResult<Tensor2> {
    if bias.len() != weight.cols() {
        return Err(NnError::shape(
            "dense",
            format!("bias of {} for {} outputs", bias.len(), weight.cols()),
        ));
    }
    let mut out = input.matmul(weight)?;
    let b = bias.as_slice();
    for r in 0..out.rows() {
        for (o, v) in out.row_mut(r).iter_mut().zip(b) {
            *o += v;
        }
    }
    out.ensure_finite("dense")?;
    Ok(out)
}

pub fn relu(x: &Tensor2) -> Tensor2 {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU given its forward output.
pub fn relu_backward(output: &Tensor2, grad_out: &Tensor2) -> Tensor2 {
    let data = output
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
        .collect();
    Tensor2::from_vec(output.rows(), output.cols(), data).expect("same shape")
}

/// Per-element scale factors applied by a dropout call (absent at inference).
#[derive(Clone, Debug, Default)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn backward(&self, grad_out: &Tensor2) -> Tensor2 {
        match &self.0 {
            None => grad_out.clone(),
            Some(scale) => {
                let data = grad_out
                    .as_slice()
                    .iter()
                    .zip(scale)
                    .map(|(g, s)| g * s)
                    .collect();
                Tensor2::from_vec(grad_out.rows(), grad_out.cols(), data).expect("same shape")
            }
        }
    }
}

/// Inverted dropout: in training, zero each element with probability `rate`
/// and scale survivors by `1 / (1 - rate)`; identity otherwise.
pub fn dropout<R: RngCore + ?Sized>(
    input: &Tensor2,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> NnResult<(Tensor2, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), DropoutMask(None)));
    }
    let keep = 1.0 / (1.0 - rate);
    let scale: Vec<f64> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = input
        .as_slice()
        .iter()
        .zip(&scale)
        .map(|(v, s)| v * s)
        .collect();
    let out = Tensor2::from_vec(input.rows(), input.cols(), data)?;
    Ok((out, DropoutMask(Some(scale))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn single_channel_conv(kernel: &[f64]) -> (ParamSet, Conv1d) {
        let mut params = ParamSet::new();
        let mut rng = crate::rng::SeededRng::seed_from_u64(0);
        let conv = Conv1d::new(&mut params, "c", 1, 1, kernel.len(), &mut rng);
        for (j, &k) in kernel.iter().enumerate() {
            conv.set_kernel(&mut params, 0, 0, j, k);
        }
        (params, conv)
    }

    /// out[o][t] = b[o] + Σ_c Σ_j w[o][c][j] · x[c][t + j]
    fn direct_conv(conv: &Conv1d, params: &ParamSet, x: &Tensor2) -> Tensor2 {
        let len = x.cols();
        let out_len = len - conv.kernel_size + 1;
        let bias = params.value(conv.bias);
        let mut out = Tensor2::zeros(conv.out_channels, out_len);
        for o in 0..conv.out_channels {
            for t in 0..out_len {
                let mut s = bias.get(0, o);
                for c in 0..conv.in_channels {
                    for j in 0..conv.kernel_size {
                        s += conv.kernel(params, o, c, j) * x.get(c, t + j);
                    }
                }
                out.set(o, t, s);
            }
        }
        out
    }

    #[test]
    fn conv_offset_kernel_picks_sample() {
        let (params, conv) = single_channel_conv(&[1.0, 0.0, 0.0]);
        let x = Tensor2::from_rows(&[[1.0, 2.0, 3.0, 4.0]]).unwrap();
        let y = conv.apply(&params, &x).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn conv_sum_kernel_on_constant() {
        let (params, conv) = single_channel_conv(&[1.0, 1.0, 1.0]);
        let x = Tensor2::filled(1, 5, 1.0);
        let y = conv.apply(&params, &x).unwrap();
        assert_eq!(y.as_slice(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn conv_rejects_short_input() {
        let (params, conv) = single_channel_conv(&[1.0, 1.0, 1.0]);
        let x = Tensor2::filled(1, 2, 1.0);
        assert!(matches!(conv.apply(&params, &x), Err(NnError::Shape { .. })));
    }

    #[test]
    fn conv_two_channel_matches_direct() {
        let mut rng = stream(3, 0, 0);
        let mut params = ParamSet::new();
        let conv = Conv1d::new(&mut params, "c", 2, 3, 3, &mut rng);
        params
            .value_mut(conv.bias)
            .as_mut_slice()
            .copy_from_slice(&[0.1, -0.2, 0.3]);
        let data = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor2::from_vec(2, 8, data).unwrap();
        let fast = conv.apply(&params, &x).unwrap();
        let slow = direct_conv(&conv, &params, &x);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn conv_matches_direct_on_random_shapes(
            cin in 1usize..5, cout in 1usize..5, k in 1usize..5, extra in 0usize..12, seed in any::<u64>()
        ) {
            let mut rng = stream(seed, 0, 0);
            let mut params = ParamSet::new();
            let conv = Conv1d::new(&mut params, "c", cin, cout, k, &mut rng);
            for b in params.value_mut(conv.bias).as_mut_slice() {
                *b = rng.random_range(-1.0..1.0);
            }
            let len = k + extra;
            let data = (0..cin * len).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x = Tensor2::from_vec(cin, len, data).unwrap();
            let fast = conv.apply(&params, &x).unwrap();
            let slow = direct_conv(&conv, &params, &x);
            prop_assert_eq!(fast.shape(), (cout, len - k + 1));
            for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maxpool_examples() {
        let pool = MaxPool1d::default();
        let (y, _) = pool.apply(&Tensor2::from_rows(&[[1.0, 3.0, 2.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(y.as_slice(), &[3.0, 2.0]);

        let (y, arg) = pool.apply(&Tensor2::filled(1, 4, 5.0)).unwrap();
        assert_eq!(y.as_slice(), &[5.0, 5.0]);
        assert_eq!(arg, vec![0, 2]);

        let (y, _) = pool.apply(&Tensor2::filled(1, 7, 1.0)).unwrap();
        assert_eq!(y.cols(), 3);

        assert!(pool.apply(&Tensor2::filled(1, 1, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn maxpool_backward_routes_to_argmax(
            len in 2usize..20, channels in 1usize..4, seed in any::<u64>()
        ) {
            let mut rng = stream(seed, 0, 1);
            let pool = MaxPool1d::default();
            let data = (0..len * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Signal::new(1, len, Tensor2::from_vec(len, channels, data).unwrap()).unwrap();
            let (y, cache) = pool.forward(&x).unwrap();
            let g: Vec<f64> = (0..y.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let gy = Signal::new(1, y.len(), Tensor2::from_vec(y.len(), channels, g.clone()).unwrap()).unwrap();
            let dx = pool.backward(&cache, &gy).unwrap();
            let total_in: f64 = g.iter().sum();
            prop_assert!((dx.data().sum() - total_in).abs() < 1e-12);
            for (i, v) in dx.data().as_slice().iter().enumerate() {
                if !cache.argmax().contains(&i) {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn dense_examples() {
        let x = Tensor2::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap();
        let y = dense_forward(&x, &Tensor2::identity(2), &Tensor2::zeros(1, 2)).unwrap();
        assert_eq!(y, x);

        let b = Tensor2::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        let y = dense_forward(&Tensor2::zeros(2, 4), &Tensor2::zeros(4, 3), &b).unwrap();
        assert_eq!(y.row(0), b.row(0));
        assert_eq!(y.row(1), b.row(0));

        assert!(dense_forward(&x, &Tensor2::zeros(3, 2), &Tensor2::zeros(1, 2)).is_err());
    }

    #[test]
    fn dense_matches_naive_matmul() {
        let mut rng = stream(11, 0, 0);
        let mut rand = |r, c| {
            let d = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor2::from_vec(r, c, d).unwrap()
        };
        let x = rand(3, 4);
        let w = rand(4, 2);
        let b = rand(1, 2);
        let y = dense_forward(&x, &w, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = b.get(0, j);
                for k in 0..4 {
                    s += x.get(i, k) * w.get(k, j);
                }
                assert!((y.get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = stream(0, 0, 0);
        let x = Tensor2::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(dropout(&x, 0.0, &mut rng, true).unwrap().0, x);
        assert_eq!(dropout(&x, 0.7, &mut rng, false).unwrap().0, x);
        assert!(matches!(dropout(&x, 1.0, &mut rng, true), Err(NnError::InvalidRate(_))));
        assert!(dropout(&x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_zero_fraction() {
        let mut rng = stream(5, 0, 0);
        let x = Tensor2::filled(100, 100, 1.0);
        let (y, _) = dropout(&x, 0.5, &mut rng, true).unwrap();
        let zeros = y.as_slice().iter().filter(|&&v| v == 0.0).count() as f64 / 10_000.0;
        assert!((zeros - 0.5).abs() < 0.02, "zero fraction {zeros}");
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = stream(9, 0, 0);
        let x = Tensor2::from_rows(&[[1.0, -2.0, 0.5, 4.0]]).unwrap();
        let mut mean = [0.0; 4];
        let copies = 10_000;
        for _ in 0..copies {
            let (y, _) = dropout(&x, 0.2, &mut rng, true).unwrap();
            for (m, v) in mean.iter_mut().zip(y.as_slice()) {
                *m += v / copies as f64;
            }
        }
        for (m, v) in mean.iter().zip(x.as_slice()) {
            assert!((m - v).abs() <= 0.02 * v.abs(), "{m} vs {v}");
        }
    }
}
