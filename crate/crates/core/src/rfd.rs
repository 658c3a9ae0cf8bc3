//! Receptive field diversity (RFD) block, modeled structurally.
//!
//! Four parallel paths each reduce `C` input channels to `C/4` with a 1x1
//! convolution and then apply a body kernel of 3x1, 1x3, 3x3 or 5x5. The
//! path outputs are concatenated in that order back to `C` channels and
//! summed with the untouched input. Padding is `(k-1)/2` per axis so every
//! convolution preserves spatial size.
//!
//! No activations or normalization are modeled; the forward pass is the
//! linear map implied by the dataflow.

use serde::Serialize;

use crate::{Error, Result};

/// Smallest spatial side accepted, so the 5x5 kernel never sees more
/// padding than data.
pub const MIN_SPATIAL: usize = 5;

/// Body kernels `(kh, kw)` in concatenation order.
pub const BODY_KERNELS: [(usize, usize); 4] = [(3, 1), (1, 3), (3, 3), (5, 5)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConvSpec {
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvSpec {
    /// Shape-preserving convolution; kernel sides must be odd.
    pub fn same(kh: usize, kw: usize, c_in: usize, c_out: usize) -> Result<Self> {
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(Error::validation(format!("kernel {kh}x{kw} must have odd sides")));
        }
        if c_in == 0 || c_out == 0 {
            return Err(Error::validation("convolution needs at least one channel in and out"));
        }
        Ok(ConvSpec {
            kh,
            kw,
            c_in,
            c_out,
            pad_h: (kh - 1) / 2,
            pad_w: (kw - 1) / 2,
        })
    }

    pub fn weight_count(&self) -> usize {
        self.kh * self.kw * self.c_in * self.c_out
    }

    pub fn param_count(&self, include_bias: bool) -> usize {
        self.weight_count() + if include_bias { self.c_out } else { 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RfdPath {
    pub reduce: ConvSpec,
    pub body: ConvSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RfdSpec {
    pub channels: usize,
    pub paths: [RfdPath; 4],
}

pub fn rfd_spec(channels: usize) -> Result<RfdSpec> {
    if channels == 0 || !channels.is_multiple_of(4) {
        return Err(Error::validation(format!(
            "RFD channels must be a positive multiple of 4, got {channels}"
        )));
    }
    let q = channels / 4;
    let mut paths = Vec::with_capacity(4);
    for (kh, kw) in BODY_KERNELS {
        paths.push(RfdPath {
            reduce: ConvSpec::same(1, 1, channels, q)?,
            body: ConvSpec::same(kh, kw, q, q)?,
        });
    }
    Ok(RfdSpec {
        channels,
        paths: paths.try_into().expect("four paths"),
    })
}

impl RfdSpec {
    pub fn convs(&self) -> impl Iterator<Item = &ConvSpec> {
        self.paths.iter().flat_map(|p| [&p.reduce, &p.body])
    }

    pub fn concat_channels(&self) -> usize {
        self.paths.iter().map(|p| p.body.c_out).sum()
    }
}

pub fn rfd_output_shape(spec: &RfdSpec, h: usize, w: usize) -> Result<(usize, usize, usize)> {
    if h < MIN_SPATIAL || w < MIN_SPATIAL {
        return Err(Error::validation(format!(
            "spatial size {h}x{w} is below the {MIN_SPATIAL}x{MIN_SPATIAL} minimum"
        )));
    }
    // each conv is shape-preserving; the shortcut needs the concat to match C
    debug_assert_eq!(spec.concat_channels(), spec.channels);
    Ok((spec.channels, h, w))
}

/// Parameter count of the block, summed conv by conv.
pub fn rfd_param_count(channels: usize, include_bias: bool) -> Result<usize> {
    Ok(rfd_spec(channels)?.convs().map(|c| c.param_count(include_bias)).sum())
}

/// Receptive fields `(rf_h, rf_w)` of the four paths followed by the
/// shortcut; stacked stride-1 convs compose as `1 + sum(k - 1)` per axis.
pub fn rfd_receptive_fields(spec: &RfdSpec) -> Vec<(usize, usize)> {
    let compose = |convs: &[&ConvSpec]| {
        (
            1 + convs.iter().map(|c| c.kh - 1).sum::<usize>(),
            1 + convs.iter().map(|c| c.kw - 1).sum::<usize>(),
        )
    };
    let mut out: Vec<(usize, usize)> = spec.paths.iter().map(|p| compose(&[&p.reduce, &p.body])).collect();
    out.push(compose(&[]));
    out
}

/// Dense `C x H x W` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor3 {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::validation(format!(
                "tensor data has {} values, expected {c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Tensor3 { c, h, w, data })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.h + y) * self.w + x]
    }
}

/// Conv weights laid out `[c_out][c_in][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub spec: ConvSpec,
    pub data: Vec<f64>,
}

impl ConvWeights {
    pub fn zeros(spec: ConvSpec) -> Self {
        ConvWeights {
            spec,
            data: vec![0.0; spec.weight_count()],
        }
    }

    #[inline]
    fn index(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.spec.c_in + ci) * self.spec.kh + ky) * self.spec.kw + kx
    }

    pub fn get(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        self.data[self.index(co, ci, ky, kx)]
    }

    pub fn set(&mut self, co: usize, ci: usize, ky: usize, kx: usize, v: f64) {
        let i = self.index(co, ci, ky, kx);
        self.data[i] = v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathWeights {
    pub reduce: ConvWeights,
    pub body: ConvWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfdWeights {
    pub paths: Vec<PathWeights>,
}

impl RfdWeights {
    pub fn zeros(spec: &RfdSpec) -> Self {
        RfdWeights {
            paths: spec
                .paths
                .iter()
                .map(|p| PathWeights {
                    reduce: ConvWeights::zeros(p.reduce),
                    body: ConvWeights::zeros(p.body),
                })
                .collect(),
        }
    }

    /// Fills weights from `f(path, is_body, flat_index)`.
    pub fn from_fn(spec: &RfdSpec, mut f: impl FnMut(usize, bool, usize) -> f64) -> Self {
        let mut w = RfdWeights::zeros(spec);
        for (pi, p) in w.paths.iter_mut().enumerate() {
            for (i, v) in p.reduce.data.iter_mut().enumerate() {
                *v = f(pi, false, i);
            }
            for (i, v) in p.body.data.iter_mut().enumerate() {
                *v = f(pi, true, i);
            }
        }
        w
    }
}

/// Zero-padded, stride-1 convolution. Accumulates in `(ci, ky, kx)` order.
pub fn conv2d_naive(input: &Tensor3, weights: &ConvWeights) -> Result<Tensor3> {
    let s = weights.spec;
    if input.c != s.c_in {
        return Err(Error::validation(format!(
            "conv expects {} input channels, got {}",
            s.c_in, input.c
        )));
    }
    if weights.data.len() != s.weight_count() {
        return Err(Error::validation("conv weight buffer does not match its spec"));
    }
    let (h, w) = (input.h, input.w);
    let mut out = Tensor3::zeros(s.c_out, h, w);
    for co in 0..s.c_out {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ci in 0..s.c_in {
                    for ky in 0..s.kh {
                        let iy = y as isize + ky as isize - s.pad_h as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..s.kw {
                            let ix = x as isize + kx as isize - s.pad_w as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += weights.get(co, ci, ky, kx) * input.at(ci, iy as usize, ix as usize);
                        }
                    }
                }
                *out.at_mut(co, y, x) = acc;
            }
        }
    }
    Ok(out)
}

/// Linear forward: per path 1x1 reduce then body conv, concatenate in path
/// order, add the input.
pub fn rfd_forward_naive(spec: &RfdSpec, input: &Tensor3, weights: &RfdWeights) -> Result<Tensor3> {
    if input.c != spec.channels {
        return Err(Error::validation(format!(
            "input has {} channels, block expects {}",
            input.c, spec.channels
        )));
    }
    rfd_output_shape(spec, input.h, input.w)?;
    if weights.paths.len() != 4 {
        return Err(Error::validation("RFD weights need exactly four paths"));
    }
    let mut out = input.clone();
    let mut channel = 0;
    for (path, pw) in spec.paths.iter().zip(&weights.paths) {
        if pw.reduce.spec != path.reduce || pw.body.spec != path.body {
            return Err(Error::validation("RFD weights do not match the block spec"));
        }
        let reduced = conv2d_naive(input, &pw.reduce)?;
        let body = conv2d_naive(&reduced, &pw.body)?;
        for c in 0..body.c {
            for y in 0..body.h {
                for x in 0..body.w {
                    *out.at_mut(channel + c, y, x) += body.at(c, y, x);
                }
            }
        }
        channel += body.c;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spec_examples() {
        let s = rfd_spec(64).unwrap();
        for (p, (kh, kw)) in s.paths.iter().zip(BODY_KERNELS) {
            assert_eq!((p.reduce.kh, p.reduce.kw, p.reduce.c_in, p.reduce.c_out), (1, 1, 64, 16));
            assert_eq!((p.body.kh, p.body.kw, p.body.c_in, p.body.c_out), (kh, kw, 16, 16));
            assert_eq!((p.body.pad_h, p.body.pad_w), ((kh - 1) / 2, (kw - 1) / 2));
        }
        let s = rfd_spec(4).unwrap();
        assert!(s.paths.iter().all(|p| p.body.c_out == 1));
        assert!(rfd_spec(6).is_err());
        assert!(rfd_spec(0).is_err());
        assert!(ConvSpec::same(2, 1, 1, 1).is_err());
    }

    #[test]
    fn output_shapes() {
        let s = rfd_spec(64).unwrap();
        assert_eq!(rfd_output_shape(&s, 32, 32).unwrap(), (64, 32, 32));
        assert_eq!(rfd_output_shape(&s, 5, 5).unwrap(), (64, 5, 5));
        assert!(rfd_output_shape(&s, 4, 4).is_err());
        assert!(rfd_output_shape(&s, 5, 4).is_err());
    }

    #[test]
    fn param_counts() {
        assert_eq!(rfd_param_count(64, false).unwrap(), 14336);
        assert_eq!(rfd_param_count(4, false).unwrap(), 56);
        assert_eq!(rfd_param_count(64, true).unwrap(), 14464);
        assert!(rfd_param_count(10, false).is_err());
    }

    #[test]
    fn receptive_fields() {
        let rf = rfd_receptive_fields(&rfd_spec(8).unwrap());
        assert_eq!(rf, vec![(3, 1), (1, 3), (3, 3), (5, 5), (1, 1)]);
        assert_eq!(rf[0], (rf[1].1, rf[1].0));
    }

    #[test]
    fn zero_weights_identity() {
        let s = rfd_spec(4).unwrap();
        let x = Tensor3::from_vec(4, 6, 6, (0..144).map(|v| v as f64 * 0.5 - 7.0).collect()).unwrap();
        let y = rfd_forward_naive(&s, &x, &RfdWeights::zeros(&s)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn delta_kernel_copies_channel() {
        // 4 channels, 6x6; path 2 (3x3) reduces from channel 1 and applies a
        // centered delta, so output channel 2 gets input channel 1 added
        let s = rfd_spec(4).unwrap();
        let x = Tensor3::from_vec(4, 6, 6, (0..144).map(|v| ((v * 37) % 11) as f64).collect()).unwrap();
        let mut w = RfdWeights::zeros(&s);
        w.paths[2].reduce.set(0, 1, 0, 0, 1.0);
        w.paths[2].body.set(0, 0, 1, 1, 1.0);
        let y = rfd_forward_naive(&s, &x, &w).unwrap();
        for c in 0..4 {
            for yy in 0..6 {
                for xx in 0..6 {
                    let expected = x.at(c, yy, xx) + if c == 2 { x.at(1, yy, xx) } else { 0.0 };
                    assert_eq!(y.at(c, yy, xx), expected);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let s = rfd_spec(8).unwrap();
        let w = RfdWeights::zeros(&s);
        assert!(rfd_forward_naive(&s, &Tensor3::zeros(4, 6, 6), &w).is_err());
        assert!(rfd_forward_naive(&s, &Tensor3::zeros(8, 4, 6), &w).is_err());
        let other = RfdWeights::zeros(&rfd_spec(4).unwrap());
        assert!(rfd_forward_naive(&s, &Tensor3::zeros(8, 6, 6), &other).is_err());
        assert!(Tensor3::from_vec(1, 2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn asymmetric_path_touches_vertical_neighbors_only() {
        let s = rfd_spec(4).unwrap();
        let mut x = Tensor3::zeros(4, 7, 7);
        *x.at_mut(0, 3, 3) = 1.0;
        let w = RfdWeights::from_fn(&s, |p, _, _| if p == 0 { 1.0 } else { 0.0 });
        let y = rfd_forward_naive(&s, &x, &w).unwrap();
        // path 0 is 3x1: response spans rows 2..=4 in column 3 only
        for yy in 0..7 {
            for xx in 0..7 {
                let v = y.at(0, yy, xx) - x.at(0, yy, xx);
                let hit = xx == 3 && (2..=4).contains(&yy);
                assert_eq!(v != 0.0, hit, "({yy},{xx})");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn structure_invariants(q in 1usize..40, h in 5usize..64, w in 5usize..64, bias: bool) {
            let c = 4 * q;
            let s = rfd_spec(c).unwrap();
            prop_assert_eq!(s.concat_channels(), c);
            prop_assert_eq!(rfd_output_shape(&s, h, w).unwrap(), (c, h, w));
            let recount: usize = s.convs().map(|k| k.kh * k.kw * k.c_in * k.c_out + if bias { k.c_out } else { 0 }).sum();
            prop_assert_eq!(rfd_param_count(c, bias).unwrap(), recount);
            let closed = 7 * c * c / 2 + if bias { 2 * c } else { 0 };
            prop_assert_eq!(recount, closed);
        }

        #[test]
        fn forward_is_linear(seed in 0u64..1000, a in -2.0..2.0f64, b in -2.0..2.0f64) {
            let s = rfd_spec(4).unwrap();
            let mut st = crate::rng::substream(seed, 0);
            let mut draw = || crate::rng::unit(&mut st) - 0.5;
            let x = Tensor3::from_vec(4, 6, 5, (0..120).map(|_| draw()).collect()).unwrap();
            let z = Tensor3::from_vec(4, 6, 5, (0..120).map(|_| draw()).collect()).unwrap();
            let w = RfdWeights::from_fn(&s, |_, _, _| draw());
            let mix = Tensor3::from_vec(4, 6, 5, x.data.iter().zip(&z.data).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = rfd_forward_naive(&s, &mix, &w).unwrap();
            let fx = rfd_forward_naive(&s, &x, &w).unwrap();
            let fz = rfd_forward_naive(&s, &z, &w).unwrap();
            for i in 0..lhs.data.len() {
                prop_assert!((lhs.data[i] - (a * fx.data[i] + b * fz.data[i])).abs() < 1e-9);
            }
        }
    }
}
