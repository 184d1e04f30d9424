//! Grouped, dilated 2-D convolution with stride 1.
//!
//! Each (item, group) pair is lowered to a matrix product over an im2col
//! buffer. Work is split across batch items only; weight gradients are
//! reduced over items in index order so results do not depend on the
//! thread count.

use rayon::prelude::*;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Geometry of a stride-1 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub groups: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Dense, undilated convolution with extent-preserving padding.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            groups: 1,
            dilation: 1,
            padding: (kernel - 1) / 2,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// Sets the dilation and recomputes the same-size padding `d (K - 1) / 2`.
    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self.padding = dilation * (self.kernel - 1) / 2;
        self
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_per_group(),
            self.kernel,
            self.kernel,
        ]
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    /// Span of the dilated kernel, `(K - 1) d + 1`.
    pub fn effective_extent(&self) -> usize {
        (self.kernel - 1) * self.dilation + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 {
            return Err(Error::Config(format!("degenerate conv {self:?}")));
        }
        if self.groups == 0 || self.dilation == 0 {
            return Err(Error::Config(format!("zero groups or dilation in {self:?}")));
        }
        if self.in_channels % self.groups != 0 {
            return Err(Error::Divisibility {
                what: "conv in_channels".into(),
                value: self.in_channels,
                divisor: self.groups,
            });
        }
        if self.out_channels % self.groups != 0 {
            return Err(Error::Divisibility {
                what: "conv out_channels".into(),
                value: self.out_channels,
                divisor: self.groups,
            });
        }
        Ok(())
    }

    /// Output spatial extent for an input extent.
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        let eff = self.effective_extent();
        if eff > padded {
            return Err(Error::shape(
                "conv2d",
                format!("kernel extent {eff} exceeds padded input {padded}"),
            ));
        }
        Ok(padded - eff + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.padding == 0
    }
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

fn geometry<T: Scalar>(x: &Tensor<T>, spec: &ConvSpec, weight: &Tensor<T>) -> Result<Geometry> {
    spec.validate()?;
    let [n, c, h, w] = x.dims4()?;
    if c != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, spec expects {}", spec.in_channels),
        ));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight shape {:?}, expected {:?}",
                weight.shape(),
                spec.weight_shape()
            ),
        ));
    }
    let ho = spec.output_extent(h)?;
    let wo = spec.output_extent(w)?;
    Ok(Geometry { n, h, w, ho, wo })
}

/// Fills `cols` (rows = `cin_g * K * K`, cols = `ho * wo`) for one group of one item.
fn im2col<T: Scalar>(src: &[T], g: &Geometry, spec: &ConvSpec, cols: &mut [T]) {
    let k = spec.kernel;
    let (d, p) = (spec.dilation as isize, spec.padding as isize);
    let plane = g.ho * g.wo;
    for ci in 0..spec.in_per_group() {
        let chan = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * plane..][..plane];
                let dy = ky as isize * d - p;
                let dx = kx as isize * d - p;
                for oy in 0..g.ho {
                    let iy = oy as isize + dy;
                    let out = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let line = &chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = ox as isize + dx;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            line[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back onto one group's input planes.
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, spec: &ConvSpec, dst: &mut [T]) {
    let k = spec.kernel;
    let (d, p) = (spec.dilation as isize, spec.padding as isize);
    let plane = g.ho * g.wo;
    for ci in 0..spec.in_per_group() {
        let chan = &mut dst[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * plane..][..plane];
                let dy = ky as isize * d - p;
                let dx = kx as isize * d - p;
                for oy in 0..g.ho {
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = ox as isize + dx;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] = line[ix as usize] + row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c[m x n] = a[m x k] * b[k x n]` (+ `c` when `accumulate`), all row-major.
fn matmul<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: extents checked above; buffers are distinct slices.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `c[m x n] = a^T b` where `a` is stored `k x m` row-major.
fn matmul_at<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    // SAFETY: as in `matmul`, with `a` read transposed through its strides.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            T::zero(),
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `c[m x n] += a b^T` where `b` is stored `n x k` row-major.
fn matmul_bt_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    // SAFETY: as in `matmul`, with `b` read transposed through its strides.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            T::one(),
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Stride-1 grouped dilated convolution.
///
/// `x` is `[N,] C_in x H x W`, `weight` is `C_out x C_in/G x K x K`, `bias`
/// (optional) has `C_out` entries. The output keeps the rank of `x`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let g = geometry(x, spec, weight)?;
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} entries, expected {}", b.len(), spec.out_channels),
            ));
        }
    }
    let (cin_g, cout_g) = (spec.in_per_group(), spec.out_per_group());
    let kk = spec.kernel * spec.kernel;
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let item_in = spec.in_channels * plane_in;
    let item_out = spec.out_channels * plane_out;
    let wrow = cin_g * kk;

    let mut out = vec![T::zero(); g.n * item_out];
    out.par_chunks_mut(item_out)
        .enumerate()
        .for_each(|(ni, dst)| {
            let src = &x.data()[ni * item_in..(ni + 1) * item_in];
            let mut cols = if spec.is_pointwise() {
                Vec::new()
            } else {
                vec![T::zero(); wrow * plane_out]
            };
            for grp in 0..spec.groups {
                let gsrc = &src[grp * cin_g * plane_in..(grp + 1) * cin_g * plane_in];
                let b_mat: &[T] = if spec.is_pointwise() {
                    gsrc
                } else {
                    im2col(gsrc, &g, spec, &mut cols);
                    &cols
                };
                let w_mat = &weight.data()[grp * cout_g * wrow..(grp + 1) * cout_g * wrow];
                let gdst = &mut dst[grp * cout_g * plane_out..(grp + 1) * cout_g * plane_out];
                matmul(cout_g, wrow, plane_out, w_mat, b_mat, gdst, false);
            }
            if let Some(b) = bias {
                for (o, chan) in dst.chunks_mut(plane_out).enumerate() {
                    let bo = b.data()[o];
                    chan.iter_mut().for_each(|v| *v = *v + bo);
                }
            }
        });

    let shape: Vec<usize> = if x.rank() == 3 {
        vec![spec.out_channels, g.ho, g.wo]
    } else {
        vec![g.n, spec.out_channels, g.ho, g.wo]
    };
    let t = Tensor::from_vec(&shape, out)?;
    t.ensure_finite("conv2d")?;
    Ok(t)
}

/// Gradients of [`conv2d`] with respect to its operands.
#[derive(Debug)]
pub struct ConvGrads<T: Scalar> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Backward pass of [`conv2d`] given the output gradient `dy`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> Result<ConvGrads<T>> {
    let g = geometry(x, spec, weight)?;
    let (cin_g, cout_g) = (spec.in_per_group(), spec.out_per_group());
    let kk = spec.kernel * spec.kernel;
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let item_in = spec.in_channels * plane_in;
    let item_out = spec.out_channels * plane_out;
    let wrow = cin_g * kk;
    if dy.len() != g.n * item_out {
        return Err(Error::shape("conv2d_backward", "output gradient size"));
    }

    let bias = need_bias.then(|| {
        let mut db = vec![T::zero(); spec.out_channels];
        for ni in 0..g.n {
            for (o, acc) in db.iter_mut().enumerate() {
                let chan = &dy.data()[ni * item_out + o * plane_out..][..plane_out];
                *acc = chan.iter().fold(*acc, |s, &v| s + v);
            }
        }
        Tensor::from_vec(&[spec.out_channels], db).expect("bias gradient shape")
    });

    // Per-item partial weight gradients and input gradients.
    let per_item: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..g.n)
        .into_par_iter()
        .map(|ni| {
            let src = &x.data()[ni * item_in..(ni + 1) * item_in];
            let gy = &dy.data()[ni * item_out..(ni + 1) * item_out];
            let mut dw = need_weight.then(|| vec![T::zero(); weight.len()]);
            let mut dx = need_input.then(|| vec![T::zero(); item_in]);
            let mut cols = vec![T::zero(); wrow * plane_out];
            for grp in 0..spec.groups {
                let gsrc = &src[grp * cin_g * plane_in..(grp + 1) * cin_g * plane_in];
                let ggy = &gy[grp * cout_g * plane_out..(grp + 1) * cout_g * plane_out];
                if let Some(dw) = dw.as_mut() {
                    let b_mat: &[T] = if spec.is_pointwise() {
                        gsrc
                    } else {
                        im2col(gsrc, &g, spec, &mut cols);
                        &cols
                    };
                    let gdw = &mut dw[grp * cout_g * wrow..(grp + 1) * cout_g * wrow];
                    matmul_bt_acc(cout_g, plane_out, wrow, ggy, b_mat, gdw);
                }
                if let Some(dx) = dx.as_mut() {
                    let w_mat = &weight.data()[grp * cout_g * wrow..(grp + 1) * cout_g * wrow];
                    let gdx = &mut dx[grp * cin_g * plane_in..(grp + 1) * cin_g * plane_in];
                    if spec.is_pointwise() {
                        matmul_at(wrow, cout_g, plane_out, w_mat, ggy, gdx);
                    } else {
                        matmul_at(wrow, cout_g, plane_out, w_mat, ggy, &mut cols);
                        col2im(&cols, &g, spec, gdx);
                    }
                }
            }
            (dw, dx)
        })
        .collect();

    let weight_grad = need_weight.then(|| {
        let mut acc = vec![T::zero(); weight.len()];
        for (dw, _) in &per_item {
            for (a, &v) in acc.iter_mut().zip(dw.as_ref().expect("weight grad")) {
                *a = *a + v;
            }
        }
        Tensor::from_vec(weight.shape(), acc).expect("weight gradient shape")
    });

    let input_grad = if need_input {
        let mut buf = Vec::with_capacity(g.n * item_in);
        for (_, dx) in per_item {
            buf.extend(dx.expect("input grad"));
        }
        Some(Tensor::from_vec(x.shape(), buf)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_window_sums() {
        let x = Tensor::<f64>::ones(&[1, 3, 3]);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &ConvSpec::new(1, 1, 3), &w, None).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn dilation_sets_same_padding() {
        let s = ConvSpec::new(2, 1, 3).with_dilation(3);
        assert_eq!(s.padding, 3);
        assert_eq!(s.effective_extent(), 7);
        assert_eq!(s.output_extent(7).unwrap(), 7);
    }

    #[test]
    fn rejects_indivisible_groups() {
        let s = ConvSpec::new(6, 4, 3).with_groups(4);
        assert!(matches!(s.validate(), Err(Error::Divisibility { .. })));
    }

    #[test]
    fn rejects_weight_shape_mismatch() {
        let x = Tensor::<f32>::zeros(&[4, 5, 5]);
        let s = ConvSpec::new(4, 4, 3).with_groups(2);
        let w = Tensor::<f32>::zeros(&[4, 4, 3, 3]);
        assert!(conv2d(&x, &s, &w, None).is_err());
    }

    #[test]
    fn bias_broadcasts_per_channel() {
        let x = Tensor::<f32>::zeros(&[2, 2, 4, 4]);
        let s = ConvSpec::new(2, 3, 1);
        let w = Tensor::<f32>::zeros(&[3, 2, 1, 1]);
        let b = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let y = conv2d(&x, &s, &w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[2, 3, 4, 4]);
        assert!(y.data()[16..32].iter().all(|&v| v == -2.0));
    }
}
