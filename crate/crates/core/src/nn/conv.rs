//! Stride-1 "same" convolution via im2col + GEMM.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    /// Odd square kernel size; padding is `k / 2` zeros on every side.
    pub k: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Fills `cols` (`cin*k*k` rows of `h*w`) from one `cin x h x w` image.
fn im2col<F: Scalar>(src: &[F], shape: ConvShape, h: usize, w: usize, cols: &mut [F]) {
    let k = shape.k;
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..shape.cin {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad;
                // valid output columns: 0 <= x + dx < w
                let x0 = (-dx).max(0) as usize;
                let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        drow.fill(F::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    drow[..x0].fill(F::zero());
                    drow[x1..].fill(F::zero());
                    let s0 = (x0 as isize + dx) as usize;
                    drow[x0..x1].copy_from_slice(&srow[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into a `cin x h x w` image gradient.
fn col2im<F: Scalar>(cols: &[F], shape: ConvShape, h: usize, w: usize, dst: &mut [F]) {
    let k = shape.k;
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..shape.cin {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x0 as isize + dx) as usize;
                    let prow = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x1 - x0)];
                    for (p, &c) in prow.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *p = *p + c;
                    }
                }
            }
        }
    }
}

fn check<F: Scalar>(x: &Tensor<F>, weight: &[F], shape: ConvShape) -> Result<()> {
    if x.shape().len() != 4 || x.shape()[1] != shape.cin {
        return Err(Error::Shape(format!(
            "convolution expects {} input channels, got tensor {:?}",
            shape.cin,
            x.shape()
        )));
    }
    if shape.k % 2 == 0 || weight.len() != shape.weight_len() {
        return Err(Error::Shape(format!(
            "convolution weight of length {} does not fit {:?}",
            weight.len(),
            shape
        )));
    }
    Ok(())
}

/// Forward convolution of an NCHW batch; weight is `cout x cin x k x k`.
pub fn conv2d<F: Scalar>(
    x: &Tensor<F>,
    weight: &[F],
    bias: &[F],
    shape: ConvShape,
) -> Result<Tensor<F>> {
    check(x, weight, shape)?;
    let (n, _, h, w) = x.dims4();
    let hw = h * w;
    let kk = shape.patch_len();
    let mut out = Tensor::zeros(&[n, shape.cout, h, w]);
    let mut cols = if shape.k == 1 { Vec::new() } else { vec![F::zero(); kk * hw] };
    let in_sz = shape.cin * hw;
    let out_sz = shape.cout * hw;
    for b in 0..n {
        let src = &x.data()[b * in_sz..(b + 1) * in_sz];
        let dst = &mut out.data_mut()[b * out_sz..(b + 1) * out_sz];
        for (co, &bv) in bias.iter().enumerate() {
            dst[co * hw..(co + 1) * hw].fill(bv);
        }
        let rhs: &[F] = if shape.k == 1 {
            src
        } else {
            im2col(src, shape, h, w, &mut cols);
            &cols
        };
        F::gemm(shape.cout, kk, hw, F::one(), weight, false, rhs, false, F::one(), dst);
    }
    Ok(out)
}

/// Backward convolution. Accumulates into `dweight` / `dbias` and returns the
/// input gradient when `want_dx` is set.
pub fn conv2d_backward<F: Scalar>(
    x: &Tensor<F>,
    weight: &[F],
    shape: ConvShape,
    dy: &Tensor<F>,
    dweight: &mut [F],
    dbias: &mut [F],
    want_dx: bool,
) -> Result<Option<Tensor<F>>> {
    check(x, weight, shape)?;
    let (n, _, h, w) = x.dims4();
    if dy.shape() != [n, shape.cout, h, w] {
        return Err(Error::Shape(format!(
            "convolution output gradient {:?} does not match input {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let hw = h * w;
    let kk = shape.patch_len();
    let in_sz = shape.cin * hw;
    let out_sz = shape.cout * hw;
    let mut cols = if shape.k == 1 { Vec::new() } else { vec![F::zero(); kk * hw] };
    let mut dcols = vec![F::zero(); kk * hw];
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    for b in 0..n {
        let src = &x.data()[b * in_sz..(b + 1) * in_sz];
        let g = &dy.data()[b * out_sz..(b + 1) * out_sz];
        for (co, db) in dbias.iter_mut().enumerate() {
            *db = *db + g[co * hw..(co + 1) * hw].iter().copied().sum::<F>();
        }
        let patches: &[F] = if shape.k == 1 {
            src
        } else {
            im2col(src, shape, h, w, &mut cols);
            &cols
        };
        // dW (cout x kk) += dY (cout x hw) * patches^T (hw x kk)
        F::gemm(shape.cout, hw, kk, F::one(), g, false, patches, true, F::one(), dweight);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx.data_mut()[b * in_sz..(b + 1) * in_sz];
            if shape.k == 1 {
                F::gemm(kk, shape.cout, hw, F::one(), weight, true, g, false, F::zero(), dxb);
            } else {
                F::gemm(kk, shape.cout, hw, F::one(), weight, true, g, false, F::zero(), &mut dcols);
                col2im(&dcols, shape, h, w, dxb);
            }
        }
    }
    Ok(dx)
}
