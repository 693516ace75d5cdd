use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Depth-to-space: `(N, C*r*r, H, W)` to `(N, C, H*r, W*r)`.
///
/// Output pixel `(h*r + i, w*r + j)` of channel `c` comes from input channel
/// `c*r*r + i*r + j`.
pub fn pixel_shuffle<F: Scalar>(x: &Tensor<F>, r: usize) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4();
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::Shape(format!(
            "pixel shuffle by {r} needs channels divisible by {}, got {c}",
            r * r
        )));
    }
    let oc = c / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = Tensor::zeros(&[n, oc, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for b in 0..n {
        for co in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let ci = co * r * r + i * r + j;
                    let sbase = ((b * c + ci) * h) * w;
                    let dbase = ((b * oc + co) * oh) * ow;
                    for y in 0..h {
                        let srow = &src[sbase + y * w..sbase + (y + 1) * w];
                        let drow = dbase + (y * r + i) * ow;
                        for (xx, &v) in srow.iter().enumerate() {
                            dst[drow + xx * r + j] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`]; also its exact backward pass.
pub fn pixel_unshuffle<F: Scalar>(y: &Tensor<F>, r: usize) -> Result<Tensor<F>> {
    let (n, c, h, w) = y.dims4();
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::Shape(format!(
            "pixel unshuffle by {r} needs spatial dims divisible by {r}, got {h}x{w}"
        )));
    }
    let (ih, iw) = (h / r, w / r);
    let ic = c * r * r;
    let mut out = Tensor::zeros(&[n, ic, ih, iw]);
    let src = y.data();
    let dst = out.data_mut();
    for b in 0..n {
        for co in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let ci = co * r * r + i * r + j;
                    let dbase = ((b * ic + ci) * ih) * iw;
                    let sbase = ((b * c + co) * h) * w;
                    for yy in 0..ih {
                        let srow = sbase + (yy * r + i) * w;
                        for xx in 0..iw {
                            dst[dbase + yy * iw + xx] = src[srow + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
