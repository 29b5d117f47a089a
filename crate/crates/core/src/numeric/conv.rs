//! Same-size 2-D convolution over HWC feature maps.
//!
//! Kernels are laid out `[kh, kw, c_in, c_out]`. Padding is zero and
//! symmetric, so odd kernel extents keep the spatial size unchanged.
//! Like most deep-learning frameworks this is technically a
//! cross-correlation; the distinction does not matter for learned kernels.

use super::Tensor;
use crate::error::{shape_err, Result};

struct Dims {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
}

fn check(input: &Tensor, kernel: &Tensor) -> Result<Dims> {
    let (&[h, w, cin], &[kh, kw, kcin, cout]) = (input.shape(), kernel.shape()) else {
        return Err(shape_err(format!(
            "conv2d_same expects input [h, w, c] and kernel [kh, kw, cin, cout], got {:?} and {:?}",
            input.shape(),
            kernel.shape()
        )));
    };
    if kcin != cin {
        return Err(shape_err(format!(
            "kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(shape_err(format!("kernel extents must be odd, got {kh}x{kw}")));
    }
    Ok(Dims {
        h,
        w,
        cin,
        kh,
        kw,
        cout,
    })
}

/// Walks every (output pixel, kernel tap) pair whose input pixel is inside
/// the map, handing the flat input offset, kernel offset and output offset
/// to `f`. Channel loops are left to the caller.
#[inline]
fn for_each_tap(d: &Dims, mut f: impl FnMut(usize, usize, usize)) {
    let ph = (d.kh / 2) as isize;
    let pw = (d.kw / 2) as isize;
    for r in 0..d.h {
        for c in 0..d.w {
            let out_base = (r * d.w + c) * d.cout;
            for i in 0..d.kh {
                let rr = r as isize + i as isize - ph;
                if rr < 0 || rr >= d.h as isize {
                    continue;
                }
                for j in 0..d.kw {
                    let cc = c as isize + j as isize - pw;
                    if cc < 0 || cc >= d.w as isize {
                        continue;
                    }
                    let in_base = (rr as usize * d.w + cc as usize) * d.cin;
                    let k_base = (i * d.kw + j) * d.cin * d.cout;
                    f(in_base, k_base, out_base);
                }
            }
        }
    }
}

/// `out[r, c, o] = Σ input[r + i - ph, c + j - pw, ci] · kernel[i, j, ci, o]`
/// with zero padding.
pub fn conv2d_same(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let d = check(input, kernel)?;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; d.h * d.w * d.cout];
    for_each_tap(&d, |in_base, k_base, out_base| {
        for ci in 0..d.cin {
            let xv = x[in_base + ci];
            if xv == 0.0 {
                continue;
            }
            let krow = &k[k_base + ci * d.cout..k_base + (ci + 1) * d.cout];
            for (o, kv) in out[out_base..out_base + d.cout].iter_mut().zip(krow) {
                *o += xv * kv;
            }
        }
    });
    Tensor::new(vec![d.h, d.w, d.cout], out)
}

/// Adjoint of [`conv2d_same`]: returns `(d_input, d_kernel)` for upstream
/// gradient `d_out`.
pub fn conv2d_same_backward(
    input: &Tensor,
    kernel: &Tensor,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let d = check(input, kernel)?;
    if d_out.shape() != [d.h, d.w, d.cout] {
        return Err(shape_err(format!(
            "upstream gradient has shape {:?}, expected {:?}",
            d_out.shape(),
            [d.h, d.w, d.cout]
        )));
    }
    let x = input.data();
    let k = kernel.data();
    let g = d_out.data();
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    for_each_tap(&d, |in_base, k_base, out_base| {
        let grow = &g[out_base..out_base + d.cout];
        for ci in 0..d.cin {
            let xv = x[in_base + ci];
            let kofs = k_base + ci * d.cout;
            let mut acc = 0.0;
            for (o, gv) in grow.iter().enumerate() {
                acc += gv * k[kofs + o];
                dk[kofs + o] += gv * xv;
            }
            dx[in_base + ci] += acc;
        }
    });
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: explicit zero-padded window sum.
    fn conv_oracle(input: &Tensor, kernel: &Tensor) -> Tensor {
        let [h, w, cin] = input.shape()[..] else { unreachable!() };
        let [kh, kw, _, cout] = kernel.shape()[..] else { unreachable!() };
        let mut out = Tensor::zeros(&[h, w, cout]);
        for r in 0..h as isize {
            for c in 0..w as isize {
                for o in 0..cout {
                    let mut acc = 0.0;
                    for i in 0..kh as isize {
                        for j in 0..kw as isize {
                            let rr = r + i - (kh as isize - 1) / 2;
                            let cc = c + j - (kw as isize - 1) / 2;
                            let inside = rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize;
                            for ci in 0..cin {
                                let xv = if inside {
                                    input.data()[((rr as usize) * w + cc as usize) * cin + ci]
                                } else {
                                    0.0
                                };
                                acc += xv
                                    * kernel.data()
                                        [((i as usize * kw + j as usize) * cin + ci) * cout + o];
                            }
                        }
                    }
                    out.data_mut()[((r as usize) * w + c as usize) * cout + o] = acc;
                }
            }
        }
        out
    }

    fn pseudo_random(shape: &[usize], seed: u64) -> Tensor {
        let n: usize = shape.iter().product();
        let mut s = seed;
        let data = (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = pseudo_random(&[5, 4, 2], 1);
        let k = Tensor::zeros(&[3, 3, 2, 3]);
        let y = conv2d_same(&x, &k).unwrap();
        assert_eq!(y.shape(), &[5, 4, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_kernel_scales() {
        let x = pseudo_random(&[4, 4, 1], 2);
        let k = Tensor::new(vec![1, 1, 1, 1], vec![2.5]).unwrap();
        let y = conv2d_same(&x, &k).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 2.5 * b);
        }
    }

    #[test]
    fn ones_on_ones_counts_window() {
        let x = Tensor::filled(&[3, 3, 1], 1.0);
        let k = Tensor::filled(&[3, 3, 1, 1], 1.0);
        let y = conv2d_same(&x, &k).unwrap();
        assert_eq!(y.data()[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(y.data()[corner], 4.0);
        }
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn matches_direct_window_oracle() {
        let x = pseudo_random(&[6, 5, 3], 3);
        let k = pseudo_random(&[3, 5, 3, 2], 4);
        let y = conv2d_same(&x, &k).unwrap();
        let o = conv_oracle(&x, &k);
        for (a, b) in y.data().iter().zip(o.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_even_or_mismatched_kernels() {
        let x = Tensor::zeros(&[4, 4, 2]);
        assert!(conv2d_same(&x, &Tensor::zeros(&[2, 3, 2, 1])).is_err());
        assert!(conv2d_same(&x, &Tensor::zeros(&[3, 3, 1, 1])).is_err());
        assert!(conv2d_same(&Tensor::zeros(&[4, 4]), &Tensor::zeros(&[3, 3, 1, 1])).is_err());
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x, k), g> = <x, dx(g)> = <k, dk(g)>
        let x = pseudo_random(&[5, 6, 2], 5);
        let k = pseudo_random(&[3, 3, 2, 3], 6);
        let g = pseudo_random(&[5, 6, 3], 7);
        let y = conv2d_same(&x, &k).unwrap();
        let (dx, dk) = conv2d_same_backward(&x, &k, &g).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let via_x: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        let via_k: f64 = k.data().iter().zip(dk.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_k).abs() < 1e-10);
    }
}
