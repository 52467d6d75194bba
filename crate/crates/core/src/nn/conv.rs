//! 2-D convolution (cross-correlation) with size-preserving zero padding,
//! lowered to matrix products through an im2col buffer.

use super::Tensor4;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Square kernel side, 1 or 3.
    pub kernel: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if kernel != 1 && kernel != 3 {
            return Err(Error::Dimension(format!("kernel must be 1x1 or 3x3, got {kernel}x{kernel}")));
        }
        if weight.len() != out_channels * in_channels * kernel * kernel || bias.len() != out_channels {
            return Err(Error::Dimension(format!(
                "conv {in_channels}->{out_channels} k{kernel}: got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias,
        })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self::new(
            in_channels,
            out_channels,
            kernel,
            vec![0.0; out_channels * in_channels * kernel * kernel],
            vec![0.0; out_channels],
        )
        .expect("consistent sizes")
    }

    /// Fan-in-scaled uniform init, bound `1 / sqrt(in * k * k)`.
    pub fn init_uniform(in_channels: usize, out_channels: usize, kernel: usize, mut draw: impl FnMut() -> f64) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let mut conv = Self::zeros(in_channels, out_channels, kernel);
        for w in conv.weight.iter_mut().chain(conv.bias.iter_mut()) {
            *w = (2.0 * draw() - 1.0) * bound;
        }
        conv
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn check_input(&self, input: &Tensor4) -> Result<()> {
        if input.c != self.in_channels {
            return Err(Error::Dimension(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, input.c
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        self.check_input(input)?;
        let (h, w) = (input.h, input.w);
        let hw = h * w;
        let k = self.patch_len();
        let mut out = Tensor4::zeros(input.n, self.out_channels, h, w);
        let mut cols = if self.kernel == 3 { vec![0.0; k * hw] } else { Vec::new() };
        for i in 0..input.n {
            let x = input.example(i);
            let b: &[f64] = if self.kernel == 3 {
                im2col3(x, self.in_channels, h, w, &mut cols);
                &cols
            } else {
                x
            };
            let y = out.example_mut(i);
            for (o, row) in y.chunks_exact_mut(hw).enumerate() {
                row.fill(self.bias[o]);
            }
            // y[o, p] += sum_k W[o, k] * cols[k, p]
            unsafe {
                matrixmultiply::dgemm(
                    self.out_channels, k, hw,
                    1.0,
                    self.weight.as_ptr(), k as isize, 1,
                    b.as_ptr(), hw as isize, 1,
                    1.0,
                    y.as_mut_ptr(), hw as isize, 1,
                );
            }
        }
        Ok(out)
    }

    /// Gradients of the forward map at `input`. The input gradient is
    /// skipped when `need_input_grad` is false.
    pub fn backward(
        &self,
        input: &Tensor4,
        grad_out: &Tensor4,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor4>, ConvGrads)> {
        self.check_input(input)?;
        if grad_out.n != input.n || grad_out.c != self.out_channels || grad_out.h != input.h || grad_out.w != input.w {
            return Err(Error::Dimension(format!(
                "conv backward: grad {:?} does not match input {:?} / {} outputs",
                grad_out.shape(),
                input.shape(),
                self.out_channels
            )));
        }
        let (h, w) = (input.h, input.w);
        let hw = h * w;
        let k = self.patch_len();
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; self.out_channels];
        let mut gin = need_input_grad.then(|| input.zeros_like());
        let mut cols = if self.kernel == 3 { vec![0.0; k * hw] } else { Vec::new() };
        let mut gcols = if self.kernel == 3 && need_input_grad { vec![0.0; k * hw] } else { Vec::new() };

        for i in 0..input.n {
            let g = grad_out.example(i);
            for (o, row) in g.chunks_exact(hw).enumerate() {
                gb[o] += row.iter().sum::<f64>();
            }
            let x = input.example(i);
            let b: &[f64] = if self.kernel == 3 {
                im2col3(x, self.in_channels, h, w, &mut cols);
                &cols
            } else {
                x
            };
            // gW[o, k] += sum_p g[o, p] * cols[k, p]
            unsafe {
                matrixmultiply::dgemm(
                    self.out_channels, hw, k,
                    1.0,
                    g.as_ptr(), hw as isize, 1,
                    b.as_ptr(), 1, hw as isize,
                    1.0,
                    gw.as_mut_ptr(), k as isize, 1,
                );
            }
            if let Some(gin) = gin.as_mut() {
                let gx = gin.example_mut(i);
                let target: &mut [f64] = if self.kernel == 3 { &mut gcols } else { gx };
                // gcols[k, p] = sum_o W[o, k] * g[o, p]
                unsafe {
                    matrixmultiply::dgemm(
                        k, self.out_channels, hw,
                        1.0,
                        self.weight.as_ptr(), 1, k as isize,
                        g.as_ptr(), hw as isize, 1,
                        0.0,
                        target.as_mut_ptr(), hw as isize, 1,
                    );
                }
                if self.kernel == 3 {
                    col2im3(&gcols, self.in_channels, h, w, gin.example_mut(i));
                }
            }
        }
        Ok((gin, ConvGrads { weight: gw, bias: gb }))
    }
}

/// `cols[(c*9 + ky*3 + kx), y*w + x] = x[c, y+ky-1, x+kx-1]` (zero outside).
fn im2col3(x: &[f64], channels: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * hw..((c * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = 0.0;
                            out[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => out.copy_from_slice(src),
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`], accumulating into `gx`.
fn col2im3(cols: &[f64], channels: usize, h: usize, w: usize, gx: &mut [f64]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &mut gx[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * hw..((c * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}
