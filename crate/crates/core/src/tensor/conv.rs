//! 2D convolution (cross-correlation semantics, no kernel flip) with full
//! backward pass. The hot path lowers each image to an im2col matrix and runs
//! a dense GEMM; the naive nested-loop definition lives in the tests as the
//! reference oracle.

use super::{Result, Tensor, TensorError};

/// Convolution weights and bias. Weight layout is (out_ch, in_ch, kh, kw).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.shape().len() != 4 {
            return Err(TensorError::Invalid(format!(
                "conv weights must be rank 4 (out, in, kh, kw), got {:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [weights.dim(0)] {
            return Err(TensorError::ShapeMismatch {
                context: "conv bias".into(),
                expected: vec![weights.dim(0)],
                got: bias.shape().to_vec(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.dim(2), self.weights.dim(3))
    }
}

/// Gradients of a convolution w.r.t. its input, weights and bias. Shapes equal
/// the corresponding primals.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Output spatial extent: floor((extent + 2*padding - kernel) / stride) + 1,
/// or None when the kernel does not fit.
pub fn conv_output_size(
    extent: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let padded = extent + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct ConvGeom {
    batch: usize,
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
}

fn geometry(
    input: &Tensor,
    params: &ConvParams,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    if input.shape().len() != 4 {
        return Err(TensorError::Invalid(format!(
            "conv input must be NCHW, got shape {:?}",
            input.shape()
        )));
    }
    if stride == 0 {
        return Err(TensorError::Invalid("conv stride must be positive".into()));
    }
    let (kh, kw) = params.kernel();
    if input.dim(1) != params.in_channels() {
        return Err(TensorError::ShapeMismatch {
            context: "conv input channels".into(),
            expected: vec![params.in_channels()],
            got: vec![input.dim(1)],
        });
    }
    let out_h = conv_output_size(input.dim(2), kh, stride, padding);
    let out_w = conv_output_size(input.dim(3), kw, stride, padding);
    let (out_h, out_w) = match (out_h, out_w) {
        (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
        _ => {
            return Err(TensorError::Invalid(format!(
                "conv kernel {}x{} with stride {} pad {} yields empty output for input {}x{}",
                kh,
                kw,
                stride,
                padding,
                input.dim(2),
                input.dim(3)
            )))
        }
    };
    Ok(ConvGeom {
        batch: input.dim(0),
        in_ch: input.dim(1),
        in_h: input.dim(2),
        in_w: input.dim(3),
        out_ch: params.out_channels(),
        kh,
        kw,
        out_h,
        out_w,
    })
}

/// Lowers one image (CHW slice) into the im2col matrix: K = in_ch*kh*kw rows,
/// N = out_h*out_w columns, row-major. Out-of-bounds taps are zero.
fn im2col(image: &[f64], g: &ConvGeom, stride: usize, padding: usize, cols: &mut [f64]) {
    let n = g.out_h * g.out_w;
    debug_assert_eq!(cols.len(), g.in_ch * g.kh * g.kw * n);
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        dst_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, out) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        *out = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds an im2col-shaped gradient back onto the input image.
fn col2im_add(cols: &[f64], g: &ConvGeom, stride: usize, padding: usize, image: &mut [f64]) {
    let n = g.out_h * g.out_w;
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let src_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in src_row.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// C (m x n, row-major) = A (m x k) * B (k x n) + beta * C, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(
    input: &Tensor,
    params: &ConvParams,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = geometry(input, params, stride, padding)?;
    let n = g.out_h * g.out_w;
    let k = g.in_ch * g.kh * g.kw;
    let mut cols = vec![0.0; k * n];
    let mut out = Tensor::zeros(&[g.batch, g.out_ch, g.out_h, g.out_w]);
    let image_len = g.in_ch * g.in_h * g.in_w;
    for b in 0..g.batch {
        let image = &input.data()[b * image_len..(b + 1) * image_len];
        im2col(image, &g, stride, padding, &mut cols);
        let dst = &mut out.data_mut()[b * g.out_ch * n..(b + 1) * g.out_ch * n];
        gemm(
            g.out_ch,
            k,
            n,
            params.weights.data(),
            k as isize,
            1,
            &cols,
            n as isize,
            1,
            0.0,
            dst,
        );
        for c in 0..g.out_ch {
            let bias = params.bias.data()[c];
            for v in &mut dst[c * n..(c + 1) * n] {
                *v += bias;
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward(
    input: &Tensor,
    params: &ConvParams,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let g = geometry(input, params, stride, padding)?;
    let expected = [g.batch, g.out_ch, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(TensorError::ShapeMismatch {
            context: "conv grad_out".into(),
            expected: expected.to_vec(),
            got: grad_out.shape().to_vec(),
        });
    }
    let n = g.out_h * g.out_w;
    let k = g.in_ch * g.kh * g.kw;
    let image_len = g.in_ch * g.in_h * g.in_w;

    let mut grad_input = Tensor::zeros(&[g.batch, g.in_ch, g.in_h, g.in_w]);
    let mut grad_weights = Tensor::zeros(params.weights.shape());
    let mut grad_bias = Tensor::zeros(&[g.out_ch]);
    let mut cols = vec![0.0; k * n];
    let mut grad_cols = vec![0.0; k * n];

    for b in 0..g.batch {
        let image = &input.data()[b * image_len..(b + 1) * image_len];
        let gout = &grad_out.data()[b * g.out_ch * n..(b + 1) * g.out_ch * n];

        im2col(image, &g, stride, padding, &mut cols);
        // dW (out_ch x K) += dY (out_ch x N) * cols^T (N x K)
        gemm(
            g.out_ch,
            n,
            k,
            gout,
            n as isize,
            1,
            &cols,
            1,
            n as isize,
            if b == 0 { 0.0 } else { 1.0 },
            grad_weights.data_mut(),
        );
        // dCols (K x N) = W^T (K x out_ch) * dY (out_ch x N)
        gemm(
            k,
            g.out_ch,
            n,
            params.weights.data(),
            1,
            k as isize,
            gout,
            n as isize,
            1,
            0.0,
            &mut grad_cols,
        );
        let gin = &mut grad_input.data_mut()[b * image_len..(b + 1) * image_len];
        col2im_add(&grad_cols, &g, stride, padding, gin);

        for c in 0..g.out_ch {
            grad_bias.data_mut()[c] += gout[c * n..(c + 1) * n].iter().sum::<f64>();
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weights: grad_weights,
        bias: grad_bias,
    })
}
