use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major n-dimensional array of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Config(format!(
                "array of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a 2-D array.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&0);
        &self.data[i * cols..(i + 1) * cols]
    }
}

/// Dot product with four independent accumulators; the fixed lane order
/// keeps results bit-stable while letting the compiler vectorize.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Location and shape of one dense layer inside a flat parameter vector.
///
/// Weights are stored input-major (`w[k * outputs + o]`) followed by the
/// bias vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
    pub relu: bool,
}

impl LayerSpec {
    pub fn weight_count(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.outputs
    }

    pub fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.weight_count()]
    }

    pub fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.weight_count();
        &params[start..start + self.outputs]
    }

    /// `y = act(x W + b)` for `rows` input rows.
    pub fn forward(&self, params: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let (inp, out) = (self.inputs, self.outputs);
        debug_assert_eq!(x.len(), rows * inp);
        let w = self.weights(params);
        let b = self.bias(params);
        let mut y = vec![0.0; rows * out];
        for r in 0..rows {
            let yr = &mut y[r * out..(r + 1) * out];
            yr.copy_from_slice(b);
            for (k, &xk) in x[r * inp..(r + 1) * inp].iter().enumerate() {
                if xk != 0.0 {
                    axpy(yr, xk, &w[k * out..(k + 1) * out]);
                }
            }
            if self.relu {
                for v in yr.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        y
    }

    /// Backpropagates `dy` (gradient w.r.t. this layer's activated output
    /// `y`) into `grads`, returning the gradient w.r.t. `x` if requested.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        y: &[f64],
        dy: &[f64],
        rows: usize,
        grads: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let (inp, out) = (self.inputs, self.outputs);
        let dz: Vec<f64> = if self.relu {
            dy.iter().zip(y).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect()
        } else {
            dy.to_vec()
        };
        let w = self.weights(params);
        let (gw, gb) = grads[self.offset..self.offset + self.param_count()].split_at_mut(self.weight_count());
        for r in 0..rows {
            let dzr = &dz[r * out..(r + 1) * out];
            for (g, &d) in gb.iter_mut().zip(dzr) {
                *g += d;
            }
            for (k, &xk) in x[r * inp..(r + 1) * inp].iter().enumerate() {
                if xk != 0.0 {
                    axpy(&mut gw[k * out..(k + 1) * out], xk, dzr);
                }
            }
        }
        want_dx.then(|| {
            let mut dx = vec![0.0; rows * inp];
            for r in 0..rows {
                let dzr = &dz[r * out..(r + 1) * out];
                for k in 0..inp {
                    dx[r * inp + k] = dot(&w[k * out..(k + 1) * out], dzr);
                }
            }
            dx
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_array_checks_shape() {
        assert!(DenseArray::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(DenseArray::new(vec![2, 3], vec![0.0; 5]).is_err());
        let a = DenseArray::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn layer_forward_by_hand() {
        // 2 -> 2, W = [[1, -1], [2, 0.5]] input-major, b = [0.5, -3]
        let spec = LayerSpec {
            name: "t",
            inputs: 2,
            outputs: 2,
            offset: 0,
            relu: true,
        };
        let params = [1.0, -1.0, 2.0, 0.5, 0.5, -3.0];
        let y = spec.forward(&params, &[1.0, 2.0], 1);
        // [1 + 4 + 0.5, -1 + 1 - 3] -> relu
        assert_eq!(y, vec![5.5, 0.0]);
        // doubling a positive-path input doubles the weight contribution
        let y2 = spec.forward(&params, &[2.0, 4.0], 1);
        assert_eq!(y2[0] - 0.5, 2.0 * (y[0] - 0.5));
    }
}
