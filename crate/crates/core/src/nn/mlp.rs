use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"MPRNET1\0";

/// One fully connected layer. `weight` has shape `(inputs, outputs)` so a
/// batch `x` of shape `(batch, inputs)` maps to `x · weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Multilayer perceptron with `tanh` on every hidden layer and a linear
/// output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Gradients with the same layout as the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

/// Cached activations of a batched forward pass, consumed by
/// [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input to each layer; entry `k > 0` is the tanh output of layer `k - 1`.
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardPass {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }
}

/// Which part of the input gradient [`Mlp::backward`] should produce.
#[derive(Debug, Clone)]
pub enum InputGrad {
    None,
    All,
    /// Only the trailing columns starting at this index.
    From(usize),
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut mlp = Mlp::zeros(sizes)?;
        for layer in &mut mlp.layers {
            let limit = (6.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| rng.gen_range(-limit..limit));
        }
        Ok(mlp)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::shape(
                    format!("bias of layer {k}"),
                    layer.outputs(),
                    layer.bias.len(),
                ));
            }
            if let Some(next) = layers.get(k + 1) {
                if next.inputs() != layer.outputs() {
                    return Err(Error::shape(
                        format!("input of layer {}", k + 1),
                        layer.outputs(),
                        next.inputs(),
                    ));
                }
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(Dense::outputs))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Multiply the output layer by `factor`; small output layers keep
    /// freshly initialised heads close to their bias.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.len() - 1;
        self.layers[last].weight *= factor;
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_width() {
            return Err(Error::shape("MLP input", self.input_width(), input.len()));
        }
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.forward_output(x)?.into_raw_vec_and_offset().0)
    }

    /// Batched forward pass that only keeps the output.
    pub fn forward_output(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&input)?;
        let last = self.layers.len() - 1;
        let mut h = input.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut pre = h.dot(&layer.weight);
            pre += &layer.bias;
            if k < last {
                pre.mapv_inplace(f64::tanh);
            }
            h = pre;
        }
        Ok(h)
    }

    /// Batched forward pass keeping the activations needed for backprop.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<ForwardPass> {
        self.check_batch(&input)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = input.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut pre = h.dot(&layer.weight);
            pre += &layer.bias;
            if k < last {
                pre.mapv_inplace(f64::tanh);
            }
            inputs.push(h);
            h = pre;
        }
        Ok(ForwardPass { inputs, output: h })
    }

    /// Backpropagate `upstream` (gradient of a scalar loss w.r.t. the batch
    /// output) through a cached forward pass.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        upstream: ArrayView2<f64>,
        input_grad: InputGrad,
    ) -> Result<(Option<Array2<f64>>, MlpGrads)> {
        if upstream.dim() != pass.output.dim() {
            return Err(Error::shape(
                "upstream gradient width",
                pass.output.ncols(),
                upstream.ncols(),
            ));
        }
        let n = self.layers.len();
        let mut grads: Vec<Dense> = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        let mut input_grad_out = None;
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let x = &pass.inputs[k];
            let dw = x.t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            grads.push(Dense {
                weight: dw,
                bias: db,
            });
            if k > 0 {
                let mut dx = delta.dot(&layer.weight.t());
                // x = tanh(pre) so dpre = dx * (1 - x^2)
                ndarray::Zip::from(&mut dx)
                    .and(x)
                    .for_each(|d, &y| *d *= 1.0 - y * y);
                delta = dx;
            } else {
                input_grad_out = match input_grad {
                    InputGrad::None => None,
                    InputGrad::All => Some(delta.dot(&layer.weight.t())),
                    InputGrad::From(start) => {
                        let w_tail = layer.weight.slice(s![start.., ..]);
                        Some(delta.dot(&w_tail.t()))
                    }
                };
            }
        }
        grads.reverse();
        Ok((input_grad_out, MlpGrads { layers: grads }))
    }

    fn check_batch(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_width() {
            return Err(Error::shape("MLP input", self.input_width(), input.ncols()));
        }
        Ok(())
    }

    /// Parameters flattened layer by layer: row-major weights then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("flat parameters", self.param_count(), flat.len()));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = *it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = *it.next().unwrap());
        }
        Ok(())
    }

    /// `self ← tau · source + (1 − tau) · self`, elementwise.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if self.sizes() != source.sizes() {
            return Err(Error::InvalidArgument(format!(
                "polyak update between {:?} and {:?}",
                self.sizes(),
                source.sizes()
            )));
        }
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            ndarray::Zip::from(&mut dst.weight)
                .and(&src.weight)
                .for_each(|d, &s| *d = tau * s + (1.0 - tau) * *d);
            ndarray::Zip::from(&mut dst.bias)
                .and(&src.bias)
                .for_each(|d, &s| *d = tau * s + (1.0 - tau) * *d);
        }
        Ok(())
    }

    /// Write the little-endian `MPRNET1` checkpoint.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.inputs() as u32).to_le_bytes())?;
            w.write_all(&(l.outputs() as u32).to_le_bytes())?;
        }
        for l in &self.layers {
            for v in l.weight.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in l.bias.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad MPRNET1 magic".into()));
        }
        let count = read_u32(r)? as usize;
        if count == 0 || count > 64 {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = read_u32(r)? as usize;
            let outputs = read_u32(r)? as usize;
            if inputs == 0 || outputs == 0 || inputs * outputs > 1 << 28 {
                return Err(Error::Format(format!("implausible layer {inputs}x{outputs}")));
            }
            shapes.push((inputs, outputs));
        }
        let mut layers = Vec::with_capacity(count);
        for (inputs, outputs) in shapes {
            let mut layer = Dense::zeros(inputs, outputs);
            for v in layer.weight.iter_mut() {
                *v = read_f64(r)?;
            }
            for v in layer.bias.iter_mut() {
                *v = read_f64(r)?;
            }
            layers.push(layer);
        }
        Mlp::from_layers(layers).map_err(|e| Error::Format(e.to_string()))
    }
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let mlp = Mlp::zeros(&[3, 4, 2]).unwrap();
        assert_eq!(mlp.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Dense {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
        };
        let mlp = Mlp::from_layers(vec![layer]).unwrap();
        let x = [0.3, -1.2, 4.0];
        assert_eq!(mlp.forward(&x).unwrap(), x.to_vec());

        let pass = mlp.forward_batch(array![[0.3, -1.2, 4.0]].view()).unwrap();
        let g = array![[1.0, 2.0, -3.0]];
        let (dx, _) = mlp.backward(&pass, g.view(), InputGrad::All).unwrap();
        assert_eq!(dx.unwrap(), g);
    }

    #[test]
    fn two_layer_net_matches_manual_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mlp = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
        let x = [0.7, -0.1, 0.4];
        let l0 = &mlp.layers()[0];
        let l1 = &mlp.layers()[1];
        let mut hidden = [0.0; 4];
        for j in 0..4 {
            let mut acc = l0.bias[j];
            for i in 0..3 {
                acc += x[i] * l0.weight[[i, j]];
            }
            hidden[j] = acc.tanh();
        }
        let mut expected = [0.0; 2];
        for k in 0..2 {
            let mut acc = l1.bias[k];
            for j in 0..4 {
                acc += hidden[j] * l1.weight[[j, k]];
            }
            expected[k] = acc;
        }
        let out = mlp.forward(&x).unwrap();
        for k in 0..2 {
            assert!((out[k] - expected[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[4, 5, 3], &mut rng).unwrap();
        let x = Array2::from_shape_fn((2, 4), |(i, j)| (i + j) as f64 * 0.1);
        let pass = mlp.forward_batch(x.view()).unwrap();
        let (dx, grads) = mlp
            .backward(&pass, Array2::zeros((2, 3)).view(), InputGrad::All)
            .unwrap();
        assert!(dx.unwrap().iter().all(|&v| v == 0.0));
        assert!(grads.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[3, 6, 5, 2], &mut rng).unwrap();
        let x = array![[0.2, -0.5, 0.9], [1.1, 0.3, -0.7]];
        let w = array![[0.5, -1.0], [2.0, 0.25]];
        // loss = sum(w ⊙ f(x))
        let loss = |m: &Mlp, x: &Array2<f64>| (m.forward_output(x.view()).unwrap() * &w).sum();
        let pass = mlp.forward_batch(x.view()).unwrap();
        let (dx, grads) = mlp.backward(&pass, w.view(), InputGrad::All).unwrap();
        let analytic = grads.flat();
        let base = mlp.flat_params();
        let eps = 1e-5;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += eps;
            let mut plus = mlp.clone();
            plus.set_flat_params(&p).unwrap();
            p[i] -= 2.0 * eps;
            let mut minus = mlp.clone();
            minus.set_flat_params(&p).unwrap();
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * eps);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: fd {fd} vs {}", analytic[i]);
        }
        let dx = dx.unwrap();
        for r in 0..2 {
            for c in 0..3 {
                let mut xp = x.clone();
                xp[[r, c]] += eps;
                let mut xm = x.clone();
                xm[[r, c]] -= eps;
                let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * eps);
                assert!((fd - dx[[r, c]]).abs() < 1e-8);
            }
        }
        let pass = mlp.forward_batch(x.view()).unwrap();
        let (tail, _) = mlp.backward(&pass, w.view(), InputGrad::From(1)).unwrap();
        assert_eq!(tail.unwrap(), dx.slice(s![.., 1..]).to_owned());
    }

    #[test]
    fn dimension_mismatch_names_widths() {
        let mlp = Mlp::zeros(&[3, 2]).unwrap();
        match mlp.forward(&[1.0, 2.0]) {
            Err(Error::Shape {
                expected, actual, ..
            }) => assert_eq!((expected, actual), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp::new(&[5, 7, 3], &mut rng).unwrap();
        let bytes = mlp.to_checkpoint_bytes();
        assert_eq!(&bytes[..8], b"MPRNET1\0");
        let back = Mlp::read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, mlp);
        assert_eq!(back.to_checkpoint_bytes(), bytes);
        assert!(Mlp::read_checkpoint(&mut &bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn polyak_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = Mlp::new(&[2, 3, 1], &mut rng).unwrap();
        let orig = Mlp::new(&[2, 3, 1], &mut rng).unwrap();
        let mut dst = orig.clone();
        dst.polyak_from(&src, 0.0).unwrap();
        assert_eq!(dst, orig);
        dst.polyak_from(&src, 1.0).unwrap();
        assert_eq!(dst, src);
    }
}
