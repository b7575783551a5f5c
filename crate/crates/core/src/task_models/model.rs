//! Tiny convolutional classifier and encoder/decoder segmenter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::task_models::TaskError;
use crate::tensorcore::{Tape, Tensor, TensorError, Var};

/// Which network a [`TaskModel`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// conv(3→8) ReLU pool, conv(8→16) ReLU pool, global average pool, linear(16→K).
    Classifier { classes: usize },
    /// Two-level encoder/decoder with skip connections and a 1×1 head producing
    /// one logit per pixel.
    Segmenter,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Self::Classifier { .. } => "classifier",
            Self::Segmenter => "segmenter",
        }
    }

    /// Names and shapes of every parameter tensor, in a fixed order.
    pub fn layout(self) -> Vec<(String, Vec<usize>)> {
        let conv = |name: &str, co: usize, ci: usize, k: usize| {
            [
                (format!("{name}.weight"), vec![co, ci, k, k]),
                (format!("{name}.bias"), vec![co]),
            ]
        };
        let mut out = Vec::new();
        match self {
            Self::Classifier { classes } => {
                out.extend(conv("conv1", 8, 3, 3));
                out.extend(conv("conv2", 16, 8, 3));
                out.push(("fc.weight".into(), vec![classes, 16]));
                out.push(("fc.bias".into(), vec![classes]));
            }
            Self::Segmenter => {
                out.extend(conv("enc1", 8, 3, 3));
                out.extend(conv("enc2", 16, 8, 3));
                out.extend(conv("mid", 16, 16, 3));
                out.extend(conv("dec2", 8, 32, 3));
                out.extend(conv("head", 1, 16, 1));
            }
        }
        out
    }
}

/// A task network Φ_Task with named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskModel<T> {
    arch: Architecture,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

/// Tape handles of a model's parameters, in layout order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelVars {
    vars: Vec<Var>,
}

impl ModelVars {
    pub fn as_slice(&self) -> &[Var] {
        &self.vars
    }
}

/// `(fan_in, fan_out)` of a weight shape; biases have none.
fn fans(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [co, ci, k, k2] => Some((ci * k * k2, co * k * k2)),
        [k, f] => Some((f, k)),
        _ => None,
    }
}

impl<T: Scalar> TaskModel<T> {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero, drawn in
    /// layout order from a ChaCha8 stream seeded with `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (names, params) = arch
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let t = match fans(&shape) {
                    Some((fi, fo)) => {
                        let a = (6.0 / (fi + fo) as f64).sqrt();
                        Tensor::from_fn(&shape, |_| T::lit(rng.gen_range(-a..a)))
                    }
                    None => Tensor::zeros(&shape),
                };
                (name, t)
            })
            .unzip();
        Self { arch, names, params }
    }

    pub fn classifier(classes: usize, seed: u64) -> Self {
        Self::new(Architecture::Classifier { classes }, seed)
    }

    pub fn segmenter(seed: u64) -> Self {
        Self::new(Architecture::Segmenter, seed)
    }

    /// Every parameter set to zero.
    pub fn zeros(arch: Architecture) -> Self {
        let (names, params) = arch
            .layout()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .unzip();
        Self { arch, names, params }
    }

    /// Build from explicit tensors, checking names and shapes against the layout.
    pub fn from_parts(arch: Architecture, tensors: Vec<(String, Tensor<T>)>) -> Result<Self, TaskError> {
        let layout = arch.layout();
        if tensors.len() != layout.len() {
            return Err(TaskError::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&tensors) {
            if name != got_name || t.shape() != shape.as_slice() {
                return Err(TaskError::Checkpoint(format!(
                    "expected {name} with shape {shape:?}, found {got_name} with shape {:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(TaskError::Checkpoint(format!("{name} holds non-finite values")));
            }
        }
        let (names, params) = tensors.into_iter().unzip();
        Ok(Self { arch, names, params })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    /// All parameters as f64 bit patterns, for exact comparisons.
    pub fn to_bits(&self) -> Vec<u64> {
        self.params.iter().flat_map(Tensor::to_bits_vec).collect()
    }

    /// Record the parameters as leaves.
    pub fn record(&self, tape: &mut Tape<T>, trainable: bool) -> ModelVars {
        ModelVars {
            vars: self.params.iter().map(|p| tape.leaf(p.clone(), trainable)).collect(),
        }
    }

    /// Logits for an `[N, 3, H, W]` batch: `[N, K]` for the classifier,
    /// `[N, 1, H, W]` for the segmenter (H and W divisible by 4).
    pub fn forward(&self, tape: &mut Tape<T>, vars: &ModelVars, x: Var) -> Result<Var, TaskError> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "task model input",
                expected: vec![shape.first().copied().unwrap_or(0), 3, 0, 0],
                found: shape,
            }
            .into());
        }
        let v = &vars.vars;
        let conv_relu = |tape: &mut Tape<T>, x: Var, i: usize| -> Result<Var, TensorError> {
            let y = tape.conv2d(x, v[i], v[i + 1])?;
            Ok(tape.relu(y))
        };
        match self.arch {
            Architecture::Classifier { .. } => {
                let h = conv_relu(tape, x, 0)?;
                let h = tape.max_pool2(h)?;
                let h = conv_relu(tape, h, 2)?;
                let h = tape.max_pool2(h)?;
                let h = tape.global_avg_pool(h)?;
                Ok(tape.linear(h, v[4], v[5])?)
            }
            Architecture::Segmenter => {
                let s1 = conv_relu(tape, x, 0)?;
                let p1 = tape.max_pool2(s1)?;
                let s2 = conv_relu(tape, p1, 2)?;
                let p2 = tape.max_pool2(s2)?;
                let m = conv_relu(tape, p2, 4)?;
                let u2 = tape.upsample2(m)?;
                let c2 = tape.concat_channels(u2, s2)?;
                let d2 = conv_relu(tape, c2, 6)?;
                let u1 = tape.upsample2(d2)?;
                let c1 = tape.concat_channels(u1, s1)?;
                Ok(tape.conv2d(c1, v[8], v[9])?)
            }
        }
    }

    /// Logits for a batch without gradients.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>, TaskError> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false);
        let x = tape.constant(batch.clone());
        let out = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(out).clone())
    }
}
