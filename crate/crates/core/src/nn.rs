//! Dense feed-forward classifiers over a flat parameter vector.
//!
//! A network is described by an [`MlpArch`] and evaluated as a pure function
//! of `(arch, params, inputs)`. Parameters live in one flat [`ParamVector`]
//! whose layout is, for each layer in order, the weight matrix in row-major
//! order (one row per output neuron) followed by the layer's biases.
//! Hidden layers share one activation; the output layer is a softmax.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::objective::{self, ObjectiveSpec};
use crate::rng::{stream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    /// Stable numeric id used by the checkpoint format.
    pub fn id(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    /// Applies the activation to every entry in place.
    fn apply_all(self, xs: &mut [f64]) {
        match self {
            Activation::Tanh => tanh_all(xs),
            Activation::Relu => xs.iter_mut().for_each(|v| *v = v.max(0.0)),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn tanh_all(xs: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2. Without FMA the wider lanes round
        // exactly like the scalar path.
        unsafe { tanh_all_avx2(xs) };
        return;
    }
    xs.iter_mut().for_each(|v| *v = crate::special::tanh(*v));
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tanh_all_avx2(xs: &mut [f64]) {
    xs.iter_mut().for_each(|v| *v = crate::special::tanh(*v));
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

/// Location of one layer's parameters inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpan {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerSpan {
    pub fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn biases(&self) -> Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    /// Incoming weights of output neuron `neuron`.
    pub fn weight_row(&self, neuron: usize) -> Range<usize> {
        let start = self.offset + neuron * self.fan_in;
        start..start + self.fan_in
    }

    pub fn bias(&self, neuron: usize) -> usize {
        self.offset + self.fan_in * self.fan_out + neuron
    }

    pub fn len(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpArch {
    widths: Vec<usize>,
    activation: Activation,
    spans: Vec<LayerSpan>,
}

impl MlpArch {
    /// `widths` lists every layer including input and output; the last width
    /// is the number of classes.
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArch(format!(
                "need at least 2 layer widths, got {}",
                widths.len()
            )));
        }
        if let Some(i) = widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidArch(format!("layer {i} has width 0")));
        }
        let mut spans = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            let span = LayerSpan {
                fan_in: pair[0],
                fan_out: pair[1],
                offset,
            };
            offset += span.len();
            spans.push(span);
        }
        Ok(MlpArch {
            widths,
            activation,
            spans,
        })
    }

    /// The six-weight-layer tanh network used for the swiss-roll and rings
    /// experiments: `[2, 16, 16, 16, 16, 16, 2]`, 1170 parameters.
    pub fn toy_default() -> Self {
        MlpArch::new(vec![2, 16, 16, 16, 16, 16, 2], Activation::Tanh).expect("default architecture is valid")
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layers(&self) -> &[LayerSpan] {
        &self.spans
    }

    pub fn param_count(&self) -> usize {
        self.spans.iter().map(LayerSpan::len).sum()
    }
}

/// Flat parameter vector in the canonical layout of an [`MlpArch`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

/// One layer's parameters, unpacked from a [`ParamVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major, `fan_out` rows of `fan_in` entries.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Checks length against `arch` and that every entry is finite.
    pub fn validate(&self, arch: &MlpArch) -> Result<()> {
        if self.0.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, architecture needs {}",
                self.0.len(),
                arch.param_count()
            )));
        }
        if let Some(index) = self.0.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameter",
                index,
            });
        }
        Ok(())
    }

    pub fn unflatten(&self, arch: &MlpArch) -> Result<Vec<LayerParams>> {
        self.validate(arch)?;
        Ok(arch
            .layers()
            .iter()
            .map(|span| LayerParams {
                fan_in: span.fan_in,
                fan_out: span.fan_out,
                weights: self.0[span.weights()].to_vec(),
                biases: self.0[span.biases()].to_vec(),
            })
            .collect())
    }

    pub fn flatten(layers: &[LayerParams]) -> ParamVector {
        let mut values = Vec::new();
        for layer in layers {
            values.extend_from_slice(&layer.weights);
            values.extend_from_slice(&layer.biases);
        }
        ParamVector(values)
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Inputs paired with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    inputs: Matrix,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::Empty);
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub(crate) fn validate(&self, arch: &MlpArch) -> Result<()> {
        validate_inputs(arch, &self.inputs)?;
        if let Some(i) = self.labels.iter().position(|&y| y >= arch.num_classes()) {
            return Err(Error::InvalidArgument(format!(
                "label {} at row {i} is not below the class count {}",
                self.labels[i],
                arch.num_classes()
            )));
        }
        Ok(())
    }
}

fn validate_inputs(arch: &MlpArch, inputs: &Matrix) -> Result<()> {
    if inputs.cols() != arch.input_dim() {
        return Err(Error::Shape(format!(
            "inputs have {} columns, network expects {}",
            inputs.cols(),
            arch.input_dim()
        )));
    }
    if let Some(index) = inputs.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "input", index });
    }
    Ok(())
}

/// Scale-balanced uniform initialization: each weight is drawn from
/// `U(-√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))`, biases are zero.
pub fn init_params(arch: &MlpArch, seed: u64) -> ParamVector {
    let mut rng = Rng::derive(seed, stream::INIT);
    let mut values = Vec::with_capacity(arch.param_count());
    for span in arch.layers() {
        let limit = (6.0 / (span.fan_in + span.fan_out) as f64).sqrt();
        for _ in 0..span.fan_in * span.fan_out {
            values.push(rng.uniform_in(-limit, limit));
        }
        values.extend(std::iter::repeat(0.0).take(span.fan_out));
    }
    ParamVector(values)
}

/// Class probabilities, one row per input row.
pub fn forward(arch: &MlpArch, params: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
    params.validate(arch)?;
    validate_inputs(arch, inputs)?;
    let probs = probabilities_unchecked(arch, params.as_slice(), inputs);
    Matrix::new(inputs.rows(), arch.num_classes(), probs)
}

/// `out = x·Wᵀ + b` for one layer, followed by the hidden activation unless
/// `activate` is false.
fn dense(arch: &MlpArch, span: &LayerSpan, params: &[f64], x: &[f64], rows: usize, activate: bool) -> Vec<f64> {
    let (fi, fo) = (span.fan_in, span.fan_out);
    let weights = &params[span.weights()];
    let biases = &params[span.biases()];
    let mut out = Vec::with_capacity(rows * fo);
    for _ in 0..rows {
        out.extend_from_slice(biases);
    }
    // SAFETY: the strides describe `x` as rows×fi, `weights` read as its
    // transpose fi×fo, and `out` as rows×fo; all three buffers have exactly
    // those sizes.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            fi,
            fo,
            1.0,
            x.as_ptr(),
            fi as isize,
            1,
            weights.as_ptr(),
            1,
            fi as isize,
            1.0,
            out.as_mut_ptr(),
            fo as isize,
            1,
        );
    }
    if activate {
        arch.activation().apply_all(&mut out);
    }
    out
}

/// Activations of every layer; entry 0 is the input, the last entry holds
/// the raw logits.
pub(crate) fn forward_unchecked(arch: &MlpArch, params: &[f64], inputs: &Matrix) -> Vec<Vec<f64>> {
    let rows = inputs.rows();
    let last = arch.layers().len() - 1;
    let mut acts = Vec::with_capacity(arch.layers().len() + 1);
    acts.push(inputs.as_slice().to_vec());
    for (l, span) in arch.layers().iter().enumerate() {
        let out = dense(arch, span, params, &acts[l], rows, l != last);
        acts.push(out);
    }
    acts
}

/// Logits only, without keeping intermediate activations.
pub(crate) fn logits_unchecked(arch: &MlpArch, params: &[f64], inputs: &[f64], rows: usize) -> Vec<f64> {
    let last = arch.layers().len() - 1;
    let mut cur = dense(arch, &arch.layers()[0], params, inputs, rows, last != 0);
    for (l, span) in arch.layers().iter().enumerate().skip(1) {
        cur = dense(arch, span, params, &cur, rows, l != last);
    }
    cur
}

pub(crate) fn softmax_rows(values: &mut [f64], cols: usize) {
    for row in values.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Probabilities for a batch that has already been validated.
pub(crate) fn probabilities_unchecked(arch: &MlpArch, params: &[f64], inputs: &Matrix) -> Vec<f64> {
    let mut probs = logits_unchecked(arch, params, inputs.as_slice(), inputs.rows());
    softmax_rows(&mut probs, arch.num_classes());
    probs
}

/// Objective value and its gradient with respect to every parameter.
///
/// `poison` is required whenever the objective puts nonzero weight on the
/// poison term. The returned loss is bit-identical to what
/// [`objective::cross_entropy`] / [`objective::poisoned_loss`] report for the
/// same inputs.
pub fn loss_grad(
    arch: &MlpArch,
    params: &ParamVector,
    train: &Batch,
    poison: Option<&Batch>,
    objective: ObjectiveSpec,
) -> Result<(f64, ParamVector)> {
    params.validate(arch)?;
    objective.validate()?;
    let classes = arch.num_classes();
    let (clean_weight, poison_weight) = objective.term_weights();
    let mut grad = vec![0.0; params.len()];

    let mut clean_term = None;
    if clean_weight > 0.0 || poison_weight == 0.0 {
        train.validate(arch)?;
        let mut acts = forward_unchecked(arch, params.as_slice(), train.inputs());
        let logits = acts.pop().unwrap();
        let mut probs = logits;
        softmax_rows(&mut probs, classes);
        clean_term = Some(objective::mean_cross_entropy(&probs, train.labels(), classes));
        // d/dz of -log p_y is p - onehot(y).
        let scale = clean_weight / train.len() as f64;
        let mut delta = probs;
        for (row, &y) in delta.chunks_mut(classes).zip(train.labels()) {
            row[y] -= 1.0;
            row.iter_mut().for_each(|v| *v *= scale);
        }
        backward(arch, params.as_slice(), &acts, delta, &mut grad);
    }

    let mut poison_term = None;
    if poison_weight > 0.0 {
        let poison = poison.ok_or_else(|| Error::InvalidArgument("poisoned objective needs a poison batch".into()))?;
        poison.validate(arch)?;
        let mut acts = forward_unchecked(arch, params.as_slice(), poison.inputs());
        let logits = acts.pop().unwrap();
        let mut probs = logits.clone();
        softmax_rows(&mut probs, classes);
        poison_term = Some(objective::mean_reverse_cross_entropy(&probs, poison.labels(), classes));
        let scale = poison_weight / poison.len() as f64;
        let mut delta = vec![0.0; probs.len()];
        for ((drow, zrow), &y) in delta
            .chunks_mut(classes)
            .zip(logits.chunks(classes))
            .zip(poison.labels())
        {
            reverse_ce_logit_grad(zrow, y, drow);
            drow.iter_mut().for_each(|v| *v *= scale);
        }
        backward(arch, params.as_slice(), &acts, delta, &mut grad);
    }

    let loss = objective::combine_terms(objective, clean_term, poison_term);
    Ok((loss, ParamVector(grad)))
}

/// Gradient of `-log(1 - p_y)` with respect to the logits.
///
/// With `q = 1 - p_y = Σ_{j≠y} p_j` the gradient is `p_y` at `y` and
/// `-p_y · p_j / q` elsewhere. The ratios `p_j / q` are a softmax over the
/// non-target logits, which stays well defined even when `q` underflows.
fn reverse_ce_logit_grad(logits: &[f64], y: usize, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let p_y = (logits[y] - max).exp() / total;
    let others = || logits.iter().enumerate().filter(move |&(j, _)| j != y).map(|(_, &z)| z);
    let other_max = others().fold(f64::NEG_INFINITY, f64::max);
    let other_sum: f64 = others().map(|z| (z - other_max).exp()).sum();
    for (j, z) in logits.iter().enumerate() {
        out[j] = if j == y {
            p_y
        } else {
            -p_y * (z - other_max).exp() / other_sum
        };
    }
}

fn backward(arch: &MlpArch, params: &[f64], acts: &[Vec<f64>], mut delta: Vec<f64>, grad: &mut [f64]) {
    let rows = acts[0].len() / arch.input_dim();
    let act = arch.activation();
    for (l, span) in arch.layers().iter().enumerate().rev() {
        let x = &acts[l];
        let (fi, fo) = (span.fan_in, span.fan_out);
        let (gw, gb) = grad[span.offset..span.offset + span.len()].split_at_mut(fi * fo);
        // SAFETY (both calls): `delta` is rows×fo, `x` rows×fi, the weight
        // block fo×fi, and the outputs fo×fi and rows×fi, matching the strides.
        unsafe {
            // gW += δᵀ·x
            matrixmultiply::dgemm(
                fo,
                rows,
                fi,
                1.0,
                delta.as_ptr(),
                1,
                fo as isize,
                x.as_ptr(),
                fi as isize,
                1,
                1.0,
                gw.as_mut_ptr(),
                fi as isize,
                1,
            );
        }
        for dr in delta.chunks_exact(fo) {
            for (g, d) in gb.iter_mut().zip(dr) {
                *g += d;
            }
        }
        if l == 0 {
            break;
        }
        let weights = &params[span.weights()];
        let mut prev = vec![0.0; rows * fi];
        unsafe {
            // δ_prev = δ·W
            matrixmultiply::dgemm(
                rows,
                fo,
                fi,
                1.0,
                delta.as_ptr(),
                fo as isize,
                1,
                weights.as_ptr(),
                fi as isize,
                1,
                0.0,
                prev.as_mut_ptr(),
                fi as isize,
                1,
            );
        }
        for (p, &a) in prev.iter_mut().zip(x) {
            *p *= act.derivative_from_output(a);
        }
        delta = prev;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_arch() -> (MlpArch, ParamVector) {
        let arch = MlpArch::new(vec![2, 2], Activation::Tanh).unwrap();
        (arch, ParamVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]))
    }

    #[test]
    fn param_count_formula() {
        let arch = MlpArch::new(vec![2, 4, 2], Activation::Tanh).unwrap();
        assert_eq!(arch.param_count(), 22);
        assert_eq!(init_params(&arch, 0).len(), 22);
        assert_eq!(MlpArch::toy_default().param_count(), 1170);
    }

    #[test]
    fn rejects_bad_architectures() {
        assert!(MlpArch::new(vec![2], Activation::Tanh).is_err());
        assert!(MlpArch::new(vec![2, 0, 2], Activation::Relu).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let arch = MlpArch::new(vec![2, 8, 8, 3], Activation::Relu).unwrap();
        let a = init_params(&arch, 7);
        let b = init_params(&arch, 7);
        assert_eq!(a, b);
        assert_ne!(a, init_params(&arch, 8));
        for span in arch.layers() {
            assert!(a.as_slice()[span.biases()].iter().all(|&b| b == 0.0));
            let limit = (6.0 / (span.fan_in + span.fan_out) as f64).sqrt();
            assert!(a.as_slice()[span.weights()].iter().all(|w| w.abs() <= limit));
        }
    }

    #[test]
    fn zero_params_give_uniform_rows() {
        let arch = MlpArch::new(vec![2, 5, 2], Activation::Tanh).unwrap();
        let params = ParamVector::zeros(arch.param_count());
        let x = Matrix::from_rows(&[[0.3, -1.0], [5.0, 2.0]]).unwrap();
        let p = forward(&arch, &params, &x).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_of_ln3_and_zero() {
        let (arch, params) = identity_arch();
        let x = Matrix::from_rows(&[[3f64.ln(), 0.0]]).unwrap();
        let p = forward(&arch, &params, &x).unwrap();
        assert!((p.row(0)[0] - 0.75).abs() < 1e-15);
        assert!((p.row(0)[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let (arch, params) = identity_arch();
        let x = Matrix::from_rows(&[[700.0, -700.0], [-700.0, 700.0]]).unwrap();
        let p = forward(&arch, &params, &x).unwrap();
        for r in 0..2 {
            assert!(p.row(r).iter().all(|v| v.is_finite()));
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_inputs_are_reported_by_index() {
        let (arch, mut params) = identity_arch();
        let x = Matrix::from_rows(&[[0.0, 0.0], [f64::NAN, 1.0]]).unwrap();
        match forward(&arch, &params, &x) {
            Err(Error::NonFinite {
                what: "input",
                index: 2,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        params.as_mut_slice()[4] = f64::INFINITY;
        let x = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        match forward(&arch, &params, &x) {
            Err(Error::NonFinite {
                what: "parameter",
                index: 4,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_layer_logit_gradient_is_p_minus_onehot() {
        // With identity weights and zero biases, dL/db equals dL/dz.
        let (arch, params) = identity_arch();
        let x = Matrix::from_rows(&[[3f64.ln(), 0.0]]).unwrap();
        let batch = Batch::new(x, vec![1]).unwrap();
        let (loss, grad) = loss_grad(&arch, &params, &batch, None, ObjectiveSpec::Clean).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        let gb = &grad.as_slice()[4..6];
        assert!((gb[0] - 0.75).abs() < 1e-15);
        assert!((gb[1] - (0.25 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_net_loss_is_ln2() {
        let arch = MlpArch::new(vec![2, 3, 2], Activation::Tanh).unwrap();
        let params = ParamVector::zeros(arch.param_count());
        let x = Matrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5], [0.0, 0.0]]).unwrap();
        let batch = Batch::new(x, vec![0, 1, 1]).unwrap();
        let (loss, _) = loss_grad(&arch, &params, &batch, None, ObjectiveSpec::Clean).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn reverse_grad_survives_saturation() {
        let mut out = [0.0; 3];
        reverse_ce_logit_grad(&[800.0, -800.0, -790.0], 0, &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!((out.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let arch = MlpArch::new(vec![3, 4, 2], Activation::Tanh).unwrap();
        let params = init_params(&arch, 11);
        let layers = params.unflatten(&arch).unwrap();
        assert_eq!(layers[0].weights.len(), 12);
        assert_eq!(layers[1].biases.len(), 2);
        assert_eq!(ParamVector::flatten(&layers), params);
    }
}
