use super::{LayerKind, LayerParams, ModelParams, OptimizerState, Real};
use crate::data::Dataset;
use crate::{Error, Result};

/// A mini-batch: `labels.len()` samples of shape `sample_shape`, flattened
/// row-major into `inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f32>,
    pub sample_shape: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<f32>, sample_shape: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if labels.is_empty() {
            return Err(Error::Usage("batch must hold at least one sample".into()));
        }
        if per == 0 || inputs.len() != per * labels.len() {
            return Err(Error::Config(format!(
                "batch of {} samples with shape {sample_shape:?} cannot hold {} values",
                labels.len(),
                inputs.len()
            )));
        }
        Ok(Self {
            inputs,
            sample_shape,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub(super) fn relu_follows<T>(layers: &[LayerParams<T>], i: usize) -> bool {
    i + 1 < layers.len() && layers[i].kind != LayerKind::Other
}

/// Activations kept for the backward pass.
struct Trace<T> {
    /// `inputs[i]` is the (post-activation) input to layer `i`.
    inputs: Vec<Vec<T>>,
    /// Per-sample input shape of each layer.
    shapes: Vec<Vec<usize>>,
    logits: Vec<T>,
}

fn dense_forward<T: Real>(layer: &LayerParams<T>, x: &[T], batch: usize) -> Vec<T> {
    let (out, inp) = (layer.shape[0], layer.shape[1]);
    let mut y = vec![T::zero(); batch * out];
    for b in 0..batch {
        let xb = &x[b * inp..(b + 1) * inp];
        for o in 0..out {
            let row = &layer.weights[o * inp..(o + 1) * inp];
            let mut acc = layer.biases[o];
            for (w, v) in row.iter().zip(xb) {
                acc = acc + *w * *v;
            }
            y[b * out + o] = acc;
        }
    }
    y
}

fn conv_forward<T: Real>(layer: &LayerParams<T>, x: &[T], shape: &[usize], batch: usize) -> Vec<T> {
    let (f, c, k) = (layer.shape[0], layer.shape[1], layer.shape[2]);
    let (h, w) = (shape[1], shape[2]);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let in_size = c * h * w;
    let out_size = f * oh * ow;
    let mut y = vec![T::zero(); batch * out_size];
    for b in 0..batch {
        let xb = &x[b * in_size..(b + 1) * in_size];
        let yb = &mut y[b * out_size..(b + 1) * out_size];
        for fi in 0..f {
            let wf = &layer.weights[fi * c * k * k..(fi + 1) * c * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = layer.biases[fi];
                    for ci in 0..c {
                        for ky in 0..k {
                            let xrow = &xb[ci * h * w + (oy + ky) * w + ox..][..k];
                            let wrow = &wf[(ci * k + ky) * k..][..k];
                            for (wv, xv) in wrow.iter().zip(xrow) {
                                acc = acc + *wv * *xv;
                            }
                        }
                    }
                    yb[(fi * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    y
}

fn affine_forward<T: Real>(layer: &LayerParams<T>, x: &[T]) -> Vec<T> {
    let n = layer.shape[0];
    x.iter()
        .enumerate()
        .map(|(i, &v)| layer.weights[i % n] * v + layer.biases[i % n])
        .collect()
}

fn run_forward<T: Real>(
    model: &ModelParams<T>,
    input: Vec<T>,
    sample_shape: &[usize],
    batch: usize,
) -> Result<Trace<T>> {
    let mut shapes = Vec::with_capacity(model.layers.len() + 1);
    let mut shape = sample_shape.to_vec();
    for layer in &model.layers {
        let next = layer.output_shape(&shape)?;
        shapes.push(std::mem::replace(&mut shape, next));
    }
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut x = input;
    for (i, layer) in model.layers.iter().enumerate() {
        let mut y = match layer.kind {
            LayerKind::Dense => dense_forward(layer, &x, batch),
            LayerKind::Conv2d => conv_forward(layer, &x, &shapes[i], batch),
            LayerKind::Other => affine_forward(layer, &x),
        };
        if relu_follows(&model.layers, i) {
            for v in &mut y {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        inputs.push(x);
        x = y;
    }
    Ok(Trace {
        inputs,
        shapes,
        logits: x,
    })
}

fn cast_inputs<T: Real>(xs: &[f32]) -> Vec<T> {
    xs.iter()
        .map(|&v| T::from_f32(v).unwrap_or_else(T::nan))
        .collect()
}

/// Logits, `batch × num_classes`, row-major.
pub fn forward<T: Real>(model: &ModelParams<T>, batch: &Batch) -> Result<Vec<T>> {
    let trace = run_forward(
        model,
        cast_inputs(&batch.inputs),
        &batch.sample_shape,
        batch.len(),
    )?;
    Ok(trace.logits)
}

/// Mean softmax cross-entropy and its gradient with respect to every
/// parameter. The gradient is returned as a model-shaped container.
pub fn loss_and_gradient<T: Real>(
    model: &ModelParams<T>,
    batch: &Batch,
) -> Result<(T, ModelParams<T>)> {
    let n = batch.len();
    let classes = model.num_classes();
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Config(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let trace = run_forward(model, cast_inputs(&batch.inputs), &batch.sample_shape, n)?;

    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut loss = T::zero();
    let mut grad_out = vec![T::zero(); n * classes];
    for b in 0..n {
        let row = &trace.logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().fold(T::zero(), |acc, &z| acc + (z - max).exp());
        let log_sum = sum.ln() + max;
        let label = batch.labels[b];
        loss = loss + (log_sum - row[label]);
        for (c, &z) in row.iter().enumerate() {
            let p = (z - log_sum).exp();
            let target = if c == label { T::one() } else { T::zero() };
            grad_out[b * classes + c] = (p - target) * inv_n;
        }
    }
    loss = loss * inv_n;

    let mut grads = model.zeros_like();
    let mut g = grad_out;
    for i in (0..model.layers.len()).rev() {
        let layer = &model.layers[i];
        let x = &trace.inputs[i];
        let need_input_grad = i > 0;
        let gl = &mut grads.layers[i];
        g = match layer.kind {
            LayerKind::Dense => dense_backward(layer, x, &g, n, gl, need_input_grad),
            LayerKind::Conv2d => {
                conv_backward(layer, x, &trace.shapes[i], &g, n, gl, need_input_grad)
            }
            LayerKind::Other => affine_backward(layer, x, &g, gl, need_input_grad),
        };
        // `g` is now dL/d(input of layer i) = dL/d(post-activation output of i-1).
        if i > 0 && relu_follows(&model.layers, i - 1) {
            for (gv, xv) in g.iter_mut().zip(x) {
                if *xv <= T::zero() {
                    *gv = T::zero();
                }
            }
        }
    }
    Ok((loss, grads))
}

fn dense_backward<T: Real>(
    layer: &LayerParams<T>,
    x: &[T],
    g: &[T],
    batch: usize,
    out: &mut LayerParams<T>,
    need_input_grad: bool,
) -> Vec<T> {
    let (o_n, i_n) = (layer.shape[0], layer.shape[1]);
    let mut gx = if need_input_grad {
        vec![T::zero(); batch * i_n]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        let xb = &x[b * i_n..(b + 1) * i_n];
        for o in 0..o_n {
            let go = g[b * o_n + o];
            if go == T::zero() {
                continue;
            }
            out.biases[o] = out.biases[o] + go;
            let wrow = &mut out.weights[o * i_n..(o + 1) * i_n];
            for (w, &xv) in wrow.iter_mut().zip(xb) {
                *w = *w + go * xv;
            }
            if need_input_grad {
                let lrow = &layer.weights[o * i_n..(o + 1) * i_n];
                for (gxv, &wv) in gx[b * i_n..(b + 1) * i_n].iter_mut().zip(lrow) {
                    *gxv = *gxv + go * wv;
                }
            }
        }
    }
    gx
}

fn conv_backward<T: Real>(
    layer: &LayerParams<T>,
    x: &[T],
    shape: &[usize],
    g: &[T],
    batch: usize,
    out: &mut LayerParams<T>,
    need_input_grad: bool,
) -> Vec<T> {
    let (f, c, k) = (layer.shape[0], layer.shape[1], layer.shape[2]);
    let (h, w) = (shape[1], shape[2]);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let in_size = c * h * w;
    let out_size = f * oh * ow;
    let mut gx = if need_input_grad {
        vec![T::zero(); batch * in_size]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        let xb = &x[b * in_size..(b + 1) * in_size];
        let gb = &g[b * out_size..(b + 1) * out_size];
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = gb[(fi * oh + oy) * ow + ox];
                    if go == T::zero() {
                        continue;
                    }
                    out.biases[fi] = out.biases[fi] + go;
                    for ci in 0..c {
                        for ky in 0..k {
                            let xi = ci * h * w + (oy + ky) * w + ox;
                            let wi = ((fi * c + ci) * k + ky) * k;
                            for kx in 0..k {
                                out.weights[wi + kx] = out.weights[wi + kx] + go * xb[xi + kx];
                                if need_input_grad {
                                    let gi = b * in_size + xi + kx;
                                    gx[gi] = gx[gi] + go * layer.weights[wi + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

fn affine_backward<T: Real>(
    layer: &LayerParams<T>,
    x: &[T],
    g: &[T],
    out: &mut LayerParams<T>,
    need_input_grad: bool,
) -> Vec<T> {
    let n = layer.shape[0];
    for (i, (&gv, &xv)) in g.iter().zip(x).enumerate() {
        out.weights[i % n] = out.weights[i % n] + gv * xv;
        out.biases[i % n] = out.biases[i % n] + gv;
    }
    if need_input_grad {
        g.iter()
            .enumerate()
            .map(|(i, &gv)| gv * layer.weights[i % n])
            .collect()
    } else {
        Vec::new()
    }
}

/// One Adam step on copies of `model` and `opt`.
pub fn train_step(
    model: &ModelParams,
    opt: &OptimizerState,
    batch: &Batch,
) -> Result<(ModelParams, OptimizerState, f32)> {
    let mut model = model.clone();
    let mut opt = opt.clone();
    let loss = train_step_in_place(&mut model, &mut opt, batch)?;
    Ok((model, opt, loss))
}

/// In-place form of [`train_step`]. On error the model and optimizer are
/// left untouched.
pub fn train_step_in_place(
    model: &mut ModelParams,
    opt: &mut OptimizerState,
    batch: &Batch,
) -> Result<f32> {
    model.ensure_congruent(&opt.first_moment)?;
    let (loss, grads) = loss_and_gradient(model, batch)?;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss {loss} at optimizer step {} on a batch of {}",
            opt.step + 1,
            batch.len()
        )));
    }
    if !grads.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite gradient at optimizer step {} (loss {loss})",
            opt.step + 1
        )));
    }
    let mut next = model.clone();
    opt.apply(&mut next, &grads);
    if !next.is_finite() {
        return Err(Error::Numerical(format!(
            "parameters became non-finite at optimizer step {}",
            opt.step
        )));
    }
    *model = next;
    Ok(loss)
}

fn argmax<T: Real>(row: &[T]) -> usize {
    // Strict comparison keeps the lowest index on ties.
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 256;

/// Predicted class per sample.
pub fn predict(model: &ModelParams, dataset: &Dataset) -> Result<Vec<usize>> {
    let classes = model.num_classes();
    let mut preds = Vec::with_capacity(dataset.len());
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let batch = dataset.batch(chunk)?;
        let logits = forward(model, &batch)?;
        preds.extend(logits.chunks(classes).map(argmax));
    }
    Ok(preds)
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate(model: &ModelParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty dataset".into()));
    }
    let preds = predict(model, dataset)?;
    let correct = preds
        .iter()
        .zip(&dataset.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Cosine similarity of the flattened final-layer weights.
pub fn last_layer_cosine_similarity<T: Real>(
    a: &ModelParams<T>,
    b: &ModelParams<T>,
) -> Result<f64> {
    a.ensure_congruent(b)?;
    let (la, lb) = match (a.layers.last(), b.layers.last()) {
        (Some(la), Some(lb)) => (la, lb),
        _ => return Err(Error::Config("model has no layers".into())),
    };
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in la.weights.iter().zip(&lb.weights) {
        let (x, y) = (x.to_f64().unwrap(), y.to_f64().unwrap());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity(
            "final layer weight vector has zero norm".into(),
        ));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}
