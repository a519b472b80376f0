//! A small bidirectional-LSTM network with optional entity and page-stance
//! branches, trained with hand-written backpropagation and Adam.
//!
//! Layout of a forward pass:
//!
//! ```text
//! embeddings ─dropout─> BiLSTM (last states) ─dropout─> dense tanh ─dropout─┐
//! entity multi-hot ─────────────────────────────────> dense tanh ───────────┼─> concat ─> dense tanh ─> output
//! page stance one-hot ──────────────────────────────> dense tanh ───────────┘
//! ```
//!
//! Without side branches the fusion layer is omitted and the text features
//! feed the output layer directly.

mod adam;
mod layers;
mod weights;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::labels::PageStance;
use crate::preprocess::EncodedComment;

pub use adam::Adam;
pub use layers::{Linear, Lstm, LstmTrace};
pub use weights::{read_weights, write_weights, NamedTensor, WeightsError};

use layers::sigmoid;

/// Output activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "outputs", rename_all = "lowercase")]
pub enum Head {
    /// Mutually exclusive classes, cross-entropy loss.
    Softmax(usize),
    /// Independent binary targets, per-target binary cross-entropy.
    Sigmoid(usize),
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Softmax(n) | Head::Sigmoid(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub embedding_dim: usize,
    /// Units per LSTM direction.
    pub hidden: usize,
    /// Width of the dense layer after the BiLSTM.
    pub text_dim: usize,
    /// `(input, output)` widths of the entity branch.
    pub entity: Option<(usize, usize)>,
    /// Output width of the page-stance branch.
    pub page: Option<usize>,
    /// Width of the tanh fusion layer; present iff a side branch is.
    pub fusion: Option<usize>,
    pub head: Head,
}

impl Architecture {
    /// Text-only network: BiLSTM → dense → output.
    pub fn text_only(embedding_dim: usize, hidden: usize, head: Head) -> Self {
        Architecture {
            embedding_dim,
            hidden,
            text_dim: hidden,
            entity: None,
            page: None,
            fusion: None,
            head,
        }
    }

    /// Adds the entity and/or page branches and the fusion layer.
    pub fn with_branches(mut self, entity_k: Option<usize>, page: bool) -> Self {
        let width = self.hidden;
        self.entity = entity_k.map(|k| (k, width));
        self.page = page.then_some(PAGE_BRANCH_WIDTH);
        self.fusion = (self.entity.is_some() || self.page.is_some()).then_some(width);
        self
    }

    fn fused_dim(&self) -> usize {
        self.text_dim + self.entity.map_or(0, |(_, o)| o) + self.page.unwrap_or(0)
    }
}

const PAGE_BRANCH_WIDTH: usize = 4;

/// One network input.
#[derive(Debug, Clone, Copy)]
pub struct Input<'a> {
    pub text: &'a EncodedComment,
    pub entities: Option<&'a [f32]>,
    pub page: Option<PageStance>,
}

/// Training target for one example.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Binary(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub lstm_fwd: Lstm,
    pub lstm_bwd: Lstm,
    pub text_fc: Linear,
    pub entity_fc: Option<Linear>,
    pub page_fc: Option<Linear>,
    pub fusion: Option<Linear>,
    pub output: Linear,
}

/// Dropout masks (already scaled by `1 / (1 - rate)`) for one training example.
struct Masks {
    embedding: Vec<f64>,
    recurrent: Vec<f64>,
    dense: Vec<f64>,
}

struct Trace {
    fwd: LstmTrace,
    bwd: LstmTrace,
    recurrent_mask: Option<Vec<f64>>,
    dense_mask: Option<Vec<f64>>,
    /// BiLSTM output after dropout.
    recurrent: Vec<f64>,
    /// tanh(text_fc) before dropout.
    text: Vec<f64>,
    entity_in: Vec<f64>,
    entity: Vec<f64>,
    page_in: Vec<f64>,
    page: Vec<f64>,
    fused: Vec<f64>,
    /// Input of the output layer.
    top: Vec<f64>,
}

impl Network {
    pub fn new<R: Rng>(arch: Architecture, rng: &mut R) -> Self {
        let h = arch.hidden;
        Network {
            arch,
            lstm_fwd: Lstm::new(arch.embedding_dim, h, rng),
            lstm_bwd: Lstm::new(arch.embedding_dim, h, rng),
            text_fc: Linear::new(2 * h, arch.text_dim, rng),
            entity_fc: arch.entity.map(|(i, o)| Linear::new(i, o, rng)),
            page_fc: arch.page.map(|o| Linear::new(2, o, rng)),
            fusion: arch.fusion.map(|o| Linear::new(arch.fused_dim(), o, rng)),
            output: Linear::new(arch.fusion.unwrap_or(arch.fused_dim()), arch.head.outputs(), rng),
        }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let h = arch.hidden;
        Network {
            arch,
            lstm_fwd: Lstm::zeros(arch.embedding_dim, h),
            lstm_bwd: Lstm::zeros(arch.embedding_dim, h),
            text_fc: Linear::zeros(2 * h, arch.text_dim),
            entity_fc: arch.entity.map(|(i, o)| Linear::zeros(i, o)),
            page_fc: arch.page.map(|o| Linear::zeros(2, o)),
            fusion: arch.fusion.map(|o| Linear::zeros(arch.fused_dim(), o)),
            output: Linear::zeros(arch.fusion.unwrap_or(arch.fused_dim()), arch.head.outputs()),
        }
    }

    /// Named parameter tensors in a fixed order with their shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (name, l) in [("lstm_fwd", &self.lstm_fwd), ("lstm_bwd", &self.lstm_bwd)] {
            let (h4, d, h) = (4 * l.hidden, l.input_dim, l.hidden);
            out.push((format!("{name}.w"), vec![h4, d], &l.w));
            out.push((format!("{name}.u"), vec![h4, h], &l.u));
            out.push((format!("{name}.b"), vec![h4], &l.b));
        }
        for (name, l) in self.linears() {
            out.push((format!("{name}.weight"), vec![l.out_dim, l.in_dim], &l.weight));
            out.push((format!("{name}.bias"), vec![l.out_dim], &l.bias));
        }
        out
    }

    /// Mutable parameter slices in the same order as [`Network::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in [&mut self.lstm_fwd, &mut self.lstm_bwd] {
            out.push(&mut l.w);
            out.push(&mut l.u);
            out.push(&mut l.b);
        }
        let linears = [
            Some(&mut self.text_fc),
            self.entity_fc.as_mut(),
            self.page_fc.as_mut(),
            self.fusion.as_mut(),
            Some(&mut self.output),
        ];
        for l in linears.into_iter().flatten() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    fn linears(&self) -> Vec<(&'static str, &Linear)> {
        [
            ("text_fc", Some(&self.text_fc)),
            ("entity_fc", self.entity_fc.as_ref()),
            ("page_fc", self.page_fc.as_ref()),
            ("fusion", self.fusion.as_ref()),
            ("output", Some(&self.output)),
        ]
        .into_iter()
        .filter_map(|(n, l)| l.map(|l| (n, l)))
        .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    fn check_input(&self, input: &Input) -> Result<(), String> {
        if input.text.dim != self.arch.embedding_dim {
            return Err(format!(
                "embedding dimension {} does not match the model's {}",
                input.text.dim, self.arch.embedding_dim
            ));
        }
        if let Some((k, _)) = self.arch.entity {
            match input.entities {
                Some(e) if e.len() == k => {}
                Some(e) => return Err(format!("entity features have length {}, expected {k}", e.len())),
                None => return Err("model expects entity features".into()),
            }
        }
        if self.arch.page.is_some() && input.page.is_none() {
            return Err("model expects a page stance".into());
        }
        Ok(())
    }

    fn forward_trace(&self, input: &Input, masks: Option<&Masks>) -> (Vec<f64>, Trace) {
        let d = self.arch.embedding_dim;
        let xs: Vec<Vec<f64>> = input
            .text
            .rows()
            .enumerate()
            .map(|(t, row)| match masks {
                Some(m) => row
                    .iter()
                    .zip(&m.embedding[t * d..(t + 1) * d])
                    .map(|(&x, &k)| x as f64 * k)
                    .collect(),
                None => row.iter().map(|&x| x as f64).collect(),
            })
            .collect();
        let reversed: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let (hf, fwd) = self.lstm_fwd.forward(xs);
        let (hb, bwd) = self.lstm_bwd.forward(reversed);
        let mut recurrent = hf;
        recurrent.extend(hb);
        let recurrent_mask = masks.map(|m| m.recurrent.clone());
        if let Some(m) = &recurrent_mask {
            recurrent.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        let text: Vec<f64> = self.text_fc.forward(&recurrent).into_iter().map(f64::tanh).collect();
        let dense_mask = masks.map(|m| m.dense.clone());
        let mut fused: Vec<f64> = match &dense_mask {
            Some(m) => text.iter().zip(m).map(|(v, k)| v * k).collect(),
            None => text.clone(),
        };

        let mut entity_in = Vec::new();
        let mut entity = Vec::new();
        if let Some(fc) = &self.entity_fc {
            entity_in = input.entities.unwrap_or_default().iter().map(|&x| x as f64).collect();
            entity = fc.forward(&entity_in).into_iter().map(f64::tanh).collect();
            fused.extend(&entity);
        }
        let mut page_in = Vec::new();
        let mut page = Vec::new();
        if let Some(fc) = &self.page_fc {
            page_in = vec![0.0; 2];
            if let Some(s) = input.page {
                page_in[s.index()] = 1.0;
            }
            page = fc.forward(&page_in).into_iter().map(f64::tanh).collect();
            fused.extend(&page);
        }
        let top = match &self.fusion {
            Some(fc) => fc.forward(&fused).into_iter().map(f64::tanh).collect(),
            None => fused.clone(),
        };
        let logits = self.output.forward(&top);
        let trace = Trace {
            fwd,
            bwd,
            recurrent_mask,
            dense_mask,
            recurrent,
            text,
            entity_in,
            entity,
            page_in,
            page,
            fused,
            top,
        };
        (logits, trace)
    }

    fn backward(&self, trace: &Trace, dlogits: &[f64], grad: &mut Network) {
        let dtop = self.output.backward(&trace.top, dlogits, &mut grad.output);
        let dfused = match &self.fusion {
            Some(fc) => {
                let dpre: Vec<f64> = dtop.iter().zip(&trace.top).map(|(g, y)| g * (1.0 - y * y)).collect();
                fc.backward(&trace.fused, &dpre, grad.fusion.as_mut().unwrap())
            }
            None => dtop,
        };
        let text_dim = self.arch.text_dim;
        let mut offset = text_dim;
        if let Some(fc) = &self.entity_fc {
            let n = trace.entity.len();
            let dpre: Vec<f64> = dfused[offset..offset + n]
                .iter()
                .zip(&trace.entity)
                .map(|(g, y)| g * (1.0 - y * y))
                .collect();
            fc.backward_params(&trace.entity_in, &dpre, grad.entity_fc.as_mut().unwrap());
            offset += n;
        }
        if let Some(fc) = &self.page_fc {
            let n = trace.page.len();
            let dpre: Vec<f64> = dfused[offset..offset + n]
                .iter()
                .zip(&trace.page)
                .map(|(g, y)| g * (1.0 - y * y))
                .collect();
            fc.backward_params(&trace.page_in, &dpre, grad.page_fc.as_mut().unwrap());
        }
        let mut dtext: Vec<f64> = dfused[..text_dim].to_vec();
        if let Some(m) = &trace.dense_mask {
            dtext.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
        }
        let dpre: Vec<f64> = dtext.iter().zip(&trace.text).map(|(g, y)| g * (1.0 - y * y)).collect();
        let mut drec = self.text_fc.backward(&trace.recurrent, &dpre, &mut grad.text_fc);
        if let Some(m) = &trace.recurrent_mask {
            drec.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
        }
        let h = self.arch.hidden;
        self.lstm_fwd.backward(&trace.fwd, &drec[..h], &mut grad.lstm_fwd);
        self.lstm_bwd.backward(&trace.bwd, &drec[h..], &mut grad.lstm_bwd);
    }

    fn sample_masks<R: Rng>(&self, input: &Input, rate: f64, rng: &mut R) -> Masks {
        let keep = 1.0 / (1.0 - rate);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect()
        };
        Masks {
            embedding: draw(input.text.length * self.arch.embedding_dim),
            recurrent: draw(2 * self.arch.hidden),
            dense: draw(self.arch.text_dim),
        }
    }

    /// Output probabilities with dropout disabled.
    pub fn predict(&self, input: &Input) -> Result<Vec<f64>, String> {
        self.check_input(input)?;
        let (logits, _) = self.forward_trace(input, None);
        Ok(activate(self.arch.head, &logits))
    }

    /// Mean loss over `batch` and its parameter gradients. `target_weights`
    /// scales each sigmoid target's loss (0 disables a target); it is ignored
    /// for softmax heads. With `dropout = Some((rate, rng))` a fresh mask is
    /// drawn per example.
    pub fn loss_and_grad<R: Rng>(
        &self,
        batch: &[(Input, &Target)],
        target_weights: &[f64],
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<(f64, Network), String> {
        let mut grad = Network::zeros(self.arch);
        let mut total = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for (input, target) in batch {
            self.check_input(input)?;
            let masks = match &mut dropout {
                Some((rate, rng)) if *rate > 0.0 => Some(self.sample_masks(input, *rate, *rng)),
                _ => None,
            };
            let (logits, trace) = self.forward_trace(input, masks.as_ref());
            let (loss, mut dlogits) = loss_and_dlogits(self.arch.head, &logits, target, target_weights)?;
            total += loss;
            dlogits.iter_mut().for_each(|g| *g *= scale);
            self.backward(&trace, &dlogits, &mut grad);
        }
        Ok((total * scale, grad))
    }

    /// Mean loss without gradients or dropout.
    pub fn loss(&self, batch: &[(Input, &Target)], target_weights: &[f64]) -> Result<f64, String> {
        let mut total = 0.0;
        for (input, target) in batch {
            self.check_input(input)?;
            let (logits, _) = self.forward_trace(input, None);
            total += loss_and_dlogits(self.arch.head, &logits, target, target_weights)?.0;
        }
        Ok(total / batch.len().max(1) as f64)
    }
}

pub fn activate(head: Head, logits: &[f64]) -> Vec<f64> {
    match head {
        Head::Softmax(_) => softmax(logits),
        Head::Sigmoid(_) => logits.iter().map(|&z| sigmoid(z)).collect(),
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn loss_and_dlogits(head: Head, logits: &[f64], target: &Target, weights: &[f64]) -> Result<(f64, Vec<f64>), String> {
    match (head, target) {
        (Head::Softmax(n), Target::Class(c)) => {
            if *c >= n {
                return Err(format!("class {c} out of range for {n} outputs"));
            }
            let p = softmax(logits);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            let mut d = p;
            d[*c] -= 1.0;
            Ok((lse - logits[*c], d))
        }
        (Head::Sigmoid(n), Target::Binary(y)) => {
            if y.len() != n || weights.len() != n {
                return Err(format!("expected {n} binary targets and weights"));
            }
            let mut loss = 0.0;
            let mut d = vec![0.0; n];
            for j in 0..n {
                let z = logits[j];
                loss += weights[j] * (z.max(0.0) - z * y[j] + (-z.abs()).exp().ln_1p());
                d[j] = weights[j] * (sigmoid(z) - y[j]);
            }
            Ok((loss, d))
        }
        _ => Err("target kind does not match the output head".into()),
    }
}
