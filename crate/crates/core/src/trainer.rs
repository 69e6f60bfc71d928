//! Maximum-likelihood training of learnable rule groups.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::Serialize;
use thiserror::Error;

use crate::circuit::{compile, Circuit, Gradients};
use crate::grammar::{Grammar, LearnableParams};
use crate::leaf::{ParamError, Params};
use crate::oracle::{OracleError, OracleRegistry, OracleSession, TrainItem};
use crate::resolver::{derive, DerivationForest, Goal, ResolveError};

/// Weight given to a branch never seen by the closed-form fit.
pub const UNSEEN_BRANCH_WEIGHT: f64 = -50.0;

#[derive(Clone, Debug)]
pub struct TrainingExample {
    /// A goal with known tokens.
    pub goal: Goal,
    /// Target probability in (0, 1].
    pub target: f64,
}

impl TrainingExample {
    pub fn new(goal: Goal) -> Self {
        TrainingExample { goal, target: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    GradientDescent,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// `None` trains on the full dataset each step.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub kind: OptimizerKind,
    pub seed: u64,
    /// Send supervised labels derived from oracle gradients to external
    /// handles after every step.
    pub fine_tune_oracles: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            batch_size: None,
            epochs: 100,
            kind: OptimizerKind::adam(),
            seed: 0,
            fine_tune_oracles: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("example {index} has probability zero under the grammar")]
    Underivable { index: usize },
    #[error("example {index} has target {target} outside (0, 1]")]
    BadTarget { index: usize, target: f64 },
    #[error("no trainable examples")]
    EmptyDataset,
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize, trace: Vec<EpochLoss> },
    #[error("example {index} has {count} derivations; the closed form needs exactly one")]
    Ambiguous { index: usize, count: u128 },
    #[error("example {index}: {source}")]
    Resolve { index: usize, source: ResolveError },
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FitReport {
    pub trace: Vec<EpochLoss>,
    /// Indices of examples skipped because they cannot be derived.
    pub quarantined: Vec<usize>,
}

impl FitReport {
    /// Writes the loss trace as line-delimited JSON records.
    pub fn write_trace(&self, mut out: impl Write) -> std::io::Result<()> {
        for rec in &self.trace {
            writeln!(out, "{}", serde_json::to_string(rec)?)?;
        }
        Ok(())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|e| e.loss)
    }
}

/// An example's forest and circuit, built once and reused across epochs.
pub struct Prepared {
    pub forest: DerivationForest,
    pub circuit: Circuit,
    pub target: f64,
}

pub fn prepare(index: usize, example: &TrainingExample, g: &Grammar) -> Result<Prepared, TrainError> {
    if !(example.target > 0.0 && example.target <= 1.0) {
        return Err(TrainError::BadTarget { index, target: example.target });
    }
    let forest = derive(&example.goal, g).map_err(|source| TrainError::Resolve { index, source })?;
    if forest.is_empty() {
        return Err(TrainError::Underivable { index });
    }
    let circuit = compile(&forest);
    Ok(Prepared { forest, circuit, target: example.target })
}

/// Loss and its gradient for a prepared example.
pub fn prepared_loss(p: &Prepared, params: &Params) -> Result<(f64, Gradients), ParamError> {
    let vals = p.circuit.leaf_values(params)?;
    let log_p = p.circuit.sum_product(&vals).root_log_value(&p.circuit);
    let t = p.target;
    let (loss, dl_dlogp) = if t == 1.0 {
        (-log_p, -1.0)
    } else {
        let prob = log_p.exp();
        let loss = -(t * log_p + (1.0 - t) * (-prob).ln_1p());
        (loss, -t + (1.0 - t) * prob / (1.0 - prob))
    };
    let leaf_grads: Vec<f64> = p.circuit.backward_log(&vals).into_iter().map(|g| g * dl_dlogp).collect();
    Ok((loss, p.circuit.chain(&leaf_grads, params)))
}

/// Negative log-likelihood of one example, with gradients.
pub fn loss_nll(
    example: &TrainingExample,
    g: &Grammar,
    registry: &OracleRegistry,
) -> Result<(f64, Gradients), TrainError> {
    let p = prepare(0, example, g)?;
    let session = OracleSession::new(registry);
    let mut groups = g.learnable_groups.clone();
    init_groups(std::slice::from_ref(&p), &mut groups, &session)?;
    Ok(prepared_loss(&p, &Params::new(&groups, Some(&session)))?)
}

/// Adds zero-initialised groups for learned oracles that have none yet.
fn init_groups(prepared: &[Prepared], groups: &mut LearnableParams, session: &OracleSession) -> Result<(), TrainError> {
    let snapshot = groups.clone();
    let params = Params::new(&snapshot, Some(session));
    for p in prepared {
        for leaf in p.circuit.leaves() {
            if let Some((group, _, size)) = params.learnable_source(leaf) {
                groups.entry(group).or_insert_with(|| vec![0.0; size]);
            }
        }
    }
    Ok(())
}

fn add_into(acc: &mut BTreeMap<String, Vec<f64>>, g: &BTreeMap<String, Vec<f64>>, scale: f64) {
    for (k, v) in g {
        let e = acc.entry(k.clone()).or_insert_with(|| vec![0.0; v.len()]);
        e.iter_mut().zip(v).for_each(|(a, b)| *a += scale * b);
    }
}

/// One supervised label per oracle request: the entry whose probability the
/// loss most wants to raise (1-based).
pub fn supervised_labels(grads: &Gradients) -> HashMap<String, Vec<TrainItem>> {
    let mut out: HashMap<String, Vec<TrainItem>> = HashMap::new();
    for (key, g) in &grads.oracle {
        let best = g
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        out.entry(key.oracle_id.clone())
            .or_default()
            .push(TrainItem { prompt: key.prompt.clone(), target_index: best + 1 });
    }
    out
}

struct Adam {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: i32,
}

/// Gradient-based fit of every learnable group, including groups standing
/// in for learned oracles. `observe` sees the parameters after each epoch.
pub fn fit(
    dataset: &[TrainingExample],
    g: &mut Grammar,
    registry: &OracleRegistry,
    cfg: &OptimizerConfig,
    observe: &mut dyn FnMut(usize, &LearnableParams),
) -> Result<FitReport, TrainError> {
    if cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(TrainError::BadLearningRate(cfg.learning_rate));
    }
    let mut report = FitReport::default();
    let mut prepared = Vec::new();
    for (i, ex) in dataset.iter().enumerate() {
        match prepare(i, ex, g) {
            Ok(p) => prepared.push(p),
            Err(TrainError::Underivable { index }) => report.quarantined.push(index),
            Err(e) => return Err(e),
        }
    }
    if prepared.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let session = OracleSession::new(registry);
    init_groups(&prepared, &mut g.learnable_groups, &session)?;

    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let batch = cfg.batch_size.unwrap_or(prepared.len()).clamp(1, prepared.len());
    let mut adam = Adam { m: BTreeMap::new(), v: BTreeMap::new(), t: 0 };

    for epoch in 0..cfg.epochs {
        if batch < prepared.len() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut grad: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut oracle_grads = Gradients::default();
            {
                let params = Params::new(&g.learnable_groups, Some(&session));
                for &i in chunk {
                    let (loss, gr) = prepared_loss(&prepared[i], &params)?;
                    epoch_loss += loss;
                    add_into(&mut grad, &gr.learnable, 1.0 / chunk.len() as f64);
                    if cfg.fine_tune_oracles {
                        for (k, v) in gr.oracle {
                            let e = oracle_grads.oracle.entry(k).or_insert_with(|| vec![0.0; v.len()]);
                            e.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            if !epoch_loss.is_finite() {
                report.trace.push(EpochLoss { epoch, loss: epoch_loss });
                return Err(TrainError::Diverged { epoch, trace: report.trace });
            }
            step(&mut g.learnable_groups, &grad, cfg, &mut adam);
            if cfg.fine_tune_oracles {
                registry.train(&supervised_labels(&oracle_grads))?;
            }
        }
        let mean = epoch_loss / prepared.len() as f64;
        report.trace.push(EpochLoss { epoch, loss: mean });
        observe(epoch, &g.learnable_groups);
    }
    Ok(report)
}

fn step(groups: &mut LearnableParams, grad: &BTreeMap<String, Vec<f64>>, cfg: &OptimizerConfig, adam: &mut Adam) {
    let lr = cfg.learning_rate;
    match cfg.kind {
        OptimizerKind::GradientDescent => {
            for (k, gv) in grad {
                if let Some(w) = groups.get_mut(k) {
                    w.iter_mut().zip(gv).for_each(|(w, g)| *w -= lr * g);
                }
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            adam.t += 1;
            let c1 = 1.0 - beta1.powi(adam.t);
            let c2 = 1.0 - beta2.powi(adam.t);
            for (k, gv) in grad {
                let Some(w) = groups.get_mut(k) else { continue };
                let m = adam.m.entry(k.clone()).or_insert_with(|| vec![0.0; gv.len()]);
                let v = adam.v.entry(k.clone()).or_insert_with(|| vec![0.0; gv.len()]);
                for j in 0..gv.len() {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * gv[j];
                    v[j] = beta2 * v[j] + (1.0 - beta2) * gv[j] * gv[j];
                    w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Closed-form maximum-likelihood weights when every example has exactly
/// one derivation: each group's branch probabilities are its empirical
/// branch frequencies.
#[derive(Clone, Debug)]
pub struct ClosedForm {
    pub groups: LearnableParams,
    /// Mean negative log-likelihood of the dataset under `groups`.
    pub nll: f64,
}

pub fn multinomial_mle(
    dataset: &[TrainingExample],
    g: &Grammar,
    registry: &OracleRegistry,
) -> Result<ClosedForm, TrainError> {
    let session = OracleSession::new(registry);
    let mut prepared = Vec::new();
    for (i, ex) in dataset.iter().enumerate() {
        let p = prepare(i, ex, g)?;
        let count = p.forest.count_derivations();
        if count != 1 {
            return Err(TrainError::Ambiguous { index: i, count });
        }
        prepared.push(p);
    }
    if prepared.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut groups = g.learnable_groups.clone();
    init_groups(&prepared, &mut groups, &session)?;
    let mut counts: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    {
        let params = Params::new(&groups, Some(&session));
        for p in &prepared {
            let (d, _) = p.forest.reconstruct(p.forest.root_answers()[0], &|_, _| 0).expect("one derivation");
            for s in &d.steps {
                if let Some((group, branch, _)) = params.learnable_source(&s.leaf) {
                    let n = groups[&group].len();
                    counts.entry(group).or_insert_with(|| vec![0.0; n])[branch] += 1.0;
                }
            }
        }
    }
    for (group, c) in counts {
        let total: f64 = c.iter().sum();
        let w = c
            .iter()
            .map(|&k| if k > 0.0 { (k / total).ln() } else { UNSEEN_BRANCH_WEIGHT })
            .collect();
        groups.insert(group, w);
    }
    let params = Params::new(&groups, Some(&session));
    let mut nll = 0.0;
    for p in &prepared {
        nll += prepared_loss(p, &params)?.0;
    }
    Ok(ClosedForm { nll: nll / prepared.len() as f64, groups })
}

/// Mean negative log-likelihood of a dataset under the grammar's current
/// parameters. Underivable examples are an error.
pub fn dataset_nll(dataset: &[TrainingExample], g: &Grammar, registry: &OracleRegistry) -> Result<f64, TrainError> {
    let session = OracleSession::new(registry);
    let mut prepared = Vec::new();
    for (i, ex) in dataset.iter().enumerate() {
        prepared.push(prepare(i, ex, g)?);
    }
    if prepared.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut groups = g.learnable_groups.clone();
    init_groups(&prepared, &mut groups, &session)?;
    let params = Params::new(&groups, Some(&session));
    let mut nll = 0.0;
    for p in &prepared {
        nll += prepared_loss(p, &params)?.0;
    }
    Ok(nll / prepared.len() as f64)
}
