//! Two parallel two-layer GCNs over the filtered and optimal graphs, CONCAT
//! pooling, and a two-layer classifier head producing one logit.

pub mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphgen::{
    build_filtered, edge_probabilities, gumbel_sample, harden, validate_threshold, EdgeScorer,
    GumbelNoise, ScorerVars,
};
use crate::preprocess::{pearson_correlation, BoldMatrix, CorrMatrix};
use crate::tensor::{Matrix, Tape, Tensor};

/// Which components take part in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    #[default]
    Full,
    /// Drops the filtered correlation graph branch.
    NoCorr,
    /// Drops the optimal sampling graph branch.
    NoOptim,
    /// Skips both GCNs and pools the raw correlation features twice.
    NoGconv,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Full,
        AblationMode::NoCorr,
        AblationMode::NoOptim,
        AblationMode::NoGconv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoCorr => "no-corr",
            AblationMode::NoOptim => "no-optim",
            AblationMode::NoGconv => "no-gconv",
        }
    }

    fn code(self) -> u8 {
        match self {
            AblationMode::Full => 0,
            AblationMode::NoCorr => 1,
            AblationMode::NoOptim => 2,
            AblationMode::NoGconv => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn uses_filtered_gcn(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::NoOptim)
    }

    pub fn uses_optimal_gcn(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::NoCorr)
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown mode `{s}` (expected full, no-corr, no-optim or no-gconv)"
                ))
            })
    }
}

/// Architecture record stored alongside the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n_rois: usize,
    pub t_steps: usize,
    pub d_h: usize,
    pub hidden: usize,
    pub out: usize,
    pub classifier_hidden: usize,
    pub threshold_c: f64,
    pub tau: f64,
    pub mode: AblationMode,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("n_rois", self.n_rois),
            ("t_steps", self.t_steps),
            ("d_h", self.d_h),
            ("hidden", self.hidden),
            ("out", self.out),
            ("classifier_hidden", self.classifier_hidden),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        validate_threshold(self.threshold_c)?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Validation(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    /// Length of the pooled vector fed to the classifier.
    pub fn classifier_input(&self) -> usize {
        let n = self.n_rois;
        match self.mode {
            AblationMode::Full => 2 * n * self.out,
            AblationMode::NoCorr | AblationMode::NoOptim => n * self.out,
            AblationMode::NoGconv => 2 * n * n,
        }
    }
}

/// `f(V, Ã) = ReLU(Ã · ReLU(Ã · V · W₀) · W₁)`, no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnStack {
    pub w0: Matrix,
    pub w1: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub hidden_w: Matrix,
    pub hidden_b: Matrix,
    pub out_w: Matrix,
    pub out_b: Matrix,
}

/// All learnable parameters.
///
/// Every component is always present so that modes share one layout; the
/// components a mode skips stay at their initial values and receive no
/// gradient. Declared parameter order (also the checkpoint order):
/// edge scorer (6), filtered GCN (2), optimal GCN (2), classifier (4).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub scorer: EdgeScorer,
    pub filtered_gcn: GcnStack,
    pub optimal_gcn: GcnStack,
    pub classifier: ClassifierHead,
}

pub const PARAMETER_MATRICES: usize = 14;

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl ModelState {
    /// Glorot-uniform weights and zero biases from `ChaCha8Rng(seed)`,
    /// drawn in declared parameter order.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let ModelConfig {
            n_rois: n,
            t_steps: t,
            d_h,
            hidden: h,
            out: f,
            classifier_hidden: hc,
            ..
        } = config;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(0);
        let scorer = EdgeScorer {
            extractor_w: glorot(&mut rng, t, d_h),
            extractor_b: Matrix::zeros(1, d_h),
            pair_w: glorot(&mut rng, 2 * d_h, d_h),
            pair_b: Matrix::zeros(1, d_h),
            out_w: glorot(&mut rng, d_h, 1),
            out_b: Matrix::zeros(1, 1),
        };
        let filtered_gcn = GcnStack {
            w0: glorot(&mut rng, n, h),
            w1: glorot(&mut rng, h, f),
        };
        let optimal_gcn = GcnStack {
            w0: glorot(&mut rng, n, h),
            w1: glorot(&mut rng, h, f),
        };
        let width = config.classifier_input();
        let classifier = ClassifierHead {
            hidden_w: glorot(&mut rng, width, hc),
            hidden_b: Matrix::zeros(1, hc),
            out_w: glorot(&mut rng, hc, 1),
            out_b: Matrix::zeros(1, 1),
        };
        Ok(ModelState {
            config,
            scorer,
            filtered_gcn,
            optimal_gcn,
            classifier,
        })
    }

    /// Expected shapes in declared order.
    pub fn expected_shapes(config: &ModelConfig) -> [(usize, usize); PARAMETER_MATRICES] {
        let ModelConfig {
            n_rois: n,
            t_steps: t,
            d_h,
            hidden: h,
            out: f,
            classifier_hidden: hc,
            ..
        } = *config;
        let w = config.classifier_input();
        [
            (t, d_h),
            (1, d_h),
            (2 * d_h, d_h),
            (1, d_h),
            (d_h, 1),
            (1, 1),
            (n, h),
            (h, f),
            (n, h),
            (h, f),
            (w, hc),
            (1, hc),
            (hc, 1),
            (1, 1),
        ]
    }

    pub fn parameters(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.scorer.matrices().into();
        out.extend([
            &self.filtered_gcn.w0,
            &self.filtered_gcn.w1,
            &self.optimal_gcn.w0,
            &self.optimal_gcn.w1,
            &self.classifier.hidden_w,
            &self.classifier.hidden_b,
            &self.classifier.out_w,
            &self.classifier.out_b,
        ]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.scorer.matrices_mut().into();
        out.extend([
            &mut self.filtered_gcn.w0,
            &mut self.filtered_gcn.w1,
            &mut self.optimal_gcn.w0,
            &mut self.optimal_gcn.w1,
            &mut self.classifier.hidden_w,
            &mut self.classifier.hidden_b,
            &mut self.classifier.out_w,
            &mut self.classifier.out_b,
        ]);
        out
    }

    /// Which parameter matrices the configured mode reads.
    pub fn active_mask(&self) -> [bool; PARAMETER_MATRICES] {
        let mode = self.config.mode;
        let scorer = mode.uses_optimal_gcn();
        let filt = mode.uses_filtered_gcn();
        [
            scorer, scorer, scorer, scorer, scorer, scorer, filt, filt, scorer, scorer, true,
            true, true, true,
        ]
    }

    /// Number of scalars in the parameters the configured mode uses.
    pub fn parameter_count(&self) -> usize {
        self.parameters()
            .iter()
            .zip(self.active_mask())
            .filter(|(_, active)| *active)
            .map(|(m, _)| m.len())
            .sum()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundModel<'t> {
        let p = |m: &Matrix| tape.param(m.clone());
        BoundModel {
            scorer: self.scorer.bind(tape),
            filtered: [p(&self.filtered_gcn.w0), p(&self.filtered_gcn.w1)],
            optimal: [p(&self.optimal_gcn.w0), p(&self.optimal_gcn.w1)],
            classifier: [
                p(&self.classifier.hidden_w),
                p(&self.classifier.hidden_b),
                p(&self.classifier.out_w),
                p(&self.classifier.out_b),
            ],
        }
    }

    /// Builds the per-subject inputs with this model's threshold.
    pub fn prepare(&self, subject: &BoldMatrix) -> Result<SubjectInput> {
        let (n, t) = subject.series.shape();
        if (n, t) != (self.config.n_rois, self.config.t_steps) {
            return Err(Error::Contract(format!(
                "model expects {}x{} subjects, {} is {n}x{t}",
                self.config.n_rois, self.config.t_steps, subject.subject_id
            )));
        }
        SubjectInput::new(subject, self.config.threshold_c)
    }

    /// Logit for one subject. `noise = None` selects the deterministic
    /// evaluation path (hardened noise-free optimal graph).
    pub fn logit(&self, input: &SubjectInput, noise: Option<&GumbelNoise>) -> Result<f64> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        Ok(forward(self, &bound, input, noise)?.item())
    }

    /// Loss and per-parameter gradients (declared order) for one subject.
    pub fn loss_and_gradients(
        &self,
        input: &SubjectInput,
        noise: Option<&GumbelNoise>,
    ) -> Result<(f64, Vec<Matrix>)> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let logit = forward(self, &bound, input, noise)?;
        let loss = logit.bce_with_logits(f64::from(input.label))?;
        loss.backward()?;
        let grads = bound
            .tensors()
            .iter()
            .map(|t| {
                t.grad().unwrap_or_else(|| {
                    let (r, c) = t.shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect();
        Ok((loss.item(), grads))
    }

    /// Noise-free edge probabilities `θ` for one subject.
    pub fn edge_probabilities(&self, series: &Matrix) -> Result<Matrix> {
        let tape = Tape::new();
        let scorer = self.scorer.bind(&tape);
        let theta = edge_probabilities(tape.constant(series.clone()), &scorer)?;
        let out = theta.value().clone();
        Ok(out)
    }
}

/// Parameters registered on one tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundModel<'t> {
    pub scorer: ScorerVars<'t>,
    pub filtered: [Tensor<'t>; 2],
    pub optimal: [Tensor<'t>; 2],
    pub classifier: [Tensor<'t>; 4],
}

impl<'t> BoundModel<'t> {
    pub fn tensors(&self) -> Vec<Tensor<'t>> {
        let mut out: Vec<_> = self.scorer.tensors().into();
        out.extend(self.filtered);
        out.extend(self.optimal);
        out.extend(self.classifier);
        out
    }
}

/// Everything about a subject that does not depend on learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectInput {
    pub series: Matrix,
    pub corr: CorrMatrix,
    /// Normalized filtered adjacency `Ã_filtered`.
    pub filtered_norm: Matrix,
    pub label: u8,
}

impl SubjectInput {
    pub fn new(subject: &BoldMatrix, threshold_c: f64) -> Result<Self> {
        let corr = pearson_correlation(subject)?;
        let filtered = build_filtered(&corr, threshold_c)?;
        Ok(SubjectInput {
            series: subject.series.clone(),
            filtered_norm: normalize_adjacency_matrix(&filtered.values)?,
            corr,
            label: subject.label,
        })
    }
}

/// `Ã = D̂^{-1/2} (A + I) D̂^{-1/2}` with `D̂` the row sums of `A + I`.
/// Differentiable in `a`; row sums are used as degrees for directed inputs too.
pub fn normalize_adjacency<'t>(a: Tensor<'t>) -> Result<Tensor<'t>> {
    let (n, m) = a.shape();
    if n != m {
        return Err(Error::Dimension {
            op: "normalize_adjacency",
            left: (n, m),
            right: (n, n),
        });
    }
    let tape = a.tape();
    let with_loops = a.add(tape.constant(Matrix::identity(n)))?;
    let inv_sqrt_deg = with_loops.row_sum().powf(-0.5);
    let scale = inv_sqrt_deg.matmul(inv_sqrt_deg.transpose())?;
    with_loops.mul(scale)
}

pub fn normalize_adjacency_matrix(a: &Matrix) -> Result<Matrix> {
    if a.as_slice().iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Validation(
            "adjacency entries must be non-negative".into(),
        ));
    }
    let tape = Tape::new();
    let out = normalize_adjacency(tape.constant(a.clone()))?;
    let v = out.value().clone();
    Ok(v)
}

/// Two-layer GCN; row `i` of the result is node `i`'s embedding.
pub fn gcn_forward<'t>(
    features: Tensor<'t>,
    a_norm: Tensor<'t>,
    w0: Tensor<'t>,
    w1: Tensor<'t>,
) -> Result<Tensor<'t>> {
    let first = a_norm.matmul(features)?.matmul(w0)?.relu();
    Ok(a_norm.matmul(first)?.matmul(w1)?.relu())
}

/// Row-major flattening of node embeddings into a `1×(N·F)` vector.
pub fn concat_pool<'t>(node_emb: Tensor<'t>) -> Result<Tensor<'t>> {
    let (n, f) = node_emb.shape();
    node_emb.reshape(1, n * f)
}

/// Full forward pass to a `1×1` logit.
///
/// With `noise`, the optimal branch uses the relaxed sample as weighted
/// edges and gradients flow into the edge scorer. Without noise it uses the
/// hardened noise-free graph as a constant.
pub fn forward<'t>(
    state: &ModelState,
    params: &BoundModel<'t>,
    input: &SubjectInput,
    noise: Option<&GumbelNoise>,
) -> Result<Tensor<'t>> {
    let cfg = &state.config;
    let n = cfg.n_rois;
    if input.series.shape() != (n, cfg.t_steps) || input.corr.n() != n {
        return Err(Error::Contract(format!(
            "model expects {n}x{} inputs, got {:?}",
            cfg.t_steps,
            input.series.shape()
        )));
    }
    let tape = params.classifier[0].tape();
    let features = tape.constant(input.corr.values().clone());

    let filtered = || -> Result<Tensor<'t>> {
        let a = tape.constant(input.filtered_norm.clone());
        concat_pool(gcn_forward(features, a, params.filtered[0], params.filtered[1])?)
    };
    let optimal = || -> Result<Tensor<'t>> {
        let series = tape.constant(input.series.clone());
        let theta = edge_probabilities(series, &params.scorer)?;
        let a_norm = match noise {
            Some(noise) => normalize_adjacency(gumbel_sample(theta, cfg.tau, noise)?)?,
            None => {
                let soft = gumbel_sample(theta, cfg.tau, &GumbelNoise::zeros(n))?;
                let hard = harden(&soft.value());
                tape.constant(normalize_adjacency_matrix(&hard)?)
            }
        };
        concat_pool(gcn_forward(features, a_norm, params.optimal[0], params.optimal[1])?)
    };

    let pooled = match cfg.mode {
        AblationMode::Full => filtered()?.concat_cols(optimal()?)?,
        AblationMode::NoCorr => optimal()?,
        AblationMode::NoOptim => filtered()?,
        AblationMode::NoGconv => {
            let raw = concat_pool(features)?;
            raw.concat_cols(raw)?
        }
    };
    let [hw, hb, ow, ob] = params.classifier;
    if pooled.shape().1 != hw.shape().0 {
        return Err(Error::Dimension {
            op: "classifier",
            left: pooled.shape(),
            right: hw.shape(),
        });
    }
    let hidden = pooled.matmul(hw)?.add_row(hb)?.relu();
    hidden.matmul(ow)?.add_row(ob)
}

#[cfg(test)]
mod tests;
