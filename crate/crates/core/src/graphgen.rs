//! The two graph structures built per subject.
//!
//! * The filtered correlation graph keeps an undirected edge wherever the
//!   correlation strictly exceeds the threshold `c`.
//! * The optimal sampling graph scores every ordered ROI pair with a small
//!   network, `θ_ij = σ(FC₂(ReLU(FC₁(h_i ‖ h_j))))`, and relaxes the Bernoulli
//!   edge draw with logistic (difference-of-Gumbel) noise at temperature τ.
//!
//! Both adjacencies have zero diagonals; self-loops are added once during
//! normalization in [`crate::model`].

use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::error::{Error, Result};
use crate::preprocess::CorrMatrix;
use crate::tensor::{Matrix, Tape, Tensor};

/// Undirected 0/1 adjacency from thresholding a correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredAdjacency {
    pub values: Matrix,
    pub threshold_c: f64,
}

impl FilteredAdjacency {
    pub fn edge_count(&self) -> usize {
        let n = self.values.rows();
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.values[(i, j)] == 1.0)
            .count()
    }
}

pub fn validate_threshold(c: f64) -> Result<()> {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("threshold c must lie in (0, 1), got {c}")))
    }
}

/// `A_ij = 1` iff `V_ij > c` for `i ≠ j`; the diagonal is always 0.
pub fn build_filtered(v: &CorrMatrix, c: f64) -> Result<FilteredAdjacency> {
    validate_threshold(c)?;
    let v = v.values();
    let values = Matrix::from_fn(v.rows(), v.cols(), |i, j| {
        if i != j && v[(i, j)] > c {
            1.0
        } else {
            0.0
        }
    });
    Ok(FilteredAdjacency {
        values,
        threshold_c: c,
    })
}

/// Learnable pairwise edge scorer.
///
/// The node extractor is one linear map from the length-T signal to `d_h`
/// features with ReLU. The pair network maps `2·d_h → d_h → 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScorer {
    pub extractor_w: Matrix,
    pub extractor_b: Matrix,
    pub pair_w: Matrix,
    pub pair_b: Matrix,
    pub out_w: Matrix,
    pub out_b: Matrix,
}

impl EdgeScorer {
    pub fn zeros(t_steps: usize, d_h: usize) -> Self {
        EdgeScorer {
            extractor_w: Matrix::zeros(t_steps, d_h),
            extractor_b: Matrix::zeros(1, d_h),
            pair_w: Matrix::zeros(2 * d_h, d_h),
            pair_b: Matrix::zeros(1, d_h),
            out_w: Matrix::zeros(d_h, 1),
            out_b: Matrix::zeros(1, 1),
        }
    }

    pub fn t_steps(&self) -> usize {
        self.extractor_w.rows()
    }

    pub fn matrices(&self) -> [&Matrix; 6] {
        [
            &self.extractor_w,
            &self.extractor_b,
            &self.pair_w,
            &self.pair_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.extractor_w,
            &mut self.extractor_b,
            &mut self.pair_w,
            &mut self.pair_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    /// Registers every matrix on `tape` as a gradient-tracked leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> ScorerVars<'t> {
        ScorerVars {
            extractor_w: tape.param(self.extractor_w.clone()),
            extractor_b: tape.param(self.extractor_b.clone()),
            pair_w: tape.param(self.pair_w.clone()),
            pair_b: tape.param(self.pair_b.clone()),
            out_w: tape.param(self.out_w.clone()),
            out_b: tape.param(self.out_b.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScorerVars<'t> {
    pub extractor_w: Tensor<'t>,
    pub extractor_b: Tensor<'t>,
    pub pair_w: Tensor<'t>,
    pub pair_b: Tensor<'t>,
    pub out_w: Tensor<'t>,
    pub out_b: Tensor<'t>,
}

impl<'t> ScorerVars<'t> {
    pub fn tensors(&self) -> [Tensor<'t>; 6] {
        [
            self.extractor_w,
            self.extractor_b,
            self.pair_w,
            self.pair_b,
            self.out_w,
            self.out_b,
        ]
    }
}

/// Edge probabilities `θ` (N×N, entries in (0,1)) for one subject's series.
/// Entry `(i, j)` scores the ordered pair `h_i ‖ h_j`.
pub fn edge_probabilities<'t>(series: Tensor<'t>, scorer: &ScorerVars<'t>) -> Result<Tensor<'t>> {
    let (n, t) = series.shape();
    if scorer.extractor_w.shape().0 != t {
        return Err(Error::Contract(format!(
            "edge scorer expects {} time steps, subject has {t}",
            scorer.extractor_w.shape().0
        )));
    }
    let h = series
        .matmul(scorer.extractor_w)?
        .add_row(scorer.extractor_b)?
        .relu();
    let pairs = h.pair_concat();
    let hidden = pairs.matmul(scorer.pair_w)?.add_row(scorer.pair_b)?.relu();
    let scores = hidden.matmul(scorer.out_w)?.add_row(scorer.out_b)?;
    scores.sigmoid().reshape(n, n)
}

/// The two standard-Gumbel draws `g¹, g²` for one relaxed sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelNoise {
    pub g1: Matrix,
    pub g2: Matrix,
}

impl GumbelNoise {
    pub fn sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let gumbel = Gumbel::new(0.0, 1.0).expect("standard Gumbel parameters");
        let mut draw = |_, _| gumbel.sample(rng);
        let g1 = Matrix::from_fn(n, n, &mut draw);
        let g2 = Matrix::from_fn(n, n, &mut draw);
        GumbelNoise { g1, g2 }
    }

    /// Noise-free case: `g¹ = g² = 0`.
    pub fn zeros(n: usize) -> Self {
        GumbelNoise {
            g1: Matrix::zeros(n, n),
            g2: Matrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.g1.rows()
    }
}

pub fn off_diagonal_mask(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 })
}

/// Relaxed edge sample `σ((ln(θ/(1-θ)) + g¹ - g²) / τ)` with the diagonal
/// zeroed. Differentiable with respect to `theta`; the noise enters as
/// constants.
pub fn gumbel_sample<'t>(theta: Tensor<'t>, tau: f64, noise: &GumbelNoise) -> Result<Tensor<'t>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Validation(format!("temperature must be positive, got {tau}")));
    }
    let (n, m) = theta.shape();
    if n != m || noise.n() != n || noise.g2.shape() != (n, n) {
        return Err(Error::Dimension {
            op: "gumbel_sample",
            left: theta.shape(),
            right: noise.g1.shape(),
        });
    }
    let tape = theta.tape();
    let diff = tape.constant(noise.g1.zip_map(&noise.g2, |a, b| a - b));
    let mask = tape.constant(off_diagonal_mask(n));
    theta
        .logit()
        .add(diff)?
        .scale(1.0 / tau)
        .sigmoid()
        .mul(mask)
}

/// Relaxed (`soft`) and thresholded (`hard`) optimal-graph adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalAdjacency {
    pub soft: Matrix,
    pub hard: Matrix,
    pub tau: f64,
}

impl OptimalAdjacency {
    pub fn from_soft(soft: Matrix, tau: f64) -> Self {
        let hard = harden(&soft);
        OptimalAdjacency { soft, hard, tau }
    }

    /// Noise-free sample from `θ`, as used for evaluation and inspection.
    pub fn noise_free(theta: &Matrix, tau: f64) -> Result<Self> {
        let tape = Tape::new();
        let t = tape.constant(theta.clone());
        let soft = gumbel_sample(t, tau, &GumbelNoise::zeros(theta.rows()))?;
        let soft = soft.value().clone();
        Ok(Self::from_soft(soft, tau))
    }

    /// Directed edge count of the hard graph.
    pub fn edge_count(&self) -> usize {
        self.hard.as_slice().iter().filter(|&&x| x == 1.0).count()
    }
}

/// `1` where `soft ≥ 0.5`, else `0`; idempotent.
pub fn harden(soft: &Matrix) -> Matrix {
    soft.map(|x| if x >= 0.5 { 1.0 } else { 0.0 })
}
