//! Binary soft-margin SVM: kernels, training, prediction and model
//! persistence.
//!
//! Training minimizes `0.5*||w||^2 + C * sum(max(0, 1 - y*(w.x + b)))`.
//! The solver is deterministic dual coordinate ascent on the usual dual
//! with the maximal-violating-pair rule, which handles every kernel and
//! recovers the hard-margin solution as C grows on separable data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("training data must contain at least one example of each label")]
    SingleClass,
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite feature value in example {example}")]
    NonFiniteFeature { example: usize },
    #[error("label {0} is not +1 or -1")]
    InvalidLabel(f64),
    #[error("C must be a positive finite number, got {0}")]
    InvalidC(f64),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("objective needs at least one example")]
    EmptyData,
    #[error("failed to read or write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid model JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("model file rejected: {0}")]
    InvalidModel(String),
}

/// Kernel family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    Polynomial { degree: u32, coef0: f64 },
    Rbf { gamma: f64 },
}

impl KernelSpec {
    fn validate(&self) -> Result<(), SvmError> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, coef0 } => {
                if degree == 0 {
                    Err(SvmError::InvalidKernel("polynomial degree must be >= 1".into()))
                } else if !coef0.is_finite() {
                    Err(SvmError::InvalidKernel(format!("coef0 {coef0} is not finite")))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Rbf { gamma } => {
                if gamma.is_finite() && gamma > 0.0 {
                    Ok(())
                } else {
                    Err(SvmError::InvalidKernel(format!(
                        "rbf gamma must be positive and finite, got {gamma}"
                    )))
                }
            }
        }
    }
}

/// Evaluate a kernel on two equal-length feature vectors.
pub fn kernel_eval(kernel: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64, SvmError> {
    kernel.validate()?;
    if a.len() != b.len() {
        return Err(SvmError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    Ok(match *kernel {
        KernelSpec::Linear => dot(a, b),
        KernelSpec::Polynomial { degree, coef0 } => (dot(a, b) + coef0).powi(degree as i32),
        KernelSpec::Rbf { gamma } => {
            let d2 = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
            (-gamma * d2).exp()
        }
    })
}

/// One training example; `y` is +1 or -1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl LabeledExample {
    pub fn new(x: Vec<f64>, y: f64) -> Result<Self, SvmError> {
        if y != 1.0 && y != -1.0 {
            return Err(SvmError::InvalidLabel(y));
        }
        Ok(LabeledExample { x, y })
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// One epoch is `m` pair updates; training stops after this many epochs.
    pub max_epochs: usize,
    /// Relative objective-change stop between epoch checkpoints.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            tolerance: 1e-6,
        }
    }
}

/// KKT-gap threshold at which iteration stops outright.
const GAP_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportVector {
    pub x: Vec<f64>,
    pub y: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    /// Final primal objective on the training set.
    pub objective: f64,
    /// Number of pair updates performed.
    pub iterations: usize,
}

/// A trained binary classifier. `w` is populated for the linear kernel
/// only and always equals `sum(alpha_i * y_i * x_i)` over the stored
/// support vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    #[serde(rename = "C")]
    pub c: f64,
    pub w: Option<Vec<f64>>,
    pub b: f64,
    pub support_vectors: Vec<SupportVector>,
    pub diagnostics: TrainingDiagnostics,
    dimension: usize,
}

fn validate_training_data(data: &[LabeledExample]) -> Result<usize, SvmError> {
    let mut pos = false;
    let mut neg = false;
    let dim = data.first().map(|e| e.x.len()).unwrap_or(0);
    for (i, example) in data.iter().enumerate() {
        match example.y {
            1.0 => pos = true,
            -1.0 => neg = true,
            other => return Err(SvmError::InvalidLabel(other)),
        }
        if example.x.len() != dim {
            return Err(SvmError::DimensionMismatch {
                expected: dim,
                found: example.x.len(),
            });
        }
        if example.x.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFiniteFeature { example: i });
        }
    }
    if !(pos && neg) {
        return Err(SvmError::SingleClass);
    }
    Ok(dim)
}

/// Train a soft-margin SVM.
///
/// Dual coordinate ascent: repeatedly pick the maximal violating pair
/// (i from the "can increase" set, j from the "can decrease" set, by the
/// projected gradient), solve the two-variable subproblem exactly, and
/// stop when the KKT gap closes or the objective stalls. No randomness
/// is involved, so retraining on identical input reproduces the model
/// bit for bit.
pub fn train(
    data: &[LabeledExample],
    kernel: &KernelSpec,
    c: f64,
    config: &TrainConfig,
) -> Result<SvmModel, SvmError> {
    kernel.validate()?;
    if !(c.is_finite() && c > 0.0) {
        return Err(SvmError::InvalidC(c));
    }
    let dim = validate_training_data(data)?;
    let m = data.len();

    // Gram matrix of the kernel; desk-scale inputs keep this small.
    let mut k = vec![0.0f64; m * m];
    for i in 0..m {
        for j in 0..=i {
            let v = kernel_eval(kernel, &data[i].x, &data[j].x)?;
            k[i * m + j] = v;
            k[j * m + i] = v;
        }
    }
    let y: Vec<f64> = data.iter().map(|e| e.y).collect();

    let mut alpha = vec![0.0f64; m];
    // G_i = d(dual)/d(alpha_i) = sum_j alpha_j y_i y_j K_ij - 1
    let mut g = vec![-1.0f64; m];

    let mut iterations = 0usize;
    let mut prev_objective = f64::INFINITY;

    'epochs: for _ in 0..config.max_epochs {
        for _ in 0..m {
            // Maximal violating pair on -y*G.
            let mut i_best: Option<(usize, f64)> = None;
            let mut j_best: Option<(usize, f64)> = None;
            for t in 0..m {
                let v = -y[t] * g[t];
                let can_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
                let can_down = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
                if can_up && i_best.map_or(true, |(_, best)| v > best) {
                    i_best = Some((t, v));
                }
                if can_down && j_best.map_or(true, |(_, best)| v < best) {
                    j_best = Some((t, v));
                }
            }
            let (Some((i, up)), Some((j, low))) = (i_best, j_best) else {
                break 'epochs;
            };
            if up - low < GAP_EPSILON {
                break 'epochs;
            }

            // Two-variable subproblem along alpha_i += y_i*t, alpha_j -= y_j*t.
            let eta = k[i * m + i] + k[j * m + j] - 2.0 * k[i * m + j];
            let slope = up - low; // -d(dual)/dt at t = 0, always > 0 here
            let mut t_max = f64::INFINITY;
            t_max = t_max.min(if y[i] > 0.0 { c - alpha[i] } else { alpha[i] });
            t_max = t_max.min(if y[j] > 0.0 { alpha[j] } else { c - alpha[j] });
            let t = if eta > 1e-12 {
                (slope / eta).min(t_max)
            } else {
                t_max
            };
            if !(t > 0.0) || !t.is_finite() {
                break 'epochs;
            }
            alpha[i] += y[i] * t;
            alpha[j] -= y[j] * t;
            // G_r += Q_ri*d(alpha_i) + Q_rj*d(alpha_j), which collapses to
            // y_r * t * (K_ri - K_rj).
            for r in 0..m {
                g[r] += y[r] * t * (k[r * m + i] - k[r * m + j]);
            }
            iterations += 1;
        }

        let objective = primal_objective(&alpha, &g, &y, c);
        let rel_change = (prev_objective - objective).abs() / objective.abs().max(1.0);
        if rel_change < config.tolerance {
            break;
        }
        prev_objective = objective;
    }

    // Bias from the KKT conditions: free vectors pin it exactly, otherwise
    // take the midpoint of the feasible interval.
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut up_bound = f64::NEG_INFINITY;
    let mut low_bound = f64::INFINITY;
    for t in 0..m {
        let v = -y[t] * g[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += v;
            free_count += 1;
        }
        let can_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
        let can_down = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
        if can_up {
            up_bound = up_bound.max(v);
        }
        if can_down {
            low_bound = low_bound.min(v);
        }
    }
    let b = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        (up_bound + low_bound) / 2.0
    };

    let support_vectors: Vec<SupportVector> = (0..m)
        .filter(|&i| alpha[i] > 0.0)
        .map(|i| SupportVector {
            x: data[i].x.clone(),
            y: y[i],
            alpha: alpha[i],
        })
        .collect();
    let w = match kernel {
        KernelSpec::Linear => {
            let mut w = vec![0.0; dim];
            for sv in &support_vectors {
                for (wd, xd) in w.iter_mut().zip(&sv.x) {
                    *wd += sv.alpha * sv.y * xd;
                }
            }
            Some(w)
        }
        _ => None,
    };

    let mut model = SvmModel {
        kernel: kernel.clone(),
        c,
        w,
        b,
        support_vectors,
        diagnostics: TrainingDiagnostics {
            objective: 0.0,
            iterations,
        },
        dimension: dim,
    };
    model.diagnostics.objective = hinge_objective(&model, data, c)?;
    Ok(model)
}

/// Primal objective of the current dual iterate (used for the stall check).
fn primal_objective(alpha: &[f64], g: &[f64], y: &[f64], c: f64) -> f64 {
    let m = alpha.len();
    // ||w||^2 = sum_ij alpha_i alpha_j y_i y_j K_ij = alpha . (G + 1)
    let norm2: f64 = (0..m).map(|i| alpha[i] * (g[i] + 1.0)).sum();
    // Interim bias: midpoint rule as in the final model.
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    for t in 0..m {
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += -y[t] * g[t];
            free_count += 1;
        }
    }
    let b = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        0.0
    };
    let mut hinge = 0.0;
    for i in 0..m {
        // f(x_i) = sum_j alpha_j y_j K_ij + b = y_i (G_i + 1) + b
        let f = y[i] * (g[i] + 1.0) + b;
        hinge += (1.0 - y[i] * f).max(0.0);
    }
    0.5 * norm2 + c * hinge
}

impl SvmModel {
    /// Signed distance functional `w.x + b` (linear) or the kernel
    /// expansion `sum(alpha_i y_i K(x_i, x)) + b`.
    pub fn decision_value(&self, x: &[f64]) -> Result<f64, SvmError> {
        if x.len() != self.dimension {
            return Err(SvmError::DimensionMismatch {
                expected: self.dimension,
                found: x.len(),
            });
        }
        if let Some(w) = &self.w {
            return Ok(w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b);
        }
        let mut sum = self.b;
        for sv in &self.support_vectors {
            sum += sv.alpha * sv.y * kernel_eval(&self.kernel, &sv.x, x)?;
        }
        Ok(sum)
    }

    /// Hard label; a decision value of exactly zero maps to +1.
    pub fn predict(&self, x: &[f64]) -> Result<f64, SvmError> {
        Ok(if self.decision_value(x)? >= 0.0 {
            1.0
        } else {
            -1.0
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn save(&self, path: &Path) -> Result<(), SvmError> {
        let text = serde_json::to_string_pretty(self).expect("model serialization cannot fail");
        fs::write(path, text).map_err(|source| SvmError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SvmError> {
        let text = fs::read_to_string(path).map_err(|source| SvmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let model: SvmModel = serde_json::from_str(&text).map_err(|source| SvmError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        model.kernel.validate()?;
        if !(model.c.is_finite() && model.c > 0.0) {
            return Err(SvmError::InvalidModel(format!("C = {}", model.c)));
        }
        for sv in &model.support_vectors {
            if sv.x.len() != model.dimension {
                return Err(SvmError::InvalidModel(
                    "support vector dimension differs from model dimension".into(),
                ));
            }
            if !sv.alpha.is_finite() || sv.alpha < 0.0 || sv.alpha > model.c * (1.0 + 1e-9) {
                return Err(SvmError::InvalidModel(format!(
                    "dual coefficient {} outside [0, C]",
                    sv.alpha
                )));
            }
            if sv.y != 1.0 && sv.y != -1.0 {
                return Err(SvmError::InvalidModel(format!("label {}", sv.y)));
            }
        }
        if let Some(w) = &model.w {
            if w.len() != model.dimension {
                return Err(SvmError::InvalidModel(
                    "weight vector dimension differs from model dimension".into(),
                ));
            }
        }
        Ok(model)
    }
}

/// Soft-margin primal objective of `model` on `data`:
/// `0.5*||w||^2 + C * sum(hinge)`. For kernel models `||w||^2` is the
/// quadratic form over the support expansion.
pub fn hinge_objective(model: &SvmModel, data: &[LabeledExample], c: f64) -> Result<f64, SvmError> {
    if data.is_empty() {
        return Err(SvmError::EmptyData);
    }
    let norm2 = match &model.w {
        Some(w) => w.iter().map(|v| v * v).sum::<f64>(),
        None => {
            let svs = &model.support_vectors;
            let mut total = 0.0;
            for a in svs {
                for b in svs {
                    total +=
                        a.alpha * b.alpha * a.y * b.y * kernel_eval(&model.kernel, &a.x, &b.x)?;
                }
            }
            total
        }
    };
    let mut hinge = 0.0;
    for example in data {
        let f = model.decision_value(&example.x)?;
        hinge += (1.0 - example.y * f).max(0.0);
    }
    Ok(0.5 * norm2 + c * hinge)
}
