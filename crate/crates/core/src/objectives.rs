//! Contrastive objectives, distribution-similarity fusion and the classifier head.

use rand::Rng;
use serde::Serialize;

use crate::error::{FsruError, Result};
use crate::graph::{Graph, Var};
use crate::params::{scaled_uniform, Parameters};
use crate::tensor::Tensor;

/// A contrastive term and whether it was skipped for lack of samples.
#[derive(Clone, Copy, Debug)]
pub struct ContrastiveTerm {
    pub loss: Var,
    /// Set when the batch had fewer than two samples and the term is 0.
    pub degenerate: bool,
}

/// Pairing rule for the supervised term's non-rumor anchors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisedPairing {
    /// Positives are same-class samples for both classes.
    #[default]
    WithinClass,
    /// Class-0 anchors are paired with class-1 samples, as the loss formula
    /// is literally written.
    Literal,
}

fn zero_term(g: &mut Graph) -> ContrastiveTerm {
    ContrastiveTerm {
        loss: g.constant(Tensor::scalar(0.0)),
        degenerate: true,
    }
}

/// Cosine-similarity logits `norm(a)·norm(b)ᵀ / τ` for `[B, d]` inputs.
fn similarity(g: &mut Graph, a: Var, b: Var, tau: f64) -> Result<Var> {
    let na = g.normalize_rows(a);
    let nb = if a == b { na } else { g.normalize_rows(b) };
    let nbt = g.transpose(nb)?;
    let sims = g.matmul(na, nbt)?;
    Ok(g.scale(sims, 1.0 / tau))
}

/// Per-entry weights of `log p(anchor → positive)` for the supervised term.
///
/// Entry `(a, p)` carries `−1/|R_c|` where `c` is the anchor's class, for
/// every positive `p ≠ a` admitted by `pairing`.
pub fn supervised_weights(labels: &[u8], pairing: SupervisedPairing) -> Vec<f64> {
    let b = labels.len();
    let count = |c: u8| labels.iter().filter(|&&l| l == c).count() as f64;
    let (n0, n1) = (count(0), count(1));
    let mut w = vec![0.0; b * b];
    for a in 0..b {
        for p in 0..b {
            if a == p {
                continue;
            }
            let positive_class = match (labels[a], pairing) {
                (1, _) => 1,
                (_, SupervisedPairing::WithinClass) => 0,
                (_, SupervisedPairing::Literal) => 1,
            };
            if labels[p] == positive_class {
                let size = if labels[a] == 1 { n1 } else { n0 };
                w[a * b + p] = -1.0 / size;
            }
        }
    }
    w
}

/// Fully-supervised intra-modal term, summed over both modalities.
///
/// Each pairwise term is `−log(e^{cos(a,p)/τ} / Σ_{q≠a} e^{cos(a,q)/τ})`.
pub fn l_full(
    g: &mut Graph,
    text: Var,
    image: Var,
    labels: &[u8],
    tau: f64,
    pairing: SupervisedPairing,
) -> Result<ContrastiveTerm> {
    let b = labels.len();
    if b < 2 {
        log::warn!("supervised contrastive term needs at least two samples, got {b}");
        return Ok(zero_term(g));
    }
    let mask: Vec<bool> = (0..b * b).map(|i| i / b != i % b).collect();
    let weights = g.constant(Tensor::new(&[b, b], supervised_weights(labels, pairing))?);
    let mut total: Option<Var> = None;
    for z in [text, image] {
        let sims = similarity(g, z, z, tau)?;
        let logp = g.masked_log_softmax(sims, mask.clone())?;
        let weighted = g.mul(logp, weights)?;
        let term = g.sum(weighted);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(ContrastiveTerm {
        loss: total.expect("two modalities"),
        degenerate: false,
    })
}

/// Self-supervised inter-modal InfoNCE in both directions, scaled by `1/(2B)`.
pub fn l_self(g: &mut Graph, text: Var, image: Var, tau: f64) -> Result<ContrastiveTerm> {
    let b = g.shape(text)[0];
    if b < 2 {
        log::warn!("inter-modal contrastive term needs at least two samples, got {b}");
        return Ok(zero_term(g));
    }
    let diag = Tensor::from_fn(&[b, b], |i| if i / b == i % b { -1.0 / (2 * b) as f64 } else { 0.0 });
    let diag = g.constant(diag);
    let t2v = similarity(g, text, image, tau)?;
    let v2t = g.transpose(t2v)?;
    let lp_t = g.log_softmax(t2v);
    let lp_v = g.log_softmax(v2t);
    let both = g.add(lp_t, lp_v)?;
    let weighted = g.mul(both, diag)?;
    Ok(ContrastiveTerm {
        loss: g.sum(weighted),
        degenerate: false,
    })
}

/// Per-sample fusion weight `γ = JS(softmax(text) ‖ softmax(image)) / ln 2`, `[B, 1]`.
pub fn gamma(g: &mut Graph, text: Var, image: Var) -> Result<Var> {
    g.js_gamma(text, image)
}

#[derive(Clone, Debug)]
pub struct HeadParams {
    /// `d × d`, applied as `x · W`.
    pub fuse_text: Tensor,
    pub fuse_image: Tensor,
    /// `d × 2`.
    pub classifier: Tensor,
    /// `1 × 2`.
    pub classifier_bias: Tensor,
}

pub struct HeadVars {
    pub fuse_text: Var,
    pub fuse_image: Var,
    pub classifier: Var,
    pub classifier_bias: Var,
}

impl HeadParams {
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self {
            fuse_text: scaled_uniform(&[dim, dim], dim, rng),
            fuse_image: scaled_uniform(&[dim, dim], dim, rng),
            classifier: scaled_uniform(&[dim, 2], dim, rng),
            classifier_bias: Tensor::zeros(&[1, 2]),
        }
    }
}

impl Parameters for HeadParams {
    type Vars = HeadVars;

    fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("head.fuse_text".into(), &self.fuse_text),
            ("head.fuse_image".into(), &self.fuse_image),
            ("head.classifier".into(), &self.classifier),
            ("head.classifier_bias".into(), &self.classifier_bias),
        ]
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("head.fuse_text".into(), &mut self.fuse_text),
            ("head.fuse_image".into(), &mut self.fuse_image),
            ("head.classifier".into(), &mut self.classifier),
            ("head.classifier_bias".into(), &mut self.classifier_bias),
        ]
    }

    fn bind(&self, g: &mut Graph) -> HeadVars {
        HeadVars {
            fuse_text: g.leaf(self.fuse_text.clone()),
            fuse_image: g.leaf(self.fuse_image.clone()),
            classifier: g.leaf(self.classifier.clone()),
            classifier_bias: g.leaf(self.classifier_bias.clone()),
        }
    }

    fn leaves(v: &HeadVars) -> Vec<Var> {
        vec![v.fuse_text, v.fuse_image, v.classifier, v.classifier_bias]
    }
}

/// `m = (1−γ)(x_t·Wᵗ + x_v·Wᵛ) + γ·x_t + γ·x_v`, with `γ` of shape `[B, 1]`.
pub fn fuse(g: &mut Graph, text: Var, image: Var, gamma: Var, head: &HeadVars) -> Result<Var> {
    let a = g.matmul(text, head.fuse_text)?;
    let b = g.matmul(image, head.fuse_image)?;
    let mixed = g.add(a, b)?;
    let direct = g.add(text, image)?;
    // mixed + γ·(direct − mixed)
    let delta = g.sub(direct, mixed)?;
    let scaled = g.mul(delta, gamma)?;
    g.add(mixed, scaled)
}

/// Class logits `m·W + b`, `[B, 2]`.
pub fn logits(g: &mut Graph, fused: Var, head: &HeadVars) -> Result<Var> {
    let z = g.matmul(fused, head.classifier)?;
    g.add(z, head.classifier_bias)
}

/// Row-wise class probabilities.
pub fn classify(g: &mut Graph, fused: Var, head: &HeadVars) -> Result<Var> {
    let z = logits(g, fused, head)?;
    Ok(g.softmax(z))
}

/// Mean cross-entropy of `[B, 2]` logits against binary labels.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[u8]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape != [labels.len(), 2] {
        return Err(FsruError::Shape(format!(
            "logits {shape:?} for {} labels",
            labels.len()
        )));
    }
    let b = labels.len() as f64;
    let pick = Tensor::from_fn(&shape, |i| {
        if usize::from(labels[i / 2]) == i % 2 {
            -1.0 / b
        } else {
            0.0
        }
    });
    let pick = g.constant(pick);
    let logp = g.log_softmax(logits);
    let weighted = g.mul(logp, pick)?;
    Ok(g.sum(weighted))
}

/// The scalar values of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub l_cls: f64,
    pub l_full: f64,
    pub l_self: f64,
    pub total: f64,
    pub mean_gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Graph nodes of the total objective plus its scalar report.
pub struct Objective {
    pub total: Var,
    pub report: LossReport,
}

/// `L = L_cls + α·L_full + β·L_self`. A term whose weight is 0 is not built
/// and is reported as exactly 0.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &mut Graph,
    logits: Var,
    text: Var,
    image: Var,
    gamma: Var,
    labels: &[u8],
    alpha: f64,
    beta: f64,
    tau: f64,
    pairing: SupervisedPairing,
) -> Result<Objective> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(FsruError::Config(format!(
            "loss weights must be non-negative, got α={alpha}, β={beta}"
        )));
    }
    let cls = cross_entropy(g, logits, labels)?;
    let mut total = cls;
    let mut report = LossReport {
        l_cls: g.value(cls).data()[0],
        alpha,
        beta,
        ..LossReport::default()
    };
    if alpha > 0.0 {
        let full = l_full(g, text, image, labels, tau, pairing)?;
        report.l_full = g.value(full.loss).data()[0];
        let weighted = g.scale(full.loss, alpha);
        total = g.add(total, weighted)?;
    }
    if beta > 0.0 {
        let selfsup = l_self(g, text, image, tau)?;
        report.l_self = g.value(selfsup.loss).data()[0];
        let weighted = g.scale(selfsup.loss, beta);
        total = g.add(total, weighted)?;
    }
    report.total = g.value(total).data()[0];
    let gv = g.value(gamma);
    report.mean_gamma = gv.sum() / gv.len().max(1) as f64;
    Ok(Objective { total, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(g: &mut Graph, shape: &[usize], data: &[f64]) -> Var {
        g.constant(Tensor::new(shape, data.to_vec()).unwrap())
    }

    #[test]
    fn two_identical_rumors_give_zero_supervised_loss() {
        let mut g = Graph::new();
        let z = constant(&mut g, &[2, 2], &[1.0, 2.0, 1.0, 2.0]);
        let term = l_full(&mut g, z, z, &[1, 1], 0.1, SupervisedPairing::WithinClass).unwrap();
        assert!(g.value(term.loss).data()[0].abs() < 1e-12);
    }

    #[test]
    fn single_sample_contrastive_terms_are_flagged() {
        let mut g = Graph::new();
        let z = constant(&mut g, &[1, 2], &[1.0, 2.0]);
        let full = l_full(&mut g, z, z, &[1], 0.1, SupervisedPairing::WithinClass).unwrap();
        let selfsup = l_self(&mut g, z, z, 0.1).unwrap();
        assert!(full.degenerate && selfsup.degenerate);
        assert_eq!(g.value(full.loss).data(), &[0.0]);
        assert_eq!(g.value(selfsup.loss).data(), &[0.0]);
    }

    #[test]
    fn identical_vectors_give_log_batch_size() {
        let mut g = Graph::new();
        let z = constant(&mut g, &[4, 2], &[0.3, 0.7, 0.3, 0.7, 0.3, 0.7, 0.3, 0.7]);
        let term = l_self(&mut g, z, z, 0.1).unwrap();
        assert!((g.value(term.loss).data()[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fuse_endpoints() {
        let mut g = Graph::new();
        let head = HeadParams {
            fuse_text: Tensor::from_fn(&[2, 2], |i| i as f64),
            fuse_image: Tensor::from_fn(&[2, 2], |i| 1.0 - i as f64),
            classifier: Tensor::zeros(&[2, 2]),
            classifier_bias: Tensor::zeros(&[1, 2]),
        };
        let vars = head.bind(&mut g);
        let t = constant(&mut g, &[1, 2], &[1.0, 2.0]);
        let v = constant(&mut g, &[1, 2], &[-3.0, 0.5]);
        let one = constant(&mut g, &[1, 1], &[1.0]);
        let zero = constant(&mut g, &[1, 1], &[0.0]);
        let m1 = fuse(&mut g, t, v, one, &vars).unwrap();
        assert_eq!(g.value(m1).data(), &[-2.0, 2.5]);
        let m0 = fuse(&mut g, t, v, zero, &vars).unwrap();
        // x_t·Wt = [1,2]·[[0,1],[2,3]] = [4, 7]; x_v·Wv = [-3,0.5]·[[1,0],[-1,-2]] = [-3.5, -1]
        assert_eq!(g.value(m0).data(), &[0.5, 6.0]);
    }

    #[test]
    fn zero_head_is_uniform_and_bias_saturates() {
        let mut g = Graph::new();
        let mut head = HeadParams::init(3, &mut rand::rng());
        head.classifier = Tensor::zeros(&[3, 2]);
        let vars = head.bind(&mut g);
        let m = constant(&mut g, &[1, 3], &[0.1, -4.0, 2.0]);
        let p = classify(&mut g, m, &vars).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5]);

        head.classifier_bias = Tensor::new(&[1, 2], vec![10.0, -10.0]).unwrap();
        let vars = head.bind(&mut g);
        let p = classify(&mut g, m, &vars).unwrap();
        assert!((g.value(p).data()[0] - 1.0).abs() < 1e-8);
        assert!(g.value(p).data()[1] < 1e-8);
    }

    #[test]
    fn zero_weights_skip_contrastive_terms() {
        let mut g = Graph::new();
        let z = constant(&mut g, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let lg = constant(&mut g, &[2, 2], &[5.0, -5.0, -5.0, 5.0]);
        let gm = gamma(&mut g, z, z).unwrap();
        let obj = total_loss(&mut g, lg, z, z, gm, &[0, 1], 0.0, 0.0, 0.1, SupervisedPairing::WithinClass)
            .unwrap();
        assert_eq!(obj.report.l_full, 0.0);
        assert_eq!(obj.report.l_self, 0.0);
        assert_eq!(obj.report.total, obj.report.l_cls);
        assert!(obj.report.l_cls < 1e-4);
        assert!(total_loss(&mut g, lg, z, z, gm, &[0, 1], -1.0, 0.0, 0.1, SupervisedPairing::WithinClass)
            .is_err());
    }

    #[test]
    fn literal_pairing_moves_class0_positives() {
        let w = supervised_weights(&[1, 1, 0, 0], SupervisedPairing::Literal);
        // Row 2 is a class-0 anchor: positives are the class-1 samples 0 and 1.
        assert_eq!(&w[8..12], &[-0.5, -0.5, 0.0, 0.0]);
        let w = supervised_weights(&[1, 1, 0, 0], SupervisedPairing::WithinClass);
        assert_eq!(&w[8..12], &[0.0, 0.0, 0.0, -0.5]);
    }
}
