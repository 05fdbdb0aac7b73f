//! Adaptive snippet order prediction: squeeze-and-excite style gating over
//! per-snippet features followed by a permutation classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Result, TcglError};
use crate::numcore::{Tape, Tensor, Var};
use crate::synthvideo::factorial;

/// Squeezed bottleneck width: c_u = n * c_k / (2n), floored at 1.
pub fn squeeze_dim(n: usize, c_k: usize) -> usize {
    ((n * c_k) / (2 * n)).max(1)
}

/// Hidden width of the permutation classifier.
pub fn classifier_hidden(n: usize, c_k: usize) -> usize {
    ((n * c_k) / 2).max(32)
}

/// Parameters for order prediction over n snippets of feature width c_k.
/// `squeeze`/`excite` hold n per-slot pairs (W_s^k, b_s^k) and
/// (W_e^k, b_e^k); the classifier is a two-layer MLP over the gated concat.
#[derive(Debug, Clone)]
pub struct AsopParams {
    pub n: usize,
    pub c_k: usize,
    pub squeeze: Vec<(Tensor, Tensor)>,
    pub excite: Vec<(Tensor, Tensor)>,
    pub cls_w1: Tensor,
    pub cls_b1: Tensor,
    pub cls_w2: Tensor,
    pub cls_b2: Tensor,
}

impl AsopParams {
    pub fn init(n: usize, c_k: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let c_u = squeeze_dim(n, c_k);
        let total = n * c_k;
        let hidden = classifier_hidden(n, c_k);
        let classes = factorial(n);
        let squeeze = (0..n)
            .map(|_| {
                (
                    Tensor::init_kaiming(vec![total, c_u], total, &mut rng),
                    Tensor::init_uniform(vec![c_u], total, &mut rng),
                )
            })
            .collect();
        // the excitation bias starts at +1 so the relu gate opens near the
        // identity instead of annihilating half the channels at init
        let excite = (0..n)
            .map(|_| {
                let w = Tensor::init_kaiming(vec![c_u, c_k], c_u, &mut rng);
                let mut b = Tensor::init_uniform(vec![c_k], c_u, &mut rng);
                for v in &mut b.data {
                    *v += 1.0;
                }
                (w, b)
            })
            .collect();
        AsopParams {
            n,
            c_k,
            squeeze,
            excite,
            cls_w1: Tensor::init_kaiming(vec![total, hidden], total, &mut rng),
            cls_b1: Tensor::init_uniform(vec![hidden], total, &mut rng),
            cls_w2: Tensor::init_kaiming(vec![hidden, classes], hidden, &mut rng),
            cls_b2: Tensor::init_uniform(vec![classes], hidden, &mut rng),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (k, (w, b)) in self.squeeze.iter().enumerate() {
            out.push((format!("asop.squeeze.{k}.w"), w));
            out.push((format!("asop.squeeze.{k}.b"), b));
        }
        for (k, (w, b)) in self.excite.iter().enumerate() {
            out.push((format!("asop.excite.{k}.w"), w));
            out.push((format!("asop.excite.{k}.b"), b));
        }
        out.push(("asop.cls.w1".into(), &self.cls_w1));
        out.push(("asop.cls.b1".into(), &self.cls_b1));
        out.push(("asop.cls.w2".into(), &self.cls_w2));
        out.push(("asop.cls.b2".into(), &self.cls_b2));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (k, (w, b)) in self.squeeze.iter_mut().enumerate() {
            out.push((format!("asop.squeeze.{k}.w"), w));
            out.push((format!("asop.squeeze.{k}.b"), b));
        }
        for (k, (w, b)) in self.excite.iter_mut().enumerate() {
            out.push((format!("asop.excite.{k}.w"), w));
            out.push((format!("asop.excite.{k}.b"), b));
        }
        out.push(("asop.cls.w1".into(), &mut self.cls_w1));
        out.push(("asop.cls.b1".into(), &mut self.cls_b1));
        out.push(("asop.cls.w2".into(), &mut self.cls_w2));
        out.push(("asop.cls.b2".into(), &mut self.cls_b2));
        out
    }

    pub fn track(&self, tape: &Tape) -> AsopVars {
        AsopVars {
            n: self.n,
            c_k: self.c_k,
            squeeze: self
                .squeeze
                .iter()
                .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
                .collect(),
            excite: self
                .excite
                .iter()
                .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
                .collect(),
            cls_w1: tape.leaf(self.cls_w1.clone()),
            cls_b1: tape.leaf(self.cls_b1.clone()),
            cls_w2: tape.leaf(self.cls_w2.clone()),
            cls_b2: tape.leaf(self.cls_b2.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AsopVars {
    pub n: usize,
    pub c_k: usize,
    pub squeeze: Vec<(Var, Var)>,
    pub excite: Vec<(Var, Var)>,
    pub cls_w1: Var,
    pub cls_b1: Var,
    pub cls_w2: Var,
    pub cls_b2: Var,
}

/// Order-prediction output: logits over the n! permutation classes.
#[derive(Debug, Clone, Copy)]
pub struct OrderPrediction {
    pub logits: Var,
}

impl OrderPrediction {
    pub fn probabilities(&self, tape: &Tape) -> Vec<f64> {
        tape.softmax_probs(self.logits)
    }

    pub fn predicted_class(&self, tape: &Tape) -> u32 {
        let v = tape.value(self.logits);
        let mut best = 0usize;
        for i in 1..v.data.len() {
            if v.data[i] > v.data[best] {
                best = i;
            }
        }
        best as u32
    }
}

fn check_features(vars: &AsopVars, tape: &Tape, features: &[Var]) -> Result<()> {
    if features.len() != vars.n {
        return Err(TcglError::ShapeMismatch(format!(
            "order prediction expects {} snippet features, got {}",
            vars.n,
            features.len()
        )));
    }
    for f in features {
        let s = tape.shape(*f);
        if s != [vars.c_k] {
            return Err(TcglError::ShapeMismatch(format!(
                "snippet feature shape {s:?}, expected [{}]",
                vars.c_k
            )));
        }
    }
    Ok(())
}

/// Gated forward pass: each slot k squeezes the full concatenation to c_u
/// dims, excites back to c_k, and gates its own feature with relu of the
/// excitation before classification.
pub fn asop_forward(tape: &Tape, vars: &AsopVars, features: &[Var]) -> Result<OrderPrediction> {
    check_features(vars, tape, features)?;
    let concat = tape.concat(features)?;
    let mut gated = Vec::with_capacity(vars.n);
    for k in 0..vars.n {
        let (ws, bs) = vars.squeeze[k];
        let (we, be) = vars.excite[k];
        let z = tape.affine_vec(concat, ws, bs)?;
        let e = tape.affine_vec(z, we, be)?;
        let gate = tape.relu(e);
        gated.push(tape.mul(gate, features[k])?);
    }
    let recombined = tape.concat(&gated)?;
    classify(tape, vars, recombined)
}

/// Gate-free fallback: the raw concatenation goes straight to the
/// classifier.
pub fn plain_forward(tape: &Tape, vars: &AsopVars, features: &[Var]) -> Result<OrderPrediction> {
    check_features(vars, tape, features)?;
    let concat = tape.concat(features)?;
    classify(tape, vars, concat)
}

fn classify(tape: &Tape, vars: &AsopVars, x: Var) -> Result<OrderPrediction> {
    let h = tape.affine_vec(x, vars.cls_w1, vars.cls_b1)?;
    let h = tape.relu(h);
    let logits = tape.affine_vec(h, vars.cls_w2, vars.cls_b2)?;
    Ok(OrderPrediction { logits })
}

/// Cross-entropy between predicted permutation distribution and the true
/// shuffle class.
pub fn order_loss(tape: &Tape, pred: &OrderPrediction, class: u32) -> Result<Var> {
    tape.softmax_cross_entropy(pred.logits, class as usize)
}

/// Joint objective: J = lambda_g * J_g + lambda_o * J_o.
pub fn total_loss(
    tape: &Tape,
    graph_loss: Var,
    order_loss: Var,
    lambda_g: f64,
    lambda_o: f64,
) -> Result<Var> {
    let g = tape.scale(graph_loss, lambda_g);
    let o = tape.scale(order_loss, lambda_o);
    tape.add(g, o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;
    use rand::Rng;

    fn rand_features(tape: &Tape, n: usize, c_k: usize, seed: u64) -> Vec<Var> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                tape.leaf(Tensor::vector(
                    (0..c_k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                ))
            })
            .collect()
    }

    #[test]
    fn squeeze_dim_examples() {
        assert_eq!(squeeze_dim(3, 512), 256);
        assert_eq!(squeeze_dim(3, 1), 1);
        assert_eq!(squeeze_dim(4, 32), 16);
        assert_eq!(classifier_hidden(3, 32), 48);
        assert_eq!(classifier_hidden(2, 8), 32);
    }

    #[test]
    fn parameter_shapes() {
        let p = AsopParams::init(3, 8, 1);
        assert_eq!(p.squeeze.len(), 3);
        assert_eq!(p.excite.len(), 3);
        assert_eq!(p.squeeze[0].0.shape, vec![24, 4]);
        assert_eq!(p.excite[0].0.shape, vec![4, 8]);
        assert_eq!(p.cls_w1.shape, vec![24, 32]);
        assert_eq!(p.cls_w2.shape, vec![32, 6]);
        assert_eq!(p.named().len(), 3 * 4 + 4);
    }

    #[test]
    fn gate_annihilation() {
        // excitation forced nonpositive => relu gate is zero everywhere =>
        // logits equal the classifier output at the zero vector
        let mut p = AsopParams::init(3, 4, 2);
        for (w, b) in p.excite.iter_mut() {
            for v in w.data.iter_mut() {
                *v = 0.0;
            }
            for v in b.data.iter_mut() {
                *v = -1.0;
            }
        }
        let tape = Tape::new();
        let vars = p.track(&tape);
        let feats = rand_features(&tape, 3, 4, 3);
        let pred = asop_forward(&tape, &vars, &feats).unwrap();
        let got = tape.value(pred.logits);

        let zero_feats: Vec<Var> = (0..3).map(|_| tape.leaf(Tensor::zeros(vec![4]))).collect();
        let zpred = plain_forward(&tape, &vars, &zero_feats).unwrap();
        let want = tape.value(zpred.logits);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn zero_classifier_gives_uniform_distribution() {
        let mut p = AsopParams::init(3, 4, 4);
        for v in p
            .cls_w2
            .data
            .iter_mut()
            .chain(p.cls_b2.data.iter_mut())
        {
            *v = 0.0;
        }
        let tape = Tape::new();
        let vars = p.track(&tape);
        let feats = rand_features(&tape, 3, 4, 5);
        let pred = asop_forward(&tape, &vars, &feats).unwrap();
        let probs = pred.probabilities(&tape);
        assert_eq!(probs.len(), 6);
        for q in &probs {
            assert!((q - 1.0 / 6.0).abs() < 1e-12);
        }
        // uniform distribution => cross-entropy ln(n!) for any target
        for class in 0..6 {
            let l = order_loss(&tape, &pred, class).unwrap();
            assert!((tape.scalar_value(l) - 6.0f64.ln()).abs() < 1e-12);
        }
        assert!(order_loss(&tape, &pred, 6).is_err());
    }

    #[test]
    fn feature_contract_errors() {
        let p = AsopParams::init(3, 4, 6);
        let tape = Tape::new();
        let vars = p.track(&tape);
        let too_few = rand_features(&tape, 2, 4, 7);
        assert!(asop_forward(&tape, &vars, &too_few).is_err());
        let wrong_width = rand_features(&tape, 3, 5, 8);
        assert!(asop_forward(&tape, &vars, &wrong_width).is_err());
    }

    #[test]
    fn total_loss_composition() {
        let tape = Tape::new();
        let g = tape.leaf(Tensor::scalar(0.25));
        let o = tape.leaf(Tensor::scalar(0.5));
        let both = total_loss(&tape, g, o, 1.0, 1.0).unwrap();
        assert!((tape.scalar_value(both) - 0.75).abs() < 1e-15);
        let only_o = total_loss(&tape, g, o, 0.0, 1.0).unwrap();
        assert!((tape.scalar_value(only_o) - 0.5).abs() < 1e-15);
        let neither = total_loss(&tape, g, o, 0.0, 0.0).unwrap();
        assert_eq!(tape.scalar_value(neither), 0.0);
    }

    #[test]
    fn asop_gradient_check() {
        let p = AsopParams::init(2, 3, 9);
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let f0 = Tensor::vector((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let f1 = Tensor::vector((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut points = vec![f0, f1];
        for (_, t) in p.named() {
            points.push(t.clone());
        }
        let err = grad_check(
            &|tape, leaves: &[Var]| {
                let vars = AsopVars {
                    n: 2,
                    c_k: 3,
                    squeeze: vec![(leaves[2], leaves[3]), (leaves[4], leaves[5])],
                    excite: vec![(leaves[6], leaves[7]), (leaves[8], leaves[9])],
                    cls_w1: leaves[10],
                    cls_b1: leaves[11],
                    cls_w2: leaves[12],
                    cls_b2: leaves[13],
                };
                let pred = asop_forward(tape, &vars, &leaves[0..2])?;
                order_loss(tape, &pred, 1)
            },
            &points,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn plain_forward_gradient_check() {
        let p = AsopParams::init(2, 3, 11);
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let f0 = Tensor::vector((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let f1 = Tensor::vector((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let points = vec![
            f0,
            f1,
            p.cls_w1.clone(),
            p.cls_b1.clone(),
            p.cls_w2.clone(),
            p.cls_b2.clone(),
        ];
        let err = grad_check(
            &|tape, leaves: &[Var]| {
                let vars = AsopVars {
                    n: 2,
                    c_k: 3,
                    squeeze: vec![],
                    excite: vec![],
                    cls_w1: leaves[2],
                    cls_b1: leaves[3],
                    cls_w2: leaves[4],
                    cls_b2: leaves[5],
                };
                let pred = plain_forward(tape, &vars, &leaves[0..2])?;
                order_loss(tape, &pred, 0)
            },
            &points,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }
}
