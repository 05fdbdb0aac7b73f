use crate::error::Result;
use crate::numcore::tape::{Tape, Var};
use crate::numcore::tensor::Tensor;

/// Central-finite-difference check of a scalar-valued function against the
/// tape's analytic gradients. Returns the max over all coordinates of
/// |analytic - central difference| / max(1, |analytic|).
///
/// `f` must build the loss from the leaves it is handed; it is re-invoked
/// for every probe, so it has to be deterministic.
pub fn grad_check<F>(f: &F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    assert!(eps > 0.0);
    let analytic = {
        let tape = Tape::new();
        let leaves: Vec<Var> = points.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&tape, &leaves)?;
        let grads = tape.backward(loss)?;
        leaves
            .iter()
            .zip(points)
            .map(|(v, p)| {
                grads
                    .wrt(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape.clone()))
            })
            .collect::<Vec<_>>()
    };

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let leaves: Vec<Var> = probe.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&tape, &leaves)?;
        Ok(tape.scalar_value(loss))
    };

    let mut max_rel = 0.0f64;
    let mut probe: Vec<Tensor> = points.to_vec();
    for (pi, point) in points.iter().enumerate() {
        for ci in 0..point.data.len() {
            let orig = point.data[ci];
            probe[pi].data[ci] = orig + eps;
            let plus = eval(&probe)?;
            probe[pi].data[ci] = orig - eps;
            let minus = eval(&probe)?;
            probe[pi].data[ci] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let an = analytic[pi].data[ci];
            let rel = (an - fd).abs() / an.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
