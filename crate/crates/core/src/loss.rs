//! Adversarial objectives and classification cross-entropy.
//!
//! Expectations are realized as batch means. Discriminator outputs are
//! clamped to `[1e-7, 1 − 1e-7]` before any logarithm.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

pub const PROB_CLAMP: f64 = 1e-7;

/// Loss values and discriminator diagnostics for one training iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLossPair {
    pub loss_d: f64,
    pub loss_g: f64,
    /// Mean of D(x) over the real batch.
    pub d_on_real: f64,
    /// Mean of D(x̃) over the generated batch.
    pub d_on_fake: f64,
}

fn check_probs<T: Scalar>(tape: &Tape<T>, v: Var) -> Result<()> {
    let shape = tape.try_value(v)?.shape();
    if shape.len() != 2 || shape[1] != 1 {
        return Err(Error::ShapeMismatch { expected: vec![shape[0], 1], got: shape.to_vec() });
    }
    Ok(())
}

/// `mean(log D(x))` and `mean(log(1 − D(x̃)))`, clamped.
fn log_terms<T: Scalar>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<(Var, Var)> {
    check_probs(tape, d_real)?;
    check_probs(tape, d_fake)?;
    let (lo, hi) = (T::lit(PROB_CLAMP), T::one() - T::lit(PROB_CLAMP));
    let r = tape.clamp(d_real, lo, hi)?;
    let r = tape.log(r)?;
    let r = tape.mean(r, None)?;
    let f = tape.clamp(d_fake, lo, hi)?;
    let f = tape.affine(f, -T::one(), T::one())?;
    let f = tape.log(f)?;
    let f = tape.mean(f, None)?;
    Ok((r, f))
}

/// `L_D = −mean(log D(x)) − mean(log(1 − D(x̃)))` for `[N,1]` probabilities.
pub fn disc_loss<T: Scalar>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let (r, f) = log_terms(tape, d_real, d_fake)?;
    let neg_r = tape.neg(r)?;
    tape.sub(neg_r, f)
}

/// Non-saturating generator loss `L_G = −mean(log D(x̃))`.
pub fn gen_loss<T: Scalar>(tape: &mut Tape<T>, d_fake: Var) -> Result<Var> {
    check_probs(tape, d_fake)?;
    let f = tape.clamp(d_fake, T::lit(PROB_CLAMP), T::one() - T::lit(PROB_CLAMP))?;
    let f = tape.log(f)?;
    let f = tape.mean(f, None)?;
    tape.neg(f)
}

/// Value of the minimax objective `V = mean(log D(x)) + mean(log(1 − D(x̃)))`.
///
/// Diagnostic only; equals `−L_D` bit for bit since both share the same
/// clamped log terms.
pub fn minimax_value<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<T> {
    let mut tape = Tape::new();
    let r = tape.constant(d_real.clone());
    let f = tape.constant(d_fake.clone());
    let (r, f) = log_terms(&mut tape, r, f)?;
    let v = tape.add(r, f)?;
    tape.value(v).item()
}

/// Mean cross-entropy of `labels` under `softmax(logits)`, via a fused
/// log-sum-exp.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    tape.nll(lp, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn probs(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[v.len(), 1], v.to_vec()).unwrap()
    }

    fn eval_d(r: &[f64], f: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let (r, f) = (tape.constant(probs(r)), tape.constant(probs(f)));
        let l = disc_loss(&mut tape, r, f).unwrap();
        tape.value(l).item().unwrap()
    }

    fn eval_g(f: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let f = tape.constant(probs(f));
        let l = gen_loss(&mut tape, f).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn half_probabilities() {
        assert!((eval_d(&[0.5; 4], &[0.5; 4]) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((eval_g(&[0.5; 4]) - 2f64.ln()).abs() < 1e-12);
        let v = minimax_value(&probs(&[0.5; 3]), &probs(&[0.5; 3])).unwrap();
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn limits() {
        assert!(eval_d(&[1.0; 2], &[0.0; 2]) < 1e-6);
        assert!(eval_g(&[1.0; 2]) < 1e-6);
        assert!(eval_d(&[0.0], &[1.0]).is_finite());
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = Rng::new(77);
        let r: Vec<f64> = (0..16).map(|_| rng.uniform() * 0.98 + 0.01).collect();
        let f: Vec<f64> = (0..16).map(|_| rng.uniform() * 0.98 + 0.01).collect();
        let direct = -r.iter().map(|v| v.ln()).sum::<f64>() / 16.0 - f.iter().map(|v| (1.0 - v).ln()).sum::<f64>() / 16.0;
        assert!((eval_d(&r, &f) - direct).abs() < 1e-12);
    }

    #[test]
    fn disc_loss_is_negated_minimax_in_f32() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let r = Tensor::<f32>::rand_uniform(&[8, 1], 0.0, 1.0, &mut rng).unwrap();
            let f = Tensor::<f32>::rand_uniform(&[8, 1], 0.0, 1.0, &mut rng).unwrap();
            let mut tape = Tape::new();
            let (rv, fv) = (tape.constant(r.clone()), tape.constant(f.clone()));
            let l = disc_loss(&mut tape, rv, fv).unwrap();
            assert_eq!(tape.value(l).item().unwrap(), -minimax_value(&r, &f).unwrap());
        }
    }

    #[test]
    fn shape_is_checked() {
        let mut tape = Tape::<f64>::new();
        let bad = tape.constant(Tensor::ones(&[2, 2]).unwrap());
        assert!(matches!(gen_loss(&mut tape, bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::<f64>::new();
        let uniform = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
        let l = cross_entropy(&mut tape, uniform, &[0, 2]).unwrap();
        assert!((tape.value(l).item().unwrap() - 3f64.ln()).abs() < 1e-12);
        let peaked = tape.constant(Tensor::new(&[1, 3], vec![10.0, 0.0, 0.0]).unwrap());
        let l = cross_entropy(&mut tape, peaked, &[0]).unwrap();
        assert!(tape.value(l).item().unwrap() < 1e-4);
        assert!(matches!(cross_entropy(&mut tape, peaked, &[3]), Err(Error::LabelOutOfRange { label: 3, classes: 3 })));
    }

    #[test]
    fn cross_entropy_matches_softmax_pick_log() {
        let mut rng = Rng::new(8);
        let logits = Tensor::<f32>::randn_scaled(&[6, 4], 0.0, 3.0, &mut rng).unwrap();
        let labels = [0, 1, 2, 3, 1, 0];
        let mut tape = Tape::new();
        let x = tape.constant(logits.clone());
        let l = cross_entropy(&mut tape, x, &labels).unwrap();
        let p = crate::nn::softmax(&logits).unwrap();
        let two_path = -labels.iter().enumerate().map(|(r, &k)| p.data()[r * 4 + k].ln()).sum::<f32>() / 6.0;
        assert!((tape.value(l).item().unwrap() - two_path).abs() < 1e-5);
    }
}
