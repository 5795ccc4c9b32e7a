//! Content, perceptual and per-pixel adversarial losses.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::Bound;
use crate::tensor::Real;
use crate::training::nets::{Discriminator, PerceptualNet};

/// Weights of the content, perceptual and adversarial terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub content: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            content: 10.0,
            perceptual: 1.0,
            adversarial: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(content: f64, perceptual: f64, adversarial: f64) -> Result<Self> {
        let w = Self {
            content,
            perceptual,
            adversarial,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.content, self.perceptual, self.adversarial];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config(format!(
                "loss weights must be finite and non-negative, got {all:?}"
            )));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::config("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

/// Mean absolute difference.
pub fn content_loss<T: Real>(tape: &mut Tape<T>, rendered: Var, target: Var) -> Result<Var> {
    let d = tape.sub(rendered, target)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Sum over stages of the mean squared feature difference.
pub fn perceptual_loss<T: Real>(tape: &mut Tape<T>, net: &PerceptualNet<T>, rendered: Var, target: Var) -> Result<Var> {
    if tape.dims(rendered) != tape.dims(target) {
        return Err(Error::shape(format!(
            "perceptual loss: {:?} vs {:?}",
            tape.dims(rendered),
            tape.dims(target)
        )));
    }
    let fa = net.features(tape, rendered)?;
    let fb = net.features(tape, target)?;
    let mut total: Option<Var> = None;
    for (a, b) in fa.into_iter().zip(fb) {
        let d = tape.sub(a, b)?;
        let sq = tape.square(d);
        let m = tape.mean(sq);
        total = Some(match total {
            Some(t) => tape.add(t, m)?,
            None => m,
        });
    }
    total.ok_or_else(|| Error::config("perceptual network has no stages"))
}

/// Mean binary cross-entropy of a logit map against a constant label.
pub fn bce_with_logits<T: Real>(tape: &mut Tape<T>, logits: Var, label_is_real: bool) -> Result<Var> {
    if !tape.value(logits).is_finite() {
        return Err(Error::Training("discriminator produced non-finite logits".into()));
    }
    // softplus(x) - y x with y in {0, 1}.
    let x = if label_is_real { tape.scale(logits, -T::one()) } else { logits };
    let sp = tape.softplus(x);
    Ok(tape.mean(sp))
}

/// Generator term: pushes the discriminator's logits on `rendered` toward "real".
pub fn generator_adversarial_loss<T: Real>(tape: &mut Tape<T>, d: &Discriminator, dp: &Bound, rendered: Var) -> Result<Var> {
    let logits = d.forward(tape, dp, rendered)?;
    bce_with_logits(tape, logits, true)
}

/// Discriminator term: real labelled 1, fake labelled 0, averaged.
pub fn discriminator_loss<T: Real>(tape: &mut Tape<T>, d: &Discriminator, dp: &Bound, real: Var, fake: Var) -> Result<Var> {
    let lr = d.forward(tape, dp, real)?;
    let lr = bce_with_logits(tape, lr, true)?;
    let lf = d.forward(tape, dp, fake)?;
    let lf = bce_with_logits(tape, lf, false)?;
    let s = tape.add(lr, lf)?;
    Ok(tape.scale(s, T::lit(0.5)))
}

/// `(g_loss, d_loss)` for one rendered/target pair; the discriminator sees a
/// detached copy of `rendered`.
pub fn adversarial_losses<T: Real>(
    tape: &mut Tape<T>,
    d: &Discriminator,
    dp: &Bound,
    rendered: Var,
    target: Var,
) -> Result<(Var, Var)> {
    let g = generator_adversarial_loss(tape, d, dp, rendered)?;
    let fake = tape.detach(rendered);
    let dl = discriminator_loss(tape, d, dp, target, fake)?;
    Ok((g, dl))
}

/// Weighted sum of the three generator terms. Terms with weight zero may be `None`.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    w: &LossWeights,
    content: Option<Var>,
    perceptual: Option<Var>,
    adversarial: Option<Var>,
) -> Result<Var> {
    w.validate()?;
    let mut acc: Option<Var> = None;
    for (weight, term, name) in [
        (w.content, content, "content"),
        (w.perceptual, perceptual, "perceptual"),
        (w.adversarial, adversarial, "adversarial"),
    ] {
        if weight == 0.0 {
            continue;
        }
        let term = term.ok_or_else(|| Error::config(format!("{name} loss has weight {weight} but was not computed")))?;
        let scaled = tape.scale(term, T::lit(weight));
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled)?,
            None => scaled,
        });
    }
    acc.ok_or_else(|| Error::config("no loss terms"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn content_loss_of_offset_is_offset() {
        let mut tape = Tape::<f64>::new();
        let g = Tensor::from_fn(4, 4, 3, |y, x, c| (y + x + c) as f64 / 10.0);
        let a = tape.constant(g.map(|v| v + 0.1));
        let b = tape.constant(g);
        let l = content_loss(&mut tape, a, b).unwrap();
        assert!((tape.scalar(l) - 0.1).abs() < 1e-12);
        let z = content_loss(&mut tape, b, b).unwrap();
        assert_eq!(tape.scalar(z), 0.0);
    }

    #[test]
    fn zero_logits_give_ln2() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 3, 1]));
        let real = bce_with_logits(&mut tape, x, true).unwrap();
        let fake = bce_with_logits(&mut tape, x, false).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((tape.scalar(real) - ln2).abs() < 1e-12);
        assert!((tape.scalar(fake) - ln2).abs() < 1e-12);
    }

    #[test]
    fn non_finite_logits_abort() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 1], f64::NAN));
        assert!(matches!(bce_with_logits(&mut tape, x, true), Err(Error::Training(_))));
    }

    #[test]
    fn weights_are_validated() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0).is_err());
        assert!(LossWeights::new(1.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::full(&[1], 0.3));
        let p = tape.constant(Tensor::full(&[1], 0.7));
        let a = tape.constant(Tensor::full(&[1], 1.1));
        let w = LossWeights::default();
        let t = total_loss(&mut tape, &w, Some(c), Some(p), Some(a)).unwrap();
        assert!((tape.scalar(t) - (10.0 * 0.3 + 0.7 + 1.1)).abs() < 1e-12);
        let only = total_loss(&mut tape, &LossWeights::new(1.0, 0.0, 0.0).unwrap(), Some(c), None, None).unwrap();
        assert_eq!(tape.scalar(only), 0.3);
    }
}
