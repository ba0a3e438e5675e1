use super::param::ParamStore;
use super::tape::{Tape, Var};
use super::TensorError;

/// Compares reverse-mode gradients of a scalar function against central
/// differences over every parameter entry.
///
/// Returns `max |analytic − numeric| / max(1, |analytic|, |numeric|)`.
/// `eps` must lie in `(1e-7, 1e-3)`.
pub fn grad_check<E, F>(store: &ParamStore, eps: f64, f: F) -> Result<f64, E>
where
    E: From<TensorError>,
    F: Fn(&mut Tape<'_>) -> Result<Var, E>,
{
    assert!(
        eps > 1e-7 && eps < 1e-3,
        "grad_check eps {eps} outside (1e-7, 1e-3)"
    );
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::new(s);
        let loss = f(&mut tape)?;
        Ok(tape.scalar(loss)?)
    };

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        let (rows, cols) = store.value(id).dim();
        for r in 0..rows {
            for c in 0..cols {
                let original = store.value(id)[[r, c]];
                probe.get_mut(id).value[[r, c]] = original + eps;
                let plus = eval(&probe)?;
                probe.get_mut(id).value[[r, c]] = original - eps;
                let minus = eval(&probe)?;
                probe.get_mut(id).value[[r, c]] = original;

                let numeric = (plus - minus) / (2.0 * eps);
                let exact = analytic.get(id).map_or(0.0, |g| g[[r, c]]);
                let denom = 1.0f64.max(exact.abs()).max(numeric.abs());
                worst = worst.max((exact - numeric).abs() / denom);
            }
        }
    }
    Ok(worst)
}
