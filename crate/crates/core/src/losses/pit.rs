//! Permutation-invariant SI-SNR training loss.

use crate::error::{Result, UsesError};
use crate::numerics::{Scalar, Tape, Var};

/// Largest source count searched exhaustively.
pub const MAX_PIT_SOURCES: usize = 3;

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

impl<T: Scalar> Tape<T> {
    /// `ests` and `refs` are `[S, L]`. Returns the loss
    /// `min_π mean_i(-si_snr(est_i, ref_π(i)))` and the minimizing `π`.
    pub fn pit_si_snr_loss(&mut self, ests: Var, refs: Var) -> Result<(Var, Vec<usize>)> {
        let (es, rs) = (self.shape(ests).to_vec(), self.shape(refs).to_vec());
        if es.len() != 2 || rs.len() != 2 {
            return Err(UsesError::Dimension(format!(
                "PIT needs [S, L] inputs, got {es:?} and {rs:?}"
            )));
        }
        if es != rs {
            return Err(UsesError::Shape(format!(
                "{} estimates of length {} against {} references of length {}",
                es[0], es[1], rs[0], rs[1]
            )));
        }
        let s = es[0];
        if s == 0 || s > MAX_PIT_SOURCES {
            return Err(UsesError::Contract(format!(
                "PIT supports 1 to {MAX_PIT_SOURCES} sources, got {s}"
            )));
        }
        let est_rows = (0..s).map(|i| self.narrow(ests, 0, i, 1)).collect::<Result<Vec<_>>>()?;
        let ref_rows = (0..s).map(|i| self.narrow(refs, 0, i, 1)).collect::<Result<Vec<_>>>()?;
        let mut pair = vec![Vec::with_capacity(s); s];
        for (i, &e) in est_rows.iter().enumerate() {
            for &r in &ref_rows {
                let v = self.si_snr(e, r)?;
                pair[i].push(v);
            }
        }
        let score = |p: &[usize], tape: &Tape<T>| -> f64 {
            p.iter().enumerate().map(|(i, &j)| tape.value(pair[i][j]).item().as_f64()).sum()
        };
        let best = permutations(s)
            .into_iter()
            .fold(None::<(f64, Vec<usize>)>, |acc, p| {
                let v = score(&p, self);
                match acc {
                    Some((bv, bp)) if bv >= v => Some((bv, bp)),
                    _ => Some((v, p)),
                }
            })
            .expect("at least one permutation")
            .1;
        let mut total = pair[0][best[0]];
        for (i, &j) in best.iter().enumerate().skip(1) {
            total = self.add(total, pair[i][j])?;
        }
        let loss = self.scale(total, T::of(-1.0 / s as f64));
        Ok((loss, best))
    }
}
