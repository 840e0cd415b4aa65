
use super::NetModel;
use crate::data::{StandardizationParams, WindowedSample};
use crate::error::{Error, Result};

pub const DEFAULT_ENSEMBLE_SIZE: usize = 5;

/// Identically shaped, differently seeded members whose softmax outputs are
/// averaged, plus the standardizer their training data went through.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<NetModel>,
    pub standardizer: StandardizationParams,
}


impl Ensemble {
    pub fn new(members: Vec<NetModel>, standardizer: StandardizationParams) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble members"))?;
        let n = first.n_classes();
        let dim = first.spec().input_dim();
        if let Some(m) = members.iter().find(|m| m.n_classes() != n) {
            return Err(Error::Config(format!(
                "ensemble members disagree on class count: {n} vs {}",
                m.n_classes()
            )));
        }
        if let Some(m) = members.iter().find(|m| m.spec().input_dim() != dim) {
            return Err(Error::Shape {
                expected: dim,
                got: m.spec().input_dim(),
            });
        }
        if standardizer.dim() != dim {
            return Err(Error::Shape {
                expected: dim,
                got: standardizer.dim(),
            });
        }
        Ok(Self {
            members,
            standardizer,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.members[0].n_classes()
    }

    fn standardized(&self, batch: &[WindowedSample]) -> Result<Vec<Vec<f64>>> {
        batch
            .iter()
            .map(|s| self.standardizer.transform(&s.features))
            .collect()
    }

    /// Per-member softmax rows, `[member][row][class]`.
    pub fn member_probabilities(&self, batch: &[WindowedSample]) -> Result<Vec<Vec<Vec<f64>>>> {
        let xs = self.standardized(batch)?;
        self.members
            .iter()
            .map(|m| xs.iter().map(|x| m.probabilities(x)).collect())
            .collect()
    }

    /// Member-averaged softmax rows.
    pub fn predict_proba(&self, batch: &[WindowedSample]) -> Result<Vec<Vec<f64>>> {
        let per_member = self.member_probabilities(batch)?;
        Ok(average_rows(&per_member))
    }

    pub fn predict(&self, batch: &[WindowedSample]) -> Result<Vec<usize>> {
        Ok(self.predict_proba(batch)?.iter().map(|r| argmax(r)).collect())
    }

    /// Predictions of each member on its own, `[member][row]`.
    pub fn member_predictions(&self, batch: &[WindowedSample]) -> Result<Vec<Vec<usize>>> {
        Ok(self
            .member_probabilities(batch)?
            .iter()
            .map(|rows| rows.iter().map(|r| argmax(r)).collect())
            .collect())
    }
}

pub(crate) fn average_rows(per_member: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let k = per_member.len() as f64;
    let mut out = per_member[0].clone();
    for rows in &per_member[1..] {
        for (acc, row) in out.iter_mut().zip(rows) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    out.iter_mut().flatten().for_each(|v| *v /= k);
    out
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn averaging_two_members() {
        let a = vec![vec![1.0, 0.0, 0.0], vec![0.2, 0.3, 0.5]];
        let b = vec![vec![0.0, 1.0, 0.0], vec![0.6, 0.3, 0.1]];
        let avg = average_rows(&[a, b]);
        assert_eq!(avg[0], vec![0.5, 0.5, 0.0]);
        assert_eq!(argmax(&avg[0]), 0);
        assert_eq!(argmax(&avg[1]), 0);
    }

    proptest::proptest! {
        #[test]
        fn argmax_survives_common_rescaling(
            rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 1..6),
            exp in -20i32..20,
            c in 0.01f64..100.0,
        ) {
            let members: Vec<Vec<Vec<f64>>> = rows.iter().map(|r| vec![r.clone()]).collect();
            let base = argmax(&average_rows(&members)[0]);
            // powers of two scale exactly
            let exact: Vec<Vec<Vec<f64>>> = members
                .iter()
                .map(|m| vec![m[0].iter().map(|v| v * 2f64.powi(exp)).collect()])
                .collect();
            proptest::prop_assert_eq!(argmax(&average_rows(&exact)[0]), base);
            // any positive factor, away from near-ties that rounding could merge
            let avg = &average_rows(&members)[0];
            let gap = avg.iter().enumerate().filter(|(i, _)| *i != base).map(|(_, v)| avg[base] - v).fold(f64::INFINITY, f64::min);
            if gap > 1e-9 {
                let scaled: Vec<Vec<Vec<f64>>> = members
                    .iter()
                    .map(|m| vec![m[0].iter().map(|v| v * c).collect()])
                    .collect();
                proptest::prop_assert_eq!(argmax(&average_rows(&scaled)[0]), base);
            }
        }
    }
}
