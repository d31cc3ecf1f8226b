use serde::{Deserialize, Serialize};

use super::tfn::{tfn_add, tfn_mul, tfn_recip, Tfn};
use super::{FahpError, Service, WeightVector, N_ATTRIBUTES};

/// Tolerance of the reciprocal-consistency check; published matrices store
/// reciprocals rounded to two decimals.
pub const RECIPROCAL_TOLERANCE: f64 = 0.01;

/// N x N pairwise-importance matrix of one service.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzyDecisionMatrix {
    pub service: Service,
    entries: Vec<Vec<Tfn>>,
}

/// Serialized form: rows plus the index pairs exempt from the reciprocity check.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct MatrixSpec {
    pub rows: Vec<Vec<Tfn>>,
    #[serde(default)]
    pub tolerated_pairs: Vec<[usize; 2]>,
}

fn reciprocal_pair_ok(a: &Tfn, b: &Tfn) -> bool {
    // compare in the direction where rounding to 2 decimals happened
    let (big, small) = if a.m >= b.m { (a, b) } else { (b, a) };
    match tfn_recip(*big) {
        Ok(r) => r.max_abs_diff(small) <= RECIPROCAL_TOLERANCE,
        Err(_) => false,
    }
}

impl FuzzyDecisionMatrix {
    /// Validates shape, positivity, the (1,1,3) diagonal and reciprocal
    /// consistency of every off-diagonal pair not listed in `tolerated`.
    pub fn new(service: Service, entries: Vec<Vec<Tfn>>, tolerated: &[[usize; 2]]) -> Result<Self, FahpError> {
        let n = entries.len();
        let bad = |msg: String| FahpError::InvalidMatrix { service, msg };
        if n < 2 || entries.iter().any(|r| r.len() != n) {
            return Err(bad(format!("matrix must be square with N >= 2, got {n} rows")));
        }
        for (i, row) in entries.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                if !e.is_ordered() || !e.is_positive() {
                    return Err(bad(format!("entry ({i},{j}) = {e} is not a positive ordered TFN")));
                }
            }
            if row[i] != Tfn::EQUAL {
                return Err(bad(format!("diagonal entry ({i},{i}) = {} must be (1, 1, 3)", row[i])));
            }
        }
        let tolerated = |i: usize, j: usize| tolerated.iter().any(|p| (p[0] == i && p[1] == j) || (p[0] == j && p[1] == i));
        for i in 0..n {
            for j in i + 1..n {
                if tolerated(i, j) {
                    continue;
                }
                if !reciprocal_pair_ok(&entries[i][j], &entries[j][i]) {
                    return Err(bad(format!(
                        "entries ({i},{j}) = {} and ({j},{i}) = {} are not reciprocal within {RECIPROCAL_TOLERANCE}",
                        entries[i][j], entries[j][i]
                    )));
                }
            }
        }
        Ok(Self { service, entries })
    }

    pub fn from_spec(service: Service, spec: &MatrixSpec) -> Result<Self, FahpError> {
        Self::new(service, spec.rows.clone(), &spec.tolerated_pairs)
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> Tfn {
        self.entries[i][j]
    }

    pub fn rows(&self) -> &[Vec<Tfn>] {
        &self.entries
    }

    /// Every entry multiplied componentwise by `k`. The result is not
    /// re-validated.
    pub fn scaled(&self, k: f64) -> Self {
        let entries = self.entries.iter().map(|r| r.iter().map(|e| e.scale(k)).collect()).collect();
        Self { service: self.service, entries }
    }
}

/// `F_i = (sum_j a_ij) (x) (sum_i sum_j a_ij)^-1`.
pub fn comprehensive_fuzzy_values(matrix: &FuzzyDecisionMatrix) -> Result<Vec<Tfn>, FahpError> {
    let row_sums: Vec<Tfn> = matrix.rows().iter().map(|r| r.iter().copied().fold(Tfn::ZERO, tfn_add)).collect();
    let grand = row_sums.iter().copied().fold(Tfn::ZERO, tfn_add);
    let inv = tfn_recip(grand)?;
    row_sums.into_iter().map(|r| tfn_mul(r, inv)).collect()
}

/// Reading of the middle branch of the degree-of-possibility formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PossibilityRule {
    /// Chang's extent analysis: `(l_i - u_j) / ((m_j - u_j) - (m_i - l_i))`.
    #[default]
    Extent,
    /// The printed form `((m_j - u_j) - (m_j - l_i)) / (l_j - u_i)`, clamped to [0, 1].
    PaperLiteral,
}

/// `V(F_j >= F_i)`.
pub fn degree_of_possibility(fj: Tfn, fi: Tfn, rule: PossibilityRule) -> f64 {
    if fj.m >= fi.m {
        return 1.0;
    }
    match rule {
        PossibilityRule::Extent => {
            if fi.l >= fj.u {
                0.0
            } else {
                (fi.l - fj.u) / ((fj.m - fj.u) - (fi.m - fi.l))
            }
        }
        PossibilityRule::PaperLiteral => {
            if fi.l <= fj.u {
                let v = ((fj.m - fj.u) - (fj.m - fi.l)) / (fj.l - fi.u);
                if v.is_finite() {
                    v.clamp(0.0, 1.0)
                } else {
                    0.0
                }
            } else {
                0.0
            }
        }
    }
}

/// Normalized weights `w_j = w'_j / sum w'` with `w'_j = min_{i != j} V(F_j >= F_i)`.
pub fn extract_weights(matrix: &FuzzyDecisionMatrix, rule: PossibilityRule) -> Result<WeightVector, FahpError> {
    let f = comprehensive_fuzzy_values(matrix)?;
    let n = f.len();
    let primary: Vec<f64> = (0..n)
        .map(|j| {
            (0..n)
                .filter(|&i| i != j)
                .map(|i| degree_of_possibility(f[j], f[i], rule))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let total: f64 = primary.iter().sum();
    if !(total > 0.0) {
        return Err(FahpError::DegenerateWeights(matrix.service));
    }
    if n != N_ATTRIBUTES {
        return Err(FahpError::InvalidMatrix {
            service: matrix.service,
            msg: format!("expected {N_ATTRIBUTES} attributes, got {n}"),
        });
    }
    let mut w = [0.0; N_ATTRIBUTES];
    for (dst, p) in w.iter_mut().zip(&primary) {
        *dst = p / total;
    }
    WeightVector::new(w)
}
