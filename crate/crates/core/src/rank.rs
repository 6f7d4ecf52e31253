//! Bracket-generating rank test on tuples of distinct points.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::liealg::{BracketWord, FieldFamily, SmoothField, WordEvaluator, DEFAULT_DEPTH_CAP};

/// Smallest admissible distance between two points of a tuple.
pub const DISTINCTNESS_MARGIN: f64 = 1e-6;

/// Stacked word evaluations: column `β` is `(X^β(x₁), …, X^β(x_N))`.
#[derive(Debug, Clone, Serialize)]
pub struct BracketMatrix {
    pub points: Vec<Vec<f64>>,
    pub words: Vec<BracketWord>,
    #[serde(skip)]
    pub matrix: DMatrix<f64>,
    /// `min_{i≠j} |x_i − x_j|`, infinite for a single point.
    pub margin: f64,
}

impl BracketMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Column of `word`, if present.
    pub fn column(&self, word: &BracketWord) -> Option<Vec<f64>> {
        let k = self.words.iter().position(|w| w == word)?;
        Some(self.matrix.column(k).iter().copied().collect())
    }
}

fn min_distance(points: &[Vec<f64>]) -> (f64, usize, usize) {
    let mut best = (f64::INFINITY, 0, 0);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d < best.0 {
                best = (d, i, j);
            }
        }
    }
    best
}

/// All words up to `max_depth` over the family's letters.
pub fn build_bracket_matrix(family: &FieldFamily, points: &[Vec<f64>], max_depth: usize) -> Result<BracketMatrix> {
    let words = BracketWord::all_up_to(family.len(), max_depth);
    build_bracket_matrix_for_words(family, points, &words)
}

/// Matrix for an explicit word list; repeated words are kept once.
pub fn build_bracket_matrix_for_words(
    family: &FieldFamily,
    points: &[Vec<f64>],
    words: &[BracketWord],
) -> Result<BracketMatrix> {
    let (d, i, j) = min_distance(points);
    if d <= DISTINCTNESS_MARGIN {
        return Err(Error::Degenerate {
            i,
            j,
            distance: d,
            margin: DISTINCTNESS_MARGIN,
        });
    }
    build_bracket_matrix_unchecked(family, points, words)
}

/// Same as [`build_bracket_matrix_for_words`] without the distinctness
/// check; meant for test harnesses.
pub fn build_bracket_matrix_unchecked(
    family: &FieldFamily,
    points: &[Vec<f64>],
    words: &[BracketWord],
) -> Result<BracketMatrix> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("need at least one point".into()));
    }
    let mut unique: Vec<BracketWord> = Vec::with_capacity(words.len());
    for w in words {
        if !unique.contains(w) {
            unique.push(w.clone());
        }
    }
    let n = family.dim();
    let eval = WordEvaluator::new(family, &unique, 0, DEFAULT_DEPTH_CAP)?;
    let values: Vec<Vec<Vec<f64>>> = points.par_iter().map(|x| eval.values(x)).collect::<Result<_>>()?;
    let matrix = DMatrix::from_fn(points.len() * n, unique.len(), |r, c| values[r / n][c][r % n]);
    Ok(BracketMatrix {
        points: points.to_vec(),
        words: unique,
        matrix,
        margin: min_distance(points).0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankDecision {
    pub generating: bool,
    pub rank: usize,
    pub required: usize,
    /// Smallest singular value above the threshold, 0 if none.
    pub smallest_retained: f64,
    pub threshold: f64,
    pub singular_values: Vec<f64>,
}

/// Default relative threshold `10⁻⁸·sqrt(rows·cols)`.
pub fn default_tolerance(m: &BracketMatrix) -> f64 {
    1e-8 * ((m.rows() * m.cols()) as f64).sqrt()
}

/// Numerical rank with singular values above `tol·σ₁`; generating iff
/// the rank equals the row count `N·n`.
pub fn is_bracket_generating(m: &BracketMatrix, tol: Option<f64>) -> RankDecision {
    let tol = tol.unwrap_or_else(|| default_tolerance(m));
    let mut sv: Vec<f64> = m.matrix.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let top = sv.first().copied().unwrap_or(0.0);
    let threshold = tol * top;
    let rank = if top > 0.0 {
        sv.iter().filter(|&&s| s > threshold).count()
    } else {
        0
    };
    RankDecision {
        generating: rank == m.rows(),
        rank,
        required: m.rows(),
        smallest_retained: if rank > 0 { sv[rank - 1] } else { 0.0 },
        threshold,
        singular_values: sv,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeTrial {
    pub seed: u64,
    pub rank: usize,
    pub decision: bool,
}

/// Report of [`genericity_probe`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    #[serde(rename = "N")]
    pub n_points: usize,
    pub depth: usize,
    pub delta: f64,
    pub trials: usize,
    pub fraction: f64,
    pub per_trial: Vec<ProbeTrial>,
}

/// Seed of trial `k` under base seed `seed` (splitmix64 of the pair).
pub fn trial_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed ^ (k as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fraction of randomly perturbed families that are bracket generating at
/// a random tuple of `n_points` points in `[−1, 1]ⁿ`. Each member gets
/// `δ·p` added, `p` a random polynomial field of degree ≤ 3 with
/// coefficients in `[−1, 1]`.
pub fn genericity_probe(
    family: &FieldFamily,
    n_points: usize,
    max_depth: usize,
    trials: usize,
    delta: f64,
    seed: u64,
) -> Result<ProbeReport> {
    if trials == 0 || n_points == 0 {
        return Err(Error::InvalidArgument(
            "probe needs at least one trial and one point".into(),
        ));
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument("perturbation scale must be non-negative".into()));
    }
    let n = family.dim();
    let words = BracketWord::all_up_to(family.len(), max_depth);
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|k| -> Result<ProbeTrial> {
            let s = trial_seed(seed, k);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let fam = if delta > 0.0 {
                let members = family
                    .members()
                    .iter()
                    .map(|f| {
                        let p = SmoothField::random_polynomial(n, 3, 1.0, &mut rng);
                        SmoothField::combination(vec![(1.0, f.clone()), (delta, p)])
                    })
                    .collect::<Result<Vec<_>>>()?;
                FieldFamily::new(members)?
            } else {
                family.clone()
            };
            let points = loop {
                let pts: Vec<Vec<f64>> = (0..n_points)
                    .map(|_| (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect())
                    .collect();
                if min_distance(&pts).0 > DISTINCTNESS_MARGIN {
                    break pts;
                }
            };
            let m = build_bracket_matrix_for_words(&fam, &points, &words)?;
            let d = is_bracket_generating(&m, None);
            Ok(ProbeTrial {
                seed: s,
                rank: d.rank,
                decision: d.generating,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let yes = per_trial.iter().filter(|t| t.decision).count();
    Ok(ProbeReport {
        n_points,
        depth: max_depth,
        delta,
        trials,
        fraction: yes as f64 / trials as f64,
        per_trial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_gives_identity_pattern() {
        let fam = FieldFamily::coordinate_frame(2);
        let m = build_bracket_matrix(&fam, &[vec![0.3, -0.2]], 1).unwrap();
        assert_eq!(m.matrix, DMatrix::identity(2, 2));
        assert_eq!(is_bracket_generating(&m, None).rank, 2);
    }

    #[test]
    fn gaussian_columns_at_origin() {
        let fam = FieldFamily::gaussian();
        let words: Vec<BracketWord> = ["1", "2", "12", "112"].iter().map(|s| s.parse().unwrap()).collect();
        let m = build_bracket_matrix_for_words(&fam, &[vec![0.0, 0.0]], &words).unwrap();
        let expect = [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, -2.0]];
        for (c, e) in expect.iter().enumerate() {
            assert!((m.matrix[(0, c)] - e[0]).abs() < 1e-12);
            assert!((m.matrix[(1, c)] - e[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn collisions_are_rejected() {
        let fam = FieldFamily::gaussian();
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0]];
        match build_bracket_matrix(&fam, &pts, 2) {
            Err(Error::Degenerate { i, j, .. }) => assert_eq!((i, j), (0, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_field_never_generates() {
        let fam = FieldFamily::new(vec![SmoothField::unit(2, 0)]).unwrap();
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.5]];
        let d = is_bracket_generating(&build_bracket_matrix(&fam, &pts, 3).unwrap(), None);
        assert!(!d.generating);
        assert!(d.rank <= 2);
    }

    #[test]
    fn probe_is_reproducible() {
        let fam = FieldFamily::coordinate_frame(2);
        let a = genericity_probe(&fam, 2, 3, 4, 0.1, 7).unwrap();
        let b = genericity_probe(&fam, 2, 3, 4, 0.1, 7).unwrap();
        assert_eq!(a, b);
        let zero = genericity_probe(&fam, 2, 3, 3, 0.0, 7).unwrap();
        assert_eq!(zero.fraction, 0.0);
    }
}
