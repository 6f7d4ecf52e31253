//! Vector fields with exact jets, Lie brackets and pushforward residuals.
//!
//! Bracket convention: `[X, Y] = DY·X − DX·Y`. With it,
//! `ad^k_{∂1} (e^{-x1²}∂2) = φ^{(k)}(x1) ∂2` where `φ(x) = e^{-x²}`.

pub mod expr;
mod field;
pub mod jet;
mod word;

use std::collections::HashMap;

use rayon::prelude::*;

pub use field::{bracket_jet, coordinate_names, FieldJet, Polynomial, SmoothField, ANALYTIC_JET_ORDER};
pub use word::BracketWord;

use crate::error::{Error, Result};
use crate::flow::{self, CompactBox, IntegratorSettings};

/// Default cap on bracket depth; deeper words need an explicit override.
pub const DEFAULT_DEPTH_CAP: usize = 8;

/// An ordered family `f₁,…,f_s` of fields sharing a dimension.
#[derive(Debug, Clone)]
pub struct FieldFamily {
    dim: usize,
    members: Vec<SmoothField>,
}

impl FieldFamily {
    pub fn new(members: Vec<SmoothField>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidArgument("a field family needs at least one member".into()))?;
        let dim = first.dim();
        for f in &members {
            field::check_dims(dim, f, "field family")?;
        }
        Ok(FieldFamily { dim, members })
    }

    /// `f₁ = ∂/∂x₁`, `f₂ = e^{-x₁²} ∂/∂x₂` on ℝ².
    pub fn gaussian() -> Self {
        let f1 = SmoothField::unit(2, 0).with_label("f1");
        let f2 = SmoothField::from_expressions("f2", &["0", "gauss(x1)"]).expect("valid");
        FieldFamily::new(vec![f1, f2]).expect("same dimension")
    }

    /// The coordinate frame `∂/∂x₁,…,∂/∂x_n`.
    pub fn coordinate_frame(dim: usize) -> Self {
        let members = (0..dim)
            .map(|i| SmoothField::unit(dim, i).with_label(format!("f{}", i + 1)))
            .collect();
        FieldFamily::new(members).expect("same dimension")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[SmoothField] {
        &self.members
    }

    /// Member `f_j`, 1-based.
    pub fn member(&self, j: usize) -> Result<&SmoothField> {
        self.members.get(j.wrapping_sub(1)).ok_or_else(|| Error::InvalidWord {
            word: j.to_string(),
            reason: format!("letter outside 1..={}", self.members.len()),
        })
    }

    fn check_word(&self, word: &BracketWord) -> Result<()> {
        if word.max_letter() > self.members.len() {
            return Err(Error::InvalidWord {
                word: word.to_string(),
                reason: format!("letter outside 1..={}", self.members.len()),
            });
        }
        Ok(())
    }
}

/// `[X, Y] = DY·X − DX·Y`.
pub fn bracket(x: &SmoothField, y: &SmoothField) -> Result<SmoothField> {
    SmoothField::bracket_of(x, y)
}

/// `ad_X^k Y`.
pub fn ad_pow(x: &SmoothField, k: usize, y: &SmoothField) -> Result<SmoothField> {
    let mut acc = y.clone();
    for _ in 0..k {
        acc = bracket(x, &acc)?;
    }
    Ok(acc)
}

/// Right-nested bracket `X^β` with the default depth cap.
pub fn iterated_bracket(family: &FieldFamily, word: &BracketWord) -> Result<SmoothField> {
    iterated_bracket_capped(family, word, DEFAULT_DEPTH_CAP)
}

pub fn iterated_bracket_capped(family: &FieldFamily, word: &BracketWord, cap: usize) -> Result<SmoothField> {
    family.check_word(word)?;
    if word.depth() > cap {
        return Err(Error::DepthCap {
            depth: word.depth(),
            cap,
        });
    }
    let idx = word.indices();
    let last = family.member(idx[idx.len() - 1])?;
    let need = word.depth() - 1;
    for &j in idx {
        let f = family.member(j)?;
        if f.max_jet_order() < need {
            return Err(Error::Capability {
                label: f.label().to_string(),
                requested: need,
                available: f.max_jet_order(),
            });
        }
    }
    let mut acc = last.clone();
    for &j in idx[..idx.len() - 1].iter().rev() {
        acc = bracket(family.member(j)?, &acc)?;
    }
    Ok(acc.with_label(format!("X^{word}")))
}

/// Evaluates a list of words at points, sharing the jets of common suffixes.
///
/// A suffix `s` of a word `w` is needed at order `depth(w) − depth(s) + extra`.
/// Each suffix is computed once per point at the maximal order any word asks
/// of it, then truncated.
#[derive(Debug, Clone)]
pub struct WordEvaluator {
    family: FieldFamily,
    words: Vec<BracketWord>,
    extra_order: usize,
    /// Suffix nodes in increasing depth: `(letter, child node, order)`.
    nodes: Vec<(usize, Option<usize>, usize)>,
    word_node: Vec<usize>,
    letter_order: Vec<usize>,
}

impl WordEvaluator {
    /// `extra_order = 0` yields values, `1` values and Jacobians.
    pub fn new(family: &FieldFamily, words: &[BracketWord], extra_order: usize, depth_cap: usize) -> Result<Self> {
        for w in words {
            family.check_word(w)?;
            if w.depth() > depth_cap {
                return Err(Error::DepthCap {
                    depth: w.depth(),
                    cap: depth_cap,
                });
            }
        }
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut suffixes: Vec<Vec<usize>> = Vec::new();
        let mut orders: Vec<usize> = Vec::new();
        for w in words {
            let idx = w.indices();
            for start in 0..idx.len() {
                let s = idx[start..].to_vec();
                let order = start + extra_order;
                match index.get(&s) {
                    Some(&k) => orders[k] = orders[k].max(order),
                    None => {
                        index.insert(s.clone(), suffixes.len());
                        suffixes.push(s);
                        orders.push(order);
                    }
                }
            }
        }
        let mut perm: Vec<usize> = (0..suffixes.len()).collect();
        perm.sort_by(|&a, &b| {
            suffixes[a]
                .len()
                .cmp(&suffixes[b].len())
                .then(suffixes[a].cmp(&suffixes[b]))
        });
        let mut pos = vec![0; perm.len()];
        for (p, &k) in perm.iter().enumerate() {
            pos[k] = p;
        }
        let mut nodes = Vec::with_capacity(perm.len());
        let mut letter_order = vec![0usize; family.len() + 1];
        for &k in &perm {
            let s = &suffixes[k];
            let child = (s.len() > 1).then(|| pos[index[&s[1..]]]);
            let order = orders[k];
            // the head letter is needed one order above the bracket
            let letter_need = if s.len() > 1 { order + 1 } else { order };
            letter_order[s[0]] = letter_order[s[0]].max(letter_need);
            nodes.push((s[0], child, order));
        }
        for (j, &o) in letter_order.iter().enumerate().skip(1) {
            let f = family.member(j)?;
            if o > f.max_jet_order() {
                return Err(Error::Capability {
                    label: f.label().to_string(),
                    requested: o,
                    available: f.max_jet_order(),
                });
            }
        }
        let word_node = words.iter().map(|w| pos[index[w.indices()]]).collect();
        Ok(WordEvaluator {
            family: family.clone(),
            words: words.to_vec(),
            extra_order,
            nodes,
            word_node,
            letter_order,
        })
    }

    pub fn words(&self) -> &[BracketWord] {
        &self.words
    }

    pub fn family(&self) -> &FieldFamily {
        &self.family
    }

    pub fn extra_order(&self) -> usize {
        self.extra_order
    }

    /// Jets (at `extra_order`) of every word at `x`, in word order.
    pub fn jets(&self, x: &[f64]) -> Result<Vec<FieldJet>> {
        if x.len() != self.family.dim() {
            return Err(Error::Dimension {
                context: "word evaluation".into(),
                expected: self.family.dim(),
                found: x.len(),
            });
        }
        let letters: Vec<Option<FieldJet>> = self
            .letter_order
            .iter()
            .enumerate()
            .map(|(j, &o)| {
                if j == 0 || !self.nodes.iter().any(|n| n.0 == j) {
                    Ok(None)
                } else {
                    self.family.members[j - 1].jet(x, o).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        let mut done: Vec<FieldJet> = Vec::with_capacity(self.nodes.len());
        for &(letter, child, order) in &self.nodes {
            let lj = letters[letter].as_ref().expect("letter jet computed");
            let jet = match child {
                None => lj.truncate(order),
                Some(c) => bracket_jet(&lj.truncate(order + 1), &done[c].truncate(order + 1)),
            };
            done.push(jet);
        }
        Ok(self
            .word_node
            .iter()
            .map(|&k| done[k].truncate(self.extra_order))
            .collect())
    }

    /// Values of every word at `x`.
    pub fn values(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self.jets(x)?.iter().map(FieldJet::value).collect())
    }
}

/// Sup over `grid` of `|(e^{-Ug})_* Z − Σ_{j<N} U^j/j! ad_g^j Z|`.
///
/// The pushforward is `[De^{Ug}(x)]⁻¹ Z(e^{Ug}(x))`, with the flow and its
/// Jacobian integrated numerically on a guard box around the grid.
pub fn pushforward_remainder(
    g: &SmoothField,
    z: &SmoothField,
    u: f64,
    terms: usize,
    grid: &[Vec<f64>],
    settings: &IntegratorSettings,
) -> Result<f64> {
    if !(1..=2).contains(&terms) {
        return Err(Error::InvalidArgument("expansion order N must be 1 or 2".into()));
    }
    field::check_dims(g.dim(), z, "pushforward")?;
    let series: Vec<(f64, SmoothField)> = (0..terms)
        .map(|j| {
            let fact: f64 = (1..=j).map(|k| k as f64).product();
            ad_pow(g, j, z).map(|f| (u.powi(j as i32) / fact, f))
        })
        .collect::<Result<_>>()?;
    let mut settings = settings.clone();
    if settings.guard.is_none() {
        settings.guard = Some(CompactBox::bounding(grid)?.guard());
    }
    let fmap = flow::FlowMap::autonomous(g.clone(), 0.0, u, settings);
    let mapped = fmap.apply_with_jacobian_batch(grid)?;
    let residuals: Vec<f64> = grid
        .par_iter()
        .zip(mapped.par_iter())
        .map(|(x, (y, jac))| {
            let zy = nalgebra::DVector::from_vec(z.eval(y));
            let push = jac
                .clone()
                .lu()
                .solve(&zy)
                .ok_or_else(|| Error::InvalidArgument("singular flow Jacobian".into()))?;
            let mut diff = push.as_slice().to_vec();
            for (c, f) in &series {
                for (d, v) in diff.iter_mut().zip(f.eval(x)) {
                    *d -= c * v;
                }
            }
            Ok(diff.iter().map(|d| d * d).sum::<f64>().sqrt())
        })
        .collect::<Result<_>>()?;
    Ok(residuals.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hermite(k: usize, x: f64) -> f64 {
        let (mut a, mut b) = (1.0, 2.0 * x);
        if k == 0 {
            return a;
        }
        for m in 1..k {
            let c = 2.0 * x * b - 2.0 * m as f64 * a;
            a = b;
            b = c;
        }
        b
    }

    #[test]
    fn gaussian_words_match_hermite() {
        let fam = FieldFamily::gaussian();
        for k in 0..=6 {
            let w = BracketWord::power(1, k, 2);
            let f = iterated_bracket(&fam, &w).unwrap();
            for x1 in [-1.0, 0.0, 0.5, 1.0] {
                let v = f.eval(&[x1, 0.3]);
                let expect = (-1f64).powi(k as i32) * hermite(k, x1) * (-x1 * x1).exp();
                assert!(v[0].abs() < 1e-12);
                assert!((v[1] - expect).abs() < 1e-10, "k={k} x1={x1}: {} vs {expect}", v[1]);
            }
        }
    }

    #[test]
    fn single_bracket_values() {
        let fam = FieldFamily::gaussian();
        let b = bracket(&fam.members()[0], &fam.members()[1]).unwrap();
        assert_eq!(b.eval(&[0.0, 0.0]), vec![0.0, 0.0]);
        let v = b.eval(&[1.0, 0.0]);
        assert!((v[1] + 2.0 / std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn evaluator_matches_direct_brackets() {
        let fam = FieldFamily::gaussian();
        let words = BracketWord::all_up_to(2, 4);
        let ev = WordEvaluator::new(&fam, &words, 1, DEFAULT_DEPTH_CAP).unwrap();
        let x = [0.4, -0.2];
        let jets = ev.jets(&x).unwrap();
        for (w, j) in words.iter().zip(&jets) {
            let f = iterated_bracket(&fam, w).unwrap();
            let direct = f.jet(&x, 1).unwrap();
            assert_eq!(direct.value(), j.value(), "{w}");
            assert_eq!(direct.jacobian(), j.jacobian(), "{w}");
        }
    }

    #[test]
    fn depth_cap_enforced() {
        let fam = FieldFamily::gaussian();
        let w = BracketWord::power(1, 8, 2);
        assert!(matches!(
            iterated_bracket(&fam, &w),
            Err(Error::DepthCap { depth: 9, cap: 8 })
        ));
        assert!(iterated_bracket_capped(&fam, &w, 9).is_ok());
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let a = SmoothField::unit(2, 0);
        let b = SmoothField::unit(3, 0);
        assert!(matches!(bracket(&a, &b), Err(Error::Dimension { .. })));
    }
}
