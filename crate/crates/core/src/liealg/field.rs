use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use super::expr::Expr;
use super::jet::Jet;
use crate::error::{Error, Result};

/// Jet order available for analytic fields (expressions and polynomials).
/// Iterated brackets lose one order per level, so this also bounds the
/// deepest word that can be evaluated.
pub const ANALYTIC_JET_ORDER: usize = 40;

/// Per-component jets of a vector field at a point.
#[derive(Debug, Clone)]
pub struct FieldJet {
    pub comps: Vec<Jet>,
}

impl FieldJet {
    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn order(&self) -> usize {
        self.comps[0].order()
    }

    pub fn value(&self) -> Vec<f64> {
        self.comps.iter().map(Jet::value).collect()
    }

    /// `J[i][j] = ∂F_i/∂x_j`; requires order ≥ 1.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.comps[i].gradient_component(j))
    }

    pub fn truncate(&self, order: usize) -> FieldJet {
        FieldJet {
            comps: self.comps.iter().map(|c| c.truncate(order)).collect(),
        }
    }

    pub fn zero(dim: usize, order: usize) -> FieldJet {
        FieldJet {
            comps: (0..dim).map(|_| Jet::zero(dim, order)).collect(),
        }
    }

    pub fn axpy(&mut self, c: f64, other: &FieldJet) {
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            a.axpy(c, b);
        }
    }
}

/// Jet of `[X, Y] = DY·X − DX·Y` at order `k`, from jets of `X` and `Y`
/// at order `k + 1`.
pub fn bracket_jet(x: &FieldJet, y: &FieldJet) -> FieldJet {
    let n = x.dim();
    let order = x.order() - 1;
    let xs: Vec<Jet> = x.comps.iter().map(|c| c.truncate(order)).collect();
    let ys: Vec<Jet> = y.comps.iter().map(|c| c.truncate(order)).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = Jet::zero(n, order);
        for j in 0..n {
            acc.add_product(&y.comps[i].derivative(j), &xs[j]);
            acc.sub_product(&x.comps[i].derivative(j), &ys[j]);
        }
        out.push(acc);
    }
    FieldJet { comps: out }
}

/// Sparse polynomial: list of `(coefficient, exponents)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| c * e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>())
            .sum()
    }

    fn jet(&self, x: &[f64], order: usize) -> Jet {
        let n = x.len();
        let vars: Vec<Jet> = (0..n).map(|i| Jet::variable(n, order, i, x[i])).collect();
        let mut acc = Jet::zero(n, order);
        for (c, e) in &self.terms {
            let mut m = Jet::constant(n, order, *c);
            for (i, &k) in e.iter().enumerate() {
                if k > 0 {
                    m = m.mul(&vars[i].powi(k));
                }
            }
            acc.add_assign(&m);
        }
        acc
    }
}

#[derive(Debug)]
enum Kind {
    Expr(Vec<Expr>),
    Polynomial(Vec<Polynomial>),
    Bracket(SmoothField, SmoothField),
    Combination(Vec<(f64, SmoothField)>),
}

/// A vector field on ℝⁿ with exact derivatives up to `max_jet_order`.
///
/// Cheap to clone; the definition is shared behind an `Arc`.
#[derive(Clone)]
pub struct SmoothField {
    dim: usize,
    label: String,
    max_jet_order: usize,
    kind: Arc<Kind>,
}

impl fmt::Debug for SmoothField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SmoothField({}, dim {}, order {})",
            self.label, self.dim, self.max_jet_order
        )
    }
}

pub fn coordinate_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("x{i}")).collect()
}

impl SmoothField {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn max_jet_order(&self) -> usize {
        self.max_jet_order
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Field from coordinate expressions over `x1..xn`.
    pub fn from_expressions<S: AsRef<str>>(label: impl Into<String>, exprs: &[S]) -> Result<Self> {
        let dim = exprs.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("a field needs at least one component".into()));
        }
        let names = coordinate_names(dim);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let parsed = exprs
            .iter()
            .map(|e| Expr::parse(e.as_ref(), &refs))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parsed(label, parsed))
    }

    pub fn from_parsed(label: impl Into<String>, exprs: Vec<Expr>) -> Self {
        SmoothField {
            dim: exprs.len(),
            label: label.into(),
            max_jet_order: ANALYTIC_JET_ORDER,
            kind: Arc::new(Kind::Expr(exprs)),
        }
    }

    pub fn constant(c: &[f64]) -> Self {
        let comps = c.iter().map(|&v| Expr::Const(v)).collect();
        Self::from_parsed(format!("const{c:?}"), comps)
    }

    /// Coordinate unit field `∂/∂x_{axis+1}` in dimension `dim`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut c = vec![0.0; dim];
        c[axis] = 1.0;
        Self::constant(&c).with_label(format!("d/dx{}", axis + 1))
    }

    /// `x ↦ A x`.
    pub fn linear(a: &DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "linear field needs a square matrix");
        let n = a.nrows();
        let comps = (0..n)
            .map(|i| Polynomial {
                terms: (0..n)
                    .filter(|&j| a[(i, j)] != 0.0)
                    .map(|j| {
                        let mut e = vec![0; n];
                        e[j] = 1;
                        (a[(i, j)], e)
                    })
                    .collect(),
            })
            .collect();
        Self::polynomial(comps).with_label("linear")
    }

    pub fn polynomial(components: Vec<Polynomial>) -> Self {
        SmoothField {
            dim: components.len(),
            label: "polynomial".into(),
            max_jet_order: ANALYTIC_JET_ORDER,
            kind: Arc::new(Kind::Polynomial(components)),
        }
    }

    /// Random polynomial field with all monomials of degree ≤ `degree` and
    /// coefficients uniform in `[-scale, scale]`.
    pub fn random_polynomial<R: Rng>(dim: usize, degree: u32, scale: f64, rng: &mut R) -> Self {
        let mut exps = Vec::new();
        let mut e = vec![0u32; dim];
        loop {
            if e.iter().sum::<u32>() <= degree {
                exps.push(e.clone());
            }
            let mut k = 0;
            loop {
                if k == dim {
                    let comps = (0..dim)
                        .map(|_| Polynomial {
                            terms: exps
                                .iter()
                                .map(|e| (scale * rng.random_range(-1.0..=1.0), e.clone()))
                                .collect(),
                        })
                        .collect();
                    return Self::polynomial(comps).with_label("random-poly");
                }
                e[k] += 1;
                if e[k] <= degree {
                    break;
                }
                e[k] = 0;
                k += 1;
            }
        }
    }

    /// `Σ c_i F_i`.
    pub fn combination(terms: Vec<(f64, SmoothField)>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty linear combination".into()))?;
        let dim = first.1.dim;
        for (_, f) in &terms {
            check_dims(dim, f, "linear combination")?;
        }
        let max_jet_order = terms.iter().map(|t| t.1.max_jet_order).min().unwrap_or(0);
        let label = terms
            .iter()
            .map(|(c, f)| format!("{c}*{}", f.label))
            .collect::<Vec<_>>()
            .join(" + ");
        Ok(SmoothField {
            dim,
            label,
            max_jet_order,
            kind: Arc::new(Kind::Combination(terms)),
        })
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::combination(vec![(c, self.clone())]).expect("single term")
    }

    pub(crate) fn bracket_of(x: &SmoothField, y: &SmoothField) -> Result<Self> {
        check_dims(x.dim, y, "bracket")?;
        let order = x.max_jet_order.min(y.max_jet_order);
        if order == 0 {
            let weak = if x.max_jet_order == 0 { x } else { y };
            return Err(Error::Capability {
                label: weak.label.clone(),
                requested: 1,
                available: 0,
            });
        }
        Ok(SmoothField {
            dim: x.dim,
            label: format!("[{},{}]", x.label, y.label),
            max_jet_order: order - 1,
            kind: Arc::new(Kind::Bracket(x.clone(), y.clone())),
        })
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                context: format!("evaluating `{}`", self.label),
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Value at `x` written into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        match &*self.kind {
            Kind::Expr(es) => {
                for (o, e) in out.iter_mut().zip(es) {
                    *o = e.eval(x);
                }
            }
            Kind::Polynomial(ps) => {
                for (o, p) in out.iter_mut().zip(ps) {
                    *o = p.eval(x);
                }
            }
            Kind::Combination(terms) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut tmp = vec![0.0; self.dim];
                for (c, f) in terms {
                    f.eval_into(x, &mut tmp);
                    for (o, t) in out.iter_mut().zip(&tmp) {
                        *o += c * t;
                    }
                }
            }
            Kind::Bracket(..) => {
                let j = self.jet_unchecked(x, 0);
                for (o, c) in out.iter_mut().zip(&j.comps) {
                    *o = c.value();
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    /// Taylor jet of every component at `x` up to `order`.
    pub fn jet(&self, x: &[f64], order: usize) -> Result<FieldJet> {
        self.check_point(x)?;
        if order > self.max_jet_order {
            return Err(Error::Capability {
                label: self.label.clone(),
                requested: order,
                available: self.max_jet_order,
            });
        }
        Ok(self.jet_unchecked(x, order))
    }

    fn jet_unchecked(&self, x: &[f64], order: usize) -> FieldJet {
        let n = self.dim;
        match &*self.kind {
            Kind::Expr(es) => FieldJet {
                comps: es.iter().map(|e| e.jet(x, order)).collect(),
            },
            Kind::Polynomial(ps) => FieldJet {
                comps: ps.iter().map(|p| p.jet(x, order)).collect(),
            },
            Kind::Combination(terms) => {
                let mut acc = FieldJet::zero(n, order);
                for (c, f) in terms {
                    acc.axpy(*c, &f.jet_unchecked(x, order));
                }
                acc
            }
            Kind::Bracket(a, b) => bracket_jet(&a.jet_unchecked(x, order + 1), &b.jet_unchecked(x, order + 1)),
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.jet(x, 1)?.jacobian())
    }
}

pub(crate) fn check_dims(dim: usize, f: &SmoothField, context: &str) -> Result<()> {
    if f.dim != dim {
        return Err(Error::Dimension {
            context: format!("{context} with `{}`", f.label),
            expected: dim,
            found: f.dim,
        });
    }
    Ok(())
}
