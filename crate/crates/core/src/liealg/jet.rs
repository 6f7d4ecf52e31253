//! Truncated multivariate Taylor jets.
//!
//! A jet of order `k` in `v` variables stores the Taylor coefficients
//! `a_e` of all monomials `δ^e` with `|e| ≤ k`. Monomials are kept in graded
//! order, so the coefficients of a lower-order truncation are a prefix of the
//! higher-order vector. Products and derivatives run off precomputed index
//! tables shared across threads.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

pub struct MonomialTable {
    vars: usize,
    order: usize,
    exps: Vec<Vec<u16>>,
    /// `degree_start[d]` is the index of the first monomial of degree `d`;
    /// the vector has `order + 2` entries.
    degree_start: Vec<usize>,
    /// Product triples `(i, j, k)` with `e_i + e_j = e_k`, sorted by `|e_k|`.
    mul: Vec<(u32, u32, u32)>,
    mul_upto: Vec<usize>,
    /// Per variable: `(src, dst, factor)` with `∂ δ^{e_src} = factor · δ^{e_dst}`.
    deriv: Vec<Vec<(u32, u32, f64)>>,
    deriv_upto: Vec<Vec<usize>>,
}

fn monomials_of_degree(vars: usize, degree: usize) -> Vec<Vec<u16>> {
    fn rec(vars: usize, left: usize, prefix: &mut Vec<u16>, out: &mut Vec<Vec<u16>>) {
        if prefix.len() + 1 == vars {
            prefix.push(left as u16);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e as u16);
            rec(vars, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(vars, degree, &mut Vec::with_capacity(vars), &mut out);
    out
}

impl MonomialTable {
    fn build(vars: usize, order: usize) -> Self {
        assert!(vars >= 1);
        let mut exps = Vec::new();
        let mut degree_start = Vec::with_capacity(order + 2);
        for d in 0..=order {
            degree_start.push(exps.len());
            exps.extend(monomials_of_degree(vars, d));
        }
        degree_start.push(exps.len());
        let index: HashMap<Vec<u16>, usize> = exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let degree = |i: usize| exps[i].iter().map(|&e| e as usize).sum::<usize>();

        let mut mul = Vec::new();
        let mut sum = vec![0u16; vars];
        for i in 0..exps.len() {
            let di = degree(i);
            for j in 0..degree_start[order - di + 1] {
                for v in 0..vars {
                    sum[v] = exps[i][v] + exps[j][v];
                }
                let k = index[&sum];
                mul.push((i as u32, j as u32, k as u32));
            }
        }
        mul.sort_by_key(|&(i, j, k)| (degree(k as usize), k, i, j));
        let mut mul_upto = vec![0; order + 1];
        for (d, slot) in mul_upto.iter_mut().enumerate() {
            *slot = mul.partition_point(|&(_, _, k)| degree(k as usize) <= d);
        }

        let mut deriv = Vec::with_capacity(vars);
        let mut deriv_upto = Vec::with_capacity(vars);
        for v in 0..vars {
            let mut list = Vec::new();
            for (src, e) in exps.iter().enumerate() {
                if e[v] == 0 {
                    continue;
                }
                let mut lowered = e.clone();
                lowered[v] -= 1;
                list.push((src as u32, index[&lowered] as u32, e[v] as f64));
            }
            let upto: Vec<usize> = (0..=order)
                .map(|d| list.partition_point(|&(s, _, _)| (s as usize) < degree_start[d + 1]))
                .collect();
            deriv.push(list);
            deriv_upto.push(upto);
        }

        MonomialTable {
            vars,
            order,
            exps,
            degree_start,
            mul,
            mul_upto,
            deriv,
            deriv_upto,
        }
    }

    pub fn len_for(&self, order: usize) -> usize {
        self.degree_start[order + 1]
    }

    pub fn index_of(&self, exps: &[usize]) -> Option<usize> {
        let d: usize = exps.iter().sum();
        if d > self.order || exps.len() != self.vars {
            return None;
        }
        (self.degree_start[d]..self.degree_start[d + 1])
            .find(|&i| self.exps[i].iter().zip(exps).all(|(&a, &b)| a as usize == b))
    }
}

type TableCache = Mutex<HashMap<(usize, usize), Arc<MonomialTable>>>;

/// Shared table for `vars` variables up to `order`.
pub fn table(vars: usize, order: usize) -> Arc<MonomialTable> {
    static CACHE: OnceLock<TableCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|p| p.into_inner());
    guard
        .entry((vars, order))
        .or_insert_with(|| Arc::new(MonomialTable::build(vars, order)))
        .clone()
}

#[derive(Clone)]
pub struct Jet {
    table: Arc<MonomialTable>,
    coeffs: Vec<f64>,
}

impl std::fmt::Debug for Jet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Jet")
            .field("vars", &self.vars())
            .field("order", &self.order())
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl Jet {
    pub fn zero(vars: usize, order: usize) -> Self {
        let table = table(vars, order);
        let n = table.len_for(order);
        Jet {
            table,
            coeffs: vec![0.0; n],
        }
    }

    pub fn constant(vars: usize, order: usize, c: f64) -> Self {
        let mut j = Jet::zero(vars, order);
        j.coeffs[0] = c;
        j
    }

    /// The coordinate function `x_i` expanded at `x0`.
    pub fn variable(vars: usize, order: usize, i: usize, x0: f64) -> Self {
        let mut j = Jet::constant(vars, order, x0);
        if order >= 1 {
            j.coeffs[1 + i] = 1.0;
        }
        j
    }

    /// `Σ_m series[m] δ_i^m`, truncated at the jet order.
    pub fn univariate(vars: usize, order: usize, i: usize, series: &[f64]) -> Self {
        let mut j = Jet::zero(vars, order);
        let mut e = vec![0usize; vars];
        for (m, &a) in series.iter().enumerate().take(order + 1) {
            e[i] = m;
            let idx = j.table.index_of(&e).expect("monomial within order");
            j.coeffs[idx] = a;
        }
        j
    }

    pub fn vars(&self) -> usize {
        self.table.vars
    }

    pub fn order(&self) -> usize {
        self.table.order
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Taylor coefficient of `δ^exps`.
    pub fn coeff(&self, exps: &[usize]) -> f64 {
        self.table.index_of(exps).map_or(0.0, |i| self.coeffs[i])
    }

    /// Partial derivative `∂^exps f(x0)`, i.e. the Taylor coefficient times `exps!`.
    pub fn partial(&self, exps: &[usize]) -> f64 {
        let fact: f64 = exps
            .iter()
            .map(|&e| (1..=e).map(|k| k as f64).product::<f64>())
            .product();
        self.coeff(exps) * fact
    }

    /// First partial `∂f/∂x_i` at the expansion point.
    pub fn gradient_component(&self, i: usize) -> f64 {
        if self.order() == 0 {
            return 0.0;
        }
        self.coeffs[1 + i]
    }

    pub fn truncate(&self, order: usize) -> Jet {
        assert!(order <= self.order(), "cannot raise jet order by truncation");
        if order == self.order() {
            return self.clone();
        }
        let table = table(self.vars(), order);
        let n = table.len_for(order);
        Jet {
            table,
            coeffs: self.coeffs[..n].to_vec(),
        }
    }

    fn check_compatible(&self, other: &Jet) {
        debug_assert_eq!(self.vars(), other.vars());
        debug_assert_eq!(self.order(), other.order());
    }

    pub fn add_assign(&mut self, other: &Jet) {
        self.check_compatible(other);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
    }

    pub fn sub_assign(&mut self, other: &Jet) {
        self.check_compatible(other);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a -= b;
        }
    }

    /// `self += c · other`
    pub fn axpy(&mut self, c: f64, other: &Jet) {
        self.check_compatible(other);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.coeffs {
            *a *= c;
        }
    }

    pub fn scaled(&self, c: f64) -> Jet {
        let mut j = self.clone();
        j.scale(c);
        j
    }

    /// `self += a · b`, truncated at the common order.
    pub fn add_product(&mut self, a: &Jet, b: &Jet) {
        self.check_compatible(a);
        self.check_compatible(b);
        let t = &self.table;
        let n = t.mul_upto[t.order];
        for &(i, j, k) in &t.mul[..n] {
            self.coeffs[k as usize] += a.coeffs[i as usize] * b.coeffs[j as usize];
        }
    }

    /// `self -= a · b`
    pub fn sub_product(&mut self, a: &Jet, b: &Jet) {
        self.check_compatible(a);
        self.check_compatible(b);
        let t = &self.table;
        let n = t.mul_upto[t.order];
        for &(i, j, k) in &t.mul[..n] {
            self.coeffs[k as usize] -= a.coeffs[i as usize] * b.coeffs[j as usize];
        }
    }

    pub fn mul(&self, other: &Jet) -> Jet {
        let mut out = Jet::zero(self.vars(), self.order());
        out.add_product(self, other);
        out
    }

    pub fn powi(&self, k: u32) -> Jet {
        let mut acc = Jet::constant(self.vars(), self.order(), 1.0);
        for _ in 0..k {
            acc = acc.mul(self);
        }
        acc
    }

    /// `∂/∂x_var`; the result has order one less.
    pub fn derivative(&self, var: usize) -> Jet {
        assert!(self.order() >= 1, "derivative of an order-0 jet");
        let order = self.order() - 1;
        let mut out = Jet::zero(self.vars(), order);
        let t = &self.table;
        let n = t.deriv_upto[var][order + 1];
        for &(src, dst, f) in &t.deriv[var][..n] {
            out.coeffs[dst as usize] += f * self.coeffs[src as usize];
        }
        out
    }
}
