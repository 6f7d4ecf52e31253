//! Extended controls over a bracket dictionary and their construction from
//! a diffeotopy generator.

mod hermite;

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

pub use hermite::{
    expand_profile, gauss_hermite, hermite_poly, identity_report, profile_derivative_bound, HermiteExpansion,
    HermiteReport, Profile, HERMITE_CAP,
};

use crate::ensemble::Diffeotopy;
use crate::error::{Error, InfeasibleNode, Result};
use crate::flow::{CompactBox, CubicSpline, Signal, SignalRef, TimeField};
use crate::liealg::{iterated_bracket_capped, BracketWord, FieldFamily, SmoothField, WordEvaluator};

/// The finite set of bracket words available as virtual channels.
#[derive(Debug, Clone)]
pub struct BracketDictionary {
    family: FieldFamily,
    words: Vec<BracketWord>,
    depth_cap: usize,
    values: WordEvaluator,
    jets: WordEvaluator,
}

impl BracketDictionary {
    /// Dictionary with the plain words `(1)..(s)` first, then `words` in
    /// order. Plain words listed explicitly are not duplicated; any other
    /// repetition is an error.
    pub fn new(family: &FieldFamily, words: &[BracketWord], depth_cap: usize) -> Result<Self> {
        let mut all: Vec<BracketWord> = (1..=family.len()).map(BracketWord::letter).collect();
        for w in words {
            if w.depth() == 1 && w.head() <= family.len() {
                continue;
            }
            if all.contains(w) {
                return Err(Error::InvalidArgument(format!("word {w} listed twice")));
            }
            all.push(w.clone());
        }
        let values = WordEvaluator::new(family, &all, 0, depth_cap)?;
        let jets = WordEvaluator::new(family, &all, 1, depth_cap)?;
        Ok(BracketDictionary {
            family: family.clone(),
            words: all,
            depth_cap,
            values,
            jets,
        })
    }

    /// `{(1)} ∪ {(1^k 2) : k ≤ m}` on a two-member family.
    pub fn hermite(family: &FieldFamily, m: usize, depth_cap: usize) -> Result<Self> {
        let words: Vec<BracketWord> = (0..=m).map(|k| BracketWord::power(1, k, 2)).collect();
        Self::new(family, &words, depth_cap)
    }

    /// Parses `"hermite:M"` or a list of words separated by spaces or
    /// commas, e.g. `"1 2 12 112"`.
    pub fn from_spec(family: &FieldFamily, spec: &str, depth_cap: usize) -> Result<Self> {
        let spec = spec.trim();
        if let Some(m) = spec.strip_prefix("hermite:") {
            let m: usize = m
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad dictionary shorthand `{spec}`")))?;
            return Self::hermite(family, m, depth_cap);
        }
        let words = spec
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<BracketWord>>>()?;
        Self::new(family, &words, depth_cap)
    }

    pub fn family(&self) -> &FieldFamily {
        &self.family
    }

    pub fn words(&self) -> &[BracketWord] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn depth_cap(&self) -> usize {
        self.depth_cap
    }

    pub fn max_depth(&self) -> usize {
        self.words.iter().map(BracketWord::depth).max().unwrap_or(0)
    }

    /// The realized field `X^β` of word `i`.
    pub fn field(&self, i: usize) -> Result<SmoothField> {
        iterated_bracket_capped(&self.family, &self.words[i], self.depth_cap)
    }

    /// `X^β(x)` for every word.
    pub fn values(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.values.values(x)
    }

    /// `(X^β(x), DX^β(x))` for every word.
    pub fn values_and_jacobians(&self, x: &[f64]) -> Result<Vec<(Vec<f64>, DMatrix<f64>)>> {
        Ok(self.jets.jets(x)?.iter().map(|j| (j.value(), j.jacobian())).collect())
    }
}

/// Coefficients `v_β(t)` sampled on a shared uniform grid over `[0, T]`
/// and interpolated by natural cubic splines.
#[derive(Debug, Clone, Serialize)]
pub struct ExtendedControl {
    words: Vec<BracketWord>,
    times: Vec<f64>,
    samples: Vec<Vec<f64>>,
    #[serde(skip)]
    splines: Vec<Arc<CubicSpline>>,
}

impl ExtendedControl {
    /// `samples[i]` holds the values of word `i` at `times`.
    pub fn new(words: Vec<BracketWord>, times: Vec<f64>, samples: Vec<Vec<f64>>) -> Result<Self> {
        if words.len() != samples.len() {
            return Err(Error::GridMismatch(format!(
                "{} words but {} sample columns",
                words.len(),
                samples.len()
            )));
        }
        if times.len() >= 3 {
            let h = times[1] - times[0];
            let uniform = times
                .windows(2)
                .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0));
            if !uniform {
                return Err(Error::GridMismatch("extended control grid must be uniform".into()));
            }
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != times.len()) {
            return Err(Error::GridMismatch(format!(
                "{} samples on a grid of {} times",
                bad.len(),
                times.len()
            )));
        }
        if times.first() != Some(&0.0) {
            return Err(Error::GridMismatch("extended control grid must start at t = 0".into()));
        }
        let splines = samples
            .iter()
            .map(|s| CubicSpline::new(times.clone(), s.clone()).map(Arc::new))
            .collect::<Result<_>>()?;
        Ok(ExtendedControl {
            words,
            times,
            samples,
            splines,
        })
    }

    /// Time-constant coefficients.
    pub fn constant(words: Vec<BracketWord>, horizon: f64, coeffs: &[f64]) -> Result<Self> {
        let samples = coeffs.iter().map(|&c| vec![c, c]).collect();
        Self::new(words, vec![0.0, horizon], samples)
    }

    /// Samples `f(word index, t)` on `intervals + 1` uniform times.
    pub fn from_fn(
        words: Vec<BracketWord>,
        horizon: f64,
        intervals: usize,
        f: impl Fn(usize, f64) -> f64,
    ) -> Result<Self> {
        let times: Vec<f64> = (0..=intervals).map(|k| horizon * k as f64 / intervals as f64).collect();
        let samples = (0..words.len())
            .map(|i| times.iter().map(|&t| f(i, t)).collect())
            .collect();
        Self::new(words, times, samples)
    }

    pub fn words(&self) -> &[BracketWord] {
        &self.words
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("nonempty grid")
    }

    pub fn coefficient(&self, i: usize, t: f64) -> f64 {
        self.splines[i].value(t)
    }

    pub fn signal(&self, i: usize) -> SignalRef {
        self.splines[i].clone()
    }

    /// True when every sample of word `i` is zero.
    pub fn is_zero_channel(&self, i: usize) -> bool {
        self.samples[i].iter().all(|&v| v == 0.0)
    }

    /// Index of `word`, if present.
    pub fn position(&self, word: &BracketWord) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    /// CSV with header `t,<word>,<word>,…`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.words.iter().map(ToString::to_string));
        wr.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.samples.iter().map(|s| s[k].to_string()));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.get(0) != Some("t") {
            return Err(Error::InvalidArgument(
                "extended control CSV must start with a `t` column".into(),
            ));
        }
        let words = headers
            .iter()
            .skip(1)
            .map(str::parse)
            .collect::<Result<Vec<BracketWord>>>()?;
        let mut times = Vec::new();
        let mut samples = vec![Vec::new(); words.len()];
        for rec in rd.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad number `{s}` in extended control CSV")))
            };
            times.push(parse(&rec[0])?);
            for (col, s) in samples.iter_mut().zip(rec.iter().skip(1)) {
                col.push(parse(s)?);
            }
        }
        Self::new(words, times, samples)
    }
}

/// The extended system `ẋ = Σ_β v_β(t) X^β(x)`.
#[derive(Debug, Clone)]
pub struct ExtendedSystem {
    dictionary: BracketDictionary,
    control: ExtendedControl,
}

impl ExtendedSystem {
    pub fn new(dictionary: BracketDictionary, control: ExtendedControl) -> Result<Self> {
        if dictionary.words() != control.words() {
            return Err(Error::InvalidArgument(
                "extended control words differ from the dictionary".into(),
            ));
        }
        Ok(ExtendedSystem { dictionary, control })
    }

    pub fn dictionary(&self) -> &BracketDictionary {
        &self.dictionary
    }

    pub fn control(&self) -> &ExtendedControl {
        &self.control
    }

    fn coefficients(&self, t: f64) -> Vec<f64> {
        (0..self.control.words.len())
            .map(|i| self.control.coefficient(i, t))
            .collect()
    }
}

impl TimeField for ExtendedSystem {
    fn dim(&self) -> usize {
        self.dictionary.family.dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let c = self.coefficients(t);
        combine(&c, &self.dictionary.values(x)?, out);
        Ok(())
    }

    fn jacobian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        let c = self.coefficients(t);
        let n = self.dim();
        let mut j = DMatrix::zeros(n, n);
        for (ci, (_, dj)) in c.iter().zip(self.dictionary.values_and_jacobians(x)?) {
            if *ci != 0.0 {
                j += dj * *ci;
            }
        }
        Ok(j)
    }

    fn eval_batch(&self, t: f64, xs: &[f64], out: &mut [f64]) -> Result<()> {
        let c = self.coefficients(t);
        let n = self.dim();
        for (x, o) in xs.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            combine(&c, &self.dictionary.values(x)?, o);
        }
        Ok(())
    }
}

fn combine(c: &[f64], values: &[Vec<f64>], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (ci, v) in c.iter().zip(values) {
        if *ci != 0.0 {
            for (o, vi) in out.iter_mut().zip(v) {
                *o += ci * vi;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApproximationSettings {
    pub time_nodes: usize,
    /// Bound on `‖Σ c_β X^β‖_{1,box}` at every node.
    pub lambda: f64,
    /// Absolute weight of the `‖c‖²` penalty.
    pub tikhonov: f64,
    /// Largest acceptable node residual; `None` accepts any.
    pub tolerance: Option<f64>,
    /// Control samples per node interval.
    pub samples_per_interval: usize,
}

impl Default for ApproximationSettings {
    fn default() -> Self {
        ApproximationSettings {
            time_nodes: 33,
            lambda: 10.0,
            tikhonov: 1e-8,
            tolerance: None,
            samples_per_interval: 8,
        }
    }
}

/// Outcome of [`approximate_generator`].
#[derive(Debug, Clone, Serialize)]
pub struct GeneratorApproximation {
    #[serde(skip)]
    pub control: ExtendedControl,
    pub node_times: Vec<f64>,
    /// Coefficients per node, in dictionary order.
    pub node_coeffs: Vec<Vec<f64>>,
    pub node_residuals: Vec<f64>,
    /// `‖Σ c_β X^β‖_{1,box}` per node after the λ-constraint.
    pub node_norms: Vec<f64>,
    pub shrunk_nodes: Vec<usize>,
    pub max_node_residual: f64,
    /// Sup over the sample grid and θ of `|Y_t(γ_t) − X_t(γ_t)|`.
    pub generator_residual: f64,
    /// Residual per sample time.
    pub residual_profile: Vec<f64>,
    pub sample_times: Vec<f64>,
    pub modulus_generator: f64,
    pub modulus_trajectory: f64,
    /// `max node residual + ω_Y(Δt) + λ·ω_γ(Δt)`.
    pub blended_bound: f64,
    pub lambda: f64,
    /// Sup over sample times of `‖X_t‖_{1,box}`.
    pub lambda_measured: f64,
}

/// `max over box nodes of |Σ c X| + ‖Σ c DX‖_F`.
fn box_norm(c: &[f64], cache: &[Vec<(Vec<f64>, DMatrix<f64>)>]) -> f64 {
    cache
        .iter()
        .map(|words| {
            let n = words[0].0.len();
            let mut v = vec![0.0; n];
            let mut j = DMatrix::zeros(n, n);
            for (ci, (val, jac)) in c.iter().zip(words) {
                if *ci != 0.0 {
                    for (a, b) in v.iter_mut().zip(val) {
                        *a += ci * b;
                    }
                    j += jac * *ci;
                }
            }
            v.iter().map(|a| a * a).sum::<f64>().sqrt() + j.norm()
        })
        .fold(0.0, f64::max)
}

/// Normalized cos² windows of half-width `delta` around `nodes`.
pub fn partition_of_unity(nodes: &[f64], delta: f64, t: f64) -> Vec<f64> {
    let mut w: Vec<f64> = nodes
        .iter()
        .map(|&ti| {
            let s = (t - ti) / delta;
            if s.abs() < 1.0 {
                (std::f64::consts::FRAC_PI_2 * s).cos().powi(2)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Tikhonov-regularized least squares through the SVD.
fn regularized_lsq(a: &DMatrix<f64>, b: &DVector<f64>, mu: f64) -> Vec<f64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut c = DVector::zeros(a.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        let coef = s / (s * s + mu) * u.column(k).dot(b);
        c += vt.row(k).transpose() * coef;
    }
    c.iter().copied().collect()
}

/// Fits `Y_t ≈ Σ_β c_β X^β` along `γ_t` at uniform time nodes, keeps each
/// node fit inside the λ-ball of `‖·‖_{1,box}` by a uniform shrink, and
/// blends the node coefficients with a cos² partition of unity.
pub fn approximate_generator(
    d: &Diffeotopy,
    dict: &BracketDictionary,
    settings: &ApproximationSettings,
    k: &CompactBox,
) -> Result<GeneratorApproximation> {
    let n = dict.family.dim();
    if d.start.dim() != n || k.dim() != n {
        return Err(Error::Dimension {
            context: "generator approximation".into(),
            expected: n,
            found: if d.start.dim() != n { d.start.dim() } else { k.dim() },
        });
    }
    if settings.time_nodes < 2 || settings.samples_per_interval == 0 {
        return Err(Error::InvalidArgument(
            "need at least 2 time nodes and 1 sample per interval".into(),
        ));
    }
    if !(settings.lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    let horizon = d.horizon;
    let intervals = settings.time_nodes - 1;
    let r = settings.samples_per_interval;
    let fine = intervals * r;
    let sample_times: Vec<f64> = (0..=fine).map(|j| horizon * j as f64 / fine as f64).collect();
    let node_times: Vec<f64> = (0..=intervals).map(|i| sample_times[i * r]).collect();
    let delta = horizon / intervals as f64;

    let samples = d.samples(&sample_times)?;
    // word values along γ at every sample time
    let word_values: Vec<Vec<Vec<Vec<f64>>>> = samples
        .iter()
        .map(|s| {
            s.ensemble
                .points()
                .par_iter()
                .map(|x| dict.values(x))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let box_cache: Vec<Vec<(Vec<f64>, DMatrix<f64>)>> = k
        .grid()
        .par_iter()
        .map(|x| dict.values_and_jacobians(x))
        .collect::<Result<_>>()?;

    let p = dict.len();
    let rows = d.start.len() * n;
    let solved: Vec<(Vec<f64>, f64, bool)> = (0..=intervals)
        .into_par_iter()
        .map(|i| {
            let j = i * r;
            let a = DMatrix::from_fn(rows, p, |row, col| word_values[j][row / n][col][row % n]);
            let b = DVector::from_iterator(rows, samples[j].generator_values.iter().flatten().copied());
            let mut c = regularized_lsq(&a, &b, settings.tikhonov);
            let norm = box_norm(&c, &box_cache);
            let shrunk = norm >= settings.lambda;
            if shrunk {
                let s = settings.lambda * (1.0 - 1e-9) / norm;
                c.iter_mut().for_each(|v| *v *= s);
            }
            let norm = box_norm(&c, &box_cache);
            (c, norm, shrunk)
        })
        .collect();
    let node_coeffs: Vec<Vec<f64>> = solved.iter().map(|s| s.0.clone()).collect();
    let node_norms: Vec<f64> = solved.iter().map(|s| s.1).collect();
    let shrunk_nodes: Vec<usize> = solved
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.2.then_some(i))
        .collect();

    let residual_at = |j: usize, c: &[f64]| -> f64 {
        let mut out = vec![0.0; n];
        samples[j]
            .generator_values
            .iter()
            .zip(&word_values[j])
            .map(|(y, words)| {
                combine(c, words, &mut out);
                y.iter().zip(&out).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    };
    let node_residuals: Vec<f64> = node_coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| residual_at(i * r, c))
        .collect();
    if let Some(tol) = settings.tolerance {
        let bad: Vec<InfeasibleNode> = node_residuals
            .iter()
            .enumerate()
            .filter(|(_, &res)| res > tol)
            .map(|(i, &residual)| InfeasibleNode {
                index: i,
                time: node_times[i],
                residual,
            })
            .collect();
        if !bad.is_empty() {
            return Err(Error::Infeasible { nodes: bad });
        }
    }

    let blended: Vec<Vec<f64>> = sample_times
        .iter()
        .map(|&t| {
            let mu = partition_of_unity(&node_times, delta, t);
            let mut v = vec![0.0; p];
            for (m, c) in mu.iter().zip(&node_coeffs) {
                if *m != 0.0 {
                    for (a, b) in v.iter_mut().zip(c) {
                        *a += m * b;
                    }
                }
            }
            v
        })
        .collect();
    let residual_profile: Vec<f64> = (0..=fine).map(|j| residual_at(j, &blended[j])).collect();
    let generator_residual = residual_profile.iter().copied().fold(0.0, f64::max);
    let lambda_measured = blended
        .par_iter()
        .map(|c| box_norm(c, &box_cache))
        .reduce(|| 0.0, f64::max);

    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut modulus_generator = 0.0f64;
    let mut modulus_trajectory = 0.0f64;
    for s in &samples {
        for i in 0..=intervals {
            let node = &samples[i * r];
            if (s.time - node.time).abs() > delta * (1.0 + 1e-12) {
                continue;
            }
            for (a, b) in s.generator_values.iter().zip(&node.generator_values) {
                modulus_generator = modulus_generator.max(dist(a, b));
            }
            for (a, b) in s.ensemble.points().iter().zip(node.ensemble.points()) {
                modulus_trajectory = modulus_trajectory.max(dist(a, b));
            }
        }
    }
    let max_node_residual = node_residuals.iter().copied().fold(0.0, f64::max);

    let samples_by_word: Vec<Vec<f64>> = (0..p).map(|b| blended.iter().map(|v| v[b]).collect()).collect();
    let control = ExtendedControl::new(dict.words.clone(), sample_times.clone(), samples_by_word)?;
    Ok(GeneratorApproximation {
        control,
        node_times,
        node_coeffs,
        node_residuals,
        node_norms,
        shrunk_nodes,
        max_node_residual,
        generator_residual,
        residual_profile,
        sample_times,
        modulus_generator,
        modulus_trajectory,
        blended_bound: max_node_residual + modulus_generator + settings.lambda * modulus_trajectory,
        lambda: settings.lambda,
        lambda_measured,
    })
}
