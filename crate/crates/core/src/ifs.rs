//! The covariance recursion as a random dynamical system.
//!
//! With arrival probability `γ̄` the filter applies `g` (packet received) and
//! otherwise `h` (packet lost). This module draws arrival paths, runs the
//! resulting iterated function system, samples its stationary law, runs the
//! scalar optimist/pessimist companions, and estimates contraction constants.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`. Arrival bit
//! `k` is `u_k < γ̄` where `u_k` is the `k`-th uniform `f64` of that stream.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::closed_form::scalar_fixed_point;
use crate::error::{Error, Result};
use crate::metrics::{distance, MetricKind};
use crate::spd::{random_gaussian_matrix, random_gaussian_vector, SpdMatrix, Symmetric};
use crate::system::{map_g, map_h, steady_state, ScalarSystem, SystemModel};

/// Entries above this magnitude stop a trajectory with an overflow flag.
pub const OVERFLOW_LIMIT: f64 = 1e300;
/// Slack for the `P ≥ P∞` support checks.
pub const SUPPORT_TOL: f64 = 1e-9;
pub const DEFAULT_BURN_IN: usize = 1000;
pub const DEFAULT_STRIDE: usize = 10;

/// Seed for the `index`-th independent task of a sweep.
pub fn derived_seed(base: u64, index: u64) -> u64 {
    base ^ index
}

fn check_gamma(gamma_bar: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero {
        (0.0..=1.0).contains(&gamma_bar)
    } else {
        gamma_bar > 0.0 && gamma_bar <= 1.0
    };
    if !ok {
        let range = if allow_zero { "[0, 1]" } else { "(0, 1]" };
        return Err(Error::Domain(format!(
            "arrival probability {gamma_bar} outside {range}"
        )));
    }
    Ok(())
}

/// Bernoulli stream driving the IFS.
struct ArrivalStream {
    rng: ChaCha8Rng,
    gamma_bar: f64,
}

impl ArrivalStream {
    fn new(gamma_bar: f64, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            gamma_bar,
        }
    }

    fn next_bit(&mut self) -> bool {
        self.rng.random::<f64>() < self.gamma_bar
    }
}

/// A realized arrival path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSequence {
    pub gamma_bar: f64,
    pub bits: Vec<u8>,
    pub seed: u64,
}

impl ArrivalSequence {
    /// Fixed bit pattern, e.g. for worked examples.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::EmptyInput);
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Domain("arrival bits must be 0 or 1".into()));
        }
        let rate = bits.iter().map(|&b| b as f64).sum::<f64>() / bits.len() as f64;
        Ok(Self {
            gamma_bar: rate,
            bits: bits.to_vec(),
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn empirical_rate(&self) -> f64 {
        self.bits.iter().map(|&b| b as f64).sum::<f64>() / self.bits.len() as f64
    }

    /// `τ(k)`: steps since the last arrival, after step `k` (0 when bit `k` is 1).
    pub fn steps_since_arrival(&self) -> Vec<usize> {
        let mut tau = 0;
        self.bits
            .iter()
            .map(|&b| {
                tau = if b == 1 { 0 } else { tau + 1 };
                tau
            })
            .collect()
    }
}

/// I.i.d. Bernoulli(`γ̄`) arrivals. `γ̄ = 0` is accepted and yields the all-loss path.
pub fn sample_arrivals(gamma_bar: f64, length: usize, seed: u64) -> Result<ArrivalSequence> {
    check_gamma(gamma_bar, true)?;
    if length == 0 {
        return Err(Error::Domain(
            "arrival sequence length must be positive".into(),
        ));
    }
    let mut stream = ArrivalStream::new(gamma_bar, seed);
    let bits = (0..length).map(|_| stream.next_bit() as u8).collect();
    Ok(ArrivalSequence {
        gamma_bar,
        bits,
        seed,
    })
}

/// One IFS step; `Ok(None)` signals overflow.
///
/// A step whose result is no longer positive definite in floating point
/// (unbounded growth along one direction only) counts as overflow too.
fn ifs_step(model: &SystemModel, p: &SpdMatrix, arrived: bool) -> Result<Option<SpdMatrix>> {
    let predicted = model.a() * p.matrix() * model.a().transpose() + model.q().matrix();
    if predicted
        .iter()
        .any(|x| !x.is_finite() || x.abs() > OVERFLOW_LIMIT)
    {
        return Ok(None);
    }
    let next = if arrived {
        map_g(model, p)
    } else {
        map_h(model, p)
    };
    match next {
        Ok(next) => Ok(Some(next)),
        Err(Error::DegenerateCovariance(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// A run of the IFS. `covariances[0]` is the initial value and
/// `covariances[k + 1]` is `g` or `h` of `covariances[k]` according to bit `k`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub covariances: Vec<SpdMatrix>,
    pub arrivals: ArrivalSequence,
    pub initial: SpdMatrix,
    /// Step at which the run stopped because an entry exceeded [`OVERFLOW_LIMIT`].
    pub overflow: Option<usize>,
}

impl Trajectory {
    pub fn last(&self) -> &SpdMatrix {
        self.covariances
            .last()
            .expect("trajectory holds the initial value")
    }
}

pub fn run_ifs(
    model: &SystemModel,
    arrivals: &ArrivalSequence,
    p0: &SpdMatrix,
) -> Result<Trajectory> {
    if p0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: p0.dim(),
        });
    }
    let mut covariances = Vec::with_capacity(arrivals.len() + 1);
    covariances.push(p0.clone());
    let mut overflow = None;
    for (k, &bit) in arrivals.bits.iter().enumerate() {
        let current = covariances.last().expect("nonempty");
        match ifs_step(model, current, bit == 1)? {
            Some(next) => covariances.push(next),
            None => {
                overflow = Some(k);
                break;
            }
        }
    }
    Ok(Trajectory {
        covariances,
        arrivals: arrivals.clone(),
        initial: p0.clone(),
        overflow,
    })
}

/// Stationary draws of the covariance with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub draws: Vec<SpdMatrix>,
    /// `τ` at each draw.
    pub taus: Vec<usize>,
    pub burn_in: usize,
    pub stride: usize,
    pub seed: u64,
    pub gamma_bar: f64,
    pub fingerprint: String,
    /// Steps simulated and arrivals among them.
    pub steps: usize,
    pub arrivals: usize,
    pub overflow: Option<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.draws.first().map_or(0, |d| d.dim())
    }

    pub fn empirical_rate(&self) -> f64 {
        self.arrivals as f64 / self.steps.max(1) as f64
    }
}

/// Runs the chain from `P∞`, discards `burn_in` steps, then keeps every
/// `stride`-th covariance until `count` draws are collected.
///
/// Draw `i` is the state after `burn_in + (i + 1) · stride` steps; the arrival
/// bits are exactly those of `sample_arrivals(γ̄, ·, seed)`. An overflow
/// truncates the set and is recorded.
pub fn stationary_samples(
    model: &SystemModel,
    gamma_bar: f64,
    burn_in: usize,
    count: usize,
    stride: usize,
    seed: u64,
) -> Result<SampleSet> {
    check_gamma(gamma_bar, false)?;
    if stride == 0 {
        return Err(Error::Domain("stride must be at least 1".into()));
    }
    if count == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    let p_inf = steady_state(model)?;
    let mut stream = ArrivalStream::new(gamma_bar, seed);
    let mut p = p_inf;
    let mut tau = 0usize;
    let mut arrivals = 0usize;
    let mut steps = 0usize;
    let mut draws = Vec::with_capacity(count);
    let mut taus = Vec::with_capacity(count);
    let mut overflow = None;
    let total = burn_in + count * stride;
    while steps < total {
        let bit = stream.next_bit();
        match ifs_step(model, &p, bit)? {
            Some(next) => p = next,
            None => {
                overflow = Some(steps);
                break;
            }
        }
        steps += 1;
        if bit {
            arrivals += 1;
            tau = 0;
        } else {
            tau += 1;
        }
        if steps > burn_in && (steps - burn_in).is_multiple_of(stride) {
            draws.push(p.clone());
            taus.push(tau);
        }
    }
    Ok(SampleSet {
        draws,
        taus,
        burn_in,
        stride,
        seed,
        gamma_bar,
        fingerprint: model.fingerprint(),
        steps,
        arrivals,
        overflow,
    })
}

#[derive(Serialize, Deserialize)]
struct SampleHeader {
    record: String,
    fingerprint: String,
    dim: usize,
    gamma_bar: f64,
    seed: u64,
    burn_in: usize,
    stride: usize,
    count: usize,
    steps: usize,
    arrivals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    overflow: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    index: usize,
    matrix: Vec<f64>,
    tau_since_arrival: usize,
}

fn io_error(e: std::io::Error) -> Error {
    Error::Parse {
        line: 0,
        message: e.to_string(),
    }
}

/// JSON-lines: a header record, then one `{index, matrix, tau_since_arrival}` per draw.
pub fn write_samples_jsonl<W: Write>(set: &SampleSet, mut out: W) -> Result<()> {
    let header = SampleHeader {
        record: "header".into(),
        fingerprint: set.fingerprint.clone(),
        dim: set.dim(),
        gamma_bar: set.gamma_bar,
        seed: set.seed,
        burn_in: set.burn_in,
        stride: set.stride,
        count: set.len(),
        steps: set.steps,
        arrivals: set.arrivals,
        overflow: set.overflow,
    };
    let line = serde_json::to_string(&header).expect("header serializes");
    writeln!(out, "{line}").map_err(io_error)?;
    for (index, (draw, &tau)) in set.draws.iter().zip(&set.taus).enumerate() {
        let record = SampleRecord {
            index,
            matrix: draw.to_row_major(),
            tau_since_arrival: tau,
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(out, "{line}").map_err(io_error)?;
    }
    Ok(())
}

pub fn read_samples_jsonl<R: BufRead>(input: R) -> Result<SampleSet> {
    let mut lines = input.lines().enumerate();
    let header: SampleHeader = loop {
        let Some((i, line)) = lines.next() else {
            return Err(Error::Parse {
                line: 1,
                message: "missing header record".into(),
            });
        };
        let line = line.map_err(io_error)?;
        if line.trim().is_empty() {
            continue;
        }
        break serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad header: {e}"),
        })?;
    };
    if header.record != "header" {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header record, found '{}'", header.record),
        });
    }
    let dim = header.dim;
    let mut draws = Vec::new();
    let mut taus = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(io_error)?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        if record.index != draws.len() {
            return Err(parse(format!(
                "expected index {}, found {}",
                draws.len(),
                record.index
            )));
        }
        if record.matrix.len() != dim * dim {
            return Err(parse(format!(
                "matrix has {} entries, expected {}",
                record.matrix.len(),
                dim * dim
            )));
        }
        let m = DMatrix::from_row_slice(dim, dim, &record.matrix);
        let draw = SpdMatrix::new(m).map_err(|e| parse(e.to_string()))?;
        draws.push(draw);
        taus.push(record.tau_since_arrival);
    }
    if draws.is_empty() {
        return Err(Error::EmptyInput);
    }
    if draws.len() != header.count {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "header announces {} draws, file has {}",
                header.count,
                draws.len()
            ),
        });
    }
    Ok(SampleSet {
        draws,
        taus,
        burn_in: header.burn_in,
        stride: header.stride,
        seed: header.seed,
        gamma_bar: header.gamma_bar,
        fingerprint: header.fingerprint,
        steps: header.steps,
        arrivals: header.arrivals,
        overflow: header.overflow,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompanionKind {
    Optimist,
    Pessimist,
}

/// Value the companion resets to after an arrival.
///
/// Optimist: `W_opt = ((a² P∞ + Q)⁻¹ + 𝓘)⁻¹`, which is `g(P∞) = P∞`.
/// Pessimist: `W_pess = 𝓘⁻¹`.
pub fn companion_reset(kind: CompanionKind, sys: &ScalarSystem) -> Result<f64> {
    match kind {
        CompanionKind::Optimist => {
            let p_inf = scalar_fixed_point(sys.a, sys.q, sys.info)?;
            let w = sys.update(p_inf);
            assert!(
                (w - p_inf).abs() <= 1e-9 * p_inf,
                "optimist reset {w} differs from the fixed point {p_inf}"
            );
            Ok(w)
        }
        CompanionKind::Pessimist => {
            if !(sys.info > 0.0) {
                return Err(Error::Domain(
                    "pessimist reset needs positive information".into(),
                ));
            }
            Ok(1.0 / sys.info)
        }
    }
}

/// Scalar run; `values[0]` is the initial value.
#[derive(Debug, Clone)]
pub struct ScalarTrajectory {
    pub values: Vec<f64>,
    pub overflow: Option<usize>,
}

pub fn run_companion(
    kind: CompanionKind,
    sys: &ScalarSystem,
    arrivals: &ArrivalSequence,
    p0: f64,
) -> Result<ScalarTrajectory> {
    let reset = companion_reset(kind, sys)?;
    let mut values = Vec::with_capacity(arrivals.len() + 1);
    values.push(p0);
    let mut p = p0;
    let mut overflow = None;
    for (k, &bit) in arrivals.bits.iter().enumerate() {
        p = if bit == 1 { reset } else { sys.predict(p) };
        if !(p.abs() <= OVERFLOW_LIMIT) {
            overflow = Some(k);
            break;
        }
        values.push(p);
    }
    Ok(ScalarTrajectory { values, overflow })
}

/// Stationary draws of a companion chain started at `P∞`, on the same
/// arrival stream as [`stationary_samples`] with equal arguments.
pub fn companion_stationary_samples(
    kind: CompanionKind,
    sys: &ScalarSystem,
    gamma_bar: f64,
    burn_in: usize,
    count: usize,
    stride: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_gamma(gamma_bar, false)?;
    if stride == 0 || count == 0 {
        return Err(Error::Domain("stride and count must be at least 1".into()));
    }
    let reset = companion_reset(kind, sys)?;
    let mut p = scalar_fixed_point(sys.a, sys.q, sys.info)?;
    let mut stream = ArrivalStream::new(gamma_bar, seed);
    let mut out = Vec::with_capacity(count);
    for step in 1..=burn_in + count * stride {
        p = if stream.next_bit() {
            reset
        } else {
            sys.predict(p)
        };
        if !(p.abs() <= OVERFLOW_LIMIT) {
            return Err(Error::Overflow { step });
        }
        if step > burn_in && (step - burn_in).is_multiple_of(stride) {
            out.push(p);
        }
    }
    Ok(out)
}

/// A map of the IFS, or a fixed composition of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RiccatiMap {
    G,
    H,
    /// `gⁿ`.
    GPower(usize),
    /// Composition applied left to right; `true` is `g`, `false` is `h`.
    Word(Vec<bool>),
}

impl RiccatiMap {
    pub fn apply(&self, model: &SystemModel, p: &SpdMatrix) -> Result<SpdMatrix> {
        match self {
            RiccatiMap::G => map_g(model, p),
            RiccatiMap::H => map_h(model, p),
            RiccatiMap::GPower(n) => {
                let mut x = p.clone();
                for _ in 0..*n {
                    x = map_g(model, &x)?;
                }
                Ok(x)
            }
            RiccatiMap::Word(word) => {
                let mut x = p.clone();
                for &arrived in word {
                    x = if arrived {
                        map_g(model, &x)?
                    } else {
                        map_h(model, &x)?
                    };
                }
                Ok(x)
            }
        }
    }
}

/// `d(f(P1), f(P2)) / d(P1, P2)`.
pub fn lipschitz_ratio(
    map: &RiccatiMap,
    model: &SystemModel,
    metric: MetricKind,
    p1: &SpdMatrix,
    p2: &SpdMatrix,
) -> Result<f64> {
    let before = distance(metric, p1, p2)?;
    if !(before > 0.0) {
        return Err(Error::Domain("coincident pair".into()));
    }
    let after = distance(metric, &map.apply(model, p1)?, &map.apply(model, p2)?)?;
    Ok(after / before)
}

/// Relative size of the rank-one bump in near-coincident pairs.
pub const NEAR_PAIR_EPS: f64 = 1e-3;

/// Test pairs in `{P ≥ base}`.
///
/// Even-indexed pairs are two independent points `base + s · M Mᵀ`, with `M`
/// standard normal and `s = ‖base‖_F · 10^u`, `u ~ U(−2, 2)`. Odd-indexed pairs
/// are `(P, P + ε ‖P‖_F d dᵀ / ‖d‖²)` with `ε = 1e-3`, probing the local ratio.
/// `base` is `P∞` when the model has one and the identity otherwise.
pub fn sample_pairs(model: &SystemModel, n_pairs: usize, seed: u64) -> Vec<(SpdMatrix, SpdMatrix)> {
    let dim = model.dim();
    let base = steady_state(model).unwrap_or_else(|_| SpdMatrix::identity(dim));
    let scale = base.frobenius_norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| -> SpdMatrix {
        let m = random_gaussian_matrix(rng, dim, dim);
        let s = scale * 10f64.powf(rng.random_range(-2.0..2.0));
        let raw = base.matrix() + (&m * m.transpose()) * s;
        SpdMatrix::from_computed(raw).unwrap_or_else(|| base.clone())
    };
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let p1 = point(&mut rng);
        let p2 = if i % 2 == 0 {
            point(&mut rng)
        } else {
            let d = random_gaussian_vector(&mut rng, dim);
            let bump =
                (&d * d.transpose()) * (NEAR_PAIR_EPS * p1.frobenius_norm() / d.norm_squared());
            SpdMatrix::from_computed(p1.matrix() + bump).unwrap_or_else(|| p1.clone())
        };
        pairs.push((p1, p2));
    }
    pairs
}

/// Empirical Lipschitz constant: the largest ratio over [`sample_pairs`].
/// Pairs whose ratio cannot be evaluated are skipped.
pub fn estimate_lipschitz(
    map: &RiccatiMap,
    model: &SystemModel,
    metric: MetricKind,
    n_pairs: usize,
    seed: u64,
) -> f64 {
    sample_pairs(model, n_pairs, seed)
        .iter()
        .filter_map(|(p1, p2)| lipschitz_ratio(map, model, metric, p1, p2).ok())
        .fold(0.0, f64::max)
}

fn mean_log_ratio(
    map: &RiccatiMap,
    model: &SystemModel,
    metric: MetricKind,
    pairs: &[(SpdMatrix, SpdMatrix)],
) -> f64 {
    let logs: Vec<f64> = pairs
        .iter()
        .filter_map(|(p1, p2)| lipschitz_ratio(map, model, metric, p1, p2).ok())
        .filter(|r| *r > 0.0)
        .map(f64::ln)
        .collect();
    if logs.is_empty() {
        return 0.0;
    }
    logs.iter().sum::<f64>() / logs.len() as f64
}

/// Largest block length accepted by [`average_contractivity`] (`2^block` words).
pub const MAX_BLOCK: usize = 12;

/// Barnsley's average contractivity, estimated on shared test pairs:
/// `Σ_w p(w) · mean log ratio(f_w)` over the words `w` of length `block`, with
/// `p(w) = γ̄^{#g} (1 − γ̄)^{#h}`. `block = 1` is `γ̄ E log ρ_g + (1 − γ̄) E log ρ_h`;
/// larger blocks give the power IFS. Negative values certify contraction on average.
pub fn average_contractivity(
    model: &SystemModel,
    gamma_bar: f64,
    metric: MetricKind,
    n_pairs: usize,
    seed: u64,
    block: usize,
) -> Result<f64> {
    check_gamma(gamma_bar, false)?;
    if block == 0 || block > MAX_BLOCK {
        return Err(Error::Domain(format!(
            "block length {block} outside 1..={MAX_BLOCK}"
        )));
    }
    let pairs = sample_pairs(model, n_pairs, seed);
    let mut total = 0.0;
    for code in 0u32..(1 << block) {
        let word: Vec<bool> = (0..block).map(|i| code & (1 << i) != 0).collect();
        let arrivals = word.iter().filter(|&&b| b).count() as i32;
        let weight = gamma_bar.powi(arrivals) * (1.0 - gamma_bar).powi(block as i32 - arrivals);
        if weight == 0.0 {
            continue;
        }
        total += weight * mean_log_ratio(&RiccatiMap::Word(word), model, metric, &pairs);
    }
    Ok(total)
}

/// `P ≥ reference − tol` for every draw.
pub fn support_holds(draws: &[SpdMatrix], reference: &SpdMatrix, tol: f64) -> Result<bool> {
    for d in draws {
        if !crate::spd::loewner_leq(reference, d, tol)? {
            return Ok(false);
        }
    }
    Ok(true)
}
