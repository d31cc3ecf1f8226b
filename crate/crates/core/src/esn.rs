//! Echo-state-network location predictor.
//!
//! The reservoir is a sparse cycle with bidirectional jumps, rescaled to a
//! target spectral radius. Only the linear readout is trained, in closed form.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, Schur};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mobility::{HistoryWindow, Position};
use crate::rng::{label, substream};

const MAX_BUILD_ATTEMPTS: u64 = 8;
const MODEL_HEADER: &str = "esn-model v1";

/// Largest activation kept; `tanh` rounds to exactly 1.0 for large inputs.
const MAX_ACTIVATION: f64 = 1.0 - f64::EPSILON;

#[derive(Debug, Error)]
pub enum EsnError {
    #[error("invalid ESN configuration: {0}")]
    Config(String),
    #[error("reservoir construction failed after {0} attempts")]
    Degenerate(u64),
    #[error("normal matrix is singular; use ridge_lambda > 0")]
    Singular,
    #[error("model has no trained readout")]
    Untrained,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("NRMSE undefined: actual sequence has zero variance")]
    UndefinedMetric,
    #[error("sequences differ in length or are empty ({0} vs {1})")]
    Length(usize, usize),
    #[error("model file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsnConfig {
    pub reservoir_size: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub ridge_lambda: f64,
    pub cycle_weight_std: f64,
    pub jump_weight_std: f64,
    pub input_scale: f64,
    pub spectral_radius_target: f64,
    pub jump_stride: usize,
    pub washout: usize,
    pub seed: u64,
}

impl Default for EsnConfig {
    fn default() -> Self {
        Self {
            reservoir_size: 64,
            n_in: 4,
            n_out: 1,
            ridge_lambda: 0.01,
            cycle_weight_std: 1.0,
            jump_weight_std: 1.0,
            input_scale: 0.5,
            spectral_radius_target: 0.9,
            jump_stride: 2,
            washout: 20,
            seed: 0,
        }
    }
}

impl EsnConfig {
    pub fn validate(&self) -> Result<(), EsnError> {
        let bad = |m: &str| Err(EsnError::Config(m.to_string()));
        if self.reservoir_size < 2 {
            return bad("reservoir_size must be at least 2");
        }
        if self.n_in == 0 || self.n_out == 0 {
            return bad("n_in and n_out must be positive");
        }
        if !(self.ridge_lambda >= 0.0) {
            return bad("ridge_lambda must be non-negative");
        }
        if !(self.spectral_radius_target > 0.0 && self.spectral_radius_target < 1.0) {
            return bad("spectral_radius_target must lie in (0, 1)");
        }
        if !(self.cycle_weight_std > 0.0 && self.jump_weight_std > 0.0 && self.input_scale > 0.0) {
            return bad("weight scales must be positive");
        }
        if self.jump_stride == 0 {
            return bad("jump_stride must be positive");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.n_in
    }

    pub fn output_dim(&self) -> usize {
        2 * self.n_out
    }
}

/// Affine map of a bounding box onto [-1, 1]^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub center: Position,
    pub half_span: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { center: Position::new(0.0, 0.0), half_span: 1.0 }
    }
}

impl Normalizer {
    /// Uses the larger side of the box for both axes so distances keep
    /// their proportions.
    pub fn from_bounds(min: Position, max: Position) -> Self {
        let half = ((max.x - min.x).max(max.y - min.y) / 2.0).max(1.0);
        Self { center: Position::new((min.x + max.x) / 2.0, (min.y + max.y) / 2.0), half_span: half }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Position>) -> Self {
        let mut lo = Position::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Position::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            lo = Position::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Position::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if !lo.x.is_finite() {
            return Self::default();
        }
        Self::from_bounds(lo, hi)
    }

    pub fn forward(&self, p: Position) -> (f64, f64) {
        ((p.x - self.center.x) / self.half_span, (p.y - self.center.y) / self.half_span)
    }

    pub fn inverse(&self, x: f64, y: f64) -> Position {
        Position::new(self.center.x + x * self.half_span, self.center.y + y * self.half_span)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub user_id: u32,
    pub v: DVector<f64>,
}

impl ReservoirState {
    pub fn zeros(user_id: u32, size: usize) -> Self {
        Self { user_id, v: DVector::zeros(size) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsnModel {
    pub config: EsnConfig,
    pub w_in: DMatrix<f64>,
    pub w_res: DMatrix<f64>,
    pub w_out: Option<DMatrix<f64>>,
    pub normalizer: Normalizer,
}

/// Nonzero positions of the cycle-with-jumps pattern, row-major order.
pub fn reservoir_pattern(size: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut cells = std::collections::BTreeSet::new();
    for i in 0..size {
        cells.insert(((i + 1) % size, i));
    }
    let cycle = cells.clone();
    for i in (0..size).step_by(stride) {
        let j = (i + stride) % size;
        for cell in [(i, j), (j, i)] {
            if cell.0 != cell.1 && !cycle.contains(&cell) {
                cells.insert(cell);
            }
        }
    }
    cells.into_iter().collect()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> Option<f64> {
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000)?;
    Some(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

fn gaussian(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("validated positive deviation")
}

/// Builds the fixed input and reservoir matrices. Deterministic in `config.seed`.
pub fn build_reservoir(config: &EsnConfig) -> Result<EsnModel, EsnError> {
    config.validate()?;
    let n = config.reservoir_size;
    let pattern = reservoir_pattern(n, config.jump_stride);
    for attempt in 0..MAX_BUILD_ATTEMPTS {
        let mut rng = substream(config.seed, &[label::RESERVOIR, attempt]);
        let (cycle, jump) = (gaussian(config.cycle_weight_std), gaussian(config.jump_weight_std));
        let mut w = DMatrix::zeros(n, n);
        for &(r, c) in &pattern {
            let is_cycle = r == (c + 1) % n;
            w[(r, c)] = if is_cycle { cycle.sample(&mut rng) } else { jump.sample(&mut rng) };
        }
        let Some(rho) = spectral_radius(&w) else { continue };
        if !(rho > 1e-12) || w.rank(1e-10) < n {
            continue;
        }
        w *= config.spectral_radius_target / rho;
        let input = gaussian(1.0);
        let w_in = DMatrix::from_fn(n, config.input_dim(), |_, _| input.sample(&mut rng) * config.input_scale);
        return Ok(EsnModel { config: config.clone(), w_in, w_res: w, w_out: None, normalizer: Normalizer::default() });
    }
    Err(EsnError::Degenerate(MAX_BUILD_ATTEMPTS))
}

/// `W_out = Y V^T (V V^T + lambda^2 I)^-1`.
pub fn ridge_readout(states: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>, EsnError> {
    if states.ncols() == 0 || states.ncols() != targets.ncols() {
        return Err(EsnError::Dimension(format!(
            "{} state columns vs {} target columns",
            states.ncols(),
            targets.ncols()
        )));
    }
    let w = states.nrows();
    let gram = states * states.transpose() + DMatrix::identity(w, w) * (lambda * lambda);
    let rhs = states * targets.transpose();
    let solved = if lambda > 0.0 {
        gram.cholesky().ok_or(EsnError::Singular)?.solve(&rhs)
    } else {
        let svd = gram.clone().svd(false, false);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= smax * w as f64 * f64::EPSILON * 16.0 {
            return Err(EsnError::Singular);
        }
        gram.lu().solve(&rhs).ok_or(EsnError::Singular)?
    };
    Ok(solved.transpose())
}

impl EsnModel {
    pub fn size(&self) -> usize {
        self.config.reservoir_size
    }

    pub fn is_trained(&self) -> bool {
        self.w_out.is_some()
    }

    pub fn nonzeros(&self) -> usize {
        self.w_res.iter().filter(|v| **v != 0.0).count()
    }

    /// `v' = tanh(W v + W_in m)`.
    pub fn step(&self, state: &ReservoirState, input: &DVector<f64>) -> Result<ReservoirState, EsnError> {
        if state.v.len() != self.size() || input.len() != self.w_in.ncols() {
            return Err(EsnError::Dimension(format!(
                "state {} / input {} for reservoir {}x{}",
                state.v.len(),
                input.len(),
                self.size(),
                self.w_in.ncols()
            )));
        }
        let pre = &self.w_res * &state.v + &self.w_in * input;
        Ok(ReservoirState { user_id: state.user_id, v: pre.map(|x| x.tanh().clamp(-MAX_ACTIVATION, MAX_ACTIVATION)) })
    }

    pub fn input_vector(&self, window: &HistoryWindow) -> Result<DVector<f64>, EsnError> {
        if window.len() != self.config.n_in {
            return Err(EsnError::Dimension(format!("window of {} fixes, expected {}", window.len(), self.config.n_in)));
        }
        let mut v = DVector::zeros(self.config.input_dim());
        for (k, p) in window.positions().enumerate() {
            let (x, y) = self.normalizer.forward(p);
            v[2 * k] = x;
            v[2 * k + 1] = y;
        }
        Ok(v)
    }

    /// Steps `washout` times on a fixed window to bring a fresh state near
    /// the input-driven regime.
    pub fn prime(&self, state: &ReservoirState, window: &HistoryWindow) -> Result<ReservoirState, EsnError> {
        let input = self.input_vector(window)?;
        let mut s = state.clone();
        for _ in 0..self.config.washout {
            s = self.step(&s, &input)?;
        }
        Ok(s)
    }

    pub fn readout(&self, state: &ReservoirState) -> Result<Vec<Position>, EsnError> {
        let w_out = self.w_out.as_ref().ok_or(EsnError::Untrained)?;
        let out = w_out * &state.v;
        Ok((0..self.config.n_out).map(|k| self.normalizer.inverse(out[2 * k], out[2 * k + 1])).collect())
    }

    /// One-step-ahead prediction: steps the reservoir on `window`, then reads out.
    pub fn predict(&self, state: &ReservoirState, window: &HistoryWindow) -> Result<(Vec<Position>, ReservoirState), EsnError> {
        if !self.is_trained() {
            return Err(EsnError::Untrained);
        }
        let next = self.step(state, &self.input_vector(window)?)?;
        Ok((self.readout(&next)?, next))
    }

    /// Replaces the readout with the ridge solution for the given states and targets.
    pub fn train_readout(&mut self, states: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<(), EsnError> {
        if states.nrows() != self.size() || targets.nrows() != self.config.output_dim() {
            return Err(EsnError::Dimension(format!(
                "states {}x{}, targets {}x{}",
                states.nrows(),
                states.ncols(),
                targets.nrows(),
                targets.ncols()
            )));
        }
        self.w_out = Some(ridge_readout(states, targets, lambda)?);
        Ok(())
    }

    /// Teacher-forced state collection over a grid-sampled path (oldest
    /// first). The state is primed on the first window; each later step
    /// whose `n_out` successors exist contributes one column.
    pub fn collect_states(&self, path: &[Position]) -> Result<(DMatrix<f64>, DMatrix<f64>), EsnError> {
        let (n_in, n_out) = (self.config.n_in, self.config.n_out);
        let mut cols = Vec::new();
        let mut targets = Vec::new();
        if path.len() <= n_out {
            return Ok((DMatrix::zeros(self.size(), 0), DMatrix::zeros(self.config.output_dim(), 0)));
        }
        let mut state = ReservoirState::zeros(0, self.size());
        state = self.prime(&state, &padded_window(0, path, 0, n_in, 1.0)?)?;
        for k in 0..path.len() - n_out {
            let window = padded_window(0, path, k, n_in, 1.0)?;
            state = self.step(&state, &self.input_vector(&window)?)?;
            cols.push(state.v.clone());
            let mut y = Vec::with_capacity(2 * n_out);
            for p in &path[k + 1..=k + n_out] {
                let (x, yv) = self.normalizer.forward(*p);
                y.extend([x, yv]);
            }
            targets.push(DVector::from_vec(y));
        }
        Ok((DMatrix::from_columns(&cols), DMatrix::from_columns(&targets)))
    }

    /// Trains the readout on several paths with the given normalizer.
    pub fn fit(&mut self, paths: &[Vec<Position>], normalizer: Normalizer) -> Result<(), EsnError> {
        self.normalizer = normalizer;
        let mut states = Vec::new();
        let mut targets = Vec::new();
        for p in paths {
            let (s, t) = self.collect_states(p)?;
            states.extend(s.column_iter().map(|c| c.into_owned()));
            targets.extend(t.column_iter().map(|c| c.into_owned()));
        }
        if states.is_empty() {
            return Err(EsnError::Dimension("no training samples".into()));
        }
        let lambda = self.config.ridge_lambda;
        self.train_readout(&DMatrix::from_columns(&states), &DMatrix::from_columns(&targets), lambda)
    }

    /// Rolls a primed state along `path` and returns the one-step-ahead
    /// predictions for indices `from..path.len()` (each predicted from the
    /// fixes before it).
    pub fn rollout(&self, path: &[Position], from: usize) -> Result<Vec<Position>, EsnError> {
        if !self.is_trained() {
            return Err(EsnError::Untrained);
        }
        let n_in = self.config.n_in;
        let mut out = Vec::new();
        if path.is_empty() {
            return Ok(out);
        }
        let mut state = self.prime(&ReservoirState::zeros(0, self.size()), &padded_window(0, path, 0, n_in, 1.0)?)?;
        for k in 0..path.len().saturating_sub(1) {
            let window = padded_window(0, path, k, n_in, 1.0)?;
            let (pred, next) = self.predict(&state, &window)?;
            state = next;
            if k + 1 >= from {
                out.push(pred[0]);
            }
        }
        Ok(out)
    }

    /// Writes a versioned text dump; floats use shortest round-trip form.
    pub fn save<W: Write>(&self, mut out: W) -> Result<(), EsnError> {
        let c = &self.config;
        let mut s = String::new();
        writeln!(s, "{MODEL_HEADER}").unwrap();
        writeln!(
            s,
            "config {} {} {} {:?} {:?} {:?} {:?} {:?} {} {} {}",
            c.reservoir_size,
            c.n_in,
            c.n_out,
            c.ridge_lambda,
            c.cycle_weight_std,
            c.jump_weight_std,
            c.input_scale,
            c.spectral_radius_target,
            c.jump_stride,
            c.washout,
            c.seed
        )
        .unwrap();
        let n = &self.normalizer;
        writeln!(s, "normalizer {:?} {:?} {:?}", n.center.x, n.center.y, n.half_span).unwrap();
        let mut dump = |name: &str, m: &DMatrix<f64>| {
            writeln!(s, "{name} {} {}", m.nrows(), m.ncols()).unwrap();
            for r in m.row_iter() {
                let row: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
                writeln!(s, "{}", row.join(" ")).unwrap();
            }
        };
        dump("w_in", &self.w_in);
        dump("w_res", &self.w_res);
        match &self.w_out {
            Some(m) => dump("w_out", m),
            None => writeln!(s, "w_out none").unwrap(),
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self, EsnError> {
        let lines: Vec<String> = input.lines().collect::<Result<_, _>>()?;
        let mut cur = 0usize;
        let mut next = |expect: &str| -> Result<(usize, Vec<String>), EsnError> {
            let line = lines.get(cur).ok_or(EsnError::Parse { line: cur + 1, msg: format!("expected {expect}") })?;
            cur += 1;
            Ok((cur, line.split_whitespace().map(str::to_string).collect()))
        };
        let (ln, head) = next("header")?;
        if head.join(" ") != MODEL_HEADER {
            return Err(EsnError::Parse { line: ln, msg: format!("unsupported header '{}'", head.join(" ")) });
        }
        fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, EsnError> {
            s.parse().map_err(|_| EsnError::Parse { line, msg: format!("bad number '{s}'") })
        }
        let (ln, f) = next("config")?;
        if f.len() != 12 || f[0] != "config" {
            return Err(EsnError::Parse { line: ln, msg: "malformed config line".into() });
        }
        let config = EsnConfig {
            reservoir_size: num(ln, &f[1])?,
            n_in: num(ln, &f[2])?,
            n_out: num(ln, &f[3])?,
            ridge_lambda: num(ln, &f[4])?,
            cycle_weight_std: num(ln, &f[5])?,
            jump_weight_std: num(ln, &f[6])?,
            input_scale: num(ln, &f[7])?,
            spectral_radius_target: num(ln, &f[8])?,
            jump_stride: num(ln, &f[9])?,
            washout: num(ln, &f[10])?,
            seed: num(ln, &f[11])?,
        };
        let (ln, f) = next("normalizer")?;
        if f.len() != 4 || f[0] != "normalizer" {
            return Err(EsnError::Parse { line: ln, msg: "malformed normalizer line".into() });
        }
        let normalizer =
            Normalizer { center: Position::new(num(ln, &f[1])?, num(ln, &f[2])?), half_span: num(ln, &f[3])? };
        let mut matrix = |name: &str| -> Result<Option<DMatrix<f64>>, EsnError> {
            let (ln, f) = next(name)?;
            if f.first().map(String::as_str) != Some(name) {
                return Err(EsnError::Parse { line: ln, msg: format!("expected {name}") });
            }
            if f.get(1).map(String::as_str) == Some("none") {
                return Ok(None);
            }
            if f.len() != 3 {
                return Err(EsnError::Parse { line: ln, msg: "expected rows and columns".into() });
            }
            let (r, c): (usize, usize) = (num(ln, &f[1])?, num(ln, &f[2])?);
            let mut data = Vec::with_capacity(r * c);
            for _ in 0..r {
                let (ln, row) = next("matrix row")?;
                if row.len() != c {
                    return Err(EsnError::Parse { line: ln, msg: format!("expected {c} values") });
                }
                for v in &row {
                    data.push(num::<f64>(ln, v)?);
                }
            }
            Ok(Some(DMatrix::from_row_slice(r, c, &data)))
        };
        let w_in = matrix("w_in")?.ok_or(EsnError::Parse { line: 0, msg: "w_in missing".into() })?;
        let w_res = matrix("w_res")?.ok_or(EsnError::Parse { line: 0, msg: "w_res missing".into() })?;
        let w_out = matrix("w_out")?;
        config.validate()?;
        let model = Self { config, w_in, w_res, w_out, normalizer };
        let (n, d) = (model.size(), model.config.input_dim());
        if model.w_in.shape() != (n, d)
            || model.w_res.shape() != (n, n)
            || model.w_out.as_ref().is_some_and(|m| m.shape() != (model.config.output_dim(), n))
        {
            return Err(EsnError::Dimension("matrix shapes disagree with config".into()));
        }
        Ok(model)
    }
}

/// Window ending at `path[k]`, newest first, with indices before the start
/// of the path clamped to the first fix.
pub fn padded_window(user_id: u32, path: &[Position], k: usize, n_in: usize, period: f64) -> Result<HistoryWindow, EsnError> {
    let positions: Vec<Position> = (0..n_in).map(|i| path[k.saturating_sub(i)]).collect();
    HistoryWindow::from_positions(user_id, k as f64 * period + (n_in as f64) * period, period, &positions)
        .map_err(|e| EsnError::Dimension(e.to_string()))
}

/// RMSE of the flattened coordinates over the population standard
/// deviation of the flattened actual coordinates.
pub fn nrmse(predicted: &[Position], actual: &[Position]) -> Result<f64, EsnError> {
    if predicted.len() != actual.len() || actual.is_empty() {
        return Err(EsnError::Length(predicted.len(), actual.len()));
    }
    let flat = |ps: &[Position]| -> Vec<f64> { ps.iter().flat_map(|p| [p.x, p.y]).collect() };
    let (p, a) = (flat(predicted), flat(actual));
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let std = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let rmse = (p.iter().zip(&a).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 0.0) {
        return Err(EsnError::UndefinedMetric);
    }
    Ok(rmse / std)
}

/// Constant-speed walk that reflects off the walls of `[0, w] x [0, h]`,
/// sampled every `period` seconds.
pub fn bouncing_walk(start: Position, velocity: (f64, f64), w: f64, h: f64, period: f64, n: usize) -> Vec<Position> {
    let fold = |x: f64, span: f64| {
        let r = x.rem_euclid(2.0 * span);
        if r > span {
            2.0 * span - r
        } else {
            r
        }
    };
    (0..n)
        .map(|k| {
            let t = k as f64 * period;
            Position::new(fold(start.x + velocity.0 * t, w), fold(start.y + velocity.1 * t, h))
        })
        .collect()
}

/// Random-waypoint walk in `[0, w] x [0, h]`: straight legs at a speed drawn
/// from `speed`, sampled every `period` seconds.
pub fn random_waypoint<R: Rng + ?Sized>(
    rng: &mut R,
    start: Position,
    w: f64,
    h: f64,
    speed: (f64, f64),
    period: f64,
    n: usize,
) -> Vec<Position> {
    let mut out = Vec::with_capacity(n);
    let mut pos = start;
    let mut target = pos;
    let mut v = 0.0;
    while out.len() < n {
        out.push(pos);
        let mut budget = period;
        while budget > 0.0 {
            let d = pos.distance(target);
            if d < 1e-9 {
                target = Position::new(rng.random_range(0.0..=w), rng.random_range(0.0..=h));
                v = if speed.1 > speed.0 { rng.random_range(speed.0..speed.1) } else { speed.0 };
                continue;
            }
            let reach = v * budget;
            if reach >= d {
                budget -= d / v;
                pos = target;
            } else {
                pos = pos.lerp(target, reach / d);
                budget = 0.0;
            }
        }
    }
    out
}
