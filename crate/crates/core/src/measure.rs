//! Curves of probability measures: grid densities and weighted particle clouds.

use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{count, lit, to_f64, Real};

/// Normalization tolerance for snapshots.
pub const MASS_TOL: f64 = 1e-9;

/// Density on a uniform 1-D grid `x_j = left + j·dx`. Each node carries the
/// atom `values[j]·dx`; `exterior_mass` accounts for mass outside the grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridDensity<T> {
    pub left: T,
    pub dx: T,
    pub values: Vec<T>,
    pub exterior_mass: T,
}

impl<T: Real> GridDensity<T> {
    pub fn new(left: T, dx: T, values: Vec<T>, exterior_mass: T) -> Result<Self> {
        let g = Self { left, dx, values, exterior_mass };
        g.validate()?;
        Ok(g)
    }

    /// Rescales `values` so that the grid carries all the mass.
    pub fn normalized(left: T, dx: T, mut values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::InvalidParameter("grid density must be non-negative".into()));
        }
        let mass: T = values.iter().copied().sum::<T>() * dx;
        if !(mass > T::zero()) {
            return Err(Error::InvalidParameter("grid density has no mass".into()));
        }
        for v in &mut values {
            *v = *v / mass;
        }
        Self::new(left, dx, values, T::zero())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx > T::zero()) || self.values.is_empty() {
            return Err(Error::InvalidParameter("grid density needs dx > 0 and nodes".into()));
        }
        if self.values.iter().any(|v| !(*v >= T::zero())) || !(self.exterior_mass >= T::zero()) {
            return Err(Error::InvalidParameter("grid density must be non-negative".into()));
        }
        let mass = to_f64(self.grid_mass() + self.exterior_mass);
        if (mass - 1.0).abs() > MASS_TOL.max(f64::from(f32::EPSILON) * 8.0 * (std::mem::size_of::<T>() == 4) as u8 as f64)
        {
            return Err(Error::InvalidParameter(format!("grid density has total mass {mass}")));
        }
        Ok(())
    }

    pub fn x(&self, j: usize) -> T {
        self.left + self.dx * count(j)
    }

    pub fn grid_mass(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.dx
    }

    /// Linear interpolation, zero outside the grid.
    pub fn eval(&self, x: T) -> T {
        let s = (x - self.left) / self.dx;
        if s < T::zero() {
            return T::zero();
        }
        let i = s.floor().to_usize().unwrap_or(usize::MAX);
        if i + 1 >= self.values.len() {
            return if i + 1 == self.values.len() && s == count(i) { self.values[i] } else { T::zero() };
        }
        let w = s - count(i);
        self.values[i] * (T::one() - w) + self.values[i + 1] * w
    }
}

/// Weighted atoms in `ℝ^d`, positions stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParticleCloud<T> {
    pub dim: usize,
    pub positions: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> ParticleCloud<T> {
    pub fn new(dim: usize, positions: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if dim == 0 || positions.len() != dim * weights.len() {
            return Err(Error::DimensionMismatch { expected: dim * weights.len(), got: positions.len() });
        }
        if weights.iter().any(|w| !(*w >= T::zero())) {
            return Err(Error::InvalidParameter("particle weights must be non-negative".into()));
        }
        let total = to_f64(weights.iter().copied().sum::<T>());
        let tol = if std::mem::size_of::<T>() == 4 { 1e-4 } else { MASS_TOL };
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidParameter(format!("particle weights sum to {total}")));
        }
        Ok(Self { dim, positions, weights })
    }

    /// Equal weights `1/N`.
    pub fn uniform(dim: usize, positions: Vec<T>) -> Result<Self> {
        let n = positions.len() / dim.max(1);
        if n == 0 {
            return Err(Error::EmptyCurve);
        }
        let w = T::one() / count(n);
        Self::new(dim, positions, vec![w; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn position(&self, i: usize) -> &[T] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }
}

/// One time slice of a [`MeasureCurve`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Snapshot<T> {
    Grid(GridDensity<T>),
    Particles(ParticleCloud<T>),
}

impl<T: Real> Snapshot<T> {
    pub fn dim(&self) -> usize {
        match self {
            Snapshot::Grid(_) => 1,
            Snapshot::Particles(p) => p.dim,
        }
    }

    /// Calls `f(x, w)` for every atom.
    pub fn for_each_atom<F: FnMut(&[T], T)>(&self, mut f: F) {
        match self {
            Snapshot::Grid(g) => {
                for (j, &v) in g.values.iter().enumerate() {
                    if v > T::zero() {
                        f(&[g.x(j)], v * g.dx);
                    }
                }
            }
            Snapshot::Particles(p) => {
                for (i, &w) in p.weights.iter().enumerate() {
                    f(p.position(i), w);
                }
            }
        }
    }

    /// `∫ f dμ` over the atoms; mass outside a grid is not seen.
    pub fn integrate<F: FnMut(&[T]) -> T>(&self, mut f: F) -> T {
        let mut acc = T::zero();
        self.for_each_atom(|x, w| acc = acc + w * f(x));
        acc
    }

    /// Mass not represented by atoms.
    pub fn exterior_mass(&self) -> T {
        match self {
            Snapshot::Grid(g) => g.exterior_mass,
            Snapshot::Particles(_) => T::zero(),
        }
    }

    pub fn atom_count(&self) -> usize {
        match self {
            Snapshot::Grid(g) => g.values.len(),
            Snapshot::Particles(p) => p.len(),
        }
    }
}

/// `(μ_t)` on a strictly increasing time grid. Before the first time the
/// curve is frozen at its first snapshot and after the last time at its last.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasureCurve<T> {
    times: Vec<T>,
    snapshots: Vec<Snapshot<T>>,
}

impl<T: Real> MeasureCurve<T> {
    pub fn new(times: Vec<T>, snapshots: Vec<Snapshot<T>>) -> Result<Self> {
        if times.is_empty() || snapshots.is_empty() {
            return Err(Error::EmptyCurve);
        }
        if times.len() != snapshots.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), got: snapshots.len() });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("curve times must be strictly increasing".into()));
        }
        let d = snapshots[0].dim();
        if let Some(s) = snapshots.iter().find(|s| s.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: s.dim() });
        }
        Ok(Self { times, snapshots })
    }

    /// The same measure at every time in `times`.
    pub fn constant(times: Vec<T>, snapshot: Snapshot<T>) -> Result<Self> {
        let n = times.len();
        Self::new(times, vec![snapshot; n])
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn snapshots(&self) -> &[Snapshot<T>] {
        &self.snapshots
    }

    pub fn snapshot(&self, i: usize) -> &Snapshot<T> {
        &self.snapshots[i]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.snapshots[0].dim()
    }

    pub fn start(&self) -> T {
        self.times[0]
    }

    pub fn end(&self) -> T {
        *self.times.last().unwrap()
    }

    /// Index of the snapshot at time `t` if it is on the grid.
    pub fn index_of(&self, t: T) -> Option<usize> {
        self.times.iter().position(|&s| s == t)
    }

    /// `(i, w)` such that `μ_t ≈ (1-w) μ_{t_i} + w μ_{t_{i+1}}`; constant
    /// extension outside the time window.
    pub fn bracket(&self, t: T) -> (usize, T) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return (0, T::zero());
        }
        if t >= self.times[n - 1] {
            return (n - 1, T::zero());
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        (i, w)
    }

    /// `μ_t(f)` with linear interpolation between snapshots.
    pub fn integrate_at<F: FnMut(&[T]) -> T>(&self, t: T, mut f: F) -> T {
        let (i, w) = self.bracket(t);
        let a = self.snapshots[i].integrate(&mut f);
        if w == T::zero() {
            return a;
        }
        a * (T::one() - w) + self.snapshots[i + 1].integrate(&mut f) * w
    }

    /// Rows `time,kind,x1..xd,value` where `kind` is `grid`, `particle`
    /// or `exterior`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string(), "kind".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.push("value".into());
        w.write_record(&header)?;
        for (t, s) in self.times.iter().zip(&self.snapshots) {
            match s {
                Snapshot::Grid(g) => {
                    for (j, v) in g.values.iter().enumerate() {
                        w.write_record([t.to_string(), "grid".into(), g.x(j).to_string(), v.to_string()])?;
                    }
                    w.write_record([t.to_string(), "exterior".into(), String::new(), g.exterior_mass.to_string()])?;
                }
                Snapshot::Particles(p) => {
                    for i in 0..p.len() {
                        let mut row = vec![t.to_string(), "particle".into()];
                        row.extend(p.position(i).iter().map(|c| c.to_string()));
                        row.push(p.weights[i].to_string());
                        w.write_record(&row)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`MeasureCurve::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let d = headers.len().checked_sub(3).filter(|&d| d >= 1).ok_or_else(|| {
            Error::InvalidParameter("curve CSV needs columns time,kind,x1..xd,value".into())
        })?;
        let parse = |s: &str| -> Result<T> {
            s.trim()
                .parse::<f64>()
                .map(lit)
                .map_err(|e| Error::InvalidParameter(format!("bad number {s:?}: {e}")))
        };
        struct Pending<T> {
            time: T,
            grid: Vec<(T, T)>,
            exterior: T,
            pos: Vec<T>,
            w: Vec<T>,
        }
        let mut out: Vec<Pending<T>> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let t = parse(&rec[0])?;
            if out.last().is_none_or(|p| p.time != t) {
                out.push(Pending { time: t, grid: vec![], exterior: T::zero(), pos: vec![], w: vec![] });
            }
            let p = out.last_mut().unwrap();
            let value = parse(&rec[d + 2])?;
            match &rec[1] {
                "grid" => p.grid.push((parse(&rec[2])?, value)),
                "exterior" => p.exterior = value,
                "particle" => {
                    for i in 0..d {
                        p.pos.push(parse(&rec[2 + i])?);
                    }
                    p.w.push(value);
                }
                other => return Err(Error::InvalidParameter(format!("unknown row kind {other:?}"))),
            }
        }
        let mut times = Vec::with_capacity(out.len());
        let mut snaps = Vec::with_capacity(out.len());
        for p in out {
            times.push(p.time);
            if !p.grid.is_empty() {
                if !p.pos.is_empty() {
                    return Err(Error::InvalidParameter("snapshot mixes grid and particle rows".into()));
                }
                let left = p.grid[0].0;
                let dx = if p.grid.len() > 1 { p.grid[1].0 - p.grid[0].0 } else { T::one() };
                let values = p.grid.iter().map(|&(_, v)| v).collect();
                snaps.push(Snapshot::Grid(GridDensity::new(left, dx, values, p.exterior)?));
            } else {
                snaps.push(Snapshot::Particles(ParticleCloud::new(d, p.pos, p.w)?));
            }
        }
        Self::new(times, snaps)
    }

    /// `max_i |μ_{t_{i+1}}(f) - μ_{t_i}(f)|`, a grid-level continuity
    /// diagnostic.
    pub fn modulus<F: FnMut(&[T]) -> T>(&self, mut f: F) -> T {
        let vals: Vec<T> = self.snapshots.iter().map(|s| s.integrate(&mut f)).collect();
        vals.windows(2).map(|w| (w[1] - w[0]).abs()).fold(T::zero(), T::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MeasureCurve<f64> {
        let g = GridDensity::normalized(-1.0, 0.5, vec![1.0, 2.0, 1.0, 0.0, 0.0]).unwrap();
        let p = ParticleCloud::uniform(1, vec![0.1, -0.4, 2.0, 0.5]).unwrap();
        MeasureCurve::new(vec![0.0, 0.5], vec![Snapshot::Grid(g), Snapshot::Particles(p)]).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = MeasureCurve::<f64>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation() {
        assert!(GridDensity::new(0.0, 1.0, vec![0.5, 0.4], 0.0).is_err());
        assert!(GridDensity::new(0.0, 1.0, vec![0.5, 0.4], 0.1).is_ok());
        assert!(ParticleCloud::new(1, vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(MeasureCurve::<f64>::new(vec![], vec![]).is_err());
        let s = sample().snapshot(0).clone();
        assert!(MeasureCurve::new(vec![0.0, 0.0], vec![s.clone(), s]).is_err());
    }

    #[test]
    fn interpolation_and_freezing() {
        let c = sample();
        let f = |x: &[f64]| x[0];
        let m0 = c.snapshot(0).integrate(f);
        let m1 = c.snapshot(1).integrate(f);
        assert_eq!(c.integrate_at(-3.0, f), m0);
        assert_eq!(c.integrate_at(9.0, f), m1);
        assert!((c.integrate_at(0.25, f) - 0.5 * (m0 + m1)).abs() < 1e-15);
    }

    #[test]
    fn grid_interpolation() {
        let g = GridDensity::new(0.0, 1.0, vec![0.25, 0.5, 0.25], 0.0).unwrap();
        assert_eq!(g.eval(0.5), 0.375);
        assert_eq!(g.eval(-0.1), 0.0);
        assert_eq!(g.eval(2.0), 0.25);
        assert_eq!(g.eval(2.5), 0.0);
    }
}
