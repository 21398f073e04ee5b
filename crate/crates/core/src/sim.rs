//! Discretization, simulation and frequency response of linear systems.

use thiserror::Error;

use crate::fmt::g_digits;
use crate::linalg::{solve, LinalgError, Matrix, SymMatrix};

/// Term tolerance of the exponential series, relative to the running sum.
pub const EXPM_TERM_TOL: f64 = 1e-13;
/// Cap on the number of squarings in [`expm`].
pub const EXPM_MAX_SQUARINGS: u32 = 50;
const EXPM_MAX_TERMS: usize = 60;
/// Smallest relative frequency offset tried when `jωI − A` is singular; it
/// grows by 100x per attempt, up to four attempts.
pub const DETOUR_REL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("sample period must be positive, got {0}")]
    BadPeriod(f64),
    #[error("expected a {expected} system")]
    Kind { expected: &'static str },
    #[error("matrix exponential did not converge: {0}")]
    Expm(String),
    #[error("frequency must be positive, got {0}")]
    BadFrequency(f64),
    #[error("expected a single-input single-output system, got {inputs} inputs and {outputs} outputs")]
    NotSiso { inputs: usize, outputs: usize },
    #[error("no gain crossover in [{lo}, {hi}] rad/s")]
    NoCrossover { lo: f64, hi: f64 },
    #[error("closed loop has an algebraic loop (plant and controller both feed through)")]
    AlgebraicLoop,
    #[error("input stream exhausted at step {0}")]
    InputExhausted(usize),
}

/// `x' = A x + B u`, `y = C x + D u`; continuous when `dt` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub dt: Option<f64>,
}

impl StateSpace {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix, dt: Option<f64>) -> Result<Self, SimError> {
        let n = a.rows();
        let bad = |what: &str| Err(SimError::Dimension(what.to_string()));
        if !a.is_square() {
            return bad("A must be square");
        }
        if b.rows() != n {
            return bad("B must have as many rows as A");
        }
        if c.cols() != n {
            return bad("C must have as many columns as A");
        }
        if d.rows() != c.rows() || d.cols() != b.cols() {
            return bad("D must be outputs x inputs");
        }
        if let Some(h) = dt {
            if !(h >= 0.0) || !h.is_finite() {
                return Err(SimError::BadPeriod(h));
            }
        }
        Ok(StateSpace { a, b, c, d, dt })
    }

    /// Static gain `y = k u`.
    pub fn gain(k: f64) -> Self {
        StateSpace {
            a: Matrix::zeros(0, 0),
            b: Matrix::zeros(0, 1),
            c: Matrix::zeros(1, 0),
            d: Matrix::from_rows(&[&[k]]),
            dt: None,
        }
    }

    pub fn states(&self) -> usize {
        self.a.rows()
    }

    pub fn inputs(&self) -> usize {
        self.b.cols()
    }

    pub fn outputs(&self) -> usize {
        self.c.rows()
    }

    pub fn with_dt(mut self, dt: Option<f64>) -> Self {
        self.dt = dt;
        self
    }

    /// Output negated.
    pub fn negated(&self) -> StateSpace {
        StateSpace {
            c: self.c.scale(-1.0),
            d: self.d.scale(-1.0),
            ..self.clone()
        }
    }

    /// `next ∘ self`: the output of `self` drives `next`.
    pub fn series(&self, next: &StateSpace) -> Result<StateSpace, SimError> {
        if self.outputs() != next.inputs() {
            return Err(SimError::Dimension("series: outputs of the first system must feed the second".into()));
        }
        let (n1, n2) = (self.states(), next.states());
        let mut a = Matrix::zeros(n1 + n2, n1 + n2);
        let b2c1 = next.b.try_mul(&self.c)?;
        for i in 0..n1 {
            for j in 0..n1 {
                a[(i, j)] = self.a[(i, j)];
            }
        }
        for i in 0..n2 {
            for j in 0..n1 {
                a[(n1 + i, j)] = b2c1[(i, j)];
            }
            for j in 0..n2 {
                a[(n1 + i, n1 + j)] = next.a[(i, j)];
            }
        }
        let b = self.b.vstack(&next.b.try_mul(&self.d)?)?;
        let c = next.d.try_mul(&self.c)?.hstack(&next.c)?;
        let d = next.d.try_mul(&self.d)?;
        StateSpace::new(a, b, c, d, self.dt)
    }

    fn require_continuous(&self) -> Result<(), SimError> {
        match self.dt {
            None => Ok(()),
            Some(_) => Err(SimError::Kind { expected: "continuous" }),
        }
    }
}

/// Forward Euler: `A_d = I + hA`, `B_d = hB`.
pub fn euler_discretize(cont: &StateSpace, h: f64) -> Result<StateSpace, SimError> {
    cont.require_continuous()?;
    if !(h >= 0.0) {
        return Err(SimError::BadPeriod(h));
    }
    let n = cont.states();
    let a = Matrix::identity(n).try_add(&cont.a.scale(h))?;
    StateSpace::new(a, cont.b.scale(h), cont.c.clone(), cont.d.clone(), Some(h))
}

/// Continuous system whose forward-Euler discretization at `h` is `disc`:
/// `A = (A_d − I)/h`, `B = B_d/h`.
pub fn euler_continuous(disc: &StateSpace, h: f64) -> Result<StateSpace, SimError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(SimError::BadPeriod(h));
    }
    let n = disc.states();
    let a = disc.a.try_sub(&Matrix::identity(n))?.scale(1.0 / h);
    StateSpace::new(a, disc.b.scale(1.0 / h), disc.c.clone(), disc.d.clone(), None)
}

/// Matrix exponential by scaling and squaring of the Taylor series.
pub fn expm(m: &Matrix) -> Result<Matrix, SimError> {
    if !m.is_square() {
        return Err(SimError::Dimension("expm needs a square matrix".into()));
    }
    let n = m.rows();
    let norm = m.norm_inf();
    let mut squarings = 0u32;
    while norm / 2f64.powi(squarings as i32) > 0.5 {
        squarings += 1;
        if squarings > EXPM_MAX_SQUARINGS {
            return Err(SimError::Expm(format!("norm {norm} needs more than {EXPM_MAX_SQUARINGS} squarings")));
        }
    }
    let x = m.scale(1.0 / 2f64.powi(squarings as i32));
    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    let mut converged = false;
    for k in 1..=EXPM_MAX_TERMS {
        term = term.try_mul(&x)?.scale(1.0 / k as f64);
        sum = sum.try_add(&term)?;
        if term.norm_inf() <= EXPM_TERM_TOL * sum.norm_inf() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SimError::Expm(format!("series did not settle in {EXPM_MAX_TERMS} terms")));
    }
    for _ in 0..squarings {
        sum = sum.try_mul(&sum)?;
    }
    Ok(sum)
}

/// Zero-order-hold discretization through the exponential of
/// `[[A, B], [0, 0]]·h`.
pub fn zoh_discretize(cont: &StateSpace, h: f64) -> Result<StateSpace, SimError> {
    cont.require_continuous()?;
    if !(h > 0.0) {
        return Err(SimError::BadPeriod(h));
    }
    let (n, m) = (cont.states(), cont.inputs());
    let mut aug = Matrix::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = cont.a[(i, j)] * h;
        }
        for j in 0..m {
            aug[(i, n + j)] = cont.b[(i, j)] * h;
        }
    }
    let e = expm(&aug)?;
    let idx_n: Vec<usize> = (0..n).collect();
    let idx_m: Vec<usize> = (n..n + m).collect();
    StateSpace::new(
        e.select(&idx_n, &idx_n),
        e.select(&idx_n, &idx_m),
        cont.c.clone(),
        cont.d.clone(),
        Some(h),
    )
}

/// `SAT`: clamp to `[-1, 1]`.
pub fn saturate(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// One row of a simulation trace. The final record carries the state
/// after the last step and empty `y`, `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub k: usize,
    pub t: f64,
    /// Sampled input before saturation.
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub records: Vec<SimRecord>,
}

impl SimTrace {
    pub fn max_abs_u(&self) -> f64 {
        self.records
            .iter()
            .flat_map(|r| r.u.iter())
            .fold(0.0, |m, u| m.max(u.abs()))
    }

    pub fn max_v(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.v).reduce(f64::max)
    }

    /// CSV with header `k,t,y,u,x1,...,xn,V`.
    pub fn to_csv(&self) -> String {
        let n = self.records.first().map_or(0, |r| r.x.len());
        let mut out = String::from("k,t,y,u");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        out.push_str(",V\n");
        let join = |v: &[f64]| v.iter().map(|x| g_digits(*x, 17)).collect::<Vec<_>>().join(";");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}", r.k, g_digits(r.t, 12), join(&r.y), join(&r.u)));
            for x in &r.x {
                out.push(',');
                out.push_str(&g_digits(*x, 17));
            }
            out.push(',');
            if let Some(v) = r.v {
                out.push_str(&g_digits(v, 17));
            }
            out.push('\n');
        }
        out
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Runs `x_{k+1} = A x_k + B SAT(y_k)`, `u_k = C x_k + D SAT(y_k)` from `x0`
/// (zero when `None`). `inputs` supplies `B.cols()` values per step.
pub fn simulate_controller<I: Iterator<Item = f64>>(
    ctrl: &StateSpace,
    mut inputs: I,
    steps: usize,
    p: Option<&SymMatrix>,
    x0: Option<&[f64]>,
) -> Result<SimTrace, SimError> {
    let n = ctrl.states();
    if let Some(p) = p {
        if p.dim() != n {
            return Err(SimError::Dimension("P must match the controller state".into()));
        }
    }
    let mut x = match x0 {
        Some(v) if v.len() != n => return Err(SimError::Dimension("initial state length".into())),
        Some(v) => v.to_vec(),
        None => vec![0.0; n],
    };
    let dt = ctrl.dt.unwrap_or(1.0);
    let mut records = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        let y: Vec<f64> = (0..ctrl.inputs())
            .map(|_| inputs.next().ok_or(SimError::InputExhausted(k)))
            .collect::<Result<_, _>>()?;
        let ys: Vec<f64> = y.iter().map(|v| saturate(*v)).collect();
        let u = add(&ctrl.c.mul_vec(&x), &ctrl.d.mul_vec(&ys));
        let next = add(&ctrl.a.mul_vec(&x), &ctrl.b.mul_vec(&ys));
        records.push(SimRecord {
            k,
            t: k as f64 * dt,
            y,
            u,
            v: p.map(|p| p.quad(&x)),
            x: std::mem::replace(&mut x, next),
        });
    }
    records.push(SimRecord {
        k: steps,
        t: steps as f64 * dt,
        y: Vec::new(),
        u: Vec::new(),
        v: p.map(|p| p.quad(&x)),
        x,
    });
    Ok(SimTrace { records })
}

/// Sampled-data loop: the plant is held by ZOH over `h`, its output is
/// sampled, saturated and fed to the controller, whose output drives the
/// plant during the next interval. State columns list controller states
/// then plant states; `V` is evaluated on the controller state.
pub fn simulate_closed_loop(
    plant_cont: &StateSpace,
    ctrl: &StateSpace,
    h: f64,
    steps: usize,
    x_p0: &[f64],
    p: Option<&SymMatrix>,
) -> Result<SimTrace, SimError> {
    let plant = zoh_discretize(plant_cont, h)?;
    if plant.outputs() != ctrl.inputs() || ctrl.outputs() != plant.inputs() {
        return Err(SimError::Dimension("plant and controller do not connect".into()));
    }
    if x_p0.len() != plant.states() {
        return Err(SimError::Dimension("initial plant state length".into()));
    }
    if plant.d.max_abs() != 0.0 && ctrl.d.max_abs() != 0.0 {
        return Err(SimError::AlgebraicLoop);
    }
    if let Some(p) = p {
        if p.dim() != ctrl.states() {
            return Err(SimError::Dimension("P must match the controller state".into()));
        }
    }
    let mut xc = vec![0.0; ctrl.states()];
    let mut xp = x_p0.to_vec();
    let zero_u = vec![0.0; plant.inputs()];
    let mut records = Vec::with_capacity(steps + 1);
    let state = |xc: &[f64], xp: &[f64]| xc.iter().chain(xp).copied().collect::<Vec<f64>>();
    for k in 0..steps {
        let y = add(&plant.c.mul_vec(&xp), &plant.d.mul_vec(&zero_u));
        let ys: Vec<f64> = y.iter().map(|v| saturate(*v)).collect();
        let u = add(&ctrl.c.mul_vec(&xc), &ctrl.d.mul_vec(&ys));
        records.push(SimRecord {
            k,
            t: k as f64 * h,
            y,
            u: u.clone(),
            x: state(&xc, &xp),
            v: p.map(|p| p.quad(&xc)),
        });
        xc = add(&ctrl.a.mul_vec(&xc), &ctrl.b.mul_vec(&ys));
        xp = add(&plant.a.mul_vec(&xp), &plant.b.mul_vec(&u));
    }
    records.push(SimRecord {
        k: steps,
        t: steps as f64 * h,
        y: Vec::new(),
        u: Vec::new(),
        x: state(&xc, &xp),
        v: p.map(|p| p.quad(&xc)),
    });
    Ok(SimTrace { records })
}

/// Frequency response sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqPoint {
    pub omega: f64,
    pub mag: f64,
    /// Phase in degrees, in `(-360, 0]`.
    pub phase_deg: f64,
    pub re: f64,
    pub im: f64,
    /// True when `ω` was moved off a pole of the system.
    pub flagged: bool,
}

fn wrap_phase(deg: f64) -> f64 {
    let mut p = deg % 360.0;
    if p > 0.0 {
        p -= 360.0;
    }
    if p <= -360.0 {
        p += 360.0;
    }
    p
}

fn eval_at(sys: &StateSpace, omega: f64) -> Result<(f64, f64), LinalgError> {
    let n = sys.states();
    let d = sys.d[(0, 0)];
    if n == 0 {
        return Ok((d, 0.0));
    }
    let mut m = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = -sys.a[(i, j)];
            m[(n + i, n + j)] = -sys.a[(i, j)];
        }
        m[(i, n + i)] = -omega;
        m[(n + i, i)] = omega;
    }
    let mut rhs = Matrix::zeros(2 * n, 1);
    for i in 0..n {
        rhs[(i, 0)] = sys.b[(i, 0)];
    }
    let x = solve(&m, &rhs)?;
    let (mut re, mut im) = (d, 0.0);
    for i in 0..n {
        re += sys.c[(0, i)] * x[(i, 0)];
        im += sys.c[(0, i)] * x[(n + i, 0)];
    }
    Ok((re, im))
}

fn detour(sys: &StateSpace, omega: f64) -> Result<(f64, f64), LinalgError> {
    let mut rel = DETOUR_REL;
    let mut last = None;
    for _ in 0..4 {
        for w in [omega * (1.0 + rel), omega * (1.0 - rel)] {
            match eval_at(sys, w) {
                Ok(v) => return Ok(v),
                Err(e) => last = Some(e),
            }
        }
        rel *= 100.0;
    }
    Err(last.expect("at least one attempt"))
}

/// `G(jω) = C (jωI − A)⁻¹ B + D` for a continuous SISO system, through the
/// real system `[[−A, −ωI], [ωI, −A]] [x_r; x_i] = [B; 0]`. On a pole the
/// frequency is nudged off it and the point is flagged.
pub fn freq_point(sys: &StateSpace, omega: f64) -> Result<FreqPoint, SimError> {
    sys.require_continuous()?;
    if sys.inputs() != 1 || sys.outputs() != 1 {
        return Err(SimError::NotSiso {
            inputs: sys.inputs(),
            outputs: sys.outputs(),
        });
    }
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(SimError::BadFrequency(omega));
    }
    let (value, flagged) = match eval_at(sys, omega) {
        Ok(v) => (v, false),
        Err(LinalgError::Singular { .. }) => (detour(sys, omega)?, true),
        Err(e) => return Err(e.into()),
    };
    let (re, im) = value;
    Ok(FreqPoint {
        omega,
        mag: re.hypot(im),
        phase_deg: wrap_phase(im.atan2(re).to_degrees()),
        re,
        im,
        flagged,
    })
}

pub fn freq_response(sys: &StateSpace, omegas: &[f64]) -> Result<Vec<FreqPoint>, SimError> {
    omegas.iter().map(|w| freq_point(sys, *w)).collect()
}

/// `n` logarithmically spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// CSV `omega,mag_db,phase_deg`.
pub fn freq_csv(points: &[FreqPoint]) -> String {
    let mut out = String::from("omega,mag_db,phase_deg\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{}\n",
            g_digits(p.omega, 10),
            g_digits(20.0 * p.mag.log10(), 10),
            g_digits(p.phase_deg, 10)
        ));
    }
    out
}

/// Default sweep of [`phase_margin`].
pub const PM_GRID: (f64, f64, usize) = (1e-2, 1e4, 400);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMargin {
    pub pm_deg: f64,
    pub crossover: f64,
}

/// Phase margin at the first gain crossover of `loop_gain` on a log grid,
/// refined by bisection on `log|L| = 0`.
pub fn phase_margin(loop_gain: &StateSpace, grid: &[f64]) -> Result<PhaseMargin, SimError> {
    let (lo, hi) = (grid.first().copied().unwrap_or(0.0), grid.last().copied().unwrap_or(0.0));
    let pts = freq_response(loop_gain, grid)?;
    let above = |p: &FreqPoint| p.mag >= 1.0;
    let k = pts
        .windows(2)
        .position(|w| above(&w[0]) != above(&w[1]))
        .ok_or(SimError::NoCrossover { lo, hi })?;
    let (mut a, mut b) = (pts[k].omega.ln(), pts[k + 1].omega.ln());
    let a_above = above(&pts[k]);
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if above(&freq_point(loop_gain, mid.exp())?) == a_above {
            a = mid;
        } else {
            b = mid;
        }
    }
    let crossover = (0.5 * (a + b)).exp();
    let p = freq_point(loop_gain, crossover)?;
    Ok(PhaseMargin {
        pm_deg: 180.0 + p.phase_deg,
        crossover,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant() -> StateSpace {
        StateSpace::new(
            Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]),
            Matrix::column(&[0.0, 1.0]),
            Matrix::row(&[0.0, 1.0]),
            Matrix::from_rows(&[&[0.0]]),
            None,
        )
        .unwrap()
    }

    fn compensator() -> StateSpace {
        StateSpace::new(
            Matrix::from_rows(&[&[-50.1, -5.0], &[1.0, 0.0]]),
            Matrix::column(&[100.0, 0.0]),
            Matrix::row(&[564.48, 0.0]),
            Matrix::from_rows(&[&[-1280.0]]),
            None,
        )
        .unwrap()
    }

    #[test]
    fn euler_reproduces_listing_constants() {
        let d = euler_discretize(&compensator(), 0.01).unwrap();
        assert_eq!(d.a, Matrix::from_rows(&[&[0.499, -0.05], &[0.01, 1.0]]));
        assert_eq!(d.b, Matrix::column(&[1.0, 0.0]));
        assert_eq!(d.dt, Some(0.01));
    }

    #[test]
    fn euler_trivial_cases() {
        let zero = StateSpace::new(
            Matrix::zeros(2, 2),
            Matrix::column(&[1.0, 2.0]),
            Matrix::row(&[1.0, 0.0]),
            Matrix::zeros(1, 1),
            None,
        )
        .unwrap();
        let d = euler_discretize(&zero, 0.1).unwrap();
        assert_eq!(d.a, Matrix::identity(2));
        assert_eq!(d.b, Matrix::column(&[0.1, 0.2]));
        let d0 = euler_discretize(&compensator(), 0.0).unwrap();
        assert_eq!(d0.a, Matrix::identity(2));
        assert_eq!(d0.b.max_abs(), 0.0);
        assert!(euler_discretize(&d, 0.1).is_err());
    }

    #[test]
    fn euler_round_trip() {
        let back = euler_continuous(&euler_discretize(&compensator(), 0.01).unwrap(), 0.01).unwrap();
        assert!(back.a.max_abs_diff(&compensator().a).unwrap() < 1e-12);
        assert!(back.b.max_abs_diff(&compensator().b).unwrap() < 1e-12);
        assert!(euler_continuous(&compensator(), 0.0).is_err());
    }

    #[test]
    fn zoh_rotation() {
        let h = 0.3_f64;
        let d = zoh_discretize(&plant(), h).unwrap();
        let want_a = Matrix::from_rows(&[&[h.cos(), h.sin()], &[-h.sin(), h.cos()]]);
        assert!(d.a.max_abs_diff(&want_a).unwrap() < 1e-13);
        let want_b = Matrix::column(&[1.0 - h.cos(), h.sin()]);
        assert!(d.b.max_abs_diff(&want_b).unwrap() < 1e-13);
    }

    #[test]
    fn zoh_of_zero_dynamics() {
        let z = StateSpace::new(
            Matrix::zeros(1, 1),
            Matrix::column(&[3.0]),
            Matrix::row(&[1.0]),
            Matrix::zeros(1, 1),
            None,
        )
        .unwrap();
        let d = zoh_discretize(&z, 0.5).unwrap();
        assert_eq!(d.a, Matrix::identity(1));
        assert!((d.b[(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn euler_error_is_second_order() {
        let c = compensator();
        let err = |h: f64| {
            let e = euler_discretize(&c, h).unwrap();
            let z = zoh_discretize(&c, h).unwrap();
            e.a.max_abs_diff(&z.a).unwrap()
        };
        let ratio = err(0.002) / err(0.001);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn plant_gain_at_two() {
        let p = freq_point(&plant(), 2.0).unwrap();
        assert!((p.mag - 2.0 / 3.0).abs() < 1e-12);
        assert!(!p.flagged);
        let r = freq_point(&plant(), 1.0).unwrap();
        assert!(r.flagged);
        assert!(r.mag > 1e6);
    }

    #[test]
    fn compensator_matches_rational_form() {
        let c = compensator();
        for w in [0.01, 0.3, 1.0, 7.0, 50.0, 1000.0] {
            let p = freq_point(&c, w).unwrap();
            // -128 (s+1)/(s+0.1) (s/5+1)/(s/50+1) at s = jw
            let mul = |a: (f64, f64), b: (f64, f64)| (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0);
            let div = |a: (f64, f64), b: (f64, f64)| {
                let d = b.0 * b.0 + b.1 * b.1;
                ((a.0 * b.0 + a.1 * b.1) / d, (a.1 * b.0 - a.0 * b.1) / d)
            };
            let f1 = div((1.0, w), (0.1, w));
            let f2 = div((1.0, w / 5.0), (1.0, w / 50.0));
            let g = mul(f1, f2);
            let (re, im) = (-128.0 * g.0, -128.0 * g.1);
            let scale = re.hypot(im);
            assert!((p.re - re).abs() <= 1e-9 * scale, "w={w}");
            assert!((p.im - im).abs() <= 1e-9 * scale, "w={w}");
        }
    }

    #[test]
    fn static_gain() {
        let p = freq_point(&StateSpace::gain(-3.0), 5.0).unwrap();
        assert_eq!(p.mag, 3.0);
        assert_eq!(p.phase_deg, -180.0);
        assert_eq!(freq_point(&StateSpace::gain(2.0), 5.0).unwrap().phase_deg, 0.0);
    }

    #[test]
    fn integrator_margins() {
        let integ = StateSpace::new(
            Matrix::zeros(1, 1),
            Matrix::column(&[1.0]),
            Matrix::row(&[10.0]),
            Matrix::zeros(1, 1),
            None,
        )
        .unwrap();
        let grid = log_grid(PM_GRID.0, PM_GRID.1, PM_GRID.2);
        let pm = phase_margin(&integ, &grid).unwrap();
        assert!((pm.pm_deg - 90.0).abs() < 1e-9);
        assert!((pm.crossover - 10.0).abs() < 1e-9);

        let double = StateSpace::new(
            Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]),
            Matrix::column(&[0.0, 1.0]),
            Matrix::row(&[1.0, 0.0]),
            Matrix::zeros(1, 1),
            None,
        )
        .unwrap();
        let pm = phase_margin(&double, &grid).unwrap();
        assert!(pm.pm_deg.abs() < 1e-6, "{}", pm.pm_deg);
        assert!((pm.crossover - 1.0).abs() < 1e-9);

        assert!(matches!(
            phase_margin(&StateSpace::gain(0.5), &grid),
            Err(SimError::NoCrossover { .. })
        ));
    }

    #[test]
    fn series_composition() {
        let l = compensator().series(&plant()).unwrap();
        for w in [0.5, 3.0, 40.0] {
            let a = freq_point(&compensator(), w).unwrap();
            let b = freq_point(&plant(), w).unwrap();
            let p = freq_point(&l, w).unwrap();
            assert!((p.mag - a.mag * b.mag).abs() < 1e-9 * p.mag);
        }
    }

    #[test]
    fn pole_on_grid_is_flagged() {
        let l = compensator().series(&plant()).unwrap().negated();
        let p = freq_point(&l, 1.0).unwrap();
        assert!(p.flagged && p.mag > 1e3);
        assert!(!freq_point(&l, 2.0).unwrap().flagged);
        let grid = log_grid(PM_GRID.0, PM_GRID.1, PM_GRID.2);
        assert!(grid.iter().any(|w| (w - 1.0).abs() < 1e-12));
        let pm = phase_margin(&l, &grid).unwrap();
        assert!(pm.pm_deg > 50.0 && pm.crossover > 20.0);
    }

    #[test]
    fn controller_trace_shape() {
        let d = euler_discretize(&compensator(), 0.01).unwrap();
        let t = simulate_controller(&d, std::iter::repeat(0.0), 5, None, None).unwrap();
        assert_eq!(t.records.len(), 6);
        assert!(t.records.iter().all(|r| r.x == vec![0.0, 0.0]));
        assert!(t.records[5].u.is_empty());
        let csv = t.to_csv();
        assert!(csv.starts_with("k,t,y,u,x1,x2,V\n0,0,0,0,0,0,\n"));
    }

    #[test]
    fn unit_input_fixed_point() {
        let d = euler_discretize(&compensator(), 0.01).unwrap();
        let p = SymMatrix::from_rows(&[&[0.03, 0.2], &[0.2, 10.0]]);
        let t = simulate_controller(&d, std::iter::repeat(3.0), 100_000, Some(&p), None).unwrap();
        let x = &t.records.last().unwrap().x;
        // (I - A) x = B gives x = (0, 20)
        assert!((x[0] - 0.0).abs() < 1e-9 && (x[1] - 20.0).abs() < 1e-9, "{x:?}");
        assert!((t.records.last().unwrap().v.unwrap() - 4000.0).abs() < 1e-5);
    }

    #[test]
    fn free_plant_conserves_energy() {
        let ctrl = StateSpace::new(
            Matrix::zeros(1, 1),
            Matrix::zeros(1, 1),
            Matrix::zeros(1, 1),
            Matrix::zeros(1, 1),
            Some(0.01),
        )
        .unwrap();
        let t = simulate_closed_loop(&plant(), &ctrl, 0.01, 10_000, &[1.0, 0.0], None).unwrap();
        for r in &t.records {
            let e = r.x[1] * r.x[1] + r.x[2] * r.x[2];
            assert!((e - 1.0).abs() < 1e-9);
        }
    }
}
