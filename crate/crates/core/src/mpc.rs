//! Condensed MPC: the stacked prediction `X = S_x x_k + S_u U`, the
//! speed-tracking cost `U'HU + 2F'U + Y` and the inequality system
//! `G U >= h` made of six blocks (input bound, two rate bounds, upper and
//! lower speed bound, pedestrian gap).

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::predictor::{FrontGapSequence, NO_PEDESTRIAN};
use crate::vehicle::{DiscreteModel, VehicleParams, VehicleState};

/// Right-hand side used for gap rows with nobody ahead.
pub const VACUOUS_RHS: f64 = -1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub horizon: usize,
    /// 2N x 2, rows A, A^2, ..., A^N.
    pub s_x: DMatrix<f64>,
    /// 2N x N, block (i, j) = A^{i-j} B for i >= j.
    pub s_u: DMatrix<f64>,
    /// N x 2N speed selector (also used for the speed bounds).
    pub a_r: DMatrix<f64>,
    /// N x 2N position selector.
    pub m_x: DMatrix<f64>,
}

pub fn build_prediction(model: &DiscreteModel, horizon: usize) -> Result<PredictionMatrices> {
    if horizon < 1 {
        return Err(Error::EmptyHorizon);
    }
    let n = horizon;
    // powers[i] = A^i
    let mut powers = Vec::with_capacity(n + 1);
    powers.push(Matrix2::identity());
    for i in 0..n {
        powers.push(model.a * powers[i]);
    }
    let mut s_x = DMatrix::zeros(2 * n, 2);
    let mut s_u = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        s_x.fixed_view_mut::<2, 2>(2 * i, 0).copy_from(&powers[i + 1]);
        for j in 0..=i {
            let col: Vector2<f64> = powers[i - j] * model.b;
            s_u.fixed_view_mut::<2, 1>(2 * i, j).copy_from(&col);
        }
    }
    let mut a_r = DMatrix::zeros(n, 2 * n);
    let mut m_x = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        a_r[(i, 2 * i + 1)] = 1.0;
        m_x[(i, 2 * i)] = 1.0;
    }
    Ok(PredictionMatrices { horizon: n, s_x, s_u, a_r, m_x })
}

impl PredictionMatrices {
    /// Stacked states `x(k+1) .. x(k+N)` as a 2N vector.
    pub fn rollout(&self, x_k: &VehicleState, u: &DVector<f64>) -> DVector<f64> {
        &self.s_x * x_k.as_vector() + &self.s_u * u
    }

    /// Free response `S_x x_k`.
    pub fn free_response(&self, x_k: &VehicleState) -> DVector<f64> {
        &self.s_x * x_k.as_vector()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cost {
    pub h: DMatrix<f64>,
    /// Column form of the row vector F.
    pub f: DVector<f64>,
    /// Constant term; does not affect the minimizer.
    pub y: f64,
}

impl Cost {
    pub fn evaluate(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.h * u)) + 2.0 * self.f.dot(u) + self.y
    }
}

pub fn build_cost(mats: &PredictionMatrices, x_k: &VehicleState, v_r: f64, q: &DMatrix<f64>) -> Cost {
    let speed_map = &mats.a_r * &mats.s_u;
    let q_speed = q * &speed_map;
    let h = speed_map.transpose() * &q_speed;
    let h = (&h + h.transpose()) * 0.5;
    let offset = &mats.a_r * mats.free_response(x_k) - DVector::from_element(mats.horizon, v_r);
    let f = q_speed.transpose() * &offset;
    let y = offset.dot(&(q * &offset));
    Cost { h, f, y }
}

/// Which constraint family a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    InputBound,
    RateUpper,
    RateLower,
    SpeedUpper,
    SpeedLower,
    Gap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub blocks: Vec<Block>,
}

impl Constraints {
    pub fn rows_of(&self, block: Block) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().enumerate().filter(move |(_, b)| **b == block).map(|(i, _)| i)
    }
}

/// Physical-unit constraint rows: forces in N, speeds in m/s, positions in m.
pub fn build_constraints(
    mats: &PredictionMatrices,
    x_k: &VehicleState,
    u_prev: f64,
    x_p: &FrontGapSequence,
    params: &VehicleParams,
    d_safe: f64,
) -> Result<Constraints> {
    let n = mats.horizon;
    if x_p.x_p.len() != n {
        return Err(Error::Dimension(format!("front gap sequence has {} entries, horizon is {n}", x_p.x_p.len())));
    }
    let m = 7 * n;
    let mut g = DMatrix::zeros(m, n);
    let mut h = DVector::zeros(m);
    let mut blocks = Vec::with_capacity(m);
    let mut row = 0;

    // |u(i)| <= u_max
    for i in 0..n {
        g[(row, i)] = -1.0;
        h[row] = -params.u_max;
        g[(row + 1, i)] = 1.0;
        h[row + 1] = -params.u_max;
        row += 2;
    }
    blocks.extend(std::iter::repeat_n(Block::InputBound, 2 * n));

    // Rate rows use the lower-bidiagonal difference operator with u(k-1) folded
    // into the first row.
    for (sign, block) in [(-1.0, Block::RateUpper), (1.0, Block::RateLower)] {
        for i in 0..n {
            g[(row, i)] = sign;
            if i > 0 {
                g[(row, i - 1)] = -sign;
            }
            h[row] = -params.du_max + if i == 0 { sign * u_prev } else { 0.0 };
            row += 1;
            blocks.push(block);
        }
    }

    let speed_map = &mats.a_r * &mats.s_u;
    let free_speed = &mats.a_r * mats.free_response(x_k);
    for i in 0..n {
        for j in 0..n {
            g[(row + i, j)] = -speed_map[(i, j)];
            g[(row + n + i, j)] = speed_map[(i, j)];
        }
        h[row + i] = -params.v_max + free_speed[i];
        h[row + n + i] = params.v_min - free_speed[i];
    }
    row += 2 * n;
    blocks.extend(std::iter::repeat_n(Block::SpeedUpper, n));
    blocks.extend(std::iter::repeat_n(Block::SpeedLower, n));

    // Pedestrian ahead by at least d_safe: x_p - x_1 >= d_safe.
    let pos_map = &mats.m_x * &mats.s_u;
    let free_pos = &mats.m_x * mats.free_response(x_k);
    for i in 0..n {
        for j in 0..n {
            g[(row + i, j)] = -pos_map[(i, j)];
        }
        h[row + i] = if x_p.x_p[i] >= NO_PEDESTRIAN {
            VACUOUS_RHS
        } else {
            d_safe - x_p.x_p[i] + free_pos[i]
        };
    }
    blocks.extend(std::iter::repeat_n(Block::Gap, n));

    Ok(Constraints { g, h, blocks })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QpMeta {
    pub step: usize,
    /// Gap rows with nobody ahead.
    pub vacuous_rows: usize,
    /// Per horizon step, whether the gap row is live.
    pub active_gap_rows: Vec<bool>,
}

/// `minimize U'HU + 2F'U  subject to  G U >= h`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub meta: QpMeta,
}

impl QpProblem {
    pub fn new(quad: DMatrix<f64>, lin: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let n = quad.nrows();
        if quad.ncols() != n || lin.len() != n || g.ncols() != n || g.nrows() != h.len() {
            return Err(Error::Dimension(format!(
                "H {}x{}, F {}, G {}x{}, h {}",
                quad.nrows(),
                quad.ncols(),
                lin.len(),
                g.nrows(),
                g.ncols(),
                h.len()
            )));
        }
        Ok(Self { quad, lin, g, h, meta: QpMeta::default() })
    }

    pub fn unconstrained(quad: DMatrix<f64>, lin: DVector<f64>) -> Result<Self> {
        let n = lin.len();
        Self::new(quad, lin, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn num_vars(&self) -> usize {
        self.lin.len()
    }

    pub fn num_rows(&self) -> usize {
        self.h.len()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.quad * u)) + 2.0 * self.lin.dot(u)
    }

    pub fn slack(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.g * u - &self.h
    }

    /// Dump H, F, G and h as dense Matrix Market arrays.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        fn array<W: Write>(w: &mut W, name: &str, m: &DMatrix<f64>) -> std::io::Result<()> {
            writeln!(w, "%%MatrixMarket matrix array real general")?;
            writeln!(w, "% {name}")?;
            writeln!(w, "{} {}", m.nrows(), m.ncols())?;
            // column-major, as the format requires
            for v in m.iter() {
                writeln!(w, "{v:.17e}")?;
            }
            Ok(())
        }
        writeln!(w, "% qp step {} vacuous gap rows {}", self.meta.step, self.meta.vacuous_rows)?;
        array(&mut w, "H", &self.quad)?;
        array(&mut w, "F", &DMatrix::from_column_slice(self.lin.len(), 1, self.lin.as_slice()))?;
        array(&mut w, "G", &self.g)?;
        array(&mut w, "h", &DMatrix::from_column_slice(self.h.len(), 1, self.h.as_slice()))
    }
}

/// Per-episode MPC builder: everything that does not change between steps.
#[derive(Debug, Clone)]
pub struct MpcSynth {
    pub params: VehicleParams,
    pub model: DiscreteModel,
    pub mats: PredictionMatrices,
    pub q: DMatrix<f64>,
    pub v_r: f64,
    pub d_safe: f64,
}

impl MpcSynth {
    pub fn new(params: &VehicleParams, dt: f64, horizon: usize, v_r: f64, d_safe: f64) -> Result<Self> {
        let model = crate::vehicle::discretize(params, dt)?;
        let mats = build_prediction(&model, horizon)?;
        Ok(Self {
            params: params.clone(),
            model,
            mats,
            q: DMatrix::identity(horizon, horizon),
            v_r,
            d_safe,
        })
    }

    /// Assemble the step QP. Force rows are divided by `u_max` and gap rows
    /// by `d_safe` so that all rows are of comparable magnitude.
    pub fn assemble(&self, x_k: &VehicleState, u_prev: f64, x_p: &FrontGapSequence, step: usize) -> Result<QpProblem> {
        let cost = build_cost(&self.mats, x_k, self.v_r, &self.q);
        let mut cons = build_constraints(&self.mats, x_k, u_prev, x_p, &self.params, self.d_safe)?;
        for (i, block) in cons.blocks.iter().enumerate() {
            let scale = match block {
                Block::InputBound | Block::RateUpper | Block::RateLower => 1.0 / self.params.u_max,
                Block::Gap => 1.0 / self.d_safe,
                Block::SpeedUpper | Block::SpeedLower => 1.0,
            };
            cons.g.row_mut(i).scale_mut(scale);
            cons.h[i] *= scale;
        }
        let active_gap_rows: Vec<bool> = (0..self.mats.horizon).map(|i| x_p.is_present(i)).collect();
        let mut qp = QpProblem::new(cost.h, cost.f, cons.g, cons.h)?;
        qp.meta = QpMeta {
            step,
            vacuous_rows: active_gap_rows.iter().filter(|a| !**a).count(),
            active_gap_rows,
        };
        Ok(qp)
    }
}
