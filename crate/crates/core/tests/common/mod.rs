//! Shared oracles, generators and property checks for the integration tests.
#![allow(dead_code)]

use crowd_mpc::crowd::{
    destination_force, pair_forces, total_force, vehicle_influence, CrowdParams, PedestrianState,
    VehicleFootprint,
};
use crowd_mpc::mpc::QpProblem;
use crowd_mpc::Vec2;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

// ---------------------------------------------------------------------------
// QP oracle

#[derive(Debug, Clone, PartialEq)]
pub enum OracleResult {
    Optimal { u: DVector<f64>, objective: f64 },
    Infeasible,
}

/// Accelerated projected gradient ascent on the dual of
/// `min U'HU + 2F'U s.t. GU >= h`, with gradient restarts. The only
/// projection needed is `λ >= 0`. Declares infeasibility when the
/// multipliers run off to infinity.
pub fn dual_gradient_oracle(qp: &QpProblem) -> OracleResult {
    let p = &qp.quad * 2.0;
    let q = &qp.lin * 2.0;
    let chol = p.clone().cholesky().expect("oracle needs a positive definite H");
    let p_inv = chol.inverse();
    let g = &qp.g;
    let primal = |lam: &DVector<f64>| &p_inv * (g.tr_mul(lam) - &q);
    let objective = |u: &DVector<f64>| 0.5 * u.dot(&(&p * u)) + q.dot(u);

    let rows = g.nrows();
    if rows == 0 {
        let u = primal(&DVector::zeros(0));
        let objective = objective(&u);
        return OracleResult::Optimal { u, objective };
    }
    let m = g * &p_inv * g.transpose();
    let step = 1.0 / m.symmetric_eigenvalues().max().max(1e-12);
    let mut lam = DVector::zeros(rows);
    let mut y = lam.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let u_y = primal(&y);
        let grad = &qp.h - g * &u_y;
        let next = (&y + grad * step).map(|v| v.max(0.0));
        // Restart the momentum when it points uphill for the negated dual.
        let restart = (&next - &lam).dot(&(&y - &next)) > 0.0;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = if restart { next.clone() } else { &next + (&next - &lam) * ((t - 1.0) / t_next) };
        t = if restart { 1.0 } else { t_next };
        lam = next;

        if lam.amax() > 1e9 {
            return OracleResult::Infeasible;
        }
        let u = primal(&lam);
        let viol = (&qp.h - g * &u).iter().fold(0.0f64, |a, v| a.max(*v));
        let p_obj = objective(&u);
        let d_obj = p_obj - lam.dot(&(g * &u - &qp.h));
        let scale = 1.0 + p_obj.abs();
        if viol <= 1e-9 * (1.0 + qp.h.amax()) && (p_obj - d_obj).abs() <= 1e-9 * scale {
            return OracleResult::Optimal { u, objective: p_obj };
        }
    }
    panic!("dual gradient oracle did not converge");
}

/// A random strictly convex QP with `n <= 5` variables, a box on a random
/// subset of variables and random half-spaces. Returns the problem and
/// whether it is feasible by construction.
pub fn random_qp<R: Rng>(rng: &mut R) -> (QpProblem, bool) {
    let n = rng.gen_range(1..=5);
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let quad = a.transpose() * &a + DMatrix::identity(n, n) * rng.gen_range(0.05..1.0);
    let lin = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let anchor = DVector::from_fn(n, |_, _| rng.gen_range(-0.4..0.4));

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..n {
        if rng.gen_bool(0.6) {
            let b = rng.gen_range(0.5..3.0);
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            rows.push((e.clone(), -b));
            rows.push((-e, -b));
        }
    }
    for _ in 0..rng.gen_range(0..=6) {
        let gi = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let slack = rng.gen_range(0.1..2.0);
        let rhs = gi.dot(&anchor) - slack;
        rows.push((gi, rhs));
    }
    let feasible = !rng.gen_bool(0.25);
    if !feasible {
        let gi = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)).normalize();
        let c = rng.gen_range(-1.0..1.0);
        let gap = rng.gen_range(0.2..1.0);
        rows.push((gi.clone(), c + gap));
        rows.push((-gi, -c));
    }
    // Shuffle so the contradictory pair is not always last.
    for i in (1..rows.len()).rev() {
        let j = rng.gen_range(0..=i);
        rows.swap(i, j);
    }
    let g = DMatrix::from_fn(rows.len(), n, |r, c| rows[r].0[c]);
    let h = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    (QpProblem::new(quad, lin, g, h).unwrap(), feasible)
}

// ---------------------------------------------------------------------------
// Crowd generators and property checks

pub fn pedestrian<R: Rng>(rng: &mut R, id: u32, center: Vec2, spread: f64) -> PedestrianState {
    PedestrianState {
        id,
        position: center + Vec2::new(rng.gen_range(-spread..spread), rng.gen_range(-spread..spread)),
        velocity: Vec2::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)),
        destination: center + Vec2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)),
        mass: rng.gen_range(50.0..90.0),
        radius: rng.gen_range(0.2..0.35),
        desired_speed: rng.gen_range(0.8..1.6),
    }
}

pub fn crowd<R: Rng>(rng: &mut R, n: usize, center: Vec2, spread: f64) -> Vec<PedestrianState> {
    (0..n).map(|i| pedestrian(rng, i as u32, center, spread)).collect()
}

pub fn vehicle<R: Rng>(rng: &mut R, center: Vec2) -> VehicleFootprint {
    let angle: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    VehicleFootprint {
        center,
        heading: Vec2::new(angle.cos(), angle.sin()),
        length: 5.0,
        width: 2.0,
        longitudinal_speed: rng.gen_range(0.0..8.0),
    }
}

fn close(a: Vec2, b: Vec2, tol: f64) -> bool {
    (a - b).norm() <= tol
}

/// Every pedestrian's total force equals an independent sum of its parts.
pub fn check_summation(crowd: &[PedestrianState], veh: Option<&VehicleFootprint>, p: &CrowdParams) -> Result<(), String> {
    for (i, ped) in crowd.iter().enumerate() {
        let neighbors: Vec<&PedestrianState> = crowd
            .iter()
            .enumerate()
            .filter(|(j, o)| *j != i && (o.position - ped.position).norm() <= p.neighbor_radius)
            .map(|(_, o)| o)
            .collect();
        let out = total_force(ped, &neighbors, veh, p);
        let mut sum = Vec2::zeros();
        let mut magnitude = 0.0;
        for o in &neighbors {
            let (r, c, n) = pair_forces(ped, o, p);
            sum += r + c + n;
            magnitude += r.norm() + c.norm() + n.norm();
        }
        let f_v = veh.map_or(Vec2::zeros(), |v| vehicle_influence(ped, v, p));
        let beta = (1.0 - f_v.norm() / p.f_sat).max(0.0);
        let f_d = destination_force(ped, p);
        sum += f_v + f_d * beta;
        magnitude += f_v.norm() + f_d.norm();
        let tol = 1e-12 * magnitude.max(1.0);
        if !close(out.total, sum, tol) || !close(out.total, out.recomputed_total(), tol) {
            return Err(format!("ped {i}: total {:?} vs parts {:?}", out.total, sum));
        }
    }
    Ok(())
}

fn shifted(crowd: &[PedestrianState], d: Vec2) -> Vec<PedestrianState> {
    crowd
        .iter()
        .map(|p| PedestrianState { position: p.position + d, destination: p.destination + d, ..p.clone() })
        .collect()
}

pub fn check_translation(
    crowd: &[PedestrianState],
    veh: Option<&VehicleFootprint>,
    shift: Vec2,
    p: &CrowdParams,
) -> Result<(), String> {
    let moved = shifted(crowd, shift);
    let moved_veh = veh.map(|v| VehicleFootprint { center: v.center + shift, ..*v });
    let a = crowd_mpc::crowd::crowd_forces(crowd, veh, p);
    let b = crowd_mpc::crowd::crowd_forces(&moved, moved_veh.as_ref(), p);
    for (i, (fa, fb)) in a.iter().zip(&b).enumerate() {
        if !close(fa.total, fb.total, 1e-9) {
            return Err(format!("ped {i}: {:?} vs {:?} after shift {:?}", fa.total, fb.total, shift));
        }
    }
    Ok(())
}

/// f_r and f_c of two otherwise identical pedestrians are equal and opposite.
pub fn check_pair_symmetry(a: &PedestrianState, offset: Vec2, p: &CrowdParams) -> Result<(), String> {
    let b = PedestrianState { id: a.id + 1, position: a.position + offset, ..a.clone() };
    let (r_ab, c_ab, _) = pair_forces(a, &b, p);
    let (r_ba, c_ba, _) = pair_forces(&b, a, p);
    let tol = 1e-12 * (r_ab.norm() + c_ab.norm()).max(1.0);
    if !close(r_ab, -r_ba, tol) || !close(c_ab, -c_ba, tol) {
        return Err(format!("offset {offset:?}: f_r {r_ab:?}/{r_ba:?}, f_c {c_ab:?}/{c_ba:?}"));
    }
    Ok(())
}

pub fn check_speed_cap(
    crowd: &[PedestrianState],
    veh: Option<&VehicleFootprint>,
    dt: f64,
    p: &CrowdParams,
) -> Result<(), String> {
    let next = crowd_mpc::crowd::step_crowd(crowd, veh, dt, p);
    for ped in &next {
        if ped.velocity.norm() > p.max_ped_speed * (1.0 + 1e-12) {
            return Err(format!("ped {} speed {}", ped.id, ped.velocity.norm()));
        }
    }
    Ok(())
}

fn probe(at: Vec2) -> PedestrianState {
    PedestrianState {
        id: 0,
        position: at,
        velocity: Vec2::zeros(),
        destination: at,
        mass: 70.0,
        radius: 0.3,
        desired_speed: 1.2,
    }
}

/// Along a ray leaving the front bumper at `angle` from the heading, the
/// vehicle force magnitude never grows (0.5 m samples out to the cutoff).
pub fn check_monotone_ray(veh: &VehicleFootprint, angle: f64, p: &CrowdParams) -> Result<(), String> {
    let lateral = Vec2::new(-veh.heading.y, veh.heading.x);
    let origin = veh.center + veh.heading * (0.5 * veh.length);
    let dir = veh.heading * angle.cos() + lateral * angle.sin();
    let reach = p.veh_cutoff + 0.5 * veh.length + p.veh_lambda * veh.longitudinal_speed + 1.0;
    let mut prev = f64::INFINITY;
    let mut d = 0.0;
    while d <= reach {
        let f = vehicle_influence(&probe(origin + dir * d), veh, p).norm();
        if f > prev * (1.0 + 1e-12) {
            return Err(format!("angle {angle}: |f| rose from {prev} to {f} at {d} m"));
        }
        prev = f;
        d += 0.5;
    }
    Ok(())
}

/// At any point ahead of the bumper, a faster vehicle pushes at least as
/// hard as a slower one.
pub fn check_speed_expansion(
    veh: &VehicleFootprint,
    ahead: f64,
    lateral_offset: f64,
    v_slow: f64,
    v_fast: f64,
    p: &CrowdParams,
) -> Result<(), String> {
    let lateral = Vec2::new(-veh.heading.y, veh.heading.x);
    let at = veh.center + veh.heading * (0.5 * veh.length + ahead) + lateral * lateral_offset;
    let slow = VehicleFootprint { longitudinal_speed: v_slow, ..*veh };
    let fast = VehicleFootprint { longitudinal_speed: v_fast, ..*veh };
    let f_slow = vehicle_influence(&probe(at), &slow, p).norm();
    let f_fast = vehicle_influence(&probe(at), &fast, p).norm();
    if f_fast + 1e-12 < f_slow {
        return Err(format!("at {ahead} m ahead: {f_fast} N at {v_fast} m/s < {f_slow} N at {v_slow} m/s"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// MPC cases and physical checks

use crowd_mpc::predictor::{FrontGapSequence, NO_PEDESTRIAN};
use crowd_mpc::qp::{solve, QpStatus};
use crowd_mpc::vehicle::{DiscreteModel, VehicleParams, VehicleState};

pub struct MpcCase {
    pub x_k: VehicleState,
    pub u_prev: f64,
    pub x_p: FrontGapSequence,
}

/// Random state, previous input and pedestrian sequence. Present
/// pedestrians start beyond the step-1 reach so most cases are feasible.
pub fn random_mpc_case<R: Rng>(rng: &mut R, horizon: usize, dt: f64, d_safe: f64) -> MpcCase {
    let s = rng.gen_range(-20.0..50.0);
    let v = rng.gen_range(0.0..20.0);
    let u_prev = rng.gen_range(-8000.0..8000.0);
    let mut x_p = Vec::with_capacity(horizon);
    for i in 0..horizon {
        x_p.push(if rng.gen_bool(0.7) {
            s + d_safe + v * dt * (i + 1) as f64 + rng.gen_range(-0.5..8.0)
        } else {
            NO_PEDESTRIAN
        });
    }
    MpcCase { x_k: VehicleState::new(s, v), u_prev, x_p: FrontGapSequence { x_p } }
}

#[derive(Debug, Clone, Copy)]
pub struct PhysicalTolerance {
    pub force: f64,
    pub speed: f64,
    pub gap: f64,
}

/// Roll `u` through the one-step model and check every bound directly.
pub fn check_physical(
    model: &DiscreteModel,
    params: &VehicleParams,
    case: &MpcCase,
    d_safe: f64,
    u: &DVector<f64>,
    tol: PhysicalTolerance,
) -> Result<(), String> {
    let mut x = case.x_k;
    let mut prev = case.u_prev;
    for (i, &ui) in u.iter().enumerate() {
        if ui.abs() > params.u_max + tol.force {
            return Err(format!("step {i}: |u| = {}", ui.abs()));
        }
        if (ui - prev).abs() > params.du_max + tol.force {
            return Err(format!("step {i}: |du| = {}", (ui - prev).abs()));
        }
        x = model.step(x, ui);
        if x.v > params.v_max + tol.speed || x.v < params.v_min - tol.speed {
            return Err(format!("step {i}: v = {}", x.v));
        }
        if case.x_p.is_present(i) && case.x_p.x_p[i] - x.s < d_safe - tol.gap {
            return Err(format!("step {i}: gap = {}", case.x_p.x_p[i] - x.s));
        }
        prev = ui;
    }
    Ok(())
}

/// Points satisfying `G U >= h` of `qp`: minimizers of random strictly
/// convex objectives over the same constraints (vertices and faces of the
/// feasible set) and convex combinations of them.
pub fn feasible_points<R: Rng>(rng: &mut R, qp: &QpProblem, count: usize) -> Vec<DVector<f64>> {
    let n = qp.num_vars();
    let mut out: Vec<DVector<f64>> = Vec::new();
    for _ in 0..count * 4 {
        if out.len() >= count {
            break;
        }
        if out.len() >= 2 && rng.gen_bool(0.4) {
            let a = &out[rng.gen_range(0..out.len())];
            let b = &out[rng.gen_range(0..out.len())];
            let t = rng.gen_range(0.0..1.0);
            out.push(a * t + b * (1.0 - t));
            continue;
        }
        let d = DVector::from_fn(n, |_, _| rng.gen_range(0.1..10.0));
        let quad = DMatrix::from_diagonal(&d) * 1e-12;
        let lin = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0) * 1e-3);
        let probe = QpProblem::new(quad, lin, qp.g.clone(), qp.h.clone()).unwrap();
        let sol = solve(&probe);
        if sol.status == QpStatus::Optimal {
            out.push(sol.u);
        } else {
            break;
        }
    }
    out
}
