//! Goldenshluger–Lepski bandwidth selection at a point.
//!
//! The candidate set is the lattice `h_i = e^{-l_i}`,
//! `0 ≤ l_i ≤ ⌊(β_H/2) log(nΔ_n)⌋`, restricted to
//! `V_h ≥ (nΔ_n)^{-β_H/2}`. For each candidate the rule balances the bias
//! proxy `B(h, x₀)` against the majorant `M_n(h)` and keeps the minimiser.

use serde::{Deserialize, Serialize};

use crate::density::{estimate_many, PointEstimate};
use crate::error::{Error, Result};
use crate::fbm::Hurst;
use crate::kernels::{Bandwidth, Kernel};
use crate::rates::beta_h;
use crate::sde::ObservationSet;

/// Slack for floating-point comparisons at lattice boundaries
/// (e.g. `V_h` exactly equal to the threshold).
const BOUNDARY_SLACK: f64 = 1e-10;

pub fn v_h(h: &Bandwidth) -> f64 {
    h.volume_factor()
}

/// `φ_n(h) = (4 d κ_L² / (V_h² (nΔ_n)^{β_H}))^{1/2}`.
pub fn phi_n(h: &Bandwidth, kernel_lipschitz: f64, n: usize, delta_n: f64, hurst: Hurst) -> f64 {
    phi_from_parts(h.dim(), v_h(h), kernel_lipschitz, n as f64 * delta_n, beta_h(hurst))
}

fn phi_from_parts(dim: usize, v: f64, kernel_lipschitz: f64, horizon: f64, beta: f64) -> f64 {
    (4.0 * dim as f64 * kernel_lipschitz * kernel_lipschitz / (v * v * horizon.powf(beta))).sqrt()
}

/// Largest lattice level `⌊(β_H/2) log(nΔ_n)⌋`.
pub fn max_level(horizon: f64, beta: f64) -> u32 {
    (0.5 * beta * horizon.ln() + BOUNDARY_SLACK).floor().max(0.0) as u32
}

/// Both membership predicates: lattice range and `V_h ≥ (nΔ_n)^{-β_H/2}`.
pub fn is_member(levels: &[u32], horizon: f64, beta: f64) -> bool {
    let top = max_level(horizon, beta);
    if levels.iter().any(|&l| l > top) {
        return false;
    }
    let min = *levels.iter().max().unwrap_or(&0) as f64;
    let log_v = -(min + levels.iter().map(|&l| l as f64).sum::<f64>());
    log_v >= -0.5 * beta * horizon.ln() - BOUNDARY_SLACK
}

#[derive(Clone, Debug, Serialize)]
pub struct GridMember {
    pub levels: Vec<u32>,
    pub h: Bandwidth,
    pub v_h: f64,
    pub phi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BandwidthGrid {
    members: Vec<GridMember>,
    n: usize,
    delta_n: f64,
    beta_h: f64,
    dim: usize,
    kernel_lipschitz: f64,
    #[serde(skip)]
    joins: Vec<Vec<usize>>,
}

impl BandwidthGrid {
    pub fn build(n: usize, delta_n: f64, hurst: Hurst, dim: usize, kernel: &Kernel) -> Result<Self> {
        Self::build_with_lipschitz(n, delta_n, hurst, dim, kernel.lipschitz())
    }

    pub fn build_with_lipschitz(n: usize, delta_n: f64, hurst: Hurst, dim: usize, kernel_lipschitz: f64) -> Result<Self> {
        if dim == 0 || n == 0 || !(delta_n > 0.0) {
            return Err(Error::Parameter("grid needs n ≥ 1, delta_n > 0 and dim ≥ 1".into()));
        }
        if !(kernel_lipschitz > 0.0 && kernel_lipschitz.is_finite()) {
            return Err(Error::Parameter("kernel Lipschitz constant must be positive".into()));
        }
        let horizon = n as f64 * delta_n;
        let beta = beta_h(hurst);
        if beta * horizon.ln() < 1.0 - BOUNDARY_SLACK {
            return Err(Error::Precondition(format!(
                "(n*delta_n)^beta_H = {:.4} is below e; the bandwidth grid would be empty",
                horizon.powf(beta)
            )));
        }
        let top = max_level(horizon, beta);
        let mut members = Vec::new();
        let mut levels = vec![0u32; dim];
        loop {
            if is_member(&levels, horizon, beta) {
                let h = Bandwidth::new(levels.iter().map(|&l| (-(l as f64)).exp()).collect())?;
                let v = v_h(&h);
                members.push(GridMember {
                    levels: levels.clone(),
                    phi: phi_from_parts(dim, v, kernel_lipschitz, horizon, beta),
                    h,
                    v_h: v,
                });
            }
            // odometer increment
            let mut i = 0;
            loop {
                if i == dim {
                    break;
                }
                if levels[i] < top {
                    levels[i] += 1;
                    break;
                }
                levels[i] = 0;
                i += 1;
            }
            if i == dim {
                break;
            }
        }
        if members.is_empty() {
            return Err(Error::Precondition("bandwidth grid is empty".into()));
        }
        let index_of = |lv: &[u32]| members.iter().position(|m| m.levels == lv);
        let joins = members
            .iter()
            .map(|a| {
                members
                    .iter()
                    .map(|b| {
                        let joined: Vec<u32> = a.levels.iter().zip(&b.levels).map(|(x, y)| *x.min(y)).collect();
                        index_of(&joined).expect("componentwise maximum of members is a member")
                    })
                    .collect()
            })
            .collect();
        Ok(BandwidthGrid { members, n, delta_n, beta_h: beta, dim, kernel_lipschitz, joins })
    }

    pub fn members(&self) -> &[GridMember] {
        &self.members
    }
    pub fn len(&self) -> usize {
        self.members.len()
    }
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn delta_n(&self) -> f64 {
        self.delta_n
    }
    pub fn beta_h(&self) -> f64 {
        self.beta_h
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn horizon(&self) -> f64 {
        self.n as f64 * self.delta_n
    }
    pub fn kernel_lipschitz(&self) -> f64 {
        self.kernel_lipschitz
    }

    /// Index of `members[a] ∨ members[b]`.
    pub fn join_index(&self, a: usize, b: usize) -> usize {
        self.joins[a][b]
    }

    pub fn index_of_levels(&self, levels: &[u32]) -> Option<usize> {
        self.members.iter().position(|m| m.levels == levels)
    }

    pub fn bandwidths(&self) -> Vec<Bandwidth> {
        self.members.iter().map(|m| m.h.clone()).collect()
    }
}

/// Hyperparameter κ of the selection rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kappa {
    Fixed(f64),
    /// `κ = log n`.
    LogN,
}

impl Kappa {
    pub fn resolve(self, n: usize) -> f64 {
        match self {
            Kappa::Fixed(k) => k,
            Kappa::LogN => (n as f64).ln(),
        }
    }
}

impl std::str::FromStr for Kappa {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log-n" | "logn" | "log(n)" => Ok(Kappa::LogN),
            _ => s.parse::<f64>().map(Kappa::Fixed).map_err(|_| Error::Parameter(format!("kappa must be a number or 'log-n', got {s:?}"))),
        }
    }
}

fn check_params(kappa: f64, p: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Parameter(format!("kappa must be positive, got {kappa}")));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p must be at least 1, got {p}")));
    }
    Ok(())
}

/// `M_n(h) = φ_n(h) √(κ p |log V_h|)` for every member.
pub fn majorants(grid: &BandwidthGrid, kappa: f64, p: f64) -> Vec<f64> {
    grid.members.iter().map(|m| m.phi * (kappa * p * m.v_h.ln().abs()).sqrt()).collect()
}

/// `M_n(h, η) = M_n(η) + M_n(η ∨ h)`.
pub fn pair_majorant(grid: &BandwidthGrid, majorants: &[f64], h: usize, eta: usize) -> f64 {
    majorants[eta] + majorants[grid.join_index(eta, h)]
}

#[derive(Clone, Debug, Serialize)]
pub struct MemberDiagnostics {
    pub levels: Vec<u32>,
    pub h: Bandwidth,
    pub v_h: f64,
    pub phi: f64,
    pub estimate: f64,
    pub majorant: f64,
    pub bias_proxy: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectionDiagnostics {
    pub x0: Vec<f64>,
    pub kappa: f64,
    pub p: f64,
    pub members: Vec<MemberDiagnostics>,
    /// `|f̂_{η∨h}(x₀) − f̂_η(x₀)|`, indexed `[h][η]`.
    pub pair_differences: Vec<Vec<f64>>,
    /// `M_n(h, η)`, indexed `[h][η]`.
    pub pair_majorants: Vec<Vec<f64>>,
    pub selected: usize,
}

impl SelectionDiagnostics {
    pub fn selected_member(&self) -> &MemberDiagnostics {
        &self.members[self.selected]
    }
    pub fn selected_bandwidth(&self) -> &Bandwidth {
        &self.members[self.selected].h
    }
    pub fn selected_estimate(&self) -> f64 {
        self.members[self.selected].estimate
    }
}

/// `B(h, x₀) = max_η {|f̂_{η∨h} − f̂_η| − M_n(h, η)}_+` for every member,
/// with the pairwise tables.
pub fn bias_proxies(grid: &BandwidthGrid, estimates: &[f64], majorants: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let k = grid.len();
    let mut b = vec![0.0; k];
    let mut diffs = vec![vec![0.0; k]; k];
    let mut pair = vec![vec![0.0; k]; k];
    for h in 0..k {
        let mut best = 0.0f64;
        for eta in 0..k {
            let d = (estimates[grid.join_index(eta, h)] - estimates[eta]).abs();
            let m = pair_majorant(grid, majorants, h, eta);
            diffs[h][eta] = d;
            pair[h][eta] = m;
            best = best.max(d - m);
        }
        b[h] = best;
    }
    (b, diffs, pair)
}

/// Index minimising `objective`. Ties go to the largest `V_h`, then to the
/// lexicographically smallest level vector.
pub fn argmin_objective(grid: &BandwidthGrid, objective: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..grid.len() {
        let (a, b) = (&grid.members[i], &grid.members[best]);
        let better = objective[i] < objective[best]
            || (objective[i] == objective[best] && (a.v_h > b.v_h || (a.v_h == b.v_h && a.levels < b.levels)));
        if better {
            best = i;
        }
    }
    best
}

/// Run the rule on precomputed estimates `f̂_h(x₀)` (one per member) and
/// majorants.
pub fn select_from_estimates(
    grid: &BandwidthGrid,
    x0: &[f64],
    estimates: &[f64],
    majorants: &[f64],
    kappa: f64,
    p: f64,
) -> SelectionDiagnostics {
    assert_eq!(estimates.len(), grid.len());
    assert_eq!(majorants.len(), grid.len());
    let (b, pair_differences, pair_majorants) = bias_proxies(grid, estimates, majorants);
    let objective: Vec<f64> = b.iter().zip(majorants).map(|(b, m)| b + m).collect();
    let selected = argmin_objective(grid, &objective);
    let members = grid
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| MemberDiagnostics {
            levels: m.levels.clone(),
            h: m.h.clone(),
            v_h: m.v_h,
            phi: m.phi,
            estimate: estimates[i],
            majorant: majorants[i],
            bias_proxy: b[i],
            objective: objective[i],
        })
        .collect();
    SelectionDiagnostics { x0: x0.to_vec(), kappa, p, members, pair_differences, pair_majorants, selected }
}

/// Select `ĥ(x₀)` from data. Each grid bandwidth is estimated once; every
/// `η ∨ h` is itself a grid member so no other estimates are needed.
pub fn select(
    data: &ObservationSet,
    kernel: &Kernel,
    grid: &BandwidthGrid,
    x0: &[f64],
    kappa: f64,
    p: f64,
) -> Result<SelectionDiagnostics> {
    check_params(kappa, p)?;
    if data.dim() != grid.dim() || x0.len() != grid.dim() {
        return Err(Error::Input(format!("dimension mismatch: data {}, x0 {}, grid {}", data.dim(), x0.len(), grid.dim())));
    }
    let estimates = estimate_many(data, kernel, &grid.bandwidths(), x0)?;
    let m = majorants(grid, kappa, p);
    Ok(select_from_estimates(grid, x0, &estimates, &m, kappa, p))
}

/// Plug-in estimate `f̂_{ĥ(x₀)}(x₀)`.
pub fn adaptive_estimate(
    data: &ObservationSet,
    kernel: &Kernel,
    grid: &BandwidthGrid,
    x0: &[f64],
    kappa: f64,
    p: f64,
) -> Result<(PointEstimate, SelectionDiagnostics)> {
    let diag = select(data, kernel, grid, x0, kappa, p)?;
    let est = PointEstimate {
        x0: x0.to_vec(),
        h: diag.selected_bandwidth().clone(),
        value: diag.selected_estimate(),
        n: data.len(),
        delta_n: data.grid().delta_n(),
    };
    Ok((est, diag))
}
