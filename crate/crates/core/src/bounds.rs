//! Weighted norm experiments: sparse and operator bounds, two-weight commutator
//! bounds, the median-value lower bound, and the extrapolation transfer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dyadic::SparseFamily;
use crate::error::{Error, Result};
use crate::measure::{ball_volume, BallSpec, Metric, WeightedGrid};
use crate::operators::{commutator, dunkl_maximal, BallFamily, DiscreteOperator, KernelModel};
use crate::sparse::{commutator_sparse_operator, sparse_family_commutator, sparse_family_t, sparse_operator, SparseContext, Strategy};
use crate::weights::{a1_constant, bmo_norm, median_value, oscillation, rubio_de_francia, RdfReport, TestFamily, Weight};

/// `(sum |f_i|^p u_i w_i)^{1/p}`.
pub fn weighted_norm(grid: &WeightedGrid, u: &[f64], p: f64, f: &[f64]) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("weighted norm needs p >= 1, got {p}")));
    }
    Ok(f.iter()
        .zip(u)
        .enumerate()
        .map(|(i, (v, w))| v.abs().powf(p) * w * grid.weight(i))
        .sum::<f64>()
        .powf(1.0 / p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub experiment: String,
    pub p: f64,
    pub u: String,
    pub v: Option<String>,
    pub b: Option<String>,
    pub trials: usize,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub median_ratio: f64,
    pub constants: BTreeMap<String, f64>,
    /// Every per-trial consistency assertion held.
    pub consistent: bool,
    pub stability: Option<Stability>,
}

/// Largest allowed change of a max ratio across resolutions or seed batches.
pub const STABILITY_FACTOR: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    /// Larger over smaller max ratio at one resolution doubling.
    pub resolution_factor: Option<f64>,
    /// Largest over smallest per-batch max ratio.
    pub seed_spread: f64,
}

impl Stability {
    pub fn stable(&self) -> bool {
        self.seed_spread <= STABILITY_FACTOR && self.resolution_factor.map_or(true, |f| f <= STABILITY_FACTOR)
    }
}

/// `max / min` of nonnegative values; 1 when all vanish, infinite when only some do.
pub fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(0.0, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if hi == 0.0 {
        1.0
    } else if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Symmetric change factor between two max ratios.
pub fn change_factor(a: f64, b: f64) -> f64 {
    spread(&[a, b])
}

fn summarize(experiment: &str, p: f64, u: &Weight, ratios: Vec<f64>) -> NormReport {
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median_ratio = if sorted.is_empty() {
        0.0
    } else {
        sorted[sorted.len() / 2]
    };
    NormReport {
        experiment: experiment.into(),
        p,
        u: u.tag.clone(),
        v: None,
        b: None,
        trials: ratios.len(),
        max_ratio: sorted.last().copied().unwrap_or(0.0),
        median_ratio,
        ratios,
        constants: BTreeMap::new(),
        consistent: true,
        stability: None,
    }
}

fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

/// Exponent `max(p'/p, 1)` on the `A_p` constant in the sparse bound.
pub fn sparse_exponent(p: f64) -> f64 {
    (conjugate(p) / p).max(1.0)
}

/// `sup over trials of ||A f||_{L^p(u)} / ||f||_{L^p(u)}` for one sparse family.
pub fn verify_sparse_weighted_bound(
    grid: &WeightedGrid,
    family: &SparseFamily,
    u: &Weight,
    p: f64,
    ap: f64,
    trials: &[Vec<f64>],
) -> Result<NormReport> {
    let mut ratios = Vec::with_capacity(trials.len());
    for f in trials {
        let nf = weighted_norm(grid, &u.values, p, f)?;
        if nf == 0.0 {
            continue;
        }
        let af = sparse_operator(family, grid, f);
        ratios.push(weighted_norm(grid, &u.values, p, &af)? / nf);
    }
    let mut r = summarize("sparse_weighted", p, u, ratios);
    let e = sparse_exponent(p);
    r.constants.insert("ap".into(), ap);
    r.constants.insert("exponent".into(), e);
    r.constants.insert("ap_power".into(), ap.powf(e));
    r.constants.insert("family_size".into(), family.len() as f64);
    Ok(r)
}

/// `sup over trials of ||Tf||_{L^p(u)} / ||f||_{L^p(u)}`, each trial routed through
/// its own sparse family with `||Tf|| <= ratio ||A f||` asserted.
pub fn verify_t_weighted(ctx: &SparseContext, u: &Weight, p: f64, trials: &[Vec<f64>]) -> Result<NormReport> {
    let grid = ctx.grid;
    let mut ratios = Vec::new();
    let mut consistent = true;
    let mut worst_sparse: f64 = 0.0;
    for f in trials {
        let nf = weighted_norm(grid, &u.values, p, f)?;
        if nf == 0.0 {
            continue;
        }
        let rep = sparse_family_t(ctx, f, Strategy::TopCube)?;
        let tf = ctx.op.apply(f);
        let af = sparse_operator(&rep.family, grid, f);
        let ntf = weighted_norm(grid, &u.values, p, &tf)?;
        let naf = weighted_norm(grid, &u.values, p, &af)?;
        consistent &= ntf <= rep.max_ratio * naf * (1.0 + 1e-12) + 1e-300;
        worst_sparse = worst_sparse.max(rep.max_ratio);
        ratios.push(ntf / nf);
    }
    let mut r = summarize("operator_weighted", p, u, ratios);
    r.consistent = consistent;
    r.constants.insert("max_pointwise_ratio".into(), worst_sparse);
    r.constants.insert("ctilde0".into(), ctx.constants.ctilde0);
    r.constants.insert("ctilde_d".into(), ctx.constants.ctilde_d);
    Ok(r)
}

/// Two-weight bound for `[b, T]` normalized by `||b||` in weighted BMO with
/// `theta = (u/v)^{1/p}`; also reports the two sparse pieces separately.
#[allow(clippy::too_many_arguments)]
pub fn verify_commutator_two_weight(
    ctx: &SparseContext,
    b: &[f64],
    b_tag: &str,
    u: &Weight,
    v: &Weight,
    p: f64,
    bmo_family: &TestFamily,
    trials: &[Vec<f64>],
) -> Result<NormReport> {
    let grid = ctx.grid;
    let theta_values: Vec<f64> = u.values.iter().zip(&v.values).map(|(a, c)| (a / c).powf(1.0 / p)).collect();
    let theta = Weight::new(grid, theta_values, u.radial && v.radial, "theta")?;
    let (lo, hi) = b.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    if hi - lo <= 1e-12 * lo.abs().max(hi.abs()) {
        return Err(Error::Precondition("symbol is constant".into()));
    }
    let bmo = bmo_norm(grid, b, &theta, bmo_family)?;
    if !(bmo > 1e-14) {
        return Err(Error::Precondition("symbol has zero weighted BMO norm".into()));
    }
    let mut ratios = Vec::new();
    let (mut b1_max, mut b2_max, mut pointwise_max) = (0.0f64, 0.0f64, 0.0f64);
    let mut consistent = true;
    for f in trials {
        let nf = weighted_norm(grid, &u.values, p, f)?;
        if nf == 0.0 {
            continue;
        }
        let cf = commutator(ctx.op, b, f);
        let ncf = weighted_norm(grid, &v.values, p, &cf)?;
        ratios.push(ncf / nf / bmo);
        let rep = sparse_family_commutator(ctx, b, f, Strategy::TopCube)?;
        pointwise_max = pointwise_max.max(rep.max_ratio);
        let (first, second) = split_pieces(&rep.family, grid, b, f);
        let n1 = weighted_norm(grid, &v.values, p, &first)?;
        let n2 = weighted_norm(grid, &v.values, p, &second)?;
        b1_max = b1_max.max(n1 / nf / bmo);
        b2_max = b2_max.max(n2 / nf / bmo);
        let dom = commutator_sparse_operator(&rep.family, grid, b, f);
        let nd = weighted_norm(grid, &v.values, p, &dom)?;
        consistent &= ncf <= rep.max_ratio * nd * (1.0 + 1e-12) + 1e-300;
    }
    let mut r = summarize("commutator_two_weight", p, u, ratios);
    r.v = Some(v.tag.clone());
    r.b = Some(b_tag.to_string());
    r.consistent = consistent;
    r.constants.insert("bmo_theta".into(), bmo);
    r.constants.insert("first_piece".into(), b1_max);
    r.constants.insert("second_piece".into(), b2_max);
    r.constants.insert("max_pointwise_ratio".into(), pointwise_max);
    Ok(r)
}

/// `sum |f|_Q |b - b_Q| 1_Q` and `sum |(b - b_Q) f|_Q 1_Q`.
fn split_pieces(family: &SparseFamily, grid: &WeightedGrid, b: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut first = vec![0.0; grid.len()];
    let mut second = vec![0.0; grid.len()];
    for q in &family.cubes {
        let m = grid.measure_of(&q.members);
        let bq = q.members.iter().map(|&i| b[i] * grid.weight(i)).sum::<f64>() / m;
        let fq = q.members.iter().map(|&i| f[i].abs() * grid.weight(i)).sum::<f64>() / m;
        let hq = q.members.iter().map(|&i| ((b[i] - bq) * f[i]).abs() * grid.weight(i)).sum::<f64>() / m;
        for &i in &q.members {
            first[i] += fq * (b[i] - bq).abs();
            second[i] += hq;
        }
    }
    (first, second)
}

// ---------------------------------------------------------------------------
// Lower bound.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs` (0 when both vanish).
    pub constant: f64,
    /// Holds with constant one (an exact inequality) or is an empirical link.
    pub exact: bool,
    pub holds: bool,
}

fn link(name: &str, lhs: f64, rhs: f64, exact: bool) -> Link {
    let constant = if lhs == 0.0 {
        0.0
    } else if rhs > 0.0 {
        lhs / rhs
    } else {
        f64::INFINITY
    };
    Link {
        name: name.into(),
        lhs,
        rhs,
        constant,
        exact,
        holds: if exact {
            lhs <= rhs * (1.0 + 1e-9) + 1e-300
        } else {
            constant.is_finite()
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub center: Vec<f64>,
    pub shifted_center: Vec<f64>,
    pub radius: f64,
    pub median: f64,
    pub e1: Vec<usize>,
    pub e2: Vec<usize>,
    pub b1: Vec<usize>,
    pub b2: Vec<usize>,
    /// Kernel keeps one sign on the ball pair.
    pub kernel_sign_constant: bool,
    /// `min |K(x, y)| omega(B(x_0, r))` over the pair.
    pub kernel_lower: f64,
    pub operator_norm: f64,
    pub ap_v: f64,
    pub links: Vec<Link>,
    pub all_hold: bool,
}

pub struct LowerBoundInput<'a> {
    pub grid: &'a WeightedGrid,
    pub op: &'a DiscreteOperator,
    pub kernel: &'a KernelModel,
    /// Zero-based direction of the shift.
    pub axis: usize,
    pub b: &'a [f64],
    pub u: &'a Weight,
    pub v: &'a Weight,
    pub p: f64,
    pub center: Vec<f64>,
    pub radius: f64,
    /// `[v]_{A_p}` estimate.
    pub ap_v: f64,
    /// Two-weight norm of the commutator; measured on the two test sets when absent.
    pub operator_norm: Option<f64>,
}

pub fn lower_bound_experiment(input: &LowerBoundInput) -> Result<LowerBoundReport> {
    let LowerBoundInput {
        grid,
        op,
        kernel,
        axis,
        b,
        u,
        v,
        p,
        radius: r,
        ..
    } = *input;
    let x0 = input.center.clone();
    if axis >= grid.dim() {
        return Err(Error::Parameter("shift axis outside the dimension".into()));
    }
    if !u.radial {
        return Err(Error::Precondition("the lower bound chain needs a radial u".into()));
    }
    let mut x1 = x0.clone();
    x1[axis] += 5.0 * r;
    let bounds = &grid.params.bounds;
    for c in [&x0, &x1] {
        for (k, bd) in bounds.iter().enumerate() {
            if c[k] - r < bd[0] || c[k] + r > bd[1] {
                return Err(Error::Precondition(format!("ball at {c:?} with radius {r} leaves the box")));
            }
        }
    }
    let ball0 = grid.ball_members(&BallSpec::new(x0.clone(), r, Metric::Euclidean)?);
    let ball1 = grid.ball_members(&BallSpec::new(x1.clone(), r, Metric::Euclidean)?);
    if ball0.is_empty() || ball1.is_empty() {
        return Err(Error::Precondition("ball pair holds no grid points".into()));
    }
    let m = median_value(grid, b, &ball1)?;
    // Split the shifted ball by sorted b into two halves of equal measure up to one cell.
    let mut sorted = ball1.clone();
    sorted.sort_by(|&i, &j| b[i].total_cmp(&b[j]).then(i.cmp(&j)));
    let half = 0.5 * grid.measure_of(&ball1);
    let (mut e1, mut e2) = (Vec::new(), Vec::new());
    let mut acc = 0.0;
    for &i in &sorted {
        if e2.is_empty() && acc + 0.5 * grid.weight(i) <= half {
            acc += grid.weight(i);
            e1.push(i);
        } else {
            e2.push(i);
        }
    }
    e1.sort_unstable();
    e2.sort_unstable();
    let b1: Vec<usize> = ball0.iter().copied().filter(|&i| b[i] >= m).collect();
    let b2: Vec<usize> = ball0.iter().copied().filter(|&i| b[i] <= m).collect();

    // Kernel sign and lower bound on the pair.
    let vol0 = ball_volume(kernel.roots(), &x0, r)?;
    let (mut pos, mut neg) = (false, false);
    let mut kernel_lower = f64::INFINITY;
    for &i in &ball0 {
        for &j in &ball1 {
            let k = kernel.eval(grid.point(i), grid.point(j))?;
            pos |= k > 0.0;
            neg |= k < 0.0;
            kernel_lower = kernel_lower.min(k.abs() * vol0);
        }
    }

    let w0 = grid.measure_of(&ball0);
    let avg = |h: &dyn Fn(usize) -> f64| ball0.iter().map(|&i| h(i) * grid.weight(i)).sum::<f64>() / w0;
    let osc = oscillation(grid, b, &ball0)?;
    let dev_median = avg(&|i| (b[i] - m).abs());
    let indicator = |set: &[usize]| {
        let mut f = vec![0.0; grid.len()];
        set.iter().for_each(|&i| f[i] = 1.0);
        f
    };
    let (f1, f2) = (indicator(&e1), indicator(&e2));
    let c1 = commutator(op, b, &f1);
    let c2 = commutator(op, b, &f2);
    let comm_avg = avg(&|i| c1[i].abs()) + avg(&|i| c2[i].abs());
    let q = p / (p - 1.0);
    let local_p = |c: &[f64]| {
        ball0
            .iter()
            .map(|&i| c[i].abs().powf(p) * v.values[i] * grid.weight(i))
            .sum::<f64>()
            .powf(1.0 / p)
    };
    let v_dual = ball0
        .iter()
        .map(|&i| v.values[i].powf(-1.0 / (p - 1.0)) * grid.weight(i))
        .sum::<f64>()
        .powf(1.0 / q);
    let holder_rhs = (local_p(&c1) + local_p(&c2)) * v_dual / w0;
    let nu = |set: &[usize]| u.measure_of(grid, set).powf(1.0 / p);
    let measured_norm = {
        let full1 = weighted_norm(grid, &v.values, p, &c1)? / nu(&e1).max(1e-300);
        let full2 = weighted_norm(grid, &v.values, p, &c2)? / nu(&e2).max(1e-300);
        full1.max(full2)
    };
    let operator_norm = input.operator_norm.unwrap_or(measured_norm);
    let norm_rhs = operator_norm * (nu(&e1) + nu(&e2)) * v_dual / w0;
    let avg_u = avg(&|i| u.values[i]);
    let avg_v = avg(&|i| v.values[i]);
    let avg_vdual = avg(&|i| v.values[i].powf(-1.0 / (p - 1.0)));
    let doubling_rhs = operator_norm * avg_u.powf(1.0 / p) * avg_vdual.powf(1.0 / q);
    let theta: Vec<f64> = u.values.iter().zip(&v.values).map(|(a, c)| (a / c).powf(1.0 / p)).collect();
    let avg_theta = avg(&|i| theta[i]);
    let rh_mid = avg(&|i| u.values[i].powf(1.0 / (p + 1.0))).powf(p + 1.0);
    let theta_b0 = avg_theta * w0;
    let mean_dev = osc * w0;
    let links = vec![
        link("median", osc, 2.0 * dev_median, true),
        link("commutator_lower", dev_median, comm_avg, false),
        link("holder", comm_avg, holder_rhs, true),
        link("operator_norm", holder_rhs, norm_rhs, false),
        link("doubling", norm_rhs, doubling_rhs, false),
        link("reverse_holder", avg_u, rh_mid, false),
        link("holder_theta", rh_mid, avg_theta.powf(p) * avg_v, true),
        link("ap_v", avg_v.powf(1.0 / p) * avg_vdual.powf(1.0 / q), input.ap_v.powf(1.0 / p), true),
        link("final", mean_dev / theta_b0, operator_norm * input.ap_v.powf(1.0 / p), false),
    ];
    let all_hold = links.iter().all(|l| l.holds) && kernel_lower > 0.0 && !(pos && neg);
    Ok(LowerBoundReport {
        center: x0,
        shifted_center: x1,
        radius: r,
        median: m,
        e1,
        e2,
        b1,
        b2,
        kernel_sign_constant: !(pos && neg),
        kernel_lower,
        operator_norm,
        ap_v: input.ap_v,
        links,
        all_hold,
    })
}

// ---------------------------------------------------------------------------
// Extrapolation transfer.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferTrial {
    /// `int |Tf| phi` over `[phi]_{A_1} int M f phi`.
    pub ratio: f64,
    pub a1: f64,
    pub rdf: RdfSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdfSummary {
    pub norm_ok: bool,
    pub majorant_ok: bool,
    pub a1_ok: bool,
    pub slack: f64,
    pub a1_within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub p: f64,
    pub mdnorm: f64,
    pub trials: Vec<TransferTrial>,
    /// Uniform constant: the largest ratio.
    pub constant: f64,
    pub all_properties: bool,
}

/// For each pair `(f, g)`: build `phi(g)` and compare `int |Tf| phi` with
/// `[phi]_{A_1} int M f phi`.
#[allow(clippy::too_many_arguments)]
pub fn rdf_transfer_check(
    grid: &WeightedGrid,
    op: &DiscreteOperator,
    balls: &BallFamily,
    p: f64,
    mdnorm: f64,
    terms: usize,
    pairs: &[(Vec<f64>, Vec<f64>)],
    seed: u64,
) -> Result<TransferReport> {
    let mut trials = Vec::new();
    for (k, (f, g)) in pairs.iter().enumerate() {
        let rdf: RdfReport = rubio_de_francia(grid, balls, g, p, mdnorm, terms, seed.wrapping_add(k as u64))?;
        let phi = &rdf.phi;
        let a1 = a1_constant(grid, balls, phi)?;
        let tf = op.apply(f);
        let mf = dunkl_maximal(grid, balls, f)?;
        let lhs: f64 = (0..grid.len()).map(|i| tf[i].abs() * phi.values[i] * grid.weight(i)).sum();
        let rhs: f64 = (0..grid.len()).map(|i| mf[i] * phi.values[i] * grid.weight(i)).sum::<f64>() * a1;
        trials.push(TransferTrial {
            ratio: if lhs == 0.0 { 0.0 } else { lhs / rhs },
            a1,
            rdf: RdfSummary {
                norm_ok: rdf.norm_ok,
                majorant_ok: rdf.majorant_ok,
                a1_ok: rdf.a1_ok,
                slack: rdf.slack,
                a1_within: a1 <= 2.0 * mdnorm + 1e-6,
            },
        });
    }
    let constant = trials.iter().map(|t| t.ratio).fold(0.0, f64::max);
    let all_properties = trials
        .iter()
        .all(|t| t.rdf.norm_ok && t.rdf.majorant_ok && t.rdf.a1_ok && t.rdf.a1_within);
    Ok(TransferReport {
        p,
        mdnorm,
        trials,
        constant,
        all_properties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_grid, GridParams};
    use crate::operators::make_riesz_model;
    use crate::reflection::RootSystem;
    use crate::weights::{ap_constant, ball_family};

    #[test]
    fn norm_examples() {
        let g = build_grid(&GridParams::cube(1, -1.0, 1.0, 32), &RootSystem::trivial(1)).unwrap();
        let ones = vec![1.0; 32];
        assert!((weighted_norm(&g, &ones, 3.0, &ones).unwrap() - 2f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!(weighted_norm(&g, &ones, 0.5, &ones).is_err());
    }

    #[test]
    fn lower_bound_on_lebesgue() {
        let rs = RootSystem::trivial(1);
        let g = build_grid(&GridParams::cube(1, -1.0, 1.0, 256), &rs).unwrap();
        let k = make_riesz_model(&rs, 1).unwrap();
        let op = DiscreteOperator::assemble(&g, &k, None).unwrap();
        let b: Vec<f64> = (0..g.len()).map(|i| g.point(i)[0]).collect();
        let u = Weight::constant(&g, 1.0).unwrap();
        let fam = ball_family(&g, Metric::Dunkl, 50, 1).unwrap();
        let ap_v = ap_constant(&g, &u, 2.0, &fam).unwrap().estimate;
        let rep = lower_bound_experiment(&LowerBoundInput {
            grid: &g,
            op: &op,
            kernel: &k,
            axis: 0,
            b: &b,
            u: &u,
            v: &u,
            p: 2.0,
            center: vec![-0.6],
            radius: 0.1,
            ap_v,
            operator_norm: None,
        })
        .unwrap();
        assert!(rep.all_hold, "{:#?}", rep.links);
        let total = g.measure_of(&[rep.e1.clone(), rep.e2.clone()].concat());
        assert!((g.measure_of(&rep.e1) - 0.5 * total).abs() <= 2.0 / 256.0 + 1e-12);
    }
}
