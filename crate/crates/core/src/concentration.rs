//! Coverings by maximal packings, the empirical-measure concentration event,
//! measure-regularity fits and the one-layer discretization error.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::domain::{DomainKind, DomainSpec};
use crate::error::{Error, Result};
use crate::model::one_layer_aggregate;

/// Voronoi cells of a maximal `r`-packing.
#[derive(Debug, Clone, PartialEq)]
pub struct Covering {
    /// `k × d`; pairwise distances ≥ `radius`.
    pub centers: Array2<f64>,
    pub radius: f64,
    /// Reference mass of each cell, estimated from probe fractions.
    pub masses: Vec<f64>,
    /// Nearest center of each probe used to build the covering.
    pub assignment: Vec<usize>,
}

impl Covering {
    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.nrows() == 0
    }

    /// Nearest center of `x`; ties go to the lowest index.
    pub fn cell_of(&self, x: ArrayView1<f64>) -> usize {
        let mut best = (0, f64::INFINITY);
        for (c, center) in self.centers.outer_iter().enumerate() {
            let d = sq_dist(x, center);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }

    /// Largest distance between two probes of the same cell.
    pub fn max_cell_diameter(&self, probes: ArrayView2<f64>) -> f64 {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.len()];
        for (i, &c) in self.assignment.iter().enumerate() {
            members[c].push(i);
        }
        let mut diam: f64 = 0.0;
        for cell in members {
            for (a, &i) in cell.iter().enumerate() {
                for &j in &cell[a + 1..] {
                    diam = diam.max(sq_dist(probes.row(i), probes.row(j)).sqrt());
                }
            }
        }
        diam
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy maximal packing scanned in probe order: a probe becomes a center iff
/// it is at distance ≥ `r` from every accepted center.
pub fn build_covering_from_probes(probes: ArrayView2<f64>, r: f64) -> Result<Covering> {
    if probes.nrows() == 0 {
        return Err(Error::invalid("covering needs at least one probe"));
    }
    if !(r > 0.0) {
        return Err(Error::invalid(format!("covering radius must be positive, got {r}")));
    }
    let r2 = r * r;
    let mut centers: Vec<usize> = Vec::new();
    for (i, p) in probes.outer_iter().enumerate() {
        // Relative slack so that grid points exactly r apart are accepted.
        if centers.iter().all(|&c| sq_dist(p, probes.row(c)) >= r2 * (1.0 - 1e-12)) {
            centers.push(i);
        }
    }
    let mut cov = Covering {
        centers: probes.select(Axis(0), &centers),
        radius: r,
        masses: vec![0.0; centers.len()],
        assignment: Vec::with_capacity(probes.nrows()),
    };
    let share = 1.0 / probes.nrows() as f64;
    for p in probes.outer_iter() {
        let c = cov.cell_of(p);
        cov.masses[c] += share;
        cov.assignment.push(c);
    }
    Ok(cov)
}

/// Covering of `domain` from `probe_count` seeded probe draws.
pub fn build_covering<R: Rng + ?Sized>(domain: &DomainSpec, r: f64, probe_count: usize, rng: &mut R) -> Result<Covering> {
    if probe_count == 0 {
        return Err(Error::invalid("covering needs at least one probe"));
    }
    let (probes, _) = domain.sample_latents(probe_count, rng)?;
    build_covering_from_probes(probes.view(), r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventCheck {
    pub holds: bool,
    /// `max_I |μ_X(I)/μ(I) − 1|`
    pub max_deviation: f64,
    pub threshold: f64,
    pub empirical: Vec<f64>,
}

/// `√C · n^(−1/(D+2)) · τ`
pub fn concentration_threshold(n: usize, tau: f64, c: f64, d: f64) -> f64 {
    c.sqrt() * (n as f64).powf(-1.0 / (d + 2.0)) * tau
}

/// `2 C n (e^(−τ²/4) + e^(−τ/(2√C)))`, an upper bound on the probability that
/// the concentration event fails.
pub fn lemma_failure_bound(n: usize, tau: f64, c: f64) -> f64 {
    2.0 * c * n as f64 * ((-tau * tau / 4.0).exp() + (-tau / (2.0 * c.sqrt())).exp())
}

/// Checks whether every cell's empirical mass under `latents` is within the
/// concentration threshold of its reference mass.
pub fn concentration_event_check(
    latents: ArrayView2<f64>,
    covering: &Covering,
    tau: f64,
    c: f64,
    d: f64,
) -> Result<EventCheck> {
    let n = latents.nrows();
    if n == 0 {
        return Err(Error::invalid("no samples"));
    }
    if let Some(i) = covering.masses.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::Degenerate(format!("cell {i} has zero reference mass")));
    }
    let mut empirical = vec![0.0; covering.len()];
    for x in latents.outer_iter() {
        empirical[covering.cell_of(x)] += 1.0 / n as f64;
    }
    let max_deviation = empirical
        .iter()
        .zip(&covering.masses)
        .map(|(e, m)| (e / m - 1.0).abs())
        .fold(0.0, f64::max);
    let threshold = concentration_threshold(n, tau, c, d);
    Ok(EventCheck {
        holds: max_deviation <= threshold,
        max_deviation,
        threshold,
        empirical,
    })
}

/// Writes `cell,reference_mass,empirical_mass,deviation` rows.
pub fn write_covering_csv<W: Write>(covering: &Covering, check: &EventCheck, mut out: W) -> Result<()> {
    writeln!(out, "cell,reference_mass,empirical_mass,deviation")?;
    for (i, (m, e)) in covering.masses.iter().zip(&check.empirical).enumerate() {
        writeln!(out, "{i},{m},{e},{}", (e / m - 1.0).abs())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityEstimate {
    /// `C_χ ≥ 1`
    pub c: f64,
    /// `D_χ > 0`
    pub d: f64,
    /// Per-radius residuals of the log-log fit.
    pub residuals: Vec<f64>,
    /// Minimum ball mass observed at each radius.
    pub min_masses: Vec<f64>,
}

/// Fits `μ(B_{r/2}(x)) ≥ r^D / C` from the smallest ball mass over `centers`,
/// with masses counted on `samples`.
///
/// A fitted `C` below 1 is raised to 1, which keeps the bound valid.
pub fn estimate_regularity_from_samples(
    centers: ArrayView2<f64>,
    samples: ArrayView2<f64>,
    radii: &[f64],
) -> Result<RegularityEstimate> {
    if radii.len() < 2 {
        return Err(Error::invalid("regularity fit needs at least two radii"));
    }
    if radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::invalid("radii must be positive"));
    }
    if centers.nrows() == 0 || samples.nrows() == 0 || centers.ncols() != samples.ncols() {
        return Err(Error::dims("centers and samples must be nonempty with equal dimension"));
    }
    // Sorting on the first coordinate bounds each ball query to a window.
    let mut order: Vec<usize> = (0..samples.nrows()).collect();
    order.sort_by(|&a, &b| samples[[a, 0]].total_cmp(&samples[[b, 0]]));
    let sorted = samples.select(Axis(0), &order);
    let keys: Vec<f64> = sorted.column(0).to_vec();
    let total = samples.nrows() as f64;

    let mut min_masses = Vec::with_capacity(radii.len());
    for &r in radii {
        let h = r / 2.0;
        let mut min_mass = f64::INFINITY;
        for c in centers.outer_iter() {
            let lo = keys.partition_point(|&k| k < c[0] - h);
            let hi = keys.partition_point(|&k| k <= c[0] + h);
            let count = (lo..hi).filter(|&i| sq_dist(sorted.row(i), c) <= h * h).count();
            min_mass = min_mass.min(count as f64 / total);
        }
        if min_mass == 0.0 {
            return Err(Error::Degenerate(format!("a ball of radius {h} has zero sample mass")));
        }
        min_masses.push(min_mass);
    }
    if min_masses.iter().all(|&m| m == 1.0) {
        return Err(Error::Degenerate("every ball holds the whole measure".into()));
    }
    let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let y: Vec<f64> = min_masses.iter().map(|m| m.ln()).collect();
    let fit = ols(&x, &y)?;
    if !(fit.slope > 0.0) {
        return Err(Error::Degenerate(format!("fitted dimension {} is not positive", fit.slope)));
    }
    let residuals = x.iter().zip(&y).map(|(xi, yi)| yi - (fit.intercept + fit.slope * xi)).collect();
    Ok(RegularityEstimate {
        c: (-fit.intercept).exp().max(1.0),
        d: fit.slope,
        residuals,
        min_masses,
    })
}

/// Regularity fit on `probes` draws from `domain`, using the first
/// `min(probes, 2000)` draws as ball centers. Radii above the domain diameter
/// are rejected because the ball bound cannot hold there.
pub fn estimate_regularity<R: Rng + ?Sized>(
    domain: &DomainSpec,
    radii: &[f64],
    probes: usize,
    rng: &mut R,
) -> Result<RegularityEstimate> {
    if probes < 1000 {
        return Err(Error::invalid(format!("regularity fit needs at least 1000 probes, got {probes}")));
    }
    let diameter = domain_diameter(domain);
    if let Some(r) = radii.iter().find(|&&r| r > diameter) {
        return Err(Error::invalid(format!("radius {r} exceeds the domain diameter {diameter}")));
    }
    let (samples, _) = domain.sample_latents(probes, rng)?;
    let centers = samples.slice(ndarray::s![..probes.min(2000), ..]);
    estimate_regularity_from_samples(centers, samples.view(), radii)
}

fn domain_diameter(domain: &DomainSpec) -> f64 {
    match &domain.kind {
        DomainKind::Graphon { .. } => 1.0,
        DomainKind::Surface { mesh, .. } => {
            let v = mesh.vertices();
            let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
            for p in v {
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
            (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
        }
    }
}

/// `max_i ‖Σ_j a_ij v_j − Σ_k a'_ik v'_k‖₂` between uniform attention over the
/// `queries` themselves and over `reference`, with hidden states `h`.
pub fn one_layer_discretization_error_from_samples<H, L, V>(
    queries: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    h: H,
    logit: L,
    value: V,
) -> Result<f64>
where
    H: Fn(ArrayView1<f64>) -> Array1<f64>,
    L: Fn(ArrayView1<f64>, ArrayView1<f64>) -> f64,
    V: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    let (n, big) = (queries.nrows(), reference.nrows());
    if big < n {
        return Err(Error::invalid(format!("reference size {big} is below sample size {n}")));
    }
    let states = |x: ArrayView2<f64>| -> Vec<Array1<f64>> { x.outer_iter().map(&h).collect() };
    let (hq, hr) = (states(queries), states(reference));
    let values = |hs: &[Array1<f64>]| -> Result<Array2<f64>> {
        let rows: Vec<Array1<f64>> = hs.iter().map(|s| value(s.view())).collect();
        let d = rows.first().map_or(0, |r| r.len());
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Array2::from_shape_vec((rows.len(), d), flat).map_err(|_| Error::dims("value map changes dimension"))
    };
    let logits = |keys: &[Array1<f64>]| Array2::from_shape_fn((n, keys.len()), |(i, j)| logit(hq[i].view(), keys[j].view()));
    let uniform = |m: usize| Array1::from_elem(m, 1.0 / m as f64);
    let discrete = one_layer_aggregate(&logits(&hq), &values(&hq)?, &uniform(n))?;
    let continuous = one_layer_aggregate(&logits(&hr), &values(&hr)?, &uniform(big))?;
    Ok((&discrete - &continuous)
        .outer_iter()
        .map(|row| row.dot(&row).sqrt())
        .fold(0.0, f64::max))
}

/// [`one_layer_discretization_error_from_samples`] with `n` i.i.d. queries and a
/// reference of `reference_size` points. Graphon references are stratified
/// (one uniform draw per interval of width `1/N`), which keeps the reference
/// quadrature error well below the `n`-sample error.
#[allow(clippy::too_many_arguments)]
pub fn one_layer_discretization_error<H, L, V, R>(
    domain: &DomainSpec,
    h: H,
    logit: L,
    value: V,
    n: usize,
    reference_size: usize,
    rng: &mut R,
) -> Result<f64>
where
    H: Fn(ArrayView1<f64>) -> Array1<f64>,
    L: Fn(ArrayView1<f64>, ArrayView1<f64>) -> f64,
    V: Fn(ArrayView1<f64>) -> Array1<f64>,
    R: Rng + ?Sized,
{
    if reference_size < n {
        return Err(Error::invalid(format!("reference size {reference_size} is below sample size {n}")));
    }
    let (queries, _) = domain.sample_latents(n, rng)?;
    let reference = match domain.kind {
        DomainKind::Graphon { .. } => Array2::from_shape_fn((reference_size, 1), |(k, _)| {
            (k as f64 + rng.random::<f64>()) / reference_size as f64
        }),
        DomainKind::Surface { .. } => domain.sample_latents(reference_size, rng)?.0,
    };
    one_layer_discretization_error_from_samples(queries.view(), reference.view(), h, logit, value)
}

/// Ordinary least squares `y ≈ intercept + slope · x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::invalid("least squares needs at least two paired points"));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("least squares needs two distinct x values".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n as f64 - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LineFit {
        slope,
        intercept,
        stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FeatureRule, GraphonKernel};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_interval() -> DomainSpec {
        DomainSpec::graphon(GraphonKernel::Constant { c: 0.5 }, 1.0, FeatureRule::LinearPair).unwrap()
    }

    fn grid(m: usize) -> Array2<f64> {
        Array2::from_shape_fn((m + 1, 1), |(i, _)| i as f64 / m as f64)
    }

    #[test]
    fn grid_packing() {
        let cov = build_covering_from_probes(grid(1000).view(), 0.25).unwrap();
        assert_eq!(cov.centers.column(0).to_vec(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!((cov.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(cov.max_cell_diameter(grid(1000).view()) <= 2.0 * 0.25);
    }

    #[test]
    fn huge_radius_gives_one_cell() {
        let cov = build_covering_from_probes(grid(100).view(), 5.0).unwrap();
        assert_eq!(cov.len(), 1);
        assert!((cov.masses[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covering_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(build_covering(&unit_interval(), 0.1, 0, &mut rng).is_err());
        assert!(build_covering(&unit_interval(), 0.0, 10, &mut rng).is_err());
    }

    #[test]
    fn ties_go_to_lowest_center() {
        let cov = Covering {
            centers: array![[0.0], [1.0]],
            radius: 1.0,
            masses: vec![0.5, 0.5],
            assignment: vec![],
        };
        assert_eq!(cov.cell_of(array![0.5].view()), 0);
    }

    #[test]
    fn event_check_examples() {
        let cov = Covering {
            centers: array![[0.25], [0.75]],
            radius: 0.5,
            masses: vec![0.5, 0.5],
            assignment: vec![],
        };
        let even = concentration_event_check(array![[0.1], [0.2], [0.6], [0.9]].view(), &cov, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(even.max_deviation, 0.0);
        assert!(even.holds);
        let lopsided = concentration_event_check(array![[0.1], [0.2]].view(), &cov, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(lopsided.max_deviation, 1.0);
        let empty = Covering { masses: vec![1.0, 0.0], ..cov };
        assert!(concentration_event_check(array![[0.1]].view(), &empty, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn bound_formula() {
        let b = lemma_failure_bound(1000, 4.0, 2.0);
        let expect = 4000.0 * ((-4.0f64).exp() + (-(2.0f64).sqrt()).exp());
        assert!((b - expect).abs() < 1e-9);
        assert!((concentration_threshold(1000, 4.0, 4.0, 1.0) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn failure_frequency_is_monotone_in_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dom = unit_interval();
        let n = 500;
        let cov = build_covering(&dom, (n as f64).powf(-1.0 / 3.0), 20_000, &mut rng).unwrap();
        let taus = [0.25, 0.5, 1.0, 2.0, 4.0];
        let mut failures = [0usize; 5];
        for _ in 0..100 {
            let (x, _) = dom.sample_latents(n, &mut rng).unwrap();
            for (k, &tau) in taus.iter().enumerate() {
                if !concentration_event_check(x.view(), &cov, tau, 2.0, 1.0).unwrap().holds {
                    failures[k] += 1;
                }
            }
        }
        assert!(failures.windows(2).all(|w| w[0] >= w[1]), "{failures:?}");
        assert!(failures[0] > 0);
    }

    #[test]
    fn interval_regularity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let radii = [0.05, 0.1, 0.2, 0.4];
        let est = estimate_regularity(&unit_interval(), &radii, 100_000, &mut rng).unwrap();
        assert!((est.d - 1.0).abs() <= 0.1, "{est:?}");
        assert!((1.8..=2.5).contains(&est.c), "{est:?}");

        // Cell count obeys the covering lemma for the fitted constants.
        let r = 0.1;
        let cov = build_covering(&unit_interval(), r, 20_000, &mut rng).unwrap();
        assert!((cov.len() as f64) <= est.c * r.powf(-est.d));
    }

    #[test]
    fn sphere_regularity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let radii = [0.2, 0.4, 0.8, 1.6];
        let est = estimate_regularity(&DomainSpec::sphere(1.0), &radii, 40_000, &mut rng).unwrap();
        assert!((est.d - 2.0).abs() <= 0.2, "{est:?}");
    }

    #[test]
    fn single_point_is_degenerate() {
        let pts = Array2::zeros((1000, 1));
        let err = estimate_regularity_from_samples(pts.view(), pts.view(), &[0.1, 0.2]).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn regularity_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(estimate_regularity(&unit_interval(), &[0.1, 0.2], 999, &mut rng).is_err());
        assert!(estimate_regularity(&unit_interval(), &[0.1, 2.0], 1000, &mut rng).is_err());
        assert!(estimate_regularity(&unit_interval(), &[0.0, 0.2], 1000, &mut rng).is_err());
    }

    fn identity(x: ArrayView1<f64>) -> Array1<f64> {
        x.to_owned()
    }

    fn bilinear(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        2.0 * a.dot(&b)
    }

    #[test]
    fn discretization_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dom = unit_interval();
        let constant = |_: ArrayView1<f64>| array![0.7];
        let e = one_layer_discretization_error(&dom, constant, bilinear, identity, 50, 500, &mut rng).unwrap();
        assert!(e < 1e-14);
        let (x, _) = dom.sample_latents(40, &mut rng).unwrap();
        let e = one_layer_discretization_error_from_samples(x.view(), x.view(), identity, bilinear, identity).unwrap();
        assert_eq!(e, 0.0);
        assert!(one_layer_discretization_error(&dom, identity, bilinear, identity, 50, 10, &mut rng).is_err());
    }

    #[test]
    fn discretization_error_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dom = unit_interval();
        let median = |n: usize, rng: &mut ChaCha8Rng| {
            let mut v: Vec<f64> = (0..15)
                .map(|_| one_layer_discretization_error(&dom, identity, bilinear, identity, n, 8000, rng).unwrap())
                .collect();
            v.sort_by(f64::total_cmp);
            v[7]
        };
        let (a, b, c) = (median(100, &mut rng), median(400, &mut rng), median(1600, &mut rng));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn ols_exact_line() {
        let x: Vec<f64> = (1..6).map(|k| (k as f64 * 100.0).ln()).collect();
        let y: Vec<f64> = x.iter().map(|v| -0.5 * v + 0.3).collect();
        let fit = ols(&x, &y).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12 && fit.stderr < 1e-12);
        let two = ols(&x[..2], &y[..2]).unwrap();
        assert_eq!(two.stderr, 0.0);
        assert!(ols(&[1.0, 1.0], &[2.0, 3.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn packing_invariants(seed in any::<u64>(), r in 0.02f64..0.6, dim in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let probes = Array2::from_shape_fn((400, dim), |_| rng.random::<f64>());
            let cov = build_covering_from_probes(probes.view(), r).unwrap();
            for i in 0..cov.len() {
                for j in (i + 1)..cov.len() {
                    let d = sq_dist(cov.centers.row(i), cov.centers.row(j)).sqrt();
                    prop_assert!(d >= r * (1.0 - 1e-9));
                }
            }
            // Maximality: every probe lies within r of some center.
            for (p, &c) in probes.outer_iter().zip(&cov.assignment) {
                prop_assert!(sq_dist(p, cov.centers.row(c)).sqrt() < r);
            }
            prop_assert!(cov.max_cell_diameter(probes.view()) <= 2.0 * r);
            prop_assert!((cov.masses.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
