//! Multi-signal Matrix Pencil engine.
//!
//! Hankel construction, rank-p truncation, generalized-eigenvalue mode
//! extraction, Vandermonde residue solve, reconstruction diagnostics and
//! model-order selection. Conventions:
//!
//! * modes are `Z_k = exp(lambda_k T_s)` with `lambda_k = sigma_k + j omega_k`;
//! * the generalized eigenvalues of `(H^(2), H^(1))` are computed as the
//!   nonzero eigenvalues of `pinv_p(H^(1)) H^(2)` with the rank-p
//!   pseudoinverse taken from the truncation SVD;
//! * `ln(Z)/T_s` uses the principal branch, so omega lives in `[0, pi/T_s)`
//!   after conjugate pairing.

use crate::core::{EventRecord, ModalDecomposition, Mode, ResiduePolar};
use crate::error::{Error, Result};
use crate::preprocess::detrend_event;
use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

type C64 = Complex<f64>;

/// Eigenvalues below this magnitude are treated as numerically zero.
const EIGENVALUE_FLOOR: f64 = 1e-8;
/// Relative tolerance for pairing Z with a conjugate partner.
const CONJUGATE_PAIR_TOL: f64 = 1e-6;
/// Streams with l2 norm below this are degenerate (excluded from sorting).
const STREAM_NORM_FLOOR: f64 = 1e-12;
/// Pencil eigenvalues closer than this (in the Z plane) collapse to one
/// pole before the residue solve; see [`merge_coincident_poles`].
const POLE_MERGE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PencilConfig {
    /// Number of retained singular values / modes p.
    pub order_p: usize,
    /// Pencil parameter L; `None` resolves to N/2.
    pub pencil_l: Option<usize>,
    /// E_p / E_i threshold used for model-order selection.
    pub error_threshold: f64,
    /// Upper bound for the model-order search.
    pub p_max: usize,
}

impl Default for PencilConfig {
    fn default() -> Self {
        PencilConfig {
            order_p: 6,
            pencil_l: None,
            error_threshold: 0.01,
            p_max: 20,
        }
    }
}

impl PencilConfig {
    /// Resolves L for a window of N samples and checks `p < L < N - p`.
    pub fn resolve_l(&self, n: usize) -> Result<usize> {
        let l = self.pencil_l.unwrap_or(n / 2);
        if self.order_p >= l || l + self.order_p >= n {
            return Err(Error::invalid(format!(
                "pencil parameter L={l} violates p < L < N - p for p={}, N={n}",
                self.order_p
            )));
        }
        Ok(l)
    }

    pub fn with_order(mut self, p: usize) -> Self {
        self.order_p = p;
        self
    }
}

/// Per-channel diagnostics emitted alongside a decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PencilDiagnostics {
    pub singular_values: Vec<f64>,
    /// E_p for p = 1..=p_max (capped at the number of singular values).
    pub e_p_curve: Vec<f64>,
    pub per_stream_e_i: Vec<f64>,
}

/// Hankel matrix of one stream: entry (r, c) = samples[r + c],
/// shape (N-L) x (L+1).
pub fn hankel_single(samples: &[f64], l: usize) -> Result<DMatrix<f64>> {
    let n = samples.len();
    if l < 1 || l + 2 > n {
        return Err(Error::invalid(format!(
            "pencil parameter L={l} out of range for N={n} (need 1 <= L <= N-2)"
        )));
    }
    Ok(DMatrix::from_fn(n - l, l + 1, |r, c| samples[r + c]))
}

/// Vertically stacked Hankel matrices of m streams, shape m(N-L) x (L+1).
pub fn hankel_stacked(streams: &[Vec<f64>], l: usize) -> Result<DMatrix<f64>> {
    let first = streams
        .first()
        .ok_or_else(|| Error::invalid("hankel_stacked needs at least one stream"))?;
    let n = first.len();
    if streams.iter().any(|s| s.len() != n) {
        return Err(Error::invalid("hankel_stacked: ragged stream lengths"));
    }
    let block_rows = n.checked_sub(l).filter(|&r| r >= 2).ok_or_else(|| {
        Error::invalid(format!("pencil parameter L={l} out of range for N={n}"))
    })?;
    let mut h = DMatrix::zeros(streams.len() * block_rows, l + 1);
    for (i, stream) in streams.iter().enumerate() {
        h.view_mut((i * block_rows, 0), (block_rows, l + 1))
            .copy_from(&hankel_single(stream, l)?);
    }
    Ok(h)
}

/// Singular values (descending) and the matching right singular vectors of
/// a real matrix, from the symmetric eigendecomposition of the smaller Gram
/// matrix. nalgebra's iterative SVD silently misconverges on degenerate
/// Hankel matrices (a constant signal yields a factorization with ~60%
/// reconstruction error); the Gram route is exact there and cheaper for the
/// tall stacked Hankel matrices used here.
///
/// Returns (singular values, V) with V of shape ncols x min(nrows, ncols).
/// For a wide matrix, right singular vectors of near-zero singular values
/// (below sqrt(eps) relative) are left as zero columns.
pub(crate) fn gram_svd(h: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (r, c) = h.shape();
    let min_dim = r.min(c);
    let wide = r < c;
    let eig = if wide {
        (h * h.transpose()).symmetric_eigen()
    } else {
        (h.transpose() * h).symmetric_eigen()
    };
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(Ordering::Equal)
    });
    let mut svals = Vec::with_capacity(min_dim);
    let mut v = DMatrix::zeros(c, min_dim);
    // Gram eigenvalues carry twice the rounding error of singular values;
    // anything below the rank tolerance is numerically zero.
    let eig_floor = eig.eigenvalues[order[0]].max(0.0) * r.max(c) as f64 * f64::EPSILON;
    for (k, &idx) in order.iter().take(min_dim).enumerate() {
        let e = eig.eigenvalues[idx];
        let s = if e > eig_floor { e.sqrt() } else { 0.0 };
        svals.push(s);
        if !wide {
            v.set_column(k, &eig.eigenvectors.column(idx));
        } else if s > 0.0 {
            let mut col = h.transpose() * eig.eigenvectors.column(idx);
            col /= col.norm();
            v.set_column(k, &col);
        }
    }
    (svals, v)
}

fn e_p_from_singular_values(svals: &[f64], p: usize) -> f64 {
    let total: f64 = svals.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let tail: f64 = svals.iter().skip(p).map(|s| s * s).sum();
    (tail / total).sqrt()
}

/// E_p for p = 1..=p_max (entries beyond the singular-value count stay 0).
pub fn e_p_curve(svals: &[f64], p_max: usize) -> Vec<f64> {
    (1..=p_max).map(|p| e_p_from_singular_values(svals, p)).collect()
}

/// Best rank-p approximation via SVD, with the Frobenius-relative error E_p
/// and the full descending singular-value spectrum.
pub fn rank_p_truncate(h: &DMatrix<f64>, p: usize) -> Result<(DMatrix<f64>, f64, Vec<f64>)> {
    let min_dim = h.nrows().min(h.ncols());
    if p < 1 || p > min_dim {
        return Err(Error::invalid(format!(
            "rank p={p} out of range for {}x{} matrix",
            h.nrows(),
            h.ncols()
        )));
    }
    let (svals, v) = gram_svd(h);
    let total: f64 = svals.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        // Degenerate zero matrix: E_p defined as 0, truncation is identity.
        return Ok((h.clone(), 0.0, svals));
    }
    // H_p = U_p S_p V_p^T = (H V_p S_p^{-1}) S_p V_p^T = H V_p V_p^T.
    let v_p = v.columns(0, p);
    let h_p = h * (v_p * v_p.transpose());
    Ok((h_p, e_p_from_singular_values(&svals, p), svals))
}

fn sort_eigs_desc(eigs: &mut [C64]) {
    eigs.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap_or(Ordering::Equal)
            .then_with(|| b.re.partial_cmp(&a.re).unwrap_or(Ordering::Equal))
            .then_with(|| b.im.partial_cmp(&a.im).unwrap_or(Ordering::Equal))
    });
}

/// Mode eigenvalues from the first p right singular vectors of the rank-p
/// Hankel approximation. `v_p` is (L+1) x p with orthonormal columns.
///
/// With `H_p = U S V_p^T`, the nonzero eigenvalues of `pinv(H1) H2` reduce
/// to those of the p x p matrix `(V2^T V1)(V1^T V1)^{-1}`, where V1 and V2
/// drop the last and first row of V_p respectively.
fn pencil_eigenvalues_from_v(v_p: &DMatrix<f64>) -> Result<Vec<C64>> {
    let rows = v_p.nrows();
    let p = v_p.ncols();
    let v1 = v_p.rows(0, rows - 1);
    let v2 = v_p.rows(1, rows - 1);
    let gram = (v1.transpose() * v1)
        .try_inverse()
        .ok_or_else(|| Error::numerical("pencil: V1^T V1 is singular"))?;
    let m = (v2.transpose() * v1) * gram;
    let mut eigs: Vec<C64> = m.complex_eigenvalues().iter().copied().collect();
    eigs.retain(|z| z.norm() > EIGENVALUE_FLOOR);
    sort_eigs_desc(&mut eigs);
    if eigs.len() < p {
        return Err(Error::numerical(format!(
            "under-determined signal: only {} of {p} eigenvalues above {EIGENVALUE_FLOOR}",
            eigs.len()
        )));
    }
    Ok(eigs)
}

/// The p generalized eigenvalues Z_k of the pencil (H^(2), H^(1)) built from
/// a rank-p Hankel approximation, largest magnitude first.
pub fn pencil_eigenvalues(h_p: &DMatrix<f64>, p: usize) -> Result<Vec<C64>> {
    if h_p.ncols() < p + 1 {
        return Err(Error::invalid(format!(
            "pencil needs at least p+1 = {} columns, got {}",
            p + 1,
            h_p.ncols()
        )));
    }
    if p < 1 || p > h_p.nrows().min(h_p.ncols()) {
        return Err(Error::invalid(format!("invalid pencil order p={p}")));
    }
    let (svals, v) = gram_svd(h_p);
    if svals[0] <= 0.0 {
        return Err(Error::numerical("pencil: zero matrix"));
    }
    let v_p = v.columns(0, p).clone_owned();
    let mut eigs = pencil_eigenvalues_from_v(&v_p)?;
    eigs.truncate(p);
    Ok(eigs)
}

/// Collapses numerically coincident pencil eigenvalues into their cluster
/// centroid. Near-duplicate poles make the Vandermonde residue solve
/// ill-conditioned: the solver spends a huge canceling residue pair on
/// them (typically when approximating a residual ramp with two real poles
/// split by ~1e-4), which then corrupts residue-magnitude mode ranking.
/// Distinct physical modes sit far apart in the Z plane, so the tight
/// tolerance never touches them. Centroids of self-conjugate clusters are
/// realified to keep the pole set conjugate-symmetric.
pub fn merge_coincident_poles(z: &[C64], tol: f64) -> Vec<C64> {
    let mut clusters: Vec<Vec<C64>> = Vec::new();
    for &zi in z {
        match clusters
            .iter_mut()
            .find(|c| c.iter().any(|&zj| (zi - zj).norm() <= tol))
        {
            Some(cluster) => cluster.push(zi),
            None => clusters.push(vec![zi]),
        }
    }
    clusters
        .iter()
        .map(|c| {
            let mut sum = C64::new(0.0, 0.0);
            for &zj in c {
                sum += zj;
            }
            let mut centroid = sum / c.len() as f64;
            if c.len() > 1 && centroid.im.abs() <= tol {
                centroid.im = 0.0;
            }
            centroid
        })
        .collect()
}

/// Least-squares residues of every stream against the Vandermonde system of
/// the modes Z, returned as an m x p complex matrix.
pub fn solve_residues(streams: &[Vec<f64>], z: &[C64]) -> Result<DMatrix<C64>> {
    if z.is_empty() {
        return Err(Error::invalid("solve_residues: empty mode set"));
    }
    for a in 0..z.len() {
        for b in (a + 1)..z.len() {
            if (z[a] - z[b]).norm() <= 1e-10 {
                return Err(Error::numerical(format!(
                    "duplicate modes Z[{a}] and Z[{b}] make the Vandermonde system ill-conditioned"
                )));
            }
        }
    }
    let first = streams
        .first()
        .ok_or_else(|| Error::invalid("solve_residues: no streams"))?;
    let n = first.len();
    let p = z.len();
    // Vandermonde V_Z(N)^T: row n holds Z_k^n.
    let mut vand = DMatrix::<C64>::zeros(n, p);
    for (k, &zk) in z.iter().enumerate() {
        let mut pow = C64::new(1.0, 0.0);
        for row in 0..n {
            vand[(row, k)] = pow;
            pow *= zk;
        }
    }
    let mut rhs = DMatrix::<C64>::zeros(n, streams.len());
    for (i, stream) in streams.iter().enumerate() {
        if stream.len() != n {
            return Err(Error::invalid("solve_residues: ragged stream lengths"));
        }
        for (row, &v) in stream.iter().enumerate() {
            rhs[(row, i)] = C64::new(v, 0.0);
        }
    }
    let svd = vand.svd(true, true);
    let solution = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::numerical(format!("residue least-squares solve failed: {e}")))?;
    Ok(solution.transpose())
}

/// Noise-free synthesis: y_i(n) = Re{ sum_k R_k^(i) Z_k^n }.
pub fn reconstruct(z: &[C64], residues: &DMatrix<C64>, n: usize) -> Vec<Vec<f64>> {
    let m = residues.nrows();
    let mut out = vec![vec![0.0; n]; m];
    for (k, &zk) in z.iter().enumerate() {
        let mut pow = C64::new(1.0, 0.0);
        for t in 0..n {
            for (i, row) in out.iter_mut().enumerate() {
                row[t] += (residues[(i, k)] * pow).re;
            }
            pow *= zk;
        }
    }
    out
}

/// Per-stream relative l2 errors E_i, with the indices of degenerate
/// (near-zero-norm) streams reported separately. Degenerate streams get 0.
pub fn reconstruction_errors(
    original: &[Vec<f64>],
    reconstructed: &[Vec<f64>],
) -> (Vec<f64>, Vec<usize>) {
    let mut errors = Vec::with_capacity(original.len());
    let mut degenerate = Vec::new();
    for (i, (y, y_hat)) in original.iter().zip(reconstructed.iter()).enumerate() {
        let norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < STREAM_NORM_FLOOR {
            errors.push(0.0);
            degenerate.push(i);
            continue;
        }
        let diff: f64 = y
            .iter()
            .zip(y_hat.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        errors.push(diff / norm);
    }
    (errors, degenerate)
}

fn wrap_angle(a: f64) -> f64 {
    // atan2 gives [-pi, pi]; map the closed lower end onto pi.
    if a <= -std::f64::consts::PI {
        a + 2.0 * std::f64::consts::PI
    } else {
        a
    }
}

/// Descending order by average residue magnitude, ties broken by larger
/// omega, then larger sigma.
pub(crate) fn mode_order(a: &Mode, b: &Mode, excluded: &[usize]) -> Ordering {
    let ra = a.avg_residue_magnitude(excluded);
    let rb = b.avg_residue_magnitude(excluded);
    rb.partial_cmp(&ra)
        .unwrap_or(Ordering::Equal)
        .then_with(|| {
            b.angular_freq_omega
                .partial_cmp(&a.angular_freq_omega)
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| {
            b.damping_sigma
                .partial_cmp(&a.damping_sigma)
                .unwrap_or(Ordering::Equal)
        })
}

/// Collapses conjugate eigenvalue pairs and converts to (sigma, omega) via
/// the principal branch of ln(Z)/T_s. The representative of each pair is the
/// member with omega >= 0.
fn pair_conjugates(z: &[C64], residues: &DMatrix<C64>, ts: f64) -> Vec<Mode> {
    let p = z.len();
    let mut used = vec![false; p];
    let mut modes = Vec::new();
    for a in 0..p {
        if used[a] {
            continue;
        }
        used[a] = true;
        let tol = CONJUGATE_PAIR_TOL * z[a].norm().max(1.0);
        let mut partner = None;
        for b in (a + 1)..p {
            if !used[b] && (z[a] - z[b].conj()).norm() <= tol && z[b].im.abs() > 0.0 {
                partner = Some(b);
                break;
            }
        }
        let rep = match partner {
            Some(b) => {
                used[b] = true;
                if z[a].im >= 0.0 {
                    a
                } else {
                    b
                }
            }
            None => a,
        };
        let zr = z[rep];
        let lambda = zr.ln(); // principal branch
        let (sigma, mut omega) = (lambda.re / ts, lambda.im / ts);
        let mut conj_residues = false;
        if omega < 0.0 {
            // Unpaired eigenvalue with negative argument: represent it by
            // its conjugate so the omega >= 0 convention holds.
            omega = -omega;
            conj_residues = true;
        }
        let res = (0..residues.nrows())
            .map(|i| {
                let r = if conj_residues {
                    residues[(i, rep)].conj()
                } else {
                    residues[(i, rep)]
                };
                ResiduePolar {
                    magnitude: r.norm(),
                    angle: wrap_angle(r.arg()),
                }
            })
            .collect();
        modes.push(Mode {
            damping_sigma: sigma,
            angular_freq_omega: omega,
            residues: res,
        });
    }
    modes
}

fn validate_streams(streams: &[Vec<f64>]) -> Result<usize> {
    let first = streams
        .first()
        .ok_or_else(|| Error::invalid("decompose: no streams"))?;
    let n = first.len();
    if n < 4 {
        return Err(Error::invalid(format!("decompose: N={n} below minimum of 4")));
    }
    if streams.iter().any(|s| s.len() != n) {
        return Err(Error::invalid("decompose: ragged stream lengths"));
    }
    Ok(n)
}

/// Full multi-signal matrix-pencil decomposition of one channel group of
/// detrended streams: stacked Hankel, rank-p truncation, pencil eigenvalues,
/// residues, reconstruction errors and conjugate pairing.
pub fn decompose_channel(
    streams: &[Vec<f64>],
    cfg: &PencilConfig,
    ts: f64,
) -> Result<ModalDecomposition> {
    decompose_channel_with_diagnostics(streams, cfg, ts).map(|(dec, _)| dec)
}

/// As [`decompose_channel`], additionally returning the singular-value
/// spectrum and E_p curve.
pub fn decompose_channel_with_diagnostics(
    streams: &[Vec<f64>],
    cfg: &PencilConfig,
    ts: f64,
) -> Result<(ModalDecomposition, PencilDiagnostics)> {
    let n = validate_streams(streams)?;
    let l = cfg.resolve_l(n)?;
    let p = cfg.order_p;
    let h = hankel_stacked(streams, l)?;
    if p > h.nrows().min(h.ncols()) {
        return Err(Error::invalid(format!(
            "order p={p} exceeds Hankel rank bound {}",
            h.nrows().min(h.ncols())
        )));
    }
    let (svals, v) = gram_svd(&h);
    let diagnostics_curve = e_p_curve(&svals, cfg.p_max.min(svals.len()));
    if svals[0] <= 0.0 {
        // All-zero input: nothing to decompose.
        let (e_i, degenerate) = reconstruction_errors(streams, streams);
        let dec = ModalDecomposition {
            modes: Vec::new(),
            pencil_order_p: p,
            pencil_l: l,
            rank_error_e_p: 0.0,
            reconstruction_errors: e_i.clone(),
            degenerate_streams: degenerate,
            low_confidence: true,
        };
        let diag = PencilDiagnostics {
            singular_values: svals,
            e_p_curve: diagnostics_curve,
            per_stream_e_i: e_i,
        };
        return Ok((dec, diag));
    }
    let e_p = e_p_from_singular_values(&svals, p);
    let v_p = v.columns(0, p).clone_owned();
    let mut z = pencil_eigenvalues_from_v(&v_p)?;
    z.truncate(p);
    let z = merge_coincident_poles(&z, POLE_MERGE_TOL);
    let residues = solve_residues(streams, &z)?;
    let recon = reconstruct(&z, &residues, n);
    let (e_i, degenerate) = reconstruction_errors(streams, &recon);
    let mut modes = pair_conjugates(&z, &residues, ts);
    modes.sort_by(|a, b| mode_order(a, b, &degenerate));
    let dec = ModalDecomposition {
        modes,
        pencil_order_p: p,
        pencil_l: l,
        rank_error_e_p: e_p,
        reconstruction_errors: e_i.clone(),
        degenerate_streams: degenerate,
        low_confidence: e_p > 0.5,
    };
    let diag = PencilDiagnostics {
        singular_values: svals,
        e_p_curve: diagnostics_curve,
        per_stream_e_i: e_i,
    };
    Ok((dec, diag))
}

/// Outcome of the model-order search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOrderSelection {
    pub order_p: usize,
    /// False when no p <= p_max met the threshold and p_max was returned.
    pub within_threshold: bool,
}

/// Smallest p such that E_p and every E_i stay at or below the configured
/// threshold for every event and every present channel. Events are
/// detrended internally (detrending is idempotent).
pub fn select_model_order(
    events: &[EventRecord],
    cfg: &PencilConfig,
) -> Result<ModelOrderSelection> {
    if events.is_empty() {
        return Err(Error::invalid("select_model_order: empty event list"));
    }
    struct Prepared {
        streams: Vec<Vec<f64>>,
        svals: Vec<f64>,
        v: DMatrix<f64>,
        n: usize,
    }
    let mut prepared = Vec::new();
    let mut p_cap = cfg.p_max;
    for event in events {
        let detrended = detrend_event(event)?;
        let ts_l = PencilConfig {
            order_p: 1,
            ..*cfg
        };
        for streams in detrended.channels.values() {
            let n = validate_streams(streams)?;
            let l = ts_l.resolve_l(n)?;
            let h = hankel_stacked(streams, l)?;
            p_cap = p_cap.min(h.nrows().min(h.ncols()) - 1).min(l - 1);
            let (svals, v) = gram_svd(&h);
            prepared.push(Prepared {
                streams: streams.clone(),
                svals,
                v,
                n,
            });
        }
    }
    for p in 1..=p_cap {
        let e_p_ok = prepared
            .iter()
            .all(|pr| e_p_from_singular_values(&pr.svals, p) <= cfg.error_threshold);
        if !e_p_ok {
            continue;
        }
        let e_i_ok = prepared.iter().all(|pr| {
            if pr.svals[0] <= 0.0 {
                return true;
            }
            let v_p = pr.v.columns(0, p).clone_owned();
            let Ok(mut z) = pencil_eigenvalues_from_v(&v_p) else {
                return false;
            };
            z.truncate(p);
            let z = merge_coincident_poles(&z, POLE_MERGE_TOL);
            let Ok(residues) = solve_residues(&pr.streams, &z) else {
                return false;
            };
            let recon = reconstruct(&z, &residues, pr.n);
            let (e_i, _) = reconstruction_errors(&pr.streams, &recon);
            e_i.iter().all(|&e| e <= cfg.error_threshold)
        });
        if e_i_ok {
            return Ok(ModelOrderSelection {
                order_p: p,
                within_threshold: true,
            });
        }
    }
    Ok(ModelOrderSelection {
        order_p: cfg.p_max,
        within_threshold: false,
    })
}
