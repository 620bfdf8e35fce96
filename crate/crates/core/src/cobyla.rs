//! Powell's COBYLA: constrained optimization by linear approximation.
//!
//! Objective and constraints (feasible when `c(x) ≥ 0`) are modelled by
//! linear interpolation on a simplex of `n + 1` points. Each step minimizes
//! the linear merit `f + μ·max(0, -c)` inside a trust radius that shrinks
//! from `rhobeg` to `rhoend`. Constraints are soft: the result may violate
//! them, and the violation is reported.
//!
//! The routines keep Powell's 1-based index layout so they can be checked
//! line by line against his Fortran; index 0 of every array is unused.

use std::ops::{Index, IndexMut};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::OptimizeError;
use crate::trace::{DfoRecord, OptTrace, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CobylaConfig {
    /// Initial trust radius, in the units of `x`.
    pub rhobeg: f64,
    pub rhoend: f64,
    pub max_evals: usize,
}

impl Default for CobylaConfig {
    fn default() -> Self {
        CobylaConfig {
            rhobeg: 1.0,
            rhoend: 1e-6,
            max_evals: 10_000,
        }
    }
}

impl CobylaConfig {
    pub fn validate(&self, n: usize) -> Result<(), OptimizeError> {
        if !(self.rhoend > 0.0 && self.rhobeg > self.rhoend && self.rhobeg.is_finite()) {
            return Err(OptimizeError::Config(format!(
                "need rhobeg > rhoend > 0, got rhobeg={} rhoend={}",
                self.rhobeg, self.rhoend
            )));
        }
        if self.max_evals < n + 2 {
            return Err(OptimizeError::Config(format!(
                "max_evals must be at least n + 2 = {}",
                n + 2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CobylaResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub max_violation: f64,
    pub n_evals: usize,
    pub final_rho: f64,
    /// Final penalty parameter of the merit function.
    pub penalty: f64,
    pub termination: Termination,
    pub trace: OptTrace,
}

/// Column-major matrix addressed from 1.
#[derive(Debug, Clone)]
struct Mat {
    ld: usize,
    data: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            ld: rows + 1,
            data: vec![0.0; (rows + 1) * (cols + 1)],
        }
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[j * self.ld + i]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[j * self.ld + i]
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Evaluate,
    Pivot,
    Trial,
    Judge,
    Shrink,
}

/// Minimizes `calcfc(x, con)` where `calcfc` returns the objective and
/// writes the `m` constraint values into `con`.
pub fn minimize_cobyla<F>(
    mut calcfc: F,
    m: usize,
    x0: &[f64],
    cfg: &CobylaConfig,
) -> Result<CobylaResult, OptimizeError>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Err(OptimizeError::Config("empty starting point".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(OptimizeError::Config("starting point is not finite".into()));
    }
    cfg.validate(n)?;

    const ALPHA: f64 = 0.25;
    const BETA: f64 = 2.1;
    const GAMMA: f64 = 0.5;
    const DELTA: f64 = 1.1;

    let start = Instant::now();
    let np = n + 1;
    let mp = m + 1;
    let mpp = m + 2;

    let mut x = vec![0.0; n + 1];
    x[1..].copy_from_slice(x0);
    let mut con = vec![0.0; mpp + 1];
    let mut cbuf = vec![0.0; m];
    let mut sim = Mat::zeros(n, np);
    let mut simi = Mat::zeros(n, n);
    let mut datmat = Mat::zeros(mpp, np);
    let mut a = Mat::zeros(n, mp);
    let mut vsig = vec![0.0; n + 1];
    let mut veta = vec![0.0; n + 1];
    let mut sigbar = vec![0.0; n + 1];
    let mut dx = vec![0.0; n + 1];
    let mut w = vec![0.0; n + 1];

    let mut rho = cfg.rhobeg;
    let mut parmu = 0.0f64;
    let mut nfvals = 0usize;
    for i in 1..=n {
        sim[(i, np)] = x[i];
        sim[(i, i)] = rho;
        simi[(i, i)] = 1.0 / rho;
    }
    let mut jdrop = np;
    let mut ibrnch = false;
    let mut iflag = false;
    let (mut f, mut resmax) = (0.0f64, 0.0f64);
    let (mut parsig, mut prerec, mut prerem) = (0.0f64, 0.0f64, 0.0f64);
    let mut records: Vec<DfoRecord> = Vec::new();
    let termination;
    // Passes without a function evaluation; a guard against cycling.
    let mut idle = 0usize;
    let mut last_ifull = false;
    let idle_limit = 1000 + 100 * n;

    let mut stage = Stage::Evaluate;
    loop {
        if idle > idle_limit {
            termination = Termination::Stalled;
            break;
        }
        match stage {
            Stage::Evaluate => {
                if nfvals >= cfg.max_evals {
                    termination = Termination::BudgetExhausted;
                    break;
                }
                nfvals += 1;
                idle = 0;
                f = calcfc(&x[1..], &mut cbuf);
                con[1..=m].copy_from_slice(&cbuf);
                resmax = 0.0;
                for k in 1..=m {
                    resmax = resmax.max(-con[k]);
                }
                let finite = f.is_finite() && cbuf.iter().all(|c| c.is_finite());
                records.push(DfoRecord {
                    eval_index: nfvals,
                    x: x[1..].to_vec(),
                    rho,
                    merit: f + parmu * resmax,
                    objective: f,
                    max_violation: resmax,
                    wall_time_s: start.elapsed().as_secs_f64(),
                });
                if !finite {
                    termination = Termination::NonFinite;
                    break;
                }
                con[mp] = f;
                con[mpp] = resmax;
                if ibrnch {
                    stage = Stage::Judge;
                    continue;
                }
                for k in 1..=mpp {
                    datmat[(k, jdrop)] = con[k];
                }
                if nfvals > np {
                    ibrnch = true;
                    stage = Stage::Pivot;
                    continue;
                }
                // Build the initial simplex, keeping the best vertex in pole position.
                if jdrop <= n {
                    if datmat[(mp, np)] <= f {
                        x[jdrop] = sim[(jdrop, np)];
                    } else {
                        sim[(jdrop, np)] = x[jdrop];
                        for k in 1..=mpp {
                            datmat[(k, jdrop)] = datmat[(k, np)];
                            datmat[(k, np)] = con[k];
                        }
                        for k in 1..=jdrop {
                            sim[(jdrop, k)] = -rho;
                            let mut temp = 0.0;
                            for i in k..=jdrop {
                                temp -= simi[(i, k)];
                            }
                            simi[(jdrop, k)] = temp;
                        }
                    }
                }
                if nfvals <= n {
                    jdrop = nfvals;
                    x[jdrop] += rho;
                    continue;
                }
                ibrnch = true;
                stage = Stage::Pivot;
            }

            Stage::Pivot => {
                idle += 1;
                // Move the vertex with the least merit to pole position.
                let mut phimin = datmat[(mp, np)] + parmu * datmat[(mpp, np)];
                let mut nbest = np;
                for j in 1..=n {
                    let temp = datmat[(mp, j)] + parmu * datmat[(mpp, j)];
                    if temp < phimin {
                        nbest = j;
                        phimin = temp;
                    } else if temp == phimin && parmu == 0.0 && datmat[(mpp, j)] < datmat[(mpp, nbest)] {
                        nbest = j;
                    }
                }
                if nbest <= n {
                    for i in 1..=mpp {
                        let temp = datmat[(i, np)];
                        datmat[(i, np)] = datmat[(i, nbest)];
                        datmat[(i, nbest)] = temp;
                    }
                    for i in 1..=n {
                        let temp = sim[(i, nbest)];
                        sim[(i, nbest)] = 0.0;
                        sim[(i, np)] += temp;
                        let mut tempa = 0.0;
                        for k in 1..=n {
                            sim[(i, k)] -= temp;
                            tempa -= simi[(k, i)];
                        }
                        simi[(nbest, i)] = tempa;
                    }
                }

                let mut error = 0.0f64;
                for i in 1..=n {
                    for j in 1..=n {
                        let mut temp = if i == j { -1.0 } else { 0.0 };
                        for k in 1..=n {
                            temp += simi[(i, k)] * sim[(k, j)];
                        }
                        error = error.max(temp.abs());
                    }
                }
                if !(error <= 0.1) {
                    termination = Termination::RoundingErrors;
                    break;
                }

                // Linear models; column mp holds minus the objective gradient.
                for k in 1..=mp {
                    con[k] = -datmat[(k, np)];
                    for j in 1..=n {
                        w[j] = datmat[(k, j)] + con[k];
                    }
                    for i in 1..=n {
                        let mut temp = 0.0;
                        for j in 1..=n {
                            temp += w[j] * simi[(j, i)];
                        }
                        if k == mp {
                            temp = -temp;
                        }
                        a[(i, k)] = temp;
                    }
                }

                iflag = true;
                parsig = ALPHA * rho;
                let pareta = BETA * rho;
                for j in 1..=n {
                    let mut wsig = 0.0;
                    let mut weta = 0.0;
                    for i in 1..=n {
                        wsig += simi[(j, i)] * simi[(j, i)];
                        weta += sim[(i, j)] * sim[(i, j)];
                    }
                    vsig[j] = 1.0 / wsig.sqrt();
                    veta[j] = weta.sqrt();
                    if vsig[j] < parsig || veta[j] > pareta {
                        iflag = false;
                    }
                }
                if ibrnch || iflag {
                    stage = Stage::Trial;
                    continue;
                }

                // Geometry step: replace the vertex that spoils the simplex.
                jdrop = 0;
                let mut temp = pareta;
                for j in 1..=n {
                    if veta[j] > temp {
                        jdrop = j;
                        temp = veta[j];
                    }
                }
                if jdrop == 0 {
                    for j in 1..=n {
                        if vsig[j] < temp {
                            jdrop = j;
                            temp = vsig[j];
                        }
                    }
                }
                let temp = GAMMA * rho * vsig[jdrop];
                for i in 1..=n {
                    dx[i] = temp * simi[(jdrop, i)];
                }
                let (mut cvmaxp, mut cvmaxm) = (0.0f64, 0.0f64);
                let mut sum = 0.0;
                for k in 1..=mp {
                    sum = 0.0;
                    for i in 1..=n {
                        sum += a[(i, k)] * dx[i];
                    }
                    if k < mp {
                        let temp = datmat[(k, np)];
                        cvmaxp = cvmaxp.max(-sum - temp);
                        cvmaxm = cvmaxm.max(sum - temp);
                    }
                }
                let dxsign = if parmu * (cvmaxp - cvmaxm) > sum + sum {
                    -1.0
                } else {
                    1.0
                };
                let mut temp = 0.0;
                for i in 1..=n {
                    dx[i] *= dxsign;
                    sim[(i, jdrop)] = dx[i];
                    temp += simi[(jdrop, i)] * dx[i];
                }
                replace_vertex(&mut simi, &dx, jdrop, temp, n);
                for j in 1..=n {
                    x[j] = sim[(j, np)] + dx[j];
                }
                stage = Stage::Evaluate;
            }

            Stage::Trial => {
                idle += 1;
                let ifull = trstlp(n, m, &a, &con, rho, &mut dx);
                last_ifull = ifull;
                if !ifull {
                    let len2: f64 = (1..=n).map(|i| dx[i] * dx[i]).sum();
                    if len2 < 0.25 * rho * rho {
                        ibrnch = true;
                        stage = Stage::Shrink;
                        continue;
                    }
                }
                // Predicted change in the objective and the new violation.
                let mut resnew = 0.0f64;
                con[mp] = 0.0;
                let mut sum = 0.0;
                for k in 1..=mp {
                    sum = con[k];
                    for i in 1..=n {
                        sum -= a[(i, k)] * dx[i];
                    }
                    if k < mp {
                        resnew = resnew.max(sum);
                    }
                }
                let mut barmu = 0.0;
                prerec = datmat[(mpp, np)] - resnew;
                if prerec > 0.0 {
                    barmu = sum / prerec;
                }
                if parmu < 1.5 * barmu {
                    parmu = 2.0 * barmu;
                    let phi = datmat[(mp, np)] + parmu * datmat[(mpp, np)];
                    let mut repivot = false;
                    for j in 1..=n {
                        let temp = datmat[(mp, j)] + parmu * datmat[(mpp, j)];
                        if temp < phi || (temp == phi && parmu == 0.0 && datmat[(mpp, j)] < datmat[(mpp, np)]) {
                            repivot = true;
                            break;
                        }
                    }
                    if repivot {
                        stage = Stage::Pivot;
                        continue;
                    }
                }
                prerem = parmu * prerec - sum;
                for i in 1..=n {
                    x[i] = sim[(i, np)] + dx[i];
                }
                ibrnch = true;
                stage = Stage::Evaluate;
            }

            Stage::Judge => {
                let vmold = datmat[(mp, np)] + parmu * datmat[(mpp, np)];
                let vmnew = f + parmu * resmax;
                let mut trured = vmold - vmnew;
                if parmu == 0.0 && f == datmat[(mp, np)] {
                    prerem = prerec;
                    trured = datmat[(mpp, np)] - resmax;
                }
                let mut ratio = if trured <= 0.0 { 1.0 } else { 0.0 };
                jdrop = 0;
                for j in 1..=n {
                    let mut temp = 0.0;
                    for i in 1..=n {
                        temp += simi[(j, i)] * dx[i];
                    }
                    let temp = temp.abs();
                    if temp > ratio {
                        jdrop = j;
                        ratio = temp;
                    }
                    sigbar[j] = temp * vsig[j];
                }
                let mut edgmax = DELTA * rho;
                let mut l = 0;
                for j in 1..=n {
                    if sigbar[j] >= parsig || sigbar[j] >= vsig[j] {
                        let mut temp = veta[j];
                        if trured > 0.0 {
                            temp = (1..=n).map(|i| (dx[i] - sim[(i, j)]).powi(2)).sum::<f64>().sqrt();
                        }
                        if temp > edgmax {
                            l = j;
                            edgmax = temp;
                        }
                    }
                }
                if l > 0 {
                    jdrop = l;
                }
                if jdrop == 0 {
                    stage = Stage::Shrink;
                    continue;
                }
                let mut temp = 0.0;
                for i in 1..=n {
                    sim[(i, jdrop)] = dx[i];
                    temp += simi[(jdrop, i)] * dx[i];
                }
                replace_vertex(&mut simi, &dx, jdrop, temp, n);
                for k in 1..=mpp {
                    datmat[(k, jdrop)] = con[k];
                }
                stage = if trured > 0.0 && trured >= 0.1 * prerem {
                    Stage::Pivot
                } else {
                    Stage::Shrink
                };
            }

            Stage::Shrink => {
                idle += 1;
                if !iflag {
                    ibrnch = false;
                    stage = Stage::Pivot;
                    continue;
                }
                if rho > cfg.rhoend {
                    rho *= 0.5;
                    if rho <= 1.5 * cfg.rhoend {
                        rho = cfg.rhoend;
                    }
                    if parmu > 0.0 {
                        let mut denom = 0.0f64;
                        let (mut cmin, mut cmax) = (0.0f64, 0.0f64);
                        for k in 1..=mp {
                            cmin = datmat[(k, np)];
                            cmax = cmin;
                            for i in 1..=n {
                                cmin = cmin.min(datmat[(k, i)]);
                                cmax = cmax.max(datmat[(k, i)]);
                            }
                            if k <= m && cmin < 0.5 * cmax {
                                let temp = cmax.max(0.0) - cmin;
                                denom = if denom <= 0.0 { temp } else { denom.min(temp) };
                            }
                        }
                        if denom == 0.0 {
                            parmu = 0.0;
                        } else if cmax - cmin < parmu * denom {
                            parmu = (cmax - cmin) / denom;
                        }
                    }
                    stage = Stage::Pivot;
                } else {
                    termination = Termination::Converged;
                    break;
                }
            }
        }
    }

    // Result as in the reference: the pole vertex, or the last evaluated
    // point when convergence followed a full trust-region step.
    let last_is_trial = matches!(records.last(), Some(r) if r.x.as_slice() == &x[1..]);
    let (bx, bf, bv) = if termination == Termination::Converged && last_ifull && last_is_trial {
        (x[1..].to_vec(), f, resmax)
    } else if nfvals > np || (nfvals == np && termination != Termination::NonFinite) {
        (
            (1..=n).map(|i| sim[(i, np)]).collect(),
            datmat[(mp, np)],
            datmat[(mpp, np)],
        )
    } else {
        // Stopped before the simplex was complete: best evaluation so far.
        match records
            .iter()
            .filter(|r| r.objective.is_finite() && r.max_violation.is_finite())
            .min_by(|a, b| {
                a.max_violation
                    .total_cmp(&b.max_violation)
                    .then(a.objective.total_cmp(&b.objective))
            }) {
            Some(r) => (r.x.clone(), r.objective, r.max_violation),
            None => (x0.to_vec(), f64::NAN, f64::NAN),
        }
    };
    Ok(CobylaResult {
        x: bx,
        f: bf,
        max_violation: bv,
        n_evals: nfvals,
        final_rho: rho,
        penalty: parmu,
        termination,
        trace: OptTrace::Dfo { records, termination },
    })
}

/// Updates the simplex inverse after column `jdrop` of the simplex became `dx`;
/// `pivot` is row `jdrop` of the old inverse dotted with `dx`.
fn replace_vertex(simi: &mut Mat, dx: &[f64], jdrop: usize, pivot: f64, n: usize) {
    for i in 1..=n {
        simi[(jdrop, i)] /= pivot;
    }
    for j in 1..=n {
        if j != jdrop {
            let mut temp = 0.0;
            for i in 1..=n {
                temp += simi[(j, i)] * dx[i];
            }
            for i in 1..=n {
                simi[(j, i)] -= temp * simi[(jdrop, i)];
            }
        }
    }
}

/// True when `|sp|` is too small relative to the terms that produced it
/// to be distinguished from rounding.
#[inline]
fn negligible(sum_abs: f64, sp: f64) -> bool {
    let acca = sum_abs + 0.1 * sp.abs();
    let accb = sum_abs + 0.2 * sp.abs();
    sum_abs >= acca || acca >= accb
}

#[derive(Clone, Copy)]
enum Lp {
    SecondStage,
    Restart,
    Iterate,
    Degenerate,
}

/// Trust-region LP step. Stage one finds the shortest `dx`, `‖dx‖ ≤ rho`,
/// minimizing the greatest violation of `A_k·dx ≥ b_k` (k = 1..m). Stage two
/// uses any remaining freedom to decrease `-A_{m+1}·dx` without increasing
/// that violation. Returns false when a degeneracy stops `dx` short of the
/// trust-region boundary.
fn trstlp(n: usize, m: usize, a: &Mat, b: &[f64], rho: f64, dx: &mut [f64]) -> bool {
    let mut z = Mat::zeros(n, n);
    let mut zdota = vec![0.0; n + 2];
    let mut vmultc = vec![0.0; m + 2];
    let mut vmultd = vec![0.0; m + 2];
    let mut iact = vec![0usize; m + 2];
    let mut sdirn = vec![0.0; n + 1];
    let mut dxnew = vec![0.0; n + 1];

    let mut ifull = true;
    let mut mcon = m;
    let mut nact = 0usize;
    let mut resmax = 0.0f64;
    let mut icon = 0usize;
    for i in 1..=n {
        z[(i, i)] = 1.0;
        dx[i] = 0.0;
    }
    if m >= 1 {
        for k in 1..=m {
            if b[k] > resmax {
                resmax = b[k];
                icon = k;
            }
        }
        for k in 1..=m {
            iact[k] = k;
            vmultc[k] = resmax - b[k];
        }
    }
    let (mut optold, mut icount, mut nactx) = (0.0f64, 0u32, 0usize);
    let mut resold = 0.0f64;
    let mut guard = 0usize;
    let guard_limit = 100 * (n + m + 2) * (n + m + 2);

    let mut label = if resmax == 0.0 { Lp::SecondStage } else { Lp::Restart };
    loop {
        guard += 1;
        if guard > guard_limit {
            return false;
        }
        match label {
            Lp::SecondStage => {
                mcon = m + 1;
                icon = mcon;
                iact[mcon] = mcon;
                vmultc[mcon] = 0.0;
                label = Lp::Restart;
            }
            Lp::Restart => {
                optold = 0.0;
                icount = 0;
                label = Lp::Iterate;
            }
            Lp::Degenerate => {
                if mcon == m {
                    label = Lp::SecondStage;
                    continue;
                }
                ifull = false;
                break;
            }
            Lp::Iterate => {
                // Stop a stage after three iterations without progress.
                let optnew = if mcon == m {
                    resmax
                } else {
                    -(1..=n).map(|i| dx[i] * a[(i, mcon)]).sum::<f64>()
                };
                if icount == 0 || optnew < optold {
                    optold = optnew;
                    nactx = nact;
                    icount = 3;
                } else if nact > nactx {
                    nactx = nact;
                    icount = 3;
                } else {
                    icount -= 1;
                    if icount == 0 {
                        label = Lp::Degenerate;
                        continue;
                    }
                }

                if icon <= nact {
                    // Drop constraint iact[icon] from the active set.
                    if icon < nact {
                        let isave = iact[icon];
                        let vsave = vmultc[icon];
                        let mut k = icon;
                        loop {
                            let kp = k + 1;
                            let kk = iact[kp];
                            rotate_active(&mut z, &mut zdota, a, n, k, kp, kk);
                            iact[k] = kk;
                            vmultc[k] = vmultc[kp];
                            k = kp;
                            if k >= nact {
                                break;
                            }
                        }
                        iact[k] = isave;
                        vmultc[k] = vsave;
                    }
                    nact -= 1;
                    if mcon > m {
                        let temp = 1.0 / zdota[nact];
                        for i in 1..=n {
                            sdirn[i] = temp * z[(i, nact)];
                        }
                    } else {
                        let temp: f64 = (1..=n).map(|i| sdirn[i] * z[(i, nact + 1)]).sum();
                        for i in 1..=n {
                            sdirn[i] -= temp * z[(i, nact + 1)];
                        }
                    }
                } else {
                    // Add constraint iact[icon]; rotate the trailing columns of z
                    // to be orthogonal to its gradient.
                    let kk = iact[icon];
                    for i in 1..=n {
                        dxnew[i] = a[(i, kk)];
                    }
                    let mut tot = 0.0f64;
                    let mut k = n;
                    while k > nact {
                        let mut sp = 0.0;
                        let mut spabs = 0.0;
                        for i in 1..=n {
                            let temp = z[(i, k)] * dxnew[i];
                            sp += temp;
                            spabs += temp.abs();
                        }
                        if negligible(spabs, sp) {
                            sp = 0.0;
                        }
                        if tot == 0.0 {
                            tot = sp;
                        } else {
                            let kp = k + 1;
                            let temp = (sp * sp + tot * tot).sqrt();
                            let alpha = sp / temp;
                            let beta = tot / temp;
                            tot = temp;
                            for i in 1..=n {
                                let t = alpha * z[(i, k)] + beta * z[(i, kp)];
                                z[(i, kp)] = alpha * z[(i, kp)] - beta * z[(i, k)];
                                z[(i, k)] = t;
                            }
                        }
                        k -= 1;
                    }

                    if tot != 0.0 {
                        nact += 1;
                        zdota[nact] = tot;
                        vmultc[icon] = vmultc[nact];
                        vmultc[nact] = 0.0;
                    } else {
                        // The new gradient depends on the active ones: find the
                        // active constraint to release.
                        let mut ratio = -1.0f64;
                        let mut iout = 0usize;
                        let mut k = nact;
                        while k > 0 {
                            let mut zdotv = 0.0;
                            let mut zdvabs = 0.0;
                            for i in 1..=n {
                                let temp = z[(i, k)] * dxnew[i];
                                zdotv += temp;
                                zdvabs += temp.abs();
                            }
                            if !negligible(zdvabs, zdotv) {
                                let temp = zdotv / zdota[k];
                                if temp > 0.0 && iact[k] <= m {
                                    let tempa = vmultc[k] / temp;
                                    if ratio < 0.0 || tempa < ratio {
                                        ratio = tempa;
                                        iout = k;
                                    }
                                }
                                if k >= 2 {
                                    let kw = iact[k];
                                    for i in 1..=n {
                                        dxnew[i] -= temp * a[(i, kw)];
                                    }
                                }
                                vmultd[k] = temp;
                            } else {
                                vmultd[k] = 0.0;
                            }
                            k -= 1;
                        }
                        if ratio < 0.0 {
                            label = Lp::Degenerate;
                            continue;
                        }
                        for k in 1..=nact {
                            vmultc[k] = (vmultc[k] - ratio * vmultd[k]).max(0.0);
                        }
                        if iout < nact {
                            let isave = iact[iout];
                            let vsave = vmultc[iout];
                            let mut k = iout;
                            loop {
                                let kp = k + 1;
                                let kw = iact[kp];
                                rotate_active(&mut z, &mut zdota, a, n, k, kp, kw);
                                iact[k] = kw;
                                vmultc[k] = vmultc[kp];
                                k = kp;
                                if k >= nact {
                                    break;
                                }
                            }
                            iact[k] = isave;
                            vmultc[k] = vsave;
                        }
                        let temp: f64 = (1..=n).map(|i| z[(i, nact)] * a[(i, kk)]).sum();
                        if temp == 0.0 {
                            label = Lp::Degenerate;
                            continue;
                        }
                        zdota[nact] = temp;
                        vmultc[icon] = 0.0;
                        vmultc[nact] = ratio;
                    }

                    iact[icon] = iact[nact];
                    iact[nact] = kk;
                    // Keep the objective last among the active constraints in stage two.
                    if mcon > m && kk != mcon {
                        let k = nact - 1;
                        let sp: f64 = (1..=n).map(|i| z[(i, k)] * a[(i, kk)]).sum();
                        let temp = (sp * sp + zdota[nact] * zdota[nact]).sqrt();
                        let alpha = zdota[nact] / temp;
                        let beta = sp / temp;
                        zdota[nact] = alpha * zdota[k];
                        zdota[k] = temp;
                        for i in 1..=n {
                            let t = alpha * z[(i, nact)] + beta * z[(i, k)];
                            z[(i, nact)] = alpha * z[(i, k)] - beta * z[(i, nact)];
                            z[(i, k)] = t;
                        }
                        iact[nact] = iact[k];
                        iact[k] = kk;
                        vmultc.swap(k, nact);
                    }

                    if mcon > m {
                        let temp = 1.0 / zdota[nact];
                        for i in 1..=n {
                            sdirn[i] = temp * z[(i, nact)];
                        }
                    } else {
                        let kk = iact[nact];
                        let mut temp: f64 = (1..=n).map(|i| sdirn[i] * a[(i, kk)]).sum();
                        temp = (temp - 1.0) / zdota[nact];
                        for i in 1..=n {
                            sdirn[i] -= temp * z[(i, nact)];
                        }
                    }
                }

                // Step to the trust-region boundary, or to zero violation in stage one.
                let mut dd = rho * rho;
                let mut sd = 0.0;
                let mut ss = 0.0;
                for i in 1..=n {
                    if dx[i].abs() >= 1e-6 * rho {
                        dd -= dx[i] * dx[i];
                    }
                    sd += dx[i] * sdirn[i];
                    ss += sdirn[i] * sdirn[i];
                }
                if dd <= 0.0 {
                    label = Lp::Degenerate;
                    continue;
                }
                let mut temp = (ss * dd).sqrt();
                if sd.abs() >= 1e-6 * temp {
                    temp = (ss * dd + sd * sd).sqrt();
                }
                let stpful = dd / (temp + sd);
                let mut step = stpful;
                if mcon == m {
                    if negligible(step, resmax) {
                        label = Lp::SecondStage;
                        continue;
                    }
                    step = step.min(resmax);
                }

                for i in 1..=n {
                    dxnew[i] = dx[i] + step * sdirn[i];
                }
                if mcon == m {
                    resold = resmax;
                    resmax = 0.0;
                    for k in 1..=nact {
                        let kk = iact[k];
                        let mut temp = b[kk];
                        for i in 1..=n {
                            temp -= a[(i, kk)] * dxnew[i];
                        }
                        resmax = resmax.max(temp);
                    }
                }

                // Multipliers at dxnew, zeroed when indistinguishable from rounding.
                let mut k = nact;
                while k >= 1 {
                    let mut zdotw = 0.0;
                    let mut zdwabs = 0.0;
                    for i in 1..=n {
                        let temp = z[(i, k)] * dxnew[i];
                        zdotw += temp;
                        zdwabs += temp.abs();
                    }
                    if negligible(zdwabs, zdotw) {
                        zdotw = 0.0;
                    }
                    vmultd[k] = zdotw / zdota[k];
                    if k >= 2 {
                        let kk = iact[k];
                        for i in 1..=n {
                            dxnew[i] -= vmultd[k] * a[(i, kk)];
                        }
                    }
                    k -= 1;
                }
                if mcon > m && nact >= 1 {
                    vmultd[nact] = vmultd[nact].max(0.0);
                }

                // Residuals of the inactive constraints.
                for i in 1..=n {
                    dxnew[i] = dx[i] + step * sdirn[i];
                }
                if mcon > nact {
                    for k in (nact + 1)..=mcon {
                        let kk = iact[k];
                        let mut sum = resmax - b[kk];
                        let mut sumabs = resmax + b[kk].abs();
                        for i in 1..=n {
                            let temp = a[(i, kk)] * dxnew[i];
                            sum += temp;
                            sumabs += temp.abs();
                        }
                        if negligible(sumabs, sum) {
                            sum = 0.0;
                        }
                        vmultd[k] = sum;
                    }
                }

                let mut ratio = 1.0f64;
                icon = 0;
                for k in 1..=mcon {
                    if vmultd[k] < 0.0 {
                        let temp = vmultc[k] / (vmultc[k] - vmultd[k]);
                        if temp < ratio {
                            ratio = temp;
                            icon = k;
                        }
                    }
                }
                let temp = 1.0 - ratio;
                for i in 1..=n {
                    dx[i] = temp * dx[i] + ratio * dxnew[i];
                }
                for k in 1..=mcon {
                    vmultc[k] = (temp * vmultc[k] + ratio * vmultd[k]).max(0.0);
                }
                if mcon == m {
                    resmax = resold + ratio * (resmax - resold);
                }
                if icon > 0 {
                    continue;
                }
                if step == stpful {
                    break;
                }
                label = Lp::SecondStage;
            }
        }
    }
    ifull
}

/// Givens rotation exchanging active positions `k` and `kp = k + 1`, where
/// `kk` is the constraint moving into position `k`.
fn rotate_active(z: &mut Mat, zdota: &mut [f64], a: &Mat, n: usize, k: usize, kp: usize, kk: usize) {
    let sp: f64 = (1..=n).map(|i| z[(i, k)] * a[(i, kk)]).sum();
    let temp = (sp * sp + zdota[kp] * zdota[kp]).sqrt();
    let alpha = zdota[kp] / temp;
    let beta = sp / temp;
    zdota[kp] = alpha * zdota[k];
    zdota[k] = temp;
    for i in 1..=n {
        let t = alpha * z[(i, kp)] + beta * z[(i, k)];
        z[(i, kp)] = alpha * z[(i, k)] - beta * z[(i, kp)];
        z[(i, k)] = t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run<F: FnMut(&[f64], &mut [f64]) -> f64>(f: F, m: usize, x0: &[f64], cfg: CobylaConfig) -> CobylaResult {
        minimize_cobyla(f, m, x0, &cfg).unwrap()
    }

    #[test]
    fn one_dimensional_quadratic() {
        let r = run(|x, _| (x[0] - 3.0).powi(2), 0, &[0.0], CobylaConfig::default());
        assert!((r.x[0] - 3.0).abs() < 1e-4, "{:?}", r.x);
        assert_eq!(r.termination, Termination::Converged);
    }

    #[test]
    fn rosenbrock_progress_within_budget() {
        let cfg = CobylaConfig {
            rhobeg: 0.5,
            rhoend: 1e-7,
            max_evals: 2000,
        };
        let rosen = |x: &[f64], _: &mut [f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let r = run(rosen, 0, &[-1.2, 1.0], cfg);
        assert_eq!(r.n_evals, 2000);
        assert_eq!(r.termination, Termination::BudgetExhausted);
        // independent re-evaluation at the returned point
        let f = 100.0 * (r.x[1] - r.x[0] * r.x[0]).powi(2) + (1.0 - r.x[0]).powi(2);
        assert_eq!(f, r.f);
        // linear models crawl along the valley: well past the start, short of (1, 1)
        assert!(f < 0.05 && r.x[0] > 0.7, "{:?} f={f}", r.x);
    }

    #[test]
    fn matches_reference_evaluation_counts() {
        // evaluation counts and optima of the reference Fortran on the same problems
        let cfg = CobylaConfig::default();
        let r = run(
            |x, c| {
                c[0] = 1.0 - x[0] * x[0] - x[1] * x[1];
                c[1] = x[0] - 0.1;
                x[0] * x[1] + 0.3 * x[0]
            },
            2,
            &[0.5, 0.5],
            cfg,
        );
        assert_eq!(r.n_evals, 62);
        assert!((r.x[0] - 0.61813243).abs() < 1e-6 && (r.x[1] + 0.78607398).abs() < 1e-6);
        let r = run(
            |x, c| {
                c[0] = x[0] + x[1] + x[2] - 1.0;
                c[1] = x[2];
                (x[0] - 1.0).powi(2) + 2.0 * (x[1] + 0.5).powi(2) + x[2] * x[2] * x[0] + x[1] * x[2]
            },
            2,
            &[0.0; 3],
            cfg,
        );
        assert_eq!(r.n_evals, 75);
        assert!((r.x[0] - 1.10852796).abs() < 1e-6 && (r.x[2] - 0.39705794).abs() < 1e-6);
    }

    /// Vertex enumeration oracle for `min c·x` over the unit simplex.
    fn cheapest_vertex(c: &[f64]) -> usize {
        (0..c.len()).min_by(|&i, &j| c[i].total_cmp(&c[j])).unwrap()
    }

    #[test]
    fn linear_program_on_the_simplex() {
        for c in [[3.0, 1.0, 2.0], [0.5, 4.0, 1.5], [2.0, 2.5, -1.0]] {
            let f = |x: &[f64], con: &mut [f64]| {
                con[0] = x[0];
                con[1] = x[1];
                con[2] = x[2];
                con[3] = 1.0 - (x[0] + x[1] + x[2]);
                con[4] = (x[0] + x[1] + x[2]) - 1.0;
                c[0] * x[0] + c[1] * x[1] + c[2] * x[2]
            };
            let r = run(
                f,
                5,
                &[1.0 / 3.0; 3],
                CobylaConfig {
                    rhobeg: 0.2,
                    ..Default::default()
                },
            );
            let v = cheapest_vertex(&c);
            for i in 0..3 {
                let target = if i == v { 1.0 } else { 0.0 };
                assert!((r.x[i] - target).abs() < 1e-4, "{c:?}: {:?}", r.x);
            }
            // linear models are exact: merit gap bounded by 10·rhoend·‖c‖
            let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(r.f + r.penalty * r.max_violation - c[v] <= 10.0 * 1e-6 * cn);
        }
    }

    #[test]
    fn inequality_constrained_quadratic() {
        // min (x-2)² + (y-1)² s.t. x + y ≤ 1; solution (1, 0)
        let f = |x: &[f64], con: &mut [f64]| {
            con[0] = 1.0 - x[0] - x[1];
            (x[0] - 2.0).powi(2) + (x[1] - 1.0).powi(2)
        };
        let r = run(f, 1, &[0.0, 0.0], CobylaConfig::default());
        assert!((r.x[0] - 1.0).abs() < 1e-5 && r.x[1].abs() < 1e-5, "{:?}", r.x);
        assert!(r.max_violation < 1e-8);
    }

    #[test]
    fn traces_are_monotone_and_deterministic() {
        let f = |x: &[f64], con: &mut [f64]| {
            con[0] = 4.0 - x[0] * x[0] - x[1] * x[1];
            x[0] * x[1] + (x[0] - 0.3).powi(2)
        };
        let a = run(f, 1, &[1.0, 1.0], CobylaConfig::default());
        let b = run(f, 1, &[1.0, 1.0], CobylaConfig::default());
        assert_eq!(a.trace.to_csv_string(), b.trace.to_csv_string());
        let best = a.trace.best_merit_sequence();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        if let OptTrace::Dfo { records, .. } = &a.trace {
            assert!(records.windows(2).all(|w| w[1].rho <= w[0].rho));
            assert!(records.last().unwrap().rho <= 1e-6 || a.n_evals == 10_000);
        }
    }

    #[test]
    fn failures_are_flagged_not_raised() {
        let r = run(
            |x, _| if x[0] > 0.5 { f64::NAN } else { x[0] * x[0] },
            0,
            &[0.0],
            CobylaConfig::default(),
        );
        assert_eq!(r.termination, Termination::NonFinite);
        assert!(r.f.is_finite());
        let cfg = CobylaConfig {
            max_evals: 5,
            ..Default::default()
        };
        let r = run(|x, _| (x[0] - 1.0).powi(2) + x[1] * x[1], 0, &[0.0, 0.0], cfg);
        assert_eq!(r.termination, Termination::BudgetExhausted);
        assert_eq!(r.n_evals, 5);
        assert!(minimize_cobyla(
            |_, _| 0.0,
            0,
            &[0.0],
            &CobylaConfig {
                rhobeg: 1e-7,
                ..Default::default()
            }
        )
        .is_err());
    }
}
