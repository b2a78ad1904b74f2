use super::{CertContext, CertName, CertOptions, Certificate};
use crate::error::{dim_err, input, Error, Result};
use crate::linalg::{
    dot, log_pseudo_det, nearest_partial_isometry, norm_sq, nuclear_norm, numerical_rank, op_norm,
    singular_values, svd, Matrix,
};
use crate::net::{
    balancedness_residual, forward, jacobian_cached, ntk_bilinear_2nd_derivative,
    partial_jacobians, ForwardCache, NetParams,
};

struct PointJacobian {
    j: Matrix,
    s: Vec<f64>,
    rank: usize,
}

fn point_jacobian(
    params: &NetParams,
    cache: &ForwardCache,
    col: usize,
    tol: f64,
) -> Result<PointJacobian> {
    let j = jacobian_cached(params, cache, col);
    let s = singular_values(&j)?;
    let rank = relative_rank(&s, tol);
    Ok(PointJacobian { j, s, rank })
}

fn relative_rank(s: &[f64], tol: f64) -> usize {
    let cut = tol * s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&v| v > cut && v > 0.0).count()
}

fn log_kdet(s: &[f64], k: usize) -> f64 {
    s.iter().take(k).map(|v| v.ln()).sum()
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return input("k must be at least 1");
    }
    Ok(())
}

fn single_point(params: &NetParams, x: &[f64]) -> Result<ForwardCache> {
    if x.len() != params.d_in() {
        return dim_err("certificate point", params.d_in(), x.len());
    }
    forward(params, &Matrix::column(x))
}

fn require_rank(pj: &PointJacobian, k: usize, point: &str) -> Result<()> {
    if pj.rank < k {
        return Err(Error::Precondition(format!(
            "Jacobian at {point} has measured rank {} < k = {k}",
            pj.rank
        )));
    }
    Ok(())
}

/// `Σ_ℓ ‖α_{ℓ-1}(x)‖² ‖J(α̃_ℓ → f)(x)‖²_F`, the bias-free NTK trace at batch column `col`.
fn trace_without_bias(params: &NetParams, cache: &ForwardCache, col: usize) -> f64 {
    partial_jacobians(params, cache, col)
        .iter()
        .enumerate()
        .map(|(k, p)| norm_sq(&cache.act(k).col(col)) * p.frobenius_sq())
        .sum()
}

/// Resolves `c₁` from the options and records whether `‖θ‖² <= kL + c₁` holds.
fn resolve_c1(params: &NetParams, k: usize, opts: &CertOptions, ctx: &mut CertContext) -> (f64, bool) {
    let measured = params.squared_norm() - (k * params.depth()) as f64;
    ctx.value("c1_measured", measured);
    let (c1, ok) = match opts.c1 {
        Some(v) => (v, v >= measured - 1e-12 * measured.abs().max(1.0)),
        None => (measured, true),
    };
    ctx.c1 = Some(c1);
    if !ok {
        ctx.notes.push(format!("norm premise fails: ‖θ‖² − kL = {measured} exceeds c1 = {c1}"));
    }
    (c1, ok)
}

/// `max_ℓ L·(Σ_{i<=ℓ} ‖W_i‖²)/ℓ − kL`: the excess that the prefix averages of the weight
/// norms allow. For balanced parameters the norms are nondecreasing in `ℓ`, so this never
/// exceeds `‖θ‖² − kL`.
fn prefix_excess(params: &NetParams, k: usize) -> f64 {
    let l = params.depth() as f64;
    let mut acc = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for (i, layer) in params.layers().iter().enumerate() {
        acc += layer.weight.frobenius_sq();
        worst = worst.max(l * acc / (i + 1) as f64);
    }
    worst - k as f64 * l
}

fn thm4_bound(c: f64, c1: f64, k: usize, log_j: f64, depth: usize) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    let kf = k as f64;
    (c.ln() + (c1 / kf).max(0.0) - kf.ln() - 2.0 * log_j / kf).exp() * depth as f64
}

fn count_within(values: &[f64], bound: f64) -> usize {
    let cut = bound + Certificate::tolerance(bound);
    values.iter().filter(|&&v| v <= cut).count()
}

/// Rank of the middle weight matrix `W_{⌈L/2⌉}` at threshold `0.1`.
pub fn auto_k(params: &NetParams) -> Result<usize> {
    let mid = params.depth().div_ceil(2);
    numerical_rank(&params.layer(mid).weight, 0.1)
}

/// Weight bottleneck certificate at `x`:
/// `Σ_ℓ ‖W_ℓ − U_{ℓ,k}V_{ℓ,k}ᵀ‖²_F + ‖b_ℓ‖² <= c₁ − 2 log|Jf(x)|_k`.
///
/// `U_{ℓ,k}V_{ℓ,k}ᵀ` is the nearest rank-`k` partial isometry to `W_ℓ`. The Jacobian must have
/// relative rank at least `k`; above `k` the `k`-determinant stands in for the pseudo-determinant.
pub fn thm3_certificate(
    params: &NetParams,
    x: &[f64],
    k: usize,
    opts: &CertOptions,
) -> Result<Certificate> {
    opts.validate()?;
    check_k(k)?;
    let cache = single_point(params, x)?;
    let pj = point_jacobian(params, &cache, 0, opts.rank_tol)?;
    require_rank(&pj, k, "x")?;

    let l = params.depth();
    let mut ctx = CertContext {
        k: Some(k),
        p: Some(opts.p),
        points: vec![0],
        rank_tol: opts.rank_tol,
        measured_rank: Some(pj.rank),
        ..Default::default()
    };
    if pj.rank > k {
        ctx.notes.push(format!("Jacobian rank {} exceeds k; |Jf|_k is used", pj.rank));
    }
    let (c1, c1_ok) = resolve_c1(params, k, opts, &mut ctx);
    let log_j = log_kdet(&pj.s, k);
    let rhs = c1 - 2.0 * log_j;

    let mut per_layer = Vec::with_capacity(l);
    let mut chain = 0.0;
    for layer in params.layers() {
        let (u, v) = nearest_partial_isometry(&layer.weight, k)?;
        let dev = layer.weight.sub(&u.matmul_t(&v)).frobenius_sq();
        let b2 = norm_sq(&layer.bias);
        per_layer.push(dev + b2);
        let s = singular_values(&layer.weight)?;
        chain += layer.weight.frobenius_sq() + b2 - k as f64 - 2.0 * log_kdet(&s, k);
    }
    let lhs: f64 = per_layer.iter().sum();

    let bound = rhs / (opts.p * l as f64);
    let compliant = count_within(&per_layer, bound);
    ctx.value("log_kdet_jacobian", log_j);
    ctx.value("proof_chain", chain);
    ctx.value("per_layer_bound", bound);
    ctx.value("compliant_layers", compliant as f64);
    ctx.value("violating_layers", (l - compliant) as f64);
    ctx.value("required_layers", (1.0 - opts.p) * l as f64);
    Certificate::build(CertName::Thm3Weights, lhs, rhs, per_layer, ctx, c1_ok)
}

/// Activation certificate at `x`:
/// `Σ_ℓ ‖α_{ℓ-1}(x)‖² <= c·max{1, e^{c₁/k}} / (k |Jf(x)|_k^{2/k}) · L`
/// under the premise `Tr Θ(x, x) <= cL` for the bias-free kernel.
///
/// Approximate balancedness enters through the effective constant
/// `max(c₁, max_ℓ L·(Σ_{i<=ℓ}‖W_i‖²)/ℓ − kL)`, which equals `c₁` for balanced parameters.
pub fn thm4_certificate(
    params: &NetParams,
    x: &[f64],
    k: usize,
    opts: &CertOptions,
) -> Result<Certificate> {
    opts.validate()?;
    check_k(k)?;
    let cache = single_point(params, x)?;
    let pj = point_jacobian(params, &cache, 0, opts.rank_tol)?;
    require_rank(&pj, k, "x")?;

    let l = params.depth();
    let lf = l as f64;
    let mut ctx = CertContext {
        k: Some(k),
        p: Some(opts.p),
        points: vec![0],
        rank_tol: opts.rank_tol,
        measured_rank: Some(pj.rank),
        ..Default::default()
    };
    let trace = trace_without_bias(params, &cache, 0);
    let c = match opts.c {
        Some(c) => c,
        None => {
            ctx.notes.push("c taken from the measured trace; the NTK premise holds by construction".into());
            trace / lf
        }
    };
    ctx.c = Some(c);
    let ntk_ok = trace <= c * lf + 1e-12 * (c * lf).max(1.0);
    if !ntk_ok {
        ctx.notes.push(format!("NTK premise fails: Tr Θ = {trace} > cL = {}", c * lf));
    }
    let balance = balancedness_residual(params);
    let balance_ok = opts.balance_tol.is_none_or(|t| balance <= t);
    if !balance_ok {
        ctx.notes.push(format!("balancedness residual {balance} above tolerance"));
    }
    let (c1, c1_ok) = resolve_c1(params, k, opts, &mut ctx);
    let c1_eff = c1.max(prefix_excess(params, k));
    let log_j = log_kdet(&pj.s, k);
    let rhs = thm4_bound(c, c1_eff, k, log_j, l);

    let per_layer: Vec<f64> = (0..l).map(|i| norm_sq(&cache.act(i).col(0))).collect();
    let lhs: f64 = per_layer.iter().sum();
    let bound = rhs / (opts.p * lf);
    let compliant = count_within(&per_layer, bound);
    ctx.value("ntk_trace", trace);
    ctx.value("balancedness", balance);
    ctx.value("c1_effective", c1_eff);
    ctx.value("log_kdet_jacobian", log_j);
    ctx.value("per_layer_bound", bound);
    ctx.value("compliant_layers", compliant as f64);
    ctx.value("violating_layers", (l - compliant) as f64);
    ctx.value("required_layers", (1.0 - opts.p) * lf);
    Certificate::build(
        CertName::Thm4Activations,
        lhs,
        rhs,
        per_layer,
        ctx,
        ntk_ok && balance_ok && c1_ok,
    )
}

/// Per-layer bound on `s_{k+1}(α̃_ℓ(X)/√N)`:
/// `√r₃ · (√a₄ + √p) / (p √L)`, where `r₃ = c₁ − 2 log|Jf(x)|_k` is the weight budget and
/// `a₄` the batch average of the activation bounds divided by `L`.
pub fn cor5_bound(r3: f64, a4: f64, p: f64, depth: usize) -> f64 {
    r3.max(0.0).sqrt() * (a4.max(0.0).sqrt() + p.sqrt()) / (p * (depth as f64).sqrt())
}

/// Pre-activation rank certificate on a batch (columns of `x_batch`).
///
/// `lhs` is the required number of compliant layers `(1 − p)L` and `rhs` the measured number
/// of layers with `s_{k+1}(α̃_ℓ(X)/√N)` below the bound, so the certificate passes when enough
/// layers comply. `per_layer` holds the measured `s_{k+1}`. Combining the two per-layer
/// guarantees only ensures `(1 − 2p)L` layers; that count is reported as well.
///
/// With `c` given, the premise is the mean trace `(1/N) Σ Tr Θ(x_i, x_i) <= cL`. In auto mode
/// each point uses its own `c_i = Tr Θ(x_i, x_i)/L`.
pub fn cor5_certificate(
    params: &NetParams,
    x_batch: &Matrix,
    k: usize,
    opts: &CertOptions,
) -> Result<Certificate> {
    opts.validate()?;
    check_k(k)?;
    let n = x_batch.cols();
    if n == 0 {
        return input("cor5 needs at least one point");
    }
    let cache = forward(params, x_batch)?;
    let l = params.depth();
    let lf = l as f64;
    let mut ctx = CertContext {
        k: Some(k),
        p: Some(opts.p),
        points: (0..n).collect(),
        rank_tol: opts.rank_tol,
        ..Default::default()
    };

    let mut log_js = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    let mut min_rank = usize::MAX;
    for i in 0..n {
        let pj = point_jacobian(params, &cache, i, opts.rank_tol)?;
        require_rank(&pj, k, &format!("point {i}"))?;
        min_rank = min_rank.min(pj.rank);
        log_js.push(log_kdet(&pj.s, k));
        traces.push(trace_without_bias(params, &cache, i));
    }
    ctx.measured_rank = Some(min_rank);
    let mean_trace = traces.iter().sum::<f64>() / n as f64;

    let balance = balancedness_residual(params);
    let balance_ok = opts.balance_tol.is_none_or(|t| balance <= t);
    let (c1, c1_ok) = resolve_c1(params, k, opts, &mut ctx);
    let c1_eff = c1.max(prefix_excess(params, k));

    let (a4, ntk_ok) = match opts.c {
        Some(c) => {
            ctx.c = Some(c);
            let a: f64 = log_js.iter().map(|&lj| thm4_bound(c, c1_eff, k, lj, l) / lf).sum();
            (a / n as f64, mean_trace <= c * lf + 1e-12 * (c * lf).max(1.0))
        }
        None => {
            ctx.c = Some(mean_trace / lf);
            ctx.notes.push("per-point c_i taken from the measured traces".into());
            let a: f64 = log_js
                .iter()
                .zip(&traces)
                .map(|(&lj, &t)| thm4_bound(t / lf, c1_eff, k, lj, l) / lf)
                .sum();
            (a / n as f64, true)
        }
    };
    if !ntk_ok {
        ctx.notes.push(format!("NTK premise fails: mean Tr Θ = {mean_trace} > cL"));
    }
    let best = log_js.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let r3 = c1 - 2.0 * best;
    let bound = cor5_bound(r3, a4, opts.p, l);

    let scale = 1.0 / (n as f64).sqrt();
    let mut per_layer = Vec::with_capacity(l);
    for ell in 1..=l {
        let s = singular_values(&cache.preact(ell).scale(scale))?;
        per_layer.push(s.get(k).copied().unwrap_or(0.0));
    }
    let compliant = count_within(&per_layer, bound);
    ctx.value("bound", bound);
    ctx.value("weight_budget", r3);
    ctx.value("activation_budget", a4);
    ctx.value("mean_ntk_trace", mean_trace);
    ctx.value("balancedness", balance);
    ctx.value("c1_effective", c1_eff);
    ctx.value("proof_guaranteed_layers", (1.0 - 2.0 * opts.p) * lf);
    let lhs = (1.0 - opts.p) * lf;
    Certificate::build(
        CertName::Cor5Sk1,
        lhs,
        compliant as f64,
        per_layer,
        ctx,
        ntk_ok && balance_ok && c1_ok,
    )
}

/// Second-derivative NTK certificate at `x`, for ReLU and linear networks.
///
/// With `u, v` the top right and left singular vectors of `Jf(x)`, `rhs` is the bilinear form
/// `Σ_ℓ ‖J(x → α_{ℓ-1})u‖² ‖J(α̃_ℓ → f)ᵀv‖²`, a lower bound on `‖∂²_{xy}Θ(x, x)‖_op`, and `lhs`
/// is `L |vᵀJu|² / ‖Ju‖^{2/L} = L s₁^{2−2/L}`. The form `2L s₁^{2−2/L}` is reported as
/// `headline_bound` with its own slack.
pub fn prop6_certificate(params: &NetParams, x: &[f64]) -> Result<Certificate> {
    let a = params.slope();
    if a != 0.0 && a != 1.0 {
        return Err(Error::Scope(format!(
            "second-derivative certificate needs slope 0 or 1, got {a}"
        )));
    }
    let cache = single_point(params, x)?;
    if !params.is_linear() && cache.kink_margin(0) == 0.0 {
        return Err(Error::Precondition("x lies on a kink of the activation pattern".into()));
    }
    let l = params.depth();
    let lf = l as f64;
    let j = jacobian_cached(params, &cache, 0);
    let d = svd(&j)?;
    let s1 = d.s.first().copied().unwrap_or(0.0);
    let u = d.v.col(0);
    let v = d.u.col(0);
    let measured = ntk_bilinear_2nd_derivative(params, x, &u, &v)?;
    let ju = j.mul_vec(&u);
    let ju_norm2 = norm_sq(&ju);
    let display = if ju_norm2 > 0.0 {
        lf * dot(&v, &ju).powi(2) / ju_norm2.powf(1.0 / lf)
    } else {
        0.0
    };
    let headline = 2.0 * lf * s1.powf(2.0 - 2.0 / lf);
    let mut ctx = CertContext {
        points: vec![0],
        ..Default::default()
    };
    ctx.value("s1", s1);
    ctx.value("headline_bound", headline);
    ctx.value("headline_slack", measured - headline);
    let margin = cache.kink_margin(0);
    if margin.is_finite() {
        ctx.value("kink_margin", margin);
    }
    Certificate::build(CertName::Prop6Ntk, display, measured, Vec::new(), ctx, true)
}

/// `max_i 2 log|Jf(x_i)|₊` over the batch points whose Jacobian attains the largest relative
/// rank (threshold [`super::JACOBIAN_RANK_TOL`]).
pub fn r1_lower_bound(params: &NetParams, x_batch: &Matrix) -> Result<f64> {
    Ok(r1_parts(params, x_batch, super::JACOBIAN_RANK_TOL)?.0)
}

/// Returns `(bound, rank, argmax column)`.
fn r1_parts(params: &NetParams, x_batch: &Matrix, tol: f64) -> Result<(f64, usize, usize)> {
    if x_batch.cols() == 0 {
        return input("r1 lower bound needs at least one point");
    }
    let cache = forward(params, x_batch)?;
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for i in 0..x_batch.cols() {
        let pj = point_jacobian(params, &cache, i, tol)?;
        let val = 2.0 * log_kdet(&pj.s, pj.rank);
        if pj.rank > best.1 || (pj.rank == best.1 && val > best.0) {
            best = (val, pj.rank, i);
        }
    }
    Ok(best)
}

/// `2 log|Jf(x)|₊ <= ‖θ‖² − kL` with `k` the largest Jacobian rank on the batch and `x` the
/// maximizing point.
pub fn r1_certificate(params: &NetParams, x_batch: &Matrix, opts: &CertOptions) -> Result<Certificate> {
    opts.validate()?;
    let (bound, rank, arg) = r1_parts(params, x_batch, opts.rank_tol)?;
    let mut ctx = CertContext {
        k: Some(rank),
        points: vec![arg],
        rank_tol: opts.rank_tol,
        measured_rank: Some(rank),
        ..Default::default()
    };
    let (c1, c1_ok) = resolve_c1(params, rank, opts, &mut ctx);
    Certificate::build(CertName::R1Lower, bound, c1, Vec::new(), ctx, c1_ok)
}

/// Forward Jacobians `J(x → α_ℓ)` for `ℓ = 0..L-1`.
fn forward_jacobians(params: &NetParams, cache: &ForwardCache) -> Vec<Matrix> {
    let l = params.depth();
    let mut out = Vec::with_capacity(l);
    let mut g = Matrix::identity(params.d_in());
    out.push(g.clone());
    for ell in 1..l {
        g = params.layer(ell).weight.matmul(&g);
        g.scale_rows(&cache.pattern_diag(params, ell, 0));
        out.push(g.clone());
    }
    out
}

/// Largest operator norm among the partial maps used to bound the Jacobian difference:
/// `J(x → α_{ℓ-1})` at one point and `J(α̃_{ℓ+1} → f)` at the other, both orders.
fn lipschitz_constant(params: &NetParams, cx: &ForwardCache, cy: &ForwardCache) -> Result<f64> {
    let mut c: f64 = 1.0;
    for (a, b) in [(cx, cy), (cy, cx)] {
        for g in forward_jacobians(params, a) {
            c = c.max(op_norm(&g)?);
        }
        for p in partial_jacobians(params, b, 0) {
            c = c.max(op_norm(&p)?);
        }
    }
    Ok(c)
}

/// Curvature bound `log|Jf(x)|₊ + log|Jf(y)|₊ + C⁻²‖Jf(x) − Jf(y)‖_*` (as `lhs`) against the
/// norm excess `‖θ‖² − kL` (as `rhs`), `k` the larger of the two Jacobian ranks.
///
/// `c_lip = None` uses the measured constant of the partial maps at `x` and `y`; a supplied
/// constant below it fails the Lipschitz premise. The bound with `C⁻²` replaced by
/// `(2C²)⁻¹` is reported as `half_constant_bound`.
pub fn lip_curvature_gap(
    params: &NetParams,
    x: &[f64],
    y: &[f64],
    c_lip: Option<f64>,
    opts: &CertOptions,
) -> Result<Certificate> {
    opts.validate()?;
    if params.slope() != 0.0 {
        return Err(Error::Scope(format!(
            "curvature bound is stated for ReLU networks, got slope {}",
            params.slope()
        )));
    }
    if let Some(c) = c_lip {
        if !(c > 0.0 && c.is_finite()) {
            return input(format!("Lipschitz constant must be positive, got {c}"));
        }
    }
    let cx = single_point(params, x)?;
    let cy = single_point(params, y)?;
    let jx = point_jacobian(params, &cx, 0, opts.rank_tol)?;
    let jy = point_jacobian(params, &cy, 0, opts.rank_tol)?;
    let lx = log_pseudo_det(&jx.j, opts.rank_tol)?;
    let ly = log_pseudo_det(&jy.j, opts.rank_tol)?;
    let nuclear = nuclear_norm(&jx.j.sub(&jy.j))?;
    let measured_c = lipschitz_constant(params, &cx, &cy)?;
    let c = c_lip.unwrap_or(measured_c);
    let lip_ok = c >= measured_c * (1.0 - 1e-12);

    let k = jx.rank.max(jy.rank);
    let mut ctx = CertContext {
        k: Some(k),
        points: vec![0, 1],
        rank_tol: opts.rank_tol,
        measured_rank: Some(k),
        ..Default::default()
    };
    if !lip_ok {
        ctx.notes.push(format!("C = {c} is below the measured constant {measured_c}"));
    }
    let (c1, c1_ok) = resolve_c1(params, k, opts, &mut ctx);
    let bound = lx + ly + nuclear / (c * c);
    ctx.value("log_pdet_x", lx);
    ctx.value("log_pdet_y", ly);
    ctx.value("nuclear_difference", nuclear);
    ctx.value("lipschitz_constant", c);
    ctx.value("measured_lipschitz_constant", measured_c);
    ctx.value("half_constant_bound", lx + ly + nuclear / (2.0 * c * c));
    Certificate::build(CertName::LipCurvature, bound, c1, Vec::new(), ctx, lip_ok && c1_ok)
}
