//! Pointwise Poincare-ball kernels on raw tensors.
//!
//! Every function treats the last axis as the ambient dimension and maps
//! over all leading axes. Backward functions return vector-Jacobian
//! products `u^T J` for the cotangent `u` of the forward output.

use crate::error::{Error, Result};
use crate::tensor::{dot, norm_sq, Tensor};

use super::Curvature;

/// Below this norm, `v / |v|` terms switch to their analytic limits.
pub const ZERO_NORM: f64 = 1e-12;

/// Relative gap between the projection shell and the ball boundary.
pub const EPS_BOUNDARY: f64 = 1e-5;

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn lead_shape(t: &Tensor) -> Vec<usize> {
    let mut s = t.shape().to_vec();
    if let Some(last) = s.last_mut() {
        *last = 1;
    } else {
        s.push(1);
    }
    s
}

// ---------------------------------------------------------------------------
// Mobius addition

/// The scalars `a = 1 + 2c<x,y> + c|y|^2`, `b = 1 - c|x|^2` and
/// `d = 1 + 2c<x,y> + c^2|x|^2|y|^2` of one Mobius sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MobiusScalars {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

pub(crate) fn mobius_add_row(c: f64, x: &[f64], y: &[f64], out: &mut [f64]) -> MobiusScalars {
    let xy = dot(x, y);
    let xx = norm_sq(x);
    let yy = norm_sq(y);
    let a = 1.0 + 2.0 * c * xy + c * yy;
    let b = 1.0 - c * xx;
    let d = 1.0 + 2.0 * c * xy + c * c * xx * yy;
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = (a * xi + b * yi) / d;
    }
    MobiusScalars { a, b, d }
}

pub(crate) fn mobius_add_backward_row(
    c: f64,
    u: &[f64],
    x: &[f64],
    y: &[f64],
    s: MobiusScalars,
    gx: &mut [f64],
    gy: &mut [f64],
) {
    let MobiusScalars { a, b, d } = s;
    let ux = dot(u, x);
    let uy = dot(u, y);
    let xx = norm_sq(x);
    let yy = norm_sq(y);
    let theta = a * ux + b * uy;
    let k = 2.0 * c / d;
    let x_coef_x = -k * (uy + theta * c * yy / d);
    let y_coef_x = k * (ux - theta / d);
    let x_coef_y = k * (ux - theta / d);
    let y_coef_y = k * (ux - c * xx * theta / d);
    for i in 0..u.len() {
        gx[i] = a / d * u[i] + x_coef_x * x[i] + y_coef_x * y[i];
        gy[i] = b / d * u[i] + x_coef_y * x[i] + y_coef_y * y[i];
    }
}

pub fn mobius_add(x: &Tensor, y: &Tensor, c: Curvature) -> Result<(Tensor, Vec<MobiusScalars>)> {
    same_shape("mobius_add", x, y)?;
    let n = x.last_dim();
    let mut out = vec![0.0; x.numel()];
    let mut scalars = Vec::with_capacity(x.rows());
    for (i, o) in out.chunks_exact_mut(n.max(1)).enumerate() {
        scalars.push(mobius_add_row(c.get(), x.row(i), y.row(i), o));
    }
    Ok((Tensor::from_parts(out, x.shape().to_vec()), scalars))
}

pub fn mobius_add_backward(
    u: &Tensor,
    x: &Tensor,
    y: &Tensor,
    scalars: &[MobiusScalars],
    c: Curvature,
) -> Result<(Tensor, Tensor)> {
    same_shape("mobius_add_backward", u, x)?;
    same_shape("mobius_add_backward", x, y)?;
    let n = x.last_dim();
    let mut gx = vec![0.0; x.numel()];
    let mut gy = vec![0.0; x.numel()];
    for i in 0..x.rows() {
        mobius_add_backward_row(
            c.get(),
            u.row(i),
            x.row(i),
            y.row(i),
            scalars[i],
            &mut gx[i * n..(i + 1) * n],
            &mut gy[i * n..(i + 1) * n],
        );
    }
    Ok((
        Tensor::from_parts(gx, x.shape().to_vec()),
        Tensor::from_parts(gy, x.shape().to_vec()),
    ))
}

/// Recomputes the Mobius scalars without the sum itself.
pub fn mobius_scalars(x: &Tensor, y: &Tensor, c: Curvature) -> Vec<MobiusScalars> {
    let c = c.get();
    (0..x.rows())
        .map(|i| {
            let (xr, yr) = (x.row(i), y.row(i));
            let xy = dot(xr, yr);
            let xx = norm_sq(xr);
            let yy = norm_sq(yr);
            MobiusScalars {
                a: 1.0 + 2.0 * c * xy + c * yy,
                b: 1.0 - c * xx,
                d: 1.0 + 2.0 * c * xy + c * c * xx * yy,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Exponential and logarithmic maps at the origin

pub(crate) fn exp0_row(c: f64, v: &[f64], out: &mut [f64]) {
    let sc = c.sqrt();
    let n = norm_sq(v).sqrt();
    let k = if n < ZERO_NORM {
        1.0
    } else {
        (sc * n).tanh() / (sc * n)
    };
    for (o, vi) in out.iter_mut().zip(v) {
        *o = k * vi;
    }
}

pub(crate) fn exp0_backward_row(c: f64, u: &[f64], v: &[f64], g: &mut [f64]) {
    let sc = c.sqrt();
    let n = norm_sq(v).sqrt();
    if n < ZERO_NORM {
        g.copy_from_slice(u);
        return;
    }
    let t = (sc * n).tanh();
    let ch = (sc * n).cosh();
    let uv = dot(u, v);
    let outer = uv * (1.0 / (n * n * ch * ch) - t / (sc * n * n * n));
    let diag = t / (sc * n);
    for i in 0..u.len() {
        g[i] = outer * v[i] + diag * u[i];
    }
}

pub(crate) fn log0_row(c: f64, y: &[f64], out: &mut [f64]) {
    let sc = c.sqrt();
    let n = norm_sq(y).sqrt();
    let k = if n < ZERO_NORM {
        1.0
    } else {
        (sc * n).atanh() / (sc * n)
    };
    for (o, yi) in out.iter_mut().zip(y) {
        *o = k * yi;
    }
}

pub(crate) fn log0_backward_row(c: f64, u: &[f64], y: &[f64], g: &mut [f64]) {
    let sc = c.sqrt();
    let n = norm_sq(y).sqrt();
    if n < ZERO_NORM {
        g.copy_from_slice(u);
        return;
    }
    let at = (sc * n).atanh();
    let uy = dot(u, y);
    let outer = uy * (1.0 / (n * n * (1.0 - c * n * n)) - at / (sc * n * n * n));
    let diag = at / (sc * n);
    for i in 0..u.len() {
        g[i] = outer * y[i] + diag * u[i];
    }
}

fn map_rows(t: &Tensor, f: impl Fn(&[f64], &mut [f64])) -> Tensor {
    let n = t.last_dim();
    let mut out = vec![0.0; t.numel()];
    for (i, o) in out.chunks_exact_mut(n.max(1)).enumerate() {
        f(t.row(i), o);
    }
    Tensor::from_parts(out, t.shape().to_vec())
}

fn map_rows2(u: &Tensor, t: &Tensor, f: impl Fn(&[f64], &[f64], &mut [f64])) -> Result<Tensor> {
    same_shape("backward", u, t)?;
    let n = t.last_dim();
    let mut out = vec![0.0; t.numel()];
    for (i, o) in out.chunks_exact_mut(n.max(1)).enumerate() {
        f(u.row(i), t.row(i), o);
    }
    Ok(Tensor::from_parts(out, t.shape().to_vec()))
}

pub fn exp0(v: &Tensor, c: Curvature) -> Tensor {
    map_rows(v, |r, o| exp0_row(c.get(), r, o))
}

pub fn exp0_backward(u: &Tensor, v: &Tensor, c: Curvature) -> Result<Tensor> {
    map_rows2(u, v, |ur, vr, g| exp0_backward_row(c.get(), ur, vr, g))
}

pub fn log0(y: &Tensor, c: Curvature) -> Tensor {
    map_rows(y, |r, o| log0_row(c.get(), r, o))
}

pub fn log0_backward(u: &Tensor, y: &Tensor, c: Curvature) -> Result<Tensor> {
    map_rows2(u, y, |ur, yr, g| log0_backward_row(c.get(), ur, yr, g))
}

// ---------------------------------------------------------------------------
// Mobius scalar multiplication: r (x) x = tanh(r artanh(sqrt(c)|x|)) x / (sqrt(c)|x|)

pub fn mobius_scalar_mul(r: f64, x: &Tensor, c: Curvature) -> Tensor {
    let sc = c.sqrt();
    map_rows(x, |xr, o| {
        let n = norm_sq(xr).sqrt();
        let k = if n < ZERO_NORM {
            r
        } else {
            (r * (sc * n).atanh()).tanh() / (sc * n)
        };
        for (oi, xi) in o.iter_mut().zip(xr) {
            *oi = k * xi;
        }
    })
}

pub fn mobius_scalar_mul_backward(u: &Tensor, r: f64, x: &Tensor, c: Curvature) -> Result<Tensor> {
    let sc = c.sqrt();
    let cv = c.get();
    map_rows2(u, x, |ur, xr, g| {
        let n = norm_sq(xr).sqrt();
        if n < ZERO_NORM {
            for (gi, ui) in g.iter_mut().zip(ur) {
                *gi = r * ui;
            }
            return;
        }
        let at = (sc * n).atanh();
        let t = (r * at).tanh();
        let sech2 = 1.0 - t * t;
        let k = t / (sc * n);
        let dk_dn = r * sech2 / ((1.0 - cv * n * n) * n) - t / (sc * n * n);
        let outer = dot(ur, xr) * dk_dn / n;
        for i in 0..g.len() {
            g[i] = k * ur[i] + outer * xr[i];
        }
    })
}

// ---------------------------------------------------------------------------
// Conformal factor lambda_x = 2 / (1 - c|x|^2), one value per point.

pub fn conformal_factor(x: &Tensor, c: Curvature) -> Tensor {
    let data = (0..x.rows())
        .map(|i| 2.0 / (1.0 - c.get() * norm_sq(x.row(i))))
        .collect();
    Tensor::from_parts(data, lead_shape(x))
}

pub fn conformal_factor_backward(u: &Tensor, x: &Tensor, c: Curvature) -> Result<Tensor> {
    if u.numel() != x.rows() {
        return Err(Error::shape(format!(
            "conformal factor cotangent {:?} for points {:?}",
            u.shape(),
            x.shape()
        )));
    }
    let cv = c.get();
    let n = x.last_dim();
    let mut g = vec![0.0; x.numel()];
    for i in 0..x.rows() {
        let xr = x.row(i);
        let b = 1.0 - cv * norm_sq(xr);
        let k = 4.0 * cv * u.data()[i] / (b * b);
        for (gi, xi) in g[i * n..(i + 1) * n].iter_mut().zip(xr) {
            *gi = k * xi;
        }
    }
    Ok(Tensor::from_parts(g, x.shape().to_vec()))
}

// ---------------------------------------------------------------------------
// Exponential map at x: x (+) z(x, v), z = tanh(sqrt(c) lambda_x |v| / 2) v / (sqrt(c)|v|)

fn z_exp_row(c: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
    let sc = c.sqrt();
    let b = 1.0 - c * norm_sq(x);
    let n = norm_sq(v).sqrt();
    let k = if n < ZERO_NORM {
        1.0 / b
    } else {
        (sc * n / b).tanh() / (sc * n)
    };
    for (o, vi) in out.iter_mut().zip(v) {
        *o = k * vi;
    }
}

/// Second factor of `exp_x(v) = x (+) z`.
pub fn exp_at_z(x: &Tensor, v: &Tensor, c: Curvature) -> Result<Tensor> {
    same_shape("exp_at", x, v)?;
    let n = x.last_dim();
    let mut z = vec![0.0; x.numel()];
    for (i, o) in z.chunks_exact_mut(n.max(1)).enumerate() {
        z_exp_row(c.get(), x.row(i), v.row(i), o);
    }
    Ok(Tensor::from_parts(z, x.shape().to_vec()))
}

pub fn exp_at(x: &Tensor, v: &Tensor, c: Curvature) -> Result<Tensor> {
    let z = exp_at_z(x, v, c)?;
    Ok(mobius_add(x, &z, c)?.0)
}

/// Backward of `exp_x(v)` given the saved `z = exp_at_z(x, v)`.
pub fn exp_at_backward(
    u: &Tensor,
    x: &Tensor,
    v: &Tensor,
    z: &Tensor,
    c: Curvature,
) -> Result<(Tensor, Tensor)> {
    let scalars = mobius_scalars(x, z, c);
    let (mut gx, gz) = mobius_add_backward(u, x, z, &scalars, c)?;
    let cv = c.get();
    let sc = c.sqrt();
    let n = x.last_dim();
    let mut gv = vec![0.0; v.numel()];
    {
        let gxd = gx.data_mut();
        for i in 0..x.rows() {
            let (xr, vr, gzr) = (x.row(i), v.row(i), gz.row(i));
            let b = 1.0 - cv * norm_sq(xr);
            let nv = norm_sq(vr).sqrt();
            let gvr = &mut gv[i * n..(i + 1) * n];
            if nv < ZERO_NORM {
                // z ~ v / b near v = 0, so J_v z = I / b and J_x z = 0.
                for (g, u) in gvr.iter_mut().zip(gzr) {
                    *g = u / b;
                }
                continue;
            }
            let arg = sc * nv / b;
            let t = arg.tanh();
            let ch = arg.cosh();
            let sech2 = 1.0 / (ch * ch);
            let uv = dot(gzr, vr);
            let kx = 2.0 * cv * uv * sech2 / (b * b);
            for (g, xi) in gxd[i * n..(i + 1) * n].iter_mut().zip(xr) {
                *g += kx * xi;
            }
            let outer = uv * (sech2 / (b * nv * nv) - t / (sc * nv * nv * nv));
            let diag = t / (sc * nv);
            for j in 0..n {
                gvr[j] = outer * vr[j] + diag * gzr[j];
            }
        }
    }
    Ok((gx, Tensor::from_parts(gv, v.shape().to_vec())))
}

// ---------------------------------------------------------------------------
// Logarithmic map at x: f(x, z) with z = (-x) (+) y,
// f = (1 - c|x|^2) artanh(sqrt(c)|z|) z / (sqrt(c)|z|)

/// `(-x) (+) y`
pub fn log_at_z(x: &Tensor, y: &Tensor, c: Curvature) -> Result<Tensor> {
    let neg = x.map(|v| -v);
    Ok(mobius_add(&neg, y, c)?.0)
}

pub fn log_at(x: &Tensor, y: &Tensor, c: Curvature) -> Result<(Tensor, Tensor)> {
    let z = log_at_z(x, y, c)?;
    let cv = c.get();
    let sc = c.sqrt();
    let n = x.last_dim();
    let mut out = vec![0.0; x.numel()];
    for (i, o) in out.chunks_exact_mut(n.max(1)).enumerate() {
        let b = 1.0 - cv * norm_sq(x.row(i));
        let zr = z.row(i);
        let nz = norm_sq(zr).sqrt();
        let k = if nz < ZERO_NORM {
            b
        } else {
            b * (sc * nz).atanh() / (sc * nz)
        };
        for (oi, zi) in o.iter_mut().zip(zr) {
            *oi = k * zi;
        }
    }
    Ok((Tensor::from_parts(out, x.shape().to_vec()), z))
}

pub fn log_at_backward(
    u: &Tensor,
    x: &Tensor,
    y: &Tensor,
    z: &Tensor,
    c: Curvature,
) -> Result<(Tensor, Tensor)> {
    same_shape("log_at_backward", u, x)?;
    let cv = c.get();
    let sc = c.sqrt();
    let n = x.last_dim();
    let mut gx_f = vec![0.0; x.numel()];
    let mut gz = vec![0.0; x.numel()];
    for i in 0..x.rows() {
        let (xr, zr, ur) = (x.row(i), z.row(i), u.row(i));
        let b = 1.0 - cv * norm_sq(xr);
        let nz = norm_sq(zr).sqrt();
        let gzr = &mut gz[i * n..(i + 1) * n];
        if nz < ZERO_NORM {
            for (g, ui) in gzr.iter_mut().zip(ur) {
                *g = b * ui;
            }
            continue;
        }
        let at = (sc * nz).atanh();
        let uz = dot(ur, zr);
        let kx = -at * 2.0 * cv * uz / (sc * nz);
        for (g, xi) in gx_f[i * n..(i + 1) * n].iter_mut().zip(xr) {
            *g = kx * xi;
        }
        let outer = uz * (b / ((1.0 - cv * nz * nz) * nz * nz) - at * b / (sc * nz * nz * nz));
        let diag = at * b / (sc * nz);
        for j in 0..n {
            gzr[j] = outer * zr[j] + diag * ur[j];
        }
    }
    let gz = Tensor::from_parts(gz, x.shape().to_vec());
    let neg = x.map(|v| -v);
    let scalars = mobius_scalars(&neg, y, c);
    let (g_negx, gy) = mobius_add_backward(&gz, &neg, y, &scalars, c)?;
    let gx: Vec<f64> = gx_f.iter().zip(g_negx.data()).map(|(a, b)| a - b).collect();
    Ok((Tensor::from_parts(gx, x.shape().to_vec()), gy))
}

// ---------------------------------------------------------------------------
// Distance d(x, y) = 2/sqrt(c) artanh(sqrt(c) |(-x) (+) y|), one value per pair.

pub fn distance(x: &Tensor, y: &Tensor, c: Curvature) -> Result<(Tensor, Tensor)> {
    let z = log_at_z(x, y, c)?;
    let sc = c.sqrt();
    let data = (0..z.rows())
        .map(|i| 2.0 / sc * (sc * norm_sq(z.row(i)).sqrt()).atanh())
        .collect();
    Ok((Tensor::from_parts(data, lead_shape(x)), z))
}

pub fn distance_backward(
    u: &Tensor,
    x: &Tensor,
    y: &Tensor,
    z: &Tensor,
    c: Curvature,
) -> Result<(Tensor, Tensor)> {
    if u.numel() != x.rows() {
        return Err(Error::shape(
            "distance cotangent must hold one value per pair",
        ));
    }
    let cv = c.get();
    let n = x.last_dim();
    let mut gz = vec![0.0; x.numel()];
    for i in 0..x.rows() {
        let zr = z.row(i);
        let zz = norm_sq(zr);
        let nz = zz.sqrt();
        if nz < ZERO_NORM {
            continue;
        }
        let k = u.data()[i] * 2.0 / ((1.0 - cv * zz) * nz);
        for (g, zi) in gz[i * n..(i + 1) * n].iter_mut().zip(zr) {
            *g = k * zi;
        }
    }
    let gz = Tensor::from_parts(gz, x.shape().to_vec());
    let neg = x.map(|v| -v);
    let scalars = mobius_scalars(&neg, y, c);
    let (g_negx, gy) = mobius_add_backward(&gz, &neg, y, &scalars, c)?;
    Ok((g_negx.map(|v| -v), gy))
}

// ---------------------------------------------------------------------------
// Gyration, closed form:
//   gyr[a, b] w = w + 2 (A a + B b) / D
//   A = -c^2 <a,w>|b|^2 + c <b,w> + 2 c^2 <a,b><b,w>
//   B = -c^2 <b,w>|a|^2 - c <a,w>
//   D = 1 + 2c <a,b> + c^2 |a|^2 |b|^2
// The map is linear in w, so it also acts on tangent vectors.

struct GyrScalars {
    aw: f64,
    bw: f64,
    ab: f64,
    aa: f64,
    bb: f64,
    big_a: f64,
    big_b: f64,
    big_d: f64,
}

fn gyr_scalars(c: f64, a: &[f64], b: &[f64], w: &[f64]) -> GyrScalars {
    let aw = dot(a, w);
    let bw = dot(b, w);
    let ab = dot(a, b);
    let aa = norm_sq(a);
    let bb = norm_sq(b);
    let c2 = c * c;
    GyrScalars {
        aw,
        bw,
        ab,
        aa,
        bb,
        big_a: -c2 * aw * bb + c * bw + 2.0 * c2 * ab * bw,
        big_b: -c2 * bw * aa - c * aw,
        big_d: 1.0 + 2.0 * c * ab + c2 * aa * bb,
    }
}

pub(crate) fn gyration_row(c: f64, a: &[f64], b: &[f64], w: &[f64], out: &mut [f64]) {
    let s = gyr_scalars(c, a, b, w);
    let ka = 2.0 * s.big_a / s.big_d;
    let kb = 2.0 * s.big_b / s.big_d;
    for i in 0..w.len() {
        out[i] = w[i] + ka * a[i] + kb * b[i];
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gyration_backward_row(
    c: f64,
    u: &[f64],
    a: &[f64],
    b: &[f64],
    w: &[f64],
    ga: &mut [f64],
    gb: &mut [f64],
    gw: &mut [f64],
) {
    let s = gyr_scalars(c, a, b, w);
    let c2 = c * c;
    let ua = dot(u, a);
    let ub = dot(u, b);
    let d = s.big_d;
    let g_big_a = 2.0 * ua / d;
    let g_big_b = 2.0 * ub / d;
    let g_big_d = -2.0 * (s.big_a * ua + s.big_b * ub) / (d * d);
    let g_aw = g_big_a * (-c2 * s.bb) + g_big_b * (-c);
    let g_bw = g_big_a * (c + 2.0 * c2 * s.ab) + g_big_b * (-c2 * s.aa);
    let g_ab = g_big_a * (2.0 * c2 * s.bw) + g_big_d * (2.0 * c);
    let g_aa = g_big_b * (-c2 * s.bw) + g_big_d * (c2 * s.bb);
    let g_bb = g_big_a * (-c2 * s.aw) + g_big_d * (c2 * s.aa);
    let ka = 2.0 * s.big_a / d;
    let kb = 2.0 * s.big_b / d;
    for i in 0..u.len() {
        ga[i] = ka * u[i] + g_aw * w[i] + g_ab * b[i] + 2.0 * g_aa * a[i];
        gb[i] = kb * u[i] + g_bw * w[i] + g_ab * a[i] + 2.0 * g_bb * b[i];
        gw[i] = u[i] + g_aw * a[i] + g_bw * b[i];
    }
}

pub fn gyration(a: &Tensor, b: &Tensor, w: &Tensor, c: Curvature) -> Result<Tensor> {
    same_shape("gyration", a, b)?;
    same_shape("gyration", a, w)?;
    let n = a.last_dim();
    let mut out = vec![0.0; a.numel()];
    for (i, o) in out.chunks_exact_mut(n.max(1)).enumerate() {
        gyration_row(c.get(), a.row(i), b.row(i), w.row(i), o);
    }
    Ok(Tensor::from_parts(out, a.shape().to_vec()))
}

pub fn gyration_backward(
    u: &Tensor,
    a: &Tensor,
    b: &Tensor,
    w: &Tensor,
    c: Curvature,
) -> Result<(Tensor, Tensor, Tensor)> {
    same_shape("gyration_backward", u, a)?;
    let n = a.last_dim();
    let len = a.numel();
    let (mut ga, mut gb, mut gw) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    for i in 0..a.rows() {
        let r = i * n..(i + 1) * n;
        gyration_backward_row(
            c.get(),
            u.row(i),
            a.row(i),
            b.row(i),
            w.row(i),
            &mut ga[r.clone()],
            &mut gb[r.clone()],
            &mut gw[r],
        );
    }
    let shape = a.shape().to_vec();
    Ok((
        Tensor::from_parts(ga, shape.clone()),
        Tensor::from_parts(gb, shape.clone()),
        Tensor::from_parts(gw, shape),
    ))
}

// ---------------------------------------------------------------------------
// Parallel transport P_{x->y}(v) = (lambda_x / lambda_y) gyr[y, -x] v

pub fn parallel_transport(x: &Tensor, y: &Tensor, v: &Tensor, c: Curvature) -> Result<Tensor> {
    same_shape("parallel_transport", x, y)?;
    same_shape("parallel_transport", x, v)?;
    let cv = c.get();
    let n = x.last_dim();
    let mut out = vec![0.0; x.numel()];
    let mut neg = vec![0.0; n];
    for (i, o) in out.chunks_exact_mut(n.max(1)).enumerate() {
        let (xr, yr) = (x.row(i), y.row(i));
        for (ni, xi) in neg.iter_mut().zip(xr) {
            *ni = -xi;
        }
        gyration_row(cv, yr, &neg, v.row(i), o);
        let ratio = (1.0 - cv * norm_sq(yr)) / (1.0 - cv * norm_sq(xr));
        for oi in o.iter_mut() {
            *oi *= ratio;
        }
    }
    Ok(Tensor::from_parts(out, x.shape().to_vec()))
}

pub fn parallel_transport_backward(
    u: &Tensor,
    x: &Tensor,
    y: &Tensor,
    v: &Tensor,
    c: Curvature,
) -> Result<(Tensor, Tensor, Tensor)> {
    same_shape("parallel_transport_backward", u, x)?;
    let cv = c.get();
    let n = x.last_dim();
    let len = x.numel();
    let (mut gx, mut gy, mut gv) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let mut neg = vec![0.0; n];
    let mut gyr = vec![0.0; n];
    let mut ug = vec![0.0; n];
    let mut g_neg = vec![0.0; n];
    for i in 0..x.rows() {
        let (xr, yr, vr, ur) = (x.row(i), y.row(i), v.row(i), u.row(i));
        for (ni, xi) in neg.iter_mut().zip(xr) {
            *ni = -xi;
        }
        let bx = 1.0 - cv * norm_sq(xr);
        let by = 1.0 - cv * norm_sq(yr);
        let lx = 2.0 / bx;
        let ly = 2.0 / by;
        let ratio = lx / ly;
        gyration_row(cv, yr, &neg, vr, &mut gyr);
        let g_ratio = dot(ur, &gyr);
        for (a, b) in ug.iter_mut().zip(ur) {
            *a = ratio * b;
        }
        let r = i * n..(i + 1) * n;
        gyration_backward_row(
            cv,
            &ug,
            yr,
            &neg,
            vr,
            &mut gy[r.clone()],
            &mut g_neg,
            &mut gv[r.clone()],
        );
        let g_lx = g_ratio / ly;
        let g_ly = -g_ratio * lx / (ly * ly);
        let kx = 4.0 * cv * g_lx / (bx * bx);
        let ky = 4.0 * cv * g_ly / (by * by);
        for j in 0..n {
            gx[r.start + j] = -g_neg[j] + kx * xr[j];
            gy[r.start + j] += ky * yr[j];
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::from_parts(gx, shape.clone()),
        Tensor::from_parts(gy, shape.clone()),
        Tensor::from_parts(gv, shape),
    ))
}

// ---------------------------------------------------------------------------
// Projection onto the shell of radius (1 - EPS_BOUNDARY) / sqrt(c)

// Rows already on the shell up to rounding pass through, which keeps
// projection idempotent.
fn exceeds_shell(n: f64, rmax: f64) -> bool {
    n > rmax * (1.0 + 1e-12)
}

pub fn project(x: &Tensor, c: Curvature) -> Tensor {
    let rmax = c.max_norm();
    map_rows(x, |xr, o| {
        let n = norm_sq(xr).sqrt();
        let k = if exceeds_shell(n, rmax) {
            rmax / n
        } else {
            1.0
        };
        for (oi, xi) in o.iter_mut().zip(xr) {
            *oi = k * xi;
        }
    })
}

pub fn project_backward(u: &Tensor, x: &Tensor, c: Curvature) -> Result<Tensor> {
    let rmax = c.max_norm();
    map_rows2(u, x, |ur, xr, g| {
        let n = norm_sq(xr).sqrt();
        if !exceeds_shell(n, rmax) {
            g.copy_from_slice(ur);
            return;
        }
        let ux = dot(ur, xr);
        for i in 0..g.len() {
            g[i] = rmax * (ur[i] / n - ux * xr[i] / (n * n * n));
        }
    })
}

/// True when every point lies within the projection shell (up to rounding).
pub fn all_inside(x: &Tensor, c: Curvature) -> bool {
    let rmax = c.max_norm();
    (0..x.rows()).all(|i| !exceeds_shell(norm_sq(x.row(i)).sqrt(), rmax))
}
