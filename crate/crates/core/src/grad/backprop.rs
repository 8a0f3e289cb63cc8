//! Per-layer reverse passes. Each kernel takes `Γ = ∂ℒ/∂(layer output)`,
//! accumulates data-term gradients into a zero-initialized mirror of the
//! layer, and optionally returns `∂ℒ/∂(layer input)`.

use crate::error::{Error, Result};
use crate::matlin::{add_assign, gemm_nt_acc, gemm_tn_acc, Flops, Matrix};
use crate::net::{
    col_as_matrix, row_as_matrix, Activation, Cache, Combine, DenseCache, DenseLayer, KdlCache, KdlLayer, KmlCache,
    KmlLayer, Layer,
};

/// `g ∘ φ′(z)`; one flop per entry.
fn times_deriv(mut g: Matrix, z: &Matrix, phi: Activation, flops: &mut Flops) -> Matrix {
    phi.backprop_in_place(z, &mut g);
    flops.add(g.len());
    g
}

fn state_err(detail: impl Into<String>) -> Error {
    Error::State(detail.into())
}

pub(crate) fn dense_backward(
    layer: &DenseLayer,
    cache: &DenseCache,
    gamma: &Matrix,
    phi: Activation,
    grad: &mut DenseLayer,
    need_input_grad: bool,
    flops: &mut Flops,
) -> Result<Option<Matrix>> {
    if cache.a.shape() != (layer.w.cols(), 1) || cache.z.shape() != (layer.w.rows(), 1) {
        return Err(state_err("dense cache does not match layer shape"));
    }
    if gamma.shape() != cache.z.shape() {
        return Err(Error::shape("dense backprop Γ", gamma.shape(), cache.z.shape()));
    }
    let delta = times_deriv(gamma.clone(), &cache.z, phi, flops);
    gemm_nt_acc(&delta, &cache.a, &mut grad.w, flops);
    add_assign(&mut grad.b, &delta, flops);
    Ok(need_input_grad.then(|| {
        let mut g = Matrix::zeros(layer.w.cols(), 1);
        gemm_tn_acc(&layer.w, &delta, &mut g, flops);
        g
    }))
}

/// Outer-activation sensitivities per summand: shared under
/// [`Combine::ActivateSum`], separate under [`Combine::ActivateEach`].
fn outer_deltas(
    gamma: &Matrix,
    z: &[&Matrix],
    z_sum: Option<&Matrix>,
    phi: Activation,
    combine: Combine,
    flops: &mut Flops,
) -> Result<Vec<Matrix>> {
    match (combine, z_sum) {
        (Combine::ActivateSum, Some(s)) => {
            let d = times_deriv(gamma.clone(), s, phi, flops);
            Ok(vec![d; z.len()])
        }
        (Combine::ActivateEach, None) => Ok(z.iter().map(|zi| times_deriv(gamma.clone(), zi, phi, flops)).collect()),
        _ => Err(state_err("cache was produced under a different combine mode")),
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn kdl_backward(
    layer: &KdlLayer,
    cache: &KdlCache,
    gamma: &Matrix,
    outer: Activation,
    inner: Activation,
    combine: Combine,
    grad: &mut KdlLayer,
    need_input_grad: bool,
    flops: &mut Flops,
) -> Result<Option<Matrix>> {
    let k = layer.rank();
    if cache.z_r.len() != k || cache.z_l.len() != k || cache.a_l.len() != k || grad.rank() != k {
        return Err(state_err(format!(
            "KDL cache holds {} summands, layer has {k}",
            cache.z_r.len()
        )));
    }
    if cache.a.shape() != layer.input_shape() {
        return Err(state_err("KDL cache input does not match layer shape"));
    }
    if gamma.shape() != layer.output_shape() {
        return Err(Error::shape("KDL backprop Γ", gamma.shape(), layer.output_shape()));
    }
    let z: Vec<&Matrix> = cache.z_r.iter().collect();
    let d1 = outer_deltas(gamma, &z, cache.z_sum.as_ref(), outer, combine, flops)?;
    let (p, q) = layer.input_shape();
    let mut gamma_out = need_input_grad.then(|| Matrix::zeros(p, q));
    for (i, (s, g)) in layer.summands.iter().zip(grad.summands.iter_mut()).enumerate() {
        if cache.z_l[i].shape() != s.b_l.shape() {
            return Err(Error::shape(
                format!("KDL summand {i} cache"),
                cache.z_l[i].shape(),
                s.b_l.shape(),
            ));
        }
        let delta1 = &d1[i];
        gemm_nt_acc(delta1, &cache.a_l[i], &mut g.w_r, flops);
        add_assign(&mut g.b_r, delta1, flops);
        let mut back = Matrix::zeros(s.w_r.cols(), delta1.cols());
        gemm_tn_acc(&s.w_r, delta1, &mut back, flops);
        let delta2 = times_deriv(back, &cache.z_l[i], inner, flops);
        gemm_tn_acc(&cache.a, &delta2, &mut g.w_l, flops);
        add_assign(&mut g.b_l, &delta2, flops);
        if let Some(go) = gamma_out.as_mut() {
            gemm_nt_acc(&delta2, &s.w_l, go, flops);
        }
    }
    Ok(gamma_out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn kml_backward(
    layer: &KmlLayer,
    cache: &KmlCache,
    gamma: &Matrix,
    outer: Activation,
    inner: Activation,
    combine: Combine,
    grad: &mut KmlLayer,
    need_input_grad: bool,
    flops: &mut Flops,
) -> Result<Option<Matrix>> {
    let k = layer.rank();
    if cache.branches.len() != k || grad.rank() != k {
        return Err(state_err(format!(
            "KML cache holds {} branches, layer has {k}",
            cache.branches.len()
        )));
    }
    if cache.a.shape() != layer.input.shape() {
        return Err(state_err("KML cache input does not match layer shape"));
    }
    if gamma.shape() != layer.output.shape() {
        return Err(Error::shape("KML backprop Γ", gamma.shape(), layer.output.shape()));
    }
    let (p1, p2) = layer.input.rows;
    let (q1, q2) = layer.input.cols;
    let (u1, u2) = layer.output.rows;
    let (v1, v2) = layer.output.cols;
    let (p, v) = (p1 * p2, v1 * v2);

    let z: Vec<&Matrix> = cache.branches.iter().map(|b| &b.z4).collect();
    let d4 = outer_deltas(gamma, &z, cache.z_sum.as_ref(), outer, combine, flops)?;
    let mut gamma_out = need_input_grad.then(|| Matrix::zeros(p, q1 * q2));

    for (i, (br, gbr)) in layer.branches.iter().zip(grad.branches.iter_mut()).enumerate() {
        let bc = &cache.branches[i];
        if bc.z1.len() != p || bc.z3.len() != v {
            return Err(state_err(format!("KML branch {i} cache has wrong slice counts")));
        }
        let mut d_a2 = Matrix::zeros(p, v);
        for (c, (st, gst)) in br.cols.iter().zip(gbr.cols.iter_mut()).enumerate() {
            let g4 = col_as_matrix(&d4[i], c, u1, u2);
            gemm_nt_acc(&g4, &bc.a3[c], &mut gst.w4, flops);
            add_assign(&mut gst.b4, &g4, flops);
            let mut d_a3 = Matrix::zeros(p1, u2);
            gemm_tn_acc(&st.w4, &g4, &mut d_a3, flops);
            let g3 = times_deriv(d_a3, &bc.z3[c], inner, flops);
            let n = col_as_matrix(&bc.a2, c, p1, p2);
            gemm_tn_acc(&n, &g3, &mut gst.w3, flops);
            add_assign(&mut gst.b3, &g3, flops);
            let mut d_n = Matrix::zeros(p1, p2);
            gemm_nt_acc(&g3, &st.w3, &mut d_n, flops);
            d_a2.col_mut(c).copy_from_slice(d_n.as_slice());
        }
        for (j, (st, gst)) in br.rows.iter().zip(gbr.rows.iter_mut()).enumerate() {
            let row: Vec<f64> = (0..v).map(|c| d_a2.get(j, c)).collect();
            let g2 = Matrix::from_col_major(v1, v2, row)
                .map_err(|_| Error::NonFinite(format!("KML branch {i} sensitivities")))?;
            let g2 = times_deriv(g2, &bc.z2[j], inner, flops);
            gemm_nt_acc(&g2, &bc.a1[j], &mut gst.w2, flops);
            add_assign(&mut gst.b2, &g2, flops);
            let mut d_a1 = Matrix::zeros(q1, v2);
            gemm_tn_acc(&st.w2, &g2, &mut d_a1, flops);
            let g1 = times_deriv(d_a1, &bc.z1[j], inner, flops);
            let m = row_as_matrix(&cache.a, j, q1, q2);
            gemm_tn_acc(&m, &g1, &mut gst.w1, flops);
            add_assign(&mut gst.b1, &g1, flops);
            if let Some(go) = gamma_out.as_mut() {
                let mut d_m = Matrix::zeros(q1, q2);
                gemm_nt_acc(&g1, &st.w1, &mut d_m, flops);
                for (c, &val) in d_m.as_slice().iter().enumerate() {
                    go.set(j, c, go.get(j, c) + val);
                }
                flops.add(d_m.len());
            }
        }
    }
    Ok(gamma_out)
}

/// Dispatches to the kernel for the layer family.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_backward(
    layer: &Layer,
    cache: &Cache,
    gamma: &Matrix,
    outer: Activation,
    inner: Activation,
    combine: Combine,
    grad: &mut Layer,
    need_input_grad: bool,
    flops: &mut Flops,
) -> Result<Option<Matrix>> {
    match (layer, cache, grad) {
        (Layer::Dense(l), Cache::Dense(c), Layer::Dense(g)) => {
            dense_backward(l, c, gamma, outer, g, need_input_grad, flops)
        }
        (Layer::Kdl(l), Cache::Kdl(c), Layer::Kdl(g)) => {
            kdl_backward(l, c, gamma, outer, inner, combine, g, need_input_grad, flops)
        }
        (Layer::Kml(l), Cache::Kml(c), Layer::Kml(g)) => {
            kml_backward(l, c, gamma, outer, inner, combine, g, need_input_grad, flops)
        }
        _ => Err(state_err("cache or gradient family does not match the layer")),
    }
}

/// Single-layer KDL reverse pass: returns the layer's data gradients and
/// `∂ℒ/∂A` for the layer input.
pub fn kdl_backprop(
    layer: &KdlLayer,
    cache: &KdlCache,
    gamma_in: &Matrix,
    phi1: Activation,
    phi2: Activation,
    combine: Combine,
    flops: &mut Flops,
) -> Result<(KdlLayer, Matrix)> {
    let Layer::Kdl(mut grad) = Layer::Kdl(layer.clone()).zeros_like() else {
        unreachable!()
    };
    let out = kdl_backward(layer, cache, gamma_in, phi1, phi2, combine, &mut grad, true, flops)?;
    Ok((grad, out.expect("input gradient requested")))
}

/// Single-layer KML reverse pass.
pub fn kml_backprop(
    layer: &KmlLayer,
    cache: &KmlCache,
    gamma_in: &Matrix,
    phi1: Activation,
    phi2: Activation,
    combine: Combine,
    flops: &mut Flops,
) -> Result<(KmlLayer, Matrix)> {
    let Layer::Kml(mut grad) = Layer::Kml(layer.clone()).zeros_like() else {
        unreachable!()
    };
    let out = kml_backward(layer, cache, gamma_in, phi1, phi2, combine, &mut grad, true, flops)?;
    Ok((grad, out.expect("input gradient requested")))
}
