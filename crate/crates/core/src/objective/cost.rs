use crate::autodiff::{Tape, Var};
use crate::metrics::{MsSsimParams, SsimParams};
use crate::scalar::Scalar;

/// Per-plane mean SSIM (when `with_luminance`) or mean contrast-structure
/// term, `[N, C, H, W] -> [N, C]`.
fn plane_terms<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var, p: &SsimParams, with_luminance: bool) -> Var {
    let k: Vec<T> = p.kernel().into_iter().map(T::of).collect();
    let (c1, c2) = (T::of(p.c1()), T::of(p.c2()));
    let two = T::of(2.0);
    let mu_a = tape.gauss_valid(a, k.clone());
    let mu_b = tape.gauss_valid(b, k.clone());
    let aa = tape.mul(a, a);
    let bb = tape.mul(b, b);
    let ab = tape.mul(a, b);
    let e_aa = tape.gauss_valid(aa, k.clone());
    let e_bb = tape.gauss_valid(bb, k.clone());
    let e_ab = tape.gauss_valid(ab, k);
    let mu_aa = tape.mul(mu_a, mu_a);
    let mu_bb = tape.mul(mu_b, mu_b);
    let mu_ab = tape.mul(mu_a, mu_b);
    let var_a = tape.sub(e_aa, mu_aa);
    let var_b = tape.sub(e_bb, mu_bb);
    let cov = tape.sub(e_ab, mu_ab);
    let cov2 = tape.scale(cov, two);
    let cs_num = tape.add_scalar(cov2, c2);
    let var_sum = tape.add(var_a, var_b);
    let cs_den = tape.add_scalar(var_sum, c2);
    let mut map = tape.div(cs_num, cs_den);
    if with_luminance {
        let m2 = tape.scale(mu_ab, two);
        let l_num = tape.add_scalar(m2, c1);
        let m_sum = tape.add(mu_aa, mu_bb);
        let l_den = tape.add_scalar(m_sum, c1);
        let l = tape.div(l_num, l_den);
        map = tape.mul(l, map);
    }
    tape.mean_hw(map)
}

/// Differentiable MS-SSIM per plane, `[N, C, H, W] -> [N, C]`. Agrees with
/// [`crate::metrics::ms_ssim`]; callers validate extents beforehand.
pub fn ms_ssim_on_tape<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var, p: &MsSsimParams) -> Var {
    let (mut a, mut b) = (a, b);
    let mut value: Option<Var> = None;
    let last = p.scales() - 1;
    for (s, &w) in p.scale_weights.iter().enumerate() {
        let term = plane_terms(tape, a, b, &p.base, s == last);
        let r = tape.relu(term);
        let f = tape.pow_const(r, T::of(w));
        value = Some(match value {
            Some(v) => tape.mul(v, f),
            None => f,
        });
        if s < last {
            a = tape.avg_pool2(a);
            b = tape.avg_pool2(b);
        }
    }
    value.expect("at least one scale")
}

/// Batch mean of `1 - ms_ssim` (channels averaged per image).
pub fn ms_ssim_cost_on_tape<T: Scalar>(tape: &mut Tape<T>, y: Var, gy: Var, p: &MsSsimParams) -> Var {
    let ms = ms_ssim_on_tape(tape, y, gy, p);
    let m = tape.mean_all(ms);
    let neg = tape.scale(m, -T::one());
    tape.add_scalar(neg, T::one())
}

/// Batch mean of the squared Euclidean distance between rows.
pub fn squared_distance_on_tape<T: Scalar>(tape: &mut Tape<T>, y: Var, gy: Var) -> Var {
    let n = tape.shape(y)[0];
    let d = tape.sub(gy, y);
    let sq = tape.square(d);
    let s = tape.sum_all(sq);
    tape.scale(s, T::one() / T::of(n as f64))
}
