//! Real spherical harmonics up to degree 4 (16 coefficients), evaluated as
//! polynomials in the direction components.

pub const MAX_DEGREE: usize = 4;

const C0: f64 = 0.28209479177387814;
const C1: f64 = 0.4886025119029199;
const C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

/// Writes the `degree^2` basis values for direction `d` into `out`.
pub fn eval(degree: usize, d: [f64; 3], out: &mut [f64]) {
    let [x, y, z] = d;
    out[0] = C0;
    if degree < 2 {
        return;
    }
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if degree < 3 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = C2[0] * x * y;
    out[5] = C2[1] * y * z;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * x * z;
    out[8] = C2[4] * (xx - yy);
    if degree < 4 {
        return;
    }
    out[9] = C3[0] * y * (3.0 * xx - yy);
    out[10] = C3[1] * x * y * z;
    out[11] = C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3.0 * yy);
}

/// Gradient of `sum_k gout[k] * Y_k(d)` with respect to `d`.
pub fn backward(degree: usize, d: [f64; 3], gout: &[f64]) -> [f64; 3] {
    let [x, y, z] = d;
    let mut g = [0.0; 3];
    let mut acc = |k: usize, gx: f64, gy: f64, gz: f64| {
        g[0] += gout[k] * gx;
        g[1] += gout[k] * gy;
        g[2] += gout[k] * gz;
    };
    if degree < 2 {
        return [0.0; 3];
    }
    acc(1, 0.0, -C1, 0.0);
    acc(2, 0.0, 0.0, C1);
    acc(3, -C1, 0.0, 0.0);
    if degree >= 3 {
        acc(4, C2[0] * y, C2[0] * x, 0.0);
        acc(5, 0.0, C2[1] * z, C2[1] * y);
        acc(6, -2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z);
        acc(7, C2[3] * z, 0.0, C2[3] * x);
        acc(8, 2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0);
    }
    if degree >= 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        acc(9, C3[0] * 6.0 * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0);
        acc(10, C3[1] * y * z, C3[1] * x * z, C3[1] * x * y);
        acc(11, C3[2] * -2.0 * x * y, C3[2] * (4.0 * zz - xx - 3.0 * yy), C3[2] * 8.0 * y * z);
        acc(12, C3[3] * -6.0 * x * z, C3[3] * -6.0 * y * z, C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy));
        acc(13, C3[4] * (4.0 * zz - 3.0 * xx - yy), C3[4] * -2.0 * x * y, C3[4] * 8.0 * x * z);
        acc(14, C3[5] * 2.0 * x * z, C3[5] * -2.0 * y * z, C3[5] * (xx - yy));
        acc(15, C3[6] * (3.0 * xx - 3.0 * yy), C3[6] * -6.0 * x * y, 0.0);
    }
    g
}
