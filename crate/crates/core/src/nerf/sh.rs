//! Real spherical-harmonic basis up to degree 3 for viewing directions.

use super::scalar::Scalar;

pub const SH_DIM: usize = 16;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Evaluate the 16 basis functions at unit direction `d`.
pub fn encode<S: Scalar>(d: [S; 3], out: &mut [S]) {
    let c = |v: f64| S::lit(v);
    let [x, y, z] = d;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let two = c(2.0);
    let three = c(3.0);
    let four = c(4.0);
    out[0] = c(C0);
    out[1] = -c(C1) * y;
    out[2] = c(C1) * z;
    out[3] = -c(C1) * x;
    out[4] = c(C2[0]) * x * y;
    out[5] = c(C2[1]) * y * z;
    out[6] = c(C2[2]) * (two * zz - xx - yy);
    out[7] = c(C2[3]) * x * z;
    out[8] = c(C2[4]) * (xx - yy);
    out[9] = c(C3[0]) * y * (three * xx - yy);
    out[10] = c(C3[1]) * x * y * z;
    out[11] = c(C3[2]) * y * (four * zz - xx - yy);
    out[12] = c(C3[3]) * z * (two * zz - three * xx - three * yy);
    out[13] = c(C3[4]) * x * (four * zz - xx - yy);
    out[14] = c(C3[5]) * z * (xx - yy);
    out[15] = c(C3[6]) * x * (xx - three * yy);
}
