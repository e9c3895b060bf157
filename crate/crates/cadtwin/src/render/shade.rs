//! Physically based shading against a directional environment: Lambertian
//! diffuse plus a GGX microfacet specular lobe. Per-channel reflectance is
//! differentiated with small forward-mode dual numbers, one derivative slot
//! per scalar input.

use std::ops::{Add, Div, Mul, Sub};

/// Forward-mode dual number with 7 derivative slots:
/// [kd_c, roughness, metallic, n.l, n.v, n.h, h.v].
#[derive(Debug, Clone, Copy)]
pub struct Dual7 {
    pub v: f64,
    pub d: [f64; 7],
}

impl Dual7 {
    pub fn constant(v: f64) -> Self {
        Dual7 { v, d: [0.0; 7] }
    }

    pub fn var(v: f64, slot: usize) -> Self {
        let mut d = [0.0; 7];
        d[slot] = 1.0;
        Dual7 { v, d }
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let k = 0.5 / s.max(1e-300);
        Dual7 {
            v: s,
            d: self.d.map(|x| x * k),
        }
    }

    pub fn powi(self, n: i32) -> Self {
        let k = n as f64 * self.v.powi(n - 1);
        Dual7 {
            v: self.v.powi(n),
            d: self.d.map(|x| x * k),
        }
    }
}

impl Add for Dual7 {
    type Output = Dual7;
    fn add(self, o: Dual7) -> Dual7 {
        let mut d = self.d;
        for i in 0..7 {
            d[i] += o.d[i];
        }
        Dual7 { v: self.v + o.v, d }
    }
}

impl Sub for Dual7 {
    type Output = Dual7;
    fn sub(self, o: Dual7) -> Dual7 {
        let mut d = self.d;
        for i in 0..7 {
            d[i] -= o.d[i];
        }
        Dual7 { v: self.v - o.v, d }
    }
}

impl Mul for Dual7 {
    type Output = Dual7;
    fn mul(self, o: Dual7) -> Dual7 {
        let mut d = [0.0; 7];
        for i in 0..7 {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual7 { v: self.v * o.v, d }
    }
}

impl Div for Dual7 {
    type Output = Dual7;
    fn div(self, o: Dual7) -> Dual7 {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut d = [0.0; 7];
        for i in 0..7 {
            d[i] = (self.d[i] - v * o.d[i]) * inv;
        }
        Dual7 { v, d }
    }
}

impl Mul<f64> for Dual7 {
    type Output = Dual7;
    fn mul(self, k: f64) -> Dual7 {
        Dual7 {
            v: self.v * k,
            d: self.d.map(|x| x * k),
        }
    }
}

impl Add<f64> for Dual7 {
    type Output = Dual7;
    fn add(self, k: f64) -> Dual7 {
        Dual7 {
            v: self.v + k,
            d: self.d,
        }
    }
}

/// Smith separable G1 term for GGX.
fn g1(x: Dual7, a2: Dual7) -> Dual7 {
    let root = (a2 + (Dual7::constant(1.0) - a2) * x * x).sqrt();
    (x * 2.0) / (x + root)
}

/// Cosine-weighted per-channel reflectance f_r(kd_c, r, m, geometry) * (n.l)
/// with its 7 partial derivatives.
pub fn brdf_cos(
    kd_c: f64,
    roughness: f64,
    metallic: f64,
    nl: f64,
    nv: f64,
    nh: f64,
    hv: f64,
    specular: bool,
) -> Dual7 {
    let kd = Dual7::var(kd_c, 0);
    let r = Dual7::var(roughness, 1);
    let m = Dual7::var(metallic, 2);
    let nl = Dual7::var(nl, 3);
    let nv = Dual7::var(nv, 4);
    let nh = Dual7::var(nh, 5);
    let hv = Dual7::var(hv, 6);
    let one = Dual7::constant(1.0);
    let diffuse = kd * (one - m) * (1.0 / std::f64::consts::PI);
    let mut out = diffuse;
    if specular {
        let a = r * r;
        let a2 = a * a;
        let t = nh * nh * (a2 - one) + 1.0;
        let d = a2 * (1.0 / std::f64::consts::PI) / (t * t);
        // Schlick Fresnel with base reflectance blended by metallic.
        let f0 = (one - m) * 0.04 + m * kd;
        let f = f0 + (one - f0) * (one - hv).powi(5);
        let g = g1(nl, a2) * g1(nv, a2);
        let spec = d * f * g / (nl * nv * 4.0);
        out = out + spec;
    }
    out * nl
}
