//! Image-space data terms: robust color reconstruction over foreground
//! pixels and a dense squared mask consistency term.

use crate::render::Image;
use crate::{Error, Result};

pub const HUBER_DELTA: f64 = 0.1;

fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn huber_deriv(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r
    } else {
        delta * r.signum()
    }
}

/// Mean Huber penalty between rendered and observed color over pixels where
/// `observed_mask` > 0.5, per channel. Returns the energy and whether the
/// foreground was empty (energy 0, gradient untouched).
pub fn color_energy(
    rendered: &Image,
    observed: &Image,
    observed_mask: &Image,
    grad: Option<&mut Image>,
) -> Result<(f64, bool)> {
    if rendered.width != observed.width
        || rendered.height != observed.height
        || rendered.channels != observed.channels
        || observed_mask.pixel_count() != rendered.pixel_count()
    {
        return Err(Error::Invalid("color energy image size mismatch".into()));
    }
    let fg: Vec<usize> = (0..rendered.pixel_count())
        .filter(|&p| observed_mask.data[p] > 0.5)
        .collect();
    if fg.is_empty() {
        log::warn!("color energy: empty observed foreground");
        return Ok((0.0, true));
    }
    let n = (fg.len() * rendered.channels) as f64;
    let mut e = 0.0;
    for &p in &fg {
        for c in 0..rendered.channels {
            let i = p * rendered.channels + c;
            e += huber(rendered.data[i] - observed.data[i], HUBER_DELTA) / n;
        }
    }
    if let Some(g) = grad {
        for &p in &fg {
            for c in 0..rendered.channels {
                let i = p * rendered.channels + c;
                g.data[i] += huber_deriv(rendered.data[i] - observed.data[i], HUBER_DELTA) / n;
            }
        }
    }
    Ok((e, false))
}

/// Mean squared difference between soft masks over all pixels.
pub fn mask_energy(rendered: &Image, observed: &Image, grad: Option<&mut Image>) -> Result<f64> {
    if rendered.pixel_count() != observed.pixel_count() {
        return Err(Error::Invalid("mask energy size mismatch".into()));
    }
    let n = rendered.pixel_count() as f64;
    let mut e = 0.0;
    for i in 0..rendered.data.len() {
        let d = rendered.data[i] - observed.data[i];
        e += d * d / n;
    }
    if let Some(g) = grad {
        for i in 0..rendered.data.len() {
            g.data[i] += 2.0 * (rendered.data[i] - observed.data[i]) / n;
        }
    }
    Ok(e)
}
