//! Double-double reference for the break-even flash increment.
#![allow(dead_code)]

use face_sim::analysis::{break_even_theta, BreakEvenParams};
use twofloat::TwoFloat;

pub const EXPONENTS: [f64; 10] = [1.0001, 1.006, 1.0146, 1.025, 1.0574, 1.1, 1.5, 2.0, 3.0, 5.0];
pub const DELTAS: [f64; 10] = [1e-9, 1e-6, 1e-4, 1e-3, 0.01, 0.05, 0.1, 0.5, 1.0, 4.0];

pub fn params(delta: f64, exponent: f64) -> BreakEvenParams {
    let c_disk = 5e-3;
    BreakEvenParams {
        delta,
        c_disk,
        c_flash: c_disk * (1.0 - 1.0 / exponent),
        alpha: 0.05,
        b: 1000.0,
    }
}

/// The 100-point grid: every delta against every exponent.
pub fn grid() -> Vec<BreakEvenParams> {
    EXPONENTS
        .iter()
        .flat_map(|&x| DELTAS.iter().map(move |&d| params(d, x)))
        .collect()
}

pub fn oracle(p: &BreakEvenParams) -> f64 {
    let c_disk = TwoFloat::from(p.c_disk);
    let diff = TwoFloat::new_add(p.c_disk, -p.c_flash);
    let e = c_disk / diff;
    let l = TwoFloat::from(p.delta).ln_1p();
    (e * l).exp_m1().hi()
}

/// Largest relative error over the grid, with the point where it occurs.
pub fn max_rel_err() -> (f64, BreakEvenParams) {
    grid()
        .into_iter()
        .map(|p| {
            let want = oracle(&p);
            let got = break_even_theta(&p).expect("valid grid point");
            ((got - want).abs() / want.abs(), p)
        })
        .fold((0.0, params(0.0, 1.0001)), |a, b| if b.0 > a.0 { b } else { a })
}

/// theta rises with delta and with the flash access time, and never falls
/// below delta.
pub fn monotone() -> Result<(), String> {
    for &x in &EXPONENTS {
        let mut prev = 0.0;
        for i in 0..=200 {
            let d = 5.0 * i as f64 / 200.0;
            let t = break_even_theta(&params(d, x)).map_err(|e| e.to_string())?;
            if t < prev || t < d {
                return Err(format!("exponent {x}: theta({d}) = {t}, previous {prev}"));
            }
            prev = t;
        }
    }
    for &d in &DELTAS {
        let mut prev = 0.0;
        for i in 1..200 {
            let p = BreakEvenParams {
                c_flash: 5e-3 * i as f64 / 200.0,
                ..params(d, 2.0)
            };
            let t = break_even_theta(&p).map_err(|e| e.to_string())?;
            if t < prev {
                return Err(format!("delta {d}: theta falls to {t} at c_flash {}", p.c_flash));
            }
            prev = t;
        }
    }
    Ok(())
}
