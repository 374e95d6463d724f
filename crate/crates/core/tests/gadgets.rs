mod common;

use common::*;
use proptest::prelude::*;
use zkinfer::circuit::CircuitBuilder;
use zkinfer::quant::{quantize, requantize_int};
use zkinfer::witness::{check_constraints, evaluate};
use zkinfer::{FieldConfig, QuantConfig};

fn f131() -> FieldConfig {
    FieldConfig::new(131, "f131").unwrap()
}

#[test]
fn booleanity_accepts_only_zero_and_one() {
    let f = f131();
    let mut b = CircuitBuilder::new(&f, 1);
    let x = b.input(0);
    b.assert_bool(x);
    let cs = b.finish(vec![]);
    let ok: Vec<u64> = (0..131).filter(|&v| assertions_hold(&cs, &assign(&cs, &[v], &[]))).collect();
    assert_eq!(ok, [0, 1]);
}

#[test]
fn unsigned_range_exhaustive() {
    let f = f131();
    for n in 1..=7 {
        let mut b = CircuitBuilder::new(&f, 1);
        let x = b.input(0);
        b.range_check_unsigned(x, n).unwrap();
        let cs = b.finish(vec![]);
        let bits = bound_hint_wires(&cs);
        let ok: Vec<u64> = (0..131).filter(|&v| satisfiable_with_boolean_hints(&cs, &[v], &bits)).collect();
        assert_eq!(ok, (0..1u64 << n).collect::<Vec<_>>(), "n = {n}");
    }
}

#[test]
fn width_limits() {
    let f = f131();
    let mut b = CircuitBuilder::new(&f, 1);
    let x = b.input(0);
    assert!(b.range_check_unsigned(x, 0).is_err());
    assert!(b.range_check_unsigned(x, 8).is_err());
    assert!(b.range_check_signed(x, 7).is_ok());
}

#[test]
fn relu_and_max_honest_exhaustive() {
    let f = f131();
    let kappa = 5;
    let mut b = CircuitBuilder::new(&f, 2);
    let (x, y) = (b.input(0), b.input(1));
    let r = b.relu(x, kappa).unwrap();
    let m = b.max(x, y, kappa).unwrap();
    let cs = b.finish(vec![r, m]);
    for a in -15i64..16 {
        for c in -15i64..16 {
            let w = evaluate(&cs, &[encode(131, a), encode(131, c)]).unwrap();
            assert!(check_constraints(&cs, &w).unwrap().is_empty(), "a={a} c={c}");
            assert_eq!(w.output_integers(&cs), [a.max(0), a.max(c)]);
        }
    }
}

#[test]
fn fused_relu_matches_requant_then_relu() {
    let f = FieldConfig::mersenne61();
    let q = QuantConfig::new(4, 8, 12);
    let mut b = CircuitBuilder::new(&f, 1);
    let ab = b.input(0);
    let fused = b.fused_requant_relu(ab, &q).unwrap();
    let cs = b.finish(vec![fused]);
    let fp = f.arith();
    let shift = q.shift();
    for v in -shift..shift {
        let w = evaluate(&cs, &[fp.reduce_i128(v)]).unwrap();
        assert!(check_constraints(&cs, &w).unwrap().is_empty());
        assert_eq!(w.output_integers(&cs)[0] as i128, v.div_euclid(16).max(0), "ab={v}");
    }
    // Just outside the window no witness satisfies the quotient range check.
    for v in [-shift - 1, shift] {
        let w = evaluate(&cs, &[fp.reduce_i128(v)]).unwrap();
        assert!(!check_constraints(&cs, &w).unwrap().is_empty(), "ab={v}");
    }
}

proptest! {
    #[test]
    fn requantize_int_matches_floor(ab in -(1i128 << 47)..(1i128 << 47)) {
        let q = QuantConfig::new(16, 32, 32);
        let r = requantize_int(ab, &q).unwrap();
        prop_assert_eq!(r.q as i128, ab.div_euclid(1 << 16));
        prop_assert_eq!(r.r as i128, ab.rem_euclid(1 << 16));
        prop_assert_eq!(r.q_sharp as i128, r.q as i128 + (1i128 << 31));
    }

    #[test]
    fn quantize_floors(z in -100.0f64..100.0) {
        let q = QuantConfig::new(10, 32, 32);
        let t = quantize(&[z], &[1], &q).unwrap();
        let v = t.data[0] as f64;
        prop_assert!(v <= z * 1024.0 && z * 1024.0 < v + 1.0);
    }

    #[test]
    fn field_encode_decode(x in -(1i64 << 59)..(1i64 << 59)) {
        let fp = FieldConfig::mersenne61().arith();
        prop_assert_eq!(fp.decode(fp.encode(x as i128).unwrap()), x);
    }

    #[test]
    fn field_mul_matches_u128(a in 0u64..(1u64 << 61) - 1, b in 0u64..(1u64 << 61) - 1) {
        let fp = FieldConfig::mersenne61().arith();
        prop_assert_eq!(fp.mul(a, b) as u128, a as u128 * b as u128 % ((1u128 << 61) - 1));
    }
}
