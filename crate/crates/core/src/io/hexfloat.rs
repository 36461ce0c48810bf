//! Hexadecimal float literals (`-0x1.8p+1`) for bit-exact text round trips.
//!
//! Only the canonical form produced by [`format`] is parsed: a leading digit
//! of 1 (normal) or 0 (zero and subnormals, exponent -1022), at most 13
//! fraction digits. `inf`, `-inf` and `nan` are spelled out.

use crate::error::{Error, Result};

const MANT_BITS: u32 = 52;
const MANT_MASK: u64 = (1 << MANT_BITS) - 1;

pub fn format(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> MANT_BITS) & 0x7ff) as i32;
    let mant = bits & MANT_MASK;
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let digits = format!("{mant:013x}");
    let frac = digits.trim_end_matches('0');
    if frac.is_empty() {
        format!("{sign}0x{lead}p{e:+}")
    } else {
        format!("{sign}0x{lead}.{frac}p{e:+}")
    }
}

pub fn parse(text: &str) -> Result<f64> {
    let bad = || Error::format(format!("invalid hex float {text:?}"));
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let sign = if neg { 1u64 << 63 } else { 0 };
    match body {
        "inf" => return Ok(f64::from_bits(sign | (0x7ffu64 << MANT_BITS))),
        "nan" if !neg => return Ok(f64::NAN),
        _ => {}
    }
    let body = body.strip_prefix("0x").ok_or_else(bad)?;
    let (mantissa, exponent) = body.split_once('p').ok_or_else(bad)?;
    let e: i32 = exponent.parse().map_err(|_| bad())?;
    if !(exponent.starts_with('+') || exponent.starts_with('-')) {
        return Err(bad());
    }
    let (lead, frac) = match mantissa.split_once('.') {
        Some((l, f)) if !f.is_empty() => (l, f),
        Some(_) => return Err(bad()),
        None => (mantissa, ""),
    };
    if frac.len() > 13 || !frac.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(bad());
    }
    let mant = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).map_err(|_| bad())? << (4 * (13 - frac.len()))
    };
    let bits = match lead {
        "1" if (-1022..=1023).contains(&e) => ((e + 1023) as u64) << MANT_BITS | mant,
        "0" if mant == 0 && e == 0 => 0,
        "0" if mant != 0 && e == -1022 => mant,
        _ => return Err(bad()),
    };
    Ok(f64::from_bits(sign | bits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_literals() {
        assert_eq!(format(1.0), "0x1p+0");
        assert_eq!(format(3.0), "0x1.8p+1");
        assert_eq!(format(-0.5), "-0x1p-1");
        assert_eq!(format(0.0), "0x0p+0");
        assert_eq!(format(-0.0), "-0x0p+0");
        assert_eq!(format(0.1), "0x1.999999999999ap-4");
        assert_eq!(format(f64::MIN_POSITIVE / 2.0), "0x0.8p-1022");
        assert_eq!(format(f64::INFINITY), "inf");
    }

    #[test]
    fn round_trips_edge_values() {
        for x in [
            0.0,
            -0.0,
            1.0,
            0.1,
            1e-300,
            f64::MAX,
            f64::MIN_POSITIVE,
            5e-324,
            -123.456,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ] {
            assert_eq!(parse(&format(x)).unwrap().to_bits(), x.to_bits(), "{x}");
        }
        assert!(parse("nan").unwrap().is_nan());
    }

    #[test]
    fn rejects_non_canonical() {
        for s in ["", "1.0", "0x2p+0", "0x1.p+0", "0x1p0", "0x1.0000000000000fp+0", "0x1p+1024", "0x0.8p+0"] {
            assert!(parse(s).is_err(), "{s}");
        }
    }
}
