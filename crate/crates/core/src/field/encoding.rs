//! Sinusoidal positional encodings.

/// Encode `v` as `[v?, sin(2^k pi v_i)..., cos(2^k pi v_i)...]` for
/// `k = 0..num_freqs`. With `num_freqs == 0` and `include_input` the
/// encoding is the identity.
pub fn positional_encoding(v: &[f64], num_freqs: usize, include_input: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_len(v.len(), num_freqs, include_input));
    if include_input {
        out.extend_from_slice(v);
    }
    for k in 0..num_freqs {
        let scale = (1u64 << k) as f64 * std::f64::consts::PI;
        for &x in v {
            out.push((scale * x).sin());
        }
        for &x in v {
            out.push((scale * x).cos());
        }
    }
    out
}

pub fn encoded_len(n: usize, num_freqs: usize, include_input: bool) -> usize {
    n * 2 * num_freqs + if include_input { n } else { 0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_freqs_with_input_is_identity() {
        let v = [0.3, -0.7, 1.0];
        assert_eq!(positional_encoding(&v, 0, true), v.to_vec());
    }

    #[test]
    fn zero_vector_encodes_to_zeros_and_ones() {
        let enc = positional_encoding(&[0.0, 0.0], 3, false);
        for k in 0..3 {
            for i in 0..2 {
                assert_eq!(enc[k * 4 + i], 0.0);
                assert_eq!(enc[k * 4 + 2 + i], 1.0);
            }
        }
    }

    #[test]
    fn output_length_formula() {
        for n in [1usize, 3, 5] {
            for f in [0usize, 1, 4] {
                for inc in [false, true] {
                    let v = vec![0.1; n];
                    assert_eq!(positional_encoding(&v, f, inc).len(), encoded_len(n, f, inc));
                }
            }
        }
    }
}
