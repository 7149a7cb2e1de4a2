//! Brute-force oracles over the full configuration space `Ω_{L,N}`.

#![allow(dead_code)]

use pdlab::WeightFamily;

/// Every occupation vector of `l` sites holding `n` particles.
pub fn configurations(l: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(l: usize, n: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if l == 1 {
            prefix.push(n);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=n {
            prefix.push(k);
            rec(l - 1, n - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if l > 0 {
        rec(l, n, &mut Vec::new(), &mut out);
    }
    out
}

/// Unnormalized weight `Π w_L(η_x)` in linear space.
pub fn weight(family: &WeightFamily, size: usize, eta: &[usize]) -> f64 {
    eta.iter().map(|&k| family.weight(size, k)).product()
}

/// Exact canonical quantities obtained by summing over `Ω_{L,N}`.
pub struct Enumerated {
    pub z: f64,
    pub single_site: Vec<f64>,
    pub size_biased: Vec<f64>,
    pub pair_zero: f64,
    pub states: Vec<(Vec<usize>, f64)>,
}

pub fn enumerate(family: &WeightFamily, size: usize, l: usize, n: usize) -> Enumerated {
    let states: Vec<(Vec<usize>, f64)> = configurations(l, n)
        .into_iter()
        .map(|eta| {
            let w = weight(family, size, &eta);
            (eta, w)
        })
        .collect();
    let z: f64 = states.iter().map(|(_, w)| w).sum();
    let mut single_site = vec![0.0; n + 1];
    let mut size_biased = vec![0.0; n + 1];
    let mut pair_zero = 0.0;
    for (eta, w) in &states {
        let p = w / z;
        single_site[eta[0]] += p;
        // pick a particle uniformly, record its site's occupancy
        if n > 0 {
            for &k in eta {
                size_biased[k] += p * k as f64 / n as f64;
            }
        }
        if l >= 2 && eta[0] == 0 && eta[1] == 0 {
            pair_zero += p;
        }
    }
    Enumerated {
        z,
        single_site,
        size_biased,
        pair_zero,
        states,
    }
}

pub fn inclusion() -> WeightFamily {
    WeightFamily::inclusion(0.5).unwrap()
}

pub fn bulk_uniform() -> WeightFamily {
    WeightFamily::bulk_tail(1.0, vec![0.5, 0.5]).unwrap()
}

pub fn flat3() -> WeightFamily {
    WeightFamily::uniform_table(vec![1.0, 1.0, 1.0]).unwrap()
}
