//! Spectral filtering of a diagonal-plus-rank-one matrix `D + ρ zzᵀ` through
//! the secular equation `1 + ρ Σ z_i² / (d_i − e) = 0`.
//!
//! [`filter_rank_one`] returns `Σ_j g(e_j) u_j u_jᵀ z` over the eigenpairs
//! `(e_j, u_j)` with `e_j` above a cutoff. No eigenvector is formed: with
//! `u_j ∝ (D − e_j)⁻¹ z` every term reduces to scalar sums over the poles,
//! so the cost is `O(m·k)` for `m` poles and `k` retained roots.

/// Output of [`filter_rank_one`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredUpdate {
    /// `Σ_j g(e_j) u_j u_jᵀ z`, in the coordinates of the poles.
    pub z: Vec<f64>,
    /// Every eigenvalue above the cutoff, descending.
    pub eigenvalues: Vec<f64>,
}

struct Cluster {
    rep: f64,
    weight: f64,
    members: Vec<usize>,
}

struct Root {
    origin: usize,
    tau: f64,
}

/// `poles` must be ascending and `rho` positive. Components of `z` too small
/// to move an eigenvalue at working precision are deflated, as are repeated
/// poles; both keep their pole as an eigenvalue.
pub fn filter_rank_one(
    poles: &[f64],
    z: &[f64],
    rho: f64,
    cutoff: f64,
    gain: impl Fn(f64) -> f64,
) -> FilteredUpdate {
    assert_eq!(poles.len(), z.len(), "one weight per pole");
    assert!(rho > 0.0, "rank-one weight must be positive");
    debug_assert!(poles.windows(2).all(|w| w[0] <= w[1]), "poles must be ascending");

    let m = poles.len();
    let z2: f64 = z.iter().map(|v| v * v).sum();
    let znorm = z2.sqrt();
    let top_pole = poles.last().map_or(0.0, |d| d.abs());
    let scale = top_pole.max(rho * z2);
    let mut out = vec![0.0; m];
    let mut eigenvalues = Vec::new();
    if scale == 0.0 {
        return FilteredUpdate { z: out, eigenvalues };
    }
    let tol = 8.0 * f64::EPSILON * scale;

    let mut clusters: Vec<Cluster> = Vec::new();
    for i in 0..m {
        if rho * z[i].abs() * znorm <= tol {
            if poles[i] > cutoff {
                eigenvalues.push(poles[i]);
                out[i] = gain(poles[i]) * z[i];
            }
            continue;
        }
        match clusters.last_mut() {
            Some(c) if poles[i] - c.rep <= tol => {
                c.weight += z[i] * z[i];
                c.members.push(i);
            }
            _ => clusters.push(Cluster {
                rep: poles[i],
                weight: z[i] * z[i],
                members: vec![i],
            }),
        }
    }
    for c in &clusters {
        if c.rep > cutoff {
            eigenvalues.extend(std::iter::repeat_n(c.rep, c.members.len() - 1));
        }
    }

    let reps: Vec<f64> = clusters.iter().map(|c| c.rep).collect();
    let weights: Vec<f64> = clusters.iter().map(|c| c.weight).collect();
    let total: f64 = weights.iter().sum();
    let k = clusters.len();

    let mut roots = Vec::new();
    for j in 0..k {
        let hi = if j + 1 < k { reps[j + 1] } else { reps[j] + rho * total };
        if hi <= cutoff {
            continue;
        }
        let root = solve_interval(&reps, &weights, rho, j);
        if reps[root.origin] + root.tau > cutoff {
            roots.push(root);
        }
    }

    // u_j = (D − e_j)⁻¹ z / n_j and u_jᵀ z = −1 / (ρ n_j), so the filtered
    // vector is z_i Σ_j κ_j / (d_i − e_j) with κ_j = −g(e_j) / (ρ n_j²).
    let mut kappa = Vec::with_capacity(roots.len());
    for r in &roots {
        let o = reps[r.origin];
        let norm2: f64 = reps
            .iter()
            .zip(&weights)
            .map(|(&d, &w)| {
                let gap = (d - o) - r.tau;
                w / (gap * gap)
            })
            .sum();
        let e = o + r.tau;
        kappa.push(-gain(e) / (rho * norm2));
        eigenvalues.push(e);
    }
    for cl in &clusters {
        let factor: f64 = roots
            .iter()
            .zip(&kappa)
            .map(|(r, kap)| kap / ((cl.rep - reps[r.origin]) - r.tau))
            .sum();
        for &i in &cl.members {
            out[i] = z[i] * factor;
        }
    }
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    FilteredUpdate { z: out, eigenvalues }
}

/// Root in `(reps[j], reps[j+1])`, or above the last pole, expressed relative
/// to the nearer pole so that roots hugging a pole keep full precision.
fn solve_interval(reps: &[f64], weights: &[f64], rho: f64, j: usize) -> Root {
    let k = reps.len();
    let last = j + 1 == k;
    let eval = |origin: usize, t: f64| secular_parts(reps, weights, rho, origin, j, t);

    let (origin, mut a, mut b) = if last {
        let total: f64 = weights.iter().sum();
        (j, 0.0, rho * total)
    } else {
        let gap = reps[j + 1] - reps[j];
        let half = 0.5 * gap;
        if eval(j, half).value >= 0.0 {
            (j, 0.0, half)
        } else {
            (j + 1, half - gap, 0.0)
        }
    };
    let left = reps[j] - reps[origin];
    let right = if last { f64::INFINITY } else { reps[j + 1] - reps[origin] };

    let mut t = 0.5 * (a + b);
    for _ in 0..100 {
        let s = eval(origin, t);
        if s.value == 0.0 {
            break;
        }
        if s.value < 0.0 {
            a = t;
        } else {
            b = t;
        }
        if s.value.abs() <= 8.0 * f64::EPSILON * s.magnitude || b - a <= 2.0 * f64::EPSILON * a.abs().max(b.abs()) {
            break;
        }
        let next = rational_step(&s, left, right, origin == j, t).filter(|x| *x > a && *x < b);
        let next = next.unwrap_or(0.5 * (a + b));
        if next == t {
            break;
        }
        t = next;
    }
    Root { origin, tau: t }
}

struct Secular {
    value: f64,
    /// Pole sums left and right of the interval and their derivatives.
    psi: f64,
    dpsi: f64,
    phi: f64,
    dphi: f64,
    magnitude: f64,
}

fn secular_parts(reps: &[f64], weights: &[f64], rho: f64, origin: usize, j: usize, t: f64) -> Secular {
    let o = reps[origin];
    let (mut psi, mut dpsi, mut phi, mut dphi) = (0.0, 0.0, 0.0, 0.0);
    for (i, (&d, &w)) in reps.iter().zip(weights).enumerate() {
        let inv = 1.0 / ((d - o) - t);
        let term = rho * w * inv;
        if i <= j {
            psi += term;
            dpsi += term * inv;
        } else {
            phi += term;
            dphi += term * inv;
        }
    }
    Secular {
        value: 1.0 + psi + phi,
        psi,
        dpsi,
        phi,
        dphi,
        magnitude: 1.0 + psi.abs() + phi.abs(),
    }
}

/// Zero of the model `1 + P + Q/(δ_L − x) + S + T/(δ_R − x)`, which matches
/// both pole sums and their slopes at `t`. Solved for the offset from the
/// origin pole to avoid cancellation.
fn rational_step(s: &Secular, left: f64, right: f64, origin_left: bool, t: f64) -> Option<f64> {
    let q = s.dpsi * (left - t) * (left - t);
    let p = s.psi - q / (left - t);
    if right.is_infinite() {
        let c = 1.0 + p + s.phi;
        return (c > 0.0).then(|| left + q / c);
    }
    let tt = s.dphi * (right - t) * (right - t);
    let ss = s.phi - tt / (right - t);
    let c = 1.0 + p + ss;
    let g = right - left;
    let x = if origin_left {
        // u = δ_L − x ∈ (−g, 0): c u² + (c g + Q + T) u + Q g = 0.
        let bq = c * g + q + tt;
        let disc = (bq * bq - 4.0 * c * q * g).max(0.0);
        let u = if bq > 0.0 {
            -2.0 * q * g / (bq + disc.sqrt())
        } else {
            (-bq + disc.sqrt()) / (2.0 * c)
        };
        left - u
    } else {
        // v = δ_R − x ∈ (0, g): c v² + (Q + T − c g) v − T g = 0.
        let bq = q + tt - c * g;
        let disc = (bq * bq + 4.0 * c * tt * g).max(0.0);
        let v = if bq > 0.0 {
            2.0 * tt * g / (bq + disc.sqrt())
        } else {
            (-bq + disc.sqrt()) / (2.0 * c)
        };
        right - v
    };
    x.is_finite().then_some(x)
}
