use fracising::lattice::{exact_enumeration, ClassicalModel, Geometry, SpinConfiguration};
use fracising::trotter::{map_with_table, time_coupling, QuantumSpec};
use fracising::{CouplingTable, FractionalOrder, PeriodicCouplingTable};

type Matrix = Vec<Vec<f64>>;

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

/// `e^{-t H}` by scaling and squaring a Taylor series.
fn expm(h: &Matrix, t: f64) -> Matrix {
    let n = h.len();
    let squarings = 12;
    let s = -t / f64::from(1u32 << squarings);
    let a: Matrix = h.iter().map(|r| r.iter().map(|x| x * s).collect()).collect();
    let mut out: Matrix = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut term = out.clone();
    for k in 1..20 {
        term = matmul(&term, &a);
        for i in 0..n {
            for j in 0..n {
                term[i][j] /= k as f64;
                out[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        out = matmul(&out, &out);
    }
    out
}

/// Quantum chain `H = E_z(σ^z) - g Σ σ^x` with `E_z` the classical chain energy.
fn hamiltonian(chain: &ClassicalModel, size: usize, g: f64) -> Matrix {
    let n = 1usize << size;
    let geometry = Geometry::chain(size);
    let mut h = vec![vec![0.0; n]; n];
    for (s, row) in h.iter_mut().enumerate() {
        let c = SpinConfiguration::from_state_index(geometry, s as u64);
        row[s] = chain.energy_from_sums(&c.pair_sums());
        for site in 0..size {
            row[s ^ (1 << site)] -= g;
        }
    }
    h
}

fn quantum_correlation(chain: &ClassicalModel, size: usize, g: f64, beta: f64, r: usize) -> f64 {
    let rho = expm(&hamiltonian(chain, size, g), beta);
    let geometry = Geometry::chain(size);
    let (mut z, mut num) = (0.0, 0.0);
    for (s, row) in rho.iter().enumerate() {
        let c = SpinConfiguration::from_state_index(geometry, s as u64);
        let cr = (0..size).map(|i| f64::from(c.get(i) * c.get((i + r) % size))).sum::<f64>() / size as f64;
        z += row[s];
        num += row[s] * cr;
    }
    num / z
}

#[test]
fn mapped_grid_reproduces_quantum_correlations() {
    let size = 4;
    let (g, beta) = (0.8, 0.6);
    for &q in &[2.0, 1.0, 0.5] {
        let order = FractionalOrder::new(q).unwrap();
        let table = CouplingTable::build(order, 64).unwrap();
        let periodic = PeriodicCouplingTable::new(&table, size, 1e-12).unwrap();
        let chain = ClassicalModel::chain(&periodic, 1.0, 0.0).unwrap();
        let exact: Vec<f64> = (1..=2).map(|r| quantum_correlation(&chain, size, g, beta, r)).collect();
        let mut errors = Vec::new();
        for slices in [4usize, 6] {
            let spec = QuantumSpec {
                size,
                order,
                j0: 1.0,
                g,
                h: 0.0,
                dtau: beta / slices as f64,
                slices,
            };
            let (model, geometry) = map_with_table(&spec, &periodic).unwrap();
            let cl = exact_enumeration(&model, geometry, 1.0).unwrap();
            let err = (1..=2)
                .map(|r| (cl.correlation[r] - exact[r - 1]).abs())
                .fold(0.0, f64::max);
            errors.push(err);
        }
        assert!(errors[1] < errors[0], "q={q}: Trotter error not shrinking {errors:?}");
        assert!(errors[1] < 0.02, "q={q}: {errors:?}");
        // second-order scaling: (4/6)^2 ≈ 0.44
        assert!(errors[1] / errors[0] < 0.6, "q={q}: {errors:?}");
    }
}

#[test]
fn nearest_neighbour_critical_line_is_step_independent() {
    // The anisotropic square lattice is critical where sinh(2K_x) sinh(2K_τ) = 1;
    // with K_x = Δτ J and K_τ = -½ ln tanh(Δτ g) this holds at g = J for every Δτ.
    for &dtau in &[0.2, 0.1, 0.05, 0.01] {
        let kx = dtau;
        let kt = time_coupling(dtau).unwrap();
        let product = (2.0 * kx).sinh() * (2.0 * kt).sinh();
        assert!((product - 1.0).abs() < 1e-12, "dtau={dtau}: {product}");
        let off = (2.0 * kx).sinh() * (2.0 * time_coupling(1.05 * dtau).unwrap()).sinh();
        assert!(off < 1.0);
    }
}
