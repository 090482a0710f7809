//! Exact diagonalization, dressed-state labeling, and the ZZ rate.
//!
//! The ZZ interaction rate is defined from the labeled eigenenergies of the
//! driven Hamiltonian as ζ = E₁₁ + E₀₀ − (E₀₁ + E₁₀), where E_ij is the
//! energy of the dressed state adiabatically connected to the bare product
//! state |i⟩_c ⊗ |j⟩_t.
//!
//! Labeling assigns each computational bare state the eigenvector with which
//! it has the largest overlap weight |⟨bare|v⟩|². Near resonances this weight
//! can collapse; a labeling built from a previous sweep point (a
//! [`LabelReference`]) then takes over and the result is flagged.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hamiltonian::{build_hamiltonian, DriveConfig, HermitianOperator, SystemParams};

/// Overlap weight below which a bare label no longer identifies a dressed
/// state on its own.
pub const OVERLAP_FLAG_THRESHOLD: f64 = 0.5;

/// Overlap weight below which single-shot labeling is considered failed.
const OVERLAP_FAIL_THRESHOLD: f64 = 0.25;

/// The four computational bare labels (n_c, n_t).
pub const COMPUTATIONAL_LABELS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// Eigenvalues (ascending) and matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    values: Vec<f64>,
    vectors: DMatrix<C64>,
}

impl EigenDecomposition {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<C64> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Dense Hermitian eigendecomposition with eigenvalues sorted ascending.
pub fn eigendecompose(h: &HermitianOperator) -> EigenDecomposition {
    eigh(h.matrix())
}

/// Eigendecomposition of a matrix already known to be Hermitian.
pub(crate) fn eigh(m: &DMatrix<C64>) -> EigenDecomposition {
    let n = m.nrows();
    let fm = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| {
        let v = m[(i, j)];
        faer::c64::new(v.re, v.im)
    });
    let evd = fm
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("hermitian eigendecomposition failed to converge");
    let raw_values = evd.S();
    let raw_vectors = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw_values[a].re.partial_cmp(&raw_values[b].re).unwrap());
    let values: Vec<f64> = order.iter().map(|&k| raw_values[k].re).collect();
    let mut vectors = DMatrix::<C64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            let v = raw_vectors[(i, src)];
            vectors[(i, dst)] = C64::new(v.re, v.im);
        }
    }
    EigenDecomposition { values, vectors }
}

/// Energies and overlap weights of the four computational dressed states.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSpectrum {
    /// `energies[n_c][n_t]`, MHz.
    pub energies: [[f64; 2]; 2],
    /// Overlap weight |⟨n_c, n_t|v⟩|² of each assignment, in [0, 1].
    pub overlaps: [[f64; 2]; 2],
    /// True when any assignment fell below [`OVERLAP_FLAG_THRESHOLD`] or was
    /// made by continuation from a reference.
    pub flagged: bool,
}

impl LabeledSpectrum {
    pub fn energy(&self, n_c: usize, n_t: usize) -> f64 {
        self.energies[n_c][n_t]
    }

    /// ζ = E₁₁ + E₀₀ − (E₀₁ + E₁₀), MHz.
    pub fn zeta(&self) -> f64 {
        self.energies[1][1] + self.energies[0][0] - self.energies[0][1] - self.energies[1][0]
    }
}

/// A labeling of the computational states within one eigendecomposition.
#[derive(Debug, Clone)]
pub struct Labeling {
    pub spectrum: LabeledSpectrum,
    /// Eigenvector column index assigned to each computational label, in
    /// [`COMPUTATIONAL_LABELS`] order.
    pub indices: [usize; 4],
}

impl Labeling {
    /// Capture the assigned eigenvectors for continuation at the next point
    /// of a sweep.
    pub fn reference(&self, eig: &EigenDecomposition) -> LabelReference {
        let vectors = self
            .indices
            .map(|k| DVector::from_column_slice(eig.vectors.column(k).as_slice()));
        LabelReference { vectors }
    }
}

/// Eigenvectors of a previous sweep point, used to continue labels across
/// resonances.
#[derive(Debug, Clone)]
pub struct LabelReference {
    vectors: [DVector<C64>; 4],
}

fn overlap_weight(column: nalgebra::DVectorView<C64>, rhs: &DVector<C64>) -> f64 {
    column.dotc(rhs).norm_sqr()
}

/// Assign the four computational bare states to eigenvectors by maximum
/// overlap weight, injectively.
///
/// When a label's best weight drops below 0.5 and `reference` is supplied,
/// the assignment is continued by maximum overlap with the reference
/// eigenvector and the result is flagged. Without a reference, weights below
/// 0.25 fail with [`Error::LabelingFailure`] naming the ambiguous labels.
pub fn label_states(
    eig: &EigenDecomposition,
    sys: &SystemParams,
    reference: Option<&LabelReference>,
) -> Result<Labeling> {
    let n = eig.dim();
    if n != sys.dim() {
        return Err(Error::InvalidParam(format!(
            "eigendecomposition dim {} does not match system dim {}",
            n,
            sys.dim()
        )));
    }
    // weights[l][k]: overlap weight of label l with eigenvector k
    let weights: Vec<Vec<f64>> = COMPUTATIONAL_LABELS
        .iter()
        .map(|&(nc, nt)| {
            let row = sys.basis_index(nc, nt);
            (0..n).map(|k| eig.vectors[(row, k)].norm_sqr()).collect()
        })
        .collect();

    // Greedy maximal matching: repeatedly give the globally best
    // (label, vector) pair its assignment.
    let mut assigned: [Option<usize>; 4] = [None; 4];
    let mut claimed = vec![false; n];
    for _ in 0..4 {
        let mut best: Option<(f64, usize, usize)> = None;
        for (l, w) in weights.iter().enumerate() {
            if assigned[l].is_some() {
                continue;
            }
            for (k, &wk) in w.iter().enumerate() {
                if claimed[k] {
                    continue;
                }
                if best.map_or(true, |(bw, _, _)| wk > bw) {
                    best = Some((wk, l, k));
                }
            }
        }
        let (_, l, k) = best.expect("fewer eigenvectors than labels");
        assigned[l] = Some(k);
        claimed[k] = true;
    }
    let mut indices = assigned.map(|a| a.unwrap());

    let mut flagged = false;
    let low: Vec<usize> = (0..4)
        .filter(|&l| weights[l][indices[l]] < OVERLAP_FLAG_THRESHOLD)
        .collect();
    if !low.is_empty() {
        flagged = true;
        match reference {
            Some(re) => {
                // Release the low-weight assignments, then re-match those
                // labels against the reference vectors.
                for &l in &low {
                    claimed[indices[l]] = false;
                }
                let mut pending: Vec<usize> = low.clone();
                while !pending.is_empty() {
                    let mut best: Option<(f64, usize, usize)> = None;
                    for &l in &pending {
                        for k in 0..n {
                            if claimed[k] {
                                continue;
                            }
                            let w = overlap_weight(eig.vectors.column(k), &re.vectors[l]);
                            if best.map_or(true, |(bw, _, _)| w > bw) {
                                best = Some((w, l, k));
                            }
                        }
                    }
                    let (_, l, k) = best.expect("fewer eigenvectors than labels");
                    indices[l] = k;
                    claimed[k] = true;
                    pending.retain(|&x| x != l);
                }
            }
            None => {
                let ambiguous: Vec<(usize, usize)> = low
                    .iter()
                    .filter(|&&l| weights[l][indices[l]] < OVERLAP_FAIL_THRESHOLD)
                    .map(|&l| COMPUTATIONAL_LABELS[l])
                    .collect();
                if !ambiguous.is_empty() {
                    return Err(Error::LabelingFailure { labels: ambiguous });
                }
            }
        }
    }

    let mut energies = [[0.0; 2]; 2];
    let mut overlaps = [[0.0; 2]; 2];
    for (l, &(nc, nt)) in COMPUTATIONAL_LABELS.iter().enumerate() {
        energies[nc][nt] = eig.values[indices[l]];
        overlaps[nc][nt] = weights[l][indices[l]];
    }
    Ok(Labeling {
        spectrum: LabeledSpectrum {
            energies,
            overlaps,
            flagged,
        },
        indices,
    })
}

/// ZZ rate from exact diagonalization of the driven Hamiltonian, MHz.
pub fn zz_rate(sys: &SystemParams, drive: &DriveConfig) -> Result<f64> {
    let h = build_hamiltonian(sys, drive)?;
    let eig = eigendecompose(&h);
    let labeling = label_states(&eig, sys, None)?;
    Ok(labeling.spectrum.zeta())
}

/// One evaluated sweep point: the rate plus its labeled spectrum.
#[derive(Debug, Clone, Copy)]
pub struct ZzPoint {
    pub zeta_mhz: f64,
    pub spectrum: LabeledSpectrum,
}

/// ZZ rate with optional label continuation; returns the point and the
/// reference to carry to the next point of the sweep.
pub fn zz_rate_with_reference(
    sys: &SystemParams,
    drive: &DriveConfig,
    reference: Option<&LabelReference>,
) -> Result<(ZzPoint, LabelReference)> {
    let h = build_hamiltonian(sys, drive)?;
    let eig = eigendecompose(&h);
    let labeling = label_states(&eig, sys, reference)?;
    let point = ZzPoint {
        zeta_mhz: labeling.spectrum.zeta(),
        spectrum: labeling.spectrum,
    };
    let next = labeling.reference(&eig);
    Ok((point, next))
}
