//! Concrete open-system models.
//!
//! * Jaynes-Cummings: a dissipative two-level dot coupled to a lossy resonator,
//!   `H = (ν_q/2)σ_z + ν₀a†a + g(a†σ_− + aσ_+)`, damping `γ_d D[σ_−] + γ₀ D[a]`.
//! * Augmented qubit: a qubit `H_q = (ω₀/2)σ_z` coupled to `R` damped ancilla
//!   oscillators, each contributing one Lorentzian component to the
//!   environment spectrum.
//!
//! All frequencies and rates are angular, in rad/ns.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lindblad::{
    simulate_observable, DensityMatrix, DissipatorTerm, HamiltonianTerm, ModelSpec, ObservableTrace,
    SamplingGrid, SimulationOptions,
};
use crate::linalg::{annihilation, dagger, embed, number, pauli, ComplexMatrix, HilbertSpec, Pauli, I};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum JcParameter {
    NuQ,
    GD,
    GammaD,
}

impl JcParameter {
    pub fn name(self) -> &'static str {
        match self {
            JcParameter::NuQ => "nu_q",
            JcParameter::GD => "g_d",
            JcParameter::GammaD => "gamma_d",
        }
    }
}

impl fmt::Display for JcParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for JcParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nu_q" => Ok(JcParameter::NuQ),
            "g_d" => Ok(JcParameter::GD),
            "gamma_d" => Ok(JcParameter::GammaD),
            other => Err(Error::invalid(format!(
                "`{other}` is not an identifiable Jaynes-Cummings parameter (nu_q, g_d, gamma_d)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JaynesCummingsSpec {
    pub nu_q: f64,
    pub nu_0: f64,
    pub g_d: f64,
    pub gamma_d: f64,
    pub gamma_0: f64,
    pub n_levels: usize,
    pub unknowns: Vec<JcParameter>,
}

impl JaynesCummingsSpec {
    /// Quantum-dot/resonator device values with ν_q, g_d and γ_d unknown.
    pub fn reference_device(n_levels: usize) -> Self {
        Self {
            nu_q: 6.1814,
            nu_0: 6.775,
            g_d: 0.3142,
            gamma_d: 0.6283,
            gamma_0: 2.6 * 2.0 * std::f64::consts::PI * 1e-3,
            n_levels,
            unknowns: vec![JcParameter::NuQ, JcParameter::GD, JcParameter::GammaD],
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("nu_q", self.nu_q),
            ("nu_0", self.nu_0),
            ("g_d", self.g_d),
            ("gamma_d", self.gamma_d),
            ("gamma_0", self.gamma_0),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} is not finite")));
            }
        }
        if self.gamma_d < 0.0 || self.gamma_0 < 0.0 {
            return Err(Error::invalid("damping rates must be non-negative"));
        }
        if self.n_levels < 2 {
            return Err(Error::invalid("resonator needs at least 2 levels"));
        }
        let mut sorted = self.unknowns.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.unknowns.len() {
            return Err(Error::invalid("duplicate unknown parameter"));
        }
        Ok(())
    }

    pub fn space(&self) -> HilbertSpec {
        HilbertSpec::new(vec![2, self.n_levels]).expect("dimensions are positive")
    }
}

/// Builds the Jaynes-Cummings model on `[2, n_levels]` and returns it together
/// with the true values of its unknowns.
///
/// Unknown ordering is ν_q, g_d (Hamiltonian) then γ_d (rate), restricted to
/// the requested subset.
pub fn build_jc_model(spec: &JaynesCummingsSpec) -> Result<(ModelSpec, Vec<f64>)> {
    spec.validate()?;
    let space = spec.space();
    let sz = embed(&pauli(Pauli::Z), 0, &space)?;
    let sm = embed(&pauli(Pauli::Minus), 0, &space)?;
    let a = embed(&annihilation(spec.n_levels)?, 1, &space)?;
    let num = embed(&number(spec.n_levels)?, 1, &space)?;
    let coupling = dagger(&a).dot(&sm) + a.dot(&dagger(&sm));

    let order = [JcParameter::NuQ, JcParameter::GD, JcParameter::GammaD];
    let unknown: Vec<JcParameter> = order.into_iter().filter(|p| spec.unknowns.contains(p)).collect();
    let slot = |p: JcParameter| unknown.iter().position(|&q| q == p);
    let truth: Vec<f64> = unknown
        .iter()
        .map(|p| match p {
            JcParameter::NuQ => spec.nu_q,
            JcParameter::GD => spec.g_d,
            JcParameter::GammaD => spec.gamma_d,
        })
        .collect();

    let h_term = |name: &str, op: ComplexMatrix, value: f64, p: JcParameter| match slot(p) {
        Some(i) => HamiltonianTerm::unknown(name, op, i),
        None => HamiltonianTerm::known(name, op, value),
    };
    let hamiltonian = vec![
        h_term("nu_q", sz.mapv(|z| z * 0.5), spec.nu_q, JcParameter::NuQ),
        HamiltonianTerm::known("nu_0", num, spec.nu_0),
        h_term("g_d", coupling, spec.g_d, JcParameter::GD),
    ];
    let dissipators = vec![
        match slot(JcParameter::GammaD) {
            Some(i) => DissipatorTerm::unknown("gamma_d", sm, i),
            None => DissipatorTerm::known("gamma_d", sm, spec.gamma_d),
        },
        DissipatorTerm::known("gamma_0", a, spec.gamma_0),
    ];
    let names = unknown.iter().map(|p| p.name().to_string()).collect();
    let model = ModelSpec::new(space, hamiltonian, dissipators, names)?;
    Ok((model, truth))
}

/// Qubit in ½(I + σ_x), every other factor in its ground state.
pub fn qubit_plus_ground_state(space: &HilbertSpec) -> Result<DensityMatrix> {
    let dims = space.factor_dims();
    if dims[0] != 2 {
        return Err(Error::invalid("first factor must be a qubit"));
    }
    let mut factors = vec![DensityMatrix::qubit_plus()];
    for &d in &dims[1..] {
        factors.push(DensityMatrix::fock(d, 0)?);
    }
    DensityMatrix::product(&factors)
}

/// A Pauli operator on the qubit (factor 0) of `space`.
pub fn qubit_observable(space: &HilbertSpec, which: Pauli) -> Result<ComplexMatrix> {
    embed(&pauli(which), 0, space)
}

/// `β = 4μ²/γ̄`.
pub fn beta_from_mu(mu: f64, gamma_bar: f64) -> Result<f64> {
    if !(gamma_bar > 0.0) || !mu.is_finite() {
        return Err(Error::invalid(format!("need γ̄ > 0 and finite μ, got γ̄ = {gamma_bar}, μ = {mu}")));
    }
    Ok(4.0 * mu * mu / gamma_bar)
}

/// `μ = −√(γ̄β)/2`.
pub fn mu_from_beta(beta: f64, gamma_bar: f64) -> Result<f64> {
    if !(gamma_bar > 0.0) || !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("need γ̄ > 0 and β ≥ 0, got γ̄ = {gamma_bar}, β = {beta}")));
    }
    Ok(-(gamma_bar * beta).sqrt() / 2.0)
}

/// One damped ancilla oscillator.
#[derive(Debug, Clone, PartialEq)]
pub struct AncillaSpec {
    pub omega: f64,
    pub gamma_bar: f64,
    pub beta: Option<f64>,
    pub mu: Option<f64>,
    pub n_levels: usize,
}

impl AncillaSpec {
    pub fn with_beta(omega: f64, gamma_bar: f64, beta: f64, n_levels: usize) -> Self {
        Self { omega, gamma_bar, beta: Some(beta), mu: None, n_levels }
    }

    pub fn with_mu(omega: f64, gamma_bar: f64, mu: f64, n_levels: usize) -> Self {
        Self { omega, gamma_bar, beta: None, mu: Some(mu), n_levels }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.omega.is_finite() {
            return Err(Error::invalid("ancilla frequency is not finite"));
        }
        if !(self.gamma_bar > 0.0) || !self.gamma_bar.is_finite() {
            return Err(Error::invalid(format!("ancilla damping must be positive, got {}", self.gamma_bar)));
        }
        if self.n_levels < 2 {
            return Err(Error::invalid("ancilla needs at least 2 levels"));
        }
        match (self.beta, self.mu) {
            (None, None) => Err(Error::invalid("ancilla needs either β or μ")),
            (Some(b), None) => mu_from_beta(b, self.gamma_bar).map(|_| ()),
            (None, Some(m)) => {
                if m > 0.0 || !m.is_finite() {
                    Err(Error::invalid(format!("μ must be ≤ 0, got {m}")))
                } else {
                    Ok(())
                }
            }
            (Some(b), Some(m)) => {
                let implied = mu_from_beta(b, self.gamma_bar)?;
                if (implied - m).abs() > 1e-9 * implied.abs().max(1.0) {
                    Err(Error::invalid(format!("β = {b} implies μ = {implied}, but μ = {m} was given")))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn mu(&self) -> Result<f64> {
        self.validate()?;
        match (self.mu, self.beta) {
            (Some(m), _) => Ok(m),
            (None, Some(b)) => mu_from_beta(b, self.gamma_bar),
            _ => unreachable!("validated"),
        }
    }

    pub fn beta(&self) -> Result<f64> {
        self.validate()?;
        match (self.beta, self.mu) {
            (Some(b), _) => Ok(b),
            (None, Some(m)) => beta_from_mu(m, self.gamma_bar),
            _ => unreachable!("validated"),
        }
    }
}

/// Qubit plus `R` ancillas coupled through `iμ_r(a_r† z − z† a_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModelSpec {
    pub omega_0: f64,
    pub ancillas: Vec<AncillaSpec>,
    /// Principal-system operator `z` (2×2); σ_− for the qubit experiment.
    pub coupling_operator: ComplexMatrix,
}

impl AugmentedModelSpec {
    pub fn qubit(omega_0: f64, ancillas: Vec<AncillaSpec>) -> Self {
        Self {
            omega_0,
            ancillas,
            coupling_operator: pauli(Pauli::Minus),
        }
    }

    /// Two-Lorentzian environment of a qubit at ω₀ = 10 rad/ns: centres 9 and
    /// 11, widths 2 and 1.5, strengths 3.5 and 3.
    pub fn two_lorentzian_reference(n_levels: usize) -> Self {
        Self::qubit(
            10.0,
            vec![
                AncillaSpec::with_beta(9.0, 2.0, 3.5, n_levels),
                AncillaSpec::with_beta(11.0, 1.5, 3.0, n_levels),
            ],
        )
    }

    pub fn space(&self) -> Result<HilbertSpec> {
        let mut dims = vec![2];
        dims.extend(self.ancillas.iter().map(|a| a.n_levels));
        HilbertSpec::new(dims)
    }

    pub fn spectrum(&self) -> Result<LorentzianSpectrum> {
        LorentzianSpectrum::from_ancillas(&self.ancillas)
    }
}

/// Unknown names for `r = 1..=R` in `θ` order: ω_r, μ_r, then γ̄_r.
pub fn augmented_unknown_names(r: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=r).map(|k| format!("omega_{k}")).collect();
    names.extend((1..=r).map(|k| format!("mu_{k}")));
    names.extend((1..=r).map(|k| format!("gamma_bar_{k}")));
    names
}

/// Builds the augmented model on `[2, n₁, …, n_R]`; every ω_r, μ_r and γ̄_r is
/// unknown.
pub fn build_augmented_model(spec: &AugmentedModelSpec) -> Result<(ModelSpec, Vec<f64>)> {
    let r = spec.ancillas.len();
    if r == 0 {
        return Err(Error::invalid("the augmented model needs at least one ancilla"));
    }
    if !spec.omega_0.is_finite() {
        return Err(Error::invalid("qubit frequency is not finite"));
    }
    if spec.coupling_operator.dim() != (2, 2) {
        return Err(Error::invalid("principal coupling operator must be 2x2"));
    }
    for a in &spec.ancillas {
        a.validate()?;
    }
    let space = spec.space()?;
    let z = embed(&spec.coupling_operator, 0, &space)?;
    let zd = dagger(&z);

    let mut hamiltonian = vec![HamiltonianTerm::known(
        "omega_0",
        embed(&pauli(Pauli::Z), 0, &space)?.mapv(|x| x * 0.5),
        spec.omega_0,
    )];
    let mut dissipators = Vec::with_capacity(r);
    let mut interactions = Vec::with_capacity(r);
    let mut truth = vec![0.0; 3 * r];
    for (k, anc) in spec.ancillas.iter().enumerate() {
        let a = embed(&annihilation(anc.n_levels)?, k + 1, &space)?;
        let ad = dagger(&a);
        hamiltonian.push(HamiltonianTerm::unknown(format!("omega_{}", k + 1), ad.dot(&a), k));
        let coupling = (ad.dot(&z) - zd.dot(&a)).mapv(|x| x * I);
        interactions.push(HamiltonianTerm::unknown(format!("mu_{}", k + 1), coupling, r + k));
        dissipators.push(DissipatorTerm::unknown(format!("gamma_bar_{}", k + 1), a, 2 * r + k));
        truth[k] = anc.omega;
        truth[r + k] = anc.mu()?;
        truth[2 * r + k] = anc.gamma_bar;
    }
    hamiltonian.extend(interactions);
    let model = ModelSpec::new(space, hamiltonian, dissipators, augmented_unknown_names(r))?;
    Ok((model, truth))
}

/// Ancillas described by an augmented-model `θ` (ω…, μ…, γ̄…).
pub fn ancillas_from_theta(theta: &[f64], n_levels: &[usize]) -> Result<Vec<AncillaSpec>> {
    let r = n_levels.len();
    if theta.len() != 3 * r {
        return Err(Error::invalid(format!(
            "expected {} parameters for {r} ancillas, got {}",
            3 * r,
            theta.len()
        )));
    }
    (0..r)
        .map(|k| {
            let a = AncillaSpec::with_mu(theta[k], theta[2 * r + k], theta[r + k], n_levels[k]);
            a.validate()?;
            Ok(a)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianComponent {
    pub beta: f64,
    pub gamma_bar: f64,
    pub omega_center: f64,
}

impl LorentzianComponent {
    pub fn eval(&self, omega: f64) -> f64 {
        let hw2 = (self.gamma_bar / 2.0).powi(2);
        self.beta * hw2 / (hw2 + (omega - self.omega_center).powi(2))
    }
}

/// `S(ω) = Σ_r β_r (γ̄_r/2)² / ((γ̄_r/2)² + (ω − ω_r)²)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LorentzianSpectrum {
    pub components: Vec<LorentzianComponent>,
}

impl LorentzianSpectrum {
    pub fn new(components: Vec<LorentzianComponent>) -> Result<Self> {
        for c in &components {
            if !(c.beta >= 0.0) || !(c.gamma_bar > 0.0) || !c.omega_center.is_finite() {
                return Err(Error::invalid(format!("invalid Lorentzian component {c:?}")));
            }
        }
        Ok(Self { components })
    }

    pub fn from_ancillas(ancillas: &[AncillaSpec]) -> Result<Self> {
        let components = ancillas
            .iter()
            .map(|a| {
                Ok(LorentzianComponent {
                    beta: a.beta()?,
                    gamma_bar: a.gamma_bar,
                    omega_center: a.omega,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    pub fn eval(&self, omega: f64) -> f64 {
        self.components.iter().map(|c| c.eval(omega)).sum()
    }
}

pub fn spectrum_eval(spec: &LorentzianSpectrum, omega: f64) -> f64 {
    spec.eval(omega)
}

/// Largest pointwise difference between two traces of equal length.
pub fn max_trace_deviation(a: &ObservableTrace, b: &ObservableTrace) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("traces differ in length"));
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Re-simulates the Jaynes-Cummings trace at `θ` with `low` and `high`
/// resonator truncations and reports the largest deviation between them.
pub fn jc_truncation_consistency(
    spec: &JaynesCummingsSpec,
    theta: &[f64],
    low: usize,
    high: usize,
    grid: &SamplingGrid,
) -> Result<f64> {
    let run = |levels: usize| -> Result<ObservableTrace> {
        let s = JaynesCummingsSpec { n_levels: levels, ..spec.clone() };
        let (model, _) = build_jc_model(&s)?;
        let rho0 = qubit_plus_ground_state(model.space())?;
        let obs = qubit_observable(model.space(), Pauli::X)?;
        Ok(simulate_observable(&model, theta, &rho0, &obs, grid, &SimulationOptions::default())?.0)
    };
    max_trace_deviation(&run(low)?, &run(high)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{expectation, liouvillian, simulate_trace};
    use crate::linalg::{hermiticity_defect, kron, C64};
    use proptest::prelude::*;

    #[test]
    fn reference_device_values() {
        let spec = JaynesCummingsSpec::reference_device(8);
        let (model, truth) = build_jc_model(&spec).unwrap();
        assert_eq!(model.unknown_names(), &["nu_q", "g_d", "gamma_d"]);
        assert_eq!(truth, vec![6.1814, 0.3142, 0.6283]);
        assert_eq!(model.n_hamiltonian_unknowns(), 2);
        assert!((spec.gamma_0 - 0.016336281798666924).abs() < 1e-15);
        assert_eq!(model.dim(), 16);
    }

    #[test]
    fn jc_subset_of_unknowns() {
        let mut spec = JaynesCummingsSpec::reference_device(3);
        spec.unknowns = vec![JcParameter::GammaD, JcParameter::GD];
        let (model, truth) = build_jc_model(&spec).unwrap();
        assert_eq!(model.unknown_names(), &["g_d", "gamma_d"]);
        assert_eq!(truth, vec![0.3142, 0.6283]);
        spec.unknowns = vec![JcParameter::GD, JcParameter::GD];
        assert!(build_jc_model(&spec).is_err());
        spec.unknowns = vec![];
        spec.n_levels = 1;
        assert!(build_jc_model(&spec).is_err());
        assert!("theta".parse::<JcParameter>().is_err());
    }

    #[test]
    fn jc_single_excitation_matches_rabi_formula() {
        // P_e(t) = 1 − (4g²/Ω²) sin²(Ωt/2), Ω = √(4g² + Δ²)
        for (levels, nu_q) in [(2usize, 6.775), (2, 6.1814), (5, 6.4)] {
            let mut spec = JaynesCummingsSpec::reference_device(levels);
            spec.nu_q = nu_q;
            spec.gamma_d = 0.0;
            spec.gamma_0 = 0.0;
            spec.unknowns = vec![];
            let (model, _) = build_jc_model(&spec).unwrap();
            let rho0 = DensityMatrix::product(&[DensityMatrix::qubit_excited(), DensityMatrix::fock(levels, 0).unwrap()]).unwrap();
            let sz = qubit_observable(model.space(), Pauli::Z).unwrap();
            let grid = SamplingGrid::new(0.01, 1000).unwrap();
            let (trace, _) = simulate_trace(&model, &[], &rho0, &sz, &grid).unwrap();
            let g = spec.g_d;
            let delta = spec.nu_q - spec.nu_0;
            let omega = (4.0 * g * g + delta * delta).sqrt();
            for (k, y) in trace.values.iter().enumerate() {
                let t = grid.time(k + 1);
                let pe = 1.0 - 4.0 * g * g / (omega * omega) * (omega * t / 2.0).sin().powi(2);
                assert!((y - (2.0 * pe - 1.0)).abs() < 1e-9, "levels {levels}, t = {t}");
            }
        }
    }

    #[test]
    fn uncoupled_jc_factorises() {
        let mut spec = JaynesCummingsSpec::reference_device(4);
        spec.g_d = 0.0;
        spec.unknowns = vec![];
        let (model, _) = build_jc_model(&spec).unwrap();
        let rho0 = DensityMatrix::product(&[DensityMatrix::qubit_plus(), DensityMatrix::fock(4, 2).unwrap()]).unwrap();
        let sx = qubit_observable(model.space(), Pauli::X).unwrap();
        let n = embed(&number(4).unwrap(), 1, model.space()).unwrap();
        let joint = sx.dot(&n);
        let grid = SamplingGrid::new(0.05, 60).unwrap();
        let (_, states) = simulate_trace(&model, &[], &rho0, &sx, &grid).unwrap();
        for s in &states {
            let lhs = expectation(&joint, s).unwrap();
            let rhs = expectation(&sx, s).unwrap() * expectation(&n, s).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_spectrum_values() {
        let spec = AugmentedModelSpec::two_lorentzian_reference(4);
        let (model, truth) = build_augmented_model(&spec).unwrap();
        assert_eq!(
            model.unknown_names(),
            &["omega_1", "omega_2", "mu_1", "mu_2", "gamma_bar_1", "gamma_bar_2"]
        );
        assert_eq!(model.n_hamiltonian_unknowns(), 4);
        let mu1 = -(7.0f64).sqrt() / 2.0;
        assert!((truth[2] - mu1).abs() < 1e-15);
        assert!((truth[2] + 1.3229).abs() < 1e-4);
        assert_eq!(&truth[..2], &[9.0, 11.0]);
        assert_eq!(&truth[4..], &[2.0, 1.5]);
        let s = spec.spectrum().unwrap();
        let expected = 3.5 + 3.0 * 0.75f64.powi(2) / (0.75f64.powi(2) + 4.0);
        assert!((s.eval(9.0) - expected).abs() < 1e-14);
    }

    #[test]
    fn interaction_terms_are_hermitian() {
        let spec = AugmentedModelSpec::two_lorentzian_reference(3);
        let (model, _) = build_augmented_model(&spec).unwrap();
        for t in model.hamiltonian_terms() {
            assert_eq!(hermiticity_defect(&t.operator), 0.0, "{}", t.name);
        }
    }

    #[test]
    fn decoupled_qubit_precesses() {
        let mut spec = AugmentedModelSpec::two_lorentzian_reference(3);
        for a in &mut spec.ancillas {
            a.beta = Some(0.0);
        }
        let (model, truth) = build_augmented_model(&spec).unwrap();
        assert_eq!(&truth[2..4], &[-0.0, -0.0]);
        let rho0 = qubit_plus_ground_state(model.space()).unwrap();
        let sx = qubit_observable(model.space(), Pauli::X).unwrap();
        let grid = SamplingGrid::new(0.01, 300).unwrap();
        let (trace, _) = simulate_trace(&model, &truth, &rho0, &sx, &grid).unwrap();
        for (k, y) in trace.values.iter().enumerate() {
            let t = grid.time(k + 1);
            assert!((y - (10.0 * t).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn augmented_generator_is_affine_in_each_unknown() {
        let spec = AugmentedModelSpec::two_lorentzian_reference(3);
        let (model, truth) = build_augmented_model(&spec).unwrap();
        let h = 0.37;
        for p in 0..model.n_unknowns() {
            let mut up = truth.clone();
            let mut down = truth.clone();
            up[p] += h;
            down[p] -= h;
            let second = liouvillian(&model, &up).unwrap() - liouvillian(&model, &truth).unwrap().mapv(|z| z * 2.0)
                + liouvillian(&model, &down).unwrap();
            let worst = second.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(worst < 1e-12, "parameter {p}: second difference {worst}");
        }
    }

    #[test]
    fn mu_beta_conversion() {
        let mu = mu_from_beta(3.5, 2.0).unwrap();
        assert!((mu + 7f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(beta_from_mu(0.0, 1.0).unwrap(), 0.0);
        let beta0 = beta_from_mu(-1.45, 1.56).unwrap();
        assert!((beta0 - 4.0 * 1.45 * 1.45 / 1.56).abs() < 1e-15);
        assert!((mu_from_beta(beta0, 1.56).unwrap() + 1.45).abs() < 1e-12);
        assert!(beta_from_mu(-1.0, 0.0).is_err());
        assert!(mu_from_beta(-1.0, 1.0).is_err());
    }

    #[test]
    fn ancilla_validation() {
        assert!(AncillaSpec::with_mu(9.0, 2.0, 0.5, 3).validate().is_err());
        assert!(AncillaSpec::with_beta(9.0, 0.0, 1.0, 3).validate().is_err());
        let both = AncillaSpec { omega: 9.0, gamma_bar: 2.0, beta: Some(3.5), mu: Some(-7f64.sqrt() / 2.0), n_levels: 3 };
        assert!(both.validate().is_ok());
        let clash = AncillaSpec { mu: Some(-1.0), ..both };
        assert!(clash.validate().is_err());
        assert!(build_augmented_model(&AugmentedModelSpec::qubit(10.0, vec![])).is_err());
    }

    #[test]
    fn ancillas_roundtrip_through_theta() {
        let spec = AugmentedModelSpec::two_lorentzian_reference(4);
        let (_, truth) = build_augmented_model(&spec).unwrap();
        let back = ancillas_from_theta(&truth, &[4, 4]).unwrap();
        for (a, b) in back.iter().zip(&spec.ancillas) {
            assert!((a.beta().unwrap() - b.beta().unwrap()).abs() < 1e-12);
            assert_eq!(a.omega, b.omega);
        }
        assert!(ancillas_from_theta(&truth[..5], &[4, 4]).is_err());
    }

    #[test]
    fn lorentzian_shape() {
        let c = LorentzianComponent { beta: 2.0, gamma_bar: 0.8, omega_center: 5.0 };
        let s = LorentzianSpectrum::new(vec![c]).unwrap();
        assert_eq!(s.eval(5.0), 2.0);
        assert!((s.eval(5.4) - 1.0).abs() < 1e-15);
        assert!((s.eval(4.6) - 1.0).abs() < 1e-15);
        assert!(LorentzianSpectrum::new(vec![LorentzianComponent { beta: -1.0, ..c }]).is_err());
    }

    #[test]
    fn truncation_consistency_of_reference_device() {
        let spec = JaynesCummingsSpec::reference_device(4);
        let theta = [6.1814, 0.3142, 0.6283];
        let grid = SamplingGrid::new(0.01, 300).unwrap();
        let dev = jc_truncation_consistency(&spec, &theta, 3, 6, &grid).unwrap();
        assert!(dev < 1e-10, "deviation {dev}");
    }

    #[test]
    fn plus_ground_state_layout() {
        let space = HilbertSpec::new(vec![2, 3]).unwrap();
        let rho = qubit_plus_ground_state(&space).unwrap();
        let expected = kron(DensityMatrix::qubit_plus().matrix(), DensityMatrix::fock(3, 0).unwrap().matrix());
        assert_eq!(rho.matrix(), &expected);
        assert!(qubit_plus_ground_state(&HilbertSpec::new(vec![3]).unwrap()).is_err());
        let _ = C64::new(0.0, 0.0);
    }

    fn arb_component() -> impl Strategy<Value = LorentzianComponent> {
        (0.0f64..5.0, 0.1f64..3.0, 5.0f64..15.0)
            .prop_map(|(beta, gamma_bar, omega_center)| LorentzianComponent { beta, gamma_bar, omega_center })
    }

    proptest! {
        #[test]
        fn spectrum_is_additive_and_order_free(cs in proptest::collection::vec(arb_component(), 1..5), w in 0.0f64..20.0) {
            let s = LorentzianSpectrum::new(cs.clone()).unwrap();
            let mut rev = cs.clone();
            rev.reverse();
            let r = LorentzianSpectrum::new(rev).unwrap();
            let total = s.eval(w);
            prop_assert!((total - r.eval(w)).abs() <= 1e-12 * total.max(1.0));
            let parts: f64 = cs.iter().map(|c| LorentzianSpectrum::new(vec![*c]).unwrap().eval(w)).sum();
            prop_assert!((total - parts).abs() <= 1e-12 * total.max(1.0));
            prop_assert!(total >= 0.0);
        }
    }
}
