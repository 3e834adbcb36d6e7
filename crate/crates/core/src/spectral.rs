//! Spectral bands, Planck intensities, tabulated gas absorption and
//! Beer-Lambert transmissivity.
//!
//! Wavenumbers are in cm⁻¹ and spectral intensities are per cm⁻¹, so a band
//! integral of [`planck_intensity`] has units of W·m⁻²·sr⁻¹.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const PLANCK: f64 = 6.626_070_15e-34;
pub const LIGHT_SPEED: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Stefan-Boltzmann constant derived from the exact SI constants above.
pub fn stefan_boltzmann() -> f64 {
    2.0 * PI.powi(5) * BOLTZMANN.powi(4) / (15.0 * PLANCK.powi(3) * LIGHT_SPEED.powi(2))
}

/// σT⁴/π, the total blackbody intensity.
pub fn total_blackbody_intensity(t: f64) -> f64 {
    stefan_boltzmann() * t.powi(4) / PI
}

const C1: f64 = 2.0 * PLANCK * LIGHT_SPEED * LIGHT_SPEED;
const C2: f64 = PLANCK * LIGHT_SPEED / BOLTZMANN;

#[inline]
fn planck_unchecked(t: f64, nu: f64) -> f64 {
    let eta = 100.0 * nu;
    // exp_m1 overflows to +inf for very cold sources, giving an exact 0.
    100.0 * C1 * eta * eta * eta / (C2 * eta / t).exp_m1()
}

/// Blackbody spectral intensity I_bν in W·m⁻²·sr⁻¹/(cm⁻¹).
pub fn planck_intensity(t: f64, nu: f64) -> Result<f64> {
    if !(t > 0.0) || !(nu > 0.0) {
        return Err(CoreError::Domain(format!(
            "planck_intensity needs T > 0 and nu > 0 (got T={t}, nu={nu})"
        )));
    }
    Ok(planck_unchecked(t, nu))
}

/// Uniform grid of half-open bands `[nu_min + i·Δν, nu_min + (i+1)·Δν)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandGrid {
    pub nu_min: f64,
    pub nu_max: f64,
    pub delta_nu: f64,
}

impl BandGrid {
    pub fn new(nu_min: f64, nu_max: f64, delta_nu: f64) -> Result<Self> {
        let g = Self { nu_min, nu_max, delta_nu };
        g.validate()?;
        Ok(g)
    }

    /// 150-9300 cm⁻¹ in 25 cm⁻¹ bands.
    pub fn furnace_default() -> Self {
        Self { nu_min: 150.0, nu_max: 9300.0, delta_nu: 25.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CoreError::config("bands", m));
        if !(self.nu_min > 0.0 && self.nu_min < self.nu_max && self.nu_max.is_finite()) {
            return err(format!("need 0 < nu_min < nu_max, got [{}, {}]", self.nu_min, self.nu_max));
        }
        if !(self.delta_nu > 0.0) {
            return err(format!("delta_nu must be > 0, got {}", self.delta_nu));
        }
        let ratio = (self.nu_max - self.nu_min) / self.delta_nu;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return err(format!(
                "(nu_max - nu_min) / delta_nu = {ratio} is not a positive integer"
            ));
        }
        Ok(())
    }

    pub fn band_count(&self) -> usize {
        ((self.nu_max - self.nu_min) / self.delta_nu).round() as usize
    }

    pub fn band_edges(&self, band: usize) -> (f64, f64) {
        let lo = self.nu_min + band as f64 * self.delta_nu;
        (lo, lo + self.delta_nu)
    }

    pub fn band_center(&self, band: usize) -> f64 {
        self.nu_min + (band as f64 + 0.5) * self.delta_nu
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.band_count()).map(|b| self.band_center(b)).collect()
    }
}

/// Per-band blackbody intensities plus whatever lies outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BandBlackbody {
    pub in_band: Vec<f64>,
    pub out_of_band: f64,
}

const GAUSS4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GAUSS4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// ∫ I_bν dν over one band with 4-point Gauss-Legendre.
pub fn band_integral(t: f64, lo: f64, hi: f64) -> f64 {
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let mut acc = 0.0;
    for (x, w) in GAUSS4_NODES.iter().zip(GAUSS4_WEIGHTS) {
        acc += w * planck_unchecked(t, mid + half * x);
    }
    acc * half
}

/// Band-integrated blackbody intensities for temperature `t`. The remainder
/// σT⁴/π − Σ bands closes the spectrum; it is clamped at zero when quadrature
/// error makes it marginally negative.
pub fn band_blackbody(t: f64, grid: &BandGrid) -> Result<BandBlackbody> {
    if !(t > 0.0) {
        return Err(CoreError::Domain(format!("band_blackbody needs T > 0, got {t}")));
    }
    let in_band: Vec<f64> = (0..grid.band_count())
        .map(|b| {
            let (lo, hi) = grid.band_edges(b);
            band_integral(t, lo, hi)
        })
        .collect();
    let total = total_blackbody_intensity(t);
    let remainder = total - in_band.iter().sum::<f64>();
    debug_assert!(remainder >= -1e-9 * total, "in-band sum exceeds σT⁴/π by {remainder}");
    Ok(BandBlackbody { in_band, out_of_band: remainder.max(0.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Species {
    #[serde(rename = "CO2")]
    Co2,
    #[serde(rename = "H2O")]
    H2o,
    #[serde(rename = "CO")]
    Co,
}

impl Species {
    pub const ALL: [Species; 3] = [Species::Co2, Species::H2o, Species::Co];

    pub fn name(self) -> &'static str {
        match self {
            Species::Co2 => "CO2",
            Species::H2o => "H2O",
            Species::Co => "CO",
        }
    }
}

/// Thermodynamic state of the gas in one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasState {
    pub temperature: f64,
    pub pressure_atm: f64,
    pub x_co2: f64,
    pub x_h2o: f64,
    pub x_co: f64,
}

impl GasState {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !(self.pressure_atm > 0.0) {
            return Err(CoreError::Domain(format!(
                "gas needs T > 0 and p > 0 (got T={}, p={})",
                self.temperature, self.pressure_atm
            )));
        }
        let x = [self.x_co2, self.x_h2o, self.x_co];
        if x.iter().any(|v| !(*v >= 0.0)) || x.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(CoreError::Domain(format!(
                "molar fractions must be >= 0 and sum to <= 1, got {x:?}"
            )));
        }
        Ok(())
    }

    pub fn fraction(&self, s: Species) -> f64 {
        match s {
            Species::Co2 => self.x_co2,
            Species::H2o => self.x_h2o,
            Species::Co => self.x_co,
        }
    }
}

/// Pressure-based absorption coefficients of one species, `k[band][temperature]`
/// in m⁻¹·atm⁻¹ per unit mole fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesTable {
    pub name: String,
    pub band_centers_cm1: Vec<f64>,
    #[serde(rename = "ref_temperatures_K")]
    pub ref_temperatures_k: Vec<f64>,
    pub k_m1_atm1: Vec<Vec<f64>>,
}

impl SpeciesTable {
    /// Linear interpolation in temperature, clamped to the table ends.
    pub fn k_at(&self, band: usize, t: f64) -> f64 {
        let temps = &self.ref_temperatures_k;
        let row = &self.k_m1_atm1[band];
        if t <= temps[0] {
            return row[0];
        }
        let last = temps.len() - 1;
        if t >= temps[last] {
            return row[last];
        }
        let j = temps.partition_point(|&r| r <= t);
        let (t0, t1) = (temps[j - 1], temps[j]);
        let f = (t - t0) / (t1 - t0);
        row[j - 1] + f * (row[j] - row[j - 1])
    }

    fn validate(&self) -> Result<()> {
        let field = format!("absorption_table.{}", self.name);
        let err = |m: String| Err(CoreError::config(field.clone(), m));
        if self.ref_temperatures_k.is_empty() {
            return err("no reference temperatures".into());
        }
        if self.ref_temperatures_k.windows(2).any(|w| !(w[0] < w[1])) {
            return err("reference temperatures must be strictly increasing".into());
        }
        if self.band_centers_cm1.windows(2).any(|w| !(w[0] < w[1])) {
            return err("band centers must be strictly increasing".into());
        }
        if self.k_m1_atm1.len() != self.band_centers_cm1.len() {
            return err(format!(
                "{} coefficient rows for {} bands",
                self.k_m1_atm1.len(),
                self.band_centers_cm1.len()
            ));
        }
        for (b, row) in self.k_m1_atm1.iter().enumerate() {
            if row.len() != self.ref_temperatures_k.len() {
                return err(format!("band {b} has {} values, expected {}", row.len(), self.ref_temperatures_k.len()));
            }
            if row.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
                return err(format!("band {b} has a negative or non-finite coefficient"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionTable {
    pub species: Vec<SpeciesTable>,
}

impl AbsorptionTable {
    pub fn validate(&self) -> Result<()> {
        for s in &self.species {
            s.validate()?;
        }
        Ok(())
    }

    /// Checks every species' band centers against `grid`.
    pub fn check_grid(&self, grid: &BandGrid) -> Result<()> {
        let centers = grid.centers();
        for s in &self.species {
            let field = format!("absorption_table.{}.band_centers_cm1", s.name);
            if s.band_centers_cm1.len() != centers.len() {
                return Err(CoreError::config(
                    field,
                    format!("{} bands in table, grid has {}", s.band_centers_cm1.len(), centers.len()),
                ));
            }
            let tol = 1e-6 * grid.delta_nu;
            if let Some(b) = (0..centers.len()).find(|&b| (s.band_centers_cm1[b] - centers[b]).abs() > tol) {
                return Err(CoreError::config(
                    field,
                    format!("band {b} center {} does not match grid center {}", s.band_centers_cm1[b], centers[b]),
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, species: Species) -> Option<&SpeciesTable> {
        self.species.iter().find(|s| s.name == species.name())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// The bundled default table for the furnace band grid.
    pub fn bundled() -> Self {
        Self::from_json(include_str!("../data/absorption_synthetic.json"))
            .expect("bundled absorption table is valid")
    }

    /// Smooth, physically shaped stand-in data for any band grid: Gaussian
    /// bands near the CO₂ 15/4.3/2.7 µm, H₂O rotational/6.3/2.7/1.87 µm and
    /// CO 4.7 µm regions, broadening and weakening with temperature.
    pub fn synthetic(grid: &BandGrid) -> Self {
        // (center cm⁻¹, width at 1000 K cm⁻¹, peak m⁻¹·atm⁻¹ at 1000 K)
        const CO2: &[(f64, f64, f64)] = &[
            (667.0, 60.0, 10.0),
            (960.0, 40.0, 0.3),
            (2350.0, 60.0, 40.0),
            (3715.0, 70.0, 4.0),
            (4980.0, 60.0, 0.5),
        ];
        const H2O: &[(f64, f64, f64)] = &[
            (150.0, 250.0, 6.0),
            (1595.0, 150.0, 5.0),
            (3755.0, 180.0, 4.0),
            (5330.0, 150.0, 1.2),
            (7250.0, 150.0, 0.5),
        ];
        const CO: &[(f64, f64, f64)] = &[(2143.0, 60.0, 8.0), (4260.0, 60.0, 0.3)];
        const TEMPS: [f64; 8] = [300.0, 600.0, 900.0, 1200.0, 1500.0, 1800.0, 2100.0, 2500.0];

        let centers = grid.centers();
        let build = |name: &str, peaks: &[(f64, f64, f64)]| {
            let k = centers
                .iter()
                .map(|&nu| {
                    TEMPS
                        .iter()
                        .map(|&t| {
                            let s = (t / 1000.0).sqrt();
                            peaks
                                .iter()
                                .map(|&(c, w, a)| {
                                    let z = (nu - c) / (w * s);
                                    a / s * (-z * z).exp()
                                })
                                .sum::<f64>()
                        })
                        .collect()
                })
                .collect();
            SpeciesTable {
                name: name.to_string(),
                band_centers_cm1: centers.clone(),
                ref_temperatures_k: TEMPS.to_vec(),
                k_m1_atm1: k,
            }
        };
        Self {
            species: vec![build("CO2", CO2), build("H2O", H2O), build("CO", CO)],
        }
    }

    /// Resolves the species a gas composition needs.
    pub fn absorber(&self, gas: &GasMixture) -> Result<Absorber<'_>> {
        let mut parts = Vec::new();
        for s in Species::ALL {
            let x = gas.fraction(s);
            if x == 0.0 {
                continue;
            }
            let table = self.get(s).ok_or_else(|| {
                CoreError::config("absorption_table", format!("no column for species {}", s.name()))
            })?;
            parts.push((gas.pressure_atm * x, table));
        }
        Ok(Absorber { parts })
    }
}

/// Pressure and composition shared by every cell of a case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasMixture {
    pub pressure_atm: f64,
    pub x_co2: f64,
    pub x_h2o: f64,
    pub x_co: f64,
}

impl Default for GasMixture {
    fn default() -> Self {
        Self { pressure_atm: 1.0, x_co2: 0.1, x_h2o: 0.2, x_co: 0.0 }
    }
}

impl GasMixture {
    pub fn transparent() -> Self {
        Self { pressure_atm: 1.0, x_co2: 0.0, x_h2o: 0.0, x_co: 0.0 }
    }

    pub fn at(&self, temperature: f64) -> GasState {
        GasState {
            temperature,
            pressure_atm: self.pressure_atm,
            x_co2: self.x_co2,
            x_h2o: self.x_h2o,
            x_co: self.x_co,
        }
    }

    pub fn fraction(&self, s: Species) -> f64 {
        self.at(1.0).fraction(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.at(1.0).validate().map_err(|e| CoreError::config("gas", e.to_string()))
    }
}

/// A table bound to one composition: κ = Σ p·x_g·k_g(band, T).
#[derive(Debug, Clone)]
pub struct Absorber<'a> {
    parts: Vec<(f64, &'a SpeciesTable)>,
}

impl Absorber<'_> {
    #[inline]
    pub fn kappa(&self, band: usize, t: f64) -> f64 {
        self.parts.iter().map(|(px, tab)| px * tab.k_at(band, t)).sum()
    }

    pub fn is_transparent(&self) -> bool {
        self.parts.is_empty()
    }
}

/// κ (m⁻¹) of a gas state in one band.
pub fn absorption_coefficient(band: usize, gas: &GasState, table: &AbsorptionTable) -> Result<f64> {
    gas.validate()?;
    let mixture = GasMixture {
        pressure_atm: gas.pressure_atm,
        x_co2: gas.x_co2,
        x_h2o: gas.x_h2o,
        x_co: gas.x_co,
    };
    let absorber = table.absorber(&mixture)?;
    if let Some((_, t)) = absorber.parts.iter().find(|(_, t)| band >= t.k_m1_atm1.len()) {
        return Err(CoreError::Domain(format!("band {band} outside table {} ({} bands)", t.name, t.k_m1_atm1.len())));
    }
    Ok(absorber.kappa(band, gas.temperature))
}

/// exp(−Σ κᵢ Δsᵢ) over `(κ, Δs)` segments.
pub fn path_transmissivity(segments: &[(f64, f64)]) -> Result<f64> {
    let mut depth = 0.0;
    for &(k, ds) in segments {
        if !(k >= 0.0) || !(ds >= 0.0) {
            return Err(CoreError::Domain(format!(
                "path segment needs kappa >= 0 and ds >= 0, got ({k}, {ds})"
            )));
        }
        depth += k * ds;
    }
    Ok((-depth).exp())
}
