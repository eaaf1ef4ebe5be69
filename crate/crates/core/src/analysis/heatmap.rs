use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use super::{interferer_distribution, BirthTimeDist, CoopField, QuadratureConfig, Rect, Scenario3, ScenarioCoop};
use crate::error::{Error, Result};
use crate::units::Position;

/// Regular grid of cells; values are evaluated at cell centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { x_min: -60.0, x_max: 180.0, y_min: -120.0, y_max: 120.0, nx: 60, ny: 48 }
    }
}

impl GridSpec {
    pub fn over(rect: &Rect, nx: usize, ny: usize) -> Result<Self> {
        let g = Self { x_min: rect.x_min, x_max: rect.x_max, y_min: rect.y_min, y_max: rect.y_max, nx, ny };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidParameter("grid needs at least 2 x 2 cells".into()));
        }
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(Error::InvalidParameter("grid bounds are empty".into()));
        }
        Ok(())
    }

    pub fn rect(&self) -> Rect {
        Rect { x_min: self.x_min, x_max: self.x_max, y_min: self.y_min, y_max: self.y_max }
    }

    pub fn cell_size(&self) -> (f64, f64) {
        ((self.x_max - self.x_min) / self.nx as f64, (self.y_max - self.y_min) / self.ny as f64)
    }

    /// Cell centers, x varying fastest.
    pub fn cell_centers(&self) -> Vec<Position> {
        let (dx, dy) = self.cell_size();
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(Position::new(
                    self.x_min + (i as f64 + 0.5) * dx,
                    self.y_min + (j as f64 + 0.5) * dy,
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Interferer,
    CoopMinus,
    CoopPlus,
    CoopAvg,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [Self::Interferer, Self::CoopMinus, Self::CoopPlus, Self::CoopAvg];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Interferer => "interferer",
            Self::CoopMinus => "coop_minus",
            Self::CoopPlus => "coop_plus",
            Self::CoopAvg => "coop_avg",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|q| q.name() == norm)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown quantity '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatCell {
    pub position: Position,
    /// `None` where the cell center coincides with S or D.
    pub value: Option<f64>,
}

/// Evaluates a distribution at every cell center of `grid`. The cooperator
/// quantities treat the cell as `p_c`; `sc.p_c` is ignored.
pub fn heatmap(
    quantity: Quantity,
    sc: &ScenarioCoop,
    grid: &GridSpec,
    f: &BirthTimeDist,
    q: &QuadratureConfig,
) -> Result<Vec<HeatCell>> {
    Ok(heatmaps(&[quantity], sc, grid, f, q)?.remove(0))
}

/// Several maps over the same grid; the cooperator quantities share one
/// precomputed field.
pub fn heatmaps(
    quantities: &[Quantity],
    sc: &ScenarioCoop,
    grid: &GridSpec,
    f: &BirthTimeDist,
    q: &QuadratureConfig,
) -> Result<Vec<Vec<HeatCell>>> {
    grid.validate()?;
    q.validate()?;
    let centers = grid.cell_centers();
    let skip = |p: &Position| *p == sc.p_s || *p == sc.p_d;
    let field = if quantities.iter().any(|x| *x != Quantity::Interferer) {
        let targets: Vec<Position> = centers.iter().copied().filter(|p| !skip(p)).collect();
        Some(CoopField::new(sc, &targets, f, q)?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(quantities.len());
    for &quantity in quantities {
        let values: Vec<Option<f64>> = centers
            .par_iter()
            .map(|p| {
                if skip(p) {
                    return Ok(None);
                }
                let v = match (quantity, &field) {
                    (Quantity::Interferer, _) => {
                        let s = Scenario3::new(sc.p_s, sc.p_d, *p, sc.props, sc.rates)?;
                        interferer_distribution(&s, f, q)?
                    }
                    (_, Some(field)) => {
                        let v = field.eval(*p)?;
                        match quantity {
                            Quantity::CoopMinus => v.minus,
                            Quantity::CoopPlus => v.plus,
                            _ => v.average,
                        }
                    }
                    (_, None) => unreachable!("field is built for cooperator maps"),
                };
                Ok(Some(v))
            })
            .collect::<Result<_>>()?;
        out.push(centers.iter().copied().zip(values).map(|(position, value)| HeatCell { position, value }).collect());
    }
    Ok(out)
}

/// Writes `x_m,y_m,value`; absent cells get an empty value field.
pub fn write_heatmap_csv<W: Write>(mut w: W, cells: &[HeatCell]) -> Result<()> {
    writeln!(w, "x_m,y_m,value")?;
    for c in cells {
        let v = c.value.map(format_sig6).unwrap_or_default();
        writeln!(w, "{},{},{}", format_sig6(c.position.x), format_sig6(c.position.y), v)?;
    }
    Ok(())
}

/// Fixed-point decimal with six significant digits.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{:.*}", decimals, v);
    // Rounding can carry into a new digit (9.999995 -> 10.00000).
    let rounded: f64 = s.parse().unwrap_or(v);
    if rounded != 0.0 && (rounded.abs().log10().floor() as i32) > mag && decimals > 0 {
        return format!("{:.*}", decimals - 1, v);
    }
    s
}
