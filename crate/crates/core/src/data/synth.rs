use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{default_feature_names, Dataset, SampleRecord};
use crate::error::{Error, Result};

/// Whether a class is available for initial training or withheld as unknown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassRole {
    Known,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub role: ClassRole,
    pub count: usize,
    /// Explicit class mean; placed automatically when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
}

/// Moves `near` to within `distance` σ of `anchor`, outward along the
/// anchor's own placement axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardPair {
    pub anchor: String,
    pub near: String,
    pub distance: f64,
}

/// How automatic class means are arranged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanLayout {
    /// One signed coordinate axis per class.
    Axes,
    /// Classes fill a grid row by row, `columns` per row. Rows advance along
    /// the first coordinate (an ordinal factor); column `j > 0` adds a step
    /// along coordinate `j` (a categorical factor).
    Factorial { columns: usize },
}

/// Declarative description of a scenario. In synthetic mode each class is an
/// isotropic Gaussian with standard deviation `sigma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub dim: usize,
    pub sigma: f64,
    /// Minimum distance between automatically placed class means, in σ.
    pub separation: f64,
    pub layout: MeanLayout,
    pub hard_pair: Option<HardPair>,
    #[serde(rename = "class")]
    pub classes: Vec<ClassSpec>,
}

impl Default for ScenarioSpec {
    /// Nine tool × surface conditions with 30 samples each; the damaged-tool
    /// conditions are withheld.
    fn default() -> Self {
        let mut classes = Vec::new();
        for tool in ["new", "worn", "damaged"] {
            for surface in ["clean", "contaminated", "polished"] {
                classes.push(ClassSpec {
                    name: format!("{tool}_{surface}"),
                    role: if tool == "damaged" {
                        ClassRole::Unknown
                    } else {
                        ClassRole::Known
                    },
                    count: 30,
                    mean: None,
                });
            }
        }
        ScenarioSpec {
            name: "default".into(),
            dim: 20,
            sigma: 1.0,
            separation: 12.0,
            layout: MeanLayout::Factorial { columns: 3 },
            hard_pair: None,
            classes,
        }
    }
}

impl ScenarioSpec {
    pub fn known(&self) -> impl Iterator<Item = &ClassSpec> {
        self.classes.iter().filter(|c| c.role == ClassRole::Known)
    }

    pub fn unknown(&self) -> impl Iterator<Item = &ClassSpec> {
        self.classes.iter().filter(|c| c.role == ClassRole::Unknown)
    }

    pub fn known_names(&self) -> Vec<String> {
        self.known().map(|c| c.name.clone()).collect()
    }

    pub fn unknown_names(&self) -> Vec<String> {
        self.unknown().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("scenario dim must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("covariance scale must be positive, got {}", self.sigma)));
        }
        if self.classes.is_empty() {
            return Err(Error::config("scenario declares no classes"));
        }
        let mut names = std::collections::HashSet::new();
        for c in &self.classes {
            if c.name.is_empty() || !names.insert(c.name.as_str()) {
                return Err(Error::config(format!("class name `{}` is empty or duplicated", c.name)));
            }
            if c.count == 0 {
                return Err(Error::config(format!("class `{}` has a zero sample count", c.name)));
            }
            if let Some(m) = &c.mean {
                if m.len() != self.dim || m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config(format!("class `{}` mean must have {} finite entries", c.name, self.dim)));
                }
            }
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::config(format!("separation must be positive, got {}", self.separation)));
        }
        let auto = self.classes.iter().filter(|c| c.mean.is_none()).count();
        match self.layout {
            MeanLayout::Axes if auto > 2 * self.dim => {
                return Err(Error::config(format!(
                    "{auto} classes need automatic means but dim {} supports at most {}",
                    self.dim,
                    2 * self.dim
                )));
            }
            MeanLayout::Factorial { columns } if columns == 0 || columns > self.dim => {
                return Err(Error::config(format!("factorial layout needs 1..={} columns, got {columns}", self.dim)));
            }
            _ => {}
        }
        if let Some(hp) = &self.hard_pair {
            for n in [&hp.anchor, &hp.near] {
                if !names.contains(n.as_str()) {
                    return Err(Error::config(format!("hard pair references unknown class `{n}`")));
                }
            }
            if hp.anchor == hp.near || !(hp.distance > 0.0) {
                return Err(Error::config("hard pair needs two distinct classes and a positive distance"));
            }
        }
        Ok(())
    }

    /// Class means. Automatic means are at least `separation` σ apart and
    /// share a seeded offset.
    pub fn class_means(&self, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d65_616e_735f_5f5f);
        let offset: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-2.0..2.0) * self.sigma).collect();
        let step = self.separation * self.sigma;
        // Direction in which a hard-pair partner is pushed away from its anchor.
        let mut outward = Vec::with_capacity(self.classes.len());
        let mut auto_index = 0;
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(self.classes.len());
        for c in &self.classes {
            if let Some(m) = &c.mean {
                outward.push((0, 1.0));
                means.push(m.clone());
                continue;
            }
            let i = auto_index;
            auto_index += 1;
            let mut m = offset.clone();
            match self.layout {
                MeanLayout::Axes => {
                    let axis = i % self.dim;
                    let sign = if i < self.dim { 1.0 } else { -1.0 };
                    m[axis] += sign * step / std::f64::consts::SQRT_2;
                    outward.push((axis, sign));
                }
                MeanLayout::Factorial { columns } => {
                    let (row, col) = (i / columns, i % columns);
                    m[0] += row as f64 * step;
                    if col > 0 {
                        m[col] += step;
                    }
                    outward.push((0, if row == 0 { -1.0 } else { 1.0 }));
                }
            }
            means.push(m);
        }
        if let Some(hp) = &self.hard_pair {
            let a = self.classes.iter().position(|c| c.name == hp.anchor).unwrap();
            let b = self.classes.iter().position(|c| c.name == hp.near).unwrap();
            let (axis, sign) = outward[a];
            let mut m = means[a].clone();
            m[axis] += sign * hp.distance * self.sigma;
            means[b] = m;
        }
        Ok(means)
    }
}

/// Draws `count` samples per class. Pure function of `(spec, seed)`.
pub fn synth_generate(spec: &ScenarioSpec, seed: u64) -> Result<Dataset> {
    let means = spec.class_means(seed)?;
    let normal = Normal::new(0.0, spec.sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(spec.classes.iter().map(|c| c.count).sum());
    for (class, mean) in spec.classes.iter().zip(&means) {
        for _ in 0..class.count {
            let features = mean.iter().map(|m| m + normal.sample(&mut rng)).collect();
            records.push(SampleRecord {
                sample_id: format!("s{:04}", records.len()),
                features,
                label: Some(class.name.clone()),
            });
        }
    }
    Ok(Dataset {
        feature_names: default_feature_names(spec.dim),
        records,
    })
}
