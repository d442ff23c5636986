//! Deterministic synthetic cohorts: an annotated training cohort and a
//! prevalence-shifted, unannotated inference cohort with planted classes,
//! within-class subtypes, ICD emission and templated report text.

mod generate;
mod resources;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate, generate_subjects, motif_template, Cohort, SIGNAL_QUANTUM};
pub use resources::{allowlist, lexicon, phecode_categories, phecode_mapping};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BumpShape {
    Gaussian,
    /// First derivative of a Gaussian, normalised to unit peak.
    Biphasic,
}

/// A band-limited bump train: bumps of `width` samples every `period`
/// samples, scaled per channel by `leads`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifParams {
    pub period: f64,
    pub width: f64,
    pub amplitude: f64,
    pub shape: BumpShape,
    pub leads: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcdEmission {
    pub sensitivity: f64,
    pub fp_rate: f64,
    pub icd9: String,
    pub icd10: String,
    pub phecode: String,
    pub description: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEmission {
    pub term: String,
    pub abbreviation: Option<String>,
    pub cui: String,
    /// P(affirmed mention | class held).
    pub sensitivity: f64,
    /// P(affirmed mention | class not held).
    pub false_mention: f64,
    /// P(negated mention | class not held and no false mention).
    pub negated_mention: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtypeSpec {
    pub name: String,
    /// Relative frequency among the class's positives.
    pub weight: f64,
    pub motif: MotifParams,
    /// Outcome codes emitted for this subtype's records only (plus false
    /// positives elsewhere).
    pub outcomes: Vec<IcdEmission>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub code: String,
    pub prevalence: f64,
    pub subtypes: Vec<SubtypeSpec>,
    pub icd: IcdEmission,
    pub report: ReportEmission,
}

/// Phecode whose ICD codes are emitted independently of every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullPhenotype {
    pub prevalence: f64,
    pub icd9: String,
    pub icd10: String,
    pub phecode: String,
    pub description: String,
    pub category: String,
}

/// Report concept mentioned independently of every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentalConcept {
    pub term: String,
    pub cui: String,
    pub rate: f64,
    /// Whether the concept passes the reviewed allowlist.
    pub allowlisted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub name: String,
    pub n_subjects: usize,
    /// Added to generated subject ids so cohorts never share subjects.
    pub subject_id_offset: u64,
    pub channels: usize,
    pub samples: usize,
    pub noise_sd: f64,
    pub baseline: MotifParams,
    pub classes: Vec<ClassSpec>,
    pub null_phenotypes: Vec<NullPhenotype>,
    pub incidental_concepts: Vec<IncidentalConcept>,
    /// P(another admission) after each admission, up to `max_admissions`.
    pub p_extra_admission: f64,
    pub max_admissions: usize,
    /// P(a second ECG in an admission) and P(a third given a second).
    pub p_extra_ecg: f64,
    /// P(an extra ECG shares the previous ECG's timestamp).
    pub p_timestamp_tie: f64,
    /// P(an unmapped ICD code is added to an admission).
    pub p_unmapped_code: f64,
    /// Whether records carry annotated class labels.
    pub annotated: bool,
    pub seed: u64,
}

impl CohortSpec {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.code.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.channels == 0 || self.samples == 0 {
            return bad("channels and samples must be positive".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd {}", self.noise_sd));
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let check_motif = |m: &MotifParams, what: &str| -> Result<()> {
            if m.leads.len() != self.channels {
                return Err(Error::InvalidSpec(format!(
                    "{what}: {} lead weights for {} channels",
                    m.leads.len(),
                    self.channels
                )));
            }
            if !(m.period > 0.0 && m.width > 0.0 && m.amplitude.is_finite()) {
                return Err(Error::InvalidSpec(format!("{what}: period/width must be positive")));
            }
            Ok(())
        };
        check_motif(&self.baseline, "baseline")?;
        for c in &self.classes {
            // prevalence 0 disables a class; otherwise it must lie in (0, 1)
            if !(0.0..1.0).contains(&c.prevalence) {
                return bad(format!("{}: prevalence {} outside [0, 1)", c.code, c.prevalence));
            }
            if c.subtypes.is_empty() {
                return bad(format!("{}: at least one subtype required", c.code));
            }
            for s in &c.subtypes {
                check_motif(&s.motif, &format!("{}/{}", c.code, s.name))?;
                if !(s.weight > 0.0) {
                    return bad(format!("{}/{}: subtype weight must be positive", c.code, s.name));
                }
                for icd in &s.outcomes {
                    if !prob(icd.sensitivity) || !prob(icd.fp_rate) {
                        return bad(format!("{}/{}: emission rates outside [0, 1]", c.code, s.name));
                    }
                }
            }
            if !prob(c.icd.sensitivity) || !prob(c.icd.fp_rate) {
                return bad(format!("{}: emission rates outside [0, 1]", c.code));
            }
            let r = &c.report;
            if !prob(r.sensitivity) || !prob(r.false_mention) || !prob(r.negated_mention) {
                return bad(format!("{}: report rates outside [0, 1]", c.code));
            }
        }
        for n in &self.null_phenotypes {
            if !prob(n.prevalence) {
                return bad(format!("{}: prevalence outside [0, 1]", n.phecode));
            }
        }
        for n in &self.incidental_concepts {
            if !prob(n.rate) {
                return bad(format!("{}: rate outside [0, 1]", n.cui));
            }
        }
        for p in [self.p_extra_admission, self.p_extra_ecg, self.p_timestamp_tie, self.p_unmapped_code] {
            if !prob(p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
        if self.max_admissions == 0 || self.max_admissions > 9 {
            return bad("max_admissions must be in 1..=9".into());
        }
        Ok(())
    }

    /// Copy for a second cohort: prevalences multiplied by `multipliers`
    /// (capped below 1), labels withheld, new seed and subject range.
    pub fn shifted(&self, name: &str, multipliers: &[f64], seed: u64, subject_id_offset: u64) -> Result<CohortSpec> {
        if multipliers.len() != self.classes.len() {
            return Err(Error::InvalidSpec(format!(
                "{} shift multipliers for {} classes",
                multipliers.len(),
                self.classes.len()
            )));
        }
        let mut s = self.clone();
        s.name = name.to_string();
        for (c, m) in s.classes.iter_mut().zip(multipliers) {
            if !(*m >= 0.0) {
                return Err(Error::InvalidSpec(format!("shift multiplier {m}")));
            }
            c.prevalence = (c.prevalence * m).min(0.95);
        }
        s.annotated = false;
        s.seed = seed;
        s.subject_id_offset = subject_id_offset;
        Ok(s)
    }
}

fn uniform_leads(channels: usize, value: f64) -> Vec<f64> {
    vec![value; channels]
}

/// Non-negative lead weights supported on the `part`-th of `parts`
/// contiguous channel groups; distinct parts are orthogonal.
pub fn partitioned_leads(channels: usize, parts: usize, part: usize) -> Vec<f64> {
    let size = channels.div_ceil(parts.max(1));
    (0..channels)
        .map(|ch| if ch / size == part { 1.0 } else { 0.0 })
        .collect()
}

/// Split class `class` into `n_subtypes` subtypes with orthogonal lead
/// support, distinct bump widths and one ICD code / phecode per subtype.
///
/// Returns a warning when there are more subtypes than prototypes per class,
/// since every subtype can then not own a prototype.
pub fn plant_subtypes(
    spec: &CohortSpec,
    class: usize,
    n_subtypes: usize,
    prototypes_per_class: usize,
) -> Result<(CohortSpec, Option<String>)> {
    let Some(base) = spec.classes.get(class) else {
        return Err(Error::InvalidSpec(format!("no class {class}")));
    };
    if n_subtypes == 0 {
        return Err(Error::InvalidSpec("n_subtypes must be >= 1".into()));
    }
    if n_subtypes == 1 {
        return Ok((spec.clone(), None));
    }
    let warning = (n_subtypes > prototypes_per_class).then(|| {
        format!(
            "{}: {n_subtypes} subtypes exceed {prototypes_per_class} prototypes per class; subtype recovery not guaranteed",
            base.code
        )
    });
    let template = base.subtypes[0].motif.clone();
    let mut out = spec.clone();
    let cls = &mut out.classes[class];
    cls.subtypes = (0..n_subtypes)
        .map(|s| {
            let phe_base = cls.icd.phecode.clone();
            SubtypeSpec {
                name: format!("{}-{}", cls.code.to_lowercase(), s + 1),
                weight: 1.0,
                motif: MotifParams {
                    period: template.period * (1.0 + 0.35 * s as f64),
                    width: template.width * (1.0 + 0.6 * s as f64),
                    amplitude: template.amplitude,
                    shape: if s % 2 == 0 { template.shape } else { flip(template.shape) },
                    leads: partitioned_leads(spec.channels, n_subtypes, s),
                },
                outcomes: vec![IcdEmission {
                    sensitivity: 0.9,
                    fp_rate: 0.002,
                    icd9: with_suffix(&cls.icd.icd9, s + 1),
                    icd10: with_suffix(&cls.icd.icd10, s + 1),
                    phecode: with_suffix(&phe_base, s + 1),
                    description: format!("{} subtype {}", cls.icd.description, s + 1),
                    category: cls.icd.category.clone(),
                }],
            }
        })
        .collect();
    Ok((out, warning))
}

/// Attach an extra outcome phenotype to one subtype of `class`.
pub fn add_subtype_outcome(spec: &CohortSpec, class: usize, subtype: usize, outcome: IcdEmission) -> Result<CohortSpec> {
    let mut out = spec.clone();
    let sub = out
        .classes
        .get_mut(class)
        .and_then(|c| c.subtypes.get_mut(subtype))
        .ok_or_else(|| Error::InvalidSpec(format!("no subtype {subtype} of class {class}")))?;
    sub.outcomes.push(outcome);
    Ok(out)
}

/// `410` -> `410.1`, `411.2` -> `411.21`.
fn with_suffix(code: &str, k: usize) -> String {
    if code.contains('.') {
        format!("{code}{k}")
    } else {
        format!("{code}.{k}")
    }
}

fn flip(shape: BumpShape) -> BumpShape {
    match shape {
        BumpShape::Gaussian => BumpShape::Biphasic,
        BumpShape::Biphasic => BumpShape::Gaussian,
    }
}

struct ClassTemplate {
    code: &'static str,
    term: &'static str,
    abbreviation: Option<&'static str>,
    prevalence: f64,
    period: f64,
    width: f64,
    amplitude: f64,
    shape: BumpShape,
    icd9: &'static str,
    icd10: &'static str,
    phecode: &'static str,
    category: &'static str,
}

const CLASS_TEMPLATES: [ClassTemplate; 6] = [
    ClassTemplate {
        code: "AFIB",
        term: "atrial fibrillation",
        abbreviation: Some("afib"),
        prevalence: 0.10,
        period: 17.0,
        width: 1.5,
        amplitude: 0.6,
        shape: BumpShape::Gaussian,
        icd9: "427.31",
        icd10: "I48.91",
        phecode: "427.21",
        category: "circulatory system",
    },
    ClassTemplate {
        code: "LBBB",
        term: "left bundle branch block",
        abbreviation: Some("lbbb"),
        prevalence: 0.08,
        period: 75.0,
        width: 8.0,
        amplitude: 1.2,
        shape: BumpShape::Biphasic,
        icd9: "426.3",
        icd10: "I44.7",
        phecode: "426.32",
        category: "circulatory system",
    },
    ClassTemplate {
        code: "STD",
        term: "st depression",
        abbreviation: None,
        prevalence: 0.12,
        period: 80.0,
        width: 12.0,
        amplitude: -0.7,
        shape: BumpShape::Gaussian,
        icd9: "794.31",
        icd10: "R94.31",
        phecode: "426.9",
        category: "circulatory system",
    },
    ClassTemplate {
        code: "MI",
        term: "myocardial infarction",
        abbreviation: Some("mi"),
        prevalence: 0.08,
        period: 70.0,
        width: 4.0,
        amplitude: 1.4,
        shape: BumpShape::Biphasic,
        icd9: "410",
        icd10: "I21",
        phecode: "411.2",
        category: "circulatory system",
    },
    ClassTemplate {
        code: "LVH",
        term: "left ventricular hypertrophy",
        abbreviation: Some("lvh"),
        prevalence: 0.08,
        period: 60.0,
        width: 5.0,
        amplitude: 1.3,
        shape: BumpShape::Gaussian,
        icd9: "429.3",
        icd10: "I51.7",
        phecode: "416",
        category: "circulatory system",
    },
    ClassTemplate {
        code: "PVC",
        term: "premature ventricular complexes",
        abbreviation: Some("pvc"),
        prevalence: 0.08,
        period: 230.0,
        width: 6.0,
        amplitude: 2.0,
        shape: BumpShape::Biphasic,
        icd9: "427.69",
        icd10: "I49.3",
        phecode: "427.5",
        category: "circulatory system",
    },
];

const NULL_PHENOTYPES: [(&str, &str, &str, &str, &str, f64); 8] = [
    ("250.0", "E11.9", "250.2", "type 2 diabetes", "endocrine/metabolic", 0.12),
    ("585.9", "N18.9", "585.3", "chronic kidney disease", "genitourinary", 0.08),
    ("486", "J18.9", "480", "pneumonia", "respiratory", 0.06),
    ("285.9", "D64.9", "285", "anemia", "hematopoietic", 0.10),
    ("038.9", "A41.9", "038", "sepsis", "infectious diseases", 0.04),
    ("296.2", "F32.9", "296.2", "depression", "mental disorders", 0.07),
    ("278.0", "E66.9", "278.1", "obesity", "endocrine/metabolic", 0.09),
    ("530.8", "K21.9", "530.1", "gastroesophageal reflux", "digestive", 0.05),
];

/// Downstream outcomes carried by one subtype only: (class, subtype,
/// ICD-9, ICD-10, phecode, description).
const SUBTYPE_OUTCOMES: [(usize, usize, &str, &str, &str, &str); 4] = [
    (3, 0, "414.10", "I25.3", "411.41", "aneurysm of heart"),
    (3, 1, "785.51", "R57.0", "785", "cardiogenic shock"),
    (4, 0, "402.91", "I11.9", "401.21", "hypertensive heart disease"),
    (4, 1, "424.1", "I35.0", "395.1", "aortic valve stenosis"),
];

impl CohortSpec {
    /// Desk-scale defaults: six classes, MI and LVH each split into two
    /// subtypes with subtype-specific phecodes, 8 channels × 1,000 samples.
    pub fn desk_default(n_subjects: usize, seed: u64) -> CohortSpec {
        let channels = 8;
        let classes = CLASS_TEMPLATES
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let leads: Vec<f64> = (0..channels)
                    .map(|ch| 0.3 + 0.7 * (((ch * 7 + i * 3) % 11) as f64 / 10.0))
                    .collect();
                ClassSpec {
                    code: t.code.to_string(),
                    prevalence: t.prevalence,
                    subtypes: vec![SubtypeSpec {
                        name: t.code.to_lowercase(),
                        weight: 1.0,
                        motif: MotifParams {
                            period: t.period,
                            width: t.width,
                            amplitude: t.amplitude,
                            shape: t.shape,
                            leads,
                        },
                        outcomes: Vec::new(),
                    }],
                    icd: IcdEmission {
                        sensitivity: 0.75,
                        fp_rate: 0.01,
                        icd9: t.icd9.to_string(),
                        icd10: t.icd10.to_string(),
                        phecode: t.phecode.to_string(),
                        description: t.term.to_string(),
                        category: t.category.to_string(),
                    },
                    report: ReportEmission {
                        term: t.term.to_string(),
                        abbreviation: t.abbreviation.map(str::to_string),
                        cui: format!("CUI-{}", t.code),
                        sensitivity: 0.55,
                        false_mention: 0.03,
                        negated_mention: 0.15,
                    },
                }
            })
            .collect();
        let null_phenotypes = NULL_PHENOTYPES
            .iter()
            .map(|&(icd9, icd10, phecode, description, category, prevalence)| NullPhenotype {
                prevalence,
                icd9: icd9.to_string(),
                icd10: icd10.to_string(),
                phecode: phecode.to_string(),
                description: description.to_string(),
                category: category.to_string(),
            })
            .collect();
        let incidental_concepts = vec![
            IncidentalConcept {
                term: "echocardiogram".into(),
                cui: "CUI-ECHO".into(),
                rate: 0.12,
                allowlisted: true,
            },
            IncidentalConcept {
                term: "pacemaker".into(),
                cui: "CUI-PACER".into(),
                rate: 0.05,
                allowlisted: true,
            },
            IncidentalConcept {
                term: "prior tracing".into(),
                cui: "CUI-PRIOR".into(),
                rate: 0.20,
                allowlisted: true,
            },
            IncidentalConcept {
                term: "baseline wander".into(),
                cui: "CUI-WANDER".into(),
                rate: 0.15,
                allowlisted: false,
            },
            IncidentalConcept {
                term: "brugada pattern".into(),
                cui: "CUI-BRUGADA".into(),
                rate: 0.004,
                allowlisted: true,
            },
        ];
        let spec = CohortSpec {
            name: "train".into(),
            n_subjects,
            subject_id_offset: 100_000,
            channels,
            samples: 1000,
            noise_sd: 0.15,
            baseline: MotifParams {
                period: 80.0,
                width: 2.5,
                amplitude: 1.0,
                shape: BumpShape::Gaussian,
                leads: uniform_leads(channels, 0.8),
            },
            classes,
            null_phenotypes,
            incidental_concepts,
            p_extra_admission: 0.3,
            max_admissions: 3,
            p_extra_ecg: 0.3,
            p_timestamp_tie: 0.25,
            p_unmapped_code: 0.2,
            annotated: true,
            seed,
        };
        let (mut spec, _) = plant_subtypes(&spec, 3, 2, 5).expect("valid class index");
        (spec, _) = plant_subtypes(&spec, 4, 2, 5).expect("valid class index");
        for &(class, subtype, icd9, icd10, phecode, description) in &SUBTYPE_OUTCOMES {
            let outcome = IcdEmission {
                sensitivity: 0.5,
                fp_rate: 0.004,
                icd9: icd9.into(),
                icd10: icd10.into(),
                phecode: phecode.into(),
                description: description.into(),
                category: "circulatory system".into(),
            };
            spec = add_subtype_outcome(&spec, class, subtype, outcome).expect("valid subtype");
        }
        spec
    }

    /// Prevalence multipliers applied to the inference cohort by default.
    pub fn default_shift() -> Vec<f64> {
        vec![1.5, 1.0, 1.3, 1.2, 1.0, 0.8]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        let s = CohortSpec::desk_default(100, 1);
        s.validate().unwrap();
        assert_eq!(s.classes.len(), 6);
        assert_eq!(s.classes.iter().filter(|c| c.subtypes.len() == 2).count(), 2);
    }

    #[test]
    fn one_subtype_leaves_spec_unchanged() {
        let s = CohortSpec::desk_default(10, 1);
        let (t, w) = plant_subtypes(&s, 0, 1, 5).unwrap();
        assert_eq!(s, t);
        assert!(w.is_none());
    }

    #[test]
    fn too_many_subtypes_warns() {
        let s = CohortSpec::desk_default(10, 1);
        let (_, w) = plant_subtypes(&s, 0, 4, 3).unwrap();
        assert!(w.is_some());
    }

    #[test]
    fn partitioned_leads_are_orthogonal() {
        let a = partitioned_leads(8, 2, 0);
        let b = partitioned_leads(8, 2, 1);
        assert_eq!(a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>(), 0.0);
        assert_eq!(a.iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn invalid_fields_rejected() {
        let mut s = CohortSpec::desk_default(10, 1);
        s.classes[0].prevalence = 1.5;
        assert!(s.validate().is_err());
        let mut s = CohortSpec::desk_default(10, 1);
        s.classes[1].icd.sensitivity = -0.1;
        assert!(s.validate().is_err());
        let mut s = CohortSpec::desk_default(10, 1);
        s.baseline.leads.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn shift_withholds_labels() {
        let s = CohortSpec::desk_default(10, 1);
        let t = s.shifted("infer", &CohortSpec::default_shift(), 2, 900_000).unwrap();
        assert!(!t.annotated);
        assert!((t.classes[0].prevalence - 0.15).abs() < 1e-12);
        assert!(s.shifted("x", &[1.0], 2, 0).is_err());
    }
}
