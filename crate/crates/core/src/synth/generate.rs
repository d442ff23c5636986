use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{BumpShape, ClassSpec, CohortSpec, MotifParams};
use crate::cohort::{CohortRecord, GroundTruth, IcdCode};
use crate::error::Result;
use crate::seed::rng_for;
use crate::signal::Signal;

/// Signals are quantised to multiples of 2^-10 so that the 16-bit cohort
/// file encoding is lossless.
pub const SIGNAL_QUANTUM: f32 = 1.0 / 1024.0;

/// ICD-10 replaced ICD-9 for admissions on or after this date.
fn icd10_cutover() -> NaiveDate {
    NaiveDate::from_ymd_opt(2015, 10, 1).expect("valid date")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub records: Vec<CohortRecord>,
    pub truth: Vec<GroundTruth>,
}

impl Cohort {
    /// Truth aligned to an arbitrary list of records, by record id.
    pub fn truth_for(&self, records: &[CohortRecord]) -> Vec<GroundTruth> {
        let by_id: std::collections::HashMap<u64, &GroundTruth> = self.truth.iter().map(|t| (t.record_id, t)).collect();
        records
            .iter()
            .filter_map(|r| by_id.get(&r.record_id).map(|t| (*t).clone()))
            .collect()
    }
}

fn bump(shape: BumpShape, x: f64) -> f64 {
    match shape {
        BumpShape::Gaussian => (-0.5 * x * x).exp(),
        // x·exp(-(x²-1)/2) peaks at 1 for x = 1
        BumpShape::Biphasic => x * (0.5 - 0.5 * x * x).exp(),
    }
}

/// Adds the motif into `out` (channel-major, `samples` per channel) with
/// the first bump at `phase`; `jitter` holds one offset per bump.
fn render_into(out: &mut [f64], samples: usize, motif: &MotifParams, phase: f64, amplitude: f64, jitter: &[f64]) {
    let reach = (5.0 * motif.width).ceil() as i64;
    let mut k = 0usize;
    loop {
        let centre = phase + k as f64 * motif.period + jitter.get(k).copied().unwrap_or(0.0);
        if centre - reach as f64 > samples as f64 {
            break;
        }
        let lo = ((centre.floor() as i64) - reach).max(0) as usize;
        let hi = ((centre.ceil() as i64) + reach).clamp(0, samples as i64) as usize;
        for t in lo..hi {
            let v = amplitude * bump(motif.shape, (t as f64 - centre) / motif.width);
            for (ch, &lead) in motif.leads.iter().enumerate() {
                if lead != 0.0 {
                    out[ch * samples + t] += lead * v;
                }
            }
        }
        k += 1;
    }
}

/// Noise-free rendering of a motif with its first bump at `phase`.
pub fn motif_template(motif: &MotifParams, channels: usize, samples: usize, phase: f64) -> Vec<f64> {
    let mut out = vec![0.0; channels * samples];
    render_into(&mut out, samples, motif, phase, motif.amplitude, &[]);
    out
}

fn bump_count(motif: &MotifParams, samples: usize) -> usize {
    (samples as f64 / motif.period).ceil() as usize + 2
}

fn render_random(out: &mut [f64], samples: usize, motif: &MotifParams, period_scale: f64, rng: &mut ChaCha8Rng) {
    let m = MotifParams {
        period: motif.period * period_scale,
        ..motif.clone()
    };
    let phase = rng.random_range(0.0..m.period) - m.period;
    let amplitude = m.amplitude * rng.random_range(0.8..1.2);
    let jitter: Vec<f64> = (0..bump_count(&m, samples) + 1)
        .map(|_| rng.random_range(-0.04..0.04) * m.period)
        .collect();
    render_into(out, samples, &m, phase, amplitude, &jitter);
}

struct SubjectDraw {
    classes: Vec<usize>,
    subtypes: Vec<(usize, usize)>,
    nulls: Vec<usize>,
    rate_scale: f64,
}

fn draw_subject(spec: &CohortSpec, rng: &mut ChaCha8Rng) -> SubjectDraw {
    let mut classes = Vec::new();
    let mut subtypes = Vec::new();
    for (c, cls) in spec.classes.iter().enumerate() {
        if rng.random::<f64>() < cls.prevalence {
            classes.push(c);
            subtypes.push((c, pick_subtype(cls, rng)));
        }
    }
    let nulls = spec
        .null_phenotypes
        .iter()
        .enumerate()
        .filter(|(_, n)| rng.random::<f64>() < n.prevalence)
        .map(|(i, _)| i)
        .collect();
    SubjectDraw {
        classes,
        subtypes,
        nulls,
        rate_scale: rng.random_range(0.85..1.15),
    }
}

fn pick_subtype(cls: &ClassSpec, rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = cls.subtypes.iter().map(|s| s.weight).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, s) in cls.subtypes.iter().enumerate() {
        if u < s.weight {
            return i;
        }
        u -= s.weight;
    }
    cls.subtypes.len() - 1
}

fn render_signal(spec: &CohortSpec, draw: &SubjectDraw, rng: &mut ChaCha8Rng) -> Signal {
    let n = spec.samples;
    let mut buf = vec![0.0f64; spec.channels * n];
    render_random(&mut buf, n, &spec.baseline, draw.rate_scale, rng);
    for &(c, s) in &draw.subtypes {
        render_random(&mut buf, n, &spec.classes[c].subtypes[s].motif, 1.0, rng);
    }
    if spec.noise_sd > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sd).expect("validated noise sd");
        buf.iter_mut().for_each(|v| *v += noise.sample(rng));
    }
    let mut signal = Signal::zeros(spec.channels, n);
    for (dst, v) in signal.data.iter_mut().zip(&buf) {
        let q = (v / SIGNAL_QUANTUM as f64).round().clamp(i16::MIN as f64, i16::MAX as f64);
        *dst = q as f32 * SIGNAL_QUANTUM;
    }
    signal
}

fn emit_icd(spec: &CohortSpec, draw: &SubjectDraw, icd10: bool, rng: &mut ChaCha8Rng) -> Vec<IcdCode> {
    let version = if icd10 { 10 } else { 9 };
    let pick = |a: &str, b: &str| if icd10 { b.to_string() } else { a.to_string() };
    let mut codes = Vec::new();
    for (c, cls) in spec.classes.iter().enumerate() {
        let held = draw.classes.contains(&c);
        let p = if held { cls.icd.sensitivity } else { cls.icd.fp_rate };
        if rng.random::<f64>() < p {
            codes.push(IcdCode::new(pick(&cls.icd.icd9, &cls.icd.icd10), version));
        }
        for (s, sub) in cls.subtypes.iter().enumerate() {
            let held_sub = draw.subtypes.contains(&(c, s));
            for icd in &sub.outcomes {
                let p = if held_sub { icd.sensitivity } else { icd.fp_rate };
                if rng.random::<f64>() < p {
                    codes.push(IcdCode::new(pick(&icd.icd9, &icd.icd10), version));
                }
            }
        }
    }
    for &i in &draw.nulls {
        let n = &spec.null_phenotypes[i];
        codes.push(IcdCode::new(pick(&n.icd9, &n.icd10), version));
    }
    if rng.random::<f64>() < spec.p_unmapped_code {
        let junk = rng.random_range(1..=99u32);
        codes.push(IcdCode::new(
            if icd10 { format!("Z99.{junk:02}") } else { format!("V99.{junk:02}") },
            version,
        ));
    }
    codes
}

const AFFIRMED: [&str; 4] = ["{} present", "findings consistent with {}", "{} noted", "probable {}"];
const NEGATED: [&str; 5] = [
    "no evidence of {}",
    "no {}",
    "{} ruled out",
    "without {}",
    "{} is not present",
];

fn fill(template: &str, term: &str) -> String {
    template.replacen("{}", term, 1)
}

fn emit_report(spec: &CohortSpec, draw: &SubjectDraw, rng: &mut ChaCha8Rng) -> String {
    let mut sentences: Vec<String> = Vec::new();
    if rng.random::<f64>() < 0.7 {
        sentences.push("sinus rhythm".to_string());
    }
    for (c, cls) in spec.classes.iter().enumerate() {
        let r = &cls.report;
        let surface = match &r.abbreviation {
            Some(a) if rng.random::<f64>() < 0.4 => a.clone(),
            _ => r.term.clone(),
        };
        let held = draw.classes.contains(&c);
        let affirmed = rng.random::<f64>() < if held { r.sensitivity } else { r.false_mention };
        if affirmed {
            sentences.push(fill(AFFIRMED[rng.random_range(0..AFFIRMED.len())], &surface));
        } else if !held && rng.random::<f64>() < r.negated_mention {
            sentences.push(fill(NEGATED[rng.random_range(0..NEGATED.len())], &surface));
        }
    }
    for inc in &spec.incidental_concepts {
        if rng.random::<f64>() < inc.rate {
            sentences.push(fill(AFFIRMED[rng.random_range(0..AFFIRMED.len())], &inc.term));
        }
    }
    sentences.shuffle(rng);
    if sentences.is_empty() {
        return String::new();
    }
    let mut text = sentences.join(". ");
    text.push('.');
    // capitalise the first letter, as a reporting system would
    let mut chars = text.chars();
    match chars.next() {
        Some(f) => f.to_uppercase().collect::<String>() + chars.as_str(),
        None => text,
    }
}

fn geometric_extra(rng: &mut ChaCha8Rng, p: f64, max_extra: usize) -> usize {
    let mut k = 0;
    while k < max_extra && rng.random::<f64>() < p {
        k += 1;
    }
    k
}

fn subject_records(spec: &CohortSpec, index: usize) -> Vec<(CohortRecord, GroundTruth)> {
    let subject_id = spec.subject_id_offset + index as u64;
    let mut rng = rng_for(spec.seed, subject_id);
    let draw = draw_subject(spec, &mut rng);
    let n_adm = 1 + geometric_extra(&mut rng, spec.p_extra_admission, spec.max_admissions - 1);
    let origin = NaiveDate::from_ymd_opt(2008, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time");
    let mut day_offsets: Vec<i64> = (0..n_adm).map(|_| rng.random_range(0..5479)).collect();
    day_offsets.sort_unstable();

    let mut out = Vec::new();
    for (a, day) in day_offsets.into_iter().enumerate() {
        let admission_id = subject_id * 10 + a as u64;
        let admitted: NaiveDateTime =
            origin + Duration::days(day) + Duration::minutes(rng.random_range(0..24 * 60));
        let icd10 = admitted.date() >= icd10_cutover();
        let icd_codes = emit_icd(spec, &draw, icd10, &mut rng);

        let n_ecg = 1 + geometric_extra(&mut rng, spec.p_extra_ecg, 2);
        let mut stamps = vec![admitted + Duration::minutes(rng.random_range(5..240))];
        for _ in 1..n_ecg {
            let prev = *stamps.last().expect("non-empty");
            let t = if rng.random::<f64>() < spec.p_timestamp_tie {
                prev
            } else {
                prev + Duration::minutes(rng.random_range(10..720))
            };
            stamps.push(t);
        }
        // record ids within an admission are not in timestamp order
        let mut slots: Vec<u64> = (0..n_ecg as u64).collect();
        slots.shuffle(&mut rng);
        for (k, ts) in stamps.into_iter().enumerate() {
            let record_id = admission_id * 10 + slots[k];
            let signal = render_signal(spec, &draw, &mut rng);
            let report = emit_report(spec, &draw, &mut rng);
            let record = CohortRecord {
                record_id,
                subject_id,
                admission_id,
                timestamp: ts,
                signal,
                icd_codes: icd_codes.clone(),
                report,
                labels: spec.annotated.then(|| draw.classes.clone()),
            };
            let truth = GroundTruth {
                record_id,
                subject_id,
                classes: draw.classes.clone(),
                subtypes: draw.subtypes.clone(),
            };
            out.push((record, truth));
        }
    }
    out.sort_by_key(|(r, _)| r.record_id);
    out
}

/// Generate subjects `range` of the cohort. Subjects are independent, so
/// chunked generation concatenates to exactly the output of [`generate`].
pub fn generate_subjects(spec: &CohortSpec, range: std::ops::Range<usize>) -> Result<Cohort> {
    spec.validate()?;
    let per_subject: Vec<Vec<(CohortRecord, GroundTruth)>> =
        range.into_par_iter().map(|i| subject_records(spec, i)).collect();
    let (records, truth) = per_subject.into_iter().flatten().unzip();
    Ok(Cohort { records, truth })
}

/// Whole cohort, ordered by record id.
pub fn generate(spec: &CohortSpec) -> Result<Cohort> {
    generate_subjects(spec, 0..spec.n_subjects)
}
