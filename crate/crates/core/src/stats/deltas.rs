//! Per-domain mean deltas against a baseline system.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub doc_id: String,
    pub domain: String,
    pub value: f64,
}

/// Presentation class of a delta's absolute value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Magnitude {
    S,
    M,
    L,
    XL,
}

impl Magnitude {
    /// Classes `|delta|` after rounding to two decimals, so the class agrees
    /// with the printed value.
    pub fn classify(delta: f64) -> Self {
        let v = round2(delta).abs();
        if v < 0.3 {
            Magnitude::S
        } else if v < 0.5 {
            Magnitude::M
        } else if v < 1.0 {
            Magnitude::L
        } else {
            Magnitude::XL
        }
    }
}

impl fmt::Display for Magnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Magnitude::S => "S",
            Magnitude::M => "M",
            Magnitude::L => "L",
            Magnitude::XL => "XL",
        })
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Signed two-decimal delta of `value` over `baseline`, e.g. `+0.65`.
pub fn format_delta(baseline: f64, value: f64) -> String {
    format_signed(value - baseline)
}

/// Formats a delta with an explicit sign; rounded zero prints as `+0.00`.
pub fn format_signed(delta: f64) -> String {
    let r = round2(delta);
    if r == 0.0 {
        "+0.00".to_string()
    } else if r > 0.0 {
        format!("+{r:.2}")
    } else {
        format!("{r:.2}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub baseline: String,
    pub systems: Vec<String>,
    /// domain -> system -> mean(system) - mean(baseline)
    pub rows: BTreeMap<String, BTreeMap<String, f64>>,
}

impl DeltaTable {
    pub fn get(&self, domain: &str, system: &str) -> Option<f64> {
        self.rows.get(domain)?.get(system).copied()
    }

    /// Long-form CSV: `domain,system,delta`, domains sorted, systems in
    /// table order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("domain,system,delta\n");
        for (domain, per_system) in &self.rows {
            for s in &self.systems {
                if let Some(d) = per_system.get(s) {
                    out.push_str(&format!("{domain},{s},{d:.4}\n"));
                }
            }
        }
        out
    }
}

fn domain_means(scores: &[DomainScore]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for s in scores {
        let e = acc.entry(s.domain.clone()).or_insert((0.0, 0));
        e.0 += s.value;
        e.1 += 1;
    }
    acc.into_iter().map(|(d, (sum, n))| (d, sum / n as f64)).collect()
}

pub fn per_domain_deltas(
    baseline: &str,
    others: &[&str],
    scores: &BTreeMap<String, Vec<DomainScore>>,
) -> Result<DeltaTable, StatsError> {
    let base = scores
        .get(baseline)
        .ok_or_else(|| StatsError::UnknownSystem(baseline.to_string()))?;
    let base_docs: BTreeSet<&str> = base.iter().map(|s| s.doc_id.as_str()).collect();
    let base_means = domain_means(base);
    let mut rows: BTreeMap<String, BTreeMap<String, f64>> =
        base_means.keys().map(|d| (d.clone(), BTreeMap::new())).collect();
    for &name in others {
        let sys = scores
            .get(name)
            .ok_or_else(|| StatsError::UnknownSystem(name.to_string()))?;
        let docs: BTreeSet<&str> = sys.iter().map(|s| s.doc_id.as_str()).collect();
        if let Some(id) = base_docs.symmetric_difference(&docs).next() {
            return Err(StatsError::Unpaired(id.to_string()));
        }
        let means = domain_means(sys);
        for (domain, base_mean) in &base_means {
            let m = means.get(domain).ok_or_else(|| StatsError::MissingDomain {
                system: name.to_string(),
                domain: domain.clone(),
            })?;
            rows.get_mut(domain)
                .expect("seeded")
                .insert(name.to_string(), m - base_mean);
        }
        if let Some(extra) = means.keys().find(|d| !base_means.contains_key(*d)) {
            return Err(StatsError::MissingDomain {
                system: baseline.to_string(),
                domain: extra.clone(),
            });
        }
    }
    Ok(DeltaTable {
        baseline: baseline.to_string(),
        systems: others.iter().map(|s| s.to_string()).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(doc: &str, domain: &str, v: f64) -> DomainScore {
        DomainScore {
            doc_id: doc.into(),
            domain: domain.into(),
            value: v,
        }
    }

    #[test]
    fn formatting() {
        assert_eq!(format_delta(48.04, 48.69), "+0.65");
        assert_eq!(format_delta(59.38, 59.65), "+0.27");
        assert_eq!(format_delta(1.0, 0.5), "-0.50");
        assert_eq!(format_delta(1.0, 1.001), "+0.00");
    }

    #[test]
    fn magnitude_thresholds() {
        assert_eq!(Magnitude::classify(0.23), Magnitude::S);
        assert_eq!(Magnitude::classify(0.31), Magnitude::M);
        assert_eq!(Magnitude::classify(0.53), Magnitude::L);
        assert_eq!(Magnitude::classify(1.03), Magnitude::XL);
        assert_eq!(Magnitude::classify(-1.03), Magnitude::XL);
        assert_eq!(Magnitude::classify(0.3), Magnitude::M);
    }

    #[test]
    fn known_domain_means() {
        let mut scores = BTreeMap::new();
        scores.insert(
            "base".to_string(),
            vec![ds("a", "news", 1.0), ds("b", "news", 3.0), ds("c", "speech", 10.0)],
        );
        scores.insert(
            "sys".to_string(),
            vec![ds("a", "news", 2.0), ds("b", "news", 5.0), ds("c", "speech", 9.0)],
        );
        let t = per_domain_deltas("base", &["sys", "base"], &scores).unwrap();
        assert_eq!(t.get("news", "sys"), Some(1.5));
        assert_eq!(t.get("speech", "sys"), Some(-1.0));
        assert_eq!(t.get("news", "base"), Some(0.0));
        assert_eq!(
            t.to_csv(),
            "domain,system,delta\nnews,sys,1.5000\nnews,base,0.0000\nspeech,sys,-1.0000\nspeech,base,0.0000\n"
        );
    }

    #[test]
    fn missing_domain() {
        let mut scores = BTreeMap::new();
        scores.insert("base".to_string(), vec![ds("a", "news", 1.0), ds("c", "speech", 1.0)]);
        scores.insert("sys".to_string(), vec![ds("a", "news", 1.0), ds("c", "news", 1.0)]);
        assert!(matches!(
            per_domain_deltas("base", &["sys"], &scores),
            Err(StatsError::MissingDomain { .. })
        ));
    }
}
