use serde::Serialize;

/// Whether `value` is a BLEU-style percentage or a ratio on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Percent,
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub scale: Scale,
    /// Component values for composite metrics, in weight order.
    pub components: Vec<(String, f64)>,
    pub weights: Vec<f64>,
}

impl MetricReport {
    pub fn percent(metric: &str, value: f64) -> MetricReport {
        MetricReport {
            task: String::new(),
            metric: metric.into(),
            value,
            scale: Scale::Percent,
            components: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn ratio(metric: &str, value: f64) -> MetricReport {
        MetricReport {
            scale: Scale::Ratio,
            ..MetricReport::percent(metric, value)
        }
    }

    pub fn composite(metric: &str, value: f64, components: Vec<(String, f64)>, weights: Vec<f64>) -> MetricReport {
        MetricReport {
            components,
            weights,
            ..MetricReport::ratio(metric, value)
        }
    }

    pub fn with_task(mut self, task: &str) -> MetricReport {
        self.task = task.into();
        self
    }

    /// Whether the value lies in its declared range and a composite equals
    /// its weighted component sum.
    pub fn is_consistent(&self) -> bool {
        let hi = match self.scale {
            Scale::Percent => 100.0,
            Scale::Ratio => 1.0,
        };
        let in_range = |v: f64| (0.0..=hi + 1e-12).contains(&v);
        if !in_range(self.value) || !self.components.iter().all(|c| (0.0..=1.0 + 1e-12).contains(&c.1)) {
            return false;
        }
        if self.components.is_empty() {
            return true;
        }
        let sum: f64 = self.weights.iter().zip(&self.components).map(|(w, c)| w * c.1).sum();
        (sum - self.value).abs() <= 1e-9
    }

    /// JSON with every number printed to six decimals.
    pub fn to_json_6(&self) -> String {
        let num = |v: f64| format!("{v:.6}");
        let text = |s: &str| serde_json::to_string(s).unwrap_or_default();
        let scale = match self.scale {
            Scale::Percent => "percent",
            Scale::Ratio => "ratio",
        };
        let mut out = format!(
            "{{\"task\": {}, \"metric\": {}, \"value\": {}, \"scale\": \"{scale}\"",
            text(&self.task),
            text(&self.metric),
            num(self.value)
        );
        if !self.components.is_empty() {
            let parts: Vec<String> = self
                .components
                .iter()
                .map(|(k, v)| format!("{}: {}", text(k), num(*v)))
                .collect();
            let weights: Vec<String> = self.weights.iter().map(|w| num(*w)).collect();
            out.push_str(&format!(
                ", \"components\": {{{}}}, \"weights\": [{}]",
                parts.join(", "),
                weights.join(", ")
            ));
        }
        out.push('}');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_decimal_json() {
        let r = MetricReport::ratio("em", 1.0).with_task("toy");
        assert_eq!(
            r.to_json_6(),
            r#"{"task": "toy", "metric": "em", "value": 1.000000, "scale": "ratio"}"#
        );
        let v: serde_json::Value = serde_json::from_str(&r.to_json_6()).unwrap();
        assert_eq!(v["value"], 1.0);
        let c = MetricReport::composite(
            "codebleu",
            0.5,
            vec![("a".into(), 1.0), ("b".into(), 0.0)],
            vec![0.5, 0.5],
        );
        let v: serde_json::Value = serde_json::from_str(&c.to_json_6()).unwrap();
        assert_eq!(v["components"]["a"], 1.0);
        assert!(c.is_consistent());
    }

    #[test]
    fn consistency_checks_range_and_sum() {
        assert!(MetricReport::percent("bleu", 60.0).is_consistent());
        assert!(!MetricReport::ratio("em", 1.5).is_consistent());
        let c = MetricReport::composite("codebleu", 0.9, vec![("a".into(), 1.0)], vec![0.5]);
        assert!(!c.is_consistent());
    }
}
