//! Measure labels of the form `H<cell>L`, `H<cell>R` and `H<cell>(h_R,h_L)`.

use besvm::similarity::SimilarityMeasure;

use crate::error::{CliError, Result};

/// A similarity measure together with the HOG cell size it is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledMeasure {
    pub measure: SimilarityMeasure,
    pub cell_size: usize,
}

/// Parses a measure label.
///
/// `L` is the linear kernel and `R` the RBF kernel with γ = 1. `(h_R,h_L)`
/// is the rigid measure when `h_L = 0` and the deformable measure without
/// displacement penalty otherwise.
pub fn parse_measure_label(label: &str) -> Result<LabeledMeasure> {
    let err = || CliError::Label(label.to_string());
    let rest = label.strip_prefix('H').ok_or_else(err)?;
    let digits = rest.find(|c: char| !c.is_ascii_digit()).ok_or_else(err)?;
    let cell_size: usize = rest[..digits].parse().map_err(|_| err())?;
    if cell_size == 0 {
        return Err(err());
    }
    let measure = match &rest[digits..] {
        "L" => SimilarityMeasure::Linear,
        "R" => SimilarityMeasure::Rbf { gamma: 1.0 },
        shifts => {
            let inner = shifts
                .strip_prefix('(')
                .and_then(|s| s.strip_suffix(')'))
                .ok_or_else(err)?;
            let (h_r, h_l) = inner.split_once(',').ok_or_else(err)?;
            let parse = |s: &str| -> Result<usize> {
                if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(err());
                }
                s.parse().map_err(|_| err())
            };
            let (h_r, h_l) = (parse(h_r)?, parse(h_l)?);
            if h_l == 0 {
                SimilarityMeasure::Rigid { h_r }
            } else {
                SimilarityMeasure::Deformable {
                    h_r,
                    h_l,
                    lambda: 0.0,
                }
            }
        }
    };
    Ok(LabeledMeasure { measure, cell_size })
}

/// Display label of a measure; reduces to the parseable grammar whenever the
/// measure is expressible in it.
pub fn format_measure_label(measure: &SimilarityMeasure, cell_size: Option<usize>) -> String {
    let prefix = cell_size.map(|c| format!("H{c}")).unwrap_or_default();
    let body = match *measure {
        SimilarityMeasure::Linear => "L".to_string(),
        SimilarityMeasure::Rbf { gamma: 1.0 } => "R".to_string(),
        SimilarityMeasure::Rbf { gamma } => format!("R[gamma={gamma}]"),
        SimilarityMeasure::Rigid { h_r } => format!("({h_r},0)"),
        SimilarityMeasure::Deformable {
            h_r,
            h_l,
            lambda: 0.0,
        } => format!("({h_r},{h_l})"),
        SimilarityMeasure::Deformable { h_r, h_l, lambda } => {
            format!("({h_r},{h_l})[lambda={lambda}]")
        }
    };
    format!("{prefix}{body}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_examples() {
        assert_eq!(
            parse_measure_label("H8(1,0)").unwrap(),
            LabeledMeasure {
                measure: SimilarityMeasure::Rigid { h_r: 1 },
                cell_size: 8
            }
        );
        assert_eq!(
            parse_measure_label("H4L").unwrap(),
            LabeledMeasure {
                measure: SimilarityMeasure::Linear,
                cell_size: 4
            }
        );
        assert_eq!(
            parse_measure_label("H4R").unwrap().measure,
            SimilarityMeasure::Rbf { gamma: 1.0 }
        );
        assert_eq!(
            parse_measure_label("H4(2,1)").unwrap().measure,
            SimilarityMeasure::Deformable {
                h_r: 2,
                h_l: 1,
                lambda: 0.0
            }
        );
        assert!(matches!(
            parse_measure_label("H3Q"),
            Err(CliError::Label(_))
        ));
    }

    #[test]
    fn malformed_labels() {
        for bad in [
            "", "H", "8L", "HL", "H0L", "H4", "H4(1)", "H4(1,)", "H4(,1)", "H4(1,2", "H4(1,2)x",
            "H4( 1,2)", "H4(-1,0)", "h4L",
        ] {
            assert!(parse_measure_label(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn labels_of_the_figures_parse_and_format_back() {
        let mut labels = vec!["H4L", "H8L", "H4R", "H8R", "H8(1,0)", "H8(0,1)"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        for h_r in 0..=2 {
            for h_l in 0..=1 {
                labels.push(format!("H4({h_r},{h_l})"));
            }
        }
        for label in labels {
            let parsed = parse_measure_label(&label).unwrap();
            assert_eq!(
                format_measure_label(&parsed.measure, Some(parsed.cell_size)),
                label
            );
        }
    }

    #[test]
    fn non_grammar_measures_format_distinctly() {
        assert_eq!(
            format_measure_label(&SimilarityMeasure::Rbf { gamma: 0.5 }, None),
            "R[gamma=0.5]"
        );
        assert_eq!(
            format_measure_label(
                &SimilarityMeasure::Deformable {
                    h_r: 1,
                    h_l: 1,
                    lambda: 0.1
                },
                Some(4)
            ),
            "H4(1,1)[lambda=0.1]"
        );
    }
}
