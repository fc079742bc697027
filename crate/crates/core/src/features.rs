//! Outlier capping and engineered composite features.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Raw column names consumed by feature engineering.
pub mod columns {
    pub const AGE: &str = "age";
    pub const WEIGHT_KG: &str = "weight_kg";
    pub const HEIGHT_FT: &str = "height_ft";
    pub const HEIGHT_IN: &str = "height_in";
    pub const BED_COMFORT: &str = "bed_comfort";
    pub const LIGHTING: &str = "lighting";
    pub const QUIETNESS: &str = "quietness";
    pub const VENTILATION: &str = "ventilation";
    pub const PHYSICAL_ACTIVITY: &str = "physical_activity";
    pub const SCREEN_HOURS: &str = "screen_hours";
    pub const FINANCIAL_STRESS: &str = "financial_stress";
    pub const HEADACHE_NECK_PAIN: &str = "headache_neck_pain";
    pub const CAFFEINE_CUTOFF: &str = "caffeine_cutoff";
    pub const HEAVY_MEALS: &str = "heavy_meals";
    pub const SCREEN_CUTOFF: &str = "screen_cutoff";
    pub const SCHEDULE_CONSISTENCY: &str = "schedule_consistency";

    /// Continuous raw columns subject to IQR capping before engineering.
    pub const CAPPED: [&str; 4] = [AGE, WEIGHT_KG, HEIGHT_FT, HEIGHT_IN];
}

/// Highest level of the daily screen-hours scale.
pub const MAX_SCREEN_LEVEL: f64 = 4.0;
const METERS_PER_INCH: f64 = 0.0254;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot cap an empty column")]
    EmptyColumn,
    #[error("height must be positive")]
    NonPositiveHeight,
    #[error("weight must be positive")]
    NonPositiveWeight,
}

/// Type-7 quantile (linear interpolation between order statistics) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Tukey fences `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]` with type-7 quartiles.
pub fn iqr_fences(column: &[f64]) -> Result<(f64, f64), FeatureError> {
    if column.is_empty() {
        return Err(FeatureError::EmptyColumn);
    }
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    Ok((q1 - 1.5 * iqr, q3 + 1.5 * iqr))
}

/// Clamps values outside the IQR fences onto the fences. Order and length are preserved.
pub fn cap_outliers_iqr(column: &[f64]) -> Result<Vec<f64>, FeatureError> {
    let (lo, hi) = iqr_fences(column)?;
    Ok(column.iter().map(|&v| v.clamp(lo, hi)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BmiCategory {
    Underweight = 0,
    Normal = 1,
    Overweight = 2,
    Obese = 3,
}

impl BmiCategory {
    /// WHO adult bands.
    pub fn from_bmi(bmi: f64) -> Self {
        if bmi < 18.5 {
            BmiCategory::Underweight
        } else if bmi < 25.0 {
            BmiCategory::Normal
        } else if bmi < 30.0 {
            BmiCategory::Overweight
        } else {
            BmiCategory::Obese
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BmiCategory::Underweight => "underweight",
            BmiCategory::Normal => "normal",
            BmiCategory::Overweight => "overweight",
            BmiCategory::Obese => "obese",
        }
    }
}

/// Age bands `<20`, `20-22`, `23-25`, `26+` as levels 0..=3.
pub fn age_band(age_years: f64) -> u8 {
    if age_years < 20.0 {
        0
    } else if age_years < 23.0 {
        1
    } else if age_years < 26.0 {
        2
    } else {
        3
    }
}

/// Already-encoded inputs of the engineered features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMeasures {
    pub age_years: f64,
    pub weight_kg: f64,
    pub height_ft: f64,
    pub height_in: f64,
    /// Likert 1-5.
    pub bed_comfort: f64,
    pub lighting: f64,
    pub quietness: f64,
    pub ventilation: f64,
    /// Ordinal 0-4.
    pub physical_activity: f64,
    /// Ordinal 0-4, higher means more daily screen time.
    pub screen_hours: f64,
    pub financial_stress: f64,
    pub headache_neck_pain: f64,
    /// Ordinal 0-4, 0 means caffeine right before bed.
    pub caffeine_cutoff: f64,
    pub heavy_meals: f64,
    /// Ordinal 0-4, 0 means screens until bedtime.
    pub screen_cutoff: f64,
    pub schedule_consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Engineered {
    pub bmi: f64,
    pub bmi_category: BmiCategory,
    pub age_band: u8,
    pub sleep_env_score: f64,
    pub lifestyle_score: f64,
    pub stress_flag: u8,
    pub poor_habits_score: u8,
}

pub fn height_meters(feet: f64, inches: f64) -> f64 {
    (feet * 12.0 + inches) * METERS_PER_INCH
}

pub fn engineer_features(m: &RawMeasures) -> Result<Engineered, FeatureError> {
    let height = height_meters(m.height_ft, m.height_in);
    if height <= 0.0 {
        return Err(FeatureError::NonPositiveHeight);
    }
    if m.weight_kg <= 0.0 {
        return Err(FeatureError::NonPositiveWeight);
    }
    let bmi = m.weight_kg / (height * height);

    let stress_flag = u8::from(m.financial_stress >= 4.0 || m.headache_neck_pain >= 4.0);
    let poor_habits_score = [
        m.caffeine_cutoff <= 1.0,
        m.heavy_meals >= 4.0,
        m.screen_cutoff == 0.0,
        m.schedule_consistency <= 2.0,
    ]
    .iter()
    .filter(|&&b| b)
    .count() as u8;

    Ok(Engineered {
        bmi,
        bmi_category: BmiCategory::from_bmi(bmi),
        age_band: age_band(m.age_years),
        sleep_env_score: m.bed_comfort + m.lighting + m.quietness + m.ventilation,
        lifestyle_score: m.physical_activity + (MAX_SCREEN_LEVEL - m.screen_hours),
        stress_flag,
        poor_habits_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn measures() -> RawMeasures {
        RawMeasures {
            age_years: 21.0,
            weight_kg: 70.0,
            height_ft: 5.0,
            height_in: 9.0,
            bed_comfort: 3.0,
            lighting: 3.0,
            quietness: 3.0,
            ventilation: 3.0,
            physical_activity: 2.0,
            screen_hours: 3.0,
            financial_stress: 2.0,
            headache_neck_pain: 2.0,
            caffeine_cutoff: 3.0,
            heavy_meals: 2.0,
            screen_cutoff: 2.0,
            schedule_consistency: 4.0,
        }
    }

    #[test]
    fn constant_column_is_untouched() {
        assert_eq!(cap_outliers_iqr(&[5.0; 4]).unwrap(), vec![5.0; 4]);
    }

    #[test]
    fn large_value_capped_to_upper_fence() {
        // sorted [1,2,3,4,100]: Q1 = 2, Q3 = 4, fences [-1, 7]
        assert_eq!(iqr_fences(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap(), (-1.0, 7.0));
        assert_eq!(
            cap_outliers_iqr(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0, 7.0]
        );
    }

    #[test]
    fn empty_column_is_an_error() {
        assert_eq!(cap_outliers_iqr(&[]), Err(FeatureError::EmptyColumn));
    }

    #[test]
    fn type7_quantile_interpolates() {
        // h = 3 * 0.25 = 0.75 → 10 + 0.75 * 10
        assert_eq!(quantile_sorted(&[10.0, 20.0, 30.0, 40.0], 0.25), 17.5);
    }

    #[test]
    fn bmi_example() {
        let e = engineer_features(&measures()).unwrap();
        // 5'9" = 69 in = 1.7526 m; 70 / 1.7526^2 = 22.789...
        assert!((height_meters(5.0, 9.0) - 1.7526).abs() < 1e-12);
        assert!((e.bmi - 22.789).abs() < 1e-3);
        assert_eq!(e.bmi_category.as_str(), "normal");
    }

    #[test]
    fn bmi_band_edges() {
        assert_eq!(BmiCategory::from_bmi(18.4999), BmiCategory::Underweight);
        assert_eq!(BmiCategory::from_bmi(18.5), BmiCategory::Normal);
        assert_eq!(BmiCategory::from_bmi(25.0), BmiCategory::Overweight);
        assert_eq!(BmiCategory::from_bmi(30.0), BmiCategory::Obese);
    }

    #[test]
    fn max_environment_scores_twenty() {
        let m = RawMeasures {
            bed_comfort: 5.0,
            lighting: 5.0,
            quietness: 5.0,
            ventilation: 5.0,
            ..measures()
        };
        assert_eq!(engineer_features(&m).unwrap().sleep_env_score, 20.0);
    }

    #[test]
    fn zero_height_rejected() {
        let m = RawMeasures {
            height_ft: 0.0,
            height_in: 0.0,
            ..measures()
        };
        assert_eq!(engineer_features(&m), Err(FeatureError::NonPositiveHeight));
        let m = RawMeasures {
            weight_kg: 0.0,
            ..measures()
        };
        assert_eq!(engineer_features(&m), Err(FeatureError::NonPositiveWeight));
    }

    #[test]
    fn composites() {
        let m = RawMeasures {
            financial_stress: 4.0,
            caffeine_cutoff: 0.0,
            heavy_meals: 5.0,
            screen_cutoff: 0.0,
            schedule_consistency: 1.0,
            physical_activity: 3.0,
            screen_hours: 1.0,
            ..measures()
        };
        let e = engineer_features(&m).unwrap();
        assert_eq!(e.stress_flag, 1);
        assert_eq!(e.poor_habits_score, 4);
        assert_eq!(e.lifestyle_score, 6.0);
        assert_eq!(engineer_features(&measures()).unwrap().stress_flag, 0);
        assert_eq!(engineer_features(&measures()).unwrap().poor_habits_score, 0);
    }

    #[test]
    fn capping_outliers_at_a_quartile_order_statistic_moves_the_fences() {
        // A quarter of the column is one outlier, so Q1 interpolates against it
        // and a second pass sees different fences.
        let once = cap_outliers_iqr(&[0.0, 100.0, 100.0, 100.0]).unwrap();
        assert_eq!(once[0], 37.5);
        assert!(cap_outliers_iqr(&once).unwrap()[0] > 37.5);
    }

    fn quartile_stats_untouched(col: &[f64], capped: &[f64]) -> bool {
        let mut a = col.to_vec();
        let mut b = capped.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let h = (a.len() - 1) as f64;
        [0.25, 0.75].iter().all(|q| {
            let (lo, hi) = ((h * q).floor() as usize, (h * q).ceil() as usize);
            a[lo] == b[lo] && a[hi] == b[hi]
        })
    }

    proptest! {
        #[test]
        fn capping_is_idempotent(
            mut col in prop::collection::vec(-50.0f64..50.0, 8..60),
            spikes in prop::collection::vec((0usize..60, -1e6f64..1e6), 0..3),
        ) {
            for (i, v) in spikes {
                let n = col.len();
                col[i % n] = v;
            }
            let once = cap_outliers_iqr(&col).unwrap();
            prop_assume!(quartile_stats_untouched(&col, &once));
            let twice = cap_outliers_iqr(&once).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn capping_preserves_length_and_order(col in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            let capped = cap_outliers_iqr(&col).unwrap();
            prop_assert_eq!(capped.len(), col.len());
            for i in 0..col.len() {
                for j in 0..col.len() {
                    if col[i] <= col[j] {
                        prop_assert!(capped[i] <= capped[j]);
                    }
                }
            }
        }
    }
}
