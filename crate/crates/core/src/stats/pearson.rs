use serde::Serialize;

/// Sample Pearson correlation. `None` when fewer than three pairs or either
/// side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 3 {
        return None;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    /// `None` marks an undefined entry (zero variance or < 3 complete pairs).
    pub r: Vec<Vec<Option<f64>>>,
    /// Pairwise complete observation counts.
    pub n: Vec<Vec<usize>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        self.r[i][j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in self.names.iter().zip(&self.r) {
            out.push_str(name);
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format!("{v:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Symmetric correlation matrix over named columns, using pairwise-complete
/// observations (`None` cells are missing).
pub fn pearson_matrix(names: &[String], columns: &[Vec<Option<f64>>]) -> CorrelationMatrix {
    let k = columns.len();
    let mut r = vec![vec![None; k]; k];
    let mut n = vec![vec![0usize; k]; k];
    for i in 0..k {
        for j in i..k {
            let (a, b): (Vec<f64>, Vec<f64>) = columns[i]
                .iter()
                .zip(&columns[j])
                .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                .unzip();
            let value = if i == j { pearson(&a, &b).map(|_| 1.0) } else { pearson(&a, &b) };
            r[i][j] = value;
            r[j][i] = value;
            n[i][j] = a.len();
            n[j][i] = a.len();
        }
    }
    CorrelationMatrix { names: names.to_vec(), r, n }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-15);
    }

    #[test]
    fn self_and_reflected() {
        let x = [0.3, 1.9, -2.0, 4.4, 0.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| 7.5 - v).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_undefined_not_a_crash() {
        let cols = vec![
            vec![Some(1.0), Some(1.0), Some(1.0), Some(1.0)],
            vec![Some(1.0), Some(2.0), None, Some(4.0)],
        ];
        let m = pearson_matrix(&["c".into(), "x".into()], &cols);
        assert_eq!(m.r[0][1], None);
        assert_eq!(m.r[0][0], None);
        assert_eq!(m.r[1][1], Some(1.0));
        assert_eq!(m.n[0][1], 3);
        assert!(m.to_csv().starts_with("variable,c,x\nc,,\n"));
    }
}
