//! Synthetic dataset families with controlled selectivity.
//!
//! Selectivity of an attribute is its distinct-value count divided by the
//! relation cardinality. Values are drawn uniformly from `[0, ceil(s*n))`
//! with a ChaCha8 stream, so a fixed seed reproduces files byte for byte;
//! `s = 1.0` emits the exact key column `0..n` instead, since uniform draws
//! cannot reach selectivity one.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    SelfJoin,
    Chain4,
    Branch,
}

impl Family {
    pub fn parse(s: &str) -> Result<Family> {
        match s.to_ascii_lowercase().as_str() {
            "selfjoin" => Ok(Family::SelfJoin),
            "chain4" => Ok(Family::Chain4),
            "branch" => Ok(Family::Branch),
            other => Err(Error::InvalidQuery(format!("unknown family `{other}`"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Family::SelfJoin => "selfjoin",
            Family::Chain4 => "chain4",
            Family::Branch => "branch",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GenConfig {
    pub family: Family,
    /// Rows per relation.
    pub n: u64,
    /// Join-attribute selectivity; BRANCH takes two values (first join,
    /// second join pair).
    pub s_join: Vec<f64>,
    /// Group-attribute selectivity.
    pub s_group: f64,
    pub seed: u64,
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        let expected = match self.family {
            Family::Branch => 2,
            _ => 1,
        };
        if self.s_join.len() != expected {
            return Err(Error::InvalidQuery(format!(
                "family {} expects {expected} join selectivity value(s)",
                self.family.label()
            )));
        }
        for &s in self.s_join.iter().chain(std::iter::once(&self.s_group)) {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::InvalidQuery(format!(
                    "selectivity {s} outside (0, 1]"
                )));
            }
        }
        if self.n == 0 {
            return Err(Error::InvalidQuery("n must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FileInfo {
    pub name: String,
    pub rows: u64,
    /// Realized distinct counts per column, in header order.
    pub distinct: Vec<(String, u64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub prng: &'static str,
    pub files: Vec<FileInfo>,
}

enum Column {
    /// Uniform draws from `[0, range)`.
    Uniform { range: u64 },
    /// The exact sequence `0..n`: selectivity one.
    Key,
}

fn column_for(s: f64, n: u64) -> Column {
    if s >= 1.0 {
        Column::Key
    } else {
        Column::Uniform {
            range: ((s * n as f64).ceil() as u64).max(1),
        }
    }
}

fn emit_file(
    dir: &Path,
    name: &str,
    headers: &[&str],
    cols: &[Column],
    n: u64,
    rng: &mut ChaCha8Rng,
) -> Result<FileInfo> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = std::io::BufWriter::new(file);
    let mut distinct: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); cols.len()];
    let io_err = |source: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source,
    };
    writeln!(w, "{}", headers.join(",")).map_err(io_err)?;
    let mut line = String::new();
    for row in 0..n {
        line.clear();
        for (i, col) in cols.iter().enumerate() {
            let v = match col {
                Column::Uniform { range } => rng.gen_range(0..*range),
                Column::Key => row,
            };
            distinct[i].insert(v);
            if i > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(FileInfo {
        name: name.to_owned(),
        rows: n,
        distinct: headers
            .iter()
            .zip(&distinct)
            .map(|(h, d)| (h.to_string(), d.len() as u64))
            .collect(),
    })
}

/// Generates the family's CSV files plus a `manifest.json` recording the
/// configuration and realized distinct counts.
pub fn generate(cfg: &GenConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;
    let files = match cfg.family {
        Family::SelfJoin => {
            // one R(g,j), queried as two aliases joined on j
            vec![emit_file(
                out_dir,
                "selfjoin_R.csv",
                &["g", "j"],
                &[column_for(cfg.s_group, n), column_for(cfg.s_join[0], n)],
                n,
                &mut rng,
            )?]
        }
        Family::Chain4 => {
            // one R(g,j) reused as all four chain links
            vec![emit_file(
                out_dir,
                "chain4_R.csv",
                &["g", "j"],
                &[column_for(cfg.s_group, n), column_for(cfg.s_join[0], n)],
                n,
                &mut rng,
            )?]
        }
        Family::Branch => {
            let sj = cfg.s_join[0];
            let sb = cfg.s_join[1];
            vec![
                emit_file(
                    out_dir,
                    "branch_R1.csv",
                    &["g1", "j"],
                    &[column_for(cfg.s_group, n), column_for(sj, n)],
                    n,
                    &mut rng,
                )?,
                emit_file(
                    out_dir,
                    "branch_R2.csv",
                    &["j", "b"],
                    &[column_for(sj, n), column_for(sb, n)],
                    n,
                    &mut rng,
                )?,
                emit_file(
                    out_dir,
                    "branch_R3.csv",
                    &["b", "g2"],
                    &[column_for(sb, n), column_for(cfg.s_group, n)],
                    n,
                    &mut rng,
                )?,
                emit_file(
                    out_dir,
                    "branch_R4.csv",
                    &["b", "g3"],
                    &[column_for(sb, n), column_for(cfg.s_group, n)],
                    n,
                    &mut rng,
                )?,
            ]
        }
    };
    let manifest = Manifest {
        config: cfg.clone(),
        prng: "chacha8",
        files,
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("manifest serialize"),
    )
    .map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(manifest)
}

/// The canonical query each family is meant to be run with, phrased over
/// the generated file names.
pub fn family_query(family: Family) -> &'static str {
    match family {
        Family::SelfJoin => {
            "SELECT R1.g, R2.g, COUNT(*) FROM selfjoin_R R1, selfjoin_R R2 \
             WHERE R1.j = R2.j GROUP BY R1.g, R2.g"
        }
        Family::Chain4 => {
            "SELECT R1.g, R4.j, COUNT(*) FROM chain4_R R1, chain4_R R2, chain4_R R3, chain4_R R4 \
             WHERE R1.j = R2.g AND R2.j = R3.g AND R3.j = R4.g GROUP BY R1.g, R4.j"
        }
        Family::Branch => {
            "SELECT R1.g1, R3.g2, R4.g3, COUNT(*) FROM branch_R1 R1, branch_R2 R2, branch_R3 R3, branch_R4 R4 \
             WHERE R1.j = R2.j AND R2.b = R3.b AND R2.b = R4.b GROUP BY R1.g1, R3.g2, R4.g3"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(family: Family, n: u64, s_join: &[f64], s_group: f64, seed: u64) -> GenConfig {
        GenConfig {
            family,
            n,
            s_join: s_join.to_vec(),
            s_group,
            seed,
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let c = cfg(Family::Branch, 500, &[0.05, 0.5], 0.1, 42);
        generate(&c, d1.path()).unwrap();
        generate(&c, d2.path()).unwrap();
        for f in ["branch_R1.csv", "branch_R2.csv", "branch_R3.csv", "branch_R4.csv"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs across runs");
        }
    }

    #[test]
    fn distinct_counts_concentrate() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(Family::SelfJoin, 20_000, &[0.01], 0.05, 7);
        let m = generate(&c, dir.path()).unwrap();
        let f = &m.files[0];
        let g = f.distinct[0].1 as f64;
        let j = f.distinct[1].1 as f64;
        let expect_g = 0.05 * 20_000.0;
        let expect_j = 0.01 * 20_000.0;
        assert!((g - expect_g).abs() / expect_g < 0.05, "g distinct {g}");
        assert!((j - expect_j).abs() / expect_j < 0.05, "j distinct {j}");
    }

    #[test]
    fn selectivity_one_is_exact_keys() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(Family::SelfJoin, 1000, &[0.1], 1.0, 3);
        let m = generate(&c, dir.path()).unwrap();
        assert_eq!(m.files[0].distinct[0].1, 1000);
    }

    #[test]
    fn manifest_written_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(Family::SelfJoin, 100, &[0.2], 0.5, 1);
        generate(&c, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["prng"], "chacha8");
        assert_eq!(v["config"]["n"], 100);
        let rel = crate::relstore::load_csv(&dir.path().join("selfjoin_R.csv"), "R", true).unwrap();
        assert_eq!(rel.len(), 100);
        assert_eq!(rel.columns, vec!["g", "j"]);
    }

    #[test]
    fn rejects_bad_selectivity() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(Family::SelfJoin, 100, &[0.0], 0.5, 1);
        assert!(generate(&c, dir.path()).is_err());
        let c = cfg(Family::Branch, 100, &[0.5], 0.5, 1);
        assert!(generate(&c, dir.path()).is_err());
    }
}
