use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use lcm::network::{FailureTable, PatternMode, PatternSpace, DEFAULT_WORST_CASE_BUDGET};
use lcm::{Params, DEFAULT_PRIME};

use crate::Failure;

/// Patterns above this count are not enumerated by the CLI.
const MAX_ENUMERATED_PATTERNS: u128 = 10_000_000;

/// Flags shared by every subcommand. Unset flags fall back to `--config`,
/// then to the defaults shown.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// key=value file; keys are the long flag names
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// E [default: 4]
    #[arg(long)]
    pub clients: Option<usize>,
    /// H [default: 6]
    #[arg(long)]
    pub servers: Option<usize>,
    /// s [default: 1]
    #[arg(long)]
    pub stragglers: Option<usize>,
    /// T_h [default: 1]
    #[arg(long)]
    pub th: Option<usize>,
    /// T_c [default: 1]
    #[arg(long)]
    pub tc: Option<usize>,
    /// v [default: 1]
    #[arg(long = "group-size")]
    pub group_size: Option<usize>,
    /// p [default: k]
    #[arg(long = "grad-len")]
    pub grad_len: Option<usize>,
    /// field modulus [default: 2147483647]
    #[arg(long)]
    pub prime: Option<u64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// all | sample:N | worst | file:PATH [default: all]
    #[arg(long)]
    pub patterns: Option<String>,
    /// directory for CSV output
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// gradient draws per pattern [default: 1]
    #[arg(long)]
    pub draws: Option<usize>,
    /// zero every pairwise mask (negative control, breaks privacy)
    #[arg(long = "disable-masks")]
    pub disable_masks: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Patterns {
    All,
    Sample(usize),
    Worst,
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub params: Params,
    pub seed: u64,
    pub patterns: Patterns,
    pub out: Option<PathBuf>,
    pub draws: usize,
    pub disable_masks: bool,
}

fn parse_patterns(s: &str) -> Result<Patterns, Failure> {
    let bad = || Failure::Config(format!("bad pattern mode {s:?}; expected all, sample:N, worst or file:PATH"));
    match s {
        "all" => Ok(Patterns::All),
        "worst" => Ok(Patterns::Worst),
        _ => {
            if let Some(n) = s.strip_prefix("sample:") {
                n.parse().map(Patterns::Sample).map_err(|_| bad())
            } else if let Some(p) = s.strip_prefix("file:") {
                Ok(Patterns::File(PathBuf::from(p)))
            } else {
                Err(bad())
            }
        }
    }
}

fn read_file(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn take<T: std::str::FromStr>(file: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>, Failure> {
    file.remove(key)
        .map(|v| v.parse().map_err(|_| Failure::Config(format!("bad value {v:?} for {key}"))))
        .transpose()
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig, Failure> {
        let mut file = match &self.config {
            Some(path) => read_file(path)?,
            None => BTreeMap::new(),
        };
        let clients = self.clients.or(take(&mut file, "clients")?).unwrap_or(4);
        let servers = self.servers.or(take(&mut file, "servers")?).unwrap_or(6);
        let stragglers = self.stragglers.or(take(&mut file, "stragglers")?).unwrap_or(1);
        let th = self.th.or(take(&mut file, "th")?).unwrap_or(1);
        let tc = self.tc.or(take(&mut file, "tc")?).unwrap_or(1);
        let group_size = self.group_size.or(take(&mut file, "group-size")?).unwrap_or(1);
        let grad_len = self.grad_len.or(take(&mut file, "grad-len")?);
        let prime = self.prime.or(take(&mut file, "prime")?).unwrap_or(DEFAULT_PRIME);
        let seed = self.seed.or(take(&mut file, "seed")?).unwrap_or(0);
        let draws = self.draws.or(take(&mut file, "draws")?).unwrap_or(1);
        let patterns = match self.patterns.clone().or(take(&mut file, "patterns")?) {
            Some(s) => parse_patterns(&s)?,
            None => Patterns::All,
        };
        let out = self.out.clone().or(take(&mut file, "out")?);
        let disable_masks = self.disable_masks || take(&mut file, "disable-masks")?.unwrap_or(false);
        if let Some(key) = file.keys().next() {
            return Err(Failure::Config(format!("unknown config key {key:?}")));
        }

        let mut params = Params {
            clients,
            servers,
            stragglers,
            server_colluders: th,
            client_colluders: tc,
            group_size,
            grad_len: 1,
            prime,
        };
        params.grad_len = grad_len.unwrap_or_else(|| params.recovery_dim().max(1));
        params.validate().map_err(|e| Failure::Config(e.to_string()))?;
        if params.needs_padding() {
            eprintln!(
                "warning: p = {} is not a multiple of k = {}; padding to {} and normalising loads by it",
                params.grad_len,
                params.recovery_dim(),
                params.padded_len()
            );
        }
        Ok(ExperimentConfig {
            params,
            seed,
            patterns,
            out,
            draws: draws.max(1),
            disable_masks,
        })
    }
}

impl ExperimentConfig {
    /// Failure tables selected by the pattern mode, with their ids in `Omega(s)`.
    pub fn patterns(&self) -> Result<Vec<(u128, FailureTable)>, Failure> {
        let p = &self.params;
        let space =
            PatternSpace::new(p.clients, p.servers, p.stragglers).map_err(|e| Failure::Config(e.to_string()))?;
        let grouping = p.grouping().map_err(|e| Failure::Config(e.to_string()))?;
        let mode = match &self.patterns {
            Patterns::All => {
                if space.count() > MAX_ENUMERATED_PATTERNS {
                    return Err(Failure::Skipped(format!(
                        "{} patterns exceed the enumeration limit of {MAX_ENUMERATED_PATTERNS}; use sample:N or worst",
                        space.count()
                    )));
                }
                PatternMode::Enumerate
            }
            Patterns::Sample(n) => PatternMode::Sample {
                n: *n,
                seed: self.seed,
            },
            Patterns::Worst => PatternMode::WorstCase {
                budget: DEFAULT_WORST_CASE_BUDGET,
            },
            Patterns::File(path) => return read_patterns(path, &space),
        };
        Ok(space.stream(&mode, &grouping))
    }
}

/// One or more tables of `E` rows each; blank lines and `#` comments ignored.
fn read_patterns(path: &Path, space: &PatternSpace) -> Result<Vec<(u128, FailureTable)>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let rows: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let e = space.clients();
    if rows.is_empty() || !rows.len().is_multiple_of(e) {
        return Err(Failure::Config(format!(
            "{}: {} rows is not a positive multiple of E = {e}",
            path.display(),
            rows.len()
        )));
    }
    rows.chunks(e)
        .map(|chunk| {
            let table: FailureTable = chunk.join("\n").parse().map_err(|e: lcm::Error| Failure::Config(e.to_string()))?;
            let id = space.index_of(&table).ok_or_else(|| {
                Failure::Config(format!("table {table:?} is not in the straggling pattern space"))
            })?;
            Ok((id, table))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_modes() {
        assert_eq!(parse_patterns("all").unwrap(), Patterns::All);
        assert_eq!(parse_patterns("sample:12").unwrap(), Patterns::Sample(12));
        assert_eq!(parse_patterns("worst").unwrap(), Patterns::Worst);
        assert_eq!(parse_patterns("file:a/b").unwrap(), Patterns::File("a/b".into()));
        assert!(parse_patterns("sample:x").is_err());
        assert!(parse_patterns("every").is_err());
    }

    #[test]
    fn defaults_use_chunk_length_one() {
        let cfg = Common::default().resolve().unwrap();
        assert_eq!(cfg.params.recovery_dim(), 3);
        assert_eq!(cfg.params.grad_len, 3);
        assert_eq!(cfg.patterns, Patterns::All);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        fs::write(&path, "# example\nclients = 5\nth=2\nseed=9\n").unwrap();
        let common = Common {
            config: Some(path.clone()),
            clients: Some(3),
            ..Common::default()
        };
        let cfg = common.resolve().unwrap();
        assert_eq!(cfg.params.clients, 3);
        assert_eq!(cfg.params.server_colluders, 2);
        assert_eq!(cfg.seed, 9);

        fs::write(&path, "colour=blue\n").unwrap();
        assert!(matches!(common.resolve(), Err(Failure::Config(_))));
    }
}
