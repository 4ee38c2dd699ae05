//! `lcm`: bounds, simulations, parameter sweeps and verification suites for
//! the LCM secure-aggregation protocol.
//!
//! Exit codes: 0 success, 1 a check failed, 2 invalid configuration,
//! 3 I/O error, 4 a check was skipped because it exceeds its budget.

mod config;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lcm::bounds::{bound_set, unit_group_loads, wide_group_loads, BoundSet, Load};
use lcm::network::{binomial, FailureTable};
use lcm::privacy::{
    all_patterns, client_sweep, mi_client_oracle, mi_server_oracle, server_sweep, ub_invertibility_sweep,
    OracleOptions, SweepReport, Verdict, DEFAULT_WORLD_BUDGET,
};
use lcm::protocol::{sweep_patterns, PatternOutcome, SweepConfig};
use lcm::Params;

use config::{Common, ExperimentConfig};

#[derive(Debug)]
pub enum Failure {
    Failed(String),
    Config(String),
    Io(String),
    Skipped(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Failed(_) => 1,
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Skipped(_) => 4,
        }
    }
}

impl From<lcm::Error> for Failure {
    fn from(e: lcm::Error) -> Self {
        match e {
            lcm::Error::InfeasibleParams(_) => Failure::Config(e.to_string()),
            lcm::Error::TooLargeToEnumerate { .. } => Failure::Skipped(e.to_string()),
            other => Failure::Failed(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "lcm", version, about = "Multi-server secure aggregation with straggling links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print lower bounds and achievable loads
    Bounds(Common),
    /// Run one round per pattern and report measured loads
    Simulate(Common),
    /// Repeat `simulate` over a range of one parameter
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        vary: Vary,
        #[arg(long)]
        from: usize,
        #[arg(long)]
        to: usize,
    },
    /// Run verification suites
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Vary {
    #[value(name = "v")]
    GroupSize,
    #[value(name = "th")]
    ServerColluders,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    Correctness,
    Privacy,
    Bounds,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bounds(c) => bounds(&c),
        Command::Simulate(c) => simulate(&c),
        Command::Sweep { common, vary, from, to } => sweep(&common, vary, from, to),
        Command::Verify { common, suite } => verify(&common, suite),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Failed(m) => eprintln!("failed: {m}"),
                Failure::Config(m) => eprintln!("invalid configuration: {m}"),
                Failure::Io(m) => eprintln!("i/o error: {m}"),
                Failure::Skipped(m) => eprintln!("skipped: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn params_line(p: &Params) -> String {
    format!(
        "E={} H={} s={} T_h={} T_c={} v={} p={} q={} k={}",
        p.clients,
        p.servers,
        p.stragglers,
        p.server_colluders,
        p.client_colluders,
        p.group_size,
        p.grad_len,
        p.prime,
        p.recovery_dim()
    )
}

fn bounds(common: &Common) -> Result<(), Failure> {
    let cfg = common.resolve()?;
    let b = bound_set(&cfg.params)?;
    println!("{}", params_line(&cfg.params));
    println!("c_up   lower {}  lcm {}", report::ratio(&b.c_up_lower), report::ratio(&b.c_up_lcm));
    println!("c_down lower {}  lcm {}", report::ratio(&b.c_down_lower), report::ratio(&b.c_down_lcm));
    if let Some(dir) = &cfg.out {
        report::write_bounds(dir, &b, None)?;
    }
    Ok(())
}

struct Measured {
    outcomes: Vec<PatternOutcome>,
    bounds: BoundSet,
    c_up: Load,
    worst_c_down: Load,
    mismatches: usize,
}

fn measure(cfg: &ExperimentConfig) -> Result<Measured, Failure> {
    let patterns = cfg.patterns()?;
    if patterns.is_empty() {
        return Err(Failure::Config("no patterns selected".into()));
    }
    let sweep_cfg = SweepConfig {
        seed: cfg.seed,
        draws: cfg.draws,
        disable_masks: cfg.disable_masks,
    };
    let outcomes = sweep_patterns(&cfg.params, &patterns, &sweep_cfg)?;
    let zero = Load::from_integer(0);
    Ok(Measured {
        bounds: bound_set(&cfg.params)?,
        c_up: outcomes.iter().map(|o| o.c_up).max().unwrap_or(zero),
        worst_c_down: outcomes.iter().map(|o| o.c_down).max().unwrap_or(zero),
        mismatches: outcomes.iter().map(|o| o.mismatches).sum(),
        outcomes,
    })
}

fn simulate(common: &Common) -> Result<(), Failure> {
    let cfg = common.resolve()?;
    let m = measure(&cfg)?;
    if let Some(dir) = &cfg.out {
        report::write_loads(dir, &m.outcomes)?;
        report::write_bounds(dir, &m.bounds, Some(&m.worst_c_down))?;
    }
    let b = &m.bounds;
    let optimal = if m.c_up == b.c_up_lower { "optimal" } else { "above lower bound" };
    let conforms = m.c_up == b.c_up_lcm && m.worst_c_down <= b.c_down_lcm;
    println!("{}", params_line(&cfg.params));
    println!(
        "summary: c_up = {} (lower bound {}, {optimal}); worst c_down = {} over {} patterns \
         (lower bound {}, lcm bound {}); {}; decoding {}",
        report::ratio(&m.c_up),
        report::ratio(&b.c_up_lower),
        report::ratio(&m.worst_c_down),
        m.outcomes.len(),
        report::ratio(&b.c_down_lower),
        report::ratio(&b.c_down_lcm),
        if conforms { "conforms to bounds" } else { "VIOLATES bounds" },
        if m.mismatches == 0 {
            "exact".to_string()
        } else {
            format!("wrong in {} client-rounds", m.mismatches)
        },
    );
    if !conforms {
        return Err(Failure::Failed("measured loads exceed the achievable bounds".into()));
    }
    if m.mismatches > 0 {
        return Err(Failure::Failed("decoded aggregate differs from the sum".into()));
    }
    Ok(())
}

fn sweep(common: &Common, vary: Vary, from: usize, to: usize) -> Result<(), Failure> {
    let base = common.resolve()?;
    let name = match vary {
        Vary::GroupSize => "v",
        Vary::ServerColluders => "th",
    };
    let mut rows = Vec::new();
    let mut failed = false;
    for value in from..=to {
        let mut c = common.clone();
        match vary {
            Vary::GroupSize => c.group_size = Some(value),
            Vary::ServerColluders => c.th = Some(value),
        }
        let cfg = match c.resolve() {
            Ok(cfg) => cfg,
            Err(Failure::Config(msg)) => {
                println!("{name}={value}: infeasible, {msg}");
                rows.push((value, None));
                continue;
            }
            Err(other) => return Err(other),
        };
        let m = measure(&cfg)?;
        let conforms = m.c_up == m.bounds.c_up_lcm && m.worst_c_down <= m.bounds.c_down_lcm && m.mismatches == 0;
        failed |= !conforms;
        println!(
            "{name}={value}: c_up {} (lcm {}), worst c_down {} (lcm {}){}",
            report::ratio(&m.c_up),
            report::ratio(&m.bounds.c_up_lcm),
            report::ratio(&m.worst_c_down),
            report::ratio(&m.bounds.c_down_lcm),
            if conforms { "" } else { " FAIL" }
        );
        rows.push((value, Some((m.bounds, m.worst_c_down))));
    }
    if let Some(dir) = &base.out {
        report::write_sweep(dir, name, &rows)?;
    }
    if failed {
        return Err(Failure::Failed("some swept configurations violate their bounds".into()));
    }
    Ok(())
}

#[derive(Default)]
struct Tally {
    failed: usize,
    skipped: usize,
}

impl Tally {
    fn record(&mut self, name: &str, outcome: Result<String, Failure>) {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(Failure::Skipped(why)) => {
                self.skipped += 1;
                println!("SKIP {name}: {why}");
            }
            Err(Failure::Failed(why) | Failure::Config(why) | Failure::Io(why)) => {
                self.failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
}

fn verify(common: &Common, suite: Suite) -> Result<(), Failure> {
    let cfg = common.resolve()?;
    println!("{}", params_line(&cfg.params));
    let mut tally = Tally::default();
    let all = suite == Suite::All;
    if all || suite == Suite::Correctness {
        tally.record("correctness", check_correctness(&cfg));
    }
    if all || suite == Suite::Bounds {
        tally.record("bounds/formulas", check_formulas(&cfg.params));
        tally.record("bounds/conformance", check_conformance(&cfg));
    }
    if all || suite == Suite::Privacy {
        check_privacy(&cfg, &mut tally);
    }
    if tally.failed > 0 {
        Err(Failure::Failed(format!("{} check(s) failed", tally.failed)))
    } else if tally.skipped > 0 {
        Err(Failure::Skipped(format!("{} check(s) skipped", tally.skipped)))
    } else {
        Ok(())
    }
}

fn check_correctness(cfg: &ExperimentConfig) -> Result<String, Failure> {
    let m = measure(cfg)?;
    let rounds = m.outcomes.len() * cfg.draws;
    if m.mismatches > 0 {
        return Err(Failure::Failed(format!(
            "{} wrong client outputs over {rounds} rounds",
            m.mismatches
        )));
    }
    Ok(format!(
        "every client decoded the exact sum over {} patterns x {} draws",
        m.outcomes.len(),
        cfg.draws
    ))
}

fn check_formulas(p: &Params) -> Result<String, Failure> {
    let b = bound_set(p)?;
    if b.c_up_lcm < b.c_up_lower || b.c_down_lcm < b.c_down_lower {
        return Err(Failure::Failed("achievable load below the lower bound".into()));
    }
    let mut notes = vec!["lower <= achievable".to_string()];
    let achievable = (b.c_up_lcm, b.c_down_lcm);
    if p.group_size == 1 {
        if unit_group_loads(p)? != achievable || b.c_up_lcm != b.c_up_lower {
            return Err(Failure::Failed("v = 1 closed form disagrees".into()));
        }
        notes.push("v = 1 closed form and uplink optimality hold".into());
    }
    if p.group_size == 2 * p.stragglers + 1 {
        if wide_group_loads(p)? != achievable {
            return Err(Failure::Failed("v = 2s+1 closed form disagrees".into()));
        }
        notes.push("v = 2s+1 closed form holds".into());
    }
    Ok(notes.join("; "))
}

fn check_conformance(cfg: &ExperimentConfig) -> Result<String, Failure> {
    let m = measure(cfg)?;
    if m.c_up != m.bounds.c_up_lcm {
        return Err(Failure::Failed(format!(
            "measured c_up {} != {}",
            report::ratio(&m.c_up),
            report::ratio(&m.bounds.c_up_lcm)
        )));
    }
    if m.worst_c_down > m.bounds.c_down_lcm {
        return Err(Failure::Failed(format!(
            "measured c_down {} > {}",
            report::ratio(&m.worst_c_down),
            report::ratio(&m.bounds.c_down_lcm)
        )));
    }
    Ok(format!(
        "c_up {} exact, worst c_down {} <= {} over {} patterns",
        report::ratio(&m.c_up),
        report::ratio(&m.worst_c_down),
        report::ratio(&m.bounds.c_down_lcm),
        m.outcomes.len()
    ))
}

/// Enumerate every pattern directly when the total work fits the budget;
/// otherwise only full connectivity and certify the rest.
fn direct_patterns(p: &Params, members: usize, threshold: usize) -> Result<Vec<(u128, FailureTable)>, Failure> {
    let patterns = all_patterns(p)?;
    let sets: u128 = (1..=threshold.min(members))
        .map(|t| binomial(members as u64, t as u64).unwrap_or(u128::MAX))
        .fold(0, u128::saturating_add);
    let vars = p.grad_len * p.clients * (p.clients + 1) / 2 + p.clients * p.server_colluders * p.chunk_len();
    let per_call = (p.prime as u128).checked_pow(vars as u32).unwrap_or(u128::MAX);
    let total = per_call.saturating_mul(sets).saturating_mul(patterns.len() as u128);
    Ok(if total <= DEFAULT_WORLD_BUDGET { patterns } else { Vec::new() })
}

fn sweep_detail(r: SweepReport) -> Result<String, Failure> {
    match r.failure {
        None => Ok(format!(
            "independent ({} pattern/colluder pairs enumerated, {} certified from full connectivity)",
            r.enumerated, r.certified
        )),
        Some((id, adversary, w)) => Err(Failure::Failed(format!(
            "{adversary} under pattern {id}: {}",
            Verdict::Dependent(w)
        ))),
    }
}

fn expect_dependent(v: Verdict) -> Result<String, Failure> {
    match v {
        Verdict::Dependent(w) => Ok(format!("dependent as expected, {}", Verdict::Dependent(w))),
        Verdict::Independent => Err(Failure::Failed("oracle found no dependence".into())),
    }
}

fn check_privacy(cfg: &ExperimentConfig, tally: &mut Tally) {
    let p = &cfg.params;
    let opts = OracleOptions {
        disable_masks: cfg.disable_masks,
        ..OracleOptions::default()
    };
    let full = FailureTable::all_ones(p.clients, p.servers);

    tally.record(
        "privacy/ub",
        ub_invertibility_sweep(p).map_err(Failure::from).and_then(|r| match r {
            None => Ok("noise block invertible for every T_h groups".into()),
            Some(groups) => Err(Failure::Failed(format!("singular for groups {groups:?}"))),
        }),
    );
    tally.record(
        "privacy/server-oracle",
        (|| {
            let direct = direct_patterns(p, p.servers, p.server_colluders)?;
            sweep_detail(server_sweep(p, &opts, &direct)?)
        })(),
    );
    tally.record(
        "privacy/client-oracle",
        (|| {
            let direct = direct_patterns(p, p.clients, p.client_colluders)?;
            sweep_detail(client_sweep(p, &opts, &direct)?)
        })(),
    );

    let masks_off = OracleOptions {
        disable_masks: true,
        allow_over_threshold: true,
        ..OracleOptions::default()
    };
    // One server from each of T_h + 1 groups, with masks compromised.
    let grouping = p.grouping().ok();
    let over: Option<Vec<usize>> = grouping.as_ref().and_then(|g| {
        (g.len() > p.server_colluders).then(|| (0..=p.server_colluders).map(|j| g.members(j)[0]).collect())
    });
    let name = "privacy/negative-control/server-over-threshold";
    match over {
        Some(set) => tally.record(
            name,
            mi_server_oracle(p, &set, &full, &masks_off)
                .map_err(Failure::from)
                .and_then(expect_dependent),
        ),
        None => println!("N/A  {name}: fewer than T_h + 1 groups"),
    }
    let name = "privacy/negative-control/client-masks-off";
    if p.clients >= 3 {
        tally.record(
            name,
            mi_client_oracle(p, &[0], &full, &masks_off)
                .map_err(Failure::from)
                .and_then(expect_dependent),
        );
    } else {
        println!("N/A  {name}: needs E >= 3 so that two honest clients remain");
    }
}
