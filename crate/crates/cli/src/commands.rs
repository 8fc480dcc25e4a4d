use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Serialize;
use todbias::attribution::{attribute, probe_backends, reports_to_csv, reports_to_json, AttributionReport};
use todbias::perturber::PlanRecord;
use todbias::pipeline::{evaluate, Backends, Database, TemplateConfig};
use todbias::server::{GoldIndex, MockServer, ServerMode};
use todbias::{
    load_corpus, perturb_corpus, word_usage_stats, AttributePair, Corpus, Dialogue, Lexicon, LexiconPerturber,
};

use crate::cli::{BackendArgs, Cli, Command, Format, PairArgs, PerturbArgs, ServeArgs, Shared};
use crate::config::{self, require_file, FileConfig, DEFAULT_SEED};
use crate::exit::{self, CliError};

type CliResult<T = u8> = Result<T, CliError>;

pub fn dispatch(cli: Cli) -> CliResult {
    let Cli { command, shared } = cli;
    if let Some(0) = shared.jobs {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let work = || match command {
        Command::Stats => stats(&shared),
        Command::Perturb(args) => perturb(&shared, &args),
        Command::Run(args) => run(&shared, &args),
        Command::Attribute(args) => {
            let cfg = config::run_config(&shared, &args)?;
            attribute_cmd(&shared, cfg)
        }
        Command::ServeMock(args) => serve(&shared, &args),
    };
    match shared.jobs {
        Some(n) => rayon_pool(n)?.install(work),
        None => work(),
    }
}

fn rayon_pool(n: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::usage(format!("cannot build worker pool: {e}")))
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    let path = path
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("missing required flag {flag}")))?;
    require_file(path)?;
    Ok(path)
}

fn load_lexicon(shared: &Shared) -> CliResult<Lexicon> {
    match &shared.lexicon {
        Some(p) => {
            require_file(p)?;
            Ok(Lexicon::load(p)?)
        }
        None => Ok(Lexicon::builtin()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::from(todbias::Error::Output(format!("{}: {e}", path.display())))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::from(todbias::Error::Output(format!("stdout: {e}"))))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn stats(shared: &Shared) -> CliResult {
    let corpus_path = required(&shared.corpus, "--corpus")?;
    let lexicon = load_lexicon(shared)?;
    let corpus = load_corpus(corpus_path)?;
    let stats = word_usage_stats(&corpus, &lexicon);
    let text = match shared.format.unwrap_or_default() {
        Format::Json => to_json(&stats),
        Format::Csv => {
            let mut s = String::from("axis,attribute,count,proportion\n");
            for (axis, attrs) in &stats.axes {
                for (attr, usage) in attrs {
                    let _ = writeln!(s, "{axis},{attr},{},{}", usage.count, usage.proportion);
                }
            }
            s
        }
    };
    emit(shared.out.as_deref(), &text)?;
    Ok(exit::OK)
}

/// Explicit pairs, else all ordered pairs of the given (or all) axes.
fn select_pairs(lexicon: &Lexicon, args: &PairArgs) -> CliResult<BTreeSet<AttributePair>> {
    if !args.pairs.is_empty() {
        let pairs = config::parse_pairs(&args.pairs)?;
        for p in &pairs {
            lexicon.check_pair(p).map_err(|e| CliError::usage(e.to_string()))?;
            if !args.axes.is_empty() && !args.axes.contains(&p.axis) {
                return Err(CliError::usage(format!("pair {p} is not on a selected axis")));
            }
        }
        return Ok(pairs.into_iter().collect());
    }
    let axes: Vec<String> = if args.axes.is_empty() {
        lexicon.axes().iter().map(|a| a.name.clone()).collect()
    } else {
        args.axes.clone()
    };
    let mut pairs = BTreeSet::new();
    for axis in &axes {
        if lexicon.axis(axis).is_none() {
            return Err(CliError::usage(format!("unknown axis `{axis}`")));
        }
        pairs.extend(lexicon.all_pairs(axis)?);
    }
    Ok(pairs)
}

fn perturb(shared: &Shared, args: &PerturbArgs) -> CliResult {
    let corpus_path = required(&shared.corpus, "--corpus")?;
    let lexicon = load_lexicon(shared)?;
    let pairs = select_pairs(&lexicon, &args.pairs)?;
    let corpus = load_corpus(corpus_path)?;
    let seed = shared.seed.unwrap_or(DEFAULT_SEED);
    let perturbed = perturb_corpus(&corpus, &LexiconPerturber::new(&lexicon, &pairs), seed)?;

    let dialogues: Vec<Dialogue> = perturbed.iter().map(|p| p.dialogue.clone()).collect();
    let plan: Vec<PlanRecord> = perturbed.iter().map(|p| PlanRecord::from(&p.plan)).collect();
    emit(shared.out.as_deref(), &Corpus::new(dialogues).to_canonical_json())?;

    let plan_path = args.plan.clone().or_else(|| {
        shared.out.as_ref().map(|o| {
            let mut name = o.as_os_str().to_owned();
            name.push(".plan.json");
            PathBuf::from(name)
        })
    });
    if let Some(path) = plan_path {
        emit(Some(&path), &to_json(&plan))?;
    }
    let unperturbable = plan.iter().filter(|p| p.unperturbable).count();
    if unperturbable > 0 {
        eprintln!("todbias: {unperturbable} of {} dialogues unperturbable", plan.len());
    }
    Ok(exit::OK)
}

fn run(shared: &Shared, args: &BackendArgs) -> CliResult {
    let corpus_path = required(&shared.corpus, "--corpus")?;
    let db_path = required(&shared.db, "--db")?;
    let lexicon = load_lexicon(shared)?;
    let (api, response) = config::backends(args, &FileConfig::default())?;
    let corpus = load_corpus(corpus_path)?;
    let db = Database::load(db_path)?;
    probe_backends(&[&api, &response]).map_err(|e| CliError::unreachable(&e))?;
    let backends = Backends::from_config(&api, &response, &lexicon)?;
    let eval = evaluate(&corpus, &db, &backends)?;

    let text = match shared.format.unwrap_or_default() {
        Format::Json => to_json(&eval),
        Format::Csv => {
            let mut s = String::from("metric,value\n");
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(s, "bleu,{}", opt(eval.bleu));
            let _ = writeln!(s, "jga,{}", opt(eval.jga));
            let _ = writeln!(s, "n_dialogues,{}", eval.n_dialogues);
            let _ = writeln!(s, "n_turns,{}", eval.n_turns);
            let _ = writeln!(s, "n_failed_turns,{}", eval.n_failed_turns);
            s
        }
    };
    emit(shared.out.as_deref(), &text)?;
    Ok(if eval.n_failed_turns > 0 {
        exit::PARTIAL
    } else {
        exit::OK
    })
}

fn per_pair_csv(report: &AttributionReport) -> String {
    let mut s = String::from("source,target,f_db\n");
    for (src, row) in &report.per_pair {
        for (tgt, v) in row {
            let _ = writeln!(s, "{src},{tgt},{}", v.map(|x| x.to_string()).unwrap_or_default());
        }
    }
    s
}

fn attribute_cmd(shared: &Shared, cfg: todbias::RunConfig) -> CliResult {
    probe_backends(&[&cfg.api_backend, &cfg.response_backend]).map_err(|e| CliError::unreachable(&e))?;
    let reports = attribute(&cfg)?;
    let format = shared.format.unwrap_or_default();
    let render = |rs: &[AttributionReport]| -> CliResult<String> {
        Ok(match format {
            Format::Json => reports_to_json(rs),
            Format::Csv => reports_to_csv(rs)?,
        })
    };
    match &shared.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::from(todbias::Error::Output(format!("{}: {e}", dir.display()))))?;
            let ext = match format {
                Format::Json => "json",
                Format::Csv => "csv",
            };
            for report in &reports {
                let one = std::slice::from_ref(report);
                emit(Some(&dir.join(format!("report_{}.{ext}", report.axis))), &render(one)?)?;
                emit(
                    Some(&dir.join(format!("per_pair_{}.csv", report.axis))),
                    &per_pair_csv(report),
                )?;
            }
        }
        None => emit(None, &render(&reports)?)?,
    }
    for r in reports.iter().filter(|r| !r.is_ok()) {
        eprintln!("todbias: axis `{}` aborted: {}", r.axis, r.diagnostics.join("; "));
    }
    Ok(if reports.iter().all(AttributionReport::is_ok) {
        exit::OK
    } else {
        exit::PARTIAL
    })
}

fn serve(shared: &Shared, args: &ServeArgs) -> CliResult {
    let mode: ServerMode = args
        .mode
        .parse()
        .map_err(|e: todbias::Error| CliError::usage(e.to_string()))?;
    let lexicon = load_lexicon(shared)?;
    let gold = match &shared.corpus {
        Some(p) => {
            require_file(p)?;
            Some(GoldIndex::build(&load_corpus(p)?, &lexicon)?)
        }
        None if mode == ServerMode::Echo => return Err(CliError::usage("echo mode requires --corpus")),
        None => None,
    };
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::usage(format!("bad listen address: {e}")))?;
    let server = MockServer::new(mode, gold, TemplateConfig::default())?;
    eprintln!("todbias: serving {} mode on http://{addr}", args.mode);
    server.serve(addr)?;
    Ok(exit::OK)
}
