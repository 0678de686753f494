mod commands;
mod config;

use config::RunConfig;
use darn::Error;
use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "\
usage: darn <command> [options] [--key value]...

commands:
  synth      --out DIR                      synthesize a dense-ground-truth dataset
  train      --data DIR --out DIR           train a model; writes checkpoints and the log
  eval       --data DIR --checkpoint FILE --out DIR [--checkpoint-b FILE]
                                            score a checkpoint on the held-out split
  decompose  --checkpoint FILE --input PNG [--out-dir DIR]
                                            split one image into albedo and shading (16-bit)
  metrics    --pred DIR --gt DIR --out CSV  score prediction pairs against ground truth
  baselines  --data DIR --out DIR           constant-baseline reference scores

common options:
  --config FILE     key = value configuration file ('#' comments, dotted keys)
  --dump-config     print the fully resolved configuration and exit
  --key value       override any config key; unambiguous suffixes work
                    (e.g. --lambda 0 sets train.lambda)
  --help            this text, plus the key reference

exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric abort
";

struct Parsed {
    command: String,
    config_file: Option<PathBuf>,
    dump: bool,
    paths: Vec<(String, PathBuf)>,
    overrides: Vec<(String, String)>,
}

/// Path-valued flags each command understands.
fn path_flags(command: &str) -> &'static [&'static str] {
    match command {
        "synth" => &["out"],
        "train" => &["data", "out"],
        "eval" => &["data", "checkpoint", "checkpoint-b", "out"],
        "decompose" => &["checkpoint", "input", "out-dir"],
        "metrics" => &["pred", "gt", "out"],
        "baselines" => &["data", "out"],
        _ => &[],
    }
}

fn parse_args(args: &[String]) -> Result<Parsed, Error> {
    let usage = |msg: String| Error::Config(msg);
    let Some(command) = args.first() else {
        return Err(usage("missing command".into()));
    };
    if command == "--help" || command == "-h" || command == "help" {
        return Ok(Parsed {
            command: "help".into(),
            config_file: None,
            dump: false,
            paths: Vec::new(),
            overrides: Vec::new(),
        });
    }
    if !["synth", "train", "eval", "decompose", "metrics", "baselines"].contains(&command.as_str())
    {
        return Err(usage(format!("unknown command '{command}'")));
    }
    let mut parsed = Parsed {
        command: command.clone(),
        config_file: None,
        dump: false,
        paths: Vec::new(),
        overrides: Vec::new(),
    };
    let mut i = 1;
    while i < args.len() {
        let arg = &args[i];
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(usage(format!("unexpected argument '{arg}'")));
        };
        if flag == "help" {
            parsed.command = "help".into();
            return Ok(parsed);
        }
        if flag == "dump-config" {
            parsed.dump = true;
            i += 1;
            continue;
        }
        // --flag=value or --flag value
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        let value = match inline {
            Some(v) => v,
            None => {
                i += 1;
                args.get(i)
                    .cloned()
                    .ok_or_else(|| usage(format!("flag --{name} needs a value")))?
            }
        };
        if name == "config" {
            parsed.config_file = Some(PathBuf::from(value));
        } else if path_flags(&parsed.command).contains(&name.as_str()) {
            parsed.paths.push((name, PathBuf::from(value)));
        } else {
            parsed.overrides.push((name, value));
        }
        i += 1;
    }
    Ok(parsed)
}

fn required_path(parsed: &Parsed, name: &str) -> Result<PathBuf, Error> {
    parsed
        .paths
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, p)| p.clone())
        .ok_or_else(|| Error::Config(format!("'{}' requires --{name}", parsed.command)))
}

fn optional_path(parsed: &Parsed, name: &str) -> Option<PathBuf> {
    parsed
        .paths
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, p)| p.clone())
}

fn run() -> Result<(), Error> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let parsed = parse_args(&args)?;
    if parsed.command == "help" {
        println!("{USAGE}\nconfiguration keys:\n{}", config::schema_help());
        return Ok(());
    }
    let config = RunConfig::load(parsed.config_file.as_deref(), &parsed.overrides)?;
    if parsed.dump {
        print!("{}", config.dump());
        return Ok(());
    }
    match parsed.command.as_str() {
        "synth" => commands::synth(&config, &required_path(&parsed, "out")?),
        "train" => commands::train_cmd(
            &config,
            &required_path(&parsed, "data")?,
            &required_path(&parsed, "out")?,
        ),
        "eval" => commands::eval_cmd(
            &config,
            &required_path(&parsed, "data")?,
            &required_path(&parsed, "checkpoint")?,
            optional_path(&parsed, "checkpoint-b").as_deref(),
            &required_path(&parsed, "out")?,
        ),
        "decompose" => commands::decompose_cmd(
            &config,
            &required_path(&parsed, "checkpoint")?,
            &required_path(&parsed, "input")?,
            optional_path(&parsed, "out-dir").as_deref(),
        ),
        "metrics" => commands::metrics_cmd(
            &config,
            &required_path(&parsed, "pred")?,
            &required_path(&parsed, "gt")?,
            &required_path(&parsed, "out")?,
        ),
        "baselines" => commands::baselines_cmd(
            &config,
            &required_path(&parsed, "data")?,
            &required_path(&parsed, "out")?,
        ),
        other => Err(Error::Config(format!("unknown command '{other}'"))),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::NonFinite(_) | Error::Degenerate(_) | Error::DivFloor { .. }
        | Error::NonScalarRoot(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                eprintln!("\n{USAGE}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
