//! Machine-readable description of the command line, for `--help-json`.

use clap::{Arg, ArgAction, Command};
use serde_json::{json, Value};

fn arg(a: &Arg) -> Value {
    let takes_value = !matches!(
        a.get_action(),
        ArgAction::SetTrue | ArgAction::SetFalse | ArgAction::Count | ArgAction::Help | ArgAction::Version
    );
    let possible: Vec<String> = a.get_possible_values().iter().map(|p| p.get_name().to_string()).collect();
    json!({
        "id": a.get_id().as_str(),
        "long": a.get_long(),
        "short": a.get_short().map(String::from),
        "help": a.get_help().map(|h| h.to_string()),
        "required": a.is_required_set(),
        "global": a.is_global_set(),
        "takes_value": takes_value,
        "multiple": matches!(a.get_action(), ArgAction::Append),
        "value_names": a.get_value_names().map(|v| v.iter().map(|s| s.to_string()).collect::<Vec<_>>()),
        "default": a.get_default_values().iter().map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>(),
        "possible_values": possible,
    })
}

fn command(c: &Command) -> Value {
    let args: Vec<Value> = c
        .get_arguments()
        .filter(|a| !matches!(a.get_action(), ArgAction::Help | ArgAction::Version))
        .map(arg)
        .collect();
    let subs: Vec<Value> = c.get_subcommands().filter(|s| s.get_name() != "help").map(command).collect();
    json!({
        "name": c.get_name(),
        "about": c.get_about().map(|a| a.to_string()),
        "args": args,
        "subcommands": subs,
    })
}

pub fn describe(mut root: Command) -> Value {
    root.build();
    let mut v = command(&root);
    v["version"] = json!(root.get_version());
    v["exit_codes"] = json!({
        "0": "success",
        "1": "validation failure or failed run (QC failures, rejected records, unreadable input)",
        "2": "usage error (unknown subcommand or flag, bad flag value, bad config file)",
    });
    v["config"] = json!({
        "format": "toml",
        "precedence": ["flag", "config file", "default"],
        "sections": ["ingest", "gateway", "personas", "generation", "qc", "analytics", "serve"],
    });
    v
}
