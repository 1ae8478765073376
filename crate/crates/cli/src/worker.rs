//! A protocol worker backed by a builtin model, for exercising the external
//! simulator path end to end.

use std::io::{BufRead, Write};

use sbice_core::rng::RandomStream;
use sbice_core::simulators::{catalog_entry, simulate, SimulatorConfig, SimulatorVariant, WorkerRequest};

use crate::error::{CliError, Result};

fn answer(variant: &SimulatorVariant, line: &str) -> std::result::Result<String, String> {
    let req: WorkerRequest = serde_json::from_str(line).map_err(|e| format!("malformed request: {e}"))?;
    let sim = SimulatorConfig::new(variant.clone(), req.n, None).map_err(|e| e.to_string())?;
    let g = simulate(&sim, &req.theta, &RandomStream::new(req.seed)).map_err(|e| e.to_string())?;
    Ok(g.dataset.to_csv_string())
}

/// Serves requests from `input` until it closes, or after one request in
/// oneshot mode. A bad request yields an `ERROR` line and the loop goes on.
pub fn serve(model: &str, oneshot: bool, input: impl BufRead, mut output: impl Write) -> Result<()> {
    let entry = catalog_entry(model).ok_or_else(|| CliError::Config(format!("unknown worker model `{model}`")))?;
    let variant = entry.variant;
    if SimulatorConfig::new(variant.clone(), 2, None).is_err() {
        return Err(CliError::Config(format!("`{model}` needs a source dataset and cannot run as a worker")));
    }
    let io = CliError::io("<stdout>");
    let mut write = |text: &str| output.write_all(text.as_bytes()).and_then(|_| output.flush());
    for line in input.lines() {
        let line = line.map_err(CliError::io("<stdin>"))?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match answer(&variant, &line) {
            Ok(csv) => format!("BEGIN_CSV\n{csv}END_CSV\n"),
            Err(msg) => format!("ERROR {}\n", msg.replace('\n', " ")),
        };
        if let Err(e) = write(&reply) {
            return Err(io(e));
        }
        if oneshot {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answers_and_survives_bad_requests() {
        let input = "not json\n{\"theta\":{\"rho\":1,\"beta\":-1.5,\"tau\":1.5},\"n\":10,\"seed\":3}\n";
        let mut out = Vec::new();
        serve("dgp1", false, input.as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("ERROR malformed request"));
        assert_eq!(lines.next(), Some("BEGIN_CSV"));
        assert_eq!(lines.clone().take_while(|l| *l != "END_CSV").count(), 11);
        assert_eq!(text.lines().last(), Some("END_CSV"));
    }

    #[test]
    fn identical_requests_identical_blocks() {
        let req = "{\"theta\":{\"rho\":1,\"beta\":-1.5,\"tau\":1.5},\"n\":20,\"seed\":8}\n";
        let mut out = Vec::new();
        serve("dgp1", false, format!("{req}{req}").as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let blocks: Vec<&str> = text.split("END_CSV\n").filter(|b| !b.is_empty()).collect();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0], blocks[1]);
    }

    #[test]
    fn oneshot_stops_after_one_request_and_source_models_are_rejected() {
        let req = "{\"theta\":{\"rho\":1,\"beta\":-1.5,\"tau\":1.5},\"n\":5,\"seed\":8}\n";
        let mut out = Vec::new();
        serve("dgp1", true, format!("{req}{req}").as_bytes(), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().matches("BEGIN_CSV").count(), 1);
        assert!(serve("sim1", false, "".as_bytes(), Vec::new()).is_err());
    }
}
