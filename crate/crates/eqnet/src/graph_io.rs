//! Plain-text networks: `n <n_internal>` then one `<src> <dst> <weight>` line
//! per edge; lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use eqnet_core::{MetabolicNetwork, WeightedEdge};

use crate::error::{Error, Result};
use crate::fsutil;

pub fn parse_graph(text: &str, path: &Path) -> Result<MetabolicNetwork> {
    let mut n = None;
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let int = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| Error::parse(path, i + 1, format!("`{s}` is not a non-negative integer")))
        };
        match (n, fields.as_slice()) {
            (None, ["n", k]) => n = Some(int(k)? as usize),
            (None, _) => return Err(Error::parse(path, i + 1, "expected `n <n_internal>`")),
            (Some(_), [s, d, w]) => edges.push(WeightedEdge::new(int(s)?, int(d)?, int(w)?)),
            (Some(_), _) => return Err(Error::parse(path, i + 1, "expected `<src> <dst> <weight>`")),
        }
    }
    let n = n.ok_or_else(|| Error::parse(path, 1, "missing `n <n_internal>` line"))?;
    let net = MetabolicNetwork::new(n, edges)?;
    net.ensure_structurally_valid()?;
    Ok(net)
}

pub fn format_graph(net: &MetabolicNetwork) -> String {
    let mut s = format!("n {}\n", net.n_internal());
    for e in net.canonical_edge_order() {
        let _ = writeln!(s, "{} {} {}", e.src.0, e.dst.0, e.weight);
    }
    s
}

pub fn read_graph(path: &Path) -> Result<MetabolicNetwork> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    parse_graph(&text, path)
}

pub fn write_graph(path: &Path, net: &MetabolicNetwork) -> Result<()> {
    fsutil::write_atomic(path, format_graph(net).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_round_trips() {
        let text = "# chain\nn 1\n0 1 1\n\n1 2 2\n";
        let net = parse_graph(text, Path::new("chain")).unwrap();
        assert_eq!(net.n_internal(), 1);
        assert_eq!(net.edge_count(), 2);
        assert_eq!(parse_graph(&format_graph(&net), Path::new("x")).unwrap(), net);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_graph("n 2\n0 1\n", Path::new("g")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(parse_graph("0 1 1\n", Path::new("g")).is_err());
        assert!(parse_graph("n 1\n0 1 x\n", Path::new("g")).is_err());
    }

    #[test]
    fn rejects_invalid_networks() {
        assert!(matches!(parse_graph("n 1\n1 0 1\n", Path::new("g")), Err(Error::Graph(_))));
        assert!(matches!(parse_graph("n 1\n0 1 1\n0 1 2\n", Path::new("g")), Err(Error::Graph(_))));
    }
}
