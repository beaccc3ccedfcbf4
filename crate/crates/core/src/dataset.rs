use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One offline transition `(s, a, r, s', done)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub state: Vec<T>,
    pub action: Vec<T>,
    pub reward: T,
    pub next_state: Vec<T>,
    pub terminal: bool,
}

/// Rows of transitions in matrix form; also used for mini-batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub states: Array2<T>,
    pub actions: Array2<T>,
    pub rewards: Array1<T>,
    pub next_states: Array2<T>,
    pub terminals: Vec<bool>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    pub fn from_transitions(rows: &[Transition<T>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyBatch("batch construction"))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let mut states = Array2::zeros((rows.len(), sd));
        let mut actions = Array2::zeros((rows.len(), ad));
        let mut next_states = Array2::zeros((rows.len(), sd));
        for (r, t) in rows.iter().enumerate() {
            if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
                return Err(Error::DimensionMismatch {
                    what: "transition row",
                    expected: sd + ad,
                    got: t.state.len() + t.action.len(),
                });
            }
            states.row_mut(r).assign(&ArrayView1::from(&t.state[..]));
            actions.row_mut(r).assign(&ArrayView1::from(&t.action[..]));
            next_states.row_mut(r).assign(&ArrayView1::from(&t.next_state[..]));
        }
        Ok(Self {
            states,
            actions,
            rewards: rows.iter().map(|t| t.reward).collect(),
            next_states,
            terminals: rows.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn transition(&self, r: usize) -> Transition<T> {
        Transition {
            state: self.states.row(r).to_vec(),
            action: self.actions.row(r).to_vec(),
            reward: self.rewards[r],
            next_state: self.next_states.row(r).to_vec(),
            terminal: self.terminals[r],
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        use ndarray::Axis;
        Self {
            states: self.states.select(Axis(0), idx),
            actions: self.actions.select(Axis(0), idx),
            rewards: self.rewards.select(Axis(0), idx),
            next_states: self.next_states.select(Axis(0), idx),
            terminals: idx.iter().map(|&i| self.terminals[i]).collect(),
        }
    }
}

/// Where a dataset came from; written alongside it for provenance.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetOrigin {
    Bandit { layout: String, seed: u64 },
    File(String),
    InMemory,
}

/// A static offline dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset<T> {
    pub data: Batch<T>,
    pub origin: DatasetOrigin,
}

impl<T: Scalar> OfflineDataset<T> {
    pub fn new(data: Batch<T>, origin: DatasetOrigin) -> Self {
        Self { data, origin }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<T>> + '_ {
        (0..self.len()).map(|r| self.data.transition(r))
    }

    /// Uniform mini-batch drawn with replacement.
    pub fn sample_batch(&self, rng: &mut dyn RngCore, size: usize) -> Batch<T> {
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..self.len())).collect();
        self.data.select(&idx)
    }

    fn header(sd: usize, ad: usize) -> Vec<String> {
        let mut h: Vec<String> = (0..sd).map(|k| format!("s{k}")).collect();
        h.extend((0..ad).map(|k| format!("a{k}")));
        h.push("r".into());
        h.extend((0..sd).map(|k| format!("ns{k}")));
        h.push("t".into());
        h
    }

    /// Writes the delimited-text dataset format (`s*, a*, r, ns*, t`).
    ///
    /// Reals use the shortest representation that parses back to the same `f64`.
    pub fn export(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        self.write_csv(&mut w).map_err(|e| csv_io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        self.write_csv(&mut w).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    fn write_csv<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        let d = &self.data;
        w.write_record(Self::header(d.state_dim(), d.action_dim()))?;
        for r in 0..d.len() {
            let mut rec: Vec<String> = d.states.row(r).iter().map(|v| fmt(*v)).collect();
            rec.extend(d.actions.row(r).iter().map(|v| fmt(*v)));
            rec.push(fmt(d.rewards[r]));
            rec.extend(d.next_states.row(r).iter().map(|v| fmt(*v)));
            rec.push(if d.terminals[r] { "1".into() } else { "0".into() });
            w.write_record(rec)?;
        }
        Ok(())
    }

    pub fn import(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ds = Self::parse(&text)?;
        ds.origin = DatasetOrigin::File(path.display().to_string());
        Ok(ds)
    }

    /// Parses the dataset format; errors carry the 1-based line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(text.as_bytes());
        let mut records = rdr.records();
        let header = match records.next() {
            None => return Err(parse_err(1, "missing header row")),
            Some(h) => h.map_err(|e| parse_err(line_of(&e).unwrap_or(1), e.to_string()))?,
        };
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        let sd = names.iter().filter(|n| is_indexed(n, "s")).count();
        let ad = names.iter().filter(|n| is_indexed(n, "a")).count();
        if sd == 0 || ad == 0 || names != Self::header(sd, ad) {
            return Err(parse_err(
                1,
                format!("expected header {}", Self::header(sd.max(1), ad.max(1)).join(",")),
            ));
        }

        let mut rows = Vec::new();
        for rec in records {
            let rec = rec.map_err(|e| parse_err(line_of(&e).unwrap_or(0), e.to_string()))?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() != names.len() {
                return Err(parse_err(
                    line,
                    format!("expected {} fields, found {}", names.len(), rec.len()),
                ));
            }
            let num = |k: usize| -> Result<T> {
                let f = rec[k].trim();
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(T::of)
                    .ok_or_else(|| parse_err(line, format!("column `{}`: invalid number `{f}`", names[k])))
            };
            let state = (0..sd).map(&num).collect::<Result<Vec<_>>>()?;
            let action = (sd..sd + ad).map(&num).collect::<Result<Vec<_>>>()?;
            let reward = num(sd + ad)?;
            let next_state = (sd + ad + 1..2 * sd + ad + 1).map(&num).collect::<Result<Vec<_>>>()?;
            let terminal = match rec[names.len() - 1].trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(parse_err(line, format!("column `t`: invalid flag `{other}`"))),
            };
            rows.push(Transition {
                state,
                action,
                reward,
                next_state,
                terminal,
            });
        }
        if rows.is_empty() {
            return Err(parse_err(2, "no transitions after header"));
        }
        Ok(Self::new(Batch::from_transitions(&rows)?, DatasetOrigin::InMemory))
    }
}

fn fmt<T: Scalar>(v: T) -> String {
    format!("{:?}", v.as_f64())
}

fn is_indexed(name: &str, prefix: &str) -> bool {
    name.strip_prefix(prefix)
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn line_of(e: &csv::Error) -> Option<usize> {
    e.position().map(|p| p.line() as usize)
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_is_line_one_error() {
        match OfflineDataset::<f64>::parse("") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hand_written_rows() {
        let text = "s0,a0,a1,r,ns0,t\n0,0.5,-0.25,1.5,0,1\n0.0,0.8,0.1,-2,1,0\n";
        let ds = OfflineDataset::<f64>::parse(text).unwrap();
        assert_eq!(ds.len(), 2);
        let t: Vec<_> = ds.transitions().collect();
        assert_eq!(t[0].action, vec![0.5, -0.25]);
        assert_eq!(t[0].reward, 1.5);
        assert!(t[0].terminal);
        assert_eq!(t[1].next_state, vec![1.0]);
        assert!(!t[1].terminal);
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = "s0,a0,a1,r,ns0,t\n0,0.5,-0.25,1.5,0,1\n0,abc,0,0,0,1\n";
        match OfflineDataset::<f64>::parse(text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("a0"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad_header = "x,a0,r\n1,2,3\n";
        assert!(matches!(
            OfflineDataset::<f64>::parse(bad_header),
            Err(Error::Parse { line: 1, .. })
        ));
        let short = "s0,a0,a1,r,ns0,t\n0,1,2\n";
        assert!(matches!(
            OfflineDataset::<f64>::parse(short),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn export_import_is_lossless(vals in prop::collection::vec(-1e6f64..1e6, 1..40), flags in prop::collection::vec(any::<bool>(), 40)) {
            let rows: Vec<Transition<f64>> = vals
                .iter()
                .enumerate()
                .map(|(k, &v)| Transition {
                    state: vec![v / 3.0],
                    action: vec![v.sin(), (v * 1e-7).cos() / 7.0],
                    reward: v * std::f64::consts::PI,
                    next_state: vec![-v],
                    terminal: flags[k],
                })
                .collect();
            let ds = OfflineDataset::new(Batch::from_transitions(&rows).unwrap(), DatasetOrigin::InMemory);
            let back = OfflineDataset::<f64>::parse(&ds.to_csv_string()).unwrap();
            prop_assert_eq!(back.data, ds.data);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let rows = vec![Transition {
            state: vec![0.0],
            action: vec![0.1, 0.2],
            reward: 0.3,
            next_state: vec![0.0],
            terminal: true,
        }];
        let ds = OfflineDataset::new(Batch::from_transitions(&rows).unwrap(), DatasetOrigin::InMemory);
        ds.export(&path).unwrap();
        let back = OfflineDataset::<f64>::import(&path).unwrap();
        assert_eq!(back.data, ds.data);
    }
}
