//! Evaluation results and their CSV form.

use std::io::Write;

use crate::error::Result;

/// Which noise channel a grid point varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sweep {
    Measurement,
    Process,
}

impl Sweep {
    pub fn name(self) -> &'static str {
        match self {
            Sweep::Measurement => "measurement",
            Sweep::Process => "process",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "measurement" => Some(Sweep::Measurement),
            "process" => Some(Sweep::Process),
            _ => None,
        }
    }
}

/// One evaluated noise setting, as fractions of the nominal magnitudes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub sweep: Sweep,
    pub process_std: f64,
    pub measurement_std: f64,
}

impl GridPoint {
    /// The level along the swept axis.
    pub fn level(&self) -> f64 {
        match self.sweep {
            Sweep::Measurement => self.measurement_std,
            Sweep::Process => self.process_std,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    OpenLoop,
    ClosedLoop,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 2] = [ControllerKind::OpenLoop, ControllerKind::ClosedLoop];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::OpenLoop => "open_loop",
            ControllerKind::ClosedLoop => "closed_loop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Outcome of a single Monte-Carlo episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// Index into [`EvalReport::levels`].
    pub level: usize,
    pub episode: u64,
    pub controller: ControllerKind,
    pub cost: f64,
    pub diverged: bool,
    pub success: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerStats {
    pub mean: f64,
    /// Unbiased sample variance; zero for a single episode.
    pub variance: f64,
    pub success_rate: f64,
    pub diverged: usize,
}

impl ControllerStats {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a EpisodeRecord>) -> Self {
        let records: Vec<&EpisodeRecord> = records.into_iter().collect();
        let costs: Vec<f64> = records.iter().map(|r| r.cost).collect();
        let (mean, variance) = mean_variance(&costs);
        let n = records.len().max(1) as f64;
        Self {
            mean,
            variance,
            success_rate: records.iter().filter(|r| r.success).count() as f64 / n,
            diverged: records.iter().filter(|r| r.diverged).count(),
        }
    }

    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelReport {
    pub point: GridPoint,
    pub episodes: usize,
    pub open_loop: ControllerStats,
    pub closed_loop: ControllerStats,
}

impl LevelReport {
    pub fn stats(&self, kind: ControllerKind) -> &ControllerStats {
        match kind {
            ControllerKind::OpenLoop => &self.open_loop,
            ControllerKind::ClosedLoop => &self.closed_loop,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub nominal_cost: f64,
    pub levels: Vec<LevelReport>,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    /// Aggregate per-level statistics from episode records.
    pub fn from_records(nominal_cost: f64, points: &[GridPoint], episodes: Vec<EpisodeRecord>) -> Self {
        let levels = points
            .iter()
            .enumerate()
            .map(|(i, point)| {
                let of = |kind: ControllerKind| {
                    ControllerStats::from_records(
                        episodes.iter().filter(|r| r.level == i && r.controller == kind),
                    )
                };
                LevelReport {
                    point: *point,
                    episodes: episodes
                        .iter()
                        .filter(|r| r.level == i && r.controller == ControllerKind::OpenLoop)
                        .count(),
                    open_loop: of(ControllerKind::OpenLoop),
                    closed_loop: of(ControllerKind::ClosedLoop),
                }
            })
            .collect();
        Self {
            nominal_cost,
            levels,
            episodes,
        }
    }

    pub fn sweep(&self, sweep: Sweep) -> impl Iterator<Item = &LevelReport> {
        self.levels.iter().filter(move |l| l.point.sweep == sweep)
    }

    pub const LEVEL_HEADER: [&'static str; 13] = [
        "level",
        "sweep",
        "process_std",
        "measurement_std",
        "episodes",
        "open_loop_mean",
        "open_loop_variance",
        "open_loop_success_rate",
        "open_loop_diverged",
        "closed_loop_mean",
        "closed_loop_variance",
        "closed_loop_success_rate",
        "closed_loop_diverged",
    ];

    pub const EPISODE_HEADER: [&'static str; 9] = [
        "level",
        "sweep",
        "process_std",
        "measurement_std",
        "episode",
        "controller",
        "cost",
        "diverged",
        "success",
    ];

    pub fn write_levels_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::LEVEL_HEADER)?;
        for (i, l) in self.levels.iter().enumerate() {
            let mut row = vec![
                i.to_string(),
                l.point.sweep.name().to_string(),
                l.point.process_std.to_string(),
                l.point.measurement_std.to_string(),
                l.episodes.to_string(),
            ];
            for s in [&l.open_loop, &l.closed_loop] {
                row.extend([
                    s.mean.to_string(),
                    s.variance.to_string(),
                    s.success_rate.to_string(),
                    s.diverged.to_string(),
                ]);
            }
            out.write_record(&row)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_episodes_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::EPISODE_HEADER)?;
        for r in &self.episodes {
            let p = &self.levels[r.level].point;
            out.write_record([
                r.level.to_string(),
                p.sweep.name().to_string(),
                p.process_std.to_string(),
                p.measurement_std.to_string(),
                r.episode.to_string(),
                r.controller.name().to_string(),
                r.cost.to_string(),
                u8::from(r.diverged).to_string(),
                u8::from(r.success).to_string(),
            ])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Parse rows written by [`EvalReport::write_episodes_csv`], returning the
/// grid points (in level order) and the records.
pub fn read_episodes_csv<R: std::io::Read>(r: R) -> Result<(Vec<GridPoint>, Vec<EpisodeRecord>)> {
    let bad = |msg: &str| crate::error::HarnessError::Config(format!("episode csv: {msg}"));
    let mut rdr = csv::Reader::from_reader(r);
    let mut points: Vec<GridPoint> = Vec::new();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let field = |i: usize| row.get(i).ok_or_else(|| bad("short row"));
        let num = |i: usize| -> Result<f64> { field(i)?.parse().map_err(|_| bad("bad number")) };
        let level: usize = field(0)?.parse().map_err(|_| bad("bad level"))?;
        let point = GridPoint {
            sweep: Sweep::parse(field(1)?).ok_or_else(|| bad("bad sweep"))?,
            process_std: num(2)?,
            measurement_std: num(3)?,
        };
        if level == points.len() {
            points.push(point);
        } else if points.get(level) != Some(&point) {
            return Err(bad("levels out of order"));
        }
        records.push(EpisodeRecord {
            level,
            episode: field(4)?.parse().map_err(|_| bad("bad episode"))?,
            controller: ControllerKind::parse(field(5)?).ok_or_else(|| bad("bad controller"))?,
            cost: num(6)?,
            diverged: field(7)? == "1",
            success: field(8)? == "1",
        });
    }
    Ok((points, records))
}

/// Mean and unbiased variance.
pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Ordinary least-squares fit `y = a + b x`; returns `(b, standard error of b)`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len(), "paired samples");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
        .sum();
    let se = (sse / (n - 2.0) / sxx).sqrt();
    (slope, se)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> EvalReport {
        let points = [
            GridPoint { sweep: Sweep::Measurement, process_std: 0.1, measurement_std: 0.0 },
            GridPoint { sweep: Sweep::Process, process_std: 0.2, measurement_std: 0.1 },
        ];
        let mut records = Vec::new();
        for level in 0..2 {
            for episode in 0..5u64 {
                for controller in ControllerKind::ALL {
                    let cost = 1.0 + level as f64 + episode as f64 / 3.0
                        + if controller == ControllerKind::OpenLoop { 0.7 } else { 0.0 };
                    records.push(EpisodeRecord {
                        level,
                        episode,
                        controller,
                        cost,
                        diverged: episode == 4 && controller == ControllerKind::OpenLoop,
                        success: episode % 2 == 0,
                    });
                }
            }
        }
        EvalReport::from_records(1.0, &points, records)
    }

    #[test]
    fn stats_match_hand_values() {
        let r = sample_report();
        let l = &r.levels[0];
        assert_eq!(l.episodes, 5);
        assert!((l.closed_loop.mean - (1.0 + 10.0 / 15.0)).abs() < 1e-12);
        assert!((l.open_loop.mean - l.closed_loop.mean - 0.7).abs() < 1e-12);
        // variance of {0, 1/3, ..., 4/3}
        assert!((l.open_loop.variance - 2.5 / 9.0).abs() < 1e-12);
        assert_eq!(l.open_loop.diverged, 1);
        assert_eq!(l.closed_loop.success_rate, 0.6);
    }

    #[test]
    fn episode_csv_round_trip_recomputes_levels() {
        let r = sample_report();
        let mut buf = Vec::new();
        r.write_episodes_csv(&mut buf).unwrap();
        let (points, records) = read_episodes_csv(buf.as_slice()).unwrap();
        let again = EvalReport::from_records(1.0, &points, records);
        assert_eq!(again, r);
    }

    #[test]
    fn level_csv_layout() {
        let mut buf = Vec::new();
        sample_report().write_levels_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), EvalReport::LEVEL_HEADER.join(","));
        assert!(lines.next().unwrap().starts_with("0,measurement,0.1,0,5,"));
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn slope_of_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let (b, se) = ols_slope(&x, &y);
        assert!((b - 2.0).abs() < 1e-12);
        assert!(se < 1e-12);
    }
}
