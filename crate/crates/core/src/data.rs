//! Quote ingestion, market filters, forwards and implied-vol ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bs::{bs_call_forward, bs_put_forward, forward_from_parity, implied_vol, implied_vol_otm};
use crate::error::{Error, Result};
use crate::training::{rng_for, streams};

/// Calendar days per year used to annualize maturities.
pub const DAYS_PER_YEAR: f64 = 365.0;
/// Quotes with a bid-ask mid below 3/8 are discarded.
pub const MIN_MID: f64 = 0.375;
/// Quotes expiring in fewer than this many days are discarded.
pub const MIN_DAYS: i64 = 2;

pub const QUOTE_HEADER: [&str; 8] = ["trade_date", "expiry_date", "strike", "bid", "ask", "type", "rate", "spot"];
pub const POINTS_HEADER: [&str; 6] = ["date", "m", "tau", "iv", "mid", "forward"];
const DATE_FMT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OptionType {
    Call,
    Put,
}

impl OptionType {
    pub fn code(self) -> &'static str {
        match self {
            OptionType::Call => "C",
            OptionType::Put => "P",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quote {
    /// Position in the source (0-based data row), carried through for reports.
    pub id: usize,
    pub trade_date: NaiveDate,
    pub expiry_date: NaiveDate,
    pub strike: f64,
    pub bid: f64,
    pub ask: f64,
    pub opt_type: OptionType,
    /// Continuously compounded, annualized.
    pub rate: f64,
    pub spot: f64,
}

impl Quote {
    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }

    pub fn days(&self) -> i64 {
        (self.expiry_date - self.trade_date).num_days()
    }

    pub fn tau(&self) -> f64 {
        self.days() as f64 / DAYS_PER_YEAR
    }

    pub fn discount(&self) -> f64 {
        (-self.rate * self.tau()).exp()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Parse(msg));
        if !(self.strike.is_finite() && self.strike > 0.0) {
            return fail(format!("strike must be positive, got {}", self.strike));
        }
        if !(self.bid.is_finite() && self.ask.is_finite() && self.bid >= 0.0) {
            return fail(format!("bid must be nonnegative, got {}", self.bid));
        }
        if self.ask < self.bid {
            return fail(format!("ask {} below bid {}", self.ask, self.bid));
        }
        if self.expiry_date <= self.trade_date {
            return fail(format!("expiry {} not after trade date {}", self.expiry_date, self.trade_date));
        }
        if !(self.spot.is_finite() && self.spot > 0.0) {
            return fail(format!("spot must be positive, got {}", self.spot));
        }
        if !self.rate.is_finite() {
            return fail("rate is not finite".into());
        }
        Ok(())
    }

    fn to_record(&self) -> [String; 8] {
        [
            self.trade_date.format(DATE_FMT).to_string(),
            self.expiry_date.format(DATE_FMT).to_string(),
            self.strike.to_string(),
            self.bid.to_string(),
            self.ask.to_string(),
            self.opt_type.code().to_string(),
            self.rate.to_string(),
            self.spot.to_string(),
        ]
    }
}

/// A data row that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line number in the file, header included.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadReport {
    pub quotes: Vec<Quote>,
    pub rejected: Vec<RowError>,
}

pub fn load_quotes(path: impl AsRef<Path>) -> Result<LoadReport> {
    parse_quotes(std::fs::File::open(path)?)
}

/// Parses quote text; malformed rows are reported, not fatal.
pub fn parse_quotes<R: Read>(reader: R) -> Result<LoadReport> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Format("empty quote file".into()));
    }
    if header.iter().ne(QUOTE_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "expected header `{}`, found `{}`",
            QUOTE_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut report = LoadReport::default();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let parsed = row.map_err(|e| Error::Parse(e.to_string())).and_then(|r| parse_row(&r, report.quotes.len()));
        match parsed {
            Ok(q) => report.quotes.push(q),
            Err(e) => report.rejected.push(RowError { line, reason: e.to_string() }),
        }
    }
    Ok(report)
}

fn parse_row(r: &csv::StringRecord, id: usize) -> Result<Quote> {
    if r.len() != QUOTE_HEADER.len() {
        return Err(Error::Parse(format!("expected {} fields, found {}", QUOTE_HEADER.len(), r.len())));
    }
    let date = |k: usize| {
        NaiveDate::parse_from_str(&r[k], DATE_FMT).map_err(|e| Error::Parse(format!("{}: {e}", QUOTE_HEADER[k])))
    };
    let num = |k: usize| r[k].parse::<f64>().map_err(|e| Error::Parse(format!("{}: {e}", QUOTE_HEADER[k])));
    let opt_type = match &r[5] {
        "C" | "c" => OptionType::Call,
        "P" | "p" => OptionType::Put,
        other => return Err(Error::Parse(format!("type must be C or P, got `{other}`"))),
    };
    let q = Quote {
        id,
        trade_date: date(0)?,
        expiry_date: date(1)?,
        strike: num(2)?,
        bid: num(3)?,
        ask: num(4)?,
        opt_type,
        rate: num(6)?,
        spot: num(7)?,
    };
    q.validate()?;
    Ok(q)
}

pub fn write_quotes<W: Write>(writer: W, quotes: &[Quote]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(QUOTE_HEADER).map_err(csv_err)?;
    for q in quotes {
        w.write_record(q.to_record()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Forward per (trade date, expiry).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardTable {
    forwards: BTreeMap<(NaiveDate, NaiveDate), ForwardEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardEstimate {
    pub forward: f64,
    /// Number of call/put strike pairs used; zero means carry fallback.
    pub n_pairs: usize,
}

impl ForwardTable {
    /// Median of the parity forwards over strikes quoted on both sides, or
    /// `spot·e^{rτ}` when no pair exists.
    pub fn estimate(quotes: &[Quote]) -> Self {
        let mut groups: BTreeMap<(NaiveDate, NaiveDate), Vec<&Quote>> = BTreeMap::new();
        for q in quotes {
            groups.entry((q.trade_date, q.expiry_date)).or_default().push(q);
        }
        let forwards = groups
            .into_iter()
            .map(|(key, group)| {
                let mut sides: BTreeMap<u64, (Option<&Quote>, Option<&Quote>)> = BTreeMap::new();
                for q in &group {
                    let slot = sides.entry(q.strike.to_bits()).or_default();
                    match q.opt_type {
                        OptionType::Call => slot.0 = slot.0.or(Some(q)),
                        OptionType::Put => slot.1 = slot.1.or(Some(q)),
                    }
                }
                let mut parity: Vec<f64> = sides
                    .values()
                    .filter_map(|s| match s {
                        (Some(c), Some(p)) => forward_from_parity(c.mid(), p.mid(), c.strike, c.discount()).ok(),
                        _ => None,
                    })
                    .filter(|f| f.is_finite() && *f > 0.0)
                    .collect();
                let estimate = if parity.is_empty() {
                    let q = group[0];
                    ForwardEstimate { forward: q.spot * (q.rate * q.tau()).exp(), n_pairs: 0 }
                } else {
                    parity.sort_by(f64::total_cmp);
                    let n = parity.len();
                    let median = if n % 2 == 1 { parity[n / 2] } else { 0.5 * (parity[n / 2 - 1] + parity[n / 2]) };
                    ForwardEstimate { forward: median, n_pairs: n }
                };
                (key, estimate)
            })
            .collect();
        ForwardTable { forwards }
    }

    pub fn get(&self, q: &Quote) -> Option<ForwardEstimate> {
        self.forwards.get(&(q.trade_date, q.expiry_date)).copied()
    }

    /// Forward for the quote, falling back to carry if its slice is unknown.
    pub fn forward(&self, q: &Quote) -> f64 {
        self.get(q).map_or_else(|| q.spot * (q.rate * q.tau()).exp(), |e| e.forward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectRule {
    /// Mid below 3/8.
    TickSize,
    /// Fewer than two days to expiry.
    ShortMaturity,
    /// Call struck below, or put struck above, the forward.
    InTheMoney,
}

impl RejectRule {
    pub fn tag(self) -> &'static str {
        match self {
            RejectRule::TickSize => "tick_size",
            RejectRule::ShortMaturity => "short_maturity",
            RejectRule::InTheMoney => "in_the_money",
        }
    }
}

impl fmt::Display for RejectRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterResult {
    pub kept: Vec<Quote>,
    pub rejected: Vec<(Quote, RejectRule)>,
}

/// The first rule a quote breaks, checked in the order tick size, maturity, moneyness.
pub fn reject_rule(q: &Quote, forward: f64) -> Option<RejectRule> {
    if q.mid() < MIN_MID {
        Some(RejectRule::TickSize)
    } else if q.days() < MIN_DAYS {
        Some(RejectRule::ShortMaturity)
    } else if match q.opt_type {
        OptionType::Call => q.strike < forward,
        OptionType::Put => q.strike > forward,
    } {
        Some(RejectRule::InTheMoney)
    } else {
        None
    }
}

/// Applies the market filters against a fixed forward table. Using the same
/// table makes the filter idempotent on its own output.
pub fn filter_quotes(quotes: &[Quote], forwards: &ForwardTable) -> FilterResult {
    let mut out = FilterResult::default();
    for q in quotes {
        match reject_rule(q, forwards.forward(q)) {
            None => out.kept.push(q.clone()),
            Some(rule) => out.rejected.push((q.clone(), rule)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedPoint {
    pub date: NaiveDate,
    pub m: f64,
    pub tau: f64,
    /// Implied volatility.
    pub v: f64,
    pub mid: f64,
    pub forward: f64,
    pub discount: f64,
    pub opt_type: OptionType,
    pub quote_id: usize,
}

impl PreparedPoint {
    /// Normalized observed price `mid / (D·F)`.
    pub fn price_norm(&self) -> f64 {
        self.mid / (self.discount * self.forward)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrepareResult {
    pub points: Vec<PreparedPoint>,
    /// `(quote id, reason)` for quotes whose implied vol could not be found.
    pub failures: Vec<(usize, String)>,
}

/// Converts quotes to `(m, τ, v)` observations. Out-of-the-money quotes are
/// inverted directly; others via parity in normalized call space.
pub fn prepare_points(quotes: &[Quote], forwards: &ForwardTable) -> PrepareResult {
    let mut out = PrepareResult::default();
    for q in quotes {
        let forward = forwards.forward(q);
        let (tau, discount) = (q.tau(), q.discount());
        let m = (q.strike / forward).ln();
        let price = q.mid() / (discount * forward);
        let otm = match q.opt_type {
            OptionType::Call => m >= 0.0,
            OptionType::Put => m < 0.0,
        };
        let iv = if otm {
            implied_vol_otm(price, m, tau)
        } else {
            let call = match q.opt_type {
                OptionType::Call => price,
                OptionType::Put => price + 1.0 - m.exp(),
            };
            implied_vol(call, m, tau)
        };
        match iv {
            Ok(v) => out.points.push(PreparedPoint {
                date: q.trade_date,
                m,
                tau,
                v,
                mid: q.mid(),
                forward,
                discount,
                opt_type: q.opt_type,
                quote_id: q.id,
            }),
            Err(e) => out.failures.push((q.id, e.to_string())),
        }
    }
    out
}

/// Normalized model price of the same contract as `p` at volatility `v`.
pub fn model_price_norm(p: &PreparedPoint, v: f64) -> Result<f64> {
    match p.opt_type {
        OptionType::Call => bs_call_forward(p.m, p.tau, v),
        OptionType::Put => bs_put_forward(p.m, p.tau, v),
    }
}

/// Seeded shuffle, then the first `round(fraction·n)` points go to training.
pub fn split_day<P: Clone>(points: &[P], fraction: f64, seed: u64) -> Result<(Vec<P>, Vec<P>)> {
    if points.is_empty() {
        return Err(Error::domain("cannot split an empty day"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::domain(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng_for(seed, streams::SPLIT));
    let n_train = (fraction * points.len() as f64).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| points[i].clone()).collect();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

pub fn group_by_day(points: Vec<PreparedPoint>) -> BTreeMap<NaiveDate, Vec<PreparedPoint>> {
    let mut days: BTreeMap<NaiveDate, Vec<PreparedPoint>> = BTreeMap::new();
    for p in points {
        days.entry(p.date).or_default().push(p);
    }
    days
}

pub fn write_points<W: Write>(writer: W, points: &[PreparedPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(POINTS_HEADER).map_err(csv_err)?;
    for p in points {
        w.write_record([
            p.date.format(DATE_FMT).to_string(),
            p.m.to_string(),
            p.tau.to_string(),
            p.v.to_string(),
            p.mid.to_string(),
            p.forward.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Rejection report: one row per filtered quote with its rule tag.
pub fn write_rejections<W: Write>(writer: W, rejected: &[(Quote, RejectRule)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = vec!["quote_id"];
    header.extend(QUOTE_HEADER);
    header.push("rule");
    w.write_record(&header).map_err(csv_err)?;
    for (q, rule) in rejected {
        let mut row = vec![q.id.to_string()];
        row.extend(q.to_record());
        row.push(rule.tag().to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, DATE_FMT).unwrap()
    }

    fn quote(days: i64, strike: f64, bid: f64, ask: f64, t: OptionType) -> Quote {
        let trade = date("2016-03-01");
        Quote {
            id: 0,
            trade_date: trade,
            expiry_date: trade + chrono::Duration::days(days),
            strike,
            bid,
            ask,
            opt_type: t,
            rate: 0.0,
            spot: 100.0,
        }
    }

    const GOOD: &str = "trade_date,expiry_date,strike,bid,ask,type,rate,spot
2016-03-01,2016-04-01,100,2.1,2.3,C,0.01,100
2016-03-01,2016-04-01,95,0.9,1.0,P,0.01,100
2016-03-01,2016-06-01,110,1.5,1.6,C,0.01,100
";

    #[test]
    fn loads_well_formed_file() {
        let r = parse_quotes(GOOD.as_bytes()).unwrap();
        assert_eq!(r.quotes.len(), 3);
        assert!(r.rejected.is_empty());
        assert_eq!(r.quotes[1].opt_type, OptionType::Put);
        assert_eq!(r.quotes[2].days(), 92);
        assert_eq!(r.quotes.iter().map(|q| q.id).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn bad_rows_are_reported() {
        let text = format!("{GOOD}2016-03-01,2016-04-01,100,2.5,2.3,C,0.01,100\n2016-03-01,2016-04-01,abc,1,2,P,0,100\n");
        let r = parse_quotes(text.as_bytes()).unwrap();
        assert_eq!(r.quotes.len(), 3);
        assert_eq!(r.rejected.len(), 2);
        assert_eq!(r.rejected[0].line, 5);
        assert!(r.rejected[0].reason.contains("below bid"));
        assert!(r.rejected[1].reason.contains("strike"));
    }

    #[test]
    fn empty_or_misheaded_file_is_format_error() {
        assert!(matches!(parse_quotes("".as_bytes()), Err(Error::Format(_))));
        assert!(matches!(parse_quotes("a,b\n1,2\n".as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn write_then_read_roundtrip() {
        let q = parse_quotes(GOOD.as_bytes()).unwrap().quotes;
        let mut buf = Vec::new();
        write_quotes(&mut buf, &q).unwrap();
        assert_eq!(parse_quotes(buf.as_slice()).unwrap().quotes, q);
    }

    #[test]
    fn parity_forward_from_pair() {
        let quotes = vec![quote(30, 100.0, 10.0, 10.0, OptionType::Call), quote(30, 100.0, 5.0, 5.0, OptionType::Put)];
        let table = ForwardTable::estimate(&quotes);
        assert_eq!(table.get(&quotes[0]).unwrap(), ForwardEstimate { forward: 105.0, n_pairs: 1 });
        assert_eq!(table.forward(&quotes[1]), 105.0);
    }

    #[test]
    fn forward_falls_back_to_carry() {
        let mut q = quote(365, 120.0, 1.0, 1.2, OptionType::Call);
        q.rate = 0.02;
        let table = ForwardTable::estimate(std::slice::from_ref(&q));
        assert_abs_diff_eq!(table.forward(&q), 100.0 * 0.02f64.exp(), epsilon = 1e-12);
        assert_eq!(table.get(&q).unwrap().n_pairs, 0);
    }

    #[test]
    fn filter_rules_tagged() {
        let fwd = ForwardTable::estimate(&[]);
        assert_eq!(reject_rule(&quote(30, 120.0, 0.25, 0.35, OptionType::Call), 100.0), Some(RejectRule::TickSize));
        assert_eq!(reject_rule(&quote(1, 120.0, 1.0, 1.2, OptionType::Call), 100.0), Some(RejectRule::ShortMaturity));
        assert_eq!(reject_rule(&quote(30, 110.0, 1.0, 1.2, OptionType::Put), 100.0), Some(RejectRule::InTheMoney));
        assert_eq!(reject_rule(&quote(30, 90.0, 1.0, 1.2, OptionType::Call), 100.0), Some(RejectRule::InTheMoney));
        assert_eq!(reject_rule(&quote(2, 100.0, 0.375, 0.375, OptionType::Put), 100.0), None);
        let r = filter_quotes(&[quote(30, 120.0, 1.0, 1.2, OptionType::Call)], &fwd);
        assert_eq!(r.kept.len(), 1);
    }

    #[test]
    fn prepared_points_invert_prices() {
        let (tau_days, v) = (91, 0.23);
        let mut quotes = Vec::new();
        for (i, &(k, t)) in [(80.0, OptionType::Put), (100.0, OptionType::Call), (125.0, OptionType::Call), (90.0, OptionType::Call)]
            .iter()
            .enumerate()
        {
            let mut q = quote(tau_days, k, 0.0, 0.0, t);
            q.id = i;
            q.rate = 0.03;
            let f = q.spot * (q.rate * q.tau()).exp();
            let m = (k / f).ln();
            let norm = match t {
                OptionType::Call => bs_call_forward(m, q.tau(), v).unwrap(),
                OptionType::Put => bs_put_forward(m, q.tau(), v).unwrap(),
            };
            let price = q.discount() * f * norm;
            q.bid = price;
            q.ask = price;
            quotes.push(q);
        }
        let table = ForwardTable::estimate(&quotes);
        let r = prepare_points(&quotes, &table);
        assert!(r.failures.is_empty());
        for p in &r.points {
            assert_abs_diff_eq!(p.v, v, epsilon = 1e-9);
            assert_eq!(p.m, (quotes[p.quote_id].strike / p.forward).ln());
            assert_abs_diff_eq!(model_price_norm(p, v).unwrap(), p.price_norm(), epsilon = 1e-14);
        }
    }

    #[test]
    fn unpriceable_quote_is_reported() {
        // A call worth more than the forward.
        let q = quote(30, 100.0, 150.0, 150.0, OptionType::Call);
        let r = prepare_points(&[q], &ForwardTable::default());
        assert!(r.points.is_empty());
        assert_eq!(r.failures.len(), 1);
    }

    #[test]
    fn split_partitions_exactly() {
        let pts: Vec<usize> = (0..100).collect();
        let (a, b) = split_day(&pts, 0.8, 4).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, pts);
        assert_eq!(split_day(&pts, 0.8, 4).unwrap(), (a, b));
        assert!(split_day(&pts, 1.0, 4).is_err());
        assert!(split_day::<usize>(&[], 0.5, 4).is_err());
    }

    #[test]
    fn reports_serialize_with_tags() {
        let q = quote(1, 120.0, 1.0, 1.2, OptionType::Call);
        let mut buf = Vec::new();
        write_rejections(&mut buf, &[(q, RejectRule::ShortMaturity)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("quote_id,trade_date,"));
        assert!(text.trim_end().ends_with(",short_maturity"));
    }
}
