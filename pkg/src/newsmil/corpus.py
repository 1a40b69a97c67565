"""Headline/price ingestion, trend labels, bag construction, and the
planted-polarity synthetic generator.

External formats:
  * headline file: UTF-8 TSV, `ISO-8601 UTC timestamp<TAB>headline`,
    lines starting with '#' ignored;
  * price file: UTF-8 CSV with header
    `Date,Open,High,Low,Close,Adj Close,Volume`, dates YYYY-MM-DD
    (Yahoo Finance export layout);
  * stats output: CSV `split,count,mean,std,min,max` plus per-split
    histogram CSVs `n_instances,frequency`.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone

import numpy as np

from . import textprep
from .errors import DataError, FormatError, ParseError
from .tensor import make_rng

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class NewsItem:
    timestamp: datetime
    title: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class PriceBar:
    date: date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: int


@dataclass(frozen=True)
class Bag:
    """One trading day: its headlines (timestamp order) and trend label."""

    day: date
    items: tuple[NewsItem, ...]
    label: int
    instances: tuple[tuple[int, ...], ...] | None = None

    @property
    def size(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class Dataset:
    """Chronologically ordered bags with contiguous, disjoint splits:
    train <= train_end < val <= val_end < test."""

    bags: tuple[Bag, ...]
    train_end: date
    val_end: date

    @property
    def train(self) -> tuple[Bag, ...]:
        return tuple(b for b in self.bags if b.day <= self.train_end)

    @property
    def val(self) -> tuple[Bag, ...]:
        return tuple(b for b in self.bags if self.train_end < b.day <= self.val_end)

    @property
    def test(self) -> tuple[Bag, ...]:
        return tuple(b for b in self.bags if b.day > self.val_end)

    def split_bags(self, name: str) -> tuple[Bag, ...]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}, expected one of {SPLITS}")
        return getattr(self, name)


def _parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_news(path, strict: bool = True) -> tuple[list[NewsItem], int]:
    """Read the headline TSV.  Returns (items in file order, skipped count).

    In strict mode any malformed line raises ParseError naming the line;
    in lenient mode malformed lines are skipped and counted.
    """
    items: list[NewsItem] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            try:
                stamp_text, sep, title = line.partition("\t")
                if not sep:
                    raise ValueError("missing tab separator")
                title = title.strip()
                if not title:
                    raise ValueError("empty headline")
                stamp = _parse_timestamp(stamp_text)
            except ValueError as exc:
                if strict:
                    raise ParseError(str(exc), path=path, line=lineno) from None
                skipped += 1
                continue
            items.append(NewsItem(timestamp=stamp, title=title,
                                  tokens=tuple(textprep.tokenize(title))))
    return items, skipped


def apply_stopwords(items: list[NewsItem], stopwords: frozenset[str]) -> list[NewsItem]:
    """Drop stopword tokens; items whose titles empty out are removed."""
    out = []
    for item in items:
        kept = tuple(t for t in item.tokens if t not in stopwords)
        if kept:
            out.append(replace(item, tokens=kept))
    return out


def filter_keywords(items: list[NewsItem], keywords: frozenset[str]) -> list[NewsItem]:
    """Keep only items containing at least one keyword token (the optional
    relevance filter; the caller supplies the list)."""
    return [it for it in items if any(t in keywords for t in it.tokens)]


_PRICE_HEADER = ["Date", "Open", "High", "Low", "Close", "Adj Close", "Volume"]


def parse_prices(path) -> list[PriceBar]:
    """Read the Yahoo-format price CSV, sorted ascending by date."""
    bars: list[PriceBar] = []
    seen: set[date] = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty price file", path=path) from None
        if header != _PRICE_HEADER:
            raise FormatError(
                f"expected header {','.join(_PRICE_HEADER)}, got {','.join(header)}", path=path
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise ParseError(f"expected 7 fields, got {len(row)}", path=path, line=lineno)
            try:
                day = date.fromisoformat(row[0])
                o, h, lo, c, adj = (float(v) for v in row[1:6])
                vol = int(float(row[6]))
            except ValueError as exc:
                raise ParseError(f"bad field: {exc}", path=path, line=lineno) from None
            if day in seen:
                raise DataError(f"duplicate date {day}", path=path, line=lineno)
            seen.add(day)
            if c <= 0 or not (lo <= o <= h and lo <= c <= h):
                raise DataError(f"inconsistent OHLC values on {day}", path=path, line=lineno)
            bars.append(PriceBar(day, o, h, lo, c, adj, vol))
    bars.sort(key=lambda b: b.date)
    return bars


def derive_labels(bars: list[PriceBar], use_adj_close: bool = False) -> dict[date, int]:
    """Label each bar after the first: 1 iff its close strictly exceeds the
    previous bar's close, else 0 (equal closes count as 0)."""
    if len(bars) < 2:
        raise ValueError(f"need at least 2 price bars to derive labels, got {len(bars)}")
    price = (lambda b: b.adj_close) if use_adj_close else (lambda b: b.close)
    return {
        curr.date: int(price(curr) > price(prev))
        for prev, curr in zip(bars, bars[1:])
    }


def build_bags(
    news: list[NewsItem],
    bars: list[PriceBar],
    labels: dict[date, int],
    news_lag_days: int = 0,
) -> tuple[list[Bag], int]:
    """Group headlines into per-trading-day bags.

    Each item is assigned to the first trading day on or after its UTC
    calendar date (plus the optional lag), so weekend and holiday news
    rolls forward.  Items dated after the last trading day are dropped and
    counted.  Days without a label or without any news produce no bag.
    """
    trading_days = [b.date for b in bars]
    grouped: dict[date, list[NewsItem]] = {}
    dropped = 0
    for item in news:
        if not item.tokens:
            continue
        eff = item.timestamp.date() + timedelta(days=news_lag_days)
        pos = bisect_left(trading_days, eff)
        if pos == len(trading_days):
            dropped += 1
            continue
        grouped.setdefault(trading_days[pos], []).append(item)
    bags = []
    for day in sorted(grouped):
        if day not in labels:
            continue
        items = sorted(grouped[day], key=lambda it: it.timestamp)
        bags.append(Bag(day=day, items=tuple(items), label=labels[day]))
    return bags, dropped


def split(bags: list[Bag], train_end: date, val_end: date) -> Dataset:
    """Chronological split: train <= train_end < val <= val_end < test."""
    if not bags:
        raise ValueError("cannot split an empty bag list")
    if train_end >= val_end:
        raise ValueError(f"split boundaries inverted: train_end {train_end} >= val_end {val_end}")
    first = bags[0].day
    if train_end < first:
        raise ValueError(f"train_end {train_end} precedes the first bag day {first}")
    ordered = sorted(bags, key=lambda b: b.day)
    return Dataset(bags=tuple(ordered), train_end=train_end, val_end=val_end)


def encode_dataset(dataset: Dataset, vocab: textprep.Vocabulary) -> Dataset:
    """Attach token-id sequences to every bag using the given vocabulary."""
    encoded = tuple(
        replace(bag, instances=tuple(textprep.encode_title(it.tokens, vocab) for it in bag.items))
        for bag in dataset.bags
    )
    return replace(dataset, bags=encoded)


@dataclass(frozen=True)
class SplitStats:
    count: int
    mean: float
    std: float
    min: int
    max: int
    histogram: dict[int, int]


def stats(dataset: Dataset) -> dict[str, SplitStats | None]:
    """Per-split summary of instance counts per bag (population std);
    empty splits are reported as None rather than an error."""
    out: dict[str, SplitStats | None] = {}
    for name in SPLITS:
        bags = getattr(dataset, name)
        if not bags:
            out[name] = None
            continue
        sizes = np.array([b.size for b in bags], dtype=float)
        out[name] = SplitStats(
            count=int(sizes.sum()),
            mean=float(sizes.mean()),
            std=float(sizes.std()),
            min=int(sizes.min()),
            max=int(sizes.max()),
            histogram=dict(sorted(Counter(int(s) for s in sizes).items())),
        )
    return out


def write_stats_csv(path, table: dict[str, SplitStats | None]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "count", "mean", "std", "min", "max"])
        for name in SPLITS:
            st = table[name]
            if st is None:
                continue
            writer.writerow([name, st.count, f"{st.mean:.6f}", f"{st.std:.6f}", st.min, st.max])


def write_histogram_csv(path, st: SplitStats) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_instances", "frequency"])
        for n, freq in st.histogram.items():
            writer.writerow([n, freq])


# --- synthetic planted-polarity data ------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Generator law for the planted-polarity task.

    Every bag gets an odd instance count (so majority labels never tie),
    a majority side drawn with probability pos_prior of being positive,
    and instances drawn from the majority pool with probability
    majority_frac.  Each instance's tokens all come from its own pool, and
    the bag label is the realized majority polarity.
    """

    n_train: int = 2000
    n_val: int = 300
    n_test: int = 300
    min_instances: int = 5
    max_instances: int = 15
    pool_size: int = 50
    majority_frac: float = 0.7
    pos_prior: float = 0.5
    min_title_len: int = 3
    max_title_len: int = 6
    seed: int = 0
    start: date = date(2020, 1, 6)

    @property
    def n_bags(self) -> int:
        return self.n_train + self.n_val + self.n_test

    def validate(self) -> None:
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("every split needs at least one bag")
        if not (1 <= self.min_instances <= self.max_instances):
            raise ValueError("bad instance-count range")
        if not any(n % 2 for n in range(self.min_instances, self.max_instances + 1)):
            raise ValueError("instance-count range contains no odd value")
        if self.pool_size < 1:
            raise ValueError("pool_size must be positive")
        if not 0.5 < self.majority_frac <= 1.0:
            raise ValueError("majority_frac must be in (0.5, 1]")
        if not 0.0 <= self.pos_prior <= 1.0:
            raise ValueError("pos_prior must be in [0, 1]")
        if not (1 <= self.min_title_len <= self.max_title_len):
            raise ValueError("bad title-length range")

    def pools(self) -> tuple[list[str], list[str]]:
        pos = [f"pos{i:03d}" for i in range(self.pool_size)]
        neg = [f"neg{i:03d}" for i in range(self.pool_size)]
        return pos, neg


@dataclass(frozen=True)
class SynthData:
    """Raw generator output; feed news/bars through the normal pipeline.

    polarities is evaluation-only ground truth, keyed by (bag day,
    instance index in timestamp order); it never enters Bag or Dataset.
    """

    news: list[NewsItem] = field(repr=False)
    bars: list[PriceBar] = field(repr=False)
    polarities: dict[tuple[date, int], int] = field(repr=False)
    train_end: date
    val_end: date


def _next_weekday(day: date) -> date:
    day += timedelta(days=1)
    while day.weekday() >= 5:
        day += timedelta(days=1)
    return day


def synthesize(spec: SynthSpec) -> SynthData:
    """Generate news items, price bars, and hidden instance polarities.

    The price path is built so that re-deriving labels from the bars
    reproduces each bag's majority label exactly.
    """
    spec.validate()
    rng = make_rng(spec.seed)
    pos_pool, neg_pool = spec.pools()
    odd_counts = [n for n in range(spec.min_instances, spec.max_instances + 1) if n % 2]

    day = spec.start
    while day.weekday() >= 5:
        day = _next_weekday(day)
    trading_days = [day]
    for _ in range(spec.n_bags):
        trading_days.append(_next_weekday(trading_days[-1]))

    news: list[NewsItem] = []
    polarities: dict[tuple[date, int], int] = {}
    closes = [100.0]
    for k in range(1, spec.n_bags + 1):
        bag_day = trading_days[k]
        n_k = int(rng.choice(odd_counts))
        majority_positive = rng.random() < spec.pos_prior
        n_pos = 0
        for i in range(n_k):
            from_majority = rng.random() < spec.majority_frac
            positive = majority_positive == from_majority
            pool = pos_pool if positive else neg_pool
            length = int(rng.integers(spec.min_title_len, spec.max_title_len + 1))
            tokens = [pool[j] for j in rng.integers(0, spec.pool_size, size=length)]
            stamp = datetime(bag_day.year, bag_day.month, bag_day.day,
                             9, 30, tzinfo=timezone.utc) + timedelta(minutes=i)
            title = " ".join(tokens)
            news.append(NewsItem(timestamp=stamp, title=title, tokens=tuple(tokens)))
            polarities[(bag_day, i)] = int(positive)
            n_pos += positive
        label = int(2 * n_pos > n_k)
        closes.append(closes[-1] * (1.01 if label else 0.99))

    bars = []
    for k, bar_day in enumerate(trading_days):
        c = round(closes[k], 4)
        o = round(closes[k - 1], 4) if k else c
        bars.append(PriceBar(
            date=bar_day, open=o, high=round(max(o, c) + 0.5, 4),
            low=round(min(o, c) - 0.5, 4), close=c, adj_close=c,
            volume=1_000_000 + k,
        ))
    return SynthData(
        news=news,
        bars=bars,
        polarities=polarities,
        train_end=trading_days[spec.n_train],
        val_end=trading_days[spec.n_train + spec.n_val],
    )


def write_news_tsv(path, news: list[NewsItem]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in news:
            stamp = item.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ")
            fh.write(f"{stamp}\t{item.title}\n")


def write_prices_csv(path, bars: list[PriceBar]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_PRICE_HEADER)
        for b in bars:
            writer.writerow([b.date.isoformat(), b.open, b.high, b.low,
                             b.close, b.adj_close, b.volume])


def write_polarity_csv(path, polarities: dict[tuple[date, int], int]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "instance_index", "polarity"])
        for (day, idx), pol in sorted(polarities.items()):
            writer.writerow([day.isoformat(), idx, pol])


def read_polarity_csv(path) -> dict[tuple[date, int], int]:
    out: dict[tuple[date, int], int] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out[(date.fromisoformat(row["date"]), int(row["instance_index"]))] = int(row["polarity"])
    return out


def assemble_dataset(
    news: list[NewsItem],
    bars: list[PriceBar],
    train_end: date,
    val_end: date,
    *,
    stopwords: frozenset[str] = frozenset(),
    use_adj_close: bool = False,
    news_lag_days: int = 0,
) -> tuple[Dataset, int]:
    """Stopword filtering + labels + bags + chronological split.

    Returns the (unencoded) dataset and the count of headlines dropped for
    falling after the last trading day.
    """
    filtered = apply_stopwords(news, stopwords) if stopwords else [it for it in news if it.tokens]
    labels = derive_labels(bars, use_adj_close=use_adj_close)
    bags, dropped = build_bags(filtered, bars, labels, news_lag_days=news_lag_days)
    return split(bags, train_end, val_end), dropped


def build_training_vocab(dataset: Dataset, min_count: int = 5) -> textprep.Vocabulary:
    """Vocabulary from the training split only (no test leakage).
    Stopwords were already removed upstream."""
    return textprep.build_vocab(
        (item.tokens for bag in dataset.train for item in bag.items),
        min_count=min_count,
    )


def majority_label_probability(spec: SynthSpec) -> float:
    """Exact P(bag label = 1) under the generator law: average over the odd
    instance counts of the binomial majority probability, mixed by
    pos_prior.  Used as the independent oracle for synthesize()."""
    odd_counts = [n for n in range(spec.min_instances, spec.max_instances + 1) if n % 2]
    q = spec.majority_frac
    total = 0.0
    for n in odd_counts:
        maj_pos = sum(math.comb(n, k) * q**k * (1 - q) ** (n - k)
                      for k in range(n // 2 + 1, n + 1))
        maj_neg = sum(math.comb(n, k) * (1 - q) ** k * q ** (n - k)
                      for k in range(n // 2 + 1, n + 1))
        total += spec.pos_prior * maj_pos + (1 - spec.pos_prior) * maj_neg
    return total / len(odd_counts)
