"""Option-chain ingestion and preprocessing.

Parses single-maturity chain snapshots, applies the liquidity filters,
estimates the implied forward and carry (dividend plus borrow) by the
put-call-parity fixed point, and converts surviving quotes into the
implied-vol observation vector used for calibration.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, TextIO

from .errors import (
    EmptyAfterFilterError,
    MissingMetadataError,
    NoBracketingStrikesError,
    OutOfBoundsError,
    ParseError,
)
from .pricing import (
    FdGrid,
    OptionSide,
    american_implied_vol,
    black_price,
    implied_vol,
)

MIN_MID_PRICE = 0.03
VOL_AGREEMENT_TOL = 1e-3
MAX_FORWARD_ITER = 50


class Exercise(Enum):
    AMERICAN = "A"
    EUROPEAN = "E"


@dataclass(frozen=True)
class OptionQuote:
    strike: float
    side: OptionSide
    bid: float
    ask: float
    volume: int
    exercise: Exercise

    def __post_init__(self):
        if self.strike <= 0.0:
            raise ValueError("strike must be positive")
        if not 0.0 <= self.bid <= self.ask:
            raise ValueError("need 0 <= bid <= ask")
        if self.volume < 0:
            raise ValueError("volume must be non-negative")

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)


@dataclass(frozen=True)
class ChainSlice:
    """One maturity's quotes plus the pricing context."""

    spot: float
    valuation_date: dt.date
    expiry_date: dt.date
    maturity: float
    rate: float
    quotes: tuple[OptionQuote, ...]

    def __post_init__(self):
        if self.spot <= 0.0:
            raise ValueError("spot must be positive")
        if self.maturity <= 0.0:
            raise ValueError("maturity must be positive")
        if not self.quotes:
            raise ValueError("chain must contain at least one quote")


@dataclass(frozen=True)
class ForwardEstimate:
    forward: float
    carry_yield: float
    iterations: int
    converged: bool

    def __post_init__(self):
        if self.forward <= 0.0:
            raise ValueError("forward must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass(frozen=True)
class VolObservation:
    strike: float
    mid_vol: float
    spread_vol: float
    side: OptionSide

    def __post_init__(self):
        if self.mid_vol <= 0.0:
            raise ValueError("mid_vol must be positive")
        if self.spread_vol < 0.0:
            raise ValueError("spread_vol must be non-negative")


_HEADER = ("strike", "side", "bid", "ask", "volume", "exercise")
_SIDES = {"C": OptionSide.CALL, "P": OptionSide.PUT}
_EXERCISES = {"A": Exercise.AMERICAN, "E": Exercise.EUROPEAN}


def parse_chain_csv(source: TextIO | Iterable[str] | str) -> ChainSlice:
    """Parse a chain snapshot.

    Format: UTF-8, comma-separated. Metadata lines "#spot=", "#rate=",
    "#valuation=YYYY-MM-DD", "#expiry=YYYY-MM-DD" precede the header row
    "strike,side,bid,ask,volume,exercise" (case-insensitive); side is C/P and
    exercise A/E. Maturity is ACT/365 between valuation and expiry.
    """
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = [ln.rstrip("\n") for ln in source]

    meta: dict[str, str] = {}
    header_idx = None
    for i, ln in enumerate(lines):
        stripped = ln.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if "=" not in stripped:
                raise ParseError(f"row {i + 1}: malformed metadata line {stripped!r}")
            key, _, value = stripped[1:].partition("=")
            meta[key.strip().lower()] = value.strip()
            continue
        header_idx = i
        break
    if header_idx is None:
        raise ParseError("no header row found")

    for key in ("spot", "rate", "valuation", "expiry"):
        if key not in meta:
            raise MissingMetadataError(f"missing metadata line '#{key}='")
    try:
        spot = float(meta["spot"])
        rate = float(meta["rate"])
        valuation = dt.date.fromisoformat(meta["valuation"])
        expiry = dt.date.fromisoformat(meta["expiry"])
    except ValueError as exc:
        raise ParseError(f"bad metadata value: {exc}") from exc

    reader = csv.reader(lines[header_idx:])
    header = [c.strip().lower() for c in next(reader)]
    if header != list(_HEADER):
        raise ParseError(
            f"row {header_idx + 1}: header must be {','.join(_HEADER)}, got {','.join(header)}")

    quotes = []
    for offset, row in enumerate(reader):
        rownum = header_idx + 2 + offset
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(_HEADER):
            raise ParseError(f"row {rownum}: expected {len(_HEADER)} columns, got {len(row)}")
        try:
            strike = float(row[0])
            side_code = row[1].strip().upper()
            bid = float(row[2])
            ask = float(row[3])
            volume = int(row[4])
            ex_code = row[5].strip().upper()
        except ValueError as exc:
            raise ParseError(f"row {rownum}: {exc}") from exc
        if side_code not in _SIDES:
            raise ParseError(f"row {rownum}, column side: expected C or P, got {row[1]!r}")
        if ex_code not in _EXERCISES:
            raise ParseError(f"row {rownum}, column exercise: expected A or E, got {row[5]!r}")
        try:
            quotes.append(OptionQuote(strike, _SIDES[side_code], bid, ask,
                                      volume, _EXERCISES[ex_code]))
        except ValueError as exc:
            raise ParseError(f"row {rownum}: {exc}") from exc

    if not quotes:
        raise ParseError("chain contains no quote rows")
    maturity = (expiry - valuation).days / 365.0
    if maturity <= 0.0:
        raise ParseError("expiry must be after valuation")
    return ChainSlice(spot, valuation, expiry, maturity, rate, tuple(quotes))


def write_chain_csv(chain: ChainSlice) -> str:
    """Serialize a chain in the format parse_chain_csv reads."""
    out = [
        f"#spot={chain.spot!r}",
        f"#rate={chain.rate!r}",
        f"#valuation={chain.valuation_date.isoformat()}",
        f"#expiry={chain.expiry_date.isoformat()}",
        ",".join(_HEADER),
    ]
    for q in chain.quotes:
        side = "C" if q.side is OptionSide.CALL else "P"
        out.append(f"{q.strike!r},{side},{q.bid!r},{q.ask!r},{q.volume},{q.exercise.value}")
    return "\n".join(out) + "\n"


def _longest_monotone_keep(mids: list[float], non_increasing: bool,
                           prefer: int | None) -> list[int]:
    """Indices of a longest monotone subsequence.

    Among maximal subsequences, one passing through index ``prefer`` is
    chosen when that is possible; remaining ties resolve to the smallest
    indices, so the result is deterministic.
    """
    n = len(mids)
    if n == 0:
        return []

    def ok(a: float, b: float) -> bool:
        return a >= b if non_increasing else a <= b

    left = [1] * n   # longest chain ending at i
    for i in range(n):
        for j in range(i):
            if ok(mids[j], mids[i]) and left[j] + 1 > left[i]:
                left[i] = left[j] + 1
    right = [1] * n  # longest chain starting at i
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            if ok(mids[i], mids[j]) and right[j] + 1 > right[i]:
                right[i] = right[j] + 1
    best = max(left[i] + right[i] - 1 for i in range(n))

    if prefer is not None and left[prefer] + right[prefer] - 1 == best:
        # backward chain ending at prefer, then forward chain starting there
        picked = [prefer]
        cur = prefer
        for length in range(left[prefer] - 1, 0, -1):
            for j in range(cur):
                if left[j] == length and ok(mids[j], mids[cur]):
                    picked.insert(0, j)
                    cur = j
                    break
        cur = prefer
        for length in range(right[prefer] - 1, 0, -1):
            for k in range(cur + 1, n):
                if right[k] == length and ok(mids[cur], mids[k]):
                    picked.append(k)
                    cur = k
                    break
        return picked

    picked = []
    prev = -1
    for length in range(1, best + 1):
        for i in range(prev + 1, n):
            if (left[i] == length and left[i] + right[i] - 1 == best
                    and (prev < 0 or ok(mids[prev], mids[i]))):
                picked.append(i)
                prev = i
                break
    return picked


def filter_liquidity(chain: ChainSlice, forward_guess: float) -> ChainSlice:
    """Apply the four liquidity rules in order.

    1. drop zero-volume quotes; 2. drop in-the-money quotes (call strike
    below / put strike above the forward guess); 3. drop mid prices below
    0.03; 4. per side, keep a longest monotone subsequence of mids (calls
    non-increasing, puts non-decreasing in strike), preferring to retain the
    quote nearest the forward.
    """
    if forward_guess <= 0.0:
        raise ValueError("forward_guess must be positive")
    quotes = [q for q in chain.quotes if q.volume > 0]
    quotes = [q for q in quotes
              if not ((q.side is OptionSide.CALL and q.strike < forward_guess)
                      or (q.side is OptionSide.PUT and q.strike > forward_guess))]
    quotes = [q for q in quotes if q.mid >= MIN_MID_PRICE]

    kept: list[OptionQuote] = []
    for side, non_increasing in ((OptionSide.CALL, True), (OptionSide.PUT, False)):
        side_quotes = sorted((q for q in quotes if q.side is side),
                             key=lambda q: q.strike)
        if not side_quotes:
            continue
        mids = [q.mid for q in side_quotes]
        prefer = min(range(len(side_quotes)),
                     key=lambda i: abs(side_quotes[i].strike - forward_guess))
        keep_idx = _longest_monotone_keep(mids, non_increasing, prefer)
        kept.extend(side_quotes[i] for i in keep_idx)

    if not kept:
        raise EmptyAfterFilterError("no quotes survive the liquidity filters")
    kept.sort(key=lambda q: (q.strike, q.side.value))
    return replace(chain, quotes=tuple(kept))


def _quote_vol(price: float, strike: float, side: OptionSide, exercise: Exercise,
               chain: ChainSlice, carry: float, grid: FdGrid) -> float:
    """Implied vol of one quote at the given carry."""
    if exercise is Exercise.AMERICAN:
        return american_implied_vol(price, chain.spot, strike, chain.maturity,
                                    chain.rate, carry, side, grid)
    forward = chain.spot * math.exp((chain.rate - carry) * chain.maturity)
    discount = math.exp(-chain.rate * chain.maturity)
    return implied_vol(price, forward, strike, chain.maturity, discount, side)


def estimate_forward_and_carry(chain: ChainSlice, q_init: float = 0.0,
                               grid: FdGrid = FdGrid()) -> ForwardEstimate:
    """Fixed-point estimation of the implied forward and carry.

    Each pass: implied mid vols at the current carry for the call/put pairs
    at the strikes bracketing the running forward; European reprice at those
    vols; parity forwards averaged; carry updated from the forward. Stops
    when call and put vols at the bracketing strikes agree within 0.1 vol
    percent, with a hard cap of 50 passes (converged=False beyond).

    Only quotes with volume > 0 participate; strikes quoted on one side only
    cannot bracket.
    """
    discount = math.exp(-chain.rate * chain.maturity)
    calls: dict[float, OptionQuote] = {}
    puts: dict[float, OptionQuote] = {}
    for q in chain.quotes:
        if q.volume <= 0:
            continue
        target = calls if q.side is OptionSide.CALL else puts
        # keep the tighter quote if a strike repeats
        if q.strike not in target or (q.ask - q.bid) < (target[q.strike].ask - target[q.strike].bid):
            target[q.strike] = q
    pair_strikes = sorted(set(calls) & set(puts))
    if not pair_strikes:
        raise NoBracketingStrikesError(
            "no strike carries both a call and a put quote")

    q_est = q_init
    forward = chain.spot * math.exp((chain.rate - q_est) * chain.maturity)
    for iteration in range(1, MAX_FORWARD_ITER + 1):
        f_model = chain.spot * math.exp((chain.rate - q_est) * chain.maturity)
        below = [k for k in pair_strikes if k <= f_model]
        above = [k for k in pair_strikes if k > f_model]
        bracket = sorted({below[-1] if below else pair_strikes[0],
                          above[0] if above else pair_strikes[-1]})

        parity_forwards = []
        vol_gap = 0.0
        usable = 0
        for k in bracket:
            try:
                vc = _quote_vol(calls[k].mid, k, OptionSide.CALL,
                                calls[k].exercise, chain, q_est, grid)
                vp = _quote_vol(puts[k].mid, k, OptionSide.PUT,
                                puts[k].exercise, chain, q_est, grid)
            except OutOfBoundsError:
                continue
            usable += 1
            vol_gap = max(vol_gap, abs(vc - vp))
            c_e = black_price(f_model, k, chain.maturity, vc, discount, OptionSide.CALL)
            p_e = black_price(f_model, k, chain.maturity, vp, discount, OptionSide.PUT)
            parity_forwards.append((c_e - p_e) / discount + k)
        if not usable:
            raise NoBracketingStrikesError(
                "no bracketing strike pair is invertible at the current carry")

        forward = sum(parity_forwards) / len(parity_forwards)
        q_est = math.log(chain.spot * math.exp(chain.rate * chain.maturity)
                         / forward) / chain.maturity
        if vol_gap < VOL_AGREEMENT_TOL:
            return ForwardEstimate(forward, q_est, iteration, True)
    return ForwardEstimate(forward, q_est, MAX_FORWARD_ITER, False)


def quotes_to_vol_observations(chain: ChainSlice, fe: ForwardEstimate,
                               grid: FdGrid = FdGrid(),
                               spread_overrides: dict[float, float] | None = None,
                               ) -> tuple[list[VolObservation], list[str]]:
    """Bid/ask implied vols per quote at the estimated carry.

    Returns the observations sorted by strike plus warning records for
    quotes whose inversion failed (those quotes are dropped, not fatal).
    A spread override multiplies the vol spread at that exact strike.
    """
    overrides = spread_overrides or {}
    obs: dict[float, VolObservation] = {}
    warnings: list[str] = []
    for q in chain.quotes:
        try:
            vol_bid = _quote_vol(q.bid, q.strike, q.side, q.exercise, chain,
                                 fe.carry_yield, grid)
            vol_ask = _quote_vol(q.ask, q.strike, q.side, q.exercise, chain,
                                 fe.carry_yield, grid)
        except (OutOfBoundsError, ValueError) as exc:
            warnings.append(f"dropped {q.side.value} {q.strike}: {exc}")
            continue
        mult = overrides.get(q.strike, 1.0)
        candidate = VolObservation(q.strike, 0.5 * (vol_bid + vol_ask),
                                   (vol_ask - vol_bid) * mult, q.side)
        if q.strike in obs:
            # duplicate strike: keep the out-of-the-money side
            keep_call = q.strike >= fe.forward
            existing = obs[q.strike]
            pick_new = (candidate.side is OptionSide.CALL) == keep_call and \
                       (existing.side is OptionSide.CALL) != keep_call
            if pick_new:
                obs[q.strike] = candidate
            warnings.append(f"duplicate strike {q.strike}: kept "
                            f"{obs[q.strike].side.value} side")
        else:
            obs[q.strike] = candidate
    return [obs[k] for k in sorted(obs)], warnings
