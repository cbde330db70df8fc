"""Experiment configuration, training drivers, equal-cost evaluation and reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .bidder import (
    ActionGrid,
    AmdpNorms,
    AmdpPolicy,
    KbPolicy,
    RmdpPolicy,
    calibrate_alpha_ref,
    calibrate_amdp_norms,
    calibrate_norms,
    natural_cost,
)
from .dqn import DqnAgent, QNetwork, TrainerConfig, TrainingLog, load_checkpoint, save_checkpoint, train
from .env import AuctionLevelEnv, BiddingEnv, MarketEnv
from .mdp import (
    EMPTY_AGGREGATE,
    ConfigurationError,
    ConsistencyReport,
    HourAggregate,
    StateNorms,
    consistency_check,
    merge_aggregates,
)
from .multiagent import AgentPool, MassiveLog, train_massive
from .seeding import derive_seed
from .simulator import (
    AdSpec,
    AuctionLog,
    CompetitorSpec,
    DayProfile,
    HOURS,
    UNLIMITED,
    EpisodeResult,
    MarketDay,
    generate_day,
    generate_hour,
    run_episode,
    run_market_episode,
)

ALGORITHMS = ("kb", "amdp", "rmdp", "m-rmdp")
COST_TOLERANCE = 0.05
ALPHA_CALIBRATION_DAYS = 3


# ---------------------------------------------------------------------------
# configuration


@dataclass
class AdConfig:
    ad_id: str
    keywords: list[str]
    kb_prices: dict[str, float]
    traffic: dict = field(default_factory=dict)  # extra AdSpec fields
    alpha_ref: float | None = None  # calibrated when absent
    budget: float | None = None  # training budget; KB cost of the training day when absent

    def spec(self) -> AdSpec:
        kw = dict(self.traffic)
        if "keyword_pcvr_scale" in kw:
            kw["keyword_pcvr_scale"] = tuple(kw["keyword_pcvr_scale"])
        return AdSpec(self.ad_id, tuple(self.keywords), **kw)


@dataclass
class ExperimentConfig:
    """One JSON document describing a whole experiment; every random draw derives from ``seed``."""

    seed: int
    ads: list[AdConfig]
    profile: dict = field(default_factory=dict)
    trainer: dict = field(default_factory=dict)
    lam: float = 0.5
    train_days: int = 1
    test_days: int = 10
    calibration_days: int = 5
    amdp_interval: int = 100
    massive_episodes: int | None = None
    cost_tolerance: float = COST_TOLERANCE
    consistency: dict = field(default_factory=dict)
    out_dir: str = "runs"

    def __post_init__(self) -> None:
        if not isinstance(self.seed, int):
            raise ConfigurationError("seed is mandatory and must be an integer")
        if not self.ads:
            raise ConfigurationError("at least one ad is required")
        ids = [a.ad_id for a in self.ads]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("ad ids must be unique")
        for a in self.ads:
            missing = set(a.keywords) - set(a.kb_prices)
            if missing:
                raise ConfigurationError(f"{a.ad_id}: no KB price for {sorted(missing)}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError("lam must lie in [0, 1]")
        if self.train_days < 1 or self.test_days < 1 or self.calibration_days < 1:
            raise ConfigurationError("day counts must be >= 1")
        self.trainer_config()
        self.day_profile()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in d:
            raise ConfigurationError("seed is mandatory")
        d = dict(d)
        d["ads"] = [AdConfig(**a) for a in d.get("ads", [])]
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file {path} does not exist")
        return cls.from_dict(json.loads(path.read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def day_profile(self) -> DayProfile:
        p = dict(self.profile)
        comps = p.pop("competitors", None)
        if comps is not None:
            comps = [CompetitorSpec(**c) for c in comps]
        daily = p.pop("daily_auctions", 1000.0)
        custom = {k: p.pop(k) for k in ("hourly_intensity", "hourly_cvr_multiplier", "hourly_competition") if k in p}
        prof = DayProfile.default(daily, comps, **p)
        if custom:
            prof = DayProfile(**{**asdict(prof), "competitor_pool": prof.competitor_pool, **custom})
        return prof

    def ad_specs(self) -> list[AdSpec]:
        return [a.spec() for a in self.ads]

    def trainer_config(self) -> TrainerConfig:
        kw = dict(self.trainer)
        if "sizes" in kw:
            kw["sizes"] = tuple(kw["sizes"])
        kw.setdefault("seed", derive_seed(self.seed, "trainer"))
        return TrainerConfig(**kw)

    def day_seed(self, kind: str, i: int) -> int:
        return derive_seed(self.seed, "day", kind, i)

    def day(self, kind: str, i: int) -> AuctionLog:
        return generate_day(self.day_seed(kind, i), self.day_profile(), self.ad_specs())

    def days(self, kind: str) -> list[AuctionLog]:
        n = {"train": self.train_days, "test": self.test_days, "calibration": self.calibration_days}[kind]
        return [self.day(kind, i) for i in range(n)]


# ---------------------------------------------------------------------------
# per-ad calibration


@dataclass
class AdSetup:
    ad_id: str
    kb: KbPolicy
    alpha_ref: float
    grid: ActionGrid
    norms: StateNorms
    amdp_norms: AmdpNorms
    price_grid: ActionGrid


def calibrate(cfg: ExperimentConfig, calibration: Sequence[AuctionLog] | None = None) -> list[AdSetup]:
    """KB policies, alpha_ref, action grids and state scales for every ad, from calibration days.

    alpha_ref is fitted on the first ``ALPHA_CALIBRATION_DAYS`` days; state scales use them all.
    """
    days = list(calibration) if calibration is not None else cfg.days("calibration")
    out = []
    for a in cfg.ads:
        logs = [d.for_ad(a.ad_id) for d in days]
        kb = KbPolicy(dict(a.kb_prices))
        ref = a.alpha_ref
        if ref is None:
            fit = logs[:ALPHA_CALIBRATION_DAYS]
            ref = calibrate_alpha_ref(fit, float(np.mean([natural_cost(l, kb) for l in fit])))
        grid = ActionGrid(ref)
        amdp = calibrate_amdp_norms(logs, kb, ref, cfg.amdp_interval)
        out.append(AdSetup(a.ad_id, kb, ref, grid, calibrate_norms(logs, kb, grid), amdp, ActionGrid(amdp.price_ref)))
    return out


def kb_cost(log: AuctionLog, kb: KbPolicy) -> float:
    return run_episode(log, kb, None).cost


# ---------------------------------------------------------------------------
# training drivers


@dataclass
class TrainedAd:
    ad_id: str
    net: QNetwork
    log: TrainingLog
    agent: DqnAgent | None = None


def _train_budget(cfg: ExperimentConfig, ad: AdConfig, log: AuctionLog, kb: KbPolicy) -> float:
    return ad.budget if ad.budget is not None else kb_cost(log, kb)


def train_rmdp(cfg: ExperimentConfig, setup: AdSetup, train_days: Sequence[AuctionLog]) -> TrainedAd:
    """Single-ad hourly agent trained by cycling through ``train_days``."""
    ad = next(a for a in cfg.ads if a.ad_id == setup.ad_id)
    logs = [d.for_ad(ad.ad_id) for d in train_days]
    budgets = [_train_budget(cfg, ad, l, setup.kb) for l in logs]

    def factory(i: int) -> BiddingEnv:
        k = i % len(logs)
        return BiddingEnv(logs[k], budgets[k], setup.grid, setup.norms)

    agent, tlog = train(factory, cfg.trainer_config(), name=f"rmdp/{ad.ad_id}")
    return TrainedAd(ad.ad_id, agent.train_net, tlog, agent)


def train_amdp(cfg: ExperimentConfig, setup: AdSetup, train_days: Sequence[AuctionLog]) -> TrainedAd:
    """Single-ad auction-level agent: one direct price per ``amdp_interval`` auctions."""
    ad = next(a for a in cfg.ads if a.ad_id == setup.ad_id)
    logs = [d.for_ad(ad.ad_id) for d in train_days]
    budgets = [_train_budget(cfg, ad, l, setup.kb) for l in logs]

    def factory(i: int) -> AuctionLevelEnv:
        k = i % len(logs)
        return AuctionLevelEnv(logs[k], budgets[k], setup.price_grid, setup.amdp_norms, cfg.amdp_interval)

    agent, tlog = train(factory, cfg.trainer_config(), name=f"amdp/{ad.ad_id}")
    return TrainedAd(ad.ad_id, agent.train_net, tlog, agent)


def market_kb_costs(log: AuctionLog, setups: Sequence[AdSetup]) -> list[float]:
    """Natural cost of every ad when the whole roster bids its KB presets."""
    return [r.cost for r in run_market_episode(log, [s.kb for s in setups], [None] * len(setups))]


def train_market(
    cfg: ExperimentConfig, setups: Sequence[AdSetup], train_days: Sequence[AuctionLog], lam: float
) -> tuple[list[TrainedAd], MassiveLog]:
    """All ads learn together in the shared market with reward mixing weight ``lam``."""
    tc = cfg.trainer_config()
    if cfg.massive_episodes is not None:
        tc = TrainerConfig(**{**tc.to_dict(), "sizes": tuple(tc.sizes), "episodes": cfg.massive_episodes})
    budgets = []
    for d in train_days:
        kb = market_kb_costs(d, setups)
        budgets.append([a.budget if a.budget is not None else c for a, c in zip(cfg.ads, kb)])
    ids = [s.ad_id for s in setups]
    pool = AgentPool.create(
        [f"market/{i}" for i in ids], tc, [s.grid for s in setups], [s.norms for s in setups], lam
    )
    pool.ad_ids = ids

    def factory(i: int) -> MarketEnv:
        k = i % len(train_days)
        return MarketEnv(train_days[k], budgets[k], [s.grid for s in setups], [s.norms for s in setups])

    mlog = train_massive(pool, factory, tc.episodes)
    trained = [TrainedAd(ad, ag.train_net, mlog.agent_logs[ad], ag) for ad, ag in zip(ids, pool.agents)]
    return trained, mlog


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    ad_id: str
    algo: str
    split: str
    day: int
    cost: float
    pur_amt: float
    clicks: int
    purchases: int
    kb_cost: float
    kb_ratio: float

    @property
    def ratio(self) -> float:
        """Headline metric PUR_AMT / COST (0 when nothing was spent)."""
        return self.pur_amt / self.cost if self.cost > 0 else 0.0

    @property
    def roi(self) -> float:
        # no separate attribution model exists here, so ROI equals the headline ratio
        return self.ratio

    @property
    def cvr(self) -> float:
        return self.purchases / self.clicks if self.clicks else 0.0

    @property
    def ppc(self) -> float:
        return self.cost / self.clicks if self.clicks else 0.0

    @property
    def zero_click(self) -> bool:
        return self.clicks == 0

    @property
    def cost_ratio(self) -> float:
        return self.cost / self.kb_cost if self.kb_cost > 0 else float("nan")

    @property
    def improvement(self) -> float:
        return relative_improvement(self.ratio, self.kb_ratio)

    def cost_ok(self, tol: float = COST_TOLERANCE) -> bool:
        return abs(self.cost_ratio - 1.0) <= tol


def relative_improvement(x: float, base: float) -> float:
    """``(x - base) / base``."""
    if base == 0:
        return float("nan")
    return (x - base) / base


def _metrics(ad: str, algo: str, split: str, day: int, r: EpisodeResult, kb: EpisodeResult) -> Metrics:
    kb_ratio = kb.pur_amt / kb.cost if kb.cost > 0 else 0.0
    return Metrics(ad, algo, split, day, r.cost, r.pur_amt, r.clicks, r.purchases, kb.cost, kb_ratio)


def evaluate(policy, setup: AdSetup, days: Sequence[AuctionLog], algo: str, split: str) -> list[Metrics]:
    """Replay each day for one ad with budget = KB's cost on that same day."""
    out = []
    for i, d in enumerate(days):
        log = d.for_ad(setup.ad_id)
        kb = run_episode(log, setup.kb, None)
        r = kb if policy is setup.kb else run_episode(log, policy, kb.cost)
        out.append(_metrics(setup.ad_id, algo, split, i, r, kb))
    return out


def evaluate_market(
    policies: Sequence, setups: Sequence[AdSetup], days: Sequence[AuctionLog], algo: str, split: str
) -> list[Metrics]:
    """Shared-market replay: all ads bid at once, each capped at its all-KB market cost."""
    out = []
    kbs = [s.kb for s in setups]
    for i, d in enumerate(days):
        base = run_market_episode(d, kbs, [None] * len(setups))
        res = base if list(policies) == kbs else run_market_episode(d, policies, [b.cost for b in base])
        out.extend(_metrics(s.ad_id, algo, split, i, r, b) for s, r, b in zip(setups, res, base))
    return out


@dataclass
class Summary:
    ad_id: str
    algo: str
    split: str
    cost: float
    pur_amt: float
    ratio: float
    kb_ratio: float
    cvr: float
    roi: float
    ppc: float
    cost_ratio: float
    improvement: float
    valid: bool
    zero_click_days: int


SUMMARY_HEADER = [f.name for f in fields(Summary)]


def summarize(rows: Sequence[Metrics], tol: float = COST_TOLERANCE) -> list[Summary]:
    """Per (ad, algo, split) day-averages; ``valid`` is False when any day broke the equal-cost tolerance."""
    groups: dict[tuple[str, str, str], list[Metrics]] = {}
    for m in rows:
        groups.setdefault((m.ad_id, m.algo, m.split), []).append(m)
    out = []
    for (ad, algo, split), ms in groups.items():
        mean = lambda f: float(np.mean([f(m) for m in ms]))  # noqa: E731
        ratio, kb_ratio = mean(lambda m: m.ratio), mean(lambda m: m.kb_ratio)
        out.append(
            Summary(
                ad, algo, split,
                cost=mean(lambda m: m.cost),
                pur_amt=mean(lambda m: m.pur_amt),
                ratio=ratio,
                kb_ratio=kb_ratio,
                cvr=mean(lambda m: m.cvr),
                roi=mean(lambda m: m.roi),
                ppc=mean(lambda m: m.ppc),
                cost_ratio=mean(lambda m: m.cost_ratio),
                improvement=relative_improvement(ratio, kb_ratio),
                valid=all(m.cost_ok(tol) for m in ms),
                zero_click_days=sum(m.zero_click for m in ms),
            )
        )
    return out


def average_rows(summary: Sequence[Summary]) -> list[Summary]:
    """'avg' row per (algo, split): means of the per-ad relative improvements and cost ratios."""
    groups: dict[tuple[str, str], list[Summary]] = {}
    for s in summary:
        groups.setdefault((s.algo, s.split), []).append(s)
    out = []
    for (algo, split), ss in groups.items():
        mean = lambda f: float(np.mean([f(s) for s in ss]))  # noqa: E731
        out.append(
            Summary(
                "avg", algo, split,
                cost=mean(lambda s: s.cost),
                pur_amt=mean(lambda s: s.pur_amt),
                ratio=mean(lambda s: s.ratio),
                kb_ratio=mean(lambda s: s.kb_ratio),
                cvr=mean(lambda s: s.cvr),
                roi=mean(lambda s: s.roi),
                ppc=mean(lambda s: s.ppc),
                cost_ratio=mean(lambda s: s.cost_ratio),
                improvement=mean(lambda s: s.improvement),
                valid=all(s.valid for s in ss),
                zero_click_days=sum(s.zero_click_days for s in ss),
            )
        )
    return out


def write_summary_csv(rows: Sequence[Summary], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SUMMARY_HEADER + ["rank"])
        for s in rows:
            d = asdict(s)
            # an algorithm outside the equal-cost band is reported but not ranked
            w.writerow([d[k] for k in SUMMARY_HEADER] + ["" if s.valid else "invalid"])


# ---------------------------------------------------------------------------
# comparison


@dataclass
class Comparison:
    summary: list[Summary]
    averages: list[Summary]
    logs: dict[str, TrainingLog]

    def avg(self, algo: str, split: str) -> Summary:
        return next(s for s in self.averages if s.algo == algo and s.split == split)

    def improvement(self, algo: str, split: str) -> float:
        return self.avg(algo, split).improvement


def compare(
    cfg: ExperimentConfig,
    algorithms: Sequence[str] = ("kb", "amdp", "rmdp"),
    setups: Sequence[AdSetup] | None = None,
) -> Comparison:
    """Train each learning algorithm per ad on the train days and evaluate on train and test days.

    Single-ad algorithms (KB, AMDP, RMDP) see each ad's own view of the day;
    M-RMDP runs every ad in the shared market and is compared with an all-KB market.
    """
    bad = set(algorithms) - set(ALGORITHMS)
    if bad:
        raise ConfigurationError(f"unknown algorithms {sorted(bad)}")
    setups = list(setups) if setups is not None else calibrate(cfg)
    train_days, test_days = cfg.days("train"), cfg.days("test")
    rows: list[Metrics] = []
    logs: dict[str, TrainingLog] = {}
    for s in setups:
        for algo in algorithms:
            if algo == "m-rmdp":
                continue
            if algo == "kb":
                pol = s.kb
            elif algo == "rmdp":
                t = train_rmdp(cfg, s, train_days)
                logs[f"rmdp/{s.ad_id}"] = t.log
                pol = RmdpPolicy(t.net, s.grid, s.norms)
            else:
                t = train_amdp(cfg, s, train_days)
                logs[f"amdp/{s.ad_id}"] = t.log
                pol = AmdpPolicy(t.net, s.price_grid, s.amdp_norms, cfg.amdp_interval)
            rows += evaluate(pol, s, train_days, algo, "train")
            rows += evaluate(pol, s, test_days, algo, "test")
    if "m-rmdp" in algorithms:
        trained, _ = train_market(cfg, setups, train_days, cfg.lam)
        pols = [RmdpPolicy(t.net, s.grid, s.norms) for t, s in zip(trained, setups)]
        for t in trained:
            logs[f"m-rmdp/{t.ad_id}"] = t.log
        rows += evaluate_market(pols, setups, train_days, "m-rmdp", "train")
        rows += evaluate_market(pols, setups, test_days, "m-rmdp", "test")
    summary = summarize(rows, cfg.cost_tolerance)
    return Comparison(summary, average_rows(summary), logs)


def compare_market(
    cfg: ExperimentConfig,
    lams: dict[str, float] | None = None,
    setups: Sequence[AdSetup] | None = None,
) -> Comparison:
    """Shared-market comparison: all-KB market against agent pools trained with each mixing weight.

    ``lam = 0`` is plain RMDP (purely private reward) with every ad learning in the same market.
    """
    lams = lams if lams is not None else {"rmdp": 0.0, "m-rmdp": cfg.lam}
    setups = list(setups) if setups is not None else calibrate(cfg)
    train_days, test_days = cfg.days("train"), cfg.days("test")
    kbs = [s.kb for s in setups]
    rows = evaluate_market(kbs, setups, train_days, "kb", "train") + evaluate_market(kbs, setups, test_days, "kb", "test")
    logs: dict[str, TrainingLog] = {}
    for name, lam in lams.items():
        trained, _ = train_market(cfg, setups, train_days, lam)
        pols = [RmdpPolicy(t.net, s.grid, s.norms) for t, s in zip(trained, setups)]
        for t in trained:
            logs[f"{name}/{t.ad_id}"] = t.log
        rows += evaluate_market(pols, setups, train_days, name, "train")
        rows += evaluate_market(pols, setups, test_days, name, "test")
    summary = summarize(rows, cfg.cost_tolerance)
    return Comparison(summary, average_rows(summary), logs)


# ---------------------------------------------------------------------------
# convergence data


def _decile_means(xs: Sequence[float]) -> tuple[float, float]:
    if not xs:
        return float("nan"), float("nan")
    n = max(len(xs) // 10, 1)
    return float(np.mean(xs[:n])), float(np.mean(xs[-n:]))


@dataclass
class ConvergenceSummary:
    loss_first: float
    loss_last: float
    pur_amt_first: float
    pur_amt_last: float

    @property
    def loss_decreased(self) -> bool:
        return self.loss_last < self.loss_first

    @property
    def pur_amt_increased(self) -> bool:
        return self.pur_amt_last > self.pur_amt_first

    @property
    def converged(self) -> bool:
        return self.loss_decreased and self.pur_amt_increased


def convergence_summary(log: TrainingLog) -> ConvergenceSummary:
    lf, ll = _decile_means([l for _, l, _ in log.losses])
    pf, pl = _decile_means(log.episode_pur_amt())
    return ConvergenceSummary(lf, ll, pf, pl)


def emit_convergence(log: TrainingLog, path: str | Path) -> ConvergenceSummary | None:
    """CSV of (batches, loss, episode, pur_amt) per gradient step, plus a decile summary row.

    An empty log produces only the header.
    """
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["batches", "loss", "episode", "pur_amt"])
        for b, l, ep, pa in log.rows():
            w.writerow([b, repr(l), ep, repr(pa)])
        if not log.losses:
            return None
        s = convergence_summary(log)
        w.writerow(["summary", f"loss_first_decile={s.loss_first!r}", f"loss_final_decile={s.loss_last!r}",
                    f"pur_amt_first_decile={s.pur_amt_first!r};pur_amt_final_decile={s.pur_amt_last!r}"])
        return s


def write_training_jsonl(log: TrainingLog, path: str | Path) -> None:
    with open(path, "w") as f:
        for e in log.episodes:
            f.write(json.dumps(e, sort_keys=True) + "\n")


def write_market_csv(log: MassiveLog, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(MassiveLog.HEADER)
        for row in log.rows:
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), repr(row[4])])


# ---------------------------------------------------------------------------
# checkpoints


def save_policy(path: str | Path, trained: TrainedAd, algo: str, setup: AdSetup) -> None:
    meta = {"algo": algo, "ad_id": trained.ad_id, "alpha_ref": setup.alpha_ref}
    opt = trained.agent.opt if trained.agent is not None else None
    save_checkpoint(path, trained.net, opt, meta)


def load_policy(path: str | Path, setups: Sequence[AdSetup], interval: int = 100):
    """Rebuild a bidding policy from a checkpoint written by ``save_policy``."""
    net, _, meta = load_checkpoint(path)
    setup = next((s for s in setups if s.ad_id == meta.get("ad_id")), None)
    if setup is None:
        raise ConfigurationError(f"checkpoint ad {meta.get('ad_id')!r} is not in the config")
    if meta.get("algo") == "amdp":
        return AmdpPolicy(net, setup.price_grid, setup.amdp_norms, interval), setup, meta
    return RmdpPolicy(net, setup.grid, setup.norms), setup, meta


# ---------------------------------------------------------------------------
# consistency


def consistency_run(cfg: ExperimentConfig, setups: Sequence[AdSetup] | None = None) -> list[ConsistencyReport]:
    """Cross-day similarity of hourly aggregates under one fixed action sequence.

    One report per (day pair, ad).  Days are generated and replayed hour by
    hour, in blocks, so high-volume settings never hold a full day in memory.
    """
    c = {"pairs": 20, "daily_auctions": None, "action": 50, "block": 50_000, **cfg.consistency}
    setups = list(setups) if setups is not None else calibrate(cfg)
    prof = cfg.day_profile()
    if c["daily_auctions"] is not None:
        prof = prof.scaled(float(c["daily_auctions"]) / float(sum(prof.hourly_intensity)))
    specs = cfg.ad_specs()
    actions = [int(c["action"])] * HOURS

    def day_aggregates(day_seed: int) -> list[list[HourAggregate]]:
        per_ad: list[list[HourAggregate]] = [[] for _ in setups]
        for h in range(HOURS):
            log = generate_hour(day_seed, prof, specs, h)
            alphas = np.array([s.grid.alpha(actions[h]) for s in setups])
            day = MarketDay(log, [UNLIMITED] * log.n_ads, horizon=1)
            parts = []
            for lo in range(0, len(log), int(c["block"])):
                hi = min(lo + int(c["block"]), len(log))
                parts.append(day.run(lo, hi, log.pcvr[lo:hi] * alphas[None, :]))
            for j in range(len(setups)):
                per_ad[j].append(merge_aggregates([p[j] for p in parts]) if parts else EMPTY_AGGREGATE)
        return per_ad

    reports = []
    for p in range(int(c["pairs"])):
        a = day_aggregates(derive_seed(cfg.seed, "consistency", p, 0))
        b = day_aggregates(derive_seed(cfg.seed, "consistency", p, 1))
        reports += [consistency_check(x, y, actions) for x, y in zip(a, b)]
    return reports
