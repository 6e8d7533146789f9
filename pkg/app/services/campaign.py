"""
differential fault-injection campaign

for every generated script and every strategy: run it benign to get the
baseline ledger, pick injection points from that ledger, then run it again
unprotected and monitored with a one-shot adversary aimed at the point.
an injection the unprotected client visibly suffers from but the monitor
lets through is a miss
"""
import random
from collections import Counter
from typing import Dict, List, Optional

import structlog
from pydantic import BaseModel, Field

from app.services.adversary import AdversaryConfig, Trigger
from app.services.backend import BackendOp
from app.services.codes import ViolationKind
from app.services.generator import generate
from app.services.harness import RunMode, RunOutcome, derive_key, execute


logger = structlog.get_logger()

# ops at which a strategy can possibly apply; the adversary's own dry run
# has the final word
INJECTION_OPS: Dict[ViolationKind, frozenset] = {
    ViolationKind.CONTENT_TAMPER: frozenset({BackendOp.READ_PAGE, BackendOp.LOAD_IMAGE}),
    ViolationKind.PAGE_OVERLAP: frozenset({BackendOp.READ_PAGE}),
    ViolationKind.PATH_MISMATCH: frozenset({
        BackendOp.READDIR, BackendOp.OPEN, BackendOp.STAT, BackendOp.CHMOD, BackendOp.REMOVE,
    }),
    ViolationKind.FD_MISMATCH: frozenset({BackendOp.OPEN}),
    ViolationKind.SIZE_MISMATCH: frozenset({BackendOp.WRITE_PAGE, BackendOp.MMAP}),
    ViolationKind.ERRNO_LIE: frozenset(BackendOp),
    ViolationKind.NON_ZERO_MMAP: frozenset({BackendOp.MMAP}),
    ViolationKind.ROLLBACK: frozenset({BackendOp.LOAD_IMAGE, BackendOp.READ_PAGE}),
}

DETECTED = "detected"
MISSED = "missed"
HARMLESS = "harmless"
INAPPLICABLE = "inapplicable"


class CampaignConfig(BaseModel):
    seed: int = 0
    scripts: int = Field(default=200, ge=1)
    length: int = Field(default=50, ge=1)
    invalid_fraction: float = Field(default=0.1, ge=0.0, le=1.0)
    strategies: List[ViolationKind] = Field(default_factory=lambda: list(ViolationKind))
    injections: int = Field(default=1, ge=1, description="injection points per script and strategy")
    capacity: int = Field(default=4096, ge=1)


class Injection(BaseModel):
    script: int
    script_seed: int
    strategy: ViolationKind
    counter: int
    op: str
    outcome: str
    flagged_as: Optional[str] = None


class StrategyTally(BaseModel):
    strategy: ViolationKind
    injections: int = 0
    detected: int = 0
    missed: int = 0
    harmless: int = 0
    inapplicable: int = 0


class CampaignReport(BaseModel):
    config: CampaignConfig
    scripts: int
    benign_calls: int
    false_positives: int
    oracle_mismatches: int
    tallies: List[StrategyTally]
    injections: List[Injection]
    accepted: bool


def _diverged(baseline: RunOutcome, tampered: RunOutcome) -> bool:
    return baseline.observations != tampered.observations or baseline.view != tampered.view


def classify(baseline: RunOutcome, unprotected: RunOutcome, monitored: RunOutcome) -> str:
    """
    outcome of one injection

    a flag only counts as detected when every call before it answered exactly
    as in the baseline; a tampered eSucc ahead of the flag is a miss
    """
    if not monitored.adversary.events:
        return INAPPLICABLE
    summary = monitored.report.summary
    if summary.violations:
        cut = summary.first_violation_index
        if monitored.observations[:cut] != baseline.observations[:cut]:
            return MISSED
        return DETECTED
    if _diverged(baseline, unprotected):
        return MISSED
    return HARMLESS


def inject(script, script_seed: int, strategy: ViolationKind, counter: int, op: BackendOp,
           baseline: RunOutcome, capacity: int) -> Injection:
    """one-shot injection at `counter`, classified against the baseline"""
    cfg = AdversaryConfig(
        seed=script_seed,
        strategies=[strategy],
        trigger=Trigger(kind="at", n=counter, limit=1),
    )
    key = derive_key(script_seed)
    unprotected = execute(script, mode=RunMode.UNPROTECTED, adversary=cfg, seed=script_seed,
                          key=key, capacity=capacity)
    monitored = execute(script, mode=RunMode.ADVERSARIAL, adversary=cfg, seed=script_seed,
                        key=key, capacity=capacity)

    outcome = classify(baseline, unprotected, monitored)
    if outcome == MISSED:
        logger.warning("injection missed", script_seed=script_seed, strategy=strategy.value, counter=counter)
    return Injection(
        script=0,
        script_seed=script_seed,
        strategy=strategy,
        counter=counter,
        op=op.value,
        outcome=outcome,
        flagged_as=monitored.report.summary.first_violation_kind,
    )


def run_campaign(config: CampaignConfig) -> CampaignReport:
    rng = random.Random(config.seed)
    tallies = {kind: StrategyTally(strategy=kind) for kind in config.strategies}
    injections: List[Injection] = []
    false_positives = 0
    oracle_mismatches = 0
    benign_calls = 0

    for index in range(config.scripts):
        script_seed = rng.getrandbits(32)
        script = generate(script_seed, config.length, invalid_fraction=config.invalid_fraction,
                          capacity=config.capacity)
        baseline = execute(script, mode=RunMode.BENIGN, seed=script_seed,
                           key=derive_key(script_seed), capacity=config.capacity)
        summary = baseline.report.summary
        benign_calls += summary.calls
        oracle_mismatches += summary.oracle_mismatches
        if summary.violations:
            false_positives += 1
            logger.warning("benign run flagged", script_seed=script_seed, kind=summary.first_violation_kind)

        entries = baseline.monitor.ledger.entries
        for strategy in config.strategies:
            points = {entry.counter: entry.op for entry in entries if entry.op in INJECTION_OPS[strategy]}
            chosen = rng.sample(sorted(points), min(config.injections, len(points)))
            for counter in sorted(chosen):
                result = inject(script, script_seed, strategy, counter, points[counter],
                                baseline, config.capacity)
                result.script = index
                injections.append(result)
                tally = tallies[strategy]
                tally.injections += 1
                setattr(tally, result.outcome, getattr(tally, result.outcome) + 1)

    missed = sum(tally.missed for tally in tallies.values())
    outcomes = Counter(result.outcome for result in injections)
    logger.info(
        "campaign finished",
        scripts=config.scripts,
        injections=len(injections),
        false_positives=false_positives,
        **{name: outcomes.get(name, 0) for name in (DETECTED, MISSED, HARMLESS, INAPPLICABLE)},
    )
    return CampaignReport(
        config=config,
        scripts=config.scripts,
        benign_calls=benign_calls,
        false_positives=false_positives,
        oracle_mismatches=oracle_mismatches,
        tallies=list(tallies.values()),
        injections=injections,
        accepted=missed == 0 and false_positives == 0 and oracle_mismatches == 0,
    )


def table(report: CampaignReport) -> str:
    rows = [f"{'strategy':<16}{'inj':>6}{'det':>6}{'miss':>6}{'harm':>6}{'n/a':>6}"]
    for tally in report.tallies:
        rows.append(
            f"{tally.strategy.value:<16}{tally.injections:>6}{tally.detected:>6}"
            f"{tally.missed:>6}{tally.harmless:>6}{tally.inapplicable:>6}"
        )
    rows.append(
        f"scripts={report.scripts} benign_calls={report.benign_calls} "
        f"false_positives={report.false_positives} accepted={report.accepted}"
    )
    return "\n".join(rows)
