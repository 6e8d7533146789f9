"""
run a workload script under one backend and mode and report every call

modes:
    benign       monitor over the honest backend (plus the reference oracle)
    adv          monitor over the adversary
    unprotected  the same client with checks off, over the adversary
"""
import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import structlog
from pydantic import BaseModel, Field

from app.services.adversary import AdversaryBackend, AdversaryConfig, adversary_wrap
from app.services.backend import Backend, PosixBackend, make_backend
from app.services.codes import ErrorCode, OpResult
from app.services.monitor import GoodStateLost, Monitor, MonitorAbort
from app.services.pagestore import SealingKey
from app.services.reference import ReferenceFs
from app.services.script import CORE_CALLS, WorkloadScript, render_script
from app.services.session import Session, comparable, payload_matches, render_value
from app.services.state import FileNode, is_good_state, walk
from app.services.statefile import encode_state, epoch_store_for


logger = structlog.get_logger()

EXIT_CLEAN = 0
EXIT_FAILED = 1
EXIT_VIOLATION = 2


class HarnessError(Exception):
    """the run could not be set up (bad backend spec, unusable store root)"""
    pass


class RunMode(str, Enum):
    BENIGN = "benign"
    ADVERSARIAL = "adv"
    UNPROTECTED = "unprotected"


class CallRecord(BaseModel):
    index: int
    line: int
    call: str
    code: str
    violation: Optional[str] = None
    payload: Any = None
    good: bool
    atomic: Optional[bool] = None
    oracle: Optional[bool] = None
    expected: Optional[str] = None
    passed: Optional[bool] = None
    ledger: List[Dict[str, Any]] = Field(default_factory=list)


class RunSummary(BaseModel):
    status: str
    exit_code: int
    calls: int
    violations: int
    first_violation_index: Optional[int] = None
    first_violation_kind: Optional[str] = None
    assertions: int = 0
    assertions_failed: int = 0
    good_state_failures: int = 0
    atomicity_failures: int = 0
    oracle_mismatches: int = 0
    tamper_events: int = 0
    ledger_length: int = 0
    ledger_digest: str = ""
    aborted: bool = False


class RunReport(BaseModel):
    seed: int
    mode: RunMode
    backend: str
    adversary: Optional[Dict[str, Any]] = None
    script_sha256: str
    records: List[CallRecord]
    tamper: List[Dict[str, Any]] = Field(default_factory=list)
    summary: RunSummary


@dataclass
class RunOutcome:
    report: RunReport
    monitor: Monitor
    adversary: Optional[AdversaryBackend]
    observations: List[Tuple[str, Any]]
    view: List[Tuple[str, int]]


def derive_key(seed: int) -> SealingKey:
    """per-seed sealing key for runs without a configured key"""
    return SealingKey(hashlib.sha256(f"besfs-harness-key:{seed}".encode()).digest())


def client_view(monitor: Monitor) -> List[Tuple[str, int]]:
    """what the client believes exists: (path, size) pairs, directories sized -1"""
    out = []
    for path, node in walk(monitor.state):
        size = monitor.state.fmap[node.fid].size if isinstance(node, FileNode) else -1
        out.append((str(path), size))
    return sorted(out)


def _open_backend(spec: str) -> Backend:
    try:
        return make_backend(spec)
    except (ValueError, OSError) as e:
        raise HarnessError(str(e)) from e


def execute(
    script: WorkloadScript,
    backend_spec: str = "memory",
    mode: RunMode = RunMode.BENIGN,
    adversary: Optional[AdversaryConfig] = None,
    seed: int = 0,
    strict_abort: bool = False,
    key: Optional[SealingKey] = None,
    capacity: int = 4096,
    mmap_base: int = 0x10000,
    check_good: bool = False,
    oracle: Optional[bool] = None,
) -> RunOutcome:
    backend = _open_backend(backend_spec)
    adv = None
    if mode is not RunMode.BENIGN:
        adv = adversary_wrap(backend, adversary or AdversaryConfig(seed=seed))
        if any(command.call == "arm" for command in script.commands):
            adv.armed = False

    epochs = epoch_store_for(str(backend.root) if isinstance(backend, PosixBackend) else None)
    monitor = Monitor(
        adv or backend,
        key or derive_key(seed),
        checked=mode is not RunMode.UNPROTECTED,
        strict_abort=strict_abort,
        check_good=check_good,
        epoch_store=epochs,
        capacity=capacity,
        mmap_base=mmap_base,
    )
    formatted = monitor.format()
    if not formatted.ok:
        logger.warning("format failed", code=formatted.code.value)

    session = Session(monitor, adv)
    if oracle is None:
        oracle = mode is RunMode.BENIGN
    reference = Session(ReferenceFs(capacity=capacity, mmap_base=mmap_base)) if oracle else None

    records: List[CallRecord] = []
    observations: List[Tuple[str, Any]] = []
    aborted = False
    for index, command in enumerate(script.commands):
        start = monitor.state.call_counter
        before = encode_state(monitor.state, clock=False) if command.call in CORE_CALLS else None
        try:
            result = session.execute(command)
        except MonitorAbort as e:
            result = OpResult.violation(e.kind)
            aborted = True
        except GoodStateLost as e:
            raise HarnessError(f"line {command.line}: {e}") from e

        atomic = None
        if before is not None and not result.ok and not aborted:
            atomic = encode_state(monitor.state, clock=False) == before

        matched = None
        if reference is not None:
            expected = reference.execute(command)
            matched = (expected.code, comparable(expected.value)) == (result.code, comparable(result.value))

        passed = None
        expected_text = None
        if command.expect is not None:
            expected_text = command.expect.code.value
            passed = result.code is command.expect.code
            if command.expect.payload is not None:
                expected_text += " " + command.expect.payload
                if result.code is ErrorCode.VIOLATION:
                    passed = passed and result.value.value == command.expect.payload
                else:
                    passed = passed and payload_matches(result.value, command.expect.payload)

        is_violation = result.code is ErrorCode.VIOLATION
        records.append(CallRecord(
            index=index,
            line=command.line,
            call=command.call,
            code=result.code.value,
            violation=result.value.value if is_violation else None,
            payload=None if is_violation else render_value(result.value),
            good=is_good_state(monitor.state),
            atomic=atomic,
            oracle=matched,
            expected=expected_text,
            passed=passed,
            ledger=[entry.render() for entry in monitor.ledger.slice(start, monitor.state.call_counter)],
        ))
        observations.append((result.code.value, comparable(result.value)))
        if aborted:
            break

    summary = _summarize(records, monitor, adv, aborted)
    report = RunReport(
        seed=seed,
        mode=mode,
        backend=backend_spec,
        adversary=adversary.model_dump(mode="json") if adversary is not None and adv is not None else None,
        script_sha256=hashlib.sha256(render_script(script).encode()).hexdigest(),
        records=records,
        tamper=[
            {"counter": event.counter, "op": event.op.value, "strategy": event.strategy.value, "detail": event.detail}
            for event in (adv.events if adv is not None else [])
        ],
        summary=summary,
    )
    logger.info(
        "run finished",
        mode=mode.value,
        calls=summary.calls,
        status=summary.status,
        violations=summary.violations,
    )
    return RunOutcome(report, monitor, adv, observations, client_view(monitor))


def _summarize(records: List[CallRecord], monitor: Monitor, adv: Optional[AdversaryBackend], aborted: bool) -> RunSummary:
    violations = [record for record in records if record.violation is not None]
    failed = sum(1 for record in records if record.passed is False)
    good_failures = sum(1 for record in records if not record.good)
    atomicity_failures = sum(1 for record in records if record.atomic is False)
    oracle_mismatches = sum(1 for record in records if record.oracle is False)

    if failed or good_failures or atomicity_failures or oracle_mismatches:
        status, exit_code = "failed", EXIT_FAILED
    elif violations:
        status, exit_code = "violation", EXIT_VIOLATION
    else:
        status, exit_code = "clean", EXIT_CLEAN

    ledger = [entry.render() for entry in monitor.ledger]
    digest = hashlib.sha256(json.dumps(ledger, sort_keys=True).encode()).hexdigest()
    return RunSummary(
        status=status,
        exit_code=exit_code,
        calls=len(records),
        violations=len(violations),
        first_violation_index=violations[0].index if violations else None,
        first_violation_kind=violations[0].violation if violations else None,
        assertions=sum(1 for record in records if record.passed is not None),
        assertions_failed=failed,
        good_state_failures=good_failures,
        atomicity_failures=atomicity_failures,
        oracle_mismatches=oracle_mismatches,
        tamper_events=len(adv.events) if adv is not None else 0,
        ledger_length=len(ledger),
        ledger_digest=digest,
        aborted=aborted,
    )


def run(
    script: WorkloadScript,
    backend_spec: str = "memory",
    mode: RunMode = RunMode.BENIGN,
    adversary: Optional[AdversaryConfig] = None,
    seed: int = 0,
    strict_abort: bool = False,
    key: Optional[SealingKey] = None,
    capacity: int = 4096,
    mmap_base: int = 0x10000,
    check_good: bool = False,
) -> RunReport:
    return execute(
        script,
        backend_spec=backend_spec,
        mode=mode,
        adversary=adversary,
        seed=seed,
        strict_abort=strict_abort,
        key=key,
        capacity=capacity,
        mmap_base=mmap_base,
        check_good=check_good,
    ).report


def human_summary(report: RunReport) -> str:
    s = report.summary
    lines = [
        f"mode={report.mode.value} backend={report.backend} seed={report.seed}",
        f"status={s.status} calls={s.calls} violations={s.violations} "
        f"assertions={s.assertions - s.assertions_failed}/{s.assertions}",
    ]
    if s.first_violation_index is not None:
        lines.append(f"first violation: call {s.first_violation_index} ({s.first_violation_kind})")
    if s.tamper_events:
        lines.append(f"tamper events: {s.tamper_events}")
    for record in report.records:
        if record.passed is False:
            lines.append(f"  line {record.line}: {record.call} -> {record.code}, expected {record.expected}")
    return "\n".join(lines)
