"""Uncertainty-guided four-agent answer pipeline.

Stages: retrieve, prune the ranking down to a sufficient buffer, measure the
entropy of an initial answer, then route.  Low-uncertainty queries go
straight to synthesis; high-uncertainty queries get salient-knowledge
extraction and iterative fine-print mining first.  The initial answer exists
only to be measured: it is never fed back into any later request.

Every run produces an AnswerTrace whose agent log uses logical step counters
(never wall-clock time) so identical runs serialize byte-identically.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

from .backends.base import (
    DocRef,
    GenerationRequest,
    GenerationResult,
    ModelBackend,
    PromptRole,
    parse_verdict,
)
from .errors import EmptySequenceError, HoloRagError, ProbabilityOutOfRangeError
from .index import Pool, RankedResult, top_k

# Each summand -p*ln(p) peaks at p = 1/e, so the average entropy of any
# token-probability sequence is bounded by 1/e; scaling by e normalizes.
ENTROPY_CEILING = 1.0 / math.e

ROUTE_LQP = "LQP"
ROUTE_HQP = "HQP"

SALIENT_DOC_ID = "knowledge:salient"
DECOUPLED_DOC_ID = "knowledge:decoupled"


@dataclass(frozen=True)
class UncertaintyScore:
    """Average token entropy, raw and normalized to [0, 1]."""

    raw_entropy: float
    normalized: float
    token_count: int

    def to_dict(self) -> dict:
        return {
            "raw_entropy": self.raw_entropy,
            "normalized": self.normalized,
            "token_count": self.token_count,
        }


@dataclass(frozen=True)
class RouteDecision:
    """LQP/HQP classification of one query-document pair."""

    kind: str
    threshold: float
    score: UncertaintyScore

    def to_dict(self) -> dict:
        return {"kind": self.kind, "threshold": self.threshold, "score": self.score.to_dict()}


@dataclass(frozen=True)
class PrunedSet:
    """Buffer contents at pruning termination; always a ranking prefix."""

    selected: Tuple[DocRef, ...]
    n_used: int
    capacity: int
    terminated_early: bool

    def to_dict(self) -> dict:
        return {
            "selected": [ref.doc_id for ref in self.selected],
            "n_used": self.n_used,
            "capacity": self.capacity,
            "terminated_early": self.terminated_early,
        }


class FineprintIteration(NamedTuple):
    mined: str
    decoupled: str


@dataclass(frozen=True)
class AnswerTrace:
    """Complete audit record of one pipeline run."""

    query: str
    config: dict
    ranked: Optional[RankedResult]
    pruned: Optional[PrunedSet]
    route: Optional[RouteDecision]
    salient: Optional[str]
    fineprint_iterations: Tuple[FineprintIteration, ...]
    final_answer: Optional[str]
    error: Optional[str]
    agent_log: Tuple[dict, ...]

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "config": self.config,
            "ranked": self.ranked.to_dict() if self.ranked else None,
            "pruned": self.pruned.to_dict() if self.pruned else None,
            "route": self.route.to_dict() if self.route else None,
            "salient": self.salient,
            "fineprint_iterations": [
                {"mined": it.mined, "decoupled": it.decoupled}
                for it in self.fineprint_iterations
            ],
            "final_answer": self.final_answer,
            "error": self.error,
            "agent_log": list(self.agent_log),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2)


def answer_entropy(token_probs: Sequence[float]) -> UncertaintyScore:
    """Average entropy of the emitted tokens, normalized to [0, 1].

    raw = -(1/L) * sum(p * ln p); the normalized value is e * raw, clamped
    against floating-point overshoot of the 1/e ceiling.
    """
    probs = [float(p) for p in token_probs]
    if not probs:
        raise EmptySequenceError("entropy of an empty token sequence is undefined")
    for p in probs:
        if not (0.0 < p <= 1.0):
            raise ProbabilityOutOfRangeError(f"token probability {p} outside (0, 1]")
    raw = -sum(p * math.log(p) for p in probs) / len(probs)
    normalized = min(1.0, max(0.0, math.e * raw))
    return UncertaintyScore(raw_entropy=raw, normalized=normalized, token_count=len(probs))


def decide_route(normalized: float, h: float) -> str:
    """LQP below the threshold, HQP at or above it (ties take the deep path)."""
    return ROUTE_LQP if normalized < h else ROUTE_HQP


def classify_pair(result: GenerationResult, h: float) -> RouteDecision:
    """Classify a measured initial answer against the uncertainty threshold."""
    if not (0.0 < h < 1.0):
        raise ValueError(f"uncertainty threshold must be in (0, 1), got {h}")
    score = answer_entropy(result.token_probs)
    return RouteDecision(kind=decide_route(score.normalized, h), threshold=h, score=score)


def _log_event(log: Optional[List[dict]], agent: str, action: str, **detail) -> None:
    if log is not None:
        log.append({"step": len(log) + 1, "agent": agent, "action": action, **detail})


def _log_request(log: Optional[List[dict]], agent: str, request: GenerationRequest, output: str) -> None:
    _log_event(
        log,
        agent,
        "generate",
        role=request.prompt_role.value,
        doc_ids=list(request.doc_ids()),
        doc_texts=[ref.text or "" for ref in request.context_docs],
        prior=request.prior,
        iteration=request.iteration,
        output=output,
    )


def prune(
    query: str,
    ranked: RankedResult,
    k: int,
    backend: ModelBackend,
    resolve: Optional[Callable[[str, str], DocRef]] = None,
    fallback_on_probe_error: bool = False,
    log: Optional[List[dict]] = None,
) -> PrunedSet:
    """Admit ranked documents one at a time until a probe says they suffice.

    After each admission the whole buffer is probed; the first positive
    verdict stops early.  If no probe ever succeeds the buffer keeps the top
    min(k, ranking length) documents.  ``resolve`` maps (pool_name, doc_id) to
    a DocRef carrying text; with ``fallback_on_probe_error`` a failing probe
    degrades to plain top-k instead of raising.
    """
    if k < 1:
        raise ValueError("buffer capacity k must be >= 1")
    if not ranked.entries:
        raise ValueError("cannot prune an empty ranking")
    resolve = resolve or (lambda pool_name, doc_id: DocRef(doc_id=doc_id))
    limit = min(k, len(ranked.entries))
    buffer: List[DocRef] = []
    for n, entry in enumerate(ranked.entries[:limit], start=1):
        buffer.append(resolve(entry.pool_name, entry.doc_id))
        try:
            request = GenerationRequest(
                prompt_role=PromptRole.SUFFICIENCY_PROBE,
                query=query,
                context_docs=tuple(buffer),
                iteration=n,
            )
            result = backend.generate(request)
            _log_request(log, "pruner", request, result.text)
            verdict = parse_verdict(result.text)
        except HoloRagError:
            if not fallback_on_probe_error:
                raise
            _log_event(log, "pruner", "probe_fallback", n=n)
            buffer.extend(
                resolve(e.pool_name, e.doc_id) for e in ranked.entries[n:limit]
            )
            return PrunedSet(
                selected=tuple(buffer), n_used=limit, capacity=k, terminated_early=False
            )
        _log_event(log, "pruner", "verdict", n=n, sufficient=verdict.sufficient)
        if verdict.sufficient:
            return PrunedSet(selected=tuple(buffer), n_used=n, capacity=k, terminated_early=True)
    return PrunedSet(selected=tuple(buffer), n_used=limit, capacity=k, terminated_early=False)


def extract_salient(
    query: str,
    pruned: Sequence[DocRef],
    backend: ModelBackend,
    log: Optional[List[dict]] = None,
) -> str:
    """Pull the visually prominent, query-relevant knowledge from the buffer."""
    if not pruned:
        raise ValueError("salient extraction needs at least one pruned document")
    request = GenerationRequest(
        prompt_role=PromptRole.SALIENT_EXTRACT, query=query, context_docs=tuple(pruned)
    )
    result = backend.generate(request)
    _log_request(log, "decoupler", request, result.text)
    return result.text


def decouple(
    query: str,
    salient: str,
    backend: ModelBackend,
    max_iters: int,
    log: Optional[List[dict]] = None,
) -> Tuple[FineprintIteration, ...]:
    """Iteratively mine fine-print knowledge anchored on the salient summary.

    Each iteration mines details from (salient, previous decoupled knowledge)
    and then decouples the mined details from the salient anchor.  After each
    iteration an answerability probe runs on the decoupled knowledge alone;
    the loop stops early on a positive verdict, else at ``max_iters``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if not salient:
        raise ValueError("decoupling needs nonempty salient knowledge")
    anchor = DocRef(doc_id=SALIENT_DOC_ID, text=salient)
    iterations: List[FineprintIteration] = []
    previous = ""
    for t in range(1, max_iters + 1):
        mine_request = GenerationRequest(
            prompt_role=PromptRole.FINEPRINT_MINE,
            query=query,
            context_docs=(anchor,),
            prior=previous,
            iteration=t,
        )
        mined = backend.generate(mine_request)
        _log_request(log, "decoupler", mine_request, mined.text)

        decouple_request = GenerationRequest(
            prompt_role=PromptRole.DECOUPLE,
            query=query,
            context_docs=(anchor,),
            prior=mined.text,
            iteration=t,
        )
        decoupled = backend.generate(decouple_request)
        _log_request(log, "decoupler", decouple_request, decoupled.text)

        iterations.append(FineprintIteration(mined=mined.text, decoupled=decoupled.text))
        previous = decoupled.text

        probe_request = GenerationRequest(
            prompt_role=PromptRole.SUFFICIENCY_PROBE,
            query=query,
            context_docs=(DocRef(doc_id=DECOUPLED_DOC_ID, text=decoupled.text),),
            iteration=t,
        )
        probe = backend.generate(probe_request)
        _log_request(log, "decoupler", probe_request, probe.text)
        verdict = parse_verdict(probe.text)
        _log_event(log, "decoupler", "answerable", t=t, sufficient=verdict.sufficient)
        if verdict.sufficient:
            break
    return tuple(iterations)


def summarize(
    query: str,
    route_kind: str,
    backend: ModelBackend,
    pruned_docs: Optional[Sequence[DocRef]] = None,
    salient: Optional[str] = None,
    fineprint: Optional[str] = None,
    log: Optional[List[dict]] = None,
) -> str:
    """Synthesize the final answer.

    The low-uncertainty path re-reads the pruned documents; the
    high-uncertainty path fuses the salient and decoupled fine-print
    knowledge.  Inputs must match the route.
    """
    if route_kind == ROUTE_LQP:
        if not pruned_docs or salient is not None or fineprint is not None:
            raise ValueError("low-uncertainty synthesis takes pruned documents only")
        context = tuple(pruned_docs)
    elif route_kind == ROUTE_HQP:
        if pruned_docs is not None or not salient or not fineprint:
            raise ValueError(
                "high-uncertainty synthesis takes salient and fine-print knowledge only"
            )
        context = (
            DocRef(doc_id=SALIENT_DOC_ID, text=salient),
            DocRef(doc_id=DECOUPLED_DOC_ID, text=fineprint),
        )
    else:
        raise ValueError(f"unknown route kind {route_kind!r}")
    request = GenerationRequest(
        prompt_role=PromptRole.SUMMARIZE, query=query, context_docs=context
    )
    result = backend.generate(request)
    _log_request(log, "summarizer", request, result.text)
    return result.text


def run_pipeline(query: str, pool: Pool, config, backend: ModelBackend) -> AnswerTrace:
    """Run the whole retrieve-prune-judge-generate pipeline for one query.

    Stage failures do not raise: the trace records the error event and comes
    back without a final answer.  ``config`` is any object with the RunConfig
    fields (k, h, max_iters, alpha, eps, scoring_mode, max_tokens,
    fallback_on_probe_error optional).
    """
    if not pool.records:
        raise ValueError("pipeline needs a nonempty pool")
    if not (0.0 < config.h < 1.0):
        raise ValueError(f"uncertainty threshold must be in (0, 1), got {config.h}")
    if config.k < 1 or config.max_iters < 1:
        raise ValueError("k and max_iters must be >= 1")

    config_echo = config.to_dict() if hasattr(config, "to_dict") else dict(vars(config))
    records = {(rec.pool_name, rec.doc_id): rec for rec in pool.records}

    def resolve(pool_name: str, doc_id: str) -> DocRef:
        rec = records[(pool_name, doc_id)]
        text = rec.metadata.get("text")
        image = rec.metadata.get("image")
        return DocRef(doc_id=doc_id, text=text, image=image)

    log: List[dict] = []
    ranked: Optional[RankedResult] = None
    pruned: Optional[PrunedSet] = None
    route: Optional[RouteDecision] = None
    salient: Optional[str] = None
    iterations: Tuple[FineprintIteration, ...] = ()
    final: Optional[str] = None
    error: Optional[str] = None

    try:
        query_embedding = backend.embed_query(query)
        ranked = top_k(
            pool,
            query_embedding,
            config.k,
            scoring=config.scoring_mode,
            alpha=config.alpha,
            eps=config.eps,
        )
        _log_event(
            log,
            "retriever",
            "retrieve",
            pool=pool.name,
            k=config.k,
            doc_ids=[e.doc_id for e in ranked.entries],
        )
        pruned = prune(
            query,
            ranked,
            config.k,
            backend,
            resolve=resolve,
            fallback_on_probe_error=getattr(config, "fallback_on_probe_error", False),
            log=log,
        )

        initial_request = GenerationRequest(
            prompt_role=PromptRole.ANSWER,
            query=query,
            context_docs=pruned.selected,
            max_tokens=config.max_tokens,
        )
        initial = backend.generate(initial_request)
        _log_request(log, "judger", initial_request, initial.text)

        route = classify_pair(initial, config.h)
        # measured for uncertainty only; the text is never reused downstream
        _log_event(
            log,
            "judger",
            "route",
            kind=route.kind,
            normalized_entropy=route.score.normalized,
            initial_answer=initial.text,
        )

        if route.kind == ROUTE_LQP:
            final = summarize(
                query, ROUTE_LQP, backend, pruned_docs=pruned.selected, log=log
            )
        else:
            salient = extract_salient(query, pruned.selected, backend, log=log)
            iterations = decouple(query, salient, backend, config.max_iters, log=log)
            final = summarize(
                query,
                ROUTE_HQP,
                backend,
                salient=salient,
                fineprint=iterations[-1].decoupled,
                log=log,
            )
        _log_event(log, "summarizer", "final", answer=final)
    except HoloRagError as exc:
        error = f"{type(exc).__name__}: {exc}"
        _log_event(log, "pipeline", "error", message=error)

    return AnswerTrace(
        query=query,
        config=config_echo,
        ranked=ranked,
        pruned=pruned,
        route=route,
        salient=salient,
        fineprint_iterations=iterations,
        final_answer=final,
        error=error,
        agent_log=tuple(log),
    )


def initial_answer_leaked(trace: AnswerTrace) -> bool:
    """Audit a trace for reuse of the measured initial answer.

    True if the initial answer text appears in the prior or context of any
    generation request issued after the routing decision.
    """
    initial: Optional[str] = None
    for event in trace.agent_log:
        if initial is None:
            if event.get("action") == "route":
                initial = event.get("initial_answer")
            continue
        if event.get("action") != "generate":
            continue
        haystacks = [event.get("prior") or ""]
        haystacks.extend(event.get("doc_texts", []))
        if any(initial in h for h in haystacks if initial):
            return True
    return False
