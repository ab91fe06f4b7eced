"""Field-level plurality vote with quorum-based key inclusion."""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Sequence

from .model import (
    Ballot,
    CanonicalFieldMap,
    CanonValue,
    Granularity,
    Tally,
    TieBreak,
    VoteOutcome,
    VotingConfig,
)


class VoteError(ValueError):
    pass


class InsufficientBallots(VoteError):
    pass


class MixedDocuments(VoteError):
    pass


def _tie_key(tally: Tally, tie_break: TieBreak) -> tuple:
    # Lower sorts first and wins. Exact text comparison is the final fallback so
    # ordering never depends on ballot position.
    if tie_break is TieBreak.PRIORITY:
        return (-tally.count, tally.best_priority, tally.value.text, tally.value.kind.value)
    return (-tally.count, tally.value.text, tally.value.kind.value, tally.best_priority)


def _tally(ballots: Sequence[Ballot]) -> dict[str, dict[CanonValue, list[int]]]:
    acc: dict[str, dict[CanonValue, list[int]]] = defaultdict(dict)
    for b in ballots:
        prio = b.priority
        for path, value in b.fields.items():
            slot = acc[path].get(value)
            if slot is None:
                acc[path][value] = [1, prio, prio]
            else:
                slot[0] += 1
                slot[1] += prio
                if prio < slot[2]:
                    slot[2] = prio
    return acc


def _check(ballots: Sequence[Ballot], cfg: VotingConfig) -> None:
    if len(ballots) < max(1, cfg.min_ballots):
        raise InsufficientBallots(f"{len(ballots)} ballots, need at least {cfg.min_ballots}")
    bad = [b for b in ballots if not b.ok]
    if bad:
        raise VoteError(f"ballot {bad[0].engine_id}/{bad[0].structurer_id} has status {bad[0].status.value}")
    if len({b.document_id for b in ballots}) > 1:
        raise MixedDocuments("ballots span more than one document id")


def majority_vote(ballots: Sequence[Ballot], cfg: VotingConfig = VotingConfig(), expected: int | None = None) -> VoteOutcome:
    """Reconcile ballots for one document into a consensus field map.

    ``expected`` is the configured ballot total (engines x structurers); the
    outcome is flagged degraded when fewer ballots arrived.
    """
    _check(ballots, cfg)
    n = len(ballots)
    quorum = cfg.quorum_for(n)
    raw = _tally(ballots)
    tallies = {
        path: tuple(sorted((Tally(v, c, s, best) for v, (c, s, best) in values.items()), key=lambda t: _tie_key(t, cfg.tie_break)))
        for path, values in sorted(raw.items())
    }

    if cfg.granularity is Granularity.DOCUMENT:
        fields, tied = _document_winner(ballots, cfg.tie_break)
        tie_paths = frozenset(fields) if tied else frozenset()
    else:
        chosen = {}
        ties = set()
        for path, ts in tallies.items():
            if sum(t.count for t in ts) < quorum:
                continue
            chosen[path] = ts[0].value
            if len(ts) > 1 and ts[1].count == ts[0].count:
                ties.add(path)
        fields = CanonicalFieldMap(chosen)
        tie_paths = frozenset(ties)

    return VoteOutcome(
        document_id=ballots[0].document_id,
        fields=fields,
        tallies=tallies,
        n_ballots=n,
        quorum=quorum,
        tie_broken_paths=tie_paths,
        degraded=expected is not None and n < expected,
        granularity=cfg.granularity,
        tie_break=cfg.tie_break,
    )


def _document_winner(ballots: Sequence[Ballot], tie_break: TieBreak) -> tuple[CanonicalFieldMap, bool]:
    groups: dict[CanonicalFieldMap, list[int]] = {}
    for b in ballots:
        slot = groups.setdefault(b.fields, [0, b.priority])
        slot[0] += 1
        slot[1] = min(slot[1], b.priority)

    def key(item: tuple[CanonicalFieldMap, list[int]]) -> tuple:
        fields, (count, best) = item
        text = tuple((p, v.kind.value, v.text) for p, v in fields.items())
        return (-count, best, text) if tie_break is TieBreak.PRIORITY else (-count, text, best)

    ranked = sorted(groups.items(), key=key)
    tied = len(ranked) > 1 and ranked[1][1][0] == ranked[0][1][0]
    return ranked[0][0], tied


def explain(outcome: VoteOutcome) -> str:
    """Render the per-path tally as a fixed-width text table."""
    n, q = outcome.n_ballots, outcome.quorum
    header = (
        f"vote over {n} ballots | granularity {outcome.granularity.value} | quorum {q}/{n} | "
        f"degraded {'yes' if outcome.degraded else 'no'} | included {len(outcome.fields)}/{len(outcome.tallies)}"
    )
    rows = []
    for path in sorted(outcome.tallies):
        ts = outcome.tallies[path]
        present = sum(t.count for t in ts)
        winner = outcome.fields.get(path)
        if winner is not None:
            status = "included"
            if path in outcome.tie_broken_paths:
                status += " tie→" + outcome.tie_break.value
        elif outcome.granularity is Granularity.FIELD and present < q:
            status = f"below quorum {q}/{n} (present {present})"
        else:
            status = "excluded (not in winning document)"
        cands = " | ".join(
            f"{'*' if winner is not None and t.value == winner else ' '}{t.value} x{t.count} (best {t.best_priority})"
            for t in ts
        )
        rows.append((path, status, cands))
    w_path = max([len("PATH")] + [len(r[0]) for r in rows])
    w_status = max([len("STATUS")] + [len(r[1]) for r in rows])
    lines = [header, f"{'PATH':<{w_path}}  {'STATUS':<{w_status}}  CANDIDATES"]
    lines += [f"{p:<{w_path}}  {s:<{w_status}}  {c}" for p, s, c in rows]
    return "\n".join(lines) + "\n"

