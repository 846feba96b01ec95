"""Round orchestration: pool, batch, queries, expansion, prediction refresh.

A run owns a working copy of the pseudo labels and improves it over T
rounds. Each round builds the diversified pool over not-yet-corrected
segments, selects a batch, collects answers (from the simulated oracle or
an interactive session), expands each answer across its superpixel, and
refreshes predictions. Every completed round is checkpointed so a run can
resume exactly where it stopped.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import predictor as predictor_mod
from . import tensor_io
from .acquisition import AcquisitionKind, score_pool, select_batch, dump_scores_csv
from .core import BudgetLedger, LabelMap, PixelRef, ProbMap, RoundState, SuperpixelPartition
from .metrics import corrected_class_histogram, dataset_iou_report
from .pool import PoolEntry, ResidualPolicy, apply_residual_policy, build_pool, \
    cosine_to, segment_rows
from .tensor_io import DatasetManifest


class MissingGroundTruth(Exception):
    pass


class StaleAnswer(Exception):
    pass


class InvalidAnswer(Exception):
    pass


@dataclass(frozen=True)
class CorrectionQuery:
    query_id: str
    round_index: int
    pixel: PixelRef
    segment_id: int
    pseudo_label: int  # working label at issue time


@dataclass(frozen=True)
class QueryAnswer:
    query_id: str
    verdict: str  # "confirmed" | "corrected"
    corrected_label: int | None = None
    annotator_id: str = "oracle"
    answered_at: str = ""

    def __post_init__(self) -> None:
        if self.verdict not in ("confirmed", "corrected"):
            raise InvalidAnswer(f"verdict {self.verdict!r}")
        if self.verdict == "corrected" and self.corrected_label is None:
            raise InvalidAnswer("corrected verdict without a label")


@dataclass
class OracleConfig:
    error_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError(f"error_rate {self.error_rate} outside [0, 1]")


@dataclass
class LoopConfig:
    batch_size: int
    rounds: int
    kind: AcquisitionKind = AcquisitionKind.SIM
    epsilon: float = 0.0
    expand_confirmed: bool = True
    predictor: str = "builtin"  # "builtin" | "external"
    external_command: str | None = None
    oracle: OracleConfig | None = None
    seed: int = 0
    residual: ResidualPolicy = ResidualPolicy.COMPONENTS
    clicks_limit: int | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch size {self.batch_size} < 1")
        if self.rounds < 1:
            raise ValueError(f"rounds {self.rounds} < 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon {self.epsilon} outside [0, 1]")


@dataclass
class Dataset:
    """Everything a run reads: tensors resolved from one manifest."""

    manifest: DatasetManifest
    images: dict[str, np.ndarray]
    pseudo: dict[str, LabelMap]
    gt: dict[str, LabelMap]
    partitions: dict[str, SuperpixelPartition]
    initial_probs: dict[str, ProbMap] = field(default_factory=dict)

    @property
    def image_ids(self) -> list[str]:
        return sorted(self.images)

    @property
    def num_classes(self) -> int:
        return self.manifest.num_classes

    @property
    def ignore_id(self) -> int | None:
        return self.manifest.ignore_id


def load_dataset(manifest: DatasetManifest,
                 residual: ResidualPolicy = ResidualPolicy.COMPONENTS) -> Dataset:
    ids = [entry.image_id for entry in manifest.images]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise tensor_io.ManifestError(f"duplicate image ids: {dupes}")
    images: dict[str, np.ndarray] = {}
    pseudo: dict[str, LabelMap] = {}
    gt: dict[str, LabelMap] = {}
    partitions: dict[str, SuperpixelPartition] = {}
    initial_probs: dict[str, ProbMap] = {}
    for entry in manifest.images:
        iid = entry.image_id
        images[iid] = tensor_io.read_tensor(manifest.resolve(entry.image_path))
        pseudo[iid] = LabelMap(iid, "pseudo",
                               tensor_io.read_tensor(manifest.resolve(entry.pseudo_label_path)))
        raw = tensor_io.read_tensor(manifest.resolve(entry.superpixel_path)).astype(np.uint32)
        partitions[iid] = apply_residual_policy(SuperpixelPartition(iid, raw), residual)
        if entry.gt_label_path:
            gt[iid] = LabelMap(iid, "ground_truth",
                               tensor_io.read_tensor(manifest.resolve(entry.gt_label_path)))
        if entry.prob_path:
            initial_probs[iid] = ProbMap(iid, tensor_io.read_tensor(manifest.resolve(entry.prob_path)))
    return Dataset(manifest, images, pseudo, gt, partitions, initial_probs)


# ---------------------------------------------------------------------------
# Oracle

def simulated_answer(query: CorrectionQuery, gt: LabelMap, cfg: OracleConfig,
                     rng: np.random.Generator, num_classes: int,
                     ignore_id: int | None = None) -> QueryAnswer:
    """Ground-truth lookup, optionally perturbed into a uniformly wrong verdict."""
    if gt is None:
        raise MissingGroundTruth(query.pixel.image_id)
    truth = gt.at(query.pixel)
    if truth == ignore_id:
        truth = query.pseudo_label  # nothing to correct toward; treat as confirmed

    honest_confirm = truth == query.pseudo_label
    lie = cfg.error_rate > 0.0 and rng.random() < cfg.error_rate
    if not lie:
        if honest_confirm:
            return QueryAnswer(query.query_id, "confirmed")
        return QueryAnswer(query.query_id, "corrected", corrected_label=truth)

    # Any valid verdict except the honest one, uniformly.
    options: list[tuple[str, int | None]] = []
    if not honest_confirm:
        options.append(("confirmed", None))
    for c in range(num_classes):
        if c == query.pseudo_label or c == ignore_id:
            continue
        if not honest_confirm and c == truth:
            continue
        options.append(("corrected", c))
    verdict, label = options[int(rng.integers(len(options)))]
    return QueryAnswer(query.query_id, verdict, corrected_label=label)


# ---------------------------------------------------------------------------
# Expansion and accounting

def expansion_region(segment, rep_pixel: PixelRef, probs: ProbMap, epsilon: float) -> np.ndarray:
    """Boolean keep-mask over the segment's pixels: cosine(rep, pixel) >= eps.

    The representative itself is always kept; its self-cosine is 1 up to
    rounding, which must not lose it at epsilon = 1.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon {epsilon} outside [0, 1]")
    if epsilon == 0.0:
        return np.ones(len(segment), dtype=bool)
    cosines = cosine_to(probs.row(rep_pixel), segment_rows(segment, probs))
    keep = cosines >= epsilon
    keep |= (segment.ys == rep_pixel.y) & (segment.xs == rep_pixel.x)
    return keep


def expand_label(answer: QueryAnswer, query: CorrectionQuery, segment,
                 probs: ProbMap, epsilon: float, working: LabelMap,
                 already_expanded: set[int], expand_confirmed: bool = True,
                 ) -> list[PixelRef]:
    """Write the answered label across the similar part of the superpixel.

    Returns the relabeled pixels. Confirmed answers reinforce the confirmed
    label across the region unless expand_confirmed is off.
    """
    if query.segment_id in already_expanded:
        raise StaleAnswer(f"segment {query.segment_id} already expanded")
    if answer.verdict == "corrected":
        if answer.corrected_label == query.pseudo_label:
            raise InvalidAnswer("corrected label equals the shown label")
        target = answer.corrected_label
    else:
        if not expand_confirmed:
            already_expanded.add(query.segment_id)
            return []
        target = query.pseudo_label

    keep = expansion_region(segment, query.pixel, probs, epsilon)
    ys, xs = segment.ys[keep], segment.xs[keep]
    working.data[ys, xs] = target
    already_expanded.add(query.segment_id)
    return [PixelRef(segment.image_id, int(x), int(y)) for y, x in zip(ys, xs)]


def record_query(ledger: BudgetLedger, answer: QueryAnswer) -> BudgetLedger:
    """Fold one answered query into the ledger (1 bit confirm, log2 L correct)."""
    if answer.verdict == "confirmed":
        ledger.confirmations += 1
    else:
        ledger.corrections += 1
    return ledger


def query_record(query: CorrectionQuery, answer: QueryAnswer, num_classes: int) -> dict:
    record = {
        "query_id": query.query_id,
        "round": query.round_index,
        "image_id": query.pixel.image_id,
        "x": query.pixel.x,
        "y": query.pixel.y,
        "segment_id": query.segment_id,
        "pseudo_label": query.pseudo_label,
        "verdict": answer.verdict,
    }
    if answer.verdict == "corrected":
        record["corrected_label"] = answer.corrected_label
    record["click_cost"] = 1
    record["bit_cost"] = math.log2(num_classes) if answer.verdict == "corrected" else 1.0
    return record


# ---------------------------------------------------------------------------
# The run itself

class CorrectionRun:
    """One active run over a dataset; exclusive owner of its round state."""

    def __init__(self, dataset: Dataset, config: LoopConfig, out_dir: str | Path):
        self.dataset = dataset
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

        self.working: dict[str, LabelMap] = {
            iid: LabelMap(iid, "corrected", lm.data.astype(np.uint16).copy())
            for iid, lm in dataset.pseudo.items()
        }
        self.touched: dict[str, np.ndarray] = {
            iid: np.zeros(lm.data.shape, dtype=bool) for iid, lm in dataset.pseudo.items()
        }
        self.corrected_segments: dict[str, set[int]] = {iid: set() for iid in dataset.images}
        limit = config.clicks_limit if config.clicks_limit is not None \
            else config.batch_size * config.rounds
        self.ledger = BudgetLedger(num_classes=dataset.num_classes, clicks_limit=limit)
        self.round_index = 0
        self.probs: dict[str, ProbMap] = {}
        self.query_log: list[dict] = []
        self._queries: dict[str, CorrectionQuery] = {}
        self._entry_by_qid: dict[str, PoolEntry] = {}
        self._batch: list[tuple[PoolEntry, float]] = []
        self._pool_scores: list[dict] = []
        self._scores_csv = ""

    # -- prediction refresh -------------------------------------------------

    def _round_dir(self, t: int) -> Path:
        return self.out_dir / "rounds" / f"round_{t:03d}"

    def refresh_predictions(self) -> None:
        ds = self.dataset
        if self.round_index == 0 and ds.initial_probs and \
                set(ds.initial_probs) == set(ds.images):
            self.probs = dict(ds.initial_probs)
            return
        if self.config.predictor == "external":
            round_dir = self._round_dir(self.round_index)
            predictor_mod.write_round_labels(round_dir, self.working)
            self.probs = predictor_mod.external_round_exchange(
                round_dir, ds.image_ids,
                {iid: self.working[iid].shape for iid in ds.image_ids},
                ds.num_classes, command=self.config.external_command)
        else:
            model = predictor_mod.fit(ds.images, self.working, ds.num_classes, ds.ignore_id)
            self.probs = {iid: predictor_mod.predict(model, ds.images[iid], iid)
                          for iid in ds.image_ids}

    def warm_start(self) -> None:
        """Round 0: predictions from the ingested labels, no queries."""
        self.refresh_predictions()

    # -- rounds ---------------------------------------------------------------

    def _ignore_masks(self) -> dict[str, np.ndarray] | None:
        ignore = self.dataset.ignore_id
        if ignore is None:
            return None
        return {iid: lm.data == ignore for iid, lm in self.working.items()}

    def begin_round(self) -> list[CorrectionQuery]:
        """Advance to the next round: build pool, score, select, issue queries."""
        self.round_index += 1
        t = self.round_index
        corrected = {iid: set(segs) for iid, segs in self.corrected_segments.items()}
        entries = build_pool(self.dataset.partitions, self.probs, corrected,
                             self._ignore_masks())
        if not entries:
            self._batch, self._pool_scores, self._queries = [], [], {}
            self._entry_by_qid = {}
            return []

        rng = np.random.default_rng([self.config.seed, t]) \
            if self.config.kind is AcquisitionKind.RANDOM else None
        scores = score_pool(entries, self.config.kind, self.probs, self.working,
                            self.dataset.ignore_id, rng)
        batch = select_batch(entries, scores, self.config.batch_size)
        self._batch = batch
        self._pool_scores = [
            {"image_id": e.image_id, "segment_id": e.segment_id,
             "x": e.pixel.x, "y": e.pixel.y, "score": float(s)}
            for e, s in zip(entries, scores)
        ]
        self._scores_csv = dump_scores_csv(entries, scores, self.config.kind)

        queries = []
        self._entry_by_qid = {}
        for i, (entry, _) in enumerate(batch):
            q = CorrectionQuery(
                query_id=f"r{t:03d}-q{i:04d}",
                round_index=t,
                pixel=entry.pixel,
                segment_id=entry.segment_id,
                pseudo_label=self.working[entry.image_id].at(entry.pixel),
            )
            queries.append(q)
            self._entry_by_qid[q.query_id] = entry
        self._queries = {q.query_id: q for q in queries}
        return queries

    def record_answer_pending(self, answer: QueryAnswer) -> None:
        """Account an answer as soon as it arrives (interactive mode)."""
        record_query(self.ledger, answer)

    def apply_round(self, answers: dict[str, QueryAnswer],
                    ledger_recorded: bool = False) -> None:
        """Expand all answers (query-id order), account them, checkpoint.

        ledger_recorded marks answers already folded into the ledger via
        record_answer_pending, so they are not counted twice.
        """
        if set(answers) != set(self._queries):
            missing = set(self._queries) - set(answers)
            raise InvalidAnswer(f"answers missing for {sorted(missing)[:5]}")

        entry_by_qid = self._entry_by_qid
        expanded_this_run: dict[str, set[int]] = self.corrected_segments
        round_records = []
        for qid in sorted(answers):
            query = self._queries[qid]
            answer = answers[qid]
            entry = entry_by_qid[qid]
            iid = query.pixel.image_id
            relabeled = expand_label(
                answer, query, entry.segment, self.probs[iid], self.config.epsilon,
                self.working[iid], expanded_this_run[iid],
                self.config.expand_confirmed)
            mask = self.touched[iid]
            for ref in relabeled:
                mask[ref.y, ref.x] = True
            mask[query.pixel.y, query.pixel.x] = True
            if not ledger_recorded:
                record_query(self.ledger, answer)
            round_records.append(query_record(query, answer, self.dataset.num_classes))

        self.query_log.extend(round_records)
        self._write_round_artifacts(round_records)
        self.refresh_predictions()

    def _write_round_artifacts(self, round_records: list[dict]) -> None:
        t = self.round_index
        round_dir = self._round_dir(t)
        labels_dir = round_dir / "labels"
        touched_dir = round_dir / "touched"
        labels_dir.mkdir(parents=True, exist_ok=True)
        touched_dir.mkdir(parents=True, exist_ok=True)

        label_paths, touched_paths = {}, {}
        for iid in self.dataset.image_ids:
            lp = labels_dir / f"{iid}.alct"
            tensor_io.write_tensor(lp, self.working[iid].data.astype("<u2"))
            label_paths[iid] = str(lp.relative_to(self.out_dir))
            tp = touched_dir / f"{iid}.alct"
            tensor_io.write_tensor(tp, self.touched[iid].astype("<u1"))
            touched_paths[iid] = str(tp.relative_to(self.out_dir))

        (round_dir / "scores.csv").write_text(getattr(self, "_scores_csv", ""),
                                              encoding="utf-8")

        state = RoundState(
            round_index=t,
            ledger=self.ledger,
            corrected={iid: sorted(segs) for iid, segs in self.corrected_segments.items()},
            batch=[{"query_id": q.query_id, "image_id": q.pixel.image_id,
                    "x": q.pixel.x, "y": q.pixel.y, "segment_id": q.segment_id,
                    "pseudo_label": q.pseudo_label}
                   for q in sorted(self._queries.values(), key=lambda q: q.query_id)],
            scores=self._pool_scores,
            label_paths=label_paths,
            touched_paths=touched_paths,
        )
        state.save(round_dir / "state.json")

        with (self.out_dir / "queries.jsonl").open("a", encoding="utf-8") as fh:
            for record in round_records:
                fh.write(json.dumps(record) + "\n")

        metrics = self.round_metrics()
        (round_dir / "metrics.json").write_text(
            json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    # -- reporting ------------------------------------------------------------

    def round_metrics(self) -> dict:
        ds = self.dataset
        out: dict = {
            "round": self.round_index,
            "clicks": self.ledger.clicks_spent,
            "bits": self.ledger.bits_spent,
        }
        hist = corrected_class_histogram(self.query_log)
        out["corrected_histogram"] = {
            ds.manifest.class_names[c]: n for c, n in sorted(hist.items())
        }
        if set(ds.gt) != set(ds.images):
            out.update({"precision": None, "recall": None, "f1": None,
                        "data_accuracy": None, "data_miou": None, "per_class_iou": {}})
            return out

        tp = fp = mislabeled = 0
        ignore = ds.ignore_id
        for iid in ds.image_ids:
            p, g = ds.pseudo[iid].data, ds.gt[iid].data
            valid = np.ones(p.shape, dtype=bool)
            if ignore is not None:
                valid &= (p != ignore) & (g != ignore)
            wrong = (p != g) & valid
            sel = self.touched[iid] & valid
            tp += int((sel & wrong).sum())
            fp += int((sel & ~wrong).sum())
            mislabeled += int(wrong.sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / mislabeled if mislabeled else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

        iou = dataset_iou_report(self.working, ds.gt, ds.num_classes, ignore)
        out.update({
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "data_accuracy": iou.pixel_accuracy,
            "data_miou": iou.mean_iou,
            "per_class_iou": {ds.manifest.class_names[c]: v
                              for c, v in sorted(iou.per_class_iou.items())},
        })
        return out

    # -- completion -----------------------------------------------------------

    @property
    def finished(self) -> bool:
        return self.round_index >= self.config.rounds

    def finish(self) -> Path:
        """Export the corrected dataset and the per-round summary CSV."""
        final_dir = self.out_dir / "final"
        labels_dir = final_dir / "labels"
        labels_dir.mkdir(parents=True, exist_ok=True)

        manifest = self.dataset.manifest
        images = []
        for entry in manifest.images:
            iid = entry.image_id
            tensor_io.write_tensor(labels_dir / f"{iid}.alct",
                                   self.working[iid].data.astype("<u2"))
            images.append(tensor_io.ImageEntry(
                image_id=iid,
                image_path=str(Path("..") / Path(entry.image_path)),
                pseudo_label_path=f"labels/{iid}.alct",
                superpixel_path=str(Path("..") / Path(entry.superpixel_path)),
                width=entry.width, height=entry.height,
                gt_label_path=str(Path("..") / Path(entry.gt_label_path))
                if entry.gt_label_path else None,
            ))
        out_manifest = tensor_io.DatasetManifest(
            class_names=manifest.class_names, ignore_id=manifest.ignore_id,
            images=images, root=final_dir,
            corrected_segments={iid: sorted(s) for iid, s in
                                self.corrected_segments.items() if s},
        )
        tensor_io.save_manifest(final_dir / "manifest.json", out_manifest)

        self._write_metrics_csv()
        return final_dir

    def _write_metrics_csv(self) -> None:
        rows = []
        for t in range(1, self.round_index + 1):
            path = self._round_dir(t) / "metrics.json"
            if path.exists():
                rows.append(json.loads(path.read_text(encoding="utf-8")))
        if not rows:
            return
        fields = ["round", "clicks", "bits", "precision", "recall", "f1",
                  "data_accuracy", "data_miou"]
        with (self.out_dir / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: row.get(k) for k in fields})

    # -- resume -----------------------------------------------------------------

    @classmethod
    def resume(cls, dataset: Dataset, config: LoopConfig, out_dir: str | Path,
               ) -> "CorrectionRun":
        """Reload the latest checkpoint and refresh predictions from it."""
        run = cls(dataset, config, out_dir)
        rounds_dir = run.out_dir / "rounds"
        states = sorted(rounds_dir.glob("round_*/state.json")) if rounds_dir.is_dir() else []
        if not states:
            run.warm_start()
            return run

        state = RoundState.load(states[-1], dataset.num_classes)
        run.round_index = state.round_index
        run.ledger = state.ledger
        run.corrected_segments = {iid: set(state.corrected.get(iid, []))
                                  for iid in dataset.images}
        for iid, rel in state.label_paths.items():
            run.working[iid] = LabelMap(iid, "corrected",
                                        tensor_io.read_tensor(run.out_dir / rel))
        for iid, rel in state.touched_paths.items():
            run.touched[iid] = tensor_io.read_tensor(run.out_dir / rel).astype(bool)
        log_path = run.out_dir / "queries.jsonl"
        if log_path.exists():
            run.query_log = [json.loads(line) for line in
                             log_path.read_text(encoding="utf-8").splitlines() if line]
        run.refresh_predictions()
        return run


def run_simulation(dataset: Dataset, config: LoopConfig, out_dir: str | Path,
                   resume: bool = False) -> CorrectionRun:
    """Execute the full loop against the simulated oracle."""
    if config.oracle is None:
        raise ValueError("simulation requires an oracle config")
    if set(dataset.gt) != set(dataset.images):
        raise MissingGroundTruth("simulation needs ground truth for every image")

    if resume:
        run = CorrectionRun.resume(dataset, config, out_dir)
    else:
        run = CorrectionRun(dataset, config, out_dir)
        run.warm_start()

    while not run.finished:
        queries = run.begin_round()
        if not queries:
            break
        rng = np.random.default_rng([config.oracle.seed, run.round_index])
        answers = {
            q.query_id: simulated_answer(q, dataset.gt[q.pixel.image_id],
                                         config.oracle, rng, dataset.num_classes,
                                         dataset.ignore_id)
            for q in queries
        }
        run.apply_round(answers)
    run.finish()
    return run
