"""HTTP vetting service over a dataset manifest.

Review decisions use optimistic concurrency: each record carries a version,
a decision names the version it was made against, and a mismatch is
rejected so two reviewers cannot silently overwrite each other. Every
accepted decision is appended to a JSONL audit log; replaying that log over
the starting manifest reproduces the final manifest exactly.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel
from scipy import ndimage

from .annotation import binarize_label
from .datamodel import (
    AggregatedLabel,
    DatasetManifest,
    LabelSource,
    ManifestError,
    ManifestRecord,
    ScoreMap,
    TextLabel,
    VoteRecord,
)
from .io import encode_png, load_image, manifest_bytes, read_score_map, score_map_path

VALID_STATUSES = ("pending", "ambiguous", "resolved")
BOX_THRESHOLD = 0.8


class DecisionAction(str, Enum):
    ACCEPT = "accept"
    RELABEL = "relabel"
    REJECT_FOR_REANNOTATION = "reject_for_reannotation"


# Module scope: with postponed annotation evaluation the route handler's
# annotation is the string "DecisionRequest", which the framework can only
# resolve against this module's globals.
class DecisionRequest(BaseModel):
    action: str
    prior_version: int
    label: Optional[str] = None
    reviewer: str = ""


@dataclass(frozen=True)
class ReviewDecision:
    """One reviewer verdict against a specific record version."""

    image_id: str
    action: DecisionAction
    label: Optional[TextLabel] = None
    reviewer: str = ""
    prior_version: int = 0

    def __post_init__(self) -> None:
        if self.action is DecisionAction.RELABEL and self.label is None:
            raise ValueError("relabel decisions must carry a four-class label")


class VersionConflictError(ValueError):
    """Raised when a decision targets a stale record version."""

    def __init__(self, image_id: str, expected: int, current: int):
        super().__init__(
            f"record {image_id!r}: decision made against version {expected}, "
            f"current version is {current}"
        )
        self.image_id = image_id
        self.expected = expected
        self.current = current


def apply_decision(
    record: ManifestRecord, decision: ReviewDecision
) -> Tuple[ManifestRecord, Dict[str, Any]]:
    """Apply one review decision, returning the new record and audit entry.

    Relabeling keeps the vote tallies, so agreement statistics still count
    the example the way the crowd scored it, while the label itself comes
    from manual review. Accepting requires a resolved label; rejecting
    flags the record for re-annotation without touching its label state.
    """
    if decision.image_id != record.image_id:
        raise ValueError(
            f"decision for {decision.image_id!r} applied to record {record.image_id!r}"
        )
    if decision.prior_version != record.version:
        raise VersionConflictError(record.image_id, decision.prior_version, record.version)
    if decision.action is DecisionAction.RELABEL:
        if record.aggregated is not None:
            aggregated = replace(
                record.aggregated,
                label=decision.label,
                ambiguous=False,
                source=LabelSource.MANUAL_REVIEW,
            )
        else:
            aggregated = AggregatedLabel(
                image_id=record.image_id,
                label=decision.label,
                votes_for_winner=0,
                total_votes=0,
                ambiguous=False,
                source=LabelSource.MANUAL_REVIEW,
            )
        updated = replace(
            record,
            aggregated=aggregated,
            binary_class=binarize_label(decision.label),
            needs_reannotation=False,
            version=record.version + 1,
        )
    elif decision.action is DecisionAction.ACCEPT:
        if record.aggregated is None or not record.aggregated.resolved:
            raise ValueError(
                f"record {record.image_id!r} has no resolved label to accept"
            )
        aggregated = replace(record.aggregated, source=LabelSource.MANUAL_REVIEW)
        updated = replace(
            record,
            aggregated=aggregated,
            binary_class=binarize_label(aggregated.label),
            needs_reannotation=False,
            version=record.version + 1,
        )
    else:
        updated = replace(record, needs_reannotation=True, version=record.version + 1)
    entry: Dict[str, Any] = {
        "image_id": record.image_id,
        "action": decision.action.value,
        "reviewer": decision.reviewer,
        "prev_version": record.version,
        "new_version": updated.version,
    }
    if decision.label is not None:
        entry["label"] = decision.label.value
    return updated, entry


def decision_from_entry(entry: Dict[str, Any]) -> ReviewDecision:
    label = entry.get("label")
    return ReviewDecision(
        image_id=entry["image_id"],
        action=DecisionAction(entry["action"]),
        label=TextLabel.parse(label) if label is not None else None,
        reviewer=entry.get("reviewer", ""),
        prior_version=int(entry["prev_version"]),
    )


def replay_audit(
    manifest: DatasetManifest, entries: Iterable[Dict[str, Any]]
) -> DatasetManifest:
    """Re-apply an audit log to a starting manifest."""
    out = manifest.copy()
    for entry in entries:
        # manifest lookup raises ManifestError when the id is unknown
        record = out.get(entry["image_id"])
        updated, _ = apply_decision(record, decision_from_entry(entry))
        out.replace_record(updated)
    return out


def read_audit_log(path: Union[str, Path]) -> List[Dict[str, Any]]:
    entries = []
    p = Path(path)
    if not p.exists():
        return entries
    for line in p.read_text().splitlines():
        if line.strip():
            entries.append(json.loads(line))
    return entries


def candidate_boxes(
    score_map: ScoreMap, threshold: float = BOX_THRESHOLD, min_cells: int = 1
) -> List[Tuple[int, int, int, int]]:
    """Connected high-response region components as image-space boxes.

    Components of the region channel above ``threshold`` become
    (x0, y0, x1, y1) rectangles, doubled back to image coordinates.
    """
    mask = score_map.region > threshold
    labeled, _ = ndimage.label(mask)
    boxes = []
    for sl in ndimage.find_objects(labeled):
        if sl is None:
            continue
        ys, xs = sl
        if (ys.stop - ys.start) * (xs.stop - xs.start) < min_cells:
            continue
        boxes.append((xs.start * 2, ys.start * 2, xs.stop * 2, ys.stop * 2))
    boxes.sort()
    return boxes


def render_example_png(
    image: np.ndarray, boxes: Optional[Sequence[Tuple[int, int, int, int]]] = None
) -> bytes:
    import cv2

    arr = (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    if boxes:
        arr = arr.copy()
        for x0, y0, x1, y1 in boxes:
            cv2.rectangle(arr, (x0, y0), (max(x1 - 1, x0), max(y1 - 1, y0)), (0, 255, 0), 1)
    return encode_png(arr)


@dataclass
class VettingState:
    """Mutable server state: the manifest plus its backing files."""

    manifest: DatasetManifest
    manifest_path: Path
    images_root: Path
    maps_dir: Optional[Path] = None
    audit_path: Optional[Path] = None
    votes: Dict[str, List[VoteRecord]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.lock = threading.Lock()

    def persist(self, entry: Dict[str, Any]) -> None:
        tmp = self.manifest_path.with_suffix(self.manifest_path.suffix + ".tmp")
        tmp.write_bytes(manifest_bytes(self.manifest))
        os.replace(tmp, self.manifest_path)
        if self.audit_path is not None:
            stamped = dict(entry)
            stamped["ts"] = time.time()
            with self.audit_path.open("a") as fh:
                fh.write(json.dumps(stamped, separators=(",", ":")) + "\n")

    def boxes_for(self, image_id: str) -> Optional[List[Tuple[int, int, int, int]]]:
        if self.maps_dir is None:
            return None
        map_file = score_map_path(self.maps_dir, image_id)
        if not map_file.exists():
            return None
        return candidate_boxes(read_score_map(map_file))

    def record_payload(self, record: ManifestRecord, detail: bool = False) -> Dict[str, Any]:
        payload = record.to_dict()
        payload["status"] = record.status
        payload["version"] = record.version
        if detail:
            boxes = self.boxes_for(record.image_id)
            payload["boxes"] = [list(b) for b in boxes] if boxes is not None else []
            payload["votes"] = [
                {
                    "worker_id": v.worker_id,
                    "label": v.label.value,
                    "vote_time_s": v.vote_time_s,
                    "batch": v.batch,
                }
                for v in self.votes.get(record.image_id, [])
            ]
        return payload


def create_app(state: VettingState):
    from fastapi import FastAPI, HTTPException, Query, Response
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="overlay-text vetting service")
    app.state.vetting = state
    # The review UI is a static page that may be served from another origin.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["GET", "POST"],
        allow_headers=["*"],
    )

    def _get_record(image_id: str) -> ManifestRecord:
        try:
            return state.manifest.get(image_id)
        except ManifestError:
            raise HTTPException(status_code=404, detail=f"unknown image_id {image_id!r}")

    @app.get("/api/examples")
    def list_examples(
        status: Optional[str] = Query(default=None),
        page: int = Query(default=1, ge=1),
        page_size: int = Query(default=50, ge=1, le=500),
    ):
        if status is not None and status not in VALID_STATUSES:
            raise HTTPException(
                status_code=422,
                detail=f"status must be one of {list(VALID_STATUSES)}",
            )
        with state.lock:
            records = sorted(
                (r for r in state.manifest if status is None or r.status == status),
                key=lambda r: r.image_id,
            )
            start = (page - 1) * page_size
            items = [state.record_payload(r) for r in records[start : start + page_size]]
            return {
                "total": len(records),
                "page": page,
                "page_size": page_size,
                "items": items,
            }

    @app.get("/api/examples/{image_id}")
    def get_example(image_id: str):
        with state.lock:
            return state.record_payload(_get_record(image_id), detail=True)

    @app.get("/api/examples/{image_id}/image")
    def get_example_image(image_id: str, boxes: int = Query(default=0)):
        with state.lock:
            record = _get_record(image_id)
            image_file = state.images_root / record.image_path
            if not image_file.exists():
                raise HTTPException(
                    status_code=404, detail=f"image file missing for {image_id!r}"
                )
            image = load_image(image_file)
            box_list = None
            if boxes:
                box_list = state.boxes_for(image_id)
                if box_list is None:
                    raise HTTPException(
                        status_code=404, detail=f"no score map for {image_id!r}"
                    )
            return Response(
                content=render_example_png(image, box_list), media_type="image/png"
            )

    @app.post("/api/examples/{image_id}/decision")
    def post_decision(image_id: str, body: DecisionRequest):
        with state.lock:
            record = _get_record(image_id)
            try:
                decision = ReviewDecision(
                    image_id=image_id,
                    action=DecisionAction(body.action),
                    label=TextLabel.parse(body.label) if body.label is not None else None,
                    reviewer=body.reviewer,
                    prior_version=body.prior_version,
                )
                updated, entry = apply_decision(record, decision)
            except VersionConflictError as err:
                raise HTTPException(
                    status_code=409,
                    detail={"message": str(err), "current_version": err.current},
                )
            except ValueError as err:
                raise HTTPException(status_code=422, detail=str(err))
            state.manifest.replace_record(updated)
            state.persist(entry)
            return state.record_payload(updated)

    return app


def load_state(
    manifest_path: Union[str, Path],
    images_root: Optional[Union[str, Path]] = None,
    maps_dir: Optional[Union[str, Path]] = None,
    audit_path: Optional[Union[str, Path]] = None,
    votes_path: Optional[Union[str, Path]] = None,
) -> VettingState:
    from .io import read_manifest, read_votes

    manifest_path = Path(manifest_path)
    root = Path(images_root) if images_root is not None else manifest_path.parent
    votes: Dict[str, List[VoteRecord]] = {}
    if votes_path is not None and Path(votes_path).exists():
        for vote in read_votes(votes_path):
            votes.setdefault(vote.image_id, []).append(vote)
    return VettingState(
        manifest=read_manifest(manifest_path),
        manifest_path=manifest_path,
        images_root=root,
        maps_dir=Path(maps_dir) if maps_dir is not None else None,
        audit_path=Path(audit_path) if audit_path is not None else None,
        votes=votes,
    )
