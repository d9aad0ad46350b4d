"""HTTP service for listening-test campaigns.

Endpoints (JSON unless noted):

  POST /campaigns
      {"id"?, "type": "preference"|"transcription", "instructions"?,
       "seed"?, "open"?, "items": [...]}
      preference item: {"id", "systems": [{"label", "audio"}, {"label", "audio"}]}
      transcription item: {"id", "audio", "reference"}
  GET  /campaigns/{cid}/next?session=SESSION
      -> {"done": bool, "task"?: {...}} ; re-requesting without answering
      re-issues the same task.
  POST /responses        {"task_id", "answer"}
  GET  /campaigns/{cid}/results
  GET  /audio/{ref}      audio file, HTTP Range supported

State is a directory: campaigns/*.json plus append-only tasks.jsonl and
responses.jsonl; replaying them after a restart reconstructs identical
results. Presentation order (which system plays as "A") is decided and
persisted when a task is first issued, and never leaks to the client.
"""

from __future__ import annotations

import json
import random
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .evalkit import LENIENT_PROFILE, PreferenceVote, cer, tally_preferences

PREFERENCE_ANSWERS = {"A": "A", "B": "B", "same": "same", "No difference": "same"}
DEFAULT_PREFERENCE_INSTRUCTIONS = (
    "Listen to the two audio clips below and select the one you prefer."
)
DEFAULT_TRANSCRIPTION_INSTRUCTIONS = "Listen to the audio clip and type what you hear."


class CampaignPayload(BaseModel):
    id: str | None = None
    type: str
    instructions: str | None = None
    seed: int = 0
    open: bool = True
    items: list[dict]


class ResponsePayload(BaseModel):
    task_id: str
    answer: str


@dataclass
class Campaign:
    campaign_id: str
    type: str
    instructions: str
    seed: int
    open: bool
    items: list[dict]

    @property
    def item_ids(self) -> list[str]:
        return [item["id"] for item in self.items]


@dataclass
class ListenStore:
    """Campaign definitions plus append-only task and response logs."""

    data_dir: Path
    audio_dir: Path
    campaigns: dict[str, Campaign] = field(default_factory=dict)
    tasks: dict[str, dict] = field(default_factory=dict)
    responses: dict[str, dict] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)
        self.audio_dir = Path(self.audio_dir)
        (self.data_dir / "campaigns").mkdir(parents=True, exist_ok=True)
        self._replay()

    # -- persistence ------------------------------------------------------

    def _replay(self):
        for path in sorted((self.data_dir / "campaigns").glob("*.json")):
            payload = json.loads(path.read_text(encoding="utf-8"))
            campaign = Campaign(
                campaign_id=payload["id"],
                type=payload["type"],
                instructions=payload["instructions"],
                seed=payload["seed"],
                open=payload["open"],
                items=payload["items"],
            )
            self.campaigns[campaign.campaign_id] = campaign
        tasks_file = self.data_dir / "tasks.jsonl"
        if tasks_file.exists():
            for line in tasks_file.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    record = json.loads(line)
                    self.tasks[record["task_id"]] = record
        responses_file = self.data_dir / "responses.jsonl"
        if responses_file.exists():
            for line in responses_file.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    record = json.loads(line)
                    self.responses.setdefault(record["task_id"], record)

    def _append(self, filename: str, record: dict):
        with (self.data_dir / filename).open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, sort_keys=True) + "\n")

    # -- campaign lifecycle ------------------------------------------------

    def create_campaign(self, payload: CampaignPayload) -> Campaign:
        if payload.type not in ("preference", "transcription"):
            raise ValueError(f"unknown campaign type {payload.type!r}")
        if not payload.items:
            raise ValueError("campaign needs at least one item")
        seen_items = set()
        for item in payload.items:
            item_id = item.get("id")
            if not item_id:
                raise ValueError("every item needs an id")
            if item_id in seen_items:
                raise ValueError(f"duplicate item id {item_id!r}")
            seen_items.add(item_id)
            if payload.type == "preference":
                systems = item.get("systems") or []
                if len(systems) != 2:
                    raise ValueError(f"item {item_id!r}: exactly two systems required")
                labels = {s.get("label") for s in systems}
                if len(labels) != 2 or None in labels:
                    raise ValueError(f"item {item_id!r}: system labels must be distinct")
                refs = [s.get("audio") for s in systems]
            else:
                if not item.get("reference"):
                    raise ValueError(f"item {item_id!r}: reference text required")
                refs = [item.get("audio")]
            for ref in refs:
                if not ref:
                    raise ValueError(f"item {item_id!r}: audio reference missing")
                if not self._audio_path(ref).exists():
                    raise ValueError(f"item {item_id!r}: audio {ref!r} not found")

        campaign_id = payload.id or uuid.uuid4().hex
        if campaign_id in self.campaigns:
            raise ValueError(f"campaign {campaign_id!r} already exists")
        instructions = payload.instructions or (
            DEFAULT_PREFERENCE_INSTRUCTIONS
            if payload.type == "preference"
            else DEFAULT_TRANSCRIPTION_INSTRUCTIONS
        )
        campaign = Campaign(
            campaign_id=campaign_id,
            type=payload.type,
            instructions=instructions,
            seed=payload.seed,
            open=payload.open,
            items=payload.items,
        )
        with self.lock:
            self.campaigns[campaign_id] = campaign
            path = self.data_dir / "campaigns" / f"{campaign_id}.json"
            path.write_text(
                json.dumps(
                    {
                        "id": campaign_id,
                        "type": campaign.type,
                        "instructions": campaign.instructions,
                        "seed": campaign.seed,
                        "open": campaign.open,
                        "items": campaign.items,
                    },
                    indent=1,
                    sort_keys=True,
                ),
                encoding="utf-8",
            )
        return campaign

    def _audio_path(self, ref: str) -> Path:
        path = (self.audio_dir / ref).resolve()
        if not str(path).startswith(str(self.audio_dir.resolve())):
            raise ValueError(f"audio ref {ref!r} escapes the audio directory")
        return path

    # -- task issuance -----------------------------------------------------

    def _session_order(self, campaign: Campaign, session: str) -> list[str]:
        order = list(campaign.item_ids)
        random.Random(f"{campaign.seed}:{campaign.campaign_id}:{session}").shuffle(order)
        return order

    def next_task(self, campaign_id: str, session: str) -> dict | None:
        campaign = self.campaigns.get(campaign_id)
        if campaign is None:
            raise KeyError(campaign_id)
        if not campaign.open:
            raise PermissionError(f"campaign {campaign_id!r} is closed")
        with self.lock:
            answered = {
                self.tasks[task_id]["item_id"]
                for task_id in self.responses
                if task_id in self.tasks
                and self.tasks[task_id]["campaign_id"] == campaign_id
                and self.tasks[task_id]["session"] == session
            }
            for item_id in self._session_order(campaign, session):
                if item_id in answered:
                    continue
                task_id = f"{campaign_id}:{session}:{item_id}"
                record = self.tasks.get(task_id)
                if record is None:
                    record = {
                        "task_id": task_id,
                        "campaign_id": campaign_id,
                        "session": session,
                        "item_id": item_id,
                        "issued_at": time.time(),
                    }
                    if campaign.type == "preference":
                        item = next(i for i in campaign.items if i["id"] == item_id)
                        side = random.Random(
                            f"{campaign.seed}:{campaign_id}:{session}:{item_id}"
                        ).randrange(2)
                        record["a_system"] = item["systems"][side]["label"]
                        record["b_system"] = item["systems"][1 - side]["label"]
                        record["a_audio"] = item["systems"][side]["audio"]
                        record["b_audio"] = item["systems"][1 - side]["audio"]
                    self.tasks[task_id] = record
                    self._append("tasks.jsonl", record)
                return record
        return None

    def progress(self, campaign_id: str, session: str) -> tuple[int, int]:
        campaign = self.campaigns[campaign_id]
        answered = sum(
            1
            for task_id in self.responses
            if task_id in self.tasks
            and self.tasks[task_id]["campaign_id"] == campaign_id
            and self.tasks[task_id]["session"] == session
        )
        return answered, len(campaign.items)

    # -- responses ---------------------------------------------------------

    def submit_response(self, task_id: str, answer: str) -> dict:
        task = self.tasks.get(task_id)
        if task is None:
            raise KeyError(task_id)
        campaign = self.campaigns[task["campaign_id"]]
        if campaign.type == "preference":
            canonical = PREFERENCE_ANSWERS.get(answer)
            if canonical is None:
                raise ValueError(
                    f"answer {answer!r} not in A / B / same / No difference"
                )
        else:
            if not answer.strip():
                raise ValueError("transcription answer is empty")
            canonical = answer
        with self.lock:
            if task_id in self.responses:
                raise FileExistsError(task_id)
            record = {
                "task_id": task_id,
                "answer": canonical,
                "received_at": time.time(),
            }
            self.responses[task_id] = record
            self._append("responses.jsonl", record)
        return record

    # -- results -----------------------------------------------------------

    def results(self, campaign_id: str) -> dict:
        campaign = self.campaigns.get(campaign_id)
        if campaign is None:
            raise KeyError(campaign_id)
        answered = [
            (self.tasks[task_id], response)
            for task_id, response in self.responses.items()
            if task_id in self.tasks
            and self.tasks[task_id]["campaign_id"] == campaign_id
        ]
        answered.sort(key=lambda pair: pair[0]["task_id"])

        if campaign.type == "preference":
            votes = [
                PreferenceVote(
                    evaluator=task["session"],
                    system_a=task["a_system"],
                    system_b=task["b_system"],
                    choice=response["answer"],
                )
                for task, response in answered
            ]
            tally = tally_preferences(votes)
            return {
                "campaign_id": campaign_id,
                "type": "preference",
                "response_count": tally.response_count,
                "system_counts": dict(sorted(tally.system_counts.items())),
                "same_count": tally.same_count,
                "per_evaluator": {
                    evaluator: dict(sorted(row.items()))
                    for evaluator, row in sorted(tally.per_evaluator.items())
                },
                "winner": tally.winner,
            }

        references = {item["id"]: item["reference"] for item in campaign.items}
        per_item = []
        per_evaluator: dict[str, list] = {}
        for task, response in answered:
            reference = references[task["item_id"]]
            strict = cer(reference, response["answer"])
            lenient = cer(reference, response["answer"], LENIENT_PROFILE)
            row = {
                "item_id": task["item_id"],
                "session": task["session"],
                "strict_cer": round(strict.cer, 6),
                "lenient_cer": round(lenient.cer, 6),
            }
            per_item.append(row)
            per_evaluator.setdefault(task["session"], []).append(row)
        def mean(rows, key):
            return round(sum(r[key] for r in rows) / len(rows), 6) if rows else None
        return {
            "campaign_id": campaign_id,
            "type": "transcription",
            "response_count": len(per_item),
            "per_item": per_item,
            "mean_strict_cer": mean(per_item, "strict_cer"),
            "mean_lenient_cer": mean(per_item, "lenient_cer"),
            "per_evaluator": {
                session: {
                    "strict_cer": mean(rows, "strict_cer"),
                    "lenient_cer": mean(rows, "lenient_cer"),
                    "responses": len(rows),
                }
                for session, rows in sorted(per_evaluator.items())
            },
        }

    def audit(self) -> list[str]:
        """Responses that do not join to an issued task (always empty when
        writes go through submit_response)."""
        return sorted(task_id for task_id in self.responses if task_id not in self.tasks)


def _task_view(store: ListenStore, campaign: Campaign, record: dict) -> dict:
    done, total = store.progress(campaign.campaign_id, record["session"])
    view = {
        "task_id": record["task_id"],
        "campaign_id": campaign.campaign_id,
        "item_id": record["item_id"],
        "type": campaign.type,
        "instructions": campaign.instructions,
        "progress": {"done": done, "total": total},
    }
    if campaign.type == "preference":
        view["audio"] = {
            "a": f"/audio/{record['a_audio']}",
            "b": f"/audio/{record['b_audio']}",
        }
    else:
        item = next(i for i in campaign.items if i["id"] == record["item_id"])
        view["audio"] = {"single": f"/audio/{item['audio']}"}
    return view


def create_app(data_dir, audio_dir, ui_dir=None) -> FastAPI:
    store = ListenStore(data_dir=Path(data_dir), audio_dir=Path(audio_dir))
    app = FastAPI(title="voxkit listening tests")
    app.state.store = store

    @app.post("/campaigns")
    def create_campaign(payload: CampaignPayload):
        try:
            campaign = store.create_campaign(payload)
        except ValueError as err:
            raise HTTPException(status_code=400, detail=str(err))
        return {"campaign_id": campaign.campaign_id, "item_count": len(campaign.items)}

    @app.get("/campaigns/{campaign_id}/next")
    def next_task(campaign_id: str, session: str = Query(min_length=1)):
        try:
            record = store.next_task(campaign_id, session)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no campaign {campaign_id!r}")
        except PermissionError as err:
            raise HTTPException(status_code=409, detail=str(err))
        if record is None:
            done, total = store.progress(campaign_id, session)
            return {"done": True, "progress": {"done": done, "total": total}}
        campaign = store.campaigns[campaign_id]
        return {"done": False, "task": _task_view(store, campaign, record)}

    @app.post("/responses")
    def submit_response(payload: ResponsePayload):
        try:
            store.submit_response(payload.task_id, payload.answer)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no task {payload.task_id!r}")
        except FileExistsError:
            raise HTTPException(status_code=409, detail="task already answered")
        except ValueError as err:
            raise HTTPException(status_code=400, detail=str(err))
        return {"status": "stored"}

    @app.get("/campaigns/{campaign_id}/results")
    def results(campaign_id: str):
        try:
            return JSONResponse(store.results(campaign_id))
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no campaign {campaign_id!r}")

    @app.get("/audio/{ref:path}")
    def audio(ref: str, request: Request):
        try:
            path = store._audio_path(ref)
        except ValueError:
            raise HTTPException(status_code=403, detail="bad audio reference")
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"no audio {ref!r}")
        data = path.read_bytes()
        range_header = request.headers.get("range")
        if range_header and range_header.startswith("bytes="):
            start_s, _, end_s = range_header[len("bytes="):].partition("-")
            try:
                start = int(start_s) if start_s else 0
                end = int(end_s) if end_s else len(data) - 1
            except ValueError:
                raise HTTPException(status_code=416, detail="bad range")
            end = min(end, len(data) - 1)
            if start > end or start >= len(data):
                raise HTTPException(status_code=416, detail="range out of bounds")
            return Response(
                content=data[start : end + 1],
                status_code=206,
                media_type="audio/wav",
                headers={
                    "Content-Range": f"bytes {start}-{end}/{len(data)}",
                    "Accept-Ranges": "bytes",
                },
            )
        return Response(
            content=data,
            media_type="audio/wav",
            headers={"Accept-Ranges": "bytes"},
        )

    if ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
