"""Joint training loop and per-group orchestration."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .config import TrainConfig
from .corpus import Strategy, group_records, load_manifest
from .cpo import NormalDurationTable
from .data import Example, collate, iterate_batches, prepare_examples
from .model import LOSS_KEYS, DarsModel

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """A loss became non-finite; the last good checkpoint was written before raising."""


@dataclass
class TrainResult:
    group_key: str
    model: DarsModel
    log: list[dict] = field(default_factory=list)
    checkpoint_dir: Path | None = None


def pause_accuracy(model: DarsModel, examples: list[Example], batch_size: int = 32) -> float:
    if not model.cfg.rhythm_on or not examples:
        return 0.0
    correct = total = 0
    with torch.no_grad():
        for start in range(0, len(examples), batch_size):
            batch = collate(examples[start : start + batch_size])
            enc = model.rhythm.encode_phonemes(batch.tokens, batch.token_mask, batch.speakers)
            pred = model.rhythm.predict_pauses(enc).classes()
            m = batch.token_mask
            correct += int(((pred == batch.pause_classes) & m).sum())
            total += int(m.sum())
    return correct / max(total, 1)


def train_group(cfg: TrainConfig, records, normal_table: NormalDurationTable | None = None,
                out_dir=None, group_key: str = "all") -> TrainResult:
    """Train one model on ``records`` (train split); ``valid`` records drive the CPO warm-up."""
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(max(1, cfg.num_threads))
    train_recs = [r for r in records if r.split == "train"] or list(records)
    valid_recs = [r for r in records if r.split == "valid"]
    speakers = sorted({r.speaker_id for r in records})
    index = {s: i for i, s in enumerate(speakers)}
    if cfg.cpo_on and normal_table is None:
        raise ValueError("CPO is enabled but no normal-duration table was supplied")
    prep = dict(thresholds_s=cfg.pause_thresholds_s, frame_shift_s=cfg.frame_shift_s, normal_table=normal_table)
    train_ex = prepare_examples(train_recs, index, **prep)
    valid_ex = prepare_examples(valid_recs, index, **prep) if valid_recs else train_ex

    model = DarsModel(cfg, speakers)
    optim = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    cpo_active = False
    history: list[dict] = []
    last_good = copy.deepcopy(model.state_dict())
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        for batch in iterate_batches(train_ex, cfg.batch_size, gen):
            parts = model.losses(batch, cpo_active=cpo_active, generator=gen)
            total = parts["total"]
            if not math.isfinite(total.item()):
                model.load_state_dict(last_good)
                if out_dir is not None:
                    _finish(model, train_ex, cfg, out_dir, history)
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch} step {step}")
            optim.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optim.step()
            entry = {"step": step, "epoch": epoch, "cpo_active": cpo_active}
            entry.update({k: parts[k].item() for k in LOSS_KEYS})
            entry["total"] = total.item()
            history.append(entry)
            step += 1
        last_good = copy.deepcopy(model.state_dict())
        if cfg.cpo_on and not cpo_active:
            model.eval()
            acc = pause_accuracy(model, valid_ex)
            if acc >= cfg.cpo_warmup_accuracy:
                cpo_active = True
                log.info("epoch %d: pause accuracy %.3f, enabling CPO loss", epoch, acc)

    model.eval()
    result = TrainResult(group_key, model, history)
    _finish(model, train_ex, cfg, out_dir, history)
    if out_dir is not None:
        result.checkpoint_dir = Path(out_dir)
    return result


def _finish(model, train_ex, cfg, out_dir, history):
    model.refresh_style_cache(iterate_batches(train_ex, cfg.batch_size, shuffle=False))
    if out_dir is None:
        return
    out_dir = Path(out_dir)
    model.save(out_dir)
    with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry) + "\n")


def default_normal_table(manifest_path) -> NormalDurationTable | None:
    path = Path(manifest_path).parent / "normal_table.txt"
    return NormalDurationTable.from_file(path) if path.exists() else None


def train(cfg: TrainConfig, manifest, strategy=None, out_dir=None,
          normal_table: NormalDurationTable | None = None) -> dict[str, TrainResult]:
    """Train one model per training group of the chosen strategy."""
    records = load_manifest(manifest) if isinstance(manifest, (str, Path)) else list(manifest)
    if normal_table is None and isinstance(manifest, (str, Path)):
        normal_table = default_normal_table(manifest)
    strategy = Strategy.parse(strategy or cfg.strategy)
    results = {}
    for group in group_records(records, strategy):
        sub = None if out_dir is None else Path(out_dir) / group.group_key
        log.info("training %s group %s on %d records", strategy.value, group.group_key, len(group.records))
        results[group.group_key] = train_group(cfg, group.records, normal_table, sub, group.group_key)
    return results
