"""The joint DARS model: rhythm predictor, style encoders, conditional mean and vector field."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .alignment import durations_from_path, monotonic_alignment_search
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .config import TrainConfig, train_config_from_dict, train_config_to_dict
from .cpo import cpo_loss, cpo_weights
from .data import Batch
from .flow import ConditionalMean, UNetField, cfm_loss, euler_sample
from .rhythm import RhythmPredictor, duration_mse, pause_cross_entropy, pad_rows
from .style import SpeakerStyleCache, StyleModule

LOSS_KEYS = ("L_s", "L_d", "L_cp", "L_cfm", "L_prior", "L_vq")


class MissingStyleError(ValueError):
    """No reference mel was given and no cached speaker style exists."""


@dataclass
class Synthesis:
    mel: np.ndarray  # (T', D) float32
    durations: np.ndarray  # frames per augmented position
    pause_classes: np.ndarray


def _masked_mse(a, b, mask):
    m = mask[..., None].to(a.dtype)
    return (((a - b) ** 2) * m).sum() / (m.sum() * a.shape[-1])


class DarsModel(nn.Module):
    def __init__(self, cfg: TrainConfig, speakers):
        super().__init__()
        self.cfg = cfg
        self.speakers = list(speakers)
        rcfg = dataclasses.replace(cfg.rhythm, n_speakers=len(self.speakers))
        self.rhythm = RhythmPredictor(rcfg)
        self.style = StyleModule(cfg.style, rcfg.augmented_hidden)
        self.mean = ConditionalMean(
            rcfg.augmented_hidden, cfg.style.global_dim, cfg.style.local_dim, len(self.speakers), cfg.flow
        )
        self.decoder = UNetField(cfg.flow)
        self.style_cache = SpeakerStyleCache(len(self.speakers), cfg.style.global_dim, cfg.style.codebook_size)

    @property
    def dtype(self):
        return self.mean.proj.weight.dtype

    def speaker_index(self, speaker) -> int:
        if isinstance(speaker, int):
            if not 0 <= speaker < len(self.speakers):
                raise KeyError(f"speaker index {speaker} out of range")
            return speaker
        try:
            return self.speakers.index(speaker)
        except ValueError:
            raise KeyError(f"speaker {speaker!r} not in this checkpoint ({', '.join(self.speakers)})") from None

    # ------------------------------------------------------------ shared forward

    def encode(self, tokens, mask, speakers, classes=None):
        """Run the rhythm stack. ``classes=None`` means predicted (argmax) pause insertion."""
        enc = self.rhythm.encode_phonemes(tokens, mask, speakers)
        pauses = self.rhythm.predict_pauses(enc) if self.cfg.rhythm_on else None
        if not self.cfg.rhythm_on:
            classes = torch.zeros_like(enc.mask, dtype=torch.long)
        elif classes is None:
            classes = pauses.classes()
        aug = self.rhythm.insert_pause_embeddings(enc, classes)
        hidden = self.rhythm.encode_augmented(aug)
        log_d = self.rhythm.predict_durations(hidden)
        return enc, pauses, classes, hidden, log_d

    def style_vectors(self, mel, mel_mask, hidden):
        if not self.cfg.style_on:
            return None, None, mel.new_zeros(()), None
        global_style = self.style.global_style(mel, mel_mask)
        local, vq_loss = self.style.local_style_encode(mel, mel_mask)
        aligned = self.style.align_local_style(local, hidden.hidden, hidden.mask)
        return global_style, aligned, vq_loss, local

    def mas_durations(self, hidden, mel, mel_mask, global_style, local_style, speakers):
        with torch.no_grad():
            fused = self.mean.fused(hidden.hidden, hidden.mask, global_style, local_style, speakers)
            token_means = self.mean.proj(fused)
            out = []
            for b, n in enumerate(hidden.lengths):
                t = int(mel_mask[b].sum())
                x = mel[b, :t].double()
                mu = token_means[b, :n].double()
                log_lik = -0.5 * ((mu[:, None, :] - x[None, :, :]) ** 2).sum(-1)
                path = monotonic_alignment_search(log_lik.numpy())
                out.append(torch.from_numpy(durations_from_path(path, n)))
        return nn.utils.rnn.pad_sequence(out, batch_first=True, padding_value=1)

    # ------------------------------------------------------------ training losses

    def losses(self, batch: Batch, cpo_active: bool = True, generator=None) -> dict[str, torch.Tensor]:
        cfg = self.cfg
        teacher = batch.pause_classes if cfg.rhythm_on else None
        enc, pauses, _, hidden, log_d = self.encode(batch.tokens, batch.token_mask, batch.speakers, teacher)
        mel = batch.mel.to(self.dtype)
        global_style, local_style, vq_loss, _ = self.style_vectors(mel, batch.mel_mask, hidden)

        if cfg.rhythm_on:
            targets = nn.utils.rnn.pad_sequence(batch.augmented_durations, batch_first=True, padding_value=1)
        else:
            targets = batch.merged_durations
        if cfg.duration_source == "mas":
            targets = self.mas_durations(hidden, mel, batch.mel_mask, global_style, local_style, batch.speakers)

        zero = mel.new_zeros(())
        out = dict.fromkeys(LOSS_KEYS, zero)
        out["L_d"] = duration_mse(log_d, targets)
        if cfg.rhythm_on:
            out["L_s"] = pause_cross_entropy(pauses, batch.pause_classes)
        if cfg.cpo_on and cpo_active and batch.normal_log_d is not None:
            rows, _ = pad_rows([torch.tensor(r) for r in hidden.phoneme_rows()])
            rows = rows.long()
            pred = log_d.log_durations.gather(1, rows)
            dys = torch.log(targets.gather(1, rows).to(mel.dtype))
            weights = cpo_weights(pauses.probs.detach(), batch.pause_classes, cfg.cpo)
            normal = batch.normal_log_d.to(mel.dtype)
            out["L_cp"] = cpo_loss(pred, dys, normal, weights, cfg.cpo, mask=batch.token_mask)

        mu, frame_mask = self.mean(hidden.hidden, hidden.mask, targets, global_style, local_style, batch.speakers)
        if mu.shape[1] != mel.shape[1] or not torch.equal(frame_mask, batch.mel_mask):
            raise ValueError("duration targets do not cover the mel frames exactly")
        out["L_prior"] = _masked_mse(mu, mel, frame_mask)
        x1, mu_seg, seg_mask = self._crop(mel, mu, frame_mask, generator)
        out["L_cfm"] = cfm_loss(self.decoder, mu_seg, x1, seg_mask, cfg.otcfm, generator=generator)
        out["L_vq"] = vq_loss
        out["total"] = self.total(out)
        return out

    def total(self, parts):
        c = self.cfg
        lam = {"L_s": c.lambda_s, "L_d": c.lambda_d, "L_cp": c.lambda_cp, "L_cfm": c.lambda_cfm,
               "L_prior": c.lambda_prior, "L_vq": c.lambda_vq}
        return sum(lam[k] * parts[k] for k in LOSS_KEYS)

    def _crop(self, mel, mu, mask, generator):
        seg = min(self.cfg.segment_frames, mel.shape[1])
        lengths = mask.sum(dim=1)
        idx = []
        for b in range(mel.shape[0]):
            hi = max(int(lengths[b]) - seg, 0)
            start = int(torch.randint(0, hi + 1, (1,), generator=generator)) if hi else 0
            idx.append(torch.arange(start, start + seg))
        idx = torch.stack(idx)
        take = lambda x: x.gather(1, idx[..., None].expand(-1, -1, x.shape[-1]))  # noqa: E731
        seg_mask = mask.gather(1, idx)
        return take(mel), take(mu), seg_mask

    # ------------------------------------------------------------ style cache

    @torch.no_grad()
    def refresh_style_cache(self, batches) -> None:
        self.style_cache = SpeakerStyleCache(
            len(self.speakers), self.cfg.style.global_dim, self.cfg.style.codebook_size
        )
        if not self.cfg.style_on:
            return
        for batch in batches:
            mel = batch.mel.to(self.dtype)
            g = self.style.global_style(mel, batch.mel_mask)
            local, _ = self.style.local_style_encode(mel, batch.mel_mask)
            self.style_cache.update(batch.speakers, g, local.indices, local.mask)

    # ------------------------------------------------------------ synthesis

    @torch.no_grad()
    def synthesize(self, tokens, speaker, ref_mel=None, seed: int = 0, n_steps: int | None = None,
                   temperature: float = 1.0) -> Synthesis:
        self.eval()
        spk = torch.tensor([self.speaker_index(speaker)])
        tokens = torch.as_tensor(list(tokens), dtype=torch.long)[None]
        mask = torch.ones_like(tokens, dtype=torch.bool)
        _, _, classes, hidden, log_d = self.encode(tokens, mask, spk, None)
        durations = log_d.frames()

        global_style = local_style = None
        if self.cfg.style_on:
            if ref_mel is not None:
                mel = torch.as_tensor(np.asarray(ref_mel), dtype=self.dtype)[None]
                mel_mask = torch.ones(mel.shape[:2], dtype=torch.bool)
                global_style, local_style, _, _ = self.style_vectors(mel, mel_mask, hidden)
            elif self.style_cache.has(int(spk)):
                global_style = self.style_cache.global_mean(int(spk)).to(self.dtype)[None]
                row = self.style_cache.local_mean(int(spk), self.style.local.codebook).to(self.dtype)
                local_style = row.expand(1, hidden.hidden.shape[1], -1)
            else:
                raise MissingStyleError(
                    f"speaker {self.speakers[int(spk)]!r} has no cached style and no reference mel was given"
                )
        mu, frame_mask = self.mean(hidden.hidden, hidden.mask, durations, global_style, local_style, spk)
        steps = n_steps or self.cfg.otcfm.n_euler_steps
        x = euler_sample(self.decoder, mu, frame_mask, steps, seed=seed, temperature=temperature)
        return Synthesis(
            x[0].float().numpy(),
            durations[0].numpy(),
            classes[0].numpy(),
        )

    # ------------------------------------------------------------ persistence

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"config": train_config_to_dict(self.cfg), "speakers": self.speakers}
        save_tensors(directory / "rhythm.ckpt", "rhythm", dict(self.rhythm.state_dict()), meta)
        style = {f"module.{k}": v for k, v in self.style.state_dict().items()}
        style.update({f"cache.{k}": v for k, v in self.style_cache.state().items()})
        save_tensors(directory / "style.ckpt", "style", style, meta)
        flow = {f"mean.{k}": v for k, v in self.mean.state_dict().items()}
        flow.update({f"decoder.{k}": v for k, v in self.decoder.state_dict().items()})
        save_tensors(directory / "flow.ckpt", "flow", flow, meta)

    @classmethod
    def load(cls, directory) -> "DarsModel":
        directory = Path(directory)
        parts = {}
        for name in ("rhythm", "style", "flow"):
            path = directory / f"{name}.ckpt"
            if not path.exists():
                raise CheckpointError(f"missing checkpoint file {path}")
            module, meta, tensors = load_tensors(path)
            if module != name:
                raise CheckpointError(f"{path} holds module {module!r}, expected {name!r}")
            parts[name] = (meta, tensors)
        meta = parts["rhythm"][0]
        cfg = train_config_from_dict({"train": dict(meta["config"])})
        model = cls(cfg, meta["speakers"])
        dtype = next(iter(parts["rhythm"][1].values())).dtype
        if dtype == torch.float64:
            model.double()
        model.rhythm.load_state_dict(parts["rhythm"][1])
        style = parts["style"][1]
        model.style.load_state_dict({k[7:]: v for k, v in style.items() if k.startswith("module.")})
        model.style_cache.load({k[6:]: v for k, v in style.items() if k.startswith("cache.")})
        flow = parts["flow"][1]
        model.mean.load_state_dict({k[5:]: v for k, v in flow.items() if k.startswith("mean.")})
        model.decoder.load_state_dict({k[8:]: v for k, v in flow.items() if k.startswith("decoder.")})
        model.eval()
        return model
