"""Alternating min-max training over unpaired two-domain batches.

Every step draws a random domain pair, samples one unpaired batch per
domain, ascends the discriminators on the adversarial terms with encoder
and generators fixed, then descends encoder and generators on the full
objective with the discriminators fixed.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, restore_bundle, restore_optimizer, save_checkpoint
from .errors import ConfigError, DataError, NumericError
from .nets import BundleConfig, ModelBundle, create_model_bundle
from .objectives import (
    LOG_GUARD,
    LossReport,
    LossWeights,
    adversarial_loss,
    cycle_loss,
    encoder_loss,
    full_objective,
    loss_report,
)

logger = logging.getLogger(__name__)

SAMPLE_LOG_FIELDS = ("step", "domain_a", "indices_a", "domain_b", "indices_b")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 2e-5
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 1
    total_steps: int = 20_000
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    disable_encoder_loss: bool = False
    domain_subset: tuple[str, ...] | None = None
    nonsaturating_generator: bool = False
    checkpoint_every: int = 1000

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")
        if self.adam_epsilon <= 0:
            raise ConfigError(f"adam_epsilon must be > 0, got {self.adam_epsilon}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_steps < 0:
            raise ConfigError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        self.weights.validate()
        if self.domain_subset is not None and len(self.domain_subset) < 2:
            raise ConfigError("domain_subset needs at least 2 domains")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain_subset"] = list(self.domain_subset) if self.domain_subset else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        if d.get("domain_subset") is not None:
            d["domain_subset"] = tuple(d["domain_subset"])
        return cls(**d)


@dataclass
class UnpairedBatch:
    domain_a: str
    domain_b: str
    x_a: torch.Tensor
    x_b: torch.Tensor
    indices_a: np.ndarray
    indices_b: np.ndarray


@dataclass
class StepReport:
    step: int
    domain_a: str
    domain_b: str
    losses: LossReport
    wall_time: float


@dataclass
class TrainResult:
    bundle: ModelBundle
    reports: list[StepReport]
    final_checkpoint: Path | None
    loss_log: Path | None
    sample_log: Path | None


def pair_scheduler(domain_ids, rng: np.random.Generator) -> tuple[str, str]:
    """Uniform unordered pair over all domain combinations, random role order."""
    ids = sorted(domain_ids)
    if len(ids) < 2:
        raise ConfigError(f"need at least 2 domains to pair, got {ids}")
    i, j = rng.choice(len(ids), size=2, replace=False)
    return ids[int(i)], ids[int(j)]


def sample_unpaired_batch(dataset, pair: tuple[str, str], rng: np.random.Generator,
                          batch_size: int = 1) -> UnpairedBatch:
    """Independent uniform draws from each domain of the pair."""
    domain_a, domain_b = pair
    stacks = []
    indices = []
    for domain in (domain_a, domain_b):
        n = dataset.num_frames(domain)
        if n == 0:
            raise DataError(f"domain {domain!r} has no frames to sample")
        idx = rng.integers(0, n, size=batch_size)
        stacks.append(np.stack([dataset.frame(domain, int(i)) for i in idx]))
        indices.append(idx)
    x_a = torch.from_numpy(stacks[0])
    x_b = torch.from_numpy(stacks[1])
    return UnpairedBatch(domain_a, domain_b, x_a, x_b, indices[0], indices[1])


def loss_terms(bundle: ModelBundle, x_a: torch.Tensor, x_b: torch.Tensor,
               domain_a: str, domain_b: str, encoder_terms_grad: bool = True,
               with_generator_scores: bool = False) -> dict:
    """All six loss terms with a full autograd graph (single wiring used everywhere).

    With encoder_terms_grad=False the encoder terms are evaluated without a
    graph, so they are reported but contribute nothing to any backward pass.
    """
    enc = bundle.encoder
    gen_a, gen_b = bundle.generator(domain_a), bundle.generator(domain_b)
    disc_a, disc_b = bundle.discriminator(domain_a), bundle.discriminator(domain_b)

    rep_a = enc(x_a)
    rep_b = enc(x_b)
    fake_b = gen_b(rep_a)   # domain A content rendered as domain B
    fake_a = gen_a(rep_b)   # domain B content rendered as domain A
    rep_fake_b = enc(fake_b)
    rep_fake_a = enc(fake_a)

    terms = {
        "adv_a": adversarial_loss(disc_a(x_a), disc_a(fake_a)),
        "adv_b": adversarial_loss(disc_b(x_b), disc_b(fake_b)),
        "cyc_a": cycle_loss(x_a, gen_a(rep_fake_b)),
        "cyc_b": cycle_loss(x_b, gen_b(rep_fake_a)),
    }
    if encoder_terms_grad:
        terms["enc_a"] = encoder_loss(enc(gen_a(rep_a)), rep_fake_b)
        terms["enc_b"] = encoder_loss(rep_fake_a, enc(gen_b(rep_b)))
    else:
        with torch.no_grad():
            r_a, r_b = rep_a.detach(), rep_b.detach()
            terms["enc_a"] = encoder_loss(enc(gen_a(r_a)), rep_fake_b.detach())
            terms["enc_b"] = encoder_loss(rep_fake_a.detach(), enc(gen_b(r_b)))
    if with_generator_scores:
        # mean log D(fake): ascended by the generators in the non-saturating variant
        terms["gen_score_a"] = torch.log(disc_a(fake_a).clamp(LOG_GUARD, 1 - LOG_GUARD)).mean()
        terms["gen_score_b"] = torch.log(disc_b(fake_b).clamp(LOG_GUARD, 1 - LOG_GUARD)).mean()
    return terms


def discriminator_phase(bundle: ModelBundle, optimizer: torch.optim.Optimizer,
                        x_a: torch.Tensor, x_b: torch.Tensor,
                        domain_a: str, domain_b: str) -> tuple[float, float]:
    """One ascent update of both discriminators on frozen fakes; E/G untouched."""
    enc = bundle.encoder
    with torch.no_grad():
        fake_a = bundle.generator(domain_a)(enc(x_b))
        fake_b = bundle.generator(domain_b)(enc(x_a))
    disc_a, disc_b = bundle.discriminator(domain_a), bundle.discriminator(domain_b)
    optimizer.zero_grad(set_to_none=True)
    adv_a = adversarial_loss(disc_a(x_a), disc_a(fake_a))
    adv_b = adversarial_loss(disc_b(x_b), disc_b(fake_b))
    ascent_target = adv_a + adv_b
    if not bool(torch.isfinite(ascent_target)):
        raise NumericError(f"adversarial terms are not finite: {adv_a}, {adv_b}")
    (-ascent_target).backward()
    optimizer.step()
    return float(adv_a.detach()), float(adv_b.detach())


def encoder_generator_phase(bundle: ModelBundle, optimizer: torch.optim.Optimizer,
                            x_a: torch.Tensor, x_b: torch.Tensor,
                            domain_a: str, domain_b: str,
                            weights: LossWeights = LossWeights(),
                            disable_encoder_loss: bool = False,
                            nonsaturating: bool = False) -> LossReport:
    """One descent update of encoder and generators; discriminators untouched."""
    effective = weights
    if disable_encoder_loss and weights.encoder_weight != 0.0:
        effective = replace(weights, encoder_weight=0.0)
    encoder_terms_grad = effective.encoder_weight > 0.0

    disc_params = list(bundle.discriminator_parameters())
    saved_flags = [p.requires_grad for p in disc_params]
    for p in disc_params:
        p.requires_grad_(False)
    try:
        terms = loss_terms(bundle, x_a, x_b, domain_a, domain_b,
                           encoder_terms_grad=encoder_terms_grad,
                           with_generator_scores=nonsaturating)
        descent_target = full_objective(
            terms["adv_a"], terms["adv_b"], terms["cyc_a"], terms["cyc_b"],
            terms["enc_a"], terms["enc_b"], weights=effective,
        )
        if nonsaturating:
            # swap the saturating fake term for ascent on log D(fake)
            a = effective.cycle_weight
            b = effective.encoder_weight
            descent_target = (
                -(terms["gen_score_a"] + terms["gen_score_b"])
                + a * terms["cyc_a"] + a * terms["cyc_b"]
                + b * terms["enc_a"] + b * terms["enc_b"]
            )
        optimizer.zero_grad(set_to_none=True)
        descent_target.backward()
        optimizer.step()
    finally:
        for p, flag in zip(disc_params, saved_flags):
            p.requires_grad_(flag)
    return loss_report(terms["adv_a"], terms["adv_b"], terms["cyc_a"], terms["cyc_b"],
                       terms["enc_a"], terms["enc_b"], weights=effective)


def train_step(bundle: ModelBundle, batch: UnpairedBatch, cfg: TrainingConfig,
               optimizer_eg: torch.optim.Optimizer, optimizer_d: torch.optim.Optimizer,
               step: int) -> StepReport:
    """One full alternating update (D ascent, then E/G descent)."""
    start = time.perf_counter()
    discriminator_phase(bundle, optimizer_d, batch.x_a, batch.x_b,
                        batch.domain_a, batch.domain_b)
    report = encoder_generator_phase(
        bundle, optimizer_eg, batch.x_a, batch.x_b, batch.domain_a, batch.domain_b,
        weights=cfg.weights, disable_encoder_loss=cfg.disable_encoder_loss,
        nonsaturating=cfg.nonsaturating_generator,
    )
    return StepReport(step, batch.domain_a, batch.domain_b, report,
                      time.perf_counter() - start)


def make_optimizers(bundle: ModelBundle, cfg: TrainingConfig):
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_eg = torch.optim.Adam(list(bundle.encoder_generator_parameters()),
                              lr=cfg.learning_rate, betas=betas, eps=cfg.adam_epsilon)
    opt_d = torch.optim.Adam(list(bundle.discriminator_parameters()),
                             lr=cfg.learning_rate, betas=betas, eps=cfg.adam_epsilon)
    return opt_eg, opt_d


def _checkpoint_meta(pool, cfg, models_cfg, step, rng):
    return {
        "domains": list(pool),
        "step": int(step),
        "seed": int(cfg.seed),
        "models": models_cfg.to_dict(),
        "training": cfg.to_dict(),
        "rng_state": rng.bit_generator.state,
    }


def train(dataset, cfg: TrainingConfig, models: BundleConfig | None = None,
          out_dir=None, resume_from=None) -> TrainResult:
    """Run the full alternating optimization; fully reproducible from cfg.seed."""
    cfg.validate()
    available = dataset.domain_ids
    pool = sorted(cfg.domain_subset) if cfg.domain_subset else sorted(available)
    unknown = [d for d in pool if d not in available]
    if unknown:
        raise ConfigError(f"domain_subset includes unknown domains {unknown}, have {sorted(available)}")
    if len(pool) < 2:
        raise ConfigError(f"training needs at least 2 domains, got {pool}")

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if tuple(pool) != ckpt.domain_ids:
            raise ConfigError(
                f"resume domains {ckpt.domain_ids} do not match requested {tuple(pool)}"
            )
        models_cfg = ckpt.bundle_config()
        bundle = restore_bundle(ckpt)
        start_step = ckpt.step
        rng = np.random.default_rng()
        rng.bit_generator.state = ckpt.meta["rng_state"]
        optimizer_eg, optimizer_d = make_optimizers(bundle, cfg)
        restore_optimizer(ckpt, "eg", optimizer_eg)
        restore_optimizer(ckpt, "d", optimizer_d)
    else:
        models_cfg = models or BundleConfig()
        bundle = create_model_bundle(pool, models_cfg, seed=cfg.seed)
        start_step = 0
        rng = np.random.default_rng(cfg.seed)
        optimizer_eg, optimizer_d = make_optimizers(bundle, cfg)

    out_dir = Path(out_dir) if out_dir is not None else None
    loss_path = sample_path = None
    loss_file = sample_file = None
    loss_writer = sample_writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        loss_path = out_dir / "losses.csv"
        sample_path = out_dir / "samples.csv"
        loss_file = loss_path.open("w", newline="")
        loss_writer = csv.DictWriter(loss_file, fieldnames=LossReport.CSV_FIELDS)
        loss_writer.writeheader()
        sample_file = sample_path.open("w", newline="")
        sample_writer = csv.DictWriter(sample_file, fieldnames=SAMPLE_LOG_FIELDS)
        sample_writer.writeheader()

    optimizers = {"eg": optimizer_eg, "d": optimizer_d}
    reports: list[StepReport] = []
    final_path = None
    try:
        for step in range(start_step + 1, cfg.total_steps + 1):
            pair = pair_scheduler(pool, rng)
            batch = sample_unpaired_batch(dataset, pair, rng, cfg.batch_size)
            try:
                report = train_step(bundle, batch, cfg, optimizer_eg, optimizer_d, step)
            except NumericError:
                if out_dir is not None:
                    save_checkpoint(out_dir / f"checkpoint_diagnostic_step{step:06d}.npz",
                                    bundle, _checkpoint_meta(pool, cfg, models_cfg, step, rng),
                                    optimizers)
                raise
            reports.append(report)
            if loss_writer is not None:
                loss_writer.writerow(report.losses.to_row(step))
                sample_writer.writerow({
                    "step": step,
                    "domain_a": batch.domain_a,
                    "indices_a": ";".join(str(int(i)) for i in batch.indices_a),
                    "domain_b": batch.domain_b,
                    "indices_b": ";".join(str(int(i)) for i in batch.indices_b),
                })
            if step % 100 == 0:
                logger.info("step %d/%d total=%.4f", step, cfg.total_steps, report.losses.total)
            if out_dir is not None and step % cfg.checkpoint_every == 0 and step < cfg.total_steps:
                save_checkpoint(out_dir / f"checkpoint_step{step:06d}.npz", bundle,
                                _checkpoint_meta(pool, cfg, models_cfg, step, rng), optimizers)
        if out_dir is not None:
            final_path = save_checkpoint(
                out_dir / "checkpoint_final.npz", bundle,
                _checkpoint_meta(pool, cfg, models_cfg, cfg.total_steps, rng), optimizers)
    finally:
        if loss_file is not None:
            loss_file.close()
        if sample_file is not None:
            sample_file.close()
    return TrainResult(bundle, reports, final_path, loss_path, sample_path)
