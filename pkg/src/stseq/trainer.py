"""Training loop, evaluation, and ablation grids.

Per sample: encode frames, apply the configured input transform, assemble
the joint sequence, optionally run the gradient-free reference pass and the
masked pass, and accumulate gradients of decoder loss plus the reconstruction
term. One Adam update per batch. Inference never masks and consumes all
provided frames.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import globallocal as gl
from . import kernels
from .autodiff import Array, Tape, no_grad
from .checkpoint import save as save_checkpoint
from .config import RunConfig
from .data import Task, default_vocab, gen_batch
from .errors import ConfigError, ContractError, NumericError
from .masking import apply_mask, build_mask_plan, sample_mask_rate, sample_mask_rate_uniform
from .model import ModelConfig, decoder_loss, forward, init_params
from .objectives import mvm_loss, select_pairs, total_loss
from .tokens import TokenGrid, assemble_sequence, encode_frames, project_visual


@dataclass
class MetricsRecord:
    step: int
    l_llm: float
    l_mvm: float
    eval_acc: dict[int, float] | None
    wall_clock: float
    config_hash: str

    def to_dict(self) -> dict:
        d = {"step": self.step, "l_llm": self.l_llm, "l_mvm": self.l_mvm,
             "wall_clock": self.wall_clock, "config_hash": self.config_hash}
        if self.eval_acc is not None:
            d["eval_acc"] = {str(k): v for k, v in self.eval_acc.items()}
        return d


def model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(layers=cfg.layers, heads=cfg.heads, dim=cfg.dim,
                       vocab=len(default_vocab()), ffn_mult=cfg.ffn_mult,
                       rope_base=cfg.rope_base)


def run_dtype(cfg: RunConfig):
    return np.float32 if cfg.precision == "f32" else np.float64


def init_run_params(cfg: RunConfig, rng: np.random.Generator) -> dict[str, Array]:
    """All trainable state: patch encoder, visual projection, model, projector."""
    dtype = run_dtype(cfg)
    patch_len = (cfg.grid_size // cfg.patch) ** 2
    params = init_params(model_config(cfg), rng, dtype)
    params["enc.w"] = Array(rng.normal(0.0, patch_len ** -0.5, size=(patch_len, cfg.dim)).astype(dtype),
                            requires_grad=True)
    params["enc.b"] = Array(np.zeros(cfg.dim, dtype=dtype), requires_grad=True)
    params["fp.w"] = Array(rng.normal(0.0, cfg.dim ** -0.5, size=(cfg.dim, cfg.dim)).astype(dtype),
                           requires_grad=True)
    params["fp.b"] = Array(np.zeros(cfg.dim, dtype=dtype), requires_grad=True)
    if cfg.input_mode == "global-local" and cfg.gl_variant == "adapter":
        params.update(gl.init_projector(cfg.dim, rng, dtype))
    return params


def build_grid(task: Task, cfg: RunConfig, params: dict[str, Array]) -> TokenGrid:
    """Encode + project, then apply the configured input transform."""
    grid = project_visual(encode_frames(task.video, params["enc.w"], params["enc.b"], cfg.patch),
                          params["fp.w"], params["fp.b"])
    if cfg.input_mode == "joint-st":
        return grid
    if cfg.input_mode == "meanpool":
        pooled = gl.global_pool(grid)
        return TokenGrid(ad.reshape(pooled, (1, grid.k, grid.d)))
    # global-local
    t_local = min(cfg.frames_local, grid.t)
    if cfg.gl_variant == "global-only":
        return TokenGrid(ad.reshape(gl.global_pool(grid), (1, grid.k, grid.d)))
    local = gl.sample_local(grid, t_local)
    if cfg.gl_variant == "local-only":
        return local
    return gl.fuse_global_local(local, gl.global_pool(grid), params, cfg.gl_variant)


def sample_rate(cfg: RunConfig, rng: np.random.Generator) -> float:
    if cfg.mask_mode == "static":
        return cfg.mask_rho
    if cfg.mask_mode == "dynamic-normal":
        return sample_mask_rate(cfg.mask_sigma, rng, mean=cfg.mask_mean)
    if cfg.mask_mode == "dynamic-uniform":
        return sample_mask_rate_uniform(cfg.mask_low, cfg.mask_high, rng)
    raise ConfigError(f"no mask rate to sample in mode {cfg.mask_mode!r}")


def sample_losses(task: Task, cfg: RunConfig, mcfg: ModelConfig, params: dict[str, Array],
                  mask_rng: np.random.Generator, rho: float | None = None
                  ) -> tuple[Array, float, float]:
    """Forward pass(es) and loss graph for one sample.

    Returns (loss node, decoder value, reconstruction value). rho overrides
    the per-sample draw when the caller samples once per batch.
    """
    grid = build_grid(task, cfg, params)
    text = list(task.prompt_ids) + list(task.answer_ids)
    seq = assemble_sequence(grid, text, params["embedding"])
    plan = None
    mseq = seq
    if cfg.mask_mode != "off":
        ref_out = forward(seq, params, mcfg, mode="reference") if cfg.mvm else None
        if rho is None:
            rho = sample_rate(cfg, mask_rng)
        plan = build_mask_plan(grid.t, grid.k, rho, mask_rng)
        mseq = apply_mask(seq, plan, renumber=cfg.renumber_positions)
    out = forward(mseq, params, mcfg, mode="train")
    l_llm = decoder_loss(out, mseq, len(task.prompt_ids))
    if cfg.mvm and plan is not None:
        sel = select_pairs(mseq, seq, plan)
        if cfg.mvm_target == "hidden":
            l_mvm = mvm_loss(out.hidden, ref_out.hidden, sel)
        else:
            l_mvm = mvm_loss(out.logits, ref_out.logits, sel)
        if cfg.mvm_weight != 1.0:
            l_mvm = ad.scale(l_mvm, cfg.mvm_weight)
        loss = total_loss(l_mvm, l_llm)
        return loss, l_llm.item(), l_mvm.item()
    return l_llm, l_llm.item(), 0.0


class AdamState:
    def __init__(self, params: dict[str, Array], cfg: RunConfig):
        self.m = {k: np.zeros(v.data.size, dtype=v.data.dtype) for k, v in params.items()}
        self.v = {k: np.zeros(v.data.size, dtype=v.data.dtype) for k, v in params.items()}
        self.cfg = cfg
        self.t = 0

    def update(self, params: dict[str, Array]) -> None:
        self.t += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            kernels.adam_step(p.data.reshape(-1), g.reshape(-1), self.m[name], self.v[name],
                              c.lr, c.beta1, c.beta2, c.adam_eps, bc1, bc2)


def zero_grads(params: dict[str, Array]) -> None:
    for p in params.values():
        p.grad = None


def train_step(batch: list[Task], params: dict[str, Array], opt: AdamState,
               cfg: RunConfig, mcfg: ModelConfig, mask_rng: np.random.Generator,
               step: int, t0: float) -> MetricsRecord:
    """One optimizer update over a batch; params are updated in place."""
    zero_grads(params)
    inv_b = 1.0 / len(batch)
    llm_sum = 0.0
    mvm_sum = 0.0
    batch_rho = None
    if cfg.mask_mode != "off" and cfg.rho_per_batch:
        batch_rho = sample_rate(cfg, mask_rng)
    for task in batch:
        with Tape() as tape:
            loss, l_llm_val, l_mvm_val = sample_losses(task, cfg, mcfg, params, mask_rng,
                                                       rho=batch_rho)
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite loss at step {step}: l_llm={l_llm_val} l_mvm={l_mvm_val} "
                    f"(config_hash={cfg.config_hash()}, seed={cfg.seed})")
            tape.backward(ad.scale(loss, inv_b))
        llm_sum += l_llm_val
        mvm_sum += l_mvm_val
    opt.update(params)
    return MetricsRecord(step=step, l_llm=llm_sum * inv_b, l_mvm=mvm_sum * inv_b,
                         eval_acc=None, wall_clock=time.perf_counter() - t0,
                         config_hash=cfg.config_hash())


def evaluate(params: dict[str, Array], cfg: RunConfig, frame_count: int,
             n_samples: int, rng: np.random.Generator) -> float:
    """Greedy exact-match accuracy on held-out tasks; no masking at inference."""
    mcfg = model_config(cfg)
    tasks = gen_batch(cfg.task, n_samples, frame_count, rng, cfg.grid_size, split="test")
    correct = 0
    with no_grad():
        for task in tasks:
            grid = build_grid(task, cfg, params)
            ids = list(task.prompt_ids)
            ok = True
            for gold in task.answer_ids:
                seq = assemble_sequence(grid, ids, params["embedding"], include_end=False)
                out = forward(seq, params, mcfg)
                pred = int(np.argmax(out.logits.data[-1]))
                ids.append(pred)
                if pred != gold:
                    ok = False
                    break
            correct += ok
    return correct / n_samples


def train(cfg: RunConfig, out_dir: str | Path | None = None,
          ) -> tuple[dict[str, Array], list[MetricsRecord]]:
    """Full training run; writes config, metrics, and a checkpoint when out_dir given."""
    root = np.random.default_rng(cfg.seed)
    init_rng, data_rng, mask_rng, eval_rng_seed = (
        np.random.default_rng(s) for s in root.integers(2 ** 63, size=4))
    params = init_run_params(cfg, init_rng)
    opt = AdamState(params, cfg)
    mcfg = model_config(cfg)
    frames = cfg.frames_global if cfg.input_mode == "global-local" else cfg.frames_train

    records: list[MetricsRecord] = []
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        batch = gen_batch(cfg.task, cfg.batch_size, frames, data_rng, cfg.grid_size,
                          split="train")
        rec = train_step(batch, params, opt, cfg, mcfg, mask_rng, step, t0)
        last = (step == cfg.steps - 1)
        if last or (cfg.eval_every and (step + 1) % cfg.eval_every == 0):
            # fresh eval generator per eval point, derived from the run seed
            rec.eval_acc = {fc: evaluate(params, cfg, fc, cfg.eval_samples,
                                         np.random.default_rng(eval_rng_seed.integers(2 ** 63)))
                            for fc in cfg.frames_eval}
        records.append(rec)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json())
        with open(out / "metrics.jsonl", "w") as f:
            for rec in records:
                f.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        save_checkpoint(out / "checkpoint.bin", params, cfg.to_dict())
    return params, records


def final_eval(records: list[MetricsRecord]) -> dict[int, float]:
    for rec in reversed(records):
        if rec.eval_acc is not None:
            return rec.eval_acc
    raise ContractError("no evaluation record found")


def metrics_streams_equal(a: list[dict], b: list[dict]) -> bool:
    """Bit-identical comparison of metric streams, wall clock excluded."""
    def strip(recs):
        return [{k: v for k, v in r.items() if k != "wall_clock"} for r in recs]
    return json.dumps(strip(a), sort_keys=True) == json.dumps(strip(b), sort_keys=True)


# ---------------------------------------------------------------------------
# ablation grids
# ---------------------------------------------------------------------------

@dataclass
class AblationCell:
    label: str
    cfg: RunConfig


def table5_grid(base: RunConfig, seeds=(0, 1, 2)) -> list[AblationCell]:
    """Input-strategy ablation: meanpool vs joint tokens vs +masking & reconstruction."""
    cells = []
    for seed in seeds:
        cells.append(AblationCell("meanpool", base.replace(
            seed=seed, input_mode="meanpool", mask_mode="off", mvm=False)))
        cells.append(AblationCell("joint-st", base.replace(
            seed=seed, input_mode="joint-st", mask_mode="off", mvm=False)))
        cells.append(AblationCell("joint-st+mask+mvm", base.replace(
            seed=seed, input_mode="joint-st", mask_mode="dynamic-normal",
            mask_sigma=0.1, mvm=True)))
    return cells


def table7_grid(base: RunConfig, seeds=(0, 1, 2)) -> list[AblationCell]:
    """Global/local combinations on a long-horizon task."""
    cells = []
    for seed in seeds:
        for variant in ("global-only", "local-only", "simply-add", "adapter"):
            cells.append(AblationCell(variant, base.replace(
                seed=seed, input_mode="global-local", gl_variant=variant)))
    return cells


def table8_grid(base: RunConfig, seeds=(0, 1, 2)) -> list[AblationCell]:
    """Masking-distribution ablation; distribution rows train with the MVM term."""
    cells = []
    for seed in seeds:
        cells.append(AblationCell("off", base.replace(
            seed=seed, mask_mode="off", mvm=False)))
        cells.append(AblationCell("uniform(0.3,0.7)", base.replace(
            seed=seed, mask_mode="dynamic-uniform", mask_low=0.3, mask_high=0.7, mvm=True)))
        cells.append(AblationCell("normal(0.5,0.2)", base.replace(
            seed=seed, mask_mode="dynamic-normal", mask_sigma=0.2, mvm=True)))
        cells.append(AblationCell("normal(0.5,0.1)", base.replace(
            seed=seed, mask_mode="dynamic-normal", mask_sigma=0.1, mvm=True)))
    return cells


def _run_cell(args: tuple[AblationCell, str, bool]) -> dict:
    cell, out_root, force = args
    cell_dir = Path(out_root) / f"{cell.label.replace('(', '_').replace(')', '').replace(',', '-')}_seed{cell.cfg.seed}"
    chash = cell.cfg.config_hash()
    cfg_file = cell_dir / "config.json"
    if cfg_file.exists() and not force:
        existing = RunConfig.from_json(cfg_file.read_text())
        if existing.config_hash() == chash:
            raise ContractError(f"{cell_dir}: run with config hash {chash} already exists "
                                "(use force to overwrite)")
    _, records = train(cell.cfg, cell_dir)
    acc = final_eval(records)
    row = {"label": cell.label, "seed": cell.cfg.seed, "config_hash": chash,
           "l_llm": records[-1].l_llm, "l_mvm": records[-1].l_mvm}
    row.update({f"acc@{fc}": a for fc, a in acc.items()})
    return row


def run_ablation(cells: list[AblationCell], out_root: str | Path, jobs: int = 1,
                 force: bool = False) -> list[dict]:
    """Train each cell, then write one summary CSV mirroring the grid rows."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    args = [(cell, str(out_root), force) for cell in cells]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, args))
    else:
        rows = [_run_cell(a) for a in args]
    if rows:
        keys = sorted({k for row in rows for k in row}, key=lambda k: (k != "label", k))
        with open(out_root / "summary.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=keys)
            writer.writeheader()
            writer.writerows(rows)
    return rows
