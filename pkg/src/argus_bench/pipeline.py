"""Command implementations behind the ``argus-bench`` CLI.

Every command works inside one run directory (``out``). Inputs default to the
files an earlier command writes there, so ``synth -> curate -> split ->
preprocess -> tokenize -> pretrain -> evaluate`` chains without extra flags:

==============  ====================================================
synth           ``volumes/*.ctvol`` (HU), ``records.jsonl``
curate          ``curated.jsonl``, ``curation_log.jsonl``
split           ``manifest.json``
preprocess      ``preprocessed/*.ctvol``
tokenize        ``tokens/*.tkg``, ``token_ledger.json``
pretrain        ``model.avt``, ``checkpoints/*.avt``, ``history.csv``
gradcheck       ``gradcheck.json``
evaluate        ``eval_pairs.jsonl``, ``per_id.jsonl``, ``metrics.csv``
sweep           ``sweep.csv``, ``sweep_progress.jsonl``
==============  ====================================================

Wall-clock timestamps go to ``run.log`` only.
"""
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io, synth
from .curation import CuratedRecord, DatasetManifest, RawRecord, ReportCurator, split_dataset
from .exceptions import ValidationError
from .metrics import CLINICAL_KEYS, EvalPair, avg_nlp, evaluate_pairs, merge_clinical, read_clinical_scores
from .tokens import COMPRESSIONS, compressed_token_count, patchify
from .utils import round_half_away
from .volume import PROFILES, CTPreprocessor, get_profile
from .vit import model
from .vit.estimators import carry_encoder
from .vit.gradcheck import MICRO_CONFIG, grad_check_detail
from .vit.params import EncoderConfig, init_params, load_checkpoint, save_checkpoint
from .vit.text import HashingTextEmbedder
from .vit.train import PRETRAIN_METHODS, SCHEDULES, evaluate_loss, pretrain_plan, schedule_plan, train

logger = logging.getLogger("argus_bench")

SWEEP_AXES = ("mask_ratio", "compression", "connector", "data_fraction")


@dataclass
class RunConfig:
    """Every knob of a run. Precedence when building one: flags > config file > these defaults."""

    seed: int = 0
    profile: str = "normal"
    compression: str = "pixel_shuffle"
    connector: int = 2
    mask_ratio: float = 0.5
    method: str = "mae"
    schedule: str = "2stage-unfrozen"
    out: str = "."
    # encoder
    d_model: int = 24
    n_layers: int = 2
    n_heads: int = 2
    d_joint: int = 8
    d_llm: int = 16
    n_queries: int = 64
    # optimisation (desk-scale learning rates; see README)
    pretrain_lr: float = 1e-3
    pretrain_steps: int = 50
    stage1_lr: float = 1e-3
    stage2_lr: float = 1e-4
    align_steps: int = 20
    batch_size: int = 8
    tau: float = model.DEFAULT_TAU
    warmup_ratio: float = 0.05
    weight_decay: float = 0.0
    # preprocessing
    hu_window: tuple = (-1000.0, 1000.0)
    target_spacing: tuple = (1.0, 1.0, 4.0)
    # synthetic data
    n_samples: int = 8
    synth_dims: tuple = (32, 32, 32)
    lesion_count: tuple = (1, 3)
    synth_source: str = "INSPECT"
    # curation and splits
    min_tokens: int = 10
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    rounding: str = "half_away"
    # evaluation
    model_name: str = None
    clinical_scores: str = None
    pairs: str = None
    # input path overrides (default: files inside ``out``)
    records: str = None
    volumes: str = None
    # sweep
    sweep: dict = field(default_factory=dict)
    sweep_pretrain_steps: int = 10
    sweep_align_steps: int = 10
    jobs: int = 1

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValidationError(f"unknown profile {self.profile!r}; valid: {sorted(PROFILES)}")
        if self.compression not in COMPRESSIONS:
            raise ValidationError(f"unknown compression {self.compression!r}; valid: {list(COMPRESSIONS)}")
        if self.connector not in (1, 2):
            raise ValidationError(f"connector depth must be 1 or 2, got {self.connector}")
        if self.method not in PRETRAIN_METHODS + ("none",):
            raise ValidationError(f"unknown method {self.method!r}; valid: {list(PRETRAIN_METHODS) + ['none']}")
        if self.schedule not in SCHEDULES + ("2stage",):
            raise ValidationError(f"unknown schedule {self.schedule!r}; valid: {list(SCHEDULES) + ['2stage']}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValidationError(f"mask ratio must lie strictly between 0 and 1, got {self.mask_ratio}")
        for key in ("hu_window", "target_spacing", "synth_dims", "lesion_count"):
            setattr(self, key, tuple(getattr(self, key)))
        unknown = set(self.sweep) - set(SWEEP_AXES)
        if unknown:
            raise ValidationError(f"unknown sweep axes {sorted(unknown)}; valid: {list(SWEEP_AXES)}")

    @classmethod
    def build(cls, config_file=None, overrides=None):
        values = {}
        if config_file is not None:
            try:
                values = json.loads(Path(config_file).read_text())
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{config_file}: invalid JSON config ({exc.msg})") from exc
            if not isinstance(values, dict):
                raise ValidationError(f"{config_file}: config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(**values)

    # -- paths --------------------------------------------------------------
    @property
    def root(self):
        return Path(self.out)

    def path(self, name):
        return self.root / name

    @property
    def records_path(self):
        return Path(self.records) if self.records else self.path("records.jsonl")

    @property
    def volumes_dir(self):
        return Path(self.volumes) if self.volumes else self.path("volumes")

    def encoder_config(self, compression=None, connector=None):
        prof = get_profile(self.profile)
        return EncoderConfig(d_model=self.d_model, n_layers=self.n_layers, n_heads=self.n_heads,
                             patch_dims=prof.patch_dims, grid_dims=prof.grid_dims, d_joint=self.d_joint,
                             d_llm=self.d_llm, n_queries=self.n_queries,
                             compression=compression or self.compression,
                             connector_depth=connector or self.connector)

    @property
    def label(self):
        return self.model_name or f"{self.method}+{self.schedule}/{self.compression}/mlp{self.connector}"

    def to_dict(self):
        return asdict(self)


def _require(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"required input not found: {path}")
    return path


def _write_text(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _ctvol_files(directory):
    return sorted(_require(directory).glob("*.ctvol"))


# -- synth / curate / split --------------------------------------------------

def cmd_synth(cfg):
    """Generate synthetic lesion volumes and templated reports."""
    spec = synth.SynthSpec(n_samples=cfg.n_samples, dims=cfg.synth_dims, spacing=cfg.target_spacing,
                           lesion_count=cfg.lesion_count, seed=cfg.seed)
    vol_dir = cfg.volumes_dir
    vol_dir.mkdir(parents=True, exist_ok=True)
    lo, hi = cfg.hu_window
    records = []
    for sid, vol, report, lesions in synth.generate(spec):
        io.write_ctvol(synth.to_hu(vol, lo, hi), vol_dir / f"{sid}.ctvol")
        records.append({"id": sid, "source": cfg.synth_source, "report": report, "official_test": False,
                        "n_lesions": len(lesions)})
    cfg.records_path.parent.mkdir(parents=True, exist_ok=True)
    io.write_jsonl(records, cfg.records_path)
    _write_text(cfg.path("synth_spec.json"), io.dumps_json(spec.to_dict()))
    return {"samples": len(records)}


def cmd_curate(cfg):
    """Assemble reports, drop filtered sentences and short reports."""
    raw = [RawRecord.from_dict(r) for r in io.read_jsonl(_require(cfg.records_path))]
    curator = ReportCurator(cfg.min_tokens).fit(raw)
    io.write_jsonl([r.to_dict() for r in curator.curated_], cfg.path("curated.jsonl"))
    io.write_jsonl(curator.removal_log_, cfg.path("curation_log.jsonl"))
    return {"records_in": len(raw), "records_out": len(curator.curated_),
            "sentences_removed": sum(1 for e in curator.removal_log_ if e["sentence"] is not None)}


def _curated(cfg):
    return [CuratedRecord.from_dict(r) for r in io.read_jsonl(_require(cfg.path("curated.jsonl")))]


def cmd_split(cfg):
    """Write the seeded train/val/test manifest."""
    records = _curated(cfg)
    manifest = split_dataset(records, cfg.seed, cfg.val_fraction, cfg.test_fraction, cfg.rounding)
    _write_text(cfg.path("manifest.json"), io.dumps_json(manifest.to_dict()))
    return manifest.counts


def _manifest(cfg):
    return DatasetManifest.from_dict(json.loads(_require(cfg.path("manifest.json")).read_text()))


# -- preprocess / tokenize -----------------------------------------------------

def cmd_preprocess(cfg):
    """Clip, normalise, resample and resize volumes to the profile."""
    files = _ctvol_files(cfg.volumes_dir)
    volumes = [io.read_ctvol(f) for f in files]
    pre = CTPreprocessor(cfg.profile, cfg.hu_window, cfg.target_spacing, n_jobs=cfg.jobs if cfg.jobs > 1 else None)
    out_dir = cfg.path("preprocessed")
    out_dir.mkdir(parents=True, exist_ok=True)
    for f, v in zip(files, pre.fit_transform(volumes)):
        io.write_ctvol(v, out_dir / f.name)
    return {"volumes": len(files), "dims": list(get_profile(cfg.profile).target_dims)}


def token_ledger(profile, compression, n_queries=64):
    prof = get_profile(profile)
    raw = prof.n_tokens
    return raw, compressed_token_count(raw, compression, n_queries)


def cmd_tokenize(cfg):
    """Patchify preprocessed volumes and print the token-count ledger."""
    prof = get_profile(cfg.profile)
    files = _ctvol_files(cfg.path("preprocessed"))
    out_dir = cfg.path("tokens")
    out_dir.mkdir(parents=True, exist_ok=True)
    for f in files:
        v = io.read_ctvol(f)
        if v.dims != prof.target_dims:
            raise ValidationError(f"{f.name}: dims {v.dims} do not match profile {prof.name} {prof.target_dims}")
        io.write_tkg(patchify(v, prof.patch_dims), out_dir / f"{f.stem}.tkg")
    raw, comp = token_ledger(cfg.profile, cfg.compression, cfg.n_queries)
    ledger = {"profile": prof.name, "compression": cfg.compression, "raw_tokens": raw, "compressed_tokens": comp}
    _write_text(cfg.path("token_ledger.json"), io.dumps_json(ledger))
    print(f"{raw} → {comp}")
    return ledger


def _tokens(cfg, ids):
    tok_dir = _require(cfg.path("tokens"))
    return [io.read_tkg(_require(tok_dir / f"{i}.tkg")) for i in ids]


# -- pretrain ----------------------------------------------------------------

def _text_embeddings(cfg, reports):
    return HashingTextEmbedder(cfg.d_joint, cfg.seed).transform(reports)


def _train_ids(cfg, records):
    manifest = _manifest(cfg)
    known = {r.id for r in records}
    return [i for i in manifest.ids("train") if i in known]


def fit_model(cfg, tokens, reports, mask_ratio=None, pretrain_steps=None, align_steps=None, compression=None,
              connector=None, on_checkpoint=None):
    """Vision pretraining followed by the connector schedule; returns ``(params, history rows)``."""
    mask_ratio = cfg.mask_ratio if mask_ratio is None else mask_ratio
    texts = _text_embeddings(cfg, reports)
    enc_cfg = cfg.encoder_config(compression, connector)
    params = init_params(enc_cfg, cfg.seed)
    history = []
    common = dict(batch_size=cfg.batch_size, seed=cfg.seed, warmup_ratio=cfg.warmup_ratio,
                  weight_decay=cfg.weight_decay, tau=cfg.tau)
    offset = 0

    def record(phase, result):
        nonlocal offset
        for step, stage, lr, loss in result.history:
            history.append({"step": offset + step, "stage": f"{phase}:{stage}", "lr": lr, "loss": loss})
        offset += len(result.history)

    def hook(phase):
        if on_checkpoint is None:
            return None
        return lambda stage, p: on_checkpoint(f"{phase}_{stage.name}", p)

    if on_checkpoint is not None:
        on_checkpoint("init", params)
    if cfg.method != "none":
        plan = pretrain_plan(cfg.method, lr=cfg.pretrain_lr, steps=pretrain_steps or cfg.pretrain_steps,
                             mask_ratio=mask_ratio, **common)
        record("pretrain", train(plan, tokens, params, texts, hook("pretrain")))
        # the encoder carries over; heads restart from a fresh initialisation
        fresh = init_params(enc_cfg, cfg.seed)
        carry_encoder(params, fresh)
        params = fresh
    if on_checkpoint is not None:
        on_checkpoint("align_start", params)
    plan = schedule_plan(cfg.schedule, enc_cfg.compression, cfg.stage1_lr, cfg.stage2_lr,
                         steps=align_steps or cfg.align_steps, mask_ratio=mask_ratio, **common)
    record("align", train(plan, tokens, params, texts, hook("align")))
    params.frozen = set()
    return params, history


def cmd_pretrain(cfg):
    """Vision pretraining followed by the connector schedule."""
    records = {r.id: r for r in _curated(cfg)}
    ids = _train_ids(cfg, records.values())
    if not ids:
        raise ValidationError("the train split is empty")
    tokens = _tokens(cfg, ids)
    ckpt_dir = cfg.path("checkpoints")
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    counter = itertools.count()

    def on_checkpoint(name, params):
        save_checkpoint(params, ckpt_dir / f"{next(counter):02d}_{name}.avt")

    params, history = fit_model(cfg, tokens, [records[i].report for i in ids], on_checkpoint=on_checkpoint)
    save_checkpoint(params, cfg.path("model.avt"))
    io.write_csv(history, cfg.path("history.csv"), ["step", "stage", "lr", "loss"])
    return {"train_samples": len(ids), "steps": len(history), "final_loss": history[-1]["loss"]}


# -- gradcheck ---------------------------------------------------------------

def cmd_gradcheck(cfg):
    """Check analytic gradients against central differences."""
    detail = grad_check_detail(MICRO_CONFIG, cfg.seed)
    summary = {obj: max(t.values()) for obj, t in detail.items()}
    out = {"max_relative_error": max(summary.values()), "per_objective": summary, "per_tensor": detail}
    _write_text(cfg.path("gradcheck.json"), io.dumps_json(out))
    print(f"max relative error {out['max_relative_error']:.3e}")
    return out


# -- evaluate ----------------------------------------------------------------

def retrieve_reports(params, tokens, bank_texts, bank_embeddings):
    """Candidate report per volume: the bank text whose embedding is most cosine-similar to the prediction."""
    pred = model.predict_text_embedding(tokens, params)
    bank = np.asarray(bank_embeddings, dtype=np.float64)
    norms = np.linalg.norm(bank, axis=1) * np.maximum(np.linalg.norm(pred, axis=1, keepdims=True), 1e-12)
    sims = (pred @ bank.T) / np.maximum(norms, 1e-12)
    return [bank_texts[int(j)] for j in np.argmax(sims, axis=1)]


def build_pairs(cfg, params, split="test"):
    records = {r.id: r for r in _curated(cfg)}
    manifest = _manifest(cfg)
    train_ids = [i for i in manifest.ids("train") if i in records]
    eval_ids = [i for i in manifest.ids(split) if i in records]
    if not train_ids or not eval_ids:
        raise ValidationError(f"need non-empty train and {split} splits to build evaluation pairs")
    bank = [records[i].report for i in train_ids]
    candidates = retrieve_reports(params, _tokens(cfg, eval_ids), bank, _text_embeddings(cfg, bank))
    return [EvalPair(i, c, (records[i].report,)) for i, c in zip(eval_ids, candidates)], \
        {i: records[i].source for i in eval_ids}


def _subset_row(label, dataset, report):
    row = {"model": label, "dataset": dataset, "n": len(report.per_id), "avg_nlp": report.avg_nlp}
    clin = report.clinical_means() if report.clinical else dict.fromkeys(CLINICAL_KEYS)
    row.update({"green": clin["green"], "ratescore": clin["ratescore"], "radgraphxl": clin["radgraph"]})
    return row


def evaluate_table(pairs, sources, label, clinical=None):
    """Per-subset metric rows plus a macro average row over the subsets."""
    rows, reports = [], {}
    for dataset in sorted(set(sources.values())):
        subset = [p for p in pairs if sources[p.id] == dataset]
        if len(subset) < 2:
            logger.warning("subset %s has %d pair(s); CIDEr needs 2, subset skipped", dataset, len(subset))
            continue
        rep = evaluate_pairs(subset)
        if clinical is not None:
            rep = merge_clinical(rep, clinical)
        reports[dataset] = rep
        rows.append(_subset_row(label, dataset, rep))
    if rows:
        macro = {"model": label, "dataset": "macro_average", "n": sum(r["n"] for r in rows)}
        for key in ("avg_nlp", "green", "ratescore", "radgraphxl"):
            vals = [r[key] for r in rows if r[key] is not None]
            macro[key] = float(np.mean(vals)) if vals else None
        rows.append(macro)
    return rows, reports


TABLE_FIELDS = ["model", "dataset", "n", "avg_nlp", "green", "ratescore", "radgraphxl"]


def cmd_evaluate(cfg):
    """Score candidate reports and write the metric table."""
    if cfg.pairs:
        raw = io.read_jsonl(_require(cfg.pairs))
        pairs = [EvalPair.from_dict(r) for r in raw]
        sources = {str(r["id"]): r.get("dataset", "all") for r in raw}
    else:
        params = load_checkpoint(_require(cfg.path("model.avt")))
        pairs, sources = build_pairs(cfg, params)
        io.write_jsonl([{**p.to_dict(), "dataset": sources[p.id]} for p in pairs], cfg.path("eval_pairs.jsonl"))
    clinical = None
    if cfg.clinical_scores:
        clinical = read_clinical_scores(_require(cfg.clinical_scores))
    rows, reports = evaluate_table(pairs, sources, cfg.label, clinical)
    per_id = [{"dataset": ds, **row} for ds, rep in reports.items() for row in rep.rows()]
    io.write_jsonl(per_id, cfg.path("per_id.jsonl"))
    io.write_csv(rows, cfg.path("metrics.csv"), TABLE_FIELDS)
    return {"pairs": len(pairs), "rows": rows}


# -- sweep -------------------------------------------------------------------

def data_subsets(ids, fractions, seed):
    """Seeded nested prefixes: ``{fraction: ids}`` with smaller fractions contained in larger ones."""
    ids = sorted(ids)
    order = [ids[i] for i in np.random.default_rng([seed, 2]).permutation(len(ids))]
    out = {}
    for frac in fractions:
        if not 0.0 < frac <= 1.0:
            raise ValidationError(f"data fraction must lie in (0, 1], got {frac}")
        out[frac] = order[:max(1, round_half_away(frac * len(order)))]
    return out


def sweep_cells(cfg):
    """Cartesian product of the sweep axes (missing axes fall back to the run config); duplicates dropped."""
    axes = {
        "mask_ratio": cfg.sweep.get("mask_ratio", [cfg.mask_ratio]),
        "compression": cfg.sweep.get("compression", [cfg.compression]),
        "connector": cfg.sweep.get("connector", [cfg.connector]),
        "data_fraction": cfg.sweep.get("data_fraction", [1.0]),
    }
    for name, values in axes.items():
        if not values:
            raise ValidationError(f"sweep axis {name} is empty")
    cells, seen, dups = [], set(), []
    for combo in itertools.product(*(axes[a] for a in SWEEP_AXES)):
        cell = dict(zip(SWEEP_AXES, combo))
        cell["mask_ratio"] = float(cell["mask_ratio"])
        cell["data_fraction"] = float(cell["data_fraction"])
        cell["connector"] = int(cell["connector"])
        key = cell_key(cell)
        if key in seen:
            dups.append(key)
            continue
        seen.add(key)
        cells.append(cell)
    if dups:
        logger.warning("dropped %d duplicate sweep cell(s): %s", len(dups), ", ".join(sorted(set(dups))))
    return cells


def cell_key(cell):
    return (f"mask={cell['mask_ratio']!r}|comp={cell['compression']}|conn={cell['connector']}"
            f"|frac={cell['data_fraction']!r}")


def _read_progress(path, valid):
    done = {}
    if not path.exists():
        return done
    for entry in io.read_jsonl(path):
        if entry.get("status") == "complete" and entry.get("cell") in valid:
            done[entry["cell"]] = entry["result"]
    return done


def run_cell(cfg, cell, tokens_by_id, reports_by_id, subsets, test_ids):
    if cell["compression"] not in COMPRESSIONS:
        raise ValidationError(f"unknown compression {cell['compression']!r}; valid: {list(COMPRESSIONS)}")
    ids = subsets[cell["data_fraction"]]
    tokens = [tokens_by_id[i] for i in ids]
    params, history = fit_model(cfg, tokens, [reports_by_id[i] for i in ids], cell["mask_ratio"],
                                cfg.sweep_pretrain_steps, cfg.sweep_align_steps, cell["compression"],
                                cell["connector"])
    test_tokens = [tokens_by_id[i] for i in test_ids]
    mae = evaluate_loss("mae", params, test_tokens, mask_ratio=cell["mask_ratio"], seed=cfg.seed)
    texts = _text_embeddings(cfg, [reports_by_id[i] for i in test_ids])
    align = evaluate_loss("align", params, test_tokens, texts)
    bank = [reports_by_id[i] for i in ids]
    cands = retrieve_reports(params, test_tokens, bank, _text_embeddings(cfg, bank))
    pairs = [EvalPair(i, c, (reports_by_id[i],)) for i, c in zip(test_ids, cands)]
    score = avg_nlp(evaluate_pairs(pairs).corpus_means()) if len(pairs) >= 2 else None
    return {"n_train": len(ids), "final_train_loss": history[-1]["loss"], "test_mae_loss": mae,
            "test_align_loss": align, "avg_nlp": score}


SWEEP_FIELDS = list(SWEEP_AXES) + ["n_train", "final_train_loss", "test_mae_loss", "test_align_loss", "avg_nlp"]


def cmd_sweep(cfg):
    """Run the grid of mask ratio, compression, connector depth and data fraction."""
    cells = sweep_cells(cfg)
    records = {r.id: r for r in _curated(cfg)}
    manifest = _manifest(cfg)
    train_ids = [i for i in manifest.ids("train") if i in records]
    test_ids = [i for i in manifest.ids("test") if i in records]
    if not train_ids or not test_ids:
        raise ValidationError("sweep needs non-empty train and test splits")
    subsets = data_subsets(train_ids, sorted({c["data_fraction"] for c in cells}), cfg.seed)
    tokens_by_id = dict(zip(train_ids + test_ids, _tokens(cfg, train_ids + test_ids)))
    reports_by_id = {i: r.report for i, r in records.items()}

    progress_path = cfg.path("sweep_progress.jsonl")
    keys = [cell_key(c) for c in cells]
    done = _read_progress(progress_path, set(keys))
    # rewrite the progress file with completed cells of this grid only
    entries = [{"cell": k, "status": "complete", "result": done[k]} for k in keys if k in done]
    io.write_jsonl(entries, progress_path)

    def run(cell):
        key = cell_key(cell)
        with open(progress_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"cell": key, "status": "started"}, sort_keys=True) + "\n")
        result = run_cell(cfg, cell, tokens_by_id, reports_by_id, subsets, test_ids)
        with open(progress_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"cell": key, "status": "complete", "result": result}, sort_keys=True) + "\n")
        return key, result

    todo = [c for c in cells if cell_key(c) not in done]
    skipped = len(cells) - len(todo)
    if skipped:
        logger.info("resuming sweep: %d of %d cells already complete", skipped, len(cells))
    if cfg.jobs > 1 and len(todo) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(cfg.jobs) as pool:
            done.update(pool.map(run, todo))
    else:
        done.update(run(c) for c in todo)
    rows = [{**c, **done[cell_key(c)]} for c in cells]
    io.write_csv(rows, cfg.path("sweep.csv"), SWEEP_FIELDS)
    return {"cells": len(cells), "ran": len(todo), "skipped": skipped}


COMMANDS = {
    "synth": cmd_synth,
    "curate": cmd_curate,
    "split": cmd_split,
    "preprocess": cmd_preprocess,
    "tokenize": cmd_tokenize,
    "pretrain": cmd_pretrain,
    "gradcheck": cmd_gradcheck,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}
