"""End-to-end experiment runner with content-addressed, resumable stage artifacts.

Stages: ingest -> clean victims -> autoencoder -> graph -> attacks -> poisoned
victims -> detection -> report. Each cached stage lives in
``<out>/cache/<stage>-<key>/`` where the key hashes the stage's settings and
the keys of its inputs, so runs and grid cells that agree on a prefix of the
pipeline share its artifacts. A stage directory is written under a temporary
name and renamed when complete, so an interrupted run never leaves a
half-written artifact behind.
"""

import csv
import hashlib
import itertools
import json
import logging
import os
import shutil
import time
from datetime import datetime
from pathlib import Path

from .autoencoder import ProfileAE, pretrain_ae
from .baselines import HEURISTICS, HeuristicConfig
from .checkpoint import config_hash, load_store, save_store
from .config import GRID_AXES
from .data import AttackerView, InteractionMatrix, SplitBundle, attacker_subsample, load_ratings, split_holdout
from .diffusion import AttackConfig, generate_profiles, sample_templates, select_targets, train_lda
from .errors import ConfigError
from .evaluation import AttackReport, DetectorConfig, attack_metrics, detect, inject, pca_export
from .graph import GraphEncoder
from .kernel import Rng
from .trainconf import TrainConfig
from .victims import DEFAULT_CONFIGS, evaluate_rec, load_victim, train_victim

log = logging.getLogger(__name__)

DIFFUSION_MODES = {
    "diffusion": "ca",
    "diffusion-sum": "sum",
    "diffusion-concat": "concat",
    "diffusion-uncond": "none",
    "ae-only": "ca",
}


def blob_hash(path):
    """Git-style object id (sha1 of ``b"blob <size>\\0" + content``)."""
    data = Path(path).read_bytes()
    h = hashlib.sha1(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


class StageCache:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(*parts):
        return config_hash(list(parts))

    def path(self, stage, key):
        return self.root / f"{stage}-{key}"

    def get(self, stage, key):
        p = self.path(stage, key)
        if (p / "stage.json").exists():
            with open(p / "stage.json") as fh:
                return p, json.load(fh)
        return None

    def put(self, stage, key, write, meta):
        """Run ``write(tmpdir)`` and publish the directory atomically with ``meta``."""
        final = self.path(stage, key)
        tmp = self.root / f".tmp-{stage}-{key}-{os.getpid()}"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        write(tmp)
        with open(tmp / "stage.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
        return final


class Runner:
    """Executes one experiment, reusing cached stages where the keys match."""

    def __init__(self, cfg, out=None):
        self.cfg = cfg
        self.out = Path(out if out is not None else cfg["run.out"])
        self.cache = StageCache(self.out / "cache")
        self.runtimes = {}
        self.cached = []

    def _stage(self, stage, key, compute, write, read):
        hit = self.cache.get(stage, key)
        if hit is not None:
            path, meta = hit
            self.runtimes[stage] = meta["seconds"]
            self.cached.append(stage)
            log.info("%s: cached (%s)", stage, key)
            return read(path, meta)
        log.info("%s: running", stage)
        t = time.perf_counter()
        value, meta = compute()
        seconds = time.perf_counter() - t
        meta = dict(meta, seconds=seconds, key=key, stage=stage)
        self.cache.put(stage, key, lambda d: write(d, value), meta)
        self.runtimes[stage] = seconds
        return value

    # Stages

    def ingest(self):
        c = self.cfg
        data_hash = blob_hash(c["data.path"])
        settings = {k: c.values["data"][k] for k in c.values["data"] if k != "path"}
        self.inputs = {"dataset": {"path": str(c["data.path"]), "blob": data_hash}}
        key = self.cache.key("ingest", data_hash, settings)
        self.ingest_key = key

        def compute():
            ds = load_ratings(c["data.path"], c["data.format"], c["data.min_rating"])
            split = split_holdout(ds.matrix, seed=c["data.split_seed"])
            view = attacker_subsample(ds.matrix, c["data.attacker_fraction"], seed=c["data.attacker_seed"],
                                      level=c["data.attacker_level"])
            return (split, view), {"n_users": ds.matrix.n_users, "n_items": ds.matrix.n_items,
                                   "nnz": ds.matrix.nnz, "view_nnz": view.matrix.nnz}

        def write(d, value):
            split, view = value
            split.save(d / "split")
            view.save(d / "view.txt")

        def read(d, meta):
            return SplitBundle.load(d / "split"), AttackerView.load(d / "view.txt")

        self.split, self.view = self._stage("ingest", key, compute, write, read)

    def victim_config(self, kind):
        c = self.cfg
        base = DEFAULT_CONFIGS[kind]
        changes = {"epochs": c["victims.epochs"], "patience": c["victims.patience"], "seed": c["victims.seed"]}
        if kind == "LGN":
            changes["layers"] = c["victims.layers"]
        if c["victims.lr"] is not None:
            changes["lr"] = c["victims.lr"]
        if c["victims.weight_decay"] is not None:
            changes["weight_decay"] = c["victims.weight_decay"]
        return base.with_(**changes)

    def clean_victim(self, kind):
        vcfg = self.victim_config(kind)
        key = self.cache.key("victim", self.ingest_key, kind, vcfg.to_dict())
        split = self.split
        K = self.cfg["eval.K"]

        def compute():
            model = train_victim(kind, split.train, vcfg, val=split.val, K=K)
            rec = evaluate_rec(model, split.train, split.test, K)
            return model, {"epochs_run": model.epochs_run, "test": rec}

        def write(d, model):
            model.save(d / "model.ckpt")

        def read(d, meta):
            return load_victim(d / "model.ckpt", split.train)

        model = self._stage(f"victim[{kind}]", key, compute, write, read)
        return model, key

    def autoencoder(self):
        c = self.cfg
        a = c.values["autoencoder"]
        tcfg = TrainConfig(lr=a["lr"], weight_decay=a["weight_decay"], epochs=a["epochs"],
                           batch_size=a["batch_size"], seed=c["attack.seed"])
        key = self.cache.key("ae", self.ingest_key, a, c["attack.seed"])
        self.ae_key = key
        n_items = self.view.n_items

        def compute():
            ae = pretrain_ae(self.view, tcfg, dim=a["dim"], dropout=a["dropout"])
            return ae, {"final_loss": ae.history[-1] if ae.history else None}

        def write(d, ae):
            save_store(d / "ae.ckpt", ae.store, {"dim": a["dim"]})

        def read(d, meta):
            ae = ProfileAE(n_items, dim=a["dim"], seed=c["attack.seed"], dropout=a["dropout"])
            load_store(d / "ae.ckpt", ae.store)
            ae.freeze()
            return ae

        self.ae = self._stage("autoencoder", key, compute, write, read)
        t = time.perf_counter()
        feats = self.ae.encode(self.view.matrix.to_dense())
        self.genc = GraphEncoder.from_view(self.view, feats, layers=c["diffusion.layers"])
        self.runtimes["graph"] = time.perf_counter() - t

    def choose_targets(self):
        c = self.cfg
        if c["attack.targets"]:
            targets = tuple(sorted(int(t) for t in c["attack.targets"]))
            seen = self.view.matrix.item_counts()
            for t in targets:
                if not 0 <= t < self.view.n_items or seen[t] == 0:
                    raise ConfigError(f"target {t} is not present in the attacker view")
        else:
            seed = c["attack.target_seed"] if c["attack.target_seed"] is not None else c["attack.seed"]
            targets = select_targets(self.view, c["attack.n_targets"], seed=seed,
                                     bottom_fraction=c["attack.target_pool"])
        self.targets = targets
        return targets

    def attack_config(self, method):
        c = self.cfg
        d = c.values["diffusion"]
        return AttackConfig(
            k=c["attack.k"], targets=self.targets, steps=0 if method == "ae-only" else d["steps"],
            beta_min=d["beta_min"], beta_max=d["beta_max"], mode=DIFFUSION_MODES[method],
            cond_source=d["cond_source"], bottleneck=d["bottleneck"], force_targets=d["force_targets"],
            budget_min=d["budget_min"], budget_max=d["budget_max"], lr=d["lr"], weight_decay=d["weight_decay"],
            epochs=d["epochs"], batch_size=d["batch_size"], seed=c["attack.seed"], attn_scale=d["attn_scale"],
            posterior_variance=d["posterior_variance"],
        )

    def attack(self, method):
        c = self.cfg
        if method in HEURISTICS:
            hcfg = HeuristicConfig(c["attack.k"], self.targets, c["attack.budget"], c["attack.seed"],
                                   c["attack.bandwagon_pool"])
            key = self.cache.key("attack", self.ingest_key, method, hcfg.__dict__)

            def compute():
                return HEURISTICS[method](self.view, hcfg), {"method": method}
        else:
            acfg = self.attack_config(method)
            settings = acfg.to_dict()
            settings["graph_layers"] = c["diffusion.layers"]
            key = self.cache.key("attack", self.ingest_key, self.ae_key, method, settings)

            def compute():
                attacker = train_lda(self.view, self.ae, self.genc, acfg) if acfg.steps > 0 else None
                templates = sample_templates(self.view, acfg.k, seed=acfg.seed, min_len=acfg.template_min_len)
                ya = generate_profiles(templates, acfg, self.ae, self.genc, attacker, self.view)
                meta = {"method": method, "templates": [int(t) for t in templates]}
                if attacker is not None:
                    meta["final_loss"] = attacker.history[-1] if attacker.history else None
                return ya, meta

        def write(d, ya):
            ya.save(d / "fakes.txt")

        def read(d, meta):
            return InteractionMatrix.load(d / "fakes.txt")

        return self._stage(f"attack[{method}]", key, compute, write, read), key

    def poisoned(self, kind, method, fakes, attack_key):
        vcfg = self.victim_config(kind)
        key = self.cache.key("poisoned", attack_key, kind, vcfg.to_dict(), self.cfg["eval.K"], list(self.targets))
        split = self.split
        K = self.cfg["eval.K"]

        def compute():
            model = train_victim(kind, inject(split.train, fakes), vcfg, val=split.val, K=K)
            m = attack_metrics(model, self.targets, split.train, K=K)
            return m.to_dict(), {"epochs_run": model.epochs_run}

        def write(d, metrics):
            with open(d / "metrics.json", "w") as fh:
                json.dump(metrics, fh, indent=2, sort_keys=True)

        def read(d, meta):
            with open(d / "metrics.json") as fh:
                return json.load(fh)

        return self._stage(f"poisoned[{kind},{method}]", key, compute, write, read)

    # Driver

    def run(self, run_dir):
        c = self.cfg
        report = AttackReport(config=c.to_dict(), config_hash=c.hash())
        self.ingest()
        report.inputs = self.inputs
        methods = c.attack_methods()
        clean = {}
        for kind in c["victims.kinds"]:
            clean[kind] = self.clean_victim(kind)
        if methods:
            self.autoencoder()
            targets = self.choose_targets()
            report.targets = list(targets)
            for kind, (model, _) in clean.items():
                report.clean[kind] = attack_metrics(model, targets, self.split.train, K=c["eval.K"]).to_dict()
        report.seeds = {"split": c["data.split_seed"], "attacker_view": c["data.attacker_seed"],
                        "attack": c["attack.seed"], "victims": c["victims.seed"],
                        "targets": c["attack.target_seed"] if c["attack.target_seed"] is not None else c["attack.seed"]}
        for kind, (model, _) in clean.items():
            report.recommendation[kind] = evaluate_rec(model, self.split.train, self.split.test, c["eval.K"])
        fakes = {}
        for method in methods:
            ya, akey = self.attack(method)
            fakes[method] = ya
            for kind in c["victims.kinds"]:
                report.add_cell(kind, method, self.poisoned(kind, method, ya, akey))
        if methods and c["eval.detect"]:
            dcfg = DetectorConfig(q=c["eval.q"], flag_fraction=c["eval.flag_fraction"])
            for method, ya in fakes.items():
                t = time.perf_counter()
                out = detect(inject(self.split.train, ya), self.split.train.n_users, dcfg)
                self.runtimes[f"detect[{method}]"] = time.perf_counter() - t
                report.detection[method] = out.to_dict()
        if methods and c["eval.pca"]:
            groups = [("Normal", self.split.train)] + [(m, fakes[m]) for m in methods]
            pca_export(groups, Path(run_dir) / "pca.csv")
        report.runtimes = dict(self.runtimes)
        report.cached = list(self.cached)
        return report


def _new_run_dir(out, cfg):
    runs = Path(out) / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    base = f"{stamp}-{cfg.hash()[:8]}"
    path = runs / base
    n = 1
    while path.exists():
        path = runs / f"{base}-{n}"
        n += 1
    path.mkdir()
    return path


def _resumable_run_dir(out, cfg):
    runs = Path(out) / "runs"
    if not runs.exists():
        return None
    for path in sorted(runs.iterdir(), reverse=True):
        status = path / "status.json"
        if not status.exists():
            continue
        with open(status) as fh:
            s = json.load(fh)
        if s.get("config_hash") == cfg.hash() and s.get("state") != "complete":
            return path
    return None


def _write_status(run_dir, cfg, state, error=None):
    with open(Path(run_dir) / "status.json", "w") as fh:
        json.dump({"config_hash": cfg.hash(), "state": state, "error": error}, fh, indent=2)


def run_experiment(cfg, out=None, resume=False):
    """Run every stage and write the report bundle; returns ``(report, run_dir)``.

    With ``resume`` the most recent unfinished run directory for the same
    config is reused; completed stages are read back from the cache either way.
    """
    out = Path(out if out is not None else cfg["run.out"])
    run_dir = _resumable_run_dir(out, cfg) if resume else None
    if run_dir is None:
        run_dir = _new_run_dir(out, cfg)
    else:
        log.info("resuming in %s", run_dir)
    _write_status(run_dir, cfg, "running")
    with open(run_dir / "config.ini", "w") as fh:
        fh.write(cfg.to_ini())
    try:
        report = Runner(cfg, out).run(run_dir)
    except Exception as exc:
        _write_status(run_dir, cfg, "failed", f"{type(exc).__name__}: {exc}")
        raise
    report.save(run_dir)
    _write_status(run_dir, cfg, "complete")
    return report, run_dir


def grid_cells(cfg, axes):
    """Expand ``{"section.key": [values]}`` into ``(assignment, config)`` cells.

    Each cell of a non-empty grid gets its own attack seed derived from the
    base seed and the assignment; targets stay pinned to the base seed so all
    cells attack the same items.
    """
    for name in axes:
        if name not in GRID_AXES:
            raise ConfigError(f"grid axis {name!r} is not tunable; allowed: {', '.join(GRID_AXES)}")
    if not axes:
        return [({}, cfg)]
    names = sorted(axes)
    base = cfg["attack.seed"]
    target_seed = cfg["attack.target_seed"] if cfg["attack.target_seed"] is not None else base
    cells = []
    for values in itertools.product(*(axes[n] for n in names)):
        assignment = dict(zip(names, values))
        label = json.dumps(assignment, sort_keys=True)
        seed = Rng(base, "grid").derive_seed(label) % (2 ** 31)
        changes = dict(assignment)
        changes["attack.seed"] = seed
        changes["attack.target_seed"] = target_seed
        cells.append((assignment, cfg.with_(**changes)))
    return cells


def grid(cfg, axes, out=None, resume=False):
    """Run every grid cell and write a summary table; returns a list of ``(assignment, report, run_dir)``."""
    out = Path(out if out is not None else cfg["run.out"])
    results = []
    for assignment, cell_cfg in grid_cells(cfg, axes):
        report, run_dir = run_experiment(cell_cfg, out, resume=resume)
        results.append((assignment, report, run_dir))
    if axes:
        write_grid_summary(out / "grids" / f"grid-{config_hash([cfg.hash(), axes])[:8]}.csv", results)
    return results


def write_grid_summary(path, results):
    """One row per (cell, victim, method); ``best`` marks the highest HR for each (victim, method)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for assignment, report, run_dir in results:
        for victim, method, hr, mrr in report.metrics_rows():
            rows.append({"cell": json.dumps(assignment, sort_keys=True), "seed": report.seeds.get("attack"),
                         "victim": victim, "method": method, "hr": hr, "mrr": mrr, "run": Path(run_dir).name})
    best = {}
    for r in rows:
        k = (r["victim"], r["method"])
        if k not in best or r["hr"] > best[k]["hr"]:
            best[k] = r
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["cell", "seed", "victim", "method", "hr", "mrr", "best", "run"])
        w.writeheader()
        for r in rows:
            w.writerow(dict(r, hr=f"{r['hr']:.6f}", mrr=f"{r['mrr']:.6f}",
                            best=int(best[(r["victim"], r["method"])] is r)))
    return path


def stage_ratio(report, attack="attack[diffusion]", victim="victim[MF]"):
    """Attack-stage wall-clock divided by clean victim training time."""
    a, v = report.runtimes.get(attack), report.runtimes.get(victim)
    if a is None or v is None or v <= 0:
        return float("nan")
    return a / v


__all__ = ["Runner", "StageCache", "blob_hash", "grid", "grid_cells", "run_experiment", "stage_ratio"]
