"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Training-based criteria share one module-scoped experiment fixture. The
training configuration used here (lr 1e-3, batch 8, 1200 steps, width-32
heads) is an explicit desk-scale choice: the library defaults follow the
reference hyperparameters, which converge far too slowly for the stated
runtime budgets at this problem size.
"""

import json
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import tiny_config
from fdcheck import FD_ATOL, FD_RTOL, autograd_grads, fd_grads
from test_evaluation import pr_curve_ap_oracle, rand_instances, roc_auc_oracle
from test_inference import hard_nms_oracle
from test_supervision import mining_oracle

from pointtal.cli import run as cli_run
from pointtal.datamodel import PointAnnotationSet, load_dataset_dir
from pointtal.evaluation import binary_auc_acc, match_and_ap
from pointtal.experiments import ablate, run_experiment
from pointtal.inference import soft_nms
from pointtal.network import NetConfig, build_model
from pointtal.supervision import (
    LossParts,
    LossWeights,
    build_window,
    l2_normalize,
    loss_ac,
    loss_act,
    loss_aou,
    loss_aru,
    loss_bkg,
    loss_bkg_neg,
    loss_contrastive,
    loss_total,
    mine_pseudo_labels,
)
from pointtal.synthgen import PointStrategy, default_test_spec, default_train_spec, write_dataset
from pointtal.trainer import TrainConfig, derive_seed, evaluate_proxy, train


def report(criterion: int, ok: bool, detail: str):
    print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# Criterion 1: gradient correctness, per op and end to end, < 60 s
# ---------------------------------------------------------------------------


def _grads_close(analytic, numeric):
    return all(
        torch.allclose(a, n, rtol=FD_RTOL, atol=FD_ATOL) for a, n in zip(analytic, numeric)
    )


def _end_to_end_loss(model, feats, points, weights):
    """The training loss for one video with mining and shuffles frozen.

    Mining is detached in training, so the differentiated function holds
    pseudo-labels fixed; the finite-difference probe must do the same.
    """
    half = model.config.t
    with torch.no_grad():
        _, Q0 = model.classify(model.embed(feats))
    pseudo = mine_pseudo_labels(points, Q0.numpy())
    T = feats.shape[0]
    valid = [t for t, _ in points.points if t - half >= 0 and t + half <= T - 1]
    rng = np.random.default_rng(7)
    perms = {}
    for i in valid:
        while True:
            p = rng.permutation(2 * half + 1)
            if not np.array_equal(p, np.arange(2 * half + 1)) and not np.array_equal(
                p, np.arange(2 * half, -1, -1)
            ):
                perms[i] = torch.from_numpy(p.copy())
                break

    def compute():
        x = model.embed(feats)
        P, Q = model.classify(x)
        parts = LossParts(
            act=loss_act(P, pseudo, weights),
            bkg=loss_bkg(Q, pseudo, weights) + loss_bkg_neg(Q, pseudo, weights),
            contra=loss_contrastive(l2_normalize(x), pseudo, weights),
        )
        ac_p, ac_t, aou_f, aou_r, aru_p, aru_s = [], [], [], [], [], []
        x_tasks = {task: model.adapt(x, task) for task in ("ac", "aou", "aru")}
        for i in valid:
            win = build_window(x_tasks["ac"], i, half)
            left = win.features[:half]
            right = torch.flip(win.features[half + 1 :], dims=[0])
            ac_p.append(model.ac_predict(left, right))
            ac_t.append(win.features[half])
            win = build_window(x_tasks["aou"], i, half)
            aou_f.append(model.discriminate(win.features, "order"))
            aou_r.append(model.discriminate(torch.flip(win.features, dims=[0]), "order"))
            win = build_window(x_tasks["aru"], i, half)
            aru_p.append(model.discriminate(win.features, "regularity"))
            aru_s.append(model.discriminate(win.features[perms[i]], "regularity"))
        parts.ac = loss_ac(ac_p, ac_t)
        parts.aou = loss_aou(aou_f, aou_r)
        parts.aru = loss_aru(aru_p, aru_s)
        return loss_total(parts, weights)

    return compute


class TestCriterion1:
    def test_gradient_correctness(self):
        t0 = time.perf_counter()
        failures = []

        # per-operation checks, 5 random draws each
        for draw in range(5):
            model = build_model(tiny_config(seed=draw))
            gen = torch.Generator().manual_seed(1000 + draw)

            def rnd(*shape):
                return torch.randn(*shape, dtype=torch.float64, generator=gen)

            x_in = rnd(10, 8)
            ops = {
                "embed": (
                    lambda: model.embed(x_in).sum(),
                    list(model.input_proj.parameters())
                    + list(model.encoder.parameters())
                    + list(model.temporal_conv.parameters()),
                ),
                "classify": (
                    lambda: sum(model.classify(x_emb)[0].sum() + model.classify(x_emb)[1].sum() for _ in [0]),
                    list(model.classifier.parameters()),
                ),
                "adapt": (
                    lambda: model.adapt(x_emb, "ac").sum(),
                    list(model.adapters["ac"].parameters()),
                ),
                "ac_predict": (
                    lambda: model.ac_predict(left, right).sum(),
                    list(model.completion_head.parameters()),
                ),
                "discriminate": (
                    lambda: model.discriminate(win, "order"),
                    list(model.discriminators["order"].parameters()),
                ),
            }
            x_emb = model.embed(x_in).detach()
            left, right = rnd(2, 8), rnd(2, 8)
            win = rnd(5, 8)
            for name, (f, params) in ops.items():
                analytic = autograd_grads(f(), params)
                numeric = fd_grads(lambda: float(f().detach()), params)
                if not _grads_close(analytic, numeric):
                    failures.append(f"{name}[draw {draw}]")

        # end-to-end loss_total on a tiny config, 5 random draws
        for draw in range(5):
            model = build_model(tiny_config(seed=50 + draw))
            gen = torch.Generator().manual_seed(2000 + draw)
            T = 12
            feats = torch.randn(T, 8, dtype=torch.float64, generator=gen)
            points = PointAnnotationSet("v", T, ((3, 0), (8, 1)))
            f = _end_to_end_loss(model, feats, points, LossWeights())
            params = list(model.parameters())
            analytic = autograd_grads(f(), params)
            numeric = fd_grads(lambda: float(f().detach()), params)
            if not _grads_close(analytic, numeric):
                failures.append(f"end_to_end[draw {draw}]")

        elapsed = time.perf_counter() - t0
        ok = not failures and elapsed < 60.0
        report(
            1,
            ok,
            f"reverse-mode vs central differences (rel 1e-4): "
            f"{'all matched' if not failures else 'mismatch in ' + ', '.join(failures)}, "
            f"{elapsed:.1f}s (< 60s)",
        )


# ---------------------------------------------------------------------------
# Criterion 2: oracle equivalences, exact to 1e-9, < 120 s
# ---------------------------------------------------------------------------


class TestCriterion2:
    def test_oracle_equivalences(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(42)

        # mining vs snippet-wise brute force, 500 cases, T <= 50
        mining_bad = 0
        for _ in range(500):
            T = int(rng.integers(1, 51))
            Q = rng.uniform(size=T)
            if rng.integers(0, 3) == 0:
                Q = np.round(Q, 1)
            n = int(rng.integers(0, min(T, 6) + 1))
            ts = sorted(rng.choice(T, size=n, replace=False))
            points = PointAnnotationSet(
                "v", T, tuple((int(t), int(rng.integers(0, 3))) for t in ts)
            )
            got = mine_pseudo_labels(points, Q)
            want_act, want_bkg = mining_oracle(points, Q)
            if got.action_snippets != want_act or got.background_snippets != want_bkg:
                mining_bad += 1

        # AP vs exhaustive PR oracle, 200 cases
        ap_bad = 0
        for case in range(200):
            props, gt = rand_instances(rng, int(rng.integers(1, 4)), int(rng.integers(0, 6)))
            thr = float(rng.choice([0.1, 0.3, 0.5, 0.7]))
            for cls in (0, 1):
                got = match_and_ap(props, gt, thr, cls)
                want = pr_curve_ap_oracle(props, gt, thr, cls)
                if (got is None) != (want is None):
                    ap_bad += 1
                elif got is not None and abs(got - want) > 1e-9:
                    ap_bad += 1

        # soft-NMS at sigma -> 0 vs hard-NMS oracle, 200 cases
        nms_bad = 0
        for _ in range(200):
            props, _ = rand_instances(rng, 0, int(rng.integers(1, 10)))
            got = soft_nms(props, sigma=1e-6, min_score=0.001, top_k=6)
            want = hard_nms_oracle(props, min_score=0.001, top_k=6)
            if [(p.s, p.e, p.y) for p in got] != [(p.s, p.e, p.y) for p in want]:
                nms_bad += 1
            elif any(abs(g.confidence - w.confidence) > 1e-9 for g, w in zip(got, want)):
                nms_bad += 1

        # pairwise AUC vs trapezoidal ROC, 200 cases
        auc_bad = 0
        for _ in range(200):
            pos = np.round(rng.uniform(size=int(rng.integers(1, 15))), 1)
            neg = np.round(rng.uniform(size=int(rng.integers(1, 15))), 1)
            auc, _ = binary_auc_acc(pos, neg)
            if abs(auc - roc_auc_oracle(pos, neg)) > 1e-9:
                auc_bad += 1

        elapsed = time.perf_counter() - t0
        ok = mining_bad == ap_bad == nms_bad == auc_bad == 0 and elapsed < 120.0
        report(
            2,
            ok,
            f"mining 500 cases ({mining_bad} bad), AP 200 ({ap_bad} bad), "
            f"soft-NMS 200 ({nms_bad} bad), AUC 200 ({auc_bad} bad), "
            f"{elapsed:.1f}s (< 120s)",
        )


# ---------------------------------------------------------------------------
# Criteria 3 + 4: multi-task gain and proxy learnability on the default spec
# ---------------------------------------------------------------------------

ACCEPT_NET = dict(D=32, D_e=32, D_a=32, D_h=32, H=4, C=3)
ACCEPT_TRAIN = dict(learning_rate=1e-3, batch_size=8, steps=1200)
SEEDS = (11, 12, 13)


def accept_config(seed: int, aux: float) -> TrainConfig:
    weights = LossWeights(lam_ac=aux, lam_aou=aux, lam_aru=aux)
    return TrainConfig(
        seed=seed, weights=weights, net=NetConfig(seed=seed, **ACCEPT_NET), **ACCEPT_TRAIN
    )


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    write_dataset(root / "train", default_train_spec(seed=0), PointStrategy())
    write_dataset(root / "test", default_test_spec(seed=0), PointStrategy())
    train_bundle = load_dataset_dir(root / "train")
    test_bundle = load_dataset_dir(root / "test")

    t0 = time.perf_counter()
    out = {"full": [], "base": [], "proxy": [], "proxy_untrained": []}
    for seed in SEEDS:
        model, _ = train(train_bundle, accept_config(seed, 0.5))
        from pointtal.experiments import predict_bundle
        from pointtal.evaluation import mean_ap
        from pointtal.inference import InferConfig

        preds = predict_bundle(model, test_bundle, InferConfig())
        props = [p for ps in preds.values() for p in ps]
        gt = [g for gs in test_bundle.gt.values() for g in gs]
        out["full"].append(mean_ap(props, gt)["bands"]["0.1:0.7"])
        out["proxy"].append(
            evaluate_proxy(model, test_bundle.features, test_bundle.gt, seed=0)
        )
        untrained = build_model(NetConfig(seed=seed, **ACCEPT_NET))
        out["proxy_untrained"].append(
            evaluate_proxy(untrained, test_bundle.features, test_bundle.gt, seed=0)
        )

        base = run_experiment(train_bundle, test_bundle, accept_config(seed, 0.0))
        out["base"].append(base["bands"]["0.1:0.7"])
    out["elapsed"] = time.perf_counter() - t0
    out["bundles"] = (train_bundle, test_bundle)
    return out


class TestCriterion3:
    def test_multitask_gain(self, experiment):
        full = 100 * np.mean(experiment["full"])
        base = 100 * np.mean(experiment["base"])
        gain = full - base
        elapsed = experiment["elapsed"]
        ok = gain >= 1.0 and elapsed < 600.0
        report(
            3,
            ok,
            f"avg mAP[0.1:0.7] over {len(SEEDS)} seeds: multi-task {full:.1f} vs "
            f"baseline {base:.1f}, gain {gain:+.1f} (target >= +1.0), "
            f"{elapsed:.0f}s (< 600s)",
        )


class TestCriterion4:
    def test_proxy_learnability(self, experiment):
        trained = experiment["proxy"]
        untrained = experiment["proxy_untrained"]

        def mean(key, rows):
            return float(np.mean([r[key] for r in rows]))

        aou, aru, ac = (
            mean("aou_auc", trained),
            mean("aru_auc", trained),
            mean("ac_cos_sim", trained),
        )
        aou0, aru0, ac0 = (
            mean("aou_auc", untrained),
            mean("aru_auc", untrained),
            mean("ac_cos_sim", untrained),
        )
        exact = all(r["ac_cos_dist"] == 1.0 - r["ac_cos_sim"] for r in trained) and all(
            r["ac_cos_sim"] + r["ac_cos_dist"] == 1.0 for r in trained
        )
        ok = (
            aou >= 0.8
            and aru >= 0.7
            and ac >= 0.95
            and aou > aou0
            and aru > aru0
            and ac > ac0
            and exact
        )
        report(
            4,
            ok,
            f"aou_auc {aou:.3f} (>=0.8, untrained {aou0:.3f}), "
            f"aru_auc {aru:.3f} (>=0.7, untrained {aru0:.3f}), "
            f"ac_cos_sim {ac:.3f} (>=0.95, untrained {ac0:.3f}), "
            f"sim+dist==1 exact: {exact}",
        )


# ---------------------------------------------------------------------------
# Criterion 5: lambda sweep has an interior best in >= 2 of 3 seeds
# ---------------------------------------------------------------------------


class TestCriterion5:
    def test_lambda_sweep_shape(self, experiment, tmp_path):
        train_bundle, test_bundle = experiment["bundles"]
        base = replace(accept_config(0, 0.5), steps=600)
        interior = 0
        matrices = []
        for s, seed in enumerate(SEEDS):
            cfg = replace(base, seed=derive_seed(seed, 77))
            matrix = ablate(train_bundle, test_bundle, "lambda", cfg, num_seeds=1)
            rows = [(r["setup"]["lambda"], r["map_bands"]["0.1:0.7"]) for r in matrix["rows"]]
            best_lam = max(rows, key=lambda kv: kv[1])[0]
            interior += 0.1 < best_lam < 1.0 - 1e-9
            matrices.append({"seed": seed, "rows": rows, "best_lambda": best_lam})
        out = tmp_path / "lambda_sweep.json"
        out.write_text(json.dumps(matrices, indent=2))
        ok = interior >= 2
        report(
            5,
            ok,
            f"interior best lambda in {interior}/3 seeds "
            f"(best: {[m['best_lambda'] for m in matrices]}); matrix at {out}",
        )


# ---------------------------------------------------------------------------
# Criterion 6: bit-identical outputs for synth / train / infer / eval
# ---------------------------------------------------------------------------

MICRO_SYNTH = [
    "--videos", "3", "--classes", "2", "--dim", "8",
    "--t-min", "18", "--t-max", "24",
    "--instances-min", "1", "--instances-max", "2",
    "--len-min", "5", "--len-max", "8",
]


class TestCriterion6:
    def test_cli_determinism(self, tmp_path):
        net = {"D_e": 8, "D_a": 8, "D_h": 8, "F_e": 8, "H": 2}
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"steps": 5, "batch_size": 2, "net": net}))
        diffs = []
        outs = {}
        for tag in ("a", "b"):
            base = tmp_path / tag
            assert cli_run(["synth", "--out", str(base / "data"), "--seed", "3", *MICRO_SYNTH]) == 0
            assert cli_run(
                ["train", "--data", str(base / "data"), "--out", str(base / "run"),
                 "--config", str(config), "--seed", "4"]
            ) == 0
            assert cli_run(
                ["infer", "--checkpoint", str(base / "run" / "checkpoint.ckpt"),
                 "--data", str(base / "data"), "--out", str(base / "pred.jsonl")]
            ) == 0
            assert cli_run(
                ["eval", "--pred", str(base / "pred.jsonl"),
                 "--gt", str(base / "data" / "gt.jsonl"),
                 "--json", "--out", str(base / "eval.json")]
            ) == 0
            files = [
                *sorted((base / "data").rglob("*")),
                base / "run" / "checkpoint.ckpt",
                base / "run" / "report.jsonl",
                base / "pred.jsonl",
                base / "eval.json",
            ]
            outs[tag] = {
                str(f.relative_to(base)): f.read_bytes() for f in files if f.is_file()
            }
        assert set(outs["a"]) == set(outs["b"])
        for name in outs["a"]:
            if outs["a"][name] != outs["b"][name]:
                diffs.append(name)
        ok = not diffs
        report(
            6,
            ok,
            f"{len(outs['a'])} primary output files bit-identical across reruns"
            + ("" if ok else f"; differing: {diffs}"),
        )


# ---------------------------------------------------------------------------
# Criterion 7: module invariant suites pass as property-based tests
# ---------------------------------------------------------------------------


class TestCriterion7:
    def test_invariant_suites(self):
        files = [
            "test_datamodel.py",
            "test_synthgen.py",
            "test_network.py",
            "test_supervision.py",
            "test_inference.py",
            "test_evaluation.py",
            "test_trainer.py",
        ]
        here = Path(__file__).parent
        t0 = time.perf_counter()
        proc = subprocess.run(
            [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
             *[str(here / f) for f in files]],
            capture_output=True,
            text=True,
            cwd=here.parent,
        )
        elapsed = time.perf_counter() - t0
        tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else "?"
        ok = proc.returncode == 0
        report(7, ok, f"invariant suites: {tail} ({elapsed:.0f}s)")
