#!/usr/bin/env python3
"""Smoke test for the hpscan_py extension module.

Builds the cdylib if needed, copies it to an importable name, and runs the
full pipeline from Python: case catalog, AUROC, stratified folds,
synthetic corpus -> features -> cross-validation, and model train /
predict / persist round trips.

Usage: python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "-p", "hpscan-py", "--release"], cwd=REPO, check=True
    )
    built = REPO / "target" / "release" / "libhpscan_py.so"
    if not built.exists():  # macOS naming
        built = REPO / "target" / "release" / "libhpscan_py.dylib"
    target = REPO / "python" / "hpscan_py.so"
    shutil.copyfile(built, target)
    sys.path.insert(0, str(REPO / "python"))
    import hpscan_py

    return hpscan_py


def main():
    hp = build_and_import()

    # case catalog
    assert hp.case_count() == 244
    cases = hp.enumerate_cases()
    assert len(cases) == 244
    assert cases[83][0] == 83
    assert (
        hp.describe_case(83)
        == "sender=creator, balanceCreator=negative, balanceContract=positive"
    )
    print("case catalog ok")

    # auroc
    assert hp.auroc([0.9, 0.8, 0.2, 0.1], [True, True, False, False]) == 1.0
    assert hp.auroc([0.5, 0.5, 0.5, 0.5], [True, False, True, False]) == 0.5
    assert abs(hp.auroc([0.9, 0.4, 0.6, 0.1], [True, True, False, False]) - 0.75) < 1e-12
    print("auroc ok")

    # stratified folds
    labels = [i < 295 for i in range(3000)]
    folds = hp.stratified_kfold(labels, k=10, seed=7)
    assert len(folds) == 3000
    for fold in range(10):
        positives = sum(1 for i, f in enumerate(folds) if f == fold and labels[i])
        assert positives in (29, 30), positives
    print("stratified folds ok")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        corpus = tmp / "corpus.jsonl"
        feats = tmp / "features.csv"

        n = hp.generate_corpus(str(corpus), honeypots=40, non_honeypots=160, seed=7)
        assert n == 200

        streams = hp.classify_corpus(str(corpus))
        assert len(streams) == 200
        # honeypots come first in the corpus and show the creator-deposit case
        assert any(83 in events for _, events in streams[:40])
        print("synthetic corpus ok")

        rows = hp.featurize_corpus(str(corpus), str(feats))
        assert rows == 200

        folds_auc, mean, std = hp.cross_validate_csv(
            str(feats), feature_set="all", k=5, seed=7, n_rounds=20
        )
        assert len(folds_auc) == 5
        assert mean >= 0.95, (mean, std)
        print(f"cross-validation ok (test AUROC {mean:.3f} +- {std:.3f})")

        # direct model training on the preprocessed matrix
        names, matrix, y = hp.preprocess_csv(str(feats))
        assert len(matrix) == 200 and len(names) == len(matrix[0])
        model = hp.GbdtModel.train(matrix, y, names, n_rounds=20, seed=7)
        probs = model.predict_proba(matrix)
        assert all(0.0 < p < 1.0 for p in probs)
        assert hp.auroc(probs, y) > 0.99

        importance = model.feature_importance()
        total = sum(v for _, v in importance)
        assert math.isclose(total, 1.0, rel_tol=1e-9)

        # persistence round trip
        model_path = tmp / "model.json"
        model.save(str(model_path))
        back = hp.GbdtModel.load(str(model_path))
        assert back.predict_proba(matrix) == probs
        assert hp.GbdtModel.from_json(model.to_json()).predict_proba(matrix) == probs
        print("model train/predict/persist ok")

    print("smoke test passed")


if __name__ == "__main__":
    main()
