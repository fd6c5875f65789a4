"""Artefact audit: classify non-opening sentences in isolation.

A bag-of-words logistic regression is trained on standalone train-split
sentences and compared on the test split against the all-negative majority
baseline. A clean dataset leaves the classifier at the baseline; beating it
by more than the margins marks the dataset suspect.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import retrieval
from .classifiers import SparseLogisticRegression, TfidfFeaturizer
from .dataio import DatasetInstance

DEFAULT_ACC_MARGIN = 2.0  # percentage points over majority accuracy
DEFAULT_F1_MARGIN = 10.0  # percentage points of sentence F1


class AuditError(ValueError):
    pass


@dataclass(frozen=True)
class StandaloneExample:
    text: str
    is_intruder: bool
    instance_id: str
    sentence_index: int  # >= 2


@dataclass
class AuditReport:
    majority_acc: float
    classifier_acc: float
    majority_f1: float
    classifier_f1: float
    verdict: str  # "clean" | "suspect"
    acc_margin: float
    f1_margin: float
    train_examples: int
    test_examples: int
    test_positive_fraction: float
    degenerate_training_set: bool
    hyperparameters: dict

    def rows(self) -> list[tuple[str, object]]:
        rows: list[tuple[str, object]] = [
            ("train_examples", self.train_examples),
            ("test_examples", self.test_examples),
            ("test_positive_fraction", round(self.test_positive_fraction, 6)),
            ("majority_acc", round(self.majority_acc, 4)),
            ("majority_f1", round(self.majority_f1, 4)),
            ("classifier_acc", round(self.classifier_acc, 4)),
            ("classifier_f1", round(self.classifier_f1, 4)),
            ("acc_margin", self.acc_margin),
            ("f1_margin", self.f1_margin),
            ("verdict", self.verdict),
            ("degenerate_training_set", self.degenerate_training_set),
        ]
        rows.extend((f"classifier_{k}", v) for k, v in sorted(self.hyperparameters.items()))
        return rows


def extract_standalone(
    instances: Sequence[DatasetInstance],
) -> tuple[list[StandaloneExample], list[StandaloneExample]]:
    """Every non-opening sentence of every instance, exactly once, by split."""
    train: list[StandaloneExample] = []
    test: list[StandaloneExample] = []
    for inst in sorted(instances, key=lambda i: i.instance_id):
        bucket = train if inst.split == "train" else test
        for idx in inst.non_opening_indices():
            bucket.append(
                StandaloneExample(
                    text=inst.sentences[idx - 1],
                    is_intruder=idx == inst.intruder_index,
                    instance_id=inst.instance_id,
                    sentence_index=idx,
                )
            )
    if not train or not test:
        raise AuditError("dataset must contain both train and test splits")
    return train, test


def run_audit(
    instances: Sequence[DatasetInstance],
    seed: int = 0,
    acc_margin: float = DEFAULT_ACC_MARGIN,
    f1_margin: float = DEFAULT_F1_MARGIN,
    num_bins: int = retrieval.DEFAULT_NUM_BINS,
) -> AuditReport:
    train, test = extract_standalone(instances)
    positives = sum(e.is_intruder for e in test)
    majority_acc = 100.0 * (len(test) - positives) / len(test)

    model = SparseLogisticRegression(seed=seed & 0xFFFFFFFF)
    degenerate = len({e.is_intruder for e in train}) < 2
    if degenerate:
        preds = [False] * len(test)
    else:
        featurizer = TfidfFeaturizer(num_bins).fit([e.text for e in train])
        model.fit(
            [featurizer.transform(e.text) for e in train],
            [1 if e.is_intruder else 0 for e in train],
        )
        preds = [model.predict(featurizer.transform(e.text)) for e in test]

    correct = sum(p == e.is_intruder for p, e in zip(preds, test))
    tp = sum(p and e.is_intruder for p, e in zip(preds, test))
    fp = sum(p and not e.is_intruder for p, e in zip(preds, test))
    fn = sum((not p) and e.is_intruder for p, e in zip(preds, test))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 100.0 * (2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    classifier_acc = 100.0 * correct / len(test)

    suspect = (classifier_acc - majority_acc > acc_margin) or (f1 > f1_margin)
    return AuditReport(
        majority_acc=majority_acc,
        classifier_acc=classifier_acc,
        majority_f1=0.0,
        classifier_f1=f1,
        verdict="clean" if degenerate or not suspect else "suspect",
        acc_margin=acc_margin,
        f1_margin=f1_margin,
        train_examples=len(train),
        test_examples=len(test),
        test_positive_fraction=positives / len(test),
        degenerate_training_set=degenerate,
        hyperparameters=model.hyperparameters,
    )
