from tlsverdict.ml_core.dataset import (
    BENIGN,
    MALICIOUS,
    NOMINAL,
    NUMERIC,
    Attribute,
    Dataset,
    DatasetError,
    EmptyDataset,
    SchemaMismatch,
    TooFewRows,
    read_csv,
    split_train_test,
    write_csv,
)
from tlsverdict.ml_core.discretize import (
    DegenerateAttribute,
    Discretizer,
    apply_discretizer,
    fit_discretizer,
)
from tlsverdict.ml_core.c45 import DecisionTreeModel, c45_predict, c45_train, entropy, gain_ratio, information_gain
from tlsverdict.ml_core.tan import TanBayesModel, tan_predict, tan_train
from tlsverdict.ml_core.evaluation import Metrics, confusion, evaluate

__all__ = [
    "BENIGN",
    "MALICIOUS",
    "NOMINAL",
    "NUMERIC",
    "Attribute",
    "Dataset",
    "DatasetError",
    "EmptyDataset",
    "SchemaMismatch",
    "TooFewRows",
    "read_csv",
    "split_train_test",
    "write_csv",
    "DegenerateAttribute",
    "Discretizer",
    "apply_discretizer",
    "fit_discretizer",
    "DecisionTreeModel",
    "c45_predict",
    "c45_train",
    "entropy",
    "gain_ratio",
    "information_gain",
    "TanBayesModel",
    "tan_predict",
    "tan_train",
    "Metrics",
    "confusion",
    "evaluate",
]
