"""Feature tokenizer: one n-wide token per input column."""

from __future__ import annotations

import math

import numpy as np

from ..core import autodiff as ad
from ..core.autodiff import Parameter, Value
from ..core.errors import SchemaError
from .module import Module, uniform


class FeatureTokenizer(Module):
    """Affine tokens for numerical values, table lookups for categories.

    Each categorical table has cardinality + 1 rows; the last row is the
    unknown-category token.
    """

    def __init__(self, n_numerical: int, cardinalities: list[int], d_token: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(d_token)
        self.d_token = d_token
        self.n_numerical = n_numerical
        self.cardinalities = list(cardinalities)
        self.num_weights = Parameter(uniform(rng, bound, (n_numerical, d_token))) if n_numerical else None
        self.num_biases = Parameter(uniform(rng, bound, (n_numerical, d_token))) if n_numerical else None
        self.cat_tables = [Parameter(uniform(rng, bound, (card + 1, d_token))) for card in cardinalities]

    @property
    def n_tokens(self) -> int:
        return self.n_numerical + len(self.cardinalities)

    def __call__(self, x_num: np.ndarray | None, x_cat: np.ndarray | None) -> Value:
        return self.tokenize(x_num, x_cat)

    def tokenize(self, x_num: np.ndarray | None, x_cat: np.ndarray | None) -> Value:
        """(B, n_num) floats and (B, n_cat) indices → (B, N, n) tokens."""
        tokens = []
        if self.n_numerical:
            x_num = np.asarray(x_num)
            if x_num.ndim != 2 or x_num.shape[1] != self.n_numerical:
                raise SchemaError(f"expected {self.n_numerical} numerical columns, got shape {x_num.shape}")
            if not np.all(np.isfinite(x_num)):
                raise SchemaError("numerical inputs must be finite")
            values = ad.Value(x_num[:, :, None])
            tokens.append(ad.add(ad.mul(values, self.num_weights), self.num_biases))
        if self.cardinalities:
            x_cat = np.asarray(x_cat)
            if x_cat.ndim != 2 or x_cat.shape[1] != len(self.cardinalities):
                raise SchemaError(f"expected {len(self.cardinalities)} categorical columns, got shape {x_cat.shape}")
            for i, (card, table) in enumerate(zip(self.cardinalities, self.cat_tables)):
                column = x_cat[:, i].astype(np.int64)
                if column.size and (column.min() < 0 or column.max() > card):
                    raise SchemaError(
                        f"category index out of range for categorical feature {i}: "
                        f"valid 0..{card} (unknown = {card})"
                    )
                rows = ad.embedding_gather(table, column)
                tokens.append(ad.reshape(rows, (column.shape[0], 1, self.d_token)))
        return tokens[0] if len(tokens) == 1 else ad.concat(tokens, axis=1)
