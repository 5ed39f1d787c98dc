# File location: src/sparsity/masking.py
"""
Mapping between model parameters and mask units.

A unit is either a single parameter entry or a B x B block of a 2-d weight
array. Every entry of an included array belongs to exactly one unit; entries
of excluded arrays belong to none and are never masked.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import InvalidInputError
from src.utils.validation import ValidationUtils

logger = logging.getLogger(__name__)

CostLike = Union[float, np.ndarray]


class LayoutKind(str, Enum):
    PER_ENTRY = "per_entry"
    BLOCKS = "blocks"


@dataclass(frozen=True)
class ParameterLayout:
    """Ordered named arrays flattened back to back into one parameter vector"""
    names: Tuple[str, ...]
    shapes: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.names) != len(self.shapes):
            raise InvalidInputError("Layout needs exactly one shape per name")
        if len(set(self.names)) != len(self.names):
            raise InvalidInputError(f"Duplicate parameter names in layout: {self.names}")
        if not self.names:
            raise InvalidInputError("Layout must declare at least one parameter array")

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> 'ParameterLayout':
        return cls(tuple(arrays), tuple(tuple(np.shape(a)) for a in arrays.values()))

    @classmethod
    def flat(cls, size: int, name: str = "theta") -> 'ParameterLayout':
        return cls((name,), ((int(size),),))

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(int(np.prod(shape, dtype=np.int64)) for shape in self.shapes)

    @property
    def offsets(self) -> Tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate(([0], np.cumsum(self.sizes)[:-1])))

    @property
    def size(self) -> int:
        return int(sum(self.sizes))

    def slice_of(self, name: str) -> slice:
        idx = self.names.index(name)
        start = self.offsets[idx]
        return slice(start, start + self.sizes[idx])

    def flatten(self, arrays: Mapping[str, np.ndarray]) -> np.ndarray:
        parts = []
        for name, shape in zip(self.names, self.shapes):
            if name not in arrays:
                raise InvalidInputError(f"Missing parameter array: {name}")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise InvalidInputError(f"Array {name} has shape {arr.shape}, layout expects {shape}")
            parts.append(arr.reshape(-1))
        return np.concatenate(parts)

    def unflatten(self, vector: np.ndarray) -> Dict[str, np.ndarray]:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size,):
            raise InvalidInputError(f"Vector of length {vector.size} does not match layout size {self.size}")
        return {
            name: vector[self.slice_of(name)].reshape(shape)
            for name, shape in zip(self.names, self.shapes)
        }


@dataclass(eq=False)
class PruningGroupSpec:
    """How parameter entries are grouped into mask units, and what each unit costs.

    `entry_costs` maps an array name to a per-entry cost (scalar or an array of the
    array's shape); arrays not listed cost 1 per entry. A block unit costs the sum of
    its entry costs, i.e. entry cost * B**2 for uniform costs. `unit_cost` overrides
    the derived per-unit costs outright.
    """
    layout: ParameterLayout
    kind: LayoutKind = LayoutKind.PER_ENTRY
    block_size: int = 1
    entry_costs: Mapping[str, CostLike] = field(default_factory=dict)
    unit_cost: Optional[np.ndarray] = None
    excluded_tensors: FrozenSet[str] = frozenset()
    valuation_exponent: float = 0.0

    unit_index: np.ndarray = field(init=False, repr=False)
    costs: np.ndarray = field(init=False, repr=False)
    valuation_scale: np.ndarray = field(init=False, repr=False)
    unit_tensor: Tuple[str, ...] = field(init=False, repr=False)

    def __post_init__(self):
        self.kind = LayoutKind(self.kind)
        self.excluded_tensors = frozenset(self.excluded_tensors)

        unknown = self.excluded_tensors.difference(self.layout.names)
        if unknown:
            raise InvalidInputError(f"Excluded tensors not in layout: {sorted(unknown)}")
        unknown = set(self.entry_costs).difference(self.layout.names)
        if unknown:
            raise InvalidInputError(f"Entry costs given for unknown tensors: {sorted(unknown)}")
        if not ValidationUtils.validate_numeric_field(self.valuation_exponent, "valuation_exponent", 0.0, 1.0):
            raise InvalidInputError(f"valuation_exponent must lie in [0, 1], got {self.valuation_exponent}")
        if self.kind is LayoutKind.BLOCKS and (not isinstance(self.block_size, (int, np.integer)) or self.block_size < 1):
            raise InvalidInputError(f"block_size must be a positive integer, got {self.block_size}")

        unit_index = np.full(self.layout.size, -1, dtype=np.int64)
        unit_costs = []
        unit_tensor = []
        next_unit = 0

        for name, shape in zip(self.layout.names, self.layout.shapes):
            if name in self.excluded_tensors:
                continue
            entry_cost = self._entry_cost_array(name, shape)
            span = self.layout.slice_of(name)

            if self.kind is LayoutKind.PER_ENTRY:
                n = entry_cost.size
                unit_index[span] = np.arange(next_unit, next_unit + n)
                unit_costs.append(entry_cost.reshape(-1))
            else:
                local = self._block_index(name, shape)
                n = int(local.max()) + 1
                unit_index[span] = next_unit + local.reshape(-1)
                unit_costs.append(np.bincount(local.reshape(-1), weights=entry_cost.reshape(-1), minlength=n))

            unit_tensor.extend([name] * n)
            next_unit += n

        if next_unit == 0:
            raise InvalidInputError("Pruning group has no included parameter arrays")

        costs = np.concatenate(unit_costs)
        if self.unit_cost is not None:
            override = ValidationUtils.require_finite(self.unit_cost, "unit_cost")
            if override.size != next_unit:
                raise InvalidInputError(f"unit_cost has {override.size} entries but the group has {next_unit} units")
            costs = override
        ValidationUtils.require_positive(costs, "unit costs")

        self.unit_index = unit_index
        self.costs = costs
        self.valuation_scale = costs ** self.valuation_exponent
        self.unit_tensor = tuple(unit_tensor)
        logger.debug(f"Pruning group: {self.kind.value}, {next_unit} units over {self.n_included} entries")

    @classmethod
    def for_vector(cls, size: int, costs: Optional[Sequence[float]] = None,
                   valuation_exponent: float = 0.0) -> 'PruningGroupSpec':
        """Per-entry units over a bare vector, with optional per-unit costs."""
        return cls(
            layout=ParameterLayout.flat(size),
            unit_cost=None if costs is None else np.asarray(costs, dtype=np.float64),
            valuation_exponent=valuation_exponent,
        )

    @property
    def included(self) -> np.ndarray:
        return self.unit_index >= 0

    @property
    def n_units(self) -> int:
        return int(self.costs.size)

    @property
    def n_included(self) -> int:
        return int(np.count_nonzero(self.included))

    @property
    def total_cost(self) -> float:
        return float(self.costs.sum())

    @property
    def uniform_costs(self) -> bool:
        return bool(np.all(self.costs == self.costs[0]))

    def _entry_cost_array(self, name: str, shape: Tuple[int, ...]) -> np.ndarray:
        cost = self.entry_costs.get(name, 1.0)
        try:
            return np.broadcast_to(np.asarray(cost, dtype=np.float64), shape)
        except ValueError as e:
            raise InvalidInputError(f"Entry costs for {name} do not broadcast to shape {shape}") from e

    def _block_index(self, name: str, shape: Tuple[int, ...]) -> np.ndarray:
        b = int(self.block_size)
        if len(shape) != 2:
            raise InvalidInputError(f"Block layout needs 2-d arrays; {name} has shape {shape}")
        rows, cols = shape
        if rows % b or cols % b:
            raise InvalidInputError(f"Array {name} of shape {shape} is not divisible into {b}x{b} blocks")
        r, c = np.indices(shape)
        return (r // b) * (cols // b) + (c // b)


def _check_entry_length(array: np.ndarray, spec: PruningGroupSpec, field_name: str) -> np.ndarray:
    array = np.asarray(array, dtype=np.float64).reshape(-1)
    if array.size != spec.layout.size:
        raise InvalidInputError(f"{field_name} has {array.size} entries, layout has {spec.layout.size}")
    return array


def _check_unit_length(array: np.ndarray, spec: PruningGroupSpec, field_name: str) -> np.ndarray:
    array = np.asarray(array, dtype=np.float64).reshape(-1)
    if array.size != spec.n_units:
        raise InvalidInputError(f"{field_name} has {array.size} entries, group has {spec.n_units} units")
    return array


def unit_values(theta: np.ndarray, spec: PruningGroupSpec) -> np.ndarray:
    """Per-unit value c**p * (sum of |theta| over the unit's entries)."""
    theta = _check_entry_length(theta, spec, "theta")
    return spec.valuation_scale * collapse_grad(np.abs(theta), spec)


def expand_mask(unit_mask: np.ndarray, spec: PruningGroupSpec, fill_excluded: float = 1.0) -> np.ndarray:
    """Broadcast each unit's value to its entries; excluded entries get `fill_excluded`."""
    unit_mask = _check_unit_length(unit_mask, spec, "unit mask")
    included = spec.included
    out = np.full(spec.layout.size, fill_excluded, dtype=np.float64)
    out[included] = unit_mask[spec.unit_index[included]]
    return out


def collapse_grad(entry_values: np.ndarray, spec: PruningGroupSpec) -> np.ndarray:
    """Sum entry values per unit (adjoint of expand_mask with fill_excluded=0)."""
    entry_values = _check_entry_length(entry_values, spec, "entry values")
    included = spec.included
    return np.bincount(spec.unit_index[included], weights=entry_values[included], minlength=spec.n_units)


def realized_sparsity(entry_mask: np.ndarray, spec: PruningGroupSpec) -> float:
    """Fraction of included entries that are zero in `entry_mask`."""
    entry_mask = _check_entry_length(entry_mask, spec, "entry mask")
    kept = np.count_nonzero(entry_mask[spec.included])
    return 1.0 - kept / spec.n_included


def suggested_block_beta(beta: float, block_size: int) -> float:
    """Block values sum B**2 magnitudes over B**2 cost, so beta scales up with B."""
    return float(beta) * int(block_size)


@dataclass(frozen=True)
class DenseLayerSpec:
    name: str
    input_dim: int
    output_dim: int

    @property
    def weight_count(self) -> int:
        return self.input_dim * self.output_dim


@dataclass
class FlopReport:
    per_layer: Dict[str, float]
    total: float

    def fraction_of(self, dense: 'FlopReport') -> float:
        return self.total / dense.total if dense.total else 0.0


def flop_cost(layers: Sequence[DenseLayerSpec], masks: Optional[Mapping[str, np.ndarray]] = None) -> FlopReport:
    """
    Inference FLOPs at batch size 1, multiply and add counted as one FLOP each.

    Args:
        layers: Fully-connected layers, keyed by weight array name
        masks: Optional entry masks per layer; a missing layer counts as dense

    Returns:
        FlopReport with per-layer and total FLOPs
    """
    masks = masks or {}
    per_layer: Dict[str, float] = {}
    for layer in layers:
        mask = masks.get(layer.name)
        if mask is None:
            nonzero = layer.weight_count
        else:
            mask = np.asarray(mask)
            if mask.size != layer.weight_count:
                raise InvalidInputError(
                    f"Mask for {layer.name} has {mask.size} entries, layer has {layer.weight_count} weights"
                )
            nonzero = int(np.count_nonzero(mask))
        per_layer[layer.name] = 2.0 * nonzero
    return FlopReport(per_layer=per_layer, total=float(sum(per_layer.values())))
