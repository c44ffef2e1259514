"""Normalized lead-field dictionary partitioned into region subdictionaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .head import lead_field

SILENT_REL_THRESHOLD = 1e-14


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Unit-norm atoms stored contiguously by region.

    ``atoms[:, offsets[l]:offsets[l + 1]]`` is the subdictionary of region
    ``l``; ``dipole_index[k]`` is the source-space dipole behind column ``k``.
    """

    atoms: np.ndarray          # (m, n)
    offsets: np.ndarray        # (L + 1,)
    dipole_index: np.ndarray   # (n,)
    silent: np.ndarray = np.empty(0, dtype=int)

    def __post_init__(self):
        for arr in (self.atoms, self.offsets, self.dipole_index):
            arr.setflags(write=False)

    @property
    def n_atoms(self):
        return self.atoms.shape[1]

    @property
    def n_channels(self):
        return self.atoms.shape[0]

    @property
    def n_groups(self):
        return len(self.offsets) - 1

    @property
    def group_sizes(self):
        return np.diff(self.offsets)

    def group_slice(self, l):
        return slice(int(self.offsets[l]), int(self.offsets[l + 1]))

    def group_of_atom(self):
        return np.repeat(np.arange(self.n_groups), self.group_sizes)


def build_dictionary(space, sensors):
    """Atoms ``L_k q_k / ||L_k q_k||`` grouped by region.

    Columns whose norm is below 1e-14 times the median norm are dropped and
    their dipole indices recorded in ``silent``.
    """
    leads = lead_field(space.positions, sensors)
    cols = np.einsum("kmj,kj->mk", leads, space.orientations)
    norms = np.linalg.norm(cols, axis=0)
    silent = norms < SILENT_REL_THRESHOLD * np.median(norms)

    order = []
    offsets = [0]
    for l, members in enumerate(space.region_members):
        keep = members[~silent[members]]
        if len(keep) == 0:
            raise ConfigurationError(f"region {l} has no non-silent atoms")
        order.append(keep)
        offsets.append(offsets[-1] + len(keep))
    order = np.concatenate(order)
    atoms = cols[:, order] / norms[order]
    return Dictionary(atoms, np.array(offsets), order, np.flatnonzero(silent))


def group_view(dictionary, l):
    """Subdictionary D^(l) as a column-slice view."""
    if not 0 <= l < dictionary.n_groups:
        raise IndexError(f"region index {l} out of range")
    return dictionary.atoms[:, dictionary.group_slice(l)]


def subset(dictionary, groups):
    """Concatenate the subdictionaries of ``groups`` (in the given order).

    Returns the matrix and, per column, the owning region and the column index
    in the full dictionary.
    """
    cols = [np.arange(dictionary.offsets[l], dictionary.offsets[l + 1]) for l in groups]
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=int)
    owner = np.repeat(np.asarray(groups, dtype=int),
                      [dictionary.group_sizes[l] for l in groups])
    return dictionary.atoms[:, cols], owner, cols
