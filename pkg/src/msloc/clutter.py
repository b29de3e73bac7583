"""Background learning and clutter suppression.

Static clutter (echoes from fixed reflectors plus the direct path) is
learned per ordered location pair from target-free snapshots: the per-cell
complex median over snapshots is robust to outliers and attenuates the
calibration noise. Suppression is dictionary lookup and subtraction.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence

import numpy as np

from .scene import ChannelMatrix, LinkChannelCache, NoiseSpec, Scene, observe_link
from .seeding import STREAM_CALIBRATION, rng_from_key


def learn_entry(snapshots: Sequence[ChannelMatrix | np.ndarray]) -> ChannelMatrix:
    """Entry-wise complex median of target-free channel snapshots.

    Real and imaginary parts are medianed independently per cell; an even
    snapshot count uses the midpoint of the central pair.
    """
    if len(snapshots) == 0:
        raise ValueError("learn_entry needs at least one snapshot")
    arrays = [s.entries if isinstance(s, ChannelMatrix) else np.asarray(s) for s in snapshots]
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ValueError("snapshots must share dimensions")
    stack = np.stack(arrays)
    med = np.median(stack.real, axis=0) + 1j * np.median(stack.imag, axis=0)
    return ChannelMatrix(med, "background")


class BackgroundDictionary:
    """Learned target-free background channels keyed by ordered location pair.

    Entries may be populated eagerly (see calibrate) or on first lookup via
    a loader; lookups of uncalibrated pairs without a loader raise KeyError.
    """

    def __init__(
        self,
        num_snapshots: int,
        loader: Callable[[int, int], ChannelMatrix] | None = None,
    ):
        if num_snapshots < 1:
            raise ValueError("num_snapshots must be >= 1")
        self.num_snapshots = num_snapshots
        self.entries: dict[tuple[int, int], ChannelMatrix] = {}
        self._loader = loader

    def __contains__(self, key: tuple[int, int]) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def entry(self, tx_loc: int, rx_loc: int) -> ChannelMatrix:
        if tx_loc == rx_loc:
            raise KeyError("background pairs require distinct locations")
        key = (tx_loc, rx_loc)
        if key not in self.entries:
            if self._loader is None:
                raise KeyError(f"no calibrated background for location pair {key}")
            self.entries[key] = self._loader(tx_loc, rx_loc)
        return self.entries[key]

    def save(self, path) -> None:
        """Serialize populated entries to a .npz archive."""
        payload = {f"bg_{t}_{r}": cm.entries for (t, r), cm in self.entries.items()}
        payload["num_snapshots"] = np.array(self.num_snapshots)
        np.savez_compressed(path, **payload)

    @classmethod
    def load(cls, path) -> "BackgroundDictionary":
        with np.load(path) as data:
            out = cls(int(data["num_snapshots"]))
            for name in data.files:
                if not name.startswith("bg_"):
                    continue
                _, t, r = name.split("_")
                out.entries[(int(t), int(r))] = ChannelMatrix(data[name], "background")
        return out


def _learn_pair(
    cache: LinkChannelCache,
    spec: NoiseSpec,
    num_snapshots: int,
    seed_key: tuple[int, ...],
    tx_loc: int,
    rx_loc: int,
) -> ChannelMatrix:
    """Learn one dictionary entry from num_snapshots noisy observations of
    the (deterministic, target-free) link background."""
    scene = cache.scene
    background = cache.clutter(tx_loc, rx_loc)
    rng = rng_from_key(*seed_key, STREAM_CALIBRATION, tx_loc, rx_loc)
    var = spec.channel_error_variance(scene.grid.delta_f)
    scale = math.sqrt(var / 2.0)
    shape = (num_snapshots,) + background.shape
    noise = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    med = np.median(background.real + noise.real, axis=0) + 1j * np.median(
        background.imag + noise.imag, axis=0
    )
    return ChannelMatrix(med, "background")


def lazy_dictionary(
    scene: Scene,
    spec: NoiseSpec,
    num_snapshots: int,
    seed_key: tuple[int, ...],
    cache: LinkChannelCache | None = None,
) -> BackgroundDictionary:
    """Dictionary whose entries are learned on first lookup.

    Per-pair RNG streams are keyed by (seed_key, tx_loc, rx_loc), so the
    learned entries do not depend on lookup order and match an eager
    calibration with the same key.
    """
    cache = cache or LinkChannelCache(scene)

    def load(t: int, r: int) -> ChannelMatrix:
        return _learn_pair(cache, spec, num_snapshots, seed_key, t, r)

    return BackgroundDictionary(num_snapshots, loader=load)


def calibrate(
    scene: Scene,
    spec: NoiseSpec,
    num_snapshots: int,
    seed_key: tuple[int, ...] = (0,),
    cache: LinkChannelCache | None = None,
) -> BackgroundDictionary:
    """Learn the full dictionary: every ordered location pair (t, r), t != r.

    The scene's target plays no part here; calibration observes only the
    static background of each link.
    """
    out = lazy_dictionary(scene, spec, num_snapshots, seed_key, cache)
    locs = scene.location_ids
    for t in locs:
        for r in locs:
            if t != r:
                out.entry(t, r)
    return out


def suppress(
    observed: ChannelMatrix,
    dictionary: BackgroundDictionary,
    tx_loc: int,
    rx_loc: int,
) -> ChannelMatrix:
    """Subtract the learned background of (tx_loc, rx_loc) from an observation."""
    bg = dictionary.entry(tx_loc, rx_loc)
    if bg.entries.shape != observed.entries.shape:
        raise ValueError("observation and background dimensions differ")
    return ChannelMatrix(observed.entries - bg.entries, "residual")
