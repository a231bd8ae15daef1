"""Tracer-particle Monte Carlo: a jump-diffusion whose law follows the field.

A tracer carries a position on the torus and an integer mass m.  While its
mass is m it diffuses with per-coordinate displacement variance 2*d(m)*dt
(the same convention as the d(n)-Laplacian used by the PDE solver, which is
what makes the comparison meaningful).  Against a frozen field f it
attempts a mass transition m -> n+m at rate

    2 * alpha(n, m) * f_n(x)        for every partner mass n,

succeeding with probability m/(n+m) and otherwise moving to the absorbing
cemetery state.  The factor 2 is the tagged-particle collision rate implied
by the solver's loss term ``2 f_n sum_m alpha f_m``: with it, the tracer's
sub-probability density solves the same linear evolution equation as
f_n / M0, so ensemble histograms can be compared bin-by-bin against the
deterministic solution (:func:`density_consistency`).

Jumps inside a frozen slice are simulated exactly by thinning: proposals
are drawn from the per-mass rate bound max_x Lambda(x) and accepted with
the position-dependent ratio, with the Brownian increment advanced to each
proposal time.  Field values at the tracer position are nearest-cell
lookups, matching the histogram binning so that no interpolation mismatch
enters the density comparison.

Ensembles are simulated in fixed-size chunks, each owning a counter-based
RNG substream keyed by (seed, chunk index); chunk results merge in fixed
order, so outputs are bit-identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import MassField
from .kernels import DiffusionProfile, Kernel

__all__ = [
    "CEMETERY",
    "TracerState",
    "TracerEnsemble",
    "TracerHistogram",
    "ConsistencyReport",
    "sample_initial",
    "evolve_frozen",
    "simulate",
    "density_consistency",
]

# Trajectories per RNG substream; fixed so that results do not depend on the
# worker count used to schedule the chunks.
CHUNK_SIZE = 8192

# z-scores are only reported for bins whose expected count is at least this
# (the binomial normal approximation is meaningless on near-empty bins).
Z_MIN_EXPECTED = 10.0


class _Cemetery:
    """Absorbing state for tracers that fail a mass transition."""

    __slots__ = ()

    def __repr__(self) -> str:  # pragma: no cover
        return "CEMETERY"


CEMETERY = _Cemetery()


@dataclass(frozen=True)
class TracerState:
    """Live tracer: position on the torus and integer mass."""

    position: tuple[float, ...]
    mass: int

    def __post_init__(self):
        if self.mass < 1:
            raise ValueError("tracer mass must be >= 1")


@dataclass
class TracerHistogram:
    """(mass, cell) occupation counts of an ensemble at one time.

    ``counts[m-1, c]`` counts live tracers of mass m <= n_max in cell c;
    ``overflow[c]`` counts live tracers grown beyond n_max; ``cemetery``
    the absorbed ones.  Rows sum to ``total`` exactly.
    """

    time: float
    counts: np.ndarray
    overflow: np.ndarray
    cemetery: int
    total: int


@dataclass
class TracerEnsemble:
    """Ensemble description plus, after simulation, its histograms."""

    count: int
    seed: int
    chunk_size: int = CHUNK_SIZE
    immortal: bool = False
    histograms: list[TracerHistogram] = dc_field(default_factory=list)
    collision_counts: np.ndarray | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("ensemble needs at least one trajectory")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    def chunk_keys(self) -> list[tuple[int, int]]:
        n_chunks = (self.count + self.chunk_size - 1) // self.chunk_size
        return [(self.seed, i) for i in range(n_chunks)]


def _chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, chunk_index], dtype=np.uint64)))


class _FrozenRates:
    """Attempt-rate tables against one frozen field slice.

    ``lam[m-1, c]`` is the aggregate attempt rate of a mass-m tracer in
    cell c; ``lam_bar[m-1]`` its spatial bound used for thinning.  The
    table extends on demand as tracers outgrow the sectional range.
    """

    def __init__(self, kernel: Kernel, flat: np.ndarray, n_max: int, cap: int | None = None):
        self.kernel = kernel
        self.flat = flat
        self.n_max = n_max
        self.cap = 0
        self._ensure(cap or 2 * n_max)

    def _ensure(self, cap: int) -> None:
        if cap <= self.cap:
            return
        k = self.kernel
        if k.table is not None and cap <= k.n_max:
            A = k.table[: self.n_max, :cap]
        else:
            easy = min(cap, k.n_max) if k.table is not None else 0
            cols = [k.table[: self.n_max, :easy]] if easy else []
            cols += [k.rate_row(m)[: self.n_max, None] for m in range(easy + 1, cap + 1)]
            A = np.concatenate(cols, axis=1)
        self.A = np.ascontiguousarray(A)
        self.lam = 2.0 * (self.A.T @ self.flat)
        self.lam_bar = self.lam.max(axis=1)
        self.cap = cap

    def bound(self, masses: np.ndarray) -> np.ndarray:
        top = int(masses.max(initial=1))
        if top > self.cap:
            self._ensure(2 * top)
        return self.lam_bar[masses - 1]

    def local(self, masses: np.ndarray, cells: np.ndarray) -> np.ndarray:
        return self.lam[masses - 1, cells]

    def partner_weights(self, masses: np.ndarray, cells: np.ndarray) -> np.ndarray:
        """(n_max, k) unnormalized partner-mass weights alpha(n,m) f_n(cell)."""
        return self.A[:, masses - 1] * self.flat[:, cells]


def _cell_index(pos: np.ndarray, grid) -> np.ndarray:
    """Nearest-cell (containing-cell) flat indices for positions (k, dim)."""
    m = grid.cells_per_side
    idx = np.minimum((pos / grid.h).astype(np.int64), m - 1)
    flat = idx[:, 0]
    for ax in range(1, grid.dim):
        flat = flat * m + idx[:, ax]
    return flat


def sample_initial(F0: MassField, rng: np.random.Generator) -> TracerState:
    """Draw one tracer from the initial field.

    The mass law weights species by their number integrals; the position,
    conditional on the mass, follows that species' density (uniform within
    the chosen cell).
    """
    integrals = F0.species_integrals()
    total = integrals.sum()
    if total <= 0:
        raise ValueError("cannot sample a tracer from an empty field")
    mass = int(np.searchsorted(np.cumsum(integrals) / total, rng.uniform())) + 1
    row = F0.flat()[mass - 1]
    cell = int(np.searchsorted(np.cumsum(row) / row.sum(), rng.uniform()))
    grid = F0.grid
    idx = np.unravel_index(cell, grid.shape)
    pos = tuple((i + rng.uniform()) * grid.h for i in idx)
    return TracerState(position=pos, mass=mass)


def evolve_frozen(
    z: TracerState | _Cemetery,
    F_frozen: MassField,
    kernel: Kernel,
    dp: DiffusionProfile,
    dt: float,
    rng: np.random.Generator,
    immortal: bool = False,
) -> TracerState | _Cemetery:
    """Advance one tracer over [0, dt] with the field held frozen.

    Exact for any dt: the thinning clock iterates within the interval, so
    no smallness condition on dt is needed for correctness.
    """
    if z is CEMETERY or isinstance(z, _Cemetery):
        return CEMETERY
    grid = F_frozen.grid
    rates = _FrozenRates(kernel, F_frozen.flat(), F_frozen.n_max)
    pos = np.asarray(z.position, dtype=float)
    mass = int(z.mass)
    remaining = float(dt)
    while remaining > 0.0:
        lam_bar = float(rates.bound(np.array([mass]))[0])
        tau = rng.exponential() / lam_bar if lam_bar > 0 else np.inf
        advance = min(tau, remaining)
        pos = (pos + rng.normal(size=grid.dim) * np.sqrt(2.0 * dp.value(mass) * advance)) % grid.length
        if tau >= remaining:
            break
        remaining -= advance
        cell = int(_cell_index(pos[None, :], grid)[0])
        if rng.uniform() * lam_bar >= float(rates.local(np.array([mass]), np.array([cell]))[0]):
            continue
        w = rates.partner_weights(np.array([mass]), np.array([cell]))[:, 0]
        partner = int(np.searchsorted(np.cumsum(w), rng.uniform() * w.sum(), side="right")) + 1
        partner = min(partner, F_frozen.n_max)
        if immortal or rng.uniform() < mass / (mass + partner):
            mass += partner
        else:
            return CEMETERY
    return TracerState(position=tuple(pos), mass=mass)


def _advance_chunk_slice(
    pos: np.ndarray,
    mass: np.ndarray,
    alive: np.ndarray,
    collisions: np.ndarray,
    rates: _FrozenRates,
    grid,
    dp: DiffusionProfile,
    slice_dt: float,
    rng: np.random.Generator,
    immortal: bool,
) -> None:
    """Advance all chunk trajectories across one frozen slice, in place."""
    remaining = np.where(alive, slice_dt, 0.0)
    while True:
        active = np.flatnonzero(remaining > 0.0)
        if active.size == 0:
            return
        m_act = mass[active]
        lam_bar = rates.bound(m_act)
        tau = np.full(active.size, np.inf)
        pos_rate = lam_bar > 0
        draws = rng.exponential(size=active.size)
        tau[pos_rate] = draws[pos_rate] / lam_bar[pos_rate]
        rem = remaining[active]
        advance = np.minimum(tau, rem)
        sigma = np.sqrt(2.0 * dp.value(m_act) * advance)
        pos[active] = (pos[active] + rng.normal(size=(active.size, grid.dim)) * sigma[:, None]) % grid.length
        remaining[active] = rem - advance
        proposed = tau < rem
        if not proposed.any():
            continue
        p_idx = active[proposed]
        cells = _cell_index(pos[p_idx], grid)
        u = rng.uniform(size=p_idx.size)
        accepted = u * lam_bar[proposed] < rates.local(mass[p_idx], cells)
        if not accepted.any():
            continue
        a_idx = p_idx[accepted]
        a_cells = cells[accepted]
        w = rates.partner_weights(mass[a_idx], a_cells)
        cum = np.cumsum(w, axis=0)
        r = rng.uniform(size=a_idx.size) * cum[-1]
        partner = (cum < r[None, :]).sum(axis=0).astype(np.int64) + 1
        np.minimum(partner, rates.n_max, out=partner)
        collisions[a_idx] += 1
        if immortal:
            mass[a_idx] += partner
        else:
            survive = rng.uniform(size=a_idx.size) < mass[a_idx] / (mass[a_idx] + partner)
            mass[a_idx[survive]] += partner[survive]
            died = a_idx[~survive]
            alive[died] = False
            remaining[died] = 0.0


def _histogram_from_state(
    pos: np.ndarray, mass: np.ndarray, alive: np.ndarray, n_max: int, grid, time: float, total: int
) -> TracerHistogram:
    counts = np.zeros((n_max, grid.n_cells), dtype=np.int64)
    overflow = np.zeros(grid.n_cells, dtype=np.int64)
    live = np.flatnonzero(alive)
    cells = _cell_index(pos[live], grid)
    inside = mass[live] <= n_max
    np.add.at(counts, (mass[live[inside]] - 1, cells[inside]), 1)
    np.add.at(overflow, cells[~inside], 1)
    return TracerHistogram(
        time=time,
        counts=counts,
        overflow=overflow,
        cemetery=int(total - alive.sum()),
        total=total,
    )


def _sample_chunk_initial(
    F0: MassField, n_traj: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    integrals = F0.species_integrals()
    total = integrals.sum()
    if total <= 0:
        raise ValueError("cannot sample tracers from an empty field")
    grid = F0.grid
    mass = np.searchsorted(np.cumsum(integrals) / total, rng.uniform(size=n_traj)).astype(np.int64) + 1
    flat = F0.flat()
    rows = flat[mass - 1]
    cum = np.cumsum(rows, axis=1)
    r = rng.uniform(size=n_traj) * cum[:, -1]
    cells = (cum < r[:, None]).sum(axis=1)
    idx = np.stack(np.unravel_index(cells, grid.shape), axis=-1).astype(float)
    pos = (idx + rng.uniform(size=(n_traj, grid.dim))) * grid.h
    return pos, mass


def simulate(
    F_timeline: list[MassField],
    kernel: Kernel,
    dp: DiffusionProfile,
    ensemble: TracerEnsemble,
    slice_dt: float,
    histogram_times: list[float] | None = None,
    workers: int = 1,
) -> TracerEnsemble:
    """Evolve an ensemble against a piecewise-frozen field timeline.

    ``F_timeline[i]`` governs the slice [i*slice_dt, (i+1)*slice_dt);
    trajectories start from ``F_timeline[0]``.  Histograms are recorded at
    the requested times, which must land on slice boundaries.  Results are
    bit-identical for fixed (seed, count) regardless of ``workers``.
    """
    if slice_dt <= 0:
        raise ValueError("slice_dt must be > 0")
    if not F_timeline:
        raise ValueError("timeline must contain at least one slice")
    n_slices = len(F_timeline)
    t_final = n_slices * slice_dt
    if histogram_times is None:
        histogram_times = [t_final]
    marks: dict[int, float] = {}
    for t in histogram_times:
        i = int(round(t / slice_dt))
        if not 0 <= i <= n_slices or abs(i * slice_dt - t) > 1e-9 * max(t_final, 1.0):
            raise ValueError(f"histogram time {t} does not land on a slice boundary")
        marks[i] = t
    grid = F_timeline[0].grid
    n_max = F_timeline[0].n_max
    flats = [F.flat() for F in F_timeline]

    def run_chunk(chunk_index: int) -> tuple[list[TracerHistogram], np.ndarray]:
        seed, ci = ensemble.chunk_keys()[chunk_index]
        rng = _chunk_rng(seed, ci)
        lo = chunk_index * ensemble.chunk_size
        n_traj = min(ensemble.chunk_size, ensemble.count - lo)
        pos, mass = _sample_chunk_initial(F_timeline[0], n_traj, rng)
        alive = np.ones(n_traj, dtype=bool)
        collisions = np.zeros(n_traj, dtype=np.int64)
        hists = []
        if 0 in marks:
            hists.append(_histogram_from_state(pos, mass, alive, n_max, grid, marks[0], n_traj))
        for i in range(n_slices):
            rates = _FrozenRates(kernel, flats[i], n_max)
            _advance_chunk_slice(
                pos, mass, alive, collisions, rates, grid, dp, slice_dt, rng, ensemble.immortal
            )
            if i + 1 in marks:
                hists.append(_histogram_from_state(pos, mass, alive, n_max, grid, marks[i + 1], n_traj))
        return hists, np.bincount(collisions)

    n_chunks = len(ensemble.chunk_keys())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chunk, range(n_chunks)))
    else:
        results = [run_chunk(i) for i in range(n_chunks)]

    merged: list[TracerHistogram] = []
    mark_items = sorted(marks.items())
    for j, (_, t) in enumerate(mark_items):
        counts = sum(r[0][j].counts for r in results)
        overflow = sum(r[0][j].overflow for r in results)
        cemetery = sum(r[0][j].cemetery for r in results)
        merged.append(TracerHistogram(t, counts, overflow, cemetery, ensemble.count))
    max_coll = max(r[1].size for r in results)
    coll = np.zeros(max_coll, dtype=np.int64)
    for r in results:
        coll[: r[1].size] += r[1]
    out = TracerEnsemble(
        count=ensemble.count,
        seed=ensemble.seed,
        chunk_size=ensemble.chunk_size,
        immortal=ensemble.immortal,
        histograms=merged,
        collision_counts=coll,
    )
    return out


@dataclass
class ConsistencyReport:
    """Histogram-versus-solver comparison at one time."""

    time: float
    tv_distance: float
    max_abs_z: float
    n_z_bins: int
    z_quantiles: dict[str, float]
    overflow_fraction: float
    cemetery_empirical: float
    cemetery_model: float


def density_consistency(hist: TracerHistogram, F_pde: MassField, M0: float) -> ConsistencyReport:
    """Compare an ensemble histogram against the deterministic field.

    The model bin probability is f_n(x,t) * cell_volume / M0 with M0 the
    total initial particle number; the remainder is the model cemetery
    mass.  Reports the total-variation distance over all bins (cemetery
    and overflow included) and per-bin z-scores against binomial standard
    errors, restricted to bins with expected count >= Z_MIN_EXPECTED.
    """
    if M0 <= 0:
        raise ValueError("M0 must be > 0")
    grid = F_pde.grid
    total = hist.total
    model_p = F_pde.flat() * (grid.cell_volume / M0)
    model_cem = 1.0 - model_p.sum()
    emp_p = hist.counts / total
    emp_cem = hist.cemetery / total
    overflow_frac = hist.overflow.sum() / total
    tv = 0.5 * (np.abs(emp_p - model_p).sum() + overflow_frac + abs(emp_cem - max(model_cem, 0.0)))
    expected = total * model_p
    mask = expected >= Z_MIN_EXPECTED
    zs = np.zeros(0)
    if mask.any():
        e = expected[mask]
        p = model_p[mask]
        zs = (hist.counts[mask] - e) / np.sqrt(e * (1.0 - p))
    if total * model_cem >= Z_MIN_EXPECTED:
        z_cem = (hist.cemetery - total * model_cem) / np.sqrt(total * model_cem * (1.0 - model_cem))
        zs = np.append(zs, z_cem)
    quantiles = {}
    if zs.size:
        for q in (0.5, 0.9, 0.99):
            quantiles[f"q{int(q * 100)}"] = float(np.quantile(np.abs(zs), q))
    return ConsistencyReport(
        time=hist.time,
        tv_distance=float(tv),
        max_abs_z=float(np.abs(zs).max()) if zs.size else 0.0,
        n_z_bins=int(zs.size),
        z_quantiles=quantiles,
        overflow_fraction=float(overflow_frac),
        cemetery_empirical=float(emp_cem),
        cemetery_model=float(max(model_cem, 0.0)),
    )
