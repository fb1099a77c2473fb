r"""Two-tier downlink network geometry and channel generation.

One macro base station (MBS) sits at the origin of a disc cell; N_s small
base stations (SBS) sit on a concentric ring, each serving a small disc.
Users are dropped uniformly per Monte-Carlo drop: macro users in an annulus
[35 m, cell radius] around the MBS, one or more users in an annulus
[3 m, 40 m] around each SBS.

Channels are flat Rayleigh with distance pathloss and log-normal shadowing:

    h_{k,j} = sqrt(g_{k,j}) * g,    g ~ CN(0, I)
    g_{k,j} = 10^((-L_j(d) + X)/10), X ~ N(0, sigma_sh^2)  [dB]

with the 3GPP-style pathloss laws (d in km)

    macro: L(d) = 148.1 + 37.6 log10 d
    small: L(d) = 127.0 + 30.0 log10 d
"""

import json
from dataclasses import dataclass, field

import numpy as np

# user placement annuli (km)
MACRO_USER_RADIUS = (0.035, None)  # outer radius comes from the topology
SMALL_USER_RADIUS = (0.003, 0.040)

# floor on pathloss distances: below ~1 m the far-field model is meaningless
_MIN_DISTANCE_KM = 1e-3


# ============================================================
# topology and placement
# ============================================================

@dataclass(frozen=True)
class Topology:
    """Static network geometry and antenna counts."""
    macro_radius_km: float = 0.5
    small_radius_km: float = 0.04
    sbs_ring_radius_km: float = 0.25
    num_small: int = 4
    mbs_antennas: int = 20
    sbs_antennas: int = 1
    macro_users: int = 6
    per_small_users: int = 1

    def __post_init__(self):
        if self.macro_radius_km <= 0 or self.small_radius_km <= 0:
            raise ValueError("cell radii must be positive")
        if self.num_small < 0 or self.macro_users < 0 or self.per_small_users < 0:
            raise ValueError("counts must be non-negative")
        if self.mbs_antennas < 1 or self.sbs_antennas < 1:
            raise ValueError("antenna counts must be at least 1")
        if self.num_small > 0 and \
                self.sbs_ring_radius_km + self.small_radius_km > self.macro_radius_km:
            raise ValueError("small cells must fit inside the macro cell")
        if self.num_users < 1:
            raise ValueError("need at least one user")
        if self.macro_users > 0 and MACRO_USER_RADIUS[0] >= self.macro_radius_km:
            raise ValueError("macro cell smaller than the user exclusion radius")

    @property
    def num_users(self) -> int:
        return self.macro_users + self.num_small * self.per_small_users

    def sbs_positions(self) -> np.ndarray:
        """(num_small, 2) SBS coordinates, evenly spaced on the ring."""
        if self.num_small == 0:
            return np.zeros((0, 2))
        ang = 2.0 * np.pi * np.arange(self.num_small) / self.num_small
        return self.sbs_ring_radius_km * np.stack([np.cos(ang), np.sin(ang)], axis=1)


@dataclass
class UserPlacement:
    """User coordinates and the cell each one belongs to (0 = macro, j>=1 = SBS j)."""
    positions: np.ndarray
    cell: np.ndarray

    @property
    def num_users(self) -> int:
        return self.positions.shape[0]


def drop_rng(master_seed: int, drop_index: int) -> np.random.Generator:
    """Counter-based substream for one Monte-Carlo drop.

    Philox keyed by (master_seed, drop_index) gives statistically independent
    streams per drop without coordinating consumption between drops.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed), int(drop_index)])))


def _annulus(rng: np.random.Generator, r_min: float, r_max: float, n: int) -> np.ndarray:
    """n points uniform on the annulus r_min <= r <= r_max (area measure)."""
    u = rng.uniform(size=n)
    r = np.sqrt(r_min ** 2 + u * (r_max ** 2 - r_min ** 2))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def drop_users(top: Topology, rng: np.random.Generator) -> UserPlacement:
    """Place macro users, then the users of each small cell in SBS index order."""
    pos = [_annulus(rng, MACRO_USER_RADIUS[0], top.macro_radius_km, top.macro_users)]
    cell = [np.zeros(top.macro_users, dtype=int)]
    sites = top.sbs_positions()
    for j in range(top.num_small):
        local = _annulus(rng, SMALL_USER_RADIUS[0], min(SMALL_USER_RADIUS[1], top.small_radius_km),
                         top.per_small_users)
        pos.append(sites[j] + local)
        cell.append(np.full(top.per_small_users, j + 1, dtype=int))
    return UserPlacement(positions=np.concatenate(pos, axis=0), cell=np.concatenate(cell))


# ============================================================
# pathloss and fading
# ============================================================

def pathloss_db(distance_km, tier: str):
    """3GPP-style distance pathloss in dB; `tier` is "macro" or "small".

    Distances are floored at 1 m to keep the far-field law finite.
    """
    d = np.maximum(np.asarray(distance_km, dtype=float), _MIN_DISTANCE_KM)
    if np.any(np.asarray(distance_km) < 0):
        raise ValueError("negative distance")
    if tier == "macro":
        out = 148.1 + 37.6 * np.log10(d)
    elif tier == "small":
        out = 127.0 + 30.0 * np.log10(d)
    else:
        raise ValueError(f"unknown tier {tier!r}")
    return out if out.ndim else float(out)


@dataclass
class ChannelSet:
    """Per-(user, BS) channel vectors plus the large-scale gains they embed.

    vectors[k][j] is the length-n_j channel from BS j (0 = MBS) to user k.
    """
    vectors: list = field(default_factory=list)
    gains: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    num_small: int = 0

    @property
    def num_users(self) -> int:
        return len(self.vectors)

    @property
    def num_bs(self) -> int:
        return 1 + self.num_small

    def dim(self, j: int) -> int:
        return self.vectors[0][j].size

    def vector(self, k: int, j: int) -> np.ndarray:
        return self.vectors[k][j]

    def mbs_only(self) -> "ChannelSet":
        """Restriction to the macro tier (same users, SBS transmitters removed)."""
        return ChannelSet(vectors=[[vk[0]] for vk in self.vectors],
                         gains=self.gains[:, :1].copy(), num_small=0)

    # ---- portable JSON form (no binary blobs) ----

    def to_jsonable(self) -> dict:
        return {
            "num_small": self.num_small,
            "gains": self.gains.tolist(),
            "vectors": [[np.stack([h.real, h.imag], axis=1).tolist() for h in vk]
                        for vk in self.vectors],
        }

    @staticmethod
    def from_jsonable(d: dict) -> "ChannelSet":
        vectors = [[np.asarray(h)[:, 0] + 1j * np.asarray(h)[:, 1] for h in vk]
                   for vk in d["vectors"]]
        return ChannelSet(vectors=vectors, gains=np.asarray(d["gains"], dtype=float),
                          num_small=int(d["num_small"]))

    def to_json(self) -> str:
        return json.dumps(self.to_jsonable())

    @staticmethod
    def from_json(s: str) -> "ChannelSet":
        return ChannelSet.from_jsonable(json.loads(s))


def generate_channels(placement: UserPlacement, top: Topology,
                      shadow_sigma_db: float, rng: np.random.Generator) -> ChannelSet:
    """Draw shadowing and Rayleigh fading for every (user, BS) pair.

    Draw order is fixed (all MBS links first, then SBS by index) so that the
    macro-tier channels of a drop do not depend on how many SBS antennas are
    generated afterwards.
    """
    k_users = placement.num_users
    sites = np.concatenate([np.zeros((1, 2)), top.sbs_positions()], axis=0)
    dims = [top.mbs_antennas] + [top.sbs_antennas] * top.num_small
    tiers = ["macro"] + ["small"] * top.num_small

    vectors = [[None] * (1 + top.num_small) for _ in range(k_users)]
    gains = np.zeros((k_users, 1 + top.num_small))
    for j in range(1 + top.num_small):
        dist = np.linalg.norm(placement.positions - sites[j], axis=1)
        for k in range(k_users):
            shadow = rng.normal(0.0, shadow_sigma_db)
            loss_db = pathloss_db(dist[k], tiers[j]) - shadow
            gains[k, j] = 10.0 ** (-loss_db / 10.0)
            fade = (rng.standard_normal(dims[j]) + 1j * rng.standard_normal(dims[j])) / np.sqrt(2.0)
            vectors[k][j] = np.sqrt(gains[k, j]) * fade
    return ChannelSet(vectors=vectors, gains=gains, num_small=top.num_small)
