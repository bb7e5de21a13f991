"""Team formation and per-round participation sampling.

Teams are static for the whole run. Participation follows one of four
regimes: full/full, full teams with partial devices, partial teams with
full devices, or partial/partial. Fractional counts round up, so even a
2% fraction activates at least one team or device.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError
from .seeding import rng_for


@dataclass(frozen=True)
class Topology:
    """team id -> sorted tuple of member device ids."""

    teams: dict

    def __post_init__(self):
        teams = {int(t): tuple(sorted(int(d) for d in members))
                 for t, members in self.teams.items()}
        object.__setattr__(self, "teams", teams)
        seen = set()
        for t, members in teams.items():
            if not members:
                raise ConfigurationError(f"team {t} has no devices")
            overlap = seen.intersection(members)
            if overlap:
                raise ConfigurationError(f"devices {sorted(overlap)} appear in two teams")
            seen.update(members)

    @property
    def team_ids(self) -> list:
        return sorted(self.teams)

    @property
    def device_ids(self) -> list:
        return sorted(d for members in self.teams.values() for d in members)

    @property
    def n_teams(self) -> int:
        return len(self.teams)

    def team_of(self, device_id: int) -> int:
        for t, members in self.teams.items():
            if device_id in members:
                return t
        raise ConfigurationError(f"device {device_id} not in topology")

    def to_text(self) -> str:
        lines = [f"team {t}: {' '.join(str(d) for d in self.teams[t])}"
                 for t in self.team_ids]
        return "\n".join(lines) + "\n"


class ParticipationMode(str, Enum):
    FULL_FULL = "full_full"
    FULL_TEAMS_PARTIAL_DEVICES = "full_teams_partial_devices"
    PARTIAL_TEAMS_FULL_DEVICES = "partial_teams_full_devices"
    PARTIAL_PARTIAL = "partial_partial"


@dataclass(frozen=True)
class ParticipationPolicy:
    mode: ParticipationMode = ParticipationMode.FULL_FULL
    team_fraction: float = 1.0
    device_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        mode = ParticipationMode(self.mode)
        object.__setattr__(self, "mode", mode)
        for name, frac in (("team_fraction", self.team_fraction),
                           ("device_fraction", self.device_fraction)):
            if not (0.0 < frac <= 1.0):
                raise ConfigurationError(f"{name} must lie in (0, 1]")
        full_teams = mode in (ParticipationMode.FULL_FULL,
                              ParticipationMode.FULL_TEAMS_PARTIAL_DEVICES)
        full_devices = mode in (ParticipationMode.FULL_FULL,
                                ParticipationMode.PARTIAL_TEAMS_FULL_DEVICES)
        if full_teams and self.team_fraction != 1.0:
            raise ConfigurationError(f"mode {mode.value} requires team_fraction == 1")
        if full_devices and self.device_fraction != 1.0:
            raise ConfigurationError(f"mode {mode.value} requires device_fraction == 1")


def form_teams_random(device_ids, n_teams: int, seed: int) -> Topology:
    """Shuffle devices, then deal them round-robin into n_teams teams."""
    device_ids = sorted(int(d) for d in device_ids)
    if n_teams < 1:
        raise ConfigurationError("need at least one team")
    if n_teams > len(device_ids):
        raise ConfigurationError(
            f"{n_teams} teams requested for only {len(device_ids)} devices"
        )
    rng = rng_for(seed, "form-teams-random", n_teams)
    order = list(rng.permutation(device_ids))
    teams = {t: [] for t in range(n_teams)}
    for pos, did in enumerate(order):
        teams[pos % n_teams].append(int(did))
    return Topology(teams)


def _label_blocks(labels_sorted, n_teams, overlapping):
    n_labels = len(labels_sorted)
    if overlapping:
        # Cyclic blocks of ~70% of the label universe, offset per team, so
        # neighbouring teams share labels and every label is covered.
        size = max(1, math.ceil(0.7 * n_labels))
        blocks = []
        for t in range(n_teams):
            start = (t * n_labels) // n_teams
            blocks.append({labels_sorted[(start + i) % n_labels] for i in range(size)})
        return blocks
    # Disjoint near-equal slices of the sorted label list.
    blocks = []
    base = n_labels // n_teams
    extra = n_labels % n_teams
    pos = 0
    for t in range(n_teams):
        take = base + (1 if t < extra else 0)
        blocks.append(set(labels_sorted[pos : pos + take]))
        pos += take
    return blocks


def _label_components(device_labels):
    """Connected components of devices linked by any shared label, each
    returned as a sorted device list, ordered by the component's lowest label."""
    label_owner = {}
    parent = {did: did for did in device_labels}

    def find(d):
        while parent[d] != d:
            parent[d] = parent[parent[d]]
            d = parent[d]
        return d

    for did in sorted(device_labels):
        for lab in device_labels[did]:
            if lab in label_owner:
                parent[find(did)] = find(label_owner[lab])
            else:
                label_owner[lab] = did
    groups = {}
    for did in device_labels:
        groups.setdefault(find(did), []).append(did)
    comps = [sorted(members) for members in groups.values()]
    comps.sort(key=lambda members: min(min(device_labels[d]) for d in members))
    return comps


def form_teams_by_label(partition, labels, mode: str = "worst", n_teams: int = 2) -> Topology:
    """Group devices by their label footprint.

    ``worst``   : team label sets are disjoint. Devices that share a label
                  must share a team, so label-connected components are packed
                  into teams in label order (two teams then hold the lower and
                  upper halves of the label universe).
    ``average`` : teams receive overlapping cyclic label blocks, so every
                  label occurs in at least one team and adjacent teams share
                  some labels.
    """
    if mode not in ("worst", "average"):
        raise ConfigurationError(f"unknown team formation mode {mode!r}")
    if n_teams < 2:
        raise ConfigurationError("label-based formation needs >= 2 teams")
    labels = np.asarray(labels)
    device_labels = {
        int(did): set(int(v) for v in np.unique(labels[np.asarray(idx, dtype=np.int64)]))
        for did, idx in partition.device_indices.items()
    }

    teams = {t: [] for t in range(n_teams)}
    if mode == "worst":
        comps = _label_components(device_labels)
        total = sum(len(c) for c in comps)
        t = 0
        placed = 0
        for comp in comps:
            if t < n_teams - 1 and placed >= (t + 1) * total / n_teams:
                t += 1
            teams[t].extend(comp)
            placed += len(comp)
    else:
        universe = sorted(set().union(*device_labels.values()))
        blocks = _label_blocks(universe, n_teams, overlapping=True)
        for did in sorted(device_labels):
            feasible = [t for t, block in enumerate(blocks) if device_labels[did] <= block]
            if not feasible:
                raise ConfigurationError(
                    f"device {did} labels {sorted(device_labels[did])} fit no team block"
                )
            # Deterministic balancing: least-loaded feasible team, lowest id first.
            target = min(feasible, key=lambda t: (len(teams[t]), t))
            teams[target].append(did)

    empty = [t for t, members in teams.items() if not members]
    if empty:
        raise ConfigurationError(f"team(s) {empty} received no devices under mode {mode!r}")
    return Topology(teams)


def sample_round(policy: ParticipationPolicy, topology: Topology, round_index: int):
    """Sample the active teams and, per active team, the active devices.

    Returns (sorted active team ids, {team id: sorted active device ids}).
    Sampling is without replacement over canonically sorted ids, with
    fresh randomness derived from (policy.seed, round_index).
    """
    team_ids = topology.team_ids
    if policy.mode == ParticipationMode.FULL_FULL:
        return list(team_ids), {t: list(topology.teams[t]) for t in team_ids}

    rng = rng_for(policy.seed, "participation", round_index)
    if policy.team_fraction < 1.0:
        n_active = math.ceil(policy.team_fraction * len(team_ids))
        picked = rng.choice(len(team_ids), size=n_active, replace=False)
        active_teams = sorted(team_ids[i] for i in picked)
    else:
        active_teams = list(team_ids)

    active_devices = {}
    for t in active_teams:
        members = list(topology.teams[t])
        if policy.device_fraction < 1.0:
            n_dev = math.ceil(policy.device_fraction * len(members))
            picked = rng.choice(len(members), size=n_dev, replace=False)
            active_devices[t] = sorted(members[i] for i in picked)
        else:
            active_devices[t] = members
    return active_teams, active_devices
