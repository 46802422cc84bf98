"""Plants available by name (scenario files refer to plants this way)."""

from __future__ import annotations

from collections.abc import Callable
import dataclasses

from funnel_mpc.systems.mass_on_car import MassOnCarParams, mass_on_car
from funnel_mpc.systems.plant import PlantModel


@dataclasses.dataclass(frozen=True)
class PlantEntry:
    """A registered plant: parameter dataclass and the factory consuming it."""

    name: str
    params_type: type
    factory: Callable[..., PlantModel]
    description: str


PLANTS: dict[str, PlantEntry] = {
    "mass-on-car": PlantEntry(
        name="mass-on-car",
        params_type=MassOnCarParams,
        factory=mass_on_car,
        description="Car with a spring-damper coupled mass on an inclined ramp",
    ),
}


def plant_entry(name: str) -> PlantEntry:
    try:
        return PLANTS[name]
    except KeyError:
        valid = sorted(PLANTS)
        raise KeyError(f"Unknown plant '{name}'. Valid plants: {valid}") from None


def plant_by_name(name: str, **params) -> PlantModel:
    """Build a registered plant; keyword arguments populate its parameter dataclass."""
    entry = plant_entry(name)
    return entry.factory(entry.params_type(**params))
